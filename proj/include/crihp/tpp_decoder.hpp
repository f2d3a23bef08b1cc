#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "crihp/diff_core.hpp"
#include "crihp/event_core.hpp"
#include "crihp/nri_encoder.hpp"

namespace crihp {

void register_decoder_params(diff::ParamStore& params, int vocab_size, int embed_dim);

/// h[i] summarizes events 0..i and drives the intensity on (t_i, t_{i+1}].
struct DecoderHidden {
  diff::Var h;  // (n x d)
};

/// Two causal graph-convolution layers over the relation graph: the message
/// j -> i exists only for j < i and is weighted by the non-NO_EDGE mass of
/// pair (i, j), divided by 1 + the total incoming mass of i.
/// Layer 1: relu(A h W + h W_self); layer 2 is linear.
/// Without a relation graph (n = 1 or no encoder) only the self path runs.
DecoderHidden decode(const diff::Var& embedding, const std::optional<RelationGraph>& relation,
                     const diff::ParamStore& params);

/// Intensity readout rows: row 0 uses the learned initial state h_0 for
/// (0, t_1], row k uses h[k-1] for (t_{k-1}, t_k]. Shape (n+1 x E):
/// a_e = w_e . state + b_e; lambda_e(t) = softplus(a_e + v_e (t - t_start)).
diff::Var interval_activations(const DecoderHidden& hidden, const diff::ParamStore& params);

/// lambda_mark(t) for t in (0, T].
double intensity(const DecoderHidden& hidden, const EventSequence& seq, double t, int mark,
                 const diff::ParamStore& params);
/// Differentiable form of intensity().
diff::Var intensity_var(const DecoderHidden& hidden, const EventSequence& seq, double t, int mark,
                        const diff::ParamStore& params);

/// Sum of log-intensities at events minus a stratified Monte Carlo estimate
/// of the compensator, given per-interval activations (n+1 x E) and the
/// per-mark drift (1 x E). Shared by the decoder and the prototype model.
diff::Var point_process_log_likelihood(const EventSequence& seq, const diff::Var& activations,
                                       const diff::Var& drift, int mc_samples, std::uint64_t seed);

diff::Var log_likelihood(const EventSequence& seq, const DecoderHidden& hidden,
                         const diff::ParamStore& params, int mc_samples, std::uint64_t seed);

/// Closed-form intensity readout for one state row (no graph).
struct IntensityReadout {
  diff::Matrix weights;  // (d x E)
  diff::RowVector bias;
  diff::RowVector drift;

  static IntensityReadout from(const diff::ParamStore& params);
  /// lambda_e at delay `dt` after the interval start, given activations a.
  diff::RowVector at(const diff::RowVector& activation, double dt) const;
};

struct NextEventPrediction {
  int mark = 0;
  double time = 0.0;
  double truncated_mass = 0.0;  // density mass beyond the window
};

/// Expected next-event time under p(t) = lambda(t) exp(-int lambda), by the
/// trapezoidal rule on `grid` points over [t_last, t_last + window],
/// normalized by the in-window mass; mark = argmax_e lambda_e at that time.
/// Throws NumericalError when at least 1e-3 of the mass lies past the window
/// unless `allow_truncation`.
NextEventPrediction predict_from_activation(const diff::RowVector& activation, const diff::RowVector& drift,
                                            double t_last, double window, int grid,
                                            bool allow_truncation = false);

}  // namespace crihp
