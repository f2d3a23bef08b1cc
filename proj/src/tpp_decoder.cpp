#include "crihp/tpp_decoder.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "crihp/errors.hpp"
#include "crihp/rng.hpp"

namespace crihp {

using diff::Matrix;
using diff::Var;

void register_decoder_params(diff::ParamStore& params, int vocab_size, int embed_dim) {
  const Eigen::Index d = embed_dim;
  params.add_weight("dec.W1", d, d);
  params.add_weight("dec.W1_self", d, d);
  params.add_weight("dec.W2", d, d);
  params.add_weight("dec.W2_self", d, d);
  params.add_weight("dec.h0", 1, d);
  params.add_weight("intensity.W", d, vocab_size);
  params.add_zeros("intensity.b", 1, vocab_size);
  params.add_zeros("intensity.v", 1, vocab_size);
}

namespace {

// Causal adjacency: A[i][j] = sum_{k != NO_EDGE} w[(i,j)][k] for j < i, else 0,
// row-normalized as A[i][j] / (1 + sum_j A[i][j]) (the unit self-loop mass
// of the renormalized GCN propagation; the self term has its own weights).
Var causal_adjacency(const RelationGraph& relation) {
  const Eigen::Index n = relation.n;
  Matrix select = Matrix::Ones(relation.k_edge, 1);
  select(kNoEdge, 0) = 0.0;
  const Var mass = diff::matmul(relation.weights, diff::constant(std::move(select)));
  Matrix past = Matrix::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < i; ++j) past(i, j) = 1.0;
  }
  const Var adj = diff::mul(diff::pair_to_matrix(mass, n), diff::constant(std::move(past)));
  const Var degree = diff::add_scalar(diff::matmul(adj, diff::constant(Matrix::Ones(n, 1))), 1.0);
  const Var inverse = diff::exp(diff::scale(diff::log(degree), -1.0));
  return diff::mul(adj, diff::matmul(inverse, diff::constant(Matrix::Ones(1, n))));
}

}  // namespace

DecoderHidden decode(const Var& embedding, const std::optional<RelationGraph>& relation,
                     const diff::ParamStore& params) {
  const Var& w1 = params.get("dec.W1");
  if (embedding.cols() != w1.rows()) {
    throw ShapeError("decode: embedding " + diff::shape_string(embedding.value()) + " vs dec.W1 " +
                     diff::shape_string(w1.value()));
  }
  const bool use_graph = relation.has_value() && embedding.rows() >= 2;
  if (use_graph && relation->n != embedding.rows()) {
    throw ShapeError("decode: relation graph over " + std::to_string(relation->n) +
                     " events vs embedding " + diff::shape_string(embedding.value()));
  }
  if (!use_graph) {
    const Var h1 = diff::relu(diff::matmul(embedding, params.get("dec.W1_self")));
    return {diff::matmul(h1, params.get("dec.W2_self"))};
  }
  const Var adj = causal_adjacency(*relation);
  const Var h1 = diff::relu(diff::add(diff::matmul(diff::matmul(adj, embedding), w1),
                                      diff::matmul(embedding, params.get("dec.W1_self"))));
  return {diff::add(diff::matmul(diff::matmul(adj, h1), params.get("dec.W2")),
                    diff::matmul(h1, params.get("dec.W2_self")))};
}

Var interval_activations(const DecoderHidden& hidden, const diff::ParamStore& params) {
  const Var states[] = {params.get("dec.h0"), hidden.h};
  const Var stacked = diff::concat(states, diff::Axis::Rows);
  return diff::add_row(diff::matmul(stacked, params.get("intensity.W")), params.get("intensity.b"));
}

namespace {

// Index k of the state row whose interval (start, end] contains t.
std::size_t interval_of(const EventSequence& seq, double t) {
  if (!(t > 0.0) || t > seq.horizon) throw ValidationError("intensity query outside (0, T]");
  return static_cast<std::size_t>(std::lower_bound(seq.times.begin(), seq.times.end(), t) -
                                  seq.times.begin());
}

}  // namespace

Var intensity_var(const DecoderHidden& hidden, const EventSequence& seq, double t, int mark,
                  const diff::ParamStore& params) {
  const std::size_t k = interval_of(seq, t);
  const double start = k == 0 ? 0.0 : seq.times[k - 1];
  const Var acts = interval_activations(hidden, params);
  const int row[] = {static_cast<int>(k)};
  const Var a = diff::gather_rows(acts, row);
  const Var pre = diff::add(a, diff::scale(params.get("intensity.v"), t - start));
  const int col[] = {mark};
  return diff::softplus(diff::pick(pre, col));
}

double intensity(const DecoderHidden& hidden, const EventSequence& seq, double t, int mark,
                 const diff::ParamStore& params) {
  return intensity_var(hidden, seq, t, mark, params).item();
}

Var point_process_log_likelihood(const EventSequence& seq, const Var& activations, const Var& drift,
                                 int mc_samples, std::uint64_t seed) {
  const auto n = seq.size();
  if (n == 0) throw ValidationError("log-likelihood of an empty sequence");
  if (mc_samples < 1) throw ValidationError("mc_samples must be positive");
  if (activations.rows() != static_cast<Eigen::Index>(n + 1)) {
    throw ShapeError("activations " + diff::shape_string(activations.value()) + " for " +
                     std::to_string(n) + " events");
  }

  // Event term: lambda_{e_i}(t_i) uses the interval that ends at t_i.
  std::vector<int> event_rows(n);
  std::iota(event_rows.begin(), event_rows.end(), 0);
  Matrix event_dt(static_cast<Eigen::Index>(n), 1);
  for (std::size_t i = 0; i < n; ++i) {
    event_dt(static_cast<Eigen::Index>(i), 0) = seq.times[i] - (i == 0 ? 0.0 : seq.times[i - 1]);
  }
  const Var event_pre = diff::add(diff::gather_rows(activations, event_rows),
                                  diff::matmul(diff::constant(std::move(event_dt)), drift));
  const Var event_term = diff::sum(diff::log(diff::softplus(diff::pick(event_pre, seq.marks))));

  // Non-event term: mc_samples stratified points per interval, n+1 intervals.
  CounterRng rng(seed);
  const auto m = static_cast<std::size_t>(mc_samples);
  const auto total = static_cast<Eigen::Index>((n + 1) * m);
  std::vector<int> rows(static_cast<std::size_t>(total));
  Matrix sample_dt(total, 1);
  Matrix weight(total, activations.cols());
  for (std::size_t k = 0; k <= n; ++k) {
    const double start = k == 0 ? 0.0 : seq.times[k - 1];
    const double end = k == n ? seq.horizon : seq.times[k];
    const double len = end - start;
    for (std::size_t s = 0; s < m; ++s) {
      const auto r = static_cast<Eigen::Index>(k * m + s);
      rows[static_cast<std::size_t>(r)] = static_cast<int>(k);
      sample_dt(r, 0) = len * (static_cast<double>(s) + rng.uniform()) / static_cast<double>(m);
      weight.row(r).setConstant(len / static_cast<double>(m));
    }
  }
  const Var sample_pre = diff::add(diff::gather_rows(activations, rows),
                                   diff::matmul(diff::constant(std::move(sample_dt)), drift));
  const Var compensator = diff::masked_sum(diff::softplus(sample_pre), weight);
  return diff::sub(event_term, compensator);
}

Var log_likelihood(const EventSequence& seq, const DecoderHidden& hidden, const diff::ParamStore& params,
                   int mc_samples, std::uint64_t seed) {
  if (hidden.h.rows() != static_cast<Eigen::Index>(seq.size())) {
    throw ShapeError("decoder hidden " + diff::shape_string(hidden.h.value()) + " for " +
                     std::to_string(seq.size()) + " events");
  }
  return point_process_log_likelihood(seq, interval_activations(hidden, params),
                                      params.get("intensity.v"), mc_samples, seed);
}

IntensityReadout IntensityReadout::from(const diff::ParamStore& params) {
  return {params.get("intensity.W").value(), params.get("intensity.b").value().row(0),
          params.get("intensity.v").value().row(0)};
}

namespace {

double softplus_value(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

}  // namespace

diff::RowVector IntensityReadout::at(const diff::RowVector& activation, double dt) const {
  diff::RowVector out(activation.size());
  for (Eigen::Index e = 0; e < activation.size(); ++e) out(e) = softplus_value(activation(e) + drift(e) * dt);
  return out;
}

NextEventPrediction predict_from_activation(const diff::RowVector& activation, const diff::RowVector& drift,
                                            double t_last, double window, int grid,
                                            bool allow_truncation) {
  if (grid < 2) throw ValidationError("integration grid needs at least two points");
  if (!(window > 0.0)) throw ValidationError("prediction window must be positive");
  const IntensityReadout readout{Matrix(), diff::RowVector(), drift};
  const double step = window / static_cast<double>(grid - 1);

  std::vector<double> total(static_cast<std::size_t>(grid));
  for (int k = 0; k < grid; ++k) total[static_cast<std::size_t>(k)] = readout.at(activation, k * step).sum();

  double cumulative = 0.0;
  double mass = 0.0, moment = 0.0;
  double prev_density = total[0];
  for (int k = 1; k < grid; ++k) {
    const auto ku = static_cast<std::size_t>(k);
    cumulative += 0.5 * step * (total[ku - 1] + total[ku]);
    const double density = total[ku] * std::exp(-cumulative);
    mass += 0.5 * step * (prev_density + density);
    moment += 0.5 * step * ((k - 1) * step * prev_density + k * step * density);
    prev_density = density;
  }
  NextEventPrediction out;
  out.truncated_mass = std::exp(-cumulative);
  if (!allow_truncation && out.truncated_mass >= 1e-3) {
    throw NumericalError("next-event density leaves " + std::to_string(out.truncated_mass) +
                         " of its mass beyond the prediction window");
  }
  const double delay = mass > 0.0 ? moment / mass : window;
  out.time = t_last + delay;
  const diff::RowVector lambda = readout.at(activation, delay);
  Eigen::Index best = 0;
  for (Eigen::Index e = 1; e < lambda.size(); ++e) {
    if (lambda(e) > lambda(best)) best = e;
  }
  out.mark = static_cast<int>(best);
  return out;
}

}  // namespace crihp
