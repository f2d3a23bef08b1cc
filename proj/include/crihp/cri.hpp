#pragma once

// Contrastive relational inference: prototype search with a frozen intensity
// model, optimal-transport distances between prototype paths, in-batch
// positive/negative selection and the NT-Xent objective on latent codes.

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "crihp/config.hpp"
#include "crihp/diff_core.hpp"
#include "crihp/event_core.hpp"
#include "crihp/model.hpp"

namespace crihp {

/// Intensity-based TPP used only to score events for prototype search.
struct PrototypeModel {
  PrototypeKind kind = PrototypeKind::Recurrent;
  int vocab_size = 0;
  // Recurrent: s_i = tanh(s_{i-1} W + embed[e_i] + log1p(dt_i) w_dt + b),
  // lambda_e(t) = softplus(s_i . w_e + b_e + v_e (t - t_i)).
  diff::ParamStore params;
  // Decoder: a CRIHP model trained without the contrastive term.
  std::optional<CrihpModel> decoder;
  TrainConfig decoder_config;

  static PrototypeModel recurrent(int vocab_size, int hidden, std::uint64_t seed);
};

/// Per-interval activations (n+1 x E) of the recurrent prototype model.
diff::Var recurrent_activations(const PrototypeModel& model, const EventSequence& seq);
diff::Var prototype_log_likelihood(const PrototypeModel& model, const EventSequence& seq,
                                   int mc_samples, std::uint64_t seed);

/// lambda_{e_i}(t_i) for every event under the prototype model.
std::vector<double> prototype_scores(const PrototypeModel& model, const EventSequence& seq);

/// Fits the prototype model by maximizing the point-process log-likelihood.
/// `epoch_log_likelihood`, when given, receives the mean training LL per epoch.
PrototypeModel train_prototype(const Dataset& dataset, const TrainConfig& config,
                               std::vector<double>* epoch_log_likelihood = nullptr);

struct PrototypePath {
  std::vector<int> marks;
  std::vector<double> times;
  std::vector<double> scores;
  std::vector<std::size_t> source;  // indices into the originating sequence

  std::size_t size() const noexcept { return marks.size(); }
};

/// Indices (ascending) kept by the prototype rule: the top ceil(q n) scores
/// define a threshold, everything at or above it survives, and at most `cap`
/// of those are kept by score (ties favor earlier events).
std::vector<std::size_t> select_prototype_events(std::span<const double> scores, double quantile_q,
                                                 int cap);

PrototypePath extract_prototype_path(const EventSequence& seq, const PrototypeModel& model,
                                     double quantile_q, int cap);
PrototypePath whole_sequence_path(const EventSequence& seq);

/// Minimum-cost alignment where only same-mark events align (cost |dt|) and
/// every unaligned event costs `deletion_cost`; solved per mark by DP.
double otd_distance(const PrototypePath& a, const PrototypePath& b, double deletion_cost);
diff::Matrix otd_distance_matrix(std::span<const PrototypePath> paths, double deletion_cost);

struct ContrastSelection {
  std::size_t anchor = 0;
  std::size_t positive = 0;
  std::vector<std::size_t> negatives;
};

/// Positive = nearest other member (ties: lowest index); negatives = the rest.
std::vector<ContrastSelection> sample_pairs(const diff::Matrix& distances);
/// Batch form: builds paths (prototype or whole-sequence) and their distances.
std::vector<ContrastSelection> sample_pairs(const Batch& batch, const PrototypeModel* prototype,
                                            const TrainConfig& config, double deletion_cost);

/// z = [mean_i C_i, mean over ordered pairs of posterior probs]; length d + K.
diff::Var encode_latent(const std::optional<RelationPosterior>& posterior, const diff::Var& embedding,
                        int k_edge);

/// -log( exp(sim(z, z+)/tau) / sum_j exp(sim(z, z_j-)/tau) ) with cosine sim.
/// The denominator holds the negatives only unless `include_positive`.
diff::Var nt_xent(const diff::Var& z, const diff::Var& z_pos, std::span<const diff::Var> z_negs,
                  double tau, bool include_positive);

}  // namespace crihp
