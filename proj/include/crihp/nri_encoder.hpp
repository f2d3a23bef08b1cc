#pragma once

#include <cstdint>
#include <optional>

#include "crihp/diff_core.hpp"
#include "crihp/event_core.hpp"
#include "crihp/front_graph.hpp"

namespace crihp {

/// Edge type 0 is NO_EDGE: it carries no decoder message.
inline constexpr int kNoEdge = 0;

/// Fixed sinusoidal encoding of a timestamp over `dim` entries (base 10000):
/// entry 2k = sin(t / 10000^(2k/dim)), entry 2k+1 = cos(same).
diff::RowVector time_encoding(double t, int dim);

/// Registers the encoder's trainable tensors.
void register_encoder_params(diff::ParamStore& params, int vocab_size, int embed_dim, int k_edge);

/// C[i] = MarkTable[e_i] + TimeEncoding(t_i), shape (n x d).
diff::Var embed_events(const EventSequence& seq, const diff::ParamStore& params);

/// relu(A_norm C W_f).
diff::Var front_gcn(const diff::Var& embedding, const FrontGraph& graph, const diff::ParamStore& params);

struct EncoderState {
  Eigen::Index n = 0;
  diff::Var node_messages;  // HNd, (n x d)
  diff::Var edge_messages;  // HEg over ordered pairs i != j, (n(n-1) x d)
};

/// Two rounds of node->edge then edge->node passing, starting from H_fro.
/// The node->edge MLP sees [HNd_i, HNd_j, kernel_ij] so the posterior is
/// conditioned on the front graph. Throws ValidationError for fewer than two
/// events.
EncoderState message_passing(const diff::Var& h_fro, const FrontGraph& graph,
                             const diff::ParamStore& params);

/// Per-ordered-pair categorical over edge types. Pair tensors are indexed by
/// diff::pair_index; the diagonal is implicit and always NO_EDGE.
struct RelationPosterior {
  Eigen::Index n = 0;
  int k_edge = 0;
  diff::Var logits;     // (n(n-1) x K)
  diff::Var log_probs;  // (n(n-1) x K)
  diff::Var probs;      // (n(n-1) x K)

  static RelationPosterior from_logits(diff::Var logits, Eigen::Index n);
  /// Probability of edge type k on ordered pair (i, j), diagonal included.
  double prob(Eigen::Index i, Eigen::Index j, int k) const;
};

RelationPosterior infer_edge_posterior(const EncoderState& state, const diff::ParamStore& params);

/// Multi-view relation graph: per ordered pair a point on the K-simplex.
struct RelationGraph {
  Eigen::Index n = 0;
  int k_edge = 0;
  diff::Var weights;  // (n(n-1) x K)

  double weight(Eigen::Index i, Eigen::Index j, int k) const;
};

RelationGraph sample_relation_graph(const RelationPosterior& post, double temperature,
                                    std::uint64_t seed, bool hard);

/// Deterministic one-hot argmax graph. With `straight_through` the gradient
/// of the posterior probabilities passes through unchanged.
RelationGraph argmax_relation_graph(const RelationPosterior& post, bool straight_through);

}  // namespace crihp
