#include "crihp/nri_encoder.hpp"

#include <cmath>
#include <string>

#include "crihp/errors.hpp"

namespace crihp {

using diff::Matrix;
using diff::Var;

diff::RowVector time_encoding(double t, int dim) {
  diff::RowVector out(dim);
  for (int k = 0; 2 * k < dim; ++k) {
    const double freq = std::pow(10000.0, -2.0 * k / static_cast<double>(dim));
    out(2 * k) = std::sin(t * freq);
    if (2 * k + 1 < dim) out(2 * k + 1) = std::cos(t * freq);
  }
  return out;
}

void register_encoder_params(diff::ParamStore& params, int vocab_size, int embed_dim, int k_edge) {
  const Eigen::Index d = embed_dim;
  params.add_weight("embed.mark", vocab_size, d);
  params.add_weight("front.W", d, d);
  for (int r = 1; r <= 2; ++r) {
    const std::string p = "mp" + std::to_string(r);
    params.add_weight(p + ".ne.W_src", d, d);
    params.add_weight(p + ".ne.W_dst", d, d);
    params.add_weight(p + ".ne.w_fro", 1, d);
    params.add_zeros(p + ".ne.b1", 1, d);
    params.add_weight(p + ".ne.W2", d, d);
    params.add_zeros(p + ".ne.b2", 1, d);
    params.add_weight(p + ".en.W1", d, d);
    params.add_zeros(p + ".en.b1", 1, d);
    params.add_weight(p + ".en.W2", d, d);
    params.add_zeros(p + ".en.b2", 1, d);
  }
  params.add_weight("edge_out.W1", d, d);
  params.add_zeros("edge_out.b1", 1, d);
  params.add_weight("edge_out.W2", d, k_edge);
  params.add_zeros("edge_out.b2", 1, k_edge);
}

Var embed_events(const EventSequence& seq, const diff::ParamStore& params) {
  const Var& table = params.get("embed.mark");
  const auto d = static_cast<int>(table.cols());
  for (int m : seq.marks) {
    if (m < 0 || m >= table.rows()) {
      throw ValidationError("mark " + std::to_string(m) + " outside embedding vocabulary of " +
                            std::to_string(table.rows()));
    }
  }
  Matrix enc(static_cast<Eigen::Index>(seq.size()), d);
  for (std::size_t i = 0; i < seq.size(); ++i) {
    enc.row(static_cast<Eigen::Index>(i)) = time_encoding(seq.times[i], d);
  }
  return diff::add(diff::gather_rows(table, seq.marks), diff::constant(std::move(enc)));
}

Var front_gcn(const Var& embedding, const FrontGraph& graph, const diff::ParamStore& params) {
  if (graph.size() != embedding.rows()) {
    throw ShapeError("front_gcn: graph of " + std::to_string(graph.size()) + " nodes vs embedding " +
                     diff::shape_string(embedding.value()));
  }
  const Var mixed = diff::matmul(diff::constant(graph.normalized), embedding);
  return diff::relu(diff::matmul(mixed, params.get("front.W")));
}

namespace {

// tanh(tanh(x W1 + b1) W2 + b2)
Var two_layer_tanh(const Var& x, const diff::ParamStore& params, const std::string& prefix) {
  const Var hidden = diff::tanh(diff::add_row(diff::matmul(x, params.get(prefix + ".W1")),
                                              params.get(prefix + ".b1")));
  return diff::tanh(diff::add_row(diff::matmul(hidden, params.get(prefix + ".W2")),
                                  params.get(prefix + ".b2")));
}

}  // namespace

EncoderState message_passing(const Var& h_fro, const FrontGraph& graph, const diff::ParamStore& params) {
  const Eigen::Index n = h_fro.rows();
  if (n < 2) throw ValidationError("message passing needs at least two events");
  if (graph.size() != n) throw ShapeError("message_passing: front graph and H_fro disagree on n");

  Matrix kernel(diff::pair_count(n), 1);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      if (i != j) kernel(diff::pair_index(n, i, j), 0) = graph.kernel(i, j);
    }
  }
  const Var front = diff::constant(std::move(kernel));

  EncoderState state{n, h_fro, {}};
  for (int r = 1; r <= 2; ++r) {
    const std::string p = "mp" + std::to_string(r);
    // [HNd_i, HNd_j, fro_ij] W1 = HNd_i W_src + HNd_j W_dst + fro_ij w_fro
    const Var pre = diff::add(
        diff::pair_expand(diff::matmul(state.node_messages, params.get(p + ".ne.W_src")),
                          diff::matmul(state.node_messages, params.get(p + ".ne.W_dst"))),
        diff::matmul(front, params.get(p + ".ne.w_fro")));
    const Var hidden = diff::tanh(diff::add_row(pre, params.get(p + ".ne.b1")));
    state.edge_messages = diff::tanh(
        diff::add_row(diff::matmul(hidden, params.get(p + ".ne.W2")), params.get(p + ".ne.b2")));
    state.node_messages = two_layer_tanh(diff::pair_sum(state.edge_messages, n), params, p + ".en");
  }
  return state;
}

RelationPosterior RelationPosterior::from_logits(Var logits, Eigen::Index n) {
  if (logits.rows() != diff::pair_count(n)) {
    throw ShapeError("posterior logits " + diff::shape_string(logits.value()) +
                     " do not cover the ordered pairs of n=" + std::to_string(n));
  }
  RelationPosterior post;
  post.n = n;
  post.k_edge = static_cast<int>(logits.cols());
  post.log_probs = diff::row_log_softmax(logits);
  post.probs = diff::row_softmax(logits);
  post.logits = std::move(logits);
  return post;
}

double RelationPosterior::prob(Eigen::Index i, Eigen::Index j, int k) const {
  if (i == j) return k == kNoEdge ? 1.0 : 0.0;
  return probs.value()(diff::pair_index(n, i, j), k);
}

RelationPosterior infer_edge_posterior(const EncoderState& state, const diff::ParamStore& params) {
  const Var& edges = state.edge_messages;
  const Var& w2 = params.get("edge_out.W2");
  if (edges.cols() != params.get("edge_out.W1").rows()) {
    throw ShapeError("infer_edge_posterior: edge messages " + diff::shape_string(edges.value()) +
                     " vs edge_out.W1 " + diff::shape_string(params.get("edge_out.W1").value()));
  }
  const Var hidden = diff::tanh(
      diff::add_row(diff::matmul(edges, params.get("edge_out.W1")), params.get("edge_out.b1")));
  Var logits = diff::add_row(diff::matmul(hidden, w2), params.get("edge_out.b2"));
  return RelationPosterior::from_logits(std::move(logits), state.n);
}

double RelationGraph::weight(Eigen::Index i, Eigen::Index j, int k) const {
  if (i == j) return k == kNoEdge ? 1.0 : 0.0;
  return weights.value()(diff::pair_index(n, i, j), k);
}

RelationGraph sample_relation_graph(const RelationPosterior& post, double temperature,
                                    std::uint64_t seed, bool hard) {
  return RelationGraph{post.n, post.k_edge, diff::gumbel_softmax(post.logits, temperature, seed, hard)};
}

RelationGraph argmax_relation_graph(const RelationPosterior& post, bool straight_through) {
  Var onehot = diff::straight_through_onehot(post.probs);
  return RelationGraph{post.n, post.k_edge, straight_through ? onehot : diff::detach(onehot)};
}

}  // namespace crihp
