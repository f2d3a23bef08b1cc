#pragma once

// Reverse-mode differentiation over dense row-major matrices.
//
// Graphs are built per forward pass: every op returns a Var that owns a Node
// holding its value, its (lazily allocated) gradient, the parent nodes and a
// closure that scatters the node's gradient into the parents. Dropping the
// root Var frees the graph; parameters live in a ParamStore and persist.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "crihp/rng.hpp"

namespace crihp::diff {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic>;

struct Node {
  Matrix value;
  Matrix grad;  // empty until something flows into it
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;
  bool requires_grad = false;

  Matrix& grad_buffer();  // allocates zeros on first use
};

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  const Matrix& value() const { return node_->value; }
  /// Gradient after backward(); zeros when nothing reached this node.
  Matrix grad() const;
  double item() const;  // value of a 1x1 Var

  Eigen::Index rows() const { return node_->value.rows(); }
  Eigen::Index cols() const { return node_->value.cols(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  bool defined() const { return static_cast<bool>(node_); }

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

std::string shape_string(const Matrix& m);

Var constant(Matrix value);
Var scalar(double value);
/// Leaf that collects gradients (a trainable tensor).
Var leaf(Matrix value);

// Elementwise / linear algebra. Shape mismatches throw ShapeError with both shapes.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var matmul(const Var& a, const Var& b);
Var add_row(const Var& a, const Var& row);  // a (r x c) + row (1 x c), broadcast over rows
Var scale(const Var& a, double factor);
Var add_scalar(const Var& a, double offset);
Var exp(const Var& a);
Var log(const Var& a);
Var softplus(const Var& a);
Var sigmoid(const Var& a);
Var tanh(const Var& a);
Var relu(const Var& a);
Var transpose(const Var& a);

enum class Axis { Rows, Cols };
/// Rows: stack vertically (equal cols). Cols: side by side (equal rows).
Var concat(std::span<const Var> parts, Axis axis);

Var row_softmax(const Var& a);
Var row_log_softmax(const Var& a);
/// Per row, sum_k p_k log p_k with p = softmax(row) and 0 log 0 = 0; shape (rows x 1).
Var row_neg_entropy(const Var& logits);

Var sum(const Var& a);                          // 1x1
Var mean(const Var& a);                         // 1x1
Var masked_sum(const Var& a, const Matrix& mask);   // sum(a .* mask)
Var masked_mean(const Var& a, const Matrix& mask);  // masked_sum / sum(mask)
Var mean_rows(const Var& a);                    // 1 x cols
Var log_sum_exp(const Var& a);                  // 1x1 over all entries

Var gather_rows(const Var& a, std::span<const int> rows);
/// out[r] = a[r][cols[r]], shape (rows x 1).
Var pick(const Var& a, std::span<const int> cols);

/// Ordered off-diagonal pairs (i, j), i != j, enumerated i-major.
/// Row p of a pair tensor belongs to pair_index(n, i, j).
inline Eigen::Index pair_count(Eigen::Index n) { return n * (n - 1); }
inline Eigen::Index pair_index(Eigen::Index n, Eigen::Index i, Eigen::Index j) {
  return i * (n - 1) + (j < i ? j : j - 1);
}
/// out[(i,j)] = src[i] + dst[j]; the concat-then-linear trick for pair MLPs.
Var pair_expand(const Var& src, const Var& dst);
/// out[i] = sum_{j != i} pairs[(i,j)], shape (n x cols).
Var pair_sum(const Var& pairs, Eigen::Index n);
/// Scatter a (pairs x 1) column into an n x n matrix with a zero diagonal.
Var pair_to_matrix(const Var& column, Eigen::Index n);

/// Cosine similarity of two same-shape tensors, 1x1.
Var cosine(const Var& a, const Var& b);

/// Forward: one-hot of each row's argmax. Backward: identity (straight-through).
Var straight_through_onehot(const Var& soft);
/// Forward value of `a` with no gradient path.
Var detach(const Var& a);

/// Reverse pass from a 1x1 root. Gradients accumulate into every reachable
/// node (leaves keep accumulating across calls until zeroed).
void backward(const Var& root);

/// Row-wise Gumbel-softmax draw: softmax((logits + g) / temperature).
/// Hard mode returns the one-hot argmax with the soft sample's gradient.
Var gumbel_softmax(const Var& logits, double temperature, CounterRng& rng, bool hard);
Var gumbel_softmax(const Var& logits, double temperature, std::uint64_t seed, bool hard);

/// Named trainable tensors. Insertion order is the canonical order used by
/// checkpoints and the optimizer.
class ParamStore {
 public:
  explicit ParamStore(std::uint64_t init_seed = 0) : init_seed_(init_seed) {}

  /// Uniform(-a, a) with a = sqrt(6 / (rows + cols)).
  Var& add_weight(const std::string& name, Eigen::Index rows, Eigen::Index cols);
  Var& add_zeros(const std::string& name, Eigen::Index rows, Eigen::Index cols);
  Var& add(const std::string& name, Matrix value);

  const Var& get(const std::string& name) const;
  Var& get(const std::string& name);
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  const std::vector<std::string>& names() const { return names_; }
  std::size_t size() const { return names_.size(); }
  std::size_t scalar_count() const;
  std::uint64_t init_seed() const { return init_seed_; }

  void zero_grad();
  /// Deep copy of values into fresh leaves (shares nothing with this store).
  ParamStore clone() const;

 private:
  std::uint64_t init_seed_;
  std::vector<std::string> names_;
  std::vector<Var> vars_;
  std::map<std::string, std::size_t> index_;
};

struct AdamOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double clip_norm = 5.0;  // <= 0 disables global-norm clipping
};

class Adam {
 public:
  explicit Adam(AdamOptions options = {}) : options_(options) {}
  /// One bias-corrected step using the gradients currently stored in `params`.
  /// Returns the pre-clipping global gradient norm.
  double step(ParamStore& params);
  const AdamOptions& options() const { return options_; }

 private:
  AdamOptions options_;
  std::map<std::string, Matrix> m_, v_;
  long steps_ = 0;
};

struct GradCheckEntry {
  std::string name;
  double max_rel_error = 0.0;
  double max_abs_analytic = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_error = 0.0;
  bool passed = false;
};

/// Central differences (f(x+h) - f(x-h)) / 2h against reverse-mode gradients.
/// Relative error uses max(|analytic|, |numeric|, 1e-8) as denominator.
GradCheckReport grad_check(const std::function<Var(ParamStore&)>& f, ParamStore& params, double h,
                           double tol);

/// Checkpoint: one JSON header line (names, shapes, config hash, extra
/// metadata) followed by little-endian float64 values in header order.
void save_checkpoint(const std::filesystem::path& path, const ParamStore& params,
                     const std::string& header_extra_json, std::uint64_t config_hash);

struct Checkpoint {
  ParamStore params;
  std::string extra_json;
  std::uint64_t config_hash = 0;
};
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace crihp::diff
