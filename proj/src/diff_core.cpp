#include "crihp/diff_core.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <unordered_set>

#include <json.hpp>

#include "crihp/errors.hpp"

namespace crihp::diff {

Matrix& Node::grad_buffer() {
  if (grad.size() == 0) grad = Matrix::Zero(value.rows(), value.cols());
  return grad;
}

Matrix Var::grad() const {
  if (node_->grad.size() == 0) return Matrix::Zero(rows(), cols());
  return node_->grad;
}

double Var::item() const {
  if (rows() != 1 || cols() != 1) throw ShapeError("item() needs a 1x1 value, got " + shape_string(value()));
  return node_->value(0, 0);
}

std::string shape_string(const Matrix& m) {
  return "(" + std::to_string(m.rows()) + "x" + std::to_string(m.cols()) + ")";
}

namespace {

using Backward = std::function<void(Node&)>;

Var make(Matrix value, std::vector<std::shared_ptr<Node>> parents, Backward backward) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  const bool needs = std::any_of(parents.begin(), parents.end(),
                                 [](const auto& p) { return p->requires_grad; });
  if (needs) {
    node->requires_grad = true;
    node->parents = std::move(parents);
    node->backward = std::move(backward);
  }
  return Var(std::move(node));
}

// Accumulate `g` into parent k if it participates in differentiation.
template <typename Expr>
void push(Node& self, std::size_t k, const Expr& g) {
  Node& p = *self.parents[k];
  if (p.requires_grad) p.grad_buffer().array() += g.array();
}

const Matrix& val(Node& self, std::size_t k) { return self.parents[k]->value; }

void require_same_shape(const char* op, const Var& a, const Var& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": shapes " + shape_string(a.value()) + " and " +
                     shape_string(b.value()) + " differ");
  }
}

template <typename F, typename DF>
Var unary(const Var& a, F forward, DF derivative) {
  Matrix out = a.value().unaryExpr(forward);
  return make(std::move(out), {a.node()}, [derivative](Node& self) {
    push(self, 0, self.grad.cwiseProduct(derivative(val(self, 0), self.value)));
  });
}

double stable_softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Matrix softmax_rows(const Matrix& a) {
  Matrix out(a.rows(), a.cols());
  for (Eigen::Index r = 0; r < a.rows(); ++r) {
    const double m = a.row(r).maxCoeff();
    out.row(r) = (a.row(r).array() - m).exp().matrix();
    out.row(r) /= out.row(r).sum();
  }
  return out;
}

}  // namespace

Var constant(Matrix value) { return make(std::move(value), {}, nullptr); }

Var scalar(double value) { return constant(Matrix::Constant(1, 1, value)); }

Var leaf(Matrix value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = true;
  return Var(std::move(node));
}

Var add(const Var& a, const Var& b) {
  require_same_shape("add", a, b);
  return make(a.value() + b.value(), {a.node(), b.node()}, [](Node& self) {
    push(self, 0, self.grad);
    push(self, 1, self.grad);
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape("sub", a, b);
  return make(a.value() - b.value(), {a.node(), b.node()}, [](Node& self) {
    push(self, 0, self.grad);
    push(self, 1, -self.grad);
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape("mul", a, b);
  return make(a.value().cwiseProduct(b.value()), {a.node(), b.node()}, [](Node& self) {
    push(self, 0, self.grad.cwiseProduct(val(self, 1)));
    push(self, 1, self.grad.cwiseProduct(val(self, 0)));
  });
}

Var matmul(const Var& a, const Var& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: shapes " + shape_string(a.value()) + " and " + shape_string(b.value()) +
                     " are incompatible");
  }
  return make(a.value() * b.value(), {a.node(), b.node()}, [](Node& self) {
    if (self.parents[0]->requires_grad) push(self, 0, self.grad * val(self, 1).transpose());
    if (self.parents[1]->requires_grad) push(self, 1, val(self, 0).transpose() * self.grad);
  });
}

Var add_row(const Var& a, const Var& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) {
    throw ShapeError("add_row: shapes " + shape_string(a.value()) + " and " +
                     shape_string(row.value()) + " are incompatible");
  }
  Matrix out = a.value().rowwise() + row.value().row(0);
  return make(std::move(out), {a.node(), row.node()}, [](Node& self) {
    push(self, 0, self.grad);
    push(self, 1, self.grad.colwise().sum());
  });
}

Var scale(const Var& a, double factor) {
  return make(a.value() * factor, {a.node()},
              [factor](Node& self) { push(self, 0, self.grad * factor); });
}

Var add_scalar(const Var& a, double offset) {
  return make(a.value().array() + offset, {a.node()}, [](Node& self) { push(self, 0, self.grad); });
}

Var exp(const Var& a) {
  return unary(a, [](double x) { return std::exp(x); },
               [](const Matrix&, const Matrix& y) { return y; });
}

Var log(const Var& a) {
  return unary(a, [](double x) { return std::log(x); },
               [](const Matrix& x, const Matrix&) { return Matrix(x.cwiseInverse()); });
}

Var softplus(const Var& a) {
  return unary(a, stable_softplus,
               [](const Matrix& x, const Matrix&) { return Matrix(x.unaryExpr(&stable_sigmoid)); });
}

Var sigmoid(const Var& a) {
  return unary(a, stable_sigmoid, [](const Matrix&, const Matrix& y) {
    return Matrix(y.array() * (1.0 - y.array()));
  });
}

Var tanh(const Var& a) {
  return unary(a, [](double x) { return std::tanh(x); },
               [](const Matrix&, const Matrix& y) { return Matrix(1.0 - y.array().square()); });
}

Var relu(const Var& a) {
  return unary(a, [](double x) { return x > 0.0 ? x : 0.0; }, [](const Matrix& x, const Matrix&) {
    return Matrix(x.unaryExpr([](double v) { return v > 0.0 ? 1.0 : 0.0; }));
  });
}

Var transpose(const Var& a) {
  return make(a.value().transpose(), {a.node()},
              [](Node& self) { push(self, 0, self.grad.transpose()); });
}

Var concat(std::span<const Var> parts, Axis axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  Eigen::Index rows = 0, cols = 0;
  for (const auto& p : parts) {
    if (axis == Axis::Rows) {
      if (p.cols() != parts[0].cols()) {
        throw ShapeError("concat rows: shapes " + shape_string(parts[0].value()) + " and " +
                         shape_string(p.value()) + " differ in cols");
      }
      rows += p.rows();
      cols = p.cols();
    } else {
      if (p.rows() != parts[0].rows()) {
        throw ShapeError("concat cols: shapes " + shape_string(parts[0].value()) + " and " +
                         shape_string(p.value()) + " differ in rows");
      }
      cols += p.cols();
      rows = p.rows();
    }
  }
  Matrix out(rows, cols);
  std::vector<std::shared_ptr<Node>> parents;
  std::vector<Eigen::Index> offsets;
  Eigen::Index offset = 0;
  for (const auto& p : parts) {
    if (axis == Axis::Rows) {
      out.middleRows(offset, p.rows()) = p.value();
      offsets.push_back(offset);
      offset += p.rows();
    } else {
      out.middleCols(offset, p.cols()) = p.value();
      offsets.push_back(offset);
      offset += p.cols();
    }
    parents.push_back(p.node());
  }
  return make(std::move(out), std::move(parents), [offsets, axis](Node& self) {
    for (std::size_t k = 0; k < self.parents.size(); ++k) {
      const Matrix& v = val(self, k);
      if (axis == Axis::Rows) {
        push(self, k, self.grad.middleRows(offsets[k], v.rows()));
      } else {
        push(self, k, self.grad.middleCols(offsets[k], v.cols()));
      }
    }
  });
}

Var row_softmax(const Var& a) {
  return make(softmax_rows(a.value()), {a.node()}, [](Node& self) {
    const Matrix& y = self.value;
    const Eigen::VectorXd dot = self.grad.cwiseProduct(y).rowwise().sum();
    Matrix g = self.grad;
    g.colwise() -= dot;
    push(self, 0, g.cwiseProduct(y));
  });
}

Var row_log_softmax(const Var& a) {
  Matrix out(a.rows(), a.cols());
  for (Eigen::Index r = 0; r < a.rows(); ++r) {
    const double m = a.value().row(r).maxCoeff();
    const double lse = m + std::log((a.value().row(r).array() - m).exp().sum());
    out.row(r) = a.value().row(r).array() - lse;
  }
  return make(std::move(out), {a.node()}, [](Node& self) {
    const Matrix p = self.value.array().exp();
    Matrix g = self.grad;
    const Eigen::VectorXd total = self.grad.rowwise().sum();
    g -= (p.array().colwise() * total.array()).matrix();
    push(self, 0, g);
  });
}

Var row_neg_entropy(const Var& logits) {
  const Matrix p = softmax_rows(logits.value());
  Matrix plogp = Matrix::Zero(p.rows(), p.cols());
  for (Eigen::Index k = 0; k < p.size(); ++k) {
    if (p.data()[k] > 0.0) plogp.data()[k] = p.data()[k] * std::log(p.data()[k]);
  }
  Matrix out = plogp.rowwise().sum();
  return make(std::move(out), {logits.node()}, [p, plogp](Node& self) {
    // d/dz_j sum_k p_k log p_k = p_j (log p_j - sum_k p_k log p_k)
    Matrix g(p.rows(), p.cols());
    for (Eigen::Index r = 0; r < p.rows(); ++r) {
      for (Eigen::Index c = 0; c < p.cols(); ++c) {
        g(r, c) = plogp(r, c) - p(r, c) * self.value(r, 0);
      }
    }
    push(self, 0, g.array().colwise() * self.grad.col(0).array());
  });
}

Var sum(const Var& a) {
  return make(Matrix::Constant(1, 1, a.value().sum()), {a.node()}, [](Node& self) {
    const Matrix& x = val(self, 0);
    push(self, 0, Matrix::Constant(x.rows(), x.cols(), self.grad(0, 0)));
  });
}

Var mean(const Var& a) {
  const auto count = static_cast<double>(a.value().size());
  if (count == 0) throw ShapeError("mean of an empty tensor");
  return scale(sum(a), 1.0 / count);
}

Var masked_sum(const Var& a, const Matrix& mask) {
  if (mask.rows() != a.rows() || mask.cols() != a.cols()) {
    throw ShapeError("masked_sum: shapes " + shape_string(a.value()) + " and " + shape_string(mask) +
                     " differ");
  }
  return make(Matrix::Constant(1, 1, a.value().cwiseProduct(mask).sum()), {a.node()},
              [mask](Node& self) { push(self, 0, mask * self.grad(0, 0)); });
}

Var masked_mean(const Var& a, const Matrix& mask) {
  const double count = mask.sum();
  if (!(count > 0.0)) throw ShapeError("masked_mean with an empty mask");
  return scale(masked_sum(a, mask), 1.0 / count);
}

Var mean_rows(const Var& a) {
  if (a.rows() == 0) throw ShapeError("mean_rows of a tensor with no rows");
  const auto n = static_cast<double>(a.rows());
  return make(a.value().colwise().sum() / n, {a.node()}, [n](Node& self) {
    const Matrix& x = val(self, 0);
    Matrix g(x.rows(), x.cols());
    g.rowwise() = self.grad.row(0) / n;
    push(self, 0, g);
  });
}

Var log_sum_exp(const Var& a) {
  if (a.value().size() == 0) throw ShapeError("log_sum_exp of an empty tensor");
  const double m = a.value().maxCoeff();
  const double lse = m + std::log((a.value().array() - m).exp().sum());
  return make(Matrix::Constant(1, 1, lse), {a.node()}, [](Node& self) {
    const Matrix& x = val(self, 0);
    push(self, 0, Matrix((x.array() - self.value(0, 0)).exp() * self.grad(0, 0)));
  });
}

Var gather_rows(const Var& a, std::span<const int> rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), a.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] < 0 || rows[r] >= a.rows()) {
      throw ShapeError("gather_rows: index " + std::to_string(rows[r]) + " outside " +
                       shape_string(a.value()));
    }
    out.row(static_cast<Eigen::Index>(r)) = a.value().row(rows[r]);
  }
  std::vector<int> idx(rows.begin(), rows.end());
  return make(std::move(out), {a.node()}, [idx = std::move(idx)](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    Matrix& g = p.grad_buffer();
    for (std::size_t r = 0; r < idx.size(); ++r) g.row(idx[r]) += self.grad.row(static_cast<Eigen::Index>(r));
  });
}

Var pick(const Var& a, std::span<const int> cols) {
  if (static_cast<Eigen::Index>(cols.size()) != a.rows()) {
    throw ShapeError("pick: " + std::to_string(cols.size()) + " indices for " + shape_string(a.value()));
  }
  Matrix out(a.rows(), 1);
  for (Eigen::Index r = 0; r < a.rows(); ++r) {
    const int c = cols[static_cast<std::size_t>(r)];
    if (c < 0 || c >= a.cols()) throw ShapeError("pick: column out of range for " + shape_string(a.value()));
    out(r, 0) = a.value()(r, c);
  }
  std::vector<int> idx(cols.begin(), cols.end());
  return make(std::move(out), {a.node()}, [idx = std::move(idx)](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    Matrix& g = p.grad_buffer();
    for (std::size_t r = 0; r < idx.size(); ++r) {
      g(static_cast<Eigen::Index>(r), idx[r]) += self.grad(static_cast<Eigen::Index>(r), 0);
    }
  });
}

Var pair_expand(const Var& src, const Var& dst) {
  require_same_shape("pair_expand", src, dst);
  const Eigen::Index n = src.rows();
  Matrix out(pair_count(n), src.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      if (i != j) out.row(pair_index(n, i, j)) = src.value().row(i) + dst.value().row(j);
    }
  }
  return make(std::move(out), {src.node(), dst.node()}, [n](Node& self) {
    const Eigen::Index c = self.value.cols();
    Matrix gs = Matrix::Zero(n, c), gd = Matrix::Zero(n, c);
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j < n; ++j) {
        if (i == j) continue;
        const auto row = self.grad.row(pair_index(n, i, j));
        gs.row(i) += row;
        gd.row(j) += row;
      }
    }
    push(self, 0, gs);
    push(self, 1, gd);
  });
}

Var pair_sum(const Var& pairs, Eigen::Index n) {
  if (pairs.rows() != pair_count(n)) {
    throw ShapeError("pair_sum: " + shape_string(pairs.value()) + " is not a pair tensor for n=" +
                     std::to_string(n));
  }
  Matrix out = Matrix::Zero(n, pairs.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    out.row(i) = pairs.value().middleRows(i * (n - 1), n - 1).colwise().sum();
  }
  return make(std::move(out), {pairs.node()}, [n](Node& self) {
    Matrix g(pair_count(n), self.value.cols());
    for (Eigen::Index i = 0; i < n; ++i) g.middleRows(i * (n - 1), n - 1).rowwise() = self.grad.row(i);
    push(self, 0, g);
  });
}

Var pair_to_matrix(const Var& column, Eigen::Index n) {
  if (column.rows() != pair_count(n) || column.cols() != 1) {
    throw ShapeError("pair_to_matrix: " + shape_string(column.value()) + " is not a pair column for n=" +
                     std::to_string(n));
  }
  Matrix out = Matrix::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      if (i != j) out(i, j) = column.value()(pair_index(n, i, j), 0);
    }
  }
  return make(std::move(out), {column.node()}, [n](Node& self) {
    Matrix g(pair_count(n), 1);
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j < n; ++j) {
        if (i != j) g(pair_index(n, i, j), 0) = self.grad(i, j);
      }
    }
    push(self, 0, g);
  });
}

Var cosine(const Var& a, const Var& b) {
  require_same_shape("cosine", a, b);
  const double na = a.value().norm();
  const double nb = b.value().norm();
  if (na < 1e-12 || nb < 1e-12) throw ValidationError("cosine similarity of a zero-norm vector");
  const double dot = a.value().cwiseProduct(b.value()).sum();
  const double s = dot / (na * nb);
  return make(Matrix::Constant(1, 1, s), {a.node(), b.node()}, [na, nb, s](Node& self) {
    const double g = self.grad(0, 0);
    const Matrix& x = val(self, 0);
    const Matrix& y = val(self, 1);
    push(self, 0, g * (y / (na * nb) - s * x / (na * na)));
    push(self, 1, g * (x / (na * nb) - s * y / (nb * nb)));
  });
}

Var straight_through_onehot(const Var& soft) {
  Matrix out = Matrix::Zero(soft.rows(), soft.cols());
  for (Eigen::Index r = 0; r < soft.rows(); ++r) {
    Eigen::Index best = 0;
    soft.value().row(r).maxCoeff(&best);
    out(r, best) = 1.0;
  }
  return make(std::move(out), {soft.node()}, [](Node& self) { push(self, 0, self.grad); });
}

Var detach(const Var& a) { return constant(a.value()); }

void backward(const Var& root) {
  if (root.rows() != 1 || root.cols() != 1) {
    throw ValidationError("backward needs a scalar root, got " + shape_string(root.value()));
  }
  if (!root.requires_grad()) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.node().get(), 0}};
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && seen.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  root.node()->grad_buffer()(0, 0) += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backward && node->grad.size() != 0) node->backward(*node);
  }
}

Var gumbel_softmax(const Var& logits, double temperature, CounterRng& rng, bool hard) {
  if (!(temperature > 0.0)) throw ValidationError("Gumbel-softmax temperature must be positive");
  Matrix noise(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < noise.rows(); ++r) {
    for (Eigen::Index c = 0; c < noise.cols(); ++c) noise(r, c) = rng.gumbel();
  }
  Var soft = row_softmax(scale(add(logits, constant(std::move(noise))), 1.0 / temperature));
  return hard ? straight_through_onehot(soft) : soft;
}

Var gumbel_softmax(const Var& logits, double temperature, std::uint64_t seed, bool hard) {
  CounterRng rng(seed);
  return gumbel_softmax(logits, temperature, rng, hard);
}

// ---------------------------------------------------------------- ParamStore

Var& ParamStore::add(const std::string& name, Matrix value) {
  if (contains(name)) throw ValidationError("duplicate parameter name '" + name + "'");
  index_[name] = vars_.size();
  names_.push_back(name);
  vars_.push_back(leaf(std::move(value)));
  return vars_.back();
}

Var& ParamStore::add_weight(const std::string& name, Eigen::Index rows, Eigen::Index cols) {
  CounterRng rng(hash_combine(init_seed_, names_.size()));
  const double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Matrix w(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) w(r, c) = bound * (2.0 * rng.uniform() - 1.0);
  }
  return add(name, std::move(w));
}

Var& ParamStore::add_zeros(const std::string& name, Eigen::Index rows, Eigen::Index cols) {
  return add(name, Matrix::Zero(rows, cols));
}

const Var& ParamStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ValidationError("unknown parameter '" + name + "'");
  return vars_[it->second];
}

Var& ParamStore::get(const std::string& name) {
  return const_cast<Var&>(static_cast<const ParamStore&>(*this).get(name));
}

std::size_t ParamStore::scalar_count() const {
  std::size_t total = 0;
  for (const auto& v : vars_) total += static_cast<std::size_t>(v.value().size());
  return total;
}

void ParamStore::zero_grad() {
  for (auto& v : vars_) v.node()->grad.resize(0, 0);
}

ParamStore ParamStore::clone() const {
  ParamStore out(init_seed_);
  for (std::size_t k = 0; k < names_.size(); ++k) out.add(names_[k], vars_[k].value());
  return out;
}

double Adam::step(ParamStore& params) {
  double sq = 0.0;
  for (const auto& name : params.names()) {
    const auto& g = params.get(name).node()->grad;
    if (g.size() != 0) sq += g.squaredNorm();
  }
  const double norm = std::sqrt(sq);
  const double factor =
      (options_.clip_norm > 0.0 && norm > options_.clip_norm) ? options_.clip_norm / norm : 1.0;
  ++steps_;
  const double c1 = 1.0 - std::pow(options_.beta1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(options_.beta2, static_cast<double>(steps_));
  for (const auto& name : params.names()) {
    Node& node = *params.get(name).node();
    Matrix g = node.grad.size() == 0 ? Matrix::Zero(node.value.rows(), node.value.cols())
                                     : Matrix(node.grad * factor);
    auto [mit, m_new] = m_.try_emplace(name, Matrix::Zero(g.rows(), g.cols()));
    auto [vit, v_new] = v_.try_emplace(name, Matrix::Zero(g.rows(), g.cols()));
    Matrix& m = mit->second;
    Matrix& v = vit->second;
    m = options_.beta1 * m + (1.0 - options_.beta1) * g;
    v = options_.beta2 * v + (1.0 - options_.beta2) * g.cwiseProduct(g);
    node.value.array() -= options_.learning_rate * (m.array() / c1) /
                          ((v.array() / c2).sqrt() + options_.epsilon);
  }
  return norm;
}

GradCheckReport grad_check(const std::function<Var(ParamStore&)>& f, ParamStore& params, double h,
                           double tol) {
  params.zero_grad();
  backward(f(params));
  GradCheckReport report;
  for (const auto& name : params.names()) {
    Node& node = *params.get(name).node();
    const Matrix analytic = params.get(name).grad();
    GradCheckEntry entry{name, 0.0, analytic.cwiseAbs().maxCoeff()};
    for (Eigen::Index k = 0; k < node.value.size(); ++k) {
      double& x = node.value.data()[k];
      const double saved = x;
      x = saved + h;
      const double up = f(params).item();
      x = saved - h;
      const double down = f(params).item();
      x = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic.data()[k];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      entry.max_rel_error = std::max(entry.max_rel_error, std::abs(a - numeric) / denom);
    }
    report.max_rel_error = std::max(report.max_rel_error, entry.max_rel_error);
    report.entries.push_back(std::move(entry));
  }
  params.zero_grad();
  report.passed = report.max_rel_error < tol;
  return report;
}

// --------------------------------------------------------------- checkpoints

namespace {

constexpr const char* kCheckpointFormat = "crihp-checkpoint-v1";

void write_le_double(std::ostream& out, double x) {
  const auto bits = std::bit_cast<std::uint64_t>(x);
  char bytes[8];
  for (int b = 0; b < 8; ++b) bytes[b] = static_cast<char>((bits >> (8 * b)) & 0xffU);
  out.write(bytes, 8);
}

double read_le_double(std::istream& in) {
  unsigned char bytes[8];
  in.read(reinterpret_cast<char*>(bytes), 8);
  if (!in) throw FormatError(1, "checkpoint payload truncated");
  std::uint64_t bits = 0;
  for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(bytes[b]) << (8 * b);
  return std::bit_cast<double>(bits);
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ParamStore& params,
                     const std::string& header_extra_json, std::uint64_t config_hash) {
  nlohmann::json header;
  header["format"] = kCheckpointFormat;
  header["config_hash"] = config_hash;
  header["init_seed"] = params.init_seed();
  header["extra"] = header_extra_json.empty() ? nlohmann::json::object()
                                              : nlohmann::json::parse(header_extra_json);
  auto& list = header["params"] = nlohmann::json::array();
  for (const auto& name : params.names()) {
    const auto& v = params.get(name).value();
    list.push_back({{"name", name}, {"shape", {v.rows(), v.cols()}}});
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out << header.dump() << '\n';
  for (const auto& name : params.names()) {
    const auto& v = params.get(name).value();
    for (Eigen::Index k = 0; k < v.size(); ++k) write_le_double(out, v.data()[k]);
  }
  if (!out) throw IoError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw IoError("checkpoint has no header: " + path.string());
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(1, std::string("checkpoint header: ") + e.what());
  }
  if (header.value("format", "") != kCheckpointFormat) {
    throw FormatError(1, "not a checkpoint file: " + path.string());
  }
  Checkpoint ck{ParamStore(header.at("init_seed").get<std::uint64_t>()), header.at("extra").dump(),
                header.at("config_hash").get<std::uint64_t>()};
  for (const auto& p : header.at("params")) {
    const auto rows = p.at("shape").at(0).get<Eigen::Index>();
    const auto cols = p.at("shape").at(1).get<Eigen::Index>();
    Matrix v(rows, cols);
    for (Eigen::Index k = 0; k < v.size(); ++k) v.data()[k] = read_le_double(in);
    ck.params.add(p.at("name").get<std::string>(), std::move(v));
  }
  return ck;
}

}  // namespace crihp::diff
