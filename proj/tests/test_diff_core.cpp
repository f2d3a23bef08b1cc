#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <functional>

#include "crihp/diff_core.hpp"
#include "crihp/errors.hpp"
#include "test_util.hpp"

using namespace crihp;
using namespace crihp::diff;
using crihp::testing::random_matrix;

TEST(Ops, SoftmaxOfUniformLogits) {
  const Var p = row_softmax(constant(Matrix::Zero(1, 3)));
  for (int k = 0; k < 3; ++k) EXPECT_NEAR(p.value()(0, k), 1.0 / 3.0, 1e-15);
}

TEST(Ops, SoftplusAtZero) {
  EXPECT_NEAR(softplus(scalar(0.0)).item(), std::log(2.0), 1e-15);
  EXPECT_NEAR(softplus(scalar(800.0)).item(), 800.0, 1e-9);
  EXPECT_GT(softplus(scalar(-800.0)).item(), -1e-300);
}

TEST(Ops, IdentityMatmul) {
  const Matrix x = random_matrix(4, 4, 3);
  const Var y = matmul(constant(Matrix::Identity(4, 4)), constant(x));
  EXPECT_TRUE(y.value().isApprox(x, 1e-15));
}

TEST(Ops, ShapeMismatchNamesShapes) {
  try {
    add(constant(Matrix::Zero(2, 3)), constant(Matrix::Zero(3, 2)));
    FAIL();
  } catch (const ShapeError& e) {
    const std::string what = e.what();
    EXPECT_NE(what.find("2x3"), std::string::npos) << what;
    EXPECT_NE(what.find("3x2"), std::string::npos) << what;
  }
  EXPECT_THROW(matmul(constant(Matrix::Zero(2, 3)), constant(Matrix::Zero(2, 3))), ShapeError);
}

TEST(Ops, PairTensors) {
  const Eigen::Index n = 4;
  std::set<Eigen::Index> seen;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      if (i != j) seen.insert(pair_index(n, i, j));
    }
  }
  EXPECT_EQ(seen.size(), static_cast<std::size_t>(pair_count(n)));
  EXPECT_EQ(*seen.rbegin(), pair_count(n) - 1);

  const Matrix src = random_matrix(n, 2, 1), dst = random_matrix(n, 2, 2);
  const Var e = pair_expand(constant(src), constant(dst));
  EXPECT_TRUE(e.value().row(pair_index(n, 2, 0)).isApprox(src.row(2) + dst.row(0)));
  const Var s = pair_sum(e, n);
  RowVector expect = RowVector::Zero(2);
  for (Eigen::Index j = 0; j < n; ++j) {
    if (j != 1) expect += e.value().row(pair_index(n, 1, j));
  }
  EXPECT_TRUE(s.value().row(1).isApprox(expect));
  const Var m = pair_to_matrix(constant(Matrix::Ones(pair_count(n), 1)), n);
  EXPECT_DOUBLE_EQ(m.value().trace(), 0.0);
  EXPECT_DOUBLE_EQ(m.value().sum(), static_cast<double>(pair_count(n)));
}

TEST(Backward, SquareViaSharedInput) {
  Var x = leaf(Matrix::Constant(1, 1, 3.0));
  backward(mul(x, x));
  EXPECT_DOUBLE_EQ(x.grad()(0, 0), 6.0);
}

TEST(Backward, SoftplusAtZero) {
  Var x = leaf(Matrix::Zero(1, 1));
  backward(softplus(x));
  EXPECT_DOUBLE_EQ(x.grad()(0, 0), 0.5);
}

TEST(Backward, SumOfProductGradientIsOnesTimesBTransposed) {
  const Matrix a0 = random_matrix(3, 3, 10), b = random_matrix(3, 3, 11);
  Var a = leaf(a0);
  backward(sum(matmul(a, constant(b))));
  const Matrix expect = Matrix::Ones(3, 3) * b.transpose();
  EXPECT_TRUE(a.grad().isApprox(expect, 1e-12));
  // central differences, h = 1e-5
  const double h = 1e-5;
  for (Eigen::Index k = 0; k < 9; ++k) {
    Matrix p = a0, m = a0;
    p.data()[k] += h;
    m.data()[k] -= h;
    const double num = ((p * b).sum() - (m * b).sum()) / (2 * h);
    EXPECT_NEAR(a.grad().data()[k], num, 1e-8);
  }
}

TEST(Backward, RejectsNonScalarRoot) {
  EXPECT_THROW(backward(leaf(Matrix::Zero(2, 2))), ValidationError);
}

TEST(Backward, DetachBlocksGradient) {
  Var x = leaf(Matrix::Constant(1, 1, 2.0));
  backward(add(mul(detach(x), x), scalar(0.0)));
  EXPECT_DOUBLE_EQ(x.grad()(0, 0), 2.0);
}

namespace {

using UnaryFn = std::function<Var(const Var&)>;

/// Gradient check of sum(f(x) * w) for a fixed random weight w.
double op_check(const UnaryFn& f, const Matrix& x0, std::uint64_t seed) {
  const Var probe = f(constant(x0));
  const Matrix w = random_matrix(probe.rows(), probe.cols(), seed);
  ParamStore ps;
  ps.add("x", x0);
  const auto report = grad_check([&](ParamStore& p) { return sum(mul(f(p.get("x")), constant(w))); }, ps, 1e-6,
                                 1e-5);
  return report.max_rel_error;
}

}  // namespace

TEST(GradCheck, EveryOp) {
  const Matrix x = random_matrix(3, 4, 1);
  const Matrix pos = (random_matrix(3, 4, 2).array().abs() + 0.5).matrix();
  const Matrix other = random_matrix(3, 4, 3);
  const Matrix right = random_matrix(4, 2, 4);
  const Matrix row = random_matrix(1, 4, 5);
  const std::vector<int> picks{1, 3, 0};
  const std::vector<int> gather{2, 0, 2, 1};
  const std::vector<std::pair<std::string, std::pair<UnaryFn, Matrix>>> cases = {
      {"add", {[&](const Var& a) { return add(a, constant(other)); }, x}},
      {"sub", {[&](const Var& a) { return sub(constant(other), a); }, x}},
      {"mul", {[&](const Var& a) { return mul(a, a); }, x}},
      {"matmul", {[&](const Var& a) { return matmul(a, constant(right)); }, x}},
      {"matmul_rhs", {[&](const Var& a) { return matmul(constant(x), a); }, right}},
      {"add_row", {[&](const Var& a) { return add_row(constant(x), a); }, row}},
      {"scale", {[&](const Var& a) { return scale(a, -2.5); }, x}},
      {"add_scalar", {[&](const Var& a) { return add_scalar(a, 1.5); }, x}},
      {"exp", {[&](const Var& a) { return exp(a); }, x}},
      {"log", {[&](const Var& a) { return log(a); }, pos}},
      {"softplus", {[&](const Var& a) { return softplus(a); }, x}},
      {"sigmoid", {[&](const Var& a) { return sigmoid(a); }, x}},
      {"tanh", {[&](const Var& a) { return tanh(a); }, x}},
      {"relu", {[&](const Var& a) { return relu(a); }, x}},
      {"transpose", {[&](const Var& a) { return transpose(a); }, x}},
      {"concat_rows",
       {[&](const Var& a) {
          const std::vector<Var> parts{a, constant(other), a};
          return concat(parts, Axis::Rows);
        },
        x}},
      {"concat_cols",
       {[&](const Var& a) {
          const std::vector<Var> parts{constant(other), a};
          return concat(parts, Axis::Cols);
        },
        x}},
      {"row_softmax", {[&](const Var& a) { return row_softmax(a); }, x}},
      {"row_log_softmax", {[&](const Var& a) { return row_log_softmax(a); }, x}},
      {"row_neg_entropy", {[&](const Var& a) { return row_neg_entropy(a); }, x}},
      {"sum", {[&](const Var& a) { return sum(a); }, x}},
      {"mean", {[&](const Var& a) { return mean(a); }, x}},
      {"masked_sum", {[&](const Var& a) { return masked_sum(a, (other.array() > 0).cast<double>().matrix()); }, x}},
      {"masked_mean",
       {[&](const Var& a) { return masked_mean(a, (other.array() > 0).cast<double>().matrix()); }, x}},
      {"mean_rows", {[&](const Var& a) { return mean_rows(a); }, x}},
      {"log_sum_exp", {[&](const Var& a) { return log_sum_exp(a); }, x}},
      {"gather_rows", {[&](const Var& a) { return gather_rows(a, gather); }, x}},
      {"pick", {[&](const Var& a) { return pick(a, picks); }, x}},
      {"pair_expand", {[&](const Var& a) { return pair_expand(a, scale(a, 0.5)); }, x}},
      {"pair_sum", {[&](const Var& a) { return pair_sum(a, 3); }, random_matrix(6, 2, 7)}},
      {"pair_to_matrix", {[&](const Var& a) { return pair_to_matrix(a, 3); }, random_matrix(6, 1, 8)}},
      {"cosine", {[&](const Var& a) { return cosine(a, constant(other)); }, x}},
      {"gumbel_soft", {[&](const Var& a) { return gumbel_softmax(a, 0.7, 99, false); }, x}},
  };
  for (const auto& [name, c] : cases) {
    EXPECT_LT(op_check(c.first, c.second, 42), 1e-5) << name;
  }
}

TEST(GradCheck, QuadraticAndConstant) {
  ParamStore ps;
  ps.add("x", random_matrix(1, 10, 5));
  const Matrix q = random_matrix(10, 10, 6);
  const auto quad = grad_check(
      [&](ParamStore& p) {
        const Var& x = p.get("x");
        return sum(mul(matmul(x, constant(q)), x));
      },
      ps, 1e-5, 1e-6);
  EXPECT_LT(quad.max_rel_error, 1e-6);
  EXPECT_TRUE(quad.passed);
  const auto flat = grad_check([](ParamStore&) { return scalar(3.0); }, ps, 1e-5, 1e-6);
  EXPECT_TRUE(flat.passed);
}

TEST(Cosine, RejectsZeroNorm) {
  EXPECT_THROW(cosine(constant(Matrix::Zero(1, 3)), constant(Matrix::Ones(1, 3))), ValidationError);
}

TEST(Gumbel, SimplexAndHardVertices) {
  const Var logits = constant(random_matrix(50, 4, 9, 3.0));
  const Var soft = gumbel_softmax(logits, 0.5, 1, false);
  const Var hard = gumbel_softmax(logits, 0.5, 1, true);
  for (Eigen::Index r = 0; r < 50; ++r) {
    EXPECT_NEAR(soft.value().row(r).sum(), 1.0, 1e-12);
    EXPECT_GE(soft.value().row(r).minCoeff(), 0.0);
    EXPECT_LE(soft.value().row(r).maxCoeff(), 1.0);
    EXPECT_EQ(hard.value().row(r).sum(), 1.0);
    EXPECT_EQ(hard.value().row(r).maxCoeff(), 1.0);
    for (Eigen::Index k = 0; k < 4; ++k) {
      const double v = hard.value()(r, k);
      EXPECT_TRUE(v == 0.0 || v == 1.0);
    }
    Eigen::Index soft_arg = 0, hard_arg = 0;
    soft.value().row(r).maxCoeff(&soft_arg);
    hard.value().row(r).maxCoeff(&hard_arg);
    EXPECT_EQ(soft_arg, hard_arg);
  }
}

TEST(Gumbel, LowTemperatureConcentrates) {
  Matrix l(1, 3);
  l << 5.0, 0.0, 0.0;
  int close = 0;
  for (std::uint64_t s = 0; s < 1000; ++s) {
    const Var y = gumbel_softmax(constant(l), 0.01, s, false);
    close += std::abs(y.value()(0, 0) - 1.0) < 1e-3;
  }
  EXPECT_GT(close, 950);
}

TEST(Gumbel, DegenerateCategorical) {
  Matrix l(1, 3);
  l << 0.0, -1e300, -1e300;
  for (std::uint64_t s = 0; s < 100; ++s) {
    EXPECT_NEAR(gumbel_softmax(constant(l), 2.0, s, false).value()(0, 0), 1.0, 1e-12);
  }
}

TEST(Gumbel, RejectsNonPositiveTemperature) {
  EXPECT_THROW(gumbel_softmax(constant(Matrix::Zero(1, 2)), 0.0, 1, false), ValidationError);
}

TEST(Gumbel, HardGradientEqualsSoftGradient) {
  const Matrix l0 = random_matrix(2, 3, 4);
  const Matrix w = random_matrix(2, 3, 5);
  Var a = leaf(l0), b = leaf(l0);
  backward(sum(mul(gumbel_softmax(a, 0.8, 17, true), constant(w))));
  backward(sum(mul(gumbel_softmax(b, 0.8, 17, false), constant(w))));
  EXPECT_TRUE(a.grad().isApprox(b.grad(), 1e-14));
}

TEST(ParamStore, GlorotRangeAndDeterminism) {
  ParamStore a(5), b(5);
  const Var& w = a.add_weight("w", 30, 10);
  b.add_weight("w", 30, 10);
  EXPECT_LE(w.value().cwiseAbs().maxCoeff(), std::sqrt(6.0 / 40.0));
  EXPECT_EQ(w.value(), b.get("w").value());
  EXPECT_THROW(a.get("missing"), ValidationError);
  EXPECT_THROW(a.add_zeros("w", 1, 1), ValidationError);
  ParamStore c = a.clone();
  c.get("w").node()->value(0, 0) += 1.0;
  EXPECT_NE(c.get("w").value()(0, 0), a.get("w").value()(0, 0));
}

TEST(Adam, MinimizesQuadratic) {
  ParamStore ps;
  ps.add("x", Matrix::Constant(1, 3, 4.0));
  Adam opt({0.1, 0.9, 0.999, 1e-8, 0.0});
  for (int i = 0; i < 500; ++i) {
    ps.zero_grad();
    const Var& x = ps.get("x");
    backward(sum(mul(x, x)));
    opt.step(ps);
  }
  EXPECT_LT(ps.get("x").value().cwiseAbs().maxCoeff(), 1e-2);
}

TEST(Adam, FirstStepIsLearningRateTimesSign) {
  ParamStore ps;
  ps.add("x", Matrix::Constant(1, 2, 1.0));
  Adam opt({0.01, 0.9, 0.999, 1e-12, 0.0});
  backward(sum(scale(ps.get("x"), 3.0)));
  opt.step(ps);
  EXPECT_NEAR(ps.get("x").value()(0, 0), 0.99, 1e-9);
}

TEST(Adam, ClipReportsPreClipNorm) {
  ParamStore ps;
  ps.add("x", Matrix::Zero(1, 2));
  Adam opt({0.01, 0.9, 0.999, 1e-8, 5.0});
  backward(sum(mul(ps.get("x"), constant((Matrix(1, 2) << 30.0, 40.0).finished()))));
  EXPECT_DOUBLE_EQ(opt.step(ps), 50.0);
}

TEST(Checkpoint, RoundTripAndCorruption) {
  crihp::testing::TempDir dir("ckpt");
  ParamStore ps(3);
  ps.add_weight("a", 3, 2);
  ps.add_weight("b", 1, 5);
  save_checkpoint(dir / "m.ckpt", ps, R"({"note":"x"})", 1234);
  const Checkpoint ck = load_checkpoint(dir / "m.ckpt");
  EXPECT_EQ(ck.config_hash, 1234u);
  EXPECT_EQ(ck.params.names(), ps.names());
  EXPECT_EQ(ck.params.get("a").value(), ps.get("a").value());
  EXPECT_NE(ck.extra_json.find("note"), std::string::npos);

  {
    std::ofstream out(dir / "bad.ckpt", std::ios::binary);
    out << "not a checkpoint\n";
  }
  EXPECT_THROW(load_checkpoint(dir / "bad.ckpt"), Error);
  EXPECT_THROW(load_checkpoint(dir / "missing.ckpt"), IoError);

  // truncated payload
  const auto full = std::filesystem::file_size(dir / "m.ckpt");
  std::filesystem::copy_file(dir / "m.ckpt", dir / "short.ckpt");
  std::filesystem::resize_file(dir / "short.ckpt", full - 8);
  EXPECT_THROW(load_checkpoint(dir / "short.ckpt"), FormatError);
}
