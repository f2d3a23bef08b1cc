#include <gtest/gtest.h>

#include <cmath>

#include "crihp/errors.hpp"
#include "crihp/model.hpp"
#include "test_util.hpp"

using namespace crihp;
using diff::Matrix;
using diff::Var;

namespace {

const EventSequence kSeq{{0, 2, 1, 1, 0}, {0.3, 0.8, 1.1, 2.0, 2.2}, 3.0};

RelationGraph edge_graph(Eigen::Index n, double edge_mass) {
  Matrix w(diff::pair_count(n), 2);
  w.col(0).setConstant(1.0 - edge_mass);
  w.col(1).setConstant(edge_mass);
  return {n, 2, diff::constant(w)};
}

}  // namespace

TEST(Decode, NoEdgeGraphUsesSelfPathOnly) {
  const CrihpModel m = CrihpModel::create(3, 6, 2, 2);
  const Var c = embed_events(kSeq, m.params);
  const DecoderHidden none = decode(c, edge_graph(5, 0.0), m.params);
  const DecoderHidden self = decode(c, std::nullopt, m.params);
  EXPECT_TRUE(none.h.value().isApprox(self.h.value(), 1e-14));
  // each row depends on its own embedding only
  const EventSequence first{{0}, {0.3}, 3.0};
  const DecoderHidden one = decode(embed_events(first, m.params), std::nullopt, m.params);
  EXPECT_TRUE(one.h.value().row(0).isApprox(self.h.value().row(0), 1e-14));
}

TEST(Decode, FutureMasking) {
  const CrihpModel m = CrihpModel::create(3, 6, 2, 2);
  const Matrix c0 = embed_events(kSeq, m.params).value();
  const DecoderHidden base = decode(diff::constant(c0), edge_graph(5, 0.7), m.params);
  for (Eigen::Index j = 1; j < 5; ++j) {
    Matrix c = c0;
    c.row(j).array() += 0.75;
    const DecoderHidden moved = decode(diff::constant(c), edge_graph(5, 0.7), m.params);
    for (Eigen::Index i = 0; i < j; ++i) {
      EXPECT_TRUE(moved.h.value().row(i).isApprox(base.h.value().row(i), 1e-14)) << "i=" << i << " j=" << j;
    }
    EXPECT_FALSE(moved.h.value().row(j).isApprox(base.h.value().row(j), 1e-6));
  }
}

TEST(Intensity, PositiveAndRangeChecked) {
  const CrihpModel m = CrihpModel::create(3, 6, 2, 2);
  ForwardOptions o;
  const auto f = forward_sequence(m, kSeq, o);
  for (double t : {0.01, 0.3, 0.5, 1.5, 2.9, 3.0}) {
    for (int e = 0; e < 3; ++e) EXPECT_GT(intensity(f.hidden, kSeq, t, e, m.params), 0.0);
  }
  EXPECT_THROW(intensity(f.hidden, kSeq, 0.0, 0, m.params), ValidationError);
  EXPECT_THROW(intensity(f.hidden, kSeq, 3.01, 0, m.params), ValidationError);
}

TEST(Intensity, ConstantWithinIntervalWhenDriftZero) {
  CrihpModel m = CrihpModel::create(3, 6, 2, 2);
  m.params.get("intensity.v").node()->value.setZero();
  const auto f = forward_sequence(m, kSeq, ForwardOptions{});
  EXPECT_DOUBLE_EQ(intensity(f.hidden, kSeq, 0.85, 1, m.params), intensity(f.hidden, kSeq, 1.1, 1, m.params));
  EXPECT_DOUBLE_EQ(intensity(f.hidden, kSeq, 0.05, 2, m.params), intensity(f.hidden, kSeq, 0.3, 2, m.params));
}

TEST(Intensity, GradientWrtReadout) {
  CrihpModel m = CrihpModel::create(3, 6, 2, 2);
  const auto report = diff::grad_check(
      [&](diff::ParamStore& p) {
        const auto f = forward_sequence(CrihpModel{3, 6, 2, p}, kSeq, ForwardOptions{});
        return intensity_var(f.hidden, kSeq, 1.7, 1, p);
      },
      m.params, 1e-6, 1e-5);
  EXPECT_LT(report.max_rel_error, 1e-5);
}

TEST(LogLikelihood, PinnedPoissonIsExact) {
  const EventSequence s{{0, 0, 0}, {0.4, 1.1, 1.9}, 2.0};
  const double pin = std::log(std::expm1(1.0));
  const Var acts = diff::constant(Matrix::Constant(4, 1, pin));
  const Var drift = diff::constant(Matrix::Zero(1, 1));
  for (int mc : {1, 7, 64}) {
    EXPECT_NEAR(point_process_log_likelihood(s, acts, drift, mc, 3).item(), -2.0, 1e-12);
  }
}

TEST(LogLikelihood, LongerHorizonLowersLikelihood) {
  const CrihpModel m = CrihpModel::create(3, 6, 2, 2);
  EventSequence longer = kSeq;
  longer.horizon = 6.0;
  const auto f = forward_sequence(m, kSeq, ForwardOptions{});
  EXPECT_LT(log_likelihood(longer, f.hidden, m.params, 16, 1).item(),
            log_likelihood(kSeq, f.hidden, m.params, 16, 1).item());
}

TEST(LogLikelihood, MonteCarloConverges) {
  const CrihpModel m = CrihpModel::create(3, 6, 2, 5);
  const auto f = forward_sequence(m, kSeq, ForwardOptions{});
  const double ref = log_likelihood(kSeq, f.hidden, m.params, 4096, 1).item();
  std::vector<double> draws;
  for (std::uint64_t s = 0; s < 40; ++s) draws.push_back(log_likelihood(kSeq, f.hidden, m.params, 16, 100 + s).item());
  double mean = 0.0;
  for (double d : draws) mean += d;
  mean /= static_cast<double>(draws.size());
  double var = 0.0;
  for (double d : draws) var += (d - mean) * (d - mean);
  const double se = std::sqrt(var / static_cast<double>(draws.size() - 1));
  EXPECT_LE(std::abs(draws[0] - ref), 3.0 * se + 1e-12);
  EXPECT_THROW(log_likelihood(EventSequence{{}, {}, 1.0}, f.hidden, m.params, 4, 1), ShapeError);
}

TEST(LogLikelihood, EventsInHighIntensityRegionIncreaseLikelihood) {
  Matrix a(3, 1);
  a << -2.0, 2.0, -2.0;  // interval (t1, t2] is hot
  const Var acts = diff::constant(a);
  const Var drift = diff::constant(Matrix::Zero(1, 1));
  const EventSequence s{{0, 0}, {1.0, 2.0}, 3.0};
  const double ll = point_process_log_likelihood(s, acts, drift, 8, 1).item();
  const EventSequence hot{{0, 0}, {1.0, 1.5}, 3.0};
  EXPECT_GT(point_process_log_likelihood(hot, acts, drift, 8, 1).item(), ll - 1e-12);
}

TEST(Predict, ConstantIntensityMeanDelay) {
  const double pin = std::log(std::expm1(1.0));
  const diff::RowVector act = diff::RowVector::Constant(1, pin);
  const diff::RowVector drift = diff::RowVector::Zero(1);
  const double window = 20.0;
  const NextEventPrediction p = predict_from_activation(act, drift, 5.0, window, 4096);
  // exponential truncated to the window
  const double expected = (1.0 - (1.0 + window) * std::exp(-window)) / (1.0 - std::exp(-window));
  EXPECT_NEAR(p.time - 5.0, expected, 0.01 * expected);
  EXPECT_NEAR(p.time - 5.0, 1.0, 0.01);
  EXPECT_THROW(predict_from_activation(act, drift, 5.0, 3.0, 512), NumericalError);
  EXPECT_NO_THROW(predict_from_activation(act, drift, 5.0, 3.0, 512, true));
}

TEST(Predict, ArgmaxMarkAndTies) {
  diff::RowVector act(3);
  act << 0.0, std::log(std::expm1(2.0 * std::log1p(std::exp(0.0)))), 0.0;
  const NextEventPrediction p = predict_from_activation(act, diff::RowVector::Zero(3), 0.0, 40.0, 1024);
  EXPECT_EQ(p.mark, 1);
  const NextEventPrediction tie =
      predict_from_activation(diff::RowVector::Zero(3), diff::RowVector::Zero(3), 0.0, 40.0, 1024);
  EXPECT_EQ(tie.mark, 0);
}

TEST(Predict, GridRefinement) {
  const CrihpModel m = CrihpModel::create(3, 6, 2, 7);
  const auto readout = IntensityReadout::from(m.params);
  const auto f = forward_sequence(m, kSeq, ForwardOptions{});
  const diff::RowVector act = f.hidden.h.value().row(4) * readout.weights + readout.bias;
  const double w = 60.0;
  const auto coarse = predict_from_activation(act, readout.drift, 2.2, w, 2048, true);
  const auto fine = predict_from_activation(act, readout.drift, 2.2, w, 8192, true);
  EXPECT_LT(std::abs((coarse.time - 2.2) - (fine.time - 2.2)), 0.005 * (fine.time - 2.2));
}
