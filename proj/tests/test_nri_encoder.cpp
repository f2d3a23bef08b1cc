#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "crihp/errors.hpp"
#include "crihp/model.hpp"
#include "test_util.hpp"

using namespace crihp;
using diff::Matrix;
using diff::Var;

namespace {

diff::ParamStore encoder_params(int vocab, int d, int k, std::uint64_t seed = 1) {
  diff::ParamStore ps(seed);
  register_encoder_params(ps, vocab, d, k);
  return ps;
}

EventSequence permute(const EventSequence& s, const std::vector<std::size_t>& perm) {
  // perm[new] = old; times are reassigned so the sequence stays sorted, so
  // the check relabels the same (mark, time) events in a new order.
  EventSequence out;
  out.horizon = s.horizon;
  for (std::size_t k : perm) {
    out.marks.push_back(s.marks[k]);
    out.times.push_back(s.times[k]);
  }
  return out;
}

}  // namespace

TEST(TimeEncoding, ZeroIsAlternating) {
  const diff::RowVector e = time_encoding(0.0, 8);
  for (int k = 0; k < 8; ++k) EXPECT_DOUBLE_EQ(e(k), k % 2 == 0 ? 0.0 : 1.0);
}

TEST(EmbedEvents, ShapeAndDeterminism) {
  const auto ps = encoder_params(3, 32, 2);
  const EventSequence s{{0, 1, 2, 1, 0}, {0.1, 0.2, 0.3, 0.4, 0.5}, 1.0};
  const Var c = embed_events(s, ps);
  EXPECT_EQ(c.rows(), 5);
  EXPECT_EQ(c.cols(), 32);
  const EventSequence twins{{1, 1}, {0.4, 0.4}, 1.0};
  const Var t = embed_events(twins, ps);
  EXPECT_EQ(t.value().row(0), t.value().row(1));
  EXPECT_THROW(embed_events(EventSequence{{3}, {0.1}, 1.0}, ps), ValidationError);
}

TEST(FrontGcn, SingleNodeAndZeroWeights) {
  auto ps = encoder_params(2, 4, 2);
  const EventSequence s{{1}, {0.7}, 1.0};
  const Var c = embed_events(s, ps);
  const FrontGraph g = build_front_graph(s.times, std::nullopt);
  const Matrix expect = (c.value() * ps.get("front.W").value()).cwiseMax(0.0);
  EXPECT_TRUE(front_gcn(c, g, ps).value().isApprox(expect, 1e-14));
  ps.get("front.W").node()->value.setZero();
  EXPECT_TRUE(front_gcn(c, g, ps).value().isZero());
  EXPECT_THROW(front_gcn(c, identity_front_graph(2), ps), ShapeError);
}

TEST(FrontGcn, PermutationEquivariant) {
  const auto ps = encoder_params(3, 6, 2);
  const EventSequence s{{0, 2, 1, 1}, {0.3, 0.8, 1.1, 2.0}, 3.0};
  const std::vector<std::size_t> perm{2, 0, 3, 1};
  const EventSequence p = permute(s, perm);
  const Var a = front_gcn(embed_events(s, ps), build_front_graph(s.times, 0.7), ps);
  const Var b = front_gcn(embed_events(p, ps), build_front_graph(p.times, 0.7), ps);
  for (std::size_t r = 0; r < perm.size(); ++r) {
    EXPECT_TRUE(b.value().row(static_cast<Eigen::Index>(r)).isApprox(a.value().row(static_cast<Eigen::Index>(perm[r])), 1e-12));
  }
}

TEST(MessagePassing, TwoNodesAndSymmetry) {
  const auto ps = encoder_params(2, 5, 2);
  const Matrix row = crihp::testing::random_matrix(1, 5, 3);
  Matrix h(2, 5);
  h << row, row;
  const FrontGraph g = build_front_graph(std::vector<double>{1.0, 1.0 + 1e-12}, 1.0);
  const EncoderState st = message_passing(diff::constant(h), g, ps);
  EXPECT_EQ(st.edge_messages.rows(), 2);
  EXPECT_TRUE(st.edge_messages.value().row(0).isApprox(st.edge_messages.value().row(1), 1e-14));
  EXPECT_THROW(message_passing(diff::constant(Matrix::Zero(1, 5)), identity_front_graph(1), ps), ValidationError);
}

TEST(MessagePassing, GradientCheck) {
  auto ps = encoder_params(3, 4, 2, 9);
  const EventSequence s{{0, 2, 1, 1}, {0.3, 0.8, 1.1, 2.0}, 3.0};
  const FrontGraph g = build_front_graph(s.times, std::nullopt);
  const Matrix w = crihp::testing::random_matrix(12, 4, 4);
  const auto report = diff::grad_check(
      [&](diff::ParamStore& p) {
        const EncoderState st = message_passing(front_gcn(embed_events(s, p), g, p), g, p);
        return diff::sum(diff::mul(st.edge_messages, diff::constant(w)));
      },
      ps, 1e-6, 1e-4);
  EXPECT_LT(report.max_rel_error, 1e-4);
}

TEST(Posterior, NormalizationAndShiftInvariance) {
  Matrix l = crihp::testing::random_matrix(6, 3, 2, 4.0);
  const RelationPosterior p = RelationPosterior::from_logits(diff::constant(l), 3);
  for (Eigen::Index r = 0; r < 6; ++r) EXPECT_NEAR(p.probs.value().row(r).sum(), 1.0, 1e-12);
  l.row(2).array() += 17.0;
  const RelationPosterior q = RelationPosterior::from_logits(diff::constant(l), 3);
  EXPECT_TRUE(q.probs.value().isApprox(p.probs.value(), 1e-12));
  const RelationPosterior z = RelationPosterior::from_logits(diff::constant(Matrix::Zero(6, 3)), 3);
  EXPECT_NEAR(z.prob(0, 1, 2), 1.0 / 3.0, 1e-15);
  EXPECT_DOUBLE_EQ(z.prob(1, 1, kNoEdge), 1.0);
  EXPECT_DOUBLE_EQ(z.prob(1, 1, 1), 0.0);
  EXPECT_THROW(RelationPosterior::from_logits(diff::constant(Matrix::Zero(5, 3)), 3), ShapeError);
}

TEST(Posterior, JointPermutationEquivariance) {
  const CrihpModel m = CrihpModel::create(3, 8, 3, 4);
  const EventSequence s{{0, 2, 1, 1}, {0.3, 0.8, 1.1, 2.0}, 3.0};
  const std::vector<std::size_t> perm{1, 3, 0, 2};
  const EventSequence p = permute(s, perm);
  ForwardOptions o;
  o.sigma = 0.9;
  const auto a = forward_sequence(m, s, o).posterior;
  const auto b = forward_sequence(m, p, o).posterior;
  for (Eigen::Index i = 0; i < 4; ++i) {
    for (Eigen::Index j = 0; j < 4; ++j) {
      for (int k = 0; k < 3; ++k) {
        EXPECT_NEAR(b->prob(i, j, k), a->prob(static_cast<Eigen::Index>(perm[static_cast<std::size_t>(i)]),
                                              static_cast<Eigen::Index>(perm[static_cast<std::size_t>(j)]), k),
                    1e-12);
      }
    }
  }
}

TEST(RelationSampling, SimplexAndHard) {
  const RelationPosterior post =
      RelationPosterior::from_logits(diff::constant(crihp::testing::random_matrix(20, 3, 5, 2.0)), 5);
  const RelationGraph soft = sample_relation_graph(post, 0.5, 3, false);
  const RelationGraph hard = sample_relation_graph(post, 0.5, 3, true);
  for (Eigen::Index r = 0; r < 20; ++r) {
    EXPECT_NEAR(soft.weights.value().row(r).sum(), 1.0, 1e-12);
    EXPECT_GE(soft.weights.value().row(r).minCoeff(), 0.0);
    EXPECT_EQ(hard.weights.value().row(r).sum(), 1.0);
    EXPECT_EQ(hard.weights.value().row(r).maxCoeff(), 1.0);
  }
  EXPECT_DOUBLE_EQ(soft.weight(2, 2, kNoEdge), 1.0);

  Matrix certain = Matrix::Constant(2, 2, -1e300);
  certain.col(0).setZero();
  const RelationPosterior sure = RelationPosterior::from_logits(diff::constant(certain), 2);
  for (double temp : {0.1, 1.0, 10.0}) {
    EXPECT_NEAR(sample_relation_graph(sure, temp, 7, false).weight(0, 1, kNoEdge), 1.0, 1e-12);
  }
}

TEST(RelationSampling, ArgmaxStraightThrough) {
  Var logits = diff::leaf(crihp::testing::random_matrix(6, 2, 8));
  const RelationPosterior post = RelationPosterior::from_logits(logits, 3);
  const RelationGraph g = argmax_relation_graph(post, true);
  for (Eigen::Index r = 0; r < 6; ++r) EXPECT_EQ(g.weights.value().row(r).sum(), 1.0);
  diff::backward(diff::sum(diff::mul(g.weights, diff::constant(crihp::testing::random_matrix(6, 2, 9)))));
  EXPECT_GT(logits.grad().norm(), 0.0);
}

TEST(FrontGraphAblation, PipelineStillValid) {
  const CrihpModel m = CrihpModel::create(3, 8, 2, 4);
  const EventSequence s{{0, 2, 1, 1, 0}, {0.3, 0.8, 1.1, 2.0, 2.2}, 3.0};
  ForwardOptions o;
  o.use_front_graph = false;
  const auto f = forward_sequence(m, s, o);
  ASSERT_TRUE(f.posterior.has_value());
  EXPECT_TRUE(f.front.normalized.isIdentity());
  for (Eigen::Index r = 0; r < f.posterior->probs.rows(); ++r) {
    EXPECT_NEAR(f.posterior->probs.value().row(r).sum(), 1.0, 1e-12);
  }
}
