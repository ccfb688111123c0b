#include <gtest/gtest.h>

#include "ardent/model.hpp"
#include "ardent/simulator.hpp"
#include "support.hpp"

using namespace ardent;

namespace {

const ExplainerId kMinus = 0;
const ExplainerId kPlus = 1;

}  // namespace

TEST(Dims, RejectsDegenerateShapes) {
  EXPECT_THROW((Dims{0, 1, 2}.validate()), InvalidArgument);
  EXPECT_THROW((Dims{1, 0, 2}.validate()), InvalidArgument);
  EXPECT_THROW((Dims{1, 1, 1}.validate()), InvalidArgument);
  EXPECT_NO_THROW((Dims{1, 1, 2}.validate()));
  EXPECT_EQ((Dims{2, 3, 4}.size()), 24u);
  EXPECT_EQ((Dims{2, 3, 4}.index(1, 2, 3)), 23u);
}

TEST(PropensityTensor, RejectsNonPositiveEntries) {
  const Dims d{1, 1, 2};
  EXPECT_THROW(PropensityTensor(d, {1.0, 0.0}), InvalidPropensity);
  EXPECT_THROW(PropensityTensor(d, {1.0, -2.0}), InvalidPropensity);
  EXPECT_THROW(PropensityTensor(d, {1.0, std::numeric_limits<double>::infinity()}), InvalidPropensity);
  EXPECT_THROW(PropensityTensor(d, {1.0}), InvalidArgument);
  auto q = PropensityTensor::constant(d);
  EXPECT_THROW(q.set(0, 0, 0, 0.0), InvalidPropensity);
}

TEST(UpdateBelief, HandNormalizedExample) {
  const std::vector<double> q{1.0, 10.0};
  const Belief b = update_belief(Belief({0.5, 0.5}), q, 1);
  EXPECT_NEAR(b[0], 1.0 / 11.0, 1e-15);
  EXPECT_NEAR(b[1], 10.0 / 11.0, 1e-15);
}

TEST(UpdateBelief, OnesLeaveBeliefUnchanged) {
  const Belief b({0.2, 0.3, 0.5});
  const std::vector<double> ones(3, 1.0);
  const Belief out = update_belief(b, ones, 4);
  for (ActionId a = 0; a < 3; ++a) EXPECT_NEAR(out[a], b[a], 1e-15);
}

TEST(UpdateBelief, DegenerateBeliefIsAbsorbing) {
  const std::vector<double> q{1.0, 10.0};
  const Belief out = update_belief(Belief({1.0, 0.0}), q, 1);
  EXPECT_EQ(out[0], 1.0);
  EXPECT_EQ(out[1], 0.0);
}

TEST(UpdateBelief, StepIndexDoesNotMatter) {
  const std::vector<double> q{2.0, 3.0, 0.5};
  const Belief b({0.1, 0.6, 0.3});
  EXPECT_EQ(update_belief(b, q, 1), update_belief(b, q, 17));
}

TEST(UpdateBelief, NonPositivePropensityRejected) {
  const std::vector<double> q{1.0, 0.0};
  EXPECT_THROW(update_belief(Belief({0.5, 0.5}), q, 1), InvalidPropensity);
  const std::vector<double> neg{1.0, -1.0};
  EXPECT_THROW(update_belief(Belief({0.5, 0.5}), neg, 1), InvalidPropensity);
}

TEST(FinalBelief, EmptySequenceReturnsInitialBelief) {
  const auto s = binary_validation_scenario();
  const Belief b1({0.3, 0.7});
  EXPECT_EQ(final_belief(b1, s.q_true, 1, {}), b1);
}

TEST(FinalBelief, BinaryScenarioBothOrders) {
  const auto s = binary_validation_scenario();
  const Belief b1({0.5, 0.5});
  const std::vector<ExplainerId> ab{kMinus, kPlus}, ba{kPlus, kMinus};
  for (const auto& shown : {ab, ba}) {
    const Belief out = final_belief(b1, s.q_true, 1, shown);
    EXPECT_NEAR(out[0], 1.0 / 11.0, 1e-15);
    EXPECT_NEAR(out[1], 10.0 / 11.0, 1e-15);
  }
}

TEST(FinalBelief, SingleStepMatchesUpdate) {
  const auto s = binary_validation_scenario();
  const Belief b1({0.4, 0.6});
  const std::vector<ExplainerId> one{kPlus};
  const Belief a = final_belief(b1, s.q_true, 1, one);
  const Belief b = update_belief(b1, s.q_true.row(kPlus, 1), 1);
  for (ActionId i = 0; i < 2; ++i) EXPECT_NEAR(a[i], b[i], 1e-15);
}

TEST(FinalBelief, DuplicateExplainerIsProtocolViolation) {
  const auto s = binary_validation_scenario();
  const std::vector<ExplainerId> dup{kPlus, kPlus};
  EXPECT_THROW(final_belief(Belief({0.5, 0.5}), s.q_true, 1, dup), ProtocolViolation);
}

TEST(FinalBelief, LongSequencesDoNotUnderflow) {
  const Dims d{400, 1, 2};
  std::vector<double> v(d.size());
  for (std::size_t e = 0; e < d.n_explainers; ++e) {
    v[d.index(e, 0, 0)] = 1e-300;
    v[d.index(e, 0, 1)] = 2e-300;
  }
  const PropensityTensor q(d, v);
  std::vector<ExplainerId> shown(d.n_explainers);
  std::iota(shown.begin(), shown.end(), ExplainerId{0});
  const Belief out = final_belief(Belief({0.5, 0.5}), q, 0, shown);
  EXPECT_NEAR(out[0] + out[1], 1.0, 1e-12);
  EXPECT_GT(out[1], 0.999);
}

TEST(InteractionLikelihood, BinaryScenarioExample) {
  const auto s = binary_validation_scenario();
  InteractionRecord r{1, 0, 1, {kPlus}, 1};
  EXPECT_NEAR(interaction_likelihood(r, Belief({0.5, 0.5}), s.q_true), 10.0 / 11.0, 1e-15);
}

TEST(InteractionLikelihood, NothingShownGivesInitialBelief) {
  const auto s = binary_validation_scenario();
  const Belief b1({0.35, 0.65});
  for (ActionId a = 0; a < 2; ++a) {
    InteractionRecord r{0, 0, 0, {}, a};
    EXPECT_DOUBLE_EQ(interaction_likelihood(r, b1, s.q_true), b1[a]);
  }
}

TEST(InteractionLikelihood, ZeroIffInitialBeliefZero) {
  const auto s = binary_validation_scenario();
  InteractionRecord r{1, 0, 1, {kPlus, kMinus}, 0};
  EXPECT_EQ(interaction_likelihood(r, Belief({0.0, 1.0}), s.q_true), 0.0);
  EXPECT_GT(interaction_likelihood(r, Belief({1e-300, 1.0}), s.q_true), 0.0);
}

TEST(InteractionLikelihood, ScalingOneRowBySevenLeavesItUnchanged) {
  const Dims d{3, 2, 4};
  ardent::Rng rng = make_rng(11);
  std::normal_distribution<double> n01;
  std::vector<double> logq(d.size());
  for (double& v : logq) v = n01(rng);
  const auto q = PropensityTensor::from_log(d, logq);
  InteractionRecord r{1, 2, 3, {2, 0, 1}, 3};
  const Belief b1(testing_support::random_simplex(4, rng));
  const double base = interaction_likelihood(r, b1, q);
  for (ExplainerId e = 0; e < 3; ++e) {
    auto scaled = q;
    for (ActionId a = 0; a < 4; ++a) scaled.set(e, 1, a, 7.0 * q.at(e, 1, a));
    EXPECT_NEAR(interaction_likelihood(r, b1, scaled), base, 1e-12);
  }
}

TEST(InteractionLikelihood, RejectsMalformedRecords) {
  const auto s = binary_validation_scenario();
  const Belief b1({0.5, 0.5});
  EXPECT_THROW(interaction_likelihood({1, 0, 1, {kPlus, kPlus}, 1}, b1, s.q_true), ProtocolViolation);
  EXPECT_THROW(interaction_likelihood({2, 0, 1, {}, 1}, b1, s.q_true), InvalidArgument);
  EXPECT_THROW(interaction_likelihood({1, 0, 1, {5}, 1}, b1, s.q_true), InvalidArgument);
  EXPECT_THROW(interaction_likelihood({1, 0, 1, {}, 2}, b1, s.q_true), InvalidArgument);
}

TEST(DrawAction, ArgmaxPicksStrictMaximum) {
  ardent::Rng rng = make_rng(1);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(draw_action(Belief({0.3, 0.7}), FinalActionRule::argmax_tie_uniform, rng), 1u);
}

TEST(DrawAction, ArgmaxTiesAreUniform) {
  ardent::Rng rng = make_rng(2);
  std::vector<std::size_t> counts(2, 0);
  for (int i = 0; i < 10000; ++i) ++counts[draw_action(Belief({0.5, 0.5}), FinalActionRule::argmax_tie_uniform, rng)];
  EXPECT_GT(testing_support::chi_square_p(counts, {0.5, 0.5}), 0.01);
}

TEST(DrawAction, ArgmaxTieToleranceIsAbsolute) {
  ardent::Rng rng = make_rng(3);
  std::vector<std::size_t> counts(3, 0);
  const Belief b({0.4 + 5e-13, 0.4, 0.2 - 5e-13});
  for (int i = 0; i < 3000; ++i) ++counts[draw_action(b, FinalActionRule::argmax_tie_uniform, rng)];
  EXPECT_EQ(counts[2], 0u);
  EXPECT_GT(counts[0], 1000u);
  EXPECT_GT(counts[1], 1000u);
}

TEST(DrawAction, SampleFromDegenerateBelief) {
  ardent::Rng rng = make_rng(4);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(draw_action(Belief({1.0, 0.0}), FinalActionRule::sample, rng), 0u);
}

TEST(DrawAction, SampleMatchesBelief) {
  ardent::Rng rng = make_rng(5);
  const std::vector<double> p{0.2, 0.5, 0.3};
  std::vector<std::size_t> counts(3, 0);
  for (int i = 0; i < 20000; ++i) ++counts[draw_action(Belief(p), FinalActionRule::sample, rng)];
  EXPECT_GT(testing_support::chi_square_p(counts, p), 0.01);
}

TEST(FinalActionRule, StringRoundTrip) {
  for (auto r : {FinalActionRule::sample, FinalActionRule::argmax_tie_uniform})
    EXPECT_EQ(final_action_rule_from_string(to_string(r)), r);
  EXPECT_EQ(to_string(FinalActionRule::argmax_tie_uniform), "argmax-tie-uniform");
  EXPECT_THROW(final_action_rule_from_string("mode"), InvalidArgument);
}
