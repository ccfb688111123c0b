#include <gtest/gtest.h>

#include <algorithm>

#include "ardent/meta_policy.hpp"
#include "ardent/simulator.hpp"
#include "support.hpp"

using namespace ardent;

TEST(RankExplainers, OracleOnBinaryScenario) {
  const auto s = binary_validation_scenario();
  auto rng = make_rng(0);
  const auto state = MetaPolicyState::oracle(s.q_true);
  EXPECT_EQ(rank_explainers(state, 1, 1, rng).order, (std::vector<ExplainerId>{1, 0}));
  // No convincing explanation for a=0: all equal, id order.
  EXPECT_EQ(rank_explainers(state, 1, 0, rng).order, (std::vector<ExplainerId>{0, 1}));
}

TEST(RankExplainers, FixedFavouriteFirst) {
  auto rng = make_rng(0);
  const auto state = MetaPolicyState::fixed(Dims{5, 1, 2}, 3);
  EXPECT_EQ(rank_explainers(state, 0, 1, rng).order, (std::vector<ExplainerId>{3, 0, 1, 2, 4}));
  EXPECT_THROW(MetaPolicyState::fixed(Dims{5, 1, 2}, 5), InvalidArgument);
}

TEST(RankExplainers, ArdentOneHotSortsThatParticle) {
  const Dims d{4, 1, 2};
  FilterConfig cfg;
  cfg.n_particles = 3;
  ParticleSet ps{d, std::vector<double>(3 * d.size(), 0.0), {0.0, 1.0, 0.0}};
  const std::vector<double> slice{0.2, -1.0, 3.0, 0.2};  // q[e, 0, 1] for particle 1
  for (ExplainerId e = 0; e < 4; ++e) ps.thetas[d.size() + d.index(e, 0, 1)] = slice[e];
  const auto state = MetaPolicyState::ardent(d, cfg, ps, HumanPolicyEstimate(d, 1.0));
  auto rng = make_rng(1);
  for (int i = 0; i < 20; ++i) EXPECT_EQ(rank_explainers(state, 0, 1, rng).order, (std::vector<ExplainerId>{2, 0, 3, 1}));
}

TEST(RankExplainers, RandomIsUniformOverPermutations) {
  auto rng = make_rng(2);
  const auto state = MetaPolicyState::random(Dims{3, 1, 2});
  std::map<std::vector<ExplainerId>, std::size_t> seen;
  for (int i = 0; i < 6000; ++i) ++seen[rank_explainers(state, 0, 0, rng).order];
  ASSERT_EQ(seen.size(), 6u);
  std::vector<std::size_t> counts;
  for (const auto& [k, v] : seen) counts.push_back(v);
  EXPECT_GT(testing_support::chi_square_p(counts, std::vector<double>(6, 1.0 / 6.0)), 0.01);
}

TEST(RankExplainers, AlwaysPermutationsAndSeeded) {
  const Dims d{5, 2, 3};
  FilterConfig cfg;
  cfg.n_particles = 50;
  auto init = make_rng(3);
  const auto scen = randomized_scenario(d, 3);
  const std::vector<MetaPolicyState> states{MetaPolicyState::ardent(d, cfg, init), MetaPolicyState::random(d),
                                            MetaPolicyState::oracle(scen.q_true), MetaPolicyState::fixed(d, 2)};
  for (const auto& st : states) {
    auto r1 = make_rng(4), r2 = make_rng(4);
    for (int i = 0; i < 50; ++i) {
      const auto a = rank_explainers(st, i % 2, i % 3, r1);
      const auto b = rank_explainers(st, i % 2, i % 3, r2);
      EXPECT_EQ(a.order, b.order);
      EXPECT_TRUE(a.is_permutation_of(5));
    }
  }
}

TEST(RankExplainers, RangeChecked) {
  auto rng = make_rng(0);
  const auto state = MetaPolicyState::random(Dims{2, 2, 2});
  EXPECT_THROW(rank_explainers(state, 2, 0, rng), InvalidArgument);
  EXPECT_THROW(rank_explainers(state, 0, 2, rng), InvalidArgument);
}

TEST(NextExplainer, Examples) {
  const ExplainerOrdering o{{1, 0}};
  EXPECT_EQ(next_explainer(o, {1}), ExplainerId{0});
  EXPECT_EQ(next_explainer(o, {}), ExplainerId{1});
  EXPECT_EQ(next_explainer(o, {0, 1}), std::nullopt);
}

TEST(RecordFeedback, NonLearningKindsUnchanged) {
  const auto s = binary_validation_scenario();
  auto rng = make_rng(5);
  for (const auto& st : {MetaPolicyState::random(s.dims), MetaPolicyState::oracle(s.q_true), MetaPolicyState::fixed(s.dims, 1)}) {
    const auto before = rng;
    EXPECT_EQ(record_feedback(st, {1, 0, 1, {1}, 1}, rng), st);
    EXPECT_EQ(rng, before);
  }
}

TEST(RecordFeedback, ArdentUpdatesEstimateAndParticles) {
  const auto s = binary_validation_scenario();
  FilterConfig cfg;
  cfg.n_particles = 200;
  auto rng = make_rng(6);
  const auto st = MetaPolicyState::ardent(s.dims, cfg, rng);
  const auto next = record_feedback(st, {1, 0, 1, {1}, 1}, rng);
  EXPECT_NEAR(std::accumulate(next.particles->weights.begin(), next.particles->weights.end(), 0.0), 1.0, 1e-9);
  EXPECT_EQ(next.human_estimate->count(1, 0), 2.0);
  EXPECT_NE(next.particles->thetas, st.particles->thetas);
}

TEST(RecordFeedback, UnknownExplainerRejected) {
  const auto s = binary_validation_scenario();
  auto rng = make_rng(7);
  EXPECT_THROW(record_feedback(MetaPolicyState::random(s.dims), {1, 0, 1, {2}, 1}, rng), InvalidArgument);
  FilterConfig cfg;
  cfg.n_particles = 10;
  EXPECT_THROW(record_feedback(MetaPolicyState::ardent(s.dims, cfg, rng), {1, 0, 1, {2}, 1}, rng), InvalidArgument);
}

TEST(PolicyKind, StringRoundTrip) {
  for (auto k : {PolicyKind::ardent, PolicyKind::random, PolicyKind::oracle, PolicyKind::fixed})
    EXPECT_EQ(policy_kind_from_string(to_string(k)), k);
  EXPECT_THROW(policy_kind_from_string("ucb"), InvalidArgument);
}
