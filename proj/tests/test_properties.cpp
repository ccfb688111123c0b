// Randomized invariant checks, 1000 cases each unless noted.

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "ardent/meta_policy.hpp"
#include "ardent/particle_filter.hpp"
#include "ardent/simulator.hpp"
#include "support.hpp"

using namespace ardent;

namespace {

constexpr int kCases = 1000;

struct World {
  Dims dims;
  PropensityTensor q;
  Belief b1;
  ContextId x;
  std::vector<ExplainerId> shown;
  ActionId final;
};

// Random dims, log-normal propensities with occasional extreme spreads, random
// interior belief, and a random duplicate-free explanation sequence.
World random_world(Rng& rng) {
  const Dims d{1 + uniform_index(5, rng), 1 + uniform_index(3, rng), 2 + uniform_index(4, rng)};
  std::normal_distribution<double> n01;
  const double spread = uniform01(rng) < 0.2 ? 8.0 : 1.0;
  std::vector<double> logq(d.size());
  for (double& v : logq) v = spread * n01(rng);
  std::vector<ExplainerId> perm(d.n_explainers);
  std::iota(perm.begin(), perm.end(), ExplainerId{0});
  std::shuffle(perm.begin(), perm.end(), rng);
  perm.resize(uniform_index(d.n_explainers + 1, rng));
  return {d,
          PropensityTensor::from_log(d, logq),
          Belief(testing_support::random_simplex(d.n_actions, rng)),
          uniform_index(d.n_contexts, rng),
          perm,
          uniform_index(d.n_actions, rng)};
}

double belief_sum(const Belief& b) { return std::accumulate(b.probs.begin(), b.probs.end(), 0.0); }

ParticleSet random_particles(const Dims& d, std::size_t n, Rng& rng) {
  FilterConfig cfg;
  cfg.n_particles = n;
  auto ps = init_particles(cfg, d, rng);
  // Non-uniform weights.
  ps.weights = testing_support::random_simplex(n, rng);
  return ps;
}

}  // namespace

TEST(Properties, BeliefNormalization) {
  auto rng = make_rng(100);
  for (int c = 0; c < kCases; ++c) {
    const auto w = random_world(rng);
    const Belief step = update_belief(w.b1, w.q.row(0, w.x), 1);
    EXPECT_NEAR(belief_sum(step), 1.0, 1e-9);
    const Belief fin = final_belief(w.b1, w.q, w.x, w.shown);
    EXPECT_NEAR(belief_sum(fin), 1.0, 1e-9);
    EXPECT_NO_THROW(fin.validate());
  }
}

TEST(Properties, ExplanationOrderInvariance) {
  auto rng = make_rng(101);
  for (int c = 0; c < kCases; ++c) {
    const auto w = random_world(rng);
    auto permuted = w.shown;
    std::shuffle(permuted.begin(), permuted.end(), rng);
    const Belief a = final_belief(w.b1, w.q, w.x, w.shown);
    const Belief b = final_belief(w.b1, w.q, w.x, permuted);
    for (ActionId i = 0; i < w.dims.n_actions; ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
  }
}

TEST(Properties, StepwiseFoldEqualsClosedForm) {
  auto rng = make_rng(102);
  for (int c = 0; c < kCases; ++c) {
    const auto w = random_world(rng);
    Belief folded = w.b1;
    for (std::size_t t = 0; t < w.shown.size(); ++t) folded = update_belief(folded, w.q.row(w.shown[t], w.x), t + 1);
    const Belief closed = final_belief(w.b1, w.q, w.x, w.shown);
    for (ActionId i = 0; i < w.dims.n_actions; ++i) EXPECT_NEAR(folded[i], closed[i], 1e-12);
  }
}

TEST(Properties, PerRowScaleInvarianceOfLikelihood) {
  auto rng = make_rng(103);
  std::normal_distribution<double> n01;
  for (int c = 0; c < kCases; ++c) {
    const auto w = random_world(rng);
    const InteractionRecord rec{w.x, 0, 0, w.shown, w.final};
    const double base = interaction_likelihood(rec, w.b1, w.q);
    auto scaled = w.q;
    // Each (e, x) row gets its own positive constant.
    for (ExplainerId e = 0; e < w.dims.n_explainers; ++e)
      for (ContextId x = 0; x < w.dims.n_contexts; ++x) {
        const double k = std::exp(3.0 * n01(rng));
        for (ActionId a = 0; a < w.dims.n_actions; ++a) scaled.set(e, x, a, k * w.q.at(e, x, a));
      }
    EXPECT_NEAR(interaction_likelihood(rec, w.b1, scaled), base, 1e-12 * std::max(1.0, base));
  }
}

TEST(Properties, MonotoneInOwnPropensity) {
  auto rng = make_rng(104);
  for (int c = 0; c < kCases; ++c) {
    auto w = random_world(rng);
    if (w.shown.empty()) w.shown.push_back(0);
    const ExplainerId e = w.shown[uniform_index(w.shown.size(), rng)];
    const ActionId target = uniform_index(w.dims.n_actions, rng);
    const double before = final_belief(w.b1, w.q, w.x, w.shown)[target];
    auto bumped = w.q;
    bumped.set(e, w.x, target, w.q.at(e, w.x, target) * (1.0 + 5.0 * uniform01(rng)));
    const double after = final_belief(w.b1, bumped, w.x, w.shown)[target];
    EXPECT_GE(after, before - 1e-15);
  }
}

TEST(Properties, FilterWeightsNormalizedAndEssBounded) {
  auto rng = make_rng(105);
  FilterConfig cfg;
  cfg.alpha = 0.95;
  for (int c = 0; c < kCases; ++c) {
    const auto w = random_world(rng);
    const std::size_t n = 5 + uniform_index(40, rng);
    const auto ps = random_particles(w.dims, n, rng);
    cfg.n_particles = n;
    const auto out = posterior_update(ps, {w.x, 0, 0, w.shown, w.final}, w.b1, cfg, rng);
    double total = 0.0;
    for (double v : out.weights) {
      EXPECT_GE(v, 0.0);
      total += v;
    }
    EXPECT_NEAR(total, 1.0, 1e-9);
    const double ess_in = effective_sample_size(ps), ess_out = effective_sample_size(out);
    EXPECT_GE(ess_in, 1.0 - 1e-9);
    EXPECT_LE(ess_in, static_cast<double>(n) + 1e-9);
    EXPECT_GE(ess_out, 1.0 - 1e-9);
    EXPECT_LE(ess_out, static_cast<double>(n) + 1e-9);
  }
}

TEST(Properties, FirstStageWeightsIgnoreRowOffsets) {
  auto rng = make_rng(106);
  std::normal_distribution<double> n01;
  for (int c = 0; c < kCases; ++c) {
    const auto w = random_world(rng);
    const auto ps = random_particles(w.dims, 20, rng);
    const InteractionRecord rec{w.x, 0, 0, w.shown, w.final};
    const auto base = first_stage_weights(ps, rec, w.b1, 0.9);
    // Multiplying q[e, x, .] by a constant is a shift of theta[e, x, .] in every particle.
    auto shifted = ps;
    for (ExplainerId e = 0; e < w.dims.n_explainers; ++e)
      for (ContextId x = 0; x < w.dims.n_contexts; ++x) {
        const double k = 2.0 * n01(rng);
        for (std::size_t i = 0; i < shifted.size(); ++i)
          for (ActionId a = 0; a < w.dims.n_actions; ++a) shifted.theta(i)[w.dims.index(e, x, a)] += k;
      }
    const auto moved = first_stage_weights(shifted, rec, w.b1, 0.9);
    for (std::size_t i = 0; i < base.size(); ++i) EXPECT_NEAR(moved[i], base[i], 1e-12);
  }
}

TEST(Properties, PosteriorUpdateIsBitDeterministic) {
  auto rng = make_rng(107);
  FilterConfig cfg;
  for (int c = 0; c < kCases; ++c) {
    const auto w = random_world(rng);
    const auto ps = random_particles(w.dims, 16, rng);
    cfg.n_particles = 16;
    const std::uint64_t seed = rng();
    auto r1 = make_rng(seed), r2 = make_rng(seed);
    const InteractionRecord rec{w.x, 0, 0, w.shown, w.final};
    const auto a = posterior_update(ps, rec, w.b1, cfg, r1);
    const auto b = posterior_update(ps, rec, w.b1, cfg, r2);
    ASSERT_EQ(a, b);
    ASSERT_EQ(r1, r2);
  }
}

// With nothing shown the likelihood is constant, so one update must preserve the
// weighted mean and covariance of the cloud up to Monte-Carlo error (the jitter
// adds cov_jitter to the diagonal).
TEST(Properties, ConstantLikelihoodPreservesMoments) {
  const auto scenario = binary_validation_scenario();
  FilterConfig cfg;
  cfg.n_particles = 1000;
  cfg.alpha = 0.9;
  const std::size_t d = scenario.dims.size();
  const int seeds = 30;
  Eigen::MatrixXd mean_z = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(d), 1);
  Eigen::MatrixXd cov_z = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
  for (int seed = 0; seed < seeds; ++seed) {
    auto rng = make_rng(static_cast<std::uint64_t>(seed), 108);
    auto ps = init_particles(cfg, scenario.dims, rng);
    // A few informative updates give the cloud correlations and unequal weights.
    for (int i = 0; i < 5; ++i) ps = posterior_update(ps, {1, 0, 1, {1, 0}, 1}, Belief({0.5, 0.5}), cfg, rng);
    const Eigen::VectorXd m0 = weighted_mean(ps);
    const Eigen::MatrixXd s0 = weighted_covariance(ps, m0);
    const auto out = posterior_update(ps, {1, 0, 1, {}, 1}, Belief({0.5, 0.5}), cfg, rng);
    const Eigen::VectorXd m1 = weighted_mean(out);
    const Eigen::MatrixXd s1 = weighted_covariance(out, m1);
    const double n = static_cast<double>(cfg.n_particles);
    for (std::size_t j = 0; j < d; ++j) {
      const auto J = static_cast<Eigen::Index>(j);
      mean_z(J, 0) += (m1(J) - m0(J)) / std::sqrt(s0(J, J) / n);
      for (std::size_t k = 0; k < d; ++k) {
        const auto K = static_cast<Eigen::Index>(k);
        const double target = s0(J, K) + (j == k ? cfg.cov_jitter : 0.0);
        const double se = std::sqrt((s0(J, J) * s0(K, K) + s0(J, K) * s0(J, K)) / n);
        cov_z(J, K) += (s1(J, K) - target) / se;
      }
    }
  }
  // Averages of standardized errors have standard deviation 1/sqrt(seeds).
  const double bound = 4.0 / std::sqrt(static_cast<double>(seeds));
  for (Eigen::Index j = 0; j < mean_z.rows(); ++j) EXPECT_LT(std::abs(mean_z(j, 0) / seeds), bound) << "mean " << j;
  for (Eigen::Index j = 0; j < cov_z.rows(); ++j)
    for (Eigen::Index k = 0; k < cov_z.cols(); ++k)
      EXPECT_LT(std::abs(cov_z(j, k) / seeds), bound) << "cov " << j << "," << k;
}

TEST(Properties, OrderingsArePermutationsAndSliceScaleInvariant) {
  auto rng = make_rng(109);
  for (int c = 0; c < kCases; ++c) {
    const auto w = random_world(rng);
    const ActionId target = uniform_index(w.dims.n_actions, rng);
    const auto oracle = MetaPolicyState::oracle(w.q);
    const auto base = rank_explainers(oracle, w.x, target, rng);
    EXPECT_TRUE(base.is_permutation_of(w.dims.n_explainers));
    auto scaled = w.q;
    const double k = std::exp(4.0 * (uniform01(rng) - 0.5));
    for (ExplainerId e = 0; e < w.dims.n_explainers; ++e) scaled.set(e, w.x, target, k * w.q.at(e, w.x, target));
    EXPECT_EQ(rank_explainers(MetaPolicyState::oracle(scaled), w.x, target, rng), base);
    EXPECT_TRUE(rank_explainers(MetaPolicyState::random(w.dims), w.x, target, rng).is_permutation_of(w.dims.n_explainers));
  }
}

TEST(Properties, ViewsNeverExceedPatience) {
  auto rng = make_rng(110);
  for (int c = 0; c < 200; ++c) {
    const Dims d{1 + uniform_index(4, rng), 1 + uniform_index(2, rng), 2 + uniform_index(2, rng)};
    auto s = randomized_scenario(d, rng());
    s.human.max_views = uniform_index(d.n_explainers + 1, rng);
    if (uniform01(rng) < 0.5) s.human.confidence_threshold = 0.5 + 0.5 * uniform01(rng) + 1e-9;
    auto state = MetaPolicyState::random(d);
    for (int i = 0; i < 5; ++i) {
      auto [res, next] = simulate_episode(s, state, rng);
      EXPECT_LE(res.views, s.human.max_views);
      EXPECT_EQ(res.views, res.record.shown.size());
      state = std::move(next);
    }
  }
}
