#pragma once

// Sequential Monte Carlo tracking of the posterior over propensities.
//
// Particles hold log-propensities theta = log q, so the Gaussian shrinkage
// kernel (Liu & West, 2001) never produces a non-positive propensity. Each
// update shrinks particles toward the weighted mean by `alpha`, reweights the
// shrunk locations by the likelihood of the new interaction, resamples kernel
// centres from those first-stage weights and jitters with variance
// (1 - alpha^2) * Sigma, which preserves the first two moments.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include "ardent/model.hpp"
#include "ardent/random.hpp"
#include "ardent/types.hpp"

namespace ardent {

// Above this many tensor entries the kernel covariance is kept diagonal.
inline constexpr std::size_t kDenseCovarianceLimit = 64;

struct FilterConfig {
  std::size_t n_particles = 1000;
  double alpha = 0.98;
  double prior_log_mean = 0.0;
  double prior_log_std = 1.0;
  double cov_jitter = 1e-6;
  double human_policy_smoothing = 1.0;

  void validate() const {
    if (n_particles < 1) throw InvalidArgument("filter config: n_particles must be >= 1");
    if (!(alpha > 0.0 && alpha < 1.0)) throw InvalidArgument("filter config: alpha must lie in (0,1)");
    if (!(prior_log_std > 0.0)) throw InvalidArgument("filter config: prior_log_std must be positive");
    if (!(cov_jitter > 0.0)) throw InvalidArgument("filter config: cov_jitter must be positive");
    if (!(human_policy_smoothing > 0.0)) throw InvalidArgument("filter config: smoothing must be positive");
  }

  bool operator==(const FilterConfig&) const = default;
};

class DegenerateUpdate : public Error {
 public:
  DegenerateUpdate(const std::string& what, InteractionRecord record) : Error(what), record_(std::move(record)) {}
  const InteractionRecord& record() const { return record_; }

 private:
  InteractionRecord record_;
};

struct ParticleSet {
  Dims dims;
  std::vector<double> thetas;  // n x dims.size(), row-major
  std::vector<double> weights;

  std::size_t size() const { return weights.size(); }
  std::size_t dim() const { return dims.size(); }

  std::span<const double> theta(std::size_t i) const { return {thetas.data() + i * dim(), dim()}; }
  std::span<double> theta(std::size_t i) { return {thetas.data() + i * dim(), dim()}; }

  void validate() const {
    if (weights.empty()) throw InvariantViolation("particle set: empty");
    if (thetas.size() != weights.size() * dim()) throw InvariantViolation("particle set: shape mismatch");
    double total = 0.0;
    for (double w : weights) {
      if (!(w >= 0.0)) throw InvariantViolation("particle set: negative weight");
      total += w;
    }
    if (std::abs(total - 1.0) > kBeliefTolerance) throw InvariantViolation("particle set: weights do not sum to 1");
    for (double t : thetas)
      if (!std::isfinite(t)) throw InvariantViolation("particle set: non-finite theta");
  }

  bool operator==(const ParticleSet&) const = default;
};

// Laplace-smoothed counts of observed intended actions; the normalized row for
// context x stands in for the human's initial belief there.
class HumanPolicyEstimate {
 public:
  HumanPolicyEstimate() = default;
  HumanPolicyEstimate(const Dims& dims, double smoothing)
      : n_actions_(dims.n_actions),
        smoothing_(smoothing),
        counts_(dims.n_contexts * dims.n_actions, smoothing) {
    if (!(smoothing > 0.0)) throw InvalidArgument("human policy estimate: smoothing must be positive");
  }

  void observe(ContextId x, ActionId intended) {
    if (x >= n_contexts() || intended >= n_actions_) throw InvalidArgument("human policy estimate: id out of range");
    counts_[x * n_actions_ + intended] += 1.0;
  }

  Belief belief(ContextId x) const {
    if (x >= n_contexts()) throw InvalidArgument("human policy estimate: context out of range");
    const auto first = counts_.begin() + static_cast<std::ptrdiff_t>(x * n_actions_);
    const double total = std::accumulate(first, first + static_cast<std::ptrdiff_t>(n_actions_), 0.0);
    std::vector<double> p(first, first + static_cast<std::ptrdiff_t>(n_actions_));
    for (double& v : p) v /= total;
    return Belief(std::move(p));
  }

  TabularPolicy as_policy() const {
    TabularPolicy pol;
    for (ContextId x = 0; x < n_contexts(); ++x) pol.rows.push_back(belief(x));
    return pol;
  }

  double count(ContextId x, ActionId a) const { return counts_[x * n_actions_ + a]; }
  std::size_t n_contexts() const { return n_actions_ == 0 ? 0 : counts_.size() / n_actions_; }
  std::size_t n_actions() const { return n_actions_; }
  double smoothing() const { return smoothing_; }
  const std::vector<double>& counts() const { return counts_; }

  static HumanPolicyEstimate from_counts(std::size_t n_actions, double smoothing, std::vector<double> counts) {
    HumanPolicyEstimate est;
    est.n_actions_ = n_actions;
    est.smoothing_ = smoothing;
    est.counts_ = std::move(counts);
    return est;
  }

  bool operator==(const HumanPolicyEstimate&) const = default;

 private:
  std::size_t n_actions_ = 0;
  double smoothing_ = 1.0;
  std::vector<double> counts_;
};

inline HumanPolicyEstimate update_human_policy(HumanPolicyEstimate est, ContextId x, ActionId intended) {
  est.observe(x, intended);
  return est;
}

inline ParticleSet init_particles(const FilterConfig& config, const Dims& dims, Rng& rng) {
  config.validate();
  dims.validate();
  ParticleSet ps{dims, std::vector<double>(config.n_particles * dims.size()),
                 std::vector<double>(config.n_particles, 1.0 / static_cast<double>(config.n_particles))};
  std::normal_distribution<double> prior(config.prior_log_mean, config.prior_log_std);
  for (double& t : ps.thetas) t = prior(rng);
  return ps;
}

// Log-likelihood of `record` under the particle `theta` (log-propensities).
inline double particle_log_likelihood(const Dims& dims, std::span<const double> theta,
                                      const InteractionRecord& record, const Belief& b1) {
  return log_likelihood(
      b1.probs, [&](ExplainerId e, ContextId x, ActionId a) { return theta[dims.index(e, x, a)]; },
      record.context, record.shown, record.final);
}

inline double effective_sample_size(const ParticleSet& ps) {
  double s = 0.0;
  for (double w : ps.weights) s += w * w;
  return 1.0 / s;
}

inline std::size_t sample_particle(const ParticleSet& ps, Rng& rng) {
  const double total = std::accumulate(ps.weights.begin(), ps.weights.end(), 0.0);
  if (std::abs(total - 1.0) > kBeliefTolerance)
    throw InvariantViolation("sample_particle: weights are not normalized");
  return draw_categorical(ps.weights, rng);
}

inline PropensityTensor posterior_mean(const ParticleSet& ps) {
  std::vector<double> mean(ps.dim(), 0.0);
  for (std::size_t i = 0; i < ps.size(); ++i) {
    const auto th = ps.theta(i);
    for (std::size_t j = 0; j < ps.dim(); ++j) mean[j] += ps.weights[i] * std::exp(th[j]);
  }
  return PropensityTensor(ps.dims, std::move(mean));
}

namespace detail {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline Eigen::Map<const RowMatrix> theta_matrix(const ParticleSet& ps) {
  return {ps.thetas.data(), static_cast<Eigen::Index>(ps.size()), static_cast<Eigen::Index>(ps.dim())};
}

inline Eigen::Map<const Eigen::VectorXd> weight_vector(const ParticleSet& ps) {
  return {ps.weights.data(), static_cast<Eigen::Index>(ps.size())};
}

inline std::vector<double> shrunk_locations(const ParticleSet& ps, const Eigen::VectorXd& mean, double alpha) {
  std::vector<double> mu(ps.thetas.size());
  const std::size_t d = ps.dim();
  for (std::size_t i = 0; i < ps.size(); ++i)
    for (std::size_t j = 0; j < d; ++j)
      mu[i * d + j] = alpha * ps.thetas[i * d + j] + (1.0 - alpha) * mean[static_cast<Eigen::Index>(j)];
  return mu;
}

}  // namespace detail

// Weighted mean of the particle thetas.
inline Eigen::VectorXd weighted_mean(const ParticleSet& ps) {
  return detail::theta_matrix(ps).transpose() * detail::weight_vector(ps);
}

inline Eigen::MatrixXd weighted_covariance(const ParticleSet& ps, const Eigen::VectorXd& mean) {
  const auto theta = detail::theta_matrix(ps);
  Eigen::MatrixXd centred = theta.rowwise() - mean.transpose();
  return centred.transpose() * detail::weight_vector(ps).asDiagonal() * centred;
}

// Normalized first-stage weights p(i) proportional to w(i) * P(a | x, e_1:T, q = exp(mu(i))).
// Returns log-weights; entries are -inf where the weight vanishes.
inline std::vector<double> first_stage_log_weights(const ParticleSet& ps, std::span<const double> locations,
                                                   const InteractionRecord& record, const Belief& b1) {
  const std::size_t d = ps.dim();
  std::vector<double> logp(ps.size());
  for (std::size_t i = 0; i < ps.size(); ++i) {
    if (ps.weights[i] <= 0.0) {
      logp[i] = kNegInf;
      continue;
    }
    const double ll = particle_log_likelihood(ps.dims, locations.subspan(i * d, d), record, b1);
    logp[i] = ll == kNegInf ? kNegInf : std::log(ps.weights[i]) + ll;
  }
  const double z = detail::log_sum_exp(logp);
  if (z == kNegInf) throw DegenerateUpdate("posterior update: every shrunk location has zero likelihood", record);
  for (double& v : logp)
    if (v != kNegInf) v -= z;
  return logp;
}

inline std::vector<double> first_stage_weights(const ParticleSet& ps, const InteractionRecord& record,
                                               const Belief& b1, double alpha) {
  const auto mu = detail::shrunk_locations(ps, weighted_mean(ps), alpha);
  auto logp = first_stage_log_weights(ps, mu, record, b1);
  for (double& v : logp) v = v == kNegInf ? 0.0 : std::exp(v);
  return logp;
}

inline ParticleSet posterior_update(const ParticleSet& ps, const InteractionRecord& record, const Belief& b1,
                                    const FilterConfig& config, Rng& rng) {
  config.validate();
  record.validate(ps.dims);
  if (b1.size() != ps.dims.n_actions) throw InvalidArgument("posterior update: belief size != actions");

  const std::size_t n = ps.size();
  const std::size_t d = ps.dim();
  const double alpha = config.alpha;

  const Eigen::VectorXd mean = weighted_mean(ps);
  const std::vector<double> mu = detail::shrunk_locations(ps, mean, alpha);
  const std::vector<double> logp = first_stage_log_weights(ps, mu, record, b1);
  std::vector<double> p(n);
  std::transform(logp.begin(), logp.end(), p.begin(), [](double v) { return v == kNegInf ? 0.0 : std::exp(v); });

  // Kernel factor: L with L L^T = (1 - alpha^2) Sigma + jitter I, or its diagonal.
  const bool dense = d <= kDenseCovarianceLimit;
  Eigen::MatrixXd chol;
  Eigen::VectorXd diag_sd;
  {
    const double scale = 1.0 - alpha * alpha;
    if (dense) {
      Eigen::MatrixXd kernel = scale * weighted_covariance(ps, mean);
      kernel.diagonal().array() += config.cov_jitter;
      Eigen::LLT<Eigen::MatrixXd> llt(kernel);
      if (llt.info() != Eigen::Success) throw NumericalError("posterior update: kernel covariance is not positive definite");
      chol = llt.matrixL();
    } else {
      const auto theta = detail::theta_matrix(ps);
      Eigen::VectorXd var = ((theta.rowwise() - mean.transpose()).array().square().matrix().transpose() *
                             detail::weight_vector(ps));
      diag_sd = (scale * var.array() + config.cov_jitter).sqrt();
    }
  }

  std::vector<std::size_t> centres(n);
  {
    std::vector<double> cumulative(n);
    std::partial_sum(p.begin(), p.end(), cumulative.begin());
    const double total = cumulative.back();
    auto locate = [&](double u) {
      const auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u * total);
      std::size_t k = it == cumulative.end() ? n - 1 : static_cast<std::size_t>(it - cumulative.begin());
      while (p[k] <= 0.0 && k > 0) --k;
      return k;
    };
    for (std::size_t i = 0; i < n; ++i) centres[i] = locate(uniform01(rng));
  }

  ParticleSet out{ps.dims, std::vector<double>(n * d), std::vector<double>(n)};
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::VectorXd z(static_cast<Eigen::Index>(d));
  std::vector<double> logw(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t k = centres[i];
    for (auto& v : z) v = normal(rng);
    Eigen::Map<const Eigen::VectorXd> centre(mu.data() + k * d, static_cast<Eigen::Index>(d));
    Eigen::Map<Eigen::VectorXd> fresh(out.thetas.data() + i * d, static_cast<Eigen::Index>(d));
    if (dense)
      fresh = centre + chol.triangularView<Eigen::Lower>() * z;
    else
      fresh = centre + diag_sd.cwiseProduct(z);

    const double ll_new = particle_log_likelihood(ps.dims, out.theta(i), record, b1);
    const double ll_centre = particle_log_likelihood(ps.dims, std::span<const double>(mu).subspan(k * d, d), record, b1);
    logw[i] = ll_new == kNegInf ? kNegInf : ll_new - ll_centre;
  }
  if (detail::log_sum_exp(logw) == kNegInf)
    throw DegenerateUpdate("posterior update: all rejuvenated particles have zero likelihood", record);
  out.weights = detail::softmax(logw);
  return out;
}

// Options for the Metropolis warm start.
struct WarmStartOptions {
  std::size_t burn_in = 1000;
  std::size_t thinning = 10;
  double initial_step = 0.5;
  bool adapt = true;
  double target_acceptance = 0.44;
  double min_acceptance = 0.01;
  double max_acceptance = 0.95;
};

struct WarmStartReport {
  double acceptance = 0.0;
  std::vector<double> step_sizes;
};

// Builds particles from logged interactions with a component-wise random-walk
// Metropolis chain targeting prior(theta) * prod_r P(final_r | theta). Per-entry
// step sizes adapt during burn-in; afterwards the chain is thinned into
// `config.n_particles` uniformly weighted states.
inline ParticleSet warm_start_particles(const FilterConfig& config, const Dims& dims,
                                        std::span<const InteractionRecord> logs, const TabularPolicy& b1_per_context,
                                        Rng& rng, const WarmStartOptions& opts = {},
                                        WarmStartReport* report = nullptr) {
  config.validate();
  dims.validate();
  b1_per_context.validate(dims);
  if (opts.thinning < 1) throw InvalidArgument("warm start: thinning must be >= 1");
  const std::size_t d = dims.size();

  // Records with an empty explanation sequence carry no information about theta.
  std::vector<const InteractionRecord*> informative;
  for (const auto& r : logs) {
    r.validate(dims);
    if (!r.shown.empty()) informative.push_back(&r);
  }
  std::vector<std::vector<std::size_t>> touching(d);
  for (std::size_t r = 0; r < informative.size(); ++r) {
    const auto& rec = *informative[r];
    for (ExplainerId e : rec.shown)
      for (ActionId a = 0; a < dims.n_actions; ++a) touching[dims.index(e, rec.context, a)].push_back(r);
  }

  std::vector<double> theta(d, config.prior_log_mean);
  auto record_ll = [&](std::size_t r) {
    const auto& rec = *informative[r];
    return particle_log_likelihood(dims, theta, rec, b1_per_context[rec.context]);
  };
  std::vector<double> cached(informative.size());
  for (std::size_t r = 0; r < informative.size(); ++r) {
    cached[r] = record_ll(r);
    if (cached[r] == kNegInf)
      throw DegenerateUpdate("warm start: logged record has zero likelihood for every theta", *informative[r]);
  }

  const double inv_var = 1.0 / (config.prior_log_std * config.prior_log_std);
  auto log_prior_entry = [&](double t) {
    const double c = t - config.prior_log_mean;
    return -0.5 * c * c * inv_var;
  };

  std::vector<double> step(d, opts.initial_step);
  std::vector<std::size_t> batch_accepts(d, 0);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> proposal_ll;
  std::size_t accepted = 0, proposed = 0;

  auto sweep = [&](bool counting) {
    for (std::size_t j = 0; j < d; ++j) {
      const double old = theta[j];
      const double cand = old + step[j] * normal(rng);
      double delta = log_prior_entry(cand) - log_prior_entry(old);
      theta[j] = cand;
      proposal_ll.resize(touching[j].size());
      for (std::size_t k = 0; k < touching[j].size(); ++k) {
        proposal_ll[k] = record_ll(touching[j][k]);
        delta += proposal_ll[k] - cached[touching[j][k]];
      }
      const bool accept = delta >= 0.0 || uniform01(rng) < std::exp(delta);
      if (accept) {
        for (std::size_t k = 0; k < touching[j].size(); ++k) cached[touching[j][k]] = proposal_ll[k];
        ++batch_accepts[j];
      } else {
        theta[j] = old;
      }
      if (counting) {
        ++proposed;
        accepted += accept ? 1 : 0;
      }
    }
  };

  constexpr std::size_t kAdaptBatch = 50;
  for (std::size_t s = 1; s <= opts.burn_in; ++s) {
    sweep(false);
    if (opts.adapt && s % kAdaptBatch == 0) {
      const double gain = std::min(0.5, 5.0 / std::sqrt(static_cast<double>(s / kAdaptBatch)));
      for (std::size_t j = 0; j < d; ++j) {
        const double rate = static_cast<double>(batch_accepts[j]) / kAdaptBatch;
        step[j] *= std::exp(gain * (rate - opts.target_acceptance));
        batch_accepts[j] = 0;
      }
    }
  }

  ParticleSet ps{dims, std::vector<double>(config.n_particles * d),
                 std::vector<double>(config.n_particles, 1.0 / static_cast<double>(config.n_particles))};
  for (std::size_t i = 0; i < config.n_particles; ++i) {
    for (std::size_t t = 0; t < opts.thinning; ++t) sweep(true);
    std::copy(theta.begin(), theta.end(), ps.thetas.begin() + static_cast<std::ptrdiff_t>(i * d));
  }

  const double acceptance = static_cast<double>(accepted) / static_cast<double>(std::max<std::size_t>(proposed, 1));
  if (report) *report = {acceptance, step};
  if (acceptance < opts.min_acceptance || acceptance > opts.max_acceptance)
    throw TuningFailure("warm start: acceptance rate " + std::to_string(acceptance) + " outside the usable range",
                        acceptance);
  return ps;
}

}  // namespace ardent
