#pragma once

#include <algorithm>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "ardent/model.hpp"
#include "ardent/particle_filter.hpp"
#include "ardent/random.hpp"

namespace ardent {

// A permutation of all explainer ids, most persuasive first.
struct ExplainerOrdering {
  std::vector<ExplainerId> order;

  bool is_permutation_of(std::size_t n) const {
    if (order.size() != n) return false;
    std::vector<bool> seen(n, false);
    for (ExplainerId e : order) {
      if (e >= n || seen[e]) return false;
      seen[e] = true;
    }
    return true;
  }

  bool operator==(const ExplainerOrdering&) const = default;
};

enum class PolicyKind { ardent, random, oracle, fixed };

inline std::string to_string(PolicyKind k) {
  switch (k) {
    case PolicyKind::ardent: return "ardent";
    case PolicyKind::random: return "random";
    case PolicyKind::oracle: return "oracle";
    case PolicyKind::fixed: return "fixed";
  }
  return "?";
}

inline PolicyKind policy_kind_from_string(const std::string& s) {
  if (s == "ardent") return PolicyKind::ardent;
  if (s == "random") return PolicyKind::random;
  if (s == "oracle") return PolicyKind::oracle;
  if (s == "fixed") return PolicyKind::fixed;
  throw InvalidArgument("unknown meta-policy kind: " + s);
}

struct MetaPolicyState {
  PolicyKind kind = PolicyKind::random;
  Dims dims;
  FilterConfig config;
  std::optional<ParticleSet> particles;              // ardent
  std::optional<HumanPolicyEstimate> human_estimate;  // ardent
  std::optional<PropensityTensor> q_true;            // oracle
  std::optional<ExplainerId> favourite;              // fixed

  void validate() const {
    dims.validate();
    const bool ardent = kind == PolicyKind::ardent;
    if (particles.has_value() != ardent || human_estimate.has_value() != ardent)
      throw InvariantViolation("meta-policy: particles/human estimate present iff kind is ardent");
    if (q_true.has_value() != (kind == PolicyKind::oracle))
      throw InvariantViolation("meta-policy: ground truth present iff kind is oracle");
    if (favourite.has_value() != (kind == PolicyKind::fixed))
      throw InvariantViolation("meta-policy: favourite present iff kind is fixed");
    if (favourite && *favourite >= dims.n_explainers) throw InvalidArgument("meta-policy: favourite out of range");
    if (q_true && q_true->dims() != dims) throw InvalidArgument("meta-policy: ground truth dims mismatch");
    if (particles && particles->dims != dims) throw InvalidArgument("meta-policy: particle dims mismatch");
  }

  static MetaPolicyState random(const Dims& dims) {
    MetaPolicyState s;
    s.kind = PolicyKind::random;
    s.dims = dims;
    return s;
  }

  static MetaPolicyState oracle(PropensityTensor q) {
    MetaPolicyState s;
    s.kind = PolicyKind::oracle;
    s.dims = q.dims();
    s.q_true = std::move(q);
    return s;
  }

  static MetaPolicyState fixed(const Dims& dims, ExplainerId favourite) {
    MetaPolicyState s;
    s.kind = PolicyKind::fixed;
    s.dims = dims;
    s.favourite = favourite;
    s.validate();
    return s;
  }

  static MetaPolicyState ardent(const Dims& dims, const FilterConfig& config, Rng& rng) {
    return ardent(dims, config, init_particles(config, dims, rng), HumanPolicyEstimate(dims, config.human_policy_smoothing));
  }

  static MetaPolicyState ardent(const Dims& dims, const FilterConfig& config, ParticleSet particles,
                                HumanPolicyEstimate estimate) {
    MetaPolicyState s;
    s.kind = PolicyKind::ardent;
    s.dims = dims;
    s.config = config;
    s.particles = std::move(particles);
    s.human_estimate = std::move(estimate);
    s.validate();
    return s;
  }

  bool operator==(const MetaPolicyState&) const = default;
};

namespace detail {

// Descending by score; equal scores keep ascending id order.
inline ExplainerOrdering sort_by_score(const std::vector<double>& score) {
  ExplainerOrdering o;
  o.order.resize(score.size());
  std::iota(o.order.begin(), o.order.end(), ExplainerId{0});
  std::stable_sort(o.order.begin(), o.order.end(),
                   [&](ExplainerId l, ExplainerId r) { return score[l] > score[r]; });
  return o;
}

}  // namespace detail

inline ExplainerOrdering rank_explainers(const MetaPolicyState& state, ContextId x, ActionId target, Rng& rng) {
  const Dims& d = state.dims;
  if (x >= d.n_contexts || target >= d.n_actions) throw InvalidArgument("rank_explainers: id out of range");
  std::vector<double> score(d.n_explainers);
  switch (state.kind) {
    case PolicyKind::ardent: {
      const std::size_t k = sample_particle(*state.particles, rng);
      const auto theta = state.particles->theta(k);
      for (ExplainerId e = 0; e < d.n_explainers; ++e) score[e] = theta[d.index(e, x, target)];
      return detail::sort_by_score(score);
    }
    case PolicyKind::oracle:
      for (ExplainerId e = 0; e < d.n_explainers; ++e) score[e] = state.q_true->at(e, x, target);
      return detail::sort_by_score(score);
    case PolicyKind::random: {
      ExplainerOrdering o;
      o.order.resize(d.n_explainers);
      std::iota(o.order.begin(), o.order.end(), ExplainerId{0});
      for (std::size_t i = o.order.size(); i > 1; --i) std::swap(o.order[i - 1], o.order[uniform_index(i, rng)]);
      return o;
    }
    case PolicyKind::fixed: {
      ExplainerOrdering o;
      o.order.push_back(*state.favourite);
      for (ExplainerId e = 0; e < d.n_explainers; ++e)
        if (e != *state.favourite) o.order.push_back(e);
      return o;
    }
  }
  throw InvariantViolation("rank_explainers: unknown kind");
}

inline std::optional<ExplainerId> next_explainer(const ExplainerOrdering& ordering,
                                                 const std::vector<ExplainerId>& viewed) {
  for (ExplainerId e : ordering.order)
    if (std::find(viewed.begin(), viewed.end(), e) == viewed.end()) return e;
  return std::nullopt;
}

// Ardent: fold the intended action into the human-policy estimate, then run one
// particle update with the refreshed initial-belief estimate. Other kinds do not learn.
inline MetaPolicyState record_feedback(MetaPolicyState state, const InteractionRecord& record, Rng& rng) {
  record.validate(state.dims);
  if (state.kind != PolicyKind::ardent) return state;
  state.human_estimate->observe(record.context, record.intended);
  state.particles = posterior_update(*state.particles, record, state.human_estimate->belief(record.context),
                                     state.config, rng);
  return state;
}

}  // namespace ardent
