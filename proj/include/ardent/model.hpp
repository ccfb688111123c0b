#pragma once

// Behaviour model of a human decision-maker who updates a belief over actions
// multiplicatively as explanations are shown, then acts on the final belief.

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "ardent/random.hpp"
#include "ardent/types.hpp"

namespace ardent {

inline constexpr double kBeliefTolerance = 1e-9;
inline constexpr double kTieTolerance = 1e-12;
inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Probability vector over actions.
struct Belief {
  std::vector<double> probs;

  Belief() = default;
  explicit Belief(std::vector<double> p) : probs(std::move(p)) {}

  std::size_t size() const { return probs.size(); }
  double operator[](ActionId a) const { return probs[a]; }

  void validate() const {
    if (probs.empty()) throw InvalidArgument("belief: empty");
    double total = 0.0;
    for (double p : probs) {
      if (!(p >= 0.0 && p <= 1.0)) throw InvalidArgument("belief: entry outside [0,1]");
      total += p;
    }
    if (std::abs(total - 1.0) > kBeliefTolerance)
      throw InvalidArgument("belief: entries do not sum to 1");
  }

  static Belief uniform(std::size_t n) { return Belief(std::vector<double>(n, 1.0 / n)); }

  bool operator==(const Belief&) const = default;
};

// Strictly positive tensor q[e, x, a], stored row-major as (e, x, a).
class PropensityTensor {
 public:
  PropensityTensor() = default;

  PropensityTensor(Dims dims, std::vector<double> values) : dims_(dims), values_(std::move(values)) {
    dims_.validate();
    if (values_.size() != dims_.size())
      throw InvalidArgument("propensity tensor: value count does not match dims");
    for (double v : values_)
      if (!(v > 0.0) || !std::isfinite(v))
        throw InvalidPropensity("propensity tensor: entries must be positive and finite");
  }

  static PropensityTensor constant(Dims dims, double value = 1.0) {
    return PropensityTensor(dims, std::vector<double>(dims.size(), value));
  }

  static PropensityTensor from_log(Dims dims, std::span<const double> log_values) {
    std::vector<double> v(log_values.size());
    std::transform(log_values.begin(), log_values.end(), v.begin(), [](double t) { return std::exp(t); });
    return PropensityTensor(dims, std::move(v));
  }

  const Dims& dims() const { return dims_; }
  const std::vector<double>& values() const { return values_; }

  double at(ExplainerId e, ContextId x, ActionId a) const { return values_[dims_.index(e, x, a)]; }

  void set(ExplainerId e, ContextId x, ActionId a, double v) {
    if (!(v > 0.0) || !std::isfinite(v))
      throw InvalidPropensity("propensity tensor: entries must be positive and finite");
    values_[dims_.index(e, x, a)] = v;
  }

  // The action slice q[e, x, .].
  std::span<const double> row(ExplainerId e, ContextId x) const {
    return {values_.data() + dims_.index(e, x, 0), dims_.n_actions};
  }

  bool operator==(const PropensityTensor&) const = default;

 private:
  Dims dims_{};
  std::vector<double> values_;
};

// Row x is the action distribution for context x.
struct TabularPolicy {
  std::vector<Belief> rows;

  const Belief& operator[](ContextId x) const { return rows[x]; }
  std::size_t n_contexts() const { return rows.size(); }

  void validate(const Dims& dims) const {
    if (rows.size() != dims.n_contexts) throw InvalidArgument("policy: row count != contexts");
    for (const auto& r : rows) {
      if (r.size() != dims.n_actions) throw InvalidArgument("policy: row length != actions");
      r.validate();
    }
  }

  bool operator==(const TabularPolicy&) const = default;
};

struct InteractionRecord {
  ContextId context = 0;
  ActionId intended = 0;
  ActionId proposed = 0;
  std::vector<ExplainerId> shown;
  ActionId final = 0;

  void validate(const Dims& dims) const {
    if (context >= dims.n_contexts) throw InvalidArgument("record: context id out of range");
    if (intended >= dims.n_actions || proposed >= dims.n_actions || final >= dims.n_actions)
      throw InvalidArgument("record: action id out of range");
    if (shown.size() > dims.n_explainers) throw ProtocolViolation("record: more explanations than explainers");
    std::vector<bool> seen(dims.n_explainers, false);
    for (ExplainerId e : shown) {
      if (e >= dims.n_explainers) throw InvalidArgument("record: explainer id out of range");
      if (seen[e]) throw ProtocolViolation("record: explainer shown twice");
      seen[e] = true;
    }
  }

  bool operator==(const InteractionRecord&) const = default;
};

enum class FinalActionRule { sample, argmax_tie_uniform };

inline std::string to_string(FinalActionRule r) {
  return r == FinalActionRule::sample ? "sample" : "argmax-tie-uniform";
}

inline FinalActionRule final_action_rule_from_string(const std::string& s) {
  if (s == "sample") return FinalActionRule::sample;
  if (s == "argmax-tie-uniform") return FinalActionRule::argmax_tie_uniform;
  throw InvalidArgument("unknown final action rule: " + s);
}

namespace detail {

inline void check_no_duplicates(std::span<const ExplainerId> shown, std::size_t n_explainers) {
  std::vector<bool> seen(n_explainers, false);
  for (ExplainerId e : shown) {
    if (e >= n_explainers) throw InvalidArgument("explainer id out of range");
    if (seen[e]) throw ProtocolViolation("explainer shown twice in one interaction");
    seen[e] = true;
  }
}

// exp-normalize of log weights; -inf entries map to exactly 0.
inline std::vector<double> softmax(std::span<const double> logw) {
  double m = kNegInf;
  for (double v : logw) m = std::max(m, v);
  if (m == kNegInf) throw NumericalError("normalizer is zero");
  std::vector<double> out(logw.size());
  double total = 0.0;
  for (std::size_t i = 0; i < logw.size(); ++i) {
    out[i] = logw[i] == kNegInf ? 0.0 : std::exp(logw[i] - m);
    total += out[i];
  }
  for (double& v : out) v /= total;
  return out;
}

inline double log_sum_exp(std::span<const double> v) {
  double m = kNegInf;
  for (double x : v) m = std::max(m, x);
  if (m == kNegInf) return kNegInf;
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

}  // namespace detail

// One multiplicative update b[a] <- b[a] * t * q[a], normalized. The step factor
// t is common to all actions and cancels, so `step_index` has no numerical effect.
inline Belief update_belief(const Belief& b, std::span<const double> q_row, std::size_t step_index = 1) {
  (void)step_index;
  if (q_row.size() != b.size()) throw InvalidArgument("update_belief: size mismatch");
  std::vector<double> out(b.size());
  double total = 0.0;
  for (std::size_t a = 0; a < b.size(); ++a) {
    if (!(q_row[a] > 0.0) || !std::isfinite(q_row[a]))
      throw InvalidPropensity("update_belief: propensities must be positive and finite");
    out[a] = b.probs[a] * q_row[a];
    total += out[a];
  }
  if (!(total > 0.0)) throw NumericalError("update_belief: zero normalizer");
  for (double& v : out) v /= total;
  return Belief(std::move(out));
}

// Unnormalized log of the final belief: log b1[a] + sum_t log_q(e_t, x, a).
template <class LogQ>
void log_final_belief(std::span<const double> b1, LogQ&& log_q, ContextId x,
                      std::span<const ExplainerId> shown, std::span<double> out) {
  for (std::size_t a = 0; a < b1.size(); ++a) {
    if (b1[a] <= 0.0) {
      out[a] = kNegInf;
      continue;
    }
    double s = std::log(b1[a]);
    for (ExplainerId e : shown) s += log_q(e, x, a);
    out[a] = s;
  }
}

// Log probability that the final action is `final` after the explanations in
// `shown`. Duplicate checking is left to the caller.
template <class LogQ>
double log_likelihood(std::span<const double> b1, LogQ&& log_q, ContextId x,
                      std::span<const ExplainerId> shown, ActionId final) {
  constexpr std::size_t kStack = 16;
  double stack_buf[kStack] = {};
  std::vector<double> heap_buf;
  std::span<double> buf;
  if (b1.size() <= kStack) {
    buf = std::span<double>(stack_buf, b1.size());
  } else {
    heap_buf.resize(b1.size());
    buf = heap_buf;
  }
  log_final_belief(b1, log_q, x, shown, buf);
  if (buf[final] == kNegInf) return kNegInf;
  return buf[final] - detail::log_sum_exp(buf);
}

inline Belief final_belief(const Belief& b1, const PropensityTensor& q, ContextId x,
                           std::span<const ExplainerId> shown) {
  const Dims& d = q.dims();
  if (b1.size() != d.n_actions) throw InvalidArgument("final_belief: belief size != actions");
  if (x >= d.n_contexts) throw InvalidArgument("final_belief: context out of range");
  detail::check_no_duplicates(shown, d.n_explainers);
  std::vector<double> logs(d.n_actions);
  log_final_belief(
      b1.probs, [&](ExplainerId e, ContextId cx, ActionId a) { return std::log(q.at(e, cx, a)); }, x, shown,
      logs);
  return Belief(detail::softmax(logs));
}

inline double interaction_likelihood(const InteractionRecord& record, const Belief& b1,
                                     const PropensityTensor& q) {
  record.validate(q.dims());
  if (b1.size() != q.dims().n_actions) throw InvalidArgument("likelihood: belief size != actions");
  const double ll = log_likelihood(
      b1.probs, [&](ExplainerId e, ContextId x, ActionId a) { return std::log(q.at(e, x, a)); },
      record.context, record.shown, record.final);
  return ll == kNegInf ? 0.0 : std::exp(ll);
}

inline ActionId draw_action(const Belief& b, FinalActionRule rule, Rng& rng) {
  if (rule == FinalActionRule::sample) return draw_categorical(b.probs, rng);
  const double best = *std::max_element(b.probs.begin(), b.probs.end());
  std::vector<ActionId> ties;
  for (ActionId a = 0; a < b.size(); ++a)
    if (std::abs(b.probs[a] - best) <= kTieTolerance) ties.push_back(a);
  return ties.size() == 1 ? ties.front() : ties[uniform_index(ties.size(), rng)];
}

}  // namespace ardent
