#pragma once

// Synthetic decision-makers and experiment runners.

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <functional>
#include <future>
#include <map>
#include <optional>
#include <utility>
#include <vector>

#include "ardent/meta_policy.hpp"
#include "ardent/model.hpp"
#include "ardent/particle_filter.hpp"
#include "ardent/random.hpp"

namespace ardent {

struct HumanBehaviorConfig {
  std::size_t max_views = 1;
  std::optional<double> confidence_threshold;  // stop once max belief >= threshold
  FinalActionRule final_rule = FinalActionRule::argmax_tie_uniform;
  FinalActionRule intended_rule = FinalActionRule::argmax_tie_uniform;
  bool explain_on_agreement = true;  // false: no explanations when intended == proposed

  void validate(const Dims& dims) const {
    if (max_views > dims.n_explainers) throw InvalidArgument("human config: max_views exceeds explainer count");
    if (confidence_threshold && !(*confidence_threshold > 0.5 && *confidence_threshold <= 1.0))
      throw InvalidArgument("human config: confidence threshold must lie in (0.5, 1]");
  }

  bool operator==(const HumanBehaviorConfig&) const = default;
};

struct WeightedBelief {
  double weight = 1.0;
  Belief belief;

  bool operator==(const WeightedBelief&) const = default;
};

struct ScenarioSpec {
  Dims dims;
  std::vector<double> context_dist;
  std::vector<ActionId> optimal;
  std::vector<std::vector<WeightedBelief>> belief_prototypes;  // per context
  TabularPolicy support_policy;
  PropensityTensor q_true;
  HumanBehaviorConfig human;

  void validate() const {
    dims.validate();
    if (context_dist.size() != dims.n_contexts) throw InvalidArgument("scenario: context_dist size != contexts");
    Belief(context_dist).validate();
    if (optimal.size() != dims.n_contexts) throw InvalidArgument("scenario: optimal size != contexts");
    for (ActionId a : optimal)
      if (a >= dims.n_actions) throw InvalidArgument("scenario: optimal action out of range");
    if (belief_prototypes.size() != dims.n_contexts) throw InvalidArgument("scenario: prototypes per context");
    for (const auto& protos : belief_prototypes) {
      if (protos.empty()) throw InvalidArgument("scenario: context without belief prototypes");
      double total = 0.0;
      for (const auto& p : protos) {
        if (!(p.weight >= 0.0)) throw InvalidArgument("scenario: negative prototype weight");
        if (p.belief.size() != dims.n_actions) throw InvalidArgument("scenario: prototype size != actions");
        p.belief.validate();
        total += p.weight;
      }
      if (std::abs(total - 1.0) > kBeliefTolerance) throw InvalidArgument("scenario: prototype weights must sum to 1");
    }
    support_policy.validate(dims);
    if (q_true.dims() != dims) throw InvalidArgument("scenario: q_true dims mismatch");
    human.validate(dims);
  }

  // Mixture of the belief prototypes at x, i.e. the human policy row.
  Belief human_policy_row(ContextId x) const {
    std::vector<double> p(dims.n_actions, 0.0);
    for (const auto& proto : belief_prototypes[x])
      for (ActionId a = 0; a < dims.n_actions; ++a) p[a] += proto.weight * proto.belief[a];
    return Belief(std::move(p));
  }

  bool operator==(const ScenarioSpec&) const = default;
};

// Who acts: the human helped by explanations, the human alone, or the support model alone.
enum class ExperimentMode { human_machine, human_alone, machine_alone };

inline std::string to_string(ExperimentMode m) {
  switch (m) {
    case ExperimentMode::human_machine: return "human_machine";
    case ExperimentMode::human_alone: return "human_alone";
    case ExperimentMode::machine_alone: return "machine_alone";
  }
  return "?";
}

struct EpisodeResult {
  InteractionRecord record;
  bool correct = false;
  std::size_t views = 0;
};

// Runs the synthetic human through one interaction and feeds the outcome back.
inline std::pair<EpisodeResult, MetaPolicyState> simulate_episode(const ScenarioSpec& scenario, MetaPolicyState state,
                                                                  Rng& rng,
                                                                  ExperimentMode mode = ExperimentMode::human_machine) {
  const HumanBehaviorConfig& human = scenario.human;
  InteractionRecord rec;
  rec.context = draw_categorical(scenario.context_dist, rng);
  const ContextId x = rec.context;

  std::vector<double> proto_weights;
  for (const auto& p : scenario.belief_prototypes[x]) proto_weights.push_back(p.weight);
  Belief belief = scenario.belief_prototypes[x][draw_categorical(proto_weights, rng)].belief;
  rec.intended = draw_action(belief, human.intended_rule, rng);
  rec.proposed = draw_categorical(scenario.support_policy[x].probs, rng);

  switch (mode) {
    case ExperimentMode::human_alone:
      rec.final = rec.intended;
      return {{rec, rec.final == scenario.optimal[x], 0}, std::move(state)};
    case ExperimentMode::machine_alone:
      rec.final = rec.proposed;
      return {{rec, rec.final == scenario.optimal[x], 0}, std::move(state)};
    case ExperimentMode::human_machine: break;
  }

  const bool explain = human.max_views > 0 && (human.explain_on_agreement || rec.intended != rec.proposed);
  if (explain) {
    const ExplainerOrdering ordering = rank_explainers(state, x, rec.proposed, rng);
    while (rec.shown.size() < human.max_views) {
      if (human.confidence_threshold &&
          *std::max_element(belief.probs.begin(), belief.probs.end()) >= *human.confidence_threshold)
        break;
      const auto e = next_explainer(ordering, rec.shown);
      if (!e) break;
      rec.shown.push_back(*e);
      belief = update_belief(belief, scenario.q_true.row(*e, x), rec.shown.size());
    }
  }
  // Without any explanation the human simply follows through on the intended action.
  rec.final = rec.shown.empty() ? rec.intended : draw_action(belief, human.final_rule, rng);

  EpisodeResult result{rec, rec.final == scenario.optimal[x], rec.shown.size()};
  state = record_feedback(std::move(state), rec, rng);
  return {std::move(result), std::move(state)};
}

struct MetricSeries {
  std::vector<ContextId> contexts;
  std::vector<std::uint8_t> correct;
  std::vector<std::size_t> views;
  std::vector<double> rolling_acc;  // per-context rolling accuracy at each episode
  std::vector<InteractionRecord> records;
  std::size_t window = 500;
  std::uint64_t seed = 0;
  nlohmann::json config;

  std::size_t size() const { return correct.size(); }

  // Accuracy for episodes in [from, to) restricted to `context` (all contexts if nullopt).
  double accuracy(std::optional<ContextId> context = std::nullopt, std::size_t from = 0,
                  std::size_t to = static_cast<std::size_t>(-1)) const {
    to = std::min(to, size());
    std::size_t n = 0, hits = 0;
    for (std::size_t i = from; i < to; ++i) {
      if (context && contexts[i] != *context) continue;
      ++n;
      hits += correct[i];
    }
    return n == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(n);
  }

  std::size_t count(std::optional<ContextId> context = std::nullopt, std::size_t from = 0,
                    std::size_t to = static_cast<std::size_t>(-1)) const {
    to = std::min(to, size());
    std::size_t n = 0;
    for (std::size_t i = from; i < to; ++i) n += (!context || contexts[i] == *context) ? 1 : 0;
    return n;
  }

  double mean_views(std::optional<ContextId> context = std::nullopt, std::size_t from = 0,
                    std::size_t to = static_cast<std::size_t>(-1)) const {
    to = std::min(to, size());
    std::size_t n = 0;
    double total = 0.0;
    for (std::size_t i = from; i < to; ++i) {
      if (context && contexts[i] != *context) continue;
      ++n;
      total += static_cast<double>(views[i]);
    }
    return n == 0 ? 0.0 : total / static_cast<double>(n);
  }

  // First episode count (1-based) at which the rolling accuracy of `context`
  // over a full window reaches `threshold`; nullopt if it never does.
  std::optional<std::size_t> interactions_to_threshold(ContextId context, double threshold) const {
    std::size_t seen = 0;
    for (std::size_t i = 0; i < size(); ++i) {
      if (contexts[i] != context) continue;
      ++seen;
      if (seen >= window && rolling_acc[i] >= threshold) return i + 1;
    }
    return std::nullopt;
  }

  void push(const EpisodeResult& r) {
    contexts.push_back(r.record.context);
    correct.push_back(r.correct ? 1 : 0);
    views.push_back(r.views);
    records.push_back(r.record);
    // Rolling accuracy over the last `window` episodes with the same context.
    auto& hist = history_[r.record.context];
    hist.push_back(r.correct ? 1 : 0);
    auto& sum = rolling_sum_[r.record.context];
    sum += r.correct ? 1 : 0;
    if (hist.size() > window) sum -= hist[hist.size() - window - 1];
    const std::size_t n = std::min(hist.size(), window);
    rolling_acc.push_back(static_cast<double>(sum) / static_cast<double>(n));
  }

 private:
  std::map<ContextId, std::vector<std::uint8_t>> history_;
  std::map<ContextId, std::size_t> rolling_sum_;
};

struct PolicySpec {
  PolicyKind kind = PolicyKind::random;
  ExperimentMode mode = ExperimentMode::human_machine;
  FilterConfig filter;
  std::optional<ExplainerId> favourite;

  nlohmann::json to_json() const {
    return {{"kind", to_string(kind)},
            {"mode", to_string(mode)},
            {"n_particles", filter.n_particles},
            {"alpha", filter.alpha},
            {"prior_log_mean", filter.prior_log_mean},
            {"prior_log_std", filter.prior_log_std},
            {"cov_jitter", filter.cov_jitter},
            {"human_policy_smoothing", filter.human_policy_smoothing},
            {"favourite", favourite ? nlohmann::json(*favourite) : nlohmann::json(nullptr)}};
  }
};

inline MetaPolicyState make_policy_state(const ScenarioSpec& scenario, const PolicySpec& spec, Rng& rng) {
  switch (spec.kind) {
    case PolicyKind::ardent: return MetaPolicyState::ardent(scenario.dims, spec.filter, rng);
    case PolicyKind::random: return MetaPolicyState::random(scenario.dims);
    case PolicyKind::oracle: return MetaPolicyState::oracle(scenario.q_true);
    case PolicyKind::fixed:
      if (!spec.favourite) throw InvalidArgument("fixed policy requires a favourite explainer");
      return MetaPolicyState::fixed(scenario.dims, *spec.favourite);
  }
  throw InvalidArgument("unknown policy kind");
}

// Runs `n_episodes` sequential interactions with a persistent meta-policy state.
// `initial` overrides the freshly constructed state (e.g. a warm-started filter).
inline MetricSeries run_experiment(const ScenarioSpec& scenario, const PolicySpec& spec, std::size_t n_episodes,
                                   std::uint64_t seed, std::size_t window = 500,
                                   std::optional<MetaPolicyState> initial = std::nullopt,
                                   MetaPolicyState* final_state = nullptr) {
  if (n_episodes < 1) throw InvalidArgument("run_experiment: n_episodes must be >= 1");
  if (window < 1) throw InvalidArgument("run_experiment: window must be >= 1");
  scenario.validate();
  Rng rng = make_rng(seed);
  MetaPolicyState state = initial ? std::move(*initial) : make_policy_state(scenario, spec, rng);

  MetricSeries series;
  series.window = window;
  series.seed = seed;
  series.config = spec.to_json();
  series.config["episodes"] = n_episodes;
  series.config["window"] = window;
  series.config["seed"] = seed;
  for (std::size_t i = 0; i < n_episodes; ++i) {
    auto [result, next] = simulate_episode(scenario, std::move(state), rng, spec.mode);
    state = std::move(next);
    series.push(result);
  }
  if (final_state) *final_state = std::move(state);
  return series;
}

// A non-learning ordering rule: for each (x, a_target), a distribution over orderings.
using OrderingStrategy = std::function<std::vector<std::pair<ExplainerOrdering, double>>(ContextId, ActionId)>;

inline OrderingStrategy oracle_strategy(const PropensityTensor& q) {
  return [q](ContextId x, ActionId target) {
    Rng unused;
    return std::vector<std::pair<ExplainerOrdering, double>>{
        {rank_explainers(MetaPolicyState::oracle(q), x, target, unused), 1.0}};
  };
}

inline OrderingStrategy fixed_strategy(std::size_t n_explainers, ExplainerId favourite) {
  return [n_explainers, favourite](ContextId, ActionId) {
    Rng unused;
    Dims d{n_explainers, 1, 2};
    return std::vector<std::pair<ExplainerOrdering, double>>{
        {rank_explainers(MetaPolicyState::fixed(d, favourite), 0, 0, unused), 1.0}};
  };
}

inline OrderingStrategy random_strategy(std::size_t n_explainers) {
  return [n_explainers](ContextId, ActionId) {
    std::vector<ExplainerId> perm(n_explainers);
    std::iota(perm.begin(), perm.end(), ExplainerId{0});
    std::vector<std::pair<ExplainerOrdering, double>> out;
    double fact = 1.0;
    for (std::size_t i = 2; i <= n_explainers; ++i) fact *= static_cast<double>(i);
    do {
      out.push_back({ExplainerOrdering{perm}, 1.0 / fact});
    } while (std::next_permutation(perm.begin(), perm.end()));
    return out;
  };
}

inline constexpr std::size_t kMaxEnumerableExplainers = 6;

namespace detail {

// Probability of each action under a choice rule applied to a belief.
inline std::vector<double> action_distribution(const Belief& b, FinalActionRule rule) {
  if (rule == FinalActionRule::sample) return b.probs;
  const double best = *std::max_element(b.probs.begin(), b.probs.end());
  std::vector<double> out(b.size(), 0.0);
  std::size_t ties = 0;
  for (ActionId a = 0; a < b.size(); ++a) ties += std::abs(b[a] - best) <= kTieTolerance ? 1 : 0;
  for (ActionId a = 0; a < b.size(); ++a)
    if (std::abs(b[a] - best) <= kTieTolerance) out[a] = 1.0 / static_cast<double>(ties);
  return out;
}

}  // namespace detail

struct ClosedFormResult {
  std::vector<double> accuracy;    // per context
  std::vector<double> mean_views;  // per context

  double overall(const std::vector<double>& context_dist) const {
    double s = 0.0;
    for (std::size_t x = 0; x < accuracy.size(); ++x) s += context_dist[x] * accuracy[x];
    return s;
  }
};

// Exact expected accuracy of a non-learning strategy by enumerating belief
// prototypes, intended actions, proposals, orderings and choice-rule outcomes.
inline ClosedFormResult closed_form_accuracy(const ScenarioSpec& scenario, const OrderingStrategy& strategy,
                                             ExperimentMode mode = ExperimentMode::human_machine) {
  scenario.validate();
  const Dims& d = scenario.dims;
  if (d.n_explainers > kMaxEnumerableExplainers)
    throw TooLarge("closed_form_accuracy: too many explainers to enumerate");
  const HumanBehaviorConfig& human = scenario.human;

  ClosedFormResult res{std::vector<double>(d.n_contexts, 0.0), std::vector<double>(d.n_contexts, 0.0)};
  for (ContextId x = 0; x < d.n_contexts; ++x) {
    const ActionId best = scenario.optimal[x];
    for (const auto& proto : scenario.belief_prototypes[x]) {
      if (proto.weight == 0.0) continue;
      const auto p_intended = detail::action_distribution(proto.belief, human.intended_rule);
      for (ActionId a_h = 0; a_h < d.n_actions; ++a_h) {
        if (p_intended[a_h] == 0.0) continue;
        for (ActionId a_s = 0; a_s < d.n_actions; ++a_s) {
          const double p_s = scenario.support_policy[x][a_s];
          if (p_s == 0.0) continue;
          const double mass = proto.weight * p_intended[a_h] * p_s;
          if (mode == ExperimentMode::human_alone) {
            res.accuracy[x] += mass * (a_h == best ? 1.0 : 0.0);
            continue;
          }
          if (mode == ExperimentMode::machine_alone) {
            res.accuracy[x] += mass * (a_s == best ? 1.0 : 0.0);
            continue;
          }
          const bool explain = human.max_views > 0 && (human.explain_on_agreement || a_h != a_s);
          if (!explain) {
            res.accuracy[x] += mass * (a_h == best ? 1.0 : 0.0);
            continue;
          }
          for (const auto& [ordering, p_order] : strategy(x, a_s)) {
            Belief b = proto.belief;
            std::size_t views = 0;
            for (ExplainerId e : ordering.order) {
              if (views >= human.max_views) break;
              if (human.confidence_threshold && *std::max_element(b.probs.begin(), b.probs.end()) >= *human.confidence_threshold)
                break;
              ++views;
              b = update_belief(b, scenario.q_true.row(e, x), views);
            }
            const double p_correct =
                views == 0 ? (a_h == best ? 1.0 : 0.0) : detail::action_distribution(b, human.final_rule)[best];
            res.accuracy[x] += mass * p_order * p_correct;
            res.mean_views[x] += mass * p_order * static_cast<double>(views);
          }
        }
      }
    }
  }
  return res;
}

// The binary clinician scenario: explainer 0 is the unconvincing e-, explainer 1
// the convincing e+ with q[e+, x=1, a=1] = 10. At x=0 the human is certain (and
// right 90% of the time); at x=1 they are undecided.
inline ScenarioSpec binary_validation_scenario() {
  ScenarioSpec s;
  s.dims = Dims{2, 2, 2};
  s.context_dist = {0.5, 0.5};
  s.optimal = {0, 1};
  s.belief_prototypes = {
      {{0.9, Belief({1.0, 0.0})}, {0.1, Belief({0.0, 1.0})}},
      {{1.0, Belief({0.5, 0.5})}},
  };
  s.support_policy.rows = {Belief({0.5, 0.5}), Belief({0.1, 0.9})};
  s.q_true = PropensityTensor::constant(s.dims, 1.0);
  s.q_true.set(1, 1, 1, 10.0);
  s.human = HumanBehaviorConfig{};
  s.validate();
  return s;
}

// Random world: softmax(N(0,1)) policies, log-normal propensities, uniform
// optimal actions and a uniform context distribution.
inline ScenarioSpec randomized_scenario(const Dims& dims, std::uint64_t seed) {
  dims.validate();
  Rng rng = make_rng(seed, 0xa11ce);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto softmax_row = [&] {
    std::vector<double> logits(dims.n_actions);
    for (double& l : logits) l = normal(rng);
    return Belief(detail::softmax(logits));
  };

  ScenarioSpec s;
  s.dims = dims;
  s.context_dist.assign(dims.n_contexts, 1.0 / static_cast<double>(dims.n_contexts));
  TabularPolicy human_policy;
  for (ContextId x = 0; x < dims.n_contexts; ++x) human_policy.rows.push_back(softmax_row());
  for (ContextId x = 0; x < dims.n_contexts; ++x) s.support_policy.rows.push_back(softmax_row());
  std::vector<double> logq(dims.size());
  for (double& v : logq) v = normal(rng);
  s.q_true = PropensityTensor::from_log(dims, logq);
  for (ContextId x = 0; x < dims.n_contexts; ++x) s.optimal.push_back(uniform_index(dims.n_actions, rng));
  for (ContextId x = 0; x < dims.n_contexts; ++x) s.belief_prototypes.push_back({{1.0, human_policy[x]}});
  s.human = HumanBehaviorConfig{};
  s.validate();
  return s;
}

enum class AblationKind { alpha_sweep, particle_sweep, convergence };

inline std::string to_string(AblationKind k) {
  switch (k) {
    case AblationKind::alpha_sweep: return "alpha_sweep";
    case AblationKind::particle_sweep: return "particle_sweep";
    case AblationKind::convergence: return "convergence";
  }
  return "?";
}

inline AblationKind ablation_kind_from_string(const std::string& s) {
  if (s == "alpha_sweep") return AblationKind::alpha_sweep;
  if (s == "particle_sweep") return AblationKind::particle_sweep;
  if (s == "convergence") return AblationKind::convergence;
  throw InvalidArgument("unknown ablation kind: " + s);
}

struct AblationSpec {
  AblationKind kind = AblationKind::alpha_sweep;
  // alpha values, particle counts, or policy kinds (convergence) as text.
  std::vector<std::string> grid;
  std::vector<std::uint64_t> seeds;
  std::size_t budget = 2000;
  std::size_t window = 500;
  // Episodes at the end of each run used for the terminal accuracy.
  std::size_t terminal_window = 500;
  FilterConfig filter;
  std::function<ScenarioSpec(std::uint64_t)> scenario = [](std::uint64_t) { return binary_validation_scenario(); };
  std::size_t workers = 1;
};

struct AblationRun {
  std::string grid_value;
  std::uint64_t seed = 0;
  MetricSeries series;
  double terminal_accuracy = 0.0;
  double oracle_accuracy = 0.0;
  double terminal_error = 0.0;  // oracle closed-form accuracy minus terminal accuracy
};

struct AblationResult {
  AblationKind kind;
  std::vector<AblationRun> runs;  // grid-major, then seeds

  double mean_terminal_error(const std::string& grid_value) const {
    double s = 0.0;
    std::size_t n = 0;
    for (const auto& r : runs)
      if (r.grid_value == grid_value) {
        s += r.terminal_error;
        ++n;
      }
    return n ? s / static_cast<double>(n) : 0.0;
  }
};

inline AblationResult run_ablation(const AblationSpec& spec) {
  if (spec.grid.empty() || spec.seeds.empty()) throw InvalidArgument("run_ablation: grid and seeds must be nonempty");
  if (spec.terminal_window < 1 || spec.terminal_window > spec.budget)
    throw InvalidArgument("run_ablation: terminal window must lie in [1, budget]");

  struct Job {
    std::string value;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (const auto& g : spec.grid)
    for (auto seed : spec.seeds) jobs.push_back({g, seed});

  auto run_job = [&spec](const Job& job) {
    const ScenarioSpec scenario = spec.scenario(job.seed);
    PolicySpec policy;
    policy.kind = PolicyKind::ardent;
    policy.filter = spec.filter;
    switch (spec.kind) {
      case AblationKind::alpha_sweep: policy.filter.alpha = std::stod(job.value); break;
      case AblationKind::particle_sweep:
        policy.filter.n_particles = static_cast<std::size_t>(std::stoull(job.value));
        break;
      case AblationKind::convergence: policy.kind = policy_kind_from_string(job.value); break;
    }
    if (policy.kind == PolicyKind::fixed) policy.favourite = 0;
    AblationRun run;
    run.grid_value = job.value;
    run.seed = job.seed;
    run.series = run_experiment(scenario, policy, spec.budget, job.seed, spec.window);
    run.series.config["ablation"] = to_string(spec.kind);
    run.series.config["grid_value"] = job.value;
    run.terminal_accuracy = run.series.accuracy(std::nullopt, spec.budget - spec.terminal_window, spec.budget);
    run.oracle_accuracy = closed_form_accuracy(scenario, oracle_strategy(scenario.q_true)).overall(scenario.context_dist);
    run.terminal_error = run.oracle_accuracy - run.terminal_accuracy;
    return run;
  };

  AblationResult result{spec.kind, std::vector<AblationRun>(jobs.size())};
  const std::size_t workers = std::max<std::size_t>(1, spec.workers);
  for (std::size_t start = 0; start < jobs.size(); start += workers) {
    std::vector<std::future<AblationRun>> pending;
    for (std::size_t j = start; j < std::min(jobs.size(), start + workers); ++j)
      pending.push_back(std::async(workers > 1 ? std::launch::async : std::launch::deferred, run_job, jobs[j]));
    for (std::size_t j = 0; j < pending.size(); ++j) result.runs[start + j] = pending[j].get();
  }
  return result;
}

}  // namespace ardent
