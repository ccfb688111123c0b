#pragma once

// JSON documents for particle sets, scenarios, interaction records and
// meta-policy state, plus the metric CSV format. Doubles that must survive a
// round trip bit-exactly are written as C99 hex-float strings.

#include <nlohmann/json.hpp>

#include <cerrno>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "ardent/meta_policy.hpp"
#include "ardent/particle_filter.hpp"
#include "ardent/simulator.hpp"

namespace ardent {

using json = nlohmann::json;

inline std::string hex_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%a", v);
  return buf;
}

inline double parse_hex_double(const std::string& s) {
  errno = 0;
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0' || errno == ERANGE) throw InvalidArgument("malformed hex-float: " + s);
  return v;
}

inline json hex_array(const std::vector<double>& v) {
  json out = json::array();
  for (double d : v) out.push_back(hex_double(d));
  return out;
}

inline std::vector<double> parse_hex_array(const json& j) {
  std::vector<double> out;
  out.reserve(j.size());
  for (const auto& e : j) out.push_back(e.is_string() ? parse_hex_double(e.get<std::string>()) : e.get<double>());
  return out;
}

// FNV-1a, 64 bit.
inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline json to_json(const Dims& d) {
  return {{"n_explainers", d.n_explainers}, {"n_contexts", d.n_contexts}, {"n_actions", d.n_actions}};
}

inline Dims dims_from_json(const json& j) {
  Dims d{j.at("n_explainers").get<std::size_t>(), j.at("n_contexts").get<std::size_t>(),
         j.at("n_actions").get<std::size_t>()};
  d.validate();
  return d;
}

// ---------------------------------------------------------------------------
// Particle sets

inline json particle_set_to_json(const ParticleSet& ps, double alpha, const std::optional<Rng>& rng = std::nullopt) {
  return {{"dims", to_json(ps.dims)},
          {"alpha", hex_double(alpha)},
          {"thetas", hex_array(ps.thetas)},
          {"weights", hex_array(ps.weights)},
          {"rng_state", rng ? json(rng_state(*rng)) : json(nullptr)}};
}

struct ParticleDocument {
  ParticleSet particles;
  double alpha = 0.98;
  std::optional<Rng> rng;
};

inline ParticleDocument particle_set_from_json(const json& j) {
  ParticleDocument doc;
  doc.particles.dims = dims_from_json(j.at("dims"));
  doc.alpha = j.at("alpha").is_string() ? parse_hex_double(j.at("alpha").get<std::string>()) : j.at("alpha").get<double>();
  doc.particles.thetas = parse_hex_array(j.at("thetas"));
  doc.particles.weights = parse_hex_array(j.at("weights"));
  if (j.contains("rng_state") && !j.at("rng_state").is_null())
    doc.rng = rng_from_state(j.at("rng_state").get<std::string>());
  doc.particles.validate();
  return doc;
}

// ---------------------------------------------------------------------------
// Interaction records

inline json to_json(const InteractionRecord& r) {
  return {{"context", r.context}, {"intended", r.intended}, {"proposed", r.proposed}, {"shown", r.shown}, {"final", r.final}};
}

inline InteractionRecord record_from_json(const json& j) {
  InteractionRecord r;
  r.context = j.at("context").get<ContextId>();
  r.intended = j.at("intended").get<ActionId>();
  r.proposed = j.at("proposed").get<ActionId>();
  r.shown = j.at("shown").get<std::vector<ExplainerId>>();
  r.final = j.at("final").get<ActionId>();
  return r;
}

// Reads interaction records from JSONL. Each line is either a bare record or
// a session event whose type is "final" and whose payload carries `record`.
inline std::vector<InteractionRecord> read_records_jsonl(std::istream& in) {
  std::vector<InteractionRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw InvalidArgument("records: line " + std::to_string(lineno) + ": " + e.what());
    }
    if (j.contains("type")) {
      if (j.at("type") == "final" && j.contains("payload") && j.at("payload").contains("record"))
        out.push_back(record_from_json(j.at("payload").at("record")));
      continue;
    }
    out.push_back(record_from_json(j));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Scenarios

inline json belief_json(const Belief& b) { return b.probs; }

inline json to_json(const ScenarioSpec& s) {
  json protos = json::array();
  for (const auto& per_context : s.belief_prototypes) {
    json list = json::array();
    for (const auto& p : per_context) list.push_back({{"weight", p.weight}, {"belief", p.belief.probs}});
    protos.push_back(list);
  }
  json support = json::array();
  for (const auto& row : s.support_policy.rows) support.push_back(row.probs);
  // q_true nested as [explainer][context][action].
  json q = json::array();
  for (ExplainerId e = 0; e < s.dims.n_explainers; ++e) {
    json per_e = json::array();
    for (ContextId x = 0; x < s.dims.n_contexts; ++x) {
      const auto row = s.q_true.row(e, x);
      per_e.push_back(std::vector<double>(row.begin(), row.end()));
    }
    q.push_back(per_e);
  }
  return {{"dims", to_json(s.dims)},
          {"context_dist", s.context_dist},
          {"optimal", s.optimal},
          {"belief_prototypes", protos},
          {"support_policy", support},
          {"q_true", q},
          {"human",
           {{"max_views", s.human.max_views},
            {"confidence_threshold", s.human.confidence_threshold ? json(*s.human.confidence_threshold) : json(nullptr)},
            {"final_rule", to_string(s.human.final_rule)},
            {"intended_rule", to_string(s.human.intended_rule)},
            {"explain_on_agreement", s.human.explain_on_agreement}}}};
}

inline ScenarioSpec scenario_from_json(const json& j) {
  ScenarioSpec s;
  s.dims = dims_from_json(j.at("dims"));
  s.context_dist = j.at("context_dist").get<std::vector<double>>();
  s.optimal = j.at("optimal").get<std::vector<ActionId>>();
  for (const auto& per_context : j.at("belief_prototypes")) {
    std::vector<WeightedBelief> list;
    for (const auto& p : per_context)
      list.push_back({p.at("weight").get<double>(), Belief(p.at("belief").get<std::vector<double>>())});
    s.belief_prototypes.push_back(std::move(list));
  }
  for (const auto& row : j.at("support_policy")) s.support_policy.rows.emplace_back(row.get<std::vector<double>>());
  std::vector<double> q;
  const auto& qj = j.at("q_true");
  if (qj.size() != s.dims.n_explainers) throw InvalidArgument("scenario: q_true explainer count mismatch");
  for (const auto& per_e : qj) {
    if (per_e.size() != s.dims.n_contexts) throw InvalidArgument("scenario: q_true context count mismatch");
    for (const auto& row : per_e) {
      if (row.size() != s.dims.n_actions) throw InvalidArgument("scenario: q_true action count mismatch");
      for (const auto& v : row) q.push_back(v.get<double>());
    }
  }
  s.q_true = PropensityTensor(s.dims, std::move(q));
  const auto& h = j.at("human");
  s.human.max_views = h.at("max_views").get<std::size_t>();
  if (h.contains("confidence_threshold") && !h.at("confidence_threshold").is_null())
    s.human.confidence_threshold = h.at("confidence_threshold").get<double>();
  s.human.final_rule = final_action_rule_from_string(h.value("final_rule", std::string("argmax-tie-uniform")));
  s.human.intended_rule = final_action_rule_from_string(h.value("intended_rule", std::string("argmax-tie-uniform")));
  s.human.explain_on_agreement = h.value("explain_on_agreement", true);
  s.validate();
  return s;
}

// ---------------------------------------------------------------------------
// Meta-policy state

inline json filter_config_to_json(const FilterConfig& c) {
  return {{"n_particles", c.n_particles},
          {"alpha", hex_double(c.alpha)},
          {"prior_log_mean", hex_double(c.prior_log_mean)},
          {"prior_log_std", hex_double(c.prior_log_std)},
          {"cov_jitter", hex_double(c.cov_jitter)},
          {"human_policy_smoothing", hex_double(c.human_policy_smoothing)}};
}

inline FilterConfig filter_config_from_json(const json& j) {
  auto num = [&](const char* key) {
    const auto& v = j.at(key);
    return v.is_string() ? parse_hex_double(v.get<std::string>()) : v.get<double>();
  };
  FilterConfig c;
  c.n_particles = j.at("n_particles").get<std::size_t>();
  c.alpha = num("alpha");
  c.prior_log_mean = num("prior_log_mean");
  c.prior_log_std = num("prior_log_std");
  c.cov_jitter = num("cov_jitter");
  c.human_policy_smoothing = num("human_policy_smoothing");
  c.validate();
  return c;
}

inline json to_json(const MetaPolicyState& s) {
  json j{{"kind", to_string(s.kind)}, {"dims", to_json(s.dims)}, {"config", filter_config_to_json(s.config)}};
  if (s.particles) j["particles"] = particle_set_to_json(*s.particles, s.config.alpha);
  if (s.human_estimate)
    j["human_estimate"] = {{"smoothing", hex_double(s.human_estimate->smoothing())},
                           {"counts", hex_array(s.human_estimate->counts())}};
  if (s.q_true) j["q_true"] = hex_array(s.q_true->values());
  if (s.favourite) j["favourite"] = *s.favourite;
  return j;
}

inline MetaPolicyState meta_policy_from_json(const json& j) {
  MetaPolicyState s;
  s.kind = policy_kind_from_string(j.at("kind").get<std::string>());
  s.dims = dims_from_json(j.at("dims"));
  s.config = filter_config_from_json(j.at("config"));
  if (j.contains("particles")) s.particles = particle_set_from_json(j.at("particles")).particles;
  if (j.contains("human_estimate")) {
    const auto& h = j.at("human_estimate");
    s.human_estimate = HumanPolicyEstimate::from_counts(s.dims.n_actions, parse_hex_double(h.at("smoothing")),
                                                        parse_hex_array(h.at("counts")));
  }
  if (j.contains("q_true")) s.q_true = PropensityTensor(s.dims, parse_hex_array(j.at("q_true")));
  if (j.contains("favourite")) s.favourite = j.at("favourite").get<ExplainerId>();
  s.validate();
  return s;
}

inline std::string state_hash(const MetaPolicyState& s) { return hex64(fnv1a64(to_json(s).dump())); }

// ---------------------------------------------------------------------------
// Metric CSV

inline constexpr const char* kMetricsHeader = "episode,context,correct,views,rolling_acc";

inline void write_metrics_csv(std::ostream& os, const MetricSeries& m) {
  os << kMetricsHeader << '\n';
  char buf[128];
  for (std::size_t i = 0; i < m.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%zu,%zu,%d,%zu,%.6f\n", i + 1, m.contexts[i], static_cast<int>(m.correct[i]),
                  m.views[i], m.rolling_acc[i]);
    os << buf;
  }
}

struct MetricRow {
  std::size_t episode = 0;
  ContextId context = 0;
  bool correct = false;
  std::size_t views = 0;
  double rolling_acc = 0.0;
};

inline std::vector<MetricRow> read_metrics_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw InvalidArgument("metrics csv: empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kMetricsHeader) throw InvalidArgument("metrics csv: unexpected header '" + line + "'");
  std::vector<MetricRow> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    MetricRow r;
    int correct = 0;
    if (std::sscanf(line.c_str(), "%zu,%zu,%d,%zu,%lf", &r.episode, &r.context, &correct, &r.views, &r.rolling_acc) != 5)
      throw InvalidArgument("metrics csv: malformed row '" + line + "'");
    r.correct = correct != 0;
    rows.push_back(r);
  }
  return rows;
}

}  // namespace ardent
