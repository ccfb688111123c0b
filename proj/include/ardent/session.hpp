#pragma once

// Live interaction sessions with human decision-makers. Each session walks a
// task bundle item by item: intended action -> any number of explanations ->
// final action. Every accepted call is appended to the session's event log,
// which is enough to rebuild the session from scratch.

#include <nlohmann/json.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include "ardent/meta_policy.hpp"
#include "ardent/serialization.hpp"

namespace ardent {

enum class ContextBucketing { global, by_support_prediction };

struct TaskItem {
  std::string id;
  std::string asset;
  std::optional<ActionId> label;
  ActionId support_prediction = 0;
  std::optional<double> support_confidence;
};

struct TaskBundle {
  std::string id;
  std::filesystem::path root;
  std::vector<TaskItem> items;
  std::vector<std::string> action_labels;
  std::vector<std::string> explainer_labels;
  std::map<std::string, std::vector<std::string>> assets;  // item id -> asset per explainer
  ContextBucketing bucketing = ContextBucketing::global;

  Dims dims() const {
    return {explainer_labels.size(), bucketing == ContextBucketing::global ? 1 : action_labels.size(),
            action_labels.size()};
  }

  ContextId context_of(const TaskItem& item) const {
    return bucketing == ContextBucketing::global ? 0 : item.support_prediction;
  }

  void validate() const {
    if (items.empty()) throw InvalidArgument("bundle: no items");
    if (action_labels.size() < 2) throw InvalidArgument("bundle: need at least two actions");
    if (explainer_labels.empty()) throw InvalidArgument("bundle: need at least one explainer");
    for (const auto& item : items) {
      if (item.support_prediction >= action_labels.size())
        throw InvalidArgument("bundle: support prediction out of range for item " + item.id);
      if (item.label && *item.label >= action_labels.size())
        throw InvalidArgument("bundle: label out of range for item " + item.id);
      const auto it = assets.find(item.id);
      if (it == assets.end() || it->second.size() != explainer_labels.size())
        throw InvalidArgument("bundle: item " + item.id + " lacks an asset for every explainer");
    }
  }

  // Reads `<dir>/bundle.json`; asset paths are relative to `dir` and must exist.
  static TaskBundle load(const std::filesystem::path& dir) {
    const auto file = dir / "bundle.json";
    std::ifstream in(file);
    if (!in) throw NotFound("bundle: cannot open " + file.string());
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw InvalidArgument(std::string("bundle: ") + e.what());
    }
    TaskBundle b = from_json(j);
    b.root = dir;
    if (b.id.empty()) b.id = std::filesystem::absolute(dir).lexically_normal().filename().string();
    if (b.id.empty()) b.id = "bundle";
    auto check = [&](const std::string& rel) {
      const auto p = (dir / rel).lexically_normal();
      if (rel.empty() || std::filesystem::path(rel).is_absolute() || rel.find("..") != std::string::npos)
        throw InvalidArgument("bundle: asset path must be relative and inside the bundle: " + rel);
      if (!std::filesystem::exists(p)) throw InvalidArgument("bundle: missing asset file " + p.string());
    };
    for (const auto& item : b.items) check(item.asset);
    for (const auto& [id, list] : b.assets)
      for (const auto& a : list) check(a);
    return b;
  }

  static TaskBundle from_json(const nlohmann::json& j) {
    TaskBundle b;
    b.id = j.value("id", std::string());
    b.action_labels = j.at("action_labels").get<std::vector<std::string>>();
    b.explainer_labels = j.at("explainer_labels").get<std::vector<std::string>>();
    const std::string bucketing = j.value("context_bucketing", std::string("global"));
    if (bucketing == "global")
      b.bucketing = ContextBucketing::global;
    else if (bucketing == "by_support_prediction")
      b.bucketing = ContextBucketing::by_support_prediction;
    else
      throw InvalidArgument("bundle: unknown context_bucketing " + bucketing);
    for (const auto& it : j.at("items")) {
      TaskItem item;
      item.id = it.at("id").get<std::string>();
      item.asset = it.at("asset").get<std::string>();
      if (it.contains("label") && !it.at("label").is_null()) item.label = it.at("label").get<ActionId>();
      item.support_prediction = it.at("support_prediction").get<ActionId>();
      if (it.contains("support_confidence") && !it.at("support_confidence").is_null())
        item.support_confidence = it.at("support_confidence").get<double>();
      b.items.push_back(std::move(item));
    }
    for (const auto& [id, list] : j.at("assets").items()) b.assets[id] = list.get<std::vector<std::string>>();
    b.validate();
    return b;
  }
};

enum class Arm { ardent, random, favourite };

inline std::string to_string(Arm a) {
  switch (a) {
    case Arm::ardent: return "ardent";
    case Arm::random: return "random";
    case Arm::favourite: return "favourite";
  }
  return "?";
}

inline Arm arm_from_string(const std::string& s) {
  if (s == "ardent") return Arm::ardent;
  if (s == "random") return Arm::random;
  if (s == "favourite") return Arm::favourite;
  throw InvalidArgument("unknown arm: " + s);
}

struct Event {
  std::int64_t ts = 0;  // milliseconds since the Unix epoch, UTC
  std::string type;
  nlohmann::json payload;

  nlohmann::json to_json() const { return {{"ts", ts}, {"type", type}, {"payload", payload}}; }
  static Event from_json(const nlohmann::json& j) {
    return {j.at("ts").get<std::int64_t>(), j.at("type").get<std::string>(), j.at("payload")};
  }
};

struct ServiceOptions {
  std::uint64_t seed = 0;
  FilterConfig filter;
  std::optional<std::filesystem::path> log_dir;
  std::optional<ParticleSet> warm_start;  // initial particles for the ardent arm
  std::function<std::int64_t()> clock = [] {
    using namespace std::chrono;
    return duration_cast<milliseconds>(system_clock::now().time_since_epoch()).count();
  };
};

struct Session {
  std::string id;
  std::string bundle_id;
  Arm arm = Arm::random;
  std::optional<ExplainerId> favourite;
  std::uint64_t seed = 0;
  std::size_t cursor = 0;
  std::vector<ExplainerId> viewed;  // in the order shown
  std::optional<ActionId> intended;
  std::optional<ExplainerOrdering> ordering;
  MetaPolicyState meta_state;
  Rng rng;
  std::vector<Event> event_log;
};

class SessionService {
  struct Slot {
    std::mutex mutex;
    Session session;
  };

  template <class F>
  auto with_session(const std::string& id, F&& f) {
    std::shared_ptr<Slot> slot;
    {
      std::shared_lock lock(registry_mutex_);
      const auto it = sessions_.find(id);
      if (it == sessions_.end()) throw NotFound("unknown session: " + id);
      slot = it->second;
    }
    std::lock_guard lock(slot->mutex);
    return f(slot->session, *bundle(slot->session.bundle_id));
  }

 public:
  explicit SessionService(ServiceOptions options = {}) : options_(std::move(options)) {
    options_.filter.validate();
    if (options_.log_dir) std::filesystem::create_directories(*options_.log_dir);
  }

  void add_bundle(TaskBundle bundle) {
    bundle.validate();
    if (options_.warm_start && options_.warm_start->dims != bundle.dims())
      throw InvalidArgument("warm-start particles do not match the bundle dimensions");
    std::unique_lock lock(registry_mutex_);
    const std::string id = bundle.id;
    bundles_[id] = std::make_shared<const TaskBundle>(std::move(bundle));
  }

  std::shared_ptr<const TaskBundle> bundle(const std::string& id) const {
    std::shared_lock lock(registry_mutex_);
    const auto it = bundles_.find(id);
    if (it == bundles_.end()) throw NotFound("unknown bundle: " + id);
    return it->second;
  }

  std::vector<std::string> bundle_ids() const {
    std::shared_lock lock(registry_mutex_);
    std::vector<std::string> ids;
    for (const auto& [id, b] : bundles_) ids.push_back(id);
    return ids;
  }

  // `arm == nullopt` assigns one of the three arms uniformly at random. The
  // favourite explainer must be supplied for the favourite arm, and for
  // auto-assignment since that may land on the favourite arm.
  nlohmann::json create_session(const std::string& bundle_id, std::optional<Arm> arm,
                                std::optional<ExplainerId> favourite) {
    const auto b = bundle(bundle_id);
    if ((!arm || *arm == Arm::favourite) && !favourite)
      throw InvalidArgument("a favourite explainer is required for this arm assignment");
    if (favourite && *favourite >= b->explainer_labels.size()) throw InvalidArgument("favourite explainer out of range");

    std::uint64_t counter;
    {
      std::lock_guard lock(counter_mutex_);
      counter = next_session_++;
    }
    const std::uint64_t seed = mix_seed(options_.seed, counter);
    if (!arm) {
      Rng assign = make_rng(seed, 1);
      arm = static_cast<Arm>(uniform_index(3, assign));
    }
    const std::string id = hex64(mix_seed(seed, 2));
    auto slot = std::make_shared<Slot>();
    slot->session = start_session(id, *b, *arm, *arm == Arm::favourite ? favourite : std::nullopt, seed);
    append(slot->session, "created",
           {{"session_id", id},
            {"bundle", b->id},
            {"arm", to_string(*arm)},
            {"favourite", slot->session.favourite ? nlohmann::json(*slot->session.favourite) : nlohmann::json(nullptr)},
            {"seed", seed}});
    {
      std::unique_lock lock(registry_mutex_);
      sessions_[id] = slot;
    }
    return {{"session_id", id}, {"arm", to_string(*arm)}};
  }

  nlohmann::json get_item(const std::string& id) {
    return with_session(id, [&](Session& s, const TaskBundle& b) { return item_payload(s, b); });
  }

  nlohmann::json submit_intended(const std::string& id, ActionId action) {
    return with_session(id, [&](Session& s, const TaskBundle& b) { return apply_intended(s, b, action); });
  }

  nlohmann::json request_explanation(const std::string& id) {
    return with_session(id, [&](Session& s, const TaskBundle& b) { return apply_explanation(s, b); });
  }

  nlohmann::json submit_final(const std::string& id, ActionId action) {
    return with_session(id, [&](Session& s, const TaskBundle& b) { return apply_final(s, b, action); });
  }

  nlohmann::json export_log(const std::string& id) {
    return with_session(id, [&](Session& s, const TaskBundle&) {
      nlohmann::json out = nlohmann::json::array();
      for (const auto& e : s.event_log) out.push_back(e.to_json());
      return out;
    });
  }

  MetaPolicyState meta_state(const std::string& id) {
    return with_session(id, [&](Session& s, const TaskBundle&) { return s.meta_state; });
  }

  // Rebuilds a session by re-applying a log's events; timestamps are ignored.
  Session replay(const nlohmann::json& log) {
    if (!log.is_array() || log.empty()) throw InvalidArgument("replay: empty log");
    const Event created = Event::from_json(log.front());
    if (created.type != "created") throw InvalidArgument("replay: log must start with a created event");
    const auto& p = created.payload;
    const auto b = bundle(p.at("bundle").get<std::string>());
    std::optional<ExplainerId> fav;
    if (!p.at("favourite").is_null()) fav = p.at("favourite").get<ExplainerId>();
    Session s = start_session(p.at("session_id").get<std::string>(), *b, arm_from_string(p.at("arm").get<std::string>()),
                              fav, p.at("seed").get<std::uint64_t>());
    s.event_log.push_back(created);
    for (std::size_t i = 1; i < log.size(); ++i) {
      const Event e = Event::from_json(log[i]);
      if (e.type == "intended")
        apply_intended(s, *b, e.payload.at("action").get<ActionId>(), false);
      else if (e.type == "explanation") {
        const auto out = apply_explanation(s, *b, false);
        if (out.contains("explainer_id") != e.payload.contains("explainer_id") ||
            (out.contains("explainer_id") && out.at("explainer_id") != e.payload.at("explainer_id")))
          throw InvariantViolation("replay: explanation order diverged from the log");
      }
      else if (e.type == "final")
        apply_final(s, *b, e.payload.at("action").get<ActionId>(), false);
      else
        throw InvalidArgument("replay: unknown event type " + e.type);
      s.event_log.push_back(e);
    }
    return s;
  }

 private:
  Session start_session(const std::string& id, const TaskBundle& b, Arm arm, std::optional<ExplainerId> favourite,
                        std::uint64_t seed) const {
    Session s;
    s.id = id;
    s.bundle_id = b.id;
    s.arm = arm;
    s.favourite = favourite;
    s.seed = seed;
    s.rng = make_rng(seed, 3);
    const Dims dims = b.dims();
    switch (arm) {
      case Arm::ardent:
        if (options_.warm_start)
          s.meta_state = MetaPolicyState::ardent(dims, options_.filter, *options_.warm_start,
                                                 HumanPolicyEstimate(dims, options_.filter.human_policy_smoothing));
        else
          s.meta_state = MetaPolicyState::ardent(dims, options_.filter, s.rng);
        break;
      case Arm::random: s.meta_state = MetaPolicyState::random(dims); break;
      case Arm::favourite: s.meta_state = MetaPolicyState::fixed(dims, *favourite); break;
    }
    return s;
  }

  void append(Session& s, std::string type, nlohmann::json payload) {
    Event e{options_.clock(), std::move(type), std::move(payload)};
    if (options_.log_dir) {
      std::ofstream out(*options_.log_dir / (s.id + ".jsonl"), std::ios::app);
      out << e.to_json().dump() << '\n';
      out.flush();
      if (!out) throw Error("event log: write failed for session " + s.id);
    }
    s.event_log.push_back(std::move(e));
  }

  static void require_open(const Session& s, const TaskBundle& b) {
    if (s.cursor >= b.items.size()) throw ProtocolViolation("session is complete");
  }

  nlohmann::json item_payload(const Session& s, const TaskBundle& b) const {
    if (s.cursor >= b.items.size()) return {{"complete", true}, {"n_items", b.items.size()}};
    const TaskItem& item = b.items[s.cursor];
    nlohmann::json j{{"complete", false},
                     {"item_index", s.cursor},
                     {"n_items", b.items.size()},
                     {"item_id", item.id},
                     {"asset_url", asset_url(b, item.asset)},
                     {"action_labels", b.action_labels},
                     {"n_explainers", b.explainer_labels.size()},
                     {"explanations_viewed", s.viewed.size()},
                     {"phase", s.intended ? "reviewing" : "choosing"}};
    if (s.intended) {
      j["intended"] = *s.intended;
      j["support_prediction"] = item.support_prediction;
      if (item.support_confidence) j["support_confidence"] = *item.support_confidence;
    }
    return j;
  }

  static std::string asset_url(const TaskBundle& b, const std::string& rel) { return "/assets/" + b.id + "/" + rel; }

  nlohmann::json apply_intended(Session& s, const TaskBundle& b, ActionId action, bool log = true) {
    require_open(s, b);
    if (s.intended) throw ProtocolViolation("intended action already submitted for this item");
    if (action >= b.action_labels.size()) throw InvalidArgument("action out of range");
    const TaskItem& item = b.items[s.cursor];
    ExplainerOrdering ordering = rank_explainers(s.meta_state, b.context_of(item), item.support_prediction, s.rng);
    s.intended = action;
    s.ordering = std::move(ordering);
    if (log) append(s, "intended", {{"item", s.cursor}, {"action", action}, {"ordering", s.ordering->order}});
    nlohmann::json j{{"support_prediction", item.support_prediction},
                     {"support_label", b.action_labels[item.support_prediction]}};
    if (item.support_confidence) j["support_confidence"] = *item.support_confidence;
    return j;
  }

  nlohmann::json apply_explanation(Session& s, const TaskBundle& b, bool log = true) {
    require_open(s, b);
    if (!s.intended) throw ProtocolViolation("submit an intended action before requesting explanations");
    const auto next = next_explainer(*s.ordering, s.viewed);
    if (!next) {
      if (log) append(s, "explanation", {{"item", s.cursor}, {"exhausted", true}});
      return {{"exhausted", true}};
    }
    s.viewed.push_back(*next);
    if (log) append(s, "explanation", {{"item", s.cursor}, {"explainer_id", *next}});
    const TaskItem& item = b.items[s.cursor];
    return {{"explainer_id", *next},
            {"explainer_label", b.explainer_labels[*next]},
            {"asset_url", asset_url(b, b.assets.at(item.id)[*next])}};
  }

  nlohmann::json apply_final(Session& s, const TaskBundle& b, ActionId action, bool log = true) {
    require_open(s, b);
    if (!s.intended) throw ProtocolViolation("submit an intended action before the final action");
    if (action >= b.action_labels.size()) throw InvalidArgument("action out of range");
    const TaskItem& item = b.items[s.cursor];
    InteractionRecord rec{b.context_of(item), *s.intended, item.support_prediction, s.viewed, action};
    Rng rng = s.rng;
    MetaPolicyState next = record_feedback(s.meta_state, rec, rng);
    s.meta_state = std::move(next);
    s.rng = rng;
    if (log) append(s, "final", {{"item", s.cursor}, {"action", action}, {"record", to_json(rec)}});
    ++s.cursor;
    s.viewed.clear();
    s.intended.reset();
    s.ordering.reset();
    return {{"next_item", s.cursor}, {"complete", s.cursor >= b.items.size()}};
  }

  ServiceOptions options_;
  mutable std::shared_mutex registry_mutex_;
  std::map<std::string, std::shared_ptr<const TaskBundle>> bundles_;
  std::map<std::string, std::shared_ptr<Slot>> sessions_;
  std::mutex counter_mutex_;
  std::uint64_t next_session_ = 0;
};

}  // namespace ardent
