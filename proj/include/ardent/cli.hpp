#pragma once

// Command-line front end: simulate, ablate, warmstart, serve, report.

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "ardent/serialization.hpp"
#include "ardent/session.hpp"
#include "ardent/http_service.hpp"
#include "ardent/simulator.hpp"
#include "ardent/stats.hpp"

#include <CLI11.hpp>

namespace ardent::cli {

namespace fs = std::filesystem;

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

class UsageError : public Error {
 public:
  using Error::Error;
};

enum class Verb { simulate, ablate, warmstart, serve, report };

struct SimulateOptions {
  std::string scenario = "binary";
  std::string arm = "ardent";  // ardent | random | oracle | fixed | human | machine
  std::size_t episodes = 2000;
  std::uint64_t seed = 0;
  double alpha = 0.98;
  std::size_t particles = 1000;
  std::size_t window = 500;
  std::optional<ExplainerId> favourite;
  std::optional<std::string> warm_start;
  bool write_records = false;
};

struct AblateOptions {
  std::string kind;
  std::vector<std::string> grid;
  std::size_t seeds = 10;
  std::size_t budget = 2000;
  std::size_t window = 500;
  std::size_t terminal_window = 500;
  std::string scenario = "binary";
  double alpha = 0.98;
  std::size_t particles = 1000;
  std::size_t workers = 1;
};

struct WarmstartOptions {
  std::string log;
  std::string scenario = "binary";
  std::optional<std::string> dims;
  std::size_t particles = 1000;
  double alpha = 0.98;
  std::uint64_t seed = 0;
  std::size_t burn_in = 1000;
  std::size_t thinning = 10;
  std::optional<std::string> output;
};

struct ServeOptions {
  std::string bundle;
  std::string host = "127.0.0.1";
  int port = 8080;
  std::uint64_t seed = 0;
  std::optional<std::string> log_dir;
  std::optional<std::string> warm_start;
  std::optional<std::string> static_dir;
  double alpha = 0.98;
  std::size_t particles = 1000;
};

struct ReportOptions {
  std::optional<std::string> input;
  std::size_t skip = 0;  // leading episodes excluded (burn-in)
};

struct Command {
  Verb verb = Verb::simulate;
  std::string out_dir;
  SimulateOptions simulate;
  AblateOptions ablate;
  WarmstartOptions warmstart;
  ServeOptions serve;
  ReportOptions report;
  std::optional<std::string> help;  // set when --help was requested
};

inline std::string default_out_dir() {
  const char* env = std::getenv("ARDENT_OUT");
  return env && *env ? env : "runs";
}

// Parses argv (without the program name). Throws UsageError on bad input.
inline Command parse_args(const std::vector<std::string>& args) {
  Command cmd;
  cmd.out_dir = default_out_dir();
  CLI::App app{"Explanation ordering by particle-filter Thompson sampling", "ardent"};
  app.require_subcommand(1);

  auto* sim = app.add_subcommand("simulate", "run one synthetic experiment and write metrics");
  sim->add_option("--scenario", cmd.simulate.scenario, "binary | random:E,X,A:seed | path to scenario JSON");
  sim->add_option("--arm", cmd.simulate.arm, "meta-policy or baseline")
      ->check(CLI::IsMember({"ardent", "random", "oracle", "fixed", "human", "machine"}));
  sim->add_option("--episodes", cmd.simulate.episodes, "number of interactions")->check(CLI::PositiveNumber);
  sim->add_option("--seed", cmd.simulate.seed, "random seed");
  sim->add_option("--alpha", cmd.simulate.alpha, "discount factor in (0,1)")->check(CLI::Range(0.0, 1.0));
  sim->add_option("--particles", cmd.simulate.particles, "particle count")->check(CLI::PositiveNumber);
  sim->add_option("--window", cmd.simulate.window, "rolling accuracy window")->check(CLI::PositiveNumber);
  sim->add_option("--favourite", cmd.simulate.favourite, "explainer id for the fixed arm");
  sim->add_option("--warm-start", cmd.simulate.warm_start, "particle set JSON for the ardent arm");
  sim->add_flag("--records", cmd.simulate.write_records, "also write records.jsonl");
  sim->add_option("--out", cmd.out_dir, "output directory (default $ARDENT_OUT or runs)");

  auto* abl = app.add_subcommand("ablate", "run an ablation grid over seeds");
  abl->add_option("--kind", cmd.ablate.kind, "alpha_sweep | particle_sweep | convergence")
      ->required()
      ->check(CLI::IsMember({"alpha_sweep", "particle_sweep", "convergence"}));
  abl->add_option("--grid", cmd.ablate.grid, "comma-separated grid values")->required()->delimiter(',');
  abl->add_option("--seeds", cmd.ablate.seeds, "number of seeds")->check(CLI::PositiveNumber);
  abl->add_option("--budget", cmd.ablate.budget, "interactions per run")->check(CLI::PositiveNumber);
  abl->add_option("--window", cmd.ablate.window, "rolling accuracy window")->check(CLI::PositiveNumber);
  abl->add_option("--terminal-window", cmd.ablate.terminal_window, "episodes used for terminal accuracy")
      ->check(CLI::PositiveNumber);
  abl->add_option("--scenario", cmd.ablate.scenario, "binary | random:E,X,A[:seed] | path");
  abl->add_option("--alpha", cmd.ablate.alpha, "discount factor")->check(CLI::Range(0.0, 1.0));
  abl->add_option("--particles", cmd.ablate.particles, "particle count")->check(CLI::PositiveNumber);
  abl->add_option("--workers", cmd.ablate.workers, "parallel workers")->check(CLI::PositiveNumber);
  abl->add_option("--out", cmd.out_dir, "output directory");

  auto* warm = app.add_subcommand("warmstart", "build initial particles from logged interactions");
  warm->add_option("--log", cmd.warmstart.log, "JSONL of interaction records or session events")->required();
  warm->add_option("--scenario", cmd.warmstart.scenario, "scenario supplying the dimensions");
  warm->add_option("--dims", cmd.warmstart.dims, "E,X,A (overrides --scenario)");
  warm->add_option("--particles", cmd.warmstart.particles, "particle count")->check(CLI::PositiveNumber);
  warm->add_option("--alpha", cmd.warmstart.alpha, "discount factor stored with the particles")
      ->check(CLI::Range(0.0, 1.0));
  warm->add_option("--seed", cmd.warmstart.seed, "random seed");
  warm->add_option("--burn-in", cmd.warmstart.burn_in, "Metropolis burn-in sweeps");
  warm->add_option("--thinning", cmd.warmstart.thinning, "sweeps between kept states")->check(CLI::Range(10, 1000000));
  warm->add_option("--output", cmd.warmstart.output, "particle file (default <out>/particles.json)");
  warm->add_option("--out", cmd.out_dir, "output directory");

  auto* srv = app.add_subcommand("serve", "host the session service");
  srv->add_option("--bundle", cmd.serve.bundle, "task bundle directory")->required();
  srv->add_option("--host", cmd.serve.host, "listen address");
  srv->add_option("--port", cmd.serve.port, "listen port")->check(CLI::Range(0, 65535));
  srv->add_option("--seed", cmd.serve.seed, "service seed");
  srv->add_option("--log-dir", cmd.serve.log_dir, "directory for per-session JSONL event logs");
  srv->add_option("--warm-start", cmd.serve.warm_start, "particle set JSON for the ardent arm");
  srv->add_option("--static", cmd.serve.static_dir, "directory served at / (browser client)");
  srv->add_option("--alpha", cmd.serve.alpha, "discount factor")->check(CLI::Range(0.0, 1.0));
  srv->add_option("--particles", cmd.serve.particles, "particle count")->check(CLI::PositiveNumber);

  auto* rep = app.add_subcommand("report", "summarize run directories");
  rep->add_option("--in", cmd.report.input, "directory containing runs (default $ARDENT_OUT or runs)");
  rep->add_option("--out", cmd.out_dir, "same as --in");
  rep->add_option("--skip", cmd.report.skip, "leading episodes to exclude");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    const CLI::App* target = &app;
    for (auto* sub : app.get_subcommands()) target = sub;
    cmd.help = target->help();
    return cmd;
  } catch (const CLI::ParseError& e) {
    throw UsageError(e.what());
  }

  if (sim->parsed()) cmd.verb = Verb::simulate;
  if (abl->parsed()) cmd.verb = Verb::ablate;
  if (warm->parsed()) cmd.verb = Verb::warmstart;
  if (srv->parsed()) cmd.verb = Verb::serve;
  if (rep->parsed()) cmd.verb = Verb::report;

  if (cmd.verb == Verb::simulate) {
    if (!(cmd.simulate.alpha > 0.0 && cmd.simulate.alpha < 1.0)) throw UsageError("--alpha must lie strictly in (0,1)");
    if (cmd.simulate.arm == "fixed" && !cmd.simulate.favourite) throw UsageError("--arm fixed requires --favourite");
  }
  if (cmd.verb == Verb::ablate) {
    if (!(cmd.ablate.alpha > 0.0 && cmd.ablate.alpha < 1.0)) throw UsageError("--alpha must lie strictly in (0,1)");
    if (cmd.ablate.terminal_window > cmd.ablate.budget) throw UsageError("--terminal-window exceeds --budget");
    for (const auto& g : cmd.ablate.grid) {
      try {
        if (cmd.ablate.kind == "alpha_sweep") {
          const double a = std::stod(g);
          if (!(a > 0.0 && a < 1.0)) throw UsageError("alpha grid values must lie in (0,1)");
        } else if (cmd.ablate.kind == "particle_sweep") {
          if (g.find_first_not_of("0123456789") != std::string::npos || std::stoull(g) == 0)
            throw UsageError("particle grid values must be positive integers");
        } else {
          policy_kind_from_string(g);
        }
      } catch (const UsageError&) {
        throw;
      } catch (const std::exception&) {
        throw UsageError("bad grid value '" + g + "' for " + cmd.ablate.kind);
      }
    }
  }
  if (cmd.verb == Verb::warmstart && !(cmd.warmstart.alpha > 0.0 && cmd.warmstart.alpha < 1.0))
    throw UsageError("--alpha must lie strictly in (0,1)");
  if (cmd.verb == Verb::serve && !(cmd.serve.alpha > 0.0 && cmd.serve.alpha < 1.0))
    throw UsageError("--alpha must lie strictly in (0,1)");
  return cmd;
}

inline std::vector<std::size_t> parse_size_list(const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok.empty() || tok.find_first_not_of("0123456789") != std::string::npos)
      throw UsageError("expected comma-separated positive integers, got '" + text + "'");
    out.push_back(std::stoull(tok));
  }
  return out;
}

// "binary", "random:E,X,A:seed" (seed optional; `fallback_seed` otherwise) or a JSON file.
inline ScenarioSpec resolve_scenario(const std::string& spec, std::uint64_t fallback_seed = 0) {
  if (spec == "binary") return binary_validation_scenario();
  if (spec.rfind("random:", 0) == 0) {
    const std::string rest = spec.substr(7);
    const auto colon = rest.find(':');
    const auto sizes = parse_size_list(rest.substr(0, colon));
    if (sizes.size() != 3) throw UsageError("random scenario needs E,X,A");
    const std::uint64_t seed = colon == std::string::npos ? fallback_seed : std::stoull(rest.substr(colon + 1));
    return randomized_scenario(Dims{sizes[0], sizes[1], sizes[2]}, seed);
  }
  std::ifstream in(spec);
  if (!in) throw Error("cannot open scenario file " + spec);
  return scenario_from_json(json::parse(in));
}

inline bool scenario_is_seeded_per_run(const std::string& spec) {
  return spec.rfind("random:", 0) == 0 && spec.find(':', 7) == std::string::npos;
}

inline ParticleDocument read_particle_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open particle file " + path);
  return particle_set_from_json(json::parse(in));
}

inline void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw Error("cannot write " + path.string());
}

inline int run_simulate(const Command& cmd, std::ostream& out) {
  const auto& o = cmd.simulate;
  const ScenarioSpec scenario = resolve_scenario(o.scenario, o.seed);
  PolicySpec policy;
  policy.filter.alpha = o.alpha;
  policy.filter.n_particles = o.particles;
  if (o.arm == "human") {
    policy.mode = ExperimentMode::human_alone;
  } else if (o.arm == "machine") {
    policy.mode = ExperimentMode::machine_alone;
  } else {
    policy.kind = policy_kind_from_string(o.arm);
  }
  policy.favourite = o.favourite;

  std::optional<MetaPolicyState> initial;
  if (o.warm_start) {
    if (policy.kind != PolicyKind::ardent) throw UsageError("--warm-start applies to the ardent arm only");
    auto doc = read_particle_file(*o.warm_start);
    if (doc.particles.dims != scenario.dims) throw Error("warm-start particles do not match the scenario dimensions");
    policy.filter.n_particles = doc.particles.size();
    initial = MetaPolicyState::ardent(scenario.dims, policy.filter, std::move(doc.particles),
                                      HumanPolicyEstimate(scenario.dims, policy.filter.human_policy_smoothing));
  }

  json manifest = policy.to_json();
  manifest["arm"] = o.arm;
  manifest["scenario"] = o.scenario;
  manifest["scenario_spec"] = to_json(scenario);
  manifest["episodes"] = o.episodes;
  manifest["seed"] = o.seed;
  manifest["window"] = o.window;
  manifest["warm_start"] = o.warm_start ? json(*o.warm_start) : json(nullptr);
  const std::string hash = hex64(fnv1a64(manifest.dump()));
  manifest["config_hash"] = hash;

  const MetricSeries series = run_experiment(scenario, policy, o.episodes, o.seed, o.window, std::move(initial));
  const fs::path dir = fs::path(cmd.out_dir) / hash;
  std::ostringstream csv;
  write_metrics_csv(csv, series);
  write_text(dir / "metrics.csv", csv.str());
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");
  if (o.write_records) {
    std::ostringstream recs;
    for (const auto& r : series.records) recs << to_json(r).dump() << '\n';
    write_text(dir / "records.jsonl", recs.str());
  }
  out << dir.string() << '\n';
  return kExitOk;
}

inline int run_ablate(const Command& cmd, std::ostream& out) {
  const auto& o = cmd.ablate;
  AblationSpec spec;
  spec.kind = ablation_kind_from_string(o.kind);
  spec.grid = o.grid;
  for (std::uint64_t s = 0; s < o.seeds; ++s) spec.seeds.push_back(s);
  spec.budget = o.budget;
  spec.window = o.window;
  spec.terminal_window = o.terminal_window;
  spec.filter.alpha = o.alpha;
  spec.filter.n_particles = o.particles;
  spec.workers = o.workers;
  const std::string scenario_text = o.scenario;
  resolve_scenario(scenario_text, 0);  // fail early on a bad scenario
  spec.scenario = [scenario_text](std::uint64_t seed) { return resolve_scenario(scenario_text, seed); };

  json manifest{{"kind", o.kind},   {"grid", o.grid},     {"seeds", o.seeds},
                {"budget", o.budget}, {"window", o.window}, {"terminal_window", o.terminal_window},
                {"scenario", o.scenario}, {"alpha", o.alpha}, {"particles", o.particles}};
  const std::string hash = hex64(fnv1a64(manifest.dump()));
  manifest["config_hash"] = hash;
  const fs::path dir = fs::path(cmd.out_dir) / hash;

  const AblationResult result = run_ablation(spec);
  json summary = json::array();
  for (const auto& run : result.runs) {
    std::ostringstream csv;
    write_metrics_csv(csv, run.series);
    write_text(dir / ("run_" + run.grid_value + "_seed" + std::to_string(run.seed) + ".csv"), csv.str());
    summary.push_back({{"grid_value", run.grid_value},
                       {"seed", run.seed},
                       {"terminal_accuracy", run.terminal_accuracy},
                       {"oracle_accuracy", run.oracle_accuracy},
                       {"terminal_error", run.terminal_error}});
  }
  manifest["runs"] = summary;
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");

  char line[160];
  std::snprintf(line, sizeof line, "%-12s %18s\n", "grid", "mean terminal err");
  out << line;
  std::vector<double> xs, ys;
  for (const auto& g : o.grid) {
    const double err = result.mean_terminal_error(g);
    std::snprintf(line, sizeof line, "%-12s %18.4f\n", g.c_str(), err);
    out << line;
    if (spec.kind != AblationKind::convergence) {
      xs.push_back(std::stod(g));
      ys.push_back(err);
    }
  }
  if (xs.size() > 1) {
    std::snprintf(line, sizeof line, "spearman rho (grid vs error): %.3f\n", stats::spearman(xs, ys));
    out << line;
  }
  out << dir.string() << '\n';
  return kExitOk;
}

inline int run_warmstart(const Command& cmd, std::ostream& out) {
  const auto& o = cmd.warmstart;
  Dims dims;
  if (o.dims) {
    const auto sizes = parse_size_list(*o.dims);
    if (sizes.size() != 3) throw UsageError("--dims needs E,X,A");
    dims = Dims{sizes[0], sizes[1], sizes[2]};
    dims.validate();
  } else {
    dims = resolve_scenario(o.scenario, o.seed).dims;
  }
  std::ifstream in(o.log);
  if (!in) throw Error("cannot open log " + o.log);
  const auto records = read_records_jsonl(in);

  FilterConfig config;
  config.n_particles = o.particles;
  config.alpha = o.alpha;
  HumanPolicyEstimate estimate(dims, config.human_policy_smoothing);
  for (const auto& r : records) {
    r.validate(dims);
    estimate.observe(r.context, r.intended);
  }
  WarmStartOptions wopts;
  wopts.burn_in = o.burn_in;
  wopts.thinning = o.thinning;
  Rng rng = make_rng(o.seed);
  WarmStartReport report;
  const ParticleSet ps = warm_start_particles(config, dims, records, estimate.as_policy(), rng, wopts, &report);

  const fs::path path = o.output ? fs::path(*o.output) : fs::path(cmd.out_dir) / "particles.json";
  write_text(path, particle_set_to_json(ps, config.alpha, rng).dump() + "\n");
  char line[200];
  std::snprintf(line, sizeof line, "records=%zu particles=%zu acceptance=%.3f\n", records.size(), ps.size(),
                report.acceptance);
  out << line << path.string() << '\n';
  return kExitOk;
}

inline int run_report(const Command& cmd, std::ostream& out) {
  const fs::path root = cmd.report.input ? fs::path(*cmd.report.input) : fs::path(cmd.out_dir);
  if (!fs::is_directory(root)) throw Error("no such run directory " + root.string());
  std::vector<fs::path> runs;
  for (const auto& entry : fs::recursive_directory_iterator(root))
    if (entry.path().filename() == "metrics.csv") runs.push_back(entry.path().parent_path());
  std::sort(runs.begin(), runs.end());
  if (runs.empty()) throw Error("no metrics.csv found under " + root.string());

  std::size_t n_contexts = 0;
  struct Row {
    std::string name, arm;
    std::size_t episodes;
    std::vector<std::pair<std::size_t, std::size_t>> per_context;  // hits, n
    double views;
  };
  std::vector<Row> rows;
  for (const auto& dir : runs) {
    std::ifstream in(dir / "metrics.csv");
    const auto metrics = read_metrics_csv(in);
    Row row{dir.filename().string(), "?", metrics.size(), {}, 0.0};
    std::ifstream man(dir / "manifest.json");
    if (man) {
      const auto m = json::parse(man, nullptr, false);
      if (!m.is_discarded() && m.contains("arm")) row.arm = m.at("arm").get<std::string>();
    }
    std::size_t counted = 0;
    for (const auto& r : metrics) {
      if (r.episode <= cmd.report.skip) continue;
      if (r.context >= row.per_context.size()) row.per_context.resize(r.context + 1);
      row.per_context[r.context].first += r.correct ? 1 : 0;
      row.per_context[r.context].second += 1;
      row.views += static_cast<double>(r.views);
      ++counted;
    }
    row.views = counted ? row.views / static_cast<double>(counted) : 0.0;
    n_contexts = std::max(n_contexts, row.per_context.size());
    rows.push_back(std::move(row));
  }

  char buf[256];
  std::snprintf(buf, sizeof buf, "%-18s %-8s %9s", "run", "arm", "episodes");
  out << buf;
  for (std::size_t x = 0; x < n_contexts; ++x) {
    std::snprintf(buf, sizeof buf, "   %-24s", ("accuracy x=" + std::to_string(x)).c_str());
    out << buf;
  }
  out << "  mean views\n";
  for (const auto& row : rows) {
    std::snprintf(buf, sizeof buf, "%-18s %-8s %9zu", row.name.substr(0, 18).c_str(), row.arm.c_str(), row.episodes);
    out << buf;
    for (std::size_t x = 0; x < n_contexts; ++x) {
      if (x >= row.per_context.size() || row.per_context[x].second == 0) {
        std::snprintf(buf, sizeof buf, "   %-24s", "-");
      } else {
        const auto [hits, n] = row.per_context[x];
        const auto [lo, hi] = stats::wilson_interval(hits, n);
        std::snprintf(buf, sizeof buf, "   %5.1f%% [%5.1f, %5.1f]     ", 100.0 * hits / n, 100.0 * lo, 100.0 * hi);
      }
      out << buf;
    }
    std::snprintf(buf, sizeof buf, "  %10.3f\n", row.views);
    out << buf;
  }
  return kExitOk;
}

inline int run_serve(const Command& cmd, std::ostream& out) {
  const auto& o = cmd.serve;
  if (!fs::is_directory(o.bundle)) throw Error("bundle directory not found: " + o.bundle);
  ServiceOptions options;
  options.seed = o.seed;
  options.filter.alpha = o.alpha;
  options.filter.n_particles = o.particles;
  if (o.log_dir) options.log_dir = fs::path(*o.log_dir);
  if (o.warm_start) {
    auto doc = read_particle_file(*o.warm_start);
    options.filter.n_particles = doc.particles.size();
    options.warm_start = std::move(doc.particles);
  }
  SessionService service(std::move(options));
  service.add_bundle(TaskBundle::load(o.bundle));
  if (o.static_dir && !fs::is_directory(*o.static_dir)) throw Error("static directory not found: " + *o.static_dir);

  httplib::Server server;
  register_routes(server, service, o.static_dir ? std::optional<fs::path>(*o.static_dir) : std::nullopt);
  const int port = o.port == 0 ? server.bind_to_any_port(o.host) : (server.bind_to_port(o.host, o.port) ? o.port : -1);
  if (port < 0) throw Error("cannot bind " + o.host + ":" + std::to_string(o.port));
  out << "listening on http://" << o.host << ':' << port << std::endl;
  server.listen_after_bind();
  return kExitOk;
}

inline int execute(const Command& cmd, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  if (cmd.help) {
    out << *cmd.help;
    return kExitOk;
  }
  try {
    switch (cmd.verb) {
      case Verb::simulate: return run_simulate(cmd, out);
      case Verb::ablate: return run_ablate(cmd, out);
      case Verb::warmstart: return run_warmstart(cmd, out);
      case Verb::serve: return run_serve(cmd, out);
      case Verb::report: return run_report(cmd, out);
    }
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitFailure;
}

// Full entry point: parse + execute with exit-code mapping.
inline int main_entry(const std::vector<std::string>& args, std::ostream& out = std::cout,
                      std::ostream& err = std::cerr) {
  Command cmd;
  try {
    cmd = parse_args(args);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\nrun 'ardent --help' for usage\n";
    return kExitUsage;
  }
  return execute(cmd, out, err);
}

}  // namespace ardent::cli
