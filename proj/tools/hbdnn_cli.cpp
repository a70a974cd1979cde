// hbdnn: train, inspect and apply a locked design from the command line.
//
// Exit codes: 0 ok, 1 unexpected, 2 invalid input, 3 training failure,
// 4 fingerprint mismatch, 5 observation does not match the design.
// Errors go to stderr as one JSON object.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "hbdnn/simulation.hpp"

using namespace hbdnn;
namespace fs = std::filesystem;

namespace {

int exit_code_for(const std::string& kind) {
  if (kind == "FingerprintMismatch") return 4;
  if (kind == "DesignMismatch") return 5;
  if (kind == "TrainingFailure" || kind == "NonConvergence" || kind == "NumericalFailure" ||
      kind == "DegenerateChains" || kind == "NonFiniteLoss" || kind == "GridExhausted")
    return 3;
  return 2;
}

int report_error(const std::string& kind, const std::string& message, int code) {
  std::cerr << json{{"error", kind}, {"message", message}, {"exit_code", code}}.dump() << '\n';
  return code;
}

json read_json(const fs::path& path, const char* what) {
  std::ifstream is(path);
  if (!is) throw ValidationError(std::string("cannot open ") + what + " " + path.string());
  try {
    return json::parse(is);
  } catch (const json::exception& e) {
    throw SchemaError(std::string(what) + " " + path.string() + ": " + e.what());
  }
}

// A config is a DesignConfig document that may name its historical data in a
// separate file ("history_file", relative to the config's directory).
DesignConfig load_config(const fs::path& path) {
  json j = read_json(path, "config");
  if (!j.is_object()) throw SchemaError("config: expected an object");
  if (j.contains("history_file")) {
    if (j.contains("history")) throw SchemaError("config: give history or history_file, not both");
    fs::path h = j.at("history_file").get<std::string>();
    if (h.is_relative()) h = path.parent_path() / h;
    j.erase("history_file");
    j["history"] = read_json(h, "history file");
  }
  return design_config_from_json(j);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path);
  if (!os) throw ValidationError("cannot open " + path.string() + " for writing");
  os << text;
  if (!os) throw ValidationError("failed writing " + path.string());
}

json network_summary(const MlpModel& m, double train_mse, double holdout_mse) {
  return {{"spec", to_json(m.spec)}, {"train_mse", train_mse}, {"holdout_mse", holdout_mse}};
}

json design_summary(const TrainedDesign& d) {
  json crit = json::object();
  for (NullKind k : all_null_kinds) {
    const auto& a = d.critical.audit(k);
    json s = network_summary(d.critical.network(k), a.train_mse, a.holdout_mse);
    s["grid_points"] = a.empirical_c.size();
    crit[to_string(k)] = std::move(s);
  }
  const auto& r = d.report;
  return versioned({{"fingerprint", d.fingerprint},
                    {"created_utc", d.created_utc},
                    {"training_size", d.config.training_size},
                    {"excluded", r.excluded},
                    {"n_control", d.config.n_control},
                    {"n_treatment", d.config.n_treatment},
                    {"f_s", network_summary(d.f_s, r.fs_train_mse, r.fs_holdout_mse)},
                    {"f_p", network_summary(d.f_p, r.fp_train_mse, r.fp_holdout_mse)},
                    {"critical", crit},
                    {"c_const", d.baseline.c_const},
                    {"baseline_scenario_c", d.baseline.scenario_c}});
}

struct Common {
  std::uint64_t seed = 0;
  bool seed_given = false;
  int threads = 1;
  bool full_scale = false;
};

int cmd_train(const Common& o, const std::string& config_path, const std::string& out) {
  if (fs::exists(out)) throw ValidationError("refusing to overwrite " + out);
  auto cfg = load_config(config_path);
  if (o.full_scale) cfg.apply_full_scale();
  if (o.seed_given) cfg.seed = o.seed;
  const auto t0 = std::chrono::steady_clock::now();
  const auto design = train_design(cfg, o.threads, [&](const std::string& m) {
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::cerr << "[" << std::fixed << std::setprecision(1) << s << "s] " << m << '\n';
  });
  save_design(design, out);
  std::cout << design_summary(design).dump(2) << '\n';
  return 0;
}

int cmd_decide(const std::string& design_path, const std::string& obs_path,
               const std::string& mode_name) {
  const auto design = load_design(design_path);
  const auto cur = observation_from_json(read_json(obs_path, "observation"));
  const auto rep = validate(cur, 2);
  if (!rep.passed()) throw ValidationError(rep.summary());
  const auto t0 = std::chrono::steady_clock::now();
  const auto outcome = decide(design, cur, decision_mode_from_string(mode_name));
  const double ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  auto report = decision_report(outcome, cur, design.fingerprint);
  report["elapsed_ms"] = ms;
  std::cout << report.dump(2) << '\n';
  return 0;
}

int cmd_simulate(const Common& o, const std::string& design_path, const std::string& scenario_path,
                 const std::string& out, std::string manifest_path, const std::string& mode_name,
                 int replicates) {
  const auto design = load_design(design_path);
  if (replicates <= 0) replicates = o.full_scale ? 100000 : 10000;
  const auto sj = read_json(scenario_path, "scenario file");
  const auto scenarios = scenario_list_from_json(sj, replicates);
  const auto mode = decision_mode_from_string(mode_name);
  const std::uint64_t seed = o.seed_given ? o.seed : design.config.seed;
  const auto results = run_operating_characteristics(design, scenarios, seed, mode, o.threads);
  std::ostringstream csv;
  write_results_csv(csv, results);
  write_text(out, csv.str());
  if (manifest_path.empty()) manifest_path = out + ".manifest.json";
  const json run_cfg{{"scenarios", sj}, {"default_replicates", replicates}};
  write_text(manifest_path,
             run_manifest(seed, run_cfg, design.fingerprint, to_string(mode), results.size()).dump(2) +
                 "\n");
  std::cout << csv.str();
  return 0;
}

int cmd_validate(const Common& o, const std::string& design_path, int side) {
  const auto design = load_design(design_path);
  const std::uint64_t seed = o.seed_given ? o.seed : design.config.seed;
  std::cout << to_json(probe_audit(design, seed, o.threads, side)).dump(2) << '\n';
  return 0;
}

int cmd_inspect(const std::string& design_path) {
  std::cout << design_summary(load_design(design_path)).dump(2) << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hierarchical-borrowing trial designs with neural surrogates"};
  app.require_subcommand(1);
  Common o;
  std::vector<CLI::Option*> seed_opts;
  auto add_common = [&](CLI::App* c) {
    seed_opts.push_back(
        c->add_option("--seed", o.seed, "Master seed (defaults to the config / design seed)"));
    c->add_option("--threads", o.threads, "Worker threads; results do not depend on it")
        ->check(CLI::PositiveNumber);
    c->add_flag("--full-scale", o.full_scale,
                "B = 8000, B' = 100000, 100000 replicates per scenario");
  };

  std::string config, design, out, observation, scenarios, manifest, mode = "surrogate";
  int replicates = 0, side = 5;

  auto* train = app.add_subcommand("train", "Train a design and lock it in a file");
  train->add_option("--config", config, "Design config JSON")->required();
  train->add_option("--out", out, "Design file to create (never overwritten)")->required();
  add_common(train);

  auto* dec = app.add_subcommand("decide", "Decide one observed trial");
  dec->add_option("--design", design)->required();
  dec->add_option("--observation", observation)->required();
  dec->add_option("--mode", mode, "surrogate | constant_baseline | fresh_mcmc");

  auto* sim = app.add_subcommand("simulate", "Operating characteristics over scenarios");
  sim->add_option("--design", design)->required();
  sim->add_option("--scenarios", scenarios)->required();
  sim->add_option("--out", out, "Results CSV")->required();
  sim->add_option("--manifest", manifest, "Run manifest (default: <out>.manifest.json)");
  sim->add_option("--mode", mode, "surrogate | constant_baseline | fresh_mcmc");
  sim->add_option("--replicates", replicates, "Default replicates per scenario");
  add_common(sim);

  auto* val = app.add_subcommand("validate", "Surrogate vs fresh MCMC on a probe grid");
  val->add_option("--design", design)->required();
  val->add_option("--side", side, "Probe grid side length")->check(CLI::Range(2, 50));
  add_common(val);

  auto* ins = app.add_subcommand("inspect", "Summarise a design file");
  ins->add_option("--design", design)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return report_error("UsageError", e.what(), 2);
  }
  for (const auto* s : seed_opts) o.seed_given = o.seed_given || s->count() > 0;

  try {
    if (*train) return cmd_train(o, config, out);
    if (*dec) return cmd_decide(design, observation, mode);
    if (*sim) return cmd_simulate(o, design, scenarios, out, manifest, mode, replicates);
    if (*val) return cmd_validate(o, design, side);
    if (*ins) return cmd_inspect(design);
  } catch (const Error& e) {
    return report_error(e.kind(), e.what(), exit_code_for(e.kind()));
  } catch (const json::exception& e) {
    return report_error("SchemaError", e.what(), 2);
  } catch (const std::exception& e) {
    return report_error("InternalError", e.what(), 1);
  }
  return 1;
}
