// SPDX-License-Identifier: Apache-2.0
//
// radarpos: simulate, pretrain, finetune, eval, crossmode, sweep, ablate,
// gradcheck. Every command ends its stdout with one JSON object.
//
// Exit codes: 0 ok, 1 other failure, 2 config, 3 format, 4 numeric abort,
// 5 gradient check failure.

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "radarpos/radarpos.hpp"

#ifndef RADARPOS_VERSION
#define RADARPOS_VERSION "unknown"
#endif

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace radarpos;

namespace {

using Model = RadarPosModel<float>;

struct Options {
  std::string config;
  std::string preset = "paper";
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs;
  std::string out = "runs/default";
  std::string dataset;
  std::string checkpoint;
  std::string scenario = "m0:m1";
  std::string param;
  std::string values;
  std::string predictions;
  bool inject_fault = false;
};

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream s;
  s << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return s.str();
}

/// Preset, then config file, then flags.
RunConfig resolve_config(const Options& o) {
  RunConfig cfg = o.config.empty() ? RunConfig::preset_named(o.preset) : load_config(o.config, o.preset);
  if (o.seed) cfg.seed = *o.seed;
  cfg.validate();
  return cfg;
}

class Run {
 public:
  Run(std::string command, const Options& o, RunConfig cfg)
      : command_(std::move(command)), dir_(o.out), cfg_(std::move(cfg)), started_(utc_now()) {
    fs::create_directories(dir_);
    metrics_.open(dir_ / "metrics.ndjson", std::ios::trunc);
    if (!metrics_) throw ConfigError("cannot write to " + dir_.string());
  }

  const fs::path& dir() const { return dir_; }
  const RunConfig& config() const { return cfg_; }
  void set_config(RunConfig cfg) { cfg_ = std::move(cfg); }
  json& dataset_hashes() { return hashes_; }

  EpochCallback logger() {
    return [this](const std::string& stage, const EpochLog& e) {
      metrics_ << json{{"stage", stage}, {"epoch", e.epoch}, {"loss", e.loss}, {"lr", e.lr}, {"wall_ms", e.wall_ms}}.dump()
               << '\n';
      metrics_.flush();
      std::cerr << stage << " epoch " << e.epoch << " loss " << e.loss << " lr " << e.lr << '\n';
    };
  }

  /// Writes the manifest and prints the final JSON line.
  int finish(json result) {
    result["command"] = command_;
    json manifest{{"command", command_},
                  {"version", RADARPOS_VERSION},
                  {"config", to_json(cfg_)},
                  {"seeds", {{"run", cfg_.seed}, {"data", cfg_.data.seed}}},
                  {"dataset_hashes", hashes_},
                  {"started", started_},
                  {"finished", utc_now()},
                  {"metrics", result}};
    io::write_file_atomic(dir_ / "manifest.json", manifest.dump(2) + "\n");
    std::cout << result.dump() << std::endl;
    return exit_code::ok;
  }

 private:
  std::string command_;
  fs::path dir_;
  RunConfig cfg_;
  std::string started_;
  json hashes_ = json::object();
  std::ofstream metrics_;
};

std::string mode_stem(std::uint8_t m) { return "m" + std::to_string(m); }

ExperimentData load_or_simulate(Run& run, const Options& o, std::uint8_t source) {
  const auto& cfg = run.config();
  if (o.dataset.empty()) return ExperimentData::simulate(cfg.data, source);
  const fs::path dir = o.dataset;
  if (!fs::is_directory(dir)) throw FormatError("dataset directory not found: " + dir.string());
  ExperimentData data;
  for (std::uint8_t m = 0; m < pdw::kNumModes; ++m) {
    const auto stem = dir / mode_stem(m);
    data.modes[m] = pdw::read_dataset(stem);
    run.dataset_hashes()[mode_stem(m)] = {{"train", io::hash_file(pdw::train_path(stem))},
                                          {"test", io::hash_file(pdw::test_path(stem))}};
  }
  const auto pool = dir / "pool";
  data.pretrain_pool = pdw::read_dataset(pool).train;
  run.dataset_hashes()["pool"] = io::hash_file(pdw::train_path(pool));
  return data;
}

json checkpoint_sidecar_json(const RunConfig& cfg, const std::string& stage, const json& extra = json::object()) {
  json j{{"stage", stage}, {"version", RADARPOS_VERSION}, {"config", to_json(cfg)}, {"seed", cfg.seed}};
  j.update(extra);
  return j;
}

/// Model built from a checkpoint; its sidecar's model section overrides the run config.
Model load_model(Run& run, const fs::path& path) {
  if (!fs::exists(path)) throw FormatError("checkpoint not found: " + path.string());
  const auto ckpt = read_checkpoint(path);
  const auto side = read_checkpoint_sidecar(path);
  RunConfig cfg = run.config();
  try {
    cfg = merge_config(cfg, json{{"model", side.at("config").at("model")}});
  } catch (const json::exception& e) {
    throw FormatError(checkpoint_sidecar(path).string() + ": " + e.what());
  }
  run.set_config(cfg);
  Model model(cfg.model, derive_seed(cfg.seed, "model"));
  load_state(model, ckpt, false);
  run.dataset_hashes()["checkpoint"] = io::hash_file(path);
  return model;
}

Model pretrained_model(Run& run, const Options& o, const ExperimentData& data) {
  if (!o.checkpoint.empty()) return load_model(run, o.checkpoint);
  return run_pretraining<float>(run.config(), data.pretrain_pool, run.logger());
}

// ---- commands ---------------------------------------------------------------

int cmd_simulate(const Options& o) {
  Run run("simulate", o, resolve_config(o));
  const auto& cfg = run.config();
  const auto registry = pdw::default_registry();
  const auto tests = pdw::balanced_test_counts(cfg.data.test_total);
  json specs = json::array();
  for (const auto& e : registry) specs.push_back(pdw::to_json(e));
  json result{{"out", run.dir().string()}, {"modes", json::object()}};
  for (std::uint8_t m = 0; m < pdw::kNumModes; ++m) {
    const auto split = pdw::make_split(registry, m, cfg.data.ratio, tests, cfg.data.noise, cfg.data.seed);
    const auto stem = run.dir() / mode_stem(m);
    pdw::write_dataset(stem, split, {{"mode", m}, {"noise", pdw::to_json(cfg.data.noise)}, {"emitters", specs}});
    json train_counts = json::array();
    std::vector<std::size_t> counts(pdw::kNumEmitters, 0);
    for (const auto& s : split.train) ++counts[s.label];
    const json hashes{{"train", io::hash_file(pdw::train_path(stem))}, {"test", io::hash_file(pdw::test_path(stem))}};
    run.dataset_hashes()[mode_stem(m)] = hashes;
    result["modes"][mode_stem(m)] = {{"train", split.train.size()},
                                     {"test", split.test.size()},
                                     {"train_class_counts", counts},
                                     {"hashes", hashes}};
  }
  pdw::DatasetSplit pool;
  pool.seed = cfg.data.seed;
  pool.train = pdw::make_pretrain_pool(registry, ExperimentData::pool_modes(cfg.data, 0), cfg.data.pretrain_samples,
                                       cfg.data.noise, cfg.data.seed);
  pdw::write_dataset(run.dir() / "pool", pool, {{"modes", ExperimentData::pool_modes(cfg.data, 0)}});
  run.dataset_hashes()["pool"] = io::hash_file(pdw::train_path(run.dir() / "pool"));
  result["pool"] = {{"samples", pool.train.size()}, {"hash", run.dataset_hashes()["pool"]}};
  return run.finish(result);
}

int cmd_pretrain(const Options& o) {
  auto cfg = resolve_config(o);
  if (o.epochs) cfg.pretrain.epochs = *o.epochs;
  Run run("pretrain", o, cfg);
  const auto scenario = Scenario::parse(o.scenario);
  const auto data = load_or_simulate(run, o, scenario.source);
  Model model(cfg.model, derive_seed(cfg.seed, "model"));
  PretrainResult res;
  if (cfg.pretrain.epochs > 0) {
    res = pretrain(model, data.pretrain_pool, cfg.pretrain, derive_seed(cfg.seed, "pretrain"),
                   [log = run.logger()](const EpochLog& e) { log("pretrain", e); });
  }
  const auto path = run.dir() / "encoder.rpck";
  save_checkpoint(path, model.params(), checkpoint_sidecar_json(cfg, "pretrain"));
  const double ce = masked_position_ce(model, data.pretrain_pool, cfg.seed);
  return run.finish({{"epochs", cfg.pretrain.epochs},
                     {"steps", res.steps},
                     {"final_loss", res.epoch_loss.empty() ? json(nullptr) : json(res.epoch_loss.back())},
                     {"masked_position_ce", ce},
                     {"checkpoint", path.string()},
                     {"checkpoint_hash", io::hash_file(path)}});
}

int cmd_finetune(const Options& o) {
  auto cfg = resolve_config(o);
  if (o.epochs) cfg.finetune.schedule.epochs = *o.epochs;
  Run run("finetune", o, cfg);
  const auto scenario = Scenario::parse(o.scenario);
  const auto data = load_or_simulate(run, o, scenario.source);
  auto model = pretrained_model(run, o, data);
  const auto res = finetune(model, data.modes[scenario.source].train, run.config().finetune,
                            derive_seed(derive_seed(run.config().seed, "finetune"), scenario.source),
                            [log = run.logger()](const EpochLog& e) { log("finetune", e); });
  const auto path = run.dir() / "finetuned.rpck";
  save_checkpoint(path, model.params(),
                  checkpoint_sidecar_json(run.config(), "finetune", {{"source_mode", scenario.source},
                                                                      {"lora_rank", model.adapter_rank()}}));
  return run.finish({{"scenario", scenario.str()},
                     {"epochs", run.config().finetune.schedule.epochs},
                     {"final_loss", res.epoch_loss.empty() ? json(nullptr) : json(res.epoch_loss.back())},
                     {"trainable_parameters", model.params().count(true)},
                     {"total_parameters", model.params().count(false)},
                     {"checkpoint", path.string()},
                     {"checkpoint_hash", io::hash_file(path)}});
}

/// Reads "truth,predicted" lines (a header line is skipped).
EvalReport report_from_predictions(const fs::path& path, std::size_t classes, const std::string& scenario) {
  std::istringstream in(io::read_file(path));
  std::vector<std::size_t> truth, pred;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || (lineno == 1 && line.find_first_not_of("0123456789, \r") != std::string::npos)) continue;
    std::size_t t = 0, p = 0;
    char comma = 0;
    std::istringstream row(line);
    if (!(row >> t >> comma >> p) || comma != ',') {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": expected 'truth,predicted'");
    }
    truth.push_back(t);
    pred.push_back(p);
  }
  if (truth.empty()) throw FormatError(path.string() + ": no predictions");
  try {
    return EvalReport::from_confusion(confusion_from(truth, pred, classes), scenario);
  } catch (const DomainError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

int cmd_eval(const Options& o) {
  Run run("eval", o, resolve_config(o));
  const auto scenario = Scenario::parse(o.scenario);
  EvalReport report;
  if (!o.predictions.empty()) {
    run.dataset_hashes()["predictions"] = io::hash_file(o.predictions);
    report = report_from_predictions(o.predictions, run.config().model.num_classes, scenario.str());
  } else {
    if (o.checkpoint.empty()) throw ConfigError("eval needs --checkpoint or --predictions");
    const auto data = load_or_simulate(run, o, scenario.source);
    const auto model = load_model(run, o.checkpoint);
    report = evaluate(model, data.modes[scenario.target].test, scenario.str());
  }
  io::write_file_atomic(run.dir() / "eval.json", report.to_json().dump(2) + "\n");
  return run.finish(report.to_json());
}

int cmd_crossmode(const Options& o) {
  Run run("crossmode", o, resolve_config(o));
  const auto data = load_or_simulate(run, o, 0);
  const auto pretrained = pretrained_model(run, o, data);
  const auto rows = run_all_scenarios(pretrained, run.config(), data, run.logger());
  std::ostringstream csv;
  csv.precision(17);
  csv << "scenario,accuracy,macro_f1,in_domain_accuracy,in_domain_macro_f1,seed\n";
  json table = json::array();
  std::size_t in_domain_wins = 0;
  for (const auto& r : rows) {
    csv << r.scenario.str() << ',' << r.cross.accuracy << ',' << r.cross.macro_f1 << ',' << r.in_domain.accuracy << ','
        << r.in_domain.macro_f1 << ',' << run.config().seed << '\n';
    if (r.in_domain.accuracy >= r.cross.accuracy) ++in_domain_wins;
    table.push_back({{"scenario", r.scenario.str()}, {"cross", r.cross.to_json()}, {"in_domain", r.in_domain.to_json()}});
  }
  io::write_file_atomic(run.dir() / "crossmode.csv", csv.str());
  io::write_file_atomic(run.dir() / "crossmode.json", table.dump(2) + "\n");
  json summary = json::array();
  for (const auto& r : rows) {
    summary.push_back({{"scenario", r.scenario.str()},
                       {"accuracy", r.cross.accuracy},
                       {"macro_f1", r.cross.macro_f1},
                       {"in_domain_accuracy", r.in_domain.accuracy},
                       {"in_domain_macro_f1", r.in_domain.macro_f1}});
  }
  return run.finish({{"scenarios", summary}, {"in_domain_at_least_cross", in_domain_wins}});
}

int cmd_sweep(const Options& o) {
  Run run("sweep", o, resolve_config(o));
  if (o.param.empty()) throw ConfigError("sweep needs --param");
  const auto param = parse_sweep_param(o.param);
  const auto values = split_values(o.values);
  const auto scenario = Scenario::parse(o.scenario);
  for (const auto& v : values) apply_sweep_value(run.config(), param, v);
  const auto data = load_or_simulate(run, o, scenario.source);
  const auto rows = sweep<float>(run.config(), param, values, scenario, data, run.logger());
  io::write_file_atomic(run.dir() / "sweep.csv", sweep_csv(rows));
  json table = json::array();
  for (const auto& r : rows) {
    table.push_back({{"param_value", r.param_value},
                     {"scenario", r.scenario},
                     {"accuracy", r.accuracy},
                     {"macro_f1", r.macro_f1},
                     {"seed", r.seed}});
  }
  io::write_file_atomic(run.dir() / "sweep.json", table.dump(2) + "\n");
  return run.finish({{"param", sweep_param_name(param)}, {"rows", table}, {"csv", (run.dir() / "sweep.csv").string()}});
}

/// TOA PE vs learned-index PE over all six scenarios.
int cmd_ablate(const Options& o) {
  Run run("ablate", o, resolve_config(o));
  const auto data = load_or_simulate(run, o, 0);
  std::ostringstream csv;
  csv.precision(17);
  csv << "arm,scenario,accuracy,macro_f1,seed\n";
  json arms = json::object();
  std::vector<std::string> checksums;
  for (const std::string arm : {"on", "off"}) {
    const auto cfg = apply_sweep_value(run.config(), SweepParam::toa_pe, arm);
    const std::string label = arm == "on" ? "toa_pe" : "learned_index_pe";
    checksums.push_back(shared_weight_checksum(Model(cfg.model, derive_seed(cfg.seed, "model"))));
    const auto pretrained = run_pretraining<float>(cfg, data.pretrain_pool, [&](const std::string& s, const EpochLog& e) {
      run.logger()(label + " " + s, e);
    });
    const auto rows = run_all_scenarios(pretrained, cfg, data, [&](const std::string& s, const EpochLog& e) {
      run.logger()(label + " " + s, e);
    });
    double acc = 0.0, f1 = 0.0;
    json per = json::array();
    for (const auto& r : rows) {
      csv << label << ',' << r.scenario.str() << ',' << r.cross.accuracy << ',' << r.cross.macro_f1 << ',' << cfg.seed
          << '\n';
      acc += r.cross.accuracy / static_cast<double>(rows.size());
      f1 += r.cross.macro_f1 / static_cast<double>(rows.size());
      per.push_back({{"scenario", r.scenario.str()}, {"accuracy", r.cross.accuracy}, {"macro_f1", r.cross.macro_f1}});
    }
    csv << label << ",mean," << acc << ',' << f1 << ',' << cfg.seed << '\n';
    arms[label] = {{"scenarios", per}, {"mean_accuracy", acc}, {"mean_macro_f1", f1}};
  }
  io::write_file_atomic(run.dir() / "ablation.csv", csv.str());
  const double gap = arms["toa_pe"]["mean_accuracy"].get<double>() - arms["learned_index_pe"]["mean_accuracy"].get<double>();
  json result{{"arms", arms},
              {"mean_accuracy_gap_toa_minus_learned", gap},
              {"shared_weights_match", checksums[0] == checksums[1]},
              {"csv", (run.dir() / "ablation.csv").string()}};
  io::write_file_atomic(run.dir() / "ablation.json", result.dump(2) + "\n");
  return run.finish(result);
}

int cmd_gradcheck(const Options& o) {
  gradcheck::SuiteOptions opt;
  opt.inject_fault = o.inject_fault;
  if (o.seed) opt.seed = *o.seed;
  const auto report = gradcheck::run_suite(opt);
  json rows = json::array();
  for (const auto* group : {&report.ops, &report.losses}) {
    for (const auto& r : *group) {
      std::cout << std::left << std::setw(26) << r.name << std::scientific << std::setprecision(3)
                << r.max_relative_error << (r.passed() ? "  ok" : "  FAIL") << '\n';
      rows.push_back({{"name", r.name}, {"max_relative_error", r.max_relative_error}, {"checked", r.checked}});
    }
  }
  json result{{"command", "gradcheck"},
              {"tolerance", gradcheck::kTolerance},
              {"passed", report.passed()},
              {"offenders", report.offenders},
              {"results", rows}};
  std::cout << result.dump() << std::endl;
  if (!report.passed()) {
    std::cerr << "gradient check failed:";
    for (const auto& n : report.offenders) std::cerr << ' ' << n;
    std::cerr << '\n';
    return exit_code::gradcheck;
  }
  return exit_code::ok;
}

int fail(int code, const std::string& kind, const std::string& message) {
  std::cerr << "radarpos: " << message << '\n';
  std::cout << json{{"error", kind}, {"message", message}, {"exit_code", code}}.dump() << std::endl;
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Position-aware self-supervised pretraining for radar pulse signals"};
  app.set_version_flag("--version", std::string(RADARPOS_VERSION));
  app.require_subcommand(1);
  Options o;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "JSON config file");
    sub->add_option("--preset", o.preset, "paper or tiny")->check(CLI::IsMember({"paper", "tiny"}));
    sub->add_option("--seed", o.seed, "run seed");
    sub->add_option("--out", o.out, "run directory");
    sub->add_option("--dataset", o.dataset, "dataset directory written by simulate");
    sub->add_option("--checkpoint", o.checkpoint, "RPCK checkpoint");
    sub->add_option("--scenario", o.scenario, "source:target modes, e.g. m0:m1");
  };

  auto* simulate = app.add_subcommand("simulate", "write per-mode datasets and the pretraining pool");
  common(simulate);
  auto* pretrain_cmd = app.add_subcommand("pretrain", "masked-position pretraining");
  common(pretrain_cmd);
  pretrain_cmd->add_option("--epochs", o.epochs, "override pretraining epochs");
  auto* finetune_cmd = app.add_subcommand("finetune", "adapter fine-tuning on the source mode");
  common(finetune_cmd);
  finetune_cmd->add_option("--epochs", o.epochs, "override fine-tuning epochs");
  auto* eval = app.add_subcommand("eval", "evaluate on the target mode's test split");
  common(eval);
  eval->add_option("--predictions", o.predictions, "CSV of truth,predicted pairs instead of a checkpoint");
  auto* crossmode = app.add_subcommand("crossmode", "all six cross-mode scenarios with in-domain controls");
  common(crossmode);
  auto* sweep_cmd = app.add_subcommand("sweep", "one run per parameter value");
  common(sweep_cmd);
  sweep_cmd->add_option("--param", o.param, "sigma, lora_rank or toa_pe")->required();
  sweep_cmd->add_option("--values", o.values, "comma-separated values")->required();
  auto* ablate = app.add_subcommand("ablate", "TOA PE vs learned-index PE");
  common(ablate);
  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  gc->add_option("--seed", o.seed, "suite seed");
  gc->add_flag("--inject-fault", o.inject_fault, "add an op with a wrong backward (negative control)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return fail(exit_code::config, "config", e.what());
  }

  try {
    if (*simulate) return cmd_simulate(o);
    if (*pretrain_cmd) return cmd_pretrain(o);
    if (*finetune_cmd) return cmd_finetune(o);
    if (*eval) return cmd_eval(o);
    if (*crossmode) return cmd_crossmode(o);
    if (*sweep_cmd) return cmd_sweep(o);
    if (*ablate) return cmd_ablate(o);
    if (*gc) return cmd_gradcheck(o);
  } catch (const ConfigError& e) {
    return fail(exit_code::config, "config", e.what());
  } catch (const FormatError& e) {
    return fail(exit_code::format, "format", e.what());
  } catch (const NumericError& e) {
    return fail(exit_code::numeric, "numeric", e.what());
  } catch (const std::exception& e) {
    return fail(exit_code::failure, "failure", e.what());
  }
  return exit_code::failure;
}
