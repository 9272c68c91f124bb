// Acceptance checks. One PASS/FAIL line per criterion, exit 0 when every
// criterion outside the documented known-conflict set passes.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "radarpos/radarpos.hpp"

using namespace radarpos;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

// Criterion 3 asks every loss to equal ln N on zero logits, while criterion 2
// requires the weighted loss to equal the smoothed loss divided by N under
// uniform weights. Both cannot hold for N > 1.
const std::set<int> kKnownConflicts{3};

std::string fmt(double v, int precision = 3) {
  std::ostringstream os;
  os << std::setprecision(precision) << v;
  return os.str();
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

struct CliResult {
  int exit_code = -1;
  json out;  // last stdout line
  double seconds = 0.0;
};

class Cli {
 public:
  Cli(fs::path exe, fs::path workdir) : exe_(std::move(exe)), work_(std::move(workdir)) {}

  CliResult run(const std::string& args, const std::string& log_name, const std::string& env = {}) const {
    const auto log = work_ / (log_name + ".log");
    const std::string cmd = env + " '" + exe_.string() + "' " + args + " 2>'" + log.string() + "'";
    const auto t0 = std::chrono::steady_clock::now();
    FILE* pipe = popen(cmd.c_str(), "r");
    if (!pipe) throw std::runtime_error("cannot run " + cmd);
    std::string text;
    char buf[4096];
    while (std::size_t n = std::fread(buf, 1, sizeof buf, pipe)) text.append(buf, n);
    const int status = pclose(pipe);
    CliResult r;
    r.seconds = seconds_since(t0);
    r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    std::istringstream lines(text);
    std::string line, last;
    while (std::getline(lines, line))
      if (!line.empty()) last = line;
    r.out = json::parse(last, nullptr, false);
    return r;
  }

  const fs::path& work() const { return work_; }

 private:
  fs::path exe_;
  fs::path work_;
};

// ---- 1 ----------------------------------------------------------------------

Outcome gradient_fidelity() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto report = gradcheck::run_suite();
  const double secs = seconds_since(t0);
  double worst = 0.0;
  std::size_t checked = 0;
  for (const auto* group : {&report.ops, &report.losses})
    for (const auto& r : *group) {
      worst = std::max(worst, r.max_relative_error);
      checked += r.checked;
    }
  std::string losses;
  for (const auto& r : report.losses) losses += " " + r.name + "=" + fmt(r.max_relative_error, 2);
  std::string offenders;
  for (const auto& o : report.offenders) offenders += " " + o;
  return {report.passed() && !report.losses.empty() && secs < 120.0,
          "max rel err " + fmt(worst, 2) + " < 1e-5 over " + std::to_string(checked) + " entries;" + losses + "; " +
              fmt(secs) + " s < 120 s" + (offenders.empty() ? "" : "; offenders:" + offenders)};
}

// ---- 2 and 3 ----------------------------------------------------------------

double value(const std::function<Var<double>(Tape<double>&)>& f) {
  Tape<double> t;
  return f(t).value().item();
}

Tensor<double> random_logits(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  return gradcheck::suite_detail::random_tensor({n, n}, rng, -3.0, 3.0);
}

// C computed the way the model does, from a class token and identical decoder tokens.
Var<double> uniform_attention(Tape<double>& t, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  const auto cls = gradcheck::suite_detail::random_tensor({16}, rng);
  const auto row = gradcheck::suite_detail::random_tensor({16}, rng);
  Tensor<double> tokens(Shape{n, 16});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < 16; ++c) tokens.at(i, c) = row[c];
  return attention_weights(t.constant(cls), t.constant(tokens), 0.95);
}

Outcome loss_degeneration() {
  double worst_sigma = 0.0, worst_uniform = 0.0;
  for (std::uint64_t s = 0; s < 50; ++s) {
    for (std::size_t n : {8u, 64u}) {
      const auto o = random_logits(n, s);
      const auto plan = plan_mask(n, 0.6, s);
      const auto narrow = smoothing_weights(n, 1e-3);
      const double l4 = value([&](auto& t) { return position_loss(t.constant(o), plan); });
      const double l6 = value([&](auto& t) { return smoothed_loss(t.constant(o), plan, narrow); });
      worst_sigma = std::max(worst_sigma, std::fabs(l6 - l4));
      const auto w = smoothing_weights(n, 0.9);
      const double sm = value([&](auto& t) { return smoothed_loss(t.constant(o), plan, w); });
      const double wt = value([&](auto& t) { return radarpos_loss(t.constant(o), plan, w, uniform_attention(t, n, s)); });
      worst_uniform = std::max(worst_uniform, std::fabs(wt - sm / static_cast<double>(n)));
    }
  }
  return {worst_sigma < 1e-6 && worst_uniform < 1e-9,
          "sigma=1e-3: |smoothed - position| max " + fmt(worst_sigma, 2) +
              " < 1e-6; uniform C: |weighted - smoothed/N| max " + fmt(worst_uniform, 2) + " < 1e-9"};
}

Outcome uniform_logit_baseline() {
  double dev_pos = 0.0, dev_smooth = 0.0, dev_weighted = 0.0, weighted_seen = 0.0;
  std::size_t weighted_n = 0;
  for (std::uint64_t s = 0; s < 30; ++s) {
    for (std::size_t n : {8u, 64u}) {
      const Tensor<double> zero(Shape{n, n});
      const auto plan = plan_mask(n, 0.2 + 0.02 * static_cast<double>(s), s);
      const double ln = std::log(static_cast<double>(n));
      for (double sigma : {1e-3, 0.5, 0.9, 4.0}) {
        const auto w = smoothing_weights(n, sigma);
        dev_pos = std::max(dev_pos, std::fabs(value([&](auto& t) { return position_loss(t.constant(zero), plan); }) - ln));
        dev_smooth =
            std::max(dev_smooth, std::fabs(value([&](auto& t) { return smoothed_loss(t.constant(zero), plan, w); }) - ln));
        const double wt =
            value([&](auto& t) { return radarpos_loss(t.constant(zero), plan, w, uniform_attention(t, n, s)); });
        if (std::fabs(wt - ln) > dev_weighted) {
          dev_weighted = std::fabs(wt - ln);
          weighted_seen = wt;
          weighted_n = n;
        }
      }
    }
  }
  const bool ok = dev_pos < 1e-9 && dev_smooth < 1e-9 && dev_weighted < 1e-9;
  std::string detail = "position |dev| " + fmt(dev_pos, 2) + ", smoothed |dev| " + fmt(dev_smooth, 2) +
                       " (both < 1e-9); weighted |dev| " + fmt(dev_weighted, 2);
  if (!ok) {
    detail += ": at N=" + std::to_string(weighted_n) + " with uniform C the weighted loss is " + fmt(weighted_seen, 6) +
              " = ln N / N, not ln N " + fmt(std::log(static_cast<double>(weighted_n)), 6) +
              "; this is the value criterion 2 requires, so the two criteria cannot both hold";
  }
  return {ok, detail};
}

// ---- 4 and 5 ----------------------------------------------------------------

Outcome masking_invariants() {
  std::size_t plans = 0, wrong = 0;
  for (std::size_t n : {8u, 64u}) {
    const std::size_t expect = static_cast<std::size_t>(std::ceil(0.6 * static_cast<double>(n)));
    for (std::uint64_t s = 0; s < 10000; ++s) {
      const auto plan = plan_mask(n, 0.6, derive_seed(99, s));
      std::size_t count = 0;
      for (auto f : plan.masked) count += f;
      wrong += count != expect || plan.masked_count != expect;
      ++plans;
    }
  }
  RadarPosModel<float> model(ModelConfig::tiny(), 3);
  const auto reg = pdw::default_registry();
  std::size_t touched = 0, samples = 0;
  for (std::uint64_t s = 0; s < 200; ++s) {
    const auto rec = pdw::simulate_sample(reg, s % 7, static_cast<std::uint8_t>(s % 3), pdw::NoiseParams{}, s);
    Tape<float> tape;
    auto tok = model.tokenize(tape, rec);
    const auto before = tok.tokens.value();
    model.apply_position_mask(tape, tok, plan_mask(8, 0.6, s));
    const auto& after = tok.tokens.value();
    touched += std::memcmp(before.values().data(), after.values().data(), before.size() * sizeof(float)) != 0;
    ++samples;
  }
  return {wrong == 0 && touched == 0, std::to_string(plans) + " plans (N=8 and N=64), " + std::to_string(wrong) +
                                          " with the wrong count; content changed in " + std::to_string(touched) + "/" +
                                          std::to_string(samples) + " samples"};
}

Outcome positional_values() {
  const auto zero = toa_positional_encoding(0.0, 16);
  bool alt = true;
  for (std::size_t i = 0; i < zero.size(); ++i) alt = alt && zero[i] == (i % 2 ? 1.0 : 0.0);
  const auto one = toa_positional_encoding(1.0, 4);
  const double expect[] = {0.84147, 0.54030, 0.01000, 0.99995};
  double dev = 0.0;
  for (int i = 0; i < 4; ++i) dev = std::max(dev, std::fabs(one[i] - expect[i]));
  return {alt && dev < 1e-5, std::string("toa=0 alternates 0/1: ") + (alt ? "yes" : "no") + "; toa=1us D=4 max dev " +
                                 fmt(dev, 2) + " < 1e-5"};
}

// ---- 6, 7, 12 (CLI, tiny preset) ---------------------------------------------

Outcome pretraining_learns(const Cli& cli) {
  const auto r = cli.run("pretrain --preset tiny --out '" + (cli.work() / "pretrain").string() + "'", "pretrain",
                         "RADARPOS_THREADS=1");
  if (r.exit_code != 0 || !r.out.contains("masked_position_ce")) {
    return {false, "pretrain exited " + std::to_string(r.exit_code)};
  }
  const double ce = r.out["masked_position_ce"].get<double>();
  const double bound = std::log(8.0) / 2.0;
  return {ce < bound && r.seconds < 600.0, "masked-position CE " + fmt(ce, 4) + " < " + fmt(bound, 4) + " after " +
                                               std::to_string(r.out["epochs"].get<int>()) + " epochs on 200 samples; " +
                                               fmt(r.seconds) + " s < 600 s on one thread"};
}

Outcome cross_mode_transfer(const Cli& cli) {
  const auto r = cli.run("crossmode --preset tiny --out '" + (cli.work() / "crossmode").string() + "'", "crossmode");
  if (r.exit_code != 0 || !r.out.contains("scenarios")) return {false, "crossmode exited " + std::to_string(r.exit_code)};
  bool all = true;
  double worst_acc = 1.0, worst_f1 = 1.0;
  std::string rows;
  for (const auto& s : r.out["scenarios"]) {
    const double acc = s["accuracy"].get<double>(), f1 = s["macro_f1"].get<double>();
    all = all && acc >= 0.30 && f1 >= 0.25;
    worst_acc = std::min(worst_acc, acc);
    worst_f1 = std::min(worst_f1, f1);
    rows += " " + s["scenario"].get<std::string>() + " " + fmt(acc, 3) + "/" + fmt(s["in_domain_accuracy"].get<double>(), 3);
  }
  const auto wins = r.out["in_domain_at_least_cross"].get<int>();
  return {all && r.out["scenarios"].size() == 6,
          "all 6 scenarios acc >= 0.30 and macro-F1 >= 0.25 (min " + fmt(worst_acc) + ", " + fmt(worst_f1) +
              "); in-domain >= cross in " + std::to_string(wins) + "/6 (reported, >= 4 expected:" +
              (wins >= 4 ? " yes" : " no") + "); cross/in-domain acc:" + rows};
}

Outcome ablation_plumbing(const Cli& cli) {
  const auto dir = cli.work() / "ablate";
  const auto r = cli.run("ablate --preset tiny --out '" + dir.string() + "'", "ablate");
  if (r.exit_code != 0 || !r.out.contains("arms")) return {false, "ablate exited " + std::to_string(r.exit_code)};
  std::ifstream csv(dir / "ablation.csv");
  std::size_t rows = 0, means = 0;
  std::string line;
  std::getline(csv, line);
  while (std::getline(csv, line)) {
    if (line.empty()) continue;
    (line.find(",mean,") != std::string::npos ? means : rows) += 1;
  }
  const bool match = r.out["shared_weights_match"].get<bool>();
  const double gap = r.out["mean_accuracy_gap_toa_minus_learned"].get<double>();
  return {rows == 12 && means == 2 && match && r.out["arms"].contains("toa_pe") &&
              r.out["arms"].contains("learned_index_pe"),
          "two-arm table with " + std::to_string(rows) + " scenario rows and " + std::to_string(means) +
              " arm means; shared weights match: " + (match ? "yes" : "no") +
              "; mean accuracy gap (TOA PE minus learned index) " + fmt(gap, 3) + " (reported, not gated)"};
}

// ---- 8, 9, 10 ---------------------------------------------------------------

Tensor<float> encoder_out(const RadarPosModel<float>& m, const pdw::SampleRecord& s) {
  Tape<float> tape;
  auto tok = m.tokenize(tape, s);
  return m.encode(tape, m.apply_position_mask(tape, tok, MaskPlan::none(m.config().n_patches))).value();
}

Outcome lora_contracts() {
  const auto s = pdw::simulate_sample(pdw::default_registry(), 2, 1, pdw::NoiseParams{}, 4);
  bool bitwise = true;
  double worst_merge = 0.0;
  for (const auto& cfg : {ModelConfig::tiny(), ModelConfig::paper()}) {
    RadarPosModel<float> m(cfg, 12);
    const auto base = encoder_out(m, s);
    m.attach_adapters(8);
    bitwise = bitwise && encoder_out(m, s) == base;
    Rng rng(5);
    std::normal_distribution<float> g(0.0f, 0.05f);
    for (auto& [name, p] : m.params())
      if (name.ends_with(".lora_b"))
        for (auto& v : p.value.values()) v = g(rng);
    const auto adapted = encoder_out(m, s);
    m.merge_adapters();
    const auto merged = encoder_out(m, s);
    double diff = 0.0, ref = 0.0;
    for (std::size_t i = 0; i < merged.size(); ++i) {
      diff += double(merged[i] - adapted[i]) * double(merged[i] - adapted[i]);
      ref += double(adapted[i]) * double(adapted[i]);
    }
    worst_merge = std::max(worst_merge, std::sqrt(diff / ref));
  }
  RadarPosModel<float> paper(ModelConfig::paper(), 12);
  paper.attach_adapters(8);
  paper.freeze_for_finetune();
  const double frac = static_cast<double>(paper.params().count(true)) / static_cast<double>(paper.params().count(false));
  return {bitwise && worst_merge < 1e-5 && frac < 0.05,
          std::string("B=0 forward bitwise identical: ") + (bitwise ? "yes" : "no") + "; merged vs adapter rel err " +
              fmt(worst_merge, 2) + " < 1e-5; trainable fraction " + fmt(100.0 * frac, 3) + "% < 5% (" +
              std::to_string(paper.params().count(true)) + " of " + std::to_string(paper.params().count(false)) + ")"};
}

Outcome schedule_exactness() {
  const FinetuneSchedule s;
  const std::pair<std::size_t, double> points[] = {{0, 2.5e-6}, {9, 2.5e-5}, {25, 2.5e-6}, {40, 2.5e-7}};
  bool ok = true;
  std::string got;
  for (auto [e, want] : points) {
    ok = ok && s.lr_at(e) == want;
    got += " e" + std::to_string(e) + "=" + fmt(s.lr_at(e), 17);
  }
  return {ok, "bit-exact:" + got};
}

Outcome split_exactness() {
  const RunConfig cfg = RunConfig::tiny();
  bool ok = true;
  for (std::uint8_t m = 0; m < pdw::kNumModes; ++m) {
    const auto split = pdw::make_split(m, cfg.data.seed);
    std::vector<std::size_t> counts(pdw::kNumEmitters, 0);
    for (const auto& r : split.train) ++counts[r.label];
    ok = ok && counts == std::vector<std::size_t>{100, 50, 25, 15, 10, 5, 1} && split.train.size() == 206 &&
         split.test.size() == 200;
  }
  return {ok, "every mode: train [100,50,25,15,10,5,1] (206), test 200"};
}

// ---- 11 ---------------------------------------------------------------------

// Hash of every artifact in a run directory. Timestamps and wall-clock timings
// are dropped from the manifest and the metrics log first.
std::map<std::string, std::string> artifact_hashes(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const auto rel = fs::relative(entry.path(), dir).string();
    auto bytes = io::read_file(entry.path());
    if (entry.path().filename() == "manifest.json") {
      auto j = json::parse(bytes);
      j.erase("started");
      j.erase("finished");
      bytes = j.dump();
    } else if (entry.path().filename() == "metrics.ndjson") {
      std::istringstream in(bytes);
      std::string kept;
      for (std::string line; std::getline(in, line);) {
        auto j = json::parse(line);
        j.erase("wall_ms");
        kept += j.dump() + "\n";
      }
      bytes = kept;
    }
    out[rel] = io::hash_bytes(bytes);
  }
  return out;
}

Outcome determinism(const Cli& cli) {
  const auto root = cli.work() / "determinism";
  fs::create_directories(root);
  const auto config = root / "small.json";
  {
    std::ofstream f(config);
    f << json{{"preset", "tiny"},
              {"pretrain", {{"epochs", 2}}},
              {"finetune", {{"epochs", 2}}},
              {"data", {{"pretrain_samples", 30}, {"test_total", 35}}}}
             .dump(2);
  }
  const std::string cfg = " --config '" + config.string() + "'";
  const std::string data = " --dataset '" + (root / "data").string() + "'";
  const auto out = [&](const std::string& name) { return " --out '" + (root / name).string() + "'"; };
  const std::vector<std::pair<std::string, std::string>> commands{
      {"simulate", "simulate" + cfg + out("data")},
      {"pretrain", "pretrain" + cfg + data + out("pretrain")},
      {"finetune", "finetune" + cfg + data + out("finetune") + " --checkpoint '" +
                       (root / "pretrain" / "encoder.rpck").string() + "'"},
      {"eval", "eval" + cfg + data + out("eval") + " --scenario m0:m2 --checkpoint '" +
                   (root / "finetune" / "finetuned.rpck").string() + "'"},
      {"crossmode", "crossmode" + cfg + data + out("crossmode")},
      {"sweep", "sweep" + cfg + data + out("sweep") + " --param sigma --values 0.5,0.9"},
      {"ablate", "ablate" + cfg + data + out("ablate")},
  };
  std::size_t same = 0;
  std::string bad;
  for (const auto& [name, args] : commands) {
    const auto first = cli.run(args, "det_" + name + "_1");
    const auto hashes1 = artifact_hashes(root / (name == "simulate" ? "data" : name));
    const auto second = cli.run(args, "det_" + name + "_2");
    const auto hashes2 = artifact_hashes(root / (name == "simulate" ? "data" : name));
    const bool ok = first.exit_code == 0 && second.exit_code == 0 && !first.out.is_discarded() &&
                    first.out == second.out && hashes1 == hashes2 && !hashes1.empty();
    same += ok;
    if (!ok) bad += " " + name;
  }
  const auto g1 = cli.run("gradcheck --seed 3", "det_gradcheck_1");
  const auto g2 = cli.run("gradcheck --seed 3", "det_gradcheck_2");
  const bool gok = g1.exit_code == 0 && g1.out == g2.out;
  same += gok;
  if (!gok) bad += " gradcheck";
  const std::size_t total = commands.size() + 1;
  return {same == total, std::to_string(same) + "/" + std::to_string(total) +
                             " commands rerun with identical final JSON and artifact hashes" +
                             (bad.empty() ? "" : "; differing:" + bad)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"radarpos acceptance checks"};
  std::string cli_path, workdir = "acceptance_runs";
  std::vector<int> only;
  app.add_option("--cli", cli_path, "path to the radarpos executable")->required();
  app.add_option("--workdir", workdir, "scratch directory for CLI runs");
  app.add_option("--only", only, "run only these criteria");
  CLI11_PARSE(app, argc, argv);

  fs::remove_all(workdir);
  fs::create_directories(workdir);
  const Cli cli(fs::absolute(cli_path), fs::absolute(workdir));

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradient fidelity", gradient_fidelity},
      {"loss degeneration", loss_degeneration},
      {"uniform-logit baseline", uniform_logit_baseline},
      {"masking invariants", masking_invariants},
      {"TOA encoding values", positional_values},
      {"pretraining learns positions", [&] { return pretraining_learns(cli); }},
      {"cross-mode transfer above chance", [&] { return cross_mode_transfer(cli); }},
      {"LoRA contracts", lora_contracts},
      {"schedule exactness", schedule_exactness},
      {"split exactness", split_exactness},
      {"determinism", [&] { return determinism(cli); }},
      {"ablation plumbing", [&] { return ablation_plumbing(cli); }},
  };

  std::ofstream report(fs::path(workdir) / "report.txt");
  auto emit = [&](const std::string& line) {
    std::cout << line << std::endl;
    report << line << '\n';
  };
  int unexpected = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i + 1);
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    const bool known = !o.pass && kKnownConflicts.count(id);
    if (!o.pass && !known) ++unexpected;
    std::ostringstream line;
    line << "[" << std::setw(2) << id << "] " << (o.pass ? "PASS" : "FAIL") << "  " << criteria[i].first << ": "
         << o.detail << (known ? "  [known conflict, not counted]" : "");
    emit(line.str());
  }
  emit(unexpected == 0 ? "acceptance: all criteria pass except documented conflicts"
                       : "acceptance: " + std::to_string(unexpected) + " unexpected failure(s)");
  return unexpected == 0 ? 0 : 1;
}
