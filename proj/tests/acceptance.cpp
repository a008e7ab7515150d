// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any FAIL.
// Criteria 9-11 drive the CLI over the full default configuration and take
// several minutes; pass --fast to skip them while iterating.

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dcf/color.hpp"
#include "dcf/nn/checkpoint.hpp"
#include "dcf/nn/optim.hpp"
#include "dcf/nn/train.hpp"
#include "dcf/pathways.hpp"
#include "oracles.hpp"
#include "reference_runs.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using Clock = std::chrono::steady_clock;

namespace {

// Tolerances.
constexpr double kTableTol = 0.005;        // printed values carry two decimals
constexpr double kBalancedTol = 1e-9;
constexpr double kReplaySeconds = 1.0;
constexpr std::size_t kPaddingCrops = 1200;
constexpr double kPaddingSeconds = 30.0;
constexpr double kLabWhiteTol = 1e-6;
constexpr double kGradTol = 1e-4;
constexpr double kGradSeconds = 120.0;
constexpr double kAdamTol = 1e-12;
constexpr double kPipelineSeconds = 3600.0;
constexpr double kPathwayGap = 5.0;

int failures = 0;
std::ofstream report_file;  // acceptance_report.txt; ctest hides stdout of passing tests

void report(int id, const std::string& name, bool ok, const std::string& detail) {
  char line[512];
  std::snprintf(line, sizeof line, "[%s] %2d %-28s %s\n", ok ? "PASS" : "FAIL", id, name.c_str(), detail.c_str());
  std::fputs(line, stdout);
  std::fflush(stdout);
  report_file << line << std::flush;
  if (!ok) ++failures;
}

// Pipeline criteria finish out of order; their lines are printed by id.
std::map<int, std::function<void()>> deferred;

void defer(int id, const std::string& name, bool ok, const std::string& detail) {
  deferred[id] = [=] { report(id, name, ok, detail); };
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0) {
  char buf[160];
  std::snprintf(buf, sizeof buf, f, a, b, c);
  return buf;
}

std::vector<dcf::RunRecord> records_of(const ref::Block& b) {
  std::vector<dcf::RunRecord> out;
  for (std::size_t i = 0; i < 5; ++i) {
    dcf::RunRecord r;
    r.setting = b.setting;
    r.run = i + 1;
    r.acc_f1_a = b.runs[i].f1_a;
    r.acc_f2_a = b.runs[i].f2_a;
    r.balanced_a = b.runs[i].bal_a;
    r.acc_f1_b = b.runs[i].f1_b;
    r.acc_f2_b = b.runs[i].f2_b;
    r.balanced_b = b.runs[i].bal_b;
    out.push_back(r);
  }
  return out;
}

// 1
void aggregation_replay() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  for (const auto& b : ref::scheme_blocks()) {
    const auto g = dcf::aggregate(records_of(b));
    worst = std::max({worst, std::abs(g.mean_a - b.mean_a), std::abs(g.std_a - b.std_a), std::abs(g.mean_b - b.mean_b),
                      std::abs(g.std_b - b.std_b)});
  }
  const double secs = seconds_since(t0);
  report(1, "aggregation replay", worst <= kTableTol && secs < kReplaySeconds,
         fmt("max |diff| %.4f over 6 schemes x 4 values, %.3f s", worst, secs));
}

// 2
void balanced_convention() {
  bool ok = std::abs(dcf::nn::balanced_accuracy(93.16, 96.02) - 94.59) < kBalancedTol &&
            std::abs(dcf::nn::balanced_accuracy(65.91, 80.73) - 73.32) < kBalancedTol;
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> u(0.0, 100.0);
  double worst = 0.0;
  for (int i = 0; i < 20; ++i) {
    const double a = u(rng), b = u(rng);
    worst = std::max(worst, std::abs(dcf::nn::balanced_accuracy(a, b) - oracle::mean({a, b})));
  }
  // and from raw predictions: 7/8 F1 and 3/4 F2 -> 81.25
  const std::vector<std::size_t> labels = {0, 0, 0, 0, 0, 0, 0, 0, 1, 1, 1, 1};
  const std::vector<std::size_t> pred = {0, 0, 0, 0, 0, 0, 0, 1, 1, 1, 1, 0};
  const double from_counts = dcf::nn::accuracy_from_predictions(labels, pred).balanced;
  ok = ok && worst < kBalancedTol && std::abs(from_counts - 81.25) < kBalancedTol;
  report(2, "balanced-accuracy convention", ok, fmt("2 reference pairs, 20 random pairs max diff %.1e", worst));
}

// 3
void peak_replay() {
  std::size_t checked = 0, matched = 0;
  bool table2 = false;
  for (const auto* blocks : {&ref::scheme_blocks(), &ref::pathway_blocks()})
    for (const auto& b : *blocks) {
      if (b.setting == "zero") continue;  // highlighted run is not the argmax under either rule
      const auto peak = dcf::select_peak(records_of(b));
      ++checked;
      matched += peak == b.highlighted;
      if (b.model == "ResNet34" && b.setting == "S1") table2 = peak == 3;
    }
  report(3, "peak replay", table2 && matched == checked,
         "reference block -> run 3: " + std::string(table2 ? "yes" : "no") + ", " + std::to_string(matched) + "/" +
             std::to_string(checked) + " highlighted runs");
}

// 4
void pathway_choice_replay() {
  bool ok = true;
  std::string detail;
  for (const std::string model : {"ResNet18", "ResNet34", "Inception-v3"}) {
    std::vector<dcf::SettingAggregate> aggs;
    for (const auto& r : ref::pathway_summary())
      if (r.model == model) aggs.push_back({r.setting, r.mean_a, r.std_a, r.mean_b, r.std_b, 0});
    const auto chosen = aggs.empty() ? std::string("?") : aggs[dcf::choose(aggs)].setting;
    ok = ok && chosen == "S2";
    detail += model + "=" + chosen + " ";
  }
  std::vector<dcf::SettingAggregate> schemes;
  for (const auto& b : ref::scheme_blocks()) schemes.push_back({b.setting, b.mean_a, b.std_a, b.mean_b, b.std_b, 0});
  const auto scheme = schemes[dcf::choose(schemes)].setting;
  ok = ok && scheme == "reflection";
  report(4, "pathway choice replay", ok, detail + "scheme=" + scheme);
}

// 5
void padding_properties() {
  const auto t0 = Clock::now();
  const auto rep = oracle::check_padding(kPaddingCrops, 5);
  const double secs = seconds_since(t0);
  for (const auto& f : rep.failures) std::printf("       %s\n", f.c_str());
  report(5, "padding properties", rep.failures.empty() && rep.crops >= 1000 && secs < kPaddingSeconds,
         std::to_string(rep.crops) + " crops x 6 schemes, " + std::to_string(rep.checks) + " checks, " +
             fmt("%.2f s", secs));
}

// 6
void colour_round_trip() {
  std::size_t exact = 0;
  for (int v = 0; v < 256; ++v) {
    const auto g = static_cast<std::uint8_t>(v);
    exact += dcf::lab_to_rgb(dcf::rgb_to_lab({g, g, g})) == dcf::Rgb{g, g, g};
  }
  const auto w = dcf::rgb_to_lab({255, 255, 255});
  const bool white = std::abs(w.L - 100.0) < kLabWhiteTol && std::abs(w.a) < kLabWhiteTol && std::abs(w.b) < kLabWhiteTol;
  report(6, "CIELAB round trip", exact == 256 && white,
         std::to_string(exact) + "/256 greys exact, white L=" + fmt("%.9f a=%.1e b=%.1e", w.L, w.a, w.b));
}

// 7
void gradient_check() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  std::string worst_name;
  for (const auto& c : oracle::check_param_gradients(7))
    if (c.rel_error >= worst) {
      worst = c.rel_error;
      worst_name = c.name;
    }
  const auto depth = oracle::toy_spec().depth();
  for (std::size_t layer = 0; layer <= depth; ++layer)
    for (std::size_t target = 0; target < 2; ++target) {
      const auto c = oracle::check_activation_gradient(7, layer, target);
      if (c.rel_error >= worst) {
        worst = c.rel_error;
        worst_name = c.name;
      }
    }
  const double secs = seconds_since(t0);
  report(7, "finite-difference gradients", worst < kGradTol && secs < kGradSeconds,
         fmt("max rel err %.2e (", worst) + worst_name + fmt("), %.1f s", secs));
}

// 8
void adam_first_step() {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> theta(64), g(64);
  for (std::size_t i = 0; i < theta.size(); ++i) {
    theta[i] = n(rng);
    g[i] = n(rng) * std::pow(10.0, static_cast<double>(static_cast<int>(i % 9) - 6));
  }
  auto s = oracle::scalar_state(theta);
  for (std::size_t i = 0; i < g.size(); ++i) s.params[i].grad = {g[i]};
  const dcf::nn::AdamConfig cfg;
  dcf::nn::adam_step(s, cfg);
  double worst = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i)
    worst = std::max(worst, std::abs(s.params[i].value[0] - oracle::adam_first_step(theta[i], g[i], cfg.lr, cfg.eps)));
  report(8, "Adam first step", worst <= kAdamTol, fmt("64 parameters, max |diff| %.1e", worst));
}

// ---------------------------------------------------------------------------
// Pipeline criteria

int sh(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string(DCF_CLI_PATH) + " " + args + " >> " + log.string() + " 2>&1";
  const int st = std::system(cmd.c_str());
  return WIFEXITED(st) ? WEXITSTATUS(st) : -1;
}

json read_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw std::runtime_error("cannot read " + p.string());
  return json::parse(in);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

fs::path write_config(const fs::path& root) {
  fs::create_directories(root);
  const fs::path p = root / "config.json";
  std::ofstream(p) << json{{"schema_version", 1}, {"output_dir", (root / "runs").string()}}.dump(2);
  return p;
}

fs::path only_run_dir(const fs::path& root) {
  for (const auto& e : fs::directory_iterator(root / "runs")) return e.path();
  throw std::runtime_error("no run directory under " + root.string());
}

// argmax of mean_A + mean_B recomputed from persisted per-run rows
std::string recomputed_choice(const json& records, std::map<std::string, std::pair<double, double>>* means = nullptr) {
  std::vector<std::string> order;
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> rows;
  for (const auto& r : records) {
    const std::string s = r.at("setting");
    if (!rows.count(s)) order.push_back(s);
    rows[s].first.push_back(r.at("balanced_A"));
    rows[s].second.push_back(r.at("balanced_B"));
  }
  std::string best;
  double best_score = -1.0;
  for (const auto& s : order) {
    const double a = oracle::mean(rows[s].first), b = oracle::mean(rows[s].second);
    if (means) (*means)[s] = {a, b};
    if (a + b > best_score + 1e-9) {
      best_score = a + b;
      best = s;
    }
  }
  return best;
}

json strip_paths(json records) {
  for (auto& r : records) r.erase("checkpoint");
  return records;
}

void pipeline() {
  const fs::path root = fs::absolute("acceptance_runs");
  fs::remove_all(root);
  const fs::path one = root / "one", two = root / "two";
  const auto cfg1 = write_config(one), cfg2 = write_config(two);
  const fs::path log = root / "cli.log";

  // 10: full default pipeline
  const auto t0 = Clock::now();
  int rc = 0;
  for (const char* step : {"gen-data", "psa", "tps", "explain"}) {
    const auto ts = Clock::now();
    rc = sh(std::string(step) + " --config " + cfg1.string(), log);
    std::printf("       %-9s exit %d, %.0f s\n", step, rc, seconds_since(ts));
    std::fflush(stdout);
    if (rc != 0) break;
  }
  const double total = seconds_since(t0);
  if (rc != 0) {
    defer(9, "determinism", false, "pipeline failed, see " + log.string());
    defer(10, "end-to-end defaults", false, "pipeline failed, see " + log.string());
    defer(11, "freeze soundness", false, "pipeline failed");
    return;
  }
  const fs::path dir1 = only_run_dir(one);
  const json psa = read_json(dir1 / "psa" / "report.json");
  const json tps = read_json(dir1 / "tps" / "report.json");
  const json& arch = tps.at("architectures").at(0);
  const std::string scheme = psa.at("chosen").at("scheme");

  {
    const std::string scheme_re = recomputed_choice(psa.at("records"));
    std::map<std::string, std::pair<double, double>> means;
    const std::string path_re = recomputed_choice(arch.at("records"), &means);
    const std::string path_chosen = arch.at("chosen").is_null() ? "" : arch.at("chosen").at("setting").get<std::string>();
    const double gap = means["S2"].second - means["S1"].second;
    const bool ok = total <= kPipelineSeconds && scheme_re == scheme && path_re == path_chosen &&
                    tps.at("scheme") == scheme && gap >= kPathwayGap;
    defer(10, "end-to-end defaults", ok,
           fmt("%.0f s; ", total) + "scheme " + scheme + " (recomputed " + scheme_re + "), pathway " + path_chosen +
               " (recomputed " + path_re + ")" + fmt(", S2-S1 on B %+.2f", gap));
  }

  // 11: frozen parameters survive fine-tuning, checked from the records and
  // again from the checkpoint files
  {
    const fs::path ck = dir1 / "tps" / "checkpoints" / arch.at("architecture").get<std::string>();
    const std::size_t tail = tps.at("config").at("tps").at("freeze_tail");
    std::map<std::string, std::uint64_t> source;
    for (const char* s : {"S1", "S4"}) {
      auto m = dcf::nn::load_checkpoint<float>(ck / (std::string(s) + "_peak.ckpt"));
      dcf::nn::freeze(m, tail);
      source[s] = dcf::nn::frozen_checksum(m);
    }
    std::size_t runs = 0, good = 0;
    for (const auto& r : arch.at("records")) {
      const std::string s = r.at("setting");
      if (s != "S2" && s != "S5") continue;
      ++runs;
      if (!r.contains("frozen_checksum_before") || !r.contains("frozen_checksum_after")) continue;
      const auto before = dcf::parse_hex64(r.at("frozen_checksum_before"));
      const auto after = dcf::parse_hex64(r.at("frozen_checksum_after"));
      const auto file = dcf::nn::frozen_checksum(dcf::nn::load_checkpoint<float>(r.at("checkpoint").get<std::string>()));
      good += before == after && after == file && before == source[s == "S2" ? "S1" : "S4"];
    }
    defer(11, "freeze soundness", runs == 10 && good == runs,
           std::to_string(good) + "/" + std::to_string(runs) + " fine-tuning runs keep the frozen checksum");
  }

  // 9: an independent second run of data generation and TPS
  {
    rc = sh("gen-data --config " + cfg2.string(), log);
    if (rc == 0) rc = sh("tps --scheme " + scheme + " --config " + cfg2.string(), log);
    if (rc != 0) {
      defer(9, "determinism", false, "second run failed, see " + log.string());
      return;
    }
    const fs::path dir2 = only_run_dir(two);
    const json tps2 = read_json(dir2 / "tps" / "report.json");
    const bool same_records = strip_paths(arch.at("records")) == strip_paths(tps2.at("architectures").at(0).at("records"));
    const std::string name = arch.at("architecture");
    std::size_t files = 0, same = 0;
    for (const auto& e : fs::directory_iterator(dir1 / "tps" / "checkpoints" / name)) {
      ++files;
      const fs::path other = dir2 / "tps" / "checkpoints" / name / e.path().filename();
      same += fs::exists(other) && slurp(e.path()) == slurp(other);
    }
    defer(9, "determinism", same_records && files > 0 && same == files,
           std::string("records ") + (same_records ? "identical" : "DIFFER") + ", " + std::to_string(same) + "/" +
               std::to_string(files) + " checkpoints bitwise equal");
  }
}

}  // namespace

int main(int argc, char** argv) {
  const bool fast = argc > 1 && std::string(argv[1]) == "--fast";
  report_file.open("acceptance_report.txt");
  aggregation_replay();
  balanced_convention();
  peak_replay();
  pathway_choice_replay();
  padding_properties();
  colour_round_trip();
  gradient_check();
  adam_first_step();
  if (fast) {
    std::printf("[SKIP]  9-11 pipeline criteria (--fast)\n");
  } else {
    try {
      pipeline();
    } catch (const std::exception& e) {
      defer(9, "pipeline", false, e.what());
    }
    for (const auto& [id, print] : deferred) print();
  }
  std::printf("%s: %d failure(s)\n", failures ? "FAILED" : "OK", failures);
  report_file << (failures ? "FAILED" : "OK") << ": " << failures << " failure(s)\n";
  return failures ? 1 : 0;
}
