// dcf: padding-scheme and training-pathway experiments from the command line.
//
// Exit codes: 0 success, 1 runtime error, 2 configuration error,
// 3 missing prerequisite (datasets, PSA report, checkpoint).

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dcf/config.hpp"
#include "dcf/explain.hpp"
#include "dcf/nn/checkpoint.hpp"
#include "dcf/pathways.hpp"
#include "dcf/synthdata.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

using Model = dcf::nn::ModelState<float>;

enum ExitCode { kOk = 0, kRuntime = 1, kConfig = 2, kMissing = 3 };

class LockError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class Logger {
public:
  explicit Logger(const fs::path& file) {
    fs::create_directories(file.parent_path());
    out_.open(file, std::ios::app);
    if (!out_) throw std::runtime_error("cannot open log file " + file.string());
  }
  void operator()(const std::string& msg) {
    std::lock_guard lock(mu_);
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    char stamp[32];
    std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%S", std::gmtime(&now));
    out_ << stamp << ' ' << msg << '\n';
    out_.flush();
  }

private:
  std::mutex mu_;
  std::ofstream out_;
};

/// Exclusive marker file; a second writer on the same run directory fails.
class RunLock {
public:
  explicit RunLock(const fs::path& dir) : path_(dir / ".lock") {
    fs::create_directories(dir);
    std::FILE* f = std::fopen(path_.c_str(), "wx");
    if (!f) throw LockError("run directory is locked by another process: " + path_.string());
    std::fclose(f);
  }
  ~RunLock() {
    std::error_code ec;
    fs::remove(path_, ec);
  }
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

private:
  fs::path path_;
};

json read_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw std::runtime_error("cannot read " + p.string());
  return json::parse(in);
}

void write_text(const fs::path& p, const std::string& text) {
  fs::create_directories(p.parent_path());
  const fs::path tmp = p.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + p.string());
    out << text;
    if (!out) throw std::runtime_error("write failed: " + p.string());
  }
  fs::rename(tmp, p);
}

void write_json(const fs::path& p, const json& j) { write_text(p, j.dump(2) + "\n"); }

struct Run {
  dcf::RunConfig cfg;
  std::string id;
  fs::path dir;
  fs::path data_root;
  std::unique_ptr<Logger> log;
  std::unique_ptr<RunLock> lock;

  fs::path manifest_path() const { return dir / "run.json"; }

  json manifest() const {
    if (fs::exists(manifest_path())) return read_json(manifest_path());
    return json::object();
  }

  json seeds() const {
    json runs = json::array();
    for (std::size_t r = 1; r <= dcf::kRunsPerSetting; ++r) runs.push_back(cfg.base_seed + r);
    return {{"base_seed", cfg.base_seed},
            {"generator_seed", cfg.gen.seed},
            {"split_shuffle_A", cfg.split_a.shuffle_seed},
            {"split_shuffle_B", cfg.split_b.shuffle_seed},
            {"runs", runs}};
  }

  /// Merges `section` into run.json under `key`, keeping everything else.
  void update_manifest(const std::string& key, const json& section) const {
    json m = manifest();
    m["run_id"] = id;
    m["config"] = dcf::to_json(cfg);
    m["seeds"] = seeds();
    m[key] = section;
    write_json(manifest_path(), m);
  }
};

Run open_run(const std::string& config_path, bool full_scale, std::optional<fs::path> data_override = {}) {
  Run run;
  run.cfg = dcf::load_run_config(config_path);
  if (full_scale) dcf::apply_full_scale(run.cfg);
  run.id = dcf::run_id(run.cfg);
  run.dir = fs::path(run.cfg.output_dir) / run.id;
  run.data_root = run.dir / "data";
  if (data_override) run.data_root = *data_override;
  else if (run.cfg.data_root) run.data_root = *run.cfg.data_root;
  else if (const json m = run.manifest(); m.contains("data")) run.data_root = m["data"]["root"].get<std::string>();
  run.lock = std::make_unique<RunLock>(run.dir);
  run.log = std::make_unique<Logger>(run.dir / "logs" / "dcf.log");
  (*run.log)("run " + run.id + " opened from " + config_path);
  return run;
}

dcf::ExperimentData load_experiment(const Run& run) {
  for (const char* name : {"A", "B"})
    if (!fs::exists(run.data_root / name / "manifest.json"))
      throw dcf::MissingPrerequisite("dataset " + std::string(name) + " not found under " + run.data_root.string() +
                                     " (run gen-data first)");
  return dcf::make_experiment(dcf::load_dataset(run.data_root / "A"), dcf::load_dataset(run.data_root / "B"),
                              run.cfg.split_a, run.cfg.split_b);
}

dcf::RunHooks hooks_for(Run& run, std::vector<dcf::RunRecord>& sink, std::mutex& mu) {
  dcf::RunHooks h;
  h.log = [&run](const std::string& m) { (*run.log)(m); };
  h.on_record = [&sink, &mu](const dcf::RunRecord& r) {
    std::lock_guard lock(mu);
    sink.push_back(r);
  };
  return h;
}

std::string fixed(double v, int digits = 2) {
  std::ostringstream s;
  s.setf(std::ios::fixed);
  s.precision(digits);
  s << v;
  return s.str();
}

void print_aggregates(const json& aggs, const std::string& label, const std::string& chosen) {
  std::cout << "  " << label << "      mean_A +- std     mean_B +- std     leveraged  peak\n";
  for (const auto& g : aggs) {
    const std::string name = g.at("setting");
    std::printf("  %-12s %6s +- %-6s  %6s +- %-6s  %8s   %zu%s\n", name.c_str(), fixed(g.at("mean_A")).c_str(),
                fixed(g.at("std_A")).c_str(), fixed(g.at("mean_B")).c_str(), fixed(g.at("std_B")).c_str(),
                fixed(g.at("leveraged")).c_str(), g.at("peak_run").get<std::size_t>(), name == chosen ? "  *" : "");
  }
  std::fflush(stdout);
}

// ---------------------------------------------------------------------------

int cmd_gen_data(const std::string& config, const std::optional<std::string>& out, bool full_scale) {
  Run run = open_run(config, full_scale, out ? std::optional<fs::path>(*out) : std::nullopt);
  const auto pair = dcf::generate(run.cfg.gen);
  dcf::save_dataset(run.data_root, pair.a);
  dcf::save_dataset(run.data_root, pair.b);
  (*run.log)("generated datasets under " + run.data_root.string());
  run.update_manifest("data", {{"root", run.data_root.string()},
                               {"A", (run.data_root / "A" / "manifest.json").string()},
                               {"B", (run.data_root / "B" / "manifest.json").string()},
                               {"counts", {{"A", pair.a.size()}, {"B", pair.b.size()}}}});
  std::cout << "run " << run.id << "\n";
  std::cout << "dataset A: " << pair.a.size() << " items (F1 " << pair.a.count(dcf::Label::kF1) << ", F2 "
            << pair.a.count(dcf::Label::kF2) << ")\n";
  std::cout << "dataset B: " << pair.b.size() << " items (F1 " << pair.b.count(dcf::Label::kF1) << ", F2 "
            << pair.b.count(dcf::Label::kF2) << ")\n";
  std::cout << "written to " << run.data_root.string() << "\n";
  return kOk;
}

int cmd_psa(const std::string& config, bool full_scale, bool train_per_scheme) {
  Run run = open_run(config, full_scale);
  if (train_per_scheme) run.cfg.psa_train_per_scheme = true;
  if (!run.cfg.psa_enabled) {
    std::cout << "psa disabled in config; nothing to do\n";
    return kOk;
  }
  const auto data = load_experiment(run);
  const fs::path psa_dir = run.dir / "psa";
  std::vector<dcf::RunRecord> done;
  std::mutex mu;
  const auto t0 = std::chrono::steady_clock::now();
  dcf::PsaReport rep;
  try {
    rep = dcf::run_psa<float>(data, run.cfg.psa_config(), psa_dir / "checkpoints", hooks_for(run, done, mu));
  } catch (const std::exception& e) {
    write_json(psa_dir / "report.json", {{"failed", true}, {"error", e.what()}, {"records", dcf::json_array(done)}});
    run.update_manifest("psa", {{"status", "failed"}, {"report", (psa_dir / "report.json").string()}});
    throw;
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  json doc = dcf::to_json(rep);
  doc["failed"] = false;
  doc["config"] = dcf::to_json(run.cfg);
  doc["seeds"] = run.seeds();
  doc["seconds"] = secs;
  write_json(psa_dir / "report.json", doc);
  write_text(psa_dir / "records.csv", dcf::records_csv(rep.records));
  run.update_manifest("psa", {{"status", "done"},
                              {"report", (psa_dir / "report.json").string()},
                              {"records_csv", (psa_dir / "records.csv").string()},
                              {"chosen_scheme", std::string(dcf::to_string(*rep.chosen))}});
  std::cout << "run " << run.id << "\n";
  print_aggregates(doc["aggregates"], "scheme    ", std::string(dcf::to_string(*rep.chosen)));
  std::cout << "chosen scheme: " << dcf::to_string(*rep.chosen) << " (peak run " << rep.chosen_peak_run << ")\n";
  return kOk;
}

std::vector<std::size_t> parse_settings(const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    const auto s = dcf::parse_setting(tok);
    if (!s) throw dcf::ConfigError("--settings: unknown setting '" + tok + "'");
    if (std::find(out.begin(), out.end(), *s) == out.end()) out.push_back(*s);
  }
  if (out.empty()) throw dcf::ConfigError("--settings: empty list");
  return out;
}

dcf::PaddingScheme scheme_arg(const std::string& s) {
  const auto p = dcf::parse_scheme(s);
  if (!p) throw dcf::ConfigError("unknown padding scheme '" + s + "'");
  return *p;
}

int cmd_tps(const std::string& config, bool full_scale, const std::optional<std::string>& settings,
            const std::optional<std::string>& scheme_flag) {
  Run run = open_run(config, full_scale);
  if (settings) run.cfg.tps_settings = parse_settings(*settings);
  dcf::PaddingScheme scheme;
  std::string source;
  if (scheme_flag) {
    scheme = scheme_arg(*scheme_flag);
    source = "flag";
  } else if (run.cfg.tps_padding) {
    scheme = *run.cfg.tps_padding;
    source = "config";
  } else {
    const fs::path psa_report = run.dir / "psa" / "report.json";
    if (!fs::exists(psa_report)) throw dcf::MissingPrerequisite("tps needs a PSA report (" + psa_report.string() +
                                                                ") or a forced scheme (--scheme / tps.padding)");
    const json psa = read_json(psa_report);
    if (psa.value("failed", false) || psa.at("chosen").is_null())
      throw dcf::MissingPrerequisite("PSA report has no chosen scheme: " + psa_report.string());
    scheme = scheme_arg(psa.at("chosen").at("scheme"));
    source = "psa";
  }
  const auto data = load_experiment(run);
  const fs::path tps_dir = run.dir / "tps";
  std::vector<dcf::RunRecord> done;
  std::mutex mu;
  const auto t0 = std::chrono::steady_clock::now();
  dcf::TpsReport rep;
  try {
    rep = dcf::run_tps<float>(data, run.cfg.tps_config(), scheme, tps_dir / "checkpoints", hooks_for(run, done, mu));
  } catch (const dcf::MissingPrerequisite&) {
    throw;
  } catch (const std::exception& e) {
    write_json(tps_dir / "report.json", {{"failed", true}, {"error", e.what()}, {"records", dcf::json_array(done)}});
    run.update_manifest("tps", {{"status", "failed"}, {"report", (tps_dir / "report.json").string()}});
    throw;
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  json doc = dcf::to_json(rep);
  doc["failed"] = false;
  doc["scheme_source"] = source;
  doc["settings"] = run.cfg.tps_settings;
  doc["config"] = dcf::to_json(run.cfg);
  doc["seeds"] = run.seeds();
  doc["seconds"] = secs;
  write_json(tps_dir / "report.json", doc);
  json csvs = json::object();
  for (const auto& a : rep.architectures) {
    const fs::path csv = tps_dir / ("records_" + a.architecture + ".csv");
    write_text(csv, dcf::records_csv(a.records));
    csvs[a.architecture] = csv.string();
  }
  json chosen = json::object();
  for (const auto& a : rep.architectures) chosen[a.architecture] = a.chosen ? json(*a.chosen) : json();
  run.update_manifest("tps", {{"status", "done"},
                              {"report", (tps_dir / "report.json").string()},
                              {"records_csv", csvs},
                              {"scheme", std::string(dcf::to_string(scheme))},
                              {"chosen", chosen}});
  std::cout << "run " << run.id << "\n";
  std::cout << "scheme: " << dcf::to_string(scheme) << " (" << source << ")\n";
  for (std::size_t i = 0; i < rep.architectures.size(); ++i) {
    const auto& a = rep.architectures[i];
    std::cout << "architecture " << a.architecture << "\n";
    print_aggregates(doc["architectures"][i]["aggregates"], "setting   ", a.chosen.value_or(""));
    if (a.chosen)
      std::cout << "chosen pathway: " << *a.chosen << "\n";
    else
      std::cout << "chosen pathway: none (needs at least two settings)\n";
  }
  return kOk;
}

int cmd_explain(const std::string& config, bool full_scale, const std::optional<std::string>& checkpoint,
                const std::optional<std::string>& scheme_flag) {
  Run run = open_run(config, full_scale);
  // Chosen model: TPS pathway of the first architecture with a choice, else the PSA backbone.
  auto chosen_tps = [&]() -> std::optional<json> {
    const fs::path p = run.dir / "tps" / "report.json";
    if (!fs::exists(p)) return std::nullopt;
    const json r = read_json(p);
    if (r.value("failed", false)) return std::nullopt;
    for (const auto& a : r.at("architectures"))
      if (!a.at("chosen").is_null()) return json{{"checkpoint", a["chosen"]["checkpoint"]}, {"scheme", r["scheme"]}};
    return std::nullopt;
  };
  auto chosen_psa = [&]() -> std::optional<json> {
    const fs::path p = run.dir / "psa" / "report.json";
    if (!fs::exists(p)) return std::nullopt;
    const json r = read_json(p);
    if (r.value("failed", false) || r.at("chosen").is_null()) return std::nullopt;
    return json{{"checkpoint", r["chosen"]["checkpoint"]}, {"scheme", r["chosen"]["scheme"]}};
  };
  const auto from_tps = chosen_tps();
  const auto from_psa = chosen_psa();

  fs::path ckpt;
  if (checkpoint) ckpt = *checkpoint;
  else if (from_tps) ckpt = from_tps->at("checkpoint").get<std::string>();
  else if (from_psa) ckpt = from_psa->at("checkpoint").get<std::string>();
  else throw dcf::MissingPrerequisite("explain needs --checkpoint or a completed psa/tps run");
  if (!fs::exists(ckpt)) throw dcf::MissingPrerequisite("checkpoint not found: " + ckpt.string());

  dcf::PaddingScheme scheme = dcf::PaddingScheme::kZero;
  if (scheme_flag) scheme = scheme_arg(*scheme_flag);
  else if (from_tps) scheme = scheme_arg(from_tps->at("scheme"));
  else if (from_psa) scheme = scheme_arg(from_psa->at("scheme"));

  const auto data = load_experiment(run);
  const Model model = dcf::nn::load_checkpoint<float>(ckpt);
  const fs::path out = run.dir / "explain";
  (*run.log)("explain: checkpoint " + ckpt.string() + ", scheme " + std::string(dcf::to_string(scheme)));

  const std::vector<dcf::TestSetRef> sets = {{"A_test", &data.a, data.split_a.test}, {"B_test", &data.b, data.split_b.test}};
  const auto rows = dcf::quant_table(model, sets, run.cfg.explain.schemes);
  write_text(out / "quant.csv", dcf::quant_csv(rows));
  write_text(out / "quant.txt", dcf::format_quant_table(rows));

  json profiles = json::array();
  for (const auto& set : sets)
    for (auto s : run.cfg.explain.schemes) {
      const auto prof = dcf::padding_profile(*set.dataset, set.indices, s, run.cfg.explain.profile_bins);
      const fs::path p = out / "profiles" / (set.id + "_" + std::string(dcf::to_string(s)) + ".csv");
      write_text(p, dcf::profile_csv(prof));
      profiles.push_back(p.string());
    }

  // First k test items per (set, label) in time order.
  std::vector<dcf::ExplainSample> samples;
  for (const auto& set : sets)
    for (dcf::Label l : {dcf::Label::kF1, dcf::Label::kF2}) {
      std::size_t taken = 0;
      for (std::size_t idx : set.indices) {
        if (taken == run.cfg.explain.samples_per_label) break;
        const auto& it = set.dataset->items[idx];
        if (it.label != l) continue;
        samples.push_back({set.id + "_" + dcf::item_filename(idx).substr(0, 9), it.image, it.label});
        ++taken;
      }
    }
  dcf::gradcam_report(model, samples, scheme, out / "gradcam");

  run.update_manifest("explain", {{"status", "done"},
                                  {"checkpoint", ckpt.string()},
                                  {"scheme", std::string(dcf::to_string(scheme))},
                                  {"quant_csv", (out / "quant.csv").string()},
                                  {"quant_table", (out / "quant.txt").string()},
                                  {"profiles", profiles},
                                  {"gradcam_index", (out / "gradcam" / "index.json").string()}});
  std::cout << "run " << run.id << "\n";
  std::cout << "checkpoint: " << ckpt.string() << "\nscheme: " << dcf::to_string(scheme) << "\n";
  std::cout << dcf::format_quant_table(rows);
  std::cout << "gradcam samples: " << samples.size() << " -> " << (out / "gradcam").string() << "\n";
  return kOk;
}

int cmd_report(const std::string& run_dir) {
  const fs::path dir(run_dir);
  if (!fs::exists(dir / "run.json")) throw dcf::MissingPrerequisite("no run manifest in " + dir.string());
  const json m = read_json(dir / "run.json");
  std::cout << "run " << m.value("run_id", "?") << "\n";
  if (m.contains("data"))
    std::cout << "data: A " << m["data"]["counts"]["A"] << " items, B " << m["data"]["counts"]["B"] << " items\n";
  if (m.contains("psa")) {
    const json r = read_json(m["psa"]["report"].get<std::string>());
    std::cout << "\npadding scheme adaptor" << (r.value("failed", false) ? " [FAILED]" : "") << "\n";
    if (!r.value("failed", false)) {
      print_aggregates(r["aggregates"], "scheme    ", r["chosen"]["scheme"].get<std::string>());
      std::cout << "chosen scheme: " << r["chosen"]["scheme"].get<std::string>() << " (peak run "
                << r["chosen"]["peak_run"] << ")\n";
    }
  }
  if (m.contains("tps")) {
    const json r = read_json(m["tps"]["report"].get<std::string>());
    std::cout << "\ntraining pathway selector" << (r.value("failed", false) ? " [FAILED]" : "") << "\n";
    if (!r.value("failed", false)) {
      std::cout << "scheme: " << r["scheme"].get<std::string>() << "\n";
      for (const auto& a : r["architectures"]) {
        const std::string chosen = a["chosen"].is_null() ? "" : a["chosen"]["setting"].get<std::string>();
        std::cout << "architecture " << a["architecture"].get<std::string>() << "\n";
        print_aggregates(a["aggregates"], "setting   ", chosen);
        std::cout << "chosen pathway: " << (chosen.empty() ? "none (needs at least two settings)" : chosen) << "\n";
      }
    }
  }
  if (m.contains("explain")) {
    std::cout << "\nexplanations (" << m["explain"]["scheme"].get<std::string>() << ")\n";
    std::ifstream in(m["explain"]["quant_table"].get<std::string>());
    if (in) std::cout << in.rdbuf();
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Padding-scheme and training-pathway selection for two temporally continued datasets"};
  app.require_subcommand(1);
  std::string config;
  bool full_scale = false;
  std::optional<std::string> out, settings, scheme, checkpoint;
  bool train_per_scheme = false;
  std::string run_dir;

  auto* gen = app.add_subcommand("gen-data", "Generate datasets A and B with manifests");
  gen->add_option("--config", config, "Run configuration (JSON)")->required();
  gen->add_option("--out", out, "Dataset root (default: <run dir>/data or data.root)");
  gen->add_flag("--paper-scale", full_scale, "Use 1024-px classifier inputs");

  auto* psa = app.add_subcommand("psa", "Padding scheme adaptor");
  psa->add_option("--config", config, "Run configuration (JSON)")->required();
  psa->add_flag("--paper-scale", full_scale, "Use 1024-px classifier inputs");
  psa->add_flag("--train-per-scheme", train_per_scheme, "Train one backbone family per scheme");

  auto* tps = app.add_subcommand("tps", "Training pathway selector");
  tps->add_option("--config", config, "Run configuration (JSON)")->required();
  tps->add_flag("--paper-scale", full_scale, "Use 1024-px classifier inputs");
  tps->add_option("--settings", settings, "Comma-separated settings, e.g. 1,2");
  tps->add_option("--scheme", scheme, "Force the padding scheme instead of the PSA choice");

  auto* exp = app.add_subcommand("explain", "Mean-pixel/confidence tables, pixel profiles, GradCAM");
  exp->add_option("--config", config, "Run configuration (JSON)")->required();
  exp->add_flag("--paper-scale", full_scale, "Use 1024-px classifier inputs");
  exp->add_option("--checkpoint", checkpoint, "Model checkpoint (default: chosen TPS/PSA model)");
  exp->add_option("--scheme", scheme, "Padding scheme for GradCAM exports");

  auto* rep = app.add_subcommand("report", "Print summary tables from a run directory");
  rep->add_option("--run-dir", run_dir, "Run directory (<output_dir>/<run id>)")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfig;
  }

  try {
    if (*gen) return cmd_gen_data(config, out, full_scale);
    if (*psa) return cmd_psa(config, full_scale, train_per_scheme);
    if (*tps) return cmd_tps(config, full_scale, settings, scheme);
    if (*exp) return cmd_explain(config, full_scale, checkpoint, scheme);
    if (*rep) return cmd_report(run_dir);
  } catch (const dcf::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const dcf::MissingPrerequisite& e) {
    std::cerr << "missing prerequisite: " << e.what() << "\n";
    return kMissing;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntime;
  }
  return kRuntime;
}
