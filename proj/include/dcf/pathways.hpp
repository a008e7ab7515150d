#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "dcf/nn/checkpoint.hpp"
#include "dcf/nn/model.hpp"
#include "dcf/nn/optim.hpp"
#include "dcf/nn/train.hpp"
#include "dcf/padding.hpp"
#include "dcf/synthdata.hpp"
#include "dcf/util.hpp"

namespace dcf {

// ---------------------------------------------------------------------------
// Records and aggregation

inline constexpr std::size_t kRunsPerSetting = 5;

/// One trained model evaluated on both test sets. `setting` is a padding
/// scheme name for PSA rows and "S1".."S5" for TPS rows.
struct RunRecord {
  std::string setting;
  std::size_t run = 0;  // 1-based
  std::uint64_t seed = 0;
  double acc_f1_a = 0.0, acc_f2_a = 0.0, balanced_a = 0.0;
  double acc_f1_b = 0.0, acc_f2_b = 0.0, balanced_b = 0.0;
  std::string checkpoint;
  std::size_t best_epoch = 0;
  std::optional<std::uint64_t> frozen_before;  // fine-tuning runs only
  std::optional<std::uint64_t> frozen_after;

  friend bool operator==(const RunRecord&, const RunRecord&) = default;
};

struct SettingAggregate {
  std::string setting;
  double mean_a = 0.0, std_a = 0.0;
  double mean_b = 0.0, std_b = 0.0;
  std::size_t peak_run = 0;

  friend bool operator==(const SettingAggregate&, const SettingAggregate&) = default;
};

inline RunRecord make_record(std::string setting, std::size_t run, std::uint64_t seed, const nn::Accuracy& a,
                             const nn::Accuracy& b) {
  RunRecord r;
  r.setting = std::move(setting);
  r.run = run;
  r.seed = seed;
  r.acc_f1_a = a.f1;
  r.acc_f2_a = a.f2;
  r.balanced_a = a.balanced;
  r.acc_f1_b = b.f1;
  r.acc_f2_b = b.f2;
  r.balanced_b = b.balanced;
  return r;
}

inline double mean_of(std::span<const double> xs) {
  double s = 0.0;
  for (double x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

/// Sample standard deviation (n - 1 denominator).
inline double sample_std(std::span<const double> xs) {
  if (xs.size() < 2) return 0.0;
  const double m = mean_of(xs);
  double ss = 0.0;
  for (double x : xs) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(xs.size() - 1));
}

namespace path_detail {
inline constexpr double kTieTol = 1e-9;
}

/// Run index maximizing balanced_a + balanced_b; ties go to the larger
/// min(balanced_a, balanced_b), then to the smaller run index.
inline std::size_t select_peak(std::span<const RunRecord> records) {
  if (records.empty()) throw std::invalid_argument("select_peak: no records");
  const RunRecord* best = &records[0];
  for (const auto& r : records.subspan(1)) {
    const double ds = (r.balanced_a + r.balanced_b) - (best->balanced_a + best->balanced_b);
    const double dm = std::min(r.balanced_a, r.balanced_b) - std::min(best->balanced_a, best->balanced_b);
    bool better = false;
    if (ds > path_detail::kTieTol) better = true;
    else if (ds >= -path_detail::kTieTol) {
      if (dm > path_detail::kTieTol) better = true;
      else if (dm >= -path_detail::kTieTol) better = r.run < best->run;
    }
    if (better) best = &r;
  }
  return best->run;
}

inline SettingAggregate aggregate(std::span<const RunRecord> records) {
  if (records.size() != kRunsPerSetting)
    throw std::invalid_argument("aggregate: expected " + std::to_string(kRunsPerSetting) + " records, got " +
                                std::to_string(records.size()));
  std::vector<double> a, b;
  for (const auto& r : records) {
    if (r.setting != records[0].setting) throw std::invalid_argument("aggregate: records mix settings");
    a.push_back(r.balanced_a);
    b.push_back(r.balanced_b);
  }
  return {records[0].setting, mean_of(a), sample_std(a), mean_of(b), sample_std(b), select_peak(records)};
}

enum class LeverageRule { kSum, kMinThenSum };

inline std::string_view to_string(LeverageRule r) { return r == LeverageRule::kSum ? "sum" : "min-then-sum"; }

inline std::optional<LeverageRule> parse_leverage_rule(std::string_view s) {
  if (s == "sum") return LeverageRule::kSum;
  if (s == "min-then-sum") return LeverageRule::kMinThenSum;
  return std::nullopt;
}

inline double leveraged_score(const SettingAggregate& agg) { return agg.mean_a + agg.mean_b; }

/// Index of the aggregate with the best leveraged score; earlier entries win ties.
inline std::size_t choose(std::span<const SettingAggregate> aggs, LeverageRule rule = LeverageRule::kSum) {
  if (aggs.empty()) throw std::invalid_argument("choose: no aggregates");
  auto key = [&](const SettingAggregate& g) {
    return rule == LeverageRule::kSum ? std::array<double, 2>{leveraged_score(g), 0.0}
                                      : std::array<double, 2>{std::min(g.mean_a, g.mean_b), leveraged_score(g)};
  };
  std::size_t best = 0;
  for (std::size_t i = 1; i < aggs.size(); ++i) {
    const auto k = key(aggs[i]), kb = key(aggs[best]);
    const double d0 = k[0] - kb[0], d1 = k[1] - kb[1];
    if (d0 > path_detail::kTieTol || (std::abs(d0) <= path_detail::kTieTol && d1 > path_detail::kTieTol)) best = i;
  }
  return best;
}

// ---------------------------------------------------------------------------
// Experiment data

/// Both datasets with their splits.
struct ExperimentData {
  TemporalDataset a, b;
  Split split_a, split_b;
};

inline ExperimentData make_experiment(TemporalDataset a, TemporalDataset b, const SplitSpec& spec_a,
                                      const SplitSpec& spec_b) {
  validate(a);
  validate(b);
  ExperimentData d{std::move(a), std::move(b), {}, {}};
  d.split_a = split(d.a, spec_a);
  d.split_b = split(d.b, spec_b);
  return d;
}

/// Network-ready train/val/test sets of both datasets under one scheme.
struct PreparedData {
  nn::PreparedSet a_train, a_val, a_test;
  nn::PreparedSet b_train, b_val, b_test;
};

inline PreparedData prepare_data(const ExperimentData& d, PaddingScheme scheme, std::size_t side,
                                 std::size_t workers = worker_count()) {
  return {nn::prepare_set(d.a, d.split_a.train, scheme, side, workers),
          nn::prepare_set(d.a, d.split_a.val, scheme, side, workers),
          nn::prepare_set(d.a, d.split_a.test, scheme, side, workers),
          nn::prepare_set(d.b, d.split_b.train, scheme, side, workers),
          nn::prepare_set(d.b, d.split_b.val, scheme, side, workers),
          nn::prepare_set(d.b, d.split_b.test, scheme, side, workers)};
}

/// Thrown when a stage needs an artefact of an earlier stage that is absent.
class MissingPrerequisite : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

using LogFn = std::function<void(const std::string&)>;

struct RunHooks {
  LogFn log;
  std::function<void(const RunRecord&)> on_record;  // called once per finished run, possibly concurrently
};

namespace path_detail {

inline void log(const RunHooks& h, const std::string& msg) {
  if (h.log) h.log(msg);
}

template <class T>
RunRecord evaluate_run(const nn::ModelState<T>& m, const PreparedData& data, std::string setting, std::size_t run,
                       std::uint64_t seed) {
  return make_record(std::move(setting), run, seed, nn::evaluate(m, data.a_test), nn::evaluate(m, data.b_test));
}

/// Lazily prepared data per scheme; prepared once, then shared read-only.
class PreparedCache {
public:
  PreparedCache(const ExperimentData& d, std::size_t side) : data_(d), side_(side) {}
  const PreparedData& get(PaddingScheme s) {
    std::lock_guard lock(mu_);
    auto it = cache_.find(s);
    if (it == cache_.end()) it = cache_.emplace(s, prepare_data(data_, s, side_)).first;
    return it->second;
  }

private:
  const ExperimentData& data_;
  std::size_t side_;
  std::mutex mu_;
  std::map<PaddingScheme, PreparedData> cache_;
};

}  // namespace path_detail

// ---------------------------------------------------------------------------
// PSA: padding scheme adaptor

struct PsaConfig {
  std::vector<PaddingScheme> schemes{kAllSchemes.begin(), kAllSchemes.end()};
  bool train_per_scheme = false;
  nn::ModelSpec model;
  nn::TrainConfig train;
  std::uint64_t base_seed = 1;
  LeverageRule rule = LeverageRule::kSum;
};

struct PsaReport {
  std::vector<RunRecord> records;  // scheme-major, run-minor
  std::vector<SettingAggregate> aggregates;
  std::optional<PaddingScheme> chosen;
  std::size_t chosen_peak_run = 0;
  std::string chosen_checkpoint;
};

inline void finalize(PsaReport& rep, const PsaConfig& cfg) {
  rep.aggregates.clear();
  for (PaddingScheme s : cfg.schemes) {
    std::vector<RunRecord> rows;
    for (const auto& r : rep.records)
      if (r.setting == to_string(s)) rows.push_back(r);
    rep.aggregates.push_back(aggregate(rows));
  }
  const std::size_t k = choose(rep.aggregates, cfg.rule);
  rep.chosen = cfg.schemes[k];
  rep.chosen_peak_run = rep.aggregates[k].peak_run;
  for (const auto& r : rep.records)
    if (r.setting == rep.aggregates[k].setting && r.run == rep.chosen_peak_run) rep.chosen_checkpoint = r.checkpoint;
}

/// Trains the backbone family on A's training split (zero padding, or each
/// scheme in turn with `train_per_scheme`), evaluates every backbone under
/// every configured scheme on both test sets and picks the scheme with the
/// best leveraged score. Checkpoints go to `ckpt_dir`.
template <class T = float>
PsaReport run_psa(const ExperimentData& data, const PsaConfig& cfg, const std::filesystem::path& ckpt_dir,
                  const RunHooks& hooks = {}) {
  if (cfg.schemes.empty()) throw std::invalid_argument("psa: no schemes configured");
  nn::validate(cfg.model);
  nn::validate(cfg.train);
  std::filesystem::create_directories(ckpt_dir);
  path_detail::PreparedCache cache(data, cfg.model.input_side);

  const std::vector<PaddingScheme> train_schemes =
      cfg.train_per_scheme ? cfg.schemes : std::vector<PaddingScheme>{PaddingScheme::kZero};
  const std::size_t n_jobs = train_schemes.size() * kRunsPerSetting;
  // Prepare sequentially so parallel jobs only read.
  for (PaddingScheme s : train_schemes) cache.get(s);
  for (PaddingScheme s : cfg.schemes) cache.get(s);

  std::vector<std::vector<RunRecord>> per_job(n_jobs);
  parallel_for(n_jobs, [&](std::size_t job) {
    const PaddingScheme ts = train_schemes[job / kRunsPerSetting];
    const std::size_t run = job % kRunsPerSetting + 1;
    const std::uint64_t seed = cfg.base_seed + run;
    const auto& train_data = cache.get(ts);
    nn::TrainConfig tc = cfg.train;
    tc.seed = seed;
    auto result = nn::train_run(nn::make_model<T>(cfg.model, seed), train_data.a_train, train_data.a_val, tc);
    const auto path = ckpt_dir / ("backbone_" + std::string(to_string(ts)) + "_run" + std::to_string(run) + ".ckpt");
    nn::save_checkpoint(path, result.best);
    path_detail::log(hooks, "psa: trained backbone " + std::string(to_string(ts)) + " run " + std::to_string(run) +
                                " (best epoch " + std::to_string(result.best_epoch.value_or(0)) + ")");
    const auto eval_schemes = cfg.train_per_scheme ? std::vector<PaddingScheme>{ts} : cfg.schemes;
    for (PaddingScheme es : eval_schemes) {
      auto rec = path_detail::evaluate_run(result.best, cache.get(es), std::string(to_string(es)), run, seed);
      rec.checkpoint = path.string();
      rec.best_epoch = result.best_epoch.value_or(0);
      if (hooks.on_record) hooks.on_record(rec);
      per_job[job].push_back(std::move(rec));
    }
  });

  PsaReport rep;
  for (PaddingScheme s : cfg.schemes)
    for (const auto& job : per_job)
      for (const auto& r : job)
        if (r.setting == to_string(s)) rep.records.push_back(r);
  finalize(rep, cfg);
  path_detail::log(hooks, "psa: chosen scheme " + std::string(to_string(*rep.chosen)));
  return rep;
}

// ---------------------------------------------------------------------------
// TPS: training pathway selector

inline constexpr std::size_t kNumSettings = 5;

inline std::string setting_name(std::size_t s) { return "S" + std::to_string(s); }

inline std::optional<std::size_t> parse_setting(std::string_view s) {
  if (s.size() == 2 && (s[0] == 'S' || s[0] == 's')) s.remove_prefix(1);
  if (s.size() == 1 && s[0] >= '1' && s[0] <= '5') return static_cast<std::size_t>(s[0] - '0');
  return std::nullopt;
}

struct Architecture {
  std::string name = "mini-resnet";
  nn::ModelSpec spec;
};

struct TpsConfig {
  std::vector<std::size_t> settings = {1, 2, 3, 4, 5};
  std::vector<Architecture> architectures = {Architecture{}};
  nn::TrainConfig train;
  std::size_t freeze_tail = 2;
  std::map<std::size_t, PaddingScheme> padding_override;  // setting -> scheme
  std::uint64_t base_seed = 1;
  LeverageRule rule = LeverageRule::kSum;
};

struct ArchReport {
  std::string architecture;
  std::vector<RunRecord> records;  // setting-major, run-minor
  std::vector<SettingAggregate> aggregates;
  std::map<std::string, std::string> peak_checkpoints;  // setting -> path
  std::optional<std::string> chosen;                     // needs >= 2 settings
  std::string chosen_checkpoint;
};

struct TpsReport {
  PaddingScheme scheme = PaddingScheme::kReflection;
  std::vector<ArchReport> architectures;
};

inline void finalize(ArchReport& rep, const TpsConfig& cfg) {
  rep.aggregates.clear();
  std::vector<std::size_t> settings = cfg.settings;
  std::sort(settings.begin(), settings.end());
  for (std::size_t s : settings) {
    std::vector<RunRecord> rows;
    for (const auto& r : rep.records)
      if (r.setting == setting_name(s)) rows.push_back(r);
    rep.aggregates.push_back(aggregate(rows));
  }
  rep.chosen.reset();
  rep.chosen_checkpoint.clear();
  if (rep.aggregates.size() >= 2) {
    const auto& g = rep.aggregates[choose(rep.aggregates, cfg.rule)];
    rep.chosen = g.setting;
    rep.chosen_checkpoint = rep.peak_checkpoints.at(g.setting);
  }
}

namespace path_detail {

inline std::filesystem::path peak_path(const std::filesystem::path& dir, std::size_t setting) {
  return dir / (setting_name(setting) + "_peak.ckpt");
}

}  // namespace path_detail

/// Runs the configured training settings for every architecture:
///   S1 A from scratch, S2 S1-peak fine-tuned on B, S3 A+B from scratch,
///   S4 B from scratch, S5 S4-peak fine-tuned on A.
/// A fine-tuning setting whose source setting is not part of this invocation
/// loads `<ckpt_dir>/<arch>/S1_peak.ckpt` (resp. S4) from an earlier run.
template <class T = float>
TpsReport run_tps(const ExperimentData& data, const TpsConfig& cfg, PaddingScheme scheme,
                  const std::filesystem::path& ckpt_dir, const RunHooks& hooks = {}) {
  if (cfg.settings.empty()) throw std::invalid_argument("tps: no settings configured");
  for (std::size_t s : cfg.settings)
    if (s < 1 || s > kNumSettings) throw std::invalid_argument("tps: settings must be in 1..5");
  if (cfg.architectures.empty()) throw std::invalid_argument("tps: no architectures configured");
  nn::validate(cfg.train);
  auto has = [&](std::size_t s) { return std::find(cfg.settings.begin(), cfg.settings.end(), s) != cfg.settings.end(); };
  auto scheme_of = [&](std::size_t s) {
    const auto it = cfg.padding_override.find(s);
    return it == cfg.padding_override.end() ? scheme : it->second;
  };

  TpsReport report;
  report.scheme = scheme;
  for (const auto& arch : cfg.architectures) {
    nn::validate(arch.spec);
    if (cfg.freeze_tail < 1 || cfg.freeze_tail > arch.spec.depth() + 1)
      throw std::invalid_argument("tps: freeze_tail must be in [1, depth+1] for " + arch.name);
    const auto dir = ckpt_dir / arch.name;
    std::filesystem::create_directories(dir);
    // Prerequisites from earlier invocations are checked before any training.
    if (has(2) && !has(1) && !std::filesystem::exists(path_detail::peak_path(dir, 1)))
      throw MissingPrerequisite("tps: S2 needs the S1 peak checkpoint " + path_detail::peak_path(dir, 1).string());
    if (has(5) && !has(4) && !std::filesystem::exists(path_detail::peak_path(dir, 4)))
      throw MissingPrerequisite("tps: S5 needs the S4 peak checkpoint " + path_detail::peak_path(dir, 4).string());

    path_detail::PreparedCache cache(data, arch.spec.input_side);
    for (std::size_t s : cfg.settings) cache.get(scheme_of(s));

    ArchReport rep;
    rep.architecture = arch.name;
    std::mutex mu;

    // One job = one run of one setting.
    auto run_jobs = [&](const std::vector<std::size_t>& phase) {
      std::vector<RunRecord> out(phase.size() * kRunsPerSetting);
      std::vector<nn::ModelState<T>> sources(kNumSettings + 1);
      for (std::size_t s : phase)
        if (s == 2 || s == 5) sources[s] = nn::load_checkpoint<T>(path_detail::peak_path(dir, s == 2 ? 1 : 4));
      parallel_for(out.size(), [&](std::size_t job) {
        const std::size_t s = phase[job / kRunsPerSetting];
        const std::size_t run = job % kRunsPerSetting + 1;
        const std::uint64_t seed = cfg.base_seed + run;
        const auto& pd = cache.get(scheme_of(s));
        nn::TrainConfig tc = cfg.train;
        tc.seed = seed;
        std::optional<std::uint64_t> before;
        nn::TrainResult<T> result;
        switch (s) {
          case 1: result = nn::train_run(nn::make_model<T>(arch.spec, seed), pd.a_train, pd.a_val, tc); break;
          case 4: result = nn::train_run(nn::make_model<T>(arch.spec, seed), pd.b_train, pd.b_val, tc); break;
          case 3: {
            result = nn::train_run(nn::make_model<T>(arch.spec, seed), nn::concat(pd.a_train, pd.b_train),
                                   nn::concat(pd.a_val, pd.b_val), tc);
            break;
          }
          default: {
            auto init = sources[s];
            nn::freeze(init, cfg.freeze_tail);
            nn::reset_optimizer(init);
            before = nn::frozen_checksum(init);
            result = s == 2 ? nn::train_run(std::move(init), pd.b_train, pd.b_val, tc)
                            : nn::train_run(std::move(init), pd.a_train, pd.a_val, tc);
          }
        }
        const auto path = dir / (setting_name(s) + "_run" + std::to_string(run) + ".ckpt");
        nn::save_checkpoint(path, result.best);
        auto rec = path_detail::evaluate_run(result.best, pd, setting_name(s), run, seed);
        rec.checkpoint = path.string();
        rec.best_epoch = result.best_epoch.value_or(0);
        if (before) {
          rec.frozen_before = before;
          rec.frozen_after = nn::frozen_checksum(result.best);
        }
        path_detail::log(hooks, "tps[" + arch.name + "]: " + setting_name(s) + " run " + std::to_string(run) +
                                    " balanced A " + std::to_string(rec.balanced_a) + " B " +
                                    std::to_string(rec.balanced_b));
        if (hooks.on_record) hooks.on_record(rec);
        out[job] = std::move(rec);
      });
      std::lock_guard lock(mu);
      for (std::size_t p = 0; p < phase.size(); ++p) {
        const std::span<const RunRecord> rows(out.data() + p * kRunsPerSetting, kRunsPerSetting);
        const std::size_t peak = select_peak(rows);
        const auto& peak_rec = rows[peak - 1];
        const auto peak_file = path_detail::peak_path(dir, phase[p]);
        std::filesystem::copy_file(peak_rec.checkpoint, peak_file, std::filesystem::copy_options::overwrite_existing);
        rep.peak_checkpoints[setting_name(phase[p])] = peak_rec.checkpoint;
        rep.records.insert(rep.records.end(), rows.begin(), rows.end());
      }
    };

    // Phase 1 trains from scratch; phase 2 fine-tunes the phase-1 peaks.
    std::vector<std::size_t> phase1, phase2;
    for (std::size_t s : {1, 3, 4})
      if (has(s)) phase1.push_back(s);
    for (std::size_t s : {2, 5})
      if (has(s)) phase2.push_back(s);
    if (!phase1.empty()) run_jobs(phase1);
    if (!phase2.empty()) run_jobs(phase2);

    std::stable_sort(rep.records.begin(), rep.records.end(),
                     [](const RunRecord& x, const RunRecord& y) { return x.setting < y.setting; });
    finalize(rep, cfg);
    if (rep.chosen) path_detail::log(hooks, "tps[" + arch.name + "]: chosen pathway " + *rep.chosen);
    report.architectures.push_back(std::move(rep));
  }
  return report;
}

// ---------------------------------------------------------------------------
// Serialization

inline nlohmann::json to_json(const RunRecord& r) {
  nlohmann::json j = {{"setting", r.setting},       {"run", r.run},           {"seed", r.seed},
                      {"accF1_A", r.acc_f1_a},      {"accF2_A", r.acc_f2_a},  {"balanced_A", r.balanced_a},
                      {"accF1_B", r.acc_f1_b},      {"accF2_B", r.acc_f2_b},  {"balanced_B", r.balanced_b},
                      {"checkpoint", r.checkpoint}, {"best_epoch", r.best_epoch}};
  if (r.frozen_before) j["frozen_checksum_before"] = hex64(*r.frozen_before);
  if (r.frozen_after) j["frozen_checksum_after"] = hex64(*r.frozen_after);
  return j;
}

inline std::uint64_t parse_hex64(const std::string& s) { return std::stoull(s, nullptr, 16); }

inline RunRecord record_from_json(const nlohmann::json& j) {
  RunRecord r;
  r.setting = j.at("setting").get<std::string>();
  r.run = j.at("run").get<std::size_t>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.acc_f1_a = j.at("accF1_A").get<double>();
  r.acc_f2_a = j.at("accF2_A").get<double>();
  r.balanced_a = j.at("balanced_A").get<double>();
  r.acc_f1_b = j.at("accF1_B").get<double>();
  r.acc_f2_b = j.at("accF2_B").get<double>();
  r.balanced_b = j.at("balanced_B").get<double>();
  r.checkpoint = j.value("checkpoint", "");
  r.best_epoch = j.value("best_epoch", std::size_t{0});
  if (j.contains("frozen_checksum_before")) r.frozen_before = parse_hex64(j.at("frozen_checksum_before"));
  if (j.contains("frozen_checksum_after")) r.frozen_after = parse_hex64(j.at("frozen_checksum_after"));
  return r;
}

inline nlohmann::json to_json(const SettingAggregate& g) {
  return {{"setting", g.setting}, {"mean_A", g.mean_a}, {"std_A", g.std_a},     {"mean_B", g.mean_b},
          {"std_B", g.std_b},     {"peak_run", g.peak_run}, {"leveraged", leveraged_score(g)}};
}

inline SettingAggregate aggregate_from_json(const nlohmann::json& j) {
  return {j.at("setting").get<std::string>(), j.at("mean_A").get<double>(), j.at("std_A").get<double>(),
          j.at("mean_B").get<double>(),       j.at("std_B").get<double>(),  j.at("peak_run").get<std::size_t>()};
}

template <class Range>
nlohmann::json json_array(const Range& xs) {
  nlohmann::json a = nlohmann::json::array();
  for (const auto& x : xs) a.push_back(to_json(x));
  return a;
}

inline nlohmann::json to_json(const PsaReport& r) {
  nlohmann::json j = {{"records", json_array(r.records)}, {"aggregates", json_array(r.aggregates)}};
  if (r.chosen)
    j["chosen"] = {{"scheme", std::string(to_string(*r.chosen))},
                   {"peak_run", r.chosen_peak_run},
                   {"checkpoint", r.chosen_checkpoint}};
  else
    j["chosen"] = nullptr;
  return j;
}

inline nlohmann::json to_json(const ArchReport& r) {
  nlohmann::json j = {{"architecture", r.architecture},
                      {"records", json_array(r.records)},
                      {"aggregates", json_array(r.aggregates)},
                      {"peak_checkpoints", r.peak_checkpoints}};
  if (r.chosen)
    j["chosen"] = {{"setting", *r.chosen}, {"checkpoint", r.chosen_checkpoint}};
  else
    j["chosen"] = nullptr;
  return j;
}

inline nlohmann::json to_json(const TpsReport& r) {
  return {{"scheme", std::string(to_string(r.scheme))}, {"architectures", json_array(r.architectures)}};
}

/// Per-run table in the layout: setting,run,accF1_A,accF2_A,balanced_A,accF1_B,accF2_B,balanced_B
inline std::string records_csv(std::span<const RunRecord> records) {
  std::ostringstream out;
  out << "setting,run,accF1_A,accF2_A,balanced_A,accF1_B,accF2_B,balanced_B\n";
  out.setf(std::ios::fixed);
  out.precision(4);
  for (const auto& r : records)
    out << r.setting << ',' << r.run << ',' << r.acc_f1_a << ',' << r.acc_f2_a << ',' << r.balanced_a << ','
        << r.acc_f1_b << ',' << r.acc_f2_b << ',' << r.balanced_b << '\n';
  return out.str();
}

}  // namespace dcf
