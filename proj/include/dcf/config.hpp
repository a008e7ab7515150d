#pragma once

// Run configuration: one JSON document, validated strictly (unknown keys are
// errors) and normalized so that equal settings hash to the same run id.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#include <nlohmann/json.hpp>

#include "dcf/nn/model.hpp"
#include "dcf/nn/train.hpp"
#include "dcf/padding.hpp"
#include "dcf/pathways.hpp"
#include "dcf/synthdata.hpp"
#include "dcf/util.hpp"

namespace dcf {

inline constexpr int kConfigSchemaVersion = 1;
inline constexpr std::size_t kFullScaleInputSide = 1024;

class ConfigError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

struct ExplainConfig {
  std::size_t samples_per_label = 4;
  std::vector<PaddingScheme> schemes{kAllSchemes.begin(), kAllSchemes.end()};
  std::size_t profile_bins = 256;
};

struct RunConfig {
  std::uint64_t base_seed = 1;
  std::string output_dir = "runs";
  std::optional<std::string> data_root;  // default: <run dir>/data
  GenConfig gen;
  SplitSpec split_a{0.292, 7};
  SplitSpec split_b{0.264, 7};
  nn::ModelSpec model;
  nn::TrainConfig train;
  bool psa_enabled = true;
  std::vector<PaddingScheme> psa_schemes{kAllSchemes.begin(), kAllSchemes.end()};
  bool psa_train_per_scheme = false;
  LeverageRule rule = LeverageRule::kSum;
  std::vector<std::size_t> tps_settings = {1, 2, 3, 4, 5};
  std::vector<Architecture> architectures;  // empty: one architecture from `model`
  std::size_t freeze_tail = 2;
  std::optional<PaddingScheme> tps_padding;  // overrides the PSA choice
  std::map<std::size_t, PaddingScheme> padding_override;
  ExplainConfig explain;

  PsaConfig psa_config() const {
    return {psa_schemes, psa_train_per_scheme, model, train, base_seed, rule};
  }
  TpsConfig tps_config() const {
    TpsConfig c;
    c.settings = tps_settings;
    c.architectures = architectures.empty() ? std::vector<Architecture>{{"mini-resnet", model}} : architectures;
    c.train = train;
    c.freeze_tail = freeze_tail;
    c.padding_override = padding_override;
    c.base_seed = base_seed;
    c.rule = rule;
    return c;
  }
};

namespace cfg_detail {

inline void check_keys(const nlohmann::json& j, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw ConfigError(where + ": unknown key '" + key + "'");
  }
}

template <class V>
void read(const nlohmann::json& j, const char* key, V& dst, const std::string& where) {
  if (!j.contains(key)) return;
  if constexpr (std::is_unsigned_v<V> && !std::is_same_v<V, bool>)
    if (j.at(key).is_number() && j.at(key).get<double>() < 0.0) throw ConfigError(where + "." + key + ": must be >= 0");
  try {
    dst = j.at(key).get<V>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(where + "." + key + ": wrong type");
  }
}

inline PaddingScheme scheme_from(const nlohmann::json& j, const std::string& where) {
  if (!j.is_string()) throw ConfigError(where + ": padding scheme must be a string");
  const auto s = parse_scheme(j.get<std::string>());
  if (!s) throw ConfigError(where + ": unknown padding scheme '" + j.get<std::string>() + "'");
  return *s;
}

inline std::vector<PaddingScheme> schemes_from(const nlohmann::json& j, const std::string& where) {
  if (!j.is_array() || j.empty()) throw ConfigError(where + ": expected a non-empty array of schemes");
  std::vector<PaddingScheme> out;
  for (const auto& x : j) {
    const auto s = scheme_from(x, where);
    if (std::find(out.begin(), out.end(), s) != out.end()) throw ConfigError(where + ": duplicate scheme");
    out.push_back(s);
  }
  return out;
}

inline nlohmann::json schemes_json(const std::vector<PaddingScheme>& v) {
  nlohmann::json a = nlohmann::json::array();
  for (auto s : v) a.push_back(std::string(to_string(s)));
  return a;
}

inline std::vector<nn::StageSpec> stages_from(const nlohmann::json& j, const std::string& where) {
  if (!j.is_array() || j.empty()) throw ConfigError(where + ": expected a non-empty array of [channels, blocks]");
  std::vector<nn::StageSpec> out;
  for (const auto& st : j) {
    if (!st.is_array() || st.size() != 2 || !st[0].is_number_integer() || !st[1].is_number_integer() ||
        st[0].get<std::int64_t>() < 0 || st[1].get<std::int64_t>() < 0)
      throw ConfigError(where + ": each stage is [channels, blocks]");
    out.push_back({st[0].get<std::size_t>(), st[1].get<std::size_t>()});
  }
  return out;
}

inline nlohmann::json stages_json(const std::vector<nn::StageSpec>& v) {
  nlohmann::json a = nlohmann::json::array();
  for (const auto& s : v) a.push_back({s.channels, s.blocks});
  return a;
}

inline void read_dataset_spec(const nlohmann::json& j, DatasetGenSpec& d, const std::string& where) {
  check_keys(j, where, {"f1_count", "f2_count", "tail_fraction", "tail_f1_share"});
  read(j, "f1_count", d.f1_count, where);
  read(j, "f2_count", d.f2_count, where);
  read(j, "tail_fraction", d.tail_fraction, where);
  read(j, "tail_f1_share", d.tail_f1_share, where);
}

inline void read_split(const nlohmann::json& j, SplitSpec& s, const std::string& where) {
  check_keys(j, where, {"test_fraction", "shuffle_seed"});
  read(j, "test_fraction", s.test_fraction, where);
  read(j, "shuffle_seed", s.shuffle_seed, where);
}

inline void read_model(const nlohmann::json& j, nn::ModelSpec& m, const std::string& where,
                       std::initializer_list<const char*> extra = {}) {
  std::vector<const char*> keys = {"input_side", "stem_channels", "stem_stride", "stages"};
  keys.insert(keys.end(), extra.begin(), extra.end());
  for (const auto& [key, _] : j.items())
    if (std::find_if(keys.begin(), keys.end(), [&](const char* k) { return key == k; }) == keys.end())
      throw ConfigError(where + ": unknown key '" + key + "'");
  read(j, "input_side", m.input_side, where);
  read(j, "stem_channels", m.stem_channels, where);
  read(j, "stem_stride", m.stem_stride, where);
  if (j.contains("stages")) m.stages = stages_from(j.at("stages"), where + ".stages");
}

}  // namespace cfg_detail

inline nlohmann::json to_json(const nn::ModelSpec& m) {
  return {{"input_side", m.input_side},
          {"stem_channels", m.stem_channels},
          {"stem_stride", m.stem_stride},
          {"stages", cfg_detail::stages_json(m.stages)}};
}

/// Parses and validates a run configuration. Missing keys take defaults.
inline RunConfig parse_run_config(const nlohmann::json& j) {
  using namespace cfg_detail;
  RunConfig c;
  check_keys(j, "config", {"schema_version", "base_seed", "output_dir", "data", "model", "train", "psa", "tps", "explain"});
  if (!j.contains("schema_version")) throw ConfigError("config: schema_version is required");
  if (!j.at("schema_version").is_number_integer() || j.at("schema_version").get<int>() != kConfigSchemaVersion)
    throw ConfigError("config: unsupported schema_version (expected " + std::to_string(kConfigSchemaVersion) + ")");
  read(j, "base_seed", c.base_seed, "config");
  read(j, "output_dir", c.output_dir, "config");

  bool split_a_set = false, split_b_set = false;
  if (j.contains("data")) {
    const auto& d = j.at("data");
    check_keys(d, "data", {"root", "generate", "split"});
    if (d.contains("root")) {
      std::string root;
      read(d, "root", root, "data");
      c.data_root = root;
    }
    if (d.contains("generate")) {
      const auto& g = d.at("generate");
      check_keys(g, "data.generate",
                 {"seed", "A", "B", "height_min", "height_max", "aspect_min", "aspect_max", "drift", "noise",
                  "blur_radius", "gain_min", "gain_max"});
      read(g, "seed", c.gen.seed, "data.generate");
      if (g.contains("A")) read_dataset_spec(g.at("A"), c.gen.a, "data.generate.A");
      if (g.contains("B")) read_dataset_spec(g.at("B"), c.gen.b, "data.generate.B");
      read(g, "height_min", c.gen.height_min, "data.generate");
      read(g, "height_max", c.gen.height_max, "data.generate");
      read(g, "aspect_min", c.gen.aspect_min, "data.generate");
      read(g, "aspect_max", c.gen.aspect_max, "data.generate");
      read(g, "drift", c.gen.drift, "data.generate");
      read(g, "noise", c.gen.noise, "data.generate");
      read(g, "blur_radius", c.gen.blur_radius, "data.generate");
      read(g, "gain_min", c.gen.gain_min, "data.generate");
      read(g, "gain_max", c.gen.gain_max, "data.generate");
    }
    if (d.contains("split")) {
      const auto& s = d.at("split");
      check_keys(s, "data.split", {"A", "B"});
      if (s.contains("A")) {
        read_split(s.at("A"), c.split_a, "data.split.A");
        split_a_set = s.at("A").contains("test_fraction");
      }
      if (s.contains("B")) {
        read_split(s.at("B"), c.split_b, "data.split.B");
        split_b_set = s.at("B").contains("test_fraction");
      }
    }
  }
  // The test split defaults to the generator's tail block.
  if (!split_a_set) c.split_a.test_fraction = c.gen.a.tail_fraction;
  if (!split_b_set) c.split_b.test_fraction = c.gen.b.tail_fraction;

  if (j.contains("model")) read_model(j.at("model"), c.model, "model");
  if (j.contains("train")) {
    const auto& t = j.at("train");
    check_keys(t, "train",
               {"lr", "weight_decay", "beta1", "beta2", "eps", "batch_size", "epochs", "augment", "max_rotation"});
    read(t, "lr", c.train.adam.lr, "train");
    read(t, "weight_decay", c.train.adam.weight_decay, "train");
    read(t, "beta1", c.train.adam.beta1, "train");
    read(t, "beta2", c.train.adam.beta2, "train");
    read(t, "eps", c.train.adam.eps, "train");
    read(t, "batch_size", c.train.batch_size, "train");
    read(t, "epochs", c.train.epochs, "train");
    read(t, "augment", c.train.augment, "train");
    read(t, "max_rotation", c.train.max_rotation, "train");
  }
  if (j.contains("psa")) {
    const auto& p = j.at("psa");
    check_keys(p, "psa", {"enabled", "schemes", "train_per_scheme", "rule"});
    read(p, "enabled", c.psa_enabled, "psa");
    if (p.contains("schemes")) c.psa_schemes = schemes_from(p.at("schemes"), "psa.schemes");
    read(p, "train_per_scheme", c.psa_train_per_scheme, "psa");
    if (p.contains("rule")) {
      std::string r;
      read(p, "rule", r, "psa");
      const auto rule = parse_leverage_rule(r);
      if (!rule) throw ConfigError("psa.rule: expected 'sum' or 'min-then-sum'");
      c.rule = *rule;
    }
  }
  if (j.contains("tps")) {
    const auto& t = j.at("tps");
    check_keys(t, "tps", {"settings", "architectures", "freeze_tail", "padding", "padding_override"});
    if (t.contains("settings")) {
      const auto& s = t.at("settings");
      if (!s.is_array() || s.empty()) throw ConfigError("tps.settings: expected a non-empty array");
      c.tps_settings.clear();
      for (const auto& x : s) {
        if (!x.is_number_integer() || x.get<std::int64_t>() < 1 || x.get<std::int64_t>() > std::int64_t(kNumSettings))
          throw ConfigError("tps.settings: entries must be integers 1..5");
        if (std::find(c.tps_settings.begin(), c.tps_settings.end(), x.get<std::size_t>()) != c.tps_settings.end())
          throw ConfigError("tps.settings: duplicate setting");
        c.tps_settings.push_back(x.get<std::size_t>());
      }
    }
    if (t.contains("architectures")) {
      const auto& a = t.at("architectures");
      if (!a.is_array() || a.empty()) throw ConfigError("tps.architectures: expected a non-empty array");
      for (const auto& x : a) {
        Architecture arch{"", c.model};
        read_model(x, arch.spec, "tps.architectures[]", {"name"});
        read(x, "name", arch.name, "tps.architectures[]");
        if (arch.name.empty() || arch.name.find_first_of("/\\") != std::string::npos)
          throw ConfigError("tps.architectures[]: a plain, non-empty name is required");
        c.architectures.push_back(arch);
      }
    }
    read(t, "freeze_tail", c.freeze_tail, "tps");
    if (t.contains("padding") && !t.at("padding").is_null()) c.tps_padding = scheme_from(t.at("padding"), "tps.padding");
    if (t.contains("padding_override")) {
      const auto& o = t.at("padding_override");
      if (!o.is_object()) throw ConfigError("tps.padding_override: expected an object");
      for (const auto& [key, val] : o.items()) {
        const auto s = parse_setting(key);
        if (!s) throw ConfigError("tps.padding_override: unknown setting '" + key + "'");
        c.padding_override[*s] = scheme_from(val, "tps.padding_override." + key);
      }
    }
  }
  if (j.contains("explain")) {
    const auto& e = j.at("explain");
    check_keys(e, "explain", {"samples_per_label", "schemes", "profile_bins"});
    read(e, "samples_per_label", c.explain.samples_per_label, "explain");
    if (e.contains("schemes")) c.explain.schemes = schemes_from(e.at("schemes"), "explain.schemes");
    read(e, "profile_bins", c.explain.profile_bins, "explain");
  }

  try {
    validate(c.gen);
    nn::validate(c.model);
    nn::validate(c.train);
    for (const auto& a : c.architectures) nn::validate(a.spec);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  for (const auto* s : {&c.split_a, &c.split_b})
    if (!(s->test_fraction > 0.0 && s->test_fraction < 1.0)) throw ConfigError("data.split: test_fraction must be in (0,1)");
  if (c.freeze_tail < 1) throw ConfigError("tps.freeze_tail must be >= 1");
  if (c.explain.profile_bins < 1 || 256 % c.explain.profile_bins != 0)
    throw ConfigError("explain.profile_bins must divide 256");
  return c;
}

/// Normalized form with every default spelled out.
inline nlohmann::json to_json(const RunConfig& c) {
  using namespace cfg_detail;
  auto ds = [](const DatasetGenSpec& d) {
    return nlohmann::json{{"f1_count", d.f1_count},
                          {"f2_count", d.f2_count},
                          {"tail_fraction", d.tail_fraction},
                          {"tail_f1_share", d.tail_f1_share}};
  };
  auto sp = [](const SplitSpec& s) {
    return nlohmann::json{{"test_fraction", s.test_fraction}, {"shuffle_seed", s.shuffle_seed}};
  };
  nlohmann::json data = {
      {"generate",
       {{"seed", c.gen.seed},
        {"A", ds(c.gen.a)},
        {"B", ds(c.gen.b)},
        {"height_min", c.gen.height_min},
        {"height_max", c.gen.height_max},
        {"aspect_min", c.gen.aspect_min},
        {"aspect_max", c.gen.aspect_max},
        {"drift", c.gen.drift},
        {"noise", c.gen.noise},
        {"blur_radius", c.gen.blur_radius},
        {"gain_min", c.gen.gain_min},
        {"gain_max", c.gen.gain_max}}},
      {"split", {{"A", sp(c.split_a)}, {"B", sp(c.split_b)}}}};
  if (c.data_root) data["root"] = *c.data_root;
  nlohmann::json archs = nlohmann::json::array();
  for (const auto& a : c.architectures) {
    auto j = to_json(a.spec);
    j["name"] = a.name;
    archs.push_back(j);
  }
  nlohmann::json overrides = nlohmann::json::object();
  for (const auto& [s, p] : c.padding_override) overrides[std::to_string(s)] = std::string(to_string(p));
  return {{"schema_version", kConfigSchemaVersion},
          {"base_seed", c.base_seed},
          {"output_dir", c.output_dir},
          {"data", data},
          {"model", to_json(c.model)},
          {"train",
           {{"lr", c.train.adam.lr},
            {"weight_decay", c.train.adam.weight_decay},
            {"beta1", c.train.adam.beta1},
            {"beta2", c.train.adam.beta2},
            {"eps", c.train.adam.eps},
            {"batch_size", c.train.batch_size},
            {"epochs", c.train.epochs},
            {"augment", c.train.augment},
            {"max_rotation", c.train.max_rotation}}},
          {"psa",
           {{"enabled", c.psa_enabled},
            {"schemes", schemes_json(c.psa_schemes)},
            {"train_per_scheme", c.psa_train_per_scheme},
            {"rule", std::string(to_string(c.rule))}}},
          {"tps",
           {{"settings", c.tps_settings},
            {"architectures", archs},
            {"freeze_tail", c.freeze_tail},
            {"padding", c.tps_padding ? nlohmann::json(std::string(to_string(*c.tps_padding))) : nlohmann::json()},
            {"padding_override", overrides}}},
          {"explain",
           {{"samples_per_label", c.explain.samples_per_label},
            {"schemes", schemes_json(c.explain.schemes)},
            {"profile_bins", c.explain.profile_bins}}}};
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  return parse_run_config(j);
}

/// Switches to the full-resolution classifier input, nothing else.
inline void apply_full_scale(RunConfig& c) {
  c.model.input_side = kFullScaleInputSide;
  for (auto& a : c.architectures) a.spec.input_side = kFullScaleInputSide;
}

/// Content hash of the normalized config (which includes the base seed).
inline std::string run_id(const RunConfig& c) { return hex64(fnv1a64(to_json(c).dump())); }

}  // namespace dcf
