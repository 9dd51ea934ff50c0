#pragma once

#include "gfnal/acquisition.hpp"
#include "gfnal/csv.hpp"
#include "gfnal/embedding.hpp"
#include "gfnal/gflownet.hpp"
#include "gfnal/grid_env.hpp"
#include "gfnal/oracle.hpp"
#include "gfnal/surrogate.hpp"

#include <cctype>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace gfnal {

enum class Preset { paper, desk };

struct PipelineConfig {
  Preset preset = Preset::paper;
  Strategy strategy = Strategy::gflownet;
  std::int64_t seed = 0;
  int al_iterations = 20;
  int acquisition_size = 10;
  int initial_size = 100;
  int test_size = 100;
  bool warm_start_policy = true;
  int checkpoint_keep = 2;  // newest N kept; -1 keeps all, 0 writes none
  bool log_episodes = true;
};

/// Fault injection for exercising abort and resume paths.
struct DebugConfig {
  int fail_at_iteration = -1;
};

struct AnalyzeConfig {
  int episodes = 0;  // 0 = run until the last snapshot episode
};

/// Every tunable of an experiment. Field defaults are the paper preset.
struct ExperimentConfig {
  PipelineConfig pipeline;
  OracleConfig oracle;
  std::int64_t oracle_seed = -1;  // -1 = use pipeline.seed
  PosEncConfig posenc;
  AutoencoderConfig autoencoder;
  SurrogateConfig surrogate;
  MixupConfig mixup;
  PolicyConfig policy;
  GfnConfig gfn;
  double reward_floor = 1e-6;
  MaskConfig mask;
  AnalyzeConfig analyze;
  DebugConfig debug;

  [[nodiscard]] std::uint64_t master_seed() const noexcept { return static_cast<std::uint64_t>(pipeline.seed); }

  /// Copies shared dimensions into the sub-configs that consume them.
  [[nodiscard]] ExperimentConfig resolved() const {
    ExperimentConfig c = *this;
    c.oracle.seed = oracle_seed < 0 ? master_seed() : static_cast<std::uint64_t>(oracle_seed);
    c.oracle.train_size = pipeline.initial_size;
    c.oracle.test_size = pipeline.test_size;
    c.autoencoder.posenc = posenc;
    c.surrogate.input_dim = autoencoder.latent;
    c.policy.input_dim = autoencoder.latent;
    return c;
  }

  [[nodiscard]] GridEnv env() const { return GridEnv{oracle.grid_size, mask}; }
};

inline ExperimentConfig paper_preset() { return ExperimentConfig{}; }

/// Reduced-cost preset for CI and desk-scale reproduction.
inline ExperimentConfig desk_preset() {
  ExperimentConfig c;
  c.pipeline.preset = Preset::desk;
  c.gfn.episodes = 5000;
  c.mask.min_length = 10;
  c.mask.max_length = 40;
  c.autoencoder.hidden = 128;
  c.policy.hidden = 64;
  c.policy.layers = 2;
  c.policy.heads = 4;
  c.policy.ff_dim = 256;
  // the smaller policy needs a larger step to move in 5000 episodes
  c.policy.dropout = 0.0;
  c.gfn.learning_rate = 1e-3;
  // analysis runs one long step; AL iterations stop at gfn.episodes
  c.gfn.snapshot_episodes = {1000, 10000, 50000};
  c.gfn.density_window = 2000;
  return c;
}

class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string key, const std::string& msg) : std::runtime_error(key.empty() ? msg : key + ": " + msg), key_(std::move(key)) {}
  [[nodiscard]] const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

using ConfigValue = std::variant<std::int64_t, double, bool, std::string, std::vector<std::int64_t>>;

namespace config_detail {

struct Entry {
  std::string key;
  std::function<ConfigValue(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const ConfigValue&)> set;
};

template <class T>
T convert(const std::string& key, const ConfigValue& v) {
  if constexpr (std::is_same_v<T, bool>) {
    if (auto* b = std::get_if<bool>(&v)) return *b;
    throw ConfigError(key, "expected a boolean");
  } else if constexpr (std::is_integral_v<T>) {
    if (auto* i = std::get_if<std::int64_t>(&v)) {
      if (std::is_unsigned_v<T> && *i < 0) throw ConfigError(key, "expected a non-negative integer");
      return static_cast<T>(*i);
    }
    throw ConfigError(key, "expected an integer");
  } else if constexpr (std::is_floating_point_v<T>) {
    if (auto* d = std::get_if<double>(&v)) return *d;
    if (auto* i = std::get_if<std::int64_t>(&v)) return static_cast<double>(*i);
    throw ConfigError(key, "expected a number");
  } else if constexpr (std::is_same_v<T, std::vector<int>>) {
    if (auto* a = std::get_if<std::vector<std::int64_t>>(&v)) return std::vector<int>(a->begin(), a->end());
    throw ConfigError(key, "expected an integer array");
  } else {
    if (auto* s = std::get_if<std::string>(&v)) return *s;
    throw ConfigError(key, "expected a string");
  }
}

template <class T>
ConfigValue wrap(const T& v) {
  if constexpr (std::is_same_v<T, bool>) return v;
  else if constexpr (std::is_integral_v<T>) return static_cast<std::int64_t>(v);
  else if constexpr (std::is_floating_point_v<T>) return static_cast<double>(v);
  else if constexpr (std::is_same_v<T, std::vector<int>>) return std::vector<std::int64_t>(v.begin(), v.end());
  else return std::string(v);
}

template <class T, class Access>
Entry field(std::string key, Access access) {
  return {key, [access](const ExperimentConfig& c) { return wrap(access(const_cast<ExperimentConfig&>(c))); },
          [access, key](ExperimentConfig& c, const ConfigValue& v) { access(c) = convert<T>(key, v); }};
}

#define GFNAL_FIELD(key, expr) \
  field<std::remove_cvref_t<decltype(std::declval<ExperimentConfig&>().expr)>>(key, [](ExperimentConfig& c) -> auto& { return c.expr; })

inline const std::vector<Entry>& registry() {
  static const std::vector<Entry> entries = [] {
    std::vector<Entry> e;
    e.push_back({"pipeline.preset",
                 [](const ExperimentConfig& c) -> ConfigValue { return std::string(c.pipeline.preset == Preset::paper ? "paper" : "desk"); },
                 [](ExperimentConfig& c, const ConfigValue& v) {
                   const auto s = convert<std::string>("pipeline.preset", v);
                   if (s == "paper") c.pipeline.preset = Preset::paper;
                   else if (s == "desk") c.pipeline.preset = Preset::desk;
                   else throw ConfigError("pipeline.preset", "expected \"paper\" or \"desk\"");
                 }});
    e.push_back({"pipeline.strategy",
                 [](const ExperimentConfig& c) -> ConfigValue { return std::string(to_string(c.pipeline.strategy)); },
                 [](ExperimentConfig& c, const ConfigValue& v) {
                   try {
                     c.pipeline.strategy = parse_strategy(convert<std::string>("pipeline.strategy", v));
                   } catch (const std::invalid_argument& err) {
                     throw ConfigError("pipeline.strategy", err.what());
                   }
                 }});
    e.push_back(GFNAL_FIELD("pipeline.seed", pipeline.seed));
    e.push_back(GFNAL_FIELD("pipeline.al_iterations", pipeline.al_iterations));
    e.push_back(GFNAL_FIELD("pipeline.acquisition_size", pipeline.acquisition_size));
    e.push_back(GFNAL_FIELD("pipeline.initial_size", pipeline.initial_size));
    e.push_back(GFNAL_FIELD("pipeline.test_size", pipeline.test_size));
    e.push_back(GFNAL_FIELD("pipeline.warm_start_policy", pipeline.warm_start_policy));
    e.push_back(GFNAL_FIELD("pipeline.checkpoint_keep", pipeline.checkpoint_keep));
    e.push_back(GFNAL_FIELD("pipeline.log_episodes", pipeline.log_episodes));
    e.push_back(GFNAL_FIELD("oracle.grid_size", oracle.grid_size));
    e.push_back(GFNAL_FIELD("oracle.noise_sigma", oracle.noise_sigma));
    e.push_back(GFNAL_FIELD("oracle.label_quantile", oracle.label_quantile));
    e.push_back(GFNAL_FIELD("oracle.seed", oracle_seed));
    e.push_back(GFNAL_FIELD("posenc.dim", posenc.dim));
    e.push_back(GFNAL_FIELD("posenc.base", posenc.base));
    e.push_back(GFNAL_FIELD("autoencoder.hidden", autoencoder.hidden));
    e.push_back(GFNAL_FIELD("autoencoder.layers", autoencoder.layers));
    e.push_back(GFNAL_FIELD("autoencoder.latent", autoencoder.latent));
    e.push_back(GFNAL_FIELD("autoencoder.triplet_weight", autoencoder.triplet_weight));
    e.push_back(GFNAL_FIELD("autoencoder.margin", autoencoder.margin));
    e.push_back(GFNAL_FIELD("autoencoder.learning_rate", autoencoder.learning_rate));
    e.push_back(GFNAL_FIELD("autoencoder.epochs", autoencoder.epochs));
    e.push_back(GFNAL_FIELD("autoencoder.batch_size", autoencoder.batch_size));
    e.push_back(GFNAL_FIELD("autoencoder.positive_radius", autoencoder.triplets.positive_radius));
    e.push_back(GFNAL_FIELD("autoencoder.negative_min_distance", autoencoder.triplets.negative_min_distance));
    e.push_back(GFNAL_FIELD("surrogate.hidden", surrogate.hidden));
    e.push_back(GFNAL_FIELD("surrogate.hidden_layers", surrogate.hidden_layers));
    e.push_back(GFNAL_FIELD("surrogate.dropout", surrogate.dropout));
    e.push_back(GFNAL_FIELD("surrogate.mc_passes", surrogate.mc_passes));
    e.push_back(GFNAL_FIELD("surrogate.learning_rate", surrogate.learning_rate));
    e.push_back(GFNAL_FIELD("surrogate.weight_decay", surrogate.weight_decay));
    e.push_back(GFNAL_FIELD("surrogate.epochs", surrogate.epochs));
    e.push_back(GFNAL_FIELD("surrogate.batch_size", surrogate.batch_size));
    e.push_back(GFNAL_FIELD("mixup.enabled", mixup.enabled));
    e.push_back(GFNAL_FIELD("mixup.target_ratio", mixup.target_ratio));
    e.push_back(GFNAL_FIELD("policy.hidden", policy.hidden));
    e.push_back(GFNAL_FIELD("policy.layers", policy.layers));
    e.push_back(GFNAL_FIELD("policy.heads", policy.heads));
    e.push_back(GFNAL_FIELD("policy.ff_dim", policy.ff_dim));
    e.push_back(GFNAL_FIELD("policy.dropout", policy.dropout));
    e.push_back(GFNAL_FIELD("policy.leaky_slope", policy.leaky_slope));
    e.push_back(GFNAL_FIELD("gfn.learning_rate", gfn.learning_rate));
    e.push_back(GFNAL_FIELD("gfn.episodes", gfn.episodes));
    e.push_back(GFNAL_FIELD("gfn.initial_partition", gfn.initial_partition));
    e.push_back(GFNAL_FIELD("gfn.epsilon_greedy", gfn.explore.epsilon_greedy));
    e.push_back(GFNAL_FIELD("gfn.reward_floor", reward_floor));
    e.push_back(GFNAL_FIELD("gfn.snapshot_episodes", gfn.snapshot_episodes));
    e.push_back(GFNAL_FIELD("gfn.density_window", gfn.density_window));
    e.push_back(GFNAL_FIELD("mask.min_length", mask.min_length));
    e.push_back(GFNAL_FIELD("mask.max_length", mask.max_length));
    e.push_back(GFNAL_FIELD("mask.eps_stop", mask.eps_stop));
    e.push_back(GFNAL_FIELD("mask.forbid_backtrack", mask.forbid_backtrack));
    e.push_back(GFNAL_FIELD("mask.depth_aware_stop", mask.depth_aware_stop));
    e.push_back(GFNAL_FIELD("analyze.episodes", analyze.episodes));
    e.push_back(GFNAL_FIELD("debug.fail_at_iteration", debug.fail_at_iteration));
    return e;
  }();
  return entries;
}

#undef GFNAL_FIELD

inline const Entry& lookup(const std::string& key) {
  for (const auto& e : registry())
    if (e.key == key) return e;
  throw ConfigError(key, "unknown configuration key");
}

inline std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline bool is_integer(const std::string& s) {
  std::size_t k = (s[0] == '+' || s[0] == '-') ? 1 : 0;
  if (k >= s.size()) return false;
  for (; k < s.size(); ++k)
    if (!std::isdigit(static_cast<unsigned char>(s[k])) && s[k] != '_') return false;
  return true;
}

inline std::string strip_underscores(std::string s) {
  std::erase(s, '_');
  return s;
}

/// Parses one TOML scalar or integer array. With `bare_strings`, unquoted
/// text that is not a number or boolean is taken as a string (for --set).
inline ConfigValue parse_value(const std::string& key, std::string text, bool bare_strings) {
  text = trim(text);
  if (text.empty()) throw ConfigError(key, "missing value");
  if (text.front() == '"') {
    if (text.size() < 2 || text.back() != '"') throw ConfigError(key, "unterminated string");
    return text.substr(1, text.size() - 2);
  }
  if (text == "true") return true;
  if (text == "false") return false;
  if (text.front() == '[') {
    if (text.back() != ']') throw ConfigError(key, "unterminated array");
    std::vector<std::int64_t> out;
    std::istringstream is(text.substr(1, text.size() - 2));
    std::string item;
    while (std::getline(is, item, ',')) {
      item = trim(item);
      if (item.empty()) continue;
      if (!is_integer(item)) throw ConfigError(key, "array items must be integers");
      out.push_back(std::stoll(strip_underscores(item)));
    }
    return out;
  }
  if (is_integer(text)) return static_cast<std::int64_t>(std::stoll(strip_underscores(text)));
  try {
    std::size_t used = 0;
    const double d = std::stod(strip_underscores(text), &used);
    if (used == strip_underscores(text).size()) return d;
  } catch (const std::exception&) {
  }
  if (bare_strings) return text;
  throw ConfigError(key, "cannot parse value '" + text + "'");
}

inline std::string render(const ConfigValue& v) {
  return std::visit(
      [](const auto& x) -> std::string {
        using T = std::decay_t<decltype(x)>;
        if constexpr (std::is_same_v<T, bool>) return x ? "true" : "false";
        else if constexpr (std::is_same_v<T, std::int64_t>) return std::to_string(x);
        else if constexpr (std::is_same_v<T, double>) {
          std::string s = format_double(x);
          if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
          return s;
        } else if constexpr (std::is_same_v<T, std::string>) return "\"" + x + "\"";
        else {
          std::string s = "[";
          for (std::size_t k = 0; k < x.size(); ++k) s += (k ? ", " : "") + std::to_string(x[k]);
          return s + "]";
        }
      },
      v);
}

}  // namespace config_detail

struct KeyValue {
  std::string key;
  ConfigValue value;
};

/// Reads `[section]` headers and `key = value` lines; `#` starts a comment
/// outside strings.
inline std::vector<KeyValue> parse_toml(std::istream& is) {
  std::vector<KeyValue> out;
  std::string line, section;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    bool in_str = false;
    for (std::size_t k = 0; k < line.size(); ++k) {
      if (line[k] == '"') in_str = !in_str;
      if (line[k] == '#' && !in_str) {
        line.resize(k);
        break;
      }
    }
    line = config_detail::trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError("", "line " + std::to_string(lineno) + ": malformed section header");
      section = config_detail::trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("", "line " + std::to_string(lineno) + ": expected key = value");
    const std::string name = config_detail::trim(line.substr(0, eq));
    const std::string key = section.empty() ? name : section + "." + name;
    out.push_back({key, config_detail::parse_value(key, line.substr(eq + 1), false)});
  }
  return out;
}

/// Parses "dotted.key=value" as given to --set.
inline KeyValue parse_override(const std::string& text) {
  const auto eq = text.find('=');
  if (eq == std::string::npos) throw ConfigError(text, "override must look like key=value");
  const std::string key = config_detail::trim(text.substr(0, eq));
  return {key, config_detail::parse_value(key, text.substr(eq + 1), true)};
}

inline void validate(const ExperimentConfig& c) {
  auto need = [](bool ok, const char* key, const char* msg) {
    if (!ok) throw ConfigError(key, msg);
  };
  need(c.pipeline.al_iterations >= 0, "pipeline.al_iterations", "must be non-negative");
  need(c.pipeline.acquisition_size >= 1, "pipeline.acquisition_size", "must be at least 1");
  need(c.pipeline.initial_size >= 1, "pipeline.initial_size", "must be at least 1");
  need(c.pipeline.test_size >= 1, "pipeline.test_size", "must be at least 1");
  need(c.pipeline.seed >= 0, "pipeline.seed", "must be non-negative");
  need(c.oracle.grid_size >= 2, "oracle.grid_size", "must be at least 2");
  need(c.oracle.noise_sigma >= 0.0, "oracle.noise_sigma", "must be non-negative");
  need(c.oracle.label_quantile > 0.0 && c.oracle.label_quantile < 1.0, "oracle.label_quantile", "must lie in (0, 1)");
  const long cells = static_cast<long>(c.oracle.grid_size) * c.oracle.grid_size;
  need(c.pipeline.initial_size + c.pipeline.test_size +
               static_cast<long>(c.pipeline.acquisition_size) * c.pipeline.al_iterations <= cells,
       "pipeline.al_iterations", "acquisitions exceed the unlabeled pool");
  need(c.posenc.dim > 0 && c.posenc.dim % 2 == 0, "posenc.dim", "must be even and positive");
  need(c.autoencoder.latent > 0, "autoencoder.latent", "must be positive");
  need(c.autoencoder.batch_size > 0, "autoencoder.batch_size", "must be positive");
  need(c.autoencoder.margin > 0.0, "autoencoder.margin", "must be positive");
  need(c.autoencoder.triplets.positive_radius > 0 &&
           c.autoencoder.triplets.positive_radius < c.autoencoder.triplets.negative_min_distance,
       "autoencoder.positive_radius", "must be positive and below negative_min_distance");
  need(c.autoencoder.triplets.negative_min_distance <= c.oracle.grid_size, "autoencoder.negative_min_distance",
       "must not exceed the grid size");
  need(c.surrogate.dropout >= 0.0 && c.surrogate.dropout < 1.0, "surrogate.dropout", "must lie in [0, 1)");
  need(c.surrogate.mc_passes >= 1, "surrogate.mc_passes", "must be at least 1");
  need(c.surrogate.batch_size > 0, "surrogate.batch_size", "must be positive");
  need(c.mixup.target_ratio > 0.0, "mixup.target_ratio", "must be positive");
  need(c.policy.heads > 0 && c.policy.hidden % c.policy.heads == 0, "policy.heads", "must divide policy.hidden");
  need(c.policy.dropout >= 0.0 && c.policy.dropout < 1.0, "policy.dropout", "must lie in [0, 1)");
  need(c.gfn.explore.epsilon_greedy >= 0.0 && c.gfn.explore.epsilon_greedy <= 1.0, "gfn.epsilon_greedy", "must lie in [0, 1]");
  need(c.gfn.initial_partition > 0.0, "gfn.initial_partition", "must be positive");
  need(c.gfn.episodes >= 0, "gfn.episodes", "must be non-negative");
  need(c.gfn.density_window > 0, "gfn.density_window", "must be positive");
  need(c.reward_floor > 0.0, "gfn.reward_floor", "must be positive");
  need(c.mask.min_length > 0 && c.mask.min_length <= c.mask.max_length, "mask.min_length", "must satisfy 0 < min_length <= max_length");
  need(c.mask.eps_stop >= 0.0 && c.mask.eps_stop <= 1.0, "mask.eps_stop", "must lie in [0, 1]");
  need(c.analyze.episodes >= 0, "analyze.episodes", "must be non-negative");
}

/// Starts from the preset named by the last pipeline.preset entry (paper if
/// none), then applies every entry in order.
inline ExperimentConfig build_config(const std::vector<KeyValue>& entries) {
  std::string preset = "paper";
  for (const auto& kv : entries)
    if (kv.key == "pipeline.preset") preset = config_detail::convert<std::string>(kv.key, kv.value);
  ExperimentConfig c;
  if (preset == "desk") c = desk_preset();
  else if (preset != "paper") throw ConfigError("pipeline.preset", "expected \"paper\" or \"desk\"");
  for (const auto& kv : entries) config_detail::lookup(kv.key).set(c, kv.value);
  validate(c);
  return c;
}

/// Config file, then --set overrides, then the GFNACT_SEED environment variable.
inline ExperimentConfig load_config(const std::string& path, const std::vector<std::string>& overrides,
                                    const char* env_seed = std::getenv("GFNACT_SEED")) {
  std::vector<KeyValue> entries;
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw ConfigError("", "cannot read config file " + path);
    entries = parse_toml(in);
  }
  for (const auto& o : overrides) entries.push_back(parse_override(o));
  if (env_seed && *env_seed) {
    if (!config_detail::is_integer(env_seed)) throw ConfigError("GFNACT_SEED", "must be an integer");
    entries.push_back({"pipeline.seed", static_cast<std::int64_t>(std::stoll(env_seed))});
  }
  return build_config(entries);
}

inline std::string to_toml(const ExperimentConfig& c, bool include_debug = true) {
  std::ostringstream os;
  std::string section;
  for (const auto& e : config_detail::registry()) {
    if (!include_debug && e.key.starts_with("debug.")) continue;
    const auto dot = e.key.find('.');
    const std::string sec = e.key.substr(0, dot);
    if (sec != section) {
      os << (section.empty() ? "" : "\n") << '[' << sec << "]\n";
      section = sec;
    }
    os << e.key.substr(dot + 1) << " = " << config_detail::render(e.get(c)) << '\n';
  }
  return os.str();
}

/// Hash of the resolved config without debug keys, so a resumed run stamps
/// its files exactly like an uninterrupted one.
inline std::string config_hash(const ExperimentConfig& c) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(to_toml(c, false))));
  return buf;
}

}  // namespace gfnal
