#include "tflab/config.hpp"

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "tflab/error.hpp"
#include "tflab/timeformer.hpp"

namespace tflab {

const char* key_type_name(KeyType type) {
  switch (type) {
    case KeyType::integer: return "integer";
    case KeyType::real: return "real";
    case KeyType::text: return "text";
    case KeyType::flag: return "flag";
  }
  return "?";
}

const std::vector<KeySpec>& config_keys() {
  using K = KeyType;
  static const std::vector<KeySpec> keys = {
      {"seed", K::integer, "42", "master random seed"},
      {"preset", K::text, "tiny", "model size: tiny, small, base, large"},
      {"config", K::text, "", "flat key = value config file"},
      {"data", K::text, "", "input long-format CSV"},
      {"checkpoint", K::text, "", "input checkpoint"},
      {"out", K::text, "out", "output directory"},
      {"channels", K::integer, "1", "series per model panel"},
      {"patch_len", K::integer, "4", "time points per patch"},
      {"embed_dim", K::integer, "32", "model width D (preset)"},
      {"head_dim", K::integer, "8", "per-head width (preset)"},
      {"heads", K::integer, "4", "attention heads (preset)"},
      {"layers", K::integer, "2", "encoder and decoder blocks (preset)"},
      {"ffn_dim", K::integer, "64", "feed-forward width (preset)"},
      {"dropout", K::real, "0.1", "dropout probability"},
      {"embed_hidden", K::integer, "0", "embedding MLP width, 0 for 4 * embed_dim"},
      {"tau", K::real, "0.1", "InfoNCE temperature"},
      {"sigma_rel", K::real, "0.05", "positive-pair noise relative to patch std"},
      {"mask_mode", K::text, "neg_inf", "attention masking: neg_inf or product"},
      {"lr", K::real, "1e-3", "Adam learning rate"},
      {"batch_size", K::integer, "8", "windows per pretraining step"},
      {"embed_epochs", K::integer, "1", "embedding training epochs"},
      {"embed_batch", K::integer, "32", "patches per embedding step"},
      {"embed_steps", K::integer, "0", "cap on embedding steps, 0 for none"},
      {"steps", K::integer, "500", "pretraining steps"},
      {"tasks", K::text, "16:32,16:16,8:16,8:8", "context:horizon task list"},
      {"schedule", K::text, "round_robin", "task schedule: round_robin or weighted"},
      {"task_weights", K::text, "", "comma-separated weights for the weighted schedule"},
      {"truncate_tail", K::flag, "true", "drop a trailing partial patch instead of failing"},
      {"kind", K::text, "ar1", "synthetic kind: ar1, random_walk, gbm, seasonal_noise"},
      {"phi", K::real, "0.5", "ar1 coefficient"},
      {"sigma", K::real, "1", "innovation scale"},
      {"mu", K::real, "0", "drift per step"},
      {"x0", K::real, "100", "start value for random_walk and gbm"},
      {"period", K::real, "32", "seasonal period"},
      {"amplitude", K::real, "1", "seasonal amplitude"},
      {"len", K::integer, "4096", "synthetic series length"},
      {"count", K::integer, "1", "number of synthetic series"},
      {"freq", K::text, "unknown", "frequency tag for profiles: S, T, D, W, M, Q, Y, unknown"},
      {"max_lag", K::integer, "-1", "ADF lag order, -1 for the Schwert rule", true},
      {"mask_ratios", K::text, "0.125", "comma-separated imputation mask ratios"},
      {"mask_seed", K::integer, "7", "imputation mask seed"},
      {"mask_layout", K::text, "random_points", "imputation mask layout: random_points or block"},
      {"impute_window", K::integer, "32", "imputation window length"},
      {"impute_steps", K::integer, "300", "imputation fine-tuning steps"},
      {"strategies", K::text, "equal,vol,min_variance,markowitz",
       "backtest strategies: equal, cap, vol, min_variance, markowitz, model"},
      {"lookback", K::integer, "100", "backtest lookback days"},
      {"forward", K::integer, "5", "backtest holding days"},
      {"risk_free", K::real, "0", "annual risk-free rate for Sharpe"},
      {"periods_per_year", K::real, "252", "annualization factor"},
      {"risk_aversion", K::real, "1", "Markowitz risk aversion"},
      {"gradcheck_coords", K::integer, "4", "sampled coordinates per tensor, 0 for all"},
  };
  return keys;
}

const KeySpec* find_key(const std::string& name) {
  for (const auto& k : config_keys())
    if (k.name == name) return &k;
  return nullptr;
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

const KeySpec& require_key(const std::string& name) {
  const KeySpec* k = find_key(name);
  if (!k) fail(ErrorKind::usage, "unknown config key '" + name + "'");
  return *k;
}

std::optional<std::int64_t> parse_int(const std::string& v) {
  std::int64_t out = 0;
  const char* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end || v.empty()) return std::nullopt;
  return out;
}

std::optional<double> parse_real(const std::string& v) {
  double out = 0;
  const char* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end || v.empty()) return std::nullopt;
  return out;
}

std::optional<bool> parse_flag(const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  return std::nullopt;
}

}  // namespace

void check_value(const KeySpec& key, const std::string& value) {
  bool ok = true;
  switch (key.type) {
    case KeyType::integer: {
      const auto v = parse_int(value);
      ok = v.has_value() && (key.allow_negative || *v >= 0);
      break;
    }
    case KeyType::real: ok = parse_real(value).has_value(); break;
    case KeyType::flag: ok = parse_flag(value).has_value(); break;
    case KeyType::text: break;
  }
  if (!ok) {
    fail(ErrorKind::usage, fmt::format("config key '{}' expects {} but got '{}'", key.name,
                                       key_type_name(key.type), value));
  }
}

std::map<std::string, std::string> parse_config_text(const std::string& text,
                                                     const std::string& origin) {
  std::map<std::string, std::string> out;
  std::istringstream in(text);
  std::string line;
  for (std::size_t n = 1; std::getline(in, line); ++n) {
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      fail(ErrorKind::usage, fmt::format("{}:{}: expected 'key = value'", origin, n));
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    check_value(require_key(key), value);
    if (!out.emplace(key, value).second) {
      fail(ErrorKind::usage, fmt::format("{}:{}: key '{}' set twice", origin, n, key));
    }
  }
  return out;
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail(ErrorKind::io, "cannot read " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

const std::string& RunConfig::text(const std::string& key) const {
  require_key(key);
  return values_.at(key);
}

std::int64_t RunConfig::integer(const std::string& key) const {
  return *parse_int(text(key));
}

std::size_t RunConfig::count(const std::string& key) const {
  const auto v = integer(key);
  if (v < 0) fail(ErrorKind::usage, fmt::format("config key '{}' must be non-negative", key));
  return static_cast<std::size_t>(v);
}

double RunConfig::real(const std::string& key) const { return *parse_real(text(key)); }

bool RunConfig::flag(const std::string& key) const { return *parse_flag(text(key)); }

std::uint64_t RunConfig::seed() const {
  const auto v = integer("seed");
  if (v < 0) fail(ErrorKind::usage, "seed must be non-negative");
  return static_cast<std::uint64_t>(v);
}

const std::string& RunConfig::source(const std::string& key) const {
  require_key(key);
  return sources_.at(key);
}

std::string RunConfig::to_text() const {
  std::string out;
  for (const auto& k : config_keys()) out += fmt::format("{} = {}\n", k.name, values_.at(k.name));
  return out;
}

RunConfig resolve_config(const std::map<std::string, std::string>& flags,
                         const std::optional<std::string>& file_text,
                         const std::optional<std::string>& env_seed) {
  for (const auto& [k, v] : flags) check_value(require_key(k), v);

  std::map<std::string, std::string> file;
  std::string config_path;
  if (auto it = flags.find("config"); it != flags.end()) config_path = it->second;
  if (file_text) {
    file = parse_config_text(*file_text, config_path.empty() ? "config" : config_path);
  } else if (!config_path.empty()) {
    file = parse_config_text(read_text_file(config_path), config_path);
  }
  if (file.count("config")) fail(ErrorKind::usage, "a config file cannot name another config file");

  RunConfig cfg;
  for (const auto& k : config_keys()) {
    cfg.values_[k.name] = k.default_value;
    cfg.sources_[k.name] = "default";
  }
  auto apply = [&](const std::map<std::string, std::string>& layer, const char* name) {
    for (const auto& [k, v] : layer) {
      cfg.values_[k] = v;
      cfg.sources_[k] = name;
    }
  };

  std::string preset = cfg.values_["preset"];
  if (auto it = file.find("preset"); it != file.end()) preset = it->second;
  if (auto it = flags.find("preset"); it != flags.end()) preset = it->second;
  const ModelConfig pm = ModelConfig::preset(preset);
  apply({{"embed_dim", std::to_string(pm.embed_dim)},
         {"head_dim", std::to_string(pm.head_dim)},
         {"heads", std::to_string(pm.heads)},
         {"layers", std::to_string(pm.layers)},
         {"ffn_dim", std::to_string(pm.ffn_dim)}},
        "preset");

  if (env_seed && !env_seed->empty()) {
    const std::string v = trim(*env_seed);
    if (!parse_int(v) || *parse_int(v) < 0) {
      fail(ErrorKind::usage, "TFLAB_SEED must be a non-negative integer, got '" + v + "'");
    }
    apply({{"seed", v}}, "env");
  }
  apply(file, "file");
  apply(flags, "flag");
  return cfg;
}

RunConfig resolve_config_from_env(const std::map<std::string, std::string>& flags) {
  const char* env = std::getenv("TFLAB_SEED");
  return resolve_config(flags, std::nullopt,
                        env ? std::optional<std::string>(env) : std::nullopt);
}

}  // namespace tflab
