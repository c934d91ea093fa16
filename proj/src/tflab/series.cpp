#include "tflab/series.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include <fmt/format.h>

#include "tflab/error.hpp"
#include "tflab/random.hpp"

namespace tflab {

const char* frequency_name(Frequency f) {
  switch (f) {
    case Frequency::S: return "S";
    case Frequency::T: return "T";
    case Frequency::D: return "D";
    case Frequency::W: return "W";
    case Frequency::M: return "M";
    case Frequency::Q: return "Q";
    case Frequency::Y: return "Y";
    case Frequency::unknown: return "unknown";
  }
  return "unknown";
}

Frequency parse_frequency(const std::string& text) {
  static const std::map<std::string, Frequency> table = {
      {"S", Frequency::S}, {"T", Frequency::T}, {"D", Frequency::D}, {"W", Frequency::W},
      {"M", Frequency::M}, {"Q", Frequency::Q}, {"Y", Frequency::Y}, {"unknown", Frequency::unknown}};
  auto it = table.find(text);
  if (it == table.end()) fail(ErrorKind::usage, "unknown frequency tag '" + text + "'");
  return it->second;
}

std::size_t SeriesSet::total_obs() const {
  std::size_t n = 0;
  for (const auto& s : series) n += s.size();
  return n;
}

const Series& SeriesSet::find(const std::string& id) const {
  for (const auto& s : series)
    if (s.id == id) return s;
  fail(ErrorKind::data, "no series with id '" + id + "'");
}

// ----------------------------------------------------------------------------
// CSV

namespace {

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::stringstream ss(line);
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

bool parse_number(const std::string& s, double& out) {
  if (s.empty()) return false;
  char* end = nullptr;
  out = std::strtod(s.c_str(), &end);
  return end == s.c_str() + s.size();
}

struct Row {
  std::string timestamp;
  double value;
  std::size_t line;
};

}  // namespace

SeriesSet parse_csv(const std::string& text, const std::string& name) {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  bool have_header = false, with_cap = false;
  std::vector<std::string> order;
  std::map<std::string, std::vector<Row>> rows;
  std::map<std::string, std::optional<double>> caps;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty()) continue;
    auto fields = split_fields(line);
    for (auto& f : fields) f = trim(f);
    if (!have_header) {
      const bool base = fields.size() >= 3 && fields[0] == "series_id" &&
                        fields[1] == "timestamp" && fields[2] == "value";
      with_cap = fields.size() == 4 && fields[3] == "market_cap";
      if (!base || (fields.size() != 3 && !with_cap)) {
        fail(ErrorKind::parse, fmt::format("line {}: expected header "
                                           "series_id,timestamp,value[,market_cap]",
                                           lineno));
      }
      have_header = true;
      continue;
    }
    const std::size_t expected = with_cap ? 4 : 3;
    if (fields.size() != expected) {
      fail(ErrorKind::parse,
           fmt::format("line {}: expected {} fields, found {}", lineno, expected, fields.size()));
    }
    if (fields[0].empty()) fail(ErrorKind::parse, fmt::format("line {}: empty series_id", lineno));
    double v = 0.0;
    if (!parse_number(fields[2], v)) {
      fail(ErrorKind::parse, fmt::format("line {}: value '{}' is not a number", lineno, fields[2]));
    }
    if (!std::isfinite(v)) {
      fail(ErrorKind::parse, fmt::format("line {}: non-finite value '{}'", lineno, fields[2]));
    }
    if (!rows.count(fields[0])) order.push_back(fields[0]);
    rows[fields[0]].push_back({fields[1], v, lineno});
    if (with_cap && !fields[3].empty()) {
      double c = 0.0;
      if (!parse_number(fields[3], c) || !std::isfinite(c)) {
        fail(ErrorKind::parse,
             fmt::format("line {}: market_cap '{}' is not a finite number", lineno, fields[3]));
      }
      caps[fields[0]] = c;
    }
  }
  if (!have_header) fail(ErrorKind::data, "CSV input is empty");
  if (order.empty()) fail(ErrorKind::data, "CSV input has no data rows");

  bool numeric = true;
  for (const auto& [id, rs] : rows)
    for (const auto& r : rs) {
      double dummy = 0.0;
      numeric = numeric && parse_number(r.timestamp, dummy);
    }

  SeriesSet set;
  set.name = name;
  for (const auto& id : order) {
    auto rs = rows[id];
    auto key = [numeric](const Row& r) {
      double d = 0.0;
      if (numeric) parse_number(r.timestamp, d);
      return d;
    };
    std::stable_sort(rs.begin(), rs.end(), [&](const Row& a, const Row& b) {
      return numeric ? key(a) < key(b) : a.timestamp < b.timestamp;
    });
    for (std::size_t i = 1; i < rs.size(); ++i) {
      const bool dup = numeric ? key(rs[i]) == key(rs[i - 1]) : rs[i].timestamp == rs[i - 1].timestamp;
      if (dup) {
        fail(ErrorKind::data, fmt::format("line {}: duplicate timestamp '{}' for series '{}'",
                                          rs[i].line, rs[i].timestamp, id));
      }
    }
    Series s;
    s.id = id;
    for (const auto& r : rs) {
      s.timestamps.push_back(r.timestamp);
      s.values.push_back(r.value);
    }
    if (caps.count(id)) s.market_cap = caps[id];
    set.series.push_back(std::move(s));
  }
  return set;
}

SeriesSet load_csv(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail(ErrorKind::io, "cannot open data file " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_csv(ss.str(), path.stem().string());
}

std::string format_csv(const SeriesSet& set) {
  bool with_cap = false;
  for (const auto& s : set.series) with_cap = with_cap || s.market_cap.has_value();
  std::string out = with_cap ? "series_id,timestamp,value,market_cap\n" : "series_id,timestamp,value\n";
  for (const auto& s : set.series) {
    for (std::size_t i = 0; i < s.values.size(); ++i) {
      const std::string ts = i < s.timestamps.size() ? s.timestamps[i] : std::to_string(i);
      out += fmt::format("{},{},{}", s.id, ts, s.values[i]);
      if (with_cap) out += s.market_cap ? fmt::format(",{}", *s.market_cap) : std::string(",");
      out += '\n';
    }
  }
  return out;
}

void write_csv(const SeriesSet& set, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) fail(ErrorKind::io, "cannot write " + path.string());
  f << format_csv(set);
}

// ----------------------------------------------------------------------------
// Synthetic generators

SynthKind parse_synth_kind(const std::string& text) {
  if (text == "ar1") return SynthKind::ar1;
  if (text == "random_walk") return SynthKind::random_walk;
  if (text == "gbm") return SynthKind::gbm;
  if (text == "seasonal_noise") return SynthKind::seasonal_noise;
  fail(ErrorKind::usage,
       "unknown synth kind '" + text + "' (expected ar1, random_walk, gbm, seasonal_noise)");
}

const char* synth_kind_name(SynthKind kind) {
  switch (kind) {
    case SynthKind::ar1: return "ar1";
    case SynthKind::random_walk: return "random_walk";
    case SynthKind::gbm: return "gbm";
    case SynthKind::seasonal_noise: return "seasonal_noise";
  }
  return "unknown";
}

Series synth_generate(SynthKind kind, const SynthParams& p, std::size_t length, std::uint64_t seed,
                      const std::string& id) {
  if (length < 2) fail(ErrorKind::parameter, "synth: length must be >= 2");
  if (!(p.sigma >= 0.0)) fail(ErrorKind::parameter, "synth: sigma must be non-negative");
  Rng rng(seed);
  std::vector<double> x(length);
  switch (kind) {
    case SynthKind::ar1: {
      if (!(std::abs(p.phi) < 1.0)) fail(ErrorKind::parameter, "synth ar1: |phi| must be < 1");
      x[0] = p.sigma / std::sqrt(1.0 - p.phi * p.phi) * gaussian(rng);
      for (std::size_t t = 1; t < length; ++t) x[t] = p.phi * x[t - 1] + p.sigma * gaussian(rng);
      break;
    }
    case SynthKind::random_walk: {
      x[0] = p.x0;
      for (std::size_t t = 1; t < length; ++t) x[t] = x[t - 1] + p.mu + p.sigma * gaussian(rng);
      break;
    }
    case SynthKind::gbm: {
      if (!(p.x0 > 0.0)) fail(ErrorKind::parameter, "synth gbm: x0 must be positive");
      x[0] = p.x0;
      const double drift = p.mu - 0.5 * p.sigma * p.sigma;
      for (std::size_t t = 1; t < length; ++t) {
        x[t] = x[t - 1] * std::exp(drift + p.sigma * gaussian(rng));
      }
      break;
    }
    case SynthKind::seasonal_noise: {
      if (!(p.period > 0.0)) fail(ErrorKind::parameter, "synth seasonal_noise: period must be > 0");
      const double w = 2.0 * std::acos(-1.0) / p.period;
      for (std::size_t t = 0; t < length; ++t) {
        x[t] = p.amplitude * std::sin(w * static_cast<double>(t)) + p.sigma * gaussian(rng);
      }
      break;
    }
  }
  Series s;
  s.id = id;
  s.values = std::move(x);
  s.timestamps.reserve(length);
  for (std::size_t t = 0; t < length; ++t) s.timestamps.push_back(std::to_string(t));
  return s;
}

SeriesSet synth_set(SynthKind kind, const SynthParams& params, std::size_t length,
                    std::size_t count, std::uint64_t seed) {
  if (count == 0) fail(ErrorKind::parameter, "synth: count must be >= 1");
  SeriesSet set;
  set.name = synth_kind_name(kind);
  for (std::size_t i = 0; i < count; ++i) {
    set.series.push_back(synth_generate(kind, params, length, mix_seed(seed, i),
                                        fmt::format("{}_{}", synth_kind_name(kind), i)));
  }
  return set;
}

// ----------------------------------------------------------------------------
// Splits and normalization

Split split_series(const std::vector<double>& values) {
  const std::size_t n = values.size();
  if (n < 10) fail(ErrorKind::data, fmt::format("split: series of length {} is shorter than 10", n));
  const std::size_t n_train = n * 7 / 10, n_val = n / 10;
  Split s;
  s.train.assign(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.val.assign(values.begin() + static_cast<std::ptrdiff_t>(n_train),
               values.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
  s.test.assign(values.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), values.end());
  return s;
}

ZScore fit_zscore(const std::vector<double>& train) {
  if (train.empty()) fail(ErrorKind::data, "zscore: empty training split");
  const double n = static_cast<double>(train.size());
  const double mean = std::accumulate(train.begin(), train.end(), 0.0) / n;
  double var = 0.0;
  for (double x : train) var += (x - mean) * (x - mean);
  const double sd = std::sqrt(var / n);
  if (!(sd > 0.0)) fail(ErrorKind::domain, "zscore: training split has zero variance");
  return {mean, sd};
}

std::vector<double> zscore_normalize(const std::vector<double>& x, const ZScore& stats) {
  std::vector<double> out(x.size());
  std::transform(x.begin(), x.end(), out.begin(), [&](double v) { return stats.apply(v); });
  return out;
}

std::vector<double> zscore_denormalize(const std::vector<double>& z, const ZScore& stats) {
  std::vector<double> out(z.size());
  std::transform(z.begin(), z.end(), out.begin(), [&](double v) { return stats.invert(v); });
  return out;
}

std::vector<Tensor> make_panels(const std::vector<std::vector<double>>& series,
                                std::size_t channels) {
  if (channels == 0) fail(ErrorKind::parameter, "make_panels: channels must be >= 1");
  std::vector<Tensor> panels;
  for (std::size_t g = 0; g + channels <= series.size(); g += channels) {
    std::size_t len = series[g].size();
    for (std::size_t c = 1; c < channels; ++c) len = std::min(len, series[g + c].size());
    if (len == 0) continue;
    std::vector<double> v(channels * len);
    for (std::size_t c = 0; c < channels; ++c)
      std::copy_n(series[g + c].begin(), len, v.begin() + static_cast<std::ptrdiff_t>(c * len));
    panels.push_back(Tensor::from_data({channels, len}, std::move(v)));
  }
  return panels;
}

PreparedData prepare_panels(const SeriesSet& set, std::size_t channels) {
  if (set.series.size() < channels) {
    fail(ErrorKind::data, fmt::format("data has {} series, model needs {} channels",
                                      set.series.size(), channels));
  }
  std::vector<std::vector<double>> train, val, test, test_raw;
  std::vector<ZScore> stats;
  for (const auto& s : set.series) {
    Split sp = split_series(s.values);
    const ZScore z = fit_zscore(sp.train);
    stats.push_back(z);
    train.push_back(zscore_normalize(sp.train, z));
    val.push_back(zscore_normalize(sp.val, z));
    test.push_back(zscore_normalize(sp.test, z));
    test_raw.push_back(std::move(sp.test));
  }
  PreparedData d;
  d.train = make_panels(train, channels);
  d.val = make_panels(val, channels);
  d.test = make_panels(test, channels);
  d.test_raw = make_panels(test_raw, channels);
  for (std::size_t g = 0; g + channels <= stats.size(); g += channels) {
    d.stats.emplace_back(stats.begin() + static_cast<std::ptrdiff_t>(g),
                         stats.begin() + static_cast<std::ptrdiff_t>(g + channels));
  }
  return d;
}

}  // namespace tflab
