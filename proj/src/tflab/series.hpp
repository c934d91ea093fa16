#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "tflab/tensor.hpp"

namespace tflab {

enum class Frequency { S, T, D, W, M, Q, Y, unknown };

const char* frequency_name(Frequency f);
Frequency parse_frequency(const std::string& text);

struct Series {
  std::string id;
  std::vector<std::string> timestamps;
  std::vector<double> values;
  Frequency frequency = Frequency::unknown;
  std::optional<double> market_cap;

  std::size_t size() const { return values.size(); }
};

struct SeriesSet {
  std::string name;
  std::vector<Series> series;

  std::size_t total_obs() const;
  const Series& find(const std::string& id) const;
};

// Long-format CSV with header "series_id,timestamp,value[,market_cap]".
// Series appear in order of first occurrence; rows within a series are sorted
// by timestamp (numerically when every timestamp parses as a number).
SeriesSet load_csv(const std::filesystem::path& path);
SeriesSet parse_csv(const std::string& text, const std::string& name = "data");
void write_csv(const SeriesSet& set, const std::filesystem::path& path);
std::string format_csv(const SeriesSet& set);

enum class SynthKind { ar1, random_walk, gbm, seasonal_noise };

SynthKind parse_synth_kind(const std::string& text);
const char* synth_kind_name(SynthKind kind);

struct SynthParams {
  double phi = 0.5;        // ar1 coefficient
  double sigma = 1.0;      // innovation scale (per-step volatility for gbm)
  double mu = 0.0;         // drift per step
  double x0 = 100.0;       // start value for random_walk and gbm
  double period = 32.0;    // seasonal_noise period in steps
  double amplitude = 1.0;  // seasonal_noise amplitude
};

// ar1:            x_0 ~ N(0, sigma^2 / (1 - phi^2)), x_t = phi x_{t-1} + sigma e_t
// random_walk:    x_0 = x0, x_t = x_{t-1} + mu + sigma e_t
// gbm:            P_0 = x0, P_t = P_{t-1} exp(mu - sigma^2 / 2 + sigma e_t)
// seasonal_noise: x_t = amplitude sin(2 pi t / period) + sigma e_t
Series synth_generate(SynthKind kind, const SynthParams& params, std::size_t length,
                      std::uint64_t seed, const std::string& id = "s0");
SeriesSet synth_set(SynthKind kind, const SynthParams& params, std::size_t length,
                    std::size_t count, std::uint64_t seed);

struct Split {
  std::vector<double> train;
  std::vector<double> val;
  std::vector<double> test;
};

// Chronological 7:1:2 split: floor(0.7 T), floor(0.1 T), remainder.
Split split_series(const std::vector<double>& values);

struct ZScore {
  double mean = 0.0;
  double std = 1.0;

  double apply(double x) const { return (x - mean) / std; }
  double invert(double z) const { return z * std + mean; }
};

// Population mean and standard deviation of the train split.
ZScore fit_zscore(const std::vector<double>& train);
std::vector<double> zscore_normalize(const std::vector<double>& x, const ZScore& stats);
std::vector<double> zscore_denormalize(const std::vector<double>& z, const ZScore& stats);

// Groups consecutive series into [channels x T] panels. Panel length is the
// shortest member length; a trailing group with fewer than `channels`
// members is dropped.
std::vector<Tensor> make_panels(const std::vector<std::vector<double>>& series,
                                std::size_t channels);

// One series split into normalized train/val/test panels.
struct PreparedData {
  std::vector<Tensor> train;
  std::vector<Tensor> val;
  std::vector<Tensor> test;
  // Per channel of each panel, from the train split.
  std::vector<std::vector<ZScore>> stats;
  // Raw (unnormalized) test panels.
  std::vector<Tensor> test_raw;
};

PreparedData prepare_panels(const SeriesSet& set, std::size_t channels);

}  // namespace tflab
