#pragma once

#include <optional>
#include <string>
#include <vector>

#include "tflab/series.hpp"

namespace tflab {

// ADF t-statistic of gamma in
//   dy_t = a + gamma y_{t-1} + sum_{i=1..k} d_i dy_{t-i} + e_t
// with k = floor(12 (T/100)^(1/4)) unless given.
double adf_statistic(const std::vector<double>& y, std::optional<std::size_t> max_lag = {});
std::size_t schwert_lag(std::size_t length);

struct Forecastability {
  double value = 0.0;
  bool degenerate = false;  // zero spectral power
};

// 1 - H(q) / log(n) over the normalized power spectrum of bins 1..floor(T/2).
Forecastability forecastability(const std::vector<double>& y);

// Rescaled-range slope over dyadic windows 16, 32, ... <= T/4.
double hurst_exponent(const std::vector<double>& y);

// sum_i w_i v_i / sum_i w_i
double length_weighted_mean(const std::vector<double>& values, const std::vector<double>& weights);

struct DatasetProfile {
  std::string dataset;
  std::string freq = "unknown";
  std::size_t n_series = 0;
  std::size_t total_obs = 0;
  double adf = 0.0;
  double forecastability = 0.0;
  double hurst = 0.0;
  std::vector<std::string> warnings;
};

// Length-weighted metrics over the series in id order. A series that fails a
// metric's precondition is left out of that metric with a warning.
DatasetProfile length_weighted_profile(const SeriesSet& set,
                                       std::optional<std::size_t> max_lag = {});

void write_profile_csv(const std::string& path, const std::vector<DatasetProfile>& rows);

}  // namespace tflab
