#pragma once

#include <span>
#include <vector>

namespace tflab {

double mean_squared_error(std::span<const double> truth, std::span<const double> pred);
double mean_absolute_error(std::span<const double> truth, std::span<const double> pred);

// Simple returns (P_t - P_{t-1}) / P_{t-1}.
std::vector<double> daily_return(std::span<const double> prices);

// (mean * A - R_f) / (std * sqrt(A)), sample std with N - 1.
double sharpe_annual(std::span<const double> returns, double risk_free = 0.0,
                     double periods_per_year = 252.0);

// Largest peak-to-trough fall, reported as a value <= 0.
double max_drawdown(std::span<const double> prices);

double sample_mean(std::span<const double> x);
double sample_std(std::span<const double> x);

}  // namespace tflab
