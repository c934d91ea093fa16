#include "tflab/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "tflab/error.hpp"

namespace tflab {

namespace {
void require_pairs(std::span<const double> a, std::span<const double> b, const char* op) {
  if (a.size() != b.size()) fail(ErrorKind::dimension, std::string(op) + ": length mismatch");
  if (a.empty()) fail(ErrorKind::dimension, std::string(op) + ": empty input");
}
}  // namespace

double mean_squared_error(std::span<const double> truth, std::span<const double> pred) {
  require_pairs(truth, pred, "mse");
  double s = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) s += (truth[i] - pred[i]) * (truth[i] - pred[i]);
  return s / static_cast<double>(truth.size());
}

double mean_absolute_error(std::span<const double> truth, std::span<const double> pred) {
  require_pairs(truth, pred, "mae");
  double s = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) s += std::abs(truth[i] - pred[i]);
  return s / static_cast<double>(truth.size());
}

std::vector<double> daily_return(std::span<const double> prices) {
  if (prices.size() < 2) fail(ErrorKind::dimension, "daily_return: need at least two prices");
  for (double p : prices)
    if (!(p > 0.0)) fail(ErrorKind::domain, "daily_return: prices must be positive");
  std::vector<double> r(prices.size() - 1);
  for (std::size_t t = 1; t < prices.size(); ++t) r[t - 1] = (prices[t] - prices[t - 1]) / prices[t - 1];
  return r;
}

double sample_mean(std::span<const double> x) {
  if (x.empty()) fail(ErrorKind::dimension, "mean of empty input");
  double s = 0.0;
  for (double v : x) s += v;
  return s / static_cast<double>(x.size());
}

double sample_std(std::span<const double> x) {
  if (x.size() < 2) fail(ErrorKind::dimension, "sample std needs at least two values");
  const double m = sample_mean(x);
  double s = 0.0;
  for (double v : x) s += (v - m) * (v - m);
  return std::sqrt(s / static_cast<double>(x.size() - 1));
}

double sharpe_annual(std::span<const double> returns, double risk_free, double periods_per_year) {
  if (returns.size() < 2) fail(ErrorKind::dimension, "sharpe: need at least two returns");
  if (!(periods_per_year > 0.0)) fail(ErrorKind::parameter, "sharpe: periods_per_year must be > 0");
  const double sd = sample_std(returns);
  if (!(sd > 0.0)) fail(ErrorKind::domain, "sharpe: zero volatility");
  return (sample_mean(returns) * periods_per_year - risk_free) / (sd * std::sqrt(periods_per_year));
}

double max_drawdown(std::span<const double> prices) {
  if (prices.empty()) fail(ErrorKind::dimension, "max_drawdown: empty input");
  double peak = prices[0], worst = 0.0;
  for (double p : prices) {
    if (!(p > 0.0)) fail(ErrorKind::domain, "max_drawdown: prices must be positive");
    peak = std::max(peak, p);
    worst = std::max(worst, (peak - p) / peak);
  }
  return worst > 0.0 ? -worst : 0.0;
}

}  // namespace tflab
