#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace tflab {

using Weights = std::vector<double>;

Weights equal_weights(std::size_t n);
Weights cap_weights(const std::vector<double>& caps);
// returns: [L x N] simple returns of the lookback window.
Weights vol_weights(const Eigen::MatrixXd& returns);

struct QpResult {
  Weights w;
  double objective = 0.0;
  double kkt_residual = 0.0;
  std::size_t iterations = 0;
};

// min 1/2 w'Qw + c'w subject to w >= 0 and sum(w) = 1. Accelerated projected
// gradient finds the support; an active-set pass on the KKT system then
// solves it exactly.
QpResult solve_simplex_qp(const Eigen::MatrixXd& q, const Eigen::VectorXd& c,
                          std::size_t max_iter = 20000);

// Euclidean projection onto the probability simplex.
Eigen::VectorXd project_simplex(const Eigen::VectorXd& v);

// Stationarity and complementarity violation of w for the simplex QP.
double simplex_kkt_residual(const Eigen::MatrixXd& q, const Eigen::VectorXd& c, const Weights& w);

inline constexpr double kCovShrinkage = 1e-8;

// argmin w' S w with S = cov + 1e-8 I.
Weights min_variance_weights(const Eigen::MatrixXd& cov);
// argmax w'mu - lambda w' S w with S = cov + 1e-8 I.
Weights markowitz_weights(const Eigen::VectorXd& mean_returns, const Eigen::MatrixXd& cov,
                          double risk_aversion = 1.0);

// Sample covariance (N - 1 denominator) of the columns of [L x N] returns.
Eigen::MatrixXd sample_covariance(const Eigen::MatrixXd& returns);
// [L x N] prices -> [(L - 1) x N] simple returns.
Eigen::MatrixXd price_returns(const Eigen::MatrixXd& prices);

struct Allocation {
  Weights w;
  bool fallback = false;  // model rule only: every forecast was non-positive
};

// Weights proportional to max(forecast, 0); equal weights when none is positive.
Allocation clip_normalize(const std::vector<double>& forecast_returns);

enum class Strategy { equal, cap, vol, min_variance, markowitz, model };

const char* strategy_name(Strategy s);
Strategy parse_strategy(const std::string& text);

// Weights from the lookback prices [L x N] ending at the rebalance day.
using WeightRule = std::function<Allocation(const Eigen::MatrixXd& lookback_prices)>;

struct StrategyOptions {
  std::optional<std::vector<double>> caps;
  double risk_aversion = 1.0;
  // Predicted cumulative return per asset over the forward window; required
  // for Strategy::model.
  std::function<std::vector<double>(const Eigen::MatrixXd& lookback_prices)> forecast;
};

WeightRule make_weight_rule(Strategy s, const StrategyOptions& options);

struct BacktestReport {
  std::string strategy;
  std::size_t lookback = 0;
  std::size_t forward = 0;
  double r_d = 0.0;
  double s_a = 0.0;
  double mdd = 0.0;
  std::vector<double> daily_returns;
  std::vector<double> wealth;
  std::vector<Weights> rebalance_weights;
  std::size_t fallbacks = 0;
};

struct BacktestOptions {
  double risk_free = 0.0;
  double periods_per_year = 252.0;
};

// First rebalance on day lookback - 1; weights are held for `forward` days and
// recomputed while a full forward window remains.
BacktestReport backtest(const Eigen::MatrixXd& prices, const WeightRule& rule,
                        const std::string& name, std::size_t lookback, std::size_t forward,
                        const BacktestOptions& options = {});

void write_backtest_csv(const std::string& path, const std::vector<BacktestReport>& reports);

}  // namespace tflab
