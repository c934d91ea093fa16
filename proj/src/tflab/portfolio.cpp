#include "tflab/portfolio.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include <fmt/format.h>

#include "tflab/error.hpp"
#include "tflab/metrics.hpp"

namespace tflab {

namespace {

Weights normalized(const std::vector<double>& x) {
  const double total = std::accumulate(x.begin(), x.end(), 0.0);
  Weights w(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) w[i] = x[i] / total;
  return w;
}

Weights to_weights(const Eigen::VectorXd& v) { return Weights(v.data(), v.data() + v.size()); }

double qp_objective(const Eigen::MatrixXd& q, const Eigen::VectorXd& c, const Eigen::VectorXd& w) {
  return 0.5 * w.dot(q * w) + c.dot(w);
}

}  // namespace

Weights equal_weights(std::size_t n) {
  if (n == 0) fail(ErrorKind::parameter, "equal_weights: need at least one asset");
  Weights w(n, 1.0 / static_cast<double>(n));
  double head = 0.0;
  for (std::size_t i = 0; i + 1 < n; ++i) head += w[i];
  w[n - 1] = 1.0 - head;
  return w;
}

Weights cap_weights(const std::vector<double>& caps) {
  if (caps.empty()) fail(ErrorKind::data, "cap_weights: missing market caps");
  for (double c : caps)
    if (!(c > 0.0)) fail(ErrorKind::data, "cap_weights: market caps must be positive");
  return normalized(caps);
}

Weights vol_weights(const Eigen::MatrixXd& returns) {
  std::vector<double> inv(static_cast<std::size_t>(returns.cols()));
  for (Eigen::Index j = 0; j < returns.cols(); ++j) {
    const Eigen::VectorXd col = returns.col(j);
    const double sd = sample_std(std::span<const double>(col.data(), col.size()));
    if (!(sd > 0.0)) {
      fail(ErrorKind::domain, fmt::format("vol_weights: asset {} has zero volatility", j));
    }
    inv[static_cast<std::size_t>(j)] = 1.0 / sd;
  }
  return normalized(inv);
}

Eigen::VectorXd project_simplex(const Eigen::VectorXd& v) {
  const Eigen::Index n = v.size();
  std::vector<double> u(v.data(), v.data() + n);
  std::sort(u.begin(), u.end(), std::greater<>());
  double cumulative = 0.0, theta = 0.0;
  for (Eigen::Index k = 0; k < n; ++k) {
    cumulative += u[static_cast<std::size_t>(k)];
    const double t = (cumulative - 1.0) / static_cast<double>(k + 1);
    if (u[static_cast<std::size_t>(k)] - t > 0.0) theta = t;
  }
  return (v.array() - theta).max(0.0).matrix();
}

double simplex_kkt_residual(const Eigen::MatrixXd& q, const Eigen::VectorXd& c, const Weights& w) {
  const Eigen::Index n = c.size();
  if (static_cast<Eigen::Index>(w.size()) != n) fail(ErrorKind::dimension, "kkt: size mismatch");
  const Eigen::VectorXd x = Eigen::Map<const Eigen::VectorXd>(w.data(), n);
  const Eigen::VectorXd g = q * x + c;
  double nu = 0.0;
  std::size_t support = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (x(i) > 1e-12) {
      nu += g(i);
      ++support;
    }
  }
  if (support == 0) return std::numeric_limits<double>::infinity();
  nu /= static_cast<double>(support);
  double r = std::max(std::abs(x.sum() - 1.0), std::max(0.0, -x.minCoeff()));
  for (Eigen::Index i = 0; i < n; ++i) {
    r = std::max(r, x(i) > 1e-12 ? std::abs(g(i) - nu) : std::max(0.0, nu - g(i)));
  }
  return r;
}

QpResult solve_simplex_qp(const Eigen::MatrixXd& q, const Eigen::VectorXd& c,
                          std::size_t max_iter) {
  const Eigen::Index n = c.size();
  if (n == 0 || q.rows() != n || q.cols() != n) {
    fail(ErrorKind::dimension, "simplex QP: Q must be N x N with N = len(c) >= 1");
  }
  QpResult res;
  if (n == 1) {
    res.w = {1.0};
    res.objective = 0.5 * q(0, 0) + c(0);
    return res;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(q, Eigen::EigenvaluesOnly);
  const double lip = std::max(eig.eigenvalues().maxCoeff(), 1e-12);

  // Accelerated projected gradient.
  Eigen::VectorXd x = Eigen::VectorXd::Constant(n, 1.0 / static_cast<double>(n));
  Eigen::VectorXd y = x, prev = x;
  double t = 1.0;
  std::size_t it = 0;
  for (; it < max_iter; ++it) {
    const Eigen::VectorXd next = project_simplex(y - (q * y + c) / lip);
    const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    y = next + ((t - 1.0) / t_next) * (next - x);
    prev = x;
    x = next;
    t = t_next;
    if ((x - prev).lpNorm<Eigen::Infinity>() < 1e-15) break;
  }
  res.iterations = it;

  // Active-set refinement: solve the equality-constrained KKT system on the
  // current support, dropping negative weights and adding violators.
  std::vector<bool> active(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) active[static_cast<std::size_t>(i)] = x(i) > 1e-10;
  Eigen::VectorXd best = x;
  const double tol = 1e-13 * std::max(1.0, q.lpNorm<Eigen::Infinity>() + c.lpNorm<Eigen::Infinity>());
  for (Eigen::Index round = 0; round < 20 * n; ++round) {
    std::vector<Eigen::Index> idx;
    for (Eigen::Index i = 0; i < n; ++i)
      if (active[static_cast<std::size_t>(i)]) idx.push_back(i);
    if (idx.empty()) break;
    const Eigen::Index m = static_cast<Eigen::Index>(idx.size());
    Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(m + 1, m + 1);
    Eigen::VectorXd rhs(m + 1);
    for (Eigen::Index a = 0; a < m; ++a) {
      for (Eigen::Index b = 0; b < m; ++b) kkt(a, b) = q(idx[a], idx[b]);
      kkt(a, m) = -1.0;
      kkt(m, a) = 1.0;
      rhs(a) = -c(idx[a]);
    }
    rhs(m) = 1.0;
    const Eigen::VectorXd sol = kkt.fullPivLu().solve(rhs);
    if (!sol.allFinite()) break;
    Eigen::VectorXd cand = Eigen::VectorXd::Zero(n);
    for (Eigen::Index a = 0; a < m; ++a) cand(idx[a]) = sol(a);
    const double nu = sol(m);
    Eigen::Index most_negative = -1;
    for (Eigen::Index a = 0; a < m; ++a) {
      if (sol(a) < 0.0 && (most_negative < 0 || sol(a) < cand(most_negative))) most_negative = idx[a];
    }
    if (most_negative >= 0) {
      active[static_cast<std::size_t>(most_negative)] = false;
      continue;
    }
    const Eigen::VectorXd g = q * cand + c;
    Eigen::Index violator = -1;
    double worst = tol;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (!active[static_cast<std::size_t>(i)] && nu - g(i) > worst) {
        worst = nu - g(i);
        violator = i;
      }
    }
    if (qp_objective(q, c, cand) <= qp_objective(q, c, best) + tol) best = cand;
    if (violator < 0) {
      best = cand;
      break;
    }
    active[static_cast<std::size_t>(violator)] = true;
  }
  res.w = to_weights(best);
  res.objective = qp_objective(q, c, best);
  res.kkt_residual = simplex_kkt_residual(q, c, res.w);
  const double scale = std::max(1.0, q.lpNorm<Eigen::Infinity>());
  if (res.kkt_residual > 1e-8 * scale) {
    fail(ErrorKind::domain, fmt::format("simplex QP did not converge (KKT residual {:.3e})",
                                        res.kkt_residual));
  }
  return res;
}

namespace {
Eigen::MatrixXd shrunk(const Eigen::MatrixXd& cov) {
  if (cov.rows() != cov.cols() || cov.rows() == 0) {
    fail(ErrorKind::dimension, "covariance must be a non-empty square matrix");
  }
  if (!cov.allFinite()) fail(ErrorKind::domain, "covariance has non-finite entries");
  const Eigen::MatrixXd sym = 0.5 * (cov + cov.transpose());
  return sym + kCovShrinkage * Eigen::MatrixXd::Identity(cov.rows(), cov.cols());
}
}  // namespace

Weights min_variance_weights(const Eigen::MatrixXd& cov) {
  const Eigen::MatrixXd s = shrunk(cov);
  return solve_simplex_qp(2.0 * s, Eigen::VectorXd::Zero(s.rows())).w;
}

Weights markowitz_weights(const Eigen::VectorXd& mean_returns, const Eigen::MatrixXd& cov,
                          double risk_aversion) {
  if (!(risk_aversion > 0.0)) fail(ErrorKind::parameter, "markowitz: risk aversion must be > 0");
  const Eigen::MatrixXd s = shrunk(cov);
  if (mean_returns.size() != s.rows()) {
    fail(ErrorKind::dimension, "markowitz: mean vector and covariance disagree in size");
  }
  return solve_simplex_qp(2.0 * risk_aversion * s, -mean_returns).w;
}

Eigen::MatrixXd sample_covariance(const Eigen::MatrixXd& returns) {
  if (returns.rows() < 2) fail(ErrorKind::dimension, "covariance needs at least two observations");
  const Eigen::RowVectorXd mean = returns.colwise().mean();
  const Eigen::MatrixXd centered = returns.rowwise() - mean;
  return centered.transpose() * centered / static_cast<double>(returns.rows() - 1);
}

Eigen::MatrixXd price_returns(const Eigen::MatrixXd& prices) {
  if (prices.rows() < 2) fail(ErrorKind::dimension, "need at least two price rows");
  if ((prices.array() <= 0.0).any()) fail(ErrorKind::domain, "prices must be positive");
  const Eigen::Index l = prices.rows();
  const auto prev = prices.topRows(l - 1).array();
  return ((prices.bottomRows(l - 1).array() - prev) / prev).matrix();
}

Allocation clip_normalize(const std::vector<double>& forecast_returns) {
  if (forecast_returns.empty()) fail(ErrorKind::dimension, "clip_normalize: no forecasts");
  std::vector<double> pos(forecast_returns.size());
  double total = 0.0;
  for (std::size_t i = 0; i < pos.size(); ++i) {
    pos[i] = std::max(forecast_returns[i], 0.0);
    total += pos[i];
  }
  if (!(total > 0.0)) return {equal_weights(pos.size()), true};
  return {normalized(pos), false};
}

const char* strategy_name(Strategy s) {
  switch (s) {
    case Strategy::equal: return "equal";
    case Strategy::cap: return "cap";
    case Strategy::vol: return "vol";
    case Strategy::min_variance: return "min_variance";
    case Strategy::markowitz: return "markowitz";
    case Strategy::model: return "model";
  }
  return "unknown";
}

Strategy parse_strategy(const std::string& text) {
  for (Strategy s : {Strategy::equal, Strategy::cap, Strategy::vol, Strategy::min_variance,
                     Strategy::markowitz, Strategy::model}) {
    if (text == strategy_name(s)) return s;
  }
  fail(ErrorKind::usage, "unknown strategy '" + text +
                             "' (expected equal, cap, vol, min_variance, markowitz, model)");
}

WeightRule make_weight_rule(Strategy s, const StrategyOptions& options) {
  switch (s) {
    case Strategy::equal:
      return [](const Eigen::MatrixXd& p) {
        return Allocation{equal_weights(static_cast<std::size_t>(p.cols())), false};
      };
    case Strategy::cap: {
      if (!options.caps) fail(ErrorKind::data, "cap strategy: data has no market_cap column");
      const Weights w = cap_weights(*options.caps);
      return [w](const Eigen::MatrixXd& p) {
        if (static_cast<std::size_t>(p.cols()) != w.size()) {
          fail(ErrorKind::data, "cap strategy: one market cap per asset required");
        }
        return Allocation{w, false};
      };
    }
    case Strategy::vol:
      return [](const Eigen::MatrixXd& p) { return Allocation{vol_weights(price_returns(p)), false}; };
    case Strategy::min_variance:
      return [](const Eigen::MatrixXd& p) {
        return Allocation{min_variance_weights(sample_covariance(price_returns(p))), false};
      };
    case Strategy::markowitz: {
      const double lambda = options.risk_aversion;
      return [lambda](const Eigen::MatrixXd& p) {
        const Eigen::MatrixXd r = price_returns(p);
        const Eigen::VectorXd mu = r.colwise().mean().transpose();
        return Allocation{markowitz_weights(mu, sample_covariance(r), lambda), false};
      };
    }
    case Strategy::model: {
      if (!options.forecast) fail(ErrorKind::state, "model strategy: no forecaster supplied");
      auto f = options.forecast;
      return [f](const Eigen::MatrixXd& p) { return clip_normalize(f(p)); };
    }
  }
  fail(ErrorKind::parameter, "unknown strategy");
}

BacktestReport backtest(const Eigen::MatrixXd& prices, const WeightRule& rule,
                        const std::string& name, std::size_t lookback, std::size_t forward,
                        const BacktestOptions& options) {
  const std::size_t t_len = static_cast<std::size_t>(prices.rows());
  const Eigen::Index n = prices.cols();
  if (lookback < 2 || forward < 1) {
    fail(ErrorKind::parameter, "backtest: lookback must be >= 2 and forward >= 1");
  }
  if (t_len < lookback + forward) {
    fail(ErrorKind::data, fmt::format("backtest: {} days of prices, need at least {}", t_len,
                                      lookback + forward));
  }
  if ((prices.array() <= 0.0).any()) fail(ErrorKind::domain, "backtest: prices must be positive");
  const Eigen::MatrixXd r = price_returns(prices);  // row s - 1 holds day s
  BacktestReport rep;
  rep.strategy = name;
  rep.lookback = lookback;
  rep.forward = forward;
  rep.wealth.push_back(1.0);
  for (std::size_t t = lookback - 1; t + forward <= t_len - 1; t += forward) {
    const Eigen::MatrixXd window = prices.middleRows(static_cast<Eigen::Index>(t + 1 - lookback),
                                                     static_cast<Eigen::Index>(lookback));
    const Allocation a = rule(window);
    if (a.w.size() != static_cast<std::size_t>(n)) {
      fail(ErrorKind::dimension, "backtest: weight rule returned the wrong number of weights");
    }
    if (a.fallback) ++rep.fallbacks;
    rep.rebalance_weights.push_back(a.w);
    for (std::size_t s = t + 1; s <= t + forward; ++s) {
      double ret = 0.0;
      for (Eigen::Index i = 0; i < n; ++i) ret += a.w[static_cast<std::size_t>(i)] * r(static_cast<Eigen::Index>(s - 1), i);
      rep.daily_returns.push_back(ret);
      rep.wealth.push_back(rep.wealth.back() * (1.0 + ret));
    }
  }
  rep.r_d = sample_mean(rep.daily_returns);
  rep.s_a = sharpe_annual(rep.daily_returns, options.risk_free, options.periods_per_year);
  rep.mdd = max_drawdown(rep.wealth);
  return rep;
}

void write_backtest_csv(const std::string& path, const std::vector<BacktestReport>& reports) {
  std::ofstream f(path, std::ios::binary);
  if (!f) fail(ErrorKind::io, "cannot write " + path);
  f << "strategy,lookback,forward,r_d,s_a,mdd\n";
  for (const auto& r : reports) {
    f << fmt::format("{},{},{},{},{},{}\n", r.strategy, r.lookback, r.forward, r.r_d, r.s_a, r.mdd);
  }
}

}  // namespace tflab
