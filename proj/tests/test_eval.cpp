#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>

#include "support.hpp"
#include "tflab/error.hpp"
#include "tflab/evaluation.hpp"
#include "tflab/metrics.hpp"
#include "tflab/portfolio.hpp"

using namespace tflab;

namespace {

double objective_mv(const Eigen::MatrixXd& s, const Weights& w) {
  const Eigen::Map<const Eigen::VectorXd> v(w.data(), static_cast<Eigen::Index>(w.size()));
  return v.dot(s * v);
}

double objective_mk(const Eigen::VectorXd& mu, const Eigen::MatrixXd& s, double lambda,
                    const Weights& w) {
  const Eigen::Map<const Eigen::VectorXd> v(w.data(), static_cast<Eigen::Index>(w.size()));
  return v.dot(mu) - lambda * v.dot(s * v);
}

// Every point of the simplex grid with spacing 1/steps, for 2 or 3 assets.
std::vector<Weights> simplex_grid(std::size_t n, std::size_t steps) {
  std::vector<Weights> out;
  const double h = 1.0 / static_cast<double>(steps);
  if (n == 2) {
    for (std::size_t i = 0; i <= steps; ++i) out.push_back({i * h, 1.0 - i * h});
  } else {
    for (std::size_t i = 0; i <= steps; ++i)
      for (std::size_t j = 0; i + j <= steps; ++j) out.push_back({i * h, j * h, 1.0 - (i + j) * h});
  }
  return out;
}

Eigen::MatrixXd random_cov(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> d(0.0, 1.0);
  Eigen::MatrixXd a(n + 3, n);
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j) a(i, j) = d(gen) * (1.0 + static_cast<double>(j));
  return a.transpose() * a / static_cast<double>(a.rows());
}

void check_simplex(const Weights& w) {
  double s = 0.0;
  for (double x : w) {
    CHECK(x >= -1e-12);
    s += x;
  }
  CHECK(std::abs(s - 1.0) < 1e-10);
}

// KKT on the gradient g of the minimized objective: equal on the support, no smaller off it.
void check_kkt(const Eigen::VectorXd& g, const Weights& w) {
  double level = 0.0;
  bool have = false;
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (w[i] > 1e-9) {
      if (!have) level = g(static_cast<Eigen::Index>(i));
      have = true;
      CHECK(std::abs(g(static_cast<Eigen::Index>(i)) - level) < 1e-6);
    }
  }
  for (std::size_t i = 0; i < w.size(); ++i)
    if (w[i] <= 1e-9) CHECK(g(static_cast<Eigen::Index>(i)) >= level - 1e-6);
}

Eigen::VectorXd as_vec(const Weights& w) {
  return Eigen::Map<const Eigen::VectorXd>(w.data(), static_cast<Eigen::Index>(w.size()));
}

// Hand-built 12-day panel; the expected numbers were worked out separately with exact fractions.
Eigen::MatrixXd hand_panel() {
  const double a[] = {100, 102, 101, 105, 107, 99, 108, 110, 96, 111, 115, 113};
  const double b[] = {50, 49, 51, 52, 50, 48, 55, 54, 51, 55, 57, 58};
  Eigen::MatrixXd p(12, 2);
  for (int i = 0; i < 12; ++i) {
    p(i, 0) = a[i];
    p(i, 1) = b[i];
  }
  return p;
}

}  // namespace

TEST_CASE("forecast metrics") {
  const std::vector<double> t = {3, 4}, p = {2, 2};
  CHECK(mean_squared_error(t, p) == 2.5);
  CHECK(mean_absolute_error(t, p) == 1.5);
  CHECK(mean_squared_error(t, t) == 0.0);
  CHECK_THROWS_AS(mean_squared_error(t, std::vector<double>{1}), Error);

  std::mt19937_64 gen(1);
  std::normal_distribution<double> d(0, 2);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> a(50), b(50);
    for (auto& x : a) x = d(gen);
    for (auto& x : b) x = d(gen);
    CHECK(mean_absolute_error(a, b) <= std::sqrt(mean_squared_error(a, b)) + 1e-15);
  }
}

TEST_CASE("forecast harness examples") {
  LastValueForecaster last;
  const Tensor ramp = Tensor::from_data({1, 4}, {1, 2, 3, 4});
  const ForecastReport r = forecast_eval(last, ramp, {2, 2});
  CHECK(r.mse == 2.5);
  CHECK(r.mae == 1.5);
  CHECK(r.windows == 1);
  CHECK(r.per_horizon_mse == std::vector<double>{1.0, 4.0});

  const Tensor flat = Tensor::full({2, 40}, 7.0);
  CHECK(forecast_eval(last, flat, {8, 4}).mse == 0.0);

  const Tensor noise = testing::random_tensor({2, 100}, 2);
  OracleForecaster oracle(noise);
  const ForecastReport o = forecast_eval(oracle, noise, {8, 8}, true);
  CHECK(o.mse == 0.0);
  CHECK(o.mae == 0.0);
  CHECK(o.windows == 6);
  CHECK(o.points == 6 * 2 * 8);
  CHECK(o.trace.size() == o.points);

  const ForecastReport l = forecast_eval(last, noise, {8, 8});
  CHECK(l.mae <= std::sqrt(l.mse));
  CHECK(merge_reports({l, l}).mse == doctest::Approx(l.mse));
  CHECK_THROWS_AS(forecast_eval(last, Tensor::zeros({1, 10}), {8, 8}), Error);
}

TEST_CASE("imputation masks") {
  ImputationSpec tiny;
  tiny.mask_ratio = 0.0005;
  const ImputeMask one = make_impute_mask(1, 1000, 1000, tiny);
  CHECK(one.masked == 1);
  const Tensor noise = testing::random_tensor({1, 1000}, 3);
  CHECK(mean_fill_eval(noise, one, tiny.mask_ratio).points == 1);

  ImputationSpec spec;
  spec.mask_ratio = 0.25;
  spec.mask_seed = 4;
  const ImputeMask m = make_impute_mask(3, 130, 32, spec);
  CHECK(m.covered == 128);
  CHECK(m.masked == static_cast<std::size_t>(0.25 * 3 * 128));
  std::size_t count = 0;
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t t = 0; t < 130; ++t) {
      if (m.at(c, t)) ++count;
      if (t >= 128) CHECK_FALSE(m.at(c, t));
    }
  CHECK(count == m.masked);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t w = 0; w < 4; ++w) {
      std::size_t hidden = 0;
      for (std::size_t t = 0; t < 32; ++t) hidden += m.at(c, w * 32 + t);
      CHECK(hidden < 32);
    }
  CHECK(make_impute_mask(3, 130, 32, spec).bits == m.bits);

  spec.layout = MaskLayout::block;
  const ImputeMask b = make_impute_mask(2, 64, 32, spec);
  CHECK(b.masked == 2 * 2 * 8);

  ImputationSpec bad;
  bad.mask_ratio = 1.0;
  CHECK_THROWS_AS(bad.validate(), Error);
  CHECK_THROWS_AS(make_impute_mask(1, 10, 32, ImputationSpec{}), Error);
}

TEST_CASE("mean fill on unit noise has unit error") {
  const Tensor noise = testing::random_tensor({1, 40000}, 5);
  ImputationSpec spec;
  spec.mask_seed = 6;
  const ImputeMask m = make_impute_mask(1, 40000, 32, spec);
  const ImputeResult r = mean_fill_eval(noise, m, spec.mask_ratio);
  CHECK(r.points == 5000);
  CHECK(r.mse == doctest::Approx(1.0).epsilon(0.05));
}

TEST_CASE("imputer trains only its own parameters") {
  ModelConfig cfg = ModelConfig::preset("tiny");
  TimeFormer model(cfg, 7);
  ImputerOptions opts;
  opts.window = 16;
  opts.steps = 5;
  Imputer imp(model, opts);
  std::size_t enc = 0;
  for (const auto& p : imp.trainable_parameters()) {
    const bool ok = p.name.rfind("tf.enc.", 0) == 0 || p.name.rfind("tf.fusion.", 0) == 0 ||
                    p.name.rfind("impute.", 0) == 0;
    CHECK(ok);
    enc += p.name.rfind("tf.enc.", 0) == 0;
  }
  CHECK(enc > 0);
  const auto before = model.parameters().front().tensor.values();
  const std::vector<Tensor> panels = {testing::random_tensor({1, 256}, 8)};
  const auto losses = imp.train(panels, 0.125);
  CHECK(losses.size() == 5);
  for (double l : losses) CHECK(std::isfinite(l));
  CHECK(model.parameters().front().tensor.values() == before);
}

TEST_CASE("daily returns") {
  CHECK(daily_return(std::vector<double>{5, 5, 5}) == std::vector<double>{0, 0});
  CHECK(daily_return(std::vector<double>{100, 110})[0] == doctest::Approx(0.10).epsilon(1e-15));
  CHECK(daily_return(std::vector<double>{100, 50, 100}) == std::vector<double>{-0.5, 1.0});
  CHECK_THROWS_AS(daily_return(std::vector<double>{1, 0}), Error);
  CHECK_THROWS_AS(daily_return(std::vector<double>{1}), Error);
}

TEST_CASE("annual sharpe") {
  CHECK_THROWS_AS(sharpe_annual(std::vector<double>{0.01, 0.01, 0.01}), Error);
  CHECK(sharpe_annual(std::vector<double>{0.01, -0.01, 0.02, -0.02}) == 0.0);
  const std::vector<double> r = {0.01, 0.02, -0.005};
  const double m = 0.025 / 3.0;
  double v = 0.0;
  for (double x : r) v += (x - m) * (x - m);
  const double sd = std::sqrt(v / 2.0);
  CHECK(sharpe_annual(r, 0.0, 252) == doctest::Approx(m * 252 / (sd * std::sqrt(252.0))).epsilon(1e-12));
  CHECK(sharpe_annual(r, 0.1, 252) ==
        doctest::Approx((m * 252 - 0.1) / (sd * std::sqrt(252.0))).epsilon(1e-12));

  std::mt19937_64 gen(9);
  std::normal_distribution<double> d(0.0004, 0.01);
  std::vector<double> mc(10000);
  for (auto& x : mc) x = d(gen);
  CHECK(std::abs(sharpe_annual(mc) - 0.63) <= 0.15);
}

TEST_CASE("maximum drawdown") {
  CHECK(max_drawdown(std::vector<double>{1, 2, 3}) == 0.0);
  CHECK(max_drawdown(std::vector<double>{100, 80, 90}) == doctest::Approx(-0.20).epsilon(1e-15));
  CHECK(max_drawdown(std::vector<double>{100, 90, 120, 60}) == doctest::Approx(-0.50).epsilon(1e-15));
  CHECK_THROWS_AS(max_drawdown(std::vector<double>{}), Error);
}

TEST_CASE("simple weight rules") {
  CHECK(equal_weights(4) == Weights{0.25, 0.25, 0.25, 0.25});
  CHECK(equal_weights(1) == Weights{1.0});
  for (std::size_t n = 1; n <= 13; ++n) {
    double s = 0.0;
    for (double w : equal_weights(n)) s += w;
    CHECK(s == 1.0);
  }

  CHECK(cap_weights({1, 1}) == Weights{0.5, 0.5});
  CHECK(cap_weights({3, 1}) == Weights{0.75, 0.25});
  const Weights a = cap_weights({2, 3, 5}), b = cap_weights({20, 30, 50});
  CHECK(testing::max_abs_diff(a, b) < 1e-15);
  CHECK_THROWS_AS(cap_weights({1, 0}), Error);
  StrategyOptions none;
  CHECK_THROWS_AS(make_weight_rule(Strategy::cap, none), Error);

  Eigen::MatrixXd r(4, 2);
  r << 0.01, 0.02, -0.01, -0.02, 0.01, 0.02, -0.01, -0.02;
  const Weights v = vol_weights(r);
  CHECK(v[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(v[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  Eigen::MatrixXd swapped(4, 2);
  swapped.col(0) = r.col(1);
  swapped.col(1) = r.col(0);
  const Weights vs = vol_weights(swapped);
  CHECK(vs[0] == doctest::Approx(v[1]));
  CHECK(vs[1] == doctest::Approx(v[0]));
  Eigen::MatrixXd same(4, 2);
  same.col(0) = r.col(0);
  same.col(1) = -r.col(0);
  CHECK(vol_weights(same)[0] == doctest::Approx(0.5));
  Eigen::MatrixXd dead = Eigen::MatrixXd::Zero(4, 2);
  dead.col(0) = r.col(0);
  CHECK_THROWS_AS(vol_weights(dead), Error);

  const Allocation clip = clip_normalize({0.02, -0.01, 0.02});
  CHECK(clip.w == Weights{0.5, 0.0, 0.5});
  CHECK_FALSE(clip.fallback);
  const Allocation neg = clip_normalize({-0.1, -0.2, 0.0});
  CHECK(neg.fallback);
  CHECK(testing::max_abs_diff(neg.w, {1.0 / 3, 1.0 / 3, 1.0 / 3}) < 1e-15);
  CHECK(clip_normalize({0.3, 0.3}).w == Weights{0.5, 0.5});
}

TEST_CASE("minimum variance closed forms") {
  Eigen::MatrixXd iso = 0.04 * Eigen::MatrixXd::Identity(3, 3);
  CHECK(testing::max_abs_diff(min_variance_weights(iso), {1.0 / 3, 1.0 / 3, 1.0 / 3}) < 1e-10);
  Eigen::MatrixXd diag(2, 2);
  diag << 1, 0, 0, 4;
  CHECK(testing::max_abs_diff(min_variance_weights(diag), {0.8, 0.2}) < 1e-8);
  Eigen::MatrixXd corr(2, 2);
  corr << 1, 0.5, 0.5, 1;
  CHECK(testing::max_abs_diff(min_variance_weights(corr), {0.5, 0.5}) < 1e-10);
}

TEST_CASE("markowitz closed forms and limits") {
  Eigen::VectorXd mu(2);
  mu << 0.1, 0.0;
  const Weights corner = markowitz_weights(mu, Eigen::MatrixXd::Identity(2, 2), 0.05);
  // The 1e-8 ridge moves the exact optimum inward by about 5e-9.
  CHECK(testing::max_abs_diff(corner, {1.0, 0.0}) < 1e-8);
  Weights best;
  double best_obj = -1e300;
  for (const auto& w : simplex_grid(2, 10000)) {
    const double o = objective_mk(mu, Eigen::MatrixXd::Identity(2, 2), 0.05, w);
    if (o > best_obj) {
      best_obj = o;
      best = w;
    }
  }
  CHECK(best == Weights{1.0, 0.0});
  CHECK(testing::max_abs_diff(best, corner) <= 1e-4);

  Eigen::VectorXd flat = Eigen::VectorXd::Constant(3, 0.01);
  CHECK(testing::max_abs_diff(markowitz_weights(flat, Eigen::MatrixXd::Identity(3, 3), 1.0),
                              {1.0 / 3, 1.0 / 3, 1.0 / 3}) < 1e-10);

  const Eigen::MatrixXd cov = random_cov(3, 10);
  Eigen::VectorXd m3(3);
  m3 << 0.02, -0.01, 0.03;
  CHECK(testing::max_abs_diff(markowitz_weights(m3, cov, 1e6), min_variance_weights(cov)) < 1e-6);
  CHECK_THROWS_AS(markowitz_weights(m3, cov, 0.0), Error);
}

TEST_CASE("optimizers beat a brute-force simplex grid and meet KKT") {
  for (std::uint64_t seed = 20; seed < 30; ++seed) {
    for (std::size_t n : {2, 3}) {
      CAPTURE(seed);
      CAPTURE(n);
      const Eigen::MatrixXd cov = random_cov(n, seed);
      const Eigen::MatrixXd s = cov + kCovShrinkage * Eigen::MatrixXd::Identity(n, n);
      std::mt19937_64 gen(seed);
      std::normal_distribution<double> d(0.0, 1.0);
      Eigen::VectorXd mu(n);
      for (std::size_t i = 0; i < n; ++i) mu(static_cast<Eigen::Index>(i)) = d(gen);
      const double lambda = 0.7;

      const Weights mv = min_variance_weights(cov);
      const Weights mk = markowitz_weights(mu, cov, lambda);
      check_simplex(mv);
      check_simplex(mk);
      check_kkt(2.0 * s * as_vec(mv), mv);
      check_kkt(2.0 * lambda * s * as_vec(mk) - mu, mk);

      const double mv_obj = objective_mv(s, mv), mk_obj = objective_mk(mu, s, lambda, mk);
      for (const auto& w : simplex_grid(n, 1000)) {
        CHECK(objective_mv(s, w) >= mv_obj - 1e-5);
        CHECK(objective_mk(mu, s, lambda, w) <= mk_obj + 1e-5);
      }
    }
  }
}

TEST_CASE("qp helpers") {
  Eigen::VectorXd v(3);
  v << 0.5, 0.9, -2.0;
  const Eigen::VectorXd p = project_simplex(v);
  CHECK(p.sum() == doctest::Approx(1.0));
  CHECK(p(2) == 0.0);
  CHECK(p(0) == doctest::Approx(0.3));
  CHECK(p(1) == doctest::Approx(0.7));
  const QpResult r = solve_simplex_qp(Eigen::MatrixXd::Identity(2, 2), Eigen::VectorXd::Zero(2));
  CHECK(r.kkt_residual < 1e-8);
  CHECK(testing::max_abs_diff(r.w, {0.5, 0.5}) < 1e-12);
}

TEST_CASE("backtest matches the hand oracle") {
  const Eigen::MatrixXd prices = hand_panel();
  const BacktestReport r =
      backtest(prices, make_weight_rule(Strategy::equal, {}), "equal", 5, 2);
  const std::vector<double> want = {-0.05738317757009346, 0.11837121212121213,
                                    0.00016835016835016836, -0.09141414141414142,
                                    0.1173406862745098, 0.0361998361998362};
  REQUIRE(r.daily_returns.size() == want.size());
  for (std::size_t i = 0; i < want.size(); ++i) CHECK(r.daily_returns[i] == doctest::Approx(want[i]).epsilon(1e-13));
  const std::vector<double> wealth = {1.0, 0.9426168224299065, 1.05419551826678, 1.0543729922597542,
                                      0.9579883904420695, 1.0703994056195552, 1.109147688771385};
  REQUIRE(r.wealth.size() == wealth.size());
  for (std::size_t i = 0; i < wealth.size(); ++i) CHECK(r.wealth[i] == doctest::Approx(wealth[i]).epsilon(1e-13));
  CHECK(r.r_d == doctest::Approx(0.02054712762994557).epsilon(1e-13));
  CHECK(r.s_a == doctest::Approx(3.73132597007066).epsilon(1e-12));
  CHECK(r.mdd == doctest::Approx(-0.09141414141414142).epsilon(1e-13));
  CHECK(r.rebalance_weights.size() == 3);
}

TEST_CASE("backtest identities") {
  const Eigen::MatrixXd prices = hand_panel();
  const BacktestReport single =
      backtest(prices.col(0), make_weight_rule(Strategy::equal, {}), "equal", 5, 2);
  std::vector<double> p0(prices.rows());
  for (Eigen::Index i = 0; i < prices.rows(); ++i) p0[static_cast<std::size_t>(i)] = prices(i, 0);
  const auto r0 = daily_return(p0);
  for (std::size_t i = 0; i < single.daily_returns.size(); ++i)
    CHECK(single.daily_returns[i] == r0[4 + i]);

  StrategyOptions so;
  so.caps = std::vector<double>{2.0, 1.0};
  for (Strategy s : {Strategy::equal, Strategy::cap, Strategy::vol, Strategy::min_variance,
                     Strategy::markowitz}) {
    CAPTURE(strategy_name(s));
    const BacktestReport a = backtest(prices, make_weight_rule(s, so), strategy_name(s), 5, 2);
    const BacktestReport scaled = backtest(prices * 37.5, make_weight_rule(s, so), strategy_name(s), 5, 2);
    CHECK(scaled.r_d == doctest::Approx(a.r_d).epsilon(1e-12));
    CHECK(scaled.s_a == doctest::Approx(a.s_a).epsilon(1e-10));
    CHECK(scaled.mdd == doctest::Approx(a.mdd).epsilon(1e-12));
    const BacktestReport again = backtest(prices, make_weight_rule(s, so), strategy_name(s), 5, 2);
    CHECK(again.daily_returns == a.daily_returns);
    CHECK(again.s_a == a.s_a);
    for (const auto& w : a.rebalance_weights) check_simplex(w);
  }
  CHECK_THROWS_AS(backtest(prices, make_weight_rule(Strategy::equal, {}), "equal", 10, 5), Error);
}

TEST_CASE("weights never depend on prices after the rebalance day") {
  std::mt19937_64 gen(40);
  std::normal_distribution<double> d(0.0, 0.01);
  Eigen::MatrixXd prices(60, 3);
  for (Eigen::Index j = 0; j < 3; ++j) {
    double p = 100.0;
    for (Eigen::Index i = 0; i < 60; ++i) {
      p *= 1.0 + d(gen);
      prices(i, j) = p;
    }
  }
  StrategyOptions so;
  so.caps = std::vector<double>{1.0, 2.0, 3.0};
  so.forecast = [](const Eigen::MatrixXd& lb) {
    std::vector<double> f;
    for (Eigen::Index j = 0; j < lb.cols(); ++j) f.push_back(lb(lb.rows() - 1, j) / lb(0, j) - 1.0);
    return f;
  };
  for (Strategy s : {Strategy::equal, Strategy::cap, Strategy::vol, Strategy::min_variance,
                     Strategy::markowitz, Strategy::model}) {
    const BacktestReport base = backtest(prices, make_weight_rule(s, so), "x", 20, 5);
    for (std::size_t k = 0; k < base.rebalance_weights.size(); ++k) {
      const std::size_t t = 19 + 5 * k;
      Eigen::MatrixXd bumped = prices;
      for (Eigen::Index i = static_cast<Eigen::Index>(t) + 1; i < 60; ++i) bumped.row(i) *= 1.5 + 0.01 * i;
      const BacktestReport b = backtest(bumped, make_weight_rule(s, so), "x", 20, 5);
      CHECK(b.rebalance_weights[k] == base.rebalance_weights[k]);
    }
  }
}
