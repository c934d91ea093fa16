#include "tflab/stats.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <limits>

#include <Eigen/Dense>
#include <fftw3.h>
#include <fmt/format.h>

#include "tflab/error.hpp"

namespace tflab {

std::size_t schwert_lag(std::size_t length) {
  return static_cast<std::size_t>(
      std::floor(12.0 * std::pow(static_cast<double>(length) / 100.0, 0.25)));
}

double adf_statistic(const std::vector<double>& y, std::optional<std::size_t> max_lag) {
  const std::size_t t_len = y.size();
  if (t_len < 20) fail(ErrorKind::data, fmt::format("adf: need >= 20 points, got {}", t_len));
  const std::size_t k = max_lag ? *max_lag : schwert_lag(t_len);
  std::vector<double> dy(t_len - 1);
  for (std::size_t t = 1; t < t_len; ++t) dy[t - 1] = y[t] - y[t - 1];
  // dy index i corresponds to time i + 1; usable rows need k lagged differences.
  if (dy.size() <= k) fail(ErrorKind::data, "adf: lag order too large for series");
  const std::size_t n = dy.size() - k;
  const std::size_t p = 2 + k;
  if (n <= p) fail(ErrorKind::data, "adf: too few observations for the regression");

  Eigen::MatrixXd x(n, p);
  Eigen::VectorXd rhs(n);
  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t i = r + k;
    rhs(r) = dy[i];
    x(r, 0) = 1.0;
    x(r, 1) = y[i];  // level at time i, lagged relative to dy[i]
    for (std::size_t j = 1; j <= k; ++j) x(r, 1 + j) = dy[i - j];
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x);
  qr.setThreshold(1e-10);
  if (static_cast<std::size_t>(qr.rank()) < p) {
    fail(ErrorKind::domain, "adf: singular regression (constant or degenerate series)");
  }
  const Eigen::VectorXd beta = qr.solve(rhs);
  const Eigen::VectorXd resid = rhs - x * beta;
  const double s2 = resid.squaredNorm() / static_cast<double>(n - p);
  const Eigen::MatrixXd xtx = x.transpose() * x;
  const Eigen::MatrixXd inv = xtx.ldlt().solve(Eigen::MatrixXd::Identity(p, p));
  const double se = std::sqrt(s2 * inv(1, 1));
  if (!(se > 0.0) || !std::isfinite(se)) {
    fail(ErrorKind::domain, "adf: zero residual variance");
  }
  return beta(1) / se;
}

Forecastability forecastability(const std::vector<double>& y) {
  const std::size_t n = y.size();
  if (n < 4) fail(ErrorKind::data, fmt::format("forecastability: need >= 4 points, got {}", n));
  std::vector<double> in(y);
  std::vector<fftw_complex> out(n / 2 + 1);
  fftw_plan plan = fftw_plan_dft_r2c_1d(static_cast<int>(n), in.data(), out.data(), FFTW_ESTIMATE);
  fftw_execute(plan);
  fftw_destroy_plan(plan);
  const std::size_t bins = n / 2;
  std::vector<double> power(bins);
  double total = 0.0;
  for (std::size_t k = 1; k <= bins; ++k) {
    power[k - 1] = out[k][0] * out[k][0] + out[k][1] * out[k][1];
    total += power[k - 1];
  }
  // Rounding noise on a constant series leaves tiny nonzero power, so the
  // zero test is relative to the signal scale.
  double peak = 0.0;
  for (double v : y) peak = std::max(peak, std::abs(v));
  if (!(total > 1e-24 * std::max(1.0, peak * peak) * static_cast<double>(n * n))) {
    return {0.0, true};
  }
  double h = 0.0;
  for (double p : power) {
    const double q = p / total;
    if (q > 0.0) h -= q * std::log(q);
  }
  const double v = 1.0 - h / std::log(static_cast<double>(bins));
  return {std::clamp(v, 0.0, 1.0), false};
}

double hurst_exponent(const std::vector<double>& y) {
  const std::size_t n = y.size();
  if (n < 128) fail(ErrorKind::data, fmt::format("hurst: need >= 128 points, got {}", n));
  std::vector<double> log_n, log_rs;
  for (std::size_t w = 16; w <= n / 4; w *= 2) {
    double acc = 0.0;
    std::size_t used = 0;
    for (std::size_t start = 0; start + w <= n; start += w) {
      double mean = 0.0;
      for (std::size_t i = 0; i < w; ++i) mean += y[start + i];
      mean /= static_cast<double>(w);
      double z = 0.0, zmax = -std::numeric_limits<double>::infinity(),
             zmin = std::numeric_limits<double>::infinity(), var = 0.0;
      for (std::size_t i = 0; i < w; ++i) {
        const double d = y[start + i] - mean;
        z += d;
        var += d * d;
        zmax = std::max(zmax, z);
        zmin = std::min(zmin, z);
      }
      const double s = std::sqrt(var / static_cast<double>(w));
      if (s > 0.0) {
        acc += (zmax - zmin) / s;
        ++used;
      }
    }
    if (used > 0) {
      log_n.push_back(std::log(static_cast<double>(w)));
      log_rs.push_back(std::log(acc / static_cast<double>(used)));
    }
  }
  if (log_n.size() < 2) fail(ErrorKind::domain, "hurst: series is constant within every window");
  const double m = static_cast<double>(log_n.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < log_n.size(); ++i) {
    mx += log_n[i];
    my += log_rs[i];
  }
  mx /= m;
  my /= m;
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < log_n.size(); ++i) {
    sxy += (log_n[i] - mx) * (log_rs[i] - my);
    sxx += (log_n[i] - mx) * (log_n[i] - mx);
  }
  return sxy / sxx;
}

double length_weighted_mean(const std::vector<double>& values, const std::vector<double>& weights) {
  if (values.size() != weights.size() || values.empty()) {
    fail(ErrorKind::dimension, "length_weighted_mean: need matching non-empty inputs");
  }
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    num += weights[i] * values[i];
    den += weights[i];
  }
  if (!(den > 0.0)) fail(ErrorKind::data, "length_weighted_mean: zero total weight");
  return num / den;
}

DatasetProfile length_weighted_profile(const SeriesSet& set, std::optional<std::size_t> max_lag) {
  DatasetProfile prof;
  prof.dataset = set.name;
  prof.n_series = set.series.size();
  prof.total_obs = set.total_obs();
  if (set.series.empty()) fail(ErrorKind::data, "profile: empty series set");
  std::vector<const Series*> sorted;
  for (const auto& s : set.series) sorted.push_back(&s);
  std::sort(sorted.begin(), sorted.end(),
            [](const Series* a, const Series* b) { return a->id < b->id; });

  auto metric = [&](const char* name, const std::function<double(const std::vector<double>&)>& f) {
    std::vector<double> vals, weights;
    for (const Series* s : sorted) {
      try {
        vals.push_back(f(s->values));
        weights.push_back(static_cast<double>(s->size()));
      } catch (const Error& e) {
        prof.warnings.push_back(fmt::format("{}: skipped series '{}': {}", name, s->id, e.what()));
      }
    }
    if (vals.empty()) {
      prof.warnings.push_back(fmt::format("{}: no eligible series", name));
      return std::numeric_limits<double>::quiet_NaN();
    }
    return length_weighted_mean(vals, weights);
  };
  prof.adf = metric("adf", [&](const std::vector<double>& v) { return adf_statistic(v, max_lag); });
  prof.forecastability = metric("forecastability", [&](const std::vector<double>& v) {
    const Forecastability f = forecastability(v);
    if (f.degenerate) fail(ErrorKind::domain, "zero spectral power");
    return f.value;
  });
  prof.hurst = metric("hurst", [](const std::vector<double>& v) { return hurst_exponent(v); });
  if (std::isnan(prof.adf) && std::isnan(prof.forecastability) && std::isnan(prof.hurst)) {
    fail(ErrorKind::data, "profile: no series is eligible for any metric");
  }
  return prof;
}

void write_profile_csv(const std::string& path, const std::vector<DatasetProfile>& rows) {
  std::ofstream f(path, std::ios::binary);
  if (!f) fail(ErrorKind::io, "cannot write " + path);
  f << "dataset,freq,n_series,total_obs,adf,forecastability,hurst\n";
  for (const auto& r : rows) {
    f << fmt::format("{},{},{},{},{},{},{}\n", r.dataset, r.freq, r.n_series, r.total_obs, r.adf,
                     r.forecastability, r.hurst);
  }
}

}  // namespace tflab
