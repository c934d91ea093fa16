#include "tflab/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <fmt/format.h>

#include "tflab/error.hpp"
#include "tflab/optim.hpp"
#include "tflab/random.hpp"

namespace tflab {

Tensor LastValueForecaster::predict(const Tensor& context, std::size_t horizon, std::size_t) {
  const std::size_t c = context.dim(0), l = context.dim(1);
  std::vector<double> out(c * horizon);
  for (std::size_t ch = 0; ch < c; ++ch)
    std::fill_n(out.begin() + static_cast<std::ptrdiff_t>(ch * horizon), horizon,
                context.at(ch, l - 1));
  return Tensor::from_data({c, horizon}, std::move(out));
}

Tensor OracleForecaster::predict(const Tensor&, std::size_t horizon, std::size_t target_start) {
  return slice_cols(series_, target_start, horizon);
}

Tensor ModelForecaster::predict(const Tensor& context, std::size_t horizon, std::size_t) {
  const std::size_t c = context.dim(0), l = context.dim(1);
  if (stats_.size() != c) fail(ErrorKind::dimension, "model forecaster: one z-score per channel");
  std::vector<double> z(c * l);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t t = 0; t < l; ++t) z[ch * l + t] = stats_[ch].apply(context.at(ch, t));
  const Tensor pred = autoregressive_infer(model_, Tensor::from_data({c, l}, std::move(z)), horizon);
  std::vector<double> out(c * horizon);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t t = 0; t < horizon; ++t)
      out[ch * horizon + t] = stats_[ch].invert(pred.at(ch, t));
  return Tensor::from_data({c, horizon}, std::move(out));
}

ForecastReport forecast_eval(Forecaster& forecaster, const Tensor& series, const TaskSpec& task,
                             bool keep_trace) {
  if (series.rank() != 2) fail(ErrorKind::dimension, "forecast_eval: series must be [C x T]");
  const std::size_t c = series.dim(0), t_len = series.dim(1);
  const std::size_t span = task.total_len();
  if (task.context_len == 0 || task.horizon_len == 0) {
    fail(ErrorKind::parameter, "forecast_eval: context and horizon must be positive");
  }
  if (t_len < span) {
    fail(ErrorKind::task, fmt::format("forecast_eval: test split of length {} has no complete "
                                      "{} window (needs {})",
                                      t_len, task.name(), span));
  }
  NoGradGuard no_grad;
  ForecastReport rep;
  rep.task = task;
  rep.per_horizon_mse.assign(task.horizon_len, 0.0);
  double se = 0.0, ae = 0.0;
  for (std::size_t start = 0; start + span <= t_len; start += span) {
    const Tensor context = slice_cols(series, start, task.context_len);
    const std::size_t target_start = start + task.context_len;
    const Tensor pred = forecaster.predict(context, task.horizon_len, target_start);
    if (pred.rank() != 2 || pred.dim(0) != c || pred.dim(1) != task.horizon_len) {
      fail(ErrorKind::dimension, "forecaster returned a wrongly shaped prediction");
    }
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t h = 0; h < task.horizon_len; ++h) {
        const double truth = series.at(ch, target_start + h);
        const double p = pred.at(ch, h);
        const double d = truth - p;
        se += d * d;
        ae += std::abs(d);
        rep.per_horizon_mse[h] += d * d;
        if (keep_trace) rep.trace.push_back({rep.windows, ch, h, truth, p});
      }
    }
    ++rep.windows;
  }
  rep.points = rep.windows * c * task.horizon_len;
  rep.mse = se / static_cast<double>(rep.points);
  rep.mae = ae / static_cast<double>(rep.points);
  for (auto& v : rep.per_horizon_mse) v /= static_cast<double>(rep.windows * c);
  return rep;
}

ForecastReport merge_reports(const std::vector<ForecastReport>& reports) {
  if (reports.empty()) fail(ErrorKind::data, "merge_reports: nothing to merge");
  ForecastReport out;
  out.task = reports[0].task;
  out.per_horizon_mse.assign(out.task.horizon_len, 0.0);
  double se = 0.0, ae = 0.0, rows = 0.0;
  for (const auto& r : reports) {
    if (!(r.task == out.task)) fail(ErrorKind::data, "merge_reports: tasks differ");
    const double n = static_cast<double>(r.points);
    se += r.mse * n;
    ae += r.mae * n;
    const double per_h = n / static_cast<double>(out.task.horizon_len);
    for (std::size_t h = 0; h < out.per_horizon_mse.size(); ++h) out.per_horizon_mse[h] += r.per_horizon_mse[h] * per_h;
    rows += per_h;
    for (auto p : r.trace) {
      p.window += out.windows;
      out.trace.push_back(p);
    }
    out.windows += r.windows;
    out.points += r.points;
  }
  out.mse = se / static_cast<double>(out.points);
  out.mae = ae / static_cast<double>(out.points);
  for (auto& v : out.per_horizon_mse) v /= rows;
  return out;
}

void write_forecast_csv(const std::string& path, const std::vector<ForecastReport>& reports) {
  std::ofstream f(path, std::ios::binary);
  if (!f) fail(ErrorKind::io, "cannot write " + path);
  f << "task,horizon,mse,mae\n";
  for (const auto& r : reports) {
    f << fmt::format("{},{},{},{}\n", r.task.name(), r.task.horizon_len, r.mse, r.mae);
  }
}

void write_trace_csv(const std::string& path, const std::vector<ForecastReport>& reports) {
  std::ofstream f(path, std::ios::binary);
  if (!f) fail(ErrorKind::io, "cannot write " + path);
  f << "task,window,channel,step,truth,pred\n";
  for (const auto& r : reports)
    for (const auto& p : r.trace)
      f << fmt::format("{},{},{},{},{},{}\n", r.task.name(), p.window, p.channel, p.step, p.truth,
                       p.pred);
}

// ----------------------------------------------------------------------------
// Imputation

MaskLayout parse_mask_layout(const std::string& text) {
  if (text == "random_points") return MaskLayout::random_points;
  if (text == "block") return MaskLayout::block;
  fail(ErrorKind::usage, "unknown mask layout '" + text + "' (expected random_points, block)");
}

void ImputationSpec::validate() const {
  if (!(mask_ratio > 0.0 && mask_ratio < 1.0)) {
    fail(ErrorKind::parameter, "imputation: mask ratio must lie in (0, 1)");
  }
}

namespace {

bool has_blind_row(const ImputeMask& m) {
  for (std::size_t c = 0; c < m.channels; ++c) {
    for (std::size_t w0 = 0; w0 < m.covered; w0 += m.window) {
      bool all = true;
      for (std::size_t t = w0; t < w0 + m.window && all; ++t) all = m.at(c, t);
      if (all) return true;
    }
  }
  return false;
}

}  // namespace

ImputeMask make_impute_mask(std::size_t channels, std::size_t length, std::size_t window,
                            const ImputationSpec& spec) {
  spec.validate();
  if (window == 0 || length < window) {
    fail(ErrorKind::task, fmt::format("imputation: series of length {} is shorter than the {}-point "
                                      "window",
                                      length, window));
  }
  ImputeMask m;
  m.channels = channels;
  m.length = length;
  m.window = window;
  m.covered = length / window * window;
  const std::size_t eligible = channels * m.covered;
  const std::size_t target = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::floor(spec.mask_ratio * static_cast<double>(eligible))));
  constexpr std::size_t kMaxAttempts = 100;
  for (std::size_t attempt = 0; attempt < kMaxAttempts; ++attempt) {
    Rng rng(mix_seed(spec.mask_seed, attempt));
    m.bits.assign(channels * length, 0);
    if (spec.layout == MaskLayout::random_points) {
      std::vector<std::size_t> pool(eligible);
      std::iota(pool.begin(), pool.end(), std::size_t{0});
      for (std::size_t i = 0; i < target; ++i) {
        std::swap(pool[i], pool[i + uniform_index(rng, eligible - i)]);
        const std::size_t c = pool[i] / m.covered, t = pool[i] % m.covered;
        m.bits[c * length + t] = 1;
      }
      m.masked = target;
    } else {
      const std::size_t run = std::max<std::size_t>(
          1, static_cast<std::size_t>(std::floor(spec.mask_ratio * static_cast<double>(window))));
      m.masked = 0;
      for (std::size_t c = 0; c < channels; ++c)
        for (std::size_t w0 = 0; w0 < m.covered; w0 += window) {
          const std::size_t off = uniform_index(rng, window - run + 1);
          for (std::size_t t = 0; t < run; ++t) m.bits[c * length + w0 + off + t] = 1;
          m.masked += run;
        }
    }
    m.resamples = attempt;
    if (!has_blind_row(m)) return m;
  }
  fail(ErrorKind::task, "imputation: every mask draw hid an entire window row");
}

ImputeResult mean_fill_eval(const Tensor& series, const ImputeMask& mask, double ratio) {
  ImputeResult r;
  r.ratio = ratio;
  double se = 0.0, ae = 0.0;
  for (std::size_t c = 0; c < mask.channels; ++c) {
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t t = 0; t < mask.covered; ++t)
      if (!mask.at(c, t)) {
        sum += series.at(c, t);
        ++n;
      }
    const double fill = n ? sum / static_cast<double>(n) : 0.0;
    for (std::size_t t = 0; t < mask.covered; ++t)
      if (mask.at(c, t)) {
        const double d = series.at(c, t) - fill;
        se += d * d;
        ae += std::abs(d);
        ++r.points;
      }
  }
  r.mse = se / static_cast<double>(r.points);
  r.mae = ae / static_cast<double>(r.points);
  return r;
}

Imputer::Imputer(const TimeFormer& model, ImputerOptions options)
    : model_(model.clone()), options_(options) {
  const ModelConfig& cfg = model_.config();
  if (options_.window == 0 || options_.window % cfg.patch_len != 0) {
    fail(ErrorKind::parameter, "imputer: window must be a positive multiple of patch_len");
  }
  set_requires_grad(model_.parameters(), false);
  Rng rng(mix_seed(options_.seed, 77));
  std::vector<double> e(cfg.embed_dim);
  for (auto& v : e) v = 0.02 * gaussian(rng);
  mask_embedding_ = Tensor::from_data({1, cfg.embed_dim}, std::move(e), true);
  head_ = Linear(cfg.embed_dim, cfg.patch_len, true, rng);
  set_requires_grad(trainable_parameters(), true);
}

NamedTensors Imputer::trainable_parameters() const {
  NamedTensors out;
  for (const auto& p : model_.transformer_parameters()) {
    if (p.name.rfind("tf.enc.", 0) == 0 || p.name.rfind("tf.fusion.", 0) == 0) out.push_back(p);
  }
  out.push_back({"impute.mask_emb", mask_embedding_});
  head_.collect("impute.head", out);
  return out;
}

Tensor Imputer::forward(const Tensor& window, const std::vector<std::uint8_t>& hidden,
                        std::uint64_t seed, bool training) const {
  const ModelConfig& cfg = model_.config();
  const std::size_t c = window.dim(0), l = window.dim(1), tp = cfg.patch_len;
  const std::size_t steps = l / tp;
  std::vector<double> filled(c * l), frac(c * steps, 0.0);
  for (std::size_t i = 0; i < c * l; ++i) {
    filled[i] = hidden[i] ? 0.0 : window.data()[i];
    if (hidden[i]) frac[i / tp] += 1.0 / static_cast<double>(tp);
  }
  Tensor tokens = model_.embed_series(Tensor::from_data({c, l}, std::move(filled)));
  tokens = add(tokens, matmul(Tensor::from_data({c * steps, 1}, std::move(frac)), mask_embedding_));
  Tensor h = model_.encode(tokens, steps, seed, training);
  return tokens_to_series(head_.forward(h), c);
}

std::vector<double> Imputer::train(const std::vector<Tensor>& panels, double ratio) {
  std::vector<std::size_t> eligible;
  for (std::size_t i = 0; i < panels.size(); ++i)
    if (panels[i].dim(1) >= options_.window) eligible.push_back(i);
  if (eligible.empty()) fail(ErrorKind::task, "imputer: no training series covers one window");
  Optimizer opt(trainable_parameters(), {OptimizerKind::adam, options_.learning_rate});
  std::vector<double> losses;
  for (std::size_t step = 1; step <= options_.steps; ++step) {
    Rng rng(mix_seed(options_.seed ^ 0x1a9b7ULL, step));
    Tensor total;
    for (std::size_t b = 0; b < options_.batch_size; ++b) {
      const Tensor& s = panels[eligible[uniform_index(rng, eligible.size())]];
      const std::size_t start = uniform_index(rng, s.dim(1) - options_.window + 1);
      Tensor win;
      {
        NoGradGuard g;
        win = slice_cols(s, start, options_.window);
      }
      ImputationSpec spec;
      spec.mask_ratio = ratio;
      spec.mask_seed = rng();
      const ImputeMask m = make_impute_mask(win.dim(0), options_.window, options_.window, spec);
      std::vector<double> sel(m.bits.begin(), m.bits.end());
      const Tensor pick = Tensor::from_data(win.shape(), std::move(sel));
      const Tensor pred = forward(win, m.bits, mix_seed(options_.seed, step * 131 + b), true);
      Tensor loss = scale(sum_squares(mul(sub(pred, win), pick)), 1.0 / static_cast<double>(m.masked));
      total = total.defined() ? add(total, loss) : loss;
    }
    total = scale(total, 1.0 / static_cast<double>(options_.batch_size));
    const double v = total.item();
    if (!std::isfinite(v)) {
      fail(ErrorKind::training, fmt::format("imputer: non-finite loss at step {}", step));
    }
    opt.zero_grad();
    total.backward();
    opt.step();
    losses.push_back(v);
  }
  opt.zero_grad();
  return losses;
}

Tensor Imputer::reconstruct(const Tensor& window, const std::vector<std::uint8_t>& hidden) const {
  NoGradGuard g;
  return forward(window, hidden, 0, false);
}

ImputeResult Imputer::evaluate(const Tensor& series, const ImputeMask& mask, double ratio,
                               const std::vector<ZScore>* stats) const {
  NoGradGuard g;
  const std::size_t c = series.dim(0), win = options_.window;
  if (mask.window != win || mask.channels != c || mask.length != series.dim(1)) {
    fail(ErrorKind::dimension, "imputer: mask does not match the series and window");
  }
  auto raw = [&](std::size_t ch, double v) { return stats ? (*stats)[ch].invert(v) : v; };
  ImputeResult r;
  r.ratio = ratio;
  double se = 0.0, ae = 0.0;
  for (std::size_t w0 = 0; w0 < mask.covered; w0 += win) {
    const Tensor block = slice_cols(series, w0, win);
    std::vector<std::uint8_t> hidden(c * win);
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t t = 0; t < win; ++t) hidden[ch * win + t] = mask.bits[ch * mask.length + w0 + t];
    const Tensor pred = forward(block, hidden, 0, false);
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t t = 0; t < win; ++t) {
        if (!hidden[ch * win + t]) continue;
        const double d = raw(ch, block.at(ch, t)) - raw(ch, pred.at(ch, t));
        se += d * d;
        ae += std::abs(d);
        ++r.points;
      }
  }
  r.mse = se / static_cast<double>(r.points);
  r.mae = ae / static_cast<double>(r.points);
  return r;
}

void write_impute_csv(const std::string& path, const std::vector<ImputeResult>& rows) {
  std::ofstream f(path, std::ios::binary);
  if (!f) fail(ErrorKind::io, "cannot write " + path);
  f << "ratio,mse,mae\n";
  for (const auto& r : rows) f << fmt::format("{},{},{}\n", r.ratio, r.mse, r.mae);
}

}  // namespace tflab
