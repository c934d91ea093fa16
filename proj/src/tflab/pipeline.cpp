#include "tflab/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include <fmt/format.h>

#include "tflab/digest.hpp"
#include "tflab/error.hpp"
#include "tflab/evaluation.hpp"
#include "tflab/portfolio.hpp"
#include "tflab/random.hpp"
#include "tflab/series.hpp"
#include "tflab/stats.hpp"

namespace fs = std::filesystem;

namespace tflab {

const std::vector<std::string>& pipeline_commands() {
  static const std::vector<std::string> commands = {
      "synth", "profile", "train-embed", "pretrain", "forecast", "impute", "backtest", "gradcheck"};
  return commands;
}

ModelConfig model_config_from(const RunConfig& cfg) {
  ModelConfig m;
  m.channels = cfg.count("channels");
  m.patch_len = cfg.count("patch_len");
  m.embed_dim = cfg.count("embed_dim");
  m.head_dim = cfg.count("head_dim");
  m.heads = cfg.count("heads");
  m.layers = cfg.count("layers");
  m.ffn_dim = cfg.count("ffn_dim");
  m.dropout = cfg.real("dropout");
  m.embed_hidden = cfg.count("embed_hidden");
  m.tau = cfg.real("tau");
  m.sigma_rel = cfg.real("sigma_rel");
  const std::string& mode = cfg.text("mask_mode");
  if (mode == "neg_inf") {
    m.mask_mode = MaskMode::neg_inf;
  } else if (mode == "product") {
    m.mask_mode = MaskMode::product;
  } else {
    fail(ErrorKind::usage, "mask_mode must be neg_inf or product, got '" + mode + "'");
  }
  m.validate();
  return m;
}

TrainConfig train_config_from(const RunConfig& cfg) {
  TrainConfig t;
  t.learning_rate = cfg.real("lr");
  t.batch_size = cfg.count("batch_size");
  t.seed = cfg.seed();
  t.embed_epochs = cfg.count("embed_epochs");
  t.embed_batch_size = cfg.count("embed_batch");
  t.embed_max_steps = cfg.count("embed_steps");
  return t;
}

namespace {

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item.erase(0, item.find_first_not_of(" \t"));
    item.erase(item.find_last_not_of(" \t") + 1);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::vector<double> real_list(const std::string& key, const std::string& text) {
  std::vector<double> out;
  for (const auto& item : split_list(text)) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != item.size()) fail(ErrorKind::usage, fmt::format("{}: '{}' is not a number", key, item));
    out.push_back(v);
  }
  return out;
}

}  // namespace

SynthParams synth_params_from(const RunConfig& cfg) {
  SynthParams params;
  params.phi = cfg.real("phi");
  params.sigma = cfg.real("sigma");
  params.mu = cfg.real("mu");
  params.x0 = cfg.real("x0");
  params.period = cfg.real("period");
  params.amplitude = cfg.real("amplitude");
  return params;
}

TaskSchedule schedule_from(const RunConfig& cfg, std::size_t task_count) {
  TaskSchedule s;
  const std::string& kind = cfg.text("schedule");
  if (kind == "round_robin") {
    s.kind = ScheduleKind::round_robin;
  } else if (kind == "weighted") {
    s.kind = ScheduleKind::weighted;
    s.weights = real_list("task_weights", cfg.text("task_weights"));
    if (s.weights.size() != task_count) {
      fail(ErrorKind::usage, fmt::format("task_weights: {} weights for {} tasks", s.weights.size(),
                                         task_count));
    }
  } else {
    fail(ErrorKind::usage, "schedule must be round_robin or weighted, got '" + kind + "'");
  }
  return s;
}

GradCheckResult model_gradcheck(const ModelConfig& config, std::uint64_t seed,
                                std::size_t coords_per_tensor) {
  ModelConfig mc = config;
  mc.dropout = 0.0;
  mc.validate();
  const TimeFormer model(mc, seed);
  const std::size_t span = 4 * mc.patch_len;
  Rng rng(mix_seed(seed, 3));
  auto draw = [&] {
    std::vector<double> v(mc.channels * span);
    for (auto& x : v) x = gaussian(rng);
    return Tensor::from_data({mc.channels, span}, std::move(v));
  };
  const Tensor context = draw();
  const Tensor target = draw();
  auto loss = [&] { return mse(model.teacher_forced(context, target, 0, false), target); };
  GradCheckOptions opts;
  opts.max_coords_per_tensor = coords_per_tensor;
  opts.seed = mix_seed(seed, 4);
  return grad_check(loss, model.parameters(), opts);
}

namespace {

class Run {
 public:
  Run(std::string command, const RunConfig& cfg) : command_(std::move(command)), cfg_(cfg) {
    out_ = cfg.text("out");
    if (out_.empty()) fail(ErrorKind::usage, "out must name a directory");
    std::error_code ec;
    fs::create_directories(out_, ec);
    if (ec || !fs::is_directory(out_)) fail(ErrorKind::io, "cannot create output directory " + out_.string());
  }

  const RunConfig& cfg() const { return cfg_; }

  fs::path input(const std::string& key) {
    const std::string& p = cfg_.text(key);
    if (p.empty()) fail(ErrorKind::usage, fmt::format("{} requires --{}", command_, key));
    if (!fs::is_regular_file(p)) fail(ErrorKind::io, fmt::format("{} file not found: {}", key, p));
    inputs_.push_back(p);
    return p;
  }

  fs::path checkpoint() {
    fs::path p = input("checkpoint");
    fs::path side = p.string() + ".cfg";
    if (fs::is_regular_file(side)) inputs_.push_back(side.string());
    return p;
  }

  std::string output(const std::string& name) {
    result_.outputs.push_back(name);
    return (out_ / name).string();
  }

  void say(const std::string& line) { result_.summary += line + "\n"; }
  void set_passed(bool v) { result_.passed = v; }

  PipelineResult finish() {
    std::string m = "# tflab run manifest\n";
    m += fmt::format("artifact_version = {}\n", kArtifactVersion);
    m += fmt::format("command = {}\n", command_);
    m += "\n[config]\n" + cfg_.to_text();
    m += "\n[inputs]\n";
    if (const std::string& c = cfg_.text("config"); !c.empty()) inputs_.insert(inputs_.begin(), c);
    for (const auto& p : inputs_) m += fmt::format("sha256 {}  {}\n", sha256_file(p), p);
    m += "\n[outputs]\n";
    for (const auto& o : result_.outputs) m += o + "\n";
    std::ofstream f(out_ / "manifest.txt", std::ios::binary);
    if (!f) fail(ErrorKind::io, "cannot write manifest in " + out_.string());
    f << m;
    return result_;
  }

 private:
  std::string command_;
  const RunConfig& cfg_;
  fs::path out_;
  std::vector<std::string> inputs_;
  PipelineResult result_;
};

SeriesSet load_named(Run& run) {
  const fs::path p = run.input("data");
  SeriesSet set = load_csv(p);
  set.name = p.stem().string();
  return set;
}

void cmd_synth(Run& run) {
  const RunConfig& c = run.cfg();
  const SynthParams params = synth_params_from(c);
  const SynthKind kind = parse_synth_kind(c.text("kind"));
  const SeriesSet set = synth_set(kind, params, c.count("len"), c.count("count"), c.seed());
  write_csv(set, run.output("series.csv"));
  run.say(fmt::format("wrote {} {} series of length {}", set.series.size(), synth_kind_name(kind),
                      c.count("len")));
}

void cmd_profile(Run& run) {
  const RunConfig& c = run.cfg();
  const SeriesSet set = load_named(run);
  const auto lag = c.integer("max_lag");
  DatasetProfile prof = length_weighted_profile(
      set, lag < 0 ? std::nullopt : std::optional<std::size_t>(static_cast<std::size_t>(lag)));
  prof.freq = frequency_name(parse_frequency(c.text("freq")));
  write_profile_csv(run.output("profile.csv"), {prof});
  if (!prof.warnings.empty()) {
    std::ofstream w(run.output("profile_warnings.txt"), std::ios::binary);
    for (const auto& line : prof.warnings) w << line << "\n";
  }
  run.say(fmt::format("{}: n_series={} total_obs={} adf={} forecastability={} hurst={}", prof.dataset,
                      prof.n_series, prof.total_obs, prof.adf, prof.forecastability, prof.hurst));
  for (const auto& line : prof.warnings) run.say("warning: " + line);
}

void train_phase_one(Run& run, Trainer& trainer, const PreparedData& prep) {
  const EmbedTrainResult res = trainer.train_embedding(prep.train, run.cfg().flag("truncate_tail"));
  write_embed_history_csv(run.output("embed_history.csv"), res.history);
  if (!res.history.empty()) {
    const auto& last = res.history.back();
    run.say(fmt::format("embedding: {} steps, final info_nce={} mse={}", res.history.size(),
                        last.info_nce, last.mse));
  }
  if (res.degenerate_patches) {
    run.say(fmt::format("embedding: {} flip-invariant patches had no contrastive pair",
                        res.degenerate_patches));
  }
}

void cmd_train_embed(Run& run) {
  const ModelConfig mc = model_config_from(run.cfg());
  const PreparedData prep = prepare_panels(load_named(run), mc.channels);
  TimeFormer model(mc, run.cfg().seed());
  Trainer trainer(model, train_config_from(run.cfg()));
  train_phase_one(run, trainer, prep);
  const std::string path = run.output("embed.ckpt");
  save_embedding(model, path);
  run.output("embed.ckpt.cfg");
}

void cmd_pretrain(Run& run) {
  const RunConfig& c = run.cfg();
  const ModelConfig mc = model_config_from(c);
  const PreparedData prep = prepare_panels(load_named(run), mc.channels);
  TimeFormer model(mc, c.seed());
  Trainer trainer(model, train_config_from(c));
  if (!c.text("checkpoint").empty()) {
    const fs::path ck = run.checkpoint();
    const ModelConfig stored = read_model_config(ck);
    if (stored.embed_config().input_width() != mc.embed_config().input_width() ||
        stored.embed_dim != mc.embed_dim || stored.embed_hidden != mc.embed_hidden) {
      fail(ErrorKind::format, "embedding checkpoint " + ck.string() + " does not fit this model");
    }
    load_embedding(model, ck);
    trainer.mark_embedding_trained();
    run.say("embedding: loaded " + ck.string());
  } else {
    train_phase_one(run, trainer, prep);
  }
  trainer.freeze_embedding();
  const std::vector<TaskSpec> tasks = parse_tasks(c.text("tasks"));
  trainer.pretrain(prep.train, tasks, c.count("steps"), schedule_from(c, tasks.size()));
  write_pretrain_history_csv(run.output("pretrain_history.csv"), trainer.history());
  trainer.save_checkpoint(run.output("model.ckpt"));
  run.output("model.ckpt.cfg");

  std::map<std::string, std::pair<double, std::size_t>> tail;
  const auto& h = trainer.history();
  for (std::size_t i = h.size() > 200 ? h.size() - 200 : 0; i < h.size(); ++i) {
    tail[h[i].task].first += h[i].loss;
    ++tail[h[i].task].second;
  }
  for (const auto& t : tasks) {
    const auto it = tail.find(t.name());
    if (it != tail.end()) {
      run.say(fmt::format("pretrain {}: recent mean loss {}", t.name(),
                          it->second.first / static_cast<double>(it->second.second)));
    }
  }
}

void cmd_forecast(Run& run) {
  const RunConfig& c = run.cfg();
  const TimeFormer model = load_model(run.checkpoint());
  const PreparedData prep = prepare_panels(load_named(run), model.config().channels);
  if (prep.test_raw.empty()) fail(ErrorKind::data, "forecast: no complete test panel");
  std::vector<ForecastReport> rows, baseline;
  for (const TaskSpec& task : parse_tasks(c.text("tasks"))) {
    task.validate(model.config().patch_len);
    std::vector<ForecastReport> per_model, per_last;
    for (std::size_t p = 0; p < prep.test_raw.size(); ++p) {
      ModelForecaster mf(model, prep.stats[p]);
      LastValueForecaster lv;
      per_model.push_back(forecast_eval(mf, prep.test_raw[p], task, true));
      per_last.push_back(forecast_eval(lv, prep.test_raw[p], task, false));
    }
    rows.push_back(merge_reports(per_model));
    baseline.push_back(merge_reports(per_last));
    run.say(fmt::format("forecast {}: model mse={} mae={}; last-value mse={} mae={}", task.name(),
                        rows.back().mse, rows.back().mae, baseline.back().mse, baseline.back().mae));
  }
  write_forecast_csv(run.output("forecast.csv"), rows);
  write_forecast_csv(run.output("forecast_baseline.csv"), baseline);
  write_trace_csv(run.output("forecast_trace.csv"), rows);
}

ImputeResult pool(const std::vector<ImputeResult>& parts, double ratio) {
  ImputeResult r;
  r.ratio = ratio;
  for (const auto& p : parts) {
    r.mse += p.mse * static_cast<double>(p.points);
    r.mae += p.mae * static_cast<double>(p.points);
    r.points += p.points;
  }
  r.mse /= static_cast<double>(r.points);
  r.mae /= static_cast<double>(r.points);
  return r;
}

void cmd_impute(Run& run) {
  const RunConfig& c = run.cfg();
  const TimeFormer model = load_model(run.checkpoint());
  const std::size_t channels = model.config().channels;
  const PreparedData prep = prepare_panels(load_named(run), channels);
  const std::vector<double> ratios = real_list("mask_ratios", c.text("mask_ratios"));
  if (ratios.empty()) fail(ErrorKind::usage, "mask_ratios is empty");
  ImputerOptions opts;
  opts.window = c.count("impute_window");
  opts.steps = c.count("impute_steps");
  opts.batch_size = c.count("batch_size");
  opts.learning_rate = c.real("lr");
  opts.seed = c.seed();
  const MaskLayout layout = parse_mask_layout(c.text("mask_layout"));
  std::vector<ImputeResult> rows, baseline;
  for (double ratio : ratios) {
    Imputer imputer(model, opts);
    imputer.train(prep.train, ratio);
    std::vector<ImputeResult> parts, mean_parts;
    for (std::size_t p = 0; p < prep.test.size(); ++p) {
      ImputationSpec spec;
      spec.mask_ratio = ratio;
      spec.mask_seed = mix_seed(static_cast<std::uint64_t>(c.integer("mask_seed")), p);
      spec.layout = layout;
      const Tensor& raw = prep.test_raw[p];
      const ImputeMask mask = make_impute_mask(channels, raw.dim(1), opts.window, spec);
      parts.push_back(imputer.evaluate(prep.test[p], mask, ratio, &prep.stats[p]));
      mean_parts.push_back(mean_fill_eval(raw, mask, ratio));
    }
    if (parts.empty()) fail(ErrorKind::data, "impute: no complete test panel");
    rows.push_back(pool(parts, ratio));
    baseline.push_back(pool(mean_parts, ratio));
    run.say(fmt::format("impute ratio {}: model mse={} mae={}; mean-fill mse={} mae={}", ratio,
                        rows.back().mse, rows.back().mae, baseline.back().mse, baseline.back().mae));
  }
  write_impute_csv(run.output("impute.csv"), rows);
  write_impute_csv(run.output("impute_meanfill.csv"), baseline);
}

// Predicted cumulative return over `forward` days for every asset, from the
// tail of the lookback window. Each group of `channels` assets is normalized
// with statistics of its own lookback window.
std::function<std::vector<double>(const Eigen::MatrixXd&)> model_return_forecast(
    std::shared_ptr<const TimeFormer> model, std::size_t context, std::size_t forward) {
  return [model, context, forward](const Eigen::MatrixXd& prices) {
    const ModelConfig& mc = model->config();
    const std::size_t n = static_cast<std::size_t>(prices.cols());
    const std::size_t l = static_cast<std::size_t>(prices.rows());
    const std::size_t ctx = std::min(context, l / mc.patch_len * mc.patch_len);
    if (ctx == 0) fail(ErrorKind::data, "model strategy: lookback shorter than one patch");
    if (mc.channels != 1 && mc.channels != n) {
      fail(ErrorKind::parameter,
           fmt::format("model strategy: a {}-channel model cannot price {} assets", mc.channels, n));
    }
    const std::size_t horizon = (forward + mc.patch_len - 1) / mc.patch_len * mc.patch_len;
    std::vector<double> out(n, 0.0);
    for (std::size_t g0 = 0; g0 < n; g0 += mc.channels) {
      const std::size_t cn = mc.channels;
      std::vector<ZScore> stats(cn);
      std::vector<double> z(cn * ctx);
      bool flat = false;
      for (std::size_t k = 0; k < cn; ++k) {
        std::vector<double> window(l);
        for (std::size_t t = 0; t < l; ++t) window[t] = prices(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(g0 + k));
        double m = 0.0, v = 0.0;
        for (double x : window) m += x;
        m /= static_cast<double>(l);
        for (double x : window) v += (x - m) * (x - m);
        v /= static_cast<double>(l);
        if (!(v > 0.0)) {
          flat = true;
          break;
        }
        stats[k] = {m, std::sqrt(v)};
        for (std::size_t t = 0; t < ctx; ++t) z[k * ctx + t] = stats[k].apply(window[l - ctx + t]);
      }
      if (flat) continue;
      const Tensor pred = autoregressive_infer(*model, Tensor::from_data({cn, ctx}, std::move(z)), horizon);
      for (std::size_t k = 0; k < cn; ++k) {
        const double last = prices(static_cast<Eigen::Index>(l - 1), static_cast<Eigen::Index>(g0 + k));
        out[g0 + k] = stats[k].invert(pred.at(k, forward - 1)) / last - 1.0;
      }
    }
    return out;
  };
}

void cmd_backtest(Run& run) {
  const RunConfig& c = run.cfg();
  const SeriesSet set = load_named(run);
  if (set.series.empty()) fail(ErrorKind::data, "backtest: no series");
  const std::size_t t_len = set.series[0].size();
  for (const auto& s : set.series) {
    if (s.size() != t_len) {
      fail(ErrorKind::data, fmt::format("backtest: series '{}' has {} prices, expected {}", s.id,
                                        s.size(), t_len));
    }
  }
  Eigen::MatrixXd prices(static_cast<Eigen::Index>(t_len), static_cast<Eigen::Index>(set.series.size()));
  for (std::size_t j = 0; j < set.series.size(); ++j)
    for (std::size_t t = 0; t < t_len; ++t)
      prices(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(j)) = set.series[j].values[t];

  StrategyOptions so;
  so.risk_aversion = c.real("risk_aversion");
  if (std::all_of(set.series.begin(), set.series.end(), [](const Series& s) { return s.market_cap.has_value(); })) {
    std::vector<double> caps;
    for (const auto& s : set.series) caps.push_back(*s.market_cap);
    so.caps = caps;
  }
  const std::size_t lookback = c.count("lookback"), forward = c.count("forward");
  const std::vector<std::string> names = split_list(c.text("strategies"));
  if (names.empty()) fail(ErrorKind::usage, "strategies is empty");
  for (const auto& name : names) {
    if (parse_strategy(name) == Strategy::model && !so.forecast) {
      auto model = std::make_shared<const TimeFormer>(load_model(run.checkpoint()));
      const std::vector<TaskSpec> tasks = parse_tasks(c.text("tasks"));
      so.forecast = model_return_forecast(model, tasks.front().context_len, forward);
    }
  }
  BacktestOptions bo;
  bo.risk_free = c.real("risk_free");
  bo.periods_per_year = c.real("periods_per_year");
  std::vector<BacktestReport> reports;
  for (const auto& name : names) {
    const Strategy s = parse_strategy(name);
    reports.push_back(backtest(prices, make_weight_rule(s, so), strategy_name(s), lookback, forward, bo));
    const auto& r = reports.back();
    run.say(fmt::format("backtest {} {}-{}: r_d={} s_a={} mdd={}{}", r.strategy, lookback, forward,
                        r.r_d, r.s_a, r.mdd,
                        r.fallbacks ? fmt::format(" (equal-weight fallback on {} rebalances)", r.fallbacks)
                                    : std::string()));
  }
  write_backtest_csv(run.output("backtest.csv"), reports);
}

void cmd_gradcheck(Run& run) {
  const RunConfig& c = run.cfg();
  ModelConfig mc = model_config_from(c);
  if (c.source("channels") == "default") mc.channels = 2;
  const GradCheckResult r = model_gradcheck(mc, c.seed(), c.count("gradcheck_coords"));
  const bool ok = r.max_rel_error < kGradCheckTolerance;
  std::ofstream f(run.output("gradcheck.txt"), std::ios::binary);
  f << fmt::format("channels = {}\nmax_rel_error = {}\ncoords_checked = {}\nworst_param = {}\n"
                   "passed = {}\n",
                   mc.channels, r.max_rel_error, r.coords_checked, r.worst_param,
                   ok ? "true" : "false");
  run.say(fmt::format("gradcheck: max relative error {} over {} coordinates (worst {}) {}",
                      r.max_rel_error, r.coords_checked, r.worst_param, ok ? "PASS" : "FAIL"));
  run.set_passed(ok);
}

}  // namespace

PipelineResult run_pipeline(const std::string& command, const RunConfig& config) {
  static const std::map<std::string, void (*)(Run&)> table = {
      {"synth", cmd_synth},         {"profile", cmd_profile},   {"train-embed", cmd_train_embed},
      {"pretrain", cmd_pretrain},   {"forecast", cmd_forecast}, {"impute", cmd_impute},
      {"backtest", cmd_backtest},   {"gradcheck", cmd_gradcheck}};
  const auto it = table.find(command);
  if (it == table.end()) fail(ErrorKind::usage, "unknown command '" + command + "'");
  Run run(command, config);
  it->second(run);
  return run.finish();
}

}  // namespace tflab
