#include "tflab/tflab.h"

#include <cstdlib>
#include <exception>
#include <map>
#include <memory>
#include <new>
#include <optional>
#include <string>

#include <Eigen/Dense>

#include "tflab/config.hpp"
#include "tflab/error.hpp"
#include "tflab/metrics.hpp"
#include "tflab/pipeline.hpp"
#include "tflab/portfolio.hpp"
#include "tflab/series.hpp"
#include "tflab/stats.hpp"
#include "tflab/timeformer.hpp"
#include "tflab/training.hpp"

struct tflab_config {
  std::map<std::string, std::string> flags;
  std::optional<std::string> file_text;
  std::optional<std::string> env_seed;
  bool env_seed_set = false;
  std::optional<tflab::RunConfig> resolved;
  std::string text_cache;
  std::string summary;
};

struct tflab_series_set {
  tflab::SeriesSet set;
};

struct tflab_model {
  tflab::TimeFormer model;
};

namespace {

thread_local std::string g_last_error;

tflab_status status_of(tflab::ErrorKind k) {
  using tflab::ErrorKind;
  switch (k) {
    case ErrorKind::dimension: return TFLAB_ERR_DIMENSION;
    case ErrorKind::domain: return TFLAB_ERR_DOMAIN;
    case ErrorKind::parameter: return TFLAB_ERR_PARAMETER;
    case ErrorKind::state: return TFLAB_ERR_STATE;
    case ErrorKind::format: return TFLAB_ERR_FORMAT;
    case ErrorKind::parse: return TFLAB_ERR_PARSE;
    case ErrorKind::data: return TFLAB_ERR_DATA;
    case ErrorKind::io: return TFLAB_ERR_IO;
    case ErrorKind::usage: return TFLAB_ERR_USAGE;
    case ErrorKind::training: return TFLAB_ERR_TRAINING;
    case ErrorKind::task: return TFLAB_ERR_TASK;
  }
  return TFLAB_ERR_INTERNAL;
}

tflab_status set_error(tflab_status s, std::string message) {
  g_last_error = std::move(message);
  return s;
}

template <class F>
tflab_status guarded(F&& body) {
  try {
    return body();
  } catch (const tflab::Error& e) {
    return set_error(status_of(e.kind()), e.what());
  } catch (const std::bad_alloc&) {
    return set_error(TFLAB_ERR_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return set_error(TFLAB_ERR_INTERNAL, e.what());
  } catch (...) {
    return set_error(TFLAB_ERR_INTERNAL, "unknown failure");
  }
}

#define TFLAB_REQUIRE(ptr)                                                     \
  do {                                                                         \
    if (!(ptr)) return set_error(TFLAB_ERR_NULL_ARGUMENT, #ptr " is null");    \
  } while (0)

const tflab::RunConfig& resolved(const tflab_config* c) {
  if (!c->resolved) tflab::fail(tflab::ErrorKind::state, "config is not resolved");
  return *c->resolved;
}

void resolve(tflab_config* c) {
  std::optional<std::string> env = c->env_seed;
  if (!c->env_seed_set) {
    if (const char* e = std::getenv("TFLAB_SEED")) env = std::string(e);
  }
  c->resolved = tflab::resolve_config(c->flags, c->file_text, env);
}

const tflab::KeySpec* key_at(size_t i) {
  const auto& keys = tflab::config_keys();
  return i < keys.size() ? &keys[i] : nullptr;
}

std::vector<double> copy_of(const double* p, size_t n) { return std::vector<double>(p, p + n); }

}  // namespace

extern "C" {

const char* tflab_version(void) { return tflab::kArtifactVersion; }

const char* tflab_last_error(void) { return g_last_error.c_str(); }

const char* tflab_status_name(tflab_status s) {
  switch (s) {
    case TFLAB_OK: return "ok";
    case TFLAB_ERR_DIMENSION: return "dimension error";
    case TFLAB_ERR_DOMAIN: return "domain error";
    case TFLAB_ERR_PARAMETER: return "parameter error";
    case TFLAB_ERR_STATE: return "state error";
    case TFLAB_ERR_FORMAT: return "format error";
    case TFLAB_ERR_PARSE: return "parse error";
    case TFLAB_ERR_DATA: return "data error";
    case TFLAB_ERR_IO: return "path error";
    case TFLAB_ERR_USAGE: return "usage error";
    case TFLAB_ERR_TRAINING: return "training error";
    case TFLAB_ERR_TASK: return "task error";
    case TFLAB_ERR_CHECK_FAILED: return "check failed";
    case TFLAB_ERR_NULL_ARGUMENT: return "null argument";
    case TFLAB_ERR_INTERNAL: return "internal error";
  }
  return "unknown status";
}

int tflab_exit_code(tflab_status s) {
  if (s == TFLAB_OK) return 0;
  if (s == TFLAB_ERR_USAGE) return 2;
  return 1;
}

size_t tflab_key_count(void) { return tflab::config_keys().size(); }
const char* tflab_key_name(size_t i) { return key_at(i) ? key_at(i)->name.c_str() : nullptr; }
const char* tflab_key_help(size_t i) { return key_at(i) ? key_at(i)->help.c_str() : nullptr; }
const char* tflab_key_default(size_t i) {
  return key_at(i) ? key_at(i)->default_value.c_str() : nullptr;
}
tflab_key_type tflab_key_type_of(size_t i) {
  if (!key_at(i)) return TFLAB_KEY_TEXT;
  switch (key_at(i)->type) {
    case tflab::KeyType::integer: return TFLAB_KEY_INTEGER;
    case tflab::KeyType::real: return TFLAB_KEY_REAL;
    case tflab::KeyType::flag: return TFLAB_KEY_FLAG;
    case tflab::KeyType::text: break;
  }
  return TFLAB_KEY_TEXT;
}

size_t tflab_command_count(void) { return tflab::pipeline_commands().size(); }
const char* tflab_command_name(size_t i) {
  const auto& c = tflab::pipeline_commands();
  return i < c.size() ? c[i].c_str() : nullptr;
}

tflab_status tflab_config_create(tflab_config** out) {
  TFLAB_REQUIRE(out);
  return guarded([&] {
    *out = new tflab_config();
    return TFLAB_OK;
  });
}

void tflab_config_destroy(tflab_config* config) { delete config; }

tflab_status tflab_config_set(tflab_config* config, const char* key, const char* value) {
  TFLAB_REQUIRE(config);
  TFLAB_REQUIRE(key);
  TFLAB_REQUIRE(value);
  return guarded([&] {
    const tflab::KeySpec* k = tflab::find_key(key);
    if (!k) tflab::fail(tflab::ErrorKind::usage, std::string("unknown config key '") + key + "'");
    tflab::check_value(*k, value);
    config->flags[key] = value;
    config->resolved.reset();
    return TFLAB_OK;
  });
}

tflab_status tflab_config_set_file_text(tflab_config* config, const char* text) {
  TFLAB_REQUIRE(config);
  TFLAB_REQUIRE(text);
  return guarded([&] {
    tflab::parse_config_text(text);
    config->file_text = std::string(text);
    config->resolved.reset();
    return TFLAB_OK;
  });
}

tflab_status tflab_config_set_env_seed(tflab_config* config, const char* seed) {
  TFLAB_REQUIRE(config);
  config->env_seed_set = true;
  config->env_seed = seed ? std::optional<std::string>(seed) : std::nullopt;
  config->resolved.reset();
  return TFLAB_OK;
}

tflab_status tflab_config_resolve(tflab_config* config) {
  TFLAB_REQUIRE(config);
  return guarded([&] {
    resolve(config);
    return TFLAB_OK;
  });
}

tflab_status tflab_config_get(const tflab_config* config, const char* key, const char** value) {
  TFLAB_REQUIRE(config);
  TFLAB_REQUIRE(key);
  TFLAB_REQUIRE(value);
  return guarded([&] {
    *value = resolved(config).text(key).c_str();
    return TFLAB_OK;
  });
}

tflab_status tflab_config_source(const tflab_config* config, const char* key, const char** source) {
  TFLAB_REQUIRE(config);
  TFLAB_REQUIRE(key);
  TFLAB_REQUIRE(source);
  return guarded([&] {
    *source = resolved(config).source(key).c_str();
    return TFLAB_OK;
  });
}

tflab_status tflab_config_to_text(const tflab_config* config, const char** text) {
  TFLAB_REQUIRE(config);
  TFLAB_REQUIRE(text);
  return guarded([&] {
    auto* c = const_cast<tflab_config*>(config);
    c->text_cache = resolved(config).to_text();
    *text = c->text_cache.c_str();
    return TFLAB_OK;
  });
}

tflab_status tflab_run(const char* command, tflab_config* config, const char** summary) {
  TFLAB_REQUIRE(command);
  TFLAB_REQUIRE(config);
  return guarded([&] {
    if (!config->resolved) resolve(config);
    const tflab::PipelineResult r = tflab::run_pipeline(command, *config->resolved);
    config->summary = r.summary;
    if (summary) *summary = config->summary.c_str();
    if (!r.passed) return set_error(TFLAB_ERR_CHECK_FAILED, r.summary);
    return TFLAB_OK;
  });
}

tflab_status tflab_gradcheck(const tflab_config* config, double* max_rel_error,
                             size_t* coords_checked) {
  TFLAB_REQUIRE(config);
  TFLAB_REQUIRE(max_rel_error);
  return guarded([&] {
    const tflab::RunConfig& c = resolved(config);
    const auto r = tflab::model_gradcheck(tflab::model_config_from(c), c.seed(),
                                          c.count("gradcheck_coords"));
    *max_rel_error = r.max_rel_error;
    if (coords_checked) *coords_checked = r.coords_checked;
    return TFLAB_OK;
  });
}

tflab_status tflab_series_load(const char* path, tflab_series_set** out) {
  TFLAB_REQUIRE(path);
  TFLAB_REQUIRE(out);
  return guarded([&] {
    auto s = std::make_unique<tflab_series_set>();
    s->set = tflab::load_csv(path);
    *out = s.release();
    return TFLAB_OK;
  });
}

tflab_status tflab_series_synth(const tflab_config* config, tflab_series_set** out) {
  TFLAB_REQUIRE(config);
  TFLAB_REQUIRE(out);
  return guarded([&] {
    const tflab::RunConfig& c = resolved(config);
    auto s = std::make_unique<tflab_series_set>();
    s->set = tflab::synth_set(tflab::parse_synth_kind(c.text("kind")), tflab::synth_params_from(c),
                              c.count("len"), c.count("count"), c.seed());
    *out = s.release();
    return TFLAB_OK;
  });
}

void tflab_series_destroy(tflab_series_set* set) { delete set; }

tflab_status tflab_series_count(const tflab_series_set* set, size_t* count) {
  TFLAB_REQUIRE(set);
  TFLAB_REQUIRE(count);
  *count = set->set.series.size();
  return TFLAB_OK;
}

tflab_status tflab_series_id(const tflab_series_set* set, size_t index, const char** id) {
  TFLAB_REQUIRE(set);
  TFLAB_REQUIRE(id);
  if (index >= set->set.series.size()) return set_error(TFLAB_ERR_DIMENSION, "series index out of range");
  *id = set->set.series[index].id.c_str();
  return TFLAB_OK;
}

tflab_status tflab_series_values(const tflab_series_set* set, size_t index, const double** values,
                                 size_t* length) {
  TFLAB_REQUIRE(set);
  TFLAB_REQUIRE(values);
  TFLAB_REQUIRE(length);
  if (index >= set->set.series.size()) return set_error(TFLAB_ERR_DIMENSION, "series index out of range");
  *values = set->set.series[index].values.data();
  *length = set->set.series[index].values.size();
  return TFLAB_OK;
}

tflab_status tflab_series_save(const tflab_series_set* set, const char* path) {
  TFLAB_REQUIRE(set);
  TFLAB_REQUIRE(path);
  return guarded([&] {
    tflab::write_csv(set->set, path);
    return TFLAB_OK;
  });
}

tflab_status tflab_adf(const double* y, size_t n, long max_lag, double* statistic) {
  TFLAB_REQUIRE(y);
  TFLAB_REQUIRE(statistic);
  return guarded([&] {
    std::optional<std::size_t> lag;
    if (max_lag >= 0) lag = static_cast<std::size_t>(max_lag);
    *statistic = tflab::adf_statistic(copy_of(y, n), lag);
    return TFLAB_OK;
  });
}

tflab_status tflab_hurst(const double* y, size_t n, double* hurst) {
  TFLAB_REQUIRE(y);
  TFLAB_REQUIRE(hurst);
  return guarded([&] {
    *hurst = tflab::hurst_exponent(copy_of(y, n));
    return TFLAB_OK;
  });
}

tflab_status tflab_forecastability(const double* y, size_t n, double* value, int* degenerate) {
  TFLAB_REQUIRE(y);
  TFLAB_REQUIRE(value);
  return guarded([&] {
    const auto f = tflab::forecastability(copy_of(y, n));
    *value = f.value;
    if (degenerate) *degenerate = f.degenerate ? 1 : 0;
    return TFLAB_OK;
  });
}

tflab_status tflab_mse(const double* truth, const double* pred, size_t n, double* out) {
  TFLAB_REQUIRE(truth);
  TFLAB_REQUIRE(pred);
  TFLAB_REQUIRE(out);
  return guarded([&] {
    *out = tflab::mean_squared_error({truth, n}, {pred, n});
    return TFLAB_OK;
  });
}

tflab_status tflab_mae(const double* truth, const double* pred, size_t n, double* out) {
  TFLAB_REQUIRE(truth);
  TFLAB_REQUIRE(pred);
  TFLAB_REQUIRE(out);
  return guarded([&] {
    *out = tflab::mean_absolute_error({truth, n}, {pred, n});
    return TFLAB_OK;
  });
}

tflab_status tflab_sharpe(const double* returns, size_t n, double risk_free,
                          double periods_per_year, double* out) {
  TFLAB_REQUIRE(returns);
  TFLAB_REQUIRE(out);
  return guarded([&] {
    *out = tflab::sharpe_annual({returns, n}, risk_free, periods_per_year);
    return TFLAB_OK;
  });
}

tflab_status tflab_max_drawdown(const double* prices, size_t n, double* out) {
  TFLAB_REQUIRE(prices);
  TFLAB_REQUIRE(out);
  return guarded([&] {
    *out = tflab::max_drawdown({prices, n});
    return TFLAB_OK;
  });
}

tflab_status tflab_min_variance_weights(const double* cov, size_t n, double* w) {
  TFLAB_REQUIRE(cov);
  TFLAB_REQUIRE(w);
  return guarded([&] {
    const Eigen::Index k = static_cast<Eigen::Index>(n);
    const Eigen::MatrixXd s = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                                              Eigen::RowMajor>>(cov, k, k);
    const auto out = tflab::min_variance_weights(s);
    std::copy(out.begin(), out.end(), w);
    return TFLAB_OK;
  });
}

tflab_status tflab_markowitz_weights(const double* mean_returns, const double* cov, size_t n,
                                     double risk_aversion, double* w) {
  TFLAB_REQUIRE(mean_returns);
  TFLAB_REQUIRE(cov);
  TFLAB_REQUIRE(w);
  return guarded([&] {
    const Eigen::Index k = static_cast<Eigen::Index>(n);
    const Eigen::MatrixXd s = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                                              Eigen::RowMajor>>(cov, k, k);
    const Eigen::VectorXd mu = Eigen::Map<const Eigen::VectorXd>(mean_returns, k);
    const auto out = tflab::markowitz_weights(mu, s, risk_aversion);
    std::copy(out.begin(), out.end(), w);
    return TFLAB_OK;
  });
}

tflab_status tflab_model_create(const tflab_config* config, tflab_model** out) {
  TFLAB_REQUIRE(config);
  TFLAB_REQUIRE(out);
  return guarded([&] {
    const tflab::RunConfig& c = resolved(config);
    *out = new tflab_model{tflab::TimeFormer(tflab::model_config_from(c), c.seed())};
    return TFLAB_OK;
  });
}

tflab_status tflab_model_load(const char* path, tflab_model** out) {
  TFLAB_REQUIRE(path);
  TFLAB_REQUIRE(out);
  return guarded([&] {
    *out = new tflab_model{tflab::load_model(path)};
    return TFLAB_OK;
  });
}

tflab_status tflab_model_save(const tflab_model* model, const char* path) {
  TFLAB_REQUIRE(model);
  TFLAB_REQUIRE(path);
  return guarded([&] {
    tflab::save_model(model->model, path);
    return TFLAB_OK;
  });
}

void tflab_model_destroy(tflab_model* model) { delete model; }

tflab_status tflab_model_param_count(const tflab_model* model, size_t* count) {
  TFLAB_REQUIRE(model);
  TFLAB_REQUIRE(count);
  *count = tflab::total_numel(model->model.parameters());
  return TFLAB_OK;
}

tflab_status tflab_model_channels(const tflab_model* model, size_t* channels) {
  TFLAB_REQUIRE(model);
  TFLAB_REQUIRE(channels);
  *channels = model->model.config().channels;
  return TFLAB_OK;
}

tflab_status tflab_model_patch_len(const tflab_model* model, size_t* patch_len) {
  TFLAB_REQUIRE(model);
  TFLAB_REQUIRE(patch_len);
  *patch_len = model->model.config().patch_len;
  return TFLAB_OK;
}

tflab_status tflab_model_forecast(const tflab_model* model, const double* context, size_t channels,
                                  size_t length, size_t horizon, double* out) {
  TFLAB_REQUIRE(model);
  TFLAB_REQUIRE(context);
  TFLAB_REQUIRE(out);
  return guarded([&] {
    if (channels != model->model.config().channels) {
      tflab::fail(tflab::ErrorKind::dimension, "context channel count differs from the model");
    }
    const tflab::Tensor ctx = tflab::Tensor::from_data({channels, length}, copy_of(context, channels * length));
    const tflab::Tensor pred = tflab::autoregressive_infer(model->model, ctx, horizon);
    const auto values = pred.values();
    std::copy(values.begin(), values.end(), out);
    return TFLAB_OK;
  });
}

}  // extern "C"
