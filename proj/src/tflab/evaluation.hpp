#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "tflab/series.hpp"
#include "tflab/timeformer.hpp"
#include "tflab/training.hpp"

namespace tflab {

class Forecaster {
 public:
  virtual ~Forecaster() = default;
  // context: raw [C x ctx] values ending just before `target_start`.
  // Returns raw [C x horizon] predictions.
  virtual Tensor predict(const Tensor& context, std::size_t horizon, std::size_t target_start) = 0;
  virtual std::string name() const = 0;
};

class LastValueForecaster : public Forecaster {
 public:
  Tensor predict(const Tensor& context, std::size_t horizon, std::size_t target_start) override;
  std::string name() const override { return "last_value"; }
};

// Reads the answer from the full series; for harness checks.
class OracleForecaster : public Forecaster {
 public:
  explicit OracleForecaster(Tensor series) : series_(std::move(series)) {}
  Tensor predict(const Tensor& context, std::size_t horizon, std::size_t target_start) override;
  std::string name() const override { return "oracle"; }

 private:
  Tensor series_;
};

// Normalizes each channel with train-split statistics, rolls the model out
// and maps the prediction back to raw units.
class ModelForecaster : public Forecaster {
 public:
  ModelForecaster(const TimeFormer& model, std::vector<ZScore> stats)
      : model_(model), stats_(std::move(stats)) {}
  Tensor predict(const Tensor& context, std::size_t horizon, std::size_t target_start) override;
  std::string name() const override { return "model"; }

 private:
  const TimeFormer& model_;
  std::vector<ZScore> stats_;
};

struct ForecastTracePoint {
  std::size_t window = 0;
  std::size_t channel = 0;
  std::size_t step = 0;
  double truth = 0.0;
  double pred = 0.0;
};

struct ForecastReport {
  TaskSpec task;
  double mse = 0.0;
  double mae = 0.0;
  std::vector<double> per_horizon_mse;
  std::size_t windows = 0;
  std::size_t points = 0;
  std::vector<ForecastTracePoint> trace;
};

// Non-overlapping (context + horizon) windows over a raw [C x T] series.
ForecastReport forecast_eval(Forecaster& forecaster, const Tensor& series, const TaskSpec& task,
                             bool keep_trace = false);
// Point-weighted combination of reports for the same task.
ForecastReport merge_reports(const std::vector<ForecastReport>& reports);

void write_forecast_csv(const std::string& path, const std::vector<ForecastReport>& reports);
void write_trace_csv(const std::string& path, const std::vector<ForecastReport>& reports);

// ----------------------------------------------------------------------------
// Imputation

enum class MaskLayout { random_points, block };

MaskLayout parse_mask_layout(const std::string& text);

struct ImputationSpec {
  double mask_ratio = 0.125;
  std::uint64_t mask_seed = 0;
  MaskLayout layout = MaskLayout::random_points;

  void validate() const;
};

// 1 marks a hidden point of the [C x T] series. Only the first `covered`
// time steps (whole windows) are eligible.
struct ImputeMask {
  std::size_t channels = 0;
  std::size_t length = 0;
  std::size_t covered = 0;
  std::size_t window = 0;
  std::vector<std::uint8_t> bits;
  std::size_t masked = 0;
  std::size_t resamples = 0;

  bool at(std::size_t c, std::size_t t) const { return bits[c * length + t] != 0; }
};

// max(1, floor(ratio * C * covered)) points. Draws that hide every point of
// some (window, channel) row are redrawn.
ImputeMask make_impute_mask(std::size_t channels, std::size_t length, std::size_t window,
                            const ImputationSpec& spec);

struct ImputeResult {
  double ratio = 0.0;
  double mse = 0.0;
  double mae = 0.0;
  std::size_t points = 0;
};

// Fills hidden points with the channel mean of the visible covered points.
ImputeResult mean_fill_eval(const Tensor& series, const ImputeMask& mask, double ratio);

struct ImputerOptions {
  std::size_t window = 32;
  std::size_t steps = 300;
  std::size_t batch_size = 8;
  double learning_rate = 1e-3;
  std::uint64_t seed = 42;
};

// A copy of the pretrained encoder with a learned mask embedding and a linear
// D -> t_p head. F stays frozen.
class Imputer {
 public:
  Imputer(const TimeFormer& model, ImputerOptions options);

  // Trains on normalized panels with masks drawn at `ratio`. Returns the loss per step.
  std::vector<double> train(const std::vector<Tensor>& panels, double ratio);

  // Reconstruction of one normalized [C x window] block.
  Tensor reconstruct(const Tensor& window, const std::vector<std::uint8_t>& hidden) const;

  // Metrics over hidden points; with stats, values are compared in raw units.
  ImputeResult evaluate(const Tensor& series, const ImputeMask& mask, double ratio,
                        const std::vector<ZScore>* stats = nullptr) const;

  NamedTensors trainable_parameters() const;

 private:
  Tensor forward(const Tensor& window, const std::vector<std::uint8_t>& hidden,
                 std::uint64_t seed, bool training) const;

  TimeFormer model_;
  ImputerOptions options_;
  Tensor mask_embedding_;
  Linear head_;
};

void write_impute_csv(const std::string& path, const std::vector<ImputeResult>& rows);

}  // namespace tflab
