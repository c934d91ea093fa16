#pragma once

#include <string>
#include <vector>

#include "tflab/config.hpp"
#include "tflab/gradcheck.hpp"
#include "tflab/series.hpp"
#include "tflab/timeformer.hpp"
#include "tflab/training.hpp"

namespace tflab {

inline constexpr const char* kArtifactVersion = "tflab 0.1.0";

const std::vector<std::string>& pipeline_commands();

struct PipelineResult {
  std::string summary;
  // False only for a gradcheck above tolerance.
  bool passed = true;
  std::vector<std::string> outputs;
};

// Runs one command and writes its outputs plus manifest.txt under `out`.
PipelineResult run_pipeline(const std::string& command, const RunConfig& config);

ModelConfig model_config_from(const RunConfig& config);
TrainConfig train_config_from(const RunConfig& config);
SynthParams synth_params_from(const RunConfig& config);
TaskSchedule schedule_from(const RunConfig& config, std::size_t task_count);

inline constexpr double kGradCheckTolerance = 1e-4;

// End-to-end finite-difference check of the teacher-forced loss over every
// parameter of a freshly initialized model with dropout off. The series have
// four context and four horizon patches.
GradCheckResult model_gradcheck(const ModelConfig& config, std::uint64_t seed,
                                std::size_t coords_per_tensor);

}  // namespace tflab
