#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "tflab/embedding.hpp"
#include "tflab/optim.hpp"
#include "tflab/timeformer.hpp"

namespace tflab {

struct TaskSpec {
  std::size_t context_len = 0;
  std::size_t horizon_len = 0;

  std::size_t total_len() const { return context_len + horizon_len; }
  // "ctx->horizon", used in history files.
  std::string name() const;
  void validate(std::size_t patch_len) const;
  // "ctx:horizon"
  static TaskSpec parse(const std::string& text);
  bool operator==(const TaskSpec&) const = default;
};

// Comma-separated "ctx:horizon" items.
std::vector<TaskSpec> parse_tasks(const std::string& text);

enum class Phase { embedding, pretrain };

enum class ScheduleKind { round_robin, weighted };

struct TaskSchedule {
  ScheduleKind kind = ScheduleKind::round_robin;
  std::vector<double> weights;  // one per task when kind == weighted

  std::size_t pick(std::size_t step, std::size_t task_count, std::uint64_t seed) const;
};

struct TrainConfig {
  double learning_rate = 1e-3;
  std::size_t batch_size = 8;
  std::uint64_t seed = 42;
  std::size_t embed_epochs = 1;
  std::size_t embed_batch_size = 32;
  std::size_t embed_max_steps = 0;
};

struct PretrainRecord {
  std::size_t step = 0;
  std::string task;
  double loss = 0.0;
};

// Two-phase driver: train F and G, freeze them, then pretrain the encoder and
// decoder. The step counter drives every random draw, so a run resumed from a
// checkpoint replays the original trajectory.
class Trainer {
 public:
  Trainer(TimeFormer& model, TrainConfig config);

  Phase phase() const { return frozen_ ? Phase::pretrain : Phase::embedding; }
  bool embedding_trained() const { return embedding_trained_; }
  bool embedding_frozen() const { return frozen_; }
  std::size_t step() const { return step_; }
  const std::vector<PretrainRecord>& history() const { return history_; }
  const Optimizer* optimizer() const { return optimizer_.get(); }
  TimeFormer& model() { return model_; }

  EmbedTrainResult train_embedding(const std::vector<Tensor>& panels, bool truncate_tail = true);
  // For embeddings restored from a checkpoint.
  void mark_embedding_trained() { embedding_trained_ = true; }
  void freeze_embedding();

  // Mean over the batch of MSE(Y_pred, G(H_dec)). Windows are [C x (ctx + horizon)].
  Tensor teacher_forced_loss(const std::vector<Tensor>& windows, const TaskSpec& task,
                             std::uint64_t seed, bool training) const;
  double teacher_forced_step(const std::vector<Tensor>& windows, const TaskSpec& task);

  // Random contiguous windows of length task.total_len(), seeded by `step`.
  std::vector<Tensor> sample_batch(const std::vector<Tensor>& corpus, const TaskSpec& task,
                                   std::size_t step) const;

  void pretrain(const std::vector<Tensor>& corpus, const std::vector<TaskSpec>& tasks,
                std::size_t steps, const TaskSchedule& schedule = {});

  void save_checkpoint(const std::filesystem::path& path) const;
  void load_checkpoint(const std::filesystem::path& path);

 private:
  TimeFormer& model_;
  TrainConfig config_;
  bool embedding_trained_ = false;
  bool frozen_ = false;
  std::size_t step_ = 0;
  std::unique_ptr<Optimizer> optimizer_;
  std::vector<PretrainRecord> history_;
};

// Encodes the context once, then decodes one patch per decoder call, feeding
// each G-decoded patch back through F. Returns [C x horizon_len].
Tensor autoregressive_infer(const TimeFormer& model, const Tensor& context,
                            std::size_t horizon_len);

void write_pretrain_history_csv(const std::string& path, const std::vector<PretrainRecord>& history);

// Model-only files. The config travels in a "<path>.cfg" sidecar.
void save_model(const TimeFormer& model, const std::filesystem::path& path);
TimeFormer load_model(const std::filesystem::path& path);
ModelConfig read_model_config(const std::filesystem::path& checkpoint_path);
void write_model_config(const ModelConfig& config, const std::filesystem::path& checkpoint_path);

void save_embedding(const TimeFormer& model, const std::filesystem::path& path);
// Copies embed.* entries from a checkpoint into the model.
void load_embedding(TimeFormer& model, const std::filesystem::path& path);

}  // namespace tflab
