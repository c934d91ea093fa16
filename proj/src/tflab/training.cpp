#include "tflab/training.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "tflab/checkpoint.hpp"
#include "tflab/error.hpp"
#include "tflab/random.hpp"

namespace tflab {

std::string TaskSpec::name() const { return fmt::format("{}->{}", context_len, horizon_len); }

void TaskSpec::validate(std::size_t patch_len) const {
  if (context_len < patch_len || horizon_len < patch_len || context_len % patch_len != 0 ||
      horizon_len % patch_len != 0) {
    fail(ErrorKind::parameter,
         fmt::format("task {}: lengths must be positive multiples of patch_len {}", name(),
                     patch_len));
  }
}

TaskSpec TaskSpec::parse(const std::string& text) {
  const auto colon = text.find(':');
  TaskSpec t;
  try {
    if (colon == std::string::npos) throw std::invalid_argument(text);
    std::size_t p1 = 0, p2 = 0;
    const std::string a = text.substr(0, colon), b = text.substr(colon + 1);
    t.context_len = std::stoul(a, &p1);
    t.horizon_len = std::stoul(b, &p2);
    if (p1 != a.size() || p2 != b.size()) throw std::invalid_argument(text);
  } catch (const std::logic_error&) {
    fail(ErrorKind::usage, "bad task '" + text + "' (expected ctx:horizon)");
  }
  return t;
}

std::vector<TaskSpec> parse_tasks(const std::string& text) {
  std::vector<TaskSpec> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto b = item.find_first_not_of(' ');
    const auto e = item.find_last_not_of(' ');
    if (b == std::string::npos) continue;
    out.push_back(TaskSpec::parse(item.substr(b, e - b + 1)));
  }
  if (out.empty()) fail(ErrorKind::usage, "task list is empty");
  return out;
}

std::size_t TaskSchedule::pick(std::size_t step, std::size_t task_count,
                               std::uint64_t seed) const {
  if (task_count == 0) fail(ErrorKind::parameter, "schedule: no tasks");
  if (kind == ScheduleKind::round_robin) return (step - 1) % task_count;
  if (weights.size() != task_count) {
    fail(ErrorKind::parameter, "schedule: need one weight per task");
  }
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0)) fail(ErrorKind::parameter, "schedule: weights must be non-negative");
    total += w;
  }
  if (!(total > 0.0)) fail(ErrorKind::parameter, "schedule: weights sum to zero");
  Rng rng(mix_seed(seed ^ 0x5eed5c4edULL, step));
  double u = uniform01(rng) * total;
  for (std::size_t i = 0; i < task_count; ++i) {
    if (u < weights[i]) return i;
    u -= weights[i];
  }
  return task_count - 1;
}

// ----------------------------------------------------------------------------

Trainer::Trainer(TimeFormer& model, TrainConfig config) : model_(model), config_(config) {}

EmbedTrainResult Trainer::train_embedding(const std::vector<Tensor>& panels, bool truncate_tail) {
  if (frozen_) fail(ErrorKind::state, "train_embedding: embedding is already frozen");
  EmbedTrainOptions opts;
  opts.epochs = config_.embed_epochs;
  opts.batch_size = config_.embed_batch_size;
  opts.max_steps = config_.embed_max_steps;
  opts.learning_rate = config_.learning_rate;
  opts.seed = mix_seed(config_.seed, 11);
  const Tensor rows = corpus_rows(panels, model_.embedding().config(), truncate_tail);
  EmbedTrainResult result = tflab::train_embedding(model_.embedding(), rows, opts);
  embedding_trained_ = true;
  return result;
}

void Trainer::freeze_embedding() {
  if (!embedding_trained_) {
    fail(ErrorKind::state, "freeze_embedding: phase-1 embedding training has not completed");
  }
  if (frozen_) return;
  set_requires_grad(model_.embedding_parameters(), false);
  NamedTensors trainable = model_.transformer_parameters();
  set_requires_grad(trainable, true);
  optimizer_ = std::make_unique<Optimizer>(
      std::move(trainable), OptimizerConfig{OptimizerKind::adam, config_.learning_rate});
  frozen_ = true;
}

Tensor Trainer::teacher_forced_loss(const std::vector<Tensor>& windows, const TaskSpec& task,
                                    std::uint64_t seed, bool training) const {
  if (windows.empty()) fail(ErrorKind::data, "teacher_forced_loss: empty batch");
  task.validate(model_.config().patch_len);
  Tensor total;
  for (std::size_t b = 0; b < windows.size(); ++b) {
    const Tensor& w = windows[b];
    if (w.rank() != 2 || w.dim(1) < task.total_len()) {
      fail(ErrorKind::task, fmt::format("task {} needs series of length >= {}, got {}",
                                        task.name(), task.total_len(),
                                        w.rank() == 2 ? w.dim(1) : 0));
    }
    Tensor context = slice_cols(w, 0, task.context_len);
    Tensor target = slice_cols(w, task.context_len, task.horizon_len);
    Tensor pred = model_.teacher_forced(context, target, mix_seed(seed, b + 1), training);
    Tensor loss = mse(pred, target);
    total = total.defined() ? add(total, loss) : loss;
  }
  return scale(total, 1.0 / static_cast<double>(windows.size()));
}

double Trainer::teacher_forced_step(const std::vector<Tensor>& windows, const TaskSpec& task) {
  if (!frozen_) fail(ErrorKind::state, "teacher_forced_step: embedding must be frozen first");
  const std::size_t next = step_ + 1;
  Tensor loss = teacher_forced_loss(windows, task, mix_seed(config_.seed, next), true);
  const double value = loss.item();
  if (!std::isfinite(value)) {
    fail(ErrorKind::training,
         fmt::format("pretrain: non-finite loss at step {} (task {})", next, task.name()));
  }
  optimizer_->zero_grad();
  loss.backward();
  optimizer_->step();
  step_ = next;
  history_.push_back({step_, task.name(), value});
  return value;
}

std::vector<Tensor> Trainer::sample_batch(const std::vector<Tensor>& corpus, const TaskSpec& task,
                                          std::size_t step) const {
  std::vector<std::size_t> eligible;
  for (std::size_t i = 0; i < corpus.size(); ++i)
    if (corpus[i].dim(1) >= task.total_len()) eligible.push_back(i);
  if (eligible.empty()) {
    fail(ErrorKind::task, fmt::format("task {} needs series of length >= {}; none in corpus",
                                      task.name(), task.total_len()));
  }
  Rng rng(mix_seed(config_.seed ^ 0xba7c4ULL, step));
  std::vector<Tensor> batch;
  batch.reserve(config_.batch_size);
  for (std::size_t b = 0; b < config_.batch_size; ++b) {
    const Tensor& s = corpus[eligible[uniform_index(rng, eligible.size())]];
    const std::size_t start = uniform_index(rng, s.dim(1) - task.total_len() + 1);
    batch.push_back(slice_cols(s, start, task.total_len()));
  }
  return batch;
}

void Trainer::pretrain(const std::vector<Tensor>& corpus, const std::vector<TaskSpec>& tasks,
                       std::size_t steps, const TaskSchedule& schedule) {
  if (corpus.empty()) fail(ErrorKind::data, "pretrain: empty corpus");
  if (tasks.empty()) fail(ErrorKind::parameter, "pretrain: no tasks");
  if (!frozen_) fail(ErrorKind::state, "pretrain: embedding must be frozen first");
  for (const auto& t : tasks) {
    t.validate(model_.config().patch_len);
    bool feasible = false;
    for (const auto& s : corpus) feasible = feasible || s.dim(1) >= t.total_len();
    if (!feasible) {
      fail(ErrorKind::task, fmt::format("task {} needs series of length >= {}", t.name(),
                                        t.total_len()));
    }
  }
  for (std::size_t i = 0; i < steps; ++i) {
    const std::size_t next = step_ + 1;
    const TaskSpec& task = tasks[schedule.pick(next, tasks.size(), config_.seed)];
    std::vector<Tensor> batch;
    {
      NoGradGuard no_grad;
      batch = sample_batch(corpus, task, next);
    }
    teacher_forced_step(batch, task);
  }
}

void Trainer::save_checkpoint(const std::filesystem::path& path) const {
  NamedTensors all = model_.parameters();
  if (optimizer_) {
    for (auto& s : optimizer_->export_state()) all.push_back(std::move(s));
  }
  all.push_back({"train.step", Tensor::from_data({1}, {static_cast<double>(step_)})});
  all.push_back({"train.flags", Tensor::from_data({2}, {embedding_trained_ ? 1.0 : 0.0,
                                                        frozen_ ? 1.0 : 0.0})});
  write_checkpoint(path, all);
  write_model_config(model_.config(), path);
}

void Trainer::load_checkpoint(const std::filesystem::path& path) {
  if (read_model_config(path) != model_.config()) {
    fail(ErrorKind::format, "checkpoint " + path.string() + " was written for a different model");
  }
  NamedTensors entries = read_checkpoint(path);
  NamedTensors params = model_.parameters();
  NamedTensors opt_state;
  const Tensor* step = nullptr;
  const Tensor* flags = nullptr;
  for (const auto& e : entries) {
    if (e.name.rfind("opt.", 0) == 0) opt_state.push_back(e);
    if (e.name == "train.step") step = &e.tensor;
    if (e.name == "train.flags") flags = &e.tensor;
  }
  if (!step || !flags || step->numel() != 1 || flags->numel() != 2) {
    fail(ErrorKind::format, "checkpoint " + path.string() + " lacks training state");
  }
  assign_named(entries, params, true);
  embedding_trained_ = flags->at(0) != 0.0;
  frozen_ = false;
  optimizer_.reset();
  history_.clear();
  if (flags->at(1) != 0.0) {
    freeze_embedding();
    optimizer_->import_state(opt_state);
  }
  step_ = static_cast<std::size_t>(step->at(0));
}

// ----------------------------------------------------------------------------

Tensor autoregressive_infer(const TimeFormer& model, const Tensor& context,
                            std::size_t horizon_len) {
  const ModelConfig& cfg = model.config();
  const std::size_t tp = cfg.patch_len, c = cfg.channels, d = cfg.embed_dim;
  if (horizon_len == 0 || horizon_len % tp != 0) {
    fail(ErrorKind::parameter,
         fmt::format("horizon {} is not a positive multiple of patch_len {}", horizon_len, tp));
  }
  if (context.rank() != 2 || context.dim(1) % tp != 0 || context.dim(1) == 0) {
    fail(ErrorKind::dimension, "context length must be a positive multiple of patch_len");
  }
  NoGradGuard no_grad;
  const std::size_t nc = context.dim(1) / tp, k = horizon_len / tp;
  const Tensor memory = model.encode(model.embed_series(context), nc, 0, false);
  // reembedded[ch][j]: F(G(h)) for predicted patch j of channel ch.
  std::vector<std::vector<std::vector<double>>> reembedded(c);
  std::vector<double> out(c * horizon_len);
  for (std::size_t j = 0; j < k; ++j) {
    const std::size_t steps = j + 1;
    std::vector<double> tokens(c * steps * d, 0.0);
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t t = 0; t < j; ++t)
        std::copy(reembedded[ch][t].begin(), reembedded[ch][t].end(),
                  tokens.begin() + static_cast<std::ptrdiff_t>((ch * steps + t) * d));
    const Tensor dec_in = model.shifted_targets(Tensor::from_data({c * steps, d}, std::move(tokens)), steps);
    const Tensor h = model.decode(memory, dec_in, steps, nc, 0, false);
    std::vector<std::size_t> last(c);
    for (std::size_t ch = 0; ch < c; ++ch) last[ch] = ch * steps + j;
    const Tensor patches = model.embedding().decode_rows(gather_rows(h, last));  // [C x t_p]
    const Tensor again = model.embedding().encode_rows(patches);                 // [C x D]
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t q = 0; q < tp; ++q) out[ch * horizon_len + j * tp + q] = patches.at(ch, q);
      std::vector<double> e(d);
      for (std::size_t q = 0; q < d; ++q) e[q] = again.at(ch, q);
      reembedded[ch].push_back(std::move(e));
    }
  }
  return Tensor::from_data({c, horizon_len}, std::move(out));
}

void write_pretrain_history_csv(const std::string& path,
                                const std::vector<PretrainRecord>& history) {
  std::ofstream f(path);
  if (!f) fail(ErrorKind::io, "cannot write " + path);
  f << "step,task,loss\n";
  for (const auto& r : history) f << fmt::format("{},{},{}\n", r.step, r.task, r.loss);
}

// ----------------------------------------------------------------------------

namespace {
std::filesystem::path sidecar(const std::filesystem::path& p) {
  return std::filesystem::path(p.string() + ".cfg");
}
}  // namespace

void write_model_config(const ModelConfig& config, const std::filesystem::path& checkpoint_path) {
  std::ofstream f(sidecar(checkpoint_path), std::ios::binary);
  if (!f) fail(ErrorKind::io, "cannot write " + sidecar(checkpoint_path).string());
  f << config.to_text();
}

ModelConfig read_model_config(const std::filesystem::path& checkpoint_path) {
  std::ifstream f(sidecar(checkpoint_path), std::ios::binary);
  if (!f) fail(ErrorKind::io, "cannot open " + sidecar(checkpoint_path).string());
  std::stringstream ss;
  ss << f.rdbuf();
  return ModelConfig::from_text(ss.str());
}

void save_model(const TimeFormer& model, const std::filesystem::path& path) {
  write_checkpoint(path, model.parameters());
  write_model_config(model.config(), path);
}

TimeFormer load_model(const std::filesystem::path& path) {
  TimeFormer model(read_model_config(path), 0);
  NamedTensors params = model.parameters();
  assign_named(read_checkpoint(path), params, true);
  return model;
}

void save_embedding(const TimeFormer& model, const std::filesystem::path& path) {
  write_checkpoint(path, model.embedding_parameters());
  write_model_config(model.config(), path);
}

void load_embedding(TimeFormer& model, const std::filesystem::path& path) {
  NamedTensors entries = read_checkpoint(path);
  NamedTensors embed_entries;
  for (auto& e : entries)
    if (e.name.rfind("embed.", 0) == 0) embed_entries.push_back(std::move(e));
  NamedTensors targets = model.embedding_parameters();
  assign_named(embed_entries, targets, false);
}

}  // namespace tflab
