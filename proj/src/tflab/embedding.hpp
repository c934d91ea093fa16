#pragma once

// Invertible patch embedding: an embed map F (patch -> R^D) trained with a
// one-positive/one-negative InfoNCE objective, and an inverse map G
// (R^D -> patch) trained to reconstruct the patch.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "tflab/nn.hpp"
#include "tflab/tensor.hpp"

namespace tflab {

struct EmbedConfig {
  std::size_t channels = 1;
  std::size_t patch_len = 8;
  std::size_t embed_dim = 32;
  // Hidden widths of both F and G. Unset means {4 * embed_dim}; an empty list
  // makes each map a single linear layer.
  std::optional<std::vector<std::size_t>> hidden;
  // Positive-sample noise: sigma = sigma_abs if set, else sigma_rel * std(patch).
  double sigma_rel = 0.05;
  std::optional<double> sigma_abs;
  double tau = 0.1;
  // true: each token is one channel's patch (input width t_p).
  // false: all channels are embedded jointly (input width C * t_p).
  bool per_channel = false;

  void validate() const;
  std::size_t input_width() const { return per_channel ? patch_len : channels * patch_len; }
  std::vector<std::size_t> hidden_widths() const;
};

// A series set cut into non-overlapping patches, stored as [C x N x t_p].
struct PatchGrid {
  Tensor patches;
  std::size_t source_len = 0;
  std::size_t patch_len = 0;

  std::size_t channels() const { return patches.dim(0); }
  std::size_t count() const { return patches.dim(1); }
  // Patch j as [C x t_p].
  Tensor patch(std::size_t j) const;
  // One row per patch, channels concatenated: [N x (C * t_p)].
  Tensor joint_rows() const;
  // One row per (channel, patch) token in channel-major order: [(C * N) x t_p].
  Tensor channel_rows() const;
};

// series: [C x T]. T must be a multiple of t_p unless truncate_tail is set,
// in which case the remainder is dropped.
PatchGrid patchify(const Tensor& series, std::size_t patch_len, bool truncate_tail = false);
Tensor unpatchify(const PatchGrid& grid);
// Inverse of PatchGrid::channel_rows: [(C * N) x t_p] -> [C x (N * t_p)].
Tensor tokens_to_series(const Tensor& tokens, std::size_t channels);
Tensor series_to_tokens(const Tensor& series, std::size_t patch_len);

// p + N(0, sigma^2) noise, seed-deterministic.
Tensor make_positive(const Tensor& patch, double sigma, std::uint64_t seed);
// Reverses the time (last) axis of every channel.
Tensor make_negative(const Tensor& patch);
// True when flipping leaves the patch unchanged (constant or palindromic).
bool is_flip_invariant(const Tensor& patch);

class EmbeddingModule {
 public:
  EmbeddingModule() = default;
  EmbeddingModule(EmbedConfig config, std::uint64_t seed);

  // Batched maps over rows: [N x input_width] <-> [N x D].
  Tensor encode_rows(const Tensor& rows) const;
  Tensor decode_rows(const Tensor& embeddings) const;

  // Layer F on one patch ([C x t_p], or [t_p] in per-channel mode) -> [D].
  Tensor embed_forward(const Tensor& patch) const;
  // Layer G on one embedding [D] -> patch shape.
  Tensor inverse_embed(const Tensor& embedding) const;

  void collect(NamedTensors& out) const;
  NamedTensors parameters() const;

  // Identity F and G; only valid for single-layer maps with D == input width.
  void set_identity();

  const EmbedConfig& config() const { return config_; }
  Mlp& embed_layer() { return f_; }
  Mlp& inverse_layer() { return g_; }

 private:
  Shape patch_shape() const;

  EmbedConfig config_;
  Mlp f_;
  Mlp g_;
};

// -log(e^{s+/tau} / (e^{s+/tau} + e^{s-/tau})) with cosine similarities,
// averaged when the inputs are [N x D] batches.
Tensor info_nce_loss(const Tensor& anchor, const Tensor& positive, const Tensor& negative,
                     double tau);
// (1/N) sum_i ||p_i - p_hat_i||^2 over the N rows.
Tensor reconstruction_loss(const Tensor& patches, const Tensor& reconstructed);

// E ||x - x+||^alpha over matching rows; rows are L2-normalized first unless
// `normalize` is false.
double alignment_metric(const Tensor& embeddings, const Tensor& positives, double alpha = 2.0,
                        bool normalize = true);
// log of the mean of exp(-t ||x_i - x_j||^2) over unordered distinct pairs.
double uniformity_metric(const Tensor& embeddings, double t = 1.0, bool normalize = true);

struct TripletBatch {
  Tensor rows;        // every input row, for reconstruction
  Tensor anchors;     // flip-variant rows only
  std::vector<std::size_t> anchor_index;  // position of each anchor within rows
  Tensor positives;
  Tensor negatives;
  std::size_t degenerate = 0;
};

// Builds positives and negatives for a block of flattened patches.
TripletBatch make_triplets(const Tensor& rows, const EmbedConfig& config, std::uint64_t seed);

struct EmbedLossRecord {
  std::size_t step = 0;
  double info_nce = 0.0;
  double mse = 0.0;
  double total = 0.0;
};

struct EmbedTrainOptions {
  std::size_t epochs = 1;
  std::size_t batch_size = 32;
  std::size_t max_steps = 0;  // 0: no cap
  double learning_rate = 1e-3;
  std::uint64_t seed = 42;
};

struct EmbedTrainResult {
  std::vector<EmbedLossRecord> history;
  std::size_t degenerate_patches = 0;
};

// Joint objective L_InfoNCE + L_MSE minimized with Adam over F and G.
EmbedTrainResult train_embedding(EmbeddingModule& module, const Tensor& corpus_rows,
                                 const EmbedTrainOptions& options);

// Rows for a corpus of [C x T] panels, laid out as the module expects.
Tensor corpus_rows(const std::vector<Tensor>& panels, const EmbedConfig& config,
                   bool truncate_tail = true);

void write_embed_history_csv(const std::string& path, const std::vector<EmbedLossRecord>& history);

}  // namespace tflab
