#include "tflab/embedding.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <fmt/format.h>

#include "tflab/error.hpp"
#include "tflab/optim.hpp"
#include "tflab/random.hpp"

namespace tflab {

void EmbedConfig::validate() const {
  if (channels < 1) fail(ErrorKind::parameter, "embedding: channels must be >= 1");
  if (patch_len < 2) fail(ErrorKind::parameter, "embedding: patch_len must be >= 2");
  if (embed_dim < 1) fail(ErrorKind::parameter, "embedding: embed_dim must be >= 1");
  if (!(tau > 0.0)) fail(ErrorKind::parameter, "embedding: tau must be positive");
  if (!(sigma_rel >= 0.0) || (sigma_abs && !(*sigma_abs >= 0.0))) {
    fail(ErrorKind::parameter, "embedding: noise sigma must be non-negative");
  }
}

std::vector<std::size_t> EmbedConfig::hidden_widths() const {
  return hidden ? *hidden : std::vector<std::size_t>{4 * embed_dim};
}

// ----------------------------------------------------------------------------
// Patching

Tensor PatchGrid::patch(std::size_t j) const {
  const std::size_t c = channels(), n = count(), tp = patch_len;
  if (j >= n) fail(ErrorKind::dimension, "patch index out of range");
  const auto d = patches.data();
  std::vector<double> out(c * tp);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t k = 0; k < tp; ++k) out[ch * tp + k] = d[(ch * n + j) * tp + k];
  return Tensor::from_data({c, tp}, std::move(out));
}

Tensor PatchGrid::joint_rows() const {
  const std::size_t c = channels(), n = count(), tp = patch_len;
  const auto d = patches.data();
  std::vector<double> out(n * c * tp);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t k = 0; k < tp; ++k) out[(j * c + ch) * tp + k] = d[(ch * n + j) * tp + k];
  return Tensor::from_data({n, c * tp}, std::move(out));
}

Tensor PatchGrid::channel_rows() const {
  return Tensor::from_data({channels() * count(), patch_len}, patches.values());
}

PatchGrid patchify(const Tensor& series, std::size_t patch_len, bool truncate_tail) {
  if (series.rank() != 2) {
    fail(ErrorKind::dimension, "patchify: series must be [C x T], got " + shape_str(series.shape()));
  }
  if (patch_len < 2) fail(ErrorKind::parameter, "patchify: patch_len must be >= 2");
  const std::size_t c = series.dim(0), t = series.dim(1);
  if (t % patch_len != 0 && !truncate_tail) {
    fail(ErrorKind::dimension, "patchify: length " + std::to_string(t) +
                                   " is not a multiple of patch_len " + std::to_string(patch_len));
  }
  const std::size_t n = t / patch_len;
  if (n == 0) fail(ErrorKind::dimension, "patchify: series shorter than one patch");
  const auto d = series.data();
  std::vector<double> out(c * n * patch_len);
  for (std::size_t ch = 0; ch < c; ++ch)
    std::copy_n(d.begin() + static_cast<std::ptrdiff_t>(ch * t), n * patch_len,
                out.begin() + static_cast<std::ptrdiff_t>(ch * n * patch_len));
  PatchGrid grid;
  grid.patches = Tensor::from_data({c, n, patch_len}, std::move(out));
  grid.source_len = n * patch_len;
  grid.patch_len = patch_len;
  return grid;
}

Tensor unpatchify(const PatchGrid& grid) {
  return Tensor::from_data({grid.channels(), grid.count() * grid.patch_len}, grid.patches.values());
}

Tensor tokens_to_series(const Tensor& tokens, std::size_t channels) {
  if (tokens.rank() != 2 || channels == 0 || tokens.dim(0) % channels != 0) {
    fail(ErrorKind::dimension, "tokens_to_series: bad token block " + shape_str(tokens.shape()));
  }
  return reshape(tokens, {channels, tokens.numel() / channels});
}

Tensor series_to_tokens(const Tensor& series, std::size_t patch_len) {
  if (series.rank() != 2 || series.dim(1) % patch_len != 0) {
    fail(ErrorKind::dimension, "series_to_tokens: length of " + shape_str(series.shape()) +
                                   " is not a multiple of " + std::to_string(patch_len));
  }
  return reshape(series, {series.numel() / patch_len, patch_len});
}

Tensor make_positive(const Tensor& patch, double sigma, std::uint64_t seed) {
  if (!(sigma >= 0.0)) fail(ErrorKind::parameter, "make_positive: sigma must be non-negative");
  std::vector<double> v = patch.values();
  if (sigma > 0.0) {
    Rng rng(seed);
    for (auto& x : v) x += sigma * gaussian(rng);
  }
  return Tensor::from_data(patch.shape(), std::move(v));
}

namespace {

void flip_segments(std::span<double> v, std::size_t seg) {
  for (std::size_t s = 0; s + seg <= v.size(); s += seg) std::reverse(v.begin() + s, v.begin() + s + seg);
}

double population_std(std::span<const double> v) {
  double mu = 0.0;
  for (double x : v) mu += x;
  mu /= static_cast<double>(v.size());
  double var = 0.0;
  for (double x : v) var += (x - mu) * (x - mu);
  return std::sqrt(var / static_cast<double>(v.size()));
}

}  // namespace

Tensor make_negative(const Tensor& patch) {
  std::vector<double> v = patch.values();
  const std::size_t seg = patch.rank() == 0 ? 1 : patch.shape().back();
  flip_segments(v, seg);
  return Tensor::from_data(patch.shape(), std::move(v));
}

bool is_flip_invariant(const Tensor& patch) {
  return make_negative(patch).values() == patch.values();
}

// ----------------------------------------------------------------------------
// EmbeddingModule

EmbeddingModule::EmbeddingModule(EmbedConfig config, std::uint64_t seed)
    : config_(std::move(config)) {
  config_.validate();
  Rng rng(seed);
  const auto hidden = config_.hidden_widths();
  std::vector<std::size_t> reversed(hidden.rbegin(), hidden.rend());
  f_ = Mlp(config_.input_width(), hidden, config_.embed_dim, rng);
  g_ = Mlp(config_.embed_dim, reversed, config_.input_width(), rng);
}

Shape EmbeddingModule::patch_shape() const {
  if (config_.per_channel) return {config_.patch_len};
  return {config_.channels, config_.patch_len};
}

Tensor EmbeddingModule::encode_rows(const Tensor& rows) const {
  if (rows.rank() != 2 || rows.dim(1) != config_.input_width()) {
    fail(ErrorKind::dimension, "embed: rows " + shape_str(rows.shape()) + " do not have width " +
                                   std::to_string(config_.input_width()));
  }
  return f_.forward(rows);
}

Tensor EmbeddingModule::decode_rows(const Tensor& embeddings) const {
  if (embeddings.rank() != 2 || embeddings.dim(1) != config_.embed_dim) {
    fail(ErrorKind::dimension, "inverse embed: embeddings " + shape_str(embeddings.shape()) +
                                   " do not have width " + std::to_string(config_.embed_dim));
  }
  return g_.forward(embeddings);
}

Tensor EmbeddingModule::embed_forward(const Tensor& patch) const {
  if (patch.shape() != patch_shape()) {
    fail(ErrorKind::dimension, "embed: patch " + shape_str(patch.shape()) + " expected " +
                                   shape_str(patch_shape()));
  }
  return reshape(encode_rows(reshape(patch, {1, config_.input_width()})), {config_.embed_dim});
}

Tensor EmbeddingModule::inverse_embed(const Tensor& embedding) const {
  if (embedding.numel() != config_.embed_dim) {
    fail(ErrorKind::dimension, "inverse embed: embedding " + shape_str(embedding.shape()) +
                                   " expected length " + std::to_string(config_.embed_dim));
  }
  return reshape(decode_rows(reshape(embedding, {1, config_.embed_dim})), patch_shape());
}

void EmbeddingModule::collect(NamedTensors& out) const {
  f_.collect("embed.F", out);
  g_.collect("embed.G", out);
}

NamedTensors EmbeddingModule::parameters() const {
  NamedTensors out;
  collect(out);
  return out;
}

void EmbeddingModule::set_identity() {
  if (f_.layers().size() != 1 || g_.layers().size() != 1) {
    fail(ErrorKind::state, "set_identity: requires single-layer F and G");
  }
  f_.layers()[0].set_identity();
  g_.layers()[0].set_identity();
}

// ----------------------------------------------------------------------------
// Losses and diagnostics

Tensor info_nce_loss(const Tensor& anchor, const Tensor& positive, const Tensor& negative,
                     double tau) {
  if (!(tau > 0.0)) fail(ErrorKind::parameter, "info_nce: tau must be positive");
  auto as_rows = [](const Tensor& t) {
    return t.rank() == 2 ? t : reshape(t, {1, t.numel()});
  };
  const Tensor a = as_rows(anchor);
  const Tensor sp = row_cosine(a, as_rows(positive));
  const Tensor sn = row_cosine(a, as_rows(negative));
  // -log(e^{s+/tau} / (e^{s+/tau} + e^{s-/tau})) = softplus((s- - s+) / tau)
  return mean(softplus(scale(sub(sn, sp), 1.0 / tau)));
}

Tensor reconstruction_loss(const Tensor& patches, const Tensor& reconstructed) {
  if (patches.shape() != reconstructed.shape()) {
    fail(ErrorKind::dimension, "reconstruction_loss: shape mismatch " +
                                   shape_str(patches.shape()) + " vs " +
                                   shape_str(reconstructed.shape()));
  }
  const std::size_t n = patches.rank() >= 2 ? patches.dim(0) : 1;
  if (n == 0) fail(ErrorKind::dimension, "reconstruction_loss: empty batch");
  return scale(sum_squares(sub(patches, reconstructed)), 1.0 / static_cast<double>(n));
}

namespace {

std::vector<std::vector<double>> unpack_rows(const Tensor& t, bool normalize) {
  const std::size_t rows = t.rank() == 2 ? t.dim(0) : 1;
  const std::size_t d = t.numel() / std::max<std::size_t>(rows, 1);
  const auto v = t.data();
  std::vector<std::vector<double>> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    out[r].assign(v.begin() + static_cast<std::ptrdiff_t>(r * d),
                  v.begin() + static_cast<std::ptrdiff_t>((r + 1) * d));
    if (normalize) {
      double nrm = 0.0;
      for (double x : out[r]) nrm += x * x;
      nrm = std::sqrt(nrm);
      if (nrm == 0.0) fail(ErrorKind::domain, "embedding metric: zero-norm embedding");
      for (double& x : out[r]) x /= nrm;
    }
  }
  return out;
}

double squared_distance(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

}  // namespace

double alignment_metric(const Tensor& embeddings, const Tensor& positives, double alpha,
                        bool normalize) {
  if (!(alpha > 0.0)) fail(ErrorKind::parameter, "alignment: alpha must be positive");
  if (embeddings.shape() != positives.shape()) {
    fail(ErrorKind::dimension, "alignment: shape mismatch");
  }
  const auto x = unpack_rows(embeddings, normalize);
  const auto y = unpack_rows(positives, normalize);
  if (x.empty()) fail(ErrorKind::dimension, "alignment: empty pair set");
  double total = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    total += std::pow(std::sqrt(squared_distance(x[i], y[i])), alpha);
  }
  return total / static_cast<double>(x.size());
}

double uniformity_metric(const Tensor& embeddings, double t, bool normalize) {
  if (!(t > 0.0)) fail(ErrorKind::parameter, "uniformity: t must be positive");
  const auto x = unpack_rows(embeddings, normalize);
  if (x.size() < 2) fail(ErrorKind::dimension, "uniformity: need at least two embeddings");
  double total = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    for (std::size_t j = i + 1; j < x.size(); ++j) {
      total += std::exp(-t * squared_distance(x[i], x[j]));
      ++pairs;
    }
  }
  return std::log(total / static_cast<double>(pairs));
}

// ----------------------------------------------------------------------------
// Training

TripletBatch make_triplets(const Tensor& rows, const EmbedConfig& config, std::uint64_t seed) {
  if (rows.rank() != 2 || rows.dim(1) != config.input_width()) {
    fail(ErrorKind::dimension, "make_triplets: rows " + shape_str(rows.shape()) +
                                   " do not match input width " +
                                   std::to_string(config.input_width()));
  }
  const std::size_t n = rows.dim(0), w = rows.dim(1);
  const auto v = rows.data();
  TripletBatch batch;
  batch.rows = rows;
  std::vector<double> anchors, positives, negatives;
  Rng rng(seed);
  for (std::size_t r = 0; r < n; ++r) {
    std::vector<double> p(v.begin() + static_cast<std::ptrdiff_t>(r * w),
                          v.begin() + static_cast<std::ptrdiff_t>((r + 1) * w));
    std::vector<double> flipped = p;
    flip_segments(flipped, config.patch_len);
    if (flipped == p) {
      ++batch.degenerate;
      continue;
    }
    const double sigma = config.sigma_abs ? *config.sigma_abs : config.sigma_rel * population_std(p);
    batch.anchor_index.push_back(r);
    anchors.insert(anchors.end(), p.begin(), p.end());
    for (double x : p) positives.push_back(x + sigma * gaussian(rng));
    negatives.insert(negatives.end(), flipped.begin(), flipped.end());
  }
  const std::size_t m = batch.anchor_index.size();
  batch.anchors = Tensor::from_data({m, w}, std::move(anchors));
  batch.positives = Tensor::from_data({m, w}, std::move(positives));
  batch.negatives = Tensor::from_data({m, w}, std::move(negatives));
  return batch;
}

EmbedTrainResult train_embedding(EmbeddingModule& module, const Tensor& corpus_rows,
                                 const EmbedTrainOptions& options) {
  const auto& cfg = module.config();
  if (corpus_rows.rank() != 2 || corpus_rows.dim(0) == 0) {
    fail(ErrorKind::data, "train_embedding: empty corpus");
  }
  if (options.batch_size == 0) fail(ErrorKind::parameter, "train_embedding: batch_size must be >= 1");
  EmbedTrainResult result;
  NamedTensors params = module.parameters();
  set_requires_grad(params, true);
  Optimizer opt(params, {OptimizerKind::adam, options.learning_rate});

  const std::size_t n = corpus_rows.dim(0);
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle_rng(mix_seed(options.seed, epoch));
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[uniform_index(shuffle_rng, i)]);

    for (std::size_t start = 0; start < n; start += options.batch_size) {
      if (options.max_steps && step >= options.max_steps) return result;
      ++step;
      const std::size_t count = std::min(options.batch_size, n - start);
      std::span<const std::size_t> idx(order.data() + start, count);
      Tensor rows = gather_rows(corpus_rows, idx);
      TripletBatch tb = make_triplets(rows, cfg, mix_seed(options.seed, 1000003 + step));
      result.degenerate_patches += tb.degenerate;

      Tensor emb = module.encode_rows(tb.rows);
      Tensor recon = reconstruction_loss(tb.rows, module.decode_rows(emb));
      Tensor total = recon;
      double nce_value = 0.0;
      if (!tb.anchor_index.empty()) {
        Tensor anchors = gather_rows(emb, tb.anchor_index);
        Tensor nce = info_nce_loss(anchors, module.encode_rows(tb.positives),
                                   module.encode_rows(tb.negatives), cfg.tau);
        nce_value = nce.item();
        total = add(total, nce);
      }
      const double tv = total.item();
      if (!std::isfinite(tv)) {
        fail(ErrorKind::training, "train_embedding: non-finite loss at step " + std::to_string(step));
      }
      opt.zero_grad();
      total.backward();
      opt.step();
      result.history.push_back({step, nce_value, recon.item(), tv});
    }
  }
  opt.zero_grad();
  return result;
}

Tensor corpus_rows(const std::vector<Tensor>& panels, const EmbedConfig& config,
                   bool truncate_tail) {
  std::vector<Tensor> blocks;
  for (const auto& panel : panels) {
    if (panel.dim(0) != config.channels && !config.per_channel) {
      fail(ErrorKind::dimension, "corpus_rows: panel has " + std::to_string(panel.dim(0)) +
                                     " channels, embedding expects " +
                                     std::to_string(config.channels));
    }
    if (panel.dim(1) < config.patch_len) continue;
    PatchGrid grid = patchify(panel, config.patch_len, truncate_tail);
    blocks.push_back(config.per_channel ? grid.channel_rows() : grid.joint_rows());
  }
  if (blocks.empty()) fail(ErrorKind::data, "corpus_rows: no series long enough for one patch");
  NoGradGuard guard;
  return concat_rows(blocks);
}

void write_embed_history_csv(const std::string& path, const std::vector<EmbedLossRecord>& history) {
  std::ofstream f(path);
  if (!f) fail(ErrorKind::io, "cannot write " + path);
  f << "step,info_nce,mse,total\n";
  for (const auto& r : history) f << fmt::format("{},{},{},{}\n", r.step, r.info_nce, r.mse, r.total);
}

}  // namespace tflab
