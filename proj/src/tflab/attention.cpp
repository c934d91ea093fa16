#include "tflab/attention.hpp"

#include <cmath>

#include "tflab/error.hpp"

namespace tflab {

const char* mask_kind_name(MaskKind kind) {
  switch (kind) {
    case MaskKind::time_causal: return "time_causal";
    case MaskKind::channel_cross: return "channel_cross";
    case MaskKind::fusion_causal: return "fusion_causal";
    case MaskKind::time_full: return "time_full";
    case MaskKind::all: return "all";
  }
  return "unknown";
}

bool mask_predicate(MaskKind kind, std::size_t c, std::size_t t, std::size_t c2, std::size_t t2) {
  switch (kind) {
    case MaskKind::time_causal: return c == c2 && t2 <= t;
    case MaskKind::channel_cross: return t == t2 && c != c2;
    case MaskKind::fusion_causal: return t2 <= t;
    case MaskKind::time_full: return c == c2;
    case MaskKind::all: return true;
  }
  return false;
}

BinaryMatrix build_mask(MaskKind kind, std::size_t channels, std::size_t steps) {
  if (channels == 0 || steps == 0) {
    fail(ErrorKind::parameter, "build_mask: channels and steps must be >= 1");
  }
  const std::size_t n = channels * steps;
  BinaryMatrix m(n, n);
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t t = 0; t < steps; ++t)
      for (std::size_t c2 = 0; c2 < channels; ++c2)
        for (std::size_t t2 = 0; t2 < steps; ++t2)
          m.set(c * steps + t, c2 * steps + t2, mask_predicate(kind, c, t, c2, t2));
  return m;
}

MaskSet encoder_masks(std::size_t channels, std::size_t steps) {
  return {build_mask(MaskKind::time_full, channels, steps),
          build_mask(MaskKind::channel_cross, channels, steps),
          build_mask(MaskKind::all, channels, steps)};
}

MaskSet decoder_masks(std::size_t channels, std::size_t steps) {
  return {build_mask(MaskKind::time_causal, channels, steps),
          build_mask(MaskKind::channel_cross, channels, steps),
          build_mask(MaskKind::fusion_causal, channels, steps)};
}

Tensor attention_head(const Tensor& xq, const Tensor& xkv, const Tensor& wq, const Tensor& wk,
                      const Tensor& wv, const BinaryMatrix* mask, MaskMode mode) {
  const std::size_t h = wq.dim(1);
  if (mask && mask->count() == 0) return Tensor::zeros({xq.dim(0), wv.dim(1)});
  Tensor q = matmul(xq, wq);
  Tensor k = matmul(xkv, wk);
  Tensor v = matmul(xkv, wv);
  Tensor scores = scale(matmul(q, transpose(k)), 1.0 / std::sqrt(static_cast<double>(h)));
  Tensor att = mask ? masked_softmax(scores, *mask, mode) : softmax_rows(scores);
  return matmul(att, v);
}

Projection::Projection(std::size_t in, std::size_t out, Rng& rng)
    : wq(xavier(in, out, rng)), wk(xavier(in, out, rng)), wv(xavier(in, out, rng)) {}

void Projection::collect(const std::string& prefix, NamedTensors& out) const {
  out.push_back({prefix + ".Wq", wq});
  out.push_back({prefix + ".Wk", wk});
  out.push_back({prefix + ".Wv", wv});
}

FusedHead::FusedHead(std::size_t model_dim, std::size_t head_dim, Rng& rng)
    : time_(model_dim, head_dim, rng),
      channel_(model_dim, head_dim, rng),
      fusion_(head_dim, head_dim, rng) {}

Tensor FusedHead::forward(const Tensor& x, const MaskSet& masks, const Tensor& alpha,
                          const Tensor& beta, MaskMode mode) const {
  Tensor att_t = attention_head(x, x, time_.wq, time_.wk, time_.wv, &masks.time, mode);
  Tensor mixed = scale_by(att_t, alpha);
  // Univariate input leaves the channel mask empty: that branch is skipped.
  if (masks.channel.count() > 0) {
    Tensor att_c =
        attention_head(x, x, channel_.wq, channel_.wk, channel_.wv, &masks.channel, mode);
    mixed = add(mixed, scale_by(att_c, beta));
  }
  return attention_head(mixed, mixed, fusion_.wq, fusion_.wk, fusion_.wv, &masks.fusion, mode);
}

void FusedHead::collect(const std::string& prefix, NamedTensors& out) const {
  time_.collect(prefix + ".time", out);
  channel_.collect(prefix + ".chan", out);
  fusion_.collect(prefix + ".fuse", out);
}

FusedAttention::FusedAttention(std::size_t model_dim, std::size_t head_dim, std::size_t heads,
                               Rng& rng) {
  for (std::size_t i = 0; i < heads; ++i) heads_.emplace_back(model_dim, head_dim, rng);
  out_ = Linear(head_dim * heads, model_dim, true, rng);
}

Tensor FusedAttention::forward(const Tensor& x, const MaskSet& masks, const Tensor& alpha,
                               const Tensor& beta, MaskMode mode) const {
  std::vector<Tensor> parts;
  parts.reserve(heads_.size());
  for (const auto& head : heads_) parts.push_back(head.forward(x, masks, alpha, beta, mode));
  return out_.forward(parts.size() == 1 ? parts[0] : concat_cols(parts));
}

void FusedAttention::collect(const std::string& prefix, NamedTensors& out) const {
  for (std::size_t i = 0; i < heads_.size(); ++i) {
    heads_[i].collect(prefix + ".h" + std::to_string(i), out);
  }
  out_.collect(prefix + ".out", out);
}

CrossAttention::CrossAttention(std::size_t model_dim, std::size_t head_dim, std::size_t heads,
                               Rng& rng) {
  for (std::size_t i = 0; i < heads; ++i) heads_.emplace_back(model_dim, head_dim, rng);
  out_ = Linear(head_dim * heads, model_dim, true, rng);
}

Tensor CrossAttention::forward(const Tensor& x, const Tensor& memory) const {
  std::vector<Tensor> parts;
  parts.reserve(heads_.size());
  for (const auto& p : heads_) parts.push_back(attention_head(x, memory, p.wq, p.wk, p.wv, nullptr));
  return out_.forward(parts.size() == 1 ? parts[0] : concat_cols(parts));
}

void CrossAttention::collect(const std::string& prefix, NamedTensors& out) const {
  for (std::size_t i = 0; i < heads_.size(); ++i) {
    heads_[i].collect(prefix + ".h" + std::to_string(i), out);
  }
  out_.collect(prefix + ".out", out);
}

}  // namespace tflab
