#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "tflab/nn.hpp"
#include "tflab/tensor.hpp"

namespace tflab {

// Tokens are laid out channel-major: token (c, t) has index c * T + t.
enum class MaskKind {
  time_causal,    // c == c' and t' <= t
  channel_cross,  // t == t' and c != c'
  fusion_causal,  // t' <= t
  time_full,      // c == c'
  all,            // every pair
};

const char* mask_kind_name(MaskKind kind);
bool mask_predicate(MaskKind kind, std::size_t c, std::size_t t, std::size_t c2, std::size_t t2);
BinaryMatrix build_mask(MaskKind kind, std::size_t channels, std::size_t steps);

// The three masks one attention stack uses.
struct MaskSet {
  BinaryMatrix time;
  BinaryMatrix channel;
  BinaryMatrix fusion;
};

MaskSet encoder_masks(std::size_t channels, std::size_t steps);
MaskSet decoder_masks(std::size_t channels, std::size_t steps);

// softmax(mask(Q K^T / sqrt(H))) V with Q = Xq Wq, K = Xkv Wk, V = Xkv Wv.
// A null mask attends everywhere. A mask with no allowed entry at all yields
// zeros; a mask with only some empty rows is rejected by masked_softmax.
Tensor attention_head(const Tensor& xq, const Tensor& xkv, const Tensor& wq, const Tensor& wk,
                      const Tensor& wv, const BinaryMatrix* mask,
                      MaskMode mode = MaskMode::neg_inf);

struct Projection {
  Tensor wq;
  Tensor wk;
  Tensor wv;

  Projection() = default;
  Projection(std::size_t in, std::size_t out, Rng& rng);
  void collect(const std::string& prefix, NamedTensors& out) const;
};

// One fused head: time and channel branches mixed by (alpha, beta), then a
// fusion head over the mix.
class FusedHead {
 public:
  FusedHead() = default;
  FusedHead(std::size_t model_dim, std::size_t head_dim, Rng& rng);

  Tensor forward(const Tensor& x, const MaskSet& masks, const Tensor& alpha, const Tensor& beta,
                 MaskMode mode) const;
  void collect(const std::string& prefix, NamedTensors& out) const;

  Projection& time() { return time_; }
  Projection& channel() { return channel_; }
  Projection& fusion() { return fusion_; }

 private:
  Projection time_;
  Projection channel_;
  Projection fusion_;
};

// Heads concatenated back to D, followed by a D x D output projection.
class FusedAttention {
 public:
  FusedAttention() = default;
  FusedAttention(std::size_t model_dim, std::size_t head_dim, std::size_t heads, Rng& rng);

  Tensor forward(const Tensor& x, const MaskSet& masks, const Tensor& alpha, const Tensor& beta,
                 MaskMode mode) const;
  void collect(const std::string& prefix, NamedTensors& out) const;

  std::vector<FusedHead>& heads() { return heads_; }

 private:
  std::vector<FusedHead> heads_;
  Linear out_;
};

// Unmasked multi-head attention from query tokens onto memory tokens.
class CrossAttention {
 public:
  CrossAttention() = default;
  CrossAttention(std::size_t model_dim, std::size_t head_dim, std::size_t heads, Rng& rng);

  Tensor forward(const Tensor& x, const Tensor& memory) const;
  void collect(const std::string& prefix, NamedTensors& out) const;

 private:
  std::vector<Projection> heads_;
  Linear out_;
};

}  // namespace tflab
