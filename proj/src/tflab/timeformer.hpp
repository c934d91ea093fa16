#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tflab/attention.hpp"
#include "tflab/embedding.hpp"
#include "tflab/nn.hpp"
#include "tflab/tensor.hpp"

namespace tflab {

struct ModelConfig {
  std::size_t channels = 1;
  std::size_t patch_len = 4;
  std::size_t embed_dim = 32;
  std::size_t head_dim = 8;
  std::size_t heads = 4;
  std::size_t layers = 2;
  std::size_t ffn_dim = 64;
  double dropout = 0.1;
  // Embedding hyperparameters. embed_hidden == 0 selects the 4 * D default.
  std::size_t embed_hidden = 0;
  double tau = 0.1;
  double sigma_rel = 0.05;
  MaskMode mask_mode = MaskMode::neg_inf;

  void validate() const;
  EmbedConfig embed_config() const;

  // tiny, small, base, large.
  static ModelConfig preset(const std::string& name);

  // "key = value" lines in a fixed order.
  std::string to_text() const;
  static ModelConfig from_text(const std::string& text);

  bool operator==(const ModelConfig&) const = default;
};

std::vector<std::string> preset_names();

// Fixed sinusoidal table: PE[t][2i] = sin(t / 10000^(2i/D)), PE[t][2i+1] = cos(...).
Tensor positional_encoding(std::size_t steps, std::size_t dim);

class TimeFormerBlock {
 public:
  TimeFormerBlock() = default;
  TimeFormerBlock(const ModelConfig& config, bool with_cross, Rng& rng);

  // memory == nullptr for encoder blocks.
  Tensor forward(const Tensor& x, const MaskSet& masks, const Tensor* memory, const Tensor& alpha,
                 const Tensor& beta, MaskMode mode, double dropout_p, std::uint64_t seed,
                 bool training) const;
  void collect(const std::string& prefix, NamedTensors& out) const;

  FusedAttention& self_attention() { return self_; }

 private:
  FusedAttention self_;
  bool has_cross_ = false;
  CrossAttention cross_;
  Linear ffn1_;
  Linear ffn2_;
  LayerNorm ln1_;
  LayerNorm ln2_;
  LayerNorm ln3_;
};

// Encoder/decoder over per-channel patch tokens with an invertible embedding
// on both ends.
class TimeFormer {
 public:
  TimeFormer() = default;
  TimeFormer(ModelConfig config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  EmbeddingModule& embedding() { return embedding_; }
  const EmbeddingModule& embedding() const { return embedding_; }

  // [C x L] series -> [(C * L / t_p) x D] token embeddings through F.
  Tensor embed_series(const Tensor& series) const;
  // [(C * N) x D] -> [C x (N * t_p)] through G.
  Tensor decode_series(const Tensor& tokens) const;

  // H_enc for context tokens [(C * steps) x D].
  Tensor encode(const Tensor& tokens, std::size_t steps, std::uint64_t seed, bool training) const;
  // H_dec for decoder input tokens; positions start at `offset`.
  Tensor decode(const Tensor& memory, const Tensor& tokens, std::size_t steps, std::size_t offset,
                std::uint64_t seed, bool training) const;

  // Teacher-forcing input: per channel, BOS then target tokens 0..steps-2.
  Tensor shifted_targets(const Tensor& target_tokens, std::size_t steps) const;

  // Predicted target series [C x horizon] under teacher forcing.
  Tensor teacher_forced(const Tensor& context, const Tensor& target, std::uint64_t seed,
                        bool training) const;

  NamedTensors parameters() const;
  NamedTensors transformer_parameters() const;
  NamedTensors embedding_parameters() const { return embedding_.parameters(); }

  std::size_t decoder_calls() const { return decoder_calls_; }
  void reset_decoder_calls() { decoder_calls_ = 0; }

  // Deep copy with independent parameter storage.
  TimeFormer clone() const;

  const Tensor& alpha() const { return alpha_; }
  const Tensor& beta() const { return beta_; }
  std::vector<TimeFormerBlock>& encoder_blocks() { return encoder_; }

 private:
  Tensor add_positions(const Tensor& tokens, std::size_t steps, std::size_t offset) const;

  ModelConfig config_;
  EmbeddingModule embedding_;
  std::vector<TimeFormerBlock> encoder_;
  std::vector<TimeFormerBlock> decoder_;
  Tensor alpha_;
  Tensor beta_;
  Tensor bos_;
  mutable std::size_t decoder_calls_ = 0;
};

}  // namespace tflab
