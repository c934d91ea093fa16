#include "tflab/timeformer.hpp"

#include <cmath>
#include <map>
#include <sstream>

#include <fmt/format.h>

#include "tflab/checkpoint.hpp"
#include "tflab/error.hpp"

namespace tflab {

void ModelConfig::validate() const {
  auto positive = [](std::size_t v, const char* name) {
    if (v == 0) fail(ErrorKind::parameter, std::string("model config: ") + name + " must be >= 1");
  };
  positive(channels, "channels");
  positive(embed_dim, "embed_dim");
  positive(head_dim, "head_dim");
  positive(heads, "heads");
  positive(ffn_dim, "ffn_dim");
  if (patch_len < 2) fail(ErrorKind::parameter, "model config: patch_len must be >= 2");
  if (heads * head_dim != embed_dim) {
    fail(ErrorKind::parameter, fmt::format("model config: heads ({}) x head_dim ({}) must equal "
                                           "embed_dim ({})",
                                           heads, head_dim, embed_dim));
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) {
    fail(ErrorKind::parameter, "model config: dropout must lie in [0, 1)");
  }
  if (!(tau > 0.0)) fail(ErrorKind::parameter, "model config: tau must be positive");
  if (!(sigma_rel >= 0.0)) fail(ErrorKind::parameter, "model config: sigma_rel must be >= 0");
}

EmbedConfig ModelConfig::embed_config() const {
  EmbedConfig e;
  e.channels = channels;
  e.patch_len = patch_len;
  e.embed_dim = embed_dim;
  if (embed_hidden != 0) e.hidden = std::vector<std::size_t>{embed_hidden};
  e.sigma_rel = sigma_rel;
  e.tau = tau;
  e.per_channel = true;
  return e;
}

ModelConfig ModelConfig::preset(const std::string& name) {
  ModelConfig c;
  auto set = [&](std::size_t d, std::size_t layers, std::size_t heads) {
    c.embed_dim = d;
    c.layers = layers;
    c.heads = heads;
    c.head_dim = d / heads;
    c.ffn_dim = 4 * d;
  };
  if (name == "tiny") {
    c.embed_dim = 32;
    c.head_dim = 8;
    c.heads = 4;
    c.layers = 2;
    c.ffn_dim = 64;
  } else if (name == "small") {
    set(1024, 8, 8);
  } else if (name == "base") {
    set(2048, 8, 16);
  } else if (name == "large") {
    set(3072, 16, 32);
  } else {
    fail(ErrorKind::usage, "unknown preset '" + name + "' (expected tiny, small, base, large)");
  }
  return c;
}

std::vector<std::string> preset_names() { return {"tiny", "small", "base", "large"}; }

std::string ModelConfig::to_text() const {
  std::string s;
  s += fmt::format("channels = {}\n", channels);
  s += fmt::format("patch_len = {}\n", patch_len);
  s += fmt::format("embed_dim = {}\n", embed_dim);
  s += fmt::format("head_dim = {}\n", head_dim);
  s += fmt::format("heads = {}\n", heads);
  s += fmt::format("layers = {}\n", layers);
  s += fmt::format("ffn_dim = {}\n", ffn_dim);
  s += fmt::format("dropout = {}\n", dropout);
  s += fmt::format("embed_hidden = {}\n", embed_hidden);
  s += fmt::format("tau = {}\n", tau);
  s += fmt::format("sigma_rel = {}\n", sigma_rel);
  s += fmt::format("mask_mode = {}\n", mask_mode == MaskMode::neg_inf ? "neg_inf" : "product");
  return s;
}

ModelConfig ModelConfig::from_text(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      fail(ErrorKind::format, fmt::format("model config line {}: expected key = value", lineno));
    }
    auto trim = [](std::string v) {
      const auto b = v.find_first_not_of(" \t\r");
      const auto e = v.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : v.substr(b, e - b + 1);
    };
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  ModelConfig c;
  auto take = [&](const char* key) -> std::string {
    auto it = kv.find(key);
    if (it == kv.end()) fail(ErrorKind::format, std::string("model config: missing key ") + key);
    std::string v = it->second;
    kv.erase(it);
    return v;
  };
  auto to_size = [](const std::string& v, const char* key) {
    try {
      std::size_t pos = 0;
      const unsigned long long n = std::stoull(v, &pos);
      if (pos != v.size()) throw std::invalid_argument(v);
      return static_cast<std::size_t>(n);
    } catch (const std::logic_error&) {
      fail(ErrorKind::format, std::string("model config: bad integer for ") + key + ": " + v);
    }
  };
  auto to_real = [](const std::string& v, const char* key) {
    try {
      std::size_t pos = 0;
      const double d = std::stod(v, &pos);
      if (pos != v.size()) throw std::invalid_argument(v);
      return d;
    } catch (const std::logic_error&) {
      fail(ErrorKind::format, std::string("model config: bad real for ") + key + ": " + v);
    }
  };
  c.channels = to_size(take("channels"), "channels");
  c.patch_len = to_size(take("patch_len"), "patch_len");
  c.embed_dim = to_size(take("embed_dim"), "embed_dim");
  c.head_dim = to_size(take("head_dim"), "head_dim");
  c.heads = to_size(take("heads"), "heads");
  c.layers = to_size(take("layers"), "layers");
  c.ffn_dim = to_size(take("ffn_dim"), "ffn_dim");
  c.dropout = to_real(take("dropout"), "dropout");
  c.embed_hidden = to_size(take("embed_hidden"), "embed_hidden");
  c.tau = to_real(take("tau"), "tau");
  c.sigma_rel = to_real(take("sigma_rel"), "sigma_rel");
  const std::string mode = take("mask_mode");
  if (mode == "neg_inf") {
    c.mask_mode = MaskMode::neg_inf;
  } else if (mode == "product") {
    c.mask_mode = MaskMode::product;
  } else {
    fail(ErrorKind::format, "model config: unknown mask_mode " + mode);
  }
  if (!kv.empty()) fail(ErrorKind::format, "model config: unknown key " + kv.begin()->first);
  c.validate();
  return c;
}

Tensor positional_encoding(std::size_t steps, std::size_t dim) {
  if (steps == 0 || dim == 0) fail(ErrorKind::parameter, "positional_encoding: empty table");
  std::vector<double> v(steps * dim);
  for (std::size_t t = 0; t < steps; ++t) {
    for (std::size_t i = 0; i < dim; ++i) {
      const double pair = static_cast<double>(i - i % 2);
      const double angle = static_cast<double>(t) / std::pow(10000.0, pair / static_cast<double>(dim));
      v[t * dim + i] = i % 2 == 0 ? std::sin(angle) : std::cos(angle);
    }
  }
  return Tensor::from_data({steps, dim}, std::move(v));
}

// ----------------------------------------------------------------------------

TimeFormerBlock::TimeFormerBlock(const ModelConfig& config, bool with_cross, Rng& rng)
    : self_(config.embed_dim, config.head_dim, config.heads, rng),
      has_cross_(with_cross),
      ln1_(config.embed_dim),
      ln2_(config.embed_dim),
      ln3_(config.embed_dim) {
  if (with_cross) cross_ = CrossAttention(config.embed_dim, config.head_dim, config.heads, rng);
  ffn1_ = Linear(config.embed_dim, config.ffn_dim, true, rng);
  ffn2_ = Linear(config.ffn_dim, config.embed_dim, true, rng);
}

Tensor TimeFormerBlock::forward(const Tensor& x, const MaskSet& masks, const Tensor* memory,
                                const Tensor& alpha, const Tensor& beta, MaskMode mode,
                                double dropout_p, std::uint64_t seed, bool training) const {
  Tensor y = ln1_.forward(add(x, self_.forward(x, masks, alpha, beta, mode)));
  y = dropout(y, dropout_p, mix_seed(seed, 0), training);
  if (has_cross_) {
    if (!memory) fail(ErrorKind::state, "decoder block called without encoder memory");
    y = ln2_.forward(add(y, cross_.forward(y, *memory)));
    y = dropout(y, dropout_p, mix_seed(seed, 1), training);
  }
  Tensor f = ffn2_.forward(relu(ffn1_.forward(y)));
  Tensor z = ln3_.forward(add(y, f));
  return dropout(z, dropout_p, mix_seed(seed, 2), training);
}

void TimeFormerBlock::collect(const std::string& prefix, NamedTensors& out) const {
  self_.collect(prefix + ".attn", out);
  ln1_.collect(prefix + ".ln1", out);
  if (has_cross_) {
    cross_.collect(prefix + ".cross", out);
    ln2_.collect(prefix + ".ln2", out);
  }
  ffn1_.collect(prefix + ".ffn1", out);
  ffn2_.collect(prefix + ".ffn2", out);
  ln3_.collect(prefix + ".ln3", out);
}

// ----------------------------------------------------------------------------

TimeFormer::TimeFormer(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  embedding_ = EmbeddingModule(config_.embed_config(), mix_seed(seed, 1));
  Rng rng(mix_seed(seed, 2));
  for (std::size_t i = 0; i < config_.layers; ++i) encoder_.emplace_back(config_, false, rng);
  for (std::size_t i = 0; i < config_.layers; ++i) decoder_.emplace_back(config_, true, rng);
  alpha_ = Tensor::scalar(0.5, true);
  beta_ = Tensor::scalar(0.5, true);
  std::vector<double> bos(config_.channels * config_.embed_dim);
  for (auto& b : bos) b = 0.02 * gaussian(rng);
  bos_ = Tensor::from_data({config_.channels, config_.embed_dim}, std::move(bos), true);
}

Tensor TimeFormer::embed_series(const Tensor& series) const {
  if (series.rank() != 2 || series.dim(0) != config_.channels) {
    fail(ErrorKind::dimension, fmt::format("model expects [{} x T] series, got {}",
                                           config_.channels, shape_str(series.shape())));
  }
  return embedding_.encode_rows(series_to_tokens(series, config_.patch_len));
}

Tensor TimeFormer::decode_series(const Tensor& tokens) const {
  return tokens_to_series(embedding_.decode_rows(tokens), config_.channels);
}

Tensor TimeFormer::add_positions(const Tensor& tokens, std::size_t steps,
                                 std::size_t offset) const {
  const std::size_t c = config_.channels, d = config_.embed_dim;
  if (tokens.rank() != 2 || tokens.dim(0) != c * steps || tokens.dim(1) != d) {
    fail(ErrorKind::dimension, fmt::format("expected [{} x {}] tokens, got {}", c * steps, d,
                                           shape_str(tokens.shape())));
  }
  const Tensor table = positional_encoding(offset + steps, d);
  const auto pe = table.data();
  std::vector<double> rows(c * steps * d);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t t = 0; t < steps; ++t)
      std::copy_n(pe.begin() + static_cast<std::ptrdiff_t>((offset + t) * d), d,
                  rows.begin() + static_cast<std::ptrdiff_t>((ch * steps + t) * d));
  return add(tokens, Tensor::from_data({c * steps, d}, std::move(rows)));
}

Tensor TimeFormer::encode(const Tensor& tokens, std::size_t steps, std::uint64_t seed,
                          bool training) const {
  if (encoder_.empty()) return tokens;
  const MaskSet masks = encoder_masks(config_.channels, steps);
  Tensor h = add_positions(tokens, steps, 0);
  for (std::size_t i = 0; i < encoder_.size(); ++i) {
    h = encoder_[i].forward(h, masks, nullptr, alpha_, beta_, config_.mask_mode, config_.dropout,
                            mix_seed(seed, 100 + i), training);
  }
  return h;
}

Tensor TimeFormer::decode(const Tensor& memory, const Tensor& tokens, std::size_t steps,
                          std::size_t offset, std::uint64_t seed, bool training) const {
  ++decoder_calls_;
  if (decoder_.empty()) return tokens;
  const MaskSet masks = decoder_masks(config_.channels, steps);
  Tensor h = add_positions(tokens, steps, offset);
  for (std::size_t i = 0; i < decoder_.size(); ++i) {
    h = decoder_[i].forward(h, masks, &memory, alpha_, beta_, config_.mask_mode, config_.dropout,
                            mix_seed(seed, 200 + i), training);
  }
  return h;
}

Tensor TimeFormer::shifted_targets(const Tensor& target_tokens, std::size_t steps) const {
  const std::size_t c = config_.channels;
  if (target_tokens.rank() != 2 || target_tokens.dim(0) != c * steps) {
    fail(ErrorKind::dimension, "shifted_targets: token count does not match channels x steps");
  }
  // Row layout of the pool: BOS rows 0..C-1, then target rows.
  const Tensor parts[] = {bos_, target_tokens};
  Tensor pool = concat_rows(parts);
  std::vector<std::size_t> index(c * steps);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t t = 0; t < steps; ++t)
      index[ch * steps + t] = t == 0 ? ch : c + ch * steps + (t - 1);
  return gather_rows(pool, index);
}

Tensor TimeFormer::teacher_forced(const Tensor& context, const Tensor& target, std::uint64_t seed,
                                  bool training) const {
  const std::size_t tp = config_.patch_len;
  const std::size_t nc = context.dim(1) / tp, nh = target.dim(1) / tp;
  Tensor memory = encode(embed_series(context), nc, seed, training);
  Tensor dec_in = shifted_targets(embed_series(target), nh);
  Tensor h = decode(memory, dec_in, nh, nc, seed, training);
  return decode_series(h);
}

NamedTensors TimeFormer::transformer_parameters() const {
  NamedTensors out;
  for (std::size_t i = 0; i < encoder_.size(); ++i) {
    encoder_[i].collect("tf.enc.L" + std::to_string(i), out);
  }
  for (std::size_t i = 0; i < decoder_.size(); ++i) {
    decoder_[i].collect("tf.dec.L" + std::to_string(i), out);
  }
  out.push_back({"tf.fusion.alpha", alpha_});
  out.push_back({"tf.fusion.beta", beta_});
  out.push_back({"tf.bos", bos_});
  return out;
}

NamedTensors TimeFormer::parameters() const {
  NamedTensors out = embedding_.parameters();
  for (auto& p : transformer_parameters()) out.push_back(std::move(p));
  return out;
}

TimeFormer TimeFormer::clone() const {
  TimeFormer copy(config_, 0);
  const NamedTensors from = parameters();
  const NamedTensors to = copy.parameters();
  copy_values(from, to);
  for (std::size_t i = 0; i < from.size(); ++i) {
    Tensor t = to[i].tensor;
    t.set_requires_grad(from[i].tensor.requires_grad());
  }
  return copy;
}

}  // namespace tflab
