#include "tflab/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>

#include "tflab/error.hpp"

namespace tflab {

namespace {

void put_u32(std::vector<char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_f64(std::vector<char>& out, double d) {
  const auto bits = std::bit_cast<std::uint64_t>(d);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
}

class Reader {
 public:
  explicit Reader(const std::vector<char>& bytes) : bytes_(bytes) {}

  bool done() const { return pos_ == bytes_.size(); }

  std::uint64_t take(std::size_t width) {
    if (bytes_.size() - pos_ < width) fail(ErrorKind::format, "checkpoint: truncated file");
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < width; ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += width;
    return v;
  }

  std::string take_string(std::size_t n) {
    if (bytes_.size() - pos_ < n) fail(ErrorKind::format, "checkpoint: truncated name");
    std::string s(bytes_.data() + pos_, n);
    pos_ += n;
    return s;
  }

 private:
  const std::vector<char>& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<char> encode_checkpoint(const NamedTensors& tensors) {
  std::vector<char> out(kCheckpointMagic.begin(), kCheckpointMagic.end());
  for (const auto& [name, t] : tensors) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    put_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t e : t.shape()) put_u32(out, static_cast<std::uint32_t>(e));
    for (double v : t.data()) put_f64(out, v);
  }
  return out;
}

NamedTensors decode_checkpoint(const std::vector<char>& bytes) {
  if (bytes.size() < kCheckpointMagic.size() ||
      !std::equal(kCheckpointMagic.begin(), kCheckpointMagic.end(), bytes.begin())) {
    fail(ErrorKind::format, "checkpoint: unknown magic");
  }
  std::vector<char> body(bytes.begin() + kCheckpointMagic.size(), bytes.end());
  Reader r(body);
  NamedTensors out;
  while (!r.done()) {
    const auto name_len = r.take(4);
    std::string name = r.take_string(name_len);
    const auto rank = r.take(4);
    Shape shape;
    for (std::uint64_t i = 0; i < rank; ++i) shape.push_back(r.take(4));
    std::vector<double> values(shape_numel(shape));
    for (auto& v : values) v = std::bit_cast<double>(r.take(8));
    out.push_back({std::move(name), Tensor::from_data(std::move(shape), std::move(values))});
  }
  return out;
}

void write_checkpoint(const std::filesystem::path& path, const NamedTensors& tensors) {
  const auto bytes = encode_checkpoint(tensors);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) fail(ErrorKind::io, "cannot write checkpoint " + path.string());
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) fail(ErrorKind::io, "failed writing checkpoint " + path.string());
}

NamedTensors read_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail(ErrorKind::io, "cannot open checkpoint " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

void assign_named(const NamedTensors& source, NamedTensors& targets, bool allow_extra) {
  std::map<std::string, const Tensor*> by_name;
  for (const auto& s : source) by_name[s.name] = &s.tensor;
  std::size_t used = 0;
  for (auto& t : targets) {
    auto it = by_name.find(t.name);
    if (it == by_name.end()) fail(ErrorKind::format, "checkpoint: missing parameter " + t.name);
    if (it->second->shape() != t.tensor.shape()) {
      fail(ErrorKind::format, "checkpoint: shape mismatch for " + t.name + ": file has " +
                                  shape_str(it->second->shape()) + ", model expects " +
                                  shape_str(t.tensor.shape()));
    }
    ++used;
  }
  if (!allow_extra && used != source.size()) {
    for (const auto& s : source) {
      bool found = false;
      for (const auto& t : targets) found = found || t.name == s.name;
      if (!found) fail(ErrorKind::format, "checkpoint: unexpected parameter " + s.name);
    }
  }
  for (auto& t : targets) {
    const auto src = by_name[t.name]->data();
    auto dst = t.tensor.mutable_data();
    std::copy(src.begin(), src.end(), dst.begin());
  }
}

void copy_values(const NamedTensors& from, const NamedTensors& to) {
  if (from.size() != to.size()) fail(ErrorKind::dimension, "copy_values: parameter count differs");
  for (std::size_t i = 0; i < from.size(); ++i) {
    if (from[i].tensor.shape() != to[i].tensor.shape()) {
      fail(ErrorKind::dimension, "copy_values: shape mismatch at " + from[i].name);
    }
    const auto src = from[i].tensor.data();
    Tensor dst_t = to[i].tensor;
    auto dst = dst_t.mutable_data();
    std::copy(src.begin(), src.end(), dst.begin());
  }
}

}  // namespace tflab
