#pragma once

// Binary parameter file:
//   8-byte magic "TFLAB\0\0\1"
//   repeated until EOF:
//     u32 name length, UTF-8 name bytes,
//     u32 rank, rank x u32 extents,
//     product(extents) x little-endian IEEE-754 binary64
// All integers are little-endian.

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "tflab/tensor.hpp"

namespace tflab {

inline constexpr std::array<char, 8> kCheckpointMagic = {'T', 'F', 'L', 'A', 'B', '\0', '\0', '\1'};

std::vector<char> encode_checkpoint(const NamedTensors& tensors);
NamedTensors decode_checkpoint(const std::vector<char>& bytes);

void write_checkpoint(const std::filesystem::path& path, const NamedTensors& tensors);
NamedTensors read_checkpoint(const std::filesystem::path& path);

// Copies values from `source` into the same-named tensors of `targets`.
// Every target must be present with an identical shape. Entries in `source`
// without a target are rejected unless `allow_extra` is set.
void assign_named(const NamedTensors& source, NamedTensors& targets, bool allow_extra);

// Value copy between two parameter lists with identical names and shapes.
void copy_values(const NamedTensors& from, const NamedTensors& to);

}  // namespace tflab
