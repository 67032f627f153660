#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "invdes/tensor.hpp"

namespace invdes {

// MFCK checkpoint format, bit-exact:
//   magic "MFCK", version u16, count u32, then per tensor:
//   name length u16 + UTF-8 name + rank u8 + dims (u32 each) +
//   little-endian 32-bit reals.
// Save/load of the same tensors round-trips to identical bytes.

struct NamedArray {
    std::string name;
    std::vector<Index> shape;
    std::vector<float> data;
};

void save_checkpoint(const std::string& path, const std::vector<NamedArray>& tensors);
std::vector<NamedArray> load_checkpoint(const std::string& path);

/// Serializes raw checkpoint bytes without touching the filesystem (used by
/// round-trip tests).
std::vector<std::uint8_t> encode_checkpoint(const std::vector<NamedArray>& tensors);
std::vector<NamedArray> decode_checkpoint(const std::vector<std::uint8_t>& bytes);

template <class S>
NamedArray to_named(const std::string& name, const Tensor<S>& t) {
    NamedArray a;
    a.name = name;
    a.shape = t.shape();
    a.data.resize(static_cast<std::size_t>(t.size()));
    for (Index i = 0; i < t.size(); ++i) a.data[static_cast<std::size_t>(i)] = static_cast<float>(t.at(i));
    return a;
}

template <class S>
void from_named(const NamedArray& a, Tensor<S>& t) {
    if (a.shape != t.shape())
        throw ShapeError("checkpoint: shape mismatch for '" + a.name + "': stored " +
                         shape_str(a.shape) + " vs model " + shape_str(t.shape()));
    for (Index i = 0; i < t.size(); ++i)
        t.mutable_values()[i] = static_cast<S>(a.data[static_cast<std::size_t>(i)]);
}

}  // namespace invdes
