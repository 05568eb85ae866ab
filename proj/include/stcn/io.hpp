#pragma once

#include "stcn/feature.hpp"
#include "stcn/tensor.hpp"

#include <filesystem>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

namespace stcn {

// Tensor blob: magic "STCN", version u32, rank u32, extents u64[rank],
// then the row-major payload as little-endian 64-bit floats.
void write_tensor(std::ostream& out, const Tensor& t);
Tensor read_tensor(std::istream& in);
void save_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path);

// Named-tensor archive: magic "STCA", version u32, count u64, then a
// manifest of (name, rank, extents, byte offset) records followed by the
// concatenated tensor blobs; offsets are relative to the payload start.
using NamedTensors = std::vector<std::pair<std::string, Tensor>>;
void save_archive(const std::filesystem::path& path, const NamedTensors& tensors);
NamedTensors load_archive(const std::filesystem::path& path);

// Feature-sequence cache entry: magic "STCF", version u32, label u32,
// modality tag (u32 length + bytes), then the [T x C] tensor blob.
void save_feature(const std::filesystem::path& path, const FeatureSequence& f);
FeatureSequence load_feature(const std::filesystem::path& path);

} // namespace stcn
