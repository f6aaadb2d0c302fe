#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "mcnn/model.hpp"

namespace mcnn {

// Layout (little-endian): "MCNN1", u32 tensor count, then per tensor
// u32 name length, name bytes, u32 rank, u32 extents, float32 values;
// finally a CRC-32 of every preceding byte.
struct WeightRecord {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

std::vector<std::uint8_t> serialize_weights(const ModelGraph& model);
// Throws CorruptFileError on bad magic, truncation, trailing bytes or CRC mismatch.
std::vector<WeightRecord> parse_weights(std::span<const std::uint8_t> bytes);

void save_weights(const ModelGraph& model, const std::filesystem::path& path);

// Replaces every parameter of `model` from the file. Names and extents must
// match the model exactly (IncompatibleFileError); the model is untouched
// unless the whole file is valid.
void load_weights(ModelGraph& model, const std::filesystem::path& path);
void load_weights(ModelGraph& model, std::span<const std::uint8_t> bytes);

}  // namespace mcnn
