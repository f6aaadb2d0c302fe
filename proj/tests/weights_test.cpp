#include <gtest/gtest.h>

#include <filesystem>

#include <unistd.h>
#include <zlib.h>

#include "mcnn/errors.hpp"
#include "mcnn/fs_util.hpp"
#include "mcnn/weights.hpp"

using namespace mcnn;
namespace fs = std::filesystem;

namespace {

ArchitectureConfig small_config() {
  ArchitectureConfig c;
  c.block_filters = {4, 8};
  c.convs_per_block = {2, 1};
  c.dense_units = {8, 6};
  return c;
}

bool same_parameters(const ModelGraph& a, const ModelGraph& b) {
  if (a.parameters().size() != b.parameters().size()) return false;
  for (std::size_t i = 0; i < a.parameters().size(); ++i) {
    auto va = a.parameters()[i].value.values(), vb = b.parameters()[i].value.values();
    if (!std::equal(va.begin(), va.end(), vb.begin(), vb.end())) return false;
  }
  return true;
}

// Rounds every parameter to float32 so round-trips are exact.
void round_to_float(ModelGraph& m) {
  for (const auto& p : m.parameters()) {
    for (double& v : m.parameter(p.name).mutable_values()) v = static_cast<float>(v);
  }
}

std::string error_message(const std::function<void()>& f) {
  try {
    f();
  } catch (const std::exception& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST(Weights, RoundTripIsBitExact) {
  ModelGraph a = build_custom_cnn(small_config(), 1);
  round_to_float(a);
  a.parameter("block1_bn/moving_mean").mutable_values()[2] = 0.125f;
  ModelGraph b = build_custom_cnn(small_config(), 2);
  ASSERT_FALSE(same_parameters(a, b));
  const fs::path path = fs::temp_directory_path() / ("mcnn_weights_" + std::to_string(::getpid()) + ".mcnn");
  save_weights(a, path);
  load_weights(b, path);
  EXPECT_TRUE(same_parameters(a, b));
  EXPECT_EQ(serialize_weights(a), serialize_weights(b));
  fs::remove(path);
}

TEST(Weights, FloatRounding) {
  ModelGraph a = build_custom_cnn(small_config(), 1);
  ModelGraph b = build_custom_cnn(small_config(), 2);
  load_weights(b, serialize_weights(a));
  const double original = a.parameter("dense1/kernel")[0];
  EXPECT_EQ(b.parameter("dense1/kernel")[0], static_cast<double>(static_cast<float>(original)));
}

TEST(Weights, LayoutAndRecords) {
  const ModelGraph a = build_custom_cnn(small_config(), 1);
  const auto bytes = serialize_weights(a);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 5), "MCNN1");
  const auto records = parse_weights(bytes);
  ASSERT_EQ(records.size(), a.parameters().size());
  std::size_t total = 0;
  for (const WeightRecord& r : records) total += r.values.size();
  EXPECT_EQ(total, count_parameters(a));
  EXPECT_EQ(records.front().name, a.parameters().front().name);
  // Trailer is a CRC-32 over everything before it.
  const uLong crc = crc32(crc32(0L, Z_NULL, 0), bytes.data(), static_cast<uInt>(bytes.size() - 4));
  const std::uint32_t stored = bytes[bytes.size() - 4] | (bytes[bytes.size() - 3] << 8) |
                               (bytes[bytes.size() - 2] << 16) | (std::uint32_t{bytes.back()} << 24);
  EXPECT_EQ(stored, static_cast<std::uint32_t>(crc));
}

TEST(Weights, TruncatedFileLeavesModelUntouched) {
  const auto bytes = serialize_weights(build_custom_cnn(small_config(), 1));
  ModelGraph b = build_custom_cnn(small_config(), 2);
  const ModelGraph before = b;
  for (std::size_t keep : {std::size_t{0}, std::size_t{3}, std::size_t{40}, bytes.size() / 2, bytes.size() - 1}) {
    const std::vector<std::uint8_t> cut(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(keep));
    EXPECT_THROW(load_weights(b, cut), CorruptFileError) << keep;
    EXPECT_TRUE(same_parameters(b, before));
  }
  auto extra = bytes;
  extra.push_back(0);
  EXPECT_THROW(parse_weights(extra), CorruptFileError);
}

TEST(Weights, FlippedBitFailsCrc) {
  auto bytes = serialize_weights(build_custom_cnn(small_config(), 1));
  bytes[bytes.size() / 2] ^= 0x10;
  EXPECT_THROW(parse_weights(bytes), CorruptFileError);
  auto magic = serialize_weights(build_custom_cnn(small_config(), 1));
  magic[4] = '2';
  EXPECT_THROW(parse_weights(magic), CorruptFileError);
}

TEST(Weights, IncompatibleArchitecture) {
  ArchitectureConfig sig = small_config();
  sig.head = Head::kSigmoid1;
  const auto bytes = serialize_weights(build_custom_cnn(sig, 1));
  ModelGraph soft = build_custom_cnn(small_config(), 2);
  const ModelGraph before = soft;
  EXPECT_THROW(load_weights(soft, bytes), IncompatibleFileError);
  EXPECT_NE(error_message([&] { load_weights(soft, bytes); }).find("head/kernel"), std::string::npos);
  EXPECT_TRUE(same_parameters(soft, before));

  ArchitectureConfig wider = small_config();
  wider.dense_units = {8, 6, 4};
  EXPECT_THROW(load_weights(soft, serialize_weights(build_custom_cnn(wider, 1))), IncompatibleFileError);
}

TEST(Weights, MissingFile) {
  ModelGraph m = build_custom_cnn(small_config(), 1);
  EXPECT_THROW(load_weights(m, fs::path("/nonexistent/weights.mcnn")), Error);
}
