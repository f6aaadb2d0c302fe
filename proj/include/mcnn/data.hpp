#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mcnn/tensor.hpp"

namespace mcnn {

// Class encoding: parasitized = 0, uninfected = 1.
inline constexpr int kParasitized = 0;
inline constexpr int kUninfected = 1;
inline constexpr std::size_t kImageSize = 100;

const char* label_name(int label);

enum class Split { kTrain, kVal, kTest };

const char* split_name(Split split);
Split parse_split(const std::string& text);

struct DatasetEntry {
  std::string path;
  int label = kParasitized;
  Split split = Split::kTrain;

  bool operator==(const DatasetEntry&) const = default;
};

struct DatasetIndex {
  std::vector<DatasetEntry> entries;
  std::uint64_t seed = 0;

  std::size_t count(Split split) const;
  std::size_t count(Split split, int label) const;
  std::size_t count_label(int label) const;
};

// Lists image files (png/jpg/jpeg) in the "parasitized" and "uninfected"
// subdirectories of `root` (names matched case-insensitively), sorted by
// path. Every entry starts in the train split.
DatasetIndex index_dataset(const std::filesystem::path& root);

struct SplitFractions {
  double train = 0.82;
  double val = 0.09;
  double test = 0.09;
};

// Validation and test sizes are ceil(fraction * N); train takes the rest.
// Each split's size is shared among classes by largest remainder, so every
// class is within one item of its proportional share. Membership within a
// class is a seeded shuffle.
DatasetIndex stratified_split(DatasetIndex index, const SplitFractions& fractions, std::uint64_t seed);

// Decode, bilinear resize to 100x100, scale by 1/255 -> [100,100,3].
Tensor load_and_preprocess(const std::filesystem::path& path);

// Entry positions of one split grouped into batches. The train split is
// permuted by (shuffle_seed, epoch); val and test keep index order.
std::vector<std::vector<std::size_t>> batch_order(const DatasetIndex& index, Split split, std::size_t batch_size,
                                                  std::uint64_t shuffle_seed, std::uint64_t epoch);

struct Batch {
  Tensor images;                     // [B,100,100,3]
  std::vector<int> labels;
  std::vector<std::size_t> entries;  // positions in the index
};

// Loads batches lazily in the order given by `batch_order`.
class BatchIterator {
 public:
  BatchIterator(const DatasetIndex& index, Split split, std::size_t batch_size = 32, std::uint64_t shuffle_seed = 0,
                std::uint64_t epoch = 0);

  std::optional<Batch> next();
  std::size_t num_batches() const { return order_.size(); }

 private:
  const DatasetIndex* index_;
  std::vector<std::vector<std::size_t>> order_;
  std::size_t cursor_ = 0;
};

Batch load_batch(const DatasetIndex& index, const std::vector<std::size_t>& positions);

// CSV with header "path,label,split".
void write_index_csv(const std::filesystem::path& path, const DatasetIndex& index);
DatasetIndex read_index_csv(const std::filesystem::path& path);
std::string index_to_csv(const DatasetIndex& index);

struct Blob {
  double cx = 0.0;  // column
  double cy = 0.0;  // row
  double r = 0.0;
};

struct SyntheticRecord {
  std::string file;  // relative to the dataset root
  int label = kParasitized;
  std::vector<Blob> blobs;
};

// Writes 2 * n_per_class 100x100 PNGs of pink elliptical cells on a dark
// background. Parasitized cells carry 1-3 purple blobs. Geometry goes to
// <out_dir>/manifest.json. Output is a pure function of (n_per_class, seed).
DatasetIndex generate_synthetic(std::size_t n_per_class, std::uint64_t seed, const std::filesystem::path& out_dir);

std::vector<SyntheticRecord> read_manifest(const std::filesystem::path& path);

}  // namespace mcnn
