#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include <unistd.h>

#include "mcnn/data.hpp"
#include "mcnn/errors.hpp"
#include "mcnn/fs_util.hpp"
#include "mcnn/image_io.hpp"

using namespace mcnn;
namespace fs = std::filesystem;

namespace {

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = fs::temp_directory_path() / ("mcnn_data_test_" + tag + "_" + std::to_string(::getpid()));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

DatasetIndex fake_index(std::size_t parasitized, std::size_t uninfected) {
  DatasetIndex index;
  for (std::size_t i = 0; i < parasitized + uninfected; ++i) {
    index.entries.push_back({"img" + std::to_string(i), i < parasitized ? kParasitized : kUninfected, Split::kTrain});
  }
  return index;
}

void write_solid(const fs::path& path, std::size_t w, std::size_t h, std::uint8_t value) {
  write_png(path, RgbImage(w, h, value));
}

}  // namespace

TEST(IndexDataset, TwoPerClass) {
  TempDir dir("index");
  fs::create_directories(dir.path() / "Parasitized");
  fs::create_directories(dir.path() / "uninfected");
  for (int i = 0; i < 2; ++i) {
    write_solid(dir.path() / "Parasitized" / ("p" + std::to_string(i) + ".png"), 4, 4, 10);
    write_solid(dir.path() / "uninfected" / ("u" + std::to_string(i) + ".png"), 4, 4, 10);
  }
  write_text_file(dir.path() / "uninfected" / "Thumbs.db", "x");
  const DatasetIndex index = index_dataset(dir.path());
  EXPECT_EQ(index.entries.size(), 4u);
  EXPECT_EQ(index.count_label(kParasitized), 2u);
  EXPECT_EQ(index.count_label(kUninfected), 2u);
  EXPECT_TRUE(std::is_sorted(index.entries.begin(), index.entries.end(),
                             [](const DatasetEntry& a, const DatasetEntry& b) { return a.path < b.path; }));
}

TEST(IndexDataset, StructuralErrors) {
  TempDir dir("structural");
  fs::create_directories(dir.path() / "parasitized");
  write_solid(dir.path() / "parasitized" / "a.png", 2, 2, 0);
  EXPECT_THROW(index_dataset(dir.path()), DataError);
  fs::create_directories(dir.path() / "uninfected");
  EXPECT_NO_THROW(index_dataset(dir.path()));
  TempDir empty("empty");
  fs::create_directories(empty.path() / "parasitized");
  fs::create_directories(empty.path() / "uninfected");
  EXPECT_THROW(index_dataset(empty.path()), DataError);
  EXPECT_THROW(index_dataset(empty.path() / "missing"), DataError);
}

TEST(StratifiedSplit, PaperTotals) {
  const DatasetIndex split = stratified_split(fake_index(13779, 13779), {}, 42);
  EXPECT_EQ(split.count(Split::kTrain), 22596u);
  EXPECT_EQ(split.count(Split::kVal), 2481u);
  EXPECT_EQ(split.count(Split::kTest), 2481u);
}

TEST(StratifiedSplit, PerClassWithinOne) {
  for (auto [p, u] : {std::pair{50, 50}, std::pair{13779, 13779}, std::pair{37, 81}, std::pair{5, 5}}) {
    const DatasetIndex split = stratified_split(fake_index(p, u), {}, 3);
    const double total = p + u;
    for (Split s : {Split::kTrain, Split::kVal, Split::kTest}) {
      const double size = static_cast<double>(split.count(s));
      EXPECT_LE(std::abs(static_cast<double>(split.count(s, kParasitized)) - size * p / total), 1.0);
      EXPECT_LE(std::abs(static_cast<double>(split.count(s, kUninfected)) - size * u / total), 1.0);
    }
  }
}

TEST(StratifiedSplit, DeterministicAndSeedDependent) {
  const DatasetIndex a = stratified_split(fake_index(60, 40), {}, 9);
  const DatasetIndex b = stratified_split(fake_index(60, 40), {}, 9);
  const DatasetIndex c = stratified_split(fake_index(60, 40), {}, 10);
  EXPECT_EQ(a.entries, b.entries);
  EXPECT_NE(a.entries, c.entries);
  EXPECT_EQ(a.entries.size(), 100u);
}

TEST(StratifiedSplit, Errors) {
  EXPECT_THROW(stratified_split(fake_index(5, 5), {0.5, 0.2, 0.2}, 1), InvalidArgument);
  EXPECT_THROW(stratified_split(fake_index(1, 1), {}, 1), InvalidArgument);
}

TEST(Preprocess, ScaleAndResize) {
  TempDir dir("pre");
  RgbImage img(100, 100, 0);
  img.at(7, 3)[1] = 255;
  write_png(dir.path() / "a.png", img);
  const Tensor t = load_and_preprocess(dir.path() / "a.png");
  EXPECT_EQ(t.shape(), (Shape{100, 100, 3}));
  EXPECT_DOUBLE_EQ(t[(3 * 100 + 7) * 3 + 1], 1.0);

  write_solid(dir.path() / "gray.png", 173, 61, 128);
  const Tensor gray = load_and_preprocess(dir.path() / "gray.png");
  for (double v : gray.values()) EXPECT_DOUBLE_EQ(v, 128.0 / 255.0);

  RgbImage board(200, 200);
  for (std::size_t y = 0; y < 200; ++y)
    for (std::size_t x = 0; x < 200; ++x) std::fill_n(board.at(x, y), 3, ((x + y) % 2) ? 255 : 0);
  write_png(dir.path() / "board.png", board);
  const Tensor resized = load_and_preprocess(dir.path() / "board.png");
  for (double v : resized.values()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
  write_text_file(dir.path() / "bad.png", "not an image");
  EXPECT_THROW(load_and_preprocess(dir.path() / "bad.png"), DataError);
}

TEST(Batching, SizesAndCoverage) {
  DatasetIndex index = fake_index(50, 50);
  const auto order = batch_order(index, Split::kTrain, 32, 1, 0);
  std::vector<std::size_t> sizes;
  std::multiset<std::size_t> seen;
  for (const auto& b : order) {
    sizes.push_back(b.size());
    seen.insert(b.begin(), b.end());
  }
  EXPECT_EQ(sizes, (std::vector<std::size_t>{32, 32, 32, 4}));
  std::multiset<std::size_t> all;
  for (std::size_t i = 0; i < 100; ++i) all.insert(i);
  EXPECT_EQ(seen, all);
}

TEST(Batching, ShuffleDependsOnEpochOnly) {
  DatasetIndex index = fake_index(50, 50);
  const auto e1 = batch_order(index, Split::kTrain, 32, 1, 1);
  const auto e1b = batch_order(index, Split::kTrain, 32, 1, 1);
  const auto e2 = batch_order(index, Split::kTrain, 32, 1, 2);
  EXPECT_EQ(e1, e1b);
  EXPECT_NE(e1, e2);
  index = stratified_split(index, {}, 4);
  const auto t1 = batch_order(index, Split::kTest, 4, 1, 1);
  const auto t2 = batch_order(index, Split::kTest, 4, 9, 7);
  EXPECT_EQ(t1, t2);
  EXPECT_TRUE(std::is_sorted(t1.front().begin(), t1.front().end()));
}

TEST(Batching, EmptySplitRejected) {
  EXPECT_THROW(batch_order(fake_index(3, 3), Split::kVal, 32, 0, 0), InvalidArgument);
  EXPECT_THROW(parse_split("holdout"), InvalidArgument);
}

TEST(Batching, IteratorLoadsImages) {
  TempDir dir("iter");
  const DatasetIndex synth = stratified_split(generate_synthetic(6, 3, dir.path()), {}, 1);
  BatchIterator it(synth, Split::kTrain, 4, 2, 0);
  std::size_t images = 0;
  while (auto batch = it.next()) {
    EXPECT_EQ(batch->images.dim(0), batch->labels.size());
    EXPECT_EQ(batch->images.dim(1), 100u);
    images += batch->labels.size();
  }
  EXPECT_EQ(images, synth.count(Split::kTrain));
}

TEST(IndexCsv, RoundTripWithQuoting) {
  TempDir dir("csv");
  DatasetIndex index = fake_index(2, 2);
  index.entries[0].path = "dir with, comma/\"quoted\".png";
  index.entries[3].split = Split::kTest;
  write_index_csv(dir.path() / "i.csv", index);
  const DatasetIndex back = read_index_csv(dir.path() / "i.csv");
  EXPECT_EQ(back.entries, index.entries);
  EXPECT_EQ(read_text_file(dir.path() / "i.csv").substr(0, 16), "path,label,split");
  write_text_file(dir.path() / "bad.csv", "path,label,split\na.png,7,train\n");
  EXPECT_THROW(read_index_csv(dir.path() / "bad.csv"), DataError);
  EXPECT_THROW(read_index_csv(dir.path() / "none.csv"), DataError);
}

TEST(Synthetic, DeterministicFilesAndManifest) {
  TempDir a("synth_a"), b("synth_b");
  const DatasetIndex ia = generate_synthetic(5, 7, a.path());
  generate_synthetic(5, 7, b.path());
  EXPECT_EQ(ia.entries.size(), 10u);
  for (const auto& entry : fs::recursive_directory_iterator(a.path())) {
    if (!entry.is_regular_file()) continue;
    const fs::path rel = fs::relative(entry.path(), a.path());
    EXPECT_EQ(read_text_file(entry.path()), read_text_file(b.path() / rel)) << rel;
  }
  const auto manifest = read_manifest(a.path() / "manifest.json");
  ASSERT_EQ(manifest.size(), 10u);
  for (const SyntheticRecord& r : manifest) {
    if (r.label == kUninfected) {
      EXPECT_TRUE(r.blobs.empty());
      continue;
    }
    ASSERT_GE(r.blobs.size(), 1u);
    ASSERT_LE(r.blobs.size(), 3u);
    // A blob centre is drawn in purple: blue exceeds green there.
    const RgbImage img = read_image(a.path() / r.file);
    for (const Blob& blob : r.blobs) {
      const std::uint8_t* px = img.at(static_cast<std::size_t>(blob.cx), static_cast<std::size_t>(blob.cy));
      EXPECT_GT(px[2], px[1]);
    }
  }
  EXPECT_THROW(generate_synthetic(0, 1, a.path()), InvalidArgument);
}
