#include "mcnn/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include <json.hpp>

#include "mcnn/errors.hpp"
#include "mcnn/fs_util.hpp"
#include "mcnn/image_io.hpp"
#include "mcnn/random.hpp"

namespace fs = std::filesystem;

namespace mcnn {

namespace {

std::string lower(std::string text) {
  std::transform(text.begin(), text.end(), text.begin(), [](unsigned char c) { return std::tolower(c); });
  return text;
}

bool is_image_file(const fs::path& path) {
  const std::string ext = lower(path.extension().string());
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

std::optional<fs::path> find_class_dir(const fs::path& root, const std::string& name) {
  std::vector<fs::path> matches;
  for (const auto& item : fs::directory_iterator(root)) {
    if (item.is_directory() && lower(item.path().filename().string()) == name) matches.push_back(item.path());
  }
  if (matches.empty()) return std::nullopt;
  std::sort(matches.begin(), matches.end());
  return matches.front();
}

std::string csv_field(const std::string& text) {
  if (text.find_first_of(",\"\n\r") == std::string::npos) return text;
  std::string out = "\"";
  for (char c : text) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

std::vector<std::string> parse_csv_line(const std::string& line) {
  std::vector<std::string> fields(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        fields.back() += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        fields.back() += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.emplace_back();
    } else {
      fields.back() += c;
    }
  }
  return fields;
}

// Shares `total` among classes proportionally to `available`, flooring and
// handing the remainder out by largest fractional part. Ties prefer the
// class with more items left, then the lower label.
std::array<std::size_t, 2> apportion(std::size_t total, const std::array<std::size_t, 2>& class_sizes,
                                     const std::array<std::size_t, 2>& remaining) {
  const double n = static_cast<double>(class_sizes[0] + class_sizes[1]);
  std::array<std::size_t, 2> share{};
  std::array<double, 2> frac{};
  std::size_t assigned = 0;
  for (int c = 0; c < 2; ++c) {
    const double quota = static_cast<double>(total) * static_cast<double>(class_sizes[c]) / n;
    share[c] = std::min(static_cast<std::size_t>(std::floor(quota)), remaining[c]);
    frac[c] = quota - std::floor(quota);
    assigned += share[c];
  }
  while (assigned < total) {
    int best = -1;
    for (int c = 0; c < 2; ++c) {
      if (share[c] >= remaining[c]) continue;
      if (best < 0 || frac[c] > frac[best] ||
          (frac[c] == frac[best] && remaining[c] - share[c] > remaining[best] - share[best])) {
        best = c;
      }
    }
    if (best < 0) break;
    ++share[best];
    frac[best] = -1.0;
    ++assigned;
  }
  return share;
}

struct Rgb {
  double r, g, b;
};

}  // namespace

const char* label_name(int label) {
  switch (label) {
    case kParasitized: return "parasitized";
    case kUninfected: return "uninfected";
    default: throw InvalidArgument("unknown label " + std::to_string(label));
  }
}

const char* split_name(Split split) {
  switch (split) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "unknown";
}

Split parse_split(const std::string& text) {
  if (text == "train") return Split::kTrain;
  if (text == "val") return Split::kVal;
  if (text == "test") return Split::kTest;
  throw InvalidArgument("unknown split '" + text + "' (expected train, val or test)");
}

std::size_t DatasetIndex::count(Split split) const {
  return static_cast<std::size_t>(std::count_if(entries.begin(), entries.end(), [&](const DatasetEntry& e) { return e.split == split; }));
}

std::size_t DatasetIndex::count(Split split, int label) const {
  return static_cast<std::size_t>(std::count_if(entries.begin(), entries.end(), [&](const DatasetEntry& e) {
    return e.split == split && e.label == label;
  }));
}

std::size_t DatasetIndex::count_label(int label) const {
  return static_cast<std::size_t>(std::count_if(entries.begin(), entries.end(), [&](const DatasetEntry& e) { return e.label == label; }));
}

DatasetIndex index_dataset(const fs::path& root) {
  std::error_code ec;
  if (!fs::is_directory(root, ec)) throw DataError("dataset root " + root.string() + " is not a directory");
  DatasetIndex index;
  for (int label : {kParasitized, kUninfected}) {
    const auto dir = find_class_dir(root, label_name(label));
    if (!dir) throw DataError(std::string("dataset root is missing the '") + label_name(label) + "' class directory");
    for (const auto& item : fs::directory_iterator(*dir)) {
      if (item.is_regular_file() && is_image_file(item.path())) {
        index.entries.push_back({item.path().generic_string(), label, Split::kTrain});
      }
    }
  }
  if (index.entries.empty()) throw DataError("dataset at " + root.string() + " contains no images");
  std::sort(index.entries.begin(), index.entries.end(),
            [](const DatasetEntry& a, const DatasetEntry& b) { return a.path < b.path; });
  return index;
}

DatasetIndex stratified_split(DatasetIndex index, const SplitFractions& fractions, std::uint64_t seed) {
  if (fractions.train < 0.0 || fractions.val < 0.0 || fractions.test < 0.0) {
    throw InvalidArgument("split fractions must be non-negative");
  }
  if (std::abs(fractions.train + fractions.val + fractions.test - 1.0) > 1e-9) {
    throw InvalidArgument("split fractions must sum to 1");
  }
  const std::size_t n = index.entries.size();
  auto split_size = [n](double fraction) {
    return static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n) - 1e-9));
  };
  const std::size_t n_val = split_size(fractions.val);
  const std::size_t n_test = split_size(fractions.test);
  if (n_val == 0 || n_test == 0 || n_val + n_test >= n) {
    throw InvalidArgument("dataset of " + std::to_string(n) + " images is too small: some split would be empty");
  }

  std::array<std::vector<std::size_t>, 2> members;
  for (std::size_t i = 0; i < n; ++i) {
    const int label = index.entries[i].label;
    if (label != kParasitized && label != kUninfected) throw InvalidArgument("label out of range in index");
    members[label].push_back(i);
  }
  const std::array<std::size_t, 2> sizes{members[0].size(), members[1].size()};
  std::array<std::size_t, 2> remaining = sizes;
  const auto val_share = apportion(n_val, sizes, remaining);
  for (int c = 0; c < 2; ++c) remaining[c] -= val_share[c];
  const auto test_share = apportion(n_test, sizes, remaining);

  for (int c = 0; c < 2; ++c) {
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(c)));
    rng.shuffle(std::span<std::size_t>(members[c]));
    for (std::size_t k = 0; k < members[c].size(); ++k) {
      Split split = Split::kTrain;
      if (k < val_share[c]) split = Split::kVal;
      else if (k < val_share[c] + test_share[c]) split = Split::kTest;
      index.entries[members[c][k]].split = split;
    }
  }
  index.seed = seed;
  return index;
}

Tensor load_and_preprocess(const fs::path& path) {
  const RgbImage image = read_image(path);
  std::vector<double> values = resize_bilinear(image, kImageSize, kImageSize);
  for (double& v : values) v /= 255.0;
  return Tensor({kImageSize, kImageSize, 3}, std::move(values));
}

std::vector<std::vector<std::size_t>> batch_order(const DatasetIndex& index, Split split, std::size_t batch_size,
                                                  std::uint64_t shuffle_seed, std::uint64_t epoch) {
  if (batch_size == 0) throw InvalidArgument("batch size must be positive");
  std::vector<std::size_t> positions;
  for (std::size_t i = 0; i < index.entries.size(); ++i) {
    if (index.entries[i].split == split) positions.push_back(i);
  }
  if (positions.empty()) throw InvalidArgument(std::string("split '") + split_name(split) + "' is empty");
  if (split == Split::kTrain) {
    Rng rng(mix_seed(shuffle_seed, epoch));
    rng.shuffle(std::span<std::size_t>(positions));
  }
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < positions.size(); start += batch_size) {
    const std::size_t end = std::min(start + batch_size, positions.size());
    batches.emplace_back(positions.begin() + static_cast<long>(start), positions.begin() + static_cast<long>(end));
  }
  return batches;
}

Batch load_batch(const DatasetIndex& index, const std::vector<std::size_t>& positions) {
  if (positions.empty()) throw InvalidArgument("cannot load an empty batch");
  constexpr std::size_t kPixels = kImageSize * kImageSize * 3;
  std::vector<double> values(positions.size() * kPixels);
  Batch batch;
  for (std::size_t b = 0; b < positions.size(); ++b) {
    const DatasetEntry& entry = index.entries.at(positions[b]);
    const Tensor image = load_and_preprocess(entry.path);
    std::copy(image.values().begin(), image.values().end(), values.begin() + static_cast<long>(b * kPixels));
    batch.labels.push_back(entry.label);
  }
  batch.images = Tensor({positions.size(), kImageSize, kImageSize, 3}, std::move(values));
  batch.entries = positions;
  return batch;
}

BatchIterator::BatchIterator(const DatasetIndex& index, Split split, std::size_t batch_size, std::uint64_t shuffle_seed,
                             std::uint64_t epoch)
    : index_(&index), order_(batch_order(index, split, batch_size, shuffle_seed, epoch)) {}

std::optional<Batch> BatchIterator::next() {
  if (cursor_ >= order_.size()) return std::nullopt;
  return load_batch(*index_, order_[cursor_++]);
}

std::string index_to_csv(const DatasetIndex& index) {
  std::ostringstream out;
  out << "path,label,split\n";
  for (const DatasetEntry& e : index.entries) {
    out << csv_field(e.path) << ',' << e.label << ',' << split_name(e.split) << '\n';
  }
  return out.str();
}

void write_index_csv(const fs::path& path, const DatasetIndex& index) { write_text_file(path, index_to_csv(index)); }

DatasetIndex read_index_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open index " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "path,label,split") throw DataError("index " + path.string() + " has no header");
  DatasetIndex index;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto fields = parse_csv_line(line);
    if (fields.size() != 3) throw DataError("index line " + std::to_string(line_no) + " does not have 3 fields");
    DatasetEntry entry;
    entry.path = fields[0];
    if (fields[1] != "0" && fields[1] != "1") throw DataError("index line " + std::to_string(line_no) + ": bad label");
    entry.label = fields[1] == "0" ? kParasitized : kUninfected;
    try {
      entry.split = parse_split(fields[2]);
    } catch (const InvalidArgument&) {
      throw DataError("index line " + std::to_string(line_no) + ": bad split '" + fields[2] + "'");
    }
    index.entries.push_back(std::move(entry));
  }
  if (index.entries.empty()) throw DataError("index " + path.string() + " is empty");
  return index;
}

DatasetIndex generate_synthetic(std::size_t n_per_class, std::uint64_t seed, const fs::path& out_dir) {
  if (n_per_class == 0) throw InvalidArgument("n_per_class must be at least 1");
  std::error_code ec;
  for (int label : {kParasitized, kUninfected}) {
    fs::create_directories(out_dir / label_name(label), ec);
    if (ec) throw IoError("cannot create " + (out_dir / label_name(label)).string() + ": " + ec.message());
  }

  nlohmann::json manifest = nlohmann::json::array();
  DatasetIndex index;
  constexpr std::size_t kSize = kImageSize;
  for (int label : {kParasitized, kUninfected}) {
    for (std::size_t i = 0; i < n_per_class; ++i) {
      Rng rng(mix_seed(seed, 2 * i + static_cast<std::uint64_t>(label)));
      const Rgb background{rng.uniform(15, 35), rng.uniform(10, 25), rng.uniform(18, 38)};
      const Rgb cell{rng.uniform(210, 240), rng.uniform(135, 165), rng.uniform(155, 185)};
      const double cx = 49.5 + rng.uniform(-4, 4);
      const double cy = 49.5 + rng.uniform(-4, 4);
      const double semi_a = rng.uniform(32, 42);
      const double semi_b = rng.uniform(30, 40);
      const double angle = rng.uniform(0, std::numbers::pi);
      const double cos_t = std::cos(angle), sin_t = std::sin(angle);
      // Ellipse-normalised radius of (x, y); < 1 inside the cell.
      auto radius = [&](double x, double y) {
        const double dx = x - cx, dy = y - cy;
        const double u = (dx * cos_t + dy * sin_t) / semi_a;
        const double v = (-dx * sin_t + dy * cos_t) / semi_b;
        return std::sqrt(u * u + v * v);
      };

      SyntheticRecord record;
      record.label = label;
      std::vector<Rgb> blob_colors;
      if (label == kParasitized) {
        const std::size_t count = 1 + rng.below(3);
        for (std::size_t k = 0; k < count; ++k) {
          const double rho = 0.55 * std::sqrt(rng.uniform());
          const double phi = rng.uniform(0, 2 * std::numbers::pi);
          const double u = rho * std::cos(phi) * semi_a, v = rho * std::sin(phi) * semi_b;
          Blob blob;
          blob.cx = cx + u * cos_t - v * sin_t;
          blob.cy = cy + u * sin_t + v * cos_t;
          blob.r = rng.uniform(4, 7);
          record.blobs.push_back(blob);
          blob_colors.push_back({rng.uniform(85, 115), rng.uniform(25, 50), rng.uniform(125, 155)});
        }
      }

      RgbImage image(kSize, kSize);
      for (std::size_t y = 0; y < kSize; ++y) {
        for (std::size_t x = 0; x < kSize; ++x) {
          const double px = static_cast<double>(x) + 0.5, py = static_cast<double>(y) + 0.5;
          const double rho = radius(px, py);
          Rgb color = background;
          if (rho < 1.0) {
            // Slightly darker rim, like a biconcave red cell.
            const double shade = 1.0 - 0.12 * rho * rho;
            color = {cell.r * shade, cell.g * shade, cell.b * shade};
          }
          for (std::size_t k = 0; k < record.blobs.size(); ++k) {
            const Blob& blob = record.blobs[k];
            if (std::hypot(px - blob.cx, py - blob.cy) <= blob.r) color = blob_colors[k];
          }
          std::uint8_t* dst = image.at(x, y);
          const double channels[3] = {color.r, color.g, color.b};
          for (int c = 0; c < 3; ++c) {
            dst[c] = static_cast<std::uint8_t>(std::lround(std::clamp(channels[c] + rng.uniform(-10, 10), 0.0, 255.0)));
          }
        }
      }

      char name[32];
      std::snprintf(name, sizeof(name), "%c_%05zu.png", label == kParasitized ? 'p' : 'u', i);
      record.file = std::string(label_name(label)) + "/" + name;
      write_png(out_dir / record.file, image);
      index.entries.push_back({(out_dir / record.file).generic_string(), label, Split::kTrain});

      nlohmann::json blobs = nlohmann::json::array();
      for (const Blob& blob : record.blobs) blobs.push_back({{"cx", blob.cx}, {"cy", blob.cy}, {"r", blob.r}});
      manifest.push_back({{"file", record.file}, {"label", label}, {"blobs", blobs}});
    }
  }
  write_text_file(out_dir / "manifest.json", manifest.dump(2) + "\n");
  std::sort(index.entries.begin(), index.entries.end(),
            [](const DatasetEntry& a, const DatasetEntry& b) { return a.path < b.path; });
  index.seed = seed;
  return index;
}

std::vector<SyntheticRecord> read_manifest(const fs::path& path) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(read_text_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw DataError("manifest " + path.string() + " is not valid JSON: " + e.what());
  }
  std::vector<SyntheticRecord> records;
  for (const auto& item : doc) {
    SyntheticRecord record;
    record.file = item.at("file").get<std::string>();
    record.label = item.at("label").get<int>();
    for (const auto& b : item.at("blobs")) {
      record.blobs.push_back({b.at("cx").get<double>(), b.at("cy").get<double>(), b.at("r").get<double>()});
    }
    records.push_back(std::move(record));
  }
  return records;
}

}  // namespace mcnn
