#include "mcnn/weights.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>

#include "mcnn/errors.hpp"
#include "mcnn/fs_util.hpp"

namespace mcnn {

namespace {

constexpr char kMagic[] = {'M', 'C', 'N', 'N', '1'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t crc_of(std::span<const std::uint8_t> bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  return static_cast<std::uint32_t>(crc32(crc, bytes.data(), static_cast<uInt>(bytes.size())));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::span<const std::uint8_t> take(std::size_t n, const char* what) {
    need(n, what);
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t position() const { return pos_; }

 private:
  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) throw CorruptFileError(std::string("weight file truncated while reading ") + what);
  }
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> serialize_weights(const ModelGraph& model) {
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  put_u32(out, static_cast<std::uint32_t>(model.parameters().size()));
  for (const Parameter& p : model.parameters()) {
    put_u32(out, static_cast<std::uint32_t>(p.name.size()));
    out.insert(out.end(), p.name.begin(), p.name.end());
    put_u32(out, static_cast<std::uint32_t>(p.value.rank()));
    for (std::size_t d : p.value.shape()) put_u32(out, static_cast<std::uint32_t>(d));
    for (double v : p.value.values()) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  }
  put_u32(out, crc_of(out));
  return out;
}

std::vector<WeightRecord> parse_weights(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < sizeof(kMagic) + 8) throw CorruptFileError("weight file too short");
  if (std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) throw CorruptFileError("not a weight file (bad magic)");
  const auto body = bytes.first(bytes.size() - 4);
  Reader tail(bytes.last(4));
  const std::uint32_t stored = tail.u32("checksum");
  if (stored != crc_of(body)) throw CorruptFileError("weight file checksum mismatch");

  Reader in(body);
  in.take(sizeof(kMagic), "magic");
  const std::uint32_t count = in.u32("tensor count");
  std::vector<WeightRecord> records;
  for (std::uint32_t t = 0; t < count; ++t) {
    WeightRecord r;
    const std::uint32_t name_len = in.u32("name length");
    auto name = in.take(name_len, "name");
    r.name.assign(name.begin(), name.end());
    const std::uint32_t rank = in.u32("rank");
    if (rank > 8) throw CorruptFileError("implausible rank for tensor '" + r.name + "'");
    std::size_t numel = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      r.shape.push_back(in.u32("extent"));
      numel *= r.shape.back();
    }
    if (numel > body.size() / 4) throw CorruptFileError("weight file truncated in tensor '" + r.name + "'");
    r.values.resize(numel);
    for (float& v : r.values) v = std::bit_cast<float>(in.u32("values"));
    records.push_back(std::move(r));
  }
  if (in.position() != body.size()) throw CorruptFileError("weight file has trailing bytes");
  return records;
}

void save_weights(const ModelGraph& model, const std::filesystem::path& path) {
  const std::vector<std::uint8_t> bytes = serialize_weights(model);
  write_atomically(path, [&](const std::filesystem::path& tmp) {
    std::ofstream out(tmp, std::ios::binary);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("cannot write " + tmp.string());
  });
}

void load_weights(ModelGraph& model, std::span<const std::uint8_t> bytes) {
  const std::vector<WeightRecord> records = parse_weights(bytes);
  std::map<std::string, const WeightRecord*> by_name;
  for (const WeightRecord& r : records) {
    if (!by_name.emplace(r.name, &r).second) throw CorruptFileError("duplicate tensor '" + r.name + "'");
    if (!model.has_parameter(r.name)) throw IncompatibleFileError("unknown tensor '" + r.name + "' in weight file");
    const Tensor& target = model.parameter(r.name);
    if (target.shape() != r.shape) {
      throw IncompatibleFileError("tensor '" + r.name + "' has extents " + shape_to_string(r.shape) +
                                  " but the model expects " + shape_to_string(target.shape()));
    }
  }
  for (const Parameter& p : model.parameters()) {
    if (!by_name.contains(p.name)) throw IncompatibleFileError("weight file lacks tensor '" + p.name + "'");
  }
  for (const WeightRecord& r : records) {
    auto dst = model.parameter(r.name).mutable_values();
    std::copy(r.values.begin(), r.values.end(), dst.begin());
  }
}

void load_weights(ModelGraph& model, const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open weight file " + path.string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  load_weights(model, bytes);
}

}  // namespace mcnn
