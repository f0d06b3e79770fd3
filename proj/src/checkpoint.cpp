#include "gcml/checkpoint.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <map>

namespace gcml {

namespace {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

void put_u8(std::vector<std::uint8_t>& out, std::uint8_t v) { out.push_back(v); }

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xFF));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
}

class Reader {
 public:
  Reader(const std::vector<std::uint8_t>& bytes, std::size_t end) : bytes_(bytes), end_(end) {}

  bool done() const { return pos_ == end_; }
  void need(std::size_t n) const {
    if (end_ - pos_ < n) throw CheckpointError("checkpoint: truncated entry");
  }
  std::uint8_t u8() {
    need(1);
    return bytes_[pos_++];
  }
  std::uint16_t u16() {
    need(2);
    const auto v = static_cast<std::uint16_t>(bytes_[pos_] | (bytes_[pos_ + 1] << 8));
    pos_ += 2;
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  void skip(std::size_t n) {
    need(n);
    pos_ += n;
  }

 private:
  const std::vector<std::uint8_t>& bytes_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

std::uint32_t f32_bits(float f) { return std::bit_cast<std::uint32_t>(f); }
float bits_f32(std::uint32_t u) { return std::bit_cast<float>(u); }

}  // namespace

std::uint32_t crc32_ieee(const std::uint8_t* data, std::size_t size) {
  uLong crc = crc32(0L, Z_NULL, 0);
  while (size > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(size, 1u << 30));
    crc = crc32(crc, data, chunk);
    data += chunk;
    size -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

std::vector<std::uint8_t> encode_checkpoint(const std::vector<CheckpointEntry>& entries) {
  std::vector<std::uint8_t> out(std::begin(kCheckpointMagic), std::end(kCheckpointMagic));
  put_u32(out, kCheckpointVersion);
  for (const auto& e : entries) {
    if (e.name.size() > 0xFFFF) throw CheckpointError("checkpoint: tensor name too long");
    if (e.dims.size() > 0xFF) throw CheckpointError("checkpoint: too many dims");
    std::size_t count = 1;
    for (auto d : e.dims) count *= d;
    if (count != e.values.size()) throw CheckpointError("checkpoint: dims do not match values for " + e.name);
    put_u16(out, static_cast<std::uint16_t>(e.name.size()));
    out.insert(out.end(), e.name.begin(), e.name.end());
    put_u8(out, 0);
    put_u8(out, static_cast<std::uint8_t>(e.dims.size()));
    for (auto d : e.dims) put_u32(out, d);
    for (float v : e.values) put_u32(out, f32_bits(v));
  }
  put_u32(out, crc32_ieee(out.data(), out.size()));
  return out;
}

std::vector<CheckpointEntry> decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < sizeof(kCheckpointMagic) + 8) throw CheckpointError("checkpoint: file too short");
  const std::size_t body = bytes.size() - 4;
  std::uint32_t stored = 0;
  for (int i = 0; i < 4; ++i) stored |= static_cast<std::uint32_t>(bytes[body + i]) << (8 * i);
  if (crc32_ieee(bytes.data(), body) != stored) throw CheckpointError("checkpoint: CRC mismatch");
  if (std::memcmp(bytes.data(), kCheckpointMagic, sizeof(kCheckpointMagic)) != 0)
    throw CheckpointError("checkpoint: bad magic");

  Reader r(bytes, body);
  r.skip(sizeof(kCheckpointMagic));
  const auto version = r.u32();
  if (version != kCheckpointVersion)
    throw CheckpointError("checkpoint: unsupported version " + std::to_string(version));
  std::vector<CheckpointEntry> entries;
  while (!r.done()) {
    CheckpointEntry e;
    e.name = r.str(r.u16());
    const auto dtype = r.u8();
    if (dtype != 0) throw CheckpointError("checkpoint: unsupported dtype code " + std::to_string(dtype));
    const auto ndim = r.u8();
    std::size_t count = 1;
    for (int i = 0; i < ndim; ++i) {
      e.dims.push_back(r.u32());
      count *= e.dims.back();
    }
    r.need(count * 4);
    e.values.resize(count);
    for (auto& v : e.values) v = bits_f32(r.u32());
    entries.push_back(std::move(e));
  }
  return entries;
}

namespace {

CheckpointEntry to_entry(const std::string& name, const Tensor<float>& t) {
  CheckpointEntry e;
  e.name = name;
  for (auto d : t.shape()) e.dims.push_back(static_cast<std::uint32_t>(d));
  e.values = t.values();
  return e;
}

}  // namespace

std::vector<CheckpointEntry> model_entries(Model<float>& model) {
  std::vector<CheckpointEntry> out;
  for (auto& p : model.named_parameters()) out.push_back(to_entry(p.name, p.tensor));
  for (auto& b : model.named_buffers()) out.push_back(to_entry(b.name, b.tensor));
  return out;
}

void apply_entries(Model<float>& model, const std::vector<CheckpointEntry>& entries) {
  std::map<std::string, const CheckpointEntry*> by_name;
  for (const auto& e : entries)
    if (!by_name.emplace(e.name, &e).second)
      throw CheckpointError("checkpoint: duplicate tensor '" + e.name + "'");

  auto lookup = [&](const std::string& name, const Shape& shape) -> const CheckpointEntry& {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw CheckpointError("checkpoint: missing tensor '" + name + "'");
    const auto& e = *it->second;
    Shape got(e.dims.begin(), e.dims.end());
    if (got != shape) {
      throw CheckpointError("checkpoint: tensor '" + name + "' has shape " + shape_to_string(got) +
                            ", model expects " + shape_to_string(shape));
    }
    by_name.erase(it);
    return e;
  };

  auto params = model.named_parameters();
  auto buffers = model.named_buffers();
  // Validate everything before touching the model.
  std::vector<std::pair<Tensor<float>*, const CheckpointEntry*>> assign;
  for (auto& p : params) assign.emplace_back(&p.tensor, &lookup(p.name, p.tensor.shape()));
  std::vector<std::pair<std::string, const CheckpointEntry*>> buffer_assign;
  for (auto& b : buffers) buffer_assign.emplace_back(b.name, &lookup(b.name, b.tensor.shape()));
  if (!by_name.empty())
    throw CheckpointError("checkpoint: unexpected tensor '" + by_name.begin()->first + "'");

  for (auto& [t, e] : assign) std::copy(e->values.begin(), e->values.end(), t->data().begin());
  for (auto& [name, e] : buffer_assign) model.set_buffer(name, e->values);
}

void save_checkpoint(Model<float>& model, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(model_entries(model));
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("checkpoint: cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("checkpoint: write to '" + path.string() + "' failed");
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open '" + path.string() + "'");
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

Model<float> load_checkpoint(const std::filesystem::path& path, const ModelConfig& config) {
  const auto entries = decode_checkpoint(read_file_bytes(path));
  Model<float> model(config);
  apply_entries(model, entries);
  model.set_mode(Mode::eval);
  return model;
}

}  // namespace gcml
