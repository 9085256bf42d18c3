#pragma once

// Checkpoint file layout (all integers little-endian):
//
//   "PSAE"                       magic
//   u32                          format version (1)
//   u32                          number of tagged fields
//   per field: u32 name length, UTF-8 name, u8 type (0 = i64, 1 = f64), 8-byte value
//   per tensor, until the trailer:
//     u32 name length, UTF-8 name, u32 rank, rank x u32 dims, row-major f32 values
//   u32                          CRC-32 (IEEE) of every preceding byte
//
// Model config fields use their plain names ("hidden_dim"); training
// metadata is stored under "meta." and per-epoch history under "history.N.".

#include <zlib.h>

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "psae/error.hpp"
#include "psae/model.hpp"

namespace psae {

inline constexpr std::uint32_t kCheckpointVersion = 1;

inline std::uint32_t crc32_of(std::span<const std::uint8_t> bytes) {
  return static_cast<std::uint32_t>(::crc32(0L, bytes.data(), static_cast<uInt>(bytes.size())));
}

namespace detail {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

class LeWriter {
 public:
  void u8(std::uint8_t v) { out.push_back(v); }
  void u32(std::uint32_t v) { raw(&v, 4); }
  void i64(std::int64_t v) { raw(&v, 8); }
  void f64(double v) { raw(&v, 8); }
  void f32(float v) { raw(&v, 4); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    raw(s.data(), s.size());
  }
  std::vector<std::uint8_t> out;

 private:
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out.insert(out.end(), b, b + n);
  }
};

class LeReader {
 public:
  explicit LeReader(std::span<const std::uint8_t> b) : bytes_(b) {}
  std::size_t remaining() const { return bytes_.size() - pos_; }
  std::uint8_t u8() {
    std::uint8_t v;
    raw(&v, 1);
    return v;
  }
  std::uint32_t u32() {
    std::uint32_t v;
    raw(&v, 4);
    return v;
  }
  std::int64_t i64() {
    std::int64_t v;
    raw(&v, 8);
    return v;
  }
  double f64() {
    double v;
    raw(&v, 8);
    return v;
  }
  std::string str() {
    const std::uint32_t n = u32();
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  void floats(float* dst, std::size_t n) { raw(dst, n * 4); }

 private:
  void need(std::size_t n) const {
    if (n > remaining()) throw Error(ErrorCode::BadCheckpoint, "checkpoint truncated");
  }
  void raw(void* dst, std::size_t n) {
    need(n);
    std::memcpy(dst, bytes_.data() + pos_, n);
    pos_ += n;
  }
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

using FieldValue = std::variant<std::int64_t, double>;

inline std::vector<std::pair<std::string, FieldValue>> checkpoint_fields(const Checkpoint& c) {
  const auto& m = c.config;
  const auto& h = c.hyper;
  std::vector<std::pair<std::string, FieldValue>> f{
      {"vocab_size", std::int64_t(m.vocab_size)},
      {"embed_dim", std::int64_t(m.embed_dim)},
      {"hidden_dim", std::int64_t(m.hidden_dim)},
      {"num_layers", std::int64_t(m.num_layers)},
      {"num_heads", std::int64_t(m.num_heads)},
      {"ffn_dim", std::int64_t(m.ffn_dim)},
      {"max_position", std::int64_t(m.max_position)},
      {"output_classes", std::int64_t(m.output_classes)},
      {"meta.batch_size", std::int64_t(h.batch_size)},
      {"meta.learning_rate", h.learning_rate},
      {"meta.epochs", std::int64_t(h.epochs)},
      {"meta.seed", static_cast<std::int64_t>(h.seed)},
      {"meta.flood_b", h.flood_b},
      {"meta.mask_rate", h.mask_rate},
      {"meta.weight_decay", h.weight_decay},
      {"meta.masking", std::int64_t(h.masking == MaskingStrategy::BertMixed ? 1 : 0)},
      {"meta.steps", static_cast<std::int64_t>(c.steps)},
  };
  for (std::size_t i = 0; i < c.history.size(); ++i) {
    const auto& e = c.history[i];
    const std::string p = "history." + std::to_string(i) + ".";
    f.emplace_back(p + "epoch", std::int64_t(e.epoch));
    f.emplace_back(p + "raw_loss", e.raw_loss);
    f.emplace_back(p + "flooded_loss", e.flooded_loss);
    f.emplace_back(p + "masked_accuracy", e.masked_accuracy);
    f.emplace_back(p + "steps", static_cast<std::int64_t>(e.steps));
  }
  return f;
}

}  // namespace detail

inline std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& c) {
  detail::LeWriter w;
  for (char ch : std::string("PSAE")) w.u8(static_cast<std::uint8_t>(ch));
  w.u32(kCheckpointVersion);
  const auto fields = detail::checkpoint_fields(c);
  w.u32(static_cast<std::uint32_t>(fields.size()));
  for (const auto& [name, value] : fields) {
    w.str(name);
    if (const auto* i = std::get_if<std::int64_t>(&value)) {
      w.u8(0);
      w.i64(*i);
    } else {
      w.u8(1);
      w.f64(std::get<double>(value));
    }
  }
  for (const auto& slot : c.params.slots()) {
    const auto& t = slot.param.value();
    w.str(slot.name);
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape) w.u32(static_cast<std::uint32_t>(d));
    for (float v : t.data) w.f32(v);
  }
  const std::uint32_t crc = crc32_of(w.out);
  w.u32(crc);
  return std::move(w.out);
}

inline Checkpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), "PSAE", 4) != 0) {
    throw Error(ErrorCode::BadCheckpoint, "missing PSAE magic");
  }
  const auto body = bytes.first(bytes.size() - 4);
  std::uint32_t stored;
  std::memcpy(&stored, bytes.data() + body.size(), 4);
  const std::uint32_t actual = crc32_of(body);
  if (stored != actual) {
    throw Error(ErrorCode::ChecksumMismatch, "stored CRC " + std::to_string(stored) + " != computed " +
                                                 std::to_string(actual));
  }

  detail::LeReader r(body.subspan(4));
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw Error(ErrorCode::BadCheckpoint, "unsupported checkpoint version " + std::to_string(version));
  }
  std::map<std::string, detail::FieldValue> fields;
  const std::uint32_t nfields = r.u32();
  for (std::uint32_t i = 0; i < nfields; ++i) {
    std::string name = r.str();
    const std::uint8_t type = r.u8();
    if (type == 0) {
      fields[name] = r.i64();
    } else if (type == 1) {
      fields[name] = r.f64();
    } else {
      throw Error(ErrorCode::BadCheckpoint, "field '" + name + "' has unknown type " + std::to_string(type));
    }
  }
  auto get_i = [&](const std::string& k) -> std::int64_t {
    auto it = fields.find(k);
    if (it == fields.end() || !std::holds_alternative<std::int64_t>(it->second)) {
      throw Error(ErrorCode::BadCheckpoint, "missing integer field '" + k + "'");
    }
    return std::get<std::int64_t>(it->second);
  };
  auto get_f = [&](const std::string& k) -> double {
    auto it = fields.find(k);
    if (it == fields.end() || !std::holds_alternative<double>(it->second)) {
      throw Error(ErrorCode::BadCheckpoint, "missing real field '" + k + "'");
    }
    return std::get<double>(it->second);
  };

  Checkpoint c;
  auto& m = c.config;
  m.vocab_size = static_cast<int>(get_i("vocab_size"));
  m.embed_dim = static_cast<int>(get_i("embed_dim"));
  m.hidden_dim = static_cast<int>(get_i("hidden_dim"));
  m.num_layers = static_cast<int>(get_i("num_layers"));
  m.num_heads = static_cast<int>(get_i("num_heads"));
  m.ffn_dim = static_cast<int>(get_i("ffn_dim"));
  m.max_position = static_cast<int>(get_i("max_position"));
  m.output_classes = static_cast<int>(get_i("output_classes"));
  try {
    m.validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::BadCheckpoint, e.what());
  }
  auto& h = c.hyper;
  h.batch_size = static_cast<int>(get_i("meta.batch_size"));
  h.learning_rate = get_f("meta.learning_rate");
  h.epochs = static_cast<int>(get_i("meta.epochs"));
  h.seed = static_cast<std::uint64_t>(get_i("meta.seed"));
  h.flood_b = get_f("meta.flood_b");
  h.mask_rate = get_f("meta.mask_rate");
  h.weight_decay = get_f("meta.weight_decay");
  h.masking = get_i("meta.masking") == 1 ? MaskingStrategy::BertMixed : MaskingStrategy::Replace;
  c.steps = static_cast<std::uint64_t>(get_i("meta.steps"));
  for (std::size_t i = 0; fields.count("history." + std::to_string(i) + ".epoch"); ++i) {
    const std::string p = "history." + std::to_string(i) + ".";
    EpochMetrics e;
    e.epoch = static_cast<int>(get_i(p + "epoch"));
    e.raw_loss = get_f(p + "raw_loss");
    e.flooded_loss = get_f(p + "flooded_loss");
    e.masked_accuracy = get_f(p + "masked_accuracy");
    e.steps = static_cast<std::size_t>(get_i(p + "steps"));
    c.history.push_back(e);
  }

  c.params = init_model<float>(m, 0);
  std::map<std::string, nn::Var<float>> by_name;
  for (const auto& slot : c.params.slots()) by_name[slot.name] = slot.param;
  std::map<std::string, bool> loaded;
  while (r.remaining() > 0) {
    const std::string name = r.str();
    auto it = by_name.find(name);
    if (it == by_name.end()) throw Error(ErrorCode::BadCheckpoint, "unexpected tensor '" + name + "'");
    const std::uint32_t rank = r.u32();
    if (rank > 8) throw Error(ErrorCode::BadCheckpoint, "tensor '" + name + "' has rank " + std::to_string(rank));
    nn::Shape shape(rank);
    for (auto& d : shape) d = r.u32();
    auto& t = it->second.mutable_value();
    if (shape != t.shape) {
      throw Error(ErrorCode::BadCheckpoint,
                  "tensor '" + name + "' is " + nn::shape_str(shape) + ", config expects " + nn::shape_str(t.shape));
    }
    r.floats(t.data.data(), t.size());
    loaded[name] = true;
  }
  if (loaded.size() != by_name.size()) {
    throw Error(ErrorCode::BadCheckpoint, "checkpoint holds " + std::to_string(loaded.size()) + " of " +
                                              std::to_string(by_name.size()) + " tensors");
  }
  return c;
}

/// Writes to a temporary sibling and renames into place.
inline void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::IoError, "cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorCode::IoError, "short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline void write_file_atomic(const std::filesystem::path& path, const std::string& text) {
  write_file_atomic(path, std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

inline void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path) {
  write_file_atomic(path, serialize_checkpoint(c));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  return deserialize_checkpoint(bytes);
}

}  // namespace psae
