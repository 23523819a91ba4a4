#pragma once

#include <zlib.h>

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "drsfi/errors.hpp"
#include "drsfi/model.hpp"

namespace drsfi {

// Layout (little-endian):
//   "DRSCKPT1" | version u16 | count u32 |
//   per parameter: name_len u16, name, tag u8, rank u8, dims u32 x rank, words u32 x size |
//   crc32 u32 over everything between the magic and the crc.
inline constexpr char kCheckpointMagic[8] = {'D', 'R', 'S', 'C', 'K', 'P', 'T', '1'};
inline constexpr std::uint16_t kCheckpointVersion = 1;

namespace detail {

class ByteWriter {
 public:
  void u8(std::uint8_t v) { bytes_.push_back(v); }
  void u16(std::uint16_t v) { put(v, 2); }
  void u32(std::uint32_t v) { put(v, 4); }
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    bytes_.insert(bytes_.end(), b, b + n);
  }
  std::vector<std::uint8_t>& bytes() { return bytes_; }

 private:
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  std::vector<std::uint8_t> bytes_;
};

class ByteReader {
 public:
  ByteReader(const std::uint8_t* data, std::size_t size, std::size_t base)
      : data_(data), size_(size), base_(base) {}

  std::uint8_t u8() { return static_cast<std::uint8_t>(get(1)); }
  std::uint16_t u16() { return static_cast<std::uint16_t>(get(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(data_ + pos_), n);
    pos_ += n;
    return s;
  }
  std::size_t offset() const { return base_ + pos_; }
  std::size_t remaining() const { return size_ - pos_; }

 private:
  void need(std::size_t n) const {
    if (size_ - pos_ < n)
      throw LoadError("checkpoint truncated at offset " + std::to_string(offset()) + ": needed " +
                      std::to_string(n) + " more bytes");
  }
  std::uint64_t get(int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= std::uint64_t{data_[pos_ + i]} << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  const std::uint8_t* data_;
  std::size_t size_;
  std::size_t base_;
  std::size_t pos_ = 0;
};

inline std::uint32_t crc32_of(const std::uint8_t* p, std::size_t n) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  while (n > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
    crc = ::crc32(crc, p, chunk);
    p += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

}  // namespace detail

inline std::vector<std::uint8_t> serialize_checkpoint(const ModelGraph& model) {
  detail::ByteWriter w;
  w.raw(kCheckpointMagic, sizeof(kCheckpointMagic));
  w.u16(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(model.parameter_tensor_count()));
  for (const auto& p : model.parameters()) {
    w.u16(static_cast<std::uint16_t>(p.name.size()));
    w.raw(p.name.data(), p.name.size());
    w.u8(static_cast<std::uint8_t>(p.component));
    w.u8(static_cast<std::uint8_t>(p.value.rank()));
    for (const auto d : p.value.shape()) w.u32(static_cast<std::uint32_t>(d));
    for (std::size_t i = 0; i < p.value.size(); ++i) w.u32(p.value.word(i));
  }
  auto& bytes = w.bytes();
  const auto crc = detail::crc32_of(bytes.data() + sizeof(kCheckpointMagic),
                                    bytes.size() - sizeof(kCheckpointMagic));
  w.u32(crc);
  return std::move(bytes);
}

inline ModelGraph deserialize_checkpoint(const std::vector<std::uint8_t>& bytes) {
  constexpr std::size_t magic = sizeof(kCheckpointMagic);
  if (bytes.size() < magic || std::memcmp(bytes.data(), kCheckpointMagic, magic) != 0)
    throw LoadError("checkpoint: bad magic at offset 0");
  if (bytes.size() < magic + 4) throw LoadError("checkpoint truncated at offset " + std::to_string(bytes.size()));
  const std::size_t crc_at = bytes.size() - 4;
  detail::ByteReader tail(bytes.data() + crc_at, 4, crc_at);
  const std::uint32_t stored = tail.u32();
  const std::uint32_t actual = detail::crc32_of(bytes.data() + magic, crc_at - magic);

  detail::ByteReader r(bytes.data() + magic, crc_at - magic, magic);
  const auto version = r.u16();
  if (version != kCheckpointVersion)
    throw LoadError("checkpoint: unsupported version " + std::to_string(version) + " at offset " +
                    std::to_string(magic));
  const auto count = r.u32();
  std::vector<Parameter> params;
  params.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::size_t at = r.offset();
    Parameter p;
    p.name = r.str(r.u16());
    const auto tag = r.u8();
    if (tag > 1) throw LoadError("checkpoint: bad component tag " + std::to_string(tag) + " at offset " + std::to_string(at));
    p.component = static_cast<Component>(tag);
    const auto rank = r.u8();
    if (rank < 1 || rank > 2) throw LoadError("checkpoint: bad rank " + std::to_string(rank) + " at offset " + std::to_string(at));
    std::vector<std::size_t> shape(rank);
    std::size_t n = 1;
    for (auto& d : shape) {
      d = r.u32();
      n *= d;
    }
    if (n > r.remaining() / 4)
      throw LoadError("checkpoint truncated at offset " + std::to_string(r.offset()) + ": parameter '" +
                      p.name + "' needs " + std::to_string(n * 4) + " bytes");
    std::vector<float> data(n);
    for (auto& v : data) v = from_word(r.u32());
    p.value = Tensor(std::move(shape), std::move(data));
    params.push_back(std::move(p));
  }
  if (r.remaining() != 0)
    throw LoadError("checkpoint: " + std::to_string(r.remaining()) + " unexpected bytes at offset " +
                    std::to_string(r.offset()));
  if (stored != actual)
    throw LoadError("checkpoint: CRC mismatch at offset " + std::to_string(crc_at));
  return ModelGraph::from_parameters(std::move(params));
}

inline void save_checkpoint(const ModelGraph& model, const std::filesystem::path& path) {
  const auto bytes = serialize_checkpoint(model);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open '" + path.string() + "' for writing");
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw Error("write to '" + path.string() + "' failed");
}

inline ModelGraph load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw LoadError("cannot open checkpoint '" + path.string() + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

}  // namespace drsfi
