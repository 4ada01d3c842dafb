#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "srl/core/array.hpp"
#include "srl/core/error.hpp"

namespace srl {

// Single-file array container. Layout (all integers little-endian):
//   magic[4] ("SRLT" checkpoints, "SRLA" raw arrays)
//   u32 format version (1)
//   u64 config digest
//   u32 entry count
//   entries: u16 name length, name bytes, u8 dtype, u8 rank, u64 dims[rank],
//            u64 payload offset, u64 payload byte size
//   payload blob
enum class Dtype : std::uint8_t { F32 = 0, F64 = 1, I64 = 2, U8 = 3 };

inline std::size_t dtype_size(Dtype d) {
  switch (d) {
    case Dtype::F32: return 4;
    case Dtype::F64: return 8;
    case Dtype::I64: return 8;
    case Dtype::U8: return 1;
  }
  return 0;
}

template <typename T>
struct dtype_of;
template <>
struct dtype_of<float> {
  static constexpr Dtype value = Dtype::F32;
};
template <>
struct dtype_of<double> {
  static constexpr Dtype value = Dtype::F64;
};

inline const char* dtype_name(Dtype d) {
  switch (d) {
    case Dtype::F32: return "f32";
    case Dtype::F64: return "f64";
    case Dtype::I64: return "i64";
    case Dtype::U8: return "u8";
  }
  return "?";
}

namespace detail {

inline void put_u16(std::string& b, std::uint16_t v) {
  for (int i = 0; i < 2; ++i) b.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_u32(std::string& b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_u64(std::string& b, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) b.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class ByteReader {
 public:
  ByteReader(const std::string& bytes, const std::string& what)
      : b_(bytes), what_(what) {}

  std::uint64_t take_uint(int nbytes, const std::string& field) {
    if (pos_ + static_cast<std::size_t>(nbytes) > b_.size())
      throw IoError(what_ + ": truncated while reading " + field);
    std::uint64_t v = 0;
    for (int i = 0; i < nbytes; ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(b_[pos_ + static_cast<std::size_t>(i)])) << (8 * i);
    pos_ += static_cast<std::size_t>(nbytes);
    return v;
  }

  std::string take_bytes(std::size_t n, const std::string& field) {
    if (pos_ + n > b_.size())
      throw IoError(what_ + ": truncated while reading " + field);
    std::string out = b_.substr(pos_, n);
    pos_ += n;
    return out;
  }

  std::size_t pos() const { return pos_; }

 private:
  const std::string& b_;
  std::string what_;
  std::size_t pos_ = 0;
};

}  // namespace detail

struct ContainerEntry {
  std::string name;
  Dtype dtype = Dtype::F32;
  Shape shape;
  std::vector<unsigned char> bytes;

  std::size_t count() const { return bytes.size() / dtype_size(dtype); }
};

class ContainerWriter {
 public:
  explicit ContainerWriter(std::string magic, std::uint64_t config_digest = 0)
      : magic_(std::move(magic)), digest_(config_digest) {}

  template <typename T>
  void add_array(const std::string& name, const Shape& shape,
                 const std::vector<T>& values) {
    ContainerEntry e;
    e.name = name;
    e.dtype = dtype_of<T>::value;
    e.shape = shape;
    e.bytes.resize(values.size() * sizeof(T));
    std::memcpy(e.bytes.data(), values.data(), e.bytes.size());
    entries_.push_back(std::move(e));
  }

  void add_i64(const std::string& name, std::int64_t v) {
    ContainerEntry e;
    e.name = name;
    e.dtype = Dtype::I64;
    e.shape = {1};
    e.bytes.resize(8);
    std::memcpy(e.bytes.data(), &v, 8);
    entries_.push_back(std::move(e));
  }

  void add_text(const std::string& name, const std::string& text) {
    ContainerEntry e;
    e.name = name;
    e.dtype = Dtype::U8;
    e.shape = {static_cast<int>(text.size())};
    e.bytes.assign(text.begin(), text.end());
    entries_.push_back(std::move(e));
  }

  void write(const std::string& path) const {
    std::string header;
    header += magic_;
    detail::put_u32(header, 1u);
    detail::put_u64(header, digest_);
    detail::put_u32(header, static_cast<std::uint32_t>(entries_.size()));
    std::uint64_t offset = 0;
    for (const auto& e : entries_) {
      detail::put_u16(header, static_cast<std::uint16_t>(e.name.size()));
      header += e.name;
      header.push_back(static_cast<char>(e.dtype));
      header.push_back(static_cast<char>(e.shape.size()));
      for (int d : e.shape) detail::put_u64(header, static_cast<std::uint64_t>(d));
      detail::put_u64(header, offset);
      detail::put_u64(header, static_cast<std::uint64_t>(e.bytes.size()));
      offset += e.bytes.size();
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open for writing: " + path);
    f.write(header.data(), static_cast<std::streamsize>(header.size()));
    for (const auto& e : entries_)
      f.write(reinterpret_cast<const char*>(e.bytes.data()),
              static_cast<std::streamsize>(e.bytes.size()));
    if (!f) throw IoError("write failed: " + path);
  }

 private:
  std::string magic_;
  std::uint64_t digest_;
  std::vector<ContainerEntry> entries_;
};

class ContainerReader {
 public:
  static ContainerReader read(const std::string& path,
                              const std::string& expected_magic) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open: " + path);
    std::string bytes((std::istreambuf_iterator<char>(f)),
                      std::istreambuf_iterator<char>());
    ContainerReader r;
    r.path_ = path;
    detail::ByteReader br(bytes, path);
    const std::string magic = br.take_bytes(4, "magic");
    if (magic != expected_magic)
      throw IoError(path + ": bad magic '" + magic + "', expected '" +
                    expected_magic + "'");
    const std::uint64_t version = br.take_uint(4, "format version");
    if (version != 1)
      throw IoError(path + ": unsupported format version " +
                    std::to_string(version));
    r.digest_ = br.take_uint(8, "config digest");
    const std::uint64_t n = br.take_uint(4, "entry count");
    struct Pending {
      ContainerEntry e;
      std::uint64_t offset, size;
    };
    std::vector<Pending> pending;
    for (std::uint64_t i = 0; i < n; ++i) {
      const std::string ctx = "entry " + std::to_string(i);
      Pending p;
      const std::uint64_t name_len = br.take_uint(2, ctx + " name length");
      p.e.name = br.take_bytes(name_len, ctx + " name");
      p.e.dtype = static_cast<Dtype>(br.take_uint(1, ctx + " dtype"));
      const std::uint64_t rank = br.take_uint(1, ctx + " rank");
      for (std::uint64_t d = 0; d < rank; ++d)
        p.e.shape.push_back(static_cast<int>(br.take_uint(8, ctx + " dims")));
      p.offset = br.take_uint(8, ctx + " offset");
      p.size = br.take_uint(8, ctx + " size");
      pending.push_back(std::move(p));
    }
    const std::size_t payload_start = br.pos();
    for (auto& p : pending) {
      const std::size_t begin = payload_start + p.offset;
      if (begin + p.size > bytes.size())
        throw IoError(path + ": truncated payload for entry '" + p.e.name + "'");
      if (p.size != shape_numel(p.e.shape) * dtype_size(p.e.dtype))
        throw IoError(path + ": payload size mismatch for entry '" + p.e.name + "'");
      p.e.bytes.assign(bytes.begin() + static_cast<std::ptrdiff_t>(begin),
                       bytes.begin() + static_cast<std::ptrdiff_t>(begin + p.size));
      r.order_.push_back(p.e.name);
      r.entries_.emplace(p.e.name, std::move(p.e));
    }
    return r;
  }

  std::uint64_t digest() const { return digest_; }
  const std::vector<std::string>& names() const { return order_; }
  bool has(const std::string& name) const { return entries_.count(name) > 0; }

  const ContainerEntry& get(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end())
      throw IoError(path_ + ": missing entry '" + name + "'");
    return it->second;
  }

  /// Copies an entry into an existing value buffer, validating dtype/shape.
  template <typename T>
  void load_into(const std::string& name, const Shape& shape,
                 std::vector<T>& out) const {
    const ContainerEntry& e = get(name);
    if (e.dtype != dtype_of<T>::value)
      throw IoError(path_ + ": entry '" + name + "' has dtype " +
                    dtype_name(e.dtype) + ", expected " +
                    dtype_name(dtype_of<T>::value));
    if (e.shape != shape)
      throw IoError(path_ + ": entry '" + name + "' has shape " +
                    shape_str(e.shape) + ", expected " + shape_str(shape));
    out.resize(e.count());
    std::memcpy(out.data(), e.bytes.data(), e.bytes.size());
  }

  std::int64_t get_i64(const std::string& name) const {
    const ContainerEntry& e = get(name);
    if (e.dtype != Dtype::I64 || e.count() != 1)
      throw IoError(path_ + ": entry '" + name + "' is not a scalar i64");
    std::int64_t v;
    std::memcpy(&v, e.bytes.data(), 8);
    return v;
  }

  std::string get_text(const std::string& name) const {
    const ContainerEntry& e = get(name);
    return std::string(e.bytes.begin(), e.bytes.end());
  }

 private:
  std::string path_;
  std::uint64_t digest_ = 0;
  std::vector<std::string> order_;
  std::map<std::string, ContainerEntry> entries_;
};

// FNV-1a 64-bit hash; used for config digests.
inline std::uint64_t fnv1a64(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace srl
