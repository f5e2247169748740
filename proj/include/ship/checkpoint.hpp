#pragma once

// Binary checkpoint: magic, version, key=value header, named little-endian
// double blocks, trailing FNV-1a checksum.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "ship/rng.hpp"
#include "ship/tensor.hpp"

namespace ship {

class CheckpointError : public Error {
 public:
  using Error::Error;
};

inline constexpr char kCheckpointMagic[8] = {'S', 'H', 'I', 'P', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::map<std::string, std::string> header;
  std::vector<std::pair<std::string, Tensor>> blocks;

  const Tensor& block(const std::string& name) const {
    for (const auto& [n, t] : blocks)
      if (n == name) return t;
    throw CheckpointError("checkpoint: missing block '" + name + "'");
  }
  bool has_block(const std::string& name) const {
    for (const auto& b : blocks)
      if (b.first == name) return true;
    return false;
  }
  const std::string& get(const std::string& key) const {
    auto it = header.find(key);
    if (it == header.end()) throw CheckpointError("checkpoint: missing header field '" + key + "'");
    return it->second;
  }
};

namespace detail {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

inline void put_u32(std::string& s, std::uint32_t v) { s.append(reinterpret_cast<const char*>(&v), 4); }
inline void put_u64(std::string& s, std::uint64_t v) { s.append(reinterpret_cast<const char*>(&v), 8); }

class Reader {
 public:
  explicit Reader(const std::string& s) : s_(s) {}
  template <class T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, s_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string out = s_.substr(pos_, n);
    pos_ += n;
    return out;
  }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > s_.size()) throw CheckpointError("checkpoint: truncated at byte " + std::to_string(pos_));
  }
  const std::string& s_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string encode_checkpoint(const Checkpoint& c) {
  std::string s(kCheckpointMagic, 8);
  detail::put_u32(s, kCheckpointVersion);
  std::string hdr;
  for (const auto& [k, v] : c.header) {
    if (k.find_first_of("=\n") != std::string::npos || v.find('\n') != std::string::npos)
      throw CheckpointError("checkpoint: header entries may not contain '=' in keys or newlines");
    hdr += k + "=" + v + "\n";
  }
  detail::put_u64(s, hdr.size());
  s += hdr;
  detail::put_u64(s, c.blocks.size());
  for (const auto& [name, t] : c.blocks) {
    detail::put_u32(s, static_cast<std::uint32_t>(name.size()));
    s += name;
    detail::put_u32(s, static_cast<std::uint32_t>(t.shape.size()));
    for (auto d : t.shape) detail::put_u64(s, d);
    s.append(reinterpret_cast<const char*>(t.data.data()), t.data.size() * sizeof(double));
  }
  detail::put_u64(s, fnv1a(s));
  return s;
}

inline Checkpoint decode_checkpoint(const std::string& s) {
  if (s.size() < 20 || std::memcmp(s.data(), kCheckpointMagic, 8) != 0)
    throw CheckpointError("checkpoint: bad magic (not a checkpoint file)");
  std::uint64_t stored;
  std::memcpy(&stored, s.data() + s.size() - 8, 8);
  if (stored != fnv1a(std::string_view(s.data(), s.size() - 8)))
    throw CheckpointError("checkpoint: checksum mismatch (file corrupt or truncated)");
  detail::Reader r(s);
  r.bytes(8);
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw CheckpointError("checkpoint: version " + std::to_string(version) + " unsupported (expected " +
                          std::to_string(kCheckpointVersion) + ")");
  Checkpoint c;
  std::istringstream hdr(r.bytes(r.get<std::uint64_t>()));
  for (std::string line; std::getline(hdr, line);) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw CheckpointError("checkpoint: malformed header line '" + line + "'");
    c.header[line.substr(0, eq)] = line.substr(eq + 1);
  }
  const auto n = r.get<std::uint64_t>();
  for (std::uint64_t b = 0; b < n; ++b) {
    std::string name = r.bytes(r.get<std::uint32_t>());
    Shape shape(r.get<std::uint32_t>());
    for (auto& d : shape) d = r.get<std::uint64_t>();
    Tensor t(shape);
    const std::string raw = r.bytes(t.size() * sizeof(double));
    std::memcpy(t.data.data(), raw.data(), raw.size());
    c.blocks.emplace_back(std::move(name), std::move(t));
  }
  if (r.pos() != s.size() - 8) throw CheckpointError("checkpoint: trailing bytes after last block");
  return c;
}

inline void save_checkpoint(const Checkpoint& c, const std::string& path) {
  const std::string bytes = encode_checkpoint(c);
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw CheckpointError("cannot write checkpoint " + path);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw CheckpointError("short write to checkpoint " + path);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) throw CheckpointError("cannot move checkpoint into " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot read checkpoint " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return decode_checkpoint(ss.str());
}

}  // namespace ship
