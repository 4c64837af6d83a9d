#pragma once

// Little-endian container plumbing shared by datasets and checkpoints, plus
// strict JSON helpers.

#include "json.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <initializer_list>
#include <iterator>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace tsnvae {

static_assert(std::endian::native == std::endian::little, "container I/O assumes a little-endian host");

class ContainerError : public std::runtime_error {
 public:
  enum class Kind { Io, BadMagic, Version, Truncated, Checksum, Malformed };
  ContainerError(Kind k, const std::string& msg) : std::runtime_error(msg), kind_(k) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline std::uint64_t checksum64(const std::vector<std::uint8_t>& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (auto b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

class ByteWriter {
 public:
  template <class T>
  void put(T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    buf_.insert(buf_.end(), p, p + sizeof(T));
  }
  void put_bytes(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }
  void put_u8_image(const std::vector<double>& pixels) {
    for (double v : pixels) buf_.push_back(static_cast<std::uint8_t>(std::lround(v * 255.0)));
  }
  void put_f64s(const std::vector<double>& v) {
    for (double x : v) put(x);
  }
  std::vector<std::uint8_t>& bytes() { return buf_; }

 private:
  std::vector<std::uint8_t> buf_;
};

class ByteReader {
 public:
  ByteReader(const std::uint8_t* data, std::size_t n) : p_(data), n_(n) {}

  template <class T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, p_ + off_, sizeof(T));
    off_ += sizeof(T);
    return v;
  }
  std::string get_bytes(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(p_ + off_), n);
    off_ += n;
    return s;
  }
  void get_u8_image(std::vector<double>& out) {
    need(out.size());
    for (auto& v : out) v = static_cast<double>(p_[off_++]) / 255.0;
  }
  void get_f64s(std::vector<double>& out) {
    for (auto& v : out) v = get<double>();
  }
  std::size_t remaining() const { return n_ - off_; }
  std::size_t offset() const { return off_; }

 private:
  void need(std::size_t k) const {
    if (off_ + k > n_)
      throw ContainerError(ContainerError::Kind::Truncated,
                           "unexpected end of data at byte " + std::to_string(off_) + " (needed " +
                               std::to_string(k) + " more)");
  }
  const std::uint8_t* p_;
  std::size_t n_;
  std::size_t off_ = 0;
};

inline std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ContainerError(ContainerError::Kind::Io, "cannot open " + path);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ContainerError(ContainerError::Kind::Io, "cannot open " + path + " for writing");
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw ContainerError(ContainerError::Kind::Io, "write failed for " + path);
}

// Container layout: magic | u32 version | u64 header length | JSON header | payload.
// The header carries "payload_bytes" and "payload_checksum".
inline std::vector<std::uint8_t> pack_container(std::string_view magic, std::uint32_t version,
                                                nlohmann::json header, const std::vector<std::uint8_t>& payload) {
  header["payload_bytes"] = payload.size();
  header["payload_checksum"] = checksum64(payload);
  const std::string text = header.dump();
  ByteWriter w;
  w.put_bytes(magic);
  w.put(version);
  w.put(static_cast<std::uint64_t>(text.size()));
  w.put_bytes(text);
  auto& out = w.bytes();
  out.insert(out.end(), payload.begin(), payload.end());
  return std::move(out);
}

struct Container {
  nlohmann::json header;
  std::vector<std::uint8_t> payload;
};

inline Container unpack_container(std::string_view magic, std::uint32_t version,
                                  const std::vector<std::uint8_t>& bytes) {
  using K = ContainerError::Kind;
  ByteReader r(bytes.data(), bytes.size());
  if (bytes.size() < magic.size()) throw ContainerError(K::Truncated, "file shorter than its magic bytes");
  if (r.get_bytes(magic.size()) != magic) throw ContainerError(K::BadMagic, "not a " + std::string(magic) + " file");
  const auto ver = r.get<std::uint32_t>();
  if (ver != version)
    throw ContainerError(K::Version, "format version " + std::to_string(ver) + " is not supported (expected " +
                                         std::to_string(version) + ")");
  const auto hlen = r.get<std::uint64_t>();
  Container c;
  try {
    c.header = nlohmann::json::parse(r.get_bytes(hlen));
  } catch (const nlohmann::json::parse_error& e) {
    throw ContainerError(K::Malformed, std::string("header is not valid JSON: ") + e.what());
  }
  const auto expected = c.header.value("payload_bytes", std::uint64_t{0});
  if (r.remaining() < expected)
    throw ContainerError(K::Truncated, "payload truncated: " + std::to_string(r.remaining()) + " of " +
                                           std::to_string(expected) + " bytes present");
  if (r.remaining() > expected)
    throw ContainerError(K::Malformed, std::to_string(r.remaining() - expected) + " trailing bytes after payload");
  c.payload.assign(bytes.begin() + static_cast<std::ptrdiff_t>(r.offset()), bytes.end());
  if (checksum64(c.payload) != c.header.value("payload_checksum", std::uint64_t{0}))
    throw ContainerError(K::Checksum, "payload checksum mismatch");
  return c;
}

// Rejects keys of `j` not listed in `allowed`.
inline void require_known_keys(const nlohmann::json& j, std::initializer_list<std::string_view> allowed,
                               std::string_view context) {
  if (!j.is_object()) throw ConfigError(std::string(context) + ": expected an object");
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (auto a : allowed) ok = ok || a == key;
    if (!ok) throw ConfigError(std::string(context) + ": unknown key \"" + key + "\"");
  }
}

template <class T>
void read_if(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace tsnvae
