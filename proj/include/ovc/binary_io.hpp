#pragma once

// Little-endian byte buffers with field-named truncation diagnostics and an
// FNV-1a checksum trailer; shared by all binary file formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <type_traits>

#include "ovc/error.hpp"
#include "ovc/rng.hpp"

namespace ovc {

static_assert(std::endian::native == std::endian::little,
              "binary formats are little-endian; add byte swapping for this host");

inline constexpr std::uint32_t kFormatVersion = 1;

class ByteWriter {
 public:
  template <typename T>
  void put(const T& v) {
    static_assert(std::is_trivially_copyable_v<T>);
    append(&v, sizeof(T));
  }
  void put_bytes(const void* p, std::size_t len) { append(p, len); }
  void put_string(const std::string& s) {
    put(static_cast<std::uint32_t>(s.size()));
    append(s.data(), s.size());
  }
  void finish() {
    rng::Fnv1a h;
    h.update(buf_.data(), buf_.size());
    put(h.digest());
  }
  const std::string& bytes() const { return buf_; }

 private:
  void append(const void* p, std::size_t len) {
    buf_.append(static_cast<const char*>(p), len);
  }
  std::string buf_;
};

class ByteReader {
 public:
  ByteReader(std::string data, std::filesystem::path path) : data_(std::move(data)), path_(std::move(path)) {}

  template <typename T>
  T get(const char* field) {
    T v;
    take(&v, sizeof(T), field);
    return v;
  }
  void get_bytes(void* out, std::size_t len, const char* field) { take(out, len, field); }
  std::string get_string(const char* field) {
    const auto len = get<std::uint32_t>(field);
    std::string s(len, '\0');
    take(s.data(), len, field);
    return s;
  }

  void expect_magic(const char (&magic)[4]) {
    char got[4];
    take(got, 4, "magic");
    if (std::memcmp(got, magic, 4) != 0) {
      fail(ErrorCode::kMagicMismatch, path_.string() + ": expected magic " +
                                          std::string(magic, 4) + ", found '" +
                                          std::string(got, 4) + "'");
    }
    const auto version = get<std::uint32_t>("format_version");
    require(version == kFormatVersion, ErrorCode::kVersionUnsupported,
            path_.string() + ": format_version " + std::to_string(version));
  }

  // Checksum trailer must be the last 8 bytes and match everything before it.
  void verify_checksum() {
    const std::size_t body = pos_;
    const auto stored = get<std::uint64_t>("checksum");
    require(pos_ == data_.size(), ErrorCode::kCorruptRecord,
            path_.string() + ": " + std::to_string(data_.size() - pos_) +
                " trailing bytes after checksum");
    rng::Fnv1a h;
    h.update(data_.data(), body);
    require(h.digest() == stored, ErrorCode::kChecksumMismatch,
            path_.string() + ": checksum does not match contents");
  }

  const std::filesystem::path& path() const { return path_; }

 private:
  void take(void* out, std::size_t len, const char* field) {
    if (data_.size() - pos_ < len) {
      fail(ErrorCode::kTruncation,
           path_.string() + ": file ends while reading field '" + field + "'");
    }
    std::memcpy(out, data_.data() + pos_, len);
    pos_ += len;
  }

  std::string data_;
  std::filesystem::path path_;
  std::size_t pos_ = 0;
};

/// Reads a whole file; a missing file is a cache-miss.
std::string read_file(const std::filesystem::path& path);

/// Writes to a temporary sibling and renames it into place.
void write_atomically(const std::filesystem::path& path, const std::string& bytes);

}  // namespace ovc
