// Copyright 2026 The dualattn Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <zlib.h>

#include "dat/tensor.hpp"

// Little-endian byte buffers shared by the dataset and checkpoint formats.

namespace dat::bytes {

static_assert(std::endian::native == std::endian::little, "on-disk formats assume a little-endian host");

class Writer {
 public:
  template <typename U>
  void put(U v) {
    static_assert(std::is_trivially_copyable_v<U>);
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    buf_.insert(buf_.end(), p, p + sizeof(U));
  }
  void put_bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    buf_.insert(buf_.end(), p, p + n);
  }
  void put_string(const std::string& s) {
    put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    put_bytes(s.data(), s.size());
  }
  // Appends the crc32 of everything written so far.
  void seal() { put<std::uint32_t>(crc(buf_.data(), buf_.size())); }

  std::size_t size() const { return buf_.size(); }
  const std::vector<std::uint8_t>& buffer() const { return buf_; }

  static std::uint32_t crc(const std::uint8_t* p, std::size_t n) {
    uLong c = crc32(0L, Z_NULL, 0);
    // zlib takes uInt lengths; feed large buffers in chunks.
    while (n) {
      const auto chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
      c = crc32(c, p, chunk);
      p += chunk;
      n -= chunk;
    }
    return static_cast<std::uint32_t>(c);
  }

 private:
  std::vector<std::uint8_t> buf_;
};

class Reader {
 public:
  Reader(const std::uint8_t* data, std::size_t size, std::string what) : p_(data), n_(size), what_(std::move(what)) {}

  template <typename U>
  U get() {
    U v;
    std::memcpy(&v, take(sizeof(U)), sizeof(U));
    return v;
  }
  const std::uint8_t* take(std::size_t n) {
    if (n > n_ - pos_) throw IoError(what_ + ": truncated (needed " + std::to_string(n) + " bytes at offset " +
                                     std::to_string(pos_) + ")");
    const auto* p = p_ + pos_;
    pos_ += n;
    return p;
  }
  std::string get_string(std::size_t max_len = 1u << 20) {
    const auto len = get<std::uint32_t>();
    if (len > max_len) throw IoError(what_ + ": string length " + std::to_string(len) + " is implausible");
    const auto* p = take(len);
    return {reinterpret_cast<const char*>(p), len};
  }
  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return n_ - pos_; }

 private:
  const std::uint8_t* p_;
  std::size_t n_, pos_ = 0;
  std::string what_;
};

inline std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::vector<std::uint8_t> data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return data;
}

inline void write_file(const std::string& path, const std::vector<std::uint8_t>& data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
  if (!out) throw IoError("write failed for " + path);
}

// Checks the trailing crc32 and returns the payload length (without it).
inline std::size_t verify_crc(const std::vector<std::uint8_t>& data, const std::string& what) {
  if (data.size() < 4) throw IoError(what + ": file too short");
  const std::size_t body = data.size() - 4;
  std::uint32_t stored;
  std::memcpy(&stored, data.data() + body, 4);
  if (stored != Writer::crc(data.data(), body)) throw IntegrityError(what + ": checksum mismatch");
  return body;
}

}  // namespace dat::bytes
