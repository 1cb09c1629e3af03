#pragma once

// Internal little-endian binary IO helpers for the on-disk containers.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "seqplace/common.hpp"

static_assert(std::endian::native == std::endian::little,
              "on-disk formats are little-endian; big-endian hosts are not supported");

namespace seqplace::io {

class Writer {
 public:
  explicit Writer(const std::string& path) : path_(path), out_(path, std::ios::binary) {
    if (!out_) throw DataError("cannot open for writing: " + path);
  }

  void bytes(const void* data, std::size_t size) {
    out_.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
  }

  template <typename T>
  void pod(T value) {
    bytes(&value, sizeof(T));
  }

  void magic(const char m[4]) { bytes(m, 4); }

  void finish() {
    out_.flush();
    if (!out_) throw DataError("write failed: " + path_);
  }

 private:
  std::string path_;
  std::ofstream out_;
};

class Reader {
 public:
  explicit Reader(const std::string& path) : path_(path), in_(path, std::ios::binary) {
    if (!in_) throw DataError("cannot open: " + path);
  }

  void bytes(void* data, std::size_t size) {
    in_.read(static_cast<char*>(data), static_cast<std::streamsize>(size));
    if (in_.gcount() != static_cast<std::streamsize>(size)) {
      throw DataError("truncated file: " + path_ + " at byte offset " + std::to_string(offset_));
    }
    offset_ += size;
  }

  template <typename T>
  T pod() {
    T value;
    bytes(&value, sizeof(T));
    return value;
  }

  void expect_magic(const char m[4], const std::string& what) {
    char got[4];
    bytes(got, 4);
    if (std::memcmp(got, m, 4) != 0) {
      throw DataError(path_ + " is not a " + what + " file (bad magic)");
    }
  }

  void expect_version(uint8_t want, const std::string& what) {
    const uint8_t got = pod<uint8_t>();
    if (got != want) {
      throw DataError(path_ + ": unsupported " + what + " version " + std::to_string(got));
    }
  }

  bool at_eof() {
    return in_.peek() == std::char_traits<char>::eof();
  }

  std::size_t offset() const { return offset_; }
  const std::string& path() const { return path_; }

 private:
  std::string path_;
  std::ifstream in_;
  std::size_t offset_ = 0;
};

}  // namespace seqplace::io
