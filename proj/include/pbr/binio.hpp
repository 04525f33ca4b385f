#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "pbr/common.hpp"

namespace pbr::binio {

static_assert(std::endian::native == std::endian::little,
              "artifact formats are little-endian; big-endian hosts need byte swapping");

/// Appends little-endian scalars to an in-memory buffer; flushed to disk at once
/// so a failed write never leaves a half-written artifact behind.
class Writer {
 public:
  void magic(std::string_view tag) {
    bytes_.insert(bytes_.end(), tag.begin(), tag.end());
  }

  template <class T>
  void put(T value) {
    static_assert(std::is_arithmetic_v<T>);
    const auto* p = reinterpret_cast<const std::uint8_t*>(&value);
    bytes_.insert(bytes_.end(), p, p + sizeof(T));
  }

  template <class T>
  void put_array(std::span<const T> values) {
    static_assert(std::is_arithmetic_v<T>);
    const auto* p = reinterpret_cast<const std::uint8_t*>(values.data());
    bytes_.insert(bytes_.end(), p, p + values.size_bytes());
  }

  const std::vector<std::uint8_t>& bytes() const { return bytes_; }
  std::size_t size() const { return bytes_.size(); }

  void save(const std::filesystem::path& path) const;

 private:
  std::vector<std::uint8_t> bytes_;
};

/// Bounds-checked little-endian reader over a whole file held in memory.
class Reader {
 public:
  explicit Reader(const std::filesystem::path& path);
  Reader(std::vector<std::uint8_t> bytes, std::string label);

  void expect_magic(std::string_view tag);

  template <class T>
  T get() {
    static_assert(std::is_arithmetic_v<T>);
    need(sizeof(T));
    T value;
    std::memcpy(&value, bytes_.data() + offset_, sizeof(T));
    offset_ += sizeof(T);
    return value;
  }

  template <class T>
  void get_array(std::span<T> out) {
    static_assert(std::is_arithmetic_v<T>);
    need(out.size_bytes());
    std::memcpy(out.data(), bytes_.data() + offset_, out.size_bytes());
    offset_ += out.size_bytes();
  }

  /// Non-negative int32 field, rejected otherwise.
  std::size_t get_count(const char* field);

  std::size_t offset() const { return offset_; }
  std::size_t remaining() const { return bytes_.size() - offset_; }
  bool at_end() const { return offset_ == bytes_.size(); }
  const std::string& label() const { return label_; }

  [[noreturn]] void fail(const std::string& what) const;

 private:
  void need(std::size_t n) const;

  std::vector<std::uint8_t> bytes_;
  std::string label_;
  std::size_t offset_ = 0;
};

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);

}  // namespace pbr::binio
