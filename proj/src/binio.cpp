#include "pbr/binio.hpp"

#include <iterator>

namespace pbr::binio {

void Writer::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open for writing: " + path.string());
  out.write(reinterpret_cast<const char*>(bytes_.data()),
            static_cast<std::streamsize>(bytes_.size()));
  if (!out) throw FormatError("write failed: " + path.string());
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open for reading: " + path.string());
  in.seekg(0, std::ios::end);
  const auto size = static_cast<std::size_t>(in.tellg());
  in.seekg(0, std::ios::beg);
  std::vector<std::uint8_t> bytes(size);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(size));
  if (!in && size > 0) throw FormatError("read failed: " + path.string());
  return bytes;
}

Reader::Reader(const std::filesystem::path& path) : bytes_(read_file(path)), label_(path.string()) {}

Reader::Reader(std::vector<std::uint8_t> bytes, std::string label)
    : bytes_(std::move(bytes)), label_(std::move(label)) {}

void Reader::expect_magic(std::string_view tag) {
  need(tag.size());
  if (std::memcmp(bytes_.data() + offset_, tag.data(), tag.size()) != 0) {
    fail("bad magic, expected \"" + std::string(tag) + "\"");
  }
  offset_ += tag.size();
}

std::size_t Reader::get_count(const char* field) {
  const auto v = get<std::int32_t>();
  if (v < 0) fail(std::string("negative ") + field);
  return static_cast<std::size_t>(v);
}

void Reader::need(std::size_t n) const {
  if (bytes_.size() - offset_ < n) fail("truncated");
}

void Reader::fail(const std::string& what) const {
  throw FormatError(label_ + ": " + what + " at byte offset " + std::to_string(offset_));
}

}  // namespace pbr::binio
