#pragma once

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>

#include "argsearch/common.hpp"

namespace argsearch::io {

/// Shortest decimal string that parses back to exactly `x`.
std::string format_double(double x);

/// Parses a full token as a double; throws DataError on trailing junk.
double parse_double(std::string_view token);

std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, std::string_view contents);

/// Little-endian binary writer over an ofstream.
class BinaryWriter {
 public:
  explicit BinaryWriter(const std::filesystem::path& path);

  void magic(std::string_view tag) { out_.write(tag.data(), static_cast<std::streamsize>(tag.size())); }
  void u8(std::uint8_t v) { out_.put(static_cast<char>(v)); }
  void u64(std::uint64_t v);
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void close();

 private:
  std::filesystem::path path_;
  std::ofstream out_;
};

class BinaryReader {
 public:
  explicit BinaryReader(const std::filesystem::path& path);

  /// Throws DataError unless the next bytes equal `tag`.
  void expect_magic(std::string_view tag);
  std::uint8_t u8();
  std::uint64_t u64();
  double f64() { return std::bit_cast<double>(u64()); }
  bool at_end();

 private:
  void read(char* dst, std::size_t n);

  std::filesystem::path path_;
  std::ifstream in_;
};

}  // namespace argsearch::io
