#pragma once

// Little-endian binary helpers, the flat key-value text format used for
// configs and manifests, and content hashing.

#include <array>
#include <cstdint>
#include <filesystem>
#include <istream>
#include <map>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace discl::io {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class BinaryWriter {
 public:
  explicit BinaryWriter(std::ostream& out) : out_(out) {}

  void bytes(std::string_view raw) { out_.write(raw.data(), static_cast<std::streamsize>(raw.size())); }
  void u8(std::uint8_t v) { put(v, 1); }
  void u16(std::uint16_t v) { put(v, 2); }
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void f32(float v);
  void f32s(std::span<const float> values);

 private:
  void put(std::uint64_t v, int n);
  std::ostream& out_;
};

class BinaryReader {
 public:
  explicit BinaryReader(std::istream& in) : in_(in) {}

  /// Reads and checks a fixed tag such as a file magic.
  void expect(std::string_view tag, std::string_view what);
  std::uint8_t u8() { return static_cast<std::uint8_t>(get(1)); }
  std::uint16_t u16() { return static_cast<std::uint16_t>(get(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  std::uint64_t u64() { return get(8); }
  float f32();
  void f32s(std::span<float> out);

 private:
  std::uint64_t get(int n);
  std::istream& in_;
};

/// Ordered key-value document: one `key = value` per line, `#` comments.
using KeyValues = std::map<std::string, std::string, std::less<>>;

KeyValues parse_key_values(std::istream& in, std::string_view source_name);
KeyValues read_key_values(const std::filesystem::path& path);
std::string format_key_values(const KeyValues& kv);

/// Writes via a temporary sibling and rename so readers never observe a
/// partially written artifact.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);
std::string read_file(const std::filesystem::path& path);

std::string sha256_hex(std::string_view data);
std::string sha256_file(const std::filesystem::path& path);

std::vector<std::string> split_list(std::string_view text, char sep = ',');
std::string trim(std::string_view s);

/// Shortest round-trippable decimal form of a double.
std::string format_double(double v);

}  // namespace discl::io
