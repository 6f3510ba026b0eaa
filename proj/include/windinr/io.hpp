#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "windinr/tensor.hpp"

namespace windinr::io {

namespace fs = std::filesystem;

/// A required input file or directory does not exist.
class MissingArtifact : public std::runtime_error {
 public:
  explicit MissingArtifact(const fs::path& path)
      : std::runtime_error("missing artifact: " + path.string()), path_(path) {}
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Writes via a sibling temporary file and rename, so readers never see partial content.
void write_file_atomic(const fs::path& path, std::string_view bytes);
std::string read_file(const fs::path& path);
void require_exists(const fs::path& path);
std::uint64_t file_hash(const fs::path& path);
std::string hex64(std::uint64_t value);

// WINDGRID container: "WINDGRID", u32 rank, u32 extents, little-endian f32 row-major.
std::string encode_grid(const Tensor& grid);
Tensor decode_grid(std::string_view bytes);
void write_grid(const fs::path& path, const Tensor& grid);
Tensor read_grid(const fs::path& path);

/// Shortest decimal that parses back to the same double.
std::string format_double(double value);
double parse_double(std::string_view text);

/// Comma-separated table with a header row.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(std::string_view name) const;
  std::string to_string() const;
  static CsvTable parse(std::string_view text);
};

void write_csv(const fs::path& path, const CsvTable& table);
CsvTable read_csv(const fs::path& path);

// Little-endian binary helpers used by checkpoint and prior files.
class BinaryWriter {
 public:
  void bytes(std::string_view b) { out_.append(b); }
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f64(double v);
  void f64s(const std::vector<double>& v);
  void string(std::string_view s);
  void tensor(const Tensor& t);
  const std::string& str() const { return out_; }

 private:
  std::string out_;
};

class BinaryReader {
 public:
  explicit BinaryReader(std::string_view data) : data_(data) {}
  std::string_view bytes(std::size_t n);
  std::uint32_t u32();
  std::uint64_t u64();
  double f64();
  std::string string();
  Tensor tensor();
  bool done() const { return pos_ == data_.size(); }

 private:
  std::string_view data_;
  std::size_t pos_ = 0;
};

}  // namespace windinr::io
