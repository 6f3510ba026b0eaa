#include "windinr/io.hpp"

#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <sstream>

#include "windinr/rng.hpp"

namespace windinr::io {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

namespace {

constexpr std::string_view kGridMagic = "WINDGRID";

template <typename T>
void append_raw(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

}  // namespace

void write_file_atomic(const fs::path& path, std::string_view bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("write failed: " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingArtifact(path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void require_exists(const fs::path& path) {
  if (!fs::exists(path)) throw MissingArtifact(path);
}

std::uint64_t file_hash(const fs::path& path) { return fnv1a64(read_file(path)); }

std::string hex64(std::uint64_t value) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(value));
  return buf;
}

std::string encode_grid(const Tensor& grid) {
  std::string out(kGridMagic);
  append_raw<std::uint32_t>(out, static_cast<std::uint32_t>(grid.rank()));
  for (std::size_t e : grid.shape()) append_raw<std::uint32_t>(out, static_cast<std::uint32_t>(e));
  for (double v : grid.data()) append_raw<float>(out, static_cast<float>(v));
  return out;
}

Tensor decode_grid(std::string_view bytes) {
  if (bytes.size() < kGridMagic.size() + 4 || bytes.substr(0, kGridMagic.size()) != kGridMagic) {
    throw FormatError("not a WINDGRID container");
  }
  std::size_t pos = kGridMagic.size();
  auto read_u32 = [&]() {
    if (pos + 4 > bytes.size()) throw FormatError("truncated WINDGRID header");
    std::uint32_t v;
    std::memcpy(&v, bytes.data() + pos, 4);
    pos += 4;
    return v;
  };
  const std::uint32_t rank = read_u32();
  Shape shape;
  for (std::uint32_t i = 0; i < rank; ++i) shape.push_back(read_u32());
  const std::size_t n = shape_size(shape);
  if (bytes.size() != pos + 4 * n) throw FormatError("WINDGRID payload size mismatch");
  std::vector<double> data(n);
  for (std::size_t i = 0; i < n; ++i) {
    float f;
    std::memcpy(&f, bytes.data() + pos + 4 * i, 4);
    data[i] = f;
  }
  return Tensor(std::move(shape), std::move(data));
}

void write_grid(const fs::path& path, const Tensor& grid) { write_file_atomic(path, encode_grid(grid)); }

Tensor read_grid(const fs::path& path) { return decode_grid(read_file(path)); }

std::string format_double(double value) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  if (ec != std::errc()) throw std::runtime_error("format_double failed");
  return std::string(buf, end);
}

double parse_double(std::string_view text) {
  double v = 0.0;
  auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || end != text.data() + text.size()) {
    throw FormatError("invalid number '" + std::string(text) + "'");
  }
  return v;
}

std::size_t CsvTable::column(std::string_view name) const {
  for (std::size_t i = 0; i < header.size(); ++i)
    if (header[i] == name) return i;
  throw FormatError("CSV has no column '" + std::string(name) + "'");
}

std::string CsvTable::to_string() const {
  std::string out;
  auto line = [&out](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) out += ',';
      out += cells[i];
    }
    out += '\n';
  };
  line(header);
  for (const auto& r : rows) line(r);
  return out;
}

CsvTable CsvTable::parse(std::string_view text) {
  CsvTable t;
  bool first = true;
  while (!text.empty()) {
    const std::size_t nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::size_t start = 0;
    while (true) {
      const std::size_t comma = line.find(',', start);
      cells.emplace_back(line.substr(start, comma - start));
      if (comma == std::string_view::npos) break;
      start = comma + 1;
    }
    if (first) {
      t.header = std::move(cells);
      first = false;
    } else {
      if (cells.size() != t.header.size()) throw FormatError("CSV row width does not match header");
      t.rows.push_back(std::move(cells));
    }
  }
  if (first) throw FormatError("CSV has no header");
  return t;
}

void write_csv(const fs::path& path, const CsvTable& table) { write_file_atomic(path, table.to_string()); }

CsvTable read_csv(const fs::path& path) { return CsvTable::parse(read_file(path)); }

void BinaryWriter::u32(std::uint32_t v) { append_raw(out_, v); }
void BinaryWriter::u64(std::uint64_t v) { append_raw(out_, v); }
void BinaryWriter::f64(double v) { append_raw(out_, v); }
void BinaryWriter::f64s(const std::vector<double>& v) {
  u64(v.size());
  for (double x : v) f64(x);
}
void BinaryWriter::string(std::string_view s) {
  u64(s.size());
  out_.append(s);
}
void BinaryWriter::tensor(const Tensor& t) {
  u32(static_cast<std::uint32_t>(t.rank()));
  for (std::size_t e : t.shape()) u64(e);
  for (double v : t.data()) f64(v);
}

std::string_view BinaryReader::bytes(std::size_t n) {
  if (pos_ + n > data_.size()) throw FormatError("truncated binary file");
  std::string_view s = data_.substr(pos_, n);
  pos_ += n;
  return s;
}

std::uint32_t BinaryReader::u32() {
  std::uint32_t v;
  std::memcpy(&v, bytes(4).data(), 4);
  return v;
}

std::uint64_t BinaryReader::u64() {
  std::uint64_t v;
  std::memcpy(&v, bytes(8).data(), 8);
  return v;
}

double BinaryReader::f64() {
  double v;
  std::memcpy(&v, bytes(8).data(), 8);
  return v;
}

std::string BinaryReader::string() {
  const std::uint64_t n = u64();
  return std::string(bytes(n));
}

Tensor BinaryReader::tensor() {
  const std::uint32_t rank = u32();
  if (rank > 8) throw FormatError("implausible tensor rank");
  Shape shape;
  for (std::uint32_t i = 0; i < rank; ++i) shape.push_back(u64());
  const std::size_t n = shape_size(shape);
  if (n * 8 > data_.size() - pos_) throw FormatError("truncated tensor payload");
  std::vector<double> data(n);
  std::memcpy(data.data(), bytes(8 * n).data(), 8 * n);
  return Tensor(std::move(shape), std::move(data));
}

}  // namespace windinr::io
