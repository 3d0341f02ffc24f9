#ifndef ATTNBLEND_TENSOR_IO_HPP
#define ATTNBLEND_TENSOR_IO_HPP

// Array interchange uses the .npy format, version 1.0, restricted to
// little-endian float32/float64. Score tables are RFC-4180 CSV.

#include <bit>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <system_error>
#include <unordered_set>
#include <vector>

#include <unistd.h>

#include "attnblend/array.hpp"
#include "attnblend/error.hpp"

namespace attnblend {

struct LoadOptions {
  bool allow_nonfinite = false;
};

namespace npy_detail {

inline constexpr unsigned char kMagic[8] = {0x93, 'N', 'U', 'M', 'P', 'Y', 0x01, 0x00};
inline constexpr std::size_t kPreamble = 10;  // magic + version + u16 header length
inline constexpr std::size_t kAlignment = 64;

struct Header {
  Dtype dtype = Dtype::Float64;
  bool fortran_order = false;
  std::vector<std::size_t> shape;
};

class HeaderParser {
 public:
  explicit HeaderParser(std::string_view text) : s_(text) {}

  Header parse() {
    Header h;
    bool have_descr = false, have_order = false, have_shape = false;
    skip_ws();
    expect('{');
    for (;;) {
      skip_ws();
      if (peek() == '}') {
        ++pos_;
        break;
      }
      const std::string key = parse_string();
      skip_ws();
      expect(':');
      skip_ws();
      if (key == "descr") {
        const std::string descr = parse_string();
        if (descr == "<f4") {
          h.dtype = Dtype::Float32;
        } else if (descr == "<f8") {
          h.dtype = Dtype::Float64;
        } else {
          fail(ErrorCode::UnsupportedDtype, "dtype '" + descr + "' is not <f4 or <f8");
        }
        have_descr = true;
      } else if (key == "fortran_order") {
        h.fortran_order = parse_bool();
        have_order = true;
      } else if (key == "shape") {
        h.shape = parse_shape();
        have_shape = true;
      } else {
        fail(ErrorCode::HeaderParse, "unexpected header key '" + key + "'");
      }
      skip_ws();
      if (peek() == ',') {
        ++pos_;
        continue;
      }
      skip_ws();
      expect('}');
      break;
    }
    for (; pos_ < s_.size(); ++pos_) {
      const char c = s_[pos_];
      if (c != ' ' && c != '\n' && c != '\t' && c != '\r' && c != '\0')
        fail(ErrorCode::HeaderParse, "trailing characters after header dict");
    }
    if (!have_descr || !have_order || !have_shape)
      fail(ErrorCode::HeaderParse, "header dict must contain descr, fortran_order and shape");
    return h;
  }

 private:
  char peek() const {
    if (pos_ >= s_.size()) fail(ErrorCode::HeaderParse, "unexpected end of header");
    return s_[pos_];
  }

  void skip_ws() {
    while (pos_ < s_.size() && (s_[pos_] == ' ' || s_[pos_] == '\t' || s_[pos_] == '\n' || s_[pos_] == '\r'))
      ++pos_;
  }

  void expect(char c) {
    if (peek() != c) fail(ErrorCode::HeaderParse, std::string("expected '") + c + "' in header");
    ++pos_;
  }

  std::string parse_string() {
    const char quote = peek();
    if (quote != '\'' && quote != '"') fail(ErrorCode::HeaderParse, "expected quoted string in header");
    ++pos_;
    const auto end = s_.find(quote, pos_);
    if (end == std::string_view::npos) fail(ErrorCode::HeaderParse, "unterminated string in header");
    std::string out(s_.substr(pos_, end - pos_));
    pos_ = end + 1;
    return out;
  }

  bool parse_bool() {
    if (s_.substr(pos_, 4) == "True") {
      pos_ += 4;
      return true;
    }
    if (s_.substr(pos_, 5) == "False") {
      pos_ += 5;
      return false;
    }
    fail(ErrorCode::HeaderParse, "fortran_order must be True or False");
  }

  std::vector<std::size_t> parse_shape() {
    std::vector<std::size_t> shape;
    expect('(');
    for (;;) {
      skip_ws();
      if (peek() == ')') {
        ++pos_;
        break;
      }
      std::uint64_t value = 0;
      const auto* first = s_.data() + pos_;
      const auto* last = s_.data() + s_.size();
      const auto [ptr, ec] = std::from_chars(first, last, value);
      if (ec != std::errc{} || ptr == first)
        fail(ErrorCode::HeaderParse, "shape entries must be nonnegative integers");
      if (value > (std::uint64_t{1} << 48)) fail(ErrorCode::HeaderParse, "shape entry too large");
      pos_ += static_cast<std::size_t>(ptr - first);
      shape.push_back(static_cast<std::size_t>(value));
      if (shape.size() > 32) fail(ErrorCode::HeaderParse, "too many dimensions");
      skip_ws();
      if (peek() == ',') {
        ++pos_;
        continue;
      }
      expect(')');
      break;
    }
    // A one-element tuple must carry a trailing comma in Python syntax; we
    // accept "(5)" as well since nothing else could be meant.
    return shape;
  }

  std::string_view s_;
  std::size_t pos_ = 0;
};

inline std::uint32_t read_u32(const unsigned char* p) {
  return std::uint32_t{p[0]} | (std::uint32_t{p[1]} << 8) | (std::uint32_t{p[2]} << 16) |
         (std::uint32_t{p[3]} << 24);
}

inline std::uint64_t read_u64(const unsigned char* p) {
  return std::uint64_t{read_u32(p)} | (std::uint64_t{read_u32(p + 4)} << 32);
}

inline void append_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int k = 0; k < 4; ++k) out.push_back(static_cast<unsigned char>(v >> (8 * k)));
}

inline void append_u64(std::vector<unsigned char>& out, std::uint64_t v) {
  for (int k = 0; k < 8; ++k) out.push_back(static_cast<unsigned char>(v >> (8 * k)));
}

// Maps column-major storage of `shape` to row-major order.
inline std::vector<double> fortran_to_c(const std::vector<double>& src, const std::vector<std::size_t>& shape) {
  std::vector<double> dst(src.size());
  const std::size_t nd = shape.size();
  std::vector<std::size_t> stride(nd, 1);
  for (std::size_t k = nd; k-- > 1;) stride[k - 1] = stride[k] * shape[k];
  std::vector<std::size_t> idx(nd, 0);
  for (std::size_t f = 0; f < src.size(); ++f) {
    std::size_t c = 0;
    for (std::size_t k = 0; k < nd; ++k) c += idx[k] * stride[k];
    dst[c] = src[f];
    for (std::size_t k = 0; k < nd; ++k) {
      if (++idx[k] < shape[k]) break;
      idx[k] = 0;
    }
  }
  return dst;
}

}  // namespace npy_detail

/// Decodes an in-memory .npy v1.0 image.
inline DenseArray parse_array(std::span<const unsigned char> bytes, const LoadOptions& opts = {}) {
  using namespace npy_detail;
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kMagic, 8) != 0)
    fail(ErrorCode::MagicMismatch, "missing \\x93NUMPY v1.0 preamble");
  if (bytes.size() < kPreamble) fail(ErrorCode::TruncatedPayload, "file ends inside the preamble");
  const std::size_t header_len = std::size_t{bytes[8]} | (std::size_t{bytes[9]} << 8);
  if (bytes.size() < kPreamble + header_len) fail(ErrorCode::TruncatedPayload, "file ends inside the header");

  const std::string_view text(reinterpret_cast<const char*>(bytes.data() + kPreamble), header_len);
  const Header h = HeaderParser(text).parse();

  std::size_t count = 1;
  for (std::size_t d : h.shape) {
    if (d != 0 && count > (std::size_t{1} << 48) / d) fail(ErrorCode::HeaderParse, "shape product overflows");
    count *= d;
  }
  const std::size_t width = dtype_size(h.dtype);
  const std::size_t payload = bytes.size() - kPreamble - header_len;
  if (payload < count * width)
    fail(ErrorCode::TruncatedPayload, "expected " + std::to_string(count * width) + " payload bytes, found " +
                                          std::to_string(payload));
  if (payload > count * width)
    fail(ErrorCode::HeaderParse, "payload has " + std::to_string(payload - count * width) + " trailing bytes");

  DenseArray out;
  out.shape = h.shape;
  out.dtype = h.dtype;
  out.data.resize(count);
  const unsigned char* p = bytes.data() + kPreamble + header_len;
  if (h.dtype == Dtype::Float32) {
    for (std::size_t i = 0; i < count; ++i) out.data[i] = std::bit_cast<float>(read_u32(p + 4 * i));
  } else {
    for (std::size_t i = 0; i < count; ++i) out.data[i] = std::bit_cast<double>(read_u64(p + 8 * i));
  }
  if (h.fortran_order && h.shape.size() > 1) {
    out.data = fortran_to_c(out.data, h.shape);
    out.transposed_on_load = true;
  }
  if (!opts.allow_nonfinite) {
    for (double v : out.data)
      if (!std::isfinite(v)) fail(ErrorCode::NonFinite, "payload contains NaN or infinity");
  }
  return out;
}

/// Encodes `arr` as a row-major .npy v1.0 image with the payload aligned to 64 bytes.
inline std::vector<unsigned char> serialize_array(const DenseArray& arr) {
  using namespace npy_detail;
  require(shape_product(arr.shape) == arr.data.size(), ErrorCode::InvalidShape,
          "shape " + shape_string(arr.shape) + " does not match data length");
  std::string header = "{'descr': '";
  header += arr.dtype == Dtype::Float32 ? "<f4" : "<f8";
  header += "', 'fortran_order': False, 'shape': (";
  for (std::size_t i = 0; i < arr.shape.size(); ++i) {
    header += std::to_string(arr.shape[i]);
    if (arr.shape.size() == 1 || i + 1 < arr.shape.size()) header += arr.shape.size() == 1 ? "," : ", ";
  }
  header += "), }";
  const std::size_t unpadded = kPreamble + header.size() + 1;
  const std::size_t total = (unpadded + kAlignment - 1) / kAlignment * kAlignment;
  header.append(total - unpadded, ' ');
  header += '\n';
  require(header.size() <= 0xFFFF, ErrorCode::InvalidShape, "header too long for format version 1.0");

  std::vector<unsigned char> out(total);
  out.reserve(total + arr.data.size() * dtype_size(arr.dtype));
  std::memcpy(out.data(), kMagic, sizeof kMagic);
  out[sizeof kMagic] = static_cast<unsigned char>(header.size() & 0xFF);
  out[sizeof kMagic + 1] = static_cast<unsigned char>(header.size() >> 8);
  std::memcpy(out.data() + kPreamble, header.data(), header.size());
  if (arr.dtype == Dtype::Float32) {
    for (double v : arr.data) append_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  } else {
    for (double v : arr.data) append_u64(out, std::bit_cast<std::uint64_t>(v));
  }
  return out;
}

inline std::vector<unsigned char> read_file_bytes(const std::filesystem::path& path) {
  std::error_code ec;
  if (!std::filesystem::exists(path, ec)) fail(ErrorCode::FileNotFound, "no such file: " + path.string());
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::IoFailure, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Writes through a temporary sibling and renames it into place.
inline void write_file_atomic(const std::filesystem::path& path, std::span<const unsigned char> bytes) {
  auto tmp = path;
  tmp += ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::IoFailure, "cannot open " + tmp.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) fail(ErrorCode::IoFailure, "write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    fail(ErrorCode::IoFailure, "cannot rename into " + path.string());
  }
}

inline void write_text_atomic(const std::filesystem::path& path, std::string_view text) {
  write_file_atomic(path, {reinterpret_cast<const unsigned char*>(text.data()), text.size()});
}

inline DenseArray load_array(const std::filesystem::path& path, const LoadOptions& opts = {}) {
  const auto bytes = read_file_bytes(path);
  try {
    return parse_array(bytes, opts);
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + e.detail());
  }
}

inline void save_array(const DenseArray& arr, const std::filesystem::path& path) {
  arr.validate(true);
  write_file_atomic(path, serialize_array(arr));
}

// ---------------------------------------------------------------------------
// Score tables

struct ScoreRecord {
  std::string sample_id;
  double clip_o = 0, clip_r = 0, clip_b = 0;
  std::optional<double> clip_s;
  double lpips_o = 0;
};

struct ScoreTable {
  std::vector<ScoreRecord> rows;
};

inline constexpr std::string_view kScoreColumns[] = {"sample_id", "clip_o", "clip_r", "clip_b", "clip_s", "lpips_o"};

namespace csv_detail {

// RFC-4180 record splitter: quoted fields, doubled quotes, CRLF or LF.
inline std::vector<std::vector<std::string>> parse(std::string_view text) {
  std::vector<std::vector<std::string>> records;
  if (text.substr(0, 3) == "\xEF\xBB\xBF") text.remove_prefix(3);
  std::vector<std::string> record;
  std::string field;
  bool quoted = false, field_started = false;
  std::size_t i = 0;
  auto end_record = [&] {
    record.push_back(std::move(field));
    field.clear();
    if (!(record.size() == 1 && record[0].empty() && !field_started)) records.push_back(std::move(record));
    record.clear();
    field_started = false;
  };
  while (i < text.size()) {
    const char c = text[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field += '"';
          i += 2;
          continue;
        }
        quoted = false;
      } else {
        field += c;
      }
      ++i;
      continue;
    }
    if (c == '"') {
      quoted = true;
      field_started = true;
    } else if (c == ',') {
      record.push_back(std::move(field));
      field.clear();
      field_started = true;
    } else if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') {
      end_record();
      ++i;
    } else if (c == '\n') {
      end_record();
    } else {
      field += c;
      field_started = true;
    }
    ++i;
  }
  if (quoted) fail(ErrorCode::NonNumericCell, "unterminated quoted field");
  if (field_started || !field.empty() || !record.empty()) end_record();
  return records;
}

inline std::optional<double> parse_number(std::string_view cell) {
  while (!cell.empty() && cell.front() == ' ') cell.remove_prefix(1);
  while (!cell.empty() && cell.back() == ' ') cell.remove_suffix(1);
  if (cell.empty()) return std::nullopt;
  if (cell.front() == '+') cell.remove_prefix(1);
  double v = 0;
  const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
  if (ec != std::errc{} || ptr != cell.data() + cell.size() || !std::isfinite(v))
    fail(ErrorCode::NonNumericCell, "'" + std::string(cell) + "' is not a finite number");
  return v;
}

inline std::string escape(std::string_view field) {
  if (field.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(field);
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

}  // namespace csv_detail

/// Shortest round-trip decimal representation.
inline std::string format_real(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

inline ScoreTable parse_scores(std::string_view text) {
  const auto records = csv_detail::parse(text);
  if (records.empty()) fail(ErrorCode::MissingColumn, "score file has no header row");
  const auto& header = records.front();
  for (std::size_t c = 0; c < std::size(kScoreColumns); ++c) {
    if (c >= header.size() || header[c] != kScoreColumns[c])
      fail(ErrorCode::MissingColumn, "expected column '" + std::string(kScoreColumns[c]) + "' at position " +
                                         std::to_string(c + 1));
  }
  if (header.size() != std::size(kScoreColumns))
    fail(ErrorCode::MissingColumn, "unexpected extra column '" + header[std::size(kScoreColumns)] + "'");

  ScoreTable table;
  std::unordered_set<std::string> seen;
  for (std::size_t r = 1; r < records.size(); ++r) {
    const auto& rec = records[r];
    const std::string where = "row " + std::to_string(r + 1);
    if (rec.size() != std::size(kScoreColumns))
      fail(ErrorCode::MissingColumn, where + " has " + std::to_string(rec.size()) + " cells, expected 6");
    ScoreRecord row;
    row.sample_id = rec[0];
    if (row.sample_id.empty()) fail(ErrorCode::InvalidValue, where + " has an empty sample_id");
    if (!seen.insert(row.sample_id).second)
      fail(ErrorCode::DuplicateSampleId, "sample_id '" + row.sample_id + "' appears more than once");
    auto required = [&](std::size_t c) {
      const auto v = csv_detail::parse_number(rec[c]);
      if (!v) fail(ErrorCode::NonNumericCell, where + " column " + std::string(kScoreColumns[c]) + " is empty");
      return *v;
    };
    row.clip_o = required(1);
    row.clip_r = required(2);
    row.clip_b = required(3);
    row.clip_s = csv_detail::parse_number(rec[4]);
    row.lpips_o = required(5);
    for (double v : {row.clip_o, row.clip_r, row.clip_b, row.clip_s.value_or(0.0)})
      if (v < -1.0 || v > 1.0) fail(ErrorCode::InvalidValue, where + ": cosine score outside [-1, 1]");
    if (row.lpips_o < 0.0 || row.lpips_o > 1.0) fail(ErrorCode::InvalidValue, where + ": lpips_o outside [0, 1]");
    table.rows.push_back(std::move(row));
  }
  return table;
}

inline ScoreTable load_scores(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  return parse_scores({reinterpret_cast<const char*>(bytes.data()), bytes.size()});
}

inline std::string serialize_scores(const ScoreTable& table) {
  std::string out = "sample_id,clip_o,clip_r,clip_b,clip_s,lpips_o\n";
  for (const auto& r : table.rows) {
    out += csv_detail::escape(r.sample_id);
    for (double v : {r.clip_o, r.clip_r, r.clip_b}) out += "," + format_real(v);
    out += ",";
    if (r.clip_s) out += format_real(*r.clip_s);
    out += "," + format_real(r.lpips_o) + "\n";
  }
  return out;
}

inline void save_scores(const ScoreTable& table, const std::filesystem::path& path) {
  write_text_atomic(path, serialize_scores(table));
}

}  // namespace attnblend

#endif  // ATTNBLEND_TENSOR_IO_HPP
