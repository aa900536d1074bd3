#include "mahakit/npy.hpp"

#include <bit>
#include <cctype>
#include <cstring>
#include <fstream>
#include <sstream>
#include <unistd.h>

namespace mahakit {
namespace {

static_assert(std::endian::native == std::endian::little, "little-endian host required");

constexpr char kMagic[] = "\x93NUMPY";
constexpr std::size_t kMagicSize = 6;
constexpr std::size_t kPreambleSize = 10;

[[noreturn]] void fail(ErrorCode code, const std::filesystem::path& path, std::uint64_t offset,
                       const std::string& what) {
  throw Error(code, path.string() + " (byte " + std::to_string(offset) + "): " + what);
}

std::size_t item_size(Dtype dtype) { return dtype == Dtype::F4 ? 4 : 8; }

// Minimal reader for the Python literal dict that forms the header.
class HeaderParser {
 public:
  HeaderParser(std::string text, const std::filesystem::path& path, std::uint64_t offset)
      : text_(std::move(text)), path_(path), offset_(offset) {}

  NpyHeader parse() {
    std::optional<std::string> descr;
    std::optional<bool> fortran;
    std::optional<std::vector<std::int64_t>> shape;
    expect('{');
    while (true) {
      skip_space();
      if (peek() == '}') {
        ++pos_;
        break;
      }
      const std::string key = parse_string();
      expect(':');
      skip_space();
      if (key == "descr") {
        descr = parse_string();
      } else if (key == "fortran_order") {
        fortran = parse_bool();
      } else if (key == "shape") {
        shape = parse_tuple();
      } else {
        bad("unexpected header key '" + key + "'");
      }
      skip_space();
      if (peek() == ',') ++pos_;
    }
    if (!descr || !fortran || !shape) bad("header lacks descr, fortran_order or shape");

    NpyHeader header;
    try {
      header.dtype = parse_dtype(*descr);
    } catch (const Error&) {
      fail(ErrorCode::UnsupportedDtype, path_, offset_, "unsupported dtype '" + *descr + "'");
    }
    if (*fortran) {
      fail(ErrorCode::FortranOrderUnsupported, path_, offset_, "fortran_order arrays are not supported");
    }
    if (shape->empty() || shape->size() > 2) {
      fail(ErrorCode::UnsupportedShape, path_, offset_,
           "arrays must have one or two dimensions, got " + std::to_string(shape->size()));
    }
    header.shape = *shape;
    return header;
  }

 private:
  [[noreturn]] void bad(const std::string& what) {
    fail(ErrorCode::BadHeader, path_, offset_ + pos_, what);
  }
  char peek() {
    if (pos_ >= text_.size()) bad("header ends unexpectedly");
    return text_[pos_];
  }
  void skip_space() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
  }
  void expect(char c) {
    skip_space();
    if (peek() != c) bad(std::string("expected '") + c + "'");
    ++pos_;
  }
  std::string parse_string() {
    skip_space();
    const char quote = peek();
    if (quote != '\'' && quote != '"') bad("expected a quoted string");
    const auto end = text_.find(quote, pos_ + 1);
    if (end == std::string::npos) bad("unterminated string");
    std::string out = text_.substr(pos_ + 1, end - pos_ - 1);
    pos_ = end + 1;
    return out;
  }
  bool parse_bool() {
    if (text_.compare(pos_, 4, "True") == 0) {
      pos_ += 4;
      return true;
    }
    if (text_.compare(pos_, 5, "False") == 0) {
      pos_ += 5;
      return false;
    }
    bad("expected True or False");
  }
  std::vector<std::int64_t> parse_tuple() {
    expect('(');
    std::vector<std::int64_t> dims;
    while (true) {
      skip_space();
      if (peek() == ')') {
        ++pos_;
        return dims;
      }
      std::size_t used = 0;
      std::int64_t value = 0;
      try {
        value = std::stoll(text_.substr(pos_), &used);
      } catch (const std::exception&) {
        bad("bad shape entry");
      }
      if (value < 0) bad("negative shape entry");
      dims.push_back(value);
      pos_ += used;
      skip_space();
      if (peek() == ',') ++pos_;
    }
  }

  std::string text_;
  const std::filesystem::path& path_;
  std::uint64_t offset_;
  std::size_t pos_ = 0;
};

std::string header_bytes(Dtype dtype, const std::vector<std::int64_t>& shape) {
  std::ostringstream dict;
  dict << "{'descr': '" << dtype_descr(dtype) << "', 'fortran_order': False, 'shape': (";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    dict << shape[i] << (shape.size() == 1 || i + 1 < shape.size() ? "," : "");
    if (i + 1 < shape.size()) dict << ' ';
  }
  dict << "), }";
  std::string text = dict.str();
  const std::size_t unpadded = kPreambleSize + text.size() + 1;
  text.append((64 - unpadded % 64) % 64, ' ');
  text.push_back('\n');

  std::string out(kMagic, kMagicSize);
  out.push_back('\x01');
  out.push_back('\x00');
  const auto length = static_cast<std::uint16_t>(text.size());
  out.push_back(static_cast<char>(length & 0xff));
  out.push_back(static_cast<char>(length >> 8));
  return out + text;
}

template <class T>
void append_raw(std::string& out, const T& value) {
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.append(buf, sizeof(T));
}

std::string encode(const double* values, std::size_t n, Dtype dtype) {
  std::string out;
  out.reserve(n * item_size(dtype));
  for (std::size_t i = 0; i < n; ++i) {
    switch (dtype) {
      case Dtype::F8: append_raw(out, values[i]); break;
      case Dtype::F4: append_raw(out, static_cast<float>(values[i])); break;
      case Dtype::I8: append_raw(out, static_cast<std::int64_t>(values[i])); break;
    }
  }
  return out;
}

std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, path.string() + ": cannot open for reading");
  return in;
}

}  // namespace

const char* dtype_descr(Dtype dtype) {
  switch (dtype) {
    case Dtype::F4: return "<f4";
    case Dtype::F8: return "<f8";
    case Dtype::I8: return "<i8";
  }
  return "?";
}

Dtype parse_dtype(const std::string& descr) {
  if (descr == "<f4") return Dtype::F4;
  if (descr == "<f8") return Dtype::F8;
  if (descr == "<i8") return Dtype::I8;
  throw Error(ErrorCode::UnsupportedDtype, "unsupported dtype '" + descr + "'");
}

std::int64_t NpyHeader::element_count() const {
  std::int64_t n = 1;
  for (auto s : shape) n *= s;
  return n;
}

NpyHeader read_npy_header(const std::filesystem::path& path) {
  std::ifstream in = open_input(path);
  char preamble[kPreambleSize];
  in.read(preamble, kPreambleSize);
  const auto got = static_cast<std::size_t>(in.gcount());
  if (got < kMagicSize || std::memcmp(preamble, kMagic, kMagicSize) != 0) {
    fail(ErrorCode::BadMagic, path, 0, "not an NPY file");
  }
  if (got < kPreambleSize) fail(ErrorCode::TruncatedPayload, path, got, "file ends inside the preamble");
  if (preamble[6] != 1 || preamble[7] != 0) {
    fail(ErrorCode::UnsupportedVersion, path, 6,
         "format version " + std::to_string(static_cast<int>(preamble[6])) + "." +
             std::to_string(static_cast<int>(preamble[7])) + " is not supported (need 1.0)");
  }
  const std::size_t header_len = static_cast<unsigned char>(preamble[8]) |
                                 (static_cast<std::size_t>(static_cast<unsigned char>(preamble[9])) << 8);
  std::string text(header_len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(header_len));
  if (static_cast<std::size_t>(in.gcount()) != header_len) {
    fail(ErrorCode::TruncatedPayload, path, kPreambleSize + static_cast<std::size_t>(in.gcount()),
         "file ends inside the header");
  }
  NpyHeader header = HeaderParser(text, path, kPreambleSize).parse();
  header.data_offset = kPreambleSize + header_len;

  const auto file_size = std::filesystem::file_size(path);
  const std::uint64_t need =
      header.data_offset + static_cast<std::uint64_t>(header.element_count()) * item_size(header.dtype);
  if (file_size < need) {
    fail(ErrorCode::TruncatedPayload, path, file_size,
         "payload needs " + std::to_string(need - header.data_offset) + " bytes, file has " +
             std::to_string(file_size - header.data_offset));
  }
  return header;
}

NpyArray read_array(const std::filesystem::path& path, ReadOptions options) {
  const NpyHeader header = read_npy_header(path);
  std::ifstream in = open_input(path);
  in.seekg(static_cast<std::streamoff>(header.data_offset));
  const auto n = static_cast<std::size_t>(header.element_count());
  NpyArray out;
  out.shape = header.shape;
  out.dtype = header.dtype;
  auto read_into = [&](auto& vec) {
    in.read(reinterpret_cast<char*>(vec.data()),
            static_cast<std::streamsize>(vec.size() * sizeof(vec[0])));
    if (static_cast<std::size_t>(in.gcount()) != vec.size() * sizeof(vec[0])) {
      fail(ErrorCode::TruncatedPayload, path, header.data_offset + static_cast<std::size_t>(in.gcount()),
           "payload ends early");
    }
  };
  switch (header.dtype) {
    case Dtype::F8: {
      std::vector<double> v(n);
      read_into(v);
      out.data = std::move(v);
      break;
    }
    case Dtype::F4: {
      std::vector<float> v(n);
      read_into(v);
      if (options.widen_f32) {
        out.data = std::vector<double>(v.begin(), v.end());
      } else {
        out.data = std::move(v);
      }
      break;
    }
    case Dtype::I8: {
      std::vector<std::int64_t> v(n);
      read_into(v);
      out.data = std::move(v);
      break;
    }
  }
  return out;
}

Matrix read_matrix(const std::filesystem::path& path) {
  NpyArray a = read_array(path);
  if (a.shape.size() != 2) {
    throw Error(ErrorCode::UnsupportedShape, path.string() + ": expected a two-dimensional array");
  }
  const auto* values = std::get_if<std::vector<double>>(&a.data);
  if (values == nullptr) {
    throw Error(ErrorCode::UnsupportedDtype, path.string() + ": expected floating-point values");
  }
  Matrix out(static_cast<Index>(a.shape[0]), static_cast<Index>(a.shape[1]));
  std::copy(values->begin(), values->end(), out.data());
  return out;
}

Vector read_vector(const std::filesystem::path& path) {
  NpyArray a = read_array(path);
  if (a.shape.size() == 2 && a.shape[0] != 1 && a.shape[1] != 1) {
    throw Error(ErrorCode::UnsupportedShape, path.string() + ": expected a one-dimensional array");
  }
  const auto* values = std::get_if<std::vector<double>>(&a.data);
  if (values == nullptr) {
    throw Error(ErrorCode::UnsupportedDtype, path.string() + ": expected floating-point values");
  }
  return Eigen::Map<const Vector>(values->data(), static_cast<Index>(values->size()));
}

std::vector<std::int64_t> read_labels(const std::filesystem::path& path) {
  NpyArray a = read_array(path);
  if (a.shape.size() != 1) {
    throw Error(ErrorCode::UnsupportedShape, path.string() + ": labels must be one-dimensional");
  }
  auto* values = std::get_if<std::vector<std::int64_t>>(&a.data);
  if (values == nullptr) {
    throw Error(ErrorCode::UnsupportedDtype, path.string() + ": labels must be \"<i8\"");
  }
  return std::move(*values);
}

void write_file_atomic(const std::filesystem::path& path, const std::string& bytes) {
  const std::filesystem::path temp =
      path.string() + ".tmp." + std::to_string(static_cast<long>(::getpid()));
  {
    std::ofstream out(temp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::IoError, temp.string() + ": cannot open for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw Error(ErrorCode::IoError, temp.string() + ": write failed");
  }
  std::error_code ec;
  std::filesystem::rename(temp, path, ec);
  if (ec) {
    std::filesystem::remove(temp, ec);
    throw Error(ErrorCode::IoError, path.string() + ": rename failed");
  }
}

void write_array(const std::filesystem::path& path, const Matrix& values, Dtype dtype) {
  write_file_atomic(path, header_bytes(dtype, {values.rows(), values.cols()}) +
                              encode(values.data(), static_cast<std::size_t>(values.size()), dtype));
}

void write_vector(const std::filesystem::path& path, const Vector& values, Dtype dtype) {
  write_file_atomic(path, header_bytes(dtype, {values.size()}) +
                              encode(values.data(), static_cast<std::size_t>(values.size()), dtype));
}

void write_labels(const std::filesystem::path& path, const std::vector<std::int64_t>& labels) {
  std::string payload;
  payload.reserve(labels.size() * 8);
  for (auto v : labels) append_raw(payload, v);
  write_file_atomic(path, header_bytes(Dtype::I8, {static_cast<std::int64_t>(labels.size())}) + payload);
}

NpyRowReader::NpyRowReader(std::filesystem::path path)
    : path_(std::move(path)), header_(read_npy_header(path_)) {
  if (header_.shape.size() != 2) {
    throw Error(ErrorCode::UnsupportedShape, path_.string() + ": expected a two-dimensional array");
  }
  if (header_.dtype == Dtype::I8) {
    throw Error(ErrorCode::UnsupportedDtype, path_.string() + ": expected floating-point values");
  }
}

Matrix NpyRowReader::read_rows(Index begin, Index count) const {
  const Index d = dim();
  const std::size_t size = item_size(header_.dtype);
  std::ifstream in = open_input(path_);
  in.seekg(static_cast<std::streamoff>(header_.data_offset +
                                       static_cast<std::uint64_t>(begin * d) * size));
  const auto n = static_cast<std::size_t>(count * d);
  Matrix out(count, d);
  if (header_.dtype == Dtype::F8) {
    in.read(reinterpret_cast<char*>(out.data()), static_cast<std::streamsize>(n * size));
  } else {
    std::vector<float> buffer(n);
    in.read(reinterpret_cast<char*>(buffer.data()), static_cast<std::streamsize>(n * size));
    std::copy(buffer.begin(), buffer.end(), out.data());
  }
  if (static_cast<std::size_t>(in.gcount()) != n * size) {
    fail(ErrorCode::TruncatedPayload, path_, header_.data_offset, "payload ends early");
  }
  if (!out.allFinite()) {
    throw Error(ErrorCode::NonFinite, path_.string() + ": non-finite feature values in rows " +
                                          std::to_string(begin) + ".." + std::to_string(begin + count));
  }
  return out;
}

}  // namespace mahakit
