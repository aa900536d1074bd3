#pragma once

#include <cstdint>
#include <filesystem>
#include <variant>
#include <vector>

#include "mahakit/gaussian_model.hpp"
#include "mahakit/types.hpp"

namespace mahakit {

enum class Dtype { F4, F8, I8 };

const char* dtype_descr(Dtype dtype);  // "<f4", "<f8", "<i8"
Dtype parse_dtype(const std::string& descr);

struct NpyHeader {
  Dtype dtype = Dtype::F8;
  std::vector<std::int64_t> shape;  // one or two dimensions
  std::uint64_t data_offset = 0;    // byte offset of the payload

  std::int64_t element_count() const;
};

struct NpyArray {
  std::vector<std::int64_t> shape;
  Dtype dtype = Dtype::F8;  // dtype as stored on disk
  std::variant<std::vector<double>, std::vector<float>, std::vector<std::int64_t>> data;
};

struct ReadOptions {
  bool widen_f32 = true;  // convert "<f4" payloads to double on load
};

/// Version 1.0 files only. Errors name the file and the byte offset involved.
NpyHeader read_npy_header(const std::filesystem::path& path);
NpyArray read_array(const std::filesystem::path& path, ReadOptions options = {});

/// Two-dimensional floating array as a row-major matrix.
Matrix read_matrix(const std::filesystem::path& path);
/// One-dimensional floating array (a (1, n) or (n, 1) array is accepted too).
Vector read_vector(const std::filesystem::path& path);
/// One-dimensional integer array.
std::vector<std::int64_t> read_labels(const std::filesystem::path& path);

/// Writes through a temporary file in the same directory, then renames.
void write_array(const std::filesystem::path& path, const Matrix& values, Dtype dtype = Dtype::F8);
void write_vector(const std::filesystem::path& path, const Vector& values, Dtype dtype = Dtype::F8);
void write_labels(const std::filesystem::path& path, const std::vector<std::int64_t>& labels);

/// Streams rows of a two-dimensional floating file on demand.
class NpyRowReader final : public RowSource {
 public:
  explicit NpyRowReader(std::filesystem::path path);

  Index rows() const override { return static_cast<Index>(header_.shape[0]); }
  Index dim() const override { return static_cast<Index>(header_.shape[1]); }
  Matrix read_rows(Index begin, Index count) const override;

 private:
  std::filesystem::path path_;
  NpyHeader header_;
};

/// Atomic whole-file write used by every output path.
void write_file_atomic(const std::filesystem::path& path, const std::string& bytes);

}  // namespace mahakit
