#ifndef ATTNBLEND_ARRAY_HPP
#define ATTNBLEND_ARRAY_HPP

#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "attnblend/error.hpp"

namespace attnblend {

enum class Dtype { Float32, Float64 };

constexpr std::size_t dtype_size(Dtype d) noexcept { return d == Dtype::Float32 ? 4 : 8; }

inline std::string shape_string(const std::vector<std::size_t>& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + ")";
}

inline std::size_t shape_product(const std::vector<std::size_t>& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         [](std::size_t a, std::size_t b) { return a * b; });
}

/// N-dimensional row-major array of reals. Values are held as double; the
/// dtype records the on-disk precision so a save reproduces the input bytes.
struct DenseArray {
  std::vector<std::size_t> shape;
  Dtype dtype = Dtype::Float64;
  std::vector<double> data;
  // Set when the source file was column-major and was transposed on load.
  bool transposed_on_load = false;

  DenseArray() = default;
  DenseArray(std::vector<std::size_t> s, Dtype d, std::vector<double> values)
      : shape(std::move(s)), dtype(d), data(std::move(values)) {
    validate();
  }
  DenseArray(std::vector<std::size_t> s, Dtype d)
      : shape(std::move(s)), dtype(d), data(shape_product(shape), 0.0) {}

  std::size_t size() const noexcept { return data.size(); }
  std::size_t ndim() const noexcept { return shape.size(); }

  void validate(bool allow_nonfinite = false) const {
    require(shape_product(shape) == data.size(), ErrorCode::InvalidShape,
            "shape " + shape_string(shape) + " does not match " + std::to_string(data.size()) +
                " elements");
    if (!allow_nonfinite) {
      for (double v : data) require(std::isfinite(v), ErrorCode::NonFinite, "array contains NaN or infinity");
    }
  }

  friend bool operator==(const DenseArray& a, const DenseArray& b) {
    return a.shape == b.shape && a.dtype == b.dtype && a.data == b.data;
  }
};

/// Dense row-major 2-D matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> values)
      : rows_(rows), cols_(cols), data_(std::move(values)) {
    require(data_.size() == rows_ * cols_, ErrorCode::InvalidShape,
            "matrix data length does not match " + std::to_string(rows) + "x" + std::to_string(cols));
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }

  double& operator()(std::size_t i, std::size_t j) noexcept { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const noexcept { return data_[i * cols_ + j]; }

  std::span<double> row(std::size_t i) noexcept { return {data_.data() + i * cols_, cols_}; }
  std::span<const double> row(std::size_t i) const noexcept { return {data_.data() + i * cols_, cols_}; }

  std::vector<double>& values() noexcept { return data_; }
  const std::vector<double>& values() const noexcept { return data_; }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// N×D token features (concatenated multi-head output or latent embeddings).
using FeatureMatrix = Matrix;

inline Matrix to_matrix(const DenseArray& arr) {
  require(arr.ndim() == 2, ErrorCode::InvalidShape,
          "expected a 2-D array, got shape " + shape_string(arr.shape));
  return Matrix(arr.shape[0], arr.shape[1], arr.data);
}

inline DenseArray to_array(const Matrix& m, Dtype dtype = Dtype::Float64) {
  DenseArray out;
  out.shape = {m.rows(), m.cols()};
  out.dtype = dtype;
  out.data = m.values();
  return out;
}

inline void require_finite(const Matrix& m, const std::string& what) {
  for (double v : m.values()) require(std::isfinite(v), ErrorCode::NonFinite, what + " contains NaN or infinity");
}

}  // namespace attnblend

#endif  // ATTNBLEND_ARRAY_HPP
