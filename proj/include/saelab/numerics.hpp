// Copyright 2026 The saelab Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef SAELAB_NUMERICS_HPP
#define SAELAB_NUMERICS_HPP

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <vector>

namespace saelab {

/// Dense row-major matrix of doubles. Vectors are stored as 1 x n matrices.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> values);

  static Matrix identity(std::size_t n);
  static Matrix row_vector(std::span<const double> values);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const {
    return {data_.data() + r * cols_, cols_};
  }
  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }

  Matrix transposed() const;
  bool all_finite() const noexcept;
  double frobenius_norm() const noexcept;
  void fill(double v) noexcept;
  /// Scales every entry in place.
  Matrix& operator*=(double s) noexcept;
  Matrix& operator+=(const Matrix& other);

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

Matrix operator*(double s, Matrix m);
Matrix operator-(const Matrix& a, const Matrix& b);

// Kernels. `out` rows follow `a`; all use axpy inner loops so results do not
// depend on vector width.

/// out = a * b  (a: m x k, b: k x n)
Matrix matmul(const Matrix& a, const Matrix& b);
/// out = a^T * b  (a: k x m, b: k x n)
Matrix matmul_at(const Matrix& a, const Matrix& b);
/// out = a * b^T  (a: m x k, b: n x k)
Matrix matmul_bt(const Matrix& a, const Matrix& b);

double dot(std::span<const double> a, std::span<const double> b) noexcept;
void axpy(double alpha, std::span<const double> x, std::span<double> y) noexcept;

struct SvdResult {
  std::vector<double> singular_values;  // descending
  Matrix left_vectors;                  // rows x r, orthonormal columns
  Matrix right_vectors;                 // cols x r, orthonormal columns
};

/// Thin SVD by one-sided Jacobi rotations. Throws InvalidInput on empty or
/// non-finite input.
SvdResult svd(const Matrix& m);

/// Cosine of the flattened matrices. Throws InvalidInput on shape mismatch and
/// DegenerateInput when either is all zero.
double cosine_flat(const Matrix& a, const Matrix& b);

/// Counter-based random stream. A draw is a pure function of
/// (seed, stream_id, counter), so streams can be split without shared state.
class RngStream {
 public:
  RngStream(std::uint64_t seed, std::uint64_t stream_id);

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t stream_id() const noexcept { return stream_id_; }
  std::uint64_t counter() const noexcept { return counter_; }

  std::uint64_t next_u64() noexcept;
  /// Uniform on [0, 1) with 53 random bits.
  double uniform() noexcept;
  double gaussian() noexcept;
  /// Uniform integer in [0, n). n must be positive.
  std::uint64_t index(std::uint64_t n) noexcept;
  /// Independent child stream; does not advance this stream.
  RngStream substream(std::uint64_t child_id) const noexcept;

 private:
  std::uint64_t seed_;
  std::uint64_t stream_id_;
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

enum class Distribution { uniform, gaussian };

Matrix rng_draw(RngStream& stream, std::size_t rows, std::size_t cols,
                Distribution dist);

std::uint64_t splitmix64(std::uint64_t x) noexcept;

// Flat binary container: rows, cols as u64 little-endian, then row-major f64.
void write_matrix(std::ostream& out, const Matrix& m);
Matrix read_matrix(std::istream& in);
void save_matrix(const std::filesystem::path& path, const Matrix& m);
Matrix load_matrix(const std::filesystem::path& path);

}  // namespace saelab

#endif  // SAELAB_NUMERICS_HPP
