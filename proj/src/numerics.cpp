// Copyright 2026 The saelab Authors
// SPDX-License-Identifier: Apache-2.0

#include "saelab/numerics.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <istream>
#include <numbers>
#include <numeric>
#include <ostream>
#include <string>

#include "saelab/errors.hpp"

namespace saelab {

static_assert(std::endian::native == std::endian::little,
              "matrix container assumes a little-endian host");

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> values)
    : rows_(rows), cols_(cols), data_(std::move(values)) {
  require(data_.size() == rows * cols, "matrix: value count does not match shape");
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::row_vector(std::span<const double> values) {
  return Matrix(1, values.size(), std::vector<double>(values.begin(), values.end()));
}

Matrix Matrix::transposed() const {
  Matrix t(cols_, rows_);
  for (std::size_t r = 0; r < rows_; ++r)
    for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
  return t;
}

bool Matrix::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

double Matrix::frobenius_norm() const noexcept { return std::sqrt(dot(data_, data_)); }

void Matrix::fill(double v) noexcept { std::fill(data_.begin(), data_.end(), v); }

Matrix& Matrix::operator*=(double s) noexcept {
  for (double& v : data_) v *= s;
  return *this;
}

Matrix& Matrix::operator+=(const Matrix& other) {
  require(rows_ == other.rows_ && cols_ == other.cols_, "matrix +=: shape mismatch");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

Matrix operator*(double s, Matrix m) {
  m *= s;
  return m;
}

Matrix operator-(const Matrix& a, const Matrix& b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "matrix -: shape mismatch");
  Matrix out = a;
  auto ov = out.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] -= bv[i];
  return out;
}

double dot(std::span<const double> a, std::span<const double> b) noexcept {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

void axpy(double alpha, std::span<const double> x, std::span<double> y) noexcept {
  const std::size_t n = x.size();
  const double* xp = x.data();
  double* yp = y.data();
  for (std::size_t i = 0; i < n; ++i) yp[i] += alpha * xp[i];
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  require(a.cols() == b.rows(), "matmul: inner dimensions differ");
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto orow = out.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik != 0.0) axpy(aik, b.row(k), orow);
    }
  }
  return out;
}

Matrix matmul_at(const Matrix& a, const Matrix& b) {
  require(a.rows() == b.rows(), "matmul_at: row counts differ");
  Matrix out(a.cols(), b.cols());
  for (std::size_t k = 0; k < a.rows(); ++k) {
    auto brow = b.row(k);
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const double aki = a(k, i);
      if (aki != 0.0) axpy(aki, brow, out.row(i));
    }
  }
  return out;
}

Matrix matmul_bt(const Matrix& a, const Matrix& b) {
  require(a.cols() == b.cols(), "matmul_bt: column counts differ");
  Matrix out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.rows(); ++j) out(i, j) = dot(a.row(i), b.row(j));
  return out;
}

namespace {

constexpr double kJacobiTolerance = 1e-12;
constexpr int kMaxSweeps = 100;

// Orthonormal columns for directions the data left empty.
void complete_basis(Matrix& basis_rows, std::vector<bool>& filled) {
  const std::size_t dim = basis_rows.cols();
  std::size_t probe = 0;
  for (std::size_t i = 0; i < basis_rows.rows(); ++i) {
    if (filled[i]) continue;
    for (; probe < dim; ++probe) {
      std::vector<double> cand(dim, 0.0);
      cand[probe] = 1.0;
      for (int pass = 0; pass < 2; ++pass) {
        for (std::size_t j = 0; j < basis_rows.rows(); ++j) {
          if (!filled[j]) continue;
          const double p = dot(cand, basis_rows.row(j));
          axpy(-p, basis_rows.row(j), cand);
        }
      }
      const double norm = std::sqrt(dot(cand, cand));
      if (norm > 0.5) {
        auto dst = basis_rows.row(i);
        for (std::size_t k = 0; k < dim; ++k) dst[k] = cand[k] / norm;
        filled[i] = true;
        ++probe;
        break;
      }
    }
  }
}

}  // namespace

SvdResult svd(const Matrix& m) {
  require(m.rows() >= 1 && m.cols() >= 1, "svd: empty matrix");
  require(m.all_finite(), "svd: non-finite entries");

  const bool flip = m.rows() < m.cols();
  // Columns of the working matrix are stored as rows for contiguous access.
  Matrix work = flip ? m : m.transposed();
  const std::size_t n = work.rows();  // number of columns being orthogonalised
  const std::size_t len = work.cols();
  Matrix vrows = Matrix::identity(n);

  for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
    bool rotated = false;
    for (std::size_t i = 0; i + 1 < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) {
        auto ci = work.row(i);
        auto cj = work.row(j);
        const double alpha = dot(ci, ci);
        const double beta = dot(cj, cj);
        const double gamma = dot(ci, cj);
        if (alpha == 0.0 || beta == 0.0) continue;
        if (std::abs(gamma) <= kJacobiTolerance * std::sqrt(alpha * beta)) continue;
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = (zeta >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (std::size_t k = 0; k < len; ++k) {
          const double xi = ci[k];
          const double xj = cj[k];
          ci[k] = c * xi - s * xj;
          cj[k] = s * xi + c * xj;
        }
        auto vi = vrows.row(i);
        auto vj = vrows.row(j);
        for (std::size_t k = 0; k < n; ++k) {
          const double xi = vi[k];
          const double xj = vj[k];
          vi[k] = c * xi - s * xj;
          vj[k] = s * xi + c * xj;
        }
      }
    }
    if (!rotated) break;
  }

  std::vector<double> sigma(n);
  for (std::size_t i = 0; i < n; ++i) sigma[i] = std::sqrt(dot(work.row(i), work.row(i)));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return sigma[a] > sigma[b]; });

  const double smax = sigma[order[0]];
  Matrix urows(n, len);
  Matrix vsorted(n, n);
  std::vector<bool> filled(n, false);
  SvdResult result;
  result.singular_values.resize(n);
  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t src = order[r];
    result.singular_values[r] = sigma[src];
    std::copy_n(vrows.row(src).begin(), n, vsorted.row(r).begin());
    if (sigma[src] > 0.0 && sigma[src] > 1e-15 * smax) {
      auto dst = urows.row(r);
      auto col = work.row(src);
      for (std::size_t k = 0; k < len; ++k) dst[k] = col[k] / sigma[src];
      filled[r] = true;
    }
  }
  complete_basis(urows, filled);

  if (flip) {
    result.left_vectors = vsorted.transposed();
    result.right_vectors = urows.transposed();
  } else {
    result.left_vectors = urows.transposed();
    result.right_vectors = vsorted.transposed();
  }
  return result;
}

double cosine_flat(const Matrix& a, const Matrix& b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "cosine_flat: shape mismatch");
  const double na = a.frobenius_norm();
  const double nb = b.frobenius_norm();
  if (na == 0.0 || nb == 0.0) throw DegenerateInput("cosine_flat: zero matrix");
  const double c = dot(a.values(), b.values()) / (na * nb);
  return std::clamp(c, -1.0, 1.0);
}

std::uint64_t splitmix64(std::uint64_t x) noexcept {
  std::uint64_t z = x + 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

RngStream::RngStream(std::uint64_t seed, std::uint64_t stream_id)
    : seed_(seed),
      stream_id_(stream_id),
      key_(splitmix64(seed ^ splitmix64(stream_id ^ 0x632be59bd9b4e019ULL))) {}

std::uint64_t RngStream::next_u64() noexcept {
  return splitmix64(key_ + counter_++ * 0x9e3779b97f4a7c15ULL);
}

double RngStream::uniform() noexcept {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RngStream::gaussian() noexcept {
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t RngStream::index(std::uint64_t n) noexcept {
  // Lemire's multiply-shift with rejection.
  const std::uint64_t threshold = (0 - n) % n;
  for (;;) {
    const unsigned __int128 product =
        static_cast<unsigned __int128>(next_u64()) * static_cast<unsigned __int128>(n);
    if (static_cast<std::uint64_t>(product) >= threshold)
      return static_cast<std::uint64_t>(product >> 64);
  }
}

RngStream RngStream::substream(std::uint64_t child_id) const noexcept {
  return RngStream(seed_, splitmix64(stream_id_ ^ splitmix64(child_id + 0x51ed270b27b1a3c5ULL)));
}

Matrix rng_draw(RngStream& stream, std::size_t rows, std::size_t cols, Distribution dist) {
  Matrix m(rows, cols);
  for (double& v : m.values())
    v = dist == Distribution::uniform ? stream.uniform() : stream.gaussian();
  return m;
}

void write_matrix(std::ostream& out, const Matrix& m) {
  const std::uint64_t header[2] = {m.rows(), m.cols()};
  out.write(reinterpret_cast<const char*>(header), sizeof(header));
  out.write(reinterpret_cast<const char*>(m.values().data()),
            static_cast<std::streamsize>(m.size() * sizeof(double)));
  if (!out) throw IoError("write_matrix: stream failure");
}

Matrix read_matrix(std::istream& in) {
  std::uint64_t header[2] = {0, 0};
  in.read(reinterpret_cast<char*>(header), sizeof(header));
  if (!in) throw IoError("read_matrix: truncated header");
  if (header[0] > (1ULL << 32) || header[1] > (1ULL << 32))
    throw IoError("read_matrix: implausible shape");
  std::vector<double> values(header[0] * header[1]);
  in.read(reinterpret_cast<char*>(values.data()),
          static_cast<std::streamsize>(values.size() * sizeof(double)));
  if (!in) throw IoError("read_matrix: truncated payload");
  return Matrix(header[0], header[1], std::move(values));
}

void save_matrix(const std::filesystem::path& path, const Matrix& m) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  write_matrix(out, m);
}

Matrix load_matrix(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return read_matrix(in);
}

}  // namespace saelab
