#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

namespace msense {

using Vector = std::vector<double>;

/// Small dense row-major matrix of doubles.
///
/// Sized for the desk-scale problems handled here (a few hundred rows at
/// most); products use a plain i-k-j loop, no blocking.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols);
  /// Takes ownership of `entries` (row-major). Throws ShapeMismatch on a
  /// length mismatch and NonFinite if any entry is NaN or infinite.
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> entries);

  static Matrix zeros(std::size_t rows, std::size_t cols) { return Matrix(rows, cols); }
  static Matrix identity(std::size_t n);
  /// rows x cols matrix with `diag` on the main diagonal.
  static Matrix diagonal(std::span<const double> diag, std::size_t rows, std::size_t cols);
  static Matrix diagonal(std::span<const double> diag) {
    return diagonal(diag, diag.size(), diag.size());
  }
  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool empty() const { return rows_ == 0 || cols_ == 0; }
  bool square() const { return rows_ == cols_; }

  double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

  std::span<double> row(std::size_t i) { return {data_.data() + i * cols_, cols_}; }
  std::span<const double> row(std::size_t i) const { return {data_.data() + i * cols_, cols_}; }
  Vector col(std::size_t j) const;
  void set_col(std::size_t j, std::span<const double> v);

  const std::vector<double>& entries() const { return data_; }
  std::span<double> data() { return data_; }

  Matrix transpose() const;
  /// Rows [begin, begin + count).
  Matrix row_block(std::size_t begin, std::size_t count) const;
  /// Columns [begin, begin + count).
  Matrix col_block(std::size_t begin, std::size_t count) const;
  bool all_finite() const;

  Matrix& operator+=(const Matrix& other);
  Matrix& operator-=(const Matrix& other);
  Matrix& operator*=(double s);

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

Matrix operator+(Matrix a, const Matrix& b);
Matrix operator-(Matrix a, const Matrix& b);
Matrix operator-(Matrix a);
Matrix operator*(Matrix a, double s);
Matrix operator*(double s, Matrix a);
/// Matrix product. Throws ShapeMismatch.
Matrix operator*(const Matrix& a, const Matrix& b);
Vector operator*(const Matrix& a, std::span<const double> x);

/// a^T b without forming the transpose.
Matrix transpose_times(const Matrix& a, const Matrix& b);
/// a b^T without forming the transpose.
Matrix times_transpose(const Matrix& a, const Matrix& b);

/// [top; bottom]
Matrix vstack(const Matrix& top, const Matrix& bottom);

double frobenius_norm(const Matrix& m);
/// Sum of elementwise products.
double frobenius_inner(const Matrix& a, const Matrix& b);
double max_abs(const Matrix& m);
/// (M + M^T) / 2
Matrix symmetrize(const Matrix& m);

double dot(std::span<const double> a, std::span<const double> b);
double norm2(std::span<const double> v);

}  // namespace msense
