#pragma once

#include <cstddef>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace attngeom {

/// Thrown when matrix shapes are incompatible with an operation.
struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Dense row-major matrix of 64-bit floats. The single carrier for weights,
/// embeddings and score matrices throughout the library.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  static Matrix identity(std::size_t n);
  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }

  double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  const double* row_ptr(std::size_t i) const { return data_.data() + i * cols_; }
  double* row_ptr(std::size_t i) { return data_.data() + i * cols_; }

  bool same_shape(const Matrix& other) const {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }

  std::string shape_str() const;

  Matrix& operator+=(const Matrix& other);
  Matrix& operator-=(const Matrix& other);
  Matrix& operator*=(double c);

  /// this += c * other, elementwise.
  void add_scaled(const Matrix& other, double c);

  bool all_finite() const;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

Matrix operator+(Matrix a, const Matrix& b);
Matrix operator-(Matrix a, const Matrix& b);
Matrix operator*(Matrix a, double c);

/// Standard product, deterministic accumulation (ascending k for every entry).
Matrix matmul(const Matrix& a, const Matrix& b);

Matrix transpose(const Matrix& m);

/// Row-wise softmax with per-row max subtraction. Entries equal to -inf are
/// treated as masked and map to exactly zero.
Matrix row_softmax(const Matrix& m);

/// Splits a square matrix into (symmetric, skew-symmetric) parts,
/// M_s = (M + M^T)/2 and M_n = (M - M^T)/2.
std::pair<Matrix, Matrix> toeplitz_split(const Matrix& m);

double frobenius_norm(const Matrix& m);
double frobenius_norm_sq(const Matrix& m);

std::vector<double> row_norms(const Matrix& m);
std::vector<double> col_norms(const Matrix& m);

Matrix outer(const std::vector<double>& u, const std::vector<double>& v);

double dot(const std::vector<double>& u, const std::vector<double>& v);

double trace_of_product(const Matrix& a, const Matrix& b);

/// Eigenvalues and eigenvectors of a symmetric matrix (cyclic Jacobi).
/// Returns eigenvalues ascending; columns of the second element are the
/// matching eigenvectors.
std::pair<std::vector<double>, Matrix> sym_eig(const Matrix& m);

/// Singular values via eigenvalues of M^T M (descending).
std::vector<double> singular_values(const Matrix& m);

/// Number of singular values above tol * sigma_max.
std::size_t numerical_rank(const Matrix& m, double tol = 1e-9);

}  // namespace attngeom
