#include "attngeom/matrix.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace attngeom {

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.begin()->size();
  Matrix m(r, c);
  std::size_t i = 0;
  for (const auto& row : rows) {
    if (row.size() != c) throw ShapeError("from_rows: ragged row lengths");
    std::size_t j = 0;
    for (double v : row) m(i, j++) = v;
    ++i;
  }
  return m;
}

std::string Matrix::shape_str() const {
  return std::to_string(rows_) + "x" + std::to_string(cols_);
}

Matrix& Matrix::operator+=(const Matrix& other) {
  if (!same_shape(other))
    throw ShapeError("elementwise add: " + shape_str() + " vs " + other.shape_str());
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

Matrix& Matrix::operator-=(const Matrix& other) {
  if (!same_shape(other))
    throw ShapeError("elementwise sub: " + shape_str() + " vs " + other.shape_str());
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= other.data_[i];
  return *this;
}

Matrix& Matrix::operator*=(double c) {
  for (double& v : data_) v *= c;
  return *this;
}

void Matrix::add_scaled(const Matrix& other, double c) {
  if (!same_shape(other))
    throw ShapeError("add_scaled: " + shape_str() + " vs " + other.shape_str());
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += c * other.data_[i];
}

bool Matrix::all_finite() const {
  for (double v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

Matrix operator+(Matrix a, const Matrix& b) { return a += b; }
Matrix operator-(Matrix a, const Matrix& b) { return a -= b; }
Matrix operator*(Matrix a, double c) { return a *= c; }

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows())
    throw ShapeError("matmul: " + a.shape_str() + " x " + b.shape_str());
  Matrix c(a.rows(), b.cols());
  const std::size_t n = a.rows(), k_dim = a.cols(), m = b.cols();
  // ikj order: row-major friendly, each c(i,j) accumulates over ascending k.
  for (std::size_t i = 0; i < n; ++i) {
    double* ci = c.row_ptr(i);
    for (std::size_t k = 0; k < k_dim; ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      const double* bk = b.row_ptr(k);
      for (std::size_t j = 0; j < m; ++j) ci[j] += aik * bk[j];
    }
  }
  return c;
}

Matrix transpose(const Matrix& m) {
  Matrix t(m.cols(), m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) t(j, i) = m(i, j);
  return t;
}

Matrix row_softmax(const Matrix& m) {
  Matrix out(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < m.cols(); ++j) mx = std::max(mx, m(i, j));
    double sum = 0.0;
    for (std::size_t j = 0; j < m.cols(); ++j) {
      const double v = m(i, j);
      const double e = std::isinf(v) && v < 0 ? 0.0 : std::exp(v - mx);
      out(i, j) = e;
      sum += e;
    }
    for (std::size_t j = 0; j < m.cols(); ++j) out(i, j) /= sum;
  }
  return out;
}

std::pair<Matrix, Matrix> toeplitz_split(const Matrix& m) {
  if (m.rows() != m.cols())
    throw ShapeError("toeplitz_split: matrix must be square, got " + m.shape_str());
  const std::size_t n = m.rows();
  Matrix s(n, n), k(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      s(i, j) = 0.5 * (m(i, j) + m(j, i));
      k(i, j) = 0.5 * (m(i, j) - m(j, i));
    }
  return {std::move(s), std::move(k)};
}

double frobenius_norm_sq(const Matrix& m) {
  double acc = 0.0;
  for (double v : m.data()) acc += v * v;
  return acc;
}

double frobenius_norm(const Matrix& m) { return std::sqrt(frobenius_norm_sq(m)); }

std::vector<double> row_norms(const Matrix& m) {
  std::vector<double> out(m.rows(), 0.0);
  for (std::size_t i = 0; i < m.rows(); ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < m.cols(); ++j) acc += m(i, j) * m(i, j);
    out[i] = std::sqrt(acc);
  }
  return out;
}

std::vector<double> col_norms(const Matrix& m) {
  std::vector<double> acc(m.cols(), 0.0);
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) acc[j] += m(i, j) * m(i, j);
  for (double& v : acc) v = std::sqrt(v);
  return acc;
}

Matrix outer(const std::vector<double>& u, const std::vector<double>& v) {
  Matrix m(u.size(), v.size());
  for (std::size_t i = 0; i < u.size(); ++i)
    for (std::size_t j = 0; j < v.size(); ++j) m(i, j) = u[i] * v[j];
  return m;
}

double dot(const std::vector<double>& u, const std::vector<double>& v) {
  if (u.size() != v.size()) throw ShapeError("dot: length mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) acc += u[i] * v[i];
  return acc;
}

double trace_of_product(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows() || a.rows() != b.cols())
    throw ShapeError("trace_of_product: " + a.shape_str() + " x " + b.shape_str());
  double acc = 0.0;
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t k = 0; k < a.cols(); ++k) acc += a(i, k) * b(k, i);
  return acc;
}

std::pair<std::vector<double>, Matrix> sym_eig(const Matrix& m) {
  if (m.rows() != m.cols()) throw ShapeError("sym_eig: matrix must be square");
  const std::size_t n = m.rows();
  Matrix a = m;
  Matrix v = Matrix::identity(n);
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
    if (off < 1e-26 * std::max(1.0, frobenius_norm_sq(a))) break;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        if (std::abs(a(p, q)) < 1e-300) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * a(p, q));
        const double t = (theta >= 0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v(k, p), vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](std::size_t x, std::size_t y) { return a(x, x) < a(y, y); });
  std::vector<double> evals(n);
  Matrix evecs(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    evals[j] = a(order[j], order[j]);
    for (std::size_t i = 0; i < n; ++i) evecs(i, j) = v(i, order[j]);
  }
  return {std::move(evals), std::move(evecs)};
}

std::vector<double> singular_values(const Matrix& m) {
  const Matrix gram = matmul(transpose(m), m);
  auto [evals, evecs] = sym_eig(gram);
  (void)evecs;
  std::vector<double> sv(evals.size());
  for (std::size_t i = 0; i < evals.size(); ++i)
    sv[evals.size() - 1 - i] = std::sqrt(std::max(0.0, evals[i]));
  return sv;
}

std::size_t numerical_rank(const Matrix& m, double tol) {
  // Gaussian elimination with full pivoting: eliminating below the true rank
  // leaves only round-off-sized entries, so a relative pivot threshold is a
  // far sharper rank detector than singular values computed through M^T M.
  Matrix a = m;
  const std::size_t rows = a.rows(), cols = a.cols();
  const std::size_t steps = std::min(rows, cols);
  double first_pivot = 0.0;
  std::size_t rank = 0;
  for (std::size_t step = 0; step < steps; ++step) {
    std::size_t pi = step, pj = step;
    double best = 0.0;
    for (std::size_t i = step; i < rows; ++i)
      for (std::size_t j = step; j < cols; ++j)
        if (std::abs(a(i, j)) > best) {
          best = std::abs(a(i, j));
          pi = i;
          pj = j;
        }
    if (step == 0) first_pivot = best;
    if (best == 0.0 || best <= tol * first_pivot) break;
    ++rank;
    if (pi != step)
      for (std::size_t j = 0; j < cols; ++j) std::swap(a(step, j), a(pi, j));
    if (pj != step)
      for (std::size_t i = 0; i < rows; ++i) std::swap(a(i, step), a(i, pj));
    for (std::size_t i = step + 1; i < rows; ++i) {
      const double f = a(i, step) / a(step, step);
      if (f == 0.0) continue;
      for (std::size_t j = step; j < cols; ++j) a(i, j) -= f * a(step, j);
    }
  }
  return rank;
}

}  // namespace attngeom
