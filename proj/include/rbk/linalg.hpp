#ifndef RBK_LINALG_HPP
#define RBK_LINALG_HPP

// Dense and compressed-sparse kernels for reduced-basis kriging.
//
// All m x m objects (K, R1, D*, the Woodbury core) are stored dense in
// column-major order; only n-dimensional objects (the basis matrices S and A)
// are sparse. Nothing here ever forms an n x n matrix.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <istream>
#include <numeric>
#include <ostream>
#include <span>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "rbk/error.hpp"

namespace rbk {

using Vector = std::vector<double>;

inline double dot(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size(), ErrorKind::dimension_mismatch, "dot: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

// ---------------------------------------------------------------------------
// DenseMatrix
// ---------------------------------------------------------------------------

class DenseMatrix {
 public:
  DenseMatrix() = default;
  DenseMatrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), values_(rows * cols, fill) {}

  static DenseMatrix identity(std::size_t n, double scale = 1.0) {
    DenseMatrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = scale;
    return m;
  }

  /// Builds from row-major nested initializer data (convenient in tests).
  static DenseMatrix from_rows(const std::vector<std::vector<double>>& rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r == 0 ? 0 : rows.front().size();
    DenseMatrix m(r, c);
    for (std::size_t i = 0; i < r; ++i) {
      require(rows[i].size() == c, ErrorKind::dimension_mismatch, "from_rows: ragged rows");
      for (std::size_t j = 0; j < c; ++j) m(i, j) = rows[i][j];
    }
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }

  double& operator()(std::size_t i, std::size_t j) noexcept { return values_[j * rows_ + i]; }
  double operator()(std::size_t i, std::size_t j) const noexcept { return values_[j * rows_ + i]; }

  std::span<double> col(std::size_t j) noexcept { return {values_.data() + j * rows_, rows_}; }
  std::span<const double> col(std::size_t j) const noexcept {
    return {values_.data() + j * rows_, rows_};
  }

  const std::vector<double>& values() const noexcept { return values_; }
  std::vector<double>& values() noexcept { return values_; }

  DenseMatrix transpose() const {
    DenseMatrix t(cols_, rows_);
    for (std::size_t j = 0; j < cols_; ++j)
      for (std::size_t i = 0; i < rows_; ++i) t(j, i) = (*this)(i, j);
    return t;
  }

  double trace() const {
    double s = 0.0;
    for (std::size_t i = 0; i < std::min(rows_, cols_); ++i) s += (*this)(i, i);
    return s;
  }

  double frobenius_norm() const {
    double s = 0.0;
    for (double v : values_) s += v * v;
    return std::sqrt(s);
  }

  double max_abs() const {
    double s = 0.0;
    for (double v : values_) s = std::max(s, std::abs(v));
    return s;
  }

  /// (M + M') / 2 in place; requires a square matrix.
  void symmetrize() {
    require(rows_ == cols_, ErrorKind::dimension_mismatch, "symmetrize: not square");
    for (std::size_t j = 0; j < cols_; ++j)
      for (std::size_t i = j + 1; i < rows_; ++i) {
        const double avg = 0.5 * ((*this)(i, j) + (*this)(j, i));
        (*this)(i, j) = avg;
        (*this)(j, i) = avg;
      }
  }

  DenseMatrix& operator+=(const DenseMatrix& o) {
    require(rows_ == o.rows_ && cols_ == o.cols_, ErrorKind::dimension_mismatch, "+=: shape");
    for (std::size_t k = 0; k < values_.size(); ++k) values_[k] += o.values_[k];
    return *this;
  }
  DenseMatrix& operator-=(const DenseMatrix& o) {
    require(rows_ == o.rows_ && cols_ == o.cols_, ErrorKind::dimension_mismatch, "-=: shape");
    for (std::size_t k = 0; k < values_.size(); ++k) values_[k] -= o.values_[k];
    return *this;
  }
  DenseMatrix& operator*=(double s) {
    for (double& v : values_) v *= s;
    return *this;
  }

  friend DenseMatrix operator+(DenseMatrix a, const DenseMatrix& b) { return a += b; }
  friend DenseMatrix operator-(DenseMatrix a, const DenseMatrix& b) { return a -= b; }
  friend DenseMatrix operator*(DenseMatrix a, double s) { return a *= s; }
  friend DenseMatrix operator*(double s, DenseMatrix a) { return a *= s; }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> values_;
};

inline DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b) {
  require(a.cols() == b.rows(), ErrorKind::dimension_mismatch, "matmul: inner dimensions");
  DenseMatrix c(a.rows(), b.cols());
  for (std::size_t j = 0; j < b.cols(); ++j)
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double bkj = b(k, j);
      if (bkj == 0.0) continue;
      for (std::size_t i = 0; i < a.rows(); ++i) c(i, j) += a(i, k) * bkj;
    }
  return c;
}

inline Vector matvec(const DenseMatrix& a, std::span<const double> v) {
  require(a.cols() == v.size(), ErrorKind::dimension_mismatch, "matvec: length");
  Vector out(a.rows(), 0.0);
  for (std::size_t j = 0; j < a.cols(); ++j) {
    const double vj = v[j];
    if (vj == 0.0) continue;
    for (std::size_t i = 0; i < a.rows(); ++i) out[i] += a(i, j) * vj;
  }
  return out;
}

inline Vector matvec_t(const DenseMatrix& a, std::span<const double> v) {
  require(a.rows() == v.size(), ErrorKind::dimension_mismatch, "matvec_t: length");
  Vector out(a.cols(), 0.0);
  for (std::size_t j = 0; j < a.cols(); ++j) out[j] = dot(a.col(j), v);
  return out;
}

// ---------------------------------------------------------------------------
// SparseMatrix (compressed sparse column)
// ---------------------------------------------------------------------------

struct Triplet {
  std::size_t row;
  std::size_t col;
  double value;
};

class SparseMatrix {
 public:
  SparseMatrix() : colptr_(1, 0) {}
  SparseMatrix(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), colptr_(cols + 1, 0) {}

  /// Canonical CSC from unordered triplets: duplicates are summed, exact
  /// zeros are dropped, row indices sorted within each column.
  static SparseMatrix from_triplets(std::size_t rows, std::size_t cols, std::vector<Triplet> trips) {
    for (const auto& t : trips)
      require(t.row < rows && t.col < cols, ErrorKind::dimension_mismatch,
              "from_triplets: index out of range");
    std::sort(trips.begin(), trips.end(), [](const Triplet& a, const Triplet& b) {
      return std::tie(a.col, a.row) < std::tie(b.col, b.row);
    });
    SparseMatrix s(rows, cols);
    std::size_t k = 0;
    for (std::size_t j = 0; j < cols; ++j) {
      while (k < trips.size() && trips[k].col == j) {
        const std::size_t r = trips[k].row;
        double v = 0.0;
        while (k < trips.size() && trips[k].col == j && trips[k].row == r) v += trips[k++].value;
        if (v != 0.0) {
          s.rowind_.push_back(r);
          s.values_.push_back(v);
        }
      }
      s.colptr_[j + 1] = s.rowind_.size();
    }
    return s;
  }

  static SparseMatrix from_dense(const DenseMatrix& d) {
    SparseMatrix s(d.rows(), d.cols());
    for (std::size_t j = 0; j < d.cols(); ++j) {
      for (std::size_t i = 0; i < d.rows(); ++i)
        if (d(i, j) != 0.0) {
          s.rowind_.push_back(i);
          s.values_.push_back(d(i, j));
        }
      s.colptr_[j + 1] = s.rowind_.size();
    }
    return s;
  }

  /// Raw CSC assembly; the arrays must already satisfy the canonical invariants.
  static SparseMatrix from_csc(std::size_t rows, std::size_t cols, std::vector<std::size_t> colptr,
                               std::vector<std::size_t> rowind, std::vector<double> values) {
    SparseMatrix s(rows, cols);
    s.colptr_ = std::move(colptr);
    s.rowind_ = std::move(rowind);
    s.values_ = std::move(values);
    require(s.is_canonical(), ErrorKind::invalid_argument, "from_csc: arrays not canonical");
    return s;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t nnz() const noexcept { return values_.size(); }

  const std::vector<std::size_t>& colptr() const noexcept { return colptr_; }
  const std::vector<std::size_t>& rowind() const noexcept { return rowind_; }
  const std::vector<double>& values() const noexcept { return values_; }

  bool is_canonical() const {
    if (colptr_.size() != cols_ + 1 || colptr_.front() != 0 || colptr_.back() != values_.size() ||
        rowind_.size() != values_.size())
      return false;
    for (std::size_t j = 0; j < cols_; ++j) {
      if (colptr_[j] > colptr_[j + 1]) return false;
      for (std::size_t p = colptr_[j]; p < colptr_[j + 1]; ++p) {
        if (rowind_[p] >= rows_ || values_[p] == 0.0) return false;
        if (p > colptr_[j] && rowind_[p - 1] >= rowind_[p]) return false;
      }
    }
    return true;
  }

  SparseMatrix transpose() const {
    SparseMatrix t(cols_, rows_);
    std::vector<std::size_t> counts(rows_ + 1, 0);
    for (std::size_t r : rowind_) ++counts[r + 1];
    std::partial_sum(counts.begin(), counts.end(), counts.begin());
    t.colptr_ = counts;
    t.rowind_.resize(nnz());
    t.values_.resize(nnz());
    std::vector<std::size_t> next(counts.begin(), counts.end() - 1);
    for (std::size_t j = 0; j < cols_; ++j)
      for (std::size_t p = colptr_[j]; p < colptr_[j + 1]; ++p) {
        const std::size_t dst = next[rowind_[p]]++;
        t.rowind_[dst] = j;
        t.values_[dst] = values_[p];
      }
    return t;
  }

  DenseMatrix to_dense() const {
    DenseMatrix d(rows_, cols_);
    for (std::size_t j = 0; j < cols_; ++j)
      for (std::size_t p = colptr_[j]; p < colptr_[j + 1]; ++p) d(rowind_[p], j) = values_[p];
    return d;
  }

  /// Rows selected (and reordered) by `order`; row i of the result is row order[i].
  SparseMatrix permute_rows(std::span<const std::size_t> order) const {
    require(order.size() == rows_, ErrorKind::dimension_mismatch, "permute_rows: length");
    std::vector<std::size_t> inverse(rows_);
    for (std::size_t i = 0; i < rows_; ++i) inverse[order[i]] = i;
    std::vector<Triplet> trips;
    trips.reserve(nnz());
    for (std::size_t j = 0; j < cols_; ++j)
      for (std::size_t p = colptr_[j]; p < colptr_[j + 1]; ++p)
        trips.push_back({inverse[rowind_[p]], j, values_[p]});
    return from_triplets(rows_, cols_, std::move(trips));
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<std::size_t> colptr_;
  std::vector<std::size_t> rowind_;
  std::vector<double> values_;
};

/// Coordinate text: header `nrows ncols nnz`, then one `row,col,value` per line (0-based).
inline void write_coordinate(std::ostream& os, const SparseMatrix& s) {
  os << s.rows() << ' ' << s.cols() << ' ' << s.nnz() << '\n';
  char buf[64];
  for (std::size_t j = 0; j < s.cols(); ++j)
    for (std::size_t p = s.colptr()[j]; p < s.colptr()[j + 1]; ++p) {
      std::snprintf(buf, sizeof buf, "%.17g", s.values()[p]);
      os << s.rowind()[p] << ',' << j << ',' << buf << '\n';
    }
}

inline SparseMatrix read_coordinate(std::istream& is) {
  std::size_t rows = 0, cols = 0, nnz = 0;
  if (!(is >> rows >> cols >> nnz)) throw Error(ErrorKind::format, "coordinate header");
  std::vector<Triplet> trips;
  trips.reserve(nnz);
  for (std::size_t k = 0; k < nnz; ++k) {
    Triplet t{};
    char c1 = 0, c2 = 0;
    if (!(is >> t.row >> c1 >> t.col >> c2 >> t.value) || c1 != ',' || c2 != ',')
      throw Error(ErrorKind::format, "coordinate entry " + std::to_string(k));
    trips.push_back(t);
  }
  return SparseMatrix::from_triplets(rows, cols, std::move(trips));
}

inline Vector spmv(const SparseMatrix& a, std::span<const double> v) {
  require(a.cols() == v.size(), ErrorKind::dimension_mismatch, "spmv: length");
  Vector out(a.rows(), 0.0);
  for (std::size_t j = 0; j < a.cols(); ++j) {
    const double vj = v[j];
    for (std::size_t p = a.colptr()[j]; p < a.colptr()[j + 1]; ++p)
      out[a.rowind()[p]] += a.values()[p] * vj;
  }
  return out;
}

inline Vector spmv_t(const SparseMatrix& a, std::span<const double> v) {
  require(a.rows() == v.size(), ErrorKind::dimension_mismatch, "spmv_t: length");
  Vector out(a.cols(), 0.0);
  for (std::size_t j = 0; j < a.cols(); ++j) {
    double s = 0.0;
    for (std::size_t p = a.colptr()[j]; p < a.colptr()[j + 1]; ++p)
      s += a.values()[p] * v[a.rowind()[p]];
    out[j] = s;
  }
  return out;
}

/// Sparse times dense: (n x m) * (m x k).
inline DenseMatrix spmm(const SparseMatrix& a, const DenseMatrix& b) {
  require(a.cols() == b.rows(), ErrorKind::dimension_mismatch, "spmm: inner dimensions");
  DenseMatrix out(a.rows(), b.cols());
  for (std::size_t c = 0; c < b.cols(); ++c)
    for (std::size_t j = 0; j < a.cols(); ++j) {
      const double bj = b(j, c);
      if (bj == 0.0) continue;
      for (std::size_t p = a.colptr()[j]; p < a.colptr()[j + 1]; ++p)
        out(a.rowind()[p], c) += a.values()[p] * bj;
    }
  return out;
}

/// S' diag(w) S, accumulated row by row as outer products of each row's
/// nonzeros; cost is the sum over rows of (row nnz)^2.
inline DenseMatrix weighted_gram(const SparseMatrix& s, std::span<const double> w) {
  require(w.size() == s.rows(), ErrorKind::dimension_mismatch, "weighted_gram: weight length");
  const SparseMatrix rows = s.transpose();
  DenseMatrix g(s.cols(), s.cols());
  for (std::size_t i = 0; i < rows.cols(); ++i) {
    const std::size_t b = rows.colptr()[i], e = rows.colptr()[i + 1];
    const double wi = w[i];
    for (std::size_t p = b; p < e; ++p) {
      const double vp = rows.values()[p] * wi;
      const std::size_t cp = rows.rowind()[p];
      for (std::size_t q = p; q < e; ++q) g(rows.rowind()[q], cp) += vp * rows.values()[q];
    }
  }
  for (std::size_t j = 0; j < g.cols(); ++j)
    for (std::size_t i = j + 1; i < g.rows(); ++i) g(j, i) = g(i, j);
  return g;
}

inline DenseMatrix gram(const SparseMatrix& s) {
  const Vector ones(s.rows(), 1.0);
  return weighted_gram(s, ones);
}

// ---------------------------------------------------------------------------
// Triangular solves
// ---------------------------------------------------------------------------

/// Solves L x = b for lower-triangular L.
inline Vector solve_lower(const DenseMatrix& l, std::span<const double> b) {
  const std::size_t n = l.rows();
  require(b.size() == n, ErrorKind::dimension_mismatch, "solve_lower: length");
  Vector x(b.begin(), b.end());
  for (std::size_t j = 0; j < n; ++j) {
    if (x[j] == 0.0) continue;
    x[j] /= l(j, j);
    const double xj = x[j];
    for (std::size_t i = j + 1; i < n; ++i) x[i] -= l(i, j) * xj;
  }
  return x;
}

/// Solves L' x = b for lower-triangular L.
inline Vector solve_lower_t(const DenseMatrix& l, std::span<const double> b) {
  const std::size_t n = l.rows();
  require(b.size() == n, ErrorKind::dimension_mismatch, "solve_lower_t: length");
  Vector x(b.begin(), b.end());
  for (std::size_t jj = n; jj-- > 0;) {
    double s = x[jj];
    for (std::size_t i = jj + 1; i < n; ++i) s -= l(i, jj) * x[i];
    x[jj] = s / l(jj, jj);
  }
  return x;
}

// ---------------------------------------------------------------------------
// Cholesky
// ---------------------------------------------------------------------------

struct CholeskyFactor {
  DenseMatrix lower;  ///< L with M = L L'
  std::size_t size() const noexcept { return lower.rows(); }
};

namespace detail {

inline void check_symmetric(const DenseMatrix& m, const char* who) {
  require(m.rows() == m.cols(), ErrorKind::dimension_mismatch, std::string(who) + ": not square");
  const double scale = std::max(1.0, m.max_abs());
  for (std::size_t j = 0; j < m.cols(); ++j)
    for (std::size_t i = j + 1; i < m.rows(); ++i)
      require(std::abs(m(i, j) - m(j, i)) <= 1e-10 * scale, ErrorKind::invalid_argument,
              std::string(who) + ": matrix not symmetric");
}

// Left-looking column Cholesky. With `semidefinite`, pivots within the
// tolerance band are treated as exact zeros and their column is zeroed.
inline DenseMatrix cholesky_impl(const DenseMatrix& m, bool semidefinite) {
  check_symmetric(m, "cholesky");
  const std::size_t n = m.rows();
  double max_diag = 0.0;
  for (std::size_t i = 0; i < n; ++i) max_diag = std::max(max_diag, std::abs(m(i, i)));
  const double tol = 1e-14 * max_diag;
  DenseMatrix l(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    auto lj = l.col(j);
    for (std::size_t i = j; i < n; ++i) lj[i] = m(i, j);
    for (std::size_t k = 0; k < j; ++k) {
      const double ljk = l(j, k);
      if (ljk == 0.0) continue;
      const auto lk = l.col(k);
      for (std::size_t i = j; i < n; ++i) lj[i] -= lk[i] * ljk;
    }
    const double pivot = lj[j];
    if (pivot > tol && pivot > 0.0) {
      const double d = std::sqrt(pivot);
      for (std::size_t i = j; i < n; ++i) lj[i] /= d;
    } else if (semidefinite && pivot >= -std::max(tol, 1e-300) * 1e2) {
      for (std::size_t i = j; i < n; ++i) lj[i] = 0.0;
    } else {
      throw Error(ErrorKind::not_positive_definite,
                  "non-positive pivot " + std::to_string(pivot) + " at column " + std::to_string(j));
    }
  }
  return l;
}

}  // namespace detail

/// Cholesky of a symmetric positive-definite matrix. A pivot that does not
/// exceed 1e-14 * max|diag| raises not_positive_definite.
inline CholeskyFactor cholesky(const DenseMatrix& m) { return {detail::cholesky_impl(m, false)}; }

/// Cholesky tolerant of a positive-semidefinite input (zero pivots give zero
/// columns of L). Indefinite input still raises not_positive_definite.
inline CholeskyFactor cholesky_semidefinite(const DenseMatrix& m) {
  return {detail::cholesky_impl(m, true)};
}

inline double chol_logdet(const CholeskyFactor& f) {
  double s = 0.0;
  for (std::size_t i = 0; i < f.size(); ++i) s += std::log(f.lower(i, i));
  return 2.0 * s;
}

inline Vector chol_solve(const CholeskyFactor& f, std::span<const double> b) {
  return solve_lower_t(f.lower, solve_lower(f.lower, b));
}

inline DenseMatrix chol_solve(const CholeskyFactor& f, const DenseMatrix& b) {
  DenseMatrix x(b.rows(), b.cols());
  for (std::size_t j = 0; j < b.cols(); ++j) {
    const Vector xj = chol_solve(f, b.col(j));
    std::copy(xj.begin(), xj.end(), x.col(j).begin());
  }
  return x;
}

inline DenseMatrix chol_inverse(const CholeskyFactor& f) {
  return chol_solve(f, DenseMatrix::identity(f.size()));
}

// ---------------------------------------------------------------------------
// Thin QR of the sparse basis matrix via its Gram matrix
// ---------------------------------------------------------------------------

/// S = Q1 R1 with R1 the upper Cholesky factor of S'S. Q1 is never stored;
/// Q1' v is applied as R1^{-T} (S' v).
struct ThinQR {
  SparseMatrix basis;  ///< S
  DenseMatrix lower;   ///< R1' (lower triangular)

  std::size_t rank() const noexcept { return lower.rows(); }
  DenseMatrix r1() const { return lower.transpose(); }
};

inline ThinQR thin_qr(const SparseMatrix& s) {
  try {
    return {s, cholesky(gram(s)).lower};
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::not_positive_definite) throw;
    throw Error(ErrorKind::rank_deficient_basis,
                "basis matrix lacks full column rank (coincident knots or empty columns)");
  }
}

inline Vector apply_qt(const ThinQR& qr, std::span<const double> v) {
  require(v.size() == qr.basis.rows(), ErrorKind::dimension_mismatch, "apply_qt: length");
  return solve_lower(qr.lower, spmv_t(qr.basis, v));
}

/// Q1' diag(d) Q1 = R1^{-T} (S' diag(d) S) R1^{-1}. A constant `d` gives
/// d[0] * I exactly.
inline DenseMatrix reduced_noise_matrix(const ThinQR& qr, std::span<const double> d) {
  require(d.size() == qr.basis.rows(), ErrorKind::dimension_mismatch, "reduced_noise_matrix: length");
  for (double di : d) require(di >= 0.0, ErrorKind::invalid_argument, "reduced_noise_matrix: negative D");
  const std::size_t m = qr.rank();
  if (!d.empty() && std::all_of(d.begin(), d.end(), [&](double x) { return x == d.front(); }))
    return DenseMatrix::identity(m, d.front());
  const DenseMatrix w = weighted_gram(qr.basis, d);
  // X = R1^{-T} W, then D* = R1^{-T} X' (W symmetric).
  DenseMatrix x(m, m);
  for (std::size_t j = 0; j < m; ++j) {
    const Vector c = solve_lower(qr.lower, w.col(j));
    std::copy(c.begin(), c.end(), x.col(j).begin());
  }
  const DenseMatrix xt = x.transpose();
  DenseMatrix out(m, m);
  for (std::size_t j = 0; j < m; ++j) {
    const Vector c = solve_lower(qr.lower, xt.col(j));
    std::copy(c.begin(), c.end(), out.col(j).begin());
  }
  out.symmetrize();
  return out;
}

// ---------------------------------------------------------------------------
// Dense Householder QR (used for the n x p covariate design)
// ---------------------------------------------------------------------------

class HouseholderQR {
 public:
  explicit HouseholderQR(DenseMatrix a) : qr_(std::move(a)), beta_(qr_.cols(), 0.0) {
    const std::size_t n = qr_.rows(), p = qr_.cols();
    require(p <= n, ErrorKind::invalid_argument, "HouseholderQR: more columns than rows");
    for (std::size_t k = 0; k < p; ++k) {
      auto col = qr_.col(k);
      double norm = 0.0;
      for (std::size_t i = k; i < n; ++i) norm += col[i] * col[i];
      norm = std::sqrt(norm);
      if (norm == 0.0) {
        beta_[k] = 0.0;
        continue;
      }
      const double alpha = col[k] > 0 ? -norm : norm;
      const double v0 = col[k] - alpha;
      // Store v with v[k] = 1 implicitly; v[i] = col[i] / v0 below the diagonal.
      for (std::size_t i = k + 1; i < n; ++i) col[i] /= v0;
      beta_[k] = -v0 / alpha;
      col[k] = alpha;
      for (std::size_t j = k + 1; j < p; ++j) {
        auto cj = qr_.col(j);
        double s = cj[k];
        for (std::size_t i = k + 1; i < n; ++i) s += col[i] * cj[i];
        s *= beta_[k];
        cj[k] -= s;
        for (std::size_t i = k + 1; i < n; ++i) cj[i] -= s * col[i];
      }
    }
  }

  std::size_t rows() const noexcept { return qr_.rows(); }
  std::size_t cols() const noexcept { return qr_.cols(); }

  /// Q' v (full n-vector).
  Vector apply_qt(std::span<const double> v) const {
    require(v.size() == rows(), ErrorKind::dimension_mismatch, "HouseholderQR::apply_qt: length");
    Vector x(v.begin(), v.end());
    for (std::size_t k = 0; k < cols(); ++k) reflect(k, x);
    return x;
  }

  /// Q v (full n-vector).
  Vector apply_q(std::span<const double> v) const {
    require(v.size() == rows(), ErrorKind::dimension_mismatch, "HouseholderQR::apply_q: length");
    Vector x(v.begin(), v.end());
    for (std::size_t k = cols(); k-- > 0;) reflect(k, x);
    return x;
  }

  double r(std::size_t i, std::size_t j) const { return i <= j ? qr_(i, j) : 0.0; }

  /// Least-squares coefficients argmin ||A b - y||.
  Vector solve(std::span<const double> y) const {
    Vector qty = apply_qt(y);
    const std::size_t p = cols();
    Vector b(p, 0.0);
    for (std::size_t jj = p; jj-- > 0;) {
      double s = qty[jj];
      for (std::size_t k = jj + 1; k < p; ++k) s -= qr_(jj, k) * b[k];
      b[jj] = s / qr_(jj, jj);
    }
    return b;
  }

 private:
  void reflect(std::size_t k, Vector& x) const {
    if (beta_[k] == 0.0) return;
    const auto col = qr_.col(k);
    double s = x[k];
    for (std::size_t i = k + 1; i < rows(); ++i) s += col[i] * x[i];
    s *= beta_[k];
    x[k] -= s;
    for (std::size_t i = k + 1; i < rows(); ++i) x[i] -= s * col[i];
  }

  DenseMatrix qr_;
  Vector beta_;
};

// ---------------------------------------------------------------------------
// Symmetric eigendecomposition (cyclic Jacobi)
// ---------------------------------------------------------------------------

struct EigenDecomposition {
  Vector values;        ///< descending
  DenseMatrix vectors;  ///< column k pairs with values[k]
};

inline EigenDecomposition symmetric_eigen(const DenseMatrix& m) {
  detail::check_symmetric(m, "symmetric_eigen");
  const std::size_t n = m.rows();
  DenseMatrix a = m;
  a.symmetrize();
  DenseMatrix v = DenseMatrix::identity(n);
  const double tol = 1e-12 * a.frobenius_norm();
  constexpr int max_sweeps = 50;
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    double off = 0.0;
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t i = j + 1; i < n; ++i) off += a(i, j) * a(i, j);
    if (std::sqrt(2.0 * off) <= tol) break;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (std::abs(apq) <= 1e-300) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
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
        a(p, q) = 0.0;
        a(q, p) = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v(k, p), vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t i, std::size_t j) { return a(i, i) > a(j, j); });
  EigenDecomposition out{Vector(n), DenseMatrix(n, n)};
  for (std::size_t k = 0; k < n; ++k) {
    out.values[k] = a(order[k], order[k]);
    const auto src = v.col(order[k]);
    std::copy(src.begin(), src.end(), out.vectors.col(k).begin());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Woodbury-variant operators
// ---------------------------------------------------------------------------

/// Precomputed m x m machinery for Sigma = S K S' + diag(D).
///
/// With K = L L' (L possibly rank-deficient for semidefinite K) and
/// G = S' D^{-1} S, the core (K^{-1} + G)^{-1} = L (I + L' G L)^{-1} L',
/// which stays well defined as K approaches singularity.
class WoodburySystem {
 public:
  WoodburySystem(const DenseMatrix& k, const SparseMatrix& s, std::span<const double> d)
      : s_(&s), d_inv_(d.size()) {
    require(k.rows() == s.cols() && k.cols() == s.cols(), ErrorKind::dimension_mismatch,
            "Woodbury: K must be m x m");
    require(d.size() == s.rows(), ErrorKind::dimension_mismatch, "Woodbury: D length");
    logdet_d_ = 0.0;
    for (std::size_t i = 0; i < d.size(); ++i) {
      require(d[i] > 0.0, ErrorKind::invalid_argument, "Woodbury: D must be strictly positive");
      d_inv_[i] = 1.0 / d[i];
      logdet_d_ += std::log(d[i]);
    }
    k_factor_ = cholesky_semidefinite(k).lower;
    const std::size_t m = s.cols();
    g_ = weighted_gram(s, d_inv_);
    DenseMatrix inner = matmul(matmul(k_factor_.transpose(), g_), k_factor_);
    for (std::size_t i = 0; i < m; ++i) inner(i, i) += 1.0;
    inner.symmetrize();
    inner_ = cholesky(inner);
    // core = L inner^{-1} L'
    core_ = matmul(k_factor_, chol_solve(inner_, k_factor_.transpose()));
    core_.symmetrize();
  }

  const SparseMatrix& basis() const noexcept { return *s_; }
  /// S' D^{-1} S
  const DenseMatrix& weighted_gram_matrix() const noexcept { return g_; }
  /// (K^{-1} + S' D^{-1} S)^{-1}
  const DenseMatrix& core() const noexcept { return core_; }
  const Vector& d_inverse() const noexcept { return d_inv_; }

  /// (K^{-1} + S' D^{-1} S)^{-1} S' D^{-1} v, equal to K S' Sigma^{-1} v.
  Vector gain(std::span<const double> v) const {
    require(v.size() == s_->rows(), ErrorKind::dimension_mismatch, "gain: length");
    Vector w(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) w[i] = v[i] * d_inv_[i];
    return matvec(core_, spmv_t(*s_, w));
  }

  /// Sigma^{-1} v = D^{-1} v - D^{-1} S (K^{-1} + S'D^{-1}S)^{-1} S' D^{-1} v.
  Vector inverse_apply(std::span<const double> v) const {
    const Vector sg = spmv(*s_, gain(v));
    Vector out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = d_inv_[i] * (v[i] - sg[i]);
    return out;
  }

  /// log|S K S' + D| = log|D| + log|I + L' G L|.
  double logdet() const { return logdet_d_ + chol_logdet(inner_); }

  /// diag(Sigma^{-1})_i = 1/D_i - s_i' core s_i / D_i^2, using only the
  /// nonzeros of row i of S.
  Vector inverse_diagonal() const {
    const SparseMatrix rows = s_->transpose();
    Vector out(s_->rows());
    for (std::size_t i = 0; i < rows.cols(); ++i) {
      const std::size_t b = rows.colptr()[i], e = rows.colptr()[i + 1];
      double q = 0.0;
      for (std::size_t p = b; p < e; ++p) {
        const std::size_t cp = rows.rowind()[p];
        double inner = 0.0;
        for (std::size_t r = b; r < e; ++r) inner += core_(cp, rows.rowind()[r]) * rows.values()[r];
        q += rows.values()[p] * inner;
      }
      out[i] = d_inv_[i] - q * d_inv_[i] * d_inv_[i];
    }
    return out;
  }

 private:
  const SparseMatrix* s_;
  Vector d_inv_;
  double logdet_d_ = 0.0;
  DenseMatrix k_factor_;
  DenseMatrix g_;
  CholeskyFactor inner_;
  DenseMatrix core_;
};

inline Vector woodbury_gain(const DenseMatrix& k, const SparseMatrix& s, std::span<const double> d,
                            std::span<const double> v) {
  (void)cholesky(k);  // woodbury_gain is defined for SPD K only
  return WoodburySystem(k, s, d).gain(v);
}

inline Vector smw_inverse_apply(const DenseMatrix& k, const SparseMatrix& s, std::span<const double> d,
                                std::span<const double> v) {
  return WoodburySystem(k, s, d).inverse_apply(v);
}

}  // namespace rbk

#endif  // RBK_LINALG_HPP
