#ifndef RBK_TEST_UTIL_HPP
#define RBK_TEST_UTIL_HPP

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "rbk/linalg.hpp"

namespace rbk::testing {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

inline Mat to_eigen(const DenseMatrix& m) {
  Mat out(m.rows(), m.cols());
  for (std::size_t j = 0; j < m.cols(); ++j)
    for (std::size_t i = 0; i < m.rows(); ++i) out(i, j) = m(i, j);
  return out;
}

inline Mat to_eigen(const SparseMatrix& s) { return to_eigen(s.to_dense()); }

inline Vec to_eigen(std::span<const double> v) {
  Vec out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out(i) = v[i];
  return out;
}

inline DenseMatrix from_eigen(const Mat& m) {
  DenseMatrix out(m.rows(), m.cols());
  for (Eigen::Index j = 0; j < m.cols(); ++j)
    for (Eigen::Index i = 0; i < m.rows(); ++i) out(i, j) = m(i, j);
  return out;
}

inline Vector from_eigen_vec(const Vec& v) { return Vector(v.data(), v.data() + v.size()); }

inline double rel_err(const Mat& a, const Mat& b) {
  const double denom = std::max(b.norm(), 1e-300);
  return (a - b).norm() / denom;
}

inline double rel_err(std::span<const double> a, const Vec& b) { return rel_err(Mat(to_eigen(a)), Mat(b)); }

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  double normal() { return norm_(gen_); }
  double uniform(double a = 0.0, double b = 1.0) { return std::uniform_real_distribution<double>(a, b)(gen_); }
  std::size_t index(std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(gen_);
  }

  Vector normal_vector(std::size_t n) {
    Vector v(n);
    for (double& x : v) x = normal();
    return v;
  }

  Vector positive_vector(std::size_t n, double lo = 0.2, double hi = 2.0) {
    Vector v(n);
    for (double& x : v) x = uniform(lo, hi);
    return v;
  }

  /// A A' + shift I for Gaussian A.
  DenseMatrix spd(std::size_t m, double shift = 0.5) {
    Mat a(m, m);
    for (Eigen::Index j = 0; j < a.cols(); ++j)
      for (Eigen::Index i = 0; i < a.rows(); ++i) a(i, j) = normal();
    Mat k = a * a.transpose() / static_cast<double>(m) + shift * Mat::Identity(m, m);
    return from_eigen(k);
  }

  /// Sparse n x m with full column rank: every column gets a diagonal-ish
  /// anchor entry plus random extra entries.
  SparseMatrix sparse_full_rank(std::size_t n, std::size_t m, double density = 0.3) {
    std::vector<Triplet> trips;
    for (std::size_t j = 0; j < m; ++j) trips.push_back({j % n, j, 1.0 + uniform()});
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j)
        if (uniform() < density) trips.push_back({i, j, uniform(-1.0, 1.0)});
    return SparseMatrix::from_triplets(n, m, std::move(trips));
  }

  std::mt19937_64& engine() { return gen_; }

 private:
  std::mt19937_64 gen_;
  std::normal_distribution<double> norm_;
};

/// Dense EM update: K' = K - K S' Si S K + K S' Si y y' Si S K,
/// s' = s + s^2/n (y' Si V Si y - tr(Si V)), Si = (S K S' + s V + e W)^{-1}.
struct DenseEmStep {
  Mat k;
  double sigma2_delta;
};

inline DenseEmStep dense_em_step(const Mat& k, double s2d, const Mat& s, std::span<const double> v_delta,
                                 double s2e, std::span<const double> v_eps, const Vec& y) {
  const Vec vd = to_eigen(v_delta), ve = to_eigen(v_eps);
  const Mat sigma = s * k * s.transpose() + Mat((s2d * vd + s2e * ve).asDiagonal());
  const Mat si = sigma.inverse();
  const Mat ks = k * s.transpose();
  const Vec g = ks * (si * y);
  DenseEmStep out;
  out.k = k - ks * si * ks.transpose() + g * g.transpose();
  const Vec a = si * y;
  const double quad = a.dot(vd.asDiagonal() * a);
  const double tr = (si * vd.asDiagonal()).trace();
  out.sigma2_delta = s2d + s2d * s2d / static_cast<double>(y.size()) * (quad - tr);
  return out;
}

}  // namespace rbk::testing

#endif  // RBK_TEST_UTIL_HPP
