#pragma once

// Dense row-major tensors of order 1-3 and the handful of kernels the
// attention code is built from. Order-1 and order-2 tensors are plain Eigen
// types; order-3 tensors are a thin owning wrapper with Eigen slice views.

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#include <Eigen/Dense>

namespace tcoder {

using Index = Eigen::Index;

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

template <typename Scalar>
using MatrixMap = Eigen::Map<Matrix<Scalar>>;

template <typename Scalar>
using ConstMatrixMap = Eigen::Map<const Matrix<Scalar>>;

/// N x d matrix: rows are token positions, columns embedding dimensions.
template <typename Scalar>
using SeqMatrix = Matrix<Scalar>;

using MatrixXd = Matrix<double>;
using MatrixXf = Matrix<float>;

enum class Precision { f32, f64 };

/// Target id marking positions excluded from a loss.
inline constexpr int kIgnoreTarget = -1;

template <typename Scalar>
constexpr Precision precision_of() {
  static_assert(std::is_same_v<Scalar, float> || std::is_same_v<Scalar, double>,
                "only f32 and f64 tensors are supported");
  return std::is_same_v<Scalar, float> ? Precision::f32 : Precision::f64;
}

inline const char* to_string(Precision p) { return p == Precision::f32 ? "f32" : "f64"; }

/// Raised whenever operand extents disagree.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

namespace detail {

/// Row-block height for kernels that stream over the token axis.
inline constexpr Index kRowBlock = 64;

inline std::string shape_str(Index r, Index c) {
  std::ostringstream os;
  os << r << "x" << c;
  return os.str();
}

template <typename A, typename B>
void require_same_shape(const char* op, const A& a, const B& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.rows(), a.cols()) +
                         " vs " + shape_str(b.rows(), b.cols()));
  }
}

}  // namespace detail

/// Multiply/add tally under the convention used throughout: a length-L dot
/// product costs L multiplies and L-1 adds, an elementwise product costs one
/// multiply per element. Exponentials, divides and scalings are not counted.
struct FlopCounter {
  std::uint64_t multiplies = 0;
  std::uint64_t adds = 0;

  std::uint64_t total() const { return multiplies + adds; }

  void matmul(Index m, Index k, Index n) {
    multiplies += static_cast<std::uint64_t>(m * n * k);
    adds += static_cast<std::uint64_t>(m * n * (k - 1));
  }
  void elementwise(Index count) { multiplies += static_cast<std::uint64_t>(count); }
  void accumulate(Index count) { adds += static_cast<std::uint64_t>(count); }

  FlopCounter& operator+=(const FlopCounter& o) {
    multiplies += o.multiplies;
    adds += o.adds;
    return *this;
  }
  bool operator==(const FlopCounter&) const = default;
};

/// Owning order-3 tensor, row-major with the last index fastest.
template <typename Scalar>
class Tensor3 {
 public:
  Tensor3() = default;
  Tensor3(Index d0, Index d1, Index d2)
      : d0_(checked(d0)), d1_(checked(d1)), d2_(checked(d2)),
        data_(static_cast<std::size_t>(d0 * d1 * d2), Scalar(0)) {}

  Index dim(int axis) const { return axis == 0 ? d0_ : axis == 1 ? d1_ : d2_; }
  Index size() const { return d0_ * d1_ * d2_; }

  Scalar& operator()(Index i, Index j, Index k) { return data_[offset(i, j, k)]; }
  Scalar operator()(Index i, Index j, Index k) const { return data_[offset(i, j, k)]; }

  /// The d1 x d2 matrix at fixed first index.
  MatrixMap<Scalar> slice(Index i) { return MatrixMap<Scalar>(data_.data() + i * d1_ * d2_, d1_, d2_); }
  ConstMatrixMap<Scalar> slice(Index i) const {
    return ConstMatrixMap<Scalar>(data_.data() + i * d1_ * d2_, d1_, d2_);
  }

  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }

  Scalar max_abs() const {
    Scalar m(0);
    for (Scalar v : data_) m = std::max(m, std::abs(v));
    return m;
  }

  bool all_finite() const {
    for (Scalar v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

 private:
  static Index checked(Index extent) {
    if (extent < 0) throw DimensionError("Tensor3: negative extent");
    return extent;
  }
  std::size_t offset(Index i, Index j, Index k) const {
    return static_cast<std::size_t>((i * d1_ + j) * d2_ + k);
  }

  Index d0_ = 0, d1_ = 0, d2_ = 0;
  std::vector<Scalar> data_;
};

template <typename Scalar>
Scalar max_abs_diff(const Tensor3<Scalar>& a, const Tensor3<Scalar>& b) {
  for (int ax = 0; ax < 3; ++ax)
    if (a.dim(ax) != b.dim(ax)) throw DimensionError("max_abs_diff: Tensor3 extents differ");
  Scalar m(0);
  for (Index t = 0; t < a.size(); ++t) m = std::max(m, std::abs(a.data()[t] - b.data()[t]));
  return m;
}

template <typename DerivedA, typename DerivedB>
auto max_abs_diff(const Eigen::MatrixBase<DerivedA>& a, const Eigen::MatrixBase<DerivedB>& b) {
  detail::require_same_shape("max_abs_diff", a, b);
  using Scalar = typename DerivedA::Scalar;
  if (a.size() == 0) return Scalar(0);
  return (a - b).cwiseAbs().maxCoeff();
}

// ---------------------------------------------------------------------------
// Kernels

/// C = A B with an extent check.
template <typename Scalar>
Matrix<Scalar> matmul(const Matrix<Scalar>& a, const Matrix<Scalar>& b, FlopCounter* counter = nullptr) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: inner extents differ (" + detail::shape_str(a.rows(), a.cols()) +
                         " x " + detail::shape_str(b.rows(), b.cols()) + ")");
  }
  if (counter) counter->matmul(a.rows(), a.cols(), b.cols());
  Matrix<Scalar> c(a.rows(), b.cols());
  c.noalias() = a * b;
  return c;
}

enum class SoftmaxAxis {
  rows_over_k,  ///< each row sums to one
  cols_over_j,  ///< each column sums to one
};

/// Max-shifted exponent normalization along one axis.
template <typename Derived>
Matrix<typename Derived::Scalar> softmax_axis(const Eigen::MatrixBase<Derived>& m, SoftmaxAxis axis) {
  using Scalar = typename Derived::Scalar;
  Matrix<Scalar> out = m;
  if (axis == SoftmaxAxis::rows_over_k) {
    for (Index r = 0; r < out.rows(); ++r) {
      auto row = out.row(r);
      const Scalar mx = row.maxCoeff();
      row = (row.array() - mx).exp();
      row /= row.sum();
    }
  } else {
    for (Index c = 0; c < out.cols(); ++c) {
      auto col = out.col(c);
      const Scalar mx = col.maxCoeff();
      col = (col.array() - mx).exp();
      col /= col.sum();
    }
  }
  return out;
}

/// Prefix sums of per-token outer products: out[t] = sum_{n<=t} q_n k_n^T.
/// One pass over the tokens; the result is N x d x d.
template <typename Scalar>
Tensor3<Scalar> cum_outer(const Matrix<Scalar>& q, const Matrix<Scalar>& k, FlopCounter* counter = nullptr) {
  detail::require_same_shape("cum_outer", q, k);
  const Index n = q.rows(), d = q.cols();
  Tensor3<Scalar> out(n, d, d);
  Matrix<Scalar> running = Matrix<Scalar>::Zero(d, d);
  for (Index t = 0; t < n; ++t) {
    running.noalias() += q.row(t).transpose() * k.row(t);
    out.slice(t) = running;
  }
  if (counter && n > 0) {
    counter->elementwise(n * d * d);
    counter->accumulate((n - 1) * d * d);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Random numbers

/// Reproducible generator: the standard 64-bit Mersenne Twister (its output
/// sequence is fixed by the C++ standard) with portable conversions to
/// uniform and normal variates, since the <random> distributions are not.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n), rejection sampled.
  std::uint64_t below(std::uint64_t n) {
    if (n == 0) throw std::invalid_argument("Rng::below: empty range");
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return x % n;
  }

  /// Standard normal via Box-Muller (no cached second variate).
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  /// Independent child stream derived from this seed and a counter.
  Rng fork(std::uint64_t stream) const {
    std::uint64_t z = seed_ + 0x9E3779B97F4A7C15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return Rng(z ^ (z >> 31));
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

struct InitScheme {
  enum class Kind { xavier_uniform, normal } kind = Kind::xavier_uniform;
  double sigma = 0.0;

  static InitScheme xavier() { return {Kind::xavier_uniform, 0.0}; }
  static InitScheme gaussian(double sigma) { return {Kind::normal, sigma}; }
};

/// Seeded initialization. Xavier uses fan_in = rows, fan_out = cols and the
/// bound sqrt(6 / (fan_in + fan_out)).
template <typename Scalar>
Matrix<Scalar> rand_init(Index rows, Index cols, InitScheme scheme, Rng& rng) {
  if (rows < 0 || cols < 0) throw DimensionError("rand_init: negative extent");
  Matrix<Scalar> m(rows, cols);
  if (scheme.kind == InitScheme::Kind::xavier_uniform) {
    const double bound = rows + cols > 0 ? std::sqrt(6.0 / static_cast<double>(rows + cols)) : 0.0;
    for (Index t = 0; t < m.size(); ++t) m.data()[t] = static_cast<Scalar>(rng.uniform(-bound, bound));
  } else {
    for (Index t = 0; t < m.size(); ++t) m.data()[t] = static_cast<Scalar>(scheme.sigma * rng.normal());
  }
  return m;
}

/// Uniform [-1, 1] entries; the default generator for property tests.
template <typename Scalar>
Matrix<Scalar> rand_uniform(Index rows, Index cols, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Matrix<Scalar> m(rows, cols);
  for (Index t = 0; t < m.size(); ++t) m.data()[t] = static_cast<Scalar>(rng.uniform(lo, hi));
  return m;
}

template <typename Derived>
bool all_finite(const Eigen::MatrixBase<Derived>& m) {
  return m.allFinite();
}

}  // namespace tcoder
