#pragma once

// Causal dimension-wise attention. The masked score tensor S[:,:,k] holds the
// score matrix of the prefix 0..k, so position k never sees later tokens.
// The naive form follows the four-index definition and costs O(N^2 d^2); the
// streaming form keeps one running d x d state and costs O(N d^2).

#include "tcoder/attention.hpp"

namespace tcoder {

/// d x d x N tensor; slice [:,:,k] is the score matrix of tokens 0..k.
template <typename Scalar>
struct MaskedScoreTensor3 : Tensor3<Scalar> {
  using Tensor3<Scalar>::Tensor3;
};

/// M[n,k] = 1 when n <= k: upper triangular with the diagonal included.
template <typename Scalar>
Matrix<Scalar> causal_mask(Index n) {
  Matrix<Scalar> m = Matrix<Scalar>::Zero(n, n);
  for (Index r = 0; r < n; ++r)
    for (Index c = r; c < n; ++c) m(r, c) = Scalar(1);
  return m;
}

enum class MaskedMode { naive, streaming };

struct MaskedOptions {
  MaskedMode mode = MaskedMode::streaming;
  /// Scale output row i by 1/sqrt(i+1). Off by default.
  bool position_scale = false;
};

template <typename Scalar>
Scalar position_scale_factor(Index i, bool enabled) {
  return enabled ? Scalar(1) / std::sqrt(static_cast<Scalar>(i + 1)) : Scalar(1);
}

/// S[i,j,k] = sum_n Q[n,i] K[n,j] M[n,k], evaluated literally.
template <typename Scalar>
MaskedScoreTensor3<Scalar> masked_score_naive(const SeqMatrix<Scalar>& q, const SeqMatrix<Scalar>& k,
                                              FlopCounter* counter = nullptr) {
  detail::require_same_shape("masked_score_naive", q, k);
  const Index n = q.rows(), d = q.cols();
  const Matrix<Scalar> mask = causal_mask<Scalar>(n);
  MaskedScoreTensor3<Scalar> s(d, d, n);
  for (Index i = 0; i < d; ++i)
    for (Index j = 0; j < d; ++j)
      for (Index t = 0; t < n; ++t) {
        Scalar acc(0);
        for (Index r = 0; r < n; ++r) acc += q(r, i) * k(r, j) * mask(r, t);
        s(i, j, t) = acc;
      }
  if (counter && n > 0) {
    counter->multiplies += static_cast<std::uint64_t>(2 * d * d * n * n);
    counter->adds += static_cast<std::uint64_t>(d * d * n * (n - 1));
  }
  return s;
}

/// Same tensor from prefix sums of q_n k_n^T.
template <typename Scalar>
MaskedScoreTensor3<Scalar> masked_score_streaming(const SeqMatrix<Scalar>& q, const SeqMatrix<Scalar>& k,
                                                  FlopCounter* counter = nullptr) {
  const Tensor3<Scalar> prefix = cum_outer(q, k, counter);
  const Index n = q.rows(), d = q.cols();
  MaskedScoreTensor3<Scalar> s(d, d, n);
  for (Index t = 0; t < n; ++t)
    for (Index i = 0; i < d; ++i)
      for (Index j = 0; j < d; ++j) s(i, j, t) = prefix(t, i, j);
  return s;
}

/// X[i,j,k] = S[j,k,i] * V[i,k].
template <typename Scalar>
AttnTensor3<Scalar> masked_kr_tensor(const MaskedScoreTensor3<Scalar>& s, const SeqMatrix<Scalar>& v,
                                     FlopCounter* counter = nullptr) {
  const Index n = v.rows(), d = v.cols();
  if (s.dim(0) != d || s.dim(1) != d || s.dim(2) != n)
    throw DimensionError("masked_kr_tensor: score tensor must be d x d x N");
  AttnTensor3<Scalar> x(n, d, d);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < d; ++j)
      for (Index k = 0; k < d; ++k) x(i, j, k) = s(j, k, i) * v(i, k);
  if (counter) counter->elementwise(n * d * d);
  return x;
}

/// O[i,j] = a_i sum_m W[j,m] S[j,m,i] V[i,m], with a_i = 1 unless the
/// position scale is enabled. Streaming mode updates G_i = G_{i-1} + q_i k_i^T
/// first and then emits row i from G_i.
template <typename Scalar>
SeqMatrix<Scalar> masked_output(const SeqMatrix<Scalar>& q, const SeqMatrix<Scalar>& k, const SeqMatrix<Scalar>& v,
                                const ConvFilter<Scalar>& w, MaskedOptions opt = {}, FlopCounter* counter = nullptr) {
  detail::require_same_shape("masked_output", q, k);
  detail::require_same_shape("masked_output", q, v);
  const Index n = q.rows(), d = q.cols();
  if (w.rows() != d || w.cols() != d) throw DimensionError("masked_output: filter must be d x d");

  SeqMatrix<Scalar> out(n, d);
  if (opt.mode == MaskedMode::naive) {
    const auto x = masked_kr_tensor(masked_score_naive(q, k, counter), v, counter);
    out = conv_extract(x, w);
    if (counter) counter->matmul(n * d, d, 1);
  } else {
    Matrix<Scalar> state = Matrix<Scalar>::Zero(d, d);
    Matrix<Scalar> weighted(d, d);
    for (Index i = 0; i < n; ++i) {
      state.noalias() += q.row(i).transpose() * k.row(i);
      weighted = w.cwiseProduct(state);
      out.row(i).noalias() = (weighted * v.row(i).transpose()).transpose();
    }
    if (counter && n > 0) {
      counter->elementwise(n * d * d);      // outer products
      counter->accumulate((n - 1) * d * d);  // running sum
      counter->elementwise(n * d * d);      // W o G_i
      counter->matmul(n * d, d, 1);         // rows against v_i
    }
  }
  if (opt.position_scale)
    for (Index i = 0; i < n; ++i) out.row(i) *= position_scale_factor<Scalar>(i, true);
  return out;
}

}  // namespace tcoder
