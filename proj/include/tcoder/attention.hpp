#pragma once

// Encoder-side attention. The token-wise scaled dot-product attention is the
// comparison baseline; the dimension-wise family builds a d x d score matrix
// S = Q^T K, lifts it to an N x d x d tensor with V, and contracts the tensor
// with a d x d filter. Every tensor op has a materialized form, and the full
// chain has a factored form that never allocates the N x d x d tensor.

#include <cmath>
#include <string>
#include <string_view>
#include <vector>

#include "tcoder/numerics.hpp"

namespace tcoder {

/// Normalization f applied to the dimension-wise score matrix (and only to it).
enum class NormMode {
  none,
  scale_inv_sqrt_n,     ///< S / sqrt(N)
  softmax_rows_over_k,  ///< each row of f(S) sums to one
  softmax_cols_over_j,  ///< each column of f(S) sums to one
};

inline constexpr NormMode kAllNormModes[] = {NormMode::none, NormMode::scale_inv_sqrt_n,
                                             NormMode::softmax_rows_over_k,
                                             NormMode::softmax_cols_over_j};

inline std::string to_string(NormMode m) {
  switch (m) {
    case NormMode::none: return "none";
    case NormMode::scale_inv_sqrt_n: return "scale_inv_sqrt_n";
    case NormMode::softmax_rows_over_k: return "softmax_rows_over_k";
    case NormMode::softmax_cols_over_j: return "softmax_cols_over_j";
  }
  return "?";
}

inline NormMode parse_norm_mode(std::string_view s) {
  for (NormMode m : kAllNormModes)
    if (to_string(m) == s) return m;
  throw std::invalid_argument("unknown norm mode '" + std::string(s) + "'");
}

class PreconditionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// S = Q^T K, d x d.
template <typename Scalar>
using DimScoreMatrix = Matrix<Scalar>;

/// d x d filter contracted against each token slice of the KR tensor.
template <typename Scalar>
using ConvFilter = Matrix<Scalar>;

/// N x d x d tensor X[i,j,k] (token, score row, score column).
template <typename Scalar>
struct AttnTensor3 : Tensor3<Scalar> {
  using Tensor3<Scalar>::Tensor3;
};

template <typename Scalar>
Matrix<Scalar> apply_norm(const Matrix<Scalar>& s, NormMode mode, Index n_tokens) {
  switch (mode) {
    case NormMode::none: return s;
    case NormMode::scale_inv_sqrt_n: return s / std::sqrt(static_cast<Scalar>(n_tokens));
    case NormMode::softmax_rows_over_k: return softmax_axis(s, SoftmaxAxis::rows_over_k);
    case NormMode::softmax_cols_over_j: return softmax_axis(s, SoftmaxAxis::cols_over_j);
  }
  return s;
}

// ---------------------------------------------------------------------------
// Token-wise baseline

/// softmax(Q K^T / sqrt(d)) V with the softmax taken over keys. With
/// `causal`, query n only sees keys 0..n.
template <typename Scalar>
SeqMatrix<Scalar> token_attention(const SeqMatrix<Scalar>& q, const SeqMatrix<Scalar>& k,
                                  const SeqMatrix<Scalar>& v, FlopCounter* counter = nullptr,
                                  bool causal = false) {
  detail::require_same_shape("token_attention", q, k);
  if (v.rows() != k.rows()) throw DimensionError("token_attention: V rows differ from K rows");
  if (q.cols() < 1) throw DimensionError("token_attention: d must be >= 1");
  Matrix<Scalar> scores = matmul<Scalar>(q, k.transpose(), counter);
  scores *= Scalar(1) / std::sqrt(static_cast<Scalar>(q.cols()));
  if (causal) {
    for (Index r = 0; r < scores.rows(); ++r)
      for (Index c = r + 1; c < scores.cols(); ++c) scores(r, c) = -std::numeric_limits<Scalar>::infinity();
  }
  const Matrix<Scalar> weights = softmax_axis(scores, SoftmaxAxis::rows_over_k);
  return matmul<Scalar>(weights, v, counter);
}

/// Projections for h heads, stored side by side: head t uses columns
/// [t*d, (t+1)*d) of wq/wk/wv and rows [t*d, (t+1)*d) of wo.
template <typename Scalar>
struct MultiHeadParams {
  Matrix<Scalar> wq, wk, wv;  // d_model x (h*d)
  Matrix<Scalar> wo;          // (h*d) x d_model
  Index heads = 1;

  Index head_dim() const { return wq.cols() / heads; }
};

template <typename Scalar>
void validate(const MultiHeadParams<Scalar>& p, Index d_model) {
  if (p.heads < 1) throw DimensionError("multi_head: heads must be >= 1");
  if (p.wq.cols() % p.heads != 0) throw DimensionError("multi_head: projection width not divisible by heads");
  for (const auto* w : {&p.wq, &p.wk, &p.wv})
    if (w->rows() != d_model || w->cols() != p.wq.cols())
      throw DimensionError("multi_head: projection shape " + detail::shape_str(w->rows(), w->cols()));
  if (p.wo.rows() != p.wq.cols()) throw DimensionError("multi_head: WO rows must equal h*d");
}

template <typename Scalar>
SeqMatrix<Scalar> multi_head_baseline(const SeqMatrix<Scalar>& x, const MultiHeadParams<Scalar>& p,
                                      FlopCounter* counter = nullptr, bool causal = false) {
  validate(p, x.cols());
  const Index d = p.head_dim();
  const Matrix<Scalar> q = matmul(x, p.wq, counter);
  const Matrix<Scalar> k = matmul(x, p.wk, counter);
  const Matrix<Scalar> v = matmul(x, p.wv, counter);
  Matrix<Scalar> concat(x.rows(), p.heads * d);
  for (Index h = 0; h < p.heads; ++h) {
    concat.middleCols(h * d, d) = token_attention<Scalar>(q.middleCols(h * d, d), k.middleCols(h * d, d),
                                                          v.middleCols(h * d, d), counter, causal);
  }
  return matmul(concat, p.wo, counter);
}

// ---------------------------------------------------------------------------
// Dimension-wise attention, materialized pieces

/// S[i,j] = sum_n Q[n,i] K[n,j]; linear in N.
template <typename Scalar>
DimScoreMatrix<Scalar> dim_score(const SeqMatrix<Scalar>& q, const SeqMatrix<Scalar>& k,
                                 FlopCounter* counter = nullptr) {
  detail::require_same_shape("dim_score", q, k);
  if (counter) counter->matmul(q.cols(), q.rows(), k.cols());
  // Accumulated over fixed row blocks so every partial product is the same
  // cache-resident size and the cost stays linear in N.
  DimScoreMatrix<Scalar> s = DimScoreMatrix<Scalar>::Zero(q.cols(), k.cols());
  for (Index b = 0; b < q.rows(); b += detail::kRowBlock) {
    const Index len = std::min(detail::kRowBlock, q.rows() - b);
    s.noalias() += q.middleRows(b, len).transpose() * k.middleRows(b, len);
  }
  return s;
}

/// Column-centers H and scales each column to unit variance. Columns with
/// zero variance are left at zero.
template <typename Scalar>
SeqMatrix<Scalar> center_and_standardize(const SeqMatrix<Scalar>& h) {
  SeqMatrix<Scalar> out = h.rowwise() - h.colwise().mean();
  for (Index c = 0; c < out.cols(); ++c) {
    const Scalar var = out.col(c).squaredNorm() / static_cast<Scalar>(out.rows());
    if (var > Scalar(0)) out.col(c) /= std::sqrt(var);
  }
  return out;
}

/// Largest |S - Wq^T (H^T H) Wk| with S the score matrix of the projected
/// inputs H Wq and H Wk. For centered H, H^T H is N times its covariance.
template <typename Scalar>
Scalar covariance_identity_check(const SeqMatrix<Scalar>& h, const Matrix<Scalar>& wq, const Matrix<Scalar>& wk) {
  if (wq.rows() != h.cols() || wk.rows() != h.cols() || wq.cols() != wk.cols())
    throw DimensionError("covariance_identity_check: coefficient matrix shape");
  const Scalar tol = std::is_same_v<Scalar, double> ? Scalar(1e-12) : Scalar(1e-5);
  for (Index c = 0; c < h.cols(); ++c) {
    if (std::abs(h.col(c).mean()) > tol)
      throw PreconditionError("covariance_identity_check: column " + std::to_string(c) + " is not centered");
  }
  const Matrix<Scalar> s = dim_score<Scalar>(matmul(h, wq), matmul(h, wk));
  const Matrix<Scalar> gram = matmul<Scalar>(h.transpose(), h);
  const Matrix<Scalar> rhs = matmul<Scalar>(matmul<Scalar>(wq.transpose(), gram), wk);
  return max_abs_diff(s, rhs);
}

/// X[i,j,k] = f(S)[j,k] * V[i,k]. Each k-slice X[:,:,k] is v_k f(s_k)^T, the
/// column-matched outer product.
template <typename Scalar>
AttnTensor3<Scalar> kr_tensor(const DimScoreMatrix<Scalar>& s, const SeqMatrix<Scalar>& v, NormMode f) {
  if (s.rows() != s.cols() || s.cols() != v.cols())
    throw DimensionError("kr_tensor: S must be d x d with d = V.cols()");
  const Matrix<Scalar> fs = apply_norm(s, f, v.rows());
  const Index n = v.rows(), d = v.cols();
  AttnTensor3<Scalar> x(n, d, d);
  for (Index i = 0; i < n; ++i) x.slice(i) = fs.array().rowwise() * v.row(i).array();
  return x;
}

/// Sum over the second index: X[i,k] = sum_j X[i,j,k].
template <typename Scalar>
SeqMatrix<Scalar> explicit_rep(const AttnTensor3<Scalar>& x) {
  SeqMatrix<Scalar> out(x.dim(0), x.dim(2));
  for (Index i = 0; i < x.dim(0); ++i) out.row(i) = x.slice(i).colwise().sum();
  return out;
}

/// Sum over the third index: X[i,j] = sum_k X[i,j,k].
template <typename Scalar>
SeqMatrix<Scalar> implicit_rep(const AttnTensor3<Scalar>& x) {
  SeqMatrix<Scalar> out(x.dim(0), x.dim(1));
  for (Index i = 0; i < x.dim(0); ++i)
    for (Index j = 0; j < x.dim(1); ++j) {
      Scalar acc(0);
      for (Index m = 0; m < x.dim(2); ++m) acc += x(i, j, m);
      out(i, j) = acc;
    }
  return out;
}

/// O[i,j] = sum_m W[j,m] X[i,j,m]; the same filter is slid over every token
/// slice and each output column j has its own weight row.
template <typename Scalar>
SeqMatrix<Scalar> conv_extract(const AttnTensor3<Scalar>& x, const ConvFilter<Scalar>& w) {
  if (w.rows() != x.dim(1) || w.cols() != x.dim(2))
    throw DimensionError("conv_extract: filter must be d x d, got " + detail::shape_str(w.rows(), w.cols()));
  SeqMatrix<Scalar> out(x.dim(0), x.dim(1));
  // same accumulation order as implicit_rep, so an all-ones filter reproduces it bit for bit
  for (Index i = 0; i < x.dim(0); ++i)
    for (Index j = 0; j < x.dim(1); ++j) {
      Scalar acc(0);
      for (Index m = 0; m < x.dim(2); ++m) acc += w(j, m) * x(i, j, m);
      out(i, j) = acc;
    }
  return out;
}

// ---------------------------------------------------------------------------
// Dimension-wise attention, factored

/// O = V (W o f(Q^T K))^T. Equal to conv_extract(kr_tensor(dim_score(Q, K), V, f), W)
/// at O(N d^2) cost and O(d^2) extra memory.
template <typename Scalar>
SeqMatrix<Scalar> dim_attention_factored(const SeqMatrix<Scalar>& q, const SeqMatrix<Scalar>& k,
                                         const SeqMatrix<Scalar>& v, const ConvFilter<Scalar>& w, NormMode f,
                                         FlopCounter* counter = nullptr) {
  detail::require_same_shape("dim_attention_factored", q, k);
  detail::require_same_shape("dim_attention_factored", q, v);
  if (w.rows() != q.cols() || w.cols() != q.cols()) throw DimensionError("dim_attention_factored: filter must be d x d");
  const Matrix<Scalar> fs = apply_norm(dim_score(q, k, counter), f, q.rows());
  const Matrix<Scalar> weighted_t = w.cwiseProduct(fs).transpose();
  if (counter) {
    counter->elementwise(weighted_t.size());
    counter->matmul(v.rows(), v.cols(), weighted_t.cols());
  }
  SeqMatrix<Scalar> out(v.rows(), v.cols());
  for (Index b = 0; b < v.rows(); b += detail::kRowBlock) {
    const Index len = std::min(detail::kRowBlock, v.rows() - b);
    out.middleRows(b, len).noalias() = v.middleRows(b, len) * weighted_t;
  }
  return out;
}

/// Parameters of the multi-conv block: g groups, each projecting to its own
/// Q, K, V and carrying c filters; the g*c outputs are concatenated
/// group-major and projected by WO.
template <typename Scalar>
struct MultiConvParams {
  struct Group {
    Matrix<Scalar> wq, wk, wv;            // d_model x d
    std::vector<ConvFilter<Scalar>> filters;  // c filters, d x d
  };
  std::vector<Group> groups;
  Matrix<Scalar> wo;  // (g*c*d) x d_model

  Index head_dim() const { return groups.empty() ? 0 : groups.front().wq.cols(); }
  Index convs_per_group() const { return groups.empty() ? 0 : static_cast<Index>(groups.front().filters.size()); }
  Index concat_width() const { return static_cast<Index>(groups.size()) * convs_per_group() * head_dim(); }
};

template <typename Scalar>
void validate(const MultiConvParams<Scalar>& p, Index d_model) {
  if (p.groups.empty()) throw DimensionError("multi_conv: at least one group required");
  const Index d = p.head_dim(), c = p.convs_per_group();
  if (c < 1) throw DimensionError("multi_conv: at least one filter per group required");
  for (const auto& g : p.groups) {
    for (const auto* w : {&g.wq, &g.wk, &g.wv})
      if (w->rows() != d_model || w->cols() != d)
        throw DimensionError("multi_conv: projection shape " + detail::shape_str(w->rows(), w->cols()));
    if (static_cast<Index>(g.filters.size()) != c) throw DimensionError("multi_conv: unequal filter counts");
    for (const auto& f : g.filters)
      if (f.rows() != d || f.cols() != d) throw DimensionError("multi_conv: filter must be d x d");
  }
  if (p.wo.rows() != p.concat_width())
    throw DimensionError("multi_conv: WO has " + std::to_string(p.wo.rows()) + " rows, concat width is " +
                         std::to_string(p.concat_width()));
}

template <typename Scalar>
SeqMatrix<Scalar> multi_conv_block(const SeqMatrix<Scalar>& x, const MultiConvParams<Scalar>& p, NormMode f,
                                   FlopCounter* counter = nullptr) {
  validate(p, x.cols());
  const Index d = p.head_dim(), c = p.convs_per_group();
  Matrix<Scalar> concat(x.rows(), p.concat_width());
  Index col = 0;
  for (const auto& g : p.groups) {
    const Matrix<Scalar> q = matmul(x, g.wq, counter);
    const Matrix<Scalar> k = matmul(x, g.wk, counter);
    const Matrix<Scalar> v = matmul(x, g.wv, counter);
    const Matrix<Scalar> fs = apply_norm(dim_score(q, k, counter), f, x.rows());
    for (Index t = 0; t < c; ++t, col += d) {
      const Matrix<Scalar> weighted = g.filters[t].cwiseProduct(fs);
      if (counter) counter->elementwise(weighted.size());
      concat.middleCols(col, d) = matmul<Scalar>(v, weighted.transpose(), counter);
    }
  }
  return matmul(concat, p.wo, counter);
}

}  // namespace tcoder
