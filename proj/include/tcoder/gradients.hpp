#pragma once

// Reverse-mode derivatives. Every differentiable op used by the models has an
// explicit backward rule here; a TapeNode records which op ran together with
// the state its rule needs, and backward() dispatches on it. fd_check compares
// any rule against central finite differences.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "tcoder/attention.hpp"
#include "tcoder/masked_attention.hpp"

namespace tcoder {

template <typename Scalar>
using GradSet = std::vector<Matrix<Scalar>>;

// ---------------------------------------------------------------------------
// Per-op rules

template <typename Scalar>
struct MatmulGrads {
  Matrix<Scalar> da, db;
};

template <typename Scalar>
MatmulGrads<Scalar> matmul_backward(const Matrix<Scalar>& a, const Matrix<Scalar>& b, const Matrix<Scalar>& dc) {
  if (dc.rows() != a.rows() || dc.cols() != b.cols()) throw DimensionError("matmul_backward: upstream shape");
  MatmulGrads<Scalar> g;
  g.da.noalias() = dc * b.transpose();
  g.db.noalias() = a.transpose() * dc;
  return g;
}

/// Given y = softmax(x) along `axis` and dL/dy, returns dL/dx.
template <typename Scalar>
Matrix<Scalar> softmax_backward(const Matrix<Scalar>& y, const Matrix<Scalar>& dy, SoftmaxAxis axis) {
  detail::require_same_shape("softmax_backward", y, dy);
  const Matrix<Scalar> prod = dy.cwiseProduct(y);
  if (axis == SoftmaxAxis::rows_over_k) {
    const Vector<Scalar> dots = prod.rowwise().sum();
    return y.cwiseProduct(dy - dots.replicate(1, y.cols()));
  }
  const RowVector<Scalar> dots = prod.colwise().sum();
  return y.cwiseProduct(dy - dots.replicate(y.rows(), 1));
}

/// dL/dS for F = f(S), using the saved post-normalization F.
template <typename Scalar>
Matrix<Scalar> norm_backward(const Matrix<Scalar>& f_of_s, const Matrix<Scalar>& df, NormMode mode, Index n_tokens) {
  switch (mode) {
    case NormMode::none: return df;
    case NormMode::scale_inv_sqrt_n: return df / std::sqrt(static_cast<Scalar>(n_tokens));
    case NormMode::softmax_rows_over_k: return softmax_backward(f_of_s, df, SoftmaxAxis::rows_over_k);
    case NormMode::softmax_cols_over_j: return softmax_backward(f_of_s, df, SoftmaxAxis::cols_over_j);
  }
  return df;
}

template <typename Scalar>
struct AttentionGrads {
  Matrix<Scalar> dq, dk, dv, dw;  // dw empty for token attention
};

/// Backward of O = V (W o F)^T with F = f(Q^T K). Gradients flow through the
/// final product with V, the elementwise product with W, f, and S = Q^T K.
template <typename Scalar>
AttentionGrads<Scalar> dim_attention_backward(const SeqMatrix<Scalar>& q, const SeqMatrix<Scalar>& k,
                                              const SeqMatrix<Scalar>& v, const ConvFilter<Scalar>& w,
                                              const Matrix<Scalar>& f_of_s, NormMode mode,
                                              const SeqMatrix<Scalar>& d_out) {
  detail::require_same_shape("dim_attention_backward", v, d_out);
  AttentionGrads<Scalar> g;
  const Matrix<Scalar> weighted = w.cwiseProduct(f_of_s);
  g.dv.noalias() = d_out * weighted;
  Matrix<Scalar> d_weighted(w.rows(), w.cols());
  d_weighted.noalias() = d_out.transpose() * v;
  g.dw = d_weighted.cwiseProduct(f_of_s);
  const Matrix<Scalar> ds = norm_backward<Scalar>(f_of_s, d_weighted.cwiseProduct(w), mode, q.rows());
  g.dq.noalias() = k * ds.transpose();
  g.dk.noalias() = q * ds;
  return g;
}

/// Backward of the streaming masked output in O(N d^2): a forward scan
/// rebuilds each prefix state G_i for dV and dW, and a reverse scan carries
/// the suffix sum of dL/dG_i for dQ and dK.
template <typename Scalar>
AttentionGrads<Scalar> masked_output_backward(const SeqMatrix<Scalar>& q, const SeqMatrix<Scalar>& k,
                                              const SeqMatrix<Scalar>& v, const ConvFilter<Scalar>& w,
                                              MaskedOptions opt, const SeqMatrix<Scalar>& d_out) {
  detail::require_same_shape("masked_output_backward", v, d_out);
  const Index n = q.rows(), d = q.cols();
  AttentionGrads<Scalar> g;
  g.dq.setZero(n, d);
  g.dk.setZero(n, d);
  g.dv.setZero(n, d);
  g.dw.setZero(d, d);

  Matrix<Scalar> state = Matrix<Scalar>::Zero(d, d);
  Matrix<Scalar> outer(d, d);
  for (Index i = 0; i < n; ++i) {
    const Scalar a = position_scale_factor<Scalar>(i, opt.position_scale);
    state.noalias() += q.row(i).transpose() * k.row(i);
    g.dv.row(i).noalias() = a * (d_out.row(i) * w.cwiseProduct(state));
    outer.noalias() = d_out.row(i).transpose() * v.row(i);
    g.dw.noalias() += a * state.cwiseProduct(outer);
  }

  Matrix<Scalar> suffix = Matrix<Scalar>::Zero(d, d);
  Matrix<Scalar> r(d, d);
  for (Index i = n - 1; i >= 0; --i) {
    const Scalar a = position_scale_factor<Scalar>(i, opt.position_scale);
    suffix.noalias() += a * (d_out.row(i).transpose() * v.row(i));
    r = w.cwiseProduct(suffix);
    g.dq.row(i).noalias() = (r * k.row(i).transpose()).transpose();
    g.dk.row(i).noalias() = q.row(i) * r;
  }
  return g;
}

/// Backward of softmax(Q K^T / sqrt(d)) V given the saved weight matrix P.
template <typename Scalar>
AttentionGrads<Scalar> token_attention_backward(const SeqMatrix<Scalar>& q, const SeqMatrix<Scalar>& k,
                                                const SeqMatrix<Scalar>& v, const Matrix<Scalar>& weights,
                                                const SeqMatrix<Scalar>& d_out) {
  AttentionGrads<Scalar> g;
  const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(q.cols()));
  g.dv.noalias() = weights.transpose() * d_out;
  Matrix<Scalar> dp(weights.rows(), weights.cols());
  dp.noalias() = d_out * v.transpose();
  const Matrix<Scalar> dz = softmax_backward(weights, dp, SoftmaxAxis::rows_over_k);
  g.dq.noalias() = scale * (dz * k);
  g.dk.noalias() = scale * (dz.transpose() * q);
  return g;
}

/// Forward of token attention that also returns the weight matrix.
template <typename Scalar>
SeqMatrix<Scalar> token_attention_with_weights(const SeqMatrix<Scalar>& q, const SeqMatrix<Scalar>& k,
                                               const SeqMatrix<Scalar>& v, bool causal, Matrix<Scalar>& weights) {
  Matrix<Scalar> scores(q.rows(), k.rows());
  scores.noalias() = q * k.transpose();
  scores *= Scalar(1) / std::sqrt(static_cast<Scalar>(q.cols()));
  if (causal)
    for (Index r = 0; r < scores.rows(); ++r)
      for (Index c = r + 1; c < scores.cols(); ++c) scores(r, c) = -std::numeric_limits<Scalar>::infinity();
  weights = softmax_axis(scores, SoftmaxAxis::rows_over_k);
  SeqMatrix<Scalar> out(q.rows(), v.cols());
  out.noalias() = weights * v;
  return out;
}

// ---------------------------------------------------------------------------
// Layer norm, linear, ReLU, embedding, cross-entropy

template <typename Scalar>
struct LayerNormCache {
  Matrix<Scalar> xhat;
  Vector<Scalar> inv_std;
};

template <typename Scalar>
inline constexpr Scalar kLayerNormEps = Scalar(1e-5);

/// Row-wise layer norm with gain and bias (both 1 x D).
template <typename Scalar>
Matrix<Scalar> layer_norm_forward(const Matrix<Scalar>& x, const Matrix<Scalar>& gamma, const Matrix<Scalar>& beta,
                                  LayerNormCache<Scalar>* cache = nullptr) {
  if (gamma.cols() != x.cols() || beta.cols() != x.cols()) throw DimensionError("layer_norm: gain/bias width");
  const Index rows = x.rows(), cols = x.cols();
  Matrix<Scalar> xhat(rows, cols);
  Vector<Scalar> inv_std(rows);
  for (Index r = 0; r < rows; ++r) {
    const Scalar mean = x.row(r).mean();
    const auto centered = x.row(r).array() - mean;
    const Scalar var = centered.square().sum() / static_cast<Scalar>(cols);
    inv_std(r) = Scalar(1) / std::sqrt(var + kLayerNormEps<Scalar>);
    xhat.row(r) = centered * inv_std(r);
  }
  Matrix<Scalar> y = (xhat.array().rowwise() * gamma.row(0).array()).rowwise() + beta.row(0).array();
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->inv_std = std::move(inv_std);
  }
  return y;
}

template <typename Scalar>
struct LayerNormGrads {
  Matrix<Scalar> dx, dgamma, dbeta;
};

template <typename Scalar>
LayerNormGrads<Scalar> layer_norm_backward(const LayerNormCache<Scalar>& cache, const Matrix<Scalar>& gamma,
                                           const Matrix<Scalar>& dy) {
  detail::require_same_shape("layer_norm_backward", cache.xhat, dy);
  const Index cols = dy.cols();
  LayerNormGrads<Scalar> g;
  g.dgamma = dy.cwiseProduct(cache.xhat).colwise().sum();
  g.dbeta = dy.colwise().sum();
  const Matrix<Scalar> dxhat = dy.array().rowwise() * gamma.row(0).array();
  g.dx.resize(dy.rows(), cols);
  for (Index r = 0; r < dy.rows(); ++r) {
    const Scalar sum = dxhat.row(r).sum();
    const Scalar dot = dxhat.row(r).dot(cache.xhat.row(r));
    g.dx.row(r) = (cache.inv_std(r) / static_cast<Scalar>(cols)) *
                  (static_cast<Scalar>(cols) * dxhat.row(r).array() - sum - cache.xhat.row(r).array() * dot).matrix();
  }
  return g;
}

/// y = x W + b with b a 1 x out row.
template <typename Scalar>
Matrix<Scalar> linear_forward(const Matrix<Scalar>& x, const Matrix<Scalar>& w, const Matrix<Scalar>& b) {
  Matrix<Scalar> y = matmul(x, w);
  if (b.size() > 0) y.rowwise() += b.row(0);
  return y;
}

template <typename Scalar>
struct LinearGrads {
  Matrix<Scalar> dx, dw, db;
};

template <typename Scalar>
LinearGrads<Scalar> linear_backward(const Matrix<Scalar>& x, const Matrix<Scalar>& w, const Matrix<Scalar>& dy) {
  LinearGrads<Scalar> g;
  g.dx.noalias() = dy * w.transpose();
  g.dw.noalias() = x.transpose() * dy;
  g.db = dy.colwise().sum();
  return g;
}

template <typename Scalar>
Matrix<Scalar> relu_forward(const Matrix<Scalar>& x) {
  return x.cwiseMax(Scalar(0));
}

template <typename Scalar>
Matrix<Scalar> relu_backward(const Matrix<Scalar>& x, const Matrix<Scalar>& dy) {
  return (x.array() > Scalar(0)).select(dy, Scalar(0));
}

/// Mean negative log-likelihood over positions whose target is not
/// kIgnoreTarget. Writes dL/dlogits when `dlogits` is given.
template <typename Scalar>
Scalar cross_entropy(const Matrix<Scalar>& logits, const std::vector<int>& targets,
                     Matrix<Scalar>* dlogits = nullptr) {
  if (static_cast<Index>(targets.size()) != logits.rows()) throw DimensionError("cross_entropy: one target per row");
  Index count = 0;
  for (int t : targets) {
    if (t == kIgnoreTarget) continue;
    if (t < 0 || t >= logits.cols()) throw std::out_of_range("cross_entropy: target id out of range");
    ++count;
  }
  if (count == 0) throw std::invalid_argument("cross_entropy: no scored positions");
  if (dlogits) dlogits->setZero(logits.rows(), logits.cols());
  double total = 0.0;
  for (Index r = 0; r < logits.rows(); ++r) {
    const int t = targets[static_cast<std::size_t>(r)];
    if (t == kIgnoreTarget) continue;
    const Scalar mx = logits.row(r).maxCoeff();
    const Scalar log_z = mx + std::log((logits.row(r).array() - mx).exp().sum());
    total += static_cast<double>(log_z - logits(r, t));
    if (dlogits) {
      dlogits->row(r) = (logits.row(r).array() - log_z).exp().matrix() / static_cast<Scalar>(count);
      (*dlogits)(r, t) -= Scalar(1) / static_cast<Scalar>(count);
    }
  }
  return static_cast<Scalar>(total / static_cast<double>(count));
}

template <typename Scalar>
Matrix<Scalar> embedding_forward(const Matrix<Scalar>& table, const std::vector<int>& ids) {
  Matrix<Scalar> out(static_cast<Index>(ids.size()), table.cols());
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] < 0 || ids[r] >= table.rows()) throw std::out_of_range("embedding: id out of range");
    out.row(static_cast<Index>(r)) = table.row(ids[r]);
  }
  return out;
}

/// Scatter-adds dy rows into the rows of d_table named by ids.
template <typename Scalar>
void embedding_backward(const std::vector<int>& ids, const Matrix<Scalar>& dy, Matrix<Scalar>& d_table) {
  for (std::size_t r = 0; r < ids.size(); ++r) d_table.row(ids[r]) += dy.row(static_cast<Index>(r));
}

// ---------------------------------------------------------------------------
// Tape nodes

enum class OpKind {
  identity,
  matmul,
  softmax,
  dim_attention,
  masked_output,
  token_attention,
  layer_norm,
  relu,
  cross_entropy,
};

inline std::string to_string(OpKind k) {
  switch (k) {
    case OpKind::identity: return "identity";
    case OpKind::matmul: return "matmul";
    case OpKind::softmax: return "softmax";
    case OpKind::dim_attention: return "dim_attention";
    case OpKind::masked_output: return "masked_output";
    case OpKind::token_attention: return "token_attention";
    case OpKind::layer_norm: return "layer_norm";
    case OpKind::relu: return "relu";
    case OpKind::cross_entropy: return "cross_entropy";
  }
  return "unknown";
}

/// Saved state of one forward op. `saved` holds the op's inputs followed by
/// whatever derived state its backward rule reads (f(S), softmax weights,
/// normalized activations, ...).
template <typename Scalar>
struct TapeNode {
  TapeNode() = default;
  TapeNode(OpKind k, std::vector<Matrix<Scalar>> s) : kind(k), saved(std::move(s)) {}

  OpKind kind = OpKind::identity;
  std::vector<Matrix<Scalar>> saved;
  Index out_rows = 0, out_cols = 0;
  NormMode norm = NormMode::softmax_rows_over_k;
  SoftmaxAxis axis = SoftmaxAxis::rows_over_k;
  MaskedOptions masked;
  std::vector<int> targets;
};

template <typename Scalar>
struct Recorded {
  Matrix<Scalar> output;
  TapeNode<Scalar> node;
};

namespace tape {

template <typename Scalar>
Recorded<Scalar> finish(Matrix<Scalar> out, TapeNode<Scalar> node) {
  node.out_rows = out.rows();
  node.out_cols = out.cols();
  return {std::move(out), std::move(node)};
}

template <typename Scalar>
Recorded<Scalar> identity(const Matrix<Scalar>& x) {
  return finish<Scalar>(x, {OpKind::identity, {x}});
}

template <typename Scalar>
Recorded<Scalar> matmul(const Matrix<Scalar>& a, const Matrix<Scalar>& b) {
  return finish<Scalar>(tcoder::matmul(a, b), {OpKind::matmul, {a, b}});
}

template <typename Scalar>
Recorded<Scalar> softmax(const Matrix<Scalar>& x, SoftmaxAxis axis) {
  Matrix<Scalar> y = softmax_axis(x, axis);
  TapeNode<Scalar> node{OpKind::softmax, {x, y}};
  node.axis = axis;
  return finish<Scalar>(std::move(y), std::move(node));
}

template <typename Scalar>
Recorded<Scalar> dim_attention(const Matrix<Scalar>& q, const Matrix<Scalar>& k, const Matrix<Scalar>& v,
                               const Matrix<Scalar>& w, NormMode f) {
  Matrix<Scalar> fs = apply_norm(dim_score(q, k), f, q.rows());
  Matrix<Scalar> out = dim_attention_factored(q, k, v, w, f);
  TapeNode<Scalar> node{OpKind::dim_attention, {q, k, v, w, std::move(fs)}};
  node.norm = f;
  return finish<Scalar>(std::move(out), std::move(node));
}

template <typename Scalar>
Recorded<Scalar> masked(const Matrix<Scalar>& q, const Matrix<Scalar>& k, const Matrix<Scalar>& v,
                        const Matrix<Scalar>& w, MaskedOptions opt) {
  TapeNode<Scalar> node{OpKind::masked_output, {q, k, v, w}};
  node.masked = opt;
  return finish<Scalar>(masked_output(q, k, v, w, opt), std::move(node));
}

template <typename Scalar>
Recorded<Scalar> token_attention(const Matrix<Scalar>& q, const Matrix<Scalar>& k, const Matrix<Scalar>& v,
                                 bool causal = false) {
  Matrix<Scalar> weights;
  Matrix<Scalar> out = token_attention_with_weights(q, k, v, causal, weights);
  return finish<Scalar>(std::move(out), {OpKind::token_attention, {q, k, v, std::move(weights)}});
}

template <typename Scalar>
Recorded<Scalar> layer_norm(const Matrix<Scalar>& x, const Matrix<Scalar>& gamma, const Matrix<Scalar>& beta) {
  LayerNormCache<Scalar> cache;
  Matrix<Scalar> y = layer_norm_forward(x, gamma, beta, &cache);
  Matrix<Scalar> inv = cache.inv_std;
  return finish<Scalar>(std::move(y), {OpKind::layer_norm, {x, gamma, beta, std::move(cache.xhat), std::move(inv)}});
}

template <typename Scalar>
Recorded<Scalar> relu(const Matrix<Scalar>& x) {
  return finish<Scalar>(relu_forward(x), {OpKind::relu, {x}});
}

template <typename Scalar>
Recorded<Scalar> cross_entropy(const Matrix<Scalar>& logits, const std::vector<int>& targets) {
  Matrix<Scalar> loss(1, 1);
  loss(0, 0) = tcoder::cross_entropy(logits, targets);
  TapeNode<Scalar> node{OpKind::cross_entropy, {logits}};
  node.targets = targets;
  return finish<Scalar>(std::move(loss), std::move(node));
}

}  // namespace tape

/// dL/d(input) for every input of the recorded op, given dL/d(output).
template <typename Scalar>
GradSet<Scalar> backward(const TapeNode<Scalar>& node, const Matrix<Scalar>& upstream) {
  if (upstream.rows() != node.out_rows || upstream.cols() != node.out_cols)
    throw DimensionError("backward(" + to_string(node.kind) + "): upstream is " +
                         detail::shape_str(upstream.rows(), upstream.cols()) + ", output was " +
                         detail::shape_str(node.out_rows, node.out_cols));
  const auto& s = node.saved;
  switch (node.kind) {
    case OpKind::identity: return {upstream};
    case OpKind::matmul: {
      auto g = matmul_backward(s[0], s[1], upstream);
      return {std::move(g.da), std::move(g.db)};
    }
    case OpKind::softmax: return {softmax_backward(s[1], upstream, node.axis)};
    case OpKind::dim_attention: {
      auto g = dim_attention_backward(s[0], s[1], s[2], s[3], s[4], node.norm, upstream);
      return {std::move(g.dq), std::move(g.dk), std::move(g.dv), std::move(g.dw)};
    }
    case OpKind::masked_output: {
      auto g = masked_output_backward(s[0], s[1], s[2], s[3], node.masked, upstream);
      return {std::move(g.dq), std::move(g.dk), std::move(g.dv), std::move(g.dw)};
    }
    case OpKind::token_attention: {
      auto g = token_attention_backward(s[0], s[1], s[2], s[3], upstream);
      return {std::move(g.dq), std::move(g.dk), std::move(g.dv)};
    }
    case OpKind::layer_norm: {
      LayerNormCache<Scalar> cache{s[3], s[4]};
      auto g = layer_norm_backward(cache, s[1], upstream);
      return {std::move(g.dx), std::move(g.dgamma), std::move(g.dbeta)};
    }
    case OpKind::relu: return {relu_backward(s[0], upstream)};
    case OpKind::cross_entropy: {
      Matrix<Scalar> dlogits;
      tcoder::cross_entropy(s[0], node.targets, &dlogits);
      return {dlogits * upstream(0, 0)};
    }
  }
  throw std::invalid_argument("backward: unknown op id " + std::to_string(static_cast<int>(node.kind)));
}

// ---------------------------------------------------------------------------
// Finite-difference oracle

class PrecisionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A differentiable function of several matrices, described by a recorder
/// that runs the forward op and returns its tape node.
template <typename Scalar>
using Recorder = std::function<Recorded<Scalar>(const std::vector<Matrix<Scalar>>&)>;

/// |a - n| / max(|a|, |n|, 1e-8).
inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-8});
}

struct FdReport {
  double max_rel_error = 0.0;
  std::size_t worst_input = 0;
  Index worst_index = 0;
};

/// Central-difference check of the recorded op's backward rule. The
/// scalarizing loss is sum(weights o output); leaving `weights` empty uses
/// all ones, i.e. the plain sum of the outputs. Only f64 is accepted.
template <typename Scalar>
FdReport fd_check(const Recorder<Scalar>& op, std::vector<Matrix<Scalar>> inputs, double h = 1e-5,
                  const Matrix<Scalar>& weights = {}) {
  if constexpr (!std::is_same_v<Scalar, double>) {
    throw PrecisionError("fd_check: finite-difference checks require f64 inputs");
  } else {
    const Recorded<double> base = op(inputs);
    const Matrix<double> w = weights.size() ? weights : Matrix<double>::Ones(base.output.rows(), base.output.cols());
    detail::require_same_shape("fd_check weights", w, base.output);
    const GradSet<double> analytic = backward(base.node, w);
    if (analytic.size() != inputs.size()) throw DimensionError("fd_check: gradient count differs from input count");

    auto loss = [&](const std::vector<Matrix<double>>& in) { return op(in).output.cwiseProduct(w).sum(); };
    FdReport report;
    for (std::size_t a = 0; a < inputs.size(); ++a) {
      detail::require_same_shape("fd_check gradient", analytic[a], inputs[a]);
      for (Index t = 0; t < inputs[a].size(); ++t) {
        const double keep = inputs[a].data()[t];
        inputs[a].data()[t] = keep + h;
        const double up = loss(inputs);
        inputs[a].data()[t] = keep - h;
        const double down = loss(inputs);
        inputs[a].data()[t] = keep;
        const double err = relative_error(analytic[a].data()[t], (up - down) / (2.0 * h));
        if (err > report.max_rel_error) report = {err, a, t};
      }
    }
    return report;
  }
}

}  // namespace tcoder
