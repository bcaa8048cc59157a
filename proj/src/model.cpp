#include "tcoder/model.hpp"

#include <cmath>
#include <sstream>

namespace tcoder {

namespace {

// Attention weights get their own streams so that the rest of the model is
// initialized identically whatever the attention kind.
constexpr std::uint64_t kEmbeddingStream = 0;
constexpr std::uint64_t kAttentionStream = 1000;
constexpr std::uint64_t kBlockStream = 2000;

constexpr double kFilterNoise = 0.1;

template <typename Scalar>
Matrix<Scalar> ones_row(Index n) {
  return Matrix<Scalar>::Ones(1, n);
}

template <typename Scalar>
Matrix<Scalar> zeros_row(Index n) {
  return Matrix<Scalar>::Zero(1, n);
}

template <typename Scalar>
Matrix<Scalar> dropout_mask(Index rows, Index cols, double p, Rng& rng) {
  Matrix<Scalar> m(rows, cols);
  const auto keep = static_cast<Scalar>(1.0 / (1.0 - p));
  for (Index t = 0; t < m.size(); ++t) m.data()[t] = rng.uniform() < p ? Scalar(0) : keep;
  return m;
}

}  // namespace

template <typename Scalar>
Matrix<Scalar> sinusoidal_positions(Index n, Index d_model) {
  Matrix<Scalar> pe(n, d_model);
  for (Index pos = 0; pos < n; ++pos)
    for (Index c = 0; c < d_model; ++c) {
      const double rate = std::pow(10000.0, -static_cast<double>(2 * (c / 2)) / static_cast<double>(d_model));
      const double angle = static_cast<double>(pos) * rate;
      pe(pos, c) = static_cast<Scalar>(c % 2 == 0 ? std::sin(angle) : std::cos(angle));
    }
  return pe;
}

template <typename Scalar>
ModelParams<Scalar> init_params(const BlockConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const Rng root(seed);
  const Index dm = cfg.d_model, d = cfg.head_dim();
  ModelParams<Scalar> p;

  Rng emb = root.fork(kEmbeddingStream);
  p.embedding = rand_init<Scalar>(cfg.vocab, dm, InitScheme::gaussian(1.0 / std::sqrt(static_cast<double>(dm))), emb);
  if (cfg.positional == PositionalKind::learned)
    p.positions = rand_init<Scalar>(cfg.max_len, dm, InitScheme::gaussian(0.02), emb);
  p.out_bias = zeros_row<Scalar>(cfg.vocab);

  for (Index l = 0; l < cfg.layers; ++l) {
    LayerParams<Scalar> layer;
    Rng ar = root.fork(kAttentionStream + static_cast<std::uint64_t>(l));
    if (cfg.attention == AttentionKind::token_multi_head) {
      const Index width = cfg.heads * d;
      layer.mha.heads = cfg.heads;
      layer.mha.wq = rand_init<Scalar>(dm, width, InitScheme::xavier(), ar);
      layer.mha.wk = rand_init<Scalar>(dm, width, InitScheme::xavier(), ar);
      layer.mha.wv = rand_init<Scalar>(dm, width, InitScheme::xavier(), ar);
      layer.mha.wo = rand_init<Scalar>(width, dm, InitScheme::xavier(), ar);
    } else {
      const auto qk_shrink = static_cast<Scalar>(std::pow(static_cast<double>(cfg.max_len), -0.25));
      for (Index g = 0; g < cfg.groups; ++g) {
        typename MultiConvParams<Scalar>::Group grp;
        // S = Q^T K sums N products, so its entries grow like sqrt(N); shrinking
        // both projections by N^(-1/4) keeps them O(1) at init and the
        // normalization away from saturation.
        grp.wq = rand_init<Scalar>(dm, d, InitScheme::xavier(), ar) * qk_shrink;
        grp.wk = rand_init<Scalar>(dm, d, InitScheme::xavier(), ar) * qk_shrink;
        grp.wv = rand_init<Scalar>(dm, d, InitScheme::xavier(), ar);
        for (Index t = 0; t < cfg.convs; ++t) {
          Matrix<Scalar> w = rand_uniform<Scalar>(d, d, ar, -kFilterNoise, kFilterNoise);
          w.array() += Scalar(1);
          grp.filters.push_back(std::move(w));
        }
        layer.conv.groups.push_back(std::move(grp));
      }
      layer.conv.wo = rand_init<Scalar>(cfg.groups * cfg.convs * d, dm, InitScheme::xavier(), ar);
    }

    Rng br = root.fork(kBlockStream + static_cast<std::uint64_t>(l));
    layer.ln1_gain = ones_row<Scalar>(dm);
    layer.ln1_bias = zeros_row<Scalar>(dm);
    layer.ffn_w1 = rand_init<Scalar>(dm, cfg.ffn_dim, InitScheme::xavier(), br);
    layer.ffn_b1 = zeros_row<Scalar>(cfg.ffn_dim);
    layer.ffn_w2 = rand_init<Scalar>(cfg.ffn_dim, dm, InitScheme::xavier(), br);
    layer.ffn_b2 = zeros_row<Scalar>(dm);
    layer.ln2_gain = ones_row<Scalar>(dm);
    layer.ln2_bias = zeros_row<Scalar>(dm);
    p.layers.push_back(std::move(layer));
  }
  return p;
}

// ---------------------------------------------------------------------------
// Forward with saved activations

template <typename Scalar>
struct AttnCache {
  // token kind: one entry holding the full-width projections, per-head
  // weights in `weights`; dim kind: one entry per group, F in `weights`
  std::vector<Matrix<Scalar>> q, k, v, weights;
  Matrix<Scalar> concat;
};

template <typename Scalar>
struct LayerCache {
  Matrix<Scalar> x;
  AttnCache<Scalar> attn;
  Matrix<Scalar> attn_drop, ffn_drop;  // empty when dropout is off
  LayerNormCache<Scalar> ln1, ln2;
  Matrix<Scalar> h1, ffn_pre, ffn_act;
};

template <typename Scalar>
struct ForwardCache {
  std::vector<LayerCache<Scalar>> layers;
  Matrix<Scalar> final_h;
};

namespace {

template <typename Scalar>
Matrix<Scalar> attention_forward(const Matrix<Scalar>& x, const LayerParams<Scalar>& layer, const BlockConfig& cfg,
                                 const ForwardOptions& opt, AttnCache<Scalar>& cache) {
  const Index n = x.rows();
  if (cfg.attention == AttentionKind::token_multi_head) {
    const auto& p = layer.mha;
    const Index d = p.head_dim();
    cache.q = {x * p.wq};
    cache.k = {x * p.wk};
    cache.v = {x * p.wv};
    cache.weights.assign(static_cast<std::size_t>(p.heads), {});
    cache.concat.resize(n, p.heads * d);
    for (Index h = 0; h < p.heads; ++h) {
      cache.concat.middleCols(h * d, d) = token_attention_with_weights<Scalar>(
          cache.q[0].middleCols(h * d, d), cache.k[0].middleCols(h * d, d), cache.v[0].middleCols(h * d, d),
          opt.causal, cache.weights[static_cast<std::size_t>(h)]);
    }
    return cache.concat * p.wo;
  }

  const auto& p = layer.conv;
  const Index d = p.head_dim(), c = p.convs_per_group();
  const MaskedOptions mopt{opt.masked_mode, cfg.masked_position_scale};
  cache.q.clear();
  cache.k.clear();
  cache.v.clear();
  cache.weights.clear();
  cache.concat.resize(n, p.concat_width());
  Index col = 0;
  for (const auto& g : p.groups) {
    cache.q.push_back(x * g.wq);
    cache.k.push_back(x * g.wk);
    cache.v.push_back(x * g.wv);
    const auto& q = cache.q.back();
    const auto& k = cache.k.back();
    const auto& v = cache.v.back();
    if (opt.causal) {
      for (Index t = 0; t < c; ++t, col += d) cache.concat.middleCols(col, d) = masked_output<Scalar>(q, k, v, g.filters[t], mopt);
    } else {
      cache.weights.push_back(apply_norm<Scalar>(q.transpose() * k, cfg.norm, n));
      const auto& fs = cache.weights.back();
      // all filters of the group in one product: V [ (W_1 o F)^T ... (W_c o F)^T ]
      Matrix<Scalar> stacked(d, c * d);
      for (Index t = 0; t < c; ++t) stacked.middleCols(t * d, d) = g.filters[t].cwiseProduct(fs).transpose();
      cache.concat.middleCols(col, c * d).noalias() = v * stacked;
      col += c * d;
    }
  }
  return cache.concat * p.wo;
}

template <typename Scalar>
Matrix<Scalar> attention_backward(const Matrix<Scalar>& x, const LayerParams<Scalar>& layer, const BlockConfig& cfg,
                                  const ForwardOptions& opt, const AttnCache<Scalar>& cache,
                                  const Matrix<Scalar>& d_out, LayerParams<Scalar>& grad, Scalar weight) {
  Matrix<Scalar> dx = Matrix<Scalar>::Zero(x.rows(), x.cols());
  if (cfg.attention == AttentionKind::token_multi_head) {
    const auto& p = layer.mha;
    auto& gp = grad.mha;
    const Index d = p.head_dim();
    gp.wo.noalias() += weight * (cache.concat.transpose() * d_out);
    const Matrix<Scalar> d_concat = d_out * p.wo.transpose();
    Matrix<Scalar> dq(x.rows(), p.wq.cols()), dk(x.rows(), p.wk.cols()), dv(x.rows(), p.wv.cols());
    for (Index h = 0; h < p.heads; ++h) {
      const auto g = token_attention_backward<Scalar>(
          cache.q[0].middleCols(h * d, d), cache.k[0].middleCols(h * d, d), cache.v[0].middleCols(h * d, d),
          cache.weights[static_cast<std::size_t>(h)], d_concat.middleCols(h * d, d));
      dq.middleCols(h * d, d) = g.dq;
      dk.middleCols(h * d, d) = g.dk;
      dv.middleCols(h * d, d) = g.dv;
    }
    gp.wq.noalias() += weight * (x.transpose() * dq);
    gp.wk.noalias() += weight * (x.transpose() * dk);
    gp.wv.noalias() += weight * (x.transpose() * dv);
    dx.noalias() += dq * p.wq.transpose();
    dx.noalias() += dk * p.wk.transpose();
    dx.noalias() += dv * p.wv.transpose();
    return dx;
  }

  const auto& p = layer.conv;
  auto& gp = grad.conv;
  const Index n = x.rows(), d = p.head_dim(), c = p.convs_per_group();
  const MaskedOptions mopt{opt.masked_mode, cfg.masked_position_scale};
  gp.wo.noalias() += weight * (cache.concat.transpose() * d_out);
  const Matrix<Scalar> d_concat = d_out * p.wo.transpose();
  Index col = 0;
  for (std::size_t gi = 0; gi < p.groups.size(); ++gi) {
    const auto& g = p.groups[gi];
    auto& gg = gp.groups[gi];
    const auto& q = cache.q[gi];
    const auto& k = cache.k[gi];
    const auto& v = cache.v[gi];
    Matrix<Scalar> dq = Matrix<Scalar>::Zero(n, d), dk = Matrix<Scalar>::Zero(n, d), dv = Matrix<Scalar>::Zero(n, d);
    if (opt.causal) {
      for (Index t = 0; t < c; ++t, col += d) {
        const auto ag = masked_output_backward<Scalar>(q, k, v, g.filters[t], mopt, d_concat.middleCols(col, d));
        dq += ag.dq;
        dk += ag.dk;
        dv += ag.dv;
        gg.filters[t] += weight * ag.dw;
      }
    } else {
      // The filters share F, so accumulate dF over all of them and push it
      // through f and S once.
      const auto& fs = cache.weights[gi];
      const auto d_group = d_concat.middleCols(col, c * d);
      col += c * d;
      Matrix<Scalar> stacked(c * d, d);
      for (Index t = 0; t < c; ++t) stacked.middleRows(t * d, d) = g.filters[t].cwiseProduct(fs);
      dv.noalias() = d_group * stacked;
      // block t of d_group^T V is dL/d(W_t o F)
      Matrix<Scalar> dp(c * d, d);
      dp.noalias() = d_group.transpose() * v;
      Matrix<Scalar> df = Matrix<Scalar>::Zero(d, d);
      for (Index t = 0; t < c; ++t) {
        const auto dpt = dp.middleRows(t * d, d);
        gg.filters[t] += weight * dpt.cwiseProduct(fs);
        df += dpt.cwiseProduct(g.filters[t]);
      }
      const Matrix<Scalar> ds = norm_backward<Scalar>(fs, df, cfg.norm, n);
      dq.noalias() = k * ds.transpose();
      dk.noalias() = q * ds;
    }
    gg.wq.noalias() += weight * (x.transpose() * dq);
    gg.wk.noalias() += weight * (x.transpose() * dk);
    gg.wv.noalias() += weight * (x.transpose() * dv);
    dx.noalias() += dq * g.wq.transpose();
    dx.noalias() += dk * g.wk.transpose();
    dx.noalias() += dv * g.wv.transpose();
  }
  return dx;
}

template <typename Scalar>
Matrix<Scalar> embed(const std::vector<int>& tokens, const ModelParams<Scalar>& params, const BlockConfig& cfg) {
  const auto n = static_cast<Index>(tokens.size());
  if (n < 1) throw DimensionError("model: empty sequence");
  if (n > cfg.max_len)
    throw DimensionError("model: sequence of " + std::to_string(n) + " exceeds max_len " + std::to_string(cfg.max_len));
  Matrix<Scalar> x = embedding_forward(params.embedding, tokens) * std::sqrt(static_cast<Scalar>(cfg.d_model));
  if (cfg.positional == PositionalKind::learned)
    x += params.positions.topRows(n);
  else
    x += sinusoidal_positions<Scalar>(n, cfg.d_model);
  return x;
}

}  // namespace

template <typename Scalar>
Matrix<Scalar> model_forward(const std::vector<int>& tokens, const ModelParams<Scalar>& params, const BlockConfig& cfg,
                             const ForwardOptions& opt, ForwardCache<Scalar>* cache) {
  if (static_cast<Index>(params.layers.size()) != cfg.layers) throw DimensionError("model: layer count mismatch");
  const bool drop = opt.dropout_rng && cfg.dropout > 0.0;
  ForwardCache<Scalar> local;
  ForwardCache<Scalar>& fc = cache ? *cache : local;
  fc.layers.assign(params.layers.size(), {});

  Matrix<Scalar> x = embed(tokens, params, cfg);
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    const auto& layer = params.layers[l];
    auto& lc = fc.layers[l];
    lc.x = x;
    Matrix<Scalar> a;
    if (opt.zero_attention) {
      a.setZero(x.rows(), x.cols());
    } else {
      a = attention_forward(x, layer, cfg, opt, lc.attn);
    }
    if (drop) {
      lc.attn_drop = dropout_mask<Scalar>(a.rows(), a.cols(), cfg.dropout, *opt.dropout_rng);
      a = a.cwiseProduct(lc.attn_drop);
    }
    lc.h1 = layer_norm_forward<Scalar>(x + a, layer.ln1_gain, layer.ln1_bias, &lc.ln1);
    lc.ffn_pre = linear_forward(lc.h1, layer.ffn_w1, layer.ffn_b1);
    lc.ffn_act = relu_forward(lc.ffn_pre);
    Matrix<Scalar> f = linear_forward(lc.ffn_act, layer.ffn_w2, layer.ffn_b2);
    if (drop) {
      lc.ffn_drop = dropout_mask<Scalar>(f.rows(), f.cols(), cfg.dropout, *opt.dropout_rng);
      f = f.cwiseProduct(lc.ffn_drop);
    }
    x = layer_norm_forward<Scalar>(lc.h1 + f, layer.ln2_gain, layer.ln2_bias, &lc.ln2);
  }
  fc.final_h = x;
  Matrix<Scalar> logits = x * params.embedding.transpose();
  logits.rowwise() += params.out_bias.row(0);
  return logits;
}

template <typename Scalar>
Scalar mlm_loss(const Matrix<Scalar>& logits, const std::vector<int>& targets, const std::vector<bool>& mask_positions) {
  if (targets.size() != mask_positions.size()) throw DimensionError("mlm_loss: targets and mask differ in length");
  std::vector<int> scored(targets.size(), kIgnoreTarget);
  for (std::size_t i = 0; i < targets.size(); ++i)
    if (mask_positions[i]) scored[i] = targets[i];
  return cross_entropy(logits, scored);
}

template <typename Scalar>
Scalar loss_and_grad(const std::vector<int>& input, const std::vector<int>& target, const ModelParams<Scalar>& params,
                     const BlockConfig& cfg, const ForwardOptions& opt, ModelParams<Scalar>& grads, Scalar weight) {
  ForwardCache<Scalar> fc;
  const Matrix<Scalar> logits = model_forward(input, params, cfg, opt, &fc);
  Matrix<Scalar> dlogits;
  const Scalar loss = cross_entropy(logits, target, &dlogits);
  const bool drop = opt.dropout_rng && cfg.dropout > 0.0;

  // tied head: logits = h E^T + b
  grads.out_bias.noalias() += weight * dlogits.colwise().sum();
  grads.embedding.noalias() += weight * (dlogits.transpose() * fc.final_h);
  Matrix<Scalar> dx = dlogits * params.embedding;

  for (std::size_t l = params.layers.size(); l-- > 0;) {
    const auto& layer = params.layers[l];
    auto& gl = grads.layers[l];
    const auto& lc = fc.layers[l];

    const auto ln2 = layer_norm_backward(lc.ln2, layer.ln2_gain, dx);
    gl.ln2_gain += weight * ln2.dgamma;
    gl.ln2_bias += weight * ln2.dbeta;
    Matrix<Scalar> dh1 = ln2.dx;
    Matrix<Scalar> df = ln2.dx;
    if (drop) df = df.cwiseProduct(lc.ffn_drop);
    const auto l2 = linear_backward(lc.ffn_act, layer.ffn_w2, df);
    gl.ffn_w2 += weight * l2.dw;
    gl.ffn_b2 += weight * l2.db;
    const auto l1 = linear_backward(lc.h1, layer.ffn_w1, relu_backward(lc.ffn_pre, l2.dx));
    gl.ffn_w1 += weight * l1.dw;
    gl.ffn_b1 += weight * l1.db;
    dh1 += l1.dx;

    const auto ln1 = layer_norm_backward(lc.ln1, layer.ln1_gain, dh1);
    gl.ln1_gain += weight * ln1.dgamma;
    gl.ln1_bias += weight * ln1.dbeta;
    dx = ln1.dx;
    if (!opt.zero_attention) {
      Matrix<Scalar> da = ln1.dx;
      if (drop) da = da.cwiseProduct(lc.attn_drop);
      dx += attention_backward(lc.x, layer, cfg, opt, lc.attn, da, gl, weight);
    }
  }

  const auto n = static_cast<Index>(input.size());
  if (cfg.positional == PositionalKind::learned) grads.positions.topRows(n) += weight * dx;
  embedding_backward<Scalar>(input, weight * std::sqrt(static_cast<Scalar>(cfg.d_model)) * dx, grads.embedding);
  return loss;
}

// ---------------------------------------------------------------------------
// Optimization

double learning_rate(const TrainConfig& cfg, Index step) {
  if (step < 1) return 0.0;
  if (cfg.warmup <= 0) return cfg.lr;
  const double s = static_cast<double>(step), w = static_cast<double>(cfg.warmup);
  return cfg.lr * std::min(s / w, std::sqrt(w / s));
}

namespace {

Index scored_count(const TrainExample& ex) {
  return static_cast<Index>(std::count_if(ex.target.begin(), ex.target.end(), [](int t) { return t != kIgnoreTarget; }));
}

}  // namespace

template <typename Scalar>
StepStats train_step(const std::vector<TrainExample>& batch, ModelParams<Scalar>& params, AdamState<Scalar>& adam,
                     const BlockConfig& cfg, const TrainConfig& tcfg, bool causal, Rng* dropout_rng) {
  StepStats st;
  for (const auto& ex : batch) st.scored += scored_count(ex);
  if (st.scored == 0) throw std::invalid_argument("train_step: batch has no scored positions");

  ModelParams<Scalar> grads = params.zeros_like();
  ForwardOptions opt;
  opt.causal = causal;
  opt.dropout_rng = dropout_rng;
  double loss = 0.0;
  for (const auto& ex : batch) {
    const Index count = scored_count(ex);
    if (count == 0) continue;
    const auto w = static_cast<Scalar>(static_cast<double>(count) / static_cast<double>(st.scored));
    loss += static_cast<double>(w) * static_cast<double>(loss_and_grad(ex.input, ex.target, params, cfg, opt, grads, w));
  }
  if (!std::isfinite(loss)) {
    std::ostringstream msg;
    msg << "non-finite training loss at step " << adam.step + 1 << " (loss=" << loss << ")";
    throw NonFiniteError(msg.str());
  }
  st.loss = loss;

  double sq = 0.0;
  grads.visit([&](const std::string&, const Matrix<Scalar>& g) { sq += static_cast<double>(g.squaredNorm()); });
  st.grad_norm = std::sqrt(sq);
  if (!std::isfinite(st.grad_norm))
    throw NonFiniteError("non-finite gradient norm at step " + std::to_string(adam.step + 1));
  const double clip = tcfg.clip_norm > 0.0 && st.grad_norm > tcfg.clip_norm ? tcfg.clip_norm / st.grad_norm : 1.0;

  ++adam.step;
  st.lr = learning_rate(tcfg, adam.step);
  const double bc1 = 1.0 - std::pow(tcfg.beta1, static_cast<double>(adam.step));
  const double bc2 = 1.0 - std::pow(tcfg.beta2, static_cast<double>(adam.step));
  const auto b1 = static_cast<Scalar>(tcfg.beta1), b2 = static_cast<Scalar>(tcfg.beta2);
  const auto step_size = static_cast<Scalar>(st.lr / bc1);
  const auto inv_bc2 = static_cast<Scalar>(1.0 / bc2);
  const auto eps = static_cast<Scalar>(tcfg.eps);
  const auto cs = static_cast<Scalar>(clip);

  std::vector<Matrix<Scalar>*> ps, ms, vs;
  std::vector<const Matrix<Scalar>*> gs;
  params.visit([&](const std::string&, Matrix<Scalar>& m) { ps.push_back(&m); });
  adam.m.visit([&](const std::string&, Matrix<Scalar>& m) { ms.push_back(&m); });
  adam.v.visit([&](const std::string&, Matrix<Scalar>& m) { vs.push_back(&m); });
  grads.visit([&](const std::string&, const Matrix<Scalar>& m) { gs.push_back(&m); });
  for (std::size_t t = 0; t < ps.size(); ++t) {
    const auto g = (cs * gs[t]->array()).eval();
    ms[t]->array() = b1 * ms[t]->array() + (Scalar(1) - b1) * g;
    vs[t]->array() = b2 * vs[t]->array() + (Scalar(1) - b2) * g.square();
    ps[t]->array() -= step_size * ms[t]->array() / ((vs[t]->array() * inv_bc2).sqrt() + eps);
    if (!ps[t]->allFinite())
      throw NonFiniteError("non-finite parameter after optimizer step " + std::to_string(adam.step));
  }
  return st;
}

template <typename Scalar>
double evaluate_nll(const std::vector<TrainExample>& examples, const ModelParams<Scalar>& params,
                    const BlockConfig& cfg, bool causal, Index* scored) {
  ForwardOptions opt;
  opt.causal = causal;
  double total = 0.0;
  Index count = 0;
  for (const auto& ex : examples) {
    const Index c = scored_count(ex);
    if (c == 0) continue;
    total += static_cast<double>(cross_entropy(model_forward(ex.input, params, cfg, opt), ex.target)) *
             static_cast<double>(c);
    count += c;
  }
  if (scored) *scored = count;
  if (count == 0) throw std::invalid_argument("evaluate_nll: no scored positions");
  return total / static_cast<double>(count);
}

template <typename Scalar>
void add_to_checkpoint(CheckpointFile& file, const ModelParams<Scalar>& params) {
  params.visit([&](const std::string& name, const Matrix<Scalar>& m) { file.tensors.push_back(to_record(name, m)); });
}

template <typename Scalar>
void load_from_checkpoint(const CheckpointFile& file, ModelParams<Scalar>& params) {
  params.visit([&](const std::string& name, Matrix<Scalar>& m) {
    Matrix<Scalar> loaded = from_record<Scalar>(file.find(name));
    if (loaded.rows() != m.rows() || loaded.cols() != m.cols())
      throw CheckpointError("checkpoint: tensor '" + name + "' has shape " +
                            detail::shape_str(loaded.rows(), loaded.cols()) + ", model expects " +
                            detail::shape_str(m.rows(), m.cols()));
    m = std::move(loaded);
  });
}

#define TCODER_INSTANTIATE(S)                                                                                        \
  template Matrix<S> sinusoidal_positions<S>(Index, Index);                                                          \
  template ModelParams<S> init_params<S>(const BlockConfig&, std::uint64_t);                                         \
  template Matrix<S> model_forward<S>(const std::vector<int>&, const ModelParams<S>&, const BlockConfig&,             \
                                      const ForwardOptions&, ForwardCache<S>*);                                      \
  template S mlm_loss<S>(const Matrix<S>&, const std::vector<int>&, const std::vector<bool>&);                       \
  template S loss_and_grad<S>(const std::vector<int>&, const std::vector<int>&, const ModelParams<S>&,               \
                              const BlockConfig&, const ForwardOptions&, ModelParams<S>&, S);                        \
  template StepStats train_step<S>(const std::vector<TrainExample>&, ModelParams<S>&, AdamState<S>&,                 \
                                   const BlockConfig&, const TrainConfig&, bool, Rng*);                              \
  template double evaluate_nll<S>(const std::vector<TrainExample>&, const ModelParams<S>&, const BlockConfig&, bool, \
                                  Index*);                                                                           \
  template void add_to_checkpoint<S>(CheckpointFile&, const ModelParams<S>&);                                        \
  template void load_from_checkpoint<S>(const CheckpointFile&, ModelParams<S>&);

TCODER_INSTANTIATE(float)
TCODER_INSTANTIATE(double)

#undef TCODER_INSTANTIATE

}  // namespace tcoder
