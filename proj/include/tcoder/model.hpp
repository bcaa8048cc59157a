#pragma once

// Encoder and causal decoder stacks built from the attention modules:
// embeddings + positions, then L post-norm blocks of
//   attention -> residual -> layer norm -> FFN (ReLU) -> residual -> layer norm,
// and an output head tied to the token embedding. The attention sublayer is
// either token-wise multi-head or dimension-wise multi-conv; nothing else
// differs between the two kinds.

#include <optional>
#include <string>
#include <vector>

#include "tcoder/checkpoint.hpp"
#include "tcoder/config.hpp"
#include "tcoder/gradients.hpp"

namespace tcoder {

template <typename Scalar>
struct LayerParams {
  MultiHeadParams<Scalar> mha;   // token_multi_head
  MultiConvParams<Scalar> conv;  // dim_multi_conv
  Matrix<Scalar> ln1_gain, ln1_bias;
  Matrix<Scalar> ffn_w1, ffn_b1, ffn_w2, ffn_b2;
  Matrix<Scalar> ln2_gain, ln2_bias;
};

template <typename Scalar>
struct ModelParams {
  Matrix<Scalar> embedding;  // vocab x d_model; also the output head
  Matrix<Scalar> positions;  // max_len x d_model when learned, else empty
  Matrix<Scalar> out_bias;   // 1 x vocab
  std::vector<LayerParams<Scalar>> layers;

  /// Calls f(name, matrix) for every trainable tensor in a fixed order.
  template <typename F>
  void visit(F&& f) {
    visit_impl(*this, f);
  }
  template <typename F>
  void visit(F&& f) const {
    visit_impl(*this, f);
  }

  ModelParams zeros_like() const {
    ModelParams z = *this;
    z.visit([](const std::string&, Matrix<Scalar>& m) { m.setZero(); });
    return z;
  }

  Index parameter_count() const {
    Index n = 0;
    visit([&](const std::string&, const Matrix<Scalar>& m) { n += m.size(); });
    return n;
  }

 private:
  template <typename Self, typename F>
  static void visit_impl(Self& self, F& f) {
    f("embedding", self.embedding);
    if (self.positions.size()) f("positions", self.positions);
    f("out_bias", self.out_bias);
    for (std::size_t l = 0; l < self.layers.size(); ++l) {
      auto& layer = self.layers[l];
      const std::string p = "layers." + std::to_string(l) + ".";
      if (layer.mha.wq.size()) {
        f(p + "attn.wq", layer.mha.wq);
        f(p + "attn.wk", layer.mha.wk);
        f(p + "attn.wv", layer.mha.wv);
        f(p + "attn.wo", layer.mha.wo);
      }
      for (std::size_t g = 0; g < layer.conv.groups.size(); ++g) {
        auto& grp = layer.conv.groups[g];
        const std::string gp = p + "attn.group" + std::to_string(g) + ".";
        f(gp + "wq", grp.wq);
        f(gp + "wk", grp.wk);
        f(gp + "wv", grp.wv);
        for (std::size_t t = 0; t < grp.filters.size(); ++t) f(gp + "filter" + std::to_string(t), grp.filters[t]);
      }
      if (layer.conv.wo.size()) f(p + "attn.wo", layer.conv.wo);
      f(p + "ln1.gain", layer.ln1_gain);
      f(p + "ln1.bias", layer.ln1_bias);
      f(p + "ffn.w1", layer.ffn_w1);
      f(p + "ffn.b1", layer.ffn_b1);
      f(p + "ffn.w2", layer.ffn_w2);
      f(p + "ffn.b2", layer.ffn_b2);
      f(p + "ln2.gain", layer.ln2_gain);
      f(p + "ln2.bias", layer.ln2_bias);
    }
  }
};

/// Seeded initialization. Attention weights draw from per-layer streams
/// separate from everything else, so two configs that differ only in the
/// attention kind share all other initial parameters.
template <typename Scalar>
ModelParams<Scalar> init_params(const BlockConfig& cfg, std::uint64_t seed);

/// Sinusoidal position table, rows 0..n-1.
template <typename Scalar>
Matrix<Scalar> sinusoidal_positions(Index n, Index d_model);

struct ForwardOptions {
  bool causal = false;
  MaskedMode masked_mode = MaskedMode::streaming;
  /// Replace every attention sublayer output by zeros.
  bool zero_attention = false;
  /// Dropout is active only when an Rng is supplied.
  Rng* dropout_rng = nullptr;
};

template <typename Scalar>
struct ForwardCache;

/// Logits [N x vocab] for a token sequence.
template <typename Scalar>
Matrix<Scalar> model_forward(const std::vector<int>& tokens, const ModelParams<Scalar>& params, const BlockConfig& cfg,
                             const ForwardOptions& opt = {}, ForwardCache<Scalar>* cache = nullptr);

/// Bidirectional stack (dimension-wise or token-wise attention).
template <typename Scalar>
Matrix<Scalar> encoder_forward(const std::vector<int>& tokens, const ModelParams<Scalar>& params,
                               const BlockConfig& cfg) {
  return model_forward(tokens, params, cfg, {});
}

/// Causal stack: logits at position i depend only on tokens 0..i.
template <typename Scalar>
Matrix<Scalar> decoder_forward(const std::vector<int>& tokens, const ModelParams<Scalar>& params,
                               const BlockConfig& cfg, MaskedMode mode = MaskedMode::streaming) {
  ForwardOptions opt;
  opt.causal = true;
  opt.masked_mode = mode;
  return model_forward(tokens, params, cfg, opt);
}

/// Mean negative log-likelihood of the original tokens at the flagged
/// positions. Throws if no position is flagged.
template <typename Scalar>
Scalar mlm_loss(const Matrix<Scalar>& logits, const std::vector<int>& targets, const std::vector<bool>& mask_positions);

/// Forward + cross-entropy + backward for one sequence. Gradients are scaled
/// by `weight` and added into `grads`. Returns the unweighted mean NLL.
template <typename Scalar>
Scalar loss_and_grad(const std::vector<int>& input, const std::vector<int>& target, const ModelParams<Scalar>& params,
                     const BlockConfig& cfg, const ForwardOptions& opt, ModelParams<Scalar>& grads,
                     Scalar weight = Scalar(1));

template <typename Scalar>
struct AdamState {
  ModelParams<Scalar> m, v;
  Index step = 0;
};

template <typename Scalar>
AdamState<Scalar> make_adam_state(const ModelParams<Scalar>& params) {
  return {params.zeros_like(), params.zeros_like(), 0};
}

/// Linear warmup to `lr`, then decay proportional to 1/sqrt(step).
double learning_rate(const TrainConfig& cfg, Index step);

/// One training sequence: `target` holds kIgnoreTarget where not scored.
struct TrainExample {
  std::vector<int> input, target;
};

struct StepStats {
  double loss = 0.0;
  double grad_norm = 0.0;
  double lr = 0.0;
  Index scored = 0;
};

class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Forward/backward over the batch (scored-token weighted mean loss),
/// global-norm clipping, and one Adam update.
template <typename Scalar>
StepStats train_step(const std::vector<TrainExample>& batch, ModelParams<Scalar>& params, AdamState<Scalar>& adam,
                     const BlockConfig& cfg, const TrainConfig& tcfg, bool causal, Rng* dropout_rng = nullptr);

/// Token-weighted mean NLL without updating anything.
template <typename Scalar>
double evaluate_nll(const std::vector<TrainExample>& examples, const ModelParams<Scalar>& params,
                    const BlockConfig& cfg, bool causal, Index* scored = nullptr);

template <typename Scalar>
void add_to_checkpoint(CheckpointFile& file, const ModelParams<Scalar>& params);

/// Fills `params` (already shaped for the config) from a checkpoint.
template <typename Scalar>
void load_from_checkpoint(const CheckpointFile& file, ModelParams<Scalar>& params);

}  // namespace tcoder
