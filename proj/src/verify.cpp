#include "tcoder/verify.hpp"

#include <cstdio>
#include <functional>
#include <ostream>

#include "tcoder/analysis.hpp"
#include "tcoder/checkpoint.hpp"
#include "tcoder/data.hpp"

namespace tcoder {

namespace {

using Md = Matrix<double>;

class Suite {
 public:
  Suite(std::string name, double tol) { r_.name = std::move(name), r_.tolerance = tol; }

  void check(double err, const std::string& what) {
    ++r_.cases;
    if (!(err <= r_.worst)) r_.worst = err;  // also catches NaN
    if (!(err <= r_.tolerance) && r_.detail.empty()) r_.detail = what + ": " + std::to_string(err);
  }

  SuiteResult finish() {
    r_.passed = r_.detail.empty() && r_.cases > 0;
    return r_;
  }

 private:
  SuiteResult r_;
};

Index pick(Rng& rng, Index lo, Index hi) { return lo + static_cast<Index>(rng.below(static_cast<std::uint64_t>(hi - lo + 1))); }

SuiteResult dim_equivalence(Rng rng) {
  Suite s("dim_equivalence", 1e-10);
  for (int c = 0; c < 60; ++c) {
    const Index n = pick(rng, 1, 64), d = pick(rng, 1, 16);
    const Md q = rand_uniform<double>(n, d, rng), k = rand_uniform<double>(n, d, rng), v = rand_uniform<double>(n, d, rng);
    const Md w = rand_uniform<double>(d, d, rng);
    for (NormMode f : kAllNormModes) {
      const Md materialized = conv_extract(kr_tensor(dim_score(q, k), v, f), w);
      s.check(max_abs_diff(materialized, dim_attention_factored(q, k, v, w, f)),
              "case " + std::to_string(c) + " " + to_string(f));
    }
  }
  return s.finish();
}

SuiteResult masked_equivalence(Rng rng) {
  Suite s("masked_equivalence", 1e-10);
  for (int c = 0; c < 40; ++c) {
    const Index n = pick(rng, 1, 32), d = pick(rng, 1, 8);
    const Md q = rand_uniform<double>(n, d, rng), k = rand_uniform<double>(n, d, rng), v = rand_uniform<double>(n, d, rng);
    const Md w = rand_uniform<double>(d, d, rng);
    for (bool scale : {false, true}) {
      const Md naive = masked_output(q, k, v, w, {MaskedMode::naive, scale});
      const Md stream = masked_output(q, k, v, w, {MaskedMode::streaming, scale});
      s.check(max_abs_diff(naive, stream), "case " + std::to_string(c));
    }
  }
  return s.finish();
}

BlockConfig tiny_block(AttentionKind kind, Index vocab) {
  BlockConfig cfg;
  cfg.vocab = vocab;
  cfg.d_model = 8;
  cfg.layers = 2;
  cfg.ffn_dim = 12;
  cfg.max_len = 16;
  cfg.attention = kind;
  cfg.heads = 2;
  cfg.groups = 2;
  cfg.convs = 2;
  cfg.dropout = 0.0;
  cfg.precision = Precision::f64;
  return cfg;
}

std::vector<int> random_tokens(Rng& rng, Index n, Index vocab) {
  std::vector<int> t(static_cast<std::size_t>(n));
  for (auto& x : t) x = kFirstRegular + static_cast<int>(rng.below(static_cast<std::uint64_t>(vocab - kFirstRegular)));
  return t;
}

SuiteResult causality(Rng rng) {
  Suite s("causality", 1e-12);
  for (int c = 0; c < 12; ++c) {
    const auto kind = c % 3 == 2 ? AttentionKind::token_multi_head : AttentionKind::dim_multi_conv;
    BlockConfig cfg = tiny_block(kind, 20);
    cfg.masked_position_scale = c % 4 == 1;
    const auto params = init_params<double>(cfg, rng.next_u64());
    const Index n = pick(rng, 2, cfg.max_len);
    auto a = random_tokens(rng, n, cfg.vocab);
    auto b = a;
    const Index cut = pick(rng, 1, n - 1);
    for (Index i = cut; i < n; ++i) b[static_cast<std::size_t>(i)] = random_tokens(rng, 1, cfg.vocab)[0];
    for (MaskedMode mode : {MaskedMode::naive, MaskedMode::streaming}) {
      const Md la = decoder_forward(a, params, cfg, mode), lb = decoder_forward(b, params, cfg, mode);
      s.check(max_abs_diff(la.topRows(cut), lb.topRows(cut)), "config " + std::to_string(c));
    }
  }
  return s.finish();
}

SuiteResult covariance_identity(Rng rng) {
  Suite s("covariance_identity", 1e-10);
  for (int c = 0; c < 30; ++c) {
    const Index n = pick(rng, 2, 40), dm = pick(rng, 1, 12), d = pick(rng, 1, 8);
    const Md h = center_and_standardize<double>(rand_uniform<double>(n, dm, rng));
    s.check(covariance_identity_check<double>(h, rand_uniform<double>(dm, d, rng), rand_uniform<double>(dm, d, rng)),
            "case " + std::to_string(c));
  }
  return s.finish();
}

SuiteResult representations(Rng rng) {
  Suite s("representations", 1e-12);
  for (int c = 0; c < 30; ++c) {
    const Index n = pick(rng, 1, 32), d = pick(rng, 1, 12);
    const Md q = rand_uniform<double>(n, d, rng), k = rand_uniform<double>(n, d, rng), v = rand_uniform<double>(n, d, rng);
    const Md sc = dim_score(q, k);
    s.check(max_abs_diff(explicit_rep(kr_tensor(sc, v, NormMode::softmax_cols_over_j)), v), "explicit");
    for (NormMode f : kAllNormModes) {
      const auto x = kr_tensor(sc, v, f);
      const Md implicit = implicit_rep(x);
      s.check(max_abs_diff(implicit, Md(v * apply_norm(sc, f, n).transpose())), "implicit " + to_string(f));
      s.check(max_abs_diff(conv_extract(x, Md(Md::Ones(d, d))), implicit), "ones filter " + to_string(f));
    }
  }
  return s.finish();
}

double weighted_fd(const Recorder<double>& op, const std::vector<Md>& inputs, Rng& rng) {
  const auto out = op(inputs).output;
  return fd_check<double>(op, inputs, 1e-5, rand_uniform<double>(out.rows(), out.cols(), rng, 0.5, 1.5)).max_rel_error;
}

SuiteResult op_gradients(Rng rng) {
  Suite s("op_gradients", 1e-4);
  for (int c = 0; c < 5; ++c) {
    const Index n = pick(rng, 2, 6), d = pick(rng, 2, 4), m = pick(rng, 2, 5);
    auto u = [&](Index r, Index cc) { return rand_uniform<double>(r, cc, rng); };
    s.check(weighted_fd([](const std::vector<Md>& in) { return tape::matmul(in[0], in[1]); }, {u(n, d), u(d, m)}, rng),
            "matmul");
    for (SoftmaxAxis ax : {SoftmaxAxis::rows_over_k, SoftmaxAxis::cols_over_j})
      s.check(weighted_fd([ax](const std::vector<Md>& in) { return tape::softmax(in[0], ax); }, {u(n, d)}, rng),
              "softmax");
    for (NormMode f : kAllNormModes)
      s.check(weighted_fd([f](const std::vector<Md>& in) { return tape::dim_attention(in[0], in[1], in[2], in[3], f); },
                          {u(n, d), u(n, d), u(n, d), u(d, d)}, rng),
              "dim_attention " + to_string(f));
    for (bool scale : {false, true})
      s.check(weighted_fd(
                  [scale](const std::vector<Md>& in) {
                    return tape::masked(in[0], in[1], in[2], in[3], {MaskedMode::streaming, scale});
                  },
                  {u(n, d), u(n, d), u(n, d), u(d, d)}, rng),
              "masked_output");
    for (bool causal : {false, true})
      s.check(weighted_fd([causal](const std::vector<Md>& in) { return tape::token_attention(in[0], in[1], in[2], causal); },
                          {u(n, d), u(n, d), u(n, d)}, rng),
              "token_attention");
    s.check(weighted_fd([](const std::vector<Md>& in) { return tape::layer_norm(in[0], in[1], in[2]); },
                        {u(n, m), u(1, m), u(1, m)}, rng),
            "layer_norm");
    s.check(weighted_fd([](const std::vector<Md>& in) { return tape::relu(in[0]); }, {u(n, m)}, rng), "relu");
    std::vector<int> targets(static_cast<std::size_t>(n));
    for (auto& t : targets) t = static_cast<int>(rng.below(static_cast<std::uint64_t>(m)));
    targets[0] = kIgnoreTarget;
    s.check(weighted_fd([targets](const std::vector<Md>& in) { return tape::cross_entropy(in[0], targets); }, {u(n, m)},
                        rng),
            "cross_entropy");
  }
  return s.finish();
}

SuiteResult model_gradients(Rng rng) {
  Suite s("model_gradients", 1e-3);
  for (auto kind : {AttentionKind::dim_multi_conv, AttentionKind::token_multi_head}) {
    for (bool causal : {false, true}) {
      BlockConfig cfg = tiny_block(kind, 12);
      cfg.d_model = 4;
      cfg.ffn_dim = 6;
      cfg.positional = causal ? PositionalKind::learned : PositionalKind::sinusoidal;
      cfg.max_len = 6;
      const auto params = init_params<double>(cfg, rng.next_u64());
      const auto input = random_tokens(rng, 5, cfg.vocab);
      auto target = random_tokens(rng, 5, cfg.vocab);
      target[1] = kIgnoreTarget;
      s.check(model_gradient_check(cfg, params, input, target, causal),
              to_string(kind) + (causal ? " decoder" : " encoder"));
    }
  }
  return s.finish();
}

SuiteResult flops_consistency(Rng rng) {
  Suite s("flops_consistency", 0.0);
  auto diff = [](const FlopCounter& a, const FlopCounter& b) {
    return a == b ? 0.0 : 1.0 + std::abs(static_cast<double>(a.total()) - static_cast<double>(b.total()));
  };
  for (int c = 0; c < 10; ++c) {
    const Index n = pick(rng, 1, 24), d = pick(rng, 1, 8), heads = pick(rng, 1, 3), convs = pick(rng, 1, 3);
    const Index dm = pick(rng, 1, 10);
    const Md x = rand_uniform<double>(n, dm, rng);

    MultiHeadParams<double> mh;
    mh.heads = heads;
    mh.wq = rand_uniform<double>(dm, heads * d, rng);
    mh.wk = rand_uniform<double>(dm, heads * d, rng);
    mh.wv = rand_uniform<double>(dm, heads * d, rng);
    mh.wo = rand_uniform<double>(heads * d, dm, rng);
    FlopCounter tc;
    multi_head_baseline(x, mh, &tc);
    s.check(diff(tc, flops_token_attention(n, d, heads, dm).as_counter()), "token");

    MultiConvParams<double> mc;
    for (Index g = 0; g < heads; ++g) {
      typename MultiConvParams<double>::Group grp{rand_uniform<double>(dm, d, rng), rand_uniform<double>(dm, d, rng),
                                                  rand_uniform<double>(dm, d, rng), {}};
      for (Index t = 0; t < convs; ++t) grp.filters.push_back(rand_uniform<double>(d, d, rng));
      mc.groups.push_back(grp);
    }
    mc.wo = rand_uniform<double>(heads * convs * d, dm, rng);
    FlopCounter dc;
    multi_conv_block(x, mc, NormMode::softmax_rows_over_k, &dc);
    s.check(diff(dc, flops_dim_attention(n, d, heads, convs, dm).as_counter()), "dim");

    const Md q = rand_uniform<double>(n, d, rng), k = rand_uniform<double>(n, d, rng), v = rand_uniform<double>(n, d, rng);
    for (MaskedMode mode : {MaskedMode::naive, MaskedMode::streaming}) {
      FlopCounter mcnt;
      masked_output(q, k, v, Md(rand_uniform<double>(d, d, rng)), {mode, false}, &mcnt);
      s.check(diff(mcnt, flops_masked_attention(n, d, mode).as_counter()), "masked");
    }

    // linear vs quadratic growth in N
    const auto dim1 = flops_dim_attention(n, d, heads, convs, dm), dim2 = flops_dim_attention(2 * n, d, heads, convs, dm);
    const auto dim4 = flops_dim_attention(4 * n, d, heads, convs, dm);
    const auto c12 = static_cast<double>(dim2.total()) - 2.0 * static_cast<double>(dim1.total());
    const auto c24 = static_cast<double>(dim4.total()) - 2.0 * static_cast<double>(dim2.total());
    s.check(std::abs(c12 - c24), "dim doubling");
    const auto t1 = flops_token_attention(n, d, heads), t2 = flops_token_attention(2 * n, d, heads);
    s.check(std::abs(static_cast<double>(t2.component("scores")) - 4.0 * static_cast<double>(t1.component("scores"))),
            "token scores quadruple");
    // weighted values carry one linear term: N d (N - 1) adds per head
    s.check(std::abs(static_cast<double>(t2.total()) - 4.0 * static_cast<double>(t1.total()) -
                     2.0 * static_cast<double>(n * d * heads)),
            "token total");
  }
  return s.finish();
}

SuiteResult masking_statistics(Rng rng) {
  Suite s("masking_statistics", 0.01);
  constexpr Index kTokens = 100000, kVocab = 60;
  const auto tokens = random_tokens(rng, kTokens, kVocab);
  const MaskedRow row = apply_mlm_mask(tokens, kVocab, rng);
  double sel = 0, mask = 0, random = 0, keep = 0;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (row.target[i] != kIgnoreTarget) ++sel;
    mask += row.action[i] == MaskAction::mask;
    random += row.action[i] == MaskAction::random;
    keep += row.action[i] == MaskAction::keep;
  }
  s.check(std::abs(sel / kTokens - 0.15), "selected fraction");
  // split tolerance is 2 points; scale so that the suite tolerance applies
  s.check(std::abs(mask / sel - 0.8) / 2.0, "mask share");
  s.check(std::abs(random / sel - 0.1) / 2.0, "random share");
  s.check(std::abs(keep / sel - 0.1) / 2.0, "keep share");
  return s.finish();
}

SuiteResult windowing(Rng rng) {
  Suite s("windowing", 0.0);
  for (int c = 0; c < 20; ++c) {
    const auto ids = random_tokens(rng, pick(rng, 1, 500), 40);
    const auto windows = make_windows(ids, pick(rng, 1, 64));
    std::vector<int> joined;
    for (const auto& w : windows) joined.insert(joined.end(), w.begin(), w.begin() + unpadded_length(w));
    s.check(joined == ids ? 0.0 : 1.0, "case " + std::to_string(c));
  }
  return s.finish();
}

SuiteResult checkpoint_roundtrip(Rng rng) {
  Suite s("checkpoint_roundtrip", 0.0);
  const BlockConfig cfg = tiny_block(AttentionKind::dim_multi_conv, 15);
  const auto params = init_params<double>(cfg, rng.next_u64());
  CheckpointFile file;
  add_to_checkpoint(file, params);
  const auto bytes = serialize_checkpoint(file);
  auto loaded = init_params<double>(cfg, rng.next_u64());
  load_from_checkpoint(parse_checkpoint(bytes), loaded);
  double worst = 0.0;
  std::vector<const Md*> a, b;
  params.visit([&](const std::string&, const Md& m) { a.push_back(&m); });
  loaded.visit([&](const std::string&, const Md& m) { b.push_back(&m); });
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, max_abs_diff(*a[i], *b[i]));
  s.check(worst, "parameters");
  s.check(serialize_checkpoint(file) == bytes ? 0.0 : 1.0, "byte stability");
  return s.finish();
}

}  // namespace

double model_gradient_check(const BlockConfig& cfg, const ModelParams<double>& params, const std::vector<int>& input,
                            const std::vector<int>& target, bool causal, double h) {
  ForwardOptions opt;
  opt.causal = causal;
  ModelParams<double> grads = params.zeros_like();
  loss_and_grad(input, target, params, cfg, opt, grads);

  ModelParams<double> probe = params;
  std::vector<Md*> ps;
  std::vector<const Md*> gs;
  probe.visit([&](const std::string&, Md& m) { ps.push_back(&m); });
  grads.visit([&](const std::string&, const Md& m) { gs.push_back(&m); });
  auto loss = [&] { return cross_entropy(model_forward(input, probe, cfg, opt), target); };
  double worst = 0.0;
  for (std::size_t t = 0; t < ps.size(); ++t) {
    for (Index e = 0; e < ps[t]->size(); ++e) {
      double& x = ps[t]->data()[e];
      const double keep = x;
      x = keep + h;
      const double up = loss();
      x = keep - h;
      const double down = loss();
      x = keep;
      worst = std::max(worst, relative_error(gs[t]->data()[e], (up - down) / (2.0 * h)));
    }
  }
  return worst;
}

std::string format_suite(const SuiteResult& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%s %-22s %5lld checks  worst %.3g  (tol %.3g)", r.passed ? "PASS" : "FAIL",
                r.name.c_str(), static_cast<long long>(r.cases), r.worst, r.tolerance);
  std::string out = buf;
  if (!r.detail.empty()) out += "  first failure: " + r.detail;
  return out;
}

std::vector<SuiteResult> run_verification(std::uint64_t seed, std::ostream* log) {
  const Rng root(seed);
  const std::vector<std::function<SuiteResult(Rng)>> suites = {
      dim_equivalence, masked_equivalence, causality,          covariance_identity,  representations,
      op_gradients,    model_gradients,    flops_consistency,  masking_statistics,   windowing,
      checkpoint_roundtrip};
  std::vector<SuiteResult> out;
  for (std::size_t i = 0; i < suites.size(); ++i) {
    SuiteResult r;
    try {
      r = suites[i](root.fork(i));
    } catch (const std::exception& e) {
      r.name = "suite " + std::to_string(i);
      r.detail = std::string("exception: ") + e.what();
    }
    if (log) *log << format_suite(r) << '\n' << std::flush;
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace tcoder
