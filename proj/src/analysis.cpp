#include "tcoder/analysis.hpp"

#include <algorithm>
#include <chrono>
#include <sstream>
#include <stdexcept>

namespace tcoder {
namespace {

using u64 = std::uint64_t;

u64 U(Index v) { return static_cast<u64>(v); }

/// m x k times k x n.
FlopsComponent product(std::string name, Index m, Index k, Index n, u64 times = 1) {
  return {std::move(name), times * U(m) * U(k) * U(n), times * U(m) * U(n) * U(k - 1)};
}

void require_positive(std::initializer_list<Index> values, const char* what) {
  for (Index v : values)
    if (v < 1) throw std::invalid_argument(std::string(what) + ": extents must be positive");
}

void add_projections(FlopsReport& r, Index width) {
  if (r.d_model <= 0) return;
  r.components.push_back(product("input_projections", r.n, r.d_model, width, 3));
  // the concatenated outputs of the attention units feed the output projection
  const Index concat = r.variant == "token" ? width : r.groups * r.convs * r.d;
  r.components.push_back(product("output_projection", r.n, concat, r.d_model));
}

}  // namespace

u64 FlopsReport::multiplies() const {
  u64 s = 0;
  for (const auto& c : components) s += c.multiplies;
  return s;
}

u64 FlopsReport::adds() const {
  u64 s = 0;
  for (const auto& c : components) s += c.adds;
  return s;
}

u64 FlopsReport::component(const std::string& name) const {
  for (const auto& c : components)
    if (c.name == name) return c.total();
  throw std::out_of_range("FlopsReport: no component '" + name + "'");
}

FlopsReport flops_token_attention(Index n, Index d, Index heads, Index d_model) {
  require_positive({n, d, heads}, "flops_token_attention");
  FlopsReport r{"token", n, d, heads, 0, d_model, {}};
  r.components.push_back(product("scores", n, d, n, U(heads)));
  r.components.push_back(product("weighted_values", n, n, d, U(heads)));
  add_projections(r, heads * d);
  return r;
}

FlopsReport flops_dim_attention(Index n, Index d, Index groups, Index convs, Index d_model) {
  require_positive({n, d, groups, convs}, "flops_dim_attention");
  FlopsReport r{"dim", n, d, groups, convs, d_model, {}};
  r.components.push_back(product("scores", d, n, d, U(groups)));
  r.components.push_back({"filter_weighting", U(groups) * U(convs) * U(d) * U(d), 0});
  r.components.push_back(product("filter_apply", n, d, d, U(groups) * U(convs)));
  add_projections(r, groups * d);
  return r;
}

FlopsReport flops_masked_attention(Index n, Index d, MaskedMode mode) {
  require_positive({n, d}, "flops_masked_attention");
  FlopsReport r{mode == MaskedMode::naive ? "masked_naive" : "masked_streaming", n, d, 1, 1, 0, {}};
  if (mode == MaskedMode::naive) {
    r.components.push_back({"masked_scores", 2 * U(d) * U(d) * U(n) * U(n), U(d) * U(d) * U(n) * U(n - 1)});
    r.components.push_back({"kr_tensor", U(n) * U(d) * U(d), 0});
  } else {
    r.components.push_back({"prefix_state", U(n) * U(d) * U(d), U(n - 1) * U(d) * U(d)});
    r.components.push_back({"filter_weighting", U(n) * U(d) * U(d), 0});
  }
  r.components.push_back(product("filter_apply", n * d, d, 1));
  return r;
}

std::string to_string(BenchVariant v) {
  switch (v) {
    case BenchVariant::token: return "token";
    case BenchVariant::dim: return "dim";
    case BenchVariant::masked_naive: return "masked_naive";
    case BenchVariant::masked_streaming: return "masked_streaming";
  }
  return "?";
}

BenchVariant parse_bench_variant(const std::string& s) {
  for (auto v : {BenchVariant::token, BenchVariant::dim, BenchVariant::masked_naive, BenchVariant::masked_streaming})
    if (to_string(v) == s) return v;
  throw std::invalid_argument("unknown bench variant '" + s + "'");
}

std::string SweepResult::to_csv() const {
  std::ostringstream os;
  os << "variant,N,d,groups,convs,median_seconds,flops\n";
  os.precision(9);
  for (const auto& r : rows)
    os << to_string(r.variant) << ',' << r.n << ',' << r.d << ',' << r.groups << ',' << r.convs << ','
       << std::scientific << r.median_seconds << std::defaultfloat << ',' << r.flops << '\n';
  return os.str();
}

std::vector<double> SweepResult::doubling_ratios(BenchVariant v, Index d) const {
  std::vector<const SweepRow*> sel;
  for (const auto& r : rows)
    if (r.variant == v && r.d == d) sel.push_back(&r);
  std::vector<double> out;
  for (std::size_t i = 1; i < sel.size(); ++i) out.push_back(sel[i]->median_seconds / sel[i - 1]->median_seconds);
  return out;
}

namespace {

using Clock = std::chrono::steady_clock;

double run_variant(BenchVariant v, const MatrixXd& q, const MatrixXd& k, const MatrixXd& val, const MatrixXd& w) {
  switch (v) {
    case BenchVariant::token: return token_attention<double>(q, k, val)(0, 0);
    case BenchVariant::dim: return dim_attention_factored<double>(q, k, val, w, NormMode::softmax_rows_over_k)(0, 0);
    case BenchVariant::masked_naive: return masked_output<double>(q, k, val, w, {MaskedMode::naive})(0, 0);
    case BenchVariant::masked_streaming: return masked_output<double>(q, k, val, w, {MaskedMode::streaming})(0, 0);
  }
  return 0.0;
}

u64 analytic_flops(BenchVariant v, Index n, Index d) {
  switch (v) {
    case BenchVariant::token: return flops_token_attention(n, d, 1).total();
    case BenchVariant::dim: return flops_dim_attention(n, d, 1, 1).total();
    case BenchVariant::masked_naive: return flops_masked_attention(n, d, MaskedMode::naive).total();
    case BenchVariant::masked_streaming: return flops_masked_attention(n, d, MaskedMode::streaming).total();
  }
  return 0;
}

}  // namespace

SweepResult bench_sweep(const std::vector<BenchVariant>& variants, const std::vector<Index>& ns,
                        const std::vector<Index>& ds, const BenchOptions& opt) {
  if (opt.repeats < 5) throw std::invalid_argument("bench_sweep: at least 5 repeats are required");
  SweepResult result;
  volatile double sink = 0.0;
  for (BenchVariant v : variants) {
    for (Index d : ds) {
      for (Index n : ns) {
        Rng rng(opt.seed ^ (static_cast<u64>(n) << 20) ^ static_cast<u64>(d));
        const MatrixXd q = rand_uniform<double>(n, d, rng);
        const MatrixXd k = rand_uniform<double>(n, d, rng);
        const MatrixXd val = rand_uniform<double>(n, d, rng);
        const MatrixXd w = rand_uniform<double>(d, d, rng);

        const auto t0 = Clock::now();
        for (int i = 0; i < std::max(1, opt.warmup); ++i) sink = sink + run_variant(v, q, k, val, w);
        const double first = std::chrono::duration<double>(Clock::now() - t0).count() / std::max(1, opt.warmup);
        const int inner = first >= opt.min_sample_seconds
                              ? 1
                              : static_cast<int>(std::ceil(opt.min_sample_seconds / std::max(first, 1e-9)));

        std::vector<double> samples;
        for (int r = 0; r < opt.repeats; ++r) {
          const auto s0 = Clock::now();
          for (int i = 0; i < inner; ++i) sink = sink + run_variant(v, q, k, val, w);
          samples.push_back(std::chrono::duration<double>(Clock::now() - s0).count() / inner);
        }
        std::nth_element(samples.begin(), samples.begin() + samples.size() / 2, samples.end());
        const double median = samples[samples.size() / 2];
        const bool token = v == BenchVariant::token;
        result.rows.push_back({v, n, d, 1, token ? 0 : 1, median, analytic_flops(v, n, d)});
      }
    }
  }
  return result;
}

std::string flops_csv(const std::vector<FlopsReport>& reports) {
  std::ostringstream os;
  os << "variant,N,d,groups,convs,d_model,multiplies,adds,flops\n";
  for (const auto& r : reports)
    os << r.variant << ',' << r.n << ',' << r.d << ',' << r.groups << ',' << r.convs << ',' << r.d_model << ','
       << r.multiplies() << ',' << r.adds() << ',' << r.total() << '\n';
  return os.str();
}

}  // namespace tcoder
