#pragma once

// Closed-form multiply/add counts for both attention families, and the
// wall-clock sweep used to compare their scaling in N.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "tcoder/masked_attention.hpp"

namespace tcoder {

struct FlopsComponent {
  std::string name;
  std::uint64_t multiplies = 0;
  std::uint64_t adds = 0;

  std::uint64_t total() const { return multiplies + adds; }
};

/// Per-component counts under the FlopCounter convention (length-L dot
/// product = L multiplies + L-1 adds; softmax, exponentials and scalings are
/// not counted). Projections are included only when d_model > 0.
struct FlopsReport {
  std::string variant;
  Index n = 0, d = 0, groups = 0, convs = 0, d_model = 0;
  std::vector<FlopsComponent> components;

  std::uint64_t multiplies() const;
  std::uint64_t adds() const;
  std::uint64_t total() const { return multiplies() + adds(); }
  /// Total of one named component; throws if absent.
  std::uint64_t component(const std::string& name) const;
  FlopCounter as_counter() const { return {multiplies(), adds()}; }
};

/// h heads of width d. Components: scores, weighted_values and, with
/// d_model > 0, input_projections and output_projection.
FlopsReport flops_token_attention(Index n, Index d, Index heads, Index d_model = 0);

/// g groups of width d with c filters each, factored evaluation. Components:
/// scores, filter_weighting, filter_apply and the projections as above.
FlopsReport flops_dim_attention(Index n, Index d, Index groups, Index convs, Index d_model = 0);

/// One causal filter. Naive components: masked_scores, kr_tensor,
/// filter_apply. Streaming components: prefix_state, filter_weighting,
/// filter_apply.
FlopsReport flops_masked_attention(Index n, Index d, MaskedMode mode);

enum class BenchVariant { token, dim, masked_naive, masked_streaming };

std::string to_string(BenchVariant v);
BenchVariant parse_bench_variant(const std::string& s);

struct SweepRow {
  BenchVariant variant;
  Index n = 0, d = 0, groups = 1, convs = 1;
  double median_seconds = 0.0;
  std::uint64_t flops = 0;
};

struct SweepResult {
  std::vector<SweepRow> rows;

  /// CSV with header `variant,N,d,groups,convs,median_seconds,flops`.
  std::string to_csv() const;
  /// Time ratios t(N_{i+1}) / t(N_i) over the N values of one variant and d.
  std::vector<double> doubling_ratios(BenchVariant v, Index d) const;
};

struct BenchOptions {
  int repeats = 5;
  std::uint64_t seed = 20200801;
  /// Each sample repeats the call until at least this much time has passed.
  double min_sample_seconds = 0.02;
  int warmup = 1;
};

/// Median single-threaded wall-clock per (variant, d, N) on seeded random
/// f64 inputs, rows ordered variant, then d, then N as given.
SweepResult bench_sweep(const std::vector<BenchVariant>& variants, const std::vector<Index>& ns,
                        const std::vector<Index>& ds, const BenchOptions& opt = {});

/// CSV for `tcoder flops`: one row per variant with component totals.
std::string flops_csv(const std::vector<FlopsReport>& reports);

}  // namespace tcoder
