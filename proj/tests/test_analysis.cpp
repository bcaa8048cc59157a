#include <gtest/gtest.h>

#include <sstream>

#include "test_util.hpp"
#include "tcoder/analysis.hpp"

using namespace tcoder;
using testutil::Md;

namespace {

std::uint64_t total(const oracle::Count& c) { return c.total(); }

MultiConvParams<double> random_multi_conv(Rng& rng, Index dm, Index d, Index g, Index c) {
  MultiConvParams<double> p;
  for (Index gi = 0; gi < g; ++gi) {
    typename MultiConvParams<double>::Group grp{testutil::rand(rng, dm, d), testutil::rand(rng, dm, d),
                                                testutil::rand(rng, dm, d), {}};
    for (Index t = 0; t < c; ++t) grp.filters.push_back(testutil::rand(rng, d, d));
    p.groups.push_back(grp);
  }
  p.wo = testutil::rand(rng, g * c * d, dm);
  return p;
}

}  // namespace

TEST(FlopsToken, MinimalCaseIsTwoMultiplies) {
  const auto r = flops_token_attention(1, 1, 1);
  EXPECT_EQ(r.total(), 2u);
  EXPECT_EQ(r.multiplies(), 2u);
  EXPECT_EQ(r.adds(), 0u);
}

TEST(FlopsToken, HundredTokensWidthSixtyFourMatchesLoopCount) {
  // scores: N^2 dots of length d; weighted values: N d dots of length N
  const auto r = flops_token_attention(100, 64, 1);
  EXPECT_EQ(r.component("scores"), 100u * 100u * (2u * 64u - 1u));
  EXPECT_EQ(r.component("weighted_values"), 100u * 64u * (2u * 100u - 1u));
  EXPECT_EQ(r.total(), 2543600u);
  EXPECT_EQ(r.total(), total(oracle::count_token_attention(100, 64, 1, 0)));
}

TEST(FlopsToken, QuadraticComponentsQuadrupleWithTokens) {
  for (Index n : {3, 17, 100}) {
    const auto a = flops_token_attention(n, 8, 2), b = flops_token_attention(2 * n, 8, 2);
    EXPECT_EQ(b.component("scores"), 4 * a.component("scores"));
    // the weighted-value dots grow in length too, leaving a linear remainder
    EXPECT_EQ(b.total() - 4 * a.total(), static_cast<std::uint64_t>(2 * n * 8 * 2));
  }
}

TEST(FlopsDim, MinimalCaseIsThree) {
  const auto r = flops_dim_attention(1, 1, 1, 1);
  EXPECT_EQ(r.total(), 3u);
  EXPECT_EQ(r.total(), total(oracle::count_dim_attention(1, 1, 1, 1, 0)));
}

TEST(FlopsDim, LinearInTokens) {
  for (Index n : {1, 5, 64}) {
    const auto f1 = flops_dim_attention(n, 16, 2, 3, 32).total();
    const auto f2 = flops_dim_attention(2 * n, 16, 2, 3, 32).total();
    const auto f4 = flops_dim_attention(4 * n, 16, 2, 3, 32).total();
    EXPECT_EQ(static_cast<std::int64_t>(f2) - 2 * static_cast<std::int64_t>(f1),
              static_cast<std::int64_t>(f4) - 2 * static_cast<std::int64_t>(f2));
  }
}

TEST(FlopsDim, ReportsMatchLoopCountsAndInstrumentedCounters) {
  Rng rng(1);
  for (int t = 0; t < 20; ++t) {
    const Index n = testutil::between(rng, 1, 20), d = testutil::between(rng, 1, 6);
    const Index g = testutil::between(rng, 1, 3), c = testutil::between(rng, 1, 3), dm = testutil::between(rng, 1, 8);
    const auto report = flops_dim_attention(n, d, g, c, dm);
    EXPECT_EQ(report.total(), total(oracle::count_dim_attention(n, d, g, c, dm)));
    FlopCounter counted;
    multi_conv_block(testutil::rand(rng, n, dm), random_multi_conv(rng, dm, d, g, c), NormMode::softmax_rows_over_k,
                     &counted);
    EXPECT_EQ(counted, report.as_counter());

    const auto tok = flops_token_attention(n, d, g, dm);
    EXPECT_EQ(tok.total(), total(oracle::count_token_attention(n, d, g, dm)));
    MultiHeadParams<double> mh{testutil::rand(rng, dm, g * d), testutil::rand(rng, dm, g * d),
                               testutil::rand(rng, dm, g * d), testutil::rand(rng, g * d, dm), g};
    FlopCounter tc;
    multi_head_baseline(testutil::rand(rng, n, dm), mh, &tc);
    EXPECT_EQ(tc, tok.as_counter());
  }
}

TEST(FlopsMasked, ReportsMatchCounters) {
  Rng rng(2);
  for (MaskedMode mode : {MaskedMode::naive, MaskedMode::streaming}) {
    const Md q = testutil::rand(rng, 9, 3), k = testutil::rand(rng, 9, 3), v = testutil::rand(rng, 9, 3);
    FlopCounter c;
    masked_output<double>(q, k, v, testutil::rand(rng, 3, 3), {mode}, &c);
    EXPECT_EQ(c, flops_masked_attention(9, 3, mode).as_counter());
  }
}

TEST(FlopsMasked, NaiveQuadraticStreamingLinear) {
  // each of the d^2 N entries is an N-term sum of two-factor products
  for (std::uint64_t n : {8u, 16u})
    EXPECT_EQ(flops_masked_attention(static_cast<Index>(n), 4, MaskedMode::naive).component("masked_scores"),
              16 * n * (2 * n) + 16 * n * (n - 1));
  const auto s8 = flops_masked_attention(8, 4, MaskedMode::streaming).total();
  const auto s16 = flops_masked_attention(16, 4, MaskedMode::streaming).total();
  const auto s32 = flops_masked_attention(32, 4, MaskedMode::streaming).total();
  EXPECT_EQ(s32 - s16, 2 * (s16 - s8));
}

TEST(FlopsReport, UnknownComponentThrows) {
  EXPECT_THROW(flops_token_attention(2, 2, 1).component("filter_apply"), std::exception);
}

TEST(FlopsReport, MatchedWidthOrderingAtHundredTokens) {
  const auto tok = flops_token_attention(100, 64, 8, 512);
  const auto dim = flops_dim_attention(100, 64, 8, 1, 512);
  EXPECT_LT(dim.total(), tok.total());
}

TEST(FlopsCsv, OneRowPerReport) {
  const std::string csv = flops_csv({flops_token_attention(4, 2, 1), flops_dim_attention(4, 2, 1, 2)});
  std::istringstream in(csv);
  std::string line;
  int rows = 0;
  while (std::getline(in, line)) ++rows;
  EXPECT_EQ(rows, 3);
}

TEST(BenchSweep, RowsInRequestedOrderWithCsvHeader) {
  BenchOptions opt;
  opt.min_sample_seconds = 0.0;
  opt.warmup = 0;
  const auto r = bench_sweep({BenchVariant::dim, BenchVariant::token}, {8, 16}, {4}, opt);
  ASSERT_EQ(r.rows.size(), 4u);
  EXPECT_EQ(r.rows[0].variant, BenchVariant::dim);
  EXPECT_EQ(r.rows[1].n, 16);
  EXPECT_EQ(r.rows[2].variant, BenchVariant::token);
  for (const auto& row : r.rows) EXPECT_GT(row.median_seconds, 0.0);
  EXPECT_EQ(r.to_csv().substr(0, r.to_csv().find('\n')), "variant,N,d,groups,convs,median_seconds,flops");
  EXPECT_EQ(r.doubling_ratios(BenchVariant::dim, 4).size(), 1u);
}

TEST(BenchSweep, FewerThanFiveRepeatsRejected) {
  BenchOptions opt;
  opt.repeats = 3;
  EXPECT_THROW(bench_sweep({BenchVariant::dim}, {8}, {4}, opt), std::invalid_argument);
}

TEST(BenchVariant, NamesRoundTrip) {
  for (auto v : {BenchVariant::token, BenchVariant::dim, BenchVariant::masked_naive, BenchVariant::masked_streaming})
    EXPECT_EQ(parse_bench_variant(to_string(v)), v);
  EXPECT_THROW(parse_bench_variant("fast"), std::invalid_argument);
}

TEST(BenchSweep, StreamingMaskedBeatsNaiveAtFiveTwelve) {
  const auto r = bench_sweep({BenchVariant::masked_naive, BenchVariant::masked_streaming}, {512}, {32});
  ASSERT_EQ(r.rows.size(), 2u);
  EXPECT_LT(r.rows[1].median_seconds, r.rows[0].median_seconds);
}
