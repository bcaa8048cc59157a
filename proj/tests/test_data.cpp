#include <gtest/gtest.h>

#include <fstream>

#include "test_util.hpp"
#include "tcoder/checkpoint.hpp"
#include "tcoder/data.hpp"

using namespace tcoder;

namespace {

void write_file(const std::filesystem::path& p, const std::string& text) {
  std::ofstream(p, std::ios::binary) << text;
}

std::vector<int> regular_stream(Rng& rng, std::size_t n, Index vocab) {
  std::vector<int> t(n);
  for (auto& x : t) x = kFirstRegular + static_cast<int>(rng.below(static_cast<std::uint64_t>(vocab - kFirstRegular)));
  return t;
}

}  // namespace

TEST(Corpus, CharTokensWithNewlineAsEos) {
  const Corpus c = build_corpus_from_text("ab\nab", TokenizerKind::char_level);
  EXPECT_EQ(c.vocab.size(), kFirstRegular + 2);
  const int a = c.vocab.id("a"), b = c.vocab.id("b");
  EXPECT_GE(a, kFirstRegular);
  EXPECT_GE(b, kFirstRegular);
  EXPECT_EQ(c.ids, (std::vector<int>{a, b, kEos, a, b}));
}

TEST(Corpus, FrequencyThenLexicographicOrder) {
  const Corpus c = build_corpus_from_text("b c c a", TokenizerKind::whitespace_word);
  EXPECT_EQ(c.vocab.token(kFirstRegular), "c");
  EXPECT_EQ(c.vocab.token(kFirstRegular + 1), "a");
  EXPECT_EQ(c.vocab.token(kFirstRegular + 2), "b");
}

TEST(Corpus, VocabCapOfOneKeepsOneWord) {
  const Corpus c = build_corpus_from_text("x y x z x", TokenizerKind::whitespace_word, 1);
  EXPECT_EQ(c.vocab.size(), kFirstRegular + 1);
  for (int id : c.ids) EXPECT_TRUE(id == c.vocab.id("x") || id == kUnk);
  EXPECT_EQ(c.vocab.id("y"), kUnk);
}

TEST(Corpus, SameFileTwiceIsIdentical) {
  testutil::TempDir dir("corpus");
  write_file(dir / "c.txt", synthetic_corpus(5000, 3));
  const Corpus a = build_corpus(dir / "c.txt", TokenizerKind::char_level);
  const Corpus b = build_corpus(dir / "c.txt", TokenizerKind::char_level);
  EXPECT_EQ(a.vocab, b.vocab);
  EXPECT_EQ(a.ids, b.ids);
}

TEST(Corpus, UnreadableOrEmptyFileThrows) {
  testutil::TempDir dir("corpus_err");
  EXPECT_THROW(build_corpus(dir / "missing.txt", TokenizerKind::char_level), std::runtime_error);
  write_file(dir / "empty.txt", "");
  EXPECT_THROW(build_corpus(dir / "empty.txt", TokenizerKind::char_level), std::runtime_error);
}

TEST(Corpus, MultiByteCharactersStayWhole) {
  const auto tokens = tokenize("n\xC3\xA4h", TokenizerKind::char_level);
  EXPECT_EQ(tokens, (std::vector<std::string>{"n", "\xC3\xA4", "h"}));
}

TEST(Vocab, ReservedIdsAtFixedSlots) {
  const Vocab v;
  EXPECT_EQ(v.size(), kFirstRegular);
  EXPECT_EQ(v.id("definitely-not-there"), kUnk);
  EXPECT_THROW(v.token(99), std::out_of_range);
  EXPECT_EQ(Vocab::from_tokens(build_corpus_from_text("q r", TokenizerKind::whitespace_word).vocab.tokens()).size(),
            kFirstRegular + 2);
}

TEST(Windows, ConcatenationReproducesStream) {
  Rng rng(1);
  for (Index len : {1, 7, 100}) {
    const auto ids = regular_stream(rng, 523, 30);
    const auto windows = make_windows(ids, len);
    std::vector<int> joined;
    for (const auto& w : windows) {
      EXPECT_EQ(static_cast<Index>(w.size()), len);
      joined.insert(joined.end(), w.begin(), w.begin() + unpadded_length(w));
    }
    EXPECT_EQ(joined, ids);
  }
  EXPECT_THROW(make_windows({5, 6}, 0), std::invalid_argument);
}

TEST(Windows, LastWindowPaddedWithPad) {
  const auto w = make_windows({5, 6, 7}, 2);
  ASSERT_EQ(w.size(), 2u);
  EXPECT_EQ(w[1], (std::vector<int>{7, kPad}));
  EXPECT_EQ(unpadded_length(w[1]), 1);
}

TEST(Split, TrailingWindowsBecomeValidation) {
  std::vector<std::vector<int>> w;
  for (int i = 0; i < 10; ++i) w.push_back({i + 5});
  const Split s = split_windows(w, 0.25);
  EXPECT_EQ(s.valid.size(), 3u);
  EXPECT_EQ(s.train.size(), 7u);
  EXPECT_EQ(s.valid.front(), (std::vector<int>{12}));
  EXPECT_THROW(split_windows({{5}}, 0.5), std::invalid_argument);
}

TEST(Masking, ZeroSelectionLeavesInputUnchanged) {
  Rng rng(2);
  const auto tokens = regular_stream(rng, 200, 20);
  MaskingConfig cfg;
  cfg.select_p = 0.0;
  const MaskedRow row = apply_mlm_mask(tokens, 20, rng, cfg);
  EXPECT_EQ(row.input, tokens);
  EXPECT_FALSE(row.has_masked());
}

TEST(Masking, FullSelectionWithMaskOnlyMasksEveryRegularToken) {
  Rng rng(3);
  std::vector<int> tokens = regular_stream(rng, 50, 20);
  tokens[3] = kEos;
  tokens[10] = kUnk;
  tokens.push_back(kPad);
  MaskingConfig cfg{1.0, 1.0, 0.0, 0.0};
  const MaskedRow row = apply_mlm_mask(tokens, 20, rng, cfg);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] < kFirstRegular) {
      EXPECT_EQ(row.input[i], tokens[i]);
      EXPECT_EQ(row.target[i], kIgnoreTarget);
    } else {
      EXPECT_EQ(row.input[i], kMask);
      EXPECT_EQ(row.target[i], tokens[i]);
    }
  }
  EXPECT_EQ(row.padding.back(), 1);
}

TEST(Masking, OnlyReservedTokensYieldEmptyMaskSet) {
  Rng rng(4);
  MaskingConfig cfg{1.0, 1.0, 0.0, 0.0};
  EXPECT_FALSE(apply_mlm_mask({kEos, kUnk, kPad}, 20, rng, cfg).has_masked());
}

TEST(Masking, TargetsHoldOriginalsOnlyAtSelectedPositions) {
  Rng rng(5);
  const auto tokens = regular_stream(rng, 2000, 40);
  const MaskedRow row = apply_mlm_mask(tokens, 40, rng);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (row.action[i] == MaskAction::none) {
      EXPECT_EQ(row.target[i], kIgnoreTarget);
      EXPECT_EQ(row.input[i], tokens[i]);
    } else {
      EXPECT_EQ(row.target[i], tokens[i]);
    }
    if (row.action[i] == MaskAction::keep) {
      EXPECT_EQ(row.input[i], tokens[i]);
    }
    if (row.action[i] == MaskAction::random) {
      EXPECT_GE(row.input[i], kFirstRegular);
    }
  }
}

TEST(Masking, SelectionAndSplitFractionsOverHundredThousandTokens) {
  Rng rng(6);
  const auto tokens = regular_stream(rng, 100000, 60);
  const MaskedRow row = apply_mlm_mask(tokens, 60, rng);
  double selected = 0, masked = 0, random = 0, kept = 0;
  for (auto a : row.action) {
    selected += a != MaskAction::none;
    masked += a == MaskAction::mask;
    random += a == MaskAction::random;
    kept += a == MaskAction::keep;
  }
  EXPECT_NEAR(selected / 100000.0, 0.15, 0.01);
  EXPECT_NEAR(masked / selected, 0.8, 0.02);
  EXPECT_NEAR(random / selected, 0.1, 0.02);
  EXPECT_NEAR(kept / selected, 0.1, 0.02);
}

TEST(Masking, ProbabilitiesMustSumToOne) {
  Rng rng(7);
  MaskingConfig cfg{0.15, 0.5, 0.1, 0.1};
  EXPECT_THROW(apply_mlm_mask({5, 6}, 10, rng, cfg), std::exception);
}

TEST(Masking, BatchKeepsPickOrder) {
  Rng rng(8);
  const std::vector<std::vector<int>> windows = {{5, 6, 7}, {8, 9, kPad}};
  MaskingConfig none;
  none.select_p = 0.0;
  const auto b = make_mlm_batch(windows, {1, 0, 1}, 10, rng, none);
  ASSERT_EQ(b.batch, 3);
  EXPECT_EQ(b.rows[0].input, windows[1]);
  EXPECT_EQ(b.rows[1].input, windows[0]);
  EXPECT_EQ(b.rows[0].padding, (std::vector<std::uint8_t>{0, 0, 1}));
}

TEST(SyntheticCorpus, DeterministicAndSized) {
  const std::string a = synthetic_corpus(20000, 4), b = synthetic_corpus(20000, 4);
  EXPECT_EQ(a, b);
  EXPECT_GE(a.size(), 20000u);
  EXPECT_NE(a, synthetic_corpus(20000, 5));
}

TEST(CheckpointFormat, MagicManifestAndDeterministicBytes) {
  CheckpointFile f;
  f.meta["note"] = "x";
  f.tensors.push_back(to_record<double>("a", testutil::mat({{1, 2}, {3, 4}})));
  f.tensors.push_back(to_record<float>("b", Matrix<float>::Constant(1, 3, 0.5f)));
  const auto bytes = serialize_checkpoint(f);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 6), "TCKPT1");
  EXPECT_EQ(bytes, serialize_checkpoint(parse_checkpoint(bytes)));
  const auto back = parse_checkpoint(bytes);
  EXPECT_EQ(from_record<double>(back.find("a")), testutil::mat({{1, 2}, {3, 4}}));
  EXPECT_EQ(back.find("b").precision, Precision::f32);
  EXPECT_EQ(back.meta["note"], "x");
  // f64 payload starts right after the manifest, little-endian
  std::uint64_t len = 0;
  for (int i = 0; i < 8; ++i) len |= static_cast<std::uint64_t>(bytes[6 + i]) << (8 * i);
  double first = 0;
  std::memcpy(&first, bytes.data() + 14 + len, sizeof first);
  EXPECT_EQ(first, 1.0);
}

TEST(CheckpointFormat, CorruptInputsRejected) {
  CheckpointFile f;
  f.tensors.push_back(to_record<double>("a", testutil::mat({{1, 2}})));
  auto bytes = serialize_checkpoint(f);
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(parse_checkpoint(bad_magic), CheckpointError);
  auto truncated = bytes;
  truncated.resize(truncated.size() - 3);
  EXPECT_THROW(parse_checkpoint(truncated), CheckpointError);
  EXPECT_THROW(parse_checkpoint({}), CheckpointError);
  EXPECT_THROW(parse_checkpoint(bytes).find("nope"), CheckpointError);
  EXPECT_THROW(from_record<float>(parse_checkpoint(bytes).find("a")), CheckpointError);
}

TEST(CheckpointFormat, FileRoundTrip) {
  testutil::TempDir dir("ckpt");
  CheckpointFile f;
  f.tensors.push_back(to_record<double>("w", testutil::mat({{-0.0, 1e-300}})));
  write_checkpoint(dir / "m.tckpt", f);
  const auto back = read_checkpoint(dir / "m.tckpt");
  EXPECT_EQ(back.tensors[0].payload, f.tensors[0].payload);
  EXPECT_THROW(read_checkpoint(dir / "absent.tckpt"), CheckpointError);
}
