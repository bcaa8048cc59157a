#pragma once

// Corpus loading, vocabulary, fixed-length windows, and BERT-style masking.

#include <cstdint>
#include <filesystem>
#include <string>
#include <unordered_map>
#include <vector>

#include "tcoder/config.hpp"
#include "tcoder/numerics.hpp"

namespace tcoder {

/// Reserved ids occupy the first slots of every vocabulary.
enum ReservedId : int { kPad = 0, kUnk = 1, kMask = 2, kBos = 3, kEos = 4, kFirstRegular = 5 };

class Vocab {
 public:
  Vocab();

  /// Regular tokens ordered by descending frequency, ties broken
  /// lexicographically; `cap` > 0 keeps only the first `cap` of them.
  static Vocab build(const std::vector<std::string>& tokens, Index cap = 0);
  static Vocab from_tokens(const std::vector<std::string>& ordered);

  int id(const std::string& token) const;  // kUnk when absent
  const std::string& token(int id) const;
  Index size() const { return static_cast<Index>(tokens_.size()); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  bool operator==(const Vocab& o) const { return tokens_ == o.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

/// Newline marker emitted by the tokenizers; maps to kEos.
inline const std::string kNewlineToken = "\n";

/// Char tokenizer: one token per UTF-8 code point. Word tokenizer: tokens
/// separated by spaces/tabs. Both emit kNewlineToken for '\n'.
std::vector<std::string> tokenize(const std::string& text, TokenizerKind kind);

struct Corpus {
  Vocab vocab;
  std::vector<int> ids;
};

Corpus build_corpus_from_text(const std::string& text, TokenizerKind kind, Index vocab_cap = 0);
/// Throws std::runtime_error for unreadable or empty input.
Corpus build_corpus(const std::filesystem::path& path, TokenizerKind kind, Index vocab_cap = 0);

/// Non-overlapping windows of `len` ids; the last one is padded with kPad.
std::vector<std::vector<int>> make_windows(const std::vector<int>& ids, Index len);

/// Number of leading non-pad ids.
Index unpadded_length(const std::vector<int>& window);

struct Split {
  std::vector<std::vector<int>> train, valid;
};

/// The trailing ceil(valid_fraction * count) windows (at least one, and at
/// least one left for training) form the validation split.
Split split_windows(std::vector<std::vector<int>> windows, double valid_fraction);

enum class MaskAction : std::uint8_t { none, mask, random, keep };

struct MaskedRow {
  std::vector<int> input;
  std::vector<int> target;          // original id where selected, else kIgnoreTarget
  std::vector<MaskAction> action;   // what happened at each position
  std::vector<std::uint8_t> padding;

  bool has_masked() const;
  Index masked_count() const;
};

/// Independent per-position selection with probability select_p among
/// non-reserved tokens, then [MASK] / random regular token / unchanged with
/// probabilities mask_p / random_p / keep_p.
MaskedRow apply_mlm_mask(const std::vector<int>& tokens, Index vocab_size, Rng& rng, const MaskingConfig& cfg = {});

struct MaskedBatch {
  Index batch = 0, len = 0;
  std::vector<MaskedRow> rows;
};

MaskedBatch make_mlm_batch(const std::vector<std::vector<int>>& windows, const std::vector<std::size_t>& picks,
                           Index vocab_size, Rng& rng, const MaskingConfig& cfg = {});

/// Deterministic English-like text built from a small grammar; used as a
/// self-contained corpus for smoke runs and the training acceptance check.
std::string synthetic_corpus(std::size_t bytes, std::uint64_t seed);

}  // namespace tcoder
