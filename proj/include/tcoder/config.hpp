#pragma once

// Model, optimizer and run configuration, plus the flat key=value text
// format used for run configs (one pair per line, '#' starts a comment).

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>

#include "tcoder/attention.hpp"

namespace tcoder {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class AttentionKind { token_multi_head, dim_multi_conv };
enum class PositionalKind { sinusoidal, learned };

struct BlockConfig {
  Index vocab = 0;  // filled from the corpus
  Index d_model = 64;
  Index layers = 2;
  Index ffn_dim = 256;
  Index max_len = 128;
  AttentionKind attention = AttentionKind::dim_multi_conv;
  Index heads = 4;   // token_multi_head
  Index groups = 1;  // dim_multi_conv
  Index convs = 8;   // dim_multi_conv
  NormMode norm = NormMode::softmax_rows_over_k;
  PositionalKind positional = PositionalKind::sinusoidal;
  bool masked_position_scale = false;
  double dropout = 0.1;
  Precision precision = Precision::f32;

  /// Width of one attention unit: d_model / heads or d_model / groups.
  Index head_dim() const { return attention == AttentionKind::token_multi_head ? d_model / heads : d_model / groups; }
  void validate() const;
};

struct TrainConfig {
  std::uint64_t seed = 1;
  Index batch_size = 16;
  Index steps = 1000;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-9;
  Index warmup = 400;
  double clip_norm = 1.0;
  Index eval_interval = 100;
  Index eval_batches = 8;

  void validate() const;
};

enum class Task { mlm, clm };
enum class TokenizerKind { char_level, whitespace_word };

struct MaskingConfig {
  double select_p = 0.15;
  double mask_p = 0.8;
  double random_p = 0.1;
  double keep_p = 0.1;

  void validate() const;
};

struct RunConfig {
  Task task = Task::mlm;
  std::filesystem::path corpus;
  TokenizerKind tokenizer = TokenizerKind::char_level;
  Index vocab_cap = 0;  // 0 keeps every token
  double valid_fraction = 0.1;
  BlockConfig block;
  TrainConfig train;
  MaskingConfig masking;

  void validate() const;
  /// Every key with its current value, in key order.
  std::map<std::string, std::string> to_kv() const;
  /// Sets one key; unknown keys and malformed values raise ConfigError.
  void set(const std::string& key, const std::string& value);
};

/// Parses key=value text on top of the defaults. Relative corpus paths are
/// resolved against `base_dir`.
RunConfig parse_run_config(const std::string& text, const std::filesystem::path& base_dir = {});
RunConfig load_run_config(const std::filesystem::path& path);
std::string format_run_config(const RunConfig& cfg);

std::string to_string(AttentionKind k);
std::string to_string(Task t);
std::string to_string(TokenizerKind t);

}  // namespace tcoder
