#include "tcoder/train.hpp"

#include <chrono>
#include <fstream>
#include <iomanip>
#include <ostream>

namespace tcoder {

namespace {

constexpr std::uint64_t kValidMaskStream = 0xFFFF'FFFF'0000'0001ULL;
constexpr std::uint64_t kDropoutStreamBase = 1ULL << 40;
constexpr int kMaxBatchRedraws = 100;

std::vector<int> ids_with_vocab(const std::string& text, TokenizerKind kind, const Vocab& vocab) {
  std::vector<int> ids;
  for (const auto& t : tokenize(text, kind)) ids.push_back(vocab.id(t));
  return ids;
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read corpus " + path.string());
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (text.empty()) throw std::runtime_error("corpus " + path.string() + " is empty");
  return text;
}

nlohmann::json checkpoint_meta(const RunConfig& cfg, const Vocab& vocab, Index step) {
  nlohmann::json meta;
  meta["config"] = cfg.to_kv();
  meta["vocab"] = vocab.tokens();
  meta["step"] = step;
  return meta;
}

template <typename Scalar>
TrainSummary train_impl(const RunConfig& cfg, const Corpus& corpus, const Split& split, const RunOptions& opt) {
  const auto start = std::chrono::steady_clock::now();
  const bool causal = cfg.task == Task::clm;
  const Index vocab_size = corpus.vocab.size();
  ModelParams<Scalar> params = init_params<Scalar>(cfg.block, cfg.train.seed);
  AdamState<Scalar> adam = make_adam_state(params);
  const auto valid = validation_examples(split, cfg, vocab_size);

  TrainSummary out;
  out.vocab_size = vocab_size;
  out.parameters = params.parameter_count();
  if (opt.log)
    *opt.log << "task " << to_string(cfg.task) << ", vocab " << vocab_size << ", " << split.train.size()
             << " train / " << split.valid.size() << " valid windows, " << out.parameters << " parameters"
             << std::endl;

  const Rng root(cfg.train.seed);
  double interval_loss = 0.0;
  Index interval_steps = 0;
  for (Index step = 1; step <= cfg.train.steps; ++step) {
    Rng br = root.fork(static_cast<std::uint64_t>(step));
    std::vector<TrainExample> batch;
    for (int attempt = 0; attempt < kMaxBatchRedraws; ++attempt) {
      std::vector<std::vector<int>> windows;
      for (Index b = 0; b < cfg.train.batch_size; ++b) windows.push_back(split.train[br.below(split.train.size())]);
      batch = make_examples(windows, cfg.task, vocab_size, br, cfg.masking);
      if (!batch.empty()) break;
    }
    if (batch.empty()) throw std::runtime_error("could not draw a batch with any scored position");

    Rng dr = root.fork(kDropoutStreamBase + static_cast<std::uint64_t>(step));
    const StepStats st = train_step(batch, params, adam, cfg.block, cfg.train, causal, &dr);
    interval_loss += st.loss;
    ++interval_steps;

    if (step % cfg.train.eval_interval == 0 || step == cfg.train.steps) {
      const double train_nll = interval_loss / static_cast<double>(interval_steps);
      const double valid_nll = evaluate_nll(valid, params, cfg.block, causal);
      out.metrics.push_back({step, "train", train_nll});
      out.metrics.push_back({step, "valid", valid_nll});
      out.final_train_nll = train_nll;
      out.final_valid_nll = valid_nll;
      interval_loss = 0.0;
      interval_steps = 0;
      if (opt.log) {
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        *opt.log << "step " << step << "  train " << std::fixed << std::setprecision(4) << train_nll << "  valid "
                 << valid_nll << "  lr " << std::scientific << std::setprecision(2) << st.lr << std::defaultfloat
                 << "  (" << std::setprecision(1) << std::fixed << secs << "s)\n"
                 << std::defaultfloat << std::setprecision(6) << std::flush;
      }
    }
  }
  if (cfg.train.steps == 0) out.final_valid_nll = evaluate_nll(valid, params, cfg.block, causal);

  if (!opt.ckpt_dir.empty()) {
    CheckpointFile file;
    file.meta = checkpoint_meta(cfg, corpus.vocab, cfg.train.steps);
    add_to_checkpoint(file, params);
    out.checkpoint = opt.ckpt_dir / "model.tckpt";
    write_checkpoint(out.checkpoint, file);
  }
  if (!opt.metrics_path.empty()) write_metrics_csv(opt.metrics_path, out.metrics);
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

template <typename Scalar>
EvalSummary eval_impl(const RunConfig& cfg, const CheckpointFile& file, const std::vector<int>& ids) {
  ModelParams<Scalar> params = init_params<Scalar>(cfg.block, cfg.train.seed);
  load_from_checkpoint(file, params);
  const Split split = split_windows(make_windows(ids, cfg.block.max_len), cfg.valid_fraction);
  const auto valid = validation_examples(split, cfg, cfg.block.vocab);
  EvalSummary s;
  s.nll = evaluate_nll(valid, params, cfg.block, cfg.task == Task::clm, &s.scored);
  return s;
}

}  // namespace

std::vector<TrainExample> make_examples(const std::vector<std::vector<int>>& windows, Task task, Index vocab_size,
                                        Rng& rng, const MaskingConfig& masking) {
  std::vector<TrainExample> out;
  for (const auto& w : windows) {
    const auto n = static_cast<std::size_t>(unpadded_length(w));
    const std::vector<int> body(w.begin(), w.begin() + static_cast<std::ptrdiff_t>(n));
    TrainExample ex;
    if (task == Task::clm) {
      if (n < 2) continue;
      ex.input.assign(body.begin(), body.end() - 1);
      ex.target.assign(body.begin() + 1, body.end());
    } else {
      if (n == 0) continue;
      MaskedRow row = apply_mlm_mask(body, vocab_size, rng, masking);
      if (!row.has_masked()) continue;
      ex.input = std::move(row.input);
      ex.target = std::move(row.target);
    }
    out.push_back(std::move(ex));
  }
  return out;
}

std::vector<TrainExample> validation_examples(const Split& split, const RunConfig& cfg, Index vocab_size) {
  const auto limit = static_cast<std::size_t>(cfg.train.eval_batches * cfg.train.batch_size);
  std::vector<std::vector<int>> windows(split.valid.begin(),
                                        split.valid.begin() + static_cast<std::ptrdiff_t>(std::min(limit, split.valid.size())));
  Rng rng = Rng(cfg.train.seed).fork(kValidMaskStream);
  auto out = make_examples(windows, cfg.task, vocab_size, rng, cfg.masking);
  if (out.empty()) throw std::runtime_error("validation split has no scored positions");
  return out;
}

TrainSummary run_training(RunConfig cfg, const RunOptions& opt) {
  if (opt.seed) cfg.train.seed = *opt.seed;
  if (cfg.corpus.empty()) throw ConfigError("config: corpus is required for training");
  cfg.validate();
  const Corpus corpus = build_corpus(cfg.corpus, cfg.tokenizer, cfg.vocab_cap);
  cfg.block.vocab = corpus.vocab.size();
  const Split split = split_windows(make_windows(corpus.ids, cfg.block.max_len), cfg.valid_fraction);
  return cfg.block.precision == Precision::f64 ? train_impl<double>(cfg, corpus, split, opt)
                                               : train_impl<float>(cfg, corpus, split, opt);
}

EvalSummary run_eval(const std::filesystem::path& checkpoint, const std::filesystem::path& corpus) {
  const CheckpointFile file = read_checkpoint(checkpoint);
  RunConfig cfg;
  try {
    for (const auto& [k, v] : file.meta.at("config").items()) cfg.set(k, v.get<std::string>());
    const Vocab vocab = Vocab::from_tokens(file.meta.at("vocab").get<std::vector<std::string>>());
    cfg.block.vocab = vocab.size();
    const std::filesystem::path source = corpus.empty() ? cfg.corpus : corpus;
    const auto ids = ids_with_vocab(read_text(source), cfg.tokenizer, vocab);
    return cfg.block.precision == Precision::f64 ? eval_impl<double>(cfg, file, ids) : eval_impl<float>(cfg, file, ids);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("checkpoint: malformed metadata: ") + e.what());
  }
}

void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricRow>& rows) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "step,split,nll\n" << std::setprecision(9);
  for (const auto& r : rows) out << r.step << ',' << r.split << ',' << r.nll << '\n';
}

}  // namespace tcoder
