// tcoder: verification, benchmarks, FLOP reports, and training runs.
//
//   tcoder verify [--seed S]
//   tcoder bench  [--variants token,dim] [--N 1024,2048,4096] [--d 64] [--repeats 5] [--out PATH]
//   tcoder flops  --N 100 --d 64 [--heads 8] [--groups 1] [--convs 8] [--d-model 0] [--out PATH]
//   tcoder train-mlm --config PATH [--ckpt-dir DIR] [--out METRICS.csv] [--seed S]
//   tcoder train-clm --config PATH [--ckpt-dir DIR] [--out METRICS.csv] [--seed S]
//   tcoder eval   --ckpt PATH [--corpus PATH]
//
// Exit codes: 0 success, 1 verification or run failure, 2 usage or config error.

#include <CLI11.hpp>

#include <fstream>
#include <iostream>

#include "tcoder/analysis.hpp"
#include "tcoder/train.hpp"
#include "tcoder/verify.hpp"

namespace {

constexpr int kUsageError = 2;

void emit(const std::string& text, const std::string& out) {
  if (out.empty()) {
    std::cout << text;
    return;
  }
  std::ofstream f(out);
  if (!f) throw std::runtime_error("cannot write " + out);
  f << text;
}

int run_train(tcoder::Task task, const std::string& config, const std::string& ckpt_dir, const std::string& out,
              const std::optional<std::uint64_t>& seed) {
  tcoder::RunConfig cfg = tcoder::load_run_config(config);
  cfg.task = task;
  for (const auto& [k, v] : cfg.to_kv()) std::cout << "config " << k << " = " << v << '\n';
  tcoder::RunOptions opt;
  opt.ckpt_dir = ckpt_dir;
  opt.metrics_path = out;
  opt.seed = seed;
  opt.log = &std::cout;
  const auto summary = tcoder::run_training(cfg, opt);
  std::cout << "final train_nll " << summary.final_train_nll << " valid_nll " << summary.final_valid_nll << " ("
            << summary.seconds << "s)\n";
  if (!summary.checkpoint.empty()) std::cout << "checkpoint " << summary.checkpoint.string() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"tcoder: dimension-wise attention encoder/decoder toolkit"};
  app.require_subcommand(1);

  std::uint64_t verify_seed = 20200801;
  auto* verify = app.add_subcommand("verify", "run all property suites");
  verify->add_option("--seed", verify_seed, "suite seed");

  std::vector<std::string> variants = {"token", "dim"};
  std::vector<tcoder::Index> bench_n = {1024, 2048, 4096}, bench_d = {64};
  int repeats = 5;
  std::string bench_out;
  auto* bench = app.add_subcommand("bench", "median wall-clock sweep over N and d");
  bench->add_option("--variants", variants, "token, dim, masked_naive, masked_streaming")->delimiter(',');
  bench->add_option("--N", bench_n, "sequence lengths")->delimiter(',');
  bench->add_option("--d", bench_d, "head widths")->delimiter(',');
  bench->add_option("--repeats", repeats, "timed repeats per point (>= 5)");
  bench->add_option("--out", bench_out, "CSV path (default stdout)");

  tcoder::Index fn = 100, fd = 64, heads = 8, groups = 1, convs = 8, d_model = 0;
  std::string flops_out;
  auto* flops = app.add_subcommand("flops", "analytic multiply/add counts for both attention kinds");
  flops->add_option("--N", fn, "sequence length");
  flops->add_option("--d", fd, "head width");
  flops->add_option("--heads", heads, "token-wise heads");
  flops->add_option("--groups", groups, "dimension-wise groups");
  flops->add_option("--convs", convs, "filters per group");
  flops->add_option("--d-model", d_model, "model width; > 0 adds projection costs");
  flops->add_option("--out", flops_out, "CSV path (default stdout)");

  std::string config, ckpt_dir, metrics_out;
  std::optional<std::uint64_t> seed;
  auto add_train = [&](const char* name, const char* help) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("--config", config, "run config (key=value)")->required();
    sub->add_option("--ckpt-dir", ckpt_dir, "checkpoint directory");
    sub->add_option("--out", metrics_out, "metrics CSV (step,split,nll)");
    sub->add_option("--seed", seed, "overrides the config seed");
    return sub;
  };
  auto* train_mlm = add_train("train-mlm", "masked language model training");
  auto* train_clm = add_train("train-clm", "causal language model training");

  std::string ckpt, corpus;
  auto* eval = app.add_subcommand("eval", "validation NLL of a checkpoint");
  eval->add_option("--ckpt", ckpt, "checkpoint file")->required();
  eval->add_option("--corpus", corpus, "score this corpus instead of the stored one");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return kUsageError;
  }

  try {
    if (*verify) {
      const auto results = tcoder::run_verification(verify_seed, &std::cout);
      bool ok = true;
      for (const auto& r : results) ok = ok && r.passed;
      std::cout << (ok ? "all suites passed\n" : "verification FAILED\n");
      return ok ? 0 : 1;
    }
    if (*bench) {
      std::vector<tcoder::BenchVariant> vs;
      for (const auto& v : variants) vs.push_back(tcoder::parse_bench_variant(v));
      tcoder::BenchOptions opt;
      opt.repeats = repeats;
      emit(tcoder::bench_sweep(vs, bench_n, bench_d, opt).to_csv(), bench_out);
      return 0;
    }
    if (*flops) {
      emit(tcoder::flops_csv({tcoder::flops_token_attention(fn, fd, heads, d_model),
                              tcoder::flops_dim_attention(fn, fd, groups, convs, d_model)}),
           flops_out);
      return 0;
    }
    if (*train_mlm) return run_train(tcoder::Task::mlm, config, ckpt_dir, metrics_out, seed);
    if (*train_clm) return run_train(tcoder::Task::clm, config, ckpt_dir, metrics_out, seed);
    if (*eval) {
      const auto s = tcoder::run_eval(ckpt, corpus);
      std::cout << "valid_nll " << s.nll << " over " << s.scored << " scored tokens\n";
      return 0;
    }
  } catch (const tcoder::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kUsageError;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsageError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return kUsageError;
}
