#pragma once

// Seeded property suites run by `tcoder verify`. Each suite compares two
// independent routes to the same quantity (materialized vs factored, naive vs
// streaming, analytic vs finite differences, counted vs formula) and reports
// its worst deviation against a fixed tolerance.

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "tcoder/model.hpp"

namespace tcoder {

struct SuiteResult {
  std::string name;
  bool passed = false;
  Index cases = 0;
  double worst = 0.0;
  double tolerance = 0.0;
  std::string detail;  // first failure, if any
};

std::string format_suite(const SuiteResult& r);

/// Runs every suite; writes one summary line per suite to `log` if given.
std::vector<SuiteResult> run_verification(std::uint64_t seed = 20200801, std::ostream* log = nullptr);

/// Central-difference check of loss_and_grad over every parameter entry of
/// a (tiny, f64) model on one sequence. Returns the worst relative error.
double model_gradient_check(const BlockConfig& cfg, const ModelParams<double>& params, const std::vector<int>& input,
                            const std::vector<int>& target, bool causal, double h = 1e-5);

}  // namespace tcoder
