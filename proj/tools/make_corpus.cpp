// Writes the deterministic synthetic English-like corpus used by the
// training smoke runs:  tcoder-make-corpus OUT [--bytes N] [--seed S]

#include <CLI11.hpp>

#include <fstream>
#include <iostream>

#include "tcoder/data.hpp"

int main(int argc, char** argv) {
  CLI::App app{"synthetic corpus generator"};
  std::string out;
  std::size_t bytes = 300000;
  std::uint64_t seed = 7;
  app.add_option("out", out, "output path")->required();
  app.add_option("--bytes", bytes, "approximate size");
  app.add_option("--seed", seed, "generator seed");
  CLI11_PARSE(app, argc, argv);

  std::ofstream f(out, std::ios::binary);
  if (!f) {
    std::cerr << "cannot write " << out << '\n';
    return 1;
  }
  f << tcoder::synthetic_corpus(bytes, seed);
  return f ? 0 : 1;
}
