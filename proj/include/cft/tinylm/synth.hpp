#pragma once

// Synthetic arithmetic-chain word problems with worked solutions, sized for
// the toy model: every operand and intermediate value is a single digit.
//
//   question: "start with 3; add 4; multiply by 2; subtract 5."
//   solution: "then 3 + 4 = 7. next 7 - 5 is 2. ..." ending in "#### <result>"

#include <string>
#include <vector>

#include "cft/core.hpp"
#include "cft/rng.hpp"

namespace cft {

struct SynthOptions {
  int min_steps = 2;
  int max_steps = 3;
  std::string id_prefix = "syn";
  // Number of interchangeable connector words per step ("then", "next", "so").
  int connector_variants = 3;
};

struct SynthStep {
  int lhs = 0;
  char op = '+';
  int rhs = 0;
  int result = 0;
};

namespace detail {

inline std::vector<SynthStep> synth_chain(Rng& rng, int steps, int& start) {
  start = static_cast<int>(rng.below(10));
  std::vector<SynthStep> chain;
  int value = start;
  for (int s = 0; s < steps; ++s) {
    std::vector<char> ops;
    if (value <= 8) ops.push_back('+');
    if (value >= 1) ops.push_back('-');
    if (value <= 4) ops.push_back('*');
    const char op = ops[rng.below(ops.size())];
    int rhs = 0;
    int result = 0;
    switch (op) {
      case '+':
        rhs = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(9 - value)));
        result = value + rhs;
        break;
      case '-':
        rhs = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(value)));
        result = value - rhs;
        break;
      default: {
        const int hi = value == 0 ? 9 : 9 / value;
        rhs = 2 + static_cast<int>(rng.below(static_cast<std::uint64_t>(hi - 1)));
        result = value * rhs;
        break;
      }
    }
    chain.push_back({value, op, rhs, result});
    value = result;
  }
  return chain;
}

}  // namespace detail

inline std::vector<Sample> synth_corpus(std::uint64_t seed, std::size_t size, const SynthOptions& opt = {}) {
  static const char* connectors[] = {"then", "next", "so"};
  static const char* equals[] = {"=", "is"};
  std::vector<Sample> out;
  out.reserve(size);
  for (std::size_t i = 0; i < size; ++i) {
    Rng rng(derive_seed(seed, opt.id_prefix, i));
    const int steps = opt.min_steps + static_cast<int>(rng.below(static_cast<std::uint64_t>(opt.max_steps - opt.min_steps + 1)));
    int start = 0;
    const auto chain = detail::synth_chain(rng, steps, start);
    std::string question = "start with " + std::to_string(start);
    std::string solution;
    for (std::size_t s = 0; s < chain.size(); ++s) {
      const auto& st = chain[s];
      switch (st.op) {
        case '+':
          question += "; add " + std::to_string(st.rhs);
          break;
        case '-':
          question += "; subtract " + std::to_string(st.rhs);
          break;
        default:
          question += "; multiply by " + std::to_string(st.rhs);
          break;
      }
      const int variants = std::max(1, std::min(opt.connector_variants, 3));
      const char* conn = connectors[rng.below(static_cast<std::uint64_t>(variants))];
      const char* eq = equals[rng.below(2)];
      if (s) solution += ' ';
      solution += std::string(conn) + ' ' + std::to_string(st.lhs) + ' ' + st.op + ' ' + std::to_string(st.rhs) + ' ' +
                  eq + ' ' + std::to_string(st.result) + '.';
    }
    question += '.';
    const int answer = chain.empty() ? start : chain.back().result;
    solution += " #### " + std::to_string(answer);
    Sample sample;
    sample.id = opt.id_prefix + "-" + std::to_string(i);
    sample.question = std::move(question);
    sample.gold_answer = std::to_string(answer);
    sample.task_kind = TaskKind::numeric;
    sample.reference_solution = std::move(solution);
    out.push_back(std::move(sample));
  }
  return out;
}

}  // namespace cft
