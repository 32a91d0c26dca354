#pragma once

// Token-level objectives over logit rows: plain cross-entropy (SFT), the
// critical-token weighted cross-entropy (CFT) and probability-rescaled
// cross-entropy (DFT), each with its exact gradient w.r.t. the logits.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "cft/core.hpp"

namespace cft {

struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

  std::span<double> row(std::size_t i) { return {data.data() + i * cols, cols}; }
  std::span<const double> row(std::size_t i) const { return {data.data() + i * cols, cols}; }
  double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

  bool operator==(const Matrix&) const = default;
};

enum class Objective { sft, cft, dft };

inline const char* to_string(Objective o) {
  switch (o) {
    case Objective::sft:
      return "sft";
    case Objective::cft:
      return "cft";
    case Objective::dft:
      return "dft";
  }
  return "?";
}

inline Objective parse_objective(const std::string& s) {
  if (s == "sft") return Objective::sft;
  if (s == "cft") return Objective::cft;
  if (s == "dft") return Objective::dft;
  throw UsageError("unknown objective \"" + s + "\" (expected sft, cft or dft)");
}

namespace detail {

inline void require_finite(std::span<const double> row) {
  for (double z : row) {
    if (!std::isfinite(z)) throw DataError("non-finite logit");
  }
}

}  // namespace detail

inline std::vector<double> log_softmax_row(std::span<const double> logits) {
  detail::require_finite(logits);
  if (logits.empty()) throw DataError("empty logit row");
  const double m = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double z : logits) sum += std::exp(z - m);
  const double log_z = m + std::log(sum);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - log_z;
  return out;
}

inline std::vector<double> softmax_row(std::span<const double> logits) {
  detail::require_finite(logits);
  if (logits.empty()) throw DataError("empty logit row");
  const double m = *std::max_element(logits.begin(), logits.end());
  std::vector<double> out(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - m);
    sum += out[i];
  }
  for (double& p : out) p /= sum;
  return out;
}

// d(-log p_gold)/dz = p - onehot(gold)
inline std::vector<double> token_ce_grad(std::span<const double> prob_row, int gold_index) {
  if (gold_index < 0 || static_cast<std::size_t>(gold_index) >= prob_row.size()) {
    throw DataError("gold index " + std::to_string(gold_index) + " out of range");
  }
  std::vector<double> g(prob_row.begin(), prob_row.end());
  g[static_cast<std::size_t>(gold_index)] -= 1.0;
  return g;
}

inline std::vector<double> position_entropy(const Matrix& logits) {
  std::vector<double> out(logits.rows);
  const double cap = std::log(static_cast<double>(logits.cols));
  for (std::size_t t = 0; t < logits.rows; ++t) {
    const auto lp = log_softmax_row(logits.row(t));
    double h = 0.0;
    for (double l : lp) {
      const double p = std::exp(l);
      if (p > 0.0) h -= p * l;
    }
    out[t] = std::clamp(h, 0.0, cap);
  }
  return out;
}

struct LossGrad {
  double loss = 0.0;
  Matrix grad;  // d loss / d logits, same shape as the logits
};

namespace detail {

inline void check_shapes(const Matrix& logits, std::size_t n) {
  if (n != logits.rows) {
    throw DataError("target length " + std::to_string(n) + " does not match " + std::to_string(logits.rows) +
                    " logit rows");
  }
}

// Shared core: loss = sum_t scale_t * (-log p_t,gold) with gradient rows
// scale_t * (p - onehot). Rows with scale exactly 0 are left as +0.0.
inline LossGrad scaled_ce(const Matrix& logits, std::span<const int> gold, std::span<const double> scale,
                          bool want_grad) {
  LossGrad out;
  if (want_grad) out.grad = Matrix(logits.rows, logits.cols);
  // Neumaier-compensated sum; finite-difference checks see the rounding
  // noise of a plain running sum at gradients near 1e-7.
  double carry = 0.0;
  for (std::size_t t = 0; t < logits.rows; ++t) {
    if (scale[t] == 0.0) continue;
    const int g = gold[t];
    if (g < 0 || static_cast<std::size_t>(g) >= logits.cols) {
      throw DataError("gold index " + std::to_string(g) + " out of range");
    }
    const auto lp = log_softmax_row(logits.row(t));
    const double term = scale[t] * -lp[static_cast<std::size_t>(g)];
    const double sum = out.loss + term;
    carry += std::abs(out.loss) >= std::abs(term) ? (out.loss - sum) + term : (term - sum) + out.loss;
    out.loss = sum;
    if (want_grad) {
      auto row = out.grad.row(t);
      for (std::size_t v = 0; v < logits.cols; ++v) {
        const double p = std::exp(lp[v]);
        row[v] = scale[t] * (p - (static_cast<int>(v) == g ? 1.0 : 0.0));
      }
    }
  }
  out.loss += carry;
  return out;
}

inline std::vector<double> uniform_scale(std::span<const std::uint8_t> padding) {
  std::size_t active = 0;
  for (auto p : padding) active += p ? 0 : 1;
  if (active == 0) throw DataError("every position is padded");
  std::vector<double> scale(padding.size());
  const double s = 1.0 / static_cast<double>(active);
  for (std::size_t t = 0; t < padding.size(); ++t) scale[t] = padding[t] ? 0.0 : s;
  return scale;
}

inline std::vector<double> normalized_weights(std::span<const double> weights) {
  double z = 0.0;
  for (double w : weights) {
    if (!std::isfinite(w) || w < 0.0) throw DataError("weights must be finite and non-negative");
    z += w;
  }
  if (!(z > 0.0)) throw DataError("total weight is zero");
  std::vector<double> scale(weights.size());
  for (std::size_t t = 0; t < weights.size(); ++t) scale[t] = weights[t] == 0.0 ? 0.0 : weights[t] / z;
  return scale;
}

}  // namespace detail

// Mean cross-entropy over positions whose padding flag is 0.
inline LossGrad sft_loss_grad(const Matrix& logits, std::span<const int> gold, std::span<const std::uint8_t> padding,
                              bool want_grad = true) {
  detail::check_shapes(logits, gold.size());
  detail::check_shapes(logits, padding.size());
  const auto scale = detail::uniform_scale(padding);
  return detail::scaled_ce(logits, gold, scale, want_grad);
}

// sum_t w_t * ce_t / sum_t w_t
inline LossGrad cft_loss_grad(const Matrix& logits, std::span<const int> gold, std::span<const double> weights,
                              bool want_grad = true) {
  detail::check_shapes(logits, gold.size());
  detail::check_shapes(logits, weights.size());
  const auto scale = detail::normalized_weights(weights);
  return detail::scaled_ce(logits, gold, scale, want_grad);
}

// Mean over unpadded positions of pbar_t * ce_t, where pbar_t is the gold
// probability treated as a constant.
inline LossGrad dft_loss_grad(const Matrix& logits, std::span<const int> gold, std::span<const std::uint8_t> padding,
                              bool want_grad = true) {
  detail::check_shapes(logits, gold.size());
  detail::check_shapes(logits, padding.size());
  auto scale = detail::uniform_scale(padding);
  for (std::size_t t = 0; t < scale.size(); ++t) {
    if (scale[t] == 0.0) continue;
    const int g = gold[t];
    if (g < 0 || static_cast<std::size_t>(g) >= logits.cols) {
      throw DataError("gold index " + std::to_string(g) + " out of range");
    }
    scale[t] *= std::exp(log_softmax_row(logits.row(t))[static_cast<std::size_t>(g)]);
  }
  return detail::scaled_ce(logits, gold, scale, want_grad);
}

inline double sft_loss(const Matrix& logits, std::span<const int> gold, std::span<const std::uint8_t> padding) {
  return sft_loss_grad(logits, gold, padding, false).loss;
}

inline double cft_loss(const Matrix& logits, std::span<const int> gold, std::span<const double> weights) {
  return cft_loss_grad(logits, gold, weights, false).loss;
}

inline Matrix cft_grad_wrt_logits(const Matrix& logits, std::span<const int> gold, std::span<const double> weights) {
  return cft_loss_grad(logits, gold, weights, true).grad;
}

inline double dft_loss(const Matrix& logits, std::span<const int> gold, std::span<const std::uint8_t> padding) {
  return dft_loss_grad(logits, gold, padding, false).loss;
}

}  // namespace cft
