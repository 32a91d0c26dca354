#pragma once

// A small decoder-only transformer in double precision: learned token and
// position embeddings, pre-norm (RMSNorm) blocks of causal multi-head
// attention and a GELU MLP, and an untied output projection.
//
// All inference goes through `Model::step`, which appends one position to
// a KV cache. Full-sequence forward, cached decoding and the training tape
// therefore perform identical arithmetic per position, so logits agree
// bit-for-bit between those paths.

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cft/core.hpp"
#include "cft/rng.hpp"
#include "cft/tinylm/loss.hpp"

namespace cft {

struct ModelConfig {
  int vocab_size = 0;
  int context_len = 64;
  int embed_dim = 32;
  int n_heads = 2;
  int n_layers = 2;
  int mlp_mult = 4;
  std::uint64_t seed = 0;
  double init_std = 0.08;
  // Initialise the output projection to zero (every logit row is zero).
  bool zero_output = false;
  // Initialise query/key projections to zero (uniform causal attention).
  bool zero_qk = false;

  int head_dim() const { return embed_dim / n_heads; }
  int hidden_dim() const { return embed_dim * mlp_mult; }

  void validate() const {
    if (vocab_size < 2) throw UsageError("vocab_size must be at least 2");
    if (context_len < 1 || embed_dim < 1 || n_heads < 1 || n_layers < 1 || mlp_mult < 1) {
      throw UsageError("model dimensions must be positive");
    }
    if (embed_dim % n_heads != 0) throw UsageError("embed_dim must be divisible by n_heads");
  }

  bool operator==(const ModelConfig&) const = default;
};

struct TensorSlot {
  std::string name;
  std::size_t offset = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t size() const { return rows * cols; }
};

namespace kernels {

constexpr double rms_eps = 1e-5;

// out = x * inv_rms * gain; returns inv_rms.
inline double rmsnorm(const double* x, const double* gain, double* out, int n) {
  double ms = 0.0;
  for (int i = 0; i < n; ++i) ms += x[i] * x[i];
  ms /= n;
  const double inv = 1.0 / std::sqrt(ms + rms_eps);
  for (int i = 0; i < n; ++i) out[i] = x[i] * inv * gain[i];
  return inv;
}

// y = x W (+ bias), W row-major [in x out].
inline void matvec(const double* x, const double* w, const double* bias, double* y, int in, int out) {
  for (int j = 0; j < out; ++j) y[j] = bias ? bias[j] : 0.0;
  for (int i = 0; i < in; ++i) {
    const double xi = x[i];
    const double* wr = w + static_cast<std::size_t>(i) * out;
    for (int j = 0; j < out; ++j) y[j] += xi * wr[j];
  }
}

// dx += dy W^T
inline void matvec_t_acc(const double* dy, const double* w, double* dx, int in, int out) {
  for (int i = 0; i < in; ++i) {
    const double* wr = w + static_cast<std::size_t>(i) * out;
    double s = 0.0;
    for (int j = 0; j < out; ++j) s += dy[j] * wr[j];
    dx[i] += s;
  }
}

// dW += x^T dy
inline void outer_acc(const double* x, const double* dy, double* dw, int in, int out) {
  for (int i = 0; i < in; ++i) {
    const double xi = x[i];
    if (xi == 0.0) continue;
    double* wr = dw + static_cast<std::size_t>(i) * out;
    for (int j = 0; j < out; ++j) wr[j] += xi * dy[j];
  }
}

constexpr double gelu_c = 0.7978845608028654;  // sqrt(2/pi)

inline double gelu(double x) {
  return 0.5 * x * (1.0 + std::tanh(gelu_c * (x + 0.044715 * x * x * x)));
}

inline double gelu_grad(double x) {
  const double inner = gelu_c * (x + 0.044715 * x * x * x);
  const double th = std::tanh(inner);
  return 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * gelu_c * (1.0 + 3.0 * 0.044715 * x * x);
}

// dx for y = x * r * g with r = (mean(x^2) + eps)^-1/2, accumulated into dx;
// dgain accumulated too.
inline void rmsnorm_backward(const double* x, const double* gain, double inv, const double* dy, double* dx,
                             double* dgain, int n) {
  double dot = 0.0;
  for (int i = 0; i < n; ++i) {
    dgain[i] += dy[i] * x[i] * inv;
    dot += gain[i] * dy[i] * x[i];
  }
  const double c = inv * inv * inv * dot / n;
  for (int i = 0; i < n; ++i) dx[i] += inv * gain[i] * dy[i] - c * x[i];
}

}  // namespace kernels

// Per-layer key/value rows for the positions seen so far.
struct KvCache {
  int length = 0;
  std::vector<std::vector<double>> keys;    // [layer][pos * d]
  std::vector<std::vector<double>> values;  // [layer][pos * d]

  // Drops positions >= n.
  void truncate(int n) {
    if (n < length) length = n;
  }
};

// Activations of one position, kept for back-propagation.
struct PositionTape {
  struct Layer {
    std::vector<double> x_in, h1, q, att_out, x_mid, h2, u, a;
    std::vector<std::vector<double>> probs;  // [head][key]
    double inv1 = 0.0, inv2 = 0.0;
  };
  int token = 0;
  std::vector<Layer> layers;
  std::vector<double> x_final, h_final;
  double inv_final = 0.0;
};

class Model {
 public:
  Model() = default;

  explicit Model(const ModelConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    layout();
    params_.assign(total_, 0.0);
    initialize();
  }

  Model(const ModelConfig& cfg, std::vector<double> params) : cfg_(cfg) {
    cfg_.validate();
    layout();
    if (params.size() != total_) {
      throw DataError("parameter count " + std::to_string(params.size()) + " does not match layout size " +
                      std::to_string(total_));
    }
    params_ = std::move(params);
  }

  const ModelConfig& config() const { return cfg_; }
  std::span<double> params() { return params_; }
  std::span<const double> params() const { return params_; }
  std::size_t num_params() const { return total_; }
  const std::vector<TensorSlot>& slots() const { return slots_; }

  // Name of the tensor holding flat parameter `index`, with coordinates.
  std::string param_name(std::size_t index) const {
    for (const auto& s : slots_) {
      if (index >= s.offset && index < s.offset + s.size()) {
        const std::size_t local = index - s.offset;
        return s.name + "[" + std::to_string(local / s.cols) + "," + std::to_string(local % s.cols) + "]";
      }
    }
    return "?";
  }

  KvCache make_cache() const {
    KvCache c;
    const std::size_t n = static_cast<std::size_t>(cfg_.context_len) * cfg_.embed_dim;
    c.keys.assign(cfg_.n_layers, std::vector<double>(n));
    c.values.assign(cfg_.n_layers, std::vector<double>(n));
    return c;
  }

  // Feeds `token` at position cache.length. Writes vocab_size logits into
  // `logits` when non-null, final-layer attention rows (one per head) into
  // `attention` when non-null, and activations into `tape` when non-null.
  void step(KvCache& cache, int token, double* logits, std::vector<std::vector<double>>* attention = nullptr,
            PositionTape* tape = nullptr) const {
    const int d = cfg_.embed_dim;
    const int hd = cfg_.head_dim();
    const int hidden = cfg_.hidden_dim();
    const int pos = cache.length;
    if (pos >= cfg_.context_len) {
      throw DataError("sequence exceeds context length " + std::to_string(cfg_.context_len));
    }
    if (token < 0 || token >= cfg_.vocab_size) {
      throw DataError("token id " + std::to_string(token) + " out of range");
    }
    const double* p = params_.data();
    std::vector<double> x(d), h(d), q(d), att(d), tmp(d), u(hidden), a(hidden);
    const double* te = p + off_.tok + static_cast<std::size_t>(token) * d;
    const double* pe = p + off_.pos + static_cast<std::size_t>(pos) * d;
    for (int i = 0; i < d; ++i) x[i] = te[i] + pe[i];
    if (tape) {
      tape->token = token;
      tape->layers.resize(cfg_.n_layers);
    }
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
    std::vector<double> scores(static_cast<std::size_t>(pos) + 1);
    for (int l = 0; l < cfg_.n_layers; ++l) {
      const LayerOffsets& lo = off_.layers[l];
      PositionTape::Layer* lt = tape ? &tape->layers[l] : nullptr;
      if (lt) lt->x_in = x;
      const double inv1 = kernels::rmsnorm(x.data(), p + lo.ln1, h.data(), d);
      double* krow = cache.keys[l].data() + static_cast<std::size_t>(pos) * d;
      double* vrow = cache.values[l].data() + static_cast<std::size_t>(pos) * d;
      kernels::matvec(h.data(), p + lo.wq, nullptr, q.data(), d, d);
      kernels::matvec(h.data(), p + lo.wk, nullptr, krow, d, d);
      kernels::matvec(h.data(), p + lo.wv, nullptr, vrow, d, d);
      const bool last_layer = l + 1 == cfg_.n_layers;
      if (attention && last_layer) attention->assign(cfg_.n_heads, std::vector<double>());
      if (lt) lt->probs.assign(cfg_.n_heads, std::vector<double>());
      for (int hh = 0; hh < cfg_.n_heads; ++hh) {
        const int o = hh * hd;
        double mx = -std::numeric_limits<double>::infinity();
        for (int i = 0; i <= pos; ++i) {
          const double* ki = cache.keys[l].data() + static_cast<std::size_t>(i) * d + o;
          double s = 0.0;
          for (int c = 0; c < hd; ++c) s += q[o + c] * ki[c];
          s *= scale;
          scores[i] = s;
          if (s > mx) mx = s;
        }
        double sum = 0.0;
        for (int i = 0; i <= pos; ++i) {
          scores[i] = std::exp(scores[i] - mx);
          sum += scores[i];
        }
        for (int i = 0; i <= pos; ++i) scores[i] /= sum;
        for (int c = 0; c < hd; ++c) att[o + c] = 0.0;
        for (int i = 0; i <= pos; ++i) {
          const double* vi = cache.values[l].data() + static_cast<std::size_t>(i) * d + o;
          const double w = scores[i];
          for (int c = 0; c < hd; ++c) att[o + c] += w * vi[c];
        }
        if (attention && last_layer) (*attention)[hh].assign(scores.begin(), scores.end());
        if (lt) lt->probs[hh].assign(scores.begin(), scores.end());
      }
      kernels::matvec(att.data(), p + lo.wo, nullptr, tmp.data(), d, d);
      for (int i = 0; i < d; ++i) x[i] += tmp[i];
      if (lt) {
        lt->inv1 = inv1;
        lt->h1 = h;
        lt->q = q;
        lt->att_out = att;
        lt->x_mid = x;
      }
      const double inv2 = kernels::rmsnorm(x.data(), p + lo.ln2, h.data(), d);
      kernels::matvec(h.data(), p + lo.w1, p + lo.b1, u.data(), d, hidden);
      for (int i = 0; i < hidden; ++i) a[i] = kernels::gelu(u[i]);
      kernels::matvec(a.data(), p + lo.w2, p + lo.b2, tmp.data(), hidden, d);
      for (int i = 0; i < d; ++i) x[i] += tmp[i];
      if (lt) {
        lt->inv2 = inv2;
        lt->h2 = h;
        lt->u = u;
        lt->a = a;
      }
    }
    cache.length = pos + 1;
    if (!logits && !tape) return;
    const double invf = kernels::rmsnorm(x.data(), p + off_.lnf, h.data(), d);
    if (tape) {
      tape->x_final = x;
      tape->h_final = h;
      tape->inv_final = invf;
    }
    if (logits) kernels::matvec(h.data(), p + off_.out, nullptr, logits, d, cfg_.vocab_size);
  }

  // Logit rows for every position of `ids`.
  Matrix forward(std::span<const int> ids) const {
    check_length(ids.size());
    Matrix out(ids.size(), static_cast<std::size_t>(cfg_.vocab_size));
    KvCache cache = make_cache();
    for (std::size_t t = 0; t < ids.size(); ++t) step(cache, ids[t], out.row(t).data());
    return out;
  }

  // attention[head][query][key] of the final layer (rows are causal, so
  // row q has q + 1 entries).
  std::vector<std::vector<std::vector<double>>> final_layer_attention(std::span<const int> ids) const {
    check_length(ids.size());
    std::vector<std::vector<std::vector<double>>> maps(cfg_.n_heads);
    KvCache cache = make_cache();
    std::vector<std::vector<double>> rows;
    for (std::size_t t = 0; t < ids.size(); ++t) {
      step(cache, ids[t], nullptr, &rows);
      for (int h = 0; h < cfg_.n_heads; ++h) maps[h].push_back(rows[h]);
    }
    return maps;
  }

  // Mean over final-layer heads of the attention mass that strictly later
  // queries direct at each position, divided by the number of such queries.
  // The last position scores 0.
  std::vector<double> attention_received(std::span<const int> ids) const {
    const auto maps = final_layer_attention(ids);
    const std::size_t n = ids.size();
    std::vector<double> score(n, 0.0);
    for (std::size_t t = 0; t + 1 < n; ++t) {
      double total = 0.0;
      for (int h = 0; h < cfg_.n_heads; ++h) {
        double mass = 0.0;
        for (std::size_t q = t + 1; q < n; ++q) mass += maps[h][q][t];
        total += mass;
      }
      score[t] = total / cfg_.n_heads / static_cast<double>(n - 1 - t);
    }
    return score;
  }

  void check_length(std::size_t n) const {
    if (n > static_cast<std::size_t>(cfg_.context_len)) {
      throw DataError("sequence of length " + std::to_string(n) + " exceeds context length " +
                      std::to_string(cfg_.context_len));
    }
  }

  // Offsets are public for the trainer's backward pass.
  struct LayerOffsets {
    std::size_t ln1, wq, wk, wv, wo, ln2, w1, b1, w2, b2;
  };
  struct Offsets {
    std::size_t tok, pos, lnf, out;
    std::vector<LayerOffsets> layers;
  };
  const Offsets& offsets() const { return off_; }

 private:
  std::size_t add_slot(const std::string& name, std::size_t rows, std::size_t cols) {
    slots_.push_back({name, total_, rows, cols});
    total_ += rows * cols;
    return slots_.back().offset;
  }

  void layout() {
    const std::size_t v = cfg_.vocab_size, d = cfg_.embed_dim, c = cfg_.context_len, hdn = cfg_.hidden_dim();
    slots_.clear();
    total_ = 0;
    off_.tok = add_slot("tok_emb", v, d);
    off_.pos = add_slot("pos_emb", c, d);
    off_.layers.clear();
    for (int l = 0; l < cfg_.n_layers; ++l) {
      const std::string pre = "layer" + std::to_string(l) + ".";
      LayerOffsets lo{};
      lo.ln1 = add_slot(pre + "ln1", 1, d);
      lo.wq = add_slot(pre + "wq", d, d);
      lo.wk = add_slot(pre + "wk", d, d);
      lo.wv = add_slot(pre + "wv", d, d);
      lo.wo = add_slot(pre + "wo", d, d);
      lo.ln2 = add_slot(pre + "ln2", 1, d);
      lo.w1 = add_slot(pre + "w1", d, hdn);
      lo.b1 = add_slot(pre + "b1", 1, hdn);
      lo.w2 = add_slot(pre + "w2", hdn, d);
      lo.b2 = add_slot(pre + "b2", 1, d);
      off_.layers.push_back(lo);
    }
    off_.lnf = add_slot("ln_final", 1, d);
    off_.out = add_slot("out_proj", d, v);
  }

  void initialize() {
    Rng rng(cfg_.seed);
    const double resid_std = cfg_.init_std / std::sqrt(2.0 * cfg_.n_layers);
    auto fill = [&](std::size_t off, std::size_t n, double std_dev) {
      for (std::size_t i = 0; i < n; ++i) params_[off + i] = std_dev * rng.normal();
    };
    auto ones = [&](std::size_t off, std::size_t n) {
      for (std::size_t i = 0; i < n; ++i) params_[off + i] = 1.0;
    };
    const std::size_t v = cfg_.vocab_size, d = cfg_.embed_dim, c = cfg_.context_len, hdn = cfg_.hidden_dim();
    fill(off_.tok, v * d, cfg_.init_std);
    fill(off_.pos, c * d, cfg_.init_std);
    for (const auto& lo : off_.layers) {
      ones(lo.ln1, d);
      fill(lo.wq, d * d, cfg_.zero_qk ? 0.0 : cfg_.init_std);
      fill(lo.wk, d * d, cfg_.zero_qk ? 0.0 : cfg_.init_std);
      fill(lo.wv, d * d, cfg_.init_std);
      fill(lo.wo, d * d, resid_std);
      ones(lo.ln2, d);
      fill(lo.w1, d * hdn, cfg_.init_std);
      fill(lo.w2, hdn * d, resid_std);
    }
    ones(off_.lnf, d);
    fill(off_.out, d * v, cfg_.zero_output ? 0.0 : cfg_.init_std);
  }

  ModelConfig cfg_;
  std::vector<double> params_;
  std::vector<TensorSlot> slots_;
  std::size_t total_ = 0;
  Offsets off_;
};

}  // namespace cft
