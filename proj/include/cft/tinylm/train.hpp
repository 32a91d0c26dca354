#pragma once

// Back-propagation, the adaptive-moment optimiser with warmup + cosine
// decay, and a finite-difference gradient checker for the toy model.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "cft/core.hpp"
#include "cft/rng.hpp"
#include "cft/tinylm/loss.hpp"
#include "cft/tinylm/model.hpp"

namespace cft {

// Padded batch of training sequences. Position i of row s predicts
// gold_indices[s][i]; padding_mask marks positions excluded from the loss
// (prompt positions and padding).
struct TrainBatch {
  std::vector<std::vector<int>> token_id_sequences;
  std::vector<std::vector<int>> gold_indices;
  std::vector<std::vector<double>> weight_matrix;
  std::vector<std::vector<std::uint8_t>> padding_mask;

  std::size_t size() const { return token_id_sequences.size(); }

  void validate(int vocab_size) const {
    const std::size_t n = token_id_sequences.size();
    if (n == 0) throw DataError("empty batch");
    if (gold_indices.size() != n || weight_matrix.size() != n || padding_mask.size() != n) {
      throw DataError("batch components disagree on the number of rows");
    }
    const std::size_t len = token_id_sequences.front().size();
    for (std::size_t s = 0; s < n; ++s) {
      if (token_id_sequences[s].size() != len || gold_indices[s].size() != len || weight_matrix[s].size() != len ||
          padding_mask[s].size() != len) {
        throw DataError("batch row " + std::to_string(s) + " has mismatched lengths");
      }
      for (std::size_t t = 0; t < len; ++t) {
        const int tok = token_id_sequences[s][t];
        const int gold = gold_indices[s][t];
        if (tok < 0 || tok >= vocab_size || gold < 0 || gold >= vocab_size) {
          throw DataError("batch row " + std::to_string(s) + " has a token id outside the vocabulary");
        }
        if (padding_mask[s][t] && weight_matrix[s][t] != 0.0) {
          throw DataError("batch row " + std::to_string(s) + " has weight at a padded position");
        }
        if (!(weight_matrix[s][t] >= 0.0)) throw DataError("negative batch weight");
      }
    }
  }
};

// One training sequence: prompt ids, response ids and per-response-token
// weights. The prompt itself is never a prediction target.
struct TrainExample {
  std::vector<int> prompt_ids;
  std::vector<int> response_ids;
  std::vector<double> weights;
};

inline TrainBatch make_train_batch(std::span<const TrainExample> examples, int pad_id = 0) {
  TrainBatch b;
  std::size_t len = 0;
  for (const auto& ex : examples) {
    if (ex.prompt_ids.empty()) throw DataError("training example with empty prompt");
    if (ex.weights.size() != ex.response_ids.size()) throw DataError("weights and response lengths differ");
    len = std::max(len, ex.prompt_ids.size() + ex.response_ids.size() - 1);
  }
  for (const auto& ex : examples) {
    std::vector<int> seq = ex.prompt_ids;
    seq.insert(seq.end(), ex.response_ids.begin(), ex.response_ids.end());
    std::vector<int> in(len, pad_id), gold(len, pad_id);
    std::vector<double> w(len, 0.0);
    std::vector<std::uint8_t> pad(len, 1);
    for (std::size_t i = 0; i + 1 < seq.size(); ++i) {
      in[i] = seq[i];
      gold[i] = seq[i + 1];
    }
    const std::size_t p = ex.prompt_ids.size();
    for (std::size_t t = 0; t < ex.response_ids.size(); ++t) {
      const std::size_t pos = p - 1 + t;
      pad[pos] = 0;
      w[pos] = ex.weights[t];
    }
    b.token_id_sequences.push_back(std::move(in));
    b.gold_indices.push_back(std::move(gold));
    b.weight_matrix.push_back(std::move(w));
    b.padding_mask.push_back(std::move(pad));
  }
  return b;
}

struct GradResult {
  double loss = 0.0;
  std::vector<double> grads;
};

namespace detail {

struct SequenceRun {
  std::size_t length = 0;  // positions actually run (through the last active one)
  KvCache cache;
  std::vector<PositionTape> tapes;
};

inline std::size_t active_length(const TrainBatch& b, std::size_t s) {
  std::size_t n = 0;
  for (std::size_t t = 0; t < b.padding_mask[s].size(); ++t) {
    if (!b.padding_mask[s][t]) n = t + 1;
  }
  return n;
}

inline void backward_sequence(const Model& model, const SequenceRun& run, const Matrix& dlogits, std::size_t row0,
                              std::vector<double>& g) {
  const ModelConfig& cfg = model.config();
  const int d = cfg.embed_dim, hd = cfg.head_dim(), hidden = cfg.hidden_dim(), V = cfg.vocab_size;
  const auto& off = model.offsets();
  const double* p = model.params().data();
  const std::size_t L = run.length;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

  std::vector<std::vector<double>> dx(L, std::vector<double>(d, 0.0));
  std::vector<double> dh(d);
  for (std::size_t t = 0; t < L; ++t) {
    const auto dlog = dlogits.row(row0 + t);
    bool nonzero = false;
    for (double v : dlog) nonzero = nonzero || v != 0.0;
    if (!nonzero) continue;
    const PositionTape& tp = run.tapes[t];
    kernels::outer_acc(tp.h_final.data(), dlog.data(), g.data() + off.out, d, V);
    std::fill(dh.begin(), dh.end(), 0.0);
    kernels::matvec_t_acc(dlog.data(), p + off.out, dh.data(), d, V);
    kernels::rmsnorm_backward(tp.x_final.data(), p + off.lnf, tp.inv_final, dh.data(), dx[t].data(), g.data() + off.lnf,
                              d);
  }

  std::vector<std::vector<double>> dx_mid(L), datt(L), dq(L), dk(L), dv(L);
  std::vector<double> da(hidden), du(hidden), dh2(d), dh1(d);
  for (int l = cfg.n_layers - 1; l >= 0; --l) {
    const auto& lo = off.layers[static_cast<std::size_t>(l)];
    for (std::size_t t = 0; t < L; ++t) {
      const auto& lt = run.tapes[t].layers[static_cast<std::size_t>(l)];
      dx_mid[t] = dx[t];
      const double* dm = dx[t].data();
      for (int i = 0; i < d; ++i) g[lo.b2 + i] += dm[i];
      kernels::outer_acc(lt.a.data(), dm, g.data() + lo.w2, hidden, d);
      std::fill(da.begin(), da.end(), 0.0);
      kernels::matvec_t_acc(dm, p + lo.w2, da.data(), hidden, d);
      for (int i = 0; i < hidden; ++i) du[i] = da[i] * kernels::gelu_grad(lt.u[i]);
      for (int i = 0; i < hidden; ++i) g[lo.b1 + i] += du[i];
      kernels::outer_acc(lt.h2.data(), du.data(), g.data() + lo.w1, d, hidden);
      std::fill(dh2.begin(), dh2.end(), 0.0);
      kernels::matvec_t_acc(du.data(), p + lo.w1, dh2.data(), d, hidden);
      kernels::rmsnorm_backward(lt.x_mid.data(), p + lo.ln2, lt.inv2, dh2.data(), dx_mid[t].data(), g.data() + lo.ln2,
                                d);
      kernels::outer_acc(lt.att_out.data(), dx_mid[t].data(), g.data() + lo.wo, d, d);
      datt[t].assign(d, 0.0);
      kernels::matvec_t_acc(dx_mid[t].data(), p + lo.wo, datt[t].data(), d, d);
      dq[t].assign(d, 0.0);
      dk[t].assign(d, 0.0);
      dv[t].assign(d, 0.0);
    }
    const double* keys = run.cache.keys[static_cast<std::size_t>(l)].data();
    const double* values = run.cache.values[static_cast<std::size_t>(l)].data();
    std::vector<double> dprob;
    for (std::size_t t = 0; t < L; ++t) {
      const auto& lt = run.tapes[t].layers[static_cast<std::size_t>(l)];
      for (int h = 0; h < cfg.n_heads; ++h) {
        const int o = h * hd;
        const auto& pr = lt.probs[static_cast<std::size_t>(h)];
        dprob.assign(t + 1, 0.0);
        double dot = 0.0;
        for (std::size_t i = 0; i <= t; ++i) {
          const double* vi = values + i * d + o;
          double s = 0.0;
          for (int c = 0; c < hd; ++c) s += datt[t][o + c] * vi[c];
          dprob[i] = s;
          dot += pr[i] * s;
          for (int c = 0; c < hd; ++c) dv[i][o + c] += pr[i] * datt[t][o + c];
        }
        for (std::size_t i = 0; i <= t; ++i) {
          const double ds = pr[i] * (dprob[i] - dot) * scale;
          if (ds == 0.0) continue;
          const double* ki = keys + i * d + o;
          for (int c = 0; c < hd; ++c) {
            dq[t][o + c] += ds * ki[c];
            dk[i][o + c] += ds * lt.q[o + c];
          }
        }
      }
    }
    for (std::size_t t = 0; t < L; ++t) {
      const auto& lt = run.tapes[t].layers[static_cast<std::size_t>(l)];
      kernels::outer_acc(lt.h1.data(), dq[t].data(), g.data() + lo.wq, d, d);
      kernels::outer_acc(lt.h1.data(), dk[t].data(), g.data() + lo.wk, d, d);
      kernels::outer_acc(lt.h1.data(), dv[t].data(), g.data() + lo.wv, d, d);
      std::fill(dh1.begin(), dh1.end(), 0.0);
      kernels::matvec_t_acc(dq[t].data(), p + lo.wq, dh1.data(), d, d);
      kernels::matvec_t_acc(dk[t].data(), p + lo.wk, dh1.data(), d, d);
      kernels::matvec_t_acc(dv[t].data(), p + lo.wv, dh1.data(), d, d);
      dx[t] = dx_mid[t];
      kernels::rmsnorm_backward(lt.x_in.data(), p + lo.ln1, lt.inv1, dh1.data(), dx[t].data(), g.data() + lo.ln1, d);
    }
  }
  for (std::size_t t = 0; t < L; ++t) {
    const int tok = run.tapes[t].token;
    double* gt = g.data() + off.tok + static_cast<std::size_t>(tok) * d;
    double* gp = g.data() + off.pos + t * d;
    for (int i = 0; i < d; ++i) {
      gt[i] += dx[t][i];
      gp[i] += dx[t][i];
    }
  }
}

}  // namespace detail

// Objective value over the whole batch and, when `want_grad`, its gradient
// w.r.t. every model parameter.
// `frozen_scale`, when given, replaces the objective's normalisation by a
// fixed per-position coefficient (flattened over the active positions).
inline GradResult compute_objective(const Model& model, const TrainBatch& batch, Objective objective,
                                    bool want_grad = true, const std::vector<double>* frozen_scale = nullptr) {
  batch.validate(model.config().vocab_size);
  const std::size_t V = static_cast<std::size_t>(model.config().vocab_size);
  std::vector<detail::SequenceRun> runs(batch.size());
  std::size_t rows = 0;
  for (std::size_t s = 0; s < batch.size(); ++s) {
    runs[s].length = detail::active_length(batch, s);
    rows += runs[s].length;
  }
  Matrix logits(rows, V);
  std::vector<int> gold;
  std::vector<double> weights;
  std::vector<std::uint8_t> padding;
  gold.reserve(rows);
  std::size_t r = 0;
  for (std::size_t s = 0; s < batch.size(); ++s) {
    auto& run = runs[s];
    model.check_length(run.length);
    run.cache = model.make_cache();
    run.tapes.resize(want_grad ? run.length : 0);
    for (std::size_t t = 0; t < run.length; ++t, ++r) {
      model.step(run.cache, batch.token_id_sequences[s][t], logits.row(r).data(), nullptr,
                 want_grad ? &run.tapes[t] : nullptr);
      gold.push_back(batch.gold_indices[s][t]);
      weights.push_back(batch.weight_matrix[s][t]);
      padding.push_back(batch.padding_mask[s][t]);
    }
  }
  LossGrad lg;
  if (frozen_scale) {
    if (frozen_scale->size() != rows) throw DataError("frozen scale length mismatch");
    lg = detail::scaled_ce(logits, gold, *frozen_scale, want_grad);
  } else switch (objective) {
    case Objective::sft:
      lg = sft_loss_grad(logits, gold, padding, want_grad);
      break;
    case Objective::cft:
      lg = cft_loss_grad(logits, gold, weights, want_grad);
      break;
    case Objective::dft:
      lg = dft_loss_grad(logits, gold, padding, want_grad);
      break;
  }
  GradResult out;
  out.loss = lg.loss;
  if (!want_grad) return out;
  out.grads.assign(model.num_params(), 0.0);
  r = 0;
  for (std::size_t s = 0; s < batch.size(); ++s) {
    detail::backward_sequence(model, runs[s], lg.grad, r, out.grads);
    r += runs[s].length;
  }
  return out;
}

// ----------------------------------------------------------------------------
// Optimiser

struct AdamOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  int total_steps = 1000;      // cosine decays to zero at this step
  double warmup_ratio = 0.03;  // linear warmup over this fraction of total_steps
  double clip_norm = 0.0;      // global gradient-norm clip; 0 disables
};

inline double scheduled_lr(const AdamOptions& o, int step) {
  const int warm = static_cast<int>(std::ceil(o.warmup_ratio * o.total_steps));
  if (step < warm) return o.learning_rate * static_cast<double>(step + 1) / warm;
  const int span = std::max(1, o.total_steps - warm);
  const double progress = std::min(1.0, static_cast<double>(step - warm) / span);
  return o.learning_rate * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  int step = 0;
};

// One optimiser step on `batch`. Returns the objective before the update.
// On error the model and state are left untouched.
inline double train_step(Model& model, const TrainBatch& batch, Objective objective, AdamState& state,
                         const AdamOptions& opt) {
  GradResult gr = compute_objective(model, batch, objective, true);
  auto params = model.params();
  if (state.m.size() != params.size()) {
    state.m.assign(params.size(), 0.0);
    state.v.assign(params.size(), 0.0);
    state.step = 0;
  }
  if (opt.clip_norm > 0.0) {
    double sq = 0.0;
    for (double g : gr.grads) sq += g * g;
    const double norm = std::sqrt(sq);
    if (norm > opt.clip_norm) {
      const double c = opt.clip_norm / norm;
      for (double& g : gr.grads) g *= c;
    }
  }
  const double lr = scheduled_lr(opt, state.step);
  ++state.step;
  const double bc1 = 1.0 - std::pow(opt.beta1, state.step);
  const double bc2 = 1.0 - std::pow(opt.beta2, state.step);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = gr.grads[i];
    state.m[i] = opt.beta1 * state.m[i] + (1.0 - opt.beta1) * g;
    state.v[i] = opt.beta2 * state.v[i] + (1.0 - opt.beta2) * g * g;
    const double mhat = state.m[i] / bc1;
    const double vhat = state.v[i] / bc2;
    params[i] -= lr * mhat / (std::sqrt(vhat) + opt.epsilon);
  }
  return gr.loss;
}

struct TrainOptions {
  Objective objective = Objective::sft;
  int steps = 100;
  int batch_size = 16;
  AdamOptions adam;
  std::uint64_t seed = 0;
};

struct CurvePoint {
  int step;
  double loss;
  double lr;
};

// Trains on minibatches drawn with replacement from `examples`; returns the
// per-step loss curve.
inline std::vector<CurvePoint> train_model(Model& model, const std::vector<TrainExample>& examples,
                                           const TrainOptions& opt) {
  if (examples.empty()) throw DataError("no training examples");
  if (opt.steps < 1 || opt.batch_size < 1) throw UsageError("steps and batch size must be >= 1");
  for (const auto& e : examples) model.check_length(e.prompt_ids.size() + e.response_ids.size());
  AdamOptions adam = opt.adam;
  adam.total_steps = opt.steps;
  AdamState state;
  Rng rng(mix64(opt.seed ^ 0x747261696eULL));
  std::vector<CurvePoint> curve;
  for (int step = 0; step < opt.steps; ++step) {
    std::vector<TrainExample> batch;
    while (static_cast<int>(batch.size()) < opt.batch_size) {
      batch.push_back(examples[rng.below(examples.size())]);
    }
    const double lr = scheduled_lr(adam, state.step);
    const double loss = train_step(model, make_train_batch(batch), opt.objective, state, adam);
    curve.push_back({step, loss, lr});
  }
  return curve;
}

// ----------------------------------------------------------------------------
// Gradient checking

struct GradReport {
  double max_relative_error = 0.0;
  std::string worst_parameter_name;
  std::size_t num_checked = 0;
};

// Per-position DFT coefficients pbar_t / N at the current parameters,
// flattened over the active positions of `batch`.
inline std::vector<double> dft_frozen_scale(const Model& model, const TrainBatch& batch) {
  std::vector<double> scale;
  std::size_t active = 0;
  for (std::size_t s = 0; s < batch.size(); ++s) {
    for (auto p : batch.padding_mask[s]) active += p ? 0 : 1;
  }
  if (active == 0) throw DataError("every position is padded");
  for (std::size_t s = 0; s < batch.size(); ++s) {
    const std::size_t len = detail::active_length(batch, s);
    const std::vector<int> ids(batch.token_id_sequences[s].begin(),
                               batch.token_id_sequences[s].begin() + static_cast<std::ptrdiff_t>(len));
    const Matrix logits = model.forward(ids);
    for (std::size_t t = 0; t < len; ++t) {
      if (batch.padding_mask[s][t]) {
        scale.push_back(0.0);
        continue;
      }
      const auto lp = log_softmax_row(logits.row(t));
      scale.push_back(std::exp(lp[static_cast<std::size_t>(batch.gold_indices[s][t])]) / static_cast<double>(active));
    }
  }
  return scale;
}

struct GradCheckOptions {
  bool fourth_order = true;  // five-point central stencil; false gives the two-point one
  double step = 1e-4;
  std::size_t full_limit = 20000;  // check every parameter up to this count
  std::size_t sample_size = 500;   // otherwise a seeded subsample
  std::uint64_t seed = 0;
};

// Compares analytic parameter gradients with central differences. For the
// DFT objective the probability weights are frozen at the current
// parameters, matching the stop-gradient in its analytic gradient.
inline GradReport grad_check(const Model& model, const TrainBatch& batch, Objective objective,
                             const GradCheckOptions& opt = {}) {
  std::vector<double> frozen;
  if (objective == Objective::dft) frozen = dft_frozen_scale(model, batch);
  const std::vector<double>* fz = objective == Objective::dft ? &frozen : nullptr;
  const GradResult analytic = compute_objective(model, batch, objective, true, fz);
  const std::size_t n = model.num_params();
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(analytic.grads[i])) {
      throw DataError("non-finite gradient at " + model.param_name(i));
    }
  }
  std::vector<std::size_t> indices;
  if (n <= opt.full_limit) {
    indices.resize(n);
    for (std::size_t i = 0; i < n; ++i) indices[i] = i;
  } else {
    Rng rng(opt.seed);
    std::vector<std::size_t> all(n);
    for (std::size_t i = 0; i < n; ++i) all[i] = i;
    for (std::size_t i = 0; i < opt.sample_size; ++i) {
      std::swap(all[i], all[i + rng.below(n - i)]);
    }
    indices.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(opt.sample_size));
    std::sort(indices.begin(), indices.end());
  }
  Model probe = model;
  GradReport report;
  for (std::size_t i : indices) {
    auto params = probe.params();
    const double orig = params[i];
    auto eval = [&](double x) {
      params[i] = x;
      return compute_objective(probe, batch, objective, false, fz).loss;
    };
    const double h = opt.step;
    double numeric = 0.0;
    if (opt.fourth_order) {
      const double fp1 = eval(orig + h), fm1 = eval(orig - h);
      const double fp2 = eval(orig + 2 * h), fm2 = eval(orig - 2 * h);
      numeric = (8.0 * (fp1 - fm1) - (fp2 - fm2)) / (12.0 * h);
    } else {
      numeric = (eval(orig + h) - eval(orig - h)) / (2.0 * h);
    }
    params[i] = orig;
    if (!std::isfinite(numeric)) throw DataError("non-finite numeric gradient at " + model.param_name(i));
    const double a = analytic.grads[i];
    const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
    const double rel = std::abs(a - numeric) / denom;
    if (rel > report.max_relative_error || report.worst_parameter_name.empty()) {
      report.max_relative_error = rel;
      report.worst_parameter_name = model.param_name(i);
    }
    ++report.num_checked;
  }
  return report;
}

}  // namespace cft
