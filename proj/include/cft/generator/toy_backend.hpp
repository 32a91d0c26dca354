#pragma once

// In-process backend over the toy transformer. Greedy batches are decoded
// with a shared-prefix KV cache: requests are walked in lexicographic order
// of their token prefix so each one only pays for the tokens it does not
// share with its predecessor.

#include <algorithm>
#include <memory>
#include <numeric>
#include <span>
#include <thread>

#include "cft/generator/backend.hpp"
#include "cft/rng.hpp"
#include "cft/tinylm/checkpoint.hpp"
#include "cft/tinylm/loss.hpp"
#include "cft/tinylm/model.hpp"
#include "cft/tokenizer.hpp"

namespace cft {

namespace detail {

inline std::vector<TopEntry> rank_topk(std::span<const double> logprobs, const Vocab& vocab, int k) {
  std::vector<int> idx(logprobs.size());
  std::iota(idx.begin(), idx.end(), 0);
  const std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(std::max(k, 0)), idx.size());
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n), idx.end(), [&](int a, int b) {
    if (logprobs[a] != logprobs[b]) return logprobs[a] > logprobs[b];
    return a < b;
  });
  std::vector<TopEntry> out;
  out.reserve(n);
  for (std::size_t r = 0; r < n; ++r) out.push_back({vocab.text_of(idx[r]), idx[r], logprobs[idx[r]]});
  return out;
}

inline int argmax_lowest(std::span<const double> v) {
  int best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = static_cast<int>(i);
  }
  return best;
}

inline int sample_index(std::span<const double> logits, double temperature, Rng& rng) {
  std::vector<double> scaled(logits.begin(), logits.end());
  for (double& z : scaled) z /= temperature;
  const auto p = softmax_row(scaled);
  const double u = rng.uniform();
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    acc += p[i];
    if (u < acc) return static_cast<int>(i);
  }
  // Rounding left u above the final partial sum: take the last nonzero entry.
  for (std::size_t i = p.size(); i-- > 0;) {
    if (p[i] > 0.0) return static_cast<int>(i);
  }
  return 0;
}

}  // namespace detail

class ToyBackend : public Backend {
 public:
  ToyBackend(std::shared_ptr<const Model> model, Vocab vocab, std::string tag = "toy", int max_topk = 8)
      : model_(std::move(model)), vocab_(std::move(vocab)), tag_(std::move(tag)), max_topk_(max_topk) {
    if (!model_) throw UsageError("toy backend needs a model");
    if (vocab_.size() != model_->config().vocab_size) throw DataError("vocabulary size does not match the model");
    max_topk_ = std::min(max_topk_, vocab_.size());
  }

  explicit ToyBackend(ToyCheckpoint ckpt, std::string tag = "toy", int max_topk = 8)
      : ToyBackend(std::make_shared<const Model>(std::move(ckpt.model)), std::move(ckpt.vocab), std::move(tag),
                   max_topk) {}

  const Model& model() const { return *model_; }
  const Vocab& vocab() const { return vocab_; }

  BackendDescriptor descriptor() const override {
    return {tag_, max_topk_, true, true, model_->config().context_len};
  }

  Trajectory decode(const DecodeRequest& r) override {
    const auto seq = prefix_ids(r);
    KvCache cache = model_->make_cache();
    std::vector<double> logits(static_cast<std::size_t>(vocab_.size()));
    for (std::size_t i = 0; i < seq.size(); ++i) {
      model_->step(cache, seq[i], i + 1 == seq.size() ? logits.data() : nullptr);
    }
    return generate(r, cache, logits);
  }

  // Recomputes the whole sequence for every generated token.
  Trajectory decode_uncached(const DecodeRequest& r) override {
    auto seq = prefix_ids(r);
    auto last_row = [&] {
      const Matrix all = model_->forward(seq);
      const auto row = all.row(all.rows - 1);
      return std::vector<double>(row.begin(), row.end());
    };
    return run_loop(r, last_row(), [&](std::vector<double>& logits, int next) {
      seq.push_back(next);
      logits = last_row();
    });
  }

  std::vector<DecodeOutcome> decode_batch(std::span<const DecodeRequest> requests, int parallelism) override {
    std::vector<DecodeOutcome> out(requests.size());
    std::vector<std::size_t> order;
    std::vector<std::vector<int>> prefixes(requests.size());
    for (std::size_t i = 0; i < requests.size(); ++i) {
      try {
        prefixes[i] = prefix_ids(requests[i]);
        order.push_back(i);
      } catch (const std::exception& e) {
        record_failure(out[i], e);
        out[i].attempts = 1;
      }
    }
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return prefixes[a] < prefixes[b]; });
    const int workers = std::max(1, std::min<int>(parallelism, static_cast<int>(order.size())));
    auto run_chunk = [&](std::size_t begin, std::size_t end) {
      KvCache cache = model_->make_cache();
      std::vector<int> cached;
      std::vector<double> logits(static_cast<std::size_t>(vocab_.size()));
      for (std::size_t o = begin; o < end; ++o) {
        const std::size_t i = order[o];
        const auto& seq = prefixes[i];
        auto& res = out[i];
        res.attempts = 1;
        try {
          std::size_t keep = 0;
          while (keep < cached.size() && keep < seq.size() && cached[keep] == seq[keep]) ++keep;
          keep = std::min(keep, seq.size() - 1);
          cache.truncate(static_cast<int>(keep));
          cached.resize(keep);
          for (std::size_t t = keep; t < seq.size(); ++t) {
            model_->step(cache, seq[t], t + 1 == seq.size() ? logits.data() : nullptr);
            cached.push_back(seq[t]);
          }
          res.trajectory = generate(requests[i], cache, logits);
          cache.truncate(static_cast<int>(seq.size()));
        } catch (const std::exception& e) {
          record_failure(res, e);
          cache.truncate(0);
          cached.clear();
        }
      }
    };
    if (workers == 1) {
      run_chunk(0, order.size());
      return out;
    }
    std::vector<std::thread> pool;
    const std::size_t per = (order.size() + workers - 1) / workers;
    for (int w = 0; w < workers; ++w) {
      const std::size_t b = std::min(order.size(), per * w);
      const std::size_t e = std::min(order.size(), b + per);
      if (b < e) pool.emplace_back(run_chunk, b, e);
    }
    for (auto& t : pool) t.join();
    return out;
  }

  Trajectory force_score(const std::string& prompt, const std::string& response, int top_k) override {
    const auto p = vocab_.encode(prompt);
    const auto resp = vocab_.encode(response);
    Trajectory t = score_ids(p, resp, top_k);
    t.prompt = prompt;
    return t;
  }

  // Teacher-forced scoring of response ids.
  Trajectory score_ids(std::span<const int> prompt_ids, std::span<const int> response_ids, int top_k) const {
    if (prompt_ids.empty()) throw DataError("empty prompt");
    std::vector<int> seq(prompt_ids.begin(), prompt_ids.end());
    seq.insert(seq.end(), response_ids.begin(), response_ids.end());
    const Matrix logits = model_->forward(seq);
    Trajectory t;
    t.decode_mode = DecodeMode::scored;
    t.finished = true;
    for (std::size_t i = 0; i < response_ids.size(); ++i) {
      const auto lp = log_softmax_row(logits.row(prompt_ids.size() - 1 + i));
      const int id = response_ids[i];
      t.token_ids.push_back(id);
      t.token_texts.push_back(vocab_.text_of(id));
      t.chosen_logprob.push_back(lp[id]);
      t.topk.push_back(detail::rank_topk(lp, vocab_, top_k));
    }
    return t;
  }

  std::optional<std::vector<std::vector<double>>> full_distributions(const std::string& prompt,
                                                                     std::span<const int> response_ids) override {
    const auto p = vocab_.encode(prompt);
    if (p.empty()) throw DataError("empty prompt");
    std::vector<int> seq = p;
    seq.insert(seq.end(), response_ids.begin(), response_ids.end());
    const Matrix logits = model_->forward(seq);
    std::vector<std::vector<double>> out;
    for (std::size_t i = 0; i < response_ids.size(); ++i) out.push_back(softmax_row(logits.row(p.size() - 1 + i)));
    return out;
  }

  std::vector<double> attention_scores(const std::string& prompt, std::span<const int> response_ids) override {
    std::vector<int> seq = vocab_.encode(prompt);
    const std::size_t offset = seq.size();
    seq.insert(seq.end(), response_ids.begin(), response_ids.end());
    const auto all = model_->attention_received(seq);
    return {all.begin() + static_cast<std::ptrdiff_t>(offset), all.end()};
  }

 private:
  std::vector<int> prefix_ids(const DecodeRequest& r) const {
    if (r.max_new_tokens < 1) throw UsageError("max_new_tokens must be >= 1");
    auto seq = vocab_.encode(r.prompt);
    if (seq.empty()) throw DataError("request " + r.key + ": empty prompt");
    seq.insert(seq.end(), r.forced_ids.begin(), r.forced_ids.end());
    if (seq.size() > static_cast<std::size_t>(model_->config().context_len)) {
      throw DataError("request " + r.key + ": prompt of " + std::to_string(seq.size()) +
                      " tokens exceeds context length " + std::to_string(model_->config().context_len));
    }
    return seq;
  }

  // Continues from a cache holding the prompt and forced prefix; `logits`
  // holds the next-token logits. Generated tokens are appended to the cache.
  Trajectory generate(const DecodeRequest& r, KvCache& cache, std::vector<double> logits) const {
    return run_loop(r, std::move(logits), [&](std::vector<double>& out, int next) {
      model_->step(cache, next, out.data());
    });
  }

  // `advance(logits, token)` feeds `token` and leaves the next-token logits
  // in `logits`.
  template <class Advance>
  Trajectory run_loop(const DecodeRequest& r, std::vector<double> logits, Advance&& advance) const {
    Trajectory t;
    t.sample_id = r.sample_id;
    t.prompt = r.prompt;
    t.prefix_ids = r.forced_ids;
    t.prefix_texts = r.forced_texts;
    if (t.prefix_texts.empty()) {
      for (int id : r.forced_ids) t.prefix_texts.push_back(vocab_.text_of(id));
    }
    t.decode_mode = r.sampling ? DecodeMode::sampled : DecodeMode::greedy;
    std::string text = t.response_text();
    if (!r.forced_ids.empty() && r.forced_ids.back() == Vocab::eot_id) {
      t.finished = true;
      return t;
    }
    std::optional<Rng> rng;
    if (r.sampling) {
      if (!(r.sampling->temperature > 0.0)) throw UsageError("sampling temperature must be > 0");
      rng.emplace(r.sampling->seed);
    }
    const int context = model_->config().context_len;
    int length = static_cast<int>(vocab_.encode(r.prompt).size() + r.forced_ids.size());
    for (int n = 0; n < r.max_new_tokens && length < context; ++n) {
      const auto lp = log_softmax_row(logits);
      const int id = rng ? detail::sample_index(logits, r.sampling->temperature, *rng) : detail::argmax_lowest(lp);
      const std::string& piece = vocab_.text_of(id);
      if (id == Vocab::eot_id || answer_complete(text, piece)) {
        t.finished = true;
        break;
      }
      t.token_ids.push_back(id);
      t.token_texts.push_back(piece);
      t.chosen_logprob.push_back(lp[id]);
      if (r.top_k > 0) t.topk.push_back(detail::rank_topk(lp, vocab_, r.top_k));
      text += piece;
      ++length;
      if (n + 1 == r.max_new_tokens || length >= context) break;
      advance(logits, id);
    }
    return t;
  }

  std::shared_ptr<const Model> model_;
  Vocab vocab_;
  std::string tag_;
  int max_topk_;
};

}  // namespace cft
