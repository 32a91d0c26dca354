#pragma once

// Client for a completion service speaking an OpenAI-style wire format.
//
// Request (POST, JSON):
//   {"model", "prompt", "max_tokens", "temperature", "top_logprobs", "echo", "seed"?}
// Response:
//   {"choices": [{"text", "finish_reason": "stop" | "length",
//                 "logprobs": {"tokens": [..], "token_ids": [..], "token_logprobs": [..],
//                              "top_logprobs": [[{"token", "id", "logprob"}, ..], ..],
//                              "text_offset": [..]}}]}
// With echo set, the arrays start with the prompt tokens (the first prompt
// token has a null logprob) and text_offset locates each token in
// prompt + completion.

#include <cstdlib>
#include <optional>
#include <string>

#include "cft/generator/backend.hpp"

#ifndef CPPHTTPLIB_HTTPLIB_H
#include "httplib.h"
#endif

namespace cft {

struct RemoteOptions {
  std::string endpoint = "http://127.0.0.1:8000";
  std::string path = "/v1/completions";
  std::string model = "default";
  std::string api_key_env = "CFT_API_KEY";
  std::string tag = "remote";
  int max_topk = 5;
  bool supports_force_score = true;
  int max_context = 4096;
  int timeout_seconds = 120;
  // The service's end-of-text id; a forced prefix ending in it is finished.
  std::optional<int> eot_id;
};

namespace detail {

struct WireChoice {
  std::string finish_reason;
  std::vector<std::string> tokens;
  std::vector<int> ids;
  std::vector<std::optional<double>> logprobs;
  std::vector<std::vector<TopEntry>> top;
  std::vector<std::size_t> offsets;
};

inline WireChoice parse_wire_choice(const std::string& body) {
  WireChoice c;
  try {
    const json j = json::parse(body);
    const json& choice = j.at("choices").at(0);
    c.finish_reason = choice.value("finish_reason", "");
    const json& lp = choice.at("logprobs");
    c.tokens = lp.at("tokens").get<std::vector<std::string>>();
    c.ids = lp.at("token_ids").get<std::vector<int>>();
    for (const auto& v : lp.at("token_logprobs")) {
      c.logprobs.push_back(v.is_null() ? std::nullopt : std::optional<double>(v.get<double>()));
    }
    for (const auto& row : lp.at("top_logprobs")) {
      std::vector<TopEntry> entries;
      if (!row.is_null()) {
        for (const auto& e : row) {
          entries.push_back({e.at("token").get<std::string>(), e.at("id").get<int>(), e.at("logprob").get<double>()});
        }
      }
      std::sort(entries.begin(), entries.end(), ranks_before);
      c.top.push_back(std::move(entries));
    }
    if (lp.contains("text_offset")) c.offsets = lp.at("text_offset").get<std::vector<std::size_t>>();
  } catch (const json::exception& e) {
    throw BackendError(std::string("malformed completion response: ") + e.what());
  }
  const std::size_t n = c.tokens.size();
  if (c.ids.size() != n || c.logprobs.size() != n || c.top.size() != n ||
      (!c.offsets.empty() && c.offsets.size() != n)) {
    throw BackendError("malformed completion response: per-token arrays differ in length");
  }
  return c;
}

}  // namespace detail

class RemoteBackend : public Backend {
 public:
  explicit RemoteBackend(RemoteOptions opt) : opt_(std::move(opt)) {
    if (opt_.endpoint.empty()) throw UsageError("remote backend needs an endpoint URL");
    if (const char* key = std::getenv(opt_.api_key_env.c_str())) token_ = key;
  }

  BackendDescriptor descriptor() const override {
    return {opt_.tag, opt_.max_topk, opt_.supports_force_score, false, opt_.max_context};
  }

  Trajectory decode(const DecodeRequest& r) override {
    if (r.max_new_tokens < 1) throw UsageError("max_new_tokens must be >= 1");
    if (r.forced_texts.size() != r.forced_ids.size()) {
      throw UsageError("request " + r.key + ": remote decoding needs the text of every forced token");
    }
    Trajectory t;
    t.sample_id = r.sample_id;
    t.prompt = r.prompt;
    t.prefix_ids = r.forced_ids;
    t.prefix_texts = r.forced_texts;
    t.decode_mode = r.sampling ? DecodeMode::sampled : DecodeMode::greedy;
    if (opt_.eot_id && !r.forced_ids.empty() && r.forced_ids.back() == *opt_.eot_id) {
      t.finished = true;
      return t;
    }
    json body;
    body["model"] = opt_.model;
    body["prompt"] = r.prompt + t.response_text();
    body["max_tokens"] = r.max_new_tokens;
    body["temperature"] = r.sampling ? r.sampling->temperature : 0.0;
    body["top_logprobs"] = std::max(r.top_k, 1);
    body["echo"] = false;
    if (r.sampling) body["seed"] = r.sampling->seed;
    const auto c = detail::parse_wire_choice(post(body));
    std::string text = t.response_text();
    bool stopped = false;
    for (std::size_t i = 0; i < c.tokens.size(); ++i) {
      if (answer_complete(text, c.tokens[i])) {
        stopped = true;
        break;
      }
      if (!c.logprobs[i]) throw BackendError("completion response lacks a logprob for token " + std::to_string(i));
      t.token_texts.push_back(c.tokens[i]);
      t.token_ids.push_back(c.ids[i]);
      t.chosen_logprob.push_back(*c.logprobs[i]);
      if (r.top_k > 0) {
        auto row = c.top[i];
        if (row.size() > static_cast<std::size_t>(r.top_k)) row.resize(static_cast<std::size_t>(r.top_k));
        t.topk.push_back(std::move(row));
      }
      text += c.tokens[i];
    }
    t.finished = stopped || c.finish_reason == "stop";
    return t;
  }

  Trajectory force_score(const std::string& prompt, const std::string& response, int top_k) override {
    if (!opt_.supports_force_score) throw CapabilityError("backend " + opt_.tag + " cannot force-score text");
    json body;
    body["model"] = opt_.model;
    body["prompt"] = prompt + response;
    body["max_tokens"] = 0;
    body["temperature"] = 0.0;
    body["top_logprobs"] = std::max(top_k, 1);
    body["echo"] = true;
    const auto c = detail::parse_wire_choice(post(body));
    if (c.offsets.empty()) throw BackendError("echo response lacks text offsets");
    Trajectory t;
    t.prompt = prompt;
    t.decode_mode = DecodeMode::scored;
    t.finished = true;
    for (std::size_t i = 0; i < c.tokens.size(); ++i) {
      if (c.offsets[i] < prompt.size()) continue;
      if (!c.logprobs[i]) throw BackendError("echo response lacks a logprob for response token " + std::to_string(i));
      t.token_texts.push_back(c.tokens[i]);
      t.token_ids.push_back(c.ids[i]);
      t.chosen_logprob.push_back(*c.logprobs[i]);
      auto row = c.top[i];
      if (row.size() > static_cast<std::size_t>(std::max(top_k, 0))) row.resize(static_cast<std::size_t>(std::max(top_k, 0)));
      t.topk.push_back(std::move(row));
    }
    return t;
  }

 private:
  std::string post(const json& body) const {
    httplib::Client client(opt_.endpoint);
    client.set_connection_timeout(opt_.timeout_seconds, 0);
    client.set_read_timeout(opt_.timeout_seconds, 0);
    httplib::Headers headers;
    if (!token_.empty()) headers.emplace("Authorization", "Bearer " + token_);
    auto res = client.Post(opt_.path, headers, body.dump(), "application/json");
    if (!res) throw BackendError("request to " + opt_.endpoint + " failed: " + httplib::to_string(res.error()), true);
    if (res->status == 429 || res->status >= 500) {
      throw BackendError("service returned HTTP " + std::to_string(res->status), true);
    }
    if (res->status != 200) {
      throw BackendError("service returned HTTP " + std::to_string(res->status) + ": " + res->body.substr(0, 200));
    }
    return res->body;
  }

  RemoteOptions opt_;
  std::string token_;
};

}  // namespace cft
