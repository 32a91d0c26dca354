#pragma once

// Command-line driver. Every subcommand writes its outputs plus a
// manifest.json into --output; failures add error.json and mark the
// manifest as failed. Settings resolve as flag > config file > default.

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>

#include "CLI11.hpp"
#include "cft/annotate.hpp"
#include "cft/core.hpp"
#include "cft/evalx.hpp"
#include "cft/generator/remote_backend.hpp"
#include "cft/generator/toy_backend.hpp"
#include "cft/select.hpp"
#include "cft/tinylm/checkpoint.hpp"
#include "cft/tinylm/synth.hpp"
#include "cft/tinylm/train.hpp"

namespace cft::cli {

namespace fs = std::filesystem;

struct Settings {
  // shared
  std::string config_path;
  std::string input;
  std::string output = ".";
  std::string backend = "toy";
  std::string model;
  std::string base;
  std::string endpoint;
  std::string remote_model = "default";
  std::string api_key_env = "CFT_API_KEY";
  int remote_max_topk = 5;
  std::optional<int> remote_eot_id;
  RunConfig run;
  bool sequential = false;
  // synth
  int n = 0;
  std::string id_prefix = "syn";
  int min_steps = 2;
  int max_steps = 3;
  // train-toy
  std::string masked;
  std::string init;
  std::string objective = "sft";
  int steps = 1500;
  double lr = 3e-3;
  int batch_size = 16;
  double warmup_ratio = 0.03;
  double clip_norm = 1.0;
  int embed_dim = 32;
  int layers = 2;
  int heads = 2;
  int context = 64;
  // grad-check
  double tolerance = 1e-5;
};

class Session {
 public:
  Session(std::string command, std::vector<std::string> argv, Settings s)
      : command_(std::move(command)), argv_(std::move(argv)), s_(std::move(s)) {}

  const Settings& settings() const { return s_; }

  fs::path out(const std::string& name) {
    outputs_.push_back(name);
    return fs::path(s_.output) / name;
  }

  void prepare_output() {
    std::error_code ec;
    fs::create_directories(s_.output, ec);
    const fs::path probe = fs::path(s_.output) / ".write-probe";
    std::ofstream f(probe);
    if (!f) throw UsageError("output directory " + s_.output + " is not writable");
    f.close();
    fs::remove(probe, ec);
  }

  void write_manifest(const std::string& status) const {
    json m;
    m["tool"] = "cft";
    m["version"] = version;
    m["command"] = command_;
    m["argv"] = argv_;
    m["status"] = status;
    json cfg = config_to_json(s_.run);
    cfg["input"] = s_.input;
    cfg["backend"] = s_.backend;
    if (!s_.model.empty()) cfg["model"] = s_.model;
    if (!s_.base.empty()) cfg["base"] = s_.base;
    if (!s_.endpoint.empty()) cfg["endpoint"] = s_.endpoint;
    if (!s_.config_path.empty()) cfg["config_file"] = s_.config_path;
    cfg["sequential"] = s_.sequential;
    for (const auto& [k, v] : extra_) cfg[k] = v;
    m["config"] = std::move(cfg);
    m["seed"] = s_.run.seed;
    m["outputs"] = outputs_;
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    char stamp[32];
    std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
    m["created_at"] = stamp;
    std::ofstream f(fs::path(s_.output) / "manifest.json");
    f << m.dump(2) << '\n';
  }

  void note(const std::string& key, json value) { extra_[key] = std::move(value); }

 private:
  std::string command_;
  std::vector<std::string> argv_;
  Settings s_;
  std::vector<std::string> outputs_;
  std::map<std::string, json> extra_;
};

namespace detail {

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write " + path.string());
  f << text;
}

inline void write_lines(const fs::path& path, const std::vector<std::string>& lines) {
  std::string text;
  for (const auto& l : lines) text += l + '\n';
  write_text(path, text);
}

inline void require_input(const Settings& s) {
  if (s.input.empty()) throw UsageError("--input is required");
}

inline std::unique_ptr<Backend> open_backend(const Settings& s, const std::string& checkpoint) {
  if (s.backend == "toy") {
    if (checkpoint.empty()) throw UsageError("the toy backend needs --model <checkpoint>");
    return std::make_unique<ToyBackend>(load_checkpoint(checkpoint), "toy:" + fs::path(checkpoint).filename().string(),
                                        std::max(8, s.run.k + 1));
  }
  if (s.backend == "remote") {
    if (s.endpoint.empty()) throw UsageError("the remote backend needs --endpoint");
    RemoteOptions o;
    o.endpoint = s.endpoint;
    o.model = s.remote_model;
    o.api_key_env = s.api_key_env;
    o.max_topk = s.remote_max_topk;
    o.eot_id = s.remote_eot_id;
    o.tag = "remote:" + s.remote_model;
    return std::make_unique<RemoteBackend>(o);
  }
  throw UsageError("unknown backend \"" + s.backend + "\" (expected toy or remote)");
}

inline std::vector<TrainExample> examples_from_corpus(const std::vector<Sample>& samples, const Vocab& vocab) {
  std::vector<TrainExample> out;
  for (const auto& s : samples) {
    if (!s.reference_solution) throw DataError("sample " + s.id + " has no solution to train on");
    TrainExample e;
    e.prompt_ids = vocab.encode(prompt_for(s));
    e.response_ids = vocab.encode(*s.reference_solution);
    e.response_ids.push_back(Vocab::eot_id);
    e.weights.assign(e.response_ids.size(), 1.0);
    out.push_back(std::move(e));
  }
  return out;
}

inline std::vector<TrainExample> examples_from_masked(const std::vector<MaskedExample>& records, const Vocab& vocab) {
  std::vector<TrainExample> out;
  for (const auto& r : records) {
    for (int id : r.token_ids) {
      if (id < 0 || id >= vocab.size()) {
        throw DataError("record " + r.sample_id + " uses token id " + std::to_string(id) +
                        " outside the model vocabulary");
      }
    }
    TrainExample e;
    e.prompt_ids = vocab.encode(r.question + "\n");
    e.response_ids = r.token_ids;
    e.weights = r.weights;
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace detail

inline int cmd_synth(Session& ses) {
  const auto& s = ses.settings();
  if (s.n < 1) throw UsageError("--n must be >= 1");
  SynthOptions o;
  o.id_prefix = s.id_prefix;
  o.min_steps = s.min_steps;
  o.max_steps = s.max_steps;
  if (o.min_steps < 1 || o.max_steps < o.min_steps) throw UsageError("need 1 <= min-steps <= max-steps");
  ses.note("n", s.n);
  ses.note("id_prefix", s.id_prefix);
  ses.note("min_steps", s.min_steps);
  ses.note("max_steps", s.max_steps);
  write_samples(synth_corpus(s.run.seed, static_cast<std::size_t>(s.n), o), ses.out("corpus.jsonl").string());
  return 0;
}

inline int cmd_train(Session& ses, std::ostream& log) {
  const auto& s = ses.settings();
  const Objective objective = parse_objective(s.objective);
  std::vector<TrainExample> examples;
  std::optional<ToyCheckpoint> ck;
  if (!s.init.empty()) ck = load_checkpoint(s.init);
  if (!s.masked.empty()) {
    if (!ck) throw UsageError("--masked training needs --init <checkpoint> for its vocabulary");
    examples = detail::examples_from_masked(read_masked_dataset(s.masked), ck->vocab);
  } else {
    detail::require_input(s);
    if (objective == Objective::cft) throw UsageError("the cft objective needs --masked <dataset>");
    const auto samples = load_samples(s.input);
    if (!ck) {
      std::vector<std::string> texts;
      for (const auto& x : samples) {
        texts.push_back(prompt_for(x));
        if (x.reference_solution) texts.push_back(*x.reference_solution);
      }
      Vocab vocab = Vocab::build(texts);
      ModelConfig mc;
      mc.vocab_size = vocab.size();
      mc.embed_dim = s.embed_dim;
      mc.n_layers = s.layers;
      mc.n_heads = s.heads;
      mc.context_len = s.context;
      mc.seed = s.run.seed;
      ck = ToyCheckpoint{Model(mc), std::move(vocab)};
    }
    examples = detail::examples_from_corpus(samples, ck->vocab);
  }
  TrainOptions t;
  t.objective = objective;
  t.steps = s.steps;
  t.batch_size = s.batch_size;
  t.adam.learning_rate = s.lr;
  t.adam.warmup_ratio = s.warmup_ratio;
  t.adam.clip_norm = s.clip_norm;
  t.seed = s.run.seed;
  for (const auto& [k, v] : std::map<std::string, json>{{"objective", s.objective},
                                                        {"steps", s.steps},
                                                        {"lr", s.lr},
                                                        {"batch_size", s.batch_size},
                                                        {"warmup_ratio", s.warmup_ratio},
                                                        {"clip_norm", s.clip_norm},
                                                        {"init", s.init},
                                                        {"masked", s.masked},
                                                        {"model_config", model_config_to_json(ck->model.config())}}) {
    ses.note(k, v);
  }
  const auto curve = train_model(ck->model, examples, t);
  std::string lines;
  for (const auto& c : curve) {
    json j;
    j["step"] = c.step;
    j["loss"] = c.loss;
    j["lr"] = c.lr;
    lines += j.dump() + '\n';
  }
  detail::write_text(ses.out("loss_curve.jsonl"), lines);
  save_checkpoint(ses.out("model.ckpt").string(), ck->model, ck->vocab);
  log << "trained " << curve.size() << " steps, final loss " << curve.back().loss << '\n';
  return 0;
}

inline int cmd_annotate(Session& ses, std::ostream& log) {
  const auto& s = ses.settings();
  detail::require_input(s);
  const auto samples = load_samples(s.input);
  auto backend = detail::open_backend(s, s.model);
  CriticalityPolicy policy{s.run.policy, s.run.k};
  AnnotateOptions opt;
  opt.sequential = s.sequential;
  auto res = annotate_dataset(samples, *backend, policy, s.run, opt);
  write_masked_dataset(res.records, ses.out("dataset.jsonl").string());
  detail::write_text(ses.out("stats.json"), stats_to_json(res.stats).dump(2) + '\n');
  detail::write_lines(ses.out("annotate_log.txt"), res.log);
  log << res.records.size() << " masked examples from " << samples.size() << " samples, critical ratio "
      << res.stats.critical_ratio << '\n';
  return 0;
}

inline int cmd_eval_pass(Session& ses, std::ostream& log) {
  const auto& s = ses.settings();
  detail::require_input(s);
  if (s.n < 1) throw UsageError("--n must be >= 1");
  const auto samples = load_samples(s.input);
  auto backend = detail::open_backend(s, s.model);
  PassOptions o;
  o.temperature = s.run.sampling_temperature;
  o.max_new_tokens = s.run.max_new_tokens;
  o.parallelism = s.run.parallelism;
  ses.note("n", s.n);
  std::vector<std::string> errors;
  const auto rows = collect_pass_data(samples, *backend, s.n, s.run.seed, o, &errors);
  const auto report = pass_at_n(rows, s.n);
  detail::write_text(ses.out("pass_report.json"), pass_report_to_json(report).dump(2) + '\n');
  if (!errors.empty()) detail::write_lines(ses.out("eval_log.txt"), errors);
  for (const auto& [n, v] : report.pass_at) log << "pass@" << n << " " << v << '\n';
  return 0;
}

inline int cmd_transfer(Session& ses, std::ostream& log) {
  const auto& s = ses.settings();
  detail::require_input(s);
  if (s.base.empty()) throw UsageError("transfer-score needs --base <checkpoint>");
  const auto samples = load_samples(s.input);
  auto cft_backend = detail::open_backend(s, s.model);
  Settings bs = s;
  bs.backend = "toy";
  auto base_backend = detail::open_backend(bs, s.base);
  const double fraction = s.run.transfer_fraction;
  char tag[32];
  std::snprintf(tag, sizeof tag, "transfer@%g", fraction);
  ses.note("fraction", fraction);
  std::vector<MaskedExample> records;
  std::string scores;
  for (const auto& x : samples) {
    if (!x.reference_solution) throw DataError("sample " + x.id + " has no response to score");
    auto v = transfer_scores(prompt_for(x), *x.reference_solution, *cft_backend, *base_backend);
    v.sample_id = x.id;
    const Trajectory scored = force_score(*base_backend, prompt_for(x), *x.reference_solution, 1);
    json j;
    j["sample_id"] = x.id;
    j["scores"] = v.scores;
    scores += j.dump() + '\n';
    MaskedExample r;
    r.sample_id = x.id;
    r.question = x.question;
    r.token_texts = scored.token_texts;
    r.token_ids = scored.token_ids;
    r.weights = top_fraction_mask(v, fraction);
    r.policy = tag;
    r.backend_tag = base_backend->descriptor().tag;
    if (std::any_of(r.weights.begin(), r.weights.end(), [](double w) { return w > 0.0; })) {
      records.push_back(std::move(r));
    }
  }
  detail::write_text(ses.out("transfer_scores.jsonl"), scores);
  write_masked_dataset(records, ses.out("dataset.jsonl").string());
  log << records.size() << " scored records\n";
  return 0;
}

inline int cmd_stats(Session& ses, std::ostream& log) {
  const auto& s = ses.settings();
  detail::require_input(s);
  const auto records = read_masked_dataset(s.input);
  auto backend = detail::open_backend(s, s.model);
  std::vector<Trajectory> trajectories;
  std::vector<std::vector<double>> masks;
  for (const auto& r : records) {
    std::string text;
    for (const auto& t : r.token_texts) text += t;
    Trajectory t = force_score(*backend, r.question + "\n", text, std::max(2, s.run.k));
    if (t.token_ids != r.token_ids) {
      throw DataError("record " + r.sample_id + ": backend tokenization differs from the dataset's token ids");
    }
    t.sample_id = r.sample_id;
    trajectories.push_back(std::move(t));
    masks.push_back(r.weights);
  }
  const auto report = token_stats(trajectories, masks, *backend);
  detail::write_text(ses.out("token_stats.json"), token_stats_to_json(report).dump(2) + '\n');
  const std::string table = token_stats_table(report);
  detail::write_text(ses.out("token_stats.txt"), table);
  log << table;
  return 0;
}

inline int cmd_grad_check(Session& ses, std::ostream& log) {
  const auto& s = ses.settings();
  const Objective objective = parse_objective(s.objective);
  std::vector<Sample> samples = s.input.empty() ? synth_corpus(s.run.seed, 2) : load_samples(s.input);
  if (samples.size() > 2) samples.resize(2);
  std::optional<ToyCheckpoint> ck;
  if (!s.model.empty()) {
    ck = load_checkpoint(s.model);
  } else {
    std::vector<std::string> texts;
    for (const auto& x : samples) {
      texts.push_back(prompt_for(x));
      if (x.reference_solution) texts.push_back(*x.reference_solution);
    }
    Vocab vocab = Vocab::build(texts);
    ModelConfig mc;
    mc.vocab_size = vocab.size();
    mc.embed_dim = 16;
    mc.n_layers = 2;
    mc.n_heads = 2;
    mc.context_len = 48;
    mc.seed = s.run.seed;
    ck = ToyCheckpoint{Model(mc), std::move(vocab)};
  }
  auto examples = detail::examples_from_corpus(samples, ck->vocab);
  if (objective == Objective::cft) {
    Rng rng(derive_seed(s.run.seed, "grad-check", 0));
    for (auto& e : examples) {
      for (auto& w : e.weights) w = rng.uniform() < 0.5 ? 0.0 : 1.0;
      e.weights.front() = 1.0;
    }
  }
  GradCheckOptions o;
  o.seed = s.run.seed;
  const auto report = grad_check(ck->model, make_train_batch(examples), objective, o);
  json j;
  j["objective"] = s.objective;
  j["max_relative_error"] = report.max_relative_error;
  j["worst_parameter_name"] = report.worst_parameter_name;
  j["num_checked"] = report.num_checked;
  j["num_params"] = ck->model.num_params();
  j["tolerance"] = s.tolerance;
  j["passed"] = report.max_relative_error <= s.tolerance;
  ses.note("objective", s.objective);
  ses.note("tolerance", s.tolerance);
  detail::write_text(ses.out("grad_report.json"), j.dump(2) + '\n');
  log << "max relative error " << report.max_relative_error << " at " << report.worst_parameter_name << " ("
      << report.num_checked << " parameters)\n";
  return report.max_relative_error <= s.tolerance ? 0 : exit_code_for(ErrorKind::data);
}

inline void write_error(const Settings& s, const std::string& kind, const std::string& message, int code,
                        std::ostream& err) {
  json e;
  e["error"] = kind;
  e["message"] = message;
  e["exit_code"] = code;
  err << e.dump() << '\n';
  std::error_code ec;
  if (fs::is_directory(s.output, ec)) {
    std::ofstream f(fs::path(s.output) / "error.json");
    f << e.dump(2) << '\n';
  }
}

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Critical-token annotation, training and evaluation toolkit", "cft"};
  app.require_subcommand(1, 1);
  app.set_version_flag("--version", version);
  Settings s;
  std::map<std::string, CLI::Option*> given;  // "<subcommand>/<key>"

  auto common = [&](CLI::App* sub) {
    given[sub->get_name() + "/config"] = sub->add_option("--config", s.config_path, "key = value config file");
    given[sub->get_name() + "/input"] = sub->add_option("--input", s.input, "input file");
    given[sub->get_name() + "/output"] = sub->add_option("--output", s.output, "output directory");
    given[sub->get_name() + "/seed"] = sub->add_option("--seed", s.run.seed, "random seed");
  };
  auto backend_opts = [&](CLI::App* sub) {
    given[sub->get_name() + "/backend"] = sub->add_option("--backend", s.backend, "toy or remote")->check(CLI::IsMember({"toy", "remote"}));
    given[sub->get_name() + "/model"] = sub->add_option("--model", s.model, "toy checkpoint");
    given[sub->get_name() + "/endpoint"] = sub->add_option("--endpoint", s.endpoint, "remote completion service URL");
    given[sub->get_name() + "/parallelism"] = sub->add_option("--parallelism", s.run.parallelism, "concurrent requests");
    given[sub->get_name() + "/max_new_tokens"] = sub->add_option("--max-new-tokens", s.run.max_new_tokens, "decoding length cap");
  };

  auto* synth = app.add_subcommand("synth", "write a synthetic arithmetic corpus");
  common(synth);
  given[synth->get_name() + "/n"] = synth->add_option("--n", s.n, "number of samples");
  given[synth->get_name() + "/id_prefix"] = synth->add_option("--prefix", s.id_prefix, "sample id prefix");
  given[synth->get_name() + "/min_steps"] = synth->add_option("--min-steps", s.min_steps);
  given[synth->get_name() + "/max_steps"] = synth->add_option("--max-steps", s.max_steps);

  auto* train = app.add_subcommand("train-toy", "train or fine-tune the toy model");
  common(train);
  given[train->get_name() + "/masked"] = train->add_option("--masked", s.masked, "masked dataset to fine-tune on");
  given[train->get_name() + "/init"] = train->add_option("--init", s.init, "checkpoint to start from");
  given[train->get_name() + "/objective"] = train->add_option("--objective", s.objective, "sft, cft or dft");
  given[train->get_name() + "/steps"] = train->add_option("--steps", s.steps);
  given[train->get_name() + "/lr"] = train->add_option("--lr", s.lr);
  given[train->get_name() + "/batch_size"] = train->add_option("--batch-size", s.batch_size);
  given[train->get_name() + "/warmup_ratio"] = train->add_option("--warmup-ratio", s.warmup_ratio);
  given[train->get_name() + "/clip_norm"] = train->add_option("--clip-norm", s.clip_norm);
  given[train->get_name() + "/embed_dim"] = train->add_option("--embed-dim", s.embed_dim);
  given[train->get_name() + "/layers"] = train->add_option("--layers", s.layers);
  given[train->get_name() + "/heads"] = train->add_option("--heads", s.heads);
  given[train->get_name() + "/context"] = train->add_option("--context", s.context);

  auto* annotate = app.add_subcommand("annotate", "mark critical tokens in greedy-correct responses");
  common(annotate);
  backend_opts(annotate);
  std::string policy_name;
  given[annotate->get_name() + "/policy"] = annotate->add_option("--policy", policy_name, "strict2, strict3, union3 or graded3");
  given[annotate->get_name() + "/k"] = annotate->add_option("--k", s.run.k, "alternatives considered per position");
  given[annotate->get_name() + "/sequential"] = annotate->add_flag("--sequential", s.sequential, "use the unbatched reference annotator");

  auto* eval = app.add_subcommand("eval-pass", "Pass@N over seeded samples");
  common(eval);
  backend_opts(eval);
  given[eval->get_name() + "/n"] = eval->add_option("--n", s.n, "samples per question");
  given[eval->get_name() + "/temperature"] = eval->add_option("--temperature", s.run.sampling_temperature);

  auto* transfer = app.add_subcommand("transfer-score", "mask offline responses by the fine-tuned/base probability gap");
  common(transfer);
  backend_opts(transfer);
  given[transfer->get_name() + "/base"] = transfer->add_option("--base", s.base, "base model checkpoint");
  given[transfer->get_name() + "/fraction"] = transfer->add_option("--fraction", s.run.transfer_fraction);

  auto* stats = app.add_subcommand("stats", "token statistics of a masked dataset");
  common(stats);
  backend_opts(stats);

  auto* grad = app.add_subcommand("grad-check", "finite-difference check of the toy model gradient");
  common(grad);
  given[grad->get_name() + "/model"] = grad->add_option("--model", s.model, "checkpoint to check (default: fresh small model)");
  given[grad->get_name() + "/objective"] = grad->add_option("--objective", s.objective);
  given[grad->get_name() + "/tolerance"] = grad->add_option("--tolerance", s.tolerance);

  std::vector<std::string> args(argv + 1, argv + argc);
  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForVersion&) {
    out << version << '\n';
    return 0;
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();
      return 0;
    }
    err << json({{"error", "usage"}, {"message", e.what()}, {"exit_code", 2}}).dump() << '\n';
    return exit_code_for(ErrorKind::usage);
  }
  const CLI::App* sub = app.get_subcommands().front();
  const std::string command = sub->get_name();
  auto was_given = [&](const std::string& key) {
    auto it = given.find(command + "/" + key);
    return it != given.end() && it->second->count() > 0;
  };

  std::unique_ptr<Session> ses;
  try {
    if (!s.config_path.empty()) {
      // Config values only fill settings the flags left alone.
      RunConfig from_file;
      auto rest = apply_config(from_file, load_config_file(s.config_path));
      const auto raw = load_config_file(s.config_path);
      auto take_run = [&](const char* key, auto RunConfig::*field) {
        if (raw.count(key) && !was_given(key)) s.run.*field = from_file.*field;
      };
      take_run("k", &RunConfig::k);
      take_run("parallelism", &RunConfig::parallelism);
      take_run("seed", &RunConfig::seed);
      take_run("max_new_tokens", &RunConfig::max_new_tokens);
      if (raw.count("policy") && !was_given("policy")) s.run.policy = from_file.policy;
      if ((raw.count("temperature") || raw.count("sampling_temperature")) && !was_given("temperature")) {
        s.run.sampling_temperature = from_file.sampling_temperature;
      }
      if ((raw.count("fraction") || raw.count("transfer_fraction")) && !was_given("fraction")) {
        s.run.transfer_fraction = from_file.transfer_fraction;
      }
      if (raw.count("max_continuation_tokens")) s.run.max_continuation_tokens = from_file.max_continuation_tokens;
      if (raw.count("sampling_max_attempts")) s.run.sampling_max_attempts = from_file.sampling_max_attempts;
      if (raw.count("sample_fallback")) s.run.sample_fallback = from_file.sample_fallback;
      auto num = [](const std::string& key, const std::string& v) {
        try {
          std::size_t pos = 0;
          double x = std::stod(v, &pos);
          if (pos != v.size()) throw std::invalid_argument(v);
          return x;
        } catch (const std::exception&) {
          throw UsageError("config key " + key + ": expected a number, got \"" + v + "\"");
        }
      };
      for (const auto& [key, v] : rest) {
        if (was_given(key)) continue;
        if (key == "input") s.input = v;
        else if (key == "output") s.output = v;
        else if (key == "backend") s.backend = v;
        else if (key == "model") s.model = v;
        else if (key == "base") s.base = v;
        else if (key == "endpoint") s.endpoint = v;
        else if (key == "remote_model") s.remote_model = v;
        else if (key == "api_key_env") s.api_key_env = v;
        else if (key == "remote_max_topk") s.remote_max_topk = static_cast<int>(num(key, v));
        else if (key == "remote_eot_id") s.remote_eot_id = static_cast<int>(num(key, v));
        else if (key == "n") s.n = static_cast<int>(num(key, v));
        else if (key == "id_prefix") s.id_prefix = v;
        else if (key == "min_steps") s.min_steps = static_cast<int>(num(key, v));
        else if (key == "max_steps") s.max_steps = static_cast<int>(num(key, v));
        else if (key == "masked") s.masked = v;
        else if (key == "init") s.init = v;
        else if (key == "objective") s.objective = v;
        else if (key == "steps") s.steps = static_cast<int>(num(key, v));
        else if (key == "lr") s.lr = num(key, v);
        else if (key == "batch_size") s.batch_size = static_cast<int>(num(key, v));
        else if (key == "warmup_ratio") s.warmup_ratio = num(key, v);
        else if (key == "clip_norm") s.clip_norm = num(key, v);
        else if (key == "embed_dim") s.embed_dim = static_cast<int>(num(key, v));
        else if (key == "layers") s.layers = static_cast<int>(num(key, v));
        else if (key == "heads") s.heads = static_cast<int>(num(key, v));
        else if (key == "context") s.context = static_cast<int>(num(key, v));
        else if (key == "tolerance") s.tolerance = num(key, v);
        else throw UsageError("unknown config key \"" + key + "\"");
      }
    }
    if (was_given("policy")) s.run.policy = parse_policy(policy_name);
    if (command == "annotate" && !was_given("k") && s.run.k < min_k_for(s.run.policy)) s.run.k = min_k_for(s.run.policy);
    s.run.validate();
    ses = std::make_unique<Session>(command, args, s);
    ses->prepare_output();
    int code = 0;
    if (command == "synth") code = cmd_synth(*ses);
    else if (command == "train-toy") code = cmd_train(*ses, out);
    else if (command == "annotate") code = cmd_annotate(*ses, out);
    else if (command == "eval-pass") code = cmd_eval_pass(*ses, out);
    else if (command == "transfer-score") code = cmd_transfer(*ses, out);
    else if (command == "stats") code = cmd_stats(*ses, out);
    else if (command == "grad-check") code = cmd_grad_check(*ses, out);
    ses->write_manifest(code == 0 ? "complete" : "failed");
    return code;
  } catch (const Error& e) {
    const int code = exit_code_for(e.kind());
    write_error(s, to_string(e.kind()), e.what(), code, err);
    if (ses) ses->write_manifest("failed");
    return code;
  } catch (const std::exception& e) {
    const int code = exit_code_for(ErrorKind::data);
    write_error(s, "data", e.what(), code, err);
    if (ses) ses->write_manifest("failed");
    return code;
  }
}

}  // namespace cft::cli
