#include "shift/cli.hpp"

#include <atomic>
#include <cctype>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <memory>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "shift/corpus.hpp"
#include "shift/error.hpp"
#include "shift/eval.hpp"
#include "shift/model.hpp"
#include "shift/rng.hpp"
#include "shift/text_template.hpp"
#include "shift/tokenizer.hpp"
#include "shift/train.hpp"

namespace shift::cli {
namespace {

using nlohmann::json;

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorCode::io_error, "cannot open " + path);
  std::ostringstream body;
  body << in.rdbuf();
  return body.str();
}

void write_file(const std::string& path, const std::string& content) {
  std::filesystem::path p(path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(path, std::ios::binary);
  require(out.good(), ErrorCode::io_error, "cannot write " + path);
  out << content;
  require(out.good(), ErrorCode::io_error, "short write to " + path);
}

std::string file_hash_hex(const std::string& path) {
  std::string bytes = read_file(path);
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(hash64(bytes)));
  return buf;
}

/// Accepts "a..b" (inclusive range) or a comma list of non-negative integers.
std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
  auto parse_one = [&](const std::string& tok) -> std::uint64_t {
    std::size_t used = 0;
    std::uint64_t v = 0;
    try {
      v = std::stoull(tok, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    require(used == tok.size() && !tok.empty(), ErrorCode::invalid_argument,
            "bad seed '" + tok + "' in '" + text + "'");
    return v;
  };
  std::vector<std::uint64_t> seeds;
  std::size_t dots = text.find("..");
  if (dots != std::string::npos) {
    std::uint64_t lo = parse_one(text.substr(0, dots));
    std::uint64_t hi = parse_one(text.substr(dots + 2));
    require(lo <= hi, ErrorCode::invalid_argument, "empty seed range " + text);
    for (std::uint64_t s = lo; s <= hi; ++s) seeds.push_back(s);
    return seeds;
  }
  std::stringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, ',')) seeds.push_back(parse_one(tok));
  require(!seeds.empty(), ErrorCode::invalid_argument, "no seeds in '" + text + "'");
  return seeds;
}

std::vector<std::string> split_csv(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (!tok.empty()) out.push_back(tok);
  }
  require(!out.empty(), ErrorCode::invalid_argument, "no values in '" + text + "'");
  return out;
}

double parse_double(const std::string& tok) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(tok, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  require(used == tok.size() && !tok.empty(), ErrorCode::invalid_argument,
          "bad number '" + tok + "'");
  return v;
}

int parse_int(const std::string& tok) {
  std::size_t used = 0;
  long v = 0;
  try {
    v = std::stol(tok, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  require(used == tok.size() && !tok.empty(), ErrorCode::invalid_argument,
          "bad integer '" + tok + "'");
  return static_cast<int>(v);
}

/// Runs tasks on up to `jobs` threads; the first failure is rethrown after
/// every task finished (no cancellation, runs are independent).
void run_jobs(int jobs, std::vector<std::function<void()>>& tasks) {
  if (jobs <= 1 || tasks.size() <= 1) {
    for (auto& task : tasks) task();
    return;
  }
  std::atomic<std::size_t> next{0};
  std::mutex mu;
  std::exception_ptr first_error;
  auto worker = [&] {
    for (;;) {
      std::size_t k = next.fetch_add(1);
      if (k >= tasks.size()) return;
      try {
        tasks[k]();
      } catch (...) {
        std::lock_guard<std::mutex> lock(mu);
        if (!first_error) first_error = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  std::size_t n = std::min(static_cast<std::size_t>(jobs), tasks.size());
  pool.reserve(n);
  for (std::size_t i = 0; i < n; ++i) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
  if (first_error) std::rethrow_exception(first_error);
}

// ---- options shared between subcommands ----

struct PipeOpts {
  std::string data;
  int obs = 7;
  std::string variant = "A";
  double train_ratio = 0.7;
  double val_ratio = 0.15;
  double test_ratio = 0.15;
  std::uint64_t split_seed = 0;
  bool split_by_poi = false;
};

void add_pipe_opts(CLI::App* s, PipeOpts& p) {
  s->add_option("--data", p.data, "visits CSV")->required()->check(CLI::ExistingFile);
  s->add_option("--obs", p.obs, "observation window length")->capture_default_str();
  s->add_option("--variant", p.variant, "prompt variant")
      ->check(CLI::IsMember({"A", "B"}))
      ->capture_default_str();
  s->add_option("--train-ratio", p.train_ratio, "train share")->capture_default_str();
  s->add_option("--val-ratio", p.val_ratio, "validation share")->capture_default_str();
  s->add_option("--test-ratio", p.test_ratio, "test share")->capture_default_str();
  s->add_option("--split-seed", p.split_seed, "shuffle seed of the split")
      ->capture_default_str();
  s->add_flag("--split-by-poi", p.split_by_poi, "partition POIs, not windows");
}

json pipe_json(const PipeOpts& p) {
  json j;
  j["data"] = p.data;
  j["obs"] = p.obs;
  j["variant"] = p.variant;
  j["train-ratio"] = p.train_ratio;
  j["val-ratio"] = p.val_ratio;
  j["test-ratio"] = p.test_ratio;
  j["split-seed"] = p.split_seed;
  j["split-by-poi"] = p.split_by_poi;
  return j;
}

corpus::SplitSamples load_split(const PipeOpts& p) {
  corpus::PoiDataset ds = corpus::filter_complete(corpus::load_visits(p.data));
  if (p.split_by_poi) {
    return corpus::split_by_poi(ds, p.obs, p.train_ratio, p.val_ratio, p.test_ratio,
                                p.split_seed);
  }
  return corpus::split(corpus::windowize(ds, p.obs), p.train_ratio, p.val_ratio,
                       p.test_ratio, p.split_seed);
}

const std::vector<corpus::Sample>& pick_split(const corpus::SplitSamples& ss,
                                              const std::string& name) {
  if (name == "train") return ss.train;
  if (name == "val") return ss.val;
  return ss.test;
}

tok::Vocabulary vocab_from_train(const std::vector<corpus::Sample>& train,
                                 text::PromptVariant variant) {
  std::vector<std::string> texts;
  texts.reserve(train.size() * 2);
  for (const corpus::Sample& s : train) {
    texts.push_back(text::render_prompt(s, variant).text);
    texts.push_back(text::render_target(s).text);
  }
  return tok::build_vocab(texts);
}

struct ModelOpts {
  int d = 64;
  int n_layers = 2;
  int n_heads = 4;
  int ff_width = 256;
  double dropout = 0.2;
  int max_prompt_len = 128;
  int max_target_len = 24;
};

void add_model_opts(CLI::App* s, ModelOpts& m) {
  s->add_option("--d", m.d, "model width")->capture_default_str();
  s->add_option("--n-layers", m.n_layers, "encoder/decoder layers")->capture_default_str();
  s->add_option("--n-heads", m.n_heads, "attention heads")->capture_default_str();
  s->add_option("--ff-width", m.ff_width, "feed-forward width")->capture_default_str();
  s->add_option("--dropout", m.dropout, "dropout rate")->capture_default_str();
  s->add_option("--max-prompt-len", m.max_prompt_len, "prompt token budget")
      ->capture_default_str();
  s->add_option("--max-target-len", m.max_target_len, "generated token budget")
      ->capture_default_str();
}

json model_json(const ModelOpts& m) {
  json j;
  j["d"] = m.d;
  j["n-layers"] = m.n_layers;
  j["n-heads"] = m.n_heads;
  j["ff-width"] = m.ff_width;
  j["dropout"] = m.dropout;
  j["max-prompt-len"] = m.max_prompt_len;
  j["max-target-len"] = m.max_target_len;
  return j;
}

model::ModelConfig to_model_config(const ModelOpts& m, int obs, int vocab_size) {
  model::ModelConfig cfg;
  cfg.d = m.d;
  cfg.n_layers = m.n_layers;
  cfg.n_heads = m.n_heads;
  cfg.ff_width = m.ff_width;
  cfg.dropout = m.dropout;
  cfg.max_prompt_len = m.max_prompt_len;
  cfg.max_target_len = m.max_target_len;
  cfg.obs = obs;
  cfg.vocab_size = vocab_size;
  return cfg;
}

struct TrainOpts {
  std::string mode = "momentum";
  double alpha_loss = 0.01;
  double alpha_m = 0.001;
  int batch_size = 64;
  int epochs = 36;
  double lr = 1e-4;
  double decay_factor = 0.5;
  int decay_patience = 3;
  double grad_clip = 1.0;
  std::uint64_t seed = 0;
  int val_limit = 0;
};

void add_train_opts(CLI::App* s, TrainOpts& t, bool with_mode, bool with_seed) {
  if (with_mode) {
    s->add_option("--mode", t.mode, "encoder coupling")
        ->check(CLI::IsMember({"basic", "siamese", "momentum"}))
        ->capture_default_str();
  }
  s->add_option("--alpha-loss", t.alpha_loss, "numeric-loss weight")->capture_default_str();
  s->add_option("--alpha-m", t.alpha_m, "mirror averaging factor")->capture_default_str();
  s->add_option("--batch-size", t.batch_size)->capture_default_str();
  s->add_option("--epochs", t.epochs)->capture_default_str();
  s->add_option("--lr", t.lr, "learning rate")->capture_default_str();
  s->add_option("--decay-factor", t.decay_factor, "lr decay on plateau")
      ->capture_default_str();
  s->add_option("--decay-patience", t.decay_patience, "epochs without improvement")
      ->capture_default_str();
  s->add_option("--grad-clip", t.grad_clip, "global-norm ceiling, 0 disables")
      ->capture_default_str();
  if (with_seed) {
    s->add_option("--seed", t.seed, "run seed")
        ->envname("SHIFTCAST_SEED")
        ->capture_default_str();
  }
  s->add_option("--val-limit", t.val_limit, "validation sample cap, 0 = all")
      ->capture_default_str();
}

json train_json(const TrainOpts& t, bool with_mode, bool with_seed) {
  json j;
  if (with_mode) j["mode"] = t.mode;
  j["alpha-loss"] = t.alpha_loss;
  j["alpha-m"] = t.alpha_m;
  j["batch-size"] = t.batch_size;
  j["epochs"] = t.epochs;
  j["lr"] = t.lr;
  j["decay-factor"] = t.decay_factor;
  j["decay-patience"] = t.decay_patience;
  j["grad-clip"] = t.grad_clip;
  if (with_seed) j["seed"] = t.seed;
  j["val-limit"] = t.val_limit;
  return j;
}

train::TrainConfig to_train_config(const TrainOpts& t, const PipeOpts& p,
                                   const std::string& checkpoint_dir) {
  train::TrainConfig cfg;
  cfg.mode = model::mode_from_string(t.mode);
  cfg.alpha_loss = t.alpha_loss;
  cfg.alpha_m = t.alpha_m;
  cfg.batch_size = t.batch_size;
  cfg.epochs = t.epochs;
  cfg.lr = t.lr;
  cfg.decay.factor = t.decay_factor;
  cfg.decay.patience = t.decay_patience;
  cfg.grad_clip = t.grad_clip;
  cfg.seed = t.seed;
  cfg.checkpoint_dir = checkpoint_dir;
  cfg.val_limit = t.val_limit;
  cfg.variant = text::variant_from_string(p.variant);
  return cfg;
}

json make_manifest(const std::string& command, const json& config,
                   const std::vector<std::uint64_t>& seeds,
                   const std::vector<std::string>& input_paths) {
  json inputs(json::value_t::object);
  for (const std::string& path : input_paths) inputs[path] = file_hash_hex(path);
  json j;
  j["command"] = command;
  j["version"] = kArtifactVersion;
  j["seeds"] = seeds;
  j["inputs"] = inputs;
  j["config"] = config;
  return j;
}

void write_manifest(const std::string& path, const json& manifest) {
  write_file(path, manifest.dump(2) + "\n");
}

void emit(const json& payload) { std::cout << payload.dump() << "\n"; }

json metrics_json(const eval::EvalResult& r) {
  json j;
  j["rmse"] = r.rmse;
  j["mae"] = r.mae;
  j["parse-failure-rate"] = r.parse_failure_rate;
  j["n-samples"] = r.n_samples;
  return j;
}

// ---- subcommands ----

struct SynthArgs {
  std::string profile;
  std::string out;
  std::uint64_t seed = 0;
  bool seed_given = false;
};

void cmd_synth(const SynthArgs& a) {
  std::string profile_text = read_file(a.profile);
  corpus::SynthProfile prof = corpus::profile_from_json(profile_text);
  if (a.seed_given) prof.seed = a.seed;
  json config;
  config["out"] = a.out;
  config["profile"] = json::parse(profile_text);
  config["seed"] = prof.seed;
  write_manifest(a.out + ".manifest.json",
                 make_manifest("synth", config, {prof.seed}, {a.profile}));
  corpus::PoiDataset ds = corpus::synthesize(prof);
  std::filesystem::path out_path(a.out);
  if (out_path.has_parent_path()) std::filesystem::create_directories(out_path.parent_path());
  corpus::save_visits(ds, a.out);
  json payload;
  payload["out"] = a.out;
  payload["stats"] = json::parse(corpus::stats_json(corpus::stats(ds)));
  emit(payload);
}

void cmd_stats(const std::string& data) {
  corpus::PoiDataset ds = corpus::load_visits(data);
  std::cout << corpus::stats_json(corpus::stats(ds)) << "\n";
}

void cmd_build_vocab(const PipeOpts& p, const std::string& out) {
  json config = pipe_json(p);
  config["out"] = out;
  write_manifest(out + ".manifest.json",
                 make_manifest("build-vocab", config, {p.split_seed}, {p.data}));
  corpus::SplitSamples ss = load_split(p);
  tok::Vocabulary vocab = vocab_from_train(ss.train, text::variant_from_string(p.variant));
  vocab.save(out);
  json payload;
  payload["hash"] = std::to_string(vocab.hash());
  payload["out"] = out;
  payload["size"] = vocab.size();
  payload["train-samples"] = ss.train.size();
  emit(payload);
}

void cmd_train(const PipeOpts& p, const ModelOpts& mo, const TrainOpts& to,
               const std::string& out, const std::string& config_path) {
  json config = pipe_json(p);
  config.update(model_json(mo));
  config.update(train_json(to, true, true));
  config["out"] = out;
  std::vector<std::string> inputs = {p.data};
  if (!config_path.empty()) inputs.push_back(config_path);
  write_manifest(out + "/manifest.json",
                 make_manifest("train", config, {to.seed}, inputs));

  corpus::SplitSamples ss = load_split(p);
  tok::Vocabulary vocab = vocab_from_train(ss.train, text::variant_from_string(p.variant));
  std::string vocab_path = out + "/vocab.json";
  vocab.save(vocab_path);
  std::cerr << "train: " << ss.train.size() << " train / " << ss.val.size()
            << " val / " << ss.test.size() << " test windows, vocab "
            << vocab.size() << std::endl;

  model::Model m(to_model_config(mo, p.obs, static_cast<int>(vocab.size())), to.seed);
  train::TrainConfig tcfg = to_train_config(to, p, out);
  tcfg.progress = &std::cerr;
  train::TrainReport report = train::train(m, vocab, ss.train, ss.val, tcfg);
  std::string report_path = out + "/report.jsonl";
  write_file(report_path, report.to_jsonl());

  json payload;
  payload["best-epoch"] = report.best_epoch;
  payload["best-val-rmse"] = report.best_val_rmse;
  payload["checkpoint"] = report.checkpoint_path;
  payload["epochs"] = report.epochs.size();
  payload["manifest"] = out + "/manifest.json";
  payload["report"] = report_path;
  payload["vocab"] = vocab_path;
  payload["vocab-hash"] = std::to_string(vocab.hash());
  emit(payload);
}

struct EvalArgs {
  std::string checkpoint;
  std::string vocab;
  std::string split = "test";
  std::string out;
};

void cmd_eval(PipeOpts p, const EvalArgs& a, bool obs_given) {
  model::Model m = model::Model::load(a.checkpoint);
  require(!obs_given || p.obs == m.cfg.obs, ErrorCode::wrong_length,
          "--obs disagrees with the checkpoint's observation length");
  p.obs = m.cfg.obs;
  tok::Vocabulary vocab = tok::Vocabulary::load(a.vocab);
  corpus::SplitSamples ss = load_split(p);
  const std::vector<corpus::Sample>& subset = pick_split(ss, a.split);
  text::PromptVariant variant = text::variant_from_string(p.variant);

  eval::EvalResult nl = eval::evaluate_nl(m, subset, vocab, variant);
  eval::EvalResult mob = eval::evaluate_mob(m, subset);
  eval::EvalResult naive = eval::baseline_naive(subset);
  eval::EvalResult lr = eval::baseline_lr(ss.train, subset);
  std::string table = eval::summary_table({{"naive", {naive.rmse}, {naive.mae}},
                                           {"lr", {lr.rmse}, {lr.mae}},
                                           {"shift-nl", {nl.rmse}, {nl.mae}},
                                           {"shift-mob", {mob.rmse}, {mob.mae}}});

  json payload;
  payload["split"] = a.split;
  payload["baselines"] = json{{"naive", metrics_json(naive)}, {"lr", metrics_json(lr)}};
  payload["shift-nl"] = metrics_json(nl);
  payload["shift-mob"] = metrics_json(mob);
  payload["table"] = table;

  if (!a.out.empty()) {
    json config = pipe_json(p);
    config["checkpoint"] = a.checkpoint;
    config["vocab"] = a.vocab;
    config["split"] = a.split;
    config["out"] = a.out;
    write_manifest(a.out + ".manifest.json",
                   make_manifest("eval", config, {p.split_seed},
                                 {a.checkpoint, a.vocab, p.data}));
    json full = payload;
    full["shift-nl"]["records"] = json::parse(nl.to_json())["records"];
    full["shift-mob"]["records"] = json::parse(mob.to_json())["records"];
    write_file(a.out, full.dump(2) + "\n");
  }
  emit(payload);
}

/// One training run of a grid cell, evaluated on the test split. Sentence
/// rows reload the best-validation checkpoint; the numeric-only row keeps
/// the final weights because validation tracks sentence generation, which
/// an alpha-loss of 1 leaves untrained.
struct GridRun {
  std::string label;
  model::ModelConfig mcfg;
  train::TrainConfig tcfg;
  bool eval_mob = false;
  const corpus::SplitSamples* ss = nullptr;
  const tok::Vocabulary* vocab = nullptr;
};

json execute_run(const GridRun& r, std::mutex& log_mu) {
  model::Model m(r.mcfg, r.tcfg.seed);
  train::TrainReport report = train::train(m, *r.vocab, r.ss->train, r.ss->val, r.tcfg);
  eval::EvalResult res;
  if (r.eval_mob) {
    res = eval::evaluate_mob(m, r.ss->test);
  } else {
    model::Model best = model::Model::load(report.checkpoint_path);
    res = eval::evaluate_nl(best, r.ss->test, *r.vocab, r.tcfg.variant);
  }
  {
    std::lock_guard<std::mutex> lock(log_mu);
    std::cerr << "[run] " << r.label << ": rmse=" << res.rmse << " mae=" << res.mae
              << " parse-failure-rate=" << res.parse_failure_rate << std::endl;
  }
  return metrics_json(res);
}

struct GridArgs {
  std::string out;
  std::string seeds = "0..4";
  int jobs = 1;
};

void add_grid_opts(CLI::App* s, GridArgs& g) {
  s->add_option("--out", g.out, "output directory")->required();
  s->add_option("--seeds", g.seeds, "seed list, '0..4' or '0,2,5'")
      ->envname("SHIFTCAST_SEED")
      ->capture_default_str();
  s->add_option("--jobs", g.jobs, "parallel runs")->check(CLI::Range(1, 256))
      ->capture_default_str();
}

/// Fans the (rows x seeds) matrix out over worker threads, aggregates each
/// row to mean (std), and writes results.json next to the per-run artifacts.
void run_grid(const std::string& command, const GridArgs& g, json config,
              const std::vector<std::uint64_t>& seeds,
              const std::vector<std::string>& inputs, std::vector<GridRun>& runs,
              std::size_t n_rows, const std::vector<std::string>& row_labels) {
  write_manifest(g.out + "/manifest.json",
                 make_manifest(command, std::move(config), seeds, inputs));
  std::vector<json> cells(runs.size());
  std::mutex log_mu;
  std::vector<std::function<void()>> tasks;
  tasks.reserve(runs.size());
  for (std::size_t i = 0; i < runs.size(); ++i) {
    tasks.push_back([&runs, &cells, &log_mu, i] { cells[i] = execute_run(runs[i], log_mu); });
  }
  run_jobs(g.jobs, tasks);

  std::size_t per_row = seeds.size();
  json grid(json::value_t::object);
  std::vector<eval::SummaryRow> rows;
  for (std::size_t r = 0; r < n_rows; ++r) {
    json row(json::value_t::array);
    eval::SummaryRow srow;
    srow.method = row_labels[r];
    for (std::size_t k = 0; k < per_row; ++k) {
      const json& cell = cells[r * per_row + k];
      row.push_back(cell);
      srow.rmse_runs.push_back(cell.at("rmse").get<double>());
      srow.mae_runs.push_back(cell.at("mae").get<double>());
    }
    grid[row_labels[r]] = row;
    rows.push_back(std::move(srow));
  }
  json payload;
  payload["grid"] = grid;
  payload["out"] = g.out + "/results.json";
  payload["seeds"] = seeds;
  payload["table"] = eval::summary_table(rows);
  write_file(g.out + "/results.json", payload.dump(2) + "\n");
  emit(payload);
}

void cmd_ablate(const PipeOpts& p, const ModelOpts& mo, const TrainOpts& to,
                const GridArgs& g, const std::string& config_path) {
  std::vector<std::uint64_t> seeds = parse_seed_list(g.seeds);
  json config = pipe_json(p);
  config.update(model_json(mo));
  config.update(train_json(to, false, false));
  config["out"] = g.out;
  config["seeds"] = g.seeds;
  config["jobs"] = g.jobs;
  std::vector<std::string> inputs = {p.data};
  if (!config_path.empty()) inputs.push_back(config_path);

  corpus::SplitSamples ss = load_split(p);
  text::PromptVariant variant = text::variant_from_string(p.variant);
  tok::Vocabulary vocab = vocab_from_train(ss.train, variant);
  model::ModelConfig mcfg = to_model_config(mo, p.obs, static_cast<int>(vocab.size()));

  struct Row {
    const char* name;
    model::Mode mode;
    double alpha_loss;  // negative: keep the configured value
    bool eval_mob;
  };
  const Row grid_rows[] = {{"no-nl", model::Mode::basic, 1.0, true},
                           {"no-mob", model::Mode::basic, 0.0, false},
                           {"basic", model::Mode::basic, -1.0, false},
                           {"siamese", model::Mode::siamese, -1.0, false},
                           {"momentum", model::Mode::momentum, -1.0, false}};

  std::vector<GridRun> runs;
  std::vector<std::string> labels;
  for (const Row& row : grid_rows) {
    labels.push_back(row.name);
    for (std::uint64_t seed : seeds) {
      GridRun r;
      r.label = std::string(row.name) + " seed " + std::to_string(seed);
      r.mcfg = mcfg;
      TrainOpts cell = to;
      cell.mode = model::mode_to_string(row.mode);
      if (row.alpha_loss >= 0.0) cell.alpha_loss = row.alpha_loss;
      cell.seed = seed;
      r.tcfg = to_train_config(cell, p,
                               g.out + "/runs/" + row.name + "-s" + std::to_string(seed));
      r.eval_mob = row.eval_mob;
      r.ss = &ss;
      r.vocab = &vocab;
      runs.push_back(std::move(r));
    }
  }
  run_grid("ablate", g, std::move(config), seeds, inputs, runs,
           std::size(grid_rows), labels);
}

void cmd_sweep(const PipeOpts& p, const ModelOpts& mo, const TrainOpts& to,
               const GridArgs& g, const std::string& param, const std::string& values,
               const std::string& config_path) {
  std::vector<std::uint64_t> seeds = parse_seed_list(g.seeds);
  std::vector<std::string> value_tokens = split_csv(values);
  json config = pipe_json(p);
  config.update(model_json(mo));
  config.update(train_json(to, true, false));
  config["out"] = g.out;
  config["seeds"] = g.seeds;
  config["jobs"] = g.jobs;
  config["param"] = param;
  config["values"] = values;
  std::vector<std::string> inputs = {p.data};
  if (!config_path.empty()) inputs.push_back(config_path);

  text::PromptVariant variant = text::variant_from_string(p.variant);

  // Each obs value re-windows the data, so those pipelines are per-value;
  // the alpha sweeps share one split and vocabulary.
  std::vector<std::unique_ptr<corpus::SplitSamples>> splits;
  std::vector<std::unique_ptr<tok::Vocabulary>> vocabs;
  auto make_pipeline = [&](const PipeOpts& pv) {
    splits.push_back(std::make_unique<corpus::SplitSamples>(load_split(pv)));
    vocabs.push_back(
        std::make_unique<tok::Vocabulary>(vocab_from_train(splits.back()->train, variant)));
  };

  std::vector<GridRun> runs;
  std::vector<std::string> labels;
  if (param != "obs") make_pipeline(p);
  for (const std::string& tok : value_tokens) {
    std::string label = param + "=" + tok;
    labels.push_back(label);
    PipeOpts pv = p;
    if (param == "obs") {
      pv.obs = parse_int(tok);
      require(pv.obs >= 1, ErrorCode::invalid_argument, "obs must be positive");
      make_pipeline(pv);
    }
    const corpus::SplitSamples* ss = splits.back().get();
    const tok::Vocabulary* vocab = vocabs.back().get();
    for (std::uint64_t seed : seeds) {
      GridRun r;
      r.label = label + " seed " + std::to_string(seed);
      r.mcfg = to_model_config(mo, pv.obs, static_cast<int>(vocab->size()));
      TrainOpts cell = to;
      cell.seed = seed;
      if (param == "alpha-loss") cell.alpha_loss = parse_double(tok);
      if (param == "alpha-m") cell.alpha_m = parse_double(tok);
      r.tcfg = to_train_config(cell, pv,
                               g.out + "/runs/" + param + "-" + tok + "-s" +
                                   std::to_string(seed));
      r.ss = ss;
      r.vocab = vocab;
      runs.push_back(std::move(r));
    }
  }
  run_grid("sweep", g, std::move(config), seeds, inputs, runs, value_tokens.size(),
           labels);
}

struct AttentionArgs {
  std::string checkpoint;
  std::string vocab;
  std::string split = "test";
  int sample_index = 0;
  std::string out;
};

void cmd_attention(PipeOpts p, const AttentionArgs& a, bool obs_given) {
  model::Model m = model::Model::load(a.checkpoint);
  require(!obs_given || p.obs == m.cfg.obs, ErrorCode::wrong_length,
          "--obs disagrees with the checkpoint's observation length");
  p.obs = m.cfg.obs;
  tok::Vocabulary vocab = tok::Vocabulary::load(a.vocab);

  json config = pipe_json(p);
  config["checkpoint"] = a.checkpoint;
  config["vocab"] = a.vocab;
  config["split"] = a.split;
  config["sample-index"] = a.sample_index;
  config["out"] = a.out;
  write_manifest(a.out + "/manifest.json",
                 make_manifest("attention", config, {p.split_seed},
                               {a.checkpoint, a.vocab, p.data}));

  corpus::SplitSamples ss = load_split(p);
  const std::vector<corpus::Sample>& subset = pick_split(ss, a.split);
  require(a.sample_index >= 0 &&
              static_cast<std::size_t>(a.sample_index) < subset.size(),
          ErrorCode::invalid_argument,
          "--sample-index outside the " + a.split + " split");
  const corpus::Sample& sample = subset[a.sample_index];
  std::string json_path = a.out + "/attention.json";
  std::string svg_path = a.out + "/attention.svg";
  eval::export_attention(m, sample, vocab, text::variant_from_string(p.variant),
                         json_path, svg_path);
  json payload;
  payload["json"] = json_path;
  payload["poi-id"] = sample.poi_id;
  payload["svg"] = svg_path;
  payload["target"] = sample.target_value;
  emit(payload);
}

void cmd_predict(const std::string& checkpoint, const std::string& vocab_path) {
  model::Model m = model::Model::load(checkpoint);
  tok::Vocabulary vocab = tok::Vocabulary::load(vocab_path);
  require(m.vocab_hash == vocab.hash(), ErrorCode::vocab_mismatch,
          "checkpoint was trained with a different vocabulary");
  std::string prompt((std::istreambuf_iterator<char>(std::cin)),
                     std::istreambuf_iterator<char>());
  while (!prompt.empty() && std::isspace(static_cast<unsigned char>(prompt.back()))) {
    prompt.pop_back();
  }
  require(!prompt.empty(), ErrorCode::empty_input, "predict expects a prompt on stdin");
  tok::TokenSequence ids = tok::encode(prompt, vocab, false);
  tok::TokenSequence generated = m.nl_generate(ids.ids, m.cfg.max_target_len);
  std::string sentence = tok::decode(generated, vocab);
  std::int64_t value = text::parse_prediction(sentence);
  std::cout << sentence << "\n" << value << "\n";
}

/// Splices the key/value pairs of a --config JSON file (or of a manifest's
/// resolved "config" object) in as flags right after the subcommand token.
/// Explicit flags come later in argv and win via the take-last policy, so the
/// precedence is CLI flag, then config file, then built-in default.
std::vector<std::string> expand_config_args(const std::vector<std::string>& args) {
  static const char* kConfigCommands[] = {"train", "eval", "ablate", "sweep"};
  std::size_t sub_pos = args.size();
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (!args[i].empty() && args[i][0] != '-') {
      sub_pos = i;
      break;
    }
  }
  if (sub_pos == args.size()) return args;
  bool takes_config = false;
  for (const char* cmd : kConfigCommands) takes_config |= args[sub_pos] == cmd;
  if (!takes_config) return args;

  std::string path;
  for (std::size_t i = sub_pos + 1; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) {
      path = args[i + 1];
    } else if (args[i].rfind("--config=", 0) == 0) {
      path = args[i].substr(9);
    }
  }
  if (path.empty()) return args;

  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    fail(ErrorCode::invalid_argument,
         "config " + path + " is not valid JSON: " + e.what());
  }
  if (j.is_object() && j.contains("command") && j.contains("config")) j = j.at("config");
  require(j.is_object(), ErrorCode::invalid_argument,
          "config " + path + " must hold a JSON object");

  std::vector<std::string> out(args.begin(), args.begin() + sub_pos + 1);
  for (const auto& [key, value] : j.items()) {
    if (value.is_boolean()) {
      out.push_back("--" + key + "=" + (value.get<bool>() ? "true" : "false"));
    } else {
      out.push_back("--" + key);
      out.push_back(value.is_string() ? value.get<std::string>() : value.dump());
    }
  }
  out.insert(out.end(), args.begin() + sub_pos + 1, args.end());
  return out;
}

CLI::Option* add_config_opt(CLI::App* s, std::string& store) {
  return s->add_option("--config", store, "JSON config file or a run manifest");
}

int emit_structured_error(const std::string& name, const std::string& message) {
  json j;
  j["error"] = name;
  j["message"] = message;
  std::cerr << j.dump() << std::endl;
  return 1;
}

}  // namespace

int run(int argc, const char* const* argv) {
  std::vector<std::string> args;
  args.reserve(static_cast<std::size_t>(argc > 0 ? argc - 1 : 0));
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args);
}

int run(const std::vector<std::string>& args) {
  CLI::App app{"shiftcast: visit forecasting via sentence translation"};
  app.require_subcommand(1);

  // synth
  SynthArgs synth_args;
  CLI::App* synth = app.add_subcommand("synth", "generate a synthetic visits CSV");
  synth->add_option("--profile", synth_args.profile, "generator profile JSON")
      ->required()
      ->check(CLI::ExistingFile);
  synth->add_option("--out", synth_args.out, "CSV path")->required();
  CLI::Option* synth_seed = synth->add_option("--seed", synth_args.seed,
                                              "overrides the profile seed")
                                ->envname("SHIFTCAST_SEED");
  synth->callback([&] {
    synth_args.seed_given = synth_seed->count() > 0;
    cmd_synth(synth_args);
  });

  // stats
  std::string stats_data;
  CLI::App* stats = app.add_subcommand("stats", "dataset summary JSON");
  stats->add_option("--data", stats_data, "visits CSV")->required()->check(CLI::ExistingFile);
  stats->callback([&] { cmd_stats(stats_data); });

  // build-vocab
  PipeOpts vocab_pipe;
  std::string vocab_out;
  CLI::App* bvocab = app.add_subcommand("build-vocab",
                                        "vocabulary from the train split's sentences");
  add_pipe_opts(bvocab, vocab_pipe);
  bvocab->add_option("--out", vocab_out, "vocabulary JSON path")->required();
  bvocab->callback([&] { cmd_build_vocab(vocab_pipe, vocab_out); });

  // train
  PipeOpts train_pipe;
  ModelOpts train_model;
  TrainOpts train_opts;
  std::string train_out;
  CLI::App* train = app.add_subcommand("train", "train a model, keep the best checkpoint");
  add_pipe_opts(train, train_pipe);
  add_model_opts(train, train_model);
  add_train_opts(train, train_opts, true, true);
  train->add_option("--out", train_out, "output directory")->required();
  std::string train_config_path;
  add_config_opt(train, train_config_path);
  train->callback([&] {
    cmd_train(train_pipe, train_model, train_opts, train_out, train_config_path);
  });

  // eval
  PipeOpts eval_pipe;
  EvalArgs eval_args;
  CLI::App* eval_cmd = app.add_subcommand("eval", "metrics and baselines on one split");
  add_pipe_opts(eval_cmd, eval_pipe);
  eval_cmd->add_option("--checkpoint", eval_args.checkpoint, "model checkpoint")
      ->required()
      ->check(CLI::ExistingFile);
  eval_cmd->add_option("--vocab", eval_args.vocab, "vocabulary JSON")
      ->required()
      ->check(CLI::ExistingFile);
  eval_cmd->add_option("--split", eval_args.split, "train, val or test")
      ->check(CLI::IsMember({"train", "val", "test"}))
      ->capture_default_str();
  eval_cmd->add_option("--out", eval_args.out, "also write per-sample records here");
  std::string eval_config_path;
  add_config_opt(eval_cmd, eval_config_path);
  eval_cmd->callback([&] {
    cmd_eval(eval_pipe, eval_args, eval_cmd->get_option("--obs")->count() > 0);
  });

  // ablate
  PipeOpts ablate_pipe;
  ModelOpts ablate_model;
  TrainOpts ablate_opts;
  GridArgs ablate_grid;
  CLI::App* ablate = app.add_subcommand(
      "ablate", "branch and coupling grid over seeds, aggregated to mean (std)");
  add_pipe_opts(ablate, ablate_pipe);
  add_model_opts(ablate, ablate_model);
  add_train_opts(ablate, ablate_opts, false, false);
  add_grid_opts(ablate, ablate_grid);
  std::string ablate_config_path;
  add_config_opt(ablate, ablate_config_path);
  ablate->callback([&] {
    cmd_ablate(ablate_pipe, ablate_model, ablate_opts, ablate_grid, ablate_config_path);
  });

  // sweep
  PipeOpts sweep_pipe;
  ModelOpts sweep_model;
  TrainOpts sweep_opts;
  GridArgs sweep_grid;
  std::string sweep_param;
  std::string sweep_values;
  CLI::App* sweep = app.add_subcommand("sweep", "one-axis hyperparameter grid over seeds");
  add_pipe_opts(sweep, sweep_pipe);
  add_model_opts(sweep, sweep_model);
  add_train_opts(sweep, sweep_opts, true, false);
  add_grid_opts(sweep, sweep_grid);
  sweep->add_option("--param", sweep_param, "axis to sweep")
      ->required()
      ->check(CLI::IsMember({"alpha-loss", "alpha-m", "obs"}));
  sweep->add_option("--values", sweep_values, "comma-separated axis values")->required();
  std::string sweep_config_path;
  add_config_opt(sweep, sweep_config_path);
  sweep->callback([&] {
    cmd_sweep(sweep_pipe, sweep_model, sweep_opts, sweep_grid, sweep_param, sweep_values,
              sweep_config_path);
  });

  // attention
  PipeOpts attn_pipe;
  AttentionArgs attn_args;
  CLI::App* attn = app.add_subcommand("attention", "export cross-attention heatmaps");
  add_pipe_opts(attn, attn_pipe);
  attn->add_option("--checkpoint", attn_args.checkpoint, "model checkpoint")
      ->required()
      ->check(CLI::ExistingFile);
  attn->add_option("--vocab", attn_args.vocab, "vocabulary JSON")
      ->required()
      ->check(CLI::ExistingFile);
  attn->add_option("--split", attn_args.split, "train, val or test")
      ->check(CLI::IsMember({"train", "val", "test"}))
      ->capture_default_str();
  attn->add_option("--sample-index", attn_args.sample_index, "index into the split")
      ->capture_default_str();
  attn->add_option("--out", attn_args.out, "output directory")->required();
  attn->callback([&] {
    cmd_attention(attn_pipe, attn_args, attn->get_option("--obs")->count() > 0);
  });

  // predict
  std::string predict_checkpoint;
  std::string predict_vocab;
  CLI::App* predict = app.add_subcommand("predict",
                                         "prompt on stdin, sentence and count on stdout");
  predict->add_option("--checkpoint", predict_checkpoint, "model checkpoint")
      ->required()
      ->check(CLI::ExistingFile);
  predict->add_option("--vocab", predict_vocab, "vocabulary JSON")
      ->required()
      ->check(CLI::ExistingFile);
  predict->callback([&] { cmd_predict(predict_checkpoint, predict_vocab); });

  // Config splicing can duplicate an option; the explicit flag comes last
  // and must win.
  for (CLI::App* sub : app.get_subcommands(nullptr)) {
    for (CLI::Option* opt : sub->get_options()) {
      opt->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    }
  }

  try {
    std::vector<std::string> expanded = expand_config_args(args);
    std::vector<const char*> argv;
    argv.reserve(expanded.size() + 1);
    argv.push_back("shiftcast");
    for (const std::string& a : expanded) argv.push_back(a.c_str());
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n"
              << "run 'shiftcast --help' for usage" << std::endl;
    return 2;
  } catch (const Error& e) {
    return emit_structured_error(error_code_name(e.code()), e.what());
  } catch (const std::exception& e) {
    return emit_structured_error("Unexpected", e.what());
  }
  return 0;
}

}  // namespace shift::cli
