#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "json.hpp"
#include "shift/corpus.hpp"
#include "shift/error.hpp"
#include "shift/eval.hpp"
#include "shift/model.hpp"
#include "shift/optim.hpp"
#include "shift/rng.hpp"
#include "shift/text_template.hpp"
#include "shift/tokenizer.hpp"
#include "shift/train.hpp"

using namespace shift;
using model::Mode;
using model::Model;
using model::ModelConfig;

namespace {

corpus::Sample mk_sample(std::int64_t poi, const std::string& cat, Date d0,
                         std::vector<std::int64_t> values, std::int64_t target) {
  corpus::Sample s;
  s.poi_id = poi;
  s.category = cat;
  for (std::size_t i = 0; i < values.size(); ++i)
    s.obs_dates.push_back(d0.plus_days(static_cast<std::int64_t>(i)));
  s.obs_values = std::move(values);
  s.target_date = d0.plus_days(static_cast<std::int64_t>(s.obs_values.size()));
  s.target_value = target;
  return s;
}

struct Pipeline {
  std::vector<corpus::Sample> samples;
  tok::Vocabulary vocab;
  ModelConfig mcfg;
};

Pipeline make_pipeline(int obs = 3) {
  corpus::SynthProfile p;
  p.num_pois = 4;
  p.num_categories = 2;
  p.days = 10;
  p.noise = 0.1;
  p.seed = 21;
  auto ds = corpus::synthesize(p);

  Pipeline out;
  out.samples = corpus::windowize(ds, obs);
  std::vector<std::string> texts;
  for (const auto& s : out.samples) {
    texts.push_back(text::render_prompt(s, text::PromptVariant::A).text);
    texts.push_back(text::render_target(s).text);
  }
  out.vocab = tok::build_vocab(texts);
  out.mcfg.d = 8;
  out.mcfg.n_layers = 1;
  out.mcfg.n_heads = 2;
  out.mcfg.ff_width = 16;
  out.mcfg.dropout = 0.0;
  out.mcfg.max_prompt_len = 96;
  out.mcfg.max_target_len = 16;
  out.mcfg.obs = obs;
  out.mcfg.vocab_size = static_cast<int>(out.vocab.size());
  return out;
}

void check_against_records(const eval::EvalResult& r) {
  REQUIRE(r.records.size() == r.n_samples);
  double sq = 0.0, abs = 0.0;
  std::size_t failures = 0;
  for (const auto& rec : r.records) {
    double d = rec.predicted - rec.truth;
    sq += d * d;
    abs += std::abs(d);
    if (!rec.parsed) ++failures;
  }
  double n = static_cast<double>(r.n_samples);
  CHECK(r.rmse == doctest::Approx(std::sqrt(sq / n)).epsilon(1e-12));
  CHECK(r.mae == doctest::Approx(abs / n).epsilon(1e-12));
  CHECK(r.parse_failure_rate ==
        doctest::Approx(static_cast<double>(failures) / n).epsilon(1e-12));
  CHECK(r.rmse >= r.mae - 1e-12);
}

}  // namespace

TEST_CASE("metric golden values") {
  CHECK(eval::rmse({1, 2, 3}, {1, 2, 3}) == 0.0);
  CHECK(eval::mae({1, 2, 3}, {1, 2, 3}) == 0.0);
  CHECK(eval::rmse({2, 4}, {0, 0}) ==
        doctest::Approx(std::sqrt(10.0)).epsilon(1e-12));
  CHECK(eval::mae({2, 4}, {0, 0}) == doctest::Approx(3.0).epsilon(1e-12));
  CHECK(eval::rmse({21}, {24}) == doctest::Approx(3.0).epsilon(1e-12));
  CHECK(eval::mae({21}, {24}) == doctest::Approx(3.0).epsilon(1e-12));

  CHECK_THROWS_WITH_AS(eval::rmse({}, {}), doctest::Contains("EmptyInput"),
                       Error);
  CHECK_THROWS_WITH_AS(eval::mae({1}, {1, 2}),
                       doctest::Contains("ShapeMismatch"), Error);
}

TEST_CASE("sentence evaluation is total, deterministic, and side-effect free") {
  Pipeline pl = make_pipeline();
  Model m(pl.mcfg, 3);
  m.vocab_hash = pl.vocab.hash();

  std::vector<nn::Matrix> before;
  for (const auto& tp : m.params.tensors()) before.push_back(tp->value);

  auto r1 = eval::evaluate_nl(m, pl.samples, pl.vocab, text::PromptVariant::A);
  auto r2 = eval::evaluate_nl(m, pl.samples, pl.vocab, text::PromptVariant::A);

  CHECK(r1.n_samples == pl.samples.size());
  CHECK(r1.parse_failure_rate >= 0.0);
  CHECK(r1.parse_failure_rate <= 1.0);
  CHECK(r1.to_json() == r2.to_json());
  check_against_records(r1);

  // Unparseable generations were imputed with the last observation.
  for (std::size_t i = 0; i < r1.records.size(); ++i) {
    if (!r1.records[i].parsed)
      CHECK(r1.records[i].predicted ==
            static_cast<double>(pl.samples[i].obs_values.back()));
    CHECK(!r1.records[i].prompt.empty());
    CHECK(!r1.records[i].generated.empty());
  }

  for (std::size_t i = 0; i < before.size(); ++i)
    CHECK(m.params.tensors()[i]->value == before[i]);

  m.vocab_hash ^= 1;
  CHECK_THROWS_WITH_AS(
      eval::evaluate_nl(m, pl.samples, pl.vocab, text::PromptVariant::A),
      doctest::Contains("VocabMismatch"), Error);
  m.vocab_hash ^= 1;
  CHECK_THROWS_WITH_AS(eval::evaluate_nl(m, {}, pl.vocab, text::PromptVariant::A),
                       doctest::Contains("EmptyInput"), Error);
}

TEST_CASE("numeric evaluation rounds to non-negative counts") {
  ModelConfig mc;
  mc.d = 8;
  mc.n_layers = 1;
  mc.n_heads = 2;
  mc.ff_width = 16;
  mc.dropout = 0.0;
  mc.obs = 3;
  mc.vocab_size = 5;
  Model m(mc, 0);

  // Zeroing the head's output weight pins the prediction to its bias.
  m.params.at("mob.head.w2").value.setZero();
  m.params.at("mob.head.b2").value(0, 0) = 3.0;
  m.norm = {0.0, 1.0};

  Date d0{2020, 6, 1};
  std::vector<corpus::Sample> samples;
  for (std::int64_t target : {1, 2, 3, 4, 5})
    samples.push_back(mk_sample(target, "Cafe", d0, {3, 3, 3}, target));

  auto r = eval::evaluate_mob(m, samples);
  CHECK(r.parse_failure_rate == 0.0);
  for (const auto& rec : r.records) CHECK(rec.predicted == 3.0);
  // Constant predictor at the target mean scores the population std.
  CHECK(r.rmse == doctest::Approx(std::sqrt(2.0)).epsilon(1e-12));
  CHECK(r.mae == doctest::Approx(1.2).epsilon(1e-12));
  check_against_records(r);

  // Large negative bias still yields a count.
  m.params.at("mob.head.b2").value(0, 0) = -50.0;
  auto low = eval::evaluate_mob(m, samples);
  for (const auto& rec : low.records) CHECK(rec.predicted == 0.0);

  CHECK_THROWS_WITH_AS(eval::evaluate_mob(m, {}),
                       doctest::Contains("EmptyInput"), Error);
}

TEST_CASE("numeric evaluation after training on the copy task") {
  ModelConfig mc;
  mc.d = 16;
  mc.n_layers = 1;
  mc.n_heads = 2;
  mc.ff_width = 32;
  mc.dropout = 0.0;
  mc.obs = 4;
  mc.vocab_size = 5;
  Model m(mc, 6);
  m.set_mode(Mode::basic);
  m.norm = {10.0, 6.0};

  SplitMix64 rng(123);
  auto draw_window = [&]() {
    std::vector<std::int64_t> w(4);
    for (auto& v : w) v = static_cast<std::int64_t>(rng.next() % 21);
    return w;
  };

  nn::Adam adam(3e-3);
  for (int step = 0; step < 400; ++step) {
    m.params.zero_grads();
    ad::Tape t;
    model::Forward f;
    std::vector<ad::Expr> preds;
    std::vector<double> truths;
    for (int b = 0; b < 8; ++b) {
      auto w = draw_window();
      truths.push_back((static_cast<double>(w.back()) - m.norm.mean) /
                       m.norm.std);
      preds.push_back(m.mob_forward_expr(t, w, f));
    }
    t.backward(train::loss_mob(t, preds, truths));
    adam.step(m.params);
  }

  Date d0{2021, 3, 1};
  std::vector<corpus::Sample> held_out;
  for (int i = 0; i < 50; ++i) {
    auto w = draw_window();
    std::int64_t target = w.back();
    held_out.push_back(mk_sample(i, "Shop", d0, std::move(w), target));
  }
  auto r = eval::evaluate_mob(m, held_out);
  CHECK(r.mae < 1.0);
  check_against_records(r);
}

TEST_CASE("naive baseline repeats the last observation") {
  Date d0{2020, 6, 1};
  std::vector<corpus::Sample> samples = {
      mk_sample(1, "Cafe", d0, {5, 5, 5}, 5),
      mk_sample(2, "Cafe", d0, {1, 2, 3}, 3),
  };
  auto r = eval::baseline_naive(samples);
  CHECK(r.rmse == 0.0);
  CHECK(r.mae == 0.0);
  CHECK(r.parse_failure_rate == 0.0);
  check_against_records(r);

  CHECK_THROWS_WITH_AS(eval::baseline_naive({}),
                       doctest::Contains("EmptyInput"), Error);
}

TEST_CASE("least-squares baseline fits a linear series exactly") {
  Date d0{2020, 6, 1};
  auto at = [](std::int64_t t) { return 3 + 2 * t; };
  std::vector<corpus::Sample> train_s, test_s;
  for (std::int64_t t = 0; t < 10; ++t)
    train_s.push_back(
        mk_sample(1, "Cafe", d0.plus_days(t), {at(t), at(t + 1), at(t + 2)},
                  at(t + 3)));
  for (std::int64_t t = 20; t < 25; ++t)
    test_s.push_back(
        mk_sample(1, "Cafe", d0.plus_days(t), {at(t), at(t + 1), at(t + 2)},
                  at(t + 3)));

  auto r = eval::baseline_lr(train_s, test_s);
  CHECK(r.rmse < 1e-6);
  CHECK(r.mae < 1e-6);
  check_against_records(r);
}

TEST_CASE("degenerate least-squares falls back to the naive baseline") {
  Date d0{2020, 6, 1};
  std::vector<corpus::Sample> tiny_train = {
      mk_sample(1, "Cafe", d0, {5, 6, 7}, 8)};  // fewer rows than unknowns
  std::vector<corpus::Sample> test_s = {
      mk_sample(2, "Cafe", d0, {1, 2, 3}, 9),
      mk_sample(3, "Cafe", d0, {4, 4, 4}, 2),
  };
  auto fallback = eval::baseline_lr(tiny_train, test_s);
  auto naive = eval::baseline_naive(test_s);
  REQUIRE(fallback.records.size() == naive.records.size());
  for (std::size_t i = 0; i < naive.records.size(); ++i)
    CHECK(fallback.records[i].predicted == naive.records[i].predicted);
  CHECK(fallback.rmse == naive.rmse);

  CHECK_THROWS_WITH_AS(eval::baseline_lr(tiny_train, {}),
                       doctest::Contains("EmptyInput"), Error);
}

TEST_CASE("attention export writes labeled heatmaps") {
  // A sample where the POI id equals every count, so the same surface form
  // appears on both axes and any row/column confusion would scramble labels.
  Date d0{2020, 8, 26};
  corpus::Sample s = mk_sample(24, "Cafe", d0, {24, 24, 24}, 24);

  std::vector<std::string> texts = {
      text::render_prompt(s, text::PromptVariant::A).text,
      text::render_target(s).text};
  tok::Vocabulary vocab = tok::build_vocab(texts);

  ModelConfig mc;
  mc.d = 8;
  mc.n_layers = 2;
  mc.n_heads = 2;
  mc.ff_width = 16;
  mc.dropout = 0.0;
  mc.obs = 3;
  mc.max_prompt_len = 96;
  mc.max_target_len = 16;
  mc.vocab_size = static_cast<int>(vocab.size());
  Model m(mc, 7);
  m.vocab_hash = vocab.hash();

  auto dir = std::filesystem::temp_directory_path() / "shift_eval_tests";
  std::filesystem::create_directories(dir);
  auto json_path = (dir / "attn.json").string();
  auto svg_path = (dir / "attn.svg").string();
  eval::export_attention(m, s, vocab, text::PromptVariant::A, json_path,
                         svg_path);

  std::ifstream in(json_path);
  REQUIRE(in.good());
  nlohmann::json j = nlohmann::json::parse(in);

  auto prompt_tokens = j.at("prompt_tokens").get<std::vector<std::string>>();
  auto output_tokens = j.at("output_tokens").get<std::vector<std::string>>();
  auto expected =
      tok::tokenize(text::render_prompt(s, text::PromptVariant::A).text);
  CHECK(prompt_tokens == expected);
  CHECK(prompt_tokens[2] == "24");  // the id right after "Place-of-Interest (POI)"
  int count_24 = 0;
  for (const auto& tk : prompt_tokens)
    if (tk == "24") ++count_24;
  CHECK(count_24 >= 4);  // id and count share the surface form

  REQUIRE(j.at("layers").size() == 2);
  for (const auto& layer : j.at("layers")) {
    REQUIRE(layer.size() == output_tokens.size());
    for (const auto& row : layer) {
      REQUIRE(row.size() == prompt_tokens.size());
      double sum = 0.0;
      for (const auto& v : row) sum += v.get<double>();
      CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
    }
  }

  std::ifstream svg_in(svg_path);
  REQUIRE(svg_in.good());
  std::string svg((std::istreambuf_iterator<char>(svg_in)),
                  std::istreambuf_iterator<char>());
  CHECK(svg.find("<svg") != std::string::npos);
  CHECK(svg.find(">24</text>") != std::string::npos);
  CHECK(svg.find("layer 0") != std::string::npos);
  CHECK(svg.find("layer 1") != std::string::npos);

  m.vocab_hash ^= 1;
  CHECK_THROWS_WITH_AS(eval::export_attention(m, s, vocab,
                                              text::PromptVariant::A, json_path,
                                              ""),
                       doctest::Contains("VocabMismatch"), Error);
}

TEST_CASE("summary table reports mean and spread per method") {
  std::vector<eval::SummaryRow> rows = {
      {"naive", {2.0, 4.0}, {1.0, 1.0}},
      {"shift", {1.5}, {0.5}},
  };
  std::string table = eval::summary_table(rows);
  CHECK(table.find("| method | RMSE | MAE |") != std::string::npos);
  CHECK(table.find("| naive | 3.0000 (1.0000) | 1.0000 (0.0000) |") !=
        std::string::npos);
  CHECK(table.find("| shift | 1.5000 (0.0000) | 0.5000 (0.0000) |") !=
        std::string::npos);

  CHECK_THROWS_WITH_AS(eval::summary_table({{"bad", {1.0}, {}}}),
                       doctest::Contains("ShapeMismatch"), Error);
}
