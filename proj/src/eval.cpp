#include "shift/eval.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <fstream>
#include <iostream>
#include <sstream>

#include "json.hpp"
#include "shift/error.hpp"

namespace shift::eval {

namespace {

void check_pair(const std::vector<double>& preds,
                const std::vector<double>& truths) {
  require(!preds.empty(), ErrorCode::empty_input, "no predictions to score");
  require(preds.size() == truths.size(), ErrorCode::shape_mismatch,
          "got " + std::to_string(preds.size()) + " predictions for " +
              std::to_string(truths.size()) + " truths");
}

/// Fills the aggregate metrics from the per-sample records.
EvalResult finalize(std::vector<SampleRecord> records) {
  require(!records.empty(), ErrorCode::empty_input, "no samples to evaluate");
  std::vector<double> preds, truths;
  std::size_t failures = 0;
  for (const auto& r : records) {
    preds.push_back(r.predicted);
    truths.push_back(r.truth);
    if (!r.parsed) ++failures;
  }
  EvalResult out;
  out.rmse = rmse(preds, truths);
  out.mae = mae(preds, truths);
  out.parse_failure_rate =
      static_cast<double>(failures) / static_cast<double>(records.size());
  out.n_samples = records.size();
  out.records = std::move(records);
  // Quadratic mean dominates arithmetic mean.
  require(out.rmse >= out.mae - 1e-9, ErrorCode::invalid_argument,
          "rmse fell below mae");
  return out;
}

std::string format_mean_std(const std::vector<double>& runs) {
  double mean = 0.0;
  for (double v : runs) mean += v;
  mean /= static_cast<double>(runs.size());
  double var = 0.0;
  for (double v : runs) var += (v - mean) * (v - mean);
  var /= static_cast<double>(runs.size());
  std::ostringstream ss;
  ss.setf(std::ios::fixed);
  ss.precision(4);
  ss << mean << " (" << std::sqrt(var) << ")";
  return ss.str();
}

std::string color_for(double v) {
  // Linear white-to-hot ramp; v is an attention weight in [0,1].
  double clamped = std::min(1.0, std::max(0.0, v));
  int g = static_cast<int>(std::lround(255.0 * (1.0 - clamped * 0.85)));
  int b = static_cast<int>(std::lround(255.0 * (1.0 - clamped)));
  std::ostringstream ss;
  ss << "rgb(255," << g << "," << b << ")";
  return ss.str();
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

double rmse(const std::vector<double>& preds, const std::vector<double>& truths) {
  check_pair(preds, truths);
  double acc = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    double d = preds[i] - truths[i];
    acc += d * d;
  }
  return std::sqrt(acc / static_cast<double>(preds.size()));
}

double mae(const std::vector<double>& preds, const std::vector<double>& truths) {
  check_pair(preds, truths);
  double acc = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i)
    acc += std::abs(preds[i] - truths[i]);
  return acc / static_cast<double>(preds.size());
}

std::string EvalResult::to_json() const {
  nlohmann::json j;
  j["rmse"] = rmse;
  j["mae"] = mae;
  j["parse_failure_rate"] = parse_failure_rate;
  j["n_samples"] = n_samples;
  j["records"] = nlohmann::json::array();
  for (const auto& r : records) {
    nlohmann::json rec;
    rec["poi_id"] = r.poi_id;
    rec["prompt"] = r.prompt;
    rec["generated"] = r.generated;
    rec["parsed"] = r.parsed;
    rec["predicted"] = r.predicted;
    rec["truth"] = r.truth;
    j["records"].push_back(rec);
  }
  return j.dump();
}

EvalResult evaluate_nl(model::Model& m, const std::vector<corpus::Sample>& samples,
                       const tok::Vocabulary& vocab, text::PromptVariant variant) {
  require(m.vocab_hash == vocab.hash(), ErrorCode::vocab_mismatch,
          "checkpoint was built against a different vocabulary");
  require(!samples.empty(), ErrorCode::empty_input, "no samples to evaluate");

  std::vector<SampleRecord> records;
  records.reserve(samples.size());
  for (const auto& s : samples) {
    SampleRecord rec;
    rec.poi_id = s.poi_id;
    rec.truth = static_cast<double>(s.target_value);
    rec.prompt = text::render_prompt(s, variant).text;
    tok::TokenSequence prompt_ids = tok::encode(rec.prompt, vocab, false);
    tok::TokenSequence gen = m.nl_generate(prompt_ids.ids, m.cfg.max_target_len);
    rec.generated = tok::decode(gen, vocab);
    try {
      rec.predicted = static_cast<double>(text::parse_prediction(rec.generated));
      rec.parsed = true;
    } catch (const Error& e) {
      if (e.code() != ErrorCode::malformed_prediction) throw;
      rec.parsed = false;
      rec.predicted = static_cast<double>(s.obs_values.back());
    }
    records.push_back(std::move(rec));
  }
  return finalize(std::move(records));
}

EvalResult evaluate_mob(model::Model& m,
                        const std::vector<corpus::Sample>& samples) {
  require(!samples.empty(), ErrorCode::empty_input, "no samples to evaluate");
  std::vector<SampleRecord> records;
  records.reserve(samples.size());
  for (const auto& s : samples) {
    SampleRecord rec;
    rec.poi_id = s.poi_id;
    rec.truth = static_cast<double>(s.target_value);
    rec.predicted = std::max(0.0, std::round(m.mob_forward(s.obs_values)));
    records.push_back(std::move(rec));
  }
  return finalize(std::move(records));
}

EvalResult baseline_naive(const std::vector<corpus::Sample>& samples) {
  require(!samples.empty(), ErrorCode::empty_input, "no samples to evaluate");
  std::vector<SampleRecord> records;
  records.reserve(samples.size());
  for (const auto& s : samples) {
    require(!s.obs_values.empty(), ErrorCode::empty_input,
            "sample without observations");
    SampleRecord rec;
    rec.poi_id = s.poi_id;
    rec.truth = static_cast<double>(s.target_value);
    rec.predicted = static_cast<double>(s.obs_values.back());
    records.push_back(std::move(rec));
  }
  return finalize(std::move(records));
}

EvalResult baseline_lr(const std::vector<corpus::Sample>& train,
                       const std::vector<corpus::Sample>& test) {
  require(!test.empty(), ErrorCode::empty_input, "no samples to evaluate");
  std::size_t obs = test.front().obs_values.size();

  bool solvable = train.size() >= obs + 1;
  for (const auto& s : train)
    if (s.obs_values.size() != obs) solvable = false;

  Eigen::VectorXd w;
  if (solvable) {
    Eigen::MatrixXd x(static_cast<Eigen::Index>(train.size()),
                      static_cast<Eigen::Index>(obs) + 1);
    Eigen::VectorXd y(static_cast<Eigen::Index>(train.size()));
    for (std::size_t i = 0; i < train.size(); ++i) {
      auto r = static_cast<Eigen::Index>(i);
      x(r, 0) = 1.0;
      for (std::size_t j = 0; j < obs; ++j)
        x(r, static_cast<Eigen::Index>(j) + 1) =
            static_cast<double>(train[i].obs_values[j]);
      y(r) = static_cast<double>(train[i].target_value);
    }
    auto qr = x.colPivHouseholderQr();
    w = qr.solve(y);
    if (qr.rank() == 0 || !w.allFinite()) solvable = false;
  }
  if (!solvable) {
    std::cerr << error_code_name(ErrorCode::singular_system)
              << ": least-squares fit is degenerate, "
                 "falling back to the naive baseline\n";
    return baseline_naive(test);
  }

  std::vector<SampleRecord> records;
  records.reserve(test.size());
  for (const auto& s : test) {
    require(s.obs_values.size() == obs, ErrorCode::shape_mismatch,
            "test window length differs from the fitted window");
    double pred = w(0);
    for (std::size_t j = 0; j < obs; ++j)
      pred += w(static_cast<Eigen::Index>(j) + 1) *
              static_cast<double>(s.obs_values[j]);
    SampleRecord rec;
    rec.poi_id = s.poi_id;
    rec.truth = static_cast<double>(s.target_value);
    rec.predicted = pred;
    records.push_back(std::move(rec));
  }
  return finalize(std::move(records));
}

void export_attention(model::Model& m, const corpus::Sample& s,
                      const tok::Vocabulary& vocab, text::PromptVariant variant,
                      const std::string& json_path, const std::string& svg_path) {
  require(m.vocab_hash == vocab.hash(), ErrorCode::vocab_mismatch,
          "checkpoint was built against a different vocabulary");
  std::string prompt = text::render_prompt(s, variant).text;
  std::vector<int> prompt_ids = tok::encode(prompt, vocab, false).ids;
  tok::TokenSequence gen = m.nl_generate(prompt_ids, m.cfg.max_target_len);
  std::vector<int> output_ids(gen.ids.begin() + 1, gen.ids.end());
  require(!output_ids.empty(), ErrorCode::empty_input,
          "generation produced no tokens");

  std::vector<nn::Matrix> maps = m.attention_maps(prompt_ids, output_ids);

  nlohmann::json j;
  j["prompt_tokens"] = nlohmann::json::array();
  for (int id : prompt_ids) j["prompt_tokens"].push_back(vocab.token_of(id));
  j["output_tokens"] = nlohmann::json::array();
  for (int id : output_ids) j["output_tokens"].push_back(vocab.token_of(id));
  j["layers"] = nlohmann::json::array();
  for (const auto& a : maps) {
    nlohmann::json rows = nlohmann::json::array();
    for (Eigen::Index r = 0; r < a.rows(); ++r) {
      nlohmann::json row = nlohmann::json::array();
      for (Eigen::Index c = 0; c < a.cols(); ++c) row.push_back(a(r, c));
      rows.push_back(row);
    }
    j["layers"].push_back(rows);
  }
  {
    std::ofstream out(json_path, std::ios::binary);
    require(out.good(), ErrorCode::io_error, "cannot write " + json_path);
    out << j.dump(2) << "\n";
    require(out.good(), ErrorCode::io_error, "write failed: " + json_path);
  }

  if (svg_path.empty()) return;

  const int cell = 22;
  const int left = 120;   // room for output-token labels
  const int top = 110;    // room for prompt-token labels
  const int layer_gap = 40;
  auto rows = maps.empty() ? 0 : maps[0].rows();
  auto cols = maps.empty() ? 0 : maps[0].cols();
  auto layer_height = top + rows * cell + layer_gap;
  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\""
      << left + cols * cell + 20 << "\" height=\""
      << static_cast<Eigen::Index>(maps.size()) * layer_height
      << "\" font-family=\"monospace\" font-size=\"11\">\n";
  for (std::size_t l = 0; l < maps.size(); ++l) {
    const auto& a = maps[l];
    auto y0 = static_cast<Eigen::Index>(l) * layer_height;
    svg << "<text x=\"8\" y=\"" << y0 + 16 << "\">layer " << l << "</text>\n";
    for (Eigen::Index c = 0; c < a.cols(); ++c) {
      auto x = left + c * cell + cell / 2;
      svg << "<text x=\"" << x << "\" y=\"" << y0 + top - 8
          << "\" transform=\"rotate(-60 " << x << " " << y0 + top - 8
          << ")\">" << xml_escape(vocab.token_of(prompt_ids[c])) << "</text>\n";
    }
    for (Eigen::Index r = 0; r < a.rows(); ++r) {
      svg << "<text x=\"" << left - 8 << "\" y=\""
          << y0 + top + r * cell + cell - 7 << "\" text-anchor=\"end\">"
          << xml_escape(vocab.token_of(output_ids[r])) << "</text>\n";
      for (Eigen::Index c = 0; c < a.cols(); ++c) {
        svg << "<rect x=\"" << left + c * cell << "\" y=\"" << y0 + top + r * cell
            << "\" width=\"" << cell << "\" height=\"" << cell << "\" fill=\""
            << color_for(a(r, c)) << "\" stroke=\"#ccc\"/>\n";
      }
    }
  }
  svg << "</svg>\n";
  std::ofstream out(svg_path, std::ios::binary);
  require(out.good(), ErrorCode::io_error, "cannot write " + svg_path);
  out << svg.str();
  require(out.good(), ErrorCode::io_error, "write failed: " + svg_path);
}

std::string summary_table(const std::vector<SummaryRow>& rows) {
  std::ostringstream out;
  out << "| method | RMSE | MAE |\n| --- | --- | --- |\n";
  for (const auto& r : rows) {
    require(!r.rmse_runs.empty() && r.rmse_runs.size() == r.mae_runs.size(),
            ErrorCode::shape_mismatch, "summary row needs matched runs");
    out << "| " << r.method << " | " << format_mean_std(r.rmse_runs) << " | "
        << format_mean_std(r.mae_runs) << " |\n";
  }
  return out.str();
}

}  // namespace shift::eval
