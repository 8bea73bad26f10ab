#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "shift/corpus.hpp"
#include "shift/model.hpp"
#include "shift/text_template.hpp"
#include "shift/tokenizer.hpp"

namespace shift::eval {

struct SampleRecord {
  std::int64_t poi_id = 0;
  std::string prompt;     // rendered prompt, when a prompt was involved
  std::string generated;  // decoded sentence, when one was generated
  bool parsed = true;     // false: prediction imputed with the last observation
  double predicted = 0.0;
  double truth = 0.0;
};

struct EvalResult {
  double rmse = 0.0;
  double mae = 0.0;
  double parse_failure_rate = 0.0;
  std::size_t n_samples = 0;
  std::vector<SampleRecord> records;

  std::string to_json() const;
};

double rmse(const std::vector<double>& preds, const std::vector<double>& truths);
double mae(const std::vector<double>& preds, const std::vector<double>& truths);

/// Sentence-branch evaluation: render each sample's prompt, generate a
/// target sentence, parse the count out of it. Unparseable generations are
/// imputed with the sample's last observed value and counted in
/// parse_failure_rate.
EvalResult evaluate_nl(model::Model& m, const std::vector<corpus::Sample>& samples,
                       const tok::Vocabulary& vocab, text::PromptVariant variant);

/// Numeric-branch evaluation; predictions are rounded to the nearest
/// non-negative integer count.
EvalResult evaluate_mob(model::Model& m, const std::vector<corpus::Sample>& samples);

/// Predicts every target as the last observed value.
EvalResult baseline_naive(const std::vector<corpus::Sample>& samples);

/// One ordinary-least-squares map (with intercept, no regularization) from
/// the observation window to the target, shared across POIs. Degenerate
/// training systems fall back to the naive baseline with a stderr warning.
EvalResult baseline_lr(const std::vector<corpus::Sample>& train,
                       const std::vector<corpus::Sample>& test);

/// Cross-attention heatmaps for one sample: generates from the prompt, then
/// writes {prompt_tokens, output_tokens, layers} JSON to json_path and, when
/// svg_path is nonempty, an axis-labeled heatmap grid per layer.
void export_attention(model::Model& m, const corpus::Sample& s,
                      const tok::Vocabulary& vocab, text::PromptVariant variant,
                      const std::string& json_path, const std::string& svg_path);

struct SummaryRow {
  std::string method;
  std::vector<double> rmse_runs;
  std::vector<double> mae_runs;
};

/// Markdown table of mean (std) RMSE/MAE per method over repeated runs.
std::string summary_table(const std::vector<SummaryRow>& rows);

}  // namespace shift::eval
