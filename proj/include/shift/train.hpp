#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "shift/corpus.hpp"
#include "shift/eval.hpp"
#include "shift/model.hpp"
#include "shift/optim.hpp"
#include "shift/tape.hpp"
#include "shift/text_template.hpp"
#include "shift/tokenizer.hpp"

namespace shift::train {

struct LrDecay {
  double factor = 0.5;
  int patience = 3;
};

struct TrainConfig {
  model::Mode mode = model::Mode::momentum;
  double alpha_loss = 0.01;  // weight of the numeric loss in the joint loss
  double alpha_m = 0.001;    // averaging factor for the mirror encoder
  int batch_size = 64;
  int epochs = 36;
  double lr = 1e-4;
  LrDecay decay;
  double grad_clip = 1.0;  // global-norm ceiling; 0 or negative disables
  std::uint64_t seed = 0;
  std::string checkpoint_dir;  // empty: keep everything in memory
  int val_limit = 0;           // cap validation samples per epoch; 0 = all
  text::PromptVariant variant = text::PromptVariant::A;
  std::ostream* progress = nullptr;  // per-epoch human log sink; not config

  void validate() const;
};

/// One training example with both branch views prepared.
struct Instance {
  std::vector<int> prompt_ids;     // prompt tokens, no specials
  std::vector<int> decoder_input;  // BOS + target tokens
  std::vector<int> labels;         // target tokens + EOS
  std::vector<std::int64_t> window;
  double target_z = 0.0;  // normalized truth for the numeric branch
};

struct EpochStats {
  double loss = 0.0;
  double loss_nl = 0.0;
  double loss_mob = 0.0;
  double grad_norm_nl = 0.0;   // mean per-step pre-clip norm, sentence branch
  double grad_norm_mob = 0.0;  // mean per-step pre-clip norm, numeric branch
  long steps = 0;
};

struct EpochMetrics {
  int epoch = 0;
  EpochStats stats;
  double val_rmse = 0.0;
  double val_mae = 0.0;
  double val_parse_failure_rate = 0.0;
  double lr = 0.0;
};

struct TrainReport {
  std::vector<EpochMetrics> epochs;
  int best_epoch = 0;  // 1-based; 0 when no epoch ran
  double best_val_rmse = 0.0;
  std::string checkpoint_path;  // empty when checkpoint_dir was empty

  /// One JSON object per epoch, then one trailer object with the best-epoch
  /// pointer. No timestamps, so identical runs emit identical bytes.
  std::string to_jsonl() const;
};

/// Cross-entropy summed over every sample and position, PAD positions
/// excluded, divided by the number of non-PAD positions. `logits` are
/// len x vocab per sample; `targets` give one label per logit row.
ad::Expr loss_nl(ad::Tape& t, const std::vector<ad::Expr>& logits,
                 const std::vector<std::vector<int>>& targets);

/// Mean squared error over a batch of 1x1 predictions, normalized units.
ad::Expr loss_mob(ad::Tape& t, const std::vector<ad::Expr>& preds,
                  const std::vector<double>& truths);

/// (1-alpha)*nl + alpha*mob.
ad::Expr loss_total(ad::Tape& t, ad::Expr nl, ad::Expr mob, double alpha_loss);
double loss_total(double nl, double mob, double alpha_loss);

/// In-place update dst <- alpha*src + (1-alpha)*dst on one tensor.
void momentum_blend(nn::Matrix& dst, const nn::Matrix& src, double alpha_m);

/// Applies momentum_blend across every mirror-encoder tensor of the model.
void momentum_update(model::Model& m, double alpha_m);

/// Normalization constants over all window and target values of the samples.
model::NormStats fit_norm(const std::vector<corpus::Sample>& samples);

/// Renders, tokenizes and normalizes samples into training instances.
std::vector<Instance> prepare_instances(const std::vector<corpus::Sample>& samples,
                                        const tok::Vocabulary& vocab,
                                        const model::Model& m,
                                        text::PromptVariant variant);

/// One pass over the data in deterministic shuffled order: per batch, both
/// branch forwards, joint loss, backward, clip, optimizer step, then the
/// mode's coupling action (mirror sync or averaged update).
EpochStats train_epoch(model::Model& m, nn::Adam& opt,
                       const std::vector<Instance>& data, const TrainConfig& cfg,
                       int epoch_index);

/// Full training loop: fits normalization stats, runs epochs of train_epoch,
/// validates with sentence-branch generation after each, decays lr on RMSE
/// plateaus, and keeps the best-validation checkpoint.
TrainReport train(model::Model& m, const tok::Vocabulary& vocab,
                  const std::vector<corpus::Sample>& train_samples,
                  const std::vector<corpus::Sample>& val_samples,
                  const TrainConfig& cfg);

}  // namespace shift::train
