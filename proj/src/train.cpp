#include "shift/train.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>

#include "json.hpp"
#include "shift/error.hpp"
#include "shift/rng.hpp"

namespace shift::train {

using ad::Expr;
using ad::Tape;

void TrainConfig::validate() const {
  bool ok = alpha_loss >= 0.0 && alpha_loss <= 1.0 && alpha_m >= 0.0 &&
            alpha_m <= 1.0 && batch_size >= 1 && epochs >= 0 && lr >= 0.0 &&
            decay.factor > 0.0 && decay.factor <= 1.0 && decay.patience >= 1 &&
            val_limit >= 0;
  require(ok, ErrorCode::invalid_argument, "invalid train config");
}

Expr loss_nl(Tape& t, const std::vector<Expr>& logits,
             const std::vector<std::vector<int>>& targets) {
  require(logits.size() == targets.size(), ErrorCode::shape_mismatch,
          std::to_string(logits.size()) + " logit blocks for " +
              std::to_string(targets.size()) + " target rows");
  require(!logits.empty(), ErrorCode::empty_target, "empty batch");

  Expr total{};
  long count = 0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    auto rows = logits[i].rows();
    require(static_cast<Eigen::Index>(targets[i].size()) == rows,
            ErrorCode::shape_mismatch,
            "sample " + std::to_string(i) + ": " +
                std::to_string(targets[i].size()) + " labels for " +
                std::to_string(rows) + " positions");
    nn::Matrix mask(rows, 1);
    for (Eigen::Index r = 0; r < rows; ++r) {
      bool pad = targets[i][static_cast<std::size_t>(r)] == tok::kPad;
      mask(r, 0) = pad ? 0.0 : 1.0;
      if (!pad) ++count;
    }
    Expr picked = t.pick_per_row(t.log_softmax_rows(logits[i]), targets[i]);
    Expr masked = t.hadamard(picked, t.constant(std::move(mask)));
    total = (i == 0) ? t.sum(masked) : t.add(total, t.sum(masked));
  }
  require(count > 0, ErrorCode::empty_target, "every position is padding");
  return t.scale(total, -1.0 / static_cast<double>(count));
}

Expr loss_mob(Tape& t, const std::vector<Expr>& preds,
              const std::vector<double>& truths) {
  require(preds.size() == truths.size(), ErrorCode::shape_mismatch,
          std::to_string(preds.size()) + " predictions for " +
              std::to_string(truths.size()) + " truths");
  require(!preds.empty(), ErrorCode::shape_mismatch, "empty batch");

  Expr total{};
  for (std::size_t i = 0; i < preds.size(); ++i) {
    require(preds[i].rows() == 1 && preds[i].cols() == 1,
            ErrorCode::shape_mismatch, "prediction is not a scalar");
    Expr diff =
        t.add(preds[i], t.constant(nn::Matrix::Constant(1, 1, -truths[i])));
    Expr sq = t.hadamard(diff, diff);
    total = (i == 0) ? sq : t.add(total, sq);
  }
  return t.scale(total, 1.0 / static_cast<double>(preds.size()));
}

Expr loss_total(Tape& t, Expr nl, Expr mob, double alpha_loss) {
  require(alpha_loss >= 0.0 && alpha_loss <= 1.0, ErrorCode::invalid_argument,
          "loss weight outside [0,1]");
  return t.add(t.scale(nl, 1.0 - alpha_loss), t.scale(mob, alpha_loss));
}

double loss_total(double nl, double mob, double alpha_loss) {
  require(alpha_loss >= 0.0 && alpha_loss <= 1.0, ErrorCode::invalid_argument,
          "loss weight outside [0,1]");
  return (1.0 - alpha_loss) * nl + alpha_loss * mob;
}

void momentum_blend(nn::Matrix& dst, const nn::Matrix& src, double alpha_m) {
  require(dst.rows() == src.rows() && dst.cols() == src.cols(),
          ErrorCode::shape_mismatch, "blended tensors differ in shape");
  require(alpha_m >= 0.0 && alpha_m <= 1.0, ErrorCode::invalid_argument,
          "averaging factor outside [0,1]");
  dst = alpha_m * src + (1.0 - alpha_m) * dst;
}

void momentum_update(model::Model& m, double alpha_m) {
  for (const std::string& rel : m.encoder_tensor_names())
    momentum_blend(m.params.at("mob.enc." + rel).value,
                   m.params.at("nl.enc." + rel).value, alpha_m);
}

model::NormStats fit_norm(const std::vector<corpus::Sample>& samples) {
  require(!samples.empty(), ErrorCode::empty_input, "no samples to fit");
  double sum = 0.0, sq = 0.0;
  long n = 0;
  auto feed = [&](std::int64_t v) {
    double x = static_cast<double>(v);
    sum += x;
    sq += x * x;
    ++n;
  };
  for (const auto& s : samples) {
    for (std::int64_t v : s.obs_values) feed(v);
    feed(s.target_value);
  }
  model::NormStats out;
  out.mean = sum / static_cast<double>(n);
  double var = sq / static_cast<double>(n) - out.mean * out.mean;
  out.std = var > 0.0 ? std::sqrt(var) : 1.0;
  return out;
}

std::vector<Instance> prepare_instances(const std::vector<corpus::Sample>& samples,
                                        const tok::Vocabulary& vocab,
                                        const model::Model& m,
                                        text::PromptVariant variant) {
  std::vector<Instance> out;
  out.reserve(samples.size());
  double sd = m.norm.std > 0.0 ? m.norm.std : 1.0;
  for (const auto& s : samples) {
    Instance inst;
    inst.prompt_ids =
        tok::encode(text::render_prompt(s, variant).text, vocab, false).ids;
    require(static_cast<int>(inst.prompt_ids.size()) <= m.cfg.max_prompt_len,
            ErrorCode::sequence_too_long,
            "prompt of " + std::to_string(inst.prompt_ids.size()) +
                " tokens, limit " + std::to_string(m.cfg.max_prompt_len));
    std::vector<int> target =
        tok::encode(text::render_target(s).text, vocab, true).ids;
    require(static_cast<int>(target.size()) <= m.cfg.max_target_len + 2,
            ErrorCode::sequence_too_long,
            "target of " + std::to_string(target.size()) + " tokens, limit " +
                std::to_string(m.cfg.max_target_len + 2));
    inst.decoder_input.assign(target.begin(), target.end() - 1);
    inst.labels.assign(target.begin() + 1, target.end());
    require(static_cast<int>(s.obs_values.size()) == m.cfg.obs,
            ErrorCode::wrong_length,
            "window of " + std::to_string(s.obs_values.size()) +
                " days, expected " + std::to_string(m.cfg.obs));
    inst.window = s.obs_values;
    inst.target_z = (static_cast<double>(s.target_value) - m.norm.mean) / sd;
    out.push_back(std::move(inst));
  }
  return out;
}

EpochStats train_epoch(model::Model& m, nn::Adam& opt,
                       const std::vector<Instance>& data, const TrainConfig& cfg,
                       int epoch_index) {
  cfg.validate();
  require(!data.empty(), ErrorCode::empty_input, "no training instances");

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  deterministic_shuffle(order,
                        mix_seed(cfg.seed, 0x65706f6368ull,
                                 static_cast<std::uint64_t>(epoch_index)));

  EpochStats agg;
  std::size_t cursor = 0;
  int step = 0;
  while (cursor < order.size()) {
    std::size_t batch_end =
        std::min(order.size(), cursor + static_cast<std::size_t>(cfg.batch_size));
    double ln_v = 0.0, lm_v = 0.0, l_v = 0.0;
    {
      // Finite checks are deferred to the loss: one guard per batch instead
      // of one scan per op.
      Tape t(true, false);
      std::vector<Expr> logits, preds;
      std::vector<std::vector<int>> targets;
      std::vector<double> truths;
      for (std::size_t k = cursor; k < batch_end; ++k) {
        const Instance& inst = data[order[k]];
        model::Forward f;
        f.train = true;
        f.dropout_key =
            mix_seed(cfg.seed,
                     mix_seed(static_cast<std::uint64_t>(epoch_index),
                              static_cast<std::uint64_t>(step)),
                     static_cast<std::uint64_t>(k - cursor));
        Expr h = m.nl_encode(t, inst.prompt_ids, f);
        logits.push_back(m.nl_decode(t, inst.decoder_input, h, f));
        targets.push_back(inst.labels);
      }
      for (std::size_t k = cursor; k < batch_end; ++k) {
        const Instance& inst = data[order[k]];
        model::Forward f;
        f.train = true;
        f.dropout_key =
            mix_seed(cfg.seed,
                     mix_seed(static_cast<std::uint64_t>(epoch_index),
                              static_cast<std::uint64_t>(step)),
                     static_cast<std::uint64_t>(k - cursor));
        preds.push_back(m.mob_forward_expr(t, inst.window, f));
        truths.push_back(inst.target_z);
      }
      Expr l_n = loss_nl(t, logits, targets);
      Expr l_m = loss_mob(t, preds, truths);
      Expr l = loss_total(t, l_n, l_m, cfg.alpha_loss);
      ln_v = l_n.scalar();
      lm_v = l_m.scalar();
      l_v = l.scalar();
      if (!std::isfinite(l_v)) {
        std::ostringstream ss;
        ss << "epoch " << epoch_index << " step " << step << ": loss " << l_v
           << " (sentence " << ln_v << ", numeric " << lm_v << ")";
        fail(ErrorCode::non_finite_loss, ss.str());
      }
      m.params.zero_grads();
      t.backward(l);
    }
    double nl_sq = 0.0, mob_sq = 0.0;
    for (const auto& tp : m.params.tensors()) {
      if (!tp->trainable) continue;
      double sq = tp->grad.squaredNorm();
      (tp->name.rfind("nl.", 0) == 0 ? nl_sq : mob_sq) += sq;
    }
    if (cfg.grad_clip > 0.0) nn::clip_global_norm(m.params, cfg.grad_clip);
    opt.step(m.params);
    if (cfg.mode == model::Mode::siamese)
      m.sync_mob_encoder();
    else if (cfg.mode == model::Mode::momentum)
      momentum_update(m, cfg.alpha_m);

    agg.loss += l_v;
    agg.loss_nl += ln_v;
    agg.loss_mob += lm_v;
    agg.grad_norm_nl += std::sqrt(nl_sq);
    agg.grad_norm_mob += std::sqrt(mob_sq);
    ++agg.steps;
    ++step;
    cursor = batch_end;
  }
  double n = static_cast<double>(agg.steps);
  agg.loss /= n;
  agg.loss_nl /= n;
  agg.loss_mob /= n;
  agg.grad_norm_nl /= n;
  agg.grad_norm_mob /= n;
  return agg;
}

std::string TrainReport::to_jsonl() const {
  std::ostringstream out;
  for (const auto& e : epochs) {
    nlohmann::json j;
    j["epoch"] = e.epoch;
    j["loss"] = e.stats.loss;
    j["loss_nl"] = e.stats.loss_nl;
    j["loss_mob"] = e.stats.loss_mob;
    j["grad_norm_nl"] = e.stats.grad_norm_nl;
    j["grad_norm_mob"] = e.stats.grad_norm_mob;
    j["lr"] = e.lr;
    j["val_rmse"] = e.val_rmse;
    j["val_mae"] = e.val_mae;
    j["val_parse_failure_rate"] = e.val_parse_failure_rate;
    out << j.dump() << "\n";
  }
  nlohmann::json trailer;
  trailer["best_epoch"] = best_epoch;
  trailer["best_val_rmse"] = best_val_rmse;
  trailer["checkpoint"] = checkpoint_path;
  out << trailer.dump() << "\n";
  return out.str();
}

TrainReport train(model::Model& m, const tok::Vocabulary& vocab,
                  const std::vector<corpus::Sample>& train_samples,
                  const std::vector<corpus::Sample>& val_samples,
                  const TrainConfig& cfg) {
  cfg.validate();
  require(m.cfg.vocab_size == static_cast<int>(vocab.size()),
          ErrorCode::vocab_mismatch,
          "model was sized for " + std::to_string(m.cfg.vocab_size) +
              " tokens, vocabulary has " + std::to_string(vocab.size()));
  require(!val_samples.empty(), ErrorCode::empty_input, "no validation samples");

  m.set_mode(cfg.mode);
  m.vocab_hash = vocab.hash();
  m.norm = fit_norm(train_samples);
  std::vector<Instance> instances =
      prepare_instances(train_samples, vocab, m, cfg.variant);

  std::string best_path;
  if (!cfg.checkpoint_dir.empty()) {
    std::filesystem::create_directories(cfg.checkpoint_dir);
    best_path = (std::filesystem::path(cfg.checkpoint_dir) / "best.bin").string();
  }

  std::vector<corpus::Sample> val_subset;
  const std::vector<corpus::Sample>* val = &val_samples;
  if (cfg.val_limit > 0 &&
      val_samples.size() > static_cast<std::size_t>(cfg.val_limit)) {
    val_subset.assign(val_samples.begin(),
                      val_samples.begin() + cfg.val_limit);
    val = &val_subset;
  }

  TrainReport report;
  if (cfg.epochs == 0) {
    if (!best_path.empty()) {
      m.save(best_path);
      report.checkpoint_path = best_path;
    }
    return report;
  }

  nn::Adam opt(cfg.lr);
  double best = std::numeric_limits<double>::infinity();
  int stale = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    EpochMetrics em;
    em.epoch = epoch;
    em.lr = opt.lr();
    em.stats = train_epoch(m, opt, instances, cfg, epoch);
    eval::EvalResult ev = eval::evaluate_nl(m, *val, vocab, cfg.variant);
    em.val_rmse = ev.rmse;
    em.val_mae = ev.mae;
    em.val_parse_failure_rate = ev.parse_failure_rate;
    report.epochs.push_back(em);
    if (cfg.progress != nullptr) {
      (*cfg.progress) << "epoch " << epoch << "/" << cfg.epochs
                      << " loss=" << em.stats.loss << " loss_nl=" << em.stats.loss_nl
                      << " loss_mob=" << em.stats.loss_mob << " val_rmse=" << em.val_rmse
                      << " lr=" << em.lr << std::endl;
    }

    if (ev.rmse < best) {
      best = ev.rmse;
      report.best_epoch = epoch;
      report.best_val_rmse = best;
      stale = 0;
      if (!best_path.empty()) m.save(best_path);
    } else if (++stale >= cfg.decay.patience) {
      opt.set_lr(opt.lr() * cfg.decay.factor);
      stale = 0;
    }
  }
  report.checkpoint_path = best_path;
  return report;
}

}  // namespace shift::train
