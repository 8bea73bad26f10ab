#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "shift/params.hpp"
#include "shift/tape.hpp"
#include "shift/tokenizer.hpp"

namespace shift::model {

struct ModelConfig {
  Eigen::Index d = 64;
  int n_layers = 2;
  int n_heads = 4;
  Eigen::Index ff_width = 256;
  double dropout = 0.2;
  int max_prompt_len = 128;
  int max_target_len = 24;
  int obs = 7;
  int vocab_size = 0;

  void validate() const;
  std::string to_json() const;
  static ModelConfig from_json(const std::string& text);
};

enum class Mode { basic, siamese, momentum };

Mode mode_from_string(const std::string& tag);
const char* mode_to_string(Mode m);

/// z-normalization constants for visit counts, fitted on training windows
/// and carried inside the checkpoint.
struct NormStats {
  double mean = 0.0;
  double std = 1.0;
};

/// Per-pass switches. dropout_key seeds every dropout site (mixed with the
/// site name), so a (seed, step) pair pins all masks of the pass.
struct Forward {
  bool train = false;
  std::uint64_t dropout_key = 0;
  /// When set, decoder passes append one head-averaged cross-attention
  /// matrix per layer (rows: decoder positions, cols: prompt positions).
  std::vector<nn::Matrix>* cross_attention = nullptr;
};

/// Both SHIFT branches over one parameter store. The sentence branch is a
/// standard pre-norm transformer encoder-decoder; the numeric branch embeds
/// a z-scored count window, runs an encoder with tensor names mirroring the
/// sentence encoder (so weights can be shared or averaged across branches),
/// and regresses a scalar through a two-layer head.
class Model {
 public:
  Model(ModelConfig cfg, std::uint64_t seed);

  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
  Model(Model&&) = default;

  ModelConfig cfg;
  nn::ParamSet params;
  /// Sinusoidal table, recomputed from cfg rather than checkpointed. Tests
  /// may zero it to probe position sensitivity.
  nn::Matrix positions;
  NormStats norm;
  Mode mode = Mode::basic;
  std::uint64_t vocab_hash = 0;

  /// Adjusts which tensors train: the mirror encoder is frozen in momentum
  /// mode (it only receives averaged weights) and in siamese mode (it is a
  /// copy kept in lockstep with the sentence encoder after each step).
  void set_mode(Mode m);

  // Sentence branch.
  ad::Expr nl_encode(ad::Tape& t, const std::vector<int>& prompt_ids,
                     const Forward& f);
  /// Teacher-forcing decoder pass: logits for every prefix position,
  /// shape len x vocab.
  ad::Expr nl_decode(ad::Tape& t, const std::vector<int>& prefix_ids,
                     ad::Expr h_n, const Forward& f);
  /// Next-token distribution after the prefix (eval mode).
  Eigen::VectorXd nl_decode_step(const std::vector<int>& prefix_ids,
                                 const std::vector<int>& prompt_ids);
  /// Greedy decode from BOS; stops at EOS or after max_len emitted tokens.
  /// The returned sequence includes the leading BOS.
  tok::TokenSequence nl_generate(const std::vector<int>& prompt_ids,
                                 int max_len);

  // Numeric branch.
  /// Prediction in normalized units, shape 1x1.
  ad::Expr mob_forward_expr(ad::Tape& t, const std::vector<std::int64_t>& window,
                            const Forward& f);
  /// Denormalized eval-mode prediction.
  double mob_forward(const std::vector<std::int64_t>& window);

  /// One head-averaged cross-attention matrix per decoder layer for a
  /// (prompt, output) pair; rows match output_ids, columns match prompt_ids.
  std::vector<nn::Matrix> attention_maps(const std::vector<int>& prompt_ids,
                                         const std::vector<int>& output_ids);

  std::size_t param_count(bool trainable_only = false) const;
  /// Counts keyed by tensor-name group ("nl.enc", "mob.head", ...).
  std::map<std::string, std::size_t> param_count_by_group(
      bool trainable_only = false) const;

  /// Encoder tensor names relative to their branch prefix, in creation order.
  const std::vector<std::string>& encoder_tensor_names() const {
    return encoder_names_;
  }
  /// Copies sentence-encoder weights into the mirror encoder.
  void sync_mob_encoder();

  /// Binary weights at `path` plus a `path.json` sidecar (config, mode,
  /// vocabulary hash, normalization stats).
  void save(const std::string& path) const;
  static Model load(const std::string& path);

 private:
  Model() = default;

  void build_tensors(std::uint64_t seed);

  ad::Expr embed_tokens(ad::Tape& t, const std::vector<int>& ids,
                        const std::string& site, const Forward& f);
  ad::Expr encoder_forward(ad::Tape& t, ad::Expr x, const std::string& prefix,
                           const Forward& f);
  ad::Expr decoder_forward(ad::Tape& t, ad::Expr x, ad::Expr memory,
                           const Forward& f);
  ad::Expr attention_block(ad::Tape& t, ad::Expr q_in, ad::Expr kv_in,
                           const std::string& prefix, bool causal,
                           const Forward& f, nn::Matrix* capture);
  ad::Expr ff_block(ad::Tape& t, ad::Expr x, const std::string& prefix,
                    const Forward& f);
  ad::Expr linear(ad::Tape& t, ad::Expr x, const std::string& w,
                  const std::string& b);
  ad::Expr norm_block(ad::Tape& t, ad::Expr x, const std::string& prefix);
  nn::ParamTensor& at(const std::string& name);
  std::string mob_encoder_prefix() const;

  std::vector<std::string> encoder_names_;
};

}  // namespace shift::model
