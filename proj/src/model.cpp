#include "shift/model.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "shift/dense.hpp"
#include "shift/error.hpp"
#include "shift/rng.hpp"

namespace shift::model {

using ad::Expr;
using ad::Tape;
using nn::Matrix;

void ModelConfig::validate() const {
  bool ok = d >= 1 && n_layers >= 1 && n_heads >= 1 && d % n_heads == 0 &&
            ff_width >= 1 && dropout >= 0.0 && dropout < 1.0 &&
            max_prompt_len >= 1 && max_target_len >= 1 && obs >= 1 &&
            vocab_size >= 5;
  require(ok, ErrorCode::invalid_argument, "invalid model config");
}

std::string ModelConfig::to_json() const {
  nlohmann::json j;
  j["d"] = d;
  j["n_layers"] = n_layers;
  j["n_heads"] = n_heads;
  j["ff_width"] = ff_width;
  j["dropout"] = dropout;
  j["max_prompt_len"] = max_prompt_len;
  j["max_target_len"] = max_target_len;
  j["obs"] = obs;
  j["vocab_size"] = vocab_size;
  return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::invalid_argument, std::string("bad model config: ") + e.what());
  }
  ModelConfig c;
  try {
    if (j.contains("d")) c.d = j["d"].get<Eigen::Index>();
    if (j.contains("n_layers")) c.n_layers = j["n_layers"].get<int>();
    if (j.contains("n_heads")) c.n_heads = j["n_heads"].get<int>();
    if (j.contains("ff_width")) c.ff_width = j["ff_width"].get<Eigen::Index>();
    if (j.contains("dropout")) c.dropout = j["dropout"].get<double>();
    if (j.contains("max_prompt_len"))
      c.max_prompt_len = j["max_prompt_len"].get<int>();
    if (j.contains("max_target_len"))
      c.max_target_len = j["max_target_len"].get<int>();
    if (j.contains("obs")) c.obs = j["obs"].get<int>();
    if (j.contains("vocab_size")) c.vocab_size = j["vocab_size"].get<int>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::invalid_argument, std::string("bad model config: ") + e.what());
  }
  return c;
}

Mode mode_from_string(const std::string& tag) {
  if (tag == "basic") return Mode::basic;
  if (tag == "siamese") return Mode::siamese;
  if (tag == "momentum") return Mode::momentum;
  fail(ErrorCode::invalid_argument, "unknown mode '" + tag + "'");
}

const char* mode_to_string(Mode m) {
  switch (m) {
    case Mode::basic: return "basic";
    case Mode::siamese: return "siamese";
    case Mode::momentum: return "momentum";
  }
  return "basic";
}

namespace {

std::vector<std::string> encoder_layer_names(int n_layers) {
  std::vector<std::string> names;
  for (int l = 0; l < n_layers; ++l) {
    std::string p = "layer" + std::to_string(l) + ".";
    for (const char* s : {"ln1.g", "ln1.b", "attn.wq", "attn.bq", "attn.wk",
                          "attn.bk", "attn.wv", "attn.bv", "attn.wo", "attn.bo",
                          "ln2.g", "ln2.b", "ff.w1", "ff.b1", "ff.w2", "ff.b2"})
      names.push_back(p + s);
  }
  names.push_back("final.g");
  names.push_back("final.b");
  return names;
}

Matrix causal_mask(Eigen::Index n) {
  Matrix m = Matrix::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i + 1; j < n; ++j) m(i, j) = -1e9;
  return m;
}

}  // namespace

Model::Model(ModelConfig config, std::uint64_t seed) {
  config.validate();
  cfg = config;
  Eigen::Index pos_rows = std::max<Eigen::Index>(
      {cfg.max_prompt_len, cfg.max_target_len + 2, cfg.obs});
  positions = nn::sinusoidal_positions(pos_rows, cfg.d);
  encoder_names_ = encoder_layer_names(cfg.n_layers);
  build_tensors(seed);
}

void Model::build_tensors(std::uint64_t seed) {
  auto glorot = [&](const std::string& name, Eigen::Index r, Eigen::Index c) {
    params.add(name, nn::glorot_init(r, c, seed, name));
  };
  auto ones = [&](const std::string& name, Eigen::Index c) {
    params.add(name, Matrix::Ones(1, c));
  };
  auto zeros = [&](const std::string& name, Eigen::Index c) {
    params.add(name, Matrix::Zero(1, c));
  };
  auto encoder = [&](const std::string& prefix) {
    for (const std::string& rel : encoder_names_) {
      std::string name = prefix + "." + rel;
      auto tail = rel.substr(rel.rfind('.') + 1);
      if (rel.find("ln") != std::string::npos || rel.find("final") == 0) {
        if (tail == "g")
          ones(name, cfg.d);
        else
          zeros(name, cfg.d);
      } else if (tail == "w1") {
        glorot(name, cfg.d, cfg.ff_width);
      } else if (tail == "b1") {
        zeros(name, cfg.ff_width);
      } else if (tail == "w2") {
        glorot(name, cfg.ff_width, cfg.d);
      } else if (tail == "b2") {
        zeros(name, cfg.d);
      } else if (tail[0] == 'w') {
        glorot(name, cfg.d, cfg.d);
      } else {
        zeros(name, cfg.d);
      }
    }
  };

  glorot("nl.embed", cfg.vocab_size, cfg.d);
  encoder("nl.enc");

  for (int l = 0; l < cfg.n_layers; ++l) {
    std::string p = "nl.dec.layer" + std::to_string(l) + ".";
    ones(p + "ln1.g", cfg.d);
    zeros(p + "ln1.b", cfg.d);
    for (const char* s : {"self", "cross"}) {
      glorot(p + s + ".wq", cfg.d, cfg.d);
      zeros(p + s + ".bq", cfg.d);
      glorot(p + s + ".wk", cfg.d, cfg.d);
      zeros(p + s + ".bk", cfg.d);
      glorot(p + s + ".wv", cfg.d, cfg.d);
      zeros(p + s + ".bv", cfg.d);
      glorot(p + s + ".wo", cfg.d, cfg.d);
      zeros(p + s + ".bo", cfg.d);
      if (std::string(s) == "self") {
        ones(p + "ln2.g", cfg.d);
        zeros(p + "ln2.b", cfg.d);
      }
    }
    ones(p + "ln3.g", cfg.d);
    zeros(p + "ln3.b", cfg.d);
    glorot(p + "ff.w1", cfg.d, cfg.ff_width);
    zeros(p + "ff.b1", cfg.ff_width);
    glorot(p + "ff.w2", cfg.ff_width, cfg.d);
    zeros(p + "ff.b2", cfg.d);
  }
  ones("nl.dec.final.g", cfg.d);
  zeros("nl.dec.final.b", cfg.d);
  glorot("nl.out.w", cfg.d, cfg.vocab_size);
  zeros("nl.out.b", cfg.vocab_size);

  glorot("mob.embed.w", 1, cfg.d);
  zeros("mob.embed.b", cfg.d);
  encoder("mob.enc");
  glorot("mob.head.w1", cfg.d, cfg.d);
  zeros("mob.head.b1", cfg.d);
  glorot("mob.head.w2", cfg.d, 1);
  params.add("mob.head.b2", Matrix::Zero(1, 1));

  // Both encoders start as one set of weights (the averaged-copy modes rely
  // on this; it is harmless for independent training).
  sync_mob_encoder();
}

void Model::sync_mob_encoder() {
  for (const std::string& rel : encoder_names_)
    at("mob.enc." + rel).value = at("nl.enc." + rel).value;
}

void Model::set_mode(Mode m) {
  mode = m;
  for (const std::string& rel : encoder_names_)
    at("mob.enc." + rel).trainable = (m == Mode::basic);
}

std::string Model::mob_encoder_prefix() const {
  return mode == Mode::siamese ? "nl.enc" : "mob.enc";
}

nn::ParamTensor& Model::at(const std::string& name) { return params.at(name); }

Expr Model::linear(Tape& t, Expr x, const std::string& w, const std::string& b) {
  return t.add_rowvec(t.matmul(x, t.leaf(at(w))), t.leaf(at(b)));
}

Expr Model::norm_block(Tape& t, Expr x, const std::string& prefix) {
  return t.layer_norm(x, t.leaf(at(prefix + ".g")), t.leaf(at(prefix + ".b")));
}

Expr Model::embed_tokens(Tape& t, const std::vector<int>& ids,
                         const std::string& site, const Forward& f) {
  Expr e = t.embedding_lookup(t.leaf(at("nl.embed")), ids);
  e = t.scale(e, std::sqrt(static_cast<double>(cfg.d)));
  Eigen::Index n = static_cast<Eigen::Index>(ids.size());
  e = t.add(e, t.constant(positions.topRows(n)));
  return t.dropout(e, cfg.dropout, f.train, mix_seed(f.dropout_key, hash64(site)));
}

Expr Model::attention_block(Tape& t, Expr q_in, Expr kv_in,
                            const std::string& prefix, bool causal,
                            const Forward& f, Matrix* capture) {
  Eigen::Index dh = cfg.d / cfg.n_heads;
  Expr q = linear(t, q_in, prefix + ".wq", prefix + ".bq");
  Expr k = linear(t, kv_in, prefix + ".wk", prefix + ".bk");
  Expr v = linear(t, kv_in, prefix + ".wv", prefix + ".bv");

  Expr mask{};
  if (causal) mask = t.constant(causal_mask(q_in.rows()));

  std::vector<Expr> heads;
  if (capture) capture->setZero(q.rows(), k.rows());
  for (int h = 0; h < cfg.n_heads; ++h) {
    Expr qh = t.block(q, 0, h * dh, q.rows(), dh);
    Expr kh = t.block(k, 0, h * dh, k.rows(), dh);
    Expr vh = t.block(v, 0, h * dh, v.rows(), dh);
    Expr scores =
        t.scale(t.matmul(qh, t.transpose(kh)), 1.0 / std::sqrt(double(dh)));
    if (causal) scores = t.add(scores, mask);
    Expr attn = t.softmax(scores, 1);
    if (capture) *capture += attn.val();
    heads.push_back(t.matmul(attn, vh));
  }
  if (capture) *capture /= static_cast<double>(cfg.n_heads);

  Expr out = linear(t, t.concat(heads, 1), prefix + ".wo", prefix + ".bo");
  return t.dropout(out, cfg.dropout, f.train,
                   mix_seed(f.dropout_key, hash64(prefix + ".drop")));
}

Expr Model::ff_block(Tape& t, Expr x, const std::string& prefix,
                     const Forward& f) {
  Expr h = t.gelu(linear(t, x, prefix + ".w1", prefix + ".b1"));
  Expr out = linear(t, h, prefix + ".w2", prefix + ".b2");
  return t.dropout(out, cfg.dropout, f.train,
                   mix_seed(f.dropout_key, hash64(prefix + ".drop")));
}

Expr Model::encoder_forward(Tape& t, Expr x, const std::string& prefix,
                            const Forward& f) {
  for (int l = 0; l < cfg.n_layers; ++l) {
    std::string p = prefix + ".layer" + std::to_string(l) + ".";
    Expr n1 = norm_block(t, x, p + "ln1");
    x = t.add(x, attention_block(t, n1, n1, p + "attn", /*causal=*/false, f,
                                 nullptr));
    x = t.add(x, ff_block(t, norm_block(t, x, p + "ln2"), p + "ff", f));
  }
  return norm_block(t, x, prefix + ".final");
}

Expr Model::decoder_forward(Tape& t, Expr x, Expr memory, const Forward& f) {
  for (int l = 0; l < cfg.n_layers; ++l) {
    std::string p = "nl.dec.layer" + std::to_string(l) + ".";
    Expr n1 = norm_block(t, x, p + "ln1");
    x = t.add(x, attention_block(t, n1, n1, p + "self", /*causal=*/true, f,
                                 nullptr));
    Matrix* capture = nullptr;
    if (f.cross_attention) {
      f.cross_attention->emplace_back();
      capture = &f.cross_attention->back();
    }
    Expr n2 = norm_block(t, x, p + "ln2");
    x = t.add(x, attention_block(t, n2, memory, p + "cross", /*causal=*/false,
                                 f, capture));
    x = t.add(x, ff_block(t, norm_block(t, x, p + "ln3"), p + "ff", f));
  }
  return norm_block(t, x, "nl.dec.final");
}

Expr Model::nl_encode(Tape& t, const std::vector<int>& prompt_ids,
                      const Forward& f) {
  require(!prompt_ids.empty(), ErrorCode::empty_input, "empty prompt");
  require(static_cast<int>(prompt_ids.size()) <= cfg.max_prompt_len,
          ErrorCode::sequence_too_long,
          "prompt of " + std::to_string(prompt_ids.size()) + " tokens, limit " +
              std::to_string(cfg.max_prompt_len));
  Expr x = embed_tokens(t, prompt_ids, "nl.enc.embed", f);
  return encoder_forward(t, x, "nl.enc", f);
}

Expr Model::nl_decode(Tape& t, const std::vector<int>& prefix_ids, Expr h_n,
                      const Forward& f) {
  require(!prefix_ids.empty(), ErrorCode::empty_input, "empty decoder prefix");
  require(prefix_ids.front() == tok::kBos, ErrorCode::invalid_argument,
          "decoder prefix must start with BOS");
  require(static_cast<int>(prefix_ids.size()) <= cfg.max_target_len + 1,
          ErrorCode::sequence_too_long,
          "decoder prefix of " + std::to_string(prefix_ids.size()) +
              " tokens, limit " + std::to_string(cfg.max_target_len + 1));
  Expr x = embed_tokens(t, prefix_ids, "nl.dec.embed", f);
  x = decoder_forward(t, x, h_n, f);
  return linear(t, x, "nl.out.w", "nl.out.b");
}

Eigen::VectorXd Model::nl_decode_step(const std::vector<int>& prefix_ids,
                                      const std::vector<int>& prompt_ids) {
  Tape t(false);
  Forward f;
  Expr h_n = nl_encode(t, prompt_ids, f);
  Expr logits = nl_decode(t, prefix_ids, h_n, f);
  Matrix last = logits.val().bottomRows(1);
  return nn::softmax_rows(last).row(0).transpose();
}

tok::TokenSequence Model::nl_generate(const std::vector<int>& prompt_ids,
                                      int max_len) {
  Tape t(false);
  Forward f;
  Expr h_n = nl_encode(t, prompt_ids, f);
  std::vector<int> prefix = {tok::kBos};
  for (int step = 0; step < max_len; ++step) {
    if (static_cast<int>(prefix.size()) > cfg.max_target_len) break;
    Expr logits = nl_decode(t, prefix, h_n, f);
    Eigen::Index next;
    logits.val().bottomRows(1).row(0).maxCoeff(&next);
    prefix.push_back(static_cast<int>(next));
    if (next == tok::kEos) break;
  }
  tok::TokenSequence out;
  out.ids = std::move(prefix);
  return out;
}

Expr Model::mob_forward_expr(Tape& t, const std::vector<std::int64_t>& window,
                             const Forward& f) {
  require(static_cast<int>(window.size()) == cfg.obs, ErrorCode::wrong_length,
          "window of " + std::to_string(window.size()) + " days, expected " +
              std::to_string(cfg.obs));
  double sd = norm.std > 0.0 ? norm.std : 1.0;
  Matrix z(static_cast<Eigen::Index>(window.size()), 1);
  for (std::size_t i = 0; i < window.size(); ++i)
    z(static_cast<Eigen::Index>(i), 0) =
        (static_cast<double>(window[i]) - norm.mean) / sd;

  Expr e = t.matmul(t.constant(std::move(z)), t.leaf(at("mob.embed.w")));
  e = t.scale(e, std::sqrt(static_cast<double>(cfg.d)));
  e = t.add_rowvec(e, t.leaf(at("mob.embed.b")));
  e = t.add(e, t.constant(positions.topRows(cfg.obs)));
  e = t.dropout(e, cfg.dropout, f.train,
                mix_seed(f.dropout_key, hash64("mob.embed.drop")));

  Expr h = encoder_forward(t, e, mob_encoder_prefix(), f);
  Expr pooled = t.mean_over_rows(h);
  Expr hidden = t.gelu(linear(t, pooled, "mob.head.w1", "mob.head.b1"));
  return linear(t, hidden, "mob.head.w2", "mob.head.b2");
}

double Model::mob_forward(const std::vector<std::int64_t>& window) {
  Tape t(false);
  Forward f;
  double z = mob_forward_expr(t, window, f).scalar();
  double sd = norm.std > 0.0 ? norm.std : 1.0;
  return z * sd + norm.mean;
}

std::vector<Matrix> Model::attention_maps(const std::vector<int>& prompt_ids,
                                          const std::vector<int>& output_ids) {
  require(!output_ids.empty(), ErrorCode::empty_input, "no output tokens");
  std::vector<Matrix> maps;
  Tape t(false);
  Forward f;
  f.cross_attention = &maps;
  Expr h_n = nl_encode(t, prompt_ids, f);
  std::vector<int> prefix = {tok::kBos};
  prefix.insert(prefix.end(), output_ids.begin(), output_ids.end() - 1);
  nl_decode(t, prefix, h_n, f);
  return maps;
}

std::size_t Model::param_count(bool trainable_only) const {
  return params.scalar_count(trainable_only);
}

std::map<std::string, std::size_t> Model::param_count_by_group(
    bool trainable_only) const {
  std::map<std::string, std::size_t> out;
  for (const auto& tp : params.tensors()) {
    if (trainable_only && !tp->trainable) continue;
    auto first = tp->name.find('.');
    auto second = tp->name.find('.', first + 1);
    std::string group = tp->name.substr(0, second);
    out[group] += static_cast<std::size_t>(tp->value.size());
  }
  return out;
}

void Model::save(const std::string& path) const {
  params.save(path);
  nlohmann::json j;
  j["config"] = nlohmann::json::parse(cfg.to_json());
  j["mode"] = mode_to_string(mode);
  j["vocab_hash"] = std::to_string(vocab_hash);
  j["norm"] = {{"mean", norm.mean}, {"std", norm.std}};
  std::ofstream out(path + ".json", std::ios::binary);
  require(out.good(), ErrorCode::io_error, "cannot write " + path + ".json");
  out << j.dump(2) << "\n";
  require(out.good(), ErrorCode::io_error, "write failed: " + path + ".json");
}

Model Model::load(const std::string& path) {
  std::ifstream in(path + ".json", std::ios::binary);
  require(in.good(), ErrorCode::io_error, "cannot open " + path + ".json");
  std::ostringstream ss;
  ss << in.rdbuf();
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(ss.str());
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::io_error, std::string("bad checkpoint sidecar: ") + e.what());
  }

  Model m;
  m.cfg = ModelConfig::from_json(j.at("config").dump());
  m.cfg.validate();
  m.params = nn::ParamSet::load(path);
  Eigen::Index pos_rows = std::max<Eigen::Index>(
      {m.cfg.max_prompt_len, m.cfg.max_target_len + 2, m.cfg.obs});
  m.positions = nn::sinusoidal_positions(pos_rows, m.cfg.d);
  m.encoder_names_ = encoder_layer_names(m.cfg.n_layers);
  m.vocab_hash = std::stoull(j.at("vocab_hash").get<std::string>());
  m.norm.mean = j.at("norm").at("mean").get<double>();
  m.norm.std = j.at("norm").at("std").get<double>();
  m.set_mode(mode_from_string(j.at("mode").get<std::string>()));
  require(m.params.contains("nl.embed") && m.params.contains("mob.head.b2"),
          ErrorCode::io_error, "checkpoint is missing expected tensors");
  return m;
}

}  // namespace shift::model
