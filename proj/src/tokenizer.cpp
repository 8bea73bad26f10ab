#include "shift/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "shift/error.hpp"
#include "shift/rng.hpp"

namespace shift::tok {

namespace {

const std::vector<std::string> kSpecials = {"<s>", "</s>", "<pad>", "<unk>"};

bool is_integer_token(const std::string& t) {
  if (t.empty()) return false;
  return std::all_of(t.begin(), t.end(),
                     [](unsigned char c) { return std::isdigit(c) != 0; });
}

bool is_split_punct(char c) { return c == '.' || c == ','; }

}  // namespace

std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> out;
  std::string word;
  auto flush_word = [&]() {
    if (word.empty()) return;
    std::size_t begin = 0;
    std::size_t end = word.size();
    std::vector<char> leading, trailing;
    while (begin < end && is_split_punct(word[begin])) leading.push_back(word[begin++]);
    while (end > begin && is_split_punct(word[end - 1])) trailing.push_back(word[--end]);
    for (char c : leading) out.emplace_back(1, c);
    if (end > begin) out.push_back(word.substr(begin, end - begin));
    for (auto it = trailing.rbegin(); it != trailing.rend(); ++it) out.emplace_back(1, *it);
    word.clear();
  };
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      flush_word();
    } else {
      word.push_back(c);
    }
  }
  flush_word();
  return out;
}

int Vocabulary::id_of(const std::string& token) const {
  auto it = token_to_id_.find(token);
  return it == token_to_id_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token_of(int id) const {
  require(id >= 0 && static_cast<std::size_t>(id) < id_to_token_.size(), ErrorCode::unknown_id,
          "token id " + std::to_string(id) + " out of range");
  return id_to_token_[static_cast<std::size_t>(id)];
}

bool Vocabulary::contains(const std::string& token) const {
  return token_to_id_.count(token) > 0;
}

std::uint64_t Vocabulary::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (const std::string& t : id_to_token_) {
    h = mix_seed(h, hash64(t));
  }
  return h;
}

std::string Vocabulary::to_json() const {
  nlohmann::json j;
  j["tokens"] = id_to_token_;
  return j.dump();
}

Vocabulary Vocabulary::from_json(const std::string& json_text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text);
    return from_tokens(j.at("tokens").get<std::vector<std::string>>());
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::io_error, std::string("bad vocabulary JSON: ") + e.what());
  }
}

void Vocabulary::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  require(out.is_open(), ErrorCode::io_error, "cannot write '" + path + "'");
  out << to_json() << '\n';
  require(out.good(), ErrorCode::io_error, "write failed for '" + path + "'");
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.is_open(), ErrorCode::io_error, "cannot open '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return from_json(buf.str());
}

Vocabulary Vocabulary::from_tokens(std::vector<std::string> tokens_in_id_order) {
  require(tokens_in_id_order.size() >= kSpecials.size(), ErrorCode::io_error,
          "vocabulary too small to hold specials");
  for (std::size_t i = 0; i < kSpecials.size(); ++i) {
    require(tokens_in_id_order[i] == kSpecials[i], ErrorCode::io_error,
            "special token mismatch at id " + std::to_string(i));
  }
  Vocabulary v;
  v.id_to_token_ = std::move(tokens_in_id_order);
  for (std::size_t i = 0; i < v.id_to_token_.size(); ++i) {
    auto [it, inserted] = v.token_to_id_.emplace(v.id_to_token_[i], static_cast<int>(i));
    require(inserted, ErrorCode::io_error, "duplicate token '" + v.id_to_token_[i] + "'");
  }
  return v;
}

Vocabulary build_vocab(const std::vector<std::string>& corpus) {
  require(!corpus.empty(), ErrorCode::empty_corpus, "empty corpus");
  std::map<std::string, std::int64_t> freq;
  for (const std::string& sentence : corpus) {
    for (std::string& t : tokenize(sentence)) freq[std::move(t)] += 1;
  }
  require(!freq.empty(), ErrorCode::empty_corpus, "corpus contains no tokens");

  std::vector<std::pair<std::string, std::int64_t>> entries(freq.begin(), freq.end());
  std::stable_sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });

  std::vector<std::string> tokens = kSpecials;
  for (auto& [tok, count] : entries) {
    if (std::find(kSpecials.begin(), kSpecials.end(), tok) == kSpecials.end()) {
      tokens.push_back(tok);
    }
  }
  return Vocabulary::from_tokens(std::move(tokens));
}

TokenSequence encode(const std::string& text, const Vocabulary& v, bool add_specials) {
  TokenSequence ts;
  if (add_specials) ts.ids.push_back(kBos);
  for (const std::string& t : tokenize(text)) {
    if (v.contains(t)) {
      ts.ids.push_back(v.id_of(t));
    } else if (is_integer_token(t)) {
      for (char c : t) ts.ids.push_back(v.id_of(std::string(1, c)));
    } else {
      ts.ids.push_back(kUnk);
    }
  }
  if (add_specials) ts.ids.push_back(kEos);
  return ts;
}

std::string decode(const TokenSequence& ts, const Vocabulary& v) {
  std::string out;
  for (int id : ts.ids) {
    const std::string& t = v.token_of(id);
    if (id == kBos || id == kEos || id == kPad) continue;
    bool punct = t.size() == 1 && is_split_punct(t[0]);
    if (!out.empty() && !punct) out += ' ';
    out += t;
  }
  return out;
}

}  // namespace shift::tok
