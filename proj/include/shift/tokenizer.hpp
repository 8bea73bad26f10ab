#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

namespace shift::tok {

inline constexpr int kBos = 0;  // "<s>"
inline constexpr int kEos = 1;  // "</s>"
inline constexpr int kPad = 2;  // "<pad>"
inline constexpr int kUnk = 3;  // "<unk>"

struct TokenSequence {
  std::vector<int> ids;
};

/// Word-level vocabulary with fixed special ids and dense word ids from 4.
/// Word order is frequency-descending, ties broken lexicographically, so
/// building from the same corpus always yields the same table.
class Vocabulary {
 public:
  Vocabulary() = default;

  int id_of(const std::string& token) const;  // kUnk when absent
  const std::string& token_of(int id) const;  // throws UnknownId
  bool contains(const std::string& token) const;
  std::size_t size() const { return id_to_token_.size(); }

  /// FNV-1a over the id-ordered token list; the checkpoint sidecar stores
  /// this to detect checkpoint/vocabulary mismatches.
  std::uint64_t hash() const;

  std::string to_json() const;  // {"tokens":[... in id order ...]}
  static Vocabulary from_json(const std::string& json_text);
  void save(const std::string& path) const;
  static Vocabulary load(const std::string& path);

  static Vocabulary from_tokens(std::vector<std::string> tokens_in_id_order);

 private:
  std::vector<std::string> id_to_token_;
  std::unordered_map<std::string, int> token_to_id_;
};

/// Whitespace split, then leading/trailing '.' and ',' become their own
/// tokens. This is the rule both build_vocab and encode share.
std::vector<std::string> tokenize(const std::string& text);

Vocabulary build_vocab(const std::vector<std::string>& corpus);

/// Unknown words map to UNK; an out-of-vocabulary integer is decomposed
/// digit-by-digit (digits themselves missing from the vocabulary fall back
/// to UNK). add_specials wraps the result in BOS ... EOS.
TokenSequence encode(const std::string& text, const Vocabulary& v, bool add_specials);

/// Inverse of encode up to whitespace normalization: single spaces between
/// word tokens, punctuation attached to the previous token, specials
/// stripped.
std::string decode(const TokenSequence& ts, const Vocabulary& v);

}  // namespace shift::tok
