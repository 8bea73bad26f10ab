#include "shift/text_template.hpp"

#include <cctype>
#include <sstream>

#include "shift/error.hpp"

namespace shift::text {

namespace {

bool starts_with_vowel(const std::string& word) {
  if (word.empty()) return false;
  switch (std::tolower(static_cast<unsigned char>(word[0]))) {
    case 'a': case 'e': case 'i': case 'o': case 'u': return true;
    default: return false;
  }
}

}  // namespace

std::string format_date(const Date& d) {
  std::ostringstream out;
  out << month_name(d.month) << ' ' << d.day << ", " << d.year << ", "
      << weekday_name(d.weekday());
  return out.str();
}

Prompt render_prompt(const corpus::Sample& s, PromptVariant variant, ArticleStyle article,
                     const std::vector<std::string>& addenda) {
  require(!s.obs_values.empty() && s.obs_dates.size() == s.obs_values.size(),
          ErrorCode::invalid_argument, "sample has no observation window");

  std::vector<std::string> sentences;
  if (variant == PromptVariant::A) {
    std::string art =
        article == ArticleStyle::grammatical && starts_with_vowel(s.category) ? "an" : "a";
    sentences.push_back("Place-of-Interest (POI) " + std::to_string(s.poi_id) + " is " + art +
                        " " + s.category + ".");
  }
  for (const std::string& extra : addenda) sentences.push_back(extra);

  sentences.push_back("From " + format_date(s.obs_dates.front()) + " to " +
                      format_date(s.obs_dates.back()) + ",");

  std::string mobility = "there were ";
  for (std::size_t i = 0; i < s.obs_values.size(); ++i) {
    if (i > 0) mobility += ", ";
    mobility += std::to_string(s.obs_values[i]);
  }
  mobility += " people visiting POI " + std::to_string(s.poi_id) + " on each day.";
  sentences.push_back(std::move(mobility));

  sentences.push_back("On " + format_date(s.target_date) + ",");

  std::string out;
  for (std::size_t i = 0; i < sentences.size(); ++i) {
    if (i > 0) out += ' ';
    out += sentences[i];
  }
  return Prompt{std::move(out)};
}

TargetSentence render_target(const corpus::Sample& s) {
  return TargetSentence{"there will be " + std::to_string(s.target_value) +
                        " people visiting POI " + std::to_string(s.poi_id) + "."};
}

std::int64_t parse_prediction(const std::string& text) {
  // Scan for `will be <integer> people`; exactly one occurrence is valid.
  std::vector<std::string> words;
  std::string cur;
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!cur.empty()) words.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) words.push_back(std::move(cur));

  auto strip_punct = [](std::string w) {
    while (!w.empty() && (w.back() == '.' || w.back() == ',')) w.pop_back();
    return w;
  };

  std::int64_t value = 0;
  int matches = 0;
  for (std::size_t i = 0; i + 3 < words.size(); ++i) {
    if (words[i] != "will" || words[i + 1] != "be") continue;
    std::string num = strip_punct(words[i + 2]);
    if (num.empty() || num.size() > 18) continue;
    bool digits = true;
    for (char c : num) {
      if (!std::isdigit(static_cast<unsigned char>(c))) {
        digits = false;
        break;
      }
    }
    if (!digits) continue;
    if (strip_punct(words[i + 3]) != "people") continue;
    value = std::stoll(num);
    ++matches;
  }
  if (matches != 1) {
    fail(ErrorCode::malformed_prediction,
         matches == 0 ? "no 'will be <n> people' pattern in '" + text + "'"
                      : "multiple prediction patterns in '" + text + "'");
  }
  return value;
}

PromptVariant variant_from_string(const std::string& tag) {
  if (tag == "A" || tag == "a") return PromptVariant::A;
  if (tag == "B" || tag == "b") return PromptVariant::B;
  fail(ErrorCode::invalid_argument, "unknown prompt variant '" + tag + "'");
}

const char* variant_to_string(PromptVariant v) {
  return v == PromptVariant::A ? "A" : "B";
}

}  // namespace shift::text
