#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "shift/corpus.hpp"
#include "shift/date.hpp"

namespace shift::text {

/// Prompt A carries the POI-semantic sentence; Prompt B omits it.
enum class PromptVariant { A, B };

/// How the indefinite article before the category is rendered. `grammatical`
/// picks "a"/"an" by the category's leading letter; `verbatim` always emits
/// "a", reproducing the golden example string.
enum class ArticleStyle { grammatical, verbatim };

struct Prompt {
  std::string text;
};

struct TargetSentence {
  std::string text;
};

/// "{FullMonthName} {day}, {year}, {FullWeekdayName}", no zero padding.
std::string format_date(const Date& d);

Prompt render_prompt(const corpus::Sample& s, PromptVariant variant,
                     ArticleStyle article = ArticleStyle::grammatical,
                     const std::vector<std::string>& addenda = {});

TargetSentence render_target(const corpus::Sample& s);

/// Extract the visit-count integer between "will be" and "people" from a
/// generated target-shaped sentence. Total: returns or throws
/// MalformedPrediction, never crashes.
std::int64_t parse_prediction(const std::string& text);

PromptVariant variant_from_string(const std::string& tag);
const char* variant_to_string(PromptVariant v);

}  // namespace shift::text
