#pragma once

#include <compare>
#include <cstdint>
#include <string>

namespace shift {

/// Proleptic Gregorian calendar date with day-level arithmetic.
struct Date {
  int year = 1970;
  int month = 1;  // 1..12
  int day = 1;    // 1..31

  bool valid() const;

  /// Days since 1970-01-01 (negative before the epoch).
  std::int64_t to_days() const;
  static Date from_days(std::int64_t days);

  Date plus_days(std::int64_t n) const { return from_days(to_days() + n); }

  /// 0 = Sunday .. 6 = Saturday.
  int weekday() const;

  std::string iso() const;  // YYYY-MM-DD
  static Date parse_iso(const std::string& text);

  auto operator<=>(const Date&) const = default;
};

const char* month_name(int month);   // 1..12 -> "January".."December"
const char* weekday_name(int wd);    // 0..6  -> "Sunday".."Saturday"

}  // namespace shift
