#include "shift/date.hpp"

#include <array>
#include <charconv>
#include <cstdio>

#include "shift/error.hpp"

namespace shift {

namespace {

constexpr std::array<const char*, 12> kMonths = {
    "January", "February", "March",     "April",   "May",      "June",
    "July",    "August",   "September", "October", "November", "December"};

constexpr std::array<const char*, 7> kWeekdays = {
    "Sunday", "Monday", "Tuesday", "Wednesday", "Thursday", "Friday", "Saturday"};

bool is_leap(int y) { return y % 4 == 0 && (y % 100 != 0 || y % 400 == 0); }

int days_in_month(int y, int m) {
  constexpr std::array<int, 12> d = {31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31};
  if (m == 2 && is_leap(y)) return 29;
  return d[m - 1];
}

}  // namespace

bool Date::valid() const {
  return month >= 1 && month <= 12 && day >= 1 && day <= days_in_month(year, month);
}

// Howard Hinnant's civil-days algorithms.
std::int64_t Date::to_days() const {
  std::int64_t y = year;
  y -= month <= 2;
  const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
  const unsigned yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = (153u * (month + (month > 2 ? -3 : 9)) + 2) / 5 + day - 1;
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

Date Date::from_days(std::int64_t days) {
  const std::int64_t z = days + 719468;
  const std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
  const unsigned doe = static_cast<unsigned>(z - era * 146097);
  const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
  const std::int64_t y = static_cast<std::int64_t>(yoe) + era * 400;
  const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
  const unsigned mp = (5 * doy + 2) / 153;
  const unsigned d = doy - (153 * mp + 2) / 5 + 1;
  const unsigned m = mp + (mp < 10 ? 3 : -9);
  return Date{static_cast<int>(y + (m <= 2)), static_cast<int>(m), static_cast<int>(d)};
}

int Date::weekday() const {
  std::int64_t d = to_days() + 4;  // 1970-01-01 was a Thursday
  return static_cast<int>(((d % 7) + 7) % 7);
}

std::string Date::iso() const {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%04d-%02d-%02d", year, month, day);
  return buf;
}

Date Date::parse_iso(const std::string& text) {
  Date d;
  if (text.size() != 10 || text[4] != '-' || text[7] != '-') {
    fail(ErrorCode::invalid_argument, "expected YYYY-MM-DD, got '" + text + "'");
  }
  auto parse_field = [&](int lo, int hi, int& out) {
    auto res = std::from_chars(text.data() + lo, text.data() + hi, out);
    if (res.ec != std::errc{} || res.ptr != text.data() + hi) {
      fail(ErrorCode::invalid_argument, "expected YYYY-MM-DD, got '" + text + "'");
    }
  };
  parse_field(0, 4, d.year);
  parse_field(5, 7, d.month);
  parse_field(8, 10, d.day);
  require(d.valid(), ErrorCode::invalid_argument, "invalid calendar date '" + text + "'");
  return d;
}

const char* month_name(int month) { return kMonths.at(month - 1); }

const char* weekday_name(int wd) { return kWeekdays.at(wd); }

}  // namespace shift
