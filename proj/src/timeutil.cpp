#include "stormcast/timeutil.hpp"

#include <fmt/format.h>

#include <cstdio>

#include "stormcast/error.hpp"

namespace stormcast {

using namespace std::chrono;

Timestamp parse_timestamp(std::string_view text) {
  const std::string s(text);
  int y = 0, mo = 0, d = 0, hh = 0, mi = 0, ss = 0, consumed = 0;
  char sep = 0;
  const int got = std::sscanf(s.c_str(), "%4d-%2d-%2d%c%2d:%2d%n", &y, &mo, &d, &sep, &hh, &mi, &consumed);
  if (got != 6 || (sep != 'T' && sep != ' ')) throw Error(Errc::parse, "bad timestamp '" + s + "'");
  std::string_view rest = std::string_view(s).substr(consumed);
  if (!rest.empty() && rest.front() == ':') {
    int n = 0;
    if (std::sscanf(rest.data(), ":%2d%n", &ss, &n) != 1) throw Error(Errc::parse, "bad seconds in '" + s + "'");
    rest.remove_prefix(n);
  }
  if (rest == "Z") rest.remove_prefix(1);
  if (!rest.empty()) throw Error(Errc::parse, "trailing characters in timestamp '" + s + "'");
  const year_month_day ymd{year{y}, month{static_cast<unsigned>(mo)}, day{static_cast<unsigned>(d)}};
  if (!ymd.ok() || hh > 23 || mi > 59 || ss > 59 || hh < 0 || mi < 0 || ss < 0)
    throw Error(Errc::parse, "timestamp out of range '" + s + "'");
  return sys_days{ymd} + hours{hh} + minutes{mi} + seconds{ss};
}

namespace {
struct Parts {
  int y;
  unsigned mo, d;
  long hh, mi, ss;
};
Parts split(Timestamp t) {
  const auto day_point = floor<days>(t);
  const year_month_day ymd{day_point};
  const hh_mm_ss hms{t - day_point};
  return {int(ymd.year()), unsigned(ymd.month()), unsigned(ymd.day()), long(hms.hours().count()),
          long(hms.minutes().count()), long(hms.seconds().count())};
}
}  // namespace

std::string format_timestamp(Timestamp t) {
  const Parts p = split(t);
  return fmt::format("{:04}-{:02}-{:02}T{:02}:{:02}:{:02}Z", p.y, p.mo, p.d, p.hh, p.mi, p.ss);
}

std::string compact_timestamp(Timestamp t) {
  const Parts p = split(t);
  return fmt::format("{:04}{:02}{:02}T{:02}{:02}", p.y, p.mo, p.d, p.hh, p.mi);
}

}  // namespace stormcast
