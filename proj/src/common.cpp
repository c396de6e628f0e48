#include "habitlens/common.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <charconv>
#include <cstdio>
#include <exception>
#include <mutex>
#include <thread>

namespace habitlens {

int64_t days_from_civil(int y, unsigned m, unsigned d) {
  y -= m <= 2;
  const int64_t era = (y >= 0 ? y : y - 399) / 400;
  const unsigned yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return era * 146097 + static_cast<int64_t>(doe) - 719468;
}

void civil_from_days(int64_t z, int& y, unsigned& m, unsigned& d) {
  z += 719468;
  const int64_t era = (z >= 0 ? z : z - 146096) / 146097;
  const unsigned doe = static_cast<unsigned>(z - era * 146097);
  const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
  const int64_t yr = static_cast<int64_t>(yoe) + era * 400;
  const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
  const unsigned mp = (5 * doy + 2) / 153;
  d = doy - (153 * mp + 2) / 5 + 1;
  m = mp + (mp < 10 ? 3 : -9);
  y = static_cast<int>(yr + (m <= 2));
}

namespace {

bool parse_int(std::string_view s, size_t& pos, int digits, int& out) {
  if (pos + digits > s.size()) return false;
  int v = 0;
  for (int i = 0; i < digits; ++i) {
    char c = s[pos + i];
    if (c < '0' || c > '9') return false;
    v = v * 10 + (c - '0');
  }
  pos += digits;
  out = v;
  return true;
}

}  // namespace

bool parse_timestamp(std::string_view s, int64_t& epoch_ms_out) {
  s = trim(s);
  if (s.empty()) return false;

  // Integer epoch milliseconds (optionally negative).
  {
    int64_t v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec == std::errc() && ptr == s.data() + s.size()) {
      epoch_ms_out = v;
      return true;
    }
  }

  size_t pos = 0;
  int year, month, day;
  if (!parse_int(s, pos, 4, year)) return false;
  if (pos >= s.size() || s[pos] != '-') return false;
  ++pos;
  if (!parse_int(s, pos, 2, month)) return false;
  if (pos >= s.size() || s[pos] != '-') return false;
  ++pos;
  if (!parse_int(s, pos, 2, day)) return false;
  if (month < 1 || month > 12 || day < 1 || day > 31) return false;

  int hour = 0, minute = 0, second = 0, millis = 0;
  int64_t offset_ms = 0;
  if (pos < s.size()) {
    if (s[pos] != 'T' && s[pos] != 't' && s[pos] != ' ') return false;
    ++pos;
    if (!parse_int(s, pos, 2, hour)) return false;
    if (pos >= s.size() || s[pos] != ':') return false;
    ++pos;
    if (!parse_int(s, pos, 2, minute)) return false;
    if (pos < s.size() && s[pos] == ':') {
      ++pos;
      if (!parse_int(s, pos, 2, second)) return false;
      if (pos < s.size() && s[pos] == '.') {
        ++pos;
        int scale = 100;
        int ndig = 0;
        while (pos < s.size() && s[pos] >= '0' && s[pos] <= '9') {
          if (ndig < 3) {
            millis += (s[pos] - '0') * scale;
            scale /= 10;
          }
          ++ndig;
          ++pos;
        }
        if (ndig == 0) return false;
      }
    }
    if (hour > 23 || minute > 59 || second > 60) return false;
    if (pos < s.size()) {
      char c = s[pos];
      if (c == 'Z' || c == 'z') {
        ++pos;
      } else if (c == '+' || c == '-') {
        ++pos;
        int oh = 0, om = 0;
        if (!parse_int(s, pos, 2, oh)) return false;
        if (pos < s.size() && s[pos] == ':') ++pos;
        if (pos < s.size()) {
          if (!parse_int(s, pos, 2, om)) return false;
        }
        offset_ms = (static_cast<int64_t>(oh) * 60 + om) * 60'000;
        if (c == '-') offset_ms = -offset_ms;
      } else {
        return false;
      }
    }
  }
  if (pos != s.size()) return false;

  int64_t days = days_from_civil(year, static_cast<unsigned>(month), static_cast<unsigned>(day));
  epoch_ms_out = days * kMsPerDay +
                 ((static_cast<int64_t>(hour) * 60 + minute) * 60 + second) * 1000 + millis -
                 offset_ms;
  return true;
}

std::string format_iso8601(int64_t epoch_ms) {
  int64_t day = epoch_day(epoch_ms);
  int64_t rem = epoch_ms - day * kMsPerDay;
  int y;
  unsigned m, d;
  civil_from_days(day, y, m, d);
  int ms = static_cast<int>(rem % 1000);
  rem /= 1000;
  int sec = static_cast<int>(rem % 60);
  rem /= 60;
  int min = static_cast<int>(rem % 60);
  int hour = static_cast<int>(rem / 60);
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%04d-%02u-%02uT%02d:%02d:%02d.%03dZ", y, m, d, hour, min, sec,
                ms);
  return buf;
}

void parallel_for(size_t n, int jobs, const std::function<void(size_t)>& fn) {
  if (n == 0) return;
  size_t workers = std::min<size_t>(n, jobs < 1 ? 1 : static_cast<size_t>(jobs));
  if (workers <= 1) {
    for (size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<size_t> next{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  auto worker = [&] {
    while (true) {
      size_t i = next.fetch_add(1);
      if (i >= n) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
      }
    }
  };
  std::vector<std::thread> threads;
  for (size_t w = 0; w < workers; ++w) threads.emplace_back(worker);
  for (auto& t : threads) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

std::string to_lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

std::string_view trim(std::string_view s) {
  size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

std::string format_double(double v, int precision) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", precision, v);
  return buf;
}

}  // namespace habitlens
