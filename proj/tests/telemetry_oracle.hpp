#ifndef PESTDET_TESTS_TELEMETRY_ORACLE_HPP
#define PESTDET_TESTS_TELEMETRY_ORACLE_HPP

// Independent references for the report codec and the alert rule, shared by
// the unit tests and the acceptance runner.

#include <cstdint>
#include <random>
#include <vector>

#include "pestdet/telemetry.hpp"

namespace oracle {

/// Remainder of M(x) * x^8 divided by x^8 + x^2 + x + 1, by long division on
/// an explicit bit list (most significant bit first).
inline std::uint8_t crc8_long_division(const std::vector<std::uint8_t>& message) {
  std::vector<int> bits;
  for (std::uint8_t byte : message) {
    for (int i = 7; i >= 0; --i) bits.push_back(byte >> i & 1);
  }
  bits.insert(bits.end(), 8, 0);
  const int poly[9] = {1, 0, 0, 0, 0, 0, 1, 1, 1};
  for (std::size_t i = 0; i + 8 < bits.size(); ++i) {
    if (!bits[i]) continue;
    for (int j = 0; j < 9; ++j) bits[i + j] ^= poly[j];
  }
  std::uint8_t r = 0;
  for (std::size_t i = bits.size() - 8; i < bits.size(); ++i) r = static_cast<std::uint8_t>(r << 1 | bits[i]);
  return r;
}

inline pestdet::TrapReport random_report(std::mt19937_64& rng) {
  auto uniform = [&rng](std::int64_t hi) { return std::uniform_int_distribution<std::int64_t>(0, hi)(rng); };
  pestdet::TrapReport r;
  r.trap_id = uniform(0xFFFF);
  r.timestamp_minutes = uniform(0xFFFFFFFFLL);
  r.moth_count = uniform(255);
  r.insect_count = uniform(255);
  r.battery_soc_pct = uniform(100);
  r.alert = uniform(1) == 1;
  return r;
}

/// Detections on whole hours, mostly empty, occasionally one or two moths. Both timestamps and the 7-day window are multiples of an hour, so
/// checking windows that end on every hour is exhaustive.
inline std::vector<pestdet::MothCount> random_history(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> length(0, 14), gap(0, 120), count(0, 9);
  std::vector<pestdet::MothCount> h(static_cast<std::size_t>(length(rng)));
  std::int64_t t = 60 * gap(rng);
  for (auto& m : h) {
    t += 60 * gap(rng);
    const int c = count(rng);
    m = {t, c < 7 ? 0 : (c == 9 ? 2 : 1)};
  }
  return h;
}

inline bool sliding_window_alert(const std::vector<pestdet::MothCount>& h) {
  if (h.empty()) return false;
  for (std::int64_t end = h.front().timestamp_minutes; end <= h.back().timestamp_minutes + pestdet::kAlertWindowMinutes;
       end += 60) {
    std::int64_t sum = 0;
    for (const auto& m : h) {
      if (m.timestamp_minutes > end - pestdet::kAlertWindowMinutes && m.timestamp_minutes <= end) sum += m.count;
    }
    if (sum >= pestdet::kAlertThreshold) return true;
  }
  return false;
}

/// Ten valid reports covering field extremes.
inline std::vector<pestdet::TrapReport> report_fixtures() {
  return {
      {0, 0, 0, 0, 0, false},
      {0xFFFF, 0xFFFFFFFFLL, 255, 255, 100, true},
      {0x1234, 0x01020304, 3, 7, 85, true},
      {1, 29000000, 0, 12, 100, false},
      {42, 28512345, 2, 0, 64, true},
      {65534, 1, 255, 0, 0, false},
      {300, 0x80000000LL, 1, 1, 50, false},
      {0x00FF, 0x000000FF, 0, 255, 99, true},
      {0xFF00, 0xFF000000LL, 128, 127, 1, false},
      {7, 27000000, 9, 4, 73, true},
  };
}

}  // namespace oracle

#endif  // PESTDET_TESTS_TELEMETRY_ORACLE_HPP
