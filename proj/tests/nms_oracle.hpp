#ifndef PESTDET_TESTS_NMS_ORACLE_HPP
#define PESTDET_TESTS_NMS_ORACLE_HPP

// Brute-force NMS reference and property checks shared by the unit tests and
// the acceptance runner.

#include <algorithm>
#include <random>
#include <string>
#include <vector>

#include "pestdet/vision.hpp"

namespace oracle {

using pestdet::RoiCandidate;

inline double overlap(const RoiCandidate& a, const RoiCandidate& b) {
  const int ix = std::max(0, std::min(a.x + a.size, b.x + b.size) - std::max(a.x, b.x));
  const int iy = std::max(0, std::min(a.y + a.size, b.y + b.size) - std::max(a.y, b.y));
  const double inter = static_cast<double>(ix) * iy;
  return inter / (static_cast<double>(a.size) * a.size + static_cast<double>(b.size) * b.size - inter);
}

inline bool beats(const RoiCandidate& a, std::size_t ia, const RoiCandidate& b, std::size_t ib) {
  if (a.probability != b.probability) return a.probability > b.probability;
  if (a.y != b.y) return a.y < b.y;
  if (a.x != b.x) return a.x < b.x;
  return ia < ib;
}

/// Textbook greedy NMS: repeatedly take the best remaining window and discard
/// everything overlapping it. Returns survivors in input order.
inline std::vector<RoiCandidate> greedy_nms(const std::vector<RoiCandidate>& c, double threshold) {
  std::vector<bool> alive(c.size(), true), kept(c.size(), false);
  for (;;) {
    std::size_t best = c.size();
    for (std::size_t i = 0; i < c.size(); ++i) {
      if (alive[i] && (best == c.size() || beats(c[i], i, c[best], best))) best = i;
    }
    if (best == c.size()) break;
    kept[best] = true;
    alive[best] = false;
    for (std::size_t i = 0; i < c.size(); ++i) {
      if (alive[i] && overlap(c[i], c[best]) > threshold) alive[i] = false;
    }
  }
  std::vector<RoiCandidate> out;
  for (std::size_t i = 0; i < c.size(); ++i) {
    if (kept[i]) out.push_back(c[i]);
  }
  return out;
}

/// Random windows on a coarse grid with probabilities drawn from a small set,
/// so overlaps and exact ties are both common.
inline std::vector<RoiCandidate> random_candidates(std::mt19937& rng) {
  std::uniform_int_distribution<int> count(0, 40), pos(0, 12), size(2, 5), level(0, 10);
  std::vector<RoiCandidate> c(static_cast<std::size_t>(count(rng)));
  for (auto& r : c) r = {pos(rng) * 4, pos(rng) * 4, size(rng) * 4, level(rng) / 10.0};
  return c;
}

/// Empty when `kept` is a valid NMS result for `input`; otherwise a reason.
inline std::string nms_violation(const std::vector<RoiCandidate>& input, const std::vector<RoiCandidate>& kept,
                                 double threshold) {
  for (std::size_t i = 0; i < kept.size(); ++i) {
    for (std::size_t j = i + 1; j < kept.size(); ++j) {
      if (overlap(kept[i], kept[j]) > threshold) return "two retained windows overlap above threshold";
    }
  }
  if (pestdet::nms(kept, threshold) != kept) return "not idempotent";
  if (kept != greedy_nms(input, threshold)) return "differs from the greedy reference";
  return {};
}

}  // namespace oracle

#endif  // PESTDET_TESTS_NMS_ORACLE_HPP
