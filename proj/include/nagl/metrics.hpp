#pragma once

// Threshold-free detection metrics (AUROC, AP, F1-max) and the per-region
// overlap curve for segmentation. Thresholds predict "anomalous" when
// score >= threshold.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "nagl/error.hpp"
#include "nagl/feature_store.hpp"

namespace nagl {

namespace detail {

inline void check_scored(std::span<const double> scores, std::span<const std::uint8_t> labels, const char* who) {
  if (scores.size() != labels.size()) throw ShapeError(std::string(who) + ": scores and labels differ in length");
  std::size_t pos = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] > 1) throw DataError(std::string(who) + ": labels must be 0 or 1");
    if (!std::isfinite(scores[i])) throw NumericError(std::string(who) + ": non-finite score");
    pos += labels[i];
  }
  if (pos == 0 || pos == labels.size()) throw DataError(std::string(who) + ": both classes must be present");
}

// Indices sorted by score descending (stable).
inline std::vector<std::size_t> descending_order(std::span<const double> scores) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return idx;
}

// Cumulative (tp, fp) at each distinct threshold, from highest to lowest.
struct SweepPoint {
  double tp, fp;
};

inline std::vector<SweepPoint> threshold_sweep(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  const auto idx = descending_order(scores);
  std::vector<SweepPoint> out;
  double tp = 0, fp = 0;
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (labels[idx[i]]) {
      tp += 1;
    } else {
      fp += 1;
    }
    if (i + 1 == idx.size() || scores[idx[i + 1]] != scores[idx[i]]) out.push_back({tp, fp});
  }
  return out;
}

}  // namespace detail

// Mann-Whitney statistic with average ranks for ties.
inline double auroc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  detail::check_scored(scores, labels, "auroc");
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum = 0.0, positives = 0.0;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && scores[idx[j + 1]] == scores[idx[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t t = i; t <= j; ++t) {
      if (labels[idx[t]]) {
        rank_sum += avg_rank;
        positives += 1.0;
      }
    }
    i = j + 1;
  }
  const double negatives = static_cast<double>(scores.size()) - positives;
  return (rank_sum - positives * (positives + 1.0) / 2.0) / (positives * negatives);
}

// Sum over the descending sweep of (R_k - R_{k-1}) * P_k.
inline double average_precision(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  detail::check_scored(scores, labels, "average_precision");
  const double positives = static_cast<double>(std::count(labels.begin(), labels.end(), std::uint8_t{1}));
  double ap = 0.0, prev_recall = 0.0;
  for (const auto& p : detail::threshold_sweep(scores, labels)) {
    const double recall = p.tp / positives;
    ap += (recall - prev_recall) * (p.tp / (p.tp + p.fp));
    prev_recall = recall;
  }
  return ap;
}

// Maximum F1 over the distinct score values used as thresholds.
inline double f1_max(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  detail::check_scored(scores, labels, "f1_max");
  const double positives = static_cast<double>(std::count(labels.begin(), labels.end(), std::uint8_t{1}));
  double best = 0.0;
  for (const auto& p : detail::threshold_sweep(scores, labels)) {
    const double precision = p.tp / (p.tp + p.fp);
    const double recall = p.tp / positives;
    const double f1 = precision + recall > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
    best = std::max(best, f1);
  }
  return best;
}

// Connected components of a binary mask under 8-connectivity; each region is
// a list of flat pixel indices.
inline std::vector<std::vector<std::size_t>> label_regions(const BinaryMask& mask) {
  std::vector<std::vector<std::size_t>> regions;
  std::vector<std::uint8_t> seen(mask.size(), 0);
  std::vector<std::size_t> stack;
  for (std::size_t start = 0; start < mask.size(); ++start) {
    if (!mask.bits[start] || seen[start]) continue;
    std::vector<std::size_t> region;
    stack.push_back(start);
    seen[start] = 1;
    while (!stack.empty()) {
      const std::size_t p = stack.back();
      stack.pop_back();
      region.push_back(p);
      const auto r = static_cast<std::ptrdiff_t>(p / mask.width);
      const auto c = static_cast<std::ptrdiff_t>(p % mask.width);
      for (std::ptrdiff_t dr = -1; dr <= 1; ++dr) {
        for (std::ptrdiff_t dc = -1; dc <= 1; ++dc) {
          const auto nr = r + dr, nc = c + dc;
          if (nr < 0 || nc < 0 || nr >= static_cast<std::ptrdiff_t>(mask.height) ||
              nc >= static_cast<std::ptrdiff_t>(mask.width)) {
            continue;
          }
          const auto q = static_cast<std::size_t>(nr) * mask.width + static_cast<std::size_t>(nc);
          if (mask.bits[q] && !seen[q]) {
            seen[q] = 1;
            stack.push_back(q);
          }
        }
      }
    }
    std::sort(region.begin(), region.end());
    regions.push_back(std::move(region));
  }
  return regions;
}

struct ProOptions {
  double fpr_limit = 0.3;
  std::size_t thresholds = 200;
};

// Area under mean-per-region-recall vs. FPR, integrated by trapezoid from
// FPR 0 to fpr_limit and divided by fpr_limit. Thresholds are evenly spaced
// from the maximum down to the minimum score; the curve starts at (0, 0).
inline double pro(std::span<const double> scores, const BinaryMask& gt, ProOptions opt = {}) {
  if (scores.size() != gt.size()) throw ShapeError("pro: score map and mask differ in size");
  if (!(opt.fpr_limit > 0.0 && opt.fpr_limit <= 1.0)) throw ConfigError("pro: fpr_limit must be in (0, 1]");
  if (opt.thresholds == 0) throw ConfigError("pro: need at least one threshold");
  const auto regions = label_regions(gt);
  if (regions.empty()) throw DataError("pro: ground-truth mask has no anomalous region");
  const double normals = static_cast<double>(gt.size() - gt.count());
  if (normals == 0.0) throw DataError("pro: ground-truth mask has no normal pixel");

  const auto [lo_it, hi_it] = std::minmax_element(scores.begin(), scores.end());
  const double lo = *lo_it, hi = *hi_it;
  std::vector<double> fprs{0.0}, recalls{0.0};
  for (std::size_t j = 0; j < opt.thresholds; ++j) {
    const double t = opt.thresholds == 1 ? hi
                                         : hi - (hi - lo) * static_cast<double>(j) /
                                                    static_cast<double>(opt.thresholds - 1);
    double false_pos = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      if (!gt.bits[i] && scores[i] >= t) false_pos += 1.0;
    }
    double recall_sum = 0.0;
    for (const auto& region : regions) {
      double hit = 0.0;
      for (auto p : region) hit += scores[p] >= t ? 1.0 : 0.0;
      recall_sum += hit / static_cast<double>(region.size());
    }
    fprs.push_back(false_pos / normals);
    recalls.push_back(recall_sum / static_cast<double>(regions.size()));
  }

  double area = 0.0;
  for (std::size_t k = 1; k < fprs.size(); ++k) {
    const double x0 = fprs[k - 1], x1 = fprs[k];
    const double y0 = recalls[k - 1], y1 = recalls[k];
    if (x0 >= opt.fpr_limit) break;
    if (x1 <= opt.fpr_limit) {
      area += 0.5 * (x1 - x0) * (y0 + y1);
    } else {
      const double y_cap = y0 + (y1 - y0) * (opt.fpr_limit - x0) / (x1 - x0);
      area += 0.5 * (opt.fpr_limit - x0) * (y0 + y_cap);
      break;
    }
  }
  return area / opt.fpr_limit;
}

}  // namespace nagl
