#pragma once

// Target-domain evaluation: fixed reference sets per (category, defect
// type), frozen-model scoring of every test query, and the six-metric report
// (image AUROC / AP / F1-max, pixel AUROC / PRO / F1-max).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "nagl/episode_sampler.hpp"
#include "nagl/inference.hpp"
#include "nagl/metrics.hpp"
#include "nagl/rng.hpp"

namespace nagl {

struct EvalConfig {
  SamplerConfig sampler{1, 1, 0, SamplerMode::test};
  ProOptions pro;
  bool per_image_pixel_auroc = false;
  std::size_t threads = 1;
};

struct ImageResult {
  std::size_t record = 0;
  std::string image_id, category;
  int label = 0;
  double image_score = 0.0;         // fused
  double normal_image_score = 0.0;  // S_n only
  std::vector<double> pixel_scores;         // fused, upsampled to image size
  std::vector<double> normal_pixel_scores;  // S_n only, upsampled
  PixelMask mask;
};

struct EvalRun {
  TestReferencePlan plan;
  std::vector<ImageResult> images;
  std::size_t skipped_reference_queries = 0;
};

// Builds the test reference plan from the sampler seed and scores every test
// query against its key's fixed reference set. Queries that are themselves
// abnormal references of their key are skipped.
template <typename T>
EvalRun run_evaluation(const ModelParams<T>& params, FeatureCache& cache, const EvalConfig& cfg) {
  const auto& manifest = cache.manifest();
  SamplerConfig scfg = cfg.sampler;
  scfg.mode = SamplerMode::test;
  const EpisodeSampler sampler(manifest, scfg);
  Rng rng = Rng(scfg.seed).fork(3);

  EvalRun run;
  run.plan = sampler.plan_test(rng);
  const auto refs = build_test_reference_sets(run.plan, cache);

  std::vector<std::pair<std::size_t, DefectKey>> queries;
  for (std::size_t i = 0; i < manifest.records.size(); ++i) {
    const auto& r = manifest.records[i];
    if (r.split != Split::test) continue;
    auto key = run.plan.key_for(r, i);
    if (!key) {
      ++run.skipped_reference_queries;
      continue;
    }
    queries.emplace_back(i, *key);
  }

  run.images.resize(queries.size());
  auto work = [&](std::size_t begin, std::size_t step) {
    for (std::size_t q = begin; q < queries.size(); q += step) {
      const auto [record, key] = queries[q];
      const auto& r = manifest.records[record];
      const auto ep = make_episode(record, refs.at(key), cache);
      const auto scores = score_episode(params, ep);
      ImageResult& out = run.images[q];
      out.record = record;
      out.image_id = r.image_id;
      out.category = r.category;
      out.label = ep.label;
      out.image_score = scores.image;
      out.normal_image_score = scores.normal_image;
      out.pixel_scores = upsample_bilinear(scores.fused, r.image_h, r.image_w);
      out.normal_pixel_scores = upsample_bilinear(scores.normal, r.image_h, r.image_w);
      out.mask = cache.pixel_mask(record);
    }
  };
  const std::size_t threads = std::max<std::size_t>(1, std::min(cfg.threads, queries.size()));
  if (threads == 1) {
    work(0, 1);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(threads);
    for (std::size_t t = 0; t < threads; ++t) {
      pool.emplace_back([&, t] {
        try {
          work(t, threads);
        } catch (...) {
          errors[t] = std::current_exception();
        }
      });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }
  return run;
}

struct MetricReport {
  double image_auroc = 0, image_ap = 0, image_f1 = 0;
  double pixel_auroc = 0, pixel_pro = 0, pixel_f1 = 0;

  static constexpr std::array<const char*, 6> names() {
    return {"image_auroc", "image_ap", "image_f1max", "pixel_auroc", "pixel_pro", "pixel_f1max"};
  }
  std::array<double, 6> values() const { return {image_auroc, image_ap, image_f1, pixel_auroc, pixel_pro, pixel_f1}; }
  static MetricReport from(const std::array<double, 6>& v) { return {v[0], v[1], v[2], v[3], v[4], v[5]}; }
};

enum class ScoreVariant { fused, normal_only };

struct ReportOptions {
  ProOptions pro;
  bool per_image_pixel_auroc = false;
};

// Image metrics over (s, y); pixel AUROC and F1-max over pooled pixels (or
// the mean of per-image AUROCs); PRO averaged over images with a region.
inline MetricReport evaluate_run(std::span<const ImageResult> images, ScoreVariant variant,
                                 const ReportOptions& opt = {}) {
  std::vector<double> s;
  std::vector<std::uint8_t> y;
  std::vector<double> pixels;
  std::vector<std::uint8_t> pixel_labels;
  double pro_sum = 0.0, per_image_auroc_sum = 0.0;
  std::size_t pro_count = 0, per_image_auroc_count = 0;
  for (const auto& img : images) {
    const auto& map = variant == ScoreVariant::fused ? img.pixel_scores : img.normal_pixel_scores;
    s.push_back(variant == ScoreVariant::fused ? img.image_score : img.normal_image_score);
    y.push_back(static_cast<std::uint8_t>(img.label));
    pixels.insert(pixels.end(), map.begin(), map.end());
    pixel_labels.insert(pixel_labels.end(), img.mask.bits.begin(), img.mask.bits.end());
    if (img.mask.any()) {
      pro_sum += pro(map, img.mask, opt.pro);
      ++pro_count;
      if (img.mask.count() < img.mask.size()) {
        per_image_auroc_sum += auroc(map, img.mask.bits);
        ++per_image_auroc_count;
      }
    }
  }
  MetricReport m;
  m.image_auroc = auroc(s, y);
  m.image_ap = average_precision(s, y);
  m.image_f1 = f1_max(s, y);
  m.pixel_auroc = opt.per_image_pixel_auroc && per_image_auroc_count
                      ? per_image_auroc_sum / static_cast<double>(per_image_auroc_count)
                      : auroc(pixels, pixel_labels);
  m.pixel_pro = pro_count ? pro_sum / static_cast<double>(pro_count) : 0.0;
  m.pixel_f1 = f1_max(pixels, pixel_labels);
  return m;
}

struct CategoryReport {
  std::string category;
  MetricReport metrics;
};

// Per-category metrics plus their unweighted mean (last row, "mean").
inline std::vector<CategoryReport> evaluate_by_category(std::span<const ImageResult> images, ScoreVariant variant,
                                                        const ReportOptions& opt = {}) {
  std::map<std::string, std::vector<ImageResult>> by_cat;
  for (const auto& img : images) by_cat[img.category].push_back(img);
  std::vector<CategoryReport> out;
  std::array<double, 6> acc{};
  for (const auto& [cat, imgs] : by_cat) {
    out.push_back({cat, evaluate_run(imgs, variant, opt)});
    const auto v = out.back().metrics.values();
    for (std::size_t i = 0; i < 6; ++i) acc[i] += v[i];
  }
  for (auto& v : acc) v /= static_cast<double>(std::max<std::size_t>(1, by_cat.size()));
  out.push_back({"mean", MetricReport::from(acc)});
  return out;
}

struct MeanStd {
  double mean = 0, stddev = 0;
};

// Mean and population standard deviation across runs, per row and metric.
struct SeedSummary {
  std::vector<std::string> rows;
  std::vector<std::array<MeanStd, 6>> cells;
};

inline SeedSummary summarize_seeds(const std::vector<std::vector<CategoryReport>>& runs) {
  SeedSummary out;
  if (runs.empty()) return out;
  for (const auto& row : runs.front()) out.rows.push_back(row.category);
  out.cells.resize(out.rows.size());
  for (std::size_t r = 0; r < out.rows.size(); ++r) {
    for (std::size_t m = 0; m < 6; ++m) {
      double sum = 0, sq = 0;
      for (const auto& run : runs) {
        if (run.size() != out.rows.size() || run[r].category != out.rows[r]) {
          throw DataError("summarize_seeds: runs cover different categories");
        }
        const double v = run[r].metrics.values()[m];
        sum += v;
        sq += v * v;
      }
      const double n = static_cast<double>(runs.size());
      const double mean = sum / n;
      out.cells[r][m] = {mean, std::sqrt(std::max(0.0, sq / n - mean * mean))};
    }
  }
  return out;
}

// Aligned table with the image-level and pixel-level column groups.
inline std::string format_report_table(const SeedSummary& s) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(1);
  os << std::left << std::setw(12) << "" << "| " << std::setw(39) << "Image-level" << "| " << "Pixel-level\n";
  os << std::left << std::setw(12) << "category";
  const char* heads[6] = {"AUROC", "AP", "F1-max", "AUROC", "PRO", "F1-max"};
  for (int i = 0; i < 6; ++i) os << (i % 3 == 0 ? "| " : "") << std::setw(13) << heads[i];
  os << '\n';
  for (std::size_t r = 0; r < s.rows.size(); ++r) {
    os << std::left << std::setw(12) << s.rows[r];
    for (std::size_t m = 0; m < 6; ++m) {
      std::ostringstream cell;
      cell << std::fixed << std::setprecision(1) << 100.0 * s.cells[r][m].mean << "±" << 100.0 * s.cells[r][m].stddev;
      os << (m % 3 == 0 ? "| " : "") << std::setw(14) << cell.str();
    }
    os << '\n';
  }
  return os.str();
}

// One record per (row, metric): row<TAB>metric<TAB>mean<TAB>std
inline std::string format_report_records(const SeedSummary& s) {
  std::ostringstream os;
  os.precision(17);
  for (std::size_t r = 0; r < s.rows.size(); ++r) {
    for (std::size_t m = 0; m < 6; ++m) {
      os << s.rows[r] << '\t' << MetricReport::names()[m] << '\t' << s.cells[r][m].mean << '\t'
         << s.cells[r][m].stddev << '\n';
    }
  }
  return os.str();
}

}  // namespace nagl
