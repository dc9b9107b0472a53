#include <gtest/gtest.h>

#include <filesystem>

#include "../support/oracles.hpp"

namespace fs = std::filesystem;
using nagl::ImageResult;

namespace {

ImageResult image(const std::string& cat, int label, double s, std::vector<double> pixels, nagl::PixelMask mask) {
  ImageResult r;
  r.category = cat;
  r.image_id = cat + std::to_string(label) + std::to_string(s);
  r.label = label;
  r.image_score = r.normal_image_score = s;
  r.pixel_scores = r.normal_pixel_scores = std::move(pixels);
  r.mask = std::move(mask);
  return r;
}

nagl::SynthConfig small_synth() {
  nagl::SynthConfig s;
  s.categories = 2;
  s.train_categories = 1;
  s.train_normals = 3;
  s.test_normals = 3;
  s.test_abnormals = 4;
  s.defect_types = 2;
  s.h = s.w = 4;
  s.channels = 8;
  s.pixels_per_patch = 2;
  return s;
}

}  // namespace

TEST(EvaluateRun, PerfectDetectorScoresOneEverywhere) {
  nagl::PixelMask gt(2, 2, {1, 0, 0, 0});
  std::vector<ImageResult> imgs{image("a", 1, 0.9, {1, 0, 0, 0}, gt),
                                image("a", 0, 0.1, {0, 0, 0, 0}, nagl::PixelMask(2, 2)),
                                image("a", 1, 0.8, {0, 0, 1, 1}, nagl::PixelMask(2, 2, {0, 0, 1, 1}))};
  const auto m = nagl::evaluate_run(imgs, nagl::ScoreVariant::fused);
  for (double v : m.values()) EXPECT_DOUBLE_EQ(v, 1.0);
}

TEST(EvaluateRun, PooledPixelAurocMatchesPairCountingOracle) {
  nagl::Rng rng(1);
  std::vector<ImageResult> imgs;
  std::vector<double> pooled;
  std::vector<std::uint8_t> labels;
  for (int k = 0; k < 2; ++k) {
    const auto gt = oracle::random_mask(rng, 5, 5, 0.3);
    std::vector<double> px(25);
    for (std::size_t i = 0; i < 25; ++i) px[i] = rng.normal() + gt.bits[i];
    pooled.insert(pooled.end(), px.begin(), px.end());
    labels.insert(labels.end(), gt.bits.begin(), gt.bits.end());
    imgs.push_back(image("a", k, 0.3 * k, px, gt));
  }
  const auto m = nagl::evaluate_run(imgs, nagl::ScoreVariant::fused);
  EXPECT_NEAR(m.pixel_auroc, oracle::auroc(pooled, labels), 1e-12);
  EXPECT_NEAR(m.pixel_f1, oracle::f1_max(pooled, labels), 1e-12);
  EXPECT_NEAR(m.pixel_pro, 0.5 * (nagl::pro(imgs[0].pixel_scores, imgs[0].mask) + nagl::pro(imgs[1].pixel_scores, imgs[1].mask)),
              1e-15);
  const auto per_image = nagl::evaluate_run(imgs, nagl::ScoreVariant::fused, {{}, true});
  EXPECT_NEAR(per_image.pixel_auroc,
              0.5 * (oracle::auroc(imgs[0].pixel_scores, imgs[0].mask.bits) +
                     oracle::auroc(imgs[1].pixel_scores, imgs[1].mask.bits)),
              1e-12);
}

TEST(EvaluateByCategory, MeanRowAveragesCategories) {
  nagl::PixelMask gt(1, 2, {1, 0});
  std::vector<ImageResult> imgs{image("a", 1, 0.9, {0.9, 0.1}, gt), image("a", 0, 0.1, {0.2, 0.1}, nagl::PixelMask(1, 2)),
                                image("b", 1, 0.1, {0.1, 0.9}, gt), image("b", 0, 0.9, {0.2, 0.3}, nagl::PixelMask(1, 2))};
  const auto rows = nagl::evaluate_by_category(imgs, nagl::ScoreVariant::fused);
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[2].category, "mean");
  EXPECT_DOUBLE_EQ(rows[0].metrics.image_auroc, 1.0);
  EXPECT_DOUBLE_EQ(rows[1].metrics.image_auroc, 0.0);
  EXPECT_DOUBLE_EQ(rows[2].metrics.image_auroc, 0.5);
}

TEST(SummarizeSeeds, MeanAndPopulationStd) {
  auto row = [](double v) {
    nagl::MetricReport m;
    m.image_auroc = v;
    return std::vector<nagl::CategoryReport>{{"mean", m}};
  };
  const auto s = nagl::summarize_seeds({row(0.8), row(0.9), row(1.0)});
  EXPECT_NEAR(s.cells[0][0].mean, 0.9, 1e-15);
  EXPECT_NEAR(s.cells[0][0].stddev, std::sqrt(2.0 / 300.0), 1e-12);
  const auto table = nagl::format_report_table(s);
  EXPECT_NE(table.find("Image-level"), std::string::npos);
  EXPECT_NE(table.find("Pixel-level"), std::string::npos);
  EXPECT_NE(table.find("90.0±8.2"), std::string::npos) << table;
  EXPECT_NE(nagl::format_report_records(s).find("mean\timage_auroc\t0.9"), std::string::npos);
}

TEST(RunEvaluation, ScoresEveryTestQueryExceptReferencesDeterministically) {
  const auto dir = fs::temp_directory_path() / "nagl_eval_synth";
  fs::remove_all(dir);
  const auto data = nagl::generate_synthetic(small_synth(), dir);
  nagl::FeatureCache cache(data.target);
  const auto params = nagl::init_params<float>(3, 8, 2);
  nagl::EvalConfig cfg;
  cfg.sampler = {2, 1, 0, nagl::SamplerMode::test};
  const auto run = nagl::run_evaluation(params, cache, cfg);
  EXPECT_EQ(run.skipped_reference_queries, 2u);  // one per defect type
  EXPECT_EQ(run.images.size(), 3u + 4u - 2u);
  for (const auto& img : run.images) {
    EXPECT_EQ(img.pixel_scores.size(), 64u);
    EXPECT_EQ(img.mask.size(), 64u);
    EXPECT_EQ(img.label == 1, img.mask.any());
  }
  cfg.threads = 3;
  const auto threaded = nagl::run_evaluation(params, cache, cfg);
  ASSERT_EQ(threaded.images.size(), run.images.size());
  for (std::size_t i = 0; i < run.images.size(); ++i) {
    EXPECT_EQ(threaded.images[i].image_id, run.images[i].image_id);
    EXPECT_EQ(threaded.images[i].pixel_scores, run.images[i].pixel_scores);
  }
  EXPECT_EQ(threaded.plan, run.plan);
}
