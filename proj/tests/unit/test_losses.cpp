#include <gtest/gtest.h>

#include <cmath>

#include "../support/oracles.hpp"

using nagl::LossConfig;
using nagl::Matrix;
using nagl::Tape;
using nagl::Var;

namespace {

double clamp_p(double s, double eps = 1e-6) { return std::clamp(s / 2, eps, 1 - eps); }

double focal_ref(const std::vector<double>& s, const std::vector<std::uint8_t>& m, double gamma, double alpha) {
  double acc = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const double p = clamp_p(s[i]);
    acc += m[i] ? -alpha * std::pow(1 - p, gamma) * std::log(p) : -(1 - alpha) * std::pow(p, gamma) * std::log(1 - p);
  }
  return acc / static_cast<double>(s.size());
}

double bce_ref(const std::vector<double>& s, const std::vector<std::uint8_t>& m) {
  double acc = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const double p = clamp_p(s[i]);
    acc += m[i] ? -std::log(p) : -std::log(1 - p);
  }
  return acc / static_cast<double>(s.size());
}

double dice_ref(const std::vector<double>& s, const std::vector<std::uint8_t>& m, double eps = 1.0) {
  double inter = 0, ps = 0, ms = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const double p = clamp_p(s[i]);
    inter += p * m[i];
    ps += p;
    ms += m[i];
  }
  return 1 - (2 * inter + eps) / (ps + ms + eps);
}

Var<double> column(Tape<double>& t, const std::vector<double>& s, bool grad = false) {
  return t.leaf(Matrix<double>(s.size(), 1, s), grad);
}

struct Instance {
  std::vector<double> s;
  std::vector<std::uint8_t> m;
};

Instance random_instance(nagl::Rng& rng, std::size_t n) {
  Instance in;
  for (std::size_t i = 0; i < n; ++i) {
    in.s.push_back(rng.uniform(0.0, 2.0));
    in.m.push_back(rng.uniform() < 0.4 ? 1 : 0);
  }
  return in;
}

}  // namespace

TEST(SegLoss, PerfectPredictionIsNearZero) {
  Tape<double> t;
  const std::vector<std::uint8_t> ones(16, 1);
  EXPECT_NEAR(nagl::seg_loss(column(t, std::vector<double>(16, 2.0)), ones, LossConfig{}).scalar(), 0.0, 1e-5);
}

TEST(SegLoss, MatchesScalarFormulas) {
  nagl::Rng rng(1);
  for (int trial = 0; trial < 10; ++trial) {
    const auto in = random_instance(rng, 16);
    Tape<double> t;
    const LossConfig cfg;
    const double got = nagl::seg_loss(column(t, in.s), in.m, cfg).scalar();
    EXPECT_NEAR(got, focal_ref(in.s, in.m, 2.0, 0.25) + dice_ref(in.s, in.m), 1e-12);
  }
}

TEST(SegLoss, FocalWithGammaZeroAlphaHalfIsHalfBce) {
  nagl::Rng rng(2);
  const auto in = random_instance(rng, 32);
  LossConfig cfg;
  cfg.focal_gamma = 0.0;
  cfg.focal_alpha = 0.5;
  Tape<double> t;
  const auto p = nagl::score_to_probability(column(t, in.s), cfg);
  const auto target = t.constant(nagl::mask_column<double>(in.m));
  EXPECT_NEAR(nagl::focal_loss(p, target, cfg).scalar(), 0.5 * bce_ref(in.s, in.m), 1e-12);
}

TEST(ClsLoss, HalfProbabilityIsLnTwo) {
  for (int y : {0, 1}) {
    Tape<double> t;
    EXPECT_NEAR(nagl::cls_loss(column(t, {1.0}), y, LossConfig{}).scalar(), std::log(2.0), 1e-15);
  }
}

TEST(ClsLoss, SaturatedCorrectPredictionIsAboutEps) {
  Tape<double> t;
  EXPECT_NEAR(nagl::cls_loss(column(t, {2.0}), 1, LossConfig{}).scalar(), 1e-6, 1e-9);
}

TEST(ClsLoss, MatchesHandFormula) {
  nagl::Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const double s = rng.uniform(0.0, 2.0);
    const int y = trial % 2;
    Tape<double> t;
    const double p = clamp_p(s);
    EXPECT_NEAR(nagl::cls_loss(column(t, {s}), y, LossConfig{}).scalar(), y ? -std::log(p) : -std::log(1 - p), 1e-13);
  }
}

TEST(TotalLoss, WeightsSegmentationByLambda) {
  Tape<double> t;
  auto seg = column(t, {0.3});
  auto cls = column(t, {0.7});
  LossConfig cfg;
  EXPECT_DOUBLE_EQ(nagl::total_loss(seg, cls, cfg).scalar(), 1.0);
  cfg.lambda = 0.0;
  EXPECT_DOUBLE_EQ(nagl::total_loss(seg, cls, cfg).scalar(), 0.7);
}

TEST(TotalLoss, GradientIsLinearInTheTwoTerms) {
  nagl::Rng rng(4);
  const auto in = random_instance(rng, 16);
  LossConfig cfg;
  cfg.lambda = 0.7;
  auto grad_of = [&](int which) {
    Tape<double> t;
    auto s = column(t, in.s, true);
    auto seg = nagl::seg_loss(s, in.m, cfg);
    auto cls = nagl::cls_loss(nagl::ad::mean_top_fraction(s, 0.01), 1, cfg);
    t.backward(which == 0 ? seg : which == 1 ? cls : nagl::total_loss(seg, cls, cfg));
    return s.grad();
  };
  const auto gs = grad_of(0), gc = grad_of(1), gt = grad_of(2);
  for (std::size_t i = 0; i < gt.size(); ++i) EXPECT_NEAR(gt[i], gc[i] + 0.7 * gs[i], 1e-14);
}

TEST(Losses, FiniteAndNonNegativeAcrossTheScoreRange) {
  nagl::Rng rng(5);
  for (const double edge : {0.0, 2.0}) {
    Tape<double> t;
    std::vector<double> s(16, edge);
    const auto m = oracle::random_mask(rng, 4, 4).bits;
    const double seg = nagl::seg_loss(column(t, s), m, LossConfig{}).scalar();
    EXPECT_TRUE(std::isfinite(seg));
    EXPECT_GE(seg, 0.0);
    for (int y : {0, 1}) EXPECT_TRUE(std::isfinite(nagl::cls_loss(column(t, {edge}), y, LossConfig{}).scalar()));
  }
}

TEST(Losses, InvalidConfigIsRejected) {
  LossConfig cfg;
  cfg.focal_alpha = 1.0;
  EXPECT_THROW(cfg.validate(), nagl::ConfigError);
  cfg = LossConfig{};
  cfg.lambda = -1;
  EXPECT_THROW(cfg.validate(), nagl::ConfigError);
}
