#pragma once

// Frozen-model scoring of one episode: NN pass against the normal
// references, RM-AFL pass, fusion and image score; plus upsampling,
// residual-norm diagnostics and score-map export.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "nagl/autodiff.hpp"
#include "nagl/episode_sampler.hpp"
#include "nagl/nn_scoring.hpp"
#include "nagl/rm_afl.hpp"

namespace nagl {

enum class ScoreStage { normal_guided, abnormal_guided, fused };

struct ScoreMap {
  std::size_t h = 0, w = 0;
  ScoreStage stage = ScoreStage::fused;
  std::vector<double> values;
};

struct EpisodeScores {
  ScoreMap normal;    // S_n in [0, 1]
  ScoreMap abnormal;  // S_a in [0, 1]
  ScoreMap fused;     // S = S_n + S_a in [0, 2]
  double image = 0.0;         // top-1% mean of S
  double normal_image = 0.0;  // top-1% mean of S_n alone
};

// Runs both NN passes and packs the graph inputs. The query and the abnormal
// references are matched against the same stacked normal bank.
template <typename T>
GraphInputs<T> prepare_inputs(const Episode& ep) {
  if (ep.refs.normals.empty()) throw DataError("episode " + ep.image_id + ": no normal references");
  if (ep.refs.abnormals.empty()) throw DataError("episode " + ep.image_id + ": no abnormal references");
  const PatchBank normals(std::span<const std::shared_ptr<const PatchFeatureMap>>(ep.refs.normals));
  const PatchBank query(*ep.query);
  PatchBank abnormal;
  std::vector<std::uint8_t> mask;
  for (const auto& a : ep.refs.abnormals) {
    if (a.mask.size() != a.features->patches()) throw ShapeError("abnormal reference mask does not match its map");
    abnormal.append(*a.features);
    mask.insert(mask.end(), a.mask.bits.begin(), a.mask.bits.end());
  }
  const auto nn_q = nearest_normal(query, normals);
  const auto nn_a = nearest_normal(abnormal, normals);

  GraphInputs<T> in;
  in.query_features = query.to_matrix<T>();
  in.query_residuals = residual(query, normals, nn_q).values.template cast<T>();
  in.abnormal_features = abnormal.to_matrix<T>();
  in.abnormal_residuals = residual(abnormal, normals, nn_a).values.template cast<T>();
  in.abnormal_mask = std::move(mask);
  in.normal_score = Matrix<T>(query.rows(), 1);
  for (std::size_t i = 0; i < query.rows(); ++i) in.normal_score[i] = static_cast<T>(nn_q.distances[i]);
  return in;
}

namespace detail {
template <typename T>
ScoreMap to_score_map(const Matrix<T>& m, std::size_t h, std::size_t w, ScoreStage stage) {
  ScoreMap out{h, w, stage, {}};
  out.values.assign(m.data().begin(), m.data().end());
  return out;
}
}  // namespace detail

struct ScoreOptions {
  // false forces S_a = 0 (pure nearest-neighbour scoring).
  bool abnormal_branch = true;
};

template <typename T>
EpisodeScores score_inputs(const ModelParams<T>& params, const GraphInputs<T>& in, std::size_t h, std::size_t w,
                           ScoreOptions opt = {}) {
  Tape<T> tape;
  const auto pv = bind_params(tape, params, false);
  Var<T> s_a;
  if (opt.abnormal_branch) {
    auto fq = tape.constant(in.query_features);
    auto mask = anomaly_attention_mask(in.abnormal_mask, pv.mask_value);
    auto p_tilde = residual_mining(pv, tape.constant(in.abnormal_features), tape.constant(in.abnormal_residuals), mask);
    auto p_hat = anomaly_feature_learning(pv, p_tilde, tape.constant(in.query_residuals), fq);
    s_a = abnormal_guided_score(p_hat, fq);
  } else {
    s_a = tape.constant(Matrix<T>(in.normal_score.rows(), 1));
  }
  auto s_n = tape.constant(in.normal_score);
  auto fused = fuse_scores(s_n, s_a);
  auto image = image_score(fused);

  EpisodeScores out;
  out.normal = detail::to_score_map(in.normal_score, h, w, ScoreStage::normal_guided);
  out.abnormal = detail::to_score_map(s_a.value(), h, w, ScoreStage::abnormal_guided);
  out.fused = detail::to_score_map(fused.value(), h, w, ScoreStage::fused);
  out.image = static_cast<double>(image.scalar());
  out.normal_image = static_cast<double>(
      mean_top_fraction_value(std::span<const T>(in.normal_score.data()), kImageScoreFraction));
  return out;
}

template <typename T>
EpisodeScores score_episode(const ModelParams<T>& params, const Episode& ep, ScoreOptions opt = {}) {
  if (ep.query->channels() != params.channels) {
    throw ShapeError("score_episode: features have C=" + std::to_string(ep.query->channels()) + ", model has C=" +
                     std::to_string(params.channels));
  }
  return score_inputs(params, prepare_inputs<T>(ep), ep.query->height(), ep.query->width(), opt);
}

// Pure nearest-neighbour pipeline: S = S_n and s = top-1% mean of S_n, at
// the model precision T.
template <typename T>
EpisodeScores normal_only_scores(const Episode& ep) {
  const PatchBank normals(std::span<const std::shared_ptr<const PatchFeatureMap>>(ep.refs.normals));
  const auto nn = nearest_normal(*ep.query, normals);
  std::vector<T> s(nn.distances.begin(), nn.distances.end());
  EpisodeScores out;
  const std::size_t h = ep.query->height(), w = ep.query->width();
  out.normal = ScoreMap{h, w, ScoreStage::normal_guided, std::vector<double>(s.begin(), s.end())};
  out.abnormal = ScoreMap{h, w, ScoreStage::abnormal_guided, std::vector<double>(s.size(), 0.0)};
  out.fused = ScoreMap{h, w, ScoreStage::fused, out.normal.values};
  out.image = static_cast<double>(mean_top_fraction_value(std::span<const T>(s), kImageScoreFraction));
  out.normal_image = out.image;
  return out;
}

// Bilinear resize with half-pixel centres (align_corners = false).
inline std::vector<double> upsample_bilinear(std::span<const double> values, std::size_t h, std::size_t w,
                                             std::size_t H, std::size_t W) {
  if (values.size() != h * w || h == 0 || w == 0) throw ShapeError("upsample_bilinear: map size != h*w");
  if (H < h || W < w) throw ShapeError("upsample_bilinear: target smaller than source");
  auto axis = [](std::size_t out_i, std::size_t in_n, std::size_t out_n, std::size_t& i0, std::size_t& i1,
                 double& frac) {
    double src = (static_cast<double>(out_i) + 0.5) * static_cast<double>(in_n) / static_cast<double>(out_n) - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in_n - 1));
    i0 = static_cast<std::size_t>(std::floor(src));
    i1 = std::min(i0 + 1, in_n - 1);
    frac = src - static_cast<double>(i0);
  };
  std::vector<double> out(H * W);
  for (std::size_t y = 0; y < H; ++y) {
    std::size_t y0, y1;
    double fy;
    axis(y, h, H, y0, y1, fy);
    for (std::size_t x = 0; x < W; ++x) {
      std::size_t x0, x1;
      double fx;
      axis(x, w, W, x0, x1, fx);
      const double top = values[y0 * w + x0] * (1.0 - fx) + values[y0 * w + x1] * fx;
      const double bottom = values[y1 * w + x0] * (1.0 - fx) + values[y1 * w + x1] * fx;
      out[y * W + x] = top * (1.0 - fy) + bottom * fy;
    }
  }
  return out;
}

inline std::vector<double> upsample_bilinear(const ScoreMap& map, std::size_t H, std::size_t W) {
  return upsample_bilinear(map.values, map.h, map.w, H, W);
}

struct Histogram {
  double lo = 0.0, hi = 2.0;
  std::vector<std::size_t> counts;

  Histogram() = default;
  Histogram(double lo_, double hi_, std::size_t bins) : lo(lo_), hi(hi_), counts(bins, 0) {}

  void add(double v) {
    const double t = (v - lo) / (hi - lo) * static_cast<double>(counts.size());
    const auto b = static_cast<std::size_t>(std::clamp(t, 0.0, static_cast<double>(counts.size() - 1)));
    ++counts[b];
  }
  std::size_t total() const {
    std::size_t n = 0;
    for (auto c : counts) n += c;
    return n;
  }
};

struct ResidualNormStats {
  Histogram normal;
  Histogram abnormal;
  double normal_sum = 0.0, abnormal_sum = 0.0;

  double normal_mean() const { return normal.total() ? normal_sum / static_cast<double>(normal.total()) : 0.0; }
  double abnormal_mean() const {
    return abnormal.total() ? abnormal_sum / static_cast<double>(abnormal.total()) : 0.0;
  }
};

// L2 norms of query-minus-nearest-normal residuals, split by the query's
// ground-truth patch mask. Residuals of unit vectors lie in [0, 2].
inline ResidualNormStats residual_norm_stats(std::span<const Episode> episodes, std::size_t bins = 40) {
  ResidualNormStats stats{Histogram(0.0, 2.0, bins), Histogram(0.0, 2.0, bins)};
  for (const auto& ep : episodes) {
    const PatchBank normals(std::span<const std::shared_ptr<const PatchFeatureMap>>(ep.refs.normals));
    const PatchBank query(*ep.query);
    const auto res = residual(query, normals);
    for (std::size_t i = 0; i < query.rows(); ++i) {
      double sq = 0.0;
      for (double v : res.values.row(i)) sq += v * v;
      const double norm = std::sqrt(sq);
      if (ep.query_mask.bits.at(i)) {
        stats.abnormal.add(norm);
        stats.abnormal_sum += norm;
      } else {
        stats.normal.add(norm);
        stats.normal_sum += norm;
      }
    }
  }
  return stats;
}

// ASCII portable graymap; values mapped linearly from [lo, hi] to 0..255.
inline void write_pgm(const std::filesystem::path& path, std::span<const double> values, std::size_t h,
                      std::size_t w, double lo = 0.0, double hi = 2.0) {
  if (values.size() != h * w) throw ShapeError("write_pgm: size mismatch");
  std::ofstream os(path);
  if (!os) throw DataError("cannot open for writing: " + path.string());
  os << "P2\n" << w << ' ' << h << "\n255\n";
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      const double t = hi > lo ? (values[r * w + c] - lo) / (hi - lo) : 0.0;
      os << static_cast<int>(std::lround(std::clamp(t, 0.0, 1.0) * 255.0)) << (c + 1 == w ? '\n' : ' ');
    }
  }
  if (!os) throw DataError("write failed: " + path.string());
}

// Raw grid: h u32 | w u32 | h*w f32, little-endian.
inline void write_raw_grid(const std::filesystem::path& path, std::span<const double> values, std::size_t h,
                           std::size_t w) {
  if (values.size() != h * w) throw ShapeError("write_raw_grid: size mismatch");
  std::string out;
  io::put_u32(out, static_cast<std::uint32_t>(h));
  io::put_u32(out, static_cast<std::uint32_t>(w));
  for (double v : values) io::put_f32(out, static_cast<float>(v));
  io::write_file(path, out);
}

}  // namespace nagl
