#pragma once

// Exact cosine nearest-neighbour search against a bank of normal patches,
// the normal-guided score map and feature-minus-neighbour residuals.
//
// Features are expected to be L2-normalized, so cosine distance is
// clamp(1 - <a, b>, 0, 1). Dot products accumulate in double, sequentially
// over channels.

#include <algorithm>
#include <memory>
#include <span>
#include <vector>

#include "nagl/autodiff.hpp"
#include "nagl/error.hpp"
#include "nagl/feature_store.hpp"

namespace nagl {

inline double dot(std::span<const float> a, std::span<const float> b) {
  double acc = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) acc += static_cast<double>(a[k]) * static_cast<double>(b[k]);
  return acc;
}

inline double cosine_distance(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) {
    throw ShapeError("cosine_distance: dimension " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
  }
  return std::clamp(1.0 - dot(a, b), 0.0, 1.0);
}

// Patch rows of one or more feature maps stacked along the patch axis.
class PatchBank {
 public:
  PatchBank() = default;

  explicit PatchBank(const PatchFeatureMap& map) { append(map); }

  explicit PatchBank(std::span<const PatchFeatureMap> maps) {
    for (const auto& m : maps) append(m);
  }

  explicit PatchBank(std::span<const std::shared_ptr<const PatchFeatureMap>> maps) {
    for (const auto& m : maps) append(*m);
  }

  void append(const PatchFeatureMap& map) {
    if (rows_ > 0 && map.channels() != channels_) {
      throw ShapeError("PatchBank: channel mismatch " + std::to_string(map.channels()) + " vs " +
                       std::to_string(channels_));
    }
    channels_ = map.channels();
    values_.insert(values_.end(), map.values().begin(), map.values().end());
    rows_ += map.patches();
  }

  std::size_t rows() const { return rows_; }
  std::size_t channels() const { return channels_; }
  bool empty() const { return rows_ == 0; }
  std::span<const float> row(std::size_t i) const { return {values_.data() + i * channels_, channels_}; }

  template <typename T>
  Matrix<T> to_matrix() const {
    return Matrix<T>(rows_, channels_, std::vector<T>(values_.begin(), values_.end()));
  }

 private:
  std::vector<float> values_;
  std::size_t rows_ = 0;
  std::size_t channels_ = 0;
};

struct NNResult {
  std::vector<std::size_t> indices;  // flat index into the normal bank
  std::vector<double> distances;     // clamped cosine distance
};

// For each source row, the normal row with the largest inner product (the
// smallest unclamped cosine distance); ties go to the lowest flat index.
inline NNResult nearest_normal(const PatchBank& source, const PatchBank& normals) {
  if (normals.empty()) throw DataError("nearest_normal: no normal reference patches");
  if (source.channels() != normals.channels()) {
    throw ShapeError("nearest_normal: channel mismatch " + std::to_string(source.channels()) + " vs " +
                     std::to_string(normals.channels()));
  }
  NNResult out;
  out.indices.resize(source.rows());
  out.distances.resize(source.rows());
  for (std::size_t i = 0; i < source.rows(); ++i) {
    const auto q = source.row(i);
    std::size_t best = 0;
    double best_dot = dot(q, normals.row(0));
    for (std::size_t j = 1; j < normals.rows(); ++j) {
      const double d = dot(q, normals.row(j));
      if (d > best_dot) {
        best_dot = d;
        best = j;
      }
    }
    out.indices[i] = best;
    out.distances[i] = std::clamp(1.0 - best_dot, 0.0, 1.0);
  }
  return out;
}

inline NNResult nearest_normal(const PatchFeatureMap& queries, const PatchBank& normals) {
  return nearest_normal(PatchBank(queries), normals);
}

// S_n: per-patch distance to the nearest normal patch, in [0, 1].
inline std::vector<double> normal_guided_score(const NNResult& nn) { return nn.distances; }

inline std::vector<double> normal_guided_score(const PatchFeatureMap& queries, const PatchBank& normals) {
  return nearest_normal(queries, normals).distances;
}

// Rows are source_i - normals[nn.indices[i]], computed in double (exact for
// f32 inputs). Not re-normalized.
struct ResidualMap {
  Matrix<double> values;
};

inline ResidualMap residual(const PatchBank& source, const PatchBank& normals, const NNResult& nn) {
  if (nn.indices.size() != source.rows()) throw ShapeError("residual: NN result does not match source rows");
  ResidualMap out{Matrix<double>(source.rows(), source.channels())};
  for (std::size_t i = 0; i < source.rows(); ++i) {
    const auto s = source.row(i);
    const auto n = normals.row(nn.indices[i]);
    auto r = out.values.row(i);
    for (std::size_t k = 0; k < s.size(); ++k) r[k] = static_cast<double>(s[k]) - static_cast<double>(n[k]);
  }
  return out;
}

inline ResidualMap residual(const PatchBank& source, const PatchBank& normals) {
  return residual(source, normals, nearest_normal(source, normals));
}

}  // namespace nagl
