#pragma once

// Segmentation (focal + dice) and classification (BCE) losses on fused
// scores. Scores in [0, 2] map to probabilities by p = clamp(S / 2, eps, 1 - eps).

#include <cstdint>
#include <vector>

#include "nagl/autodiff.hpp"
#include "nagl/error.hpp"

namespace nagl {

struct LossConfig {
  double lambda = 1.0;
  double focal_gamma = 2.0;
  double focal_alpha = 0.25;
  double dice_eps = 1.0;
  double prob_clamp_eps = 1e-6;

  void validate() const {
    if (!(lambda >= 0.0)) throw ConfigError("loss: lambda must be >= 0");
    if (!(focal_gamma >= 0.0)) throw ConfigError("loss: focal_gamma must be >= 0");
    if (!(focal_alpha > 0.0 && focal_alpha < 1.0)) throw ConfigError("loss: focal_alpha must be in (0, 1)");
    if (!(prob_clamp_eps > 0.0 && prob_clamp_eps <= 1e-2)) throw ConfigError("loss: prob_clamp_eps must be in (0, 1e-2]");
    if (!(dice_eps > 0.0)) throw ConfigError("loss: dice_eps must be > 0");
  }
};

template <typename T>
Var<T> score_to_probability(Var<T> scores, const LossConfig& cfg) {
  const T eps = static_cast<T>(cfg.prob_clamp_eps);
  return ad::clamp(ad::scale(scores, T(0.5)), eps, T(1) - eps);
}

// alpha-balanced focal loss, averaged over patches.
template <typename T>
Var<T> focal_loss(Var<T> prob, Var<T> target, const LossConfig& cfg) {
  const T alpha = static_cast<T>(cfg.focal_alpha);
  const T gamma = static_cast<T>(cfg.focal_gamma);
  auto q = ad::one_minus(prob);
  auto pos = ad::mul(target, ad::mul(ad::pow(q, gamma), ad::log(prob)));
  auto neg = ad::mul(ad::one_minus(target), ad::mul(ad::pow(prob, gamma), ad::log(q)));
  return ad::scale(ad::mean(ad::add(ad::scale(pos, alpha), ad::scale(neg, T(1) - alpha))), T(-1));
}

// 1 - (2 sum(p m) + eps) / (sum(p) + sum(m) + eps)
template <typename T>
Var<T> dice_loss(Var<T> prob, Var<T> target, const LossConfig& cfg) {
  const T eps = static_cast<T>(cfg.dice_eps);
  auto num = ad::add_scalar(ad::scale(ad::sum(ad::mul(prob, target)), T(2)), eps);
  auto den = ad::add_scalar(ad::add(ad::sum(prob), ad::sum(target)), eps);
  return ad::one_minus(ad::div(num, den));
}

template <typename T>
Matrix<T> mask_column(const std::vector<std::uint8_t>& bits) {
  Matrix<T> m(bits.size(), 1);
  for (std::size_t i = 0; i < bits.size(); ++i) m[i] = bits[i] ? T(1) : T(0);
  return m;
}

// Focal + dice between the fused map (L x 1) and the query's patch mask.
template <typename T>
Var<T> seg_loss(Var<T> fused, const std::vector<std::uint8_t>& mask, const LossConfig& cfg) {
  if (fused.value().size() != mask.size()) {
    throw ShapeError("seg_loss: " + std::to_string(fused.value().size()) + " scores vs " +
                     std::to_string(mask.size()) + " mask bits");
  }
  auto target = fused.tape().constant(Matrix<T>(fused.rows(), fused.cols(), mask_column<T>(mask).data()));
  auto p = score_to_probability(fused, cfg);
  return ad::add(focal_loss(p, target, cfg), dice_loss(p, target, cfg));
}

// Binary cross-entropy of the image score against the label.
template <typename T>
Var<T> cls_loss(Var<T> image_score, int label, const LossConfig& cfg) {
  if (image_score.value().size() != 1) throw ShapeError("cls_loss: image score must be scalar");
  auto p = score_to_probability(image_score, cfg);
  const T y = label ? T(1) : T(0);
  return ad::add(ad::scale(ad::log(p), -y), ad::scale(ad::log(ad::one_minus(p)), -(T(1) - y)));
}

template <typename T>
Var<T> total_loss(Var<T> seg, Var<T> cls, const LossConfig& cfg) {
  return ad::add(cls, ad::scale(seg, static_cast<T>(cfg.lambda)));
}

}  // namespace nagl
