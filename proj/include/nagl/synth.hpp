#pragma once

// Synthetic generalist benchmark. Each category owns a set of prototype
// directions; a normal patch is a noisy prototype, renormalized. An abnormal
// image carries one axis-aligned rectangle of patches whose features are
// additionally pushed along a per-(category, defect type) direction before
// renormalization. Categories are split into an original domain (training)
// and a target domain (evaluation) with disjoint category sets.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "nagl/error.hpp"
#include "nagl/feature_store.hpp"
#include "nagl/rng.hpp"

namespace nagl {

struct SynthConfig {
  std::size_t categories = 8;
  std::size_t train_categories = 5;  // the rest form the target domain
  std::size_t train_normals = 10;    // per category, train split
  std::size_t test_normals = 10;     // per category, test split
  std::size_t test_abnormals = 20;   // per category, test split
  std::size_t defect_types = 3;      // per category
  bool distinguish_types = true;     // false: every defect is labelled "ANY"
  std::size_t h = 16, w = 16, channels = 64;
  std::size_t prototypes = 12;
  std::size_t pixels_per_patch = 4;
  double noise = 0.9;   // norm of the Gaussian perturbation relative to a unit prototype
  double shift = 0.8;   // norm of the defect push before renormalization
  // > 0: every defect direction, in every category, lies in one shared
  // subspace of this rank; 0: directions are unconstrained.
  std::size_t defect_rank = 0;
  std::uint64_t seed = 0;

  std::size_t images_per_category() const { return train_normals + test_normals + test_abnormals; }

  void validate() const {
    if (categories == 0 || train_categories > categories) {
      throw ConfigError("synth: need 0 <= train_categories <= categories");
    }
    if (h == 0 || w == 0 || channels == 0 || prototypes == 0 || pixels_per_patch == 0) {
      throw ConfigError("synth: dimensions must be positive");
    }
    if (test_abnormals > 0 && defect_types == 0) throw ConfigError("synth: defect_types must be positive");
    if (!(noise >= 0.0) || !(shift >= 0.0)) throw ConfigError("synth: noise and shift must be >= 0");
  }
};

struct SynthOutput {
  DatasetManifest origin;  // training-domain categories
  DatasetManifest target;  // unseen categories
};

namespace detail {

inline std::vector<float> random_unit(Rng& rng, std::size_t c) {
  std::vector<double> v(c);
  double sq = 0.0;
  for (auto& x : v) {
    x = rng.normal();
    sq += x * x;
  }
  const double inv = 1.0 / std::sqrt(sq);
  std::vector<float> out(c);
  for (std::size_t i = 0; i < c; ++i) out[i] = static_cast<float>(v[i] * inv);
  return out;
}

// Unit vector along a random Gaussian combination of `basis` rows.
inline std::vector<float> combine_unit(const std::vector<std::vector<float>>& basis, Rng& rng) {
  std::vector<double> v(basis.front().size(), 0.0);
  for (const auto& b : basis) {
    const double g = rng.normal();
    for (std::size_t k = 0; k < v.size(); ++k) v[k] += g * b[k];
  }
  double sq = 0.0;
  for (double x : v) sq += x * x;
  const double inv = 1.0 / std::sqrt(sq);
  std::vector<float> out(v.size());
  for (std::size_t k = 0; k < v.size(); ++k) out[k] = static_cast<float>(v[k] * inv);
  return out;
}

inline void fill_normal_patch(std::span<float> dst, const std::vector<float>& proto, double noise, Rng& rng) {
  const double per_dim = noise / std::sqrt(static_cast<double>(dst.size()));
  for (std::size_t k = 0; k < dst.size(); ++k) dst[k] = static_cast<float>(proto[k] + per_dim * rng.normal());
}

inline void push_and_renormalize(std::span<float> dst, const std::vector<float>& direction, double shift) {
  double sq = 0.0;
  for (float v : dst) sq += static_cast<double>(v) * v;
  const double inv = sq > 0.0 ? 1.0 / std::sqrt(sq) : 0.0;
  for (std::size_t k = 0; k < dst.size(); ++k) dst[k] = static_cast<float>(dst[k] * inv + shift * direction[k]);
}

inline std::string pad2(std::size_t i) { return (i < 10 ? "0" : "") + std::to_string(i); }

}  // namespace detail

// Writes features/ and masks/ under out_dir and returns both manifests
// (paths relative to out_dir). Pixel masks are stored at image resolution.
inline SynthOutput generate_synthetic(const SynthConfig& cfg, const std::filesystem::path& out_dir) {
  cfg.validate();
  namespace fs = std::filesystem;
  fs::create_directories(out_dir / "features");
  fs::create_directories(out_dir / "masks");
  const Rng root(cfg.seed);
  const std::size_t H = cfg.h * cfg.pixels_per_patch, W = cfg.w * cfg.pixels_per_patch;
  const std::size_t L = cfg.h * cfg.w;
  SynthOutput out;
  std::vector<std::vector<float>> defect_basis;
  Rng basis_rng = root.fork(~std::uint64_t{0});
  for (std::size_t b = 0; b < cfg.defect_rank; ++b) defect_basis.push_back(detail::random_unit(basis_rng, cfg.channels));

  for (std::size_t cat = 0; cat < cfg.categories; ++cat) {
    const std::string category = "cat" + detail::pad2(cat);
    Rng rng = root.fork(cat);
    std::vector<std::vector<float>> protos;
    for (std::size_t p = 0; p < cfg.prototypes; ++p) protos.push_back(detail::random_unit(rng, cfg.channels));
    std::vector<std::vector<float>> directions;
    for (std::size_t t = 0; t < cfg.defect_types; ++t) {
      directions.push_back(cfg.defect_rank == 0 ? detail::random_unit(rng, cfg.channels)
                                                : detail::combine_unit(defect_basis, rng));
    }

    DatasetManifest& manifest = cat < cfg.train_categories ? out.origin : out.target;
    for (std::size_t img = 0; img < cfg.images_per_category(); ++img) {
      const bool train = img < cfg.train_normals;
      const bool abnormal = img >= cfg.train_normals + cfg.test_normals;
      const std::size_t type = abnormal ? (img - cfg.train_normals - cfg.test_normals) % cfg.defect_types : 0;

      PatchFeatureMap map(cfg.h, cfg.w, cfg.channels);
      for (std::size_t i = 0; i < L; ++i) {
        detail::fill_normal_patch(map.patch(i), protos[static_cast<std::size_t>(rng.below(protos.size()))],
                                  cfg.noise, rng);
      }
      PatchMask patch_mask(cfg.h, cfg.w);
      if (abnormal) {
        // Rectangle of at most (h/2) x (w/2) patches, i.e. <= 25% of L.
        const std::size_t rh = 1 + static_cast<std::size_t>(rng.below(std::max<std::size_t>(1, cfg.h / 2)));
        const std::size_t rw = 1 + static_cast<std::size_t>(rng.below(std::max<std::size_t>(1, cfg.w / 2)));
        const std::size_t r0 = static_cast<std::size_t>(rng.below(cfg.h - rh + 1));
        const std::size_t c0 = static_cast<std::size_t>(rng.below(cfg.w - rw + 1));
        for (std::size_t r = r0; r < r0 + rh; ++r) {
          for (std::size_t c = c0; c < c0 + rw; ++c) {
            detail::push_and_renormalize(map.patch(r * cfg.w + c), directions[type], cfg.shift);
            patch_mask.set(r, c);
          }
        }
      }
      map.normalize_rows();

      ManifestRecord rec;
      rec.image_id = category + "_" + (train ? "train" : "test") + "_" + detail::pad2(img);
      rec.category = category;
      rec.defect_type = abnormal ? (cfg.distinguish_types ? "type" + std::to_string(type) : "ANY")
                                 : std::string(kNormalDefect);
      rec.split = train ? Split::train : Split::test;
      rec.feature_path = "features/" + rec.image_id + ".nagf";
      rec.image_h = static_cast<std::uint32_t>(H);
      rec.image_w = static_cast<std::uint32_t>(W);
      write_feature_file(map, out_dir / rec.feature_path);
      if (abnormal) {
        rec.mask_path = "masks/" + rec.image_id + ".nagm";
        write_mask_file(upsample_mask_nearest(patch_mask, H, W), out_dir / *rec.mask_path);
      }
      manifest.records.push_back(std::move(rec));
    }
  }
  out.origin.base_dir = out_dir;
  out.target.base_dir = out_dir;
  save_manifest(out.origin, out_dir / "origin.tsv");
  save_manifest(out.target, out_dir / "target.tsv");
  return out;
}

}  // namespace nagl
