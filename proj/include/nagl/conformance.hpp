#pragma once

// Checks an exported dataset (manifest + feature/mask files) against the
// format rules and invariants the engine relies on, collecting every
// violation instead of stopping at the first.

#include <cmath>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "nagl/error.hpp"
#include "nagl/feature_store.hpp"

namespace nagl {

struct Violation {
  std::string path;
  std::string message;
};

struct CategoryCounts {
  std::size_t train_normal = 0, test_normal = 0, test_abnormal = 0;
  std::set<std::string> defect_types;
};

struct VerifyReport {
  std::vector<Violation> violations;
  std::map<std::string, CategoryCounts> categories;
  std::size_t records = 0;

  bool ok() const { return violations.empty(); }
  std::size_t defect_type_count() const {
    std::size_t n = 0;
    for (const auto& [_, c] : categories) n += c.defect_types.size();
    return n;
  }
};

struct VerifyOptions {
  // Rows must be unit-norm within this tolerance (exported features are
  // pre-normalized); negative disables the check.
  double unit_norm_tolerance = 1e-3;
};

inline VerifyReport verify_dataset(const DatasetManifest& manifest, const VerifyOptions& opt = {}) {
  VerifyReport rep;
  rep.records = manifest.records.size();
  try {
    manifest.validate();
  } catch (const Error& e) {
    rep.violations.push_back({"manifest", e.what()});
  }
  for (const auto& r : manifest.records) {
    auto& counts = rep.categories[r.category];
    if (r.split == Split::train) ++counts.train_normal;
    else if (r.is_abnormal()) ++counts.test_abnormal;
    else ++counts.test_normal;
    if (r.is_abnormal()) counts.defect_types.insert(r.defect_type);

    const auto fpath = manifest.resolve(r.feature_path);
    std::size_t h = 0, w = 0;
    try {
      const auto map = read_feature_file(fpath, false);
      h = map.height();
      w = map.width();
      if (r.image_h < h || r.image_w < w) {
        rep.violations.push_back({fpath.string(), "image size smaller than the patch grid"});
      }
      if (opt.unit_norm_tolerance >= 0.0) {
        for (std::size_t i = 0; i < map.patches(); ++i) {
          double sq = 0.0;
          for (float v : map.patch(i)) sq += static_cast<double>(v) * v;
          if (std::abs(std::sqrt(sq) - 1.0) > opt.unit_norm_tolerance) {
            std::ostringstream os;
            os << "patch " << i << " has norm " << std::sqrt(sq) << " (expected unit rows)";
            rep.violations.push_back({fpath.string(), os.str()});
            break;
          }
        }
      }
    } catch (const Error& e) {
      rep.violations.push_back({fpath.string(), e.what()});
    }
    if (!r.mask_path) continue;
    const auto mpath = manifest.resolve(*r.mask_path);
    try {
      const auto mask = read_mask_file(mpath);
      const bool pixel_res = mask.height == r.image_h && mask.width == r.image_w;
      const bool patch_res = h != 0 && mask.height == h && mask.width == w;
      if (!pixel_res && !patch_res) {
        rep.violations.push_back({mpath.string(), "mask is " + std::to_string(mask.height) + "x" +
                                                      std::to_string(mask.width) +
                                                      ", matching neither the image nor the patch grid"});
      } else if (r.is_abnormal() && h != 0) {
        const auto patches = pixel_res ? downsample_mask(mask, h, w) : mask;
        if (!patches.any()) rep.violations.push_back({mpath.string(), "abnormal image with an empty mask"});
      } else if (!r.is_abnormal() && mask.any()) {
        rep.violations.push_back({mpath.string(), "normal image with a non-empty mask"});
      }
    } catch (const Error& e) {
      rep.violations.push_back({mpath.string(), e.what()});
    }
  }
  return rep;
}

inline std::string format_verify_report(const VerifyReport& rep) {
  std::ostringstream os;
  os << "category\ttrain_normal\ttest_normal\ttest_abnormal\tdefect_types\n";
  CategoryCounts total;
  std::size_t types = 0;
  for (const auto& [cat, c] : rep.categories) {
    os << cat << '\t' << c.train_normal << '\t' << c.test_normal << '\t' << c.test_abnormal << '\t'
       << c.defect_types.size() << '\n';
    total.train_normal += c.train_normal;
    total.test_normal += c.test_normal;
    total.test_abnormal += c.test_abnormal;
    types += c.defect_types.size();
  }
  os << "total\t" << total.train_normal << '\t' << total.test_normal << '\t' << total.test_abnormal << '\t' << types
     << '\n';
  os << "categories: " << rep.categories.size() << ", records: " << rep.records
     << ", violations: " << rep.violations.size() << '\n';
  for (const auto& v : rep.violations) os << "VIOLATION " << v.path << ": " << v.message << '\n';
  return os.str();
}

}  // namespace nagl
