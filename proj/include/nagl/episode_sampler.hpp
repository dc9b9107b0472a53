#pragma once

// Episode construction. A training episode draws its query uniformly from
// the labelled pool (test split) of the training-domain dataset, K1 normal
// references from the same category's train split and K2 abnormal references
// of the query's defect type (a random defect type for normal queries). Test
// reference sets are drawn once per (category, defect_type) and reused for
// every query of that key.

#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "nagl/error.hpp"
#include "nagl/feature_store.hpp"
#include "nagl/rng.hpp"

namespace nagl {

enum class SamplerMode { train, test };

struct SamplerConfig {
  std::size_t k1 = 1;
  std::size_t k2 = 1;
  std::uint64_t seed = 0;
  SamplerMode mode = SamplerMode::train;

  // Throws on invalid counts; returns non-fatal warnings.
  std::vector<std::string> validate() const {
    if (k1 == 0 || k2 == 0) throw ConfigError("sampler: K1 and K2 must be positive");
    std::vector<std::string> warnings;
    if (k1 < k2) warnings.push_back("sampler: K1 < K2 (fewer normal than abnormal references)");
    return warnings;
  }
};

// Loads feature maps and masks for manifest records on demand. Maps are
// shared read-only; the cache evicts in insertion order once the byte
// budget is exceeded. Safe to call from several threads.
class FeatureCache {
 public:
  explicit FeatureCache(const DatasetManifest& manifest, bool normalize = true,
                        std::size_t byte_budget = std::size_t{4} << 30)
      : manifest_(manifest), normalize_(normalize), budget_(byte_budget) {}

  const DatasetManifest& manifest() const { return manifest_; }

  std::shared_ptr<const PatchFeatureMap> features(std::size_t record) {
    {
      std::lock_guard lock(mu_);
      if (auto it = maps_.find(record); it != maps_.end()) return it->second;
    }
    const auto& r = manifest_.records.at(record);
    auto map = std::make_shared<const PatchFeatureMap>(read_feature_file(manifest_.resolve(r.feature_path), normalize_));
    std::lock_guard lock(mu_);
    auto [it, inserted] = maps_.emplace(record, map);
    if (inserted) {
      order_.push_back(record);
      bytes_ += map->values().size() * sizeof(float);
      while (bytes_ > budget_ && order_.size() > 1) {
        const auto victim = order_.front();
        order_.pop_front();
        bytes_ -= maps_[victim]->values().size() * sizeof(float);
        maps_.erase(victim);
      }
    }
    return it->second;
  }

  // Patch-level mask on the record's feature grid. Mask files may be stored
  // at patch resolution or at image resolution (then max-pooled).
  PatchMask patch_mask(std::size_t record) {
    const auto map = features(record);
    const auto& r = manifest_.records.at(record);
    if (!r.mask_path) return PatchMask(map->height(), map->width());
    auto mask = read_mask_file(manifest_.resolve(*r.mask_path));
    if (mask.height == map->height() && mask.width == map->width()) return mask;
    return downsample_mask(mask, map->height(), map->width());
  }

  // Ground truth at image resolution (image_h x image_w).
  PixelMask pixel_mask(std::size_t record) {
    const auto& r = manifest_.records.at(record);
    if (!r.mask_path) return PixelMask(r.image_h, r.image_w);
    auto mask = read_mask_file(manifest_.resolve(*r.mask_path));
    if (mask.height == r.image_h && mask.width == r.image_w) return mask;
    const auto map = features(record);
    if (mask.height == map->height() && mask.width == map->width()) {
      return upsample_mask_nearest(mask, r.image_h, r.image_w);
    }
    throw DataError("mask " + *r.mask_path + " matches neither the image nor the patch grid");
  }

 private:
  const DatasetManifest& manifest_;
  bool normalize_;
  std::size_t budget_;
  std::mutex mu_;
  std::unordered_map<std::size_t, std::shared_ptr<const PatchFeatureMap>> maps_;
  std::deque<std::size_t> order_;
  std::size_t bytes_ = 0;
};

struct AbnormalReference {
  std::shared_ptr<const PatchFeatureMap> features;
  PatchMask mask;
};

struct ReferenceSet {
  std::string category;
  std::vector<std::shared_ptr<const PatchFeatureMap>> normals;
  std::vector<AbnormalReference> abnormals;
  std::vector<std::string> image_ids;  // normals first, then abnormals

  std::size_t k1() const { return normals.size(); }
  std::size_t k2() const { return abnormals.size(); }
  bool contains(const std::string& image_id) const {
    for (const auto& id : image_ids) {
      if (id == image_id) return true;
    }
    return false;
  }
};

struct Episode {
  std::string image_id;
  std::string category;
  std::string defect_type;
  std::shared_ptr<const PatchFeatureMap> query;
  PatchMask query_mask;
  int label = 0;
  ReferenceSet refs;
};

// Record indices making up one episode.
struct EpisodePlan {
  std::size_t query = 0;
  std::vector<std::size_t> normals;
  std::vector<std::size_t> abnormals;
  bool operator==(const EpisodePlan&) const = default;
};

using DefectKey = std::pair<std::string, std::string>;  // (category, defect_type)

struct ReferencePlan {
  std::vector<std::size_t> normals;
  std::vector<std::size_t> abnormals;
  bool operator==(const ReferencePlan&) const = default;
};

struct TestReferencePlan {
  std::map<DefectKey, ReferencePlan> sets;
  // Defect key whose reference set scores the category's normal queries.
  std::map<std::string, std::string> normal_key;

  // Reference key for a test query, or nullopt when the query is one of
  // that key's own references.
  std::optional<DefectKey> key_for(const ManifestRecord& r, std::size_t record) const {
    DefectKey key{r.category, r.is_abnormal() ? r.defect_type : normal_key.at(r.category)};
    const auto& set = sets.at(key);
    for (auto a : set.abnormals) {
      if (a == record) return std::nullopt;
    }
    return key;
  }

  bool operator==(const TestReferencePlan&) const = default;
};

class EpisodeSampler {
 public:
  EpisodeSampler(const DatasetManifest& manifest, SamplerConfig cfg) : manifest_(manifest), cfg_(cfg) {
    cfg_.validate();
    for (std::size_t i = 0; i < manifest.records.size(); ++i) {
      const auto& r = manifest.records[i];
      if (r.split == Split::train) {
        if (!r.is_abnormal()) train_normals_[r.category].push_back(i);
      } else if (r.is_abnormal()) {
        abnormals_[{r.category, r.defect_type}].push_back(i);
        defect_types_[r.category].insert(r.defect_type);
      }
    }
    for (std::size_t i = 0; i < manifest.records.size(); ++i) {
      const auto& r = manifest.records[i];
      if (r.split != Split::test) continue;
      check_category(r.category);
      if (r.is_abnormal()) {
        if (abnormals_.at({r.category, r.defect_type}).size() <= cfg_.k2) {
          ++ineligible_;
          continue;
        }
      } else if (feasible_types(r.category).empty()) {
        ++ineligible_;
        continue;
      }
      pool_.push_back(i);
    }
    if (pool_.empty() && cfg_.mode == SamplerMode::train) {
      throw DataError("sampler: no test-split record can form an episode with K1=" + std::to_string(cfg_.k1) +
                      ", K2=" + std::to_string(cfg_.k2));
    }
  }

  const std::vector<std::size_t>& query_pool() const { return pool_; }
  std::size_t ineligible_queries() const { return ineligible_; }

  EpisodePlan plan_train(Rng& rng) const {
    if (pool_.empty()) throw DataError("sampler: empty query pool");
    EpisodePlan plan;
    plan.query = pool_[static_cast<std::size_t>(rng.below(pool_.size()))];
    const auto& q = manifest_.records[plan.query];
    plan.normals = pick(train_normals_.at(q.category), cfg_.k1, rng, std::nullopt);
    std::string defect = q.defect_type;
    if (!q.is_abnormal()) {
      const auto types = feasible_types(q.category);
      defect = types[static_cast<std::size_t>(rng.below(types.size()))];
    }
    plan.abnormals = pick(abnormals_.at({q.category, defect}), cfg_.k2, rng, plan.query);
    return plan;
  }

  // One reference set per (category, defect_type); normals are drawn once
  // per category and shared by all of its defect keys.
  TestReferencePlan plan_test(Rng& rng) const {
    TestReferencePlan out;
    for (const auto& [category, types] : defect_types_) {
      check_category(category);
      const auto normals = pick(train_normals_.at(category), cfg_.k1, rng, std::nullopt);
      for (const auto& type : types) {
        const auto& cands = abnormals_.at({category, type});
        if (cands.size() < cfg_.k2) {
          throw DataError("sampler: category '" + category + "' defect '" + type + "' has " +
                          std::to_string(cands.size()) + " abnormal samples, needs K2=" + std::to_string(cfg_.k2));
        }
        out.sets[{category, type}] = ReferencePlan{normals, pick(cands, cfg_.k2, rng, std::nullopt)};
      }
      std::vector<std::string> list(types.begin(), types.end());
      out.normal_key[category] = list[static_cast<std::size_t>(rng.below(list.size()))];
    }
    return out;
  }

 private:
  void check_category(const std::string& category) const {
    auto it = train_normals_.find(category);
    const std::size_t have = it == train_normals_.end() ? 0 : it->second.size();
    if (have < cfg_.k1) {
      throw DataError("sampler: category '" + category + "' has " + std::to_string(have) +
                      " train normals, needs K1=" + std::to_string(cfg_.k1) + " (short by " +
                      std::to_string(cfg_.k1 - have) + ")");
    }
    if (!defect_types_.count(category)) {
      throw DataError("sampler: category '" + category + "' has no abnormal samples, needs K2=" +
                      std::to_string(cfg_.k2));
    }
    if (feasible_types(category).empty()) {
      throw DataError("sampler: no defect type of category '" + category + "' has K2=" + std::to_string(cfg_.k2) +
                      " abnormal samples");
    }
  }

  std::vector<std::string> feasible_types(const std::string& category) const {
    std::vector<std::string> out;
    auto it = defect_types_.find(category);
    if (it == defect_types_.end()) return out;
    for (const auto& t : it->second) {
      if (abnormals_.at({category, t}).size() >= cfg_.k2) out.push_back(t);
    }
    return out;
  }

  static std::vector<std::size_t> pick(const std::vector<std::size_t>& candidates, std::size_t k, Rng& rng,
                                       std::optional<std::size_t> exclude) {
    std::vector<std::size_t> pool;
    pool.reserve(candidates.size());
    for (auto c : candidates) {
      if (!exclude || c != *exclude) pool.push_back(c);
    }
    if (pool.size() < k) throw DataError("sampler: not enough candidates");
    std::vector<std::size_t> out;
    for (auto i : rng.sample_without_replacement(pool.size(), k)) out.push_back(pool[i]);
    return out;
  }

  const DatasetManifest& manifest_;
  SamplerConfig cfg_;
  std::map<std::string, std::vector<std::size_t>> train_normals_;
  std::map<DefectKey, std::vector<std::size_t>> abnormals_;
  std::map<std::string, std::set<std::string>> defect_types_;
  std::vector<std::size_t> pool_;
  std::size_t ineligible_ = 0;
};

inline ReferenceSet materialize_references(const std::vector<std::size_t>& normals,
                                           const std::vector<std::size_t>& abnormals, FeatureCache& cache) {
  const auto& records = cache.manifest().records;
  ReferenceSet refs;
  for (auto n : normals) {
    refs.category = records[n].category;
    refs.normals.push_back(cache.features(n));
    refs.image_ids.push_back(records[n].image_id);
  }
  for (auto a : abnormals) {
    AbnormalReference ref{cache.features(a), cache.patch_mask(a)};
    if (!ref.mask.any()) {
      throw DataError("abnormal reference " + records[a].image_id + " has an empty patch mask");
    }
    refs.abnormals.push_back(std::move(ref));
    refs.image_ids.push_back(records[a].image_id);
  }
  return refs;
}

inline Episode make_episode(std::size_t query, ReferenceSet refs, FeatureCache& cache) {
  const auto& r = cache.manifest().records.at(query);
  Episode ep;
  ep.image_id = r.image_id;
  ep.category = r.category;
  ep.defect_type = r.defect_type;
  ep.query = cache.features(query);
  ep.query_mask = cache.patch_mask(query);
  ep.label = r.is_abnormal() ? 1 : 0;
  if (ep.query_mask.any() != (ep.label == 1)) {
    throw DataError("episode " + r.image_id + ": label and ground-truth mask disagree");
  }
  if (refs.category != ep.category) throw DataError("episode " + r.image_id + ": reference category mismatch");
  ep.refs = std::move(refs);
  return ep;
}

inline Episode materialize(const EpisodePlan& plan, FeatureCache& cache) {
  return make_episode(plan.query, materialize_references(plan.normals, plan.abnormals, cache), cache);
}

inline Episode sample_train_episode(const EpisodeSampler& sampler, Rng& rng, FeatureCache& cache) {
  return materialize(sampler.plan_train(rng), cache);
}

inline std::map<DefectKey, ReferenceSet> build_test_reference_sets(const TestReferencePlan& plan,
                                                                   FeatureCache& cache) {
  std::map<DefectKey, ReferenceSet> out;
  for (const auto& [key, set] : plan.sets) out[key] = materialize_references(set.normals, set.abnormals, cache);
  return out;
}

}  // namespace nagl
