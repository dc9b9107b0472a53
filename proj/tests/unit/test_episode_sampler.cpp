#include <gtest/gtest.h>

#include <filesystem>
#include <set>

#include "../support/oracles.hpp"

namespace fs = std::filesystem;
using nagl::EpisodeSampler;
using nagl::Rng;
using nagl::SamplerConfig;
using nagl::Split;

namespace {

void add(nagl::DatasetManifest& m, const std::string& id, const std::string& cat, const std::string& defect,
         Split split) {
  const bool abnormal = defect != "NORMAL";
  m.records.push_back({id, cat, defect, split, id + ".nagf",
                       abnormal ? std::optional<std::string>(id + ".nagm") : std::nullopt, 8, 8});
}

// Two categories; "bottle" distinguishes two defect types, "cable" one.
nagl::DatasetManifest toy_manifest() {
  nagl::DatasetManifest m;
  for (int i = 0; i < 4; ++i) add(m, "bottle_n" + std::to_string(i), "bottle", "NORMAL", Split::train);
  for (int i = 0; i < 3; ++i) add(m, "bottle_t" + std::to_string(i), "bottle", "NORMAL", Split::test);
  for (int i = 0; i < 3; ++i) add(m, "bottle_crack" + std::to_string(i), "bottle", "crack", Split::test);
  for (int i = 0; i < 3; ++i) add(m, "bottle_dent" + std::to_string(i), "bottle", "dent", Split::test);
  for (int i = 0; i < 3; ++i) add(m, "cable_n" + std::to_string(i), "cable", "NORMAL", Split::train);
  for (int i = 0; i < 2; ++i) add(m, "cable_t" + std::to_string(i), "cable", "NORMAL", Split::test);
  for (int i = 0; i < 3; ++i) add(m, "cable_cut" + std::to_string(i), "cable", "cut", Split::test);
  return m;
}

// Writes feature and mask files for every record of `m` into `dir`.
void materialize_files(nagl::DatasetManifest& m, const fs::path& dir) {
  fs::remove_all(dir);
  fs::create_directories(dir);
  Rng rng(99);
  for (const auto& r : m.records) {
    nagl::write_feature_file(oracle::random_map(rng, 2, 2, 4, false), dir / r.feature_path);
    if (r.mask_path) nagl::write_mask_file(oracle::random_mask(rng, 2, 2), dir / *r.mask_path);
  }
  m.base_dir = dir;
}

}  // namespace

TEST(Sampler, ForcedChoiceGivesTheUniqueEpisode) {
  nagl::DatasetManifest m;
  add(m, "n", "c", "NORMAL", Split::train);
  add(m, "q", "c", "NORMAL", Split::test);
  add(m, "a", "c", "hole", Split::test);
  const EpisodeSampler s(m, {1, 1, 0, nagl::SamplerMode::train});
  Rng rng(1);
  for (int i = 0; i < 10; ++i) {
    const auto p = s.plan_train(rng);
    EXPECT_EQ(p, (nagl::EpisodePlan{1, {0}, {2}}));
  }
  EXPECT_EQ(s.ineligible_queries(), 1u);  // "a" cannot be a query without leaking into its own references
}

TEST(Sampler, TrainEpisodesRespectCountsTypesAndLeakage) {
  const auto m = toy_manifest();
  const EpisodeSampler s(m, {2, 2, 0, nagl::SamplerMode::train});
  Rng rng(2);
  std::set<std::size_t> seen;
  for (int i = 0; i < 10 * static_cast<int>(s.query_pool().size()); ++i) {
    const auto p = s.plan_train(rng);
    const auto& q = m.records[p.query];
    seen.insert(p.query);
    ASSERT_EQ(p.normals.size(), 2u);
    ASSERT_EQ(p.abnormals.size(), 2u);
    EXPECT_EQ(std::set<std::size_t>(p.normals.begin(), p.normals.end()).size(), 2u);
    EXPECT_EQ(std::set<std::size_t>(p.abnormals.begin(), p.abnormals.end()).size(), 2u);
    for (auto n : p.normals) {
      EXPECT_EQ(m.records[n].split, Split::train);
      EXPECT_EQ(m.records[n].category, q.category);
      EXPECT_FALSE(m.records[n].is_abnormal());
    }
    const std::string type = m.records[p.abnormals[0]].defect_type;
    for (auto a : p.abnormals) {
      EXPECT_NE(a, p.query);
      EXPECT_EQ(m.records[a].category, q.category);
      EXPECT_EQ(m.records[a].defect_type, type);
    }
    if (q.is_abnormal()) {
      EXPECT_EQ(type, q.defect_type);
    }
  }
  EXPECT_EQ(seen.size(), s.query_pool().size());  // coverage
  EXPECT_EQ(s.query_pool().size(), m.records.size() - 7);  // everything in the test split
}

TEST(Sampler, NormalQueriesDrawEveryFeasibleDefectType) {
  const auto m = toy_manifest();
  const EpisodeSampler s(m, {1, 1, 0, nagl::SamplerMode::train});
  Rng rng(3);
  std::set<std::string> types;
  for (int i = 0; i < 400; ++i) {
    const auto p = s.plan_train(rng);
    if (m.records[p.query].category == "bottle" && !m.records[p.query].is_abnormal())
      types.insert(m.records[p.abnormals[0]].defect_type);
  }
  EXPECT_EQ(types, (std::set<std::string>{"crack", "dent"}));
}

TEST(Sampler, SameSeedSamePlans) {
  const auto m = toy_manifest();
  const EpisodeSampler s(m, {2, 1, 0, nagl::SamplerMode::train});
  Rng a(5), b(5);
  for (int i = 0; i < 50; ++i) EXPECT_EQ(s.plan_train(a), s.plan_train(b));
  Rng c(6), d(6);
  EXPECT_EQ(s.plan_test(c), s.plan_test(d));
}

TEST(Sampler, TestReferencesOnePerDefectKeyWithSharedNormals) {
  const auto m = toy_manifest();
  const EpisodeSampler s(m, {2, 1, 0, nagl::SamplerMode::test});
  Rng rng(7);
  const auto plan = s.plan_test(rng);
  ASSERT_EQ(plan.sets.size(), 3u);
  EXPECT_EQ(plan.sets.at({"bottle", "crack"}).normals, plan.sets.at({"bottle", "dent"}).normals);
  std::size_t abnormal_total = 0;
  for (const auto& [key, set] : plan.sets) {
    EXPECT_EQ(set.normals.size(), 2u);
    abnormal_total += set.abnormals.size();
    for (auto a : set.abnormals) EXPECT_EQ(m.records[a].defect_type, key.second);
  }
  EXPECT_EQ(abnormal_total, 3u);
  EXPECT_EQ(plan.normal_key.size(), 2u);
  EXPECT_EQ(plan.normal_key.at("cable"), "cut");
}

TEST(Sampler, KeyForSkipsQueriesThatAreTheirOwnReference) {
  const auto m = toy_manifest();
  const EpisodeSampler s(m, {1, 1, 0, nagl::SamplerMode::test});
  Rng rng(8);
  const auto plan = s.plan_test(rng);
  std::size_t skipped = 0;
  for (std::size_t i = 0; i < m.records.size(); ++i) {
    const auto& r = m.records[i];
    if (r.split != Split::test) continue;
    const auto key = plan.key_for(r, i);
    if (!key) {
      ++skipped;
      continue;
    }
    for (auto a : plan.sets.at(*key).abnormals) EXPECT_NE(a, i);
    if (r.is_abnormal()) {
      EXPECT_EQ(key->second, r.defect_type);
    }
  }
  EXPECT_EQ(skipped, 3u);  // one reference per defect key
}

TEST(Sampler, ShortfallErrorNamesCategory) {
  auto m = toy_manifest();
  try {
    EpisodeSampler s(m, {4, 1, 0, nagl::SamplerMode::train});
    FAIL() << "expected DataError";
  } catch (const nagl::DataError& e) {
    const std::string what = e.what();
    EXPECT_NE(what.find("cable"), std::string::npos) << what;
    EXPECT_NE(what.find("short by 1"), std::string::npos) << what;
  }
  EXPECT_THROW(EpisodeSampler(m, {1, 4, 0, nagl::SamplerMode::train}), nagl::DataError);
  EXPECT_THROW(EpisodeSampler(m, {0, 1, 0, nagl::SamplerMode::train}), nagl::ConfigError);
}

TEST(Sampler, KOneBelowKTwoIsOnlyAWarning) {
  EXPECT_EQ((SamplerConfig{1, 2, 0, nagl::SamplerMode::train}).validate().size(), 1u);
  EXPECT_TRUE((SamplerConfig{2, 2, 0, nagl::SamplerMode::train}).validate().empty());
}

TEST(Episode, MaterializedEpisodeCarriesLabelsMasksAndIds) {
  auto m = toy_manifest();
  materialize_files(m, fs::temp_directory_path() / "nagl_sampler_files");
  nagl::FeatureCache cache(m);
  const EpisodeSampler s(m, {2, 1, 0, nagl::SamplerMode::train});
  Rng rng(9);
  for (int i = 0; i < 30; ++i) {
    const auto ep = nagl::sample_train_episode(s, rng, cache);
    EXPECT_EQ(ep.label == 1, ep.query_mask.any());
    EXPECT_EQ(ep.refs.category, ep.category);
    EXPECT_EQ(ep.refs.k1(), 2u);
    EXPECT_EQ(ep.refs.k2(), 1u);
    EXPECT_FALSE(ep.refs.contains(ep.image_id));
    EXPECT_TRUE(ep.refs.abnormals[0].mask.any());
    double sq = 0;
    for (float v : ep.query->patch(0)) sq += static_cast<double>(v) * v;
    EXPECT_NEAR(sq, 1.0, 1e-5);
  }
}

TEST(Episode, EmptyMaskOnAbnormalRecordIsRejected) {
  auto m = toy_manifest();
  const auto dir = fs::temp_directory_path() / "nagl_sampler_badmask";
  materialize_files(m, dir);
  nagl::write_mask_file(nagl::PatchMask(2, 2), dir / "bottle_crack0.nagm");
  nagl::FeatureCache cache(m);
  const EpisodeSampler s(m, {1, 1, 0, nagl::SamplerMode::test});
  const auto refs = nagl::materialize_references({0}, {10}, cache);
  const std::size_t crack0 = 7;
  ASSERT_EQ(m.records[crack0].image_id, "bottle_crack0");
  EXPECT_THROW(nagl::make_episode(crack0, refs, cache), nagl::DataError);
}
