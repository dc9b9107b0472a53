#include <gtest/gtest.h>

#include <bit>
#include <cstring>
#include <filesystem>

#include "../support/oracles.hpp"

namespace fs = std::filesystem;
using nagl::PatchFeatureMap;

namespace {

fs::path temp_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("nagl_fs_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::uint32_t le32(const std::string& b, std::size_t off) {
  return static_cast<std::uint32_t>(static_cast<unsigned char>(b[off])) |
         static_cast<std::uint32_t>(static_cast<unsigned char>(b[off + 1])) << 8 |
         static_cast<std::uint32_t>(static_cast<unsigned char>(b[off + 2])) << 16 |
         static_cast<std::uint32_t>(static_cast<unsigned char>(b[off + 3])) << 24;
}

}  // namespace

TEST(FeatureFile, MinimalMapIsHeaderPlusOneFloat) {
  const auto bytes = nagl::encode_feature_map(PatchFeatureMap(1, 1, 1));
  ASSERT_EQ(bytes.size(), 4u + 4u + 12u + 4u);
  EXPECT_EQ(bytes.substr(0, 4), "NAGF");
  EXPECT_EQ(le32(bytes, 4), 1u);
  EXPECT_EQ(le32(bytes, 8), 1u);
  EXPECT_EQ(le32(bytes, 12), 1u);
  EXPECT_EQ(le32(bytes, 16), 1u);
  EXPECT_EQ(le32(bytes, 20), 0u);
}

TEST(FeatureFile, LayoutForTwoByThreeByFour) {
  nagl::Rng rng(1);
  const auto m = oracle::random_map(rng, 2, 3, 4, false);
  const auto bytes = nagl::encode_feature_map(m);
  EXPECT_EQ(bytes.size(), 4u + 4u + 12u + 96u);
  EXPECT_EQ(le32(bytes, 8), 2u);
  EXPECT_EQ(le32(bytes, 12), 3u);
  EXPECT_EQ(le32(bytes, 16), 4u);
  // patch 4 (row 1, col 1), channel 2 lives at float index 4*4+2
  EXPECT_EQ(std::bit_cast<float>(le32(bytes, 20 + 4 * 18)), m.patch(4)[2]);
}

TEST(FeatureFile, RoundTripIsBitExactThroughDisk) {
  const auto dir = temp_dir("roundtrip");
  nagl::Rng rng(2);
  const auto m = oracle::random_map(rng, 3, 5, 7, false);
  nagl::write_feature_file(m, dir / "a.nagf");
  const auto back = nagl::read_feature_file(dir / "a.nagf", false);
  EXPECT_EQ(back, m);
  nagl::write_feature_file(back, dir / "b.nagf");
  EXPECT_EQ(nagl::io::read_file(dir / "a.nagf"), nagl::io::read_file(dir / "b.nagf"));
}

TEST(FeatureFile, NormalizeOnLoadGivesThreeFourFive) {
  const PatchFeatureMap m(1, 2, 2, {3.0f, 4.0f, 0.0f, 0.0f});
  const auto back = nagl::decode_feature_map(nagl::encode_feature_map(m), true);
  EXPECT_FLOAT_EQ(back.patch(0)[0], 0.6f);
  EXPECT_FLOAT_EQ(back.patch(0)[1], 0.8f);
  EXPECT_EQ(back.patch(1)[0], 0.0f);  // zero row stays zero, no NaN
  EXPECT_EQ(back.patch(1)[1], 0.0f);
}

TEST(FeatureFile, NormalizationIsIdempotentAndUnitNorm) {
  nagl::Rng rng(3);
  auto once = oracle::random_map(rng, 4, 4, 16, true);
  auto twice = once;
  twice.normalize_rows();
  for (std::size_t i = 0; i < once.values().size(); ++i) EXPECT_NEAR(once.values()[i], twice.values()[i], 1e-6);
  for (std::size_t i = 0; i < once.patches(); ++i) {
    double sq = 0;
    for (float v : once.patch(i)) sq += static_cast<double>(v) * v;
    EXPECT_NEAR(std::sqrt(sq), 1.0, 1e-5);
  }
}

TEST(FeatureFile, FormatErrorsNameTheProblem) {
  const auto good = nagl::encode_feature_map(PatchFeatureMap(2, 2, 3));
  auto bad_magic = good;
  bad_magic.replace(0, 4, "XXXX");
  EXPECT_THROW(nagl::decode_feature_map(bad_magic, false), nagl::FormatError);
  auto bad_version = good;
  bad_version[4] = 2;
  EXPECT_THROW(nagl::decode_feature_map(bad_version, false), nagl::FormatError);
  try {
    nagl::decode_feature_map(good.substr(0, 14), false);
    FAIL() << "expected FormatError";
  } catch (const nagl::FormatError& e) {
    EXPECT_NE(std::string(e.what()).find('w'), std::string::npos) << e.what();
  }
  EXPECT_THROW(nagl::decode_feature_map(good.substr(0, good.size() - 2), false), nagl::FormatError);
  EXPECT_THROW(nagl::decode_feature_map(good + "zz", false), nagl::FormatError);
}

TEST(FeatureFile, NonFiniteValuesAndZeroDimsAreRejected) {
  auto nan_map = nagl::encode_feature_map(PatchFeatureMap(1, 1, 1));
  const float nan = std::numeric_limits<float>::quiet_NaN();
  std::memcpy(nan_map.data() + 20, &nan, 4);
  EXPECT_THROW(nagl::decode_feature_map(nan_map, false), nagl::FormatError);
  EXPECT_THROW(PatchFeatureMap(0, 1, 1), nagl::ShapeError);
}

TEST(FeatureFile, MissingFileIsADataError) {
  EXPECT_THROW(nagl::read_feature_file("/nonexistent/x.nagf", true), nagl::DataError);
}

TEST(MaskFile, RoundTripAndLayout) {
  nagl::Rng rng(4);
  const auto m = oracle::random_mask(rng, 3, 5);
  const auto bytes = nagl::encode_mask(m);
  EXPECT_EQ(bytes.size(), 16u + 15u);
  EXPECT_EQ(bytes.substr(0, 4), "NAGM");
  const auto back = nagl::decode_mask(bytes);
  EXPECT_EQ(back.bits, m.bits);
  EXPECT_EQ(nagl::encode_mask(back), bytes);
}

TEST(MaskFile, RejectsValuesOutsideZeroOne) {
  auto bytes = nagl::encode_mask(nagl::PatchMask(1, 2));
  bytes[16] = 2;
  EXPECT_THROW(nagl::decode_mask(bytes), nagl::FormatError);
}

TEST(DownsampleMask, AllZeroStaysZero) {
  EXPECT_FALSE(nagl::downsample_mask(nagl::PixelMask(64, 64), 16, 16).any());
}

TEST(DownsampleMask, SinglePixelSetsExactlyOnePatch) {
  nagl::Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    nagl::PixelMask px(37, 53);
    px.set(static_cast<std::size_t>(rng.below(37)), static_cast<std::size_t>(rng.below(53)));
    EXPECT_EQ(nagl::downsample_mask(px, 5, 7).count(), 1u);
  }
}

TEST(DownsampleMask, CornersOfFourByFour) {
  nagl::PixelMask px(4, 4);
  px.set(0, 0);
  px.set(3, 3);
  EXPECT_EQ(nagl::downsample_mask(px, 2, 2).bits, (std::vector<std::uint8_t>{1, 0, 0, 1}));
}

TEST(DownsampleMask, MatchesCellEnumerationOracle) {
  nagl::Rng rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t H = 10 + rng.below(30), W = 10 + rng.below(30);
    const std::size_t h = 1 + rng.below(H), w = 1 + rng.below(W);
    const auto px = oracle::random_mask(rng, H, W, 0.02);
    const auto got = nagl::downsample_mask(px, h, w);
    std::vector<std::uint8_t> expect(h * w, 0);
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) {
        if (!px.at(y, x)) continue;
        // the unique cell whose floor-bounded range contains (y, x)
        for (std::size_t r = 0; r < h; ++r)
          for (std::size_t c = 0; c < w; ++c)
            if (r * H / h <= y && y < (r + 1) * H / h && c * W / w <= x && x < (c + 1) * W / w) expect[r * w + c] = 1;
      }
    EXPECT_EQ(got.bits, expect);
  }
}

TEST(DownsampleMask, IsMonotone) {
  nagl::Rng rng(7);
  auto px = oracle::random_mask(rng, 32, 32, 0.05);
  auto before = nagl::downsample_mask(px, 8, 8);
  for (int k = 0; k < 30; ++k) {
    px.set(rng.below(32), rng.below(32));
    const auto after = nagl::downsample_mask(px, 8, 8);
    for (std::size_t i = 0; i < after.size(); ++i) EXPECT_GE(after.bits[i], before.bits[i]);
    before = after;
  }
}

TEST(DownsampleMask, RejectsUpsampling) {
  EXPECT_THROW(nagl::downsample_mask(nagl::PixelMask(4, 4), 8, 2), nagl::ShapeError);
}

TEST(UpsampleMask, NearestInverseOfDownsample) {
  nagl::Rng rng(8);
  const auto patches = oracle::random_mask(rng, 6, 5);
  const auto px = nagl::upsample_mask_nearest(patches, 30, 23);
  EXPECT_EQ(nagl::downsample_mask(px, 6, 5).bits, patches.bits);
}

namespace {

nagl::DatasetManifest sample_manifest() {
  nagl::DatasetManifest m;
  m.records.push_back({"bottle_good_000", "bottle", "NORMAL", nagl::Split::train, "f/a.nagf", std::nullopt, 448, 448});
  m.records.push_back({"bottle_broken_001", "bottle", "broken_large", nagl::Split::test, "f/b.nagf",
                       std::string("m/b.nagm"), 448, 448});
  m.records.push_back({"bottle_good_002", "bottle", "NORMAL", nagl::Split::test, "f/c.nagf", std::nullopt, 448, 448});
  return m;
}

}  // namespace

TEST(Manifest, EmptyManifestIsEmptyFile) {
  const auto dir = temp_dir("empty_manifest");
  nagl::save_manifest(nagl::DatasetManifest{}, dir / "m.tsv");
  EXPECT_EQ(fs::file_size(dir / "m.tsv"), 0u);
  EXPECT_TRUE(nagl::load_manifest(dir / "m.tsv").records.empty());
}

TEST(Manifest, RoundTripThroughDisk) {
  const auto dir = temp_dir("manifest");
  const auto m = sample_manifest();
  nagl::save_manifest(m, dir / "m.tsv");
  const auto back = nagl::load_manifest(dir / "m.tsv");
  EXPECT_EQ(back, m);
  EXPECT_EQ(back.base_dir, dir);
  EXPECT_EQ(back.resolve("f/a.nagf"), dir / "f/a.nagf");
  EXPECT_EQ(nagl::format_manifest(back), nagl::format_manifest(m));
}

TEST(Manifest, OneRecordRoundTrips) {
  nagl::DatasetManifest m;
  m.records.push_back(sample_manifest().records[1]);
  EXPECT_EQ(nagl::parse_manifest(nagl::format_manifest(m)), m);
}

TEST(Manifest, MalformedLineReportsLineNumber) {
  const std::string text = nagl::format_manifest(sample_manifest()) + "only\tthree\tfields\n";
  try {
    nagl::parse_manifest(text);
    FAIL() << "expected FormatError";
  } catch (const nagl::FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("line 4"), std::string::npos) << e.what();
  }
}

TEST(Manifest, BadSplitAndDimsAreRejected) {
  EXPECT_THROW(nagl::parse_manifest("a\tc\tNORMAL\tval\tf\t-\t1\t1\n"), nagl::FormatError);
  EXPECT_THROW(nagl::parse_manifest("a\tc\tNORMAL\ttrain\tf\t-\t1x\t1\n"), nagl::FormatError);
}

TEST(Manifest, ValidateEnforcesInvariants) {
  auto dup = sample_manifest();
  dup.records[2].image_id = dup.records[0].image_id;
  EXPECT_THROW(dup.validate(), nagl::DataError);
  auto abnormal_train = sample_manifest();
  abnormal_train.records[1].split = nagl::Split::train;
  EXPECT_THROW(abnormal_train.validate(), nagl::DataError);
  auto no_mask = sample_manifest();
  no_mask.records[1].mask_path.reset();
  EXPECT_THROW(no_mask.validate(), nagl::DataError);
  EXPECT_NO_THROW(sample_manifest().validate());
}
