#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>

#include "nagl/nagl.hpp"

namespace fs = std::filesystem;

TEST(Config, DefaultsMatchTheReferenceSetup) {
  const nagl::RunConfig c;
  EXPECT_EQ(c.k1, 2u);
  EXPECT_EQ(c.k2, 1u);
  EXPECT_EQ(c.proxies, 25u);
  EXPECT_DOUBLE_EQ(c.lambda, 1.0);
  EXPECT_DOUBLE_EQ(c.lr, 1e-5);
  EXPECT_EQ(c.epochs, 20u);
  EXPECT_EQ(c.episodes_per_epoch, 500u);
  EXPECT_EQ(c.seeds, (std::vector<std::uint64_t>{0, 1, 2}));
  EXPECT_DOUBLE_EQ(c.fpr_limit, 0.3);
}

TEST(Config, ParsesValuesCommentsAndLists) {
  const auto c = nagl::parse_config(
      "# run\nk1 = 4\nk2=2  # trailing\nlambda = 0.5\nseeds = 3, 5\nper_image_pixel_auroc = true\n"
      "synth.noise = 0.25\nsynth.defect_rank = 4\n\n");
  EXPECT_EQ(c.k1, 4u);
  EXPECT_EQ(c.k2, 2u);
  EXPECT_DOUBLE_EQ(c.lambda, 0.5);
  EXPECT_EQ(c.seeds, (std::vector<std::uint64_t>{3, 5}));
  EXPECT_TRUE(c.per_image_pixel_auroc);
  EXPECT_DOUBLE_EQ(c.synth.noise, 0.25);
  EXPECT_EQ(c.synth.defect_rank, 4u);
}

TEST(Config, UnknownKeyIsRejectedWithLineNumber) {
  try {
    nagl::parse_config("k1 = 2\nproxy = 25\n");
    FAIL() << "expected ConfigError";
  } catch (const nagl::ConfigError& e) {
    const std::string what = e.what();
    EXPECT_NE(what.find(":2:"), std::string::npos) << what;
    EXPECT_NE(what.find("proxy"), std::string::npos) << what;
  }
}

TEST(Config, MalformedAndDuplicateLinesAreRejected) {
  EXPECT_THROW(nagl::parse_config("k1 2\n"), nagl::ConfigError);
  EXPECT_THROW(nagl::parse_config("k1 = two\n"), nagl::ConfigError);
  EXPECT_THROW(nagl::parse_config("k1 = 1\nk1 = 2\n"), nagl::ConfigError);
  EXPECT_THROW(nagl::parse_config("per_image_pixel_auroc = maybe\n"), nagl::ConfigError);
}

TEST(Config, ValidationCatchesBadValues) {
  nagl::RunConfig c;
  EXPECT_NO_THROW(nagl::validate_config(c));
  c.k1 = 0;
  EXPECT_THROW(nagl::validate_config(c), nagl::ConfigError);
  c = {};
  c.fpr_limit = 1.5;
  EXPECT_THROW(nagl::validate_config(c), nagl::ConfigError);
}

TEST(Config, MissingManifestIsADataErrorWhenLoaded) {
  nagl::RunConfig c;
  c.seeds = {0};
  c.test_manifest = "/nonexistent/manifest.tsv";
  EXPECT_NO_THROW(nagl::validate_config(c));  // synth may still create it
  std::ostringstream log;
  EXPECT_THROW(nagl::cmd_eval(c, {"/nonexistent/m.nagp"}, log), nagl::DataError);
}

TEST(Config, ManifestPathsResolveAgainstTheConfigFile) {
  const auto dir = fs::temp_directory_path() / "nagl_cfg";
  fs::create_directories(dir / "sub");
  nagl::io::write_file(dir / "sub" / "run.cfg", "train_manifest = data/origin.tsv\ntest_manifest = /abs/target.tsv\n");
  const auto c = nagl::load_config(dir / "sub" / "run.cfg");
  EXPECT_EQ(fs::path(c.train_manifest), dir / "sub" / "data" / "origin.tsv");
  EXPECT_EQ(c.test_manifest, "/abs/target.tsv");
}

TEST(ErrorCodes, MapToDocumentedExitCodes) {
  EXPECT_EQ(static_cast<int>(nagl::ConfigError("x").exit_code()), 1);
  EXPECT_EQ(static_cast<int>(nagl::DataError("x").exit_code()), 2);
  EXPECT_EQ(static_cast<int>(nagl::FormatError("x").exit_code()), 2);
  EXPECT_EQ(static_cast<int>(nagl::NumericError("x").exit_code()), 3);
}
