// nagl: train / eval / score / synth / diag / extract-check.
// Exit codes: 0 ok, 1 usage or config error, 2 data error, 3 numeric error.

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "nagl/nagl.hpp"

namespace {

struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> k1, k2, proxies, epochs, episodes_per_epoch, threads;
  std::optional<double> lambda, fpr_limit;
  std::optional<std::string> out, train_manifest, test_manifest;
};

void add_common(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config, "key=value run configuration file");
  cmd->add_option("--seed", o.seed, "run a single seed instead of the configured list");
  cmd->add_option("--k1", o.k1, "normal references per episode");
  cmd->add_option("--k2", o.k2, "abnormal references per episode");
  cmd->add_option("--proxies", o.proxies, "number of learnable proxies M");
  cmd->add_option("--lambda", o.lambda, "segmentation loss weight");
  cmd->add_option("--epochs", o.epochs);
  cmd->add_option("--episodes-per-epoch", o.episodes_per_epoch);
  cmd->add_option("--fpr-limit", o.fpr_limit, "FPR cap for PRO");
  cmd->add_option("--threads", o.threads, "scoring worker threads");
  cmd->add_option("--out", o.out, "output directory");
  cmd->add_option("--train-manifest", o.train_manifest);
  cmd->add_option("--test-manifest", o.test_manifest);
}

nagl::RunConfig resolve(const Overrides& o) {
  nagl::RunConfig c = o.config.empty() ? nagl::RunConfig{} : nagl::load_config(o.config);
  if (o.seed) c.seeds = {*o.seed};
  if (o.k1) c.k1 = *o.k1;
  if (o.k2) c.k2 = *o.k2;
  if (o.proxies) c.proxies = *o.proxies;
  if (o.lambda) c.lambda = *o.lambda;
  if (o.epochs) c.epochs = *o.epochs;
  if (o.episodes_per_epoch) c.episodes_per_epoch = *o.episodes_per_epoch;
  if (o.fpr_limit) c.fpr_limit = *o.fpr_limit;
  if (o.threads) c.threads = *o.threads;
  if (o.out) c.out = *o.out;
  if (o.train_manifest) c.train_manifest = *o.train_manifest;
  if (o.test_manifest) c.test_manifest = *o.test_manifest;
  if (o.seed) c.synth.seed = *o.seed;
  nagl::validate_config(c);
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"nagl: generalist anomaly detection from few normal and abnormal references"};
  app.require_subcommand(1);
  Overrides o;

  auto* train = app.add_subcommand("train", "train one model per seed; writes checkpoints and loss traces");
  add_common(train, o);

  std::vector<std::string> checkpoints;
  auto* eval = app.add_subcommand("eval", "six-metric report per category, mean +- std over seeds");
  add_common(eval, o);
  eval->add_option("--checkpoint", checkpoints, "checkpoint per seed (default: <out>/model_seed<S>.nagp)");

  std::string checkpoint, image_id;
  auto* score = app.add_subcommand("score", "score one test image and export its score maps");
  add_common(score, o);
  score->add_option("--checkpoint", checkpoint)->required();
  score->add_option("--image", image_id, "image_id from the test manifest")->required();

  auto* synth = app.add_subcommand("synth", "generate the synthetic benchmark");
  add_common(synth, o);

  auto* diag = app.add_subcommand("diag", "residual-norm histograms and optional proxy-count sweep");
  add_common(diag, o);

  std::string target;
  auto* check = app.add_subcommand("extract-check", "verify an exported feature directory or manifest");
  check->add_option("target", target, "directory with manifest.tsv, or a manifest file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : static_cast<int>(nagl::ExitCode::usage);
  }

  try {
    if (check->parsed()) {
      return nagl::cmd_extract_check(target, std::cout).ok() ? 0 : static_cast<int>(nagl::ExitCode::data);
    }
    const auto cfg = resolve(o);
    if (train->parsed()) {
      nagl::cmd_train(cfg, std::cout);
    } else if (eval->parsed()) {
      std::vector<std::filesystem::path> paths(checkpoints.begin(), checkpoints.end());
      nagl::cmd_eval(cfg, paths, std::cout);
    } else if (score->parsed()) {
      nagl::cmd_score(cfg, checkpoint, image_id, cfg.seeds.front(), std::cout);
    } else if (synth->parsed()) {
      nagl::cmd_synth(cfg, std::cout);
    } else if (diag->parsed()) {
      nagl::cmd_diag(cfg, std::cout);
    }
  } catch (const nagl::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(e.exit_code());
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(nagl::ExitCode::data);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(nagl::ExitCode::data);
  }
  return 0;
}
