#pragma once

// Command implementations behind the nagl tool. Each command reads a
// validated RunConfig, writes its artifacts under cfg.out and logs progress
// to the given stream.

#include <chrono>
#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "nagl/config.hpp"
#include "nagl/conformance.hpp"
#include "nagl/evaluation.hpp"
#include "nagl/inference.hpp"
#include "nagl/synth.hpp"
#include "nagl/training.hpp"

namespace nagl {

namespace fs = std::filesystem;

inline fs::path checkpoint_path(const RunConfig& c, std::uint64_t seed) {
  return fs::path(c.out) / ("model_seed" + std::to_string(seed) + ".nagp");
}
inline fs::path trace_path(const RunConfig& c, std::uint64_t seed) {
  return fs::path(c.out) / ("loss_seed" + std::to_string(seed) + ".tsv");
}

namespace detail {

inline DatasetManifest require_manifest(const std::string& path, const char* which) {
  if (path.empty()) throw ConfigError(std::string("config: ") + which + " is not set");
  auto m = load_manifest(path);
  m.validate();
  return m;
}

inline std::size_t cache_budget(const RunConfig& c) { return c.cache_mb << 20; }

inline TrainConfig train_config(const RunConfig& c, std::uint64_t seed) {
  TrainConfig t;
  t.epochs = c.epochs;
  t.episodes_per_epoch = c.episodes_per_epoch;
  t.proxies = c.proxies;
  t.seed = seed;
  t.sampler = SamplerConfig{c.k1, c.k2, seed, SamplerMode::train};
  t.loss.lambda = c.lambda;
  t.optimizer.lr = c.lr;
  return t;
}

inline EvalConfig eval_config(const RunConfig& c, std::uint64_t seed) {
  EvalConfig e;
  e.sampler = SamplerConfig{c.k1, c.k2, seed, SamplerMode::test};
  e.pro.fpr_limit = c.fpr_limit;
  e.per_image_pixel_auroc = c.per_image_pixel_auroc;
  e.threads = c.threads;
  return e;
}

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace detail

inline SynthOutput cmd_synth(const RunConfig& c, std::ostream& log) {
  auto out = generate_synthetic(c.synth, c.out);
  log << "synth: " << out.origin.records.size() << " original-domain and " << out.target.records.size()
      << " target-domain records in " << c.out << " (origin.tsv, target.tsv)\n";
  return out;
}

struct TrainArtifacts {
  std::uint64_t seed = 0;
  fs::path checkpoint, trace;
  double episodes_per_second = 0.0;
  std::vector<double> epoch_losses;
};

inline TrainArtifacts cmd_train_seed(const RunConfig& c, std::uint64_t seed, std::ostream& log) {
  const auto manifest = detail::require_manifest(c.train_manifest, "train_manifest");
  FeatureCache cache(manifest, true, detail::cache_budget(c));
  const auto tcfg = detail::train_config(c, seed);
  for (const auto& w : tcfg.sampler.validate()) log << "warning: " << w << '\n';
  const auto t0 = std::chrono::steady_clock::now();
  const auto result = train<float>(cache, tcfg);
  const double secs = detail::seconds_since(t0);

  fs::create_directories(c.out);
  TrainArtifacts a;
  a.seed = seed;
  a.checkpoint = checkpoint_path(c, seed);
  a.trace = trace_path(c, seed);
  write_checkpoint(result.params, a.checkpoint);
  write_loss_trace(result.trace, a.trace);
  a.epoch_losses = epoch_mean_losses(result.trace);
  a.episodes_per_second = secs > 0 ? static_cast<double>(result.trace.size()) / secs : 0.0;
  for (std::size_t e = 0; e < a.epoch_losses.size(); ++e) {
    log << "seed " << seed << " epoch " << e << " mean loss " << a.epoch_losses[e] << '\n';
  }
  log << "seed " << seed << ": " << result.trace.size() << " episodes, " << a.episodes_per_second
      << " episodes/s -> " << a.checkpoint.string() << '\n';
  return a;
}

inline std::vector<TrainArtifacts> cmd_train(const RunConfig& c, std::ostream& log) {
  std::vector<TrainArtifacts> out;
  for (auto seed : c.seeds) out.push_back(cmd_train_seed(c, seed, log));
  return out;
}

struct EvalArtifacts {
  std::vector<std::vector<CategoryReport>> fused_runs, normal_runs;
  SeedSummary fused, normal_only;
  std::string table, records;
};

// Evaluates one model per seed; each seed builds its own fixed test
// reference sets. With no explicit checkpoints, the per-seed outputs of
// cmd_train are used.
inline EvalArtifacts cmd_eval(const RunConfig& c, const std::vector<fs::path>& checkpoints, std::ostream& log) {
  std::vector<fs::path> ckpts = checkpoints;
  if (ckpts.empty()) {
    for (auto seed : c.seeds) ckpts.push_back(checkpoint_path(c, seed));
  }
  if (ckpts.size() != c.seeds.size()) {
    throw ConfigError("eval: " + std::to_string(ckpts.size()) + " checkpoints for " + std::to_string(c.seeds.size()) +
                      " seeds");
  }
  const auto manifest = detail::require_manifest(c.test_manifest, "test_manifest");
  FeatureCache cache(manifest, true, detail::cache_budget(c));
  EvalArtifacts a;
  const ReportOptions ropt{ProOptions{c.fpr_limit, 200}, c.per_image_pixel_auroc};
  for (std::size_t i = 0; i < ckpts.size(); ++i) {
    const auto params = read_checkpoint<float>(ckpts[i]);
    const auto t0 = std::chrono::steady_clock::now();
    const auto run = run_evaluation(params, cache, detail::eval_config(c, c.seeds[i]));
    const double secs = detail::seconds_since(t0);
    a.fused_runs.push_back(evaluate_by_category(run.images, ScoreVariant::fused, ropt));
    a.normal_runs.push_back(evaluate_by_category(run.images, ScoreVariant::normal_only, ropt));
    log << "seed " << c.seeds[i] << ": scored " << run.images.size() << " queries ("
        << run.skipped_reference_queries << " reference images skipped), "
        << (secs > 0 ? static_cast<double>(run.images.size()) / secs : 0.0) << " episodes/s\n";
  }
  a.fused = summarize_seeds(a.fused_runs);
  a.normal_only = summarize_seeds(a.normal_runs);
  a.table = "fused score (S_n + S_a), mean ± std over " + std::to_string(c.seeds.size()) + " seed(s)\n" +
            format_report_table(a.fused) + "\nnormal-guided score only (S_n)\n" + format_report_table(a.normal_only);
  std::string rec;
  for (const auto& line : {std::pair{"fused", &a.fused}, std::pair{"normal_only", &a.normal_only}}) {
    std::istringstream in(format_report_records(*line.second));
    for (std::string l; std::getline(in, l);) rec += std::string(line.first) + '\t' + l + '\n';
  }
  a.records = rec;
  fs::create_directories(c.out);
  io::write_file(fs::path(c.out) / "report.txt", a.table);
  io::write_file(fs::path(c.out) / "report.tsv", a.records);
  log << a.table;
  return a;
}

struct ScoreArtifacts {
  EpisodeScores scores;
  std::vector<fs::path> files;
};

// Scores one test image against its fixed reference set for `seed` and
// exports fused / normal / abnormal maps as PGM and raw f32 grids at image
// resolution.
inline ScoreArtifacts cmd_score(const RunConfig& c, const fs::path& checkpoint, const std::string& image_id,
                                std::uint64_t seed, std::ostream& log) {
  const auto manifest = detail::require_manifest(c.test_manifest, "test_manifest");
  FeatureCache cache(manifest, true, detail::cache_budget(c));
  std::optional<std::size_t> record;
  for (std::size_t i = 0; i < manifest.records.size(); ++i) {
    if (manifest.records[i].image_id == image_id) record = i;
  }
  if (!record) throw DataError("score: no record with image_id " + image_id);
  const auto& r = manifest.records[*record];
  if (r.split != Split::test) throw DataError("score: " + image_id + " is not a test image");

  const auto params = read_checkpoint<float>(checkpoint);
  const EpisodeSampler sampler(manifest, SamplerConfig{c.k1, c.k2, seed, SamplerMode::test});
  Rng rng = Rng(seed).fork(3);
  const auto plan = sampler.plan_test(rng);
  const auto key = plan.key_for(r, *record);
  if (!key) throw DataError("score: " + image_id + " is an abnormal reference of its own defect type for this seed");
  const auto refs = materialize_references(plan.sets.at(*key).normals, plan.sets.at(*key).abnormals, cache);
  const auto ep = make_episode(*record, refs, cache);

  ScoreArtifacts a;
  a.scores = score_episode(params, ep);
  fs::create_directories(c.out);
  const std::pair<const char*, const ScoreMap*> maps[] = {
      {"fused", &a.scores.fused}, {"normal", &a.scores.normal}, {"abnormal", &a.scores.abnormal}};
  for (const auto& [name, map] : maps) {
    const auto up = upsample_bilinear(*map, r.image_h, r.image_w);
    const auto base = fs::path(c.out) / (image_id + "_" + name);
    const double hi = map == &a.scores.fused ? 2.0 : 1.0;
    write_pgm(base.string() + ".pgm", up, r.image_h, r.image_w, 0.0, hi);
    write_raw_grid(base.string() + ".f32", up, r.image_h, r.image_w);
    a.files.push_back(base.string() + ".pgm");
    a.files.push_back(base.string() + ".f32");
  }
  log << image_id << ": image score " << a.scores.image << " (normal-only " << a.scores.normal_image << ")\n";
  return a;
}

struct SweepRow {
  std::size_t proxies = 0;
  double image_auroc = 0, pixel_auroc = 0;
};

struct DiagArtifacts {
  ResidualNormStats residuals;
  std::vector<SweepRow> sweep;
};

// Residual-norm histograms over every test query (with the seed's fixed
// reference sets) and, if sweep_proxies is set, a train+eval run per M.
inline DiagArtifacts cmd_diag(const RunConfig& c, std::ostream& log) {
  const auto test = detail::require_manifest(c.test_manifest, "test_manifest");
  FeatureCache cache(test, true, detail::cache_budget(c));
  const std::uint64_t seed = c.seeds.front();
  const EpisodeSampler sampler(test, SamplerConfig{c.k1, c.k2, seed, SamplerMode::test});
  Rng rng = Rng(seed).fork(3);
  const auto plan = sampler.plan_test(rng);
  const auto refs = build_test_reference_sets(plan, cache);
  std::vector<Episode> episodes;
  for (std::size_t i = 0; i < test.records.size(); ++i) {
    const auto& r = test.records[i];
    if (r.split != Split::test) continue;
    if (auto key = plan.key_for(r, i)) episodes.push_back(make_episode(i, refs.at(*key), cache));
  }
  DiagArtifacts a;
  a.residuals = residual_norm_stats(episodes);

  std::ostringstream hist;
  hist << "# bin_lo\tbin_hi\tnormal\tabnormal\n";
  const auto& hn = a.residuals.normal;
  const double width = (hn.hi - hn.lo) / static_cast<double>(hn.counts.size());
  for (std::size_t b = 0; b < hn.counts.size(); ++b) {
    hist << hn.lo + width * b << '\t' << hn.lo + width * (b + 1) << '\t' << hn.counts[b] << '\t'
         << a.residuals.abnormal.counts[b] << '\n';
  }
  fs::create_directories(c.out);
  io::write_file(fs::path(c.out) / "residual_hist.tsv", hist.str());
  log << "residual norms: normal patches " << hn.total() << " (mean " << a.residuals.normal_mean()
      << "), abnormal patches " << a.residuals.abnormal.total() << " (mean " << a.residuals.abnormal_mean() << ")\n";

  if (!c.sweep_proxies.empty()) {
    const auto train_manifest = detail::require_manifest(c.train_manifest, "train_manifest");
    FeatureCache train_cache(train_manifest, true, detail::cache_budget(c));
    std::ostringstream table;
    table << "M\timage_auroc\tpixel_auroc\n";
    for (auto m : c.sweep_proxies) {
      auto tcfg = detail::train_config(c, seed);
      tcfg.proxies = m;
      const auto model = train<float>(train_cache, tcfg);
      const auto run = run_evaluation(model.params, cache, detail::eval_config(c, seed));
      const auto report = evaluate_by_category(run.images, ScoreVariant::fused,
                                               ReportOptions{ProOptions{c.fpr_limit, 200}, c.per_image_pixel_auroc});
      const auto& mean = report.back().metrics;
      a.sweep.push_back({m, mean.image_auroc, mean.pixel_auroc});
      table << m << '\t' << mean.image_auroc << '\t' << mean.pixel_auroc << '\n';
      log << "M=" << m << ": image AUROC " << mean.image_auroc << ", pixel AUROC " << mean.pixel_auroc << '\n';
    }
    io::write_file(fs::path(c.out) / "proxy_sweep.tsv", table.str());
  }
  return a;
}

// Accepts a manifest file or a directory containing manifest.tsv.
inline VerifyReport cmd_extract_check(const fs::path& target, std::ostream& log) {
  const fs::path manifest_path = fs::is_directory(target) ? target / "manifest.tsv" : target;
  if (!fs::exists(manifest_path)) throw DataError("extract-check: no manifest at " + manifest_path.string());
  const auto manifest = load_manifest(manifest_path);
  auto rep = verify_dataset(manifest);
  log << format_verify_report(rep);
  return rep;
}

}  // namespace nagl
