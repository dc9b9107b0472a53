#pragma once

// AdamW with a step learning-rate schedule and the episodic training loop.
// Only ModelParams are trainable: S_n and both residual maps enter the graph
// as constants.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "nagl/autodiff.hpp"
#include "nagl/episode_sampler.hpp"
#include "nagl/inference.hpp"
#include "nagl/losses.hpp"
#include "nagl/rm_afl.hpp"
#include "nagl/rng.hpp"

namespace nagl {

struct OptimizerConfig {
  double lr = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  std::vector<std::size_t> milestones{10, 15};  // epochs (0-based) at which lr *= gamma
  double gamma = 0.1;
};

// base_lr * gamma^(number of milestones <= epoch)
inline double scheduled_lr(const OptimizerConfig& cfg, std::size_t epoch) {
  double lr = cfg.lr;
  for (auto m : cfg.milestones) {
    if (epoch >= m) lr *= cfg.gamma;
  }
  return lr;
}

template <typename T>
class AdamW {
 public:
  explicit AdamW(OptimizerConfig cfg = {}) : cfg_(std::move(cfg)) {}

  // Decoupled weight decay followed by the bias-corrected adaptive step.
  void step(std::span<Matrix<T>* const> params, std::span<const Matrix<T>* const> grads, double lr) {
    if (params.size() != grads.size()) throw ShapeError("AdamW: parameter and gradient counts differ");
    if (first_.empty()) {
      for (const auto* p : params) {
        first_.emplace_back(p->rows(), p->cols());
        second_.emplace_back(p->rows(), p->cols());
      }
    }
    if (first_.size() != params.size()) throw ShapeError("AdamW: parameter count changed between steps");
    ++steps_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(steps_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(steps_));
    for (std::size_t t = 0; t < params.size(); ++t) {
      Matrix<T>& p = *params[t];
      if (!grads[t] || grads[t]->empty()) {
        throw ShapeError(std::string("AdamW: missing gradient for parameter ") + std::to_string(t));
      }
      const Matrix<T>& g = *grads[t];
      if (!g.same_shape(p) || !first_[t].same_shape(p)) throw ShapeError("AdamW: gradient shape mismatch");
      for (std::size_t i = 0; i < p.size(); ++i) {
        const double gi = static_cast<double>(g[i]);
        double m = cfg_.beta1 * static_cast<double>(first_[t][i]) + (1.0 - cfg_.beta1) * gi;
        double v = cfg_.beta2 * static_cast<double>(second_[t][i]) + (1.0 - cfg_.beta2) * gi * gi;
        first_[t][i] = static_cast<T>(m);
        second_[t][i] = static_cast<T>(v);
        double w = static_cast<double>(p[i]);
        w -= lr * cfg_.weight_decay * w;
        w -= lr * (m / bc1) / (std::sqrt(v / bc2) + cfg_.eps);
        p[i] = static_cast<T>(w);
      }
    }
  }

  std::size_t steps() const { return steps_; }
  const std::vector<Matrix<T>>& first_moments() const { return first_; }
  const std::vector<Matrix<T>>& second_moments() const { return second_; }

 private:
  OptimizerConfig cfg_;
  std::vector<Matrix<T>> first_, second_;
  std::size_t steps_ = 0;
};

struct TrainConfig {
  std::size_t epochs = 20;
  std::size_t episodes_per_epoch = 500;
  std::size_t proxies = 25;
  std::uint64_t seed = 0;
  SamplerConfig sampler;
  LossConfig loss;
  OptimizerConfig optimizer;
};

struct LossRecord {
  std::size_t epoch = 0, episode = 0;
  double cls = 0, seg = 0, total = 0, lr = 0;
  bool operator==(const LossRecord&) const = default;
};

template <typename T>
struct TrainResult {
  ModelParams<T> params;
  std::vector<LossRecord> trace;
};

struct StepLosses {
  double cls, seg, total;
};

// Forward, losses and backward for one episode; fills grads in
// ModelParams::tensors() order.
template <typename T>
StepLosses episode_gradients(const ModelParams<T>& params, const GraphInputs<T>& in,
                             const std::vector<std::uint8_t>& query_mask, int label, const LossConfig& cfg,
                             std::vector<Matrix<T>>& grads) {
  Tape<T> tape;
  const auto pv = bind_params(tape, params, true);
  const auto out = build_graph(tape, pv, in);
  auto seg = seg_loss(out.fused, query_mask, cfg);
  auto cls = cls_loss(out.image, label, cfg);
  auto total = total_loss(seg, cls, cfg);
  tape.backward(total);
  grads.clear();
  for (const auto& v : pv.all()) grads.push_back(v.grad());
  return {static_cast<double>(cls.scalar()), static_cast<double>(seg.scalar()), static_cast<double>(total.scalar())};
}

template <typename T>
TrainResult<T> train(FeatureCache& cache, const TrainConfig& cfg,
                     const std::function<void(const LossRecord&)>& on_episode = {}) {
  cfg.loss.validate();
  const auto& manifest = cache.manifest();
  const EpisodeSampler sampler(manifest, cfg.sampler);
  const Rng root(cfg.seed);
  Rng init_stream = root.fork(1);
  Rng episode_stream = root.fork(2);

  const std::size_t channels = cache.features(sampler.query_pool().front())->channels();
  TrainResult<T> result{init_params<T>(cfg.proxies, channels, init_stream.next_u64()), {}};
  AdamW<T> opt(cfg.optimizer);
  std::vector<Matrix<T>> grads;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = scheduled_lr(cfg.optimizer, epoch);
    for (std::size_t e = 0; e < cfg.episodes_per_epoch; ++e) {
      const auto ep = materialize(sampler.plan_train(episode_stream), cache);
      const auto in = prepare_inputs<T>(ep);
      const auto losses = episode_gradients(result.params, in, ep.query_mask.bits, ep.label, cfg.loss, grads);
      auto tensors = result.params.tensors();
      std::vector<const Matrix<T>*> gptr;
      for (const auto& g : grads) gptr.push_back(&g);
      opt.step(tensors, gptr, lr);
      LossRecord rec{epoch, e, losses.cls, losses.seg, losses.total, lr};
      result.trace.push_back(rec);
      if (on_episode) on_episode(rec);
    }
  }
  return result;
}

inline std::vector<double> epoch_mean_losses(const std::vector<LossRecord>& trace) {
  std::vector<double> sums, counts;
  for (const auto& r : trace) {
    if (r.epoch >= sums.size()) {
      sums.resize(r.epoch + 1, 0.0);
      counts.resize(r.epoch + 1, 0.0);
    }
    sums[r.epoch] += r.total;
    counts[r.epoch] += 1.0;
  }
  for (std::size_t i = 0; i < sums.size(); ++i) sums[i] = counts[i] > 0 ? sums[i] / counts[i] : 0.0;
  return sums;
}

// One line per episode: epoch episode cls_loss seg_loss total lr (tab-separated).
inline std::string format_loss_trace(const std::vector<LossRecord>& trace) {
  std::ostringstream os;
  os.precision(9);
  os << "# epoch\tepisode\tcls_loss\tseg_loss\ttotal\tlr\n";
  for (const auto& r : trace) {
    os << r.epoch << '\t' << r.episode << '\t' << r.cls << '\t' << r.seg << '\t' << r.total << '\t' << r.lr << '\n';
  }
  return os.str();
}

inline void write_loss_trace(const std::vector<LossRecord>& trace, const std::filesystem::path& path) {
  io::write_file(path, format_loss_trace(trace));
}

}  // namespace nagl
