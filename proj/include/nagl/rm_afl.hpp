#pragma once

// Residual mining (proxies attend over abnormal reference patches, masked to
// their anomalous region, aggregating normal-abnormal residuals) and anomaly
// feature learning (residual proxies attend over query-normal residuals,
// aggregating query features). Anomaly proxies then score every query patch
// by mean cosine similarity.
//
// Row-vector convention throughout: Q = X * Wq.

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "nagl/autodiff.hpp"
#include "nagl/error.hpp"
#include "nagl/feature_store.hpp"
#include "nagl/rng.hpp"

namespace nagl {

inline constexpr double kDefaultMaskValue = -1e9;
inline constexpr double kImageScoreFraction = 0.01;

template <typename T>
struct AttentionBlock {
  Matrix<T> wq, wk, wv, wo;
};

template <typename T>
struct ModelParams {
  std::size_t proxies = 0;   // M
  std::size_t channels = 0;  // C, also the attention scale d
  T mask_value = T(kDefaultMaskValue);

  Matrix<T> proxy;  // M x C
  Matrix<T> rm_q, rm_k, rm_v;
  Matrix<T> afl_q, afl_k, afl_v;
  AttentionBlock<T> sa1, sa2;

  static constexpr std::size_t kTensorCount = 15;

  // Fixed order used by the checkpoint format and the optimizer.
  std::array<Matrix<T>*, kTensorCount> tensors() {
    return {&proxy, &rm_q, &rm_k, &rm_v, &afl_q, &afl_k, &afl_v, &sa1.wq, &sa1.wk,
            &sa1.wv, &sa1.wo, &sa2.wq, &sa2.wk, &sa2.wv, &sa2.wo};
  }
  std::array<const Matrix<T>*, kTensorCount> tensors() const {
    return {&proxy, &rm_q, &rm_k, &rm_v, &afl_q, &afl_k, &afl_v, &sa1.wq, &sa1.wk,
            &sa1.wv, &sa1.wo, &sa2.wq, &sa2.wk, &sa2.wv, &sa2.wo};
  }
  static constexpr std::array<const char*, kTensorCount> names() {
    return {"proxy", "rm_q", "rm_k", "rm_v", "afl_q", "afl_k", "afl_v", "sa1_q",
            "sa1_k", "sa1_v", "sa1_o", "sa2_q", "sa2_k", "sa2_v", "sa2_o"};
  }

  T inv_sqrt_d() const { return T(1) / std::sqrt(static_cast<T>(channels)); }

  template <typename U>
  ModelParams<U> cast() const {
    ModelParams<U> out;
    out.proxies = proxies;
    out.channels = channels;
    out.mask_value = static_cast<U>(mask_value);
    auto dst = out.tensors();
    auto src = tensors();
    for (std::size_t i = 0; i < kTensorCount; ++i) *dst[i] = src[i]->template cast<U>();
    return out;
  }

  bool operator==(const ModelParams& o) const {
    if (proxies != o.proxies || channels != o.channels || mask_value != o.mask_value) return false;
    auto a = tensors();
    auto b = o.tensors();
    for (std::size_t i = 0; i < kTensorCount; ++i) {
      if (!(*a[i] == *b[i])) return false;
    }
    return true;
  }
};

// Every entry ~ N(0, 1/C).
template <typename T>
ModelParams<T> init_params(std::size_t proxies, std::size_t channels, std::uint64_t seed) {
  if (proxies == 0 || channels == 0) throw ConfigError("init_params: M and C must be >= 1");
  ModelParams<T> p;
  p.proxies = proxies;
  p.channels = channels;
  Rng rng(seed);
  const double stddev = 1.0 / std::sqrt(static_cast<double>(channels));
  auto tensors = p.tensors();
  for (std::size_t t = 0; t < tensors.size(); ++t) {
    const std::size_t rows = t == 0 ? proxies : channels;
    *tensors[t] = Matrix<T>(rows, channels);
    Rng stream = rng.fork(t);
    for (auto& v : tensors[t]->data()) v = static_cast<T>(stddev * stream.normal());
  }
  return p;
}

// Checkpoint: "NAGP" | version u32 | M u32 | C u32 | 15 matrices as f32, in
// ModelParams::tensors() order (proxy M x C, then fourteen C x C).
template <typename T>
std::string encode_checkpoint(const ModelParams<T>& p) {
  std::string out;
  out.append("NAGP");
  io::put_u32(out, kFormatVersion);
  io::put_u32(out, static_cast<std::uint32_t>(p.proxies));
  io::put_u32(out, static_cast<std::uint32_t>(p.channels));
  for (const auto* m : p.tensors()) {
    for (T v : m->data()) io::put_f32(out, static_cast<float>(v));
  }
  return out;
}

template <typename T>
ModelParams<T> decode_checkpoint(std::string_view bytes, const std::string& context = "checkpoint") {
  io::ByteReader rd(bytes, context);
  rd.expect_magic("NAGP");
  const auto version = rd.u32("version");
  if (version != kFormatVersion) throw FormatError(context + ": unsupported version " + std::to_string(version));
  ModelParams<T> p;
  p.proxies = rd.u32("M");
  p.channels = rd.u32("C");
  if (p.proxies == 0 || p.channels == 0) throw FormatError(context + ": zero M or C");
  auto tensors = p.tensors();
  for (std::size_t t = 0; t < tensors.size(); ++t) {
    const std::size_t rows = t == 0 ? p.proxies : p.channels;
    *tensors[t] = Matrix<T>(rows, p.channels);
    for (auto& v : tensors[t]->data()) {
      const float f = rd.f32(ModelParams<T>::names()[t]);
      if (!std::isfinite(f)) throw FormatError(context + ": non-finite value in " + ModelParams<T>::names()[t]);
      v = static_cast<T>(f);
    }
  }
  rd.expect_end();
  return p;
}

template <typename T>
void write_checkpoint(const ModelParams<T>& p, const std::filesystem::path& path) {
  io::write_file(path, encode_checkpoint(p));
}

template <typename T>
ModelParams<T> read_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint<T>(io::read_file(path), path.string());
}

// Parameters bound as leaves of one tape.
template <typename T>
struct BlockVars {
  Var<T> wq, wk, wv, wo;
};

template <typename T>
struct ParamVars {
  Var<T> proxy, rm_q, rm_k, rm_v, afl_q, afl_k, afl_v;
  BlockVars<T> sa1, sa2;
  T inv_sqrt_d = T(1);
  T mask_value = T(kDefaultMaskValue);

  std::array<Var<T>, ModelParams<T>::kTensorCount> all() const {
    return {proxy, rm_q, rm_k, rm_v, afl_q, afl_k, afl_v, sa1.wq, sa1.wk, sa1.wv, sa1.wo,
            sa2.wq, sa2.wk, sa2.wv, sa2.wo};
  }
};

template <typename T>
ParamVars<T> bind_params(Tape<T>& tape, const ModelParams<T>& p, bool requires_grad) {
  auto leaf = [&](const Matrix<T>& m) { return tape.leaf(m, requires_grad); };
  ParamVars<T> v;
  v.proxy = leaf(p.proxy);
  v.rm_q = leaf(p.rm_q);
  v.rm_k = leaf(p.rm_k);
  v.rm_v = leaf(p.rm_v);
  v.afl_q = leaf(p.afl_q);
  v.afl_k = leaf(p.afl_k);
  v.afl_v = leaf(p.afl_v);
  v.sa1 = {leaf(p.sa1.wq), leaf(p.sa1.wk), leaf(p.sa1.wv), leaf(p.sa1.wo)};
  v.sa2 = {leaf(p.sa2.wq), leaf(p.sa2.wk), leaf(p.sa2.wv), leaf(p.sa2.wo)};
  v.inv_sqrt_d = p.inv_sqrt_d();
  v.mask_value = p.mask_value;
  return v;
}

// Single-head self-attention with a residual connection and no
// normalization: softmax((X Wq)(X Wk)^T / sqrt(d)) (X Wv) Wo + X.
template <typename T>
Var<T> self_attention(const BlockVars<T>& b, Var<T> x, T inv_sqrt_d) {
  auto q = ad::matmul(x, b.wq);
  auto k = ad::matmul(x, b.wk);
  auto v = ad::matmul(x, b.wv);
  auto attn = ad::softmax_rows(ad::scale(ad::matmul_nt(q, k), inv_sqrt_d));
  return ad::add(ad::matmul(ad::matmul(attn, v), b.wo), x);
}

// Additive attention mask: alpha where the patch is normal, 0 where it is
// anomalous. One row, broadcast over all proxies.
template <typename T>
Matrix<T> anomaly_attention_mask(const std::vector<std::uint8_t>& bits, T mask_value) {
  Matrix<T> m(1, bits.size());
  bool any = false;
  for (std::size_t j = 0; j < bits.size(); ++j) {
    m(0, j) = bits[j] ? T(0) : mask_value;
    any = any || bits[j];
  }
  if (!any) throw DataError("residual_mining: abnormal reference mask has no anomalous patch");
  return m;
}

// Cross-attention of the proxies over abnormal reference patches (keys from
// their features, values from their residuals), restricted to anomalous
// patches, followed by SA1. Returns the residual proxies (M x C).
template <typename T>
Var<T> residual_mining(const ParamVars<T>& pv, Var<T> abnormal_features, Var<T> abnormal_residuals,
                       const Matrix<T>& additive_mask) {
  if (abnormal_features.rows() != abnormal_residuals.rows() || additive_mask.cols() != abnormal_features.rows()) {
    throw ShapeError("residual_mining: features " + abnormal_features.value().shape_string() + ", residuals " +
                     abnormal_residuals.value().shape_string() + ", mask " + additive_mask.shape_string());
  }
  auto q = ad::matmul(pv.proxy, pv.rm_q);
  auto k = ad::matmul(abnormal_features, pv.rm_k);
  auto v = ad::matmul(abnormal_residuals, pv.rm_v);
  auto attn = ad::softmax_rows(ad::scale(ad::matmul_nt(q, k), pv.inv_sqrt_d), &additive_mask);
  return self_attention(pv.sa1, ad::matmul(attn, v), pv.inv_sqrt_d);
}

// Cross-attention of the residual proxies over the query (keys from
// query-normal residuals, values from query features), followed by SA2.
// Returns the anomaly proxies (M x C).
template <typename T>
Var<T> anomaly_feature_learning(const ParamVars<T>& pv, Var<T> residual_proxies, Var<T> query_residuals,
                                Var<T> query_features) {
  if (query_residuals.rows() != query_features.rows()) {
    throw ShapeError("anomaly_feature_learning: residuals " + query_residuals.value().shape_string() +
                     " vs features " + query_features.value().shape_string());
  }
  auto q = ad::matmul(residual_proxies, pv.afl_q);
  auto k = ad::matmul(query_residuals, pv.afl_k);
  auto v = ad::matmul(query_features, pv.afl_v);
  auto attn = ad::softmax_rows(ad::scale(ad::matmul_nt(q, k), pv.inv_sqrt_d));
  return self_attention(pv.sa2, ad::matmul(attn, v), pv.inv_sqrt_d);
}

// S_a (L x 1): mean over proxies of 1 - clamp(1 - cos(f_i, p_m), 0, 1), with
// proxies L2-normalized first.
template <typename T>
Var<T> abnormal_guided_score(Var<T> anomaly_proxies, Var<T> query_features) {
  auto sims = ad::matmul_nt(query_features, ad::normalize_rows(anomaly_proxies));
  auto dist = ad::clamp(ad::one_minus(sims), T(0), T(1));
  return ad::row_mean(ad::one_minus(dist));
}

template <typename T>
Var<T> fuse_scores(Var<T> normal_guided, Var<T> abnormal_guided) {
  if (!normal_guided.value().same_shape(abnormal_guided.value())) {
    throw ShapeError("fuse_scores: " + normal_guided.value().shape_string() + " vs " +
                     abnormal_guided.value().shape_string());
  }
  return ad::add(normal_guided, abnormal_guided);
}

// Mean of the top 1% of the fused map.
template <typename T>
Var<T> image_score(Var<T> fused) {
  return ad::mean_top_fraction(fused, kImageScoreFraction);
}

// Dense inputs of the RM-AFL graph for one episode.
template <typename T>
struct GraphInputs {
  Matrix<T> query_features;        // L x C
  Matrix<T> query_residuals;       // L x C
  Matrix<T> abnormal_features;     // K2*L x C
  Matrix<T> abnormal_residuals;    // K2*L x C
  std::vector<std::uint8_t> abnormal_mask;  // K2*L
  Matrix<T> normal_score;          // L x 1
};

template <typename T>
struct GraphOutputs {
  Var<T> residual_proxies;
  Var<T> anomaly_proxies;
  Var<T> abnormal_score;
  Var<T> fused;
  Var<T> image;
};

template <typename T>
GraphOutputs<T> build_graph(Tape<T>& tape, const ParamVars<T>& pv, const GraphInputs<T>& in) {
  auto fq = tape.constant(in.query_features);
  auto rq = tape.constant(in.query_residuals);
  auto fa = tape.constant(in.abnormal_features);
  auto ra = tape.constant(in.abnormal_residuals);
  const auto mask = anomaly_attention_mask(in.abnormal_mask, pv.mask_value);
  GraphOutputs<T> out;
  out.residual_proxies = residual_mining(pv, fa, ra, mask);
  out.anomaly_proxies = anomaly_feature_learning(pv, out.residual_proxies, rq, fq);
  out.abnormal_score = abnormal_guided_score(out.anomaly_proxies, fq);
  out.fused = fuse_scores(tape.constant(in.normal_score), out.abnormal_score);
  out.image = image_score(out.fused);
  return out;
}

}  // namespace nagl
