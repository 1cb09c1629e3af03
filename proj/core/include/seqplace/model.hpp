#pragma once

#include <deque>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "seqplace/nn/checkpoint.hpp"
#include "seqplace/nn/ops.hpp"
#include "seqplace/range_projection.hpp"

namespace seqplace {

/** One convolution of the feature extraction stack. */
struct LegLayer {
  std::size_t out_channels = 0;  // 0 means "use ModelConfig::channels"
  std::size_t kernel_h = 0;
  std::size_t stride_h = 1;
};

/**
 * Network hyperparameters. The descriptor is always 256-D and windows are
 * always 3 scans wide; everything else is tunable. An empty leg selects the
 * default stack for 32-row images: kernel heights (5, 3, 3, 2), stride 2,
 * channels 1 -> 16 -> 32 -> 64 -> c, all kernels width 1.
 */
struct ModelConfig {
  std::size_t channels = 64;  // c: output channels of the conv stack
  std::size_t descriptor_dim = 256;
  std::size_t window = 3;   // scans fused per sub-descriptor
  std::size_t seq_len = 20;  // m: scans per sequence descriptor
  std::size_t vlad_clusters = 64;
  std::size_t heads_sst = 4;
  std::size_t heads_mst = 4;
  std::size_t ffn_mult = 2;
  float gem_p_init = 3.0f;
  float input_scale = 0.02f;  // meters -> network input units
  std::vector<LegLayer> leg;

  void validate() const;
  std::vector<LegLayer> resolved_leg() const;

  /** Height after the conv stack; must come out as exactly 1. */
  std::size_t leg_output_height(std::size_t image_height) const;
};

/** How parameters are bound onto a tape. */
enum class TrainMode {
  Inference,  // constants, no gradients
  All,        // every parameter trainable
  PoolOnly,   // only the pooling exponent trainable; encoder frozen
};

using Descriptor = std::vector<float>;  // 256 floats, unit norm

/** Fresh parameter tensors; every draw derives from seed and the tensor name. */
nn::TensorMap init_params(const ModelConfig& cfg, uint64_t seed);

/** Number of learnable scalars for this configuration. */
std::size_t param_count(const ModelConfig& cfg);

/** Drops non-model entries (optimizer state etc.) from a checkpoint map. */
nn::TensorMap model_tensors(const nn::TensorMap& mixed);

/** Validates that tensors contains exactly the model parameters for cfg. */
void check_params(const nn::TensorMap& tensors, const ModelConfig& cfg);

template <typename T>
struct BoundConv {
  nn::Var<T> w, b;
};

/** Model parameters bound onto a tape as vars. */
template <typename T>
struct BoundParams {
  std::vector<BoundConv<T>> leg;
  nn::TransformerParams<T> sst, mst;
  nn::Var<T> vlad_w, vlad_b, vlad_centroids;
  nn::Var<T> proj_w, proj_b;
  nn::Var<T> gem_q;  // pooling exponent is p = 1 + softplus(q), so p > 1
  std::map<std::string, nn::Var<T>> by_name;
};

namespace detail {

template <typename T>
nn::Tensor<T> to_scalar_type(const nn::Tensor<float>& t) {
  if constexpr (std::is_same_v<T, float>) {
    return t;
  } else {
    return t.template cast<T>();
  }
}

inline bool pool_param(const std::string& name) { return name == "gem.q"; }

}  // namespace detail

/**
 * Binds every parameter tensor from values onto the tape. override_name, when
 * non-empty, substitutes an existing var for that parameter (used by gradient
 * checks to differentiate with respect to a single tensor).
 */
template <typename T>
BoundParams<T> bind_params(nn::Tape<T>& tape, const nn::TensorMap& values, const ModelConfig& cfg,
                           TrainMode mode = TrainMode::Inference, const std::string& override_name = "",
                           nn::Var<T> override_var = {}) {
  check_params(values, cfg);
  BoundParams<T> bp;
  for (const auto& [name, tensor] : values) {
    nn::Var<T> var;
    if (!override_name.empty() && name == override_name) {
      var = override_var;
    } else {
      const bool trainable =
          mode == TrainMode::All || (mode == TrainMode::PoolOnly && detail::pool_param(name));
      var = tape.leaf(detail::to_scalar_type<T>(tensor), trainable);
    }
    bp.by_name.emplace(name, var);
  }
  const auto get = [&](const std::string& name) { return bp.by_name.at(name); };
  const std::size_t layers = cfg.resolved_leg().size();
  for (std::size_t i = 0; i < layers; ++i) {
    bp.leg.push_back({get("leg." + std::to_string(i) + ".w"), get("leg." + std::to_string(i) + ".b")});
  }
  const auto block = [&](const std::string& prefix) {
    nn::TransformerParams<T> p;
    p.attn = {get(prefix + ".attn.wq"), get(prefix + ".attn.bq"), get(prefix + ".attn.wk"),
              get(prefix + ".attn.bk"), get(prefix + ".attn.wv"), get(prefix + ".attn.bv"),
              get(prefix + ".attn.wo"), get(prefix + ".attn.bo")};
    p.ln1_gamma = get(prefix + ".ln1.gamma");
    p.ln1_beta = get(prefix + ".ln1.beta");
    p.ffn_w1 = get(prefix + ".ffn.w1");
    p.ffn_b1 = get(prefix + ".ffn.b1");
    p.ffn_w2 = get(prefix + ".ffn.w2");
    p.ffn_b2 = get(prefix + ".ffn.b2");
    p.ln2_gamma = get(prefix + ".ln2.gamma");
    p.ln2_beta = get(prefix + ".ln2.beta");
    return p;
  };
  bp.sst = block("sst");
  bp.mst = block("mst");
  bp.vlad_w = get("vlad.assign.w");
  bp.vlad_b = get("vlad.assign.b");
  bp.vlad_centroids = get("vlad.centroids");
  bp.proj_w = get("vlad.proj.w");
  bp.proj_b = get("vlad.proj.b");
  bp.gem_q = get("gem.q");
  return bp;
}

/** Network input for one scan: valid cells scaled to input units, invalid -1. */
template <typename T>
nn::Tensor<T> image_input(const RangeImage& image, const ModelConfig& cfg) {
  nn::Tensor<T> in = nn::Tensor<T>::zeros({1, image.height, image.width});
  for (std::size_t i = 0; i < image.range.size(); ++i) {
    in.v[i] = image.mask[i] ? static_cast<T>(image.range[i]) * static_cast<T>(cfg.input_scale)
                            : T(-1);
  }
  return in;
}

/**
 * Single-scan encoder: conv stack squeezes the image to height 1, one
 * transformer layer refines it, and the coarse and refined features are
 * concatenated channel-wise into a [2c, w] feature volume. Every stage is
 * column-shift equivariant.
 */
template <typename T>
nn::Var<T> encode_scan(nn::Tape<T>&, const BoundParams<T>& bp, const ModelConfig& cfg,
                       nn::Var<T> input) {
  nn::require(input.value().rank() == 3 && input.value().dim(0) == 1,
              "encode_scan: input must be [1, h, w]");
  const std::size_t h = input.value().dim(1);
  if (cfg.leg_output_height(h) != 1) {
    throw ConfigError("conv stack must reduce image height to 1");
  }
  nn::Var<T> x = input;
  const auto layers = cfg.resolved_leg();
  for (std::size_t i = 0; i < layers.size(); ++i) {
    x = nn::relu(nn::conv2d(x, bp.leg[i].w, bp.leg[i].b, layers[i].stride_h));
  }
  // [c, 1, w] -> [c, w]
  auto coarse = nn::reshape(x, {x.value().dim(0), x.value().dim(2)});
  auto refined = nn::transformer_block(coarse, bp.sst, cfg.heads_sst);
  return nn::concat_rows<T>({coarse, refined});
}

template <typename T>
nn::Var<T> encode_scan(nn::Tape<T>& tape, const BoundParams<T>& bp, const ModelConfig& cfg,
                       const RangeImage& image) {
  return encode_scan(tape, bp, cfg, tape.constant(image_input<T>(image, cfg)));
}

/**
 * NetVLAD head: soft-assigns the columns of x to K clusters, aggregates
 * centroid residuals per cluster, intra-normalizes, projects to the
 * descriptor dimension, and L2-normalizes. Treats columns as an unordered
 * set, so any column permutation of x yields the same descriptor.
 */
template <typename T>
nn::Var<T> vlad_project(nn::Tape<T>&, const BoundParams<T>& bp, nn::Var<T> x) {
  auto logits = nn::add_rowwise(nn::matmul(bp.vlad_w, x), bp.vlad_b);
  auto assign = nn::softmax_dim0(logits);                 // [K, n]
  auto weighted = nn::matmul(assign, nn::transpose(x));   // [K, 2c]
  auto mass = nn::row_sums(assign);                       // [K]
  auto residuals = nn::sub(weighted, nn::rowscale(bp.vlad_centroids, mass));
  auto intra = nn::l2_normalize_rows(residuals);
  auto flat = nn::l2_normalize(
      nn::reshape(intra, {intra.value().dim(0) * intra.value().dim(1)}));
  auto projected = nn::add(nn::matvec(bp.proj_w, flat), bp.proj_b);
  return nn::l2_normalize(projected);
}

/**
 * Multi-scan fusion: three consecutive feature volumes concatenated along
 * width, one transformer layer, then the NetVLAD head.
 */
template <typename T>
nn::Var<T> fuse_window(nn::Tape<T>& tape, const BoundParams<T>& bp, const ModelConfig& cfg,
                       nn::Var<T> f0, nn::Var<T> f1, nn::Var<T> f2) {
  auto joint = nn::concat_cols<T>({f0, f1, f2});
  auto refined = nn::transformer_block(joint, bp.mst, cfg.heads_mst);
  return vlad_project(tape, bp, refined);
}

/** Pooling exponent p = 1 + softplus(q). */
template <typename T>
nn::Var<T> gem_exponent(nn::Tape<T>&, const BoundParams<T>& bp) {
  return nn::add_const(nn::softplus(bp.gem_q), T(1));
}

/** GeM over sub-descriptors followed by L2 normalization. */
template <typename T>
nn::Var<T> gem_pool(nn::Tape<T>&, const std::vector<nn::Var<T>>& subs, nn::Var<T> p) {
  return nn::l2_normalize(nn::gem_combine(subs, p));
}

/**
 * Whole pipeline for one m-scan sequence: encode every scan, fuse each of the
 * m-2 stride-1 windows, pool. Needs at least one full window (m >= 3).
 */
template <typename T>
nn::Var<T> encode_sequence(nn::Tape<T>& tape, const BoundParams<T>& bp, const ModelConfig& cfg,
                           std::span<const RangeImage> images) {
  if (images.size() < cfg.window) {
    throw ConfigError("encode_sequence: need at least " + std::to_string(cfg.window) +
                      " scans, got " + std::to_string(images.size()));
  }
  std::vector<nn::Var<T>> feats;
  feats.reserve(images.size());
  for (const RangeImage& img : images) {
    feats.push_back(encode_scan(tape, bp, cfg, img));
  }
  std::vector<nn::Var<T>> subs;
  for (std::size_t i = 0; i + cfg.window <= feats.size(); ++i) {
    subs.push_back(fuse_window(tape, bp, cfg, feats[i], feats[i + 1], feats[i + 2]));
  }
  return gem_pool(tape, subs, gem_exponent(tape, bp));
}

/** Batch descriptor for an m-scan sequence (inference). */
Descriptor encode_sequence_values(const nn::TensorMap& params, const ModelConfig& cfg,
                                  std::span<const RangeImage> images);

/**
 * Incremental encoder state. Each new scan costs one encoder pass and one
 * fusion pass; older feature volumes and sub-descriptors are reused from the
 * ring buffers (features: last m-1, stored sub-descriptors: last m-3; the
 * freshest sub-descriptor joins the pool before it is stored).
 */
struct StreamState {
  std::size_t scans_seen = 0;
  std::size_t encoder_evals = 0;  // diagnostic: one per scan consumed
  std::deque<nn::Tensor<float>> features;
  std::deque<Descriptor> subs;
};

/**
 * Feeds one scan. Returns the sequence descriptor pooled over the most recent
 * min(m-2, available) sub-descriptors, or nullopt while warming up (fewer
 * than `window` scans seen).
 */
std::optional<Descriptor> stream_update(StreamState& state, const RangeImage& image,
                                        const nn::TensorMap& params, const ModelConfig& cfg);

}  // namespace seqplace
