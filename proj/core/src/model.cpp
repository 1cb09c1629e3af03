#include "seqplace/model.hpp"

#include <cmath>

namespace seqplace {
namespace {

struct ParamSpec {
  std::string name;
  std::vector<std::size_t> shape;
  enum class Init { Gaussian, Zero, One, Value } init = Init::Zero;
  double arg = 0.0;  // stddev for Gaussian, the constant for Value
};

void add_transformer_specs(std::vector<ParamSpec>& specs, const std::string& prefix, std::size_t d,
                           std::size_t ffn_mult) {
  using Init = ParamSpec::Init;
  const double w_std = 1.0 / std::sqrt(static_cast<double>(d));
  for (const char* n : {"wq", "wk", "wv", "wo"}) {
    specs.push_back({prefix + ".attn." + n, {d, d}, Init::Gaussian, w_std});
  }
  for (const char* n : {"bq", "bk", "bv", "bo"}) {
    specs.push_back({prefix + ".attn." + n, {d}, Init::Zero, 0.0});
  }
  specs.push_back({prefix + ".ln1.gamma", {d}, Init::One, 0.0});
  specs.push_back({prefix + ".ln1.beta", {d}, Init::Zero, 0.0});
  const std::size_t hidden = ffn_mult * d;
  specs.push_back({prefix + ".ffn.w1", {hidden, d}, Init::Gaussian, w_std});
  specs.push_back({prefix + ".ffn.b1", {hidden}, Init::Zero, 0.0});
  specs.push_back(
      {prefix + ".ffn.w2", {d, hidden}, Init::Gaussian, 1.0 / std::sqrt(static_cast<double>(hidden))});
  specs.push_back({prefix + ".ffn.b2", {d}, Init::Zero, 0.0});
  specs.push_back({prefix + ".ln2.gamma", {d}, Init::One, 0.0});
  specs.push_back({prefix + ".ln2.beta", {d}, Init::Zero, 0.0});
}

std::vector<ParamSpec> param_specs(const ModelConfig& cfg) {
  using Init = ParamSpec::Init;
  cfg.validate();
  std::vector<ParamSpec> specs;
  const auto leg = cfg.resolved_leg();
  std::size_t cin = 1;
  for (std::size_t i = 0; i < leg.size(); ++i) {
    const std::size_t cout = leg[i].out_channels;
    const std::size_t kh = leg[i].kernel_h;
    const double fan_in = static_cast<double>(cin * kh);
    specs.push_back({"leg." + std::to_string(i) + ".w",
                     {cout, cin, kh, 1},
                     Init::Gaussian,
                     std::sqrt(2.0 / fan_in)});
    specs.push_back({"leg." + std::to_string(i) + ".b", {cout}, Init::Zero, 0.0});
    cin = cout;
  }
  add_transformer_specs(specs, "sst", cfg.channels, cfg.ffn_mult);
  const std::size_t d2 = 2 * cfg.channels;
  add_transformer_specs(specs, "mst", d2, cfg.ffn_mult);
  const std::size_t k = cfg.vlad_clusters;
  const double d2_std = 1.0 / std::sqrt(static_cast<double>(d2));
  specs.push_back({"vlad.assign.w", {k, d2}, Init::Gaussian, d2_std});
  specs.push_back({"vlad.assign.b", {k}, Init::Zero, 0.0});
  specs.push_back({"vlad.centroids", {k, d2}, Init::Gaussian, 1.0});
  specs.push_back({"vlad.proj.w",
                   {cfg.descriptor_dim, k * d2},
                   Init::Gaussian,
                   1.0 / std::sqrt(static_cast<double>(k * d2))});
  specs.push_back({"vlad.proj.b", {cfg.descriptor_dim}, Init::Zero, 0.0});
  // inverse of p = 1 + softplus(q), evaluated at the configured initial p
  const double q0 = std::log(std::expm1(static_cast<double>(cfg.gem_p_init) - 1.0));
  specs.push_back({"gem.q", {1}, Init::Value, q0});
  return specs;
}

}  // namespace

void ModelConfig::validate() const {
  if (channels == 0 || descriptor_dim == 0 || vlad_clusters == 0) {
    throw ConfigError("model dimensions must be positive");
  }
  if (window != 3) {
    throw ConfigError("window must be 3, got " + std::to_string(window));
  }
  if (seq_len < window) {
    throw ConfigError("seq_len must be at least " + std::to_string(window));
  }
  if (heads_sst == 0 || channels % heads_sst != 0) {
    throw ConfigError("channels (" + std::to_string(channels) + ") must divide evenly into " +
                      std::to_string(heads_sst) + " heads");
  }
  if (heads_mst == 0 || (2 * channels) % heads_mst != 0) {
    throw ConfigError("fused channels (" + std::to_string(2 * channels) +
                      ") must divide evenly into " + std::to_string(heads_mst) + " heads");
  }
  if (ffn_mult == 0) throw ConfigError("ffn_mult must be positive");
  if (!(gem_p_init > 1.0f)) {
    throw ConfigError("gem_p_init must exceed 1 (the exponent is parameterized as 1 + softplus)");
  }
  if (!(input_scale > 0.0f)) throw ConfigError("input_scale must be positive");
  for (const LegLayer& l : leg) {
    if (l.kernel_h == 0 || l.stride_h == 0) {
      throw ConfigError("leg layers need kernel_h >= 1 and stride_h >= 1");
    }
  }
  const auto resolved = resolved_leg();
  if (resolved.back().out_channels != channels) {
    throw ConfigError("last leg layer must emit " + std::to_string(channels) + " channels");
  }
}

std::vector<LegLayer> ModelConfig::resolved_leg() const {
  std::vector<LegLayer> out = leg;
  if (out.empty()) {
    out = {{16, 5, 2}, {32, 3, 2}, {64, 3, 2}, {channels, 2, 2}};
  }
  for (LegLayer& l : out) {
    if (l.out_channels == 0) l.out_channels = channels;
  }
  return out;
}

std::size_t ModelConfig::leg_output_height(std::size_t image_height) const {
  std::size_t h = image_height;
  std::string chain = std::to_string(h);
  for (const LegLayer& l : resolved_leg()) {
    if (l.kernel_h > h) {
      throw ConfigError("conv stack does not fit image height (" + chain + " -> kernel " +
                        std::to_string(l.kernel_h) + " too tall)");
    }
    h = (h - l.kernel_h) / l.stride_h + 1;
    chain += " -> " + std::to_string(h);
  }
  return h;
}

nn::TensorMap init_params(const ModelConfig& cfg, uint64_t seed) {
  nn::TensorMap out;
  for (const ParamSpec& spec : param_specs(cfg)) {
    nn::Tensor<float> t = nn::Tensor<float>::zeros(spec.shape);
    switch (spec.init) {
      case ParamSpec::Init::Gaussian: {
        Rng rng(mix_seed(seed, fnv1a(spec.name.data(), spec.name.size())));
        for (float& x : t.v) x = static_cast<float>(rng.normal(0.0, spec.arg));
        break;
      }
      case ParamSpec::Init::One:
        std::fill(t.v.begin(), t.v.end(), 1.0f);
        break;
      case ParamSpec::Init::Value:
        std::fill(t.v.begin(), t.v.end(), static_cast<float>(spec.arg));
        break;
      case ParamSpec::Init::Zero:
        break;
    }
    out.emplace(spec.name, std::move(t));
  }
  return out;
}

std::size_t param_count(const ModelConfig& cfg) {
  std::size_t n = 0;
  for (const ParamSpec& spec : param_specs(cfg)) {
    n += nn::Tensor<float>::expected_numel(spec.shape);
  }
  return n;
}

nn::TensorMap model_tensors(const nn::TensorMap& mixed) {
  nn::TensorMap out;
  for (const auto& [name, tensor] : mixed) {
    if (name.rfind("adam.", 0) == 0 || name.rfind("trainer.", 0) == 0) continue;
    out.emplace(name, tensor);
  }
  return out;
}

void check_params(const nn::TensorMap& tensors, const ModelConfig& cfg) {
  const auto shape_str = [](const std::vector<std::size_t>& s) {
    std::string out;
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i) out += "x";
      out += std::to_string(s[i]);
    }
    return out;
  };
  const auto specs = param_specs(cfg);
  std::map<std::string, const ParamSpec*> by_name;
  for (const ParamSpec& s : specs) by_name.emplace(s.name, &s);
  for (const auto& [name, tensor] : tensors) {
    auto it = by_name.find(name);
    if (it == by_name.end()) {
      throw ConfigError("checkpoint tensor '" + name + "' does not belong to this model");
    }
    if (tensor.shape != it->second->shape) {
      throw ConfigError("parameter '" + name + "' has shape " + tensor.shape_string() +
                        ", model needs " + shape_str(it->second->shape));
    }
  }
  if (tensors.size() != specs.size()) {
    for (const ParamSpec& s : specs) {
      if (!tensors.count(s.name)) {
        throw ConfigError("checkpoint is missing parameter '" + s.name + "'");
      }
    }
  }
}

Descriptor encode_sequence_values(const nn::TensorMap& params, const ModelConfig& cfg,
                                  std::span<const RangeImage> images) {
  nn::Tape<float> tape(false);
  auto bp = bind_params<float>(tape, params, cfg);
  auto d = encode_sequence(tape, bp, cfg, images);
  return d.value().v;
}

std::optional<Descriptor> stream_update(StreamState& state, const RangeImage& image,
                                        const nn::TensorMap& params, const ModelConfig& cfg) {
  cfg.validate();
  nn::Tape<float> tape(false);
  auto bp = bind_params<float>(tape, params, cfg);
  auto feat = encode_scan(tape, bp, cfg, image);
  ++state.scans_seen;
  ++state.encoder_evals;
  state.features.push_back(feat.value());
  while (state.features.size() > cfg.seq_len - 1) state.features.pop_front();
  if (state.scans_seen < cfg.window) return std::nullopt;

  auto f0 = tape.constant(state.features[state.features.size() - 3]);
  auto f1 = tape.constant(state.features[state.features.size() - 2]);
  auto sub = fuse_window(tape, bp, cfg, f0, f1, feat);

  // pool the most recent min(m-2, available) sub-descriptors, newest included
  std::vector<nn::Var<float>> pool;
  pool.reserve(state.subs.size() + 1);
  for (const Descriptor& s : state.subs) {
    pool.push_back(tape.constant(nn::Tensor<float>({s.size()}, s)));
  }
  pool.push_back(sub);
  const std::size_t max_pool = cfg.seq_len - cfg.window + 1;  // the batch window count, m-2
  while (pool.size() > max_pool) pool.erase(pool.begin());
  auto d = gem_pool(tape, pool, gem_exponent(tape, bp));

  state.subs.push_back(sub.value().v);
  while (state.subs.size() + 1 > max_pool) state.subs.pop_front();
  return d.value().v;
}

}  // namespace seqplace
