#include "seqplace/selftest.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>
#include <vector>

#include "seqplace/model.hpp"
#include "seqplace/nn/grad_check.hpp"
#include "seqplace/overlap.hpp"
#include "seqplace/range_projection.hpp"
#include "seqplace/training.hpp"

namespace seqplace {
namespace {

constexpr double kPi = std::numbers::pi;

/** Small configuration the whole suite shares; leg squeezes 8 rows to 1. */
ModelConfig toy_config() {
  ModelConfig cfg;
  cfg.channels = 8;
  cfg.vlad_clusters = 4;
  cfg.heads_sst = 2;
  cfg.heads_mst = 2;
  cfg.ffn_mult = 2;
  cfg.seq_len = 6;
  cfg.leg = {{8, 3, 2}, {8, 3, 2}};
  return cfg;
}

SensorModel toy_sensor() {
  SensorModel s;
  s.width = 24;
  s.height = 8;
  s.fov_up = 0.5236;
  s.fov_down = 0.5236;
  return s;
}

/** Random cloud whose points mostly land inside the vertical field of view. */
PointCloud random_cloud(const SensorModel& sensor, uint64_t seed, std::size_t n = 400) {
  Rng rng(seed);
  PointCloud cloud;
  cloud.points.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double yaw = rng.uniform(-kPi, kPi);
    const double pitch = rng.uniform(-0.9 * sensor.fov_down, 0.9 * sensor.fov_up);
    const double r = rng.uniform(2.0, 40.0);
    cloud.points.push_back({r * std::cos(pitch) * std::cos(yaw),
                            r * std::cos(pitch) * std::sin(yaw), r * std::sin(pitch)});
  }
  return cloud;
}

using D = double;
using DVar = nn::Var<D>;
using DTensor = nn::Tensor<D>;

DTensor random_tensor(std::vector<std::size_t> shape, uint64_t seed, double lo = -1.0,
                      double hi = 1.0) {
  DTensor t = DTensor::zeros(std::move(shape));
  Rng rng(seed);
  for (auto& v : t.v) v = rng.uniform(lo, hi);
  return t;
}

struct Failure {
  std::string detail;
};

void expect(bool cond, const std::string& detail) {
  if (!cond) throw Failure{detail};
}

std::string fmt(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

void expect_below(double value, double bound, const std::string& what) {
  expect(value <= bound, what + " = " + fmt(value) + ", bound " + fmt(bound));
}

// --- individual checks ------------------------------------------------------

void check_projection_pin() {
  SensorModel s;
  s.width = 4;
  s.height = 2;
  s.fov_up = kPi / 4;
  s.fov_down = kPi / 4;
  PointCloud cloud;
  cloud.points.push_back({1.0, 0.0, 0.0});
  RangeImage img = project(cloud, s);
  expect(img.valid_count() == 1, "expected exactly one valid cell");
  expect(img.valid(1, 2), "(1,0,0) must land at row 1, column 2");
  expect(std::abs(img.at(1, 2) - 1.0f) < 1e-6f, "range of (1,0,0) must be 1");
}

void check_shift_commutation() {
  const SensorModel s = toy_sensor();
  for (uint64_t trial = 0; trial < 10; ++trial) {
    const PointCloud cloud = random_cloud(s, 100 + trial);
    const std::ptrdiff_t k = static_cast<std::ptrdiff_t>(trial * 5 % s.width);
    const double yaw = 2.0 * kPi * static_cast<double>(k) / static_cast<double>(s.width);
    const RangeImage rotated = project(yaw_rotate(cloud, yaw), s);
    const RangeImage shifted = column_shift(project(cloud, s), k);
    expect(rotated == shifted,
           "rotation by " + fmt(yaw) + " and column shift " + std::to_string(k) + " disagree");
  }
}

void check_overlap_count() {
  const SensorModel s = toy_sensor();
  for (uint64_t trial = 0; trial < 10; ++trial) {
    const RangeImage a = project(random_cloud(s, 200 + trial), s);
    const RangeImage b = project(random_cloud(s, 300 + trial), s);
    const float delta = 1.0f;
    // Independent recount, straight from the definition.
    std::size_t both = 0, close = 0, va = 0, vb = 0;
    for (std::size_t i = 0; i < a.range.size(); ++i) {
      va += a.mask[i] ? 1 : 0;
      vb += b.mask[i] ? 1 : 0;
      if (a.mask[i] && b.mask[i]) {
        ++both;
        if (std::abs(a.range[i] - b.range[i]) <= delta) ++close;
      }
    }
    (void)both;
    const float expected =
        (va == 0 || vb == 0)
            ? 0.0f
            : static_cast<float>(close) / static_cast<float>(std::min(va, vb));
    const float got = overlap(a, b, delta);
    expect(got == expected, "overlap " + fmt(got) + " vs recount " + fmt(expected));
    expect(overlap(a, a, delta) == 1.0f, "self overlap must be exactly 1");
  }
}

void check_primitive_gradients() {
  const double tol = 1e-4;
  const auto run = [&](const std::string& name,
                       const std::function<DVar(nn::Tape<D>&, DVar)>& fn, DTensor input) {
    const double err = nn::grad_check<D>(fn, input);
    expect_below(err, tol, "gradient mismatch in " + name);
  };

  const DTensor m34 = random_tensor({3, 4}, 11);
  const DTensor m42 = random_tensor({4, 2}, 12);
  run("matmul lhs",
      [&](nn::Tape<D>& t, DVar x) { return nn::matmul(x, t.constant(m42)); }, m34);
  run("matmul rhs",
      [&](nn::Tape<D>& t, DVar x) { return nn::matmul(t.constant(m34), x); }, m42);

  const DTensor x285 = random_tensor({2, 8, 5}, 13);
  const DTensor k3231 = random_tensor({3, 2, 3, 1}, 14, -0.5, 0.5);
  const DTensor b3 = random_tensor({3}, 15);
  run("conv2d input",
      [&](nn::Tape<D>& t, DVar x) {
        return nn::conv2d(x, t.constant(k3231), t.constant(b3), 2);
      },
      x285);
  run("conv2d kernel",
      [&](nn::Tape<D>& t, DVar k) {
        return nn::conv2d(t.constant(x285), k, t.constant(b3), 2);
      },
      k3231);

  const DTensor g4 = random_tensor({4}, 16, 0.5, 1.5);
  const DTensor be4 = random_tensor({4}, 17);
  run("layer_norm_cols",
      [&](nn::Tape<D>& t, DVar x) {
        return nn::layer_norm_cols(x, t.constant(g4), t.constant(be4));
      },
      random_tensor({4, 3}, 18));

  run("softmax_dim0",
      [&](nn::Tape<D>&, DVar x) { return nn::softmax_dim0(x); }, random_tensor({5, 3}, 19));
  run("l2_normalize",
      [&](nn::Tape<D>&, DVar x) { return nn::l2_normalize(x); },
      random_tensor({6}, 20, 0.2, 1.0));

  const auto attn_params = [&](nn::Tape<D>& t, std::size_t d, uint64_t seed) {
    nn::AttentionParams<D> p;
    p.wq = t.constant(random_tensor({d, d}, seed + 0, -0.4, 0.4));
    p.bq = t.constant(random_tensor({d}, seed + 1));
    p.wk = t.constant(random_tensor({d, d}, seed + 2, -0.4, 0.4));
    p.bk = t.constant(random_tensor({d}, seed + 3));
    p.wv = t.constant(random_tensor({d, d}, seed + 4, -0.4, 0.4));
    p.bv = t.constant(random_tensor({d}, seed + 5));
    p.wo = t.constant(random_tensor({d, d}, seed + 6, -0.4, 0.4));
    p.bo = t.constant(random_tensor({d}, seed + 7));
    return p;
  };
  run("mhsa",
      [&](nn::Tape<D>& t, DVar x) { return nn::mhsa(x, attn_params(t, 4, 30), 2); },
      random_tensor({4, 6}, 21));
  run("transformer_block",
      [&](nn::Tape<D>& t, DVar x) {
        nn::TransformerParams<D> p;
        p.attn = attn_params(t, 4, 40);
        p.ln1_gamma = t.constant(random_tensor({4}, 48, 0.5, 1.5));
        p.ln1_beta = t.constant(random_tensor({4}, 49));
        p.ffn_w1 = t.constant(random_tensor({8, 4}, 50, -0.4, 0.4));
        p.ffn_b1 = t.constant(random_tensor({8}, 51, 0.1, 0.5));
        p.ffn_w2 = t.constant(random_tensor({4, 8}, 52, -0.4, 0.4));
        p.ffn_b2 = t.constant(random_tensor({4}, 53));
        p.ln2_gamma = t.constant(random_tensor({4}, 54, 0.5, 1.5));
        p.ln2_beta = t.constant(random_tensor({4}, 55));
        return nn::transformer_block(x, p, 2);
      },
      random_tensor({4, 6}, 22));

  const DTensor s1 = random_tensor({6}, 23, 0.2, 1.0);
  const DTensor s2 = random_tensor({6}, 24, 0.2, 1.0);
  const DTensor p0 = DTensor::scalar(2.5);
  run("gem_combine sub",
      [&](nn::Tape<D>& t, DVar x) {
        return nn::gem_combine<D>({x, t.constant(s2)}, t.constant(p0));
      },
      s1);
  run("gem_combine exponent",
      [&](nn::Tape<D>& t, DVar p) {
        return nn::gem_combine<D>({t.constant(s1), t.constant(s2)}, p);
      },
      p0);

  run("squared_distance",
      [&](nn::Tape<D>& t, DVar x) { return nn::squared_distance(x, t.constant(s2)); }, s1);
  run("triplet_loss",
      [&](nn::Tape<D>& t, DVar q) {
        std::vector<DVar> pos = {t.constant(random_tensor({6}, 25)),
                                 t.constant(random_tensor({6}, 26))};
        std::vector<DVar> neg = {t.constant(random_tensor({6}, 27, 1.0, 2.0)),
                                 t.constant(random_tensor({6}, 28, 1.0, 2.0))};
        return triplet_loss<D>(q, pos, neg, D(0.5));
      },
      random_tensor({6}, 29));
}

void check_model_gradient() {
  const ModelConfig cfg = toy_config();
  const SensorModel sensor = toy_sensor();
  const nn::TensorMap params = init_params(cfg, 77);

  std::vector<RangeImage> images;
  for (uint64_t i = 0; i < 4; ++i) images.push_back(project(random_cloud(sensor, 400 + i), sensor));

  // Differentiates the sequence descriptor with respect to one parameter
  // tensor at a time; the rest stay constant.
  const auto check_param = [&](const std::string& name) {
    const auto fn = [&](nn::Tape<D>& tape, DVar x) {
      BoundParams<D> bp = bind_params<D>(tape, params, cfg, TrainMode::Inference, name, x);
      return encode_sequence<D>(tape, bp, cfg, images);
    };
    const double err = nn::grad_check<D>(fn, params.at(name).cast<D>());
    expect_below(err, 1e-3, "model gradient mismatch for " + name);
  };
  check_param("leg.0.w");
  check_param("sst.attn.wq");
  check_param("mst.ln2.beta");
  check_param("vlad.centroids");
  check_param("gem.q");
}

void check_gem_permutation() {
  const ModelConfig cfg = toy_config();
  const nn::TensorMap params = init_params(cfg, 78);

  std::vector<nn::Tensor<float>> subs;
  Rng rng(501);
  for (int i = 0; i < 5; ++i) {
    nn::Tensor<float> s = nn::Tensor<float>::zeros({cfg.descriptor_dim});
    for (auto& v : s.v) v = static_cast<float>(rng.uniform(0.0, 1.0));
    subs.push_back(std::move(s));
  }

  const auto pool = [&](const std::vector<std::size_t>& order) {
    nn::Tape<float> tape(false);
    BoundParams<float> bp = bind_params<float>(tape, params, cfg);
    std::vector<nn::Var<float>> vars;
    for (std::size_t idx : order) vars.push_back(tape.constant(subs[idx]));
    return gem_pool(tape, vars, gem_exponent(tape, bp)).value();
  };

  std::vector<std::size_t> order = {0, 1, 2, 3, 4};
  const nn::Tensor<float> base = pool(order);
  Rng shuffler(502);
  for (int trial = 0; trial < 10; ++trial) {
    shuffler.shuffle(order);
    const nn::Tensor<float> permuted = pool(order);
    float worst = 0.0f;
    for (std::size_t i = 0; i < base.v.size(); ++i) {
      worst = std::max(worst, std::abs(base.v[i] - permuted.v[i]));
    }
    expect_below(worst, 1e-6, "pooling must ignore sub-descriptor order; deviation");
  }
}

void check_stream_matches_batch() {
  const ModelConfig cfg = toy_config();
  const SensorModel sensor = toy_sensor();
  const nn::TensorMap params = init_params(cfg, 79);

  std::vector<RangeImage> images;
  for (uint64_t i = 0; i < 10; ++i) {
    images.push_back(project(random_cloud(sensor, 600 + i), sensor));
  }

  StreamState state;
  for (std::size_t t = 0; t < images.size(); ++t) {
    const auto streamed = stream_update(state, images[t], params, cfg);
    if (t + 1 < cfg.window) {
      expect(!streamed.has_value(), "stream must warm up for the first two scans");
      continue;
    }
    expect(streamed.has_value(), "stream must emit once a window is full");
    const std::size_t from = (t + 1 >= cfg.seq_len) ? t + 1 - cfg.seq_len : 0;
    const Descriptor batch = encode_sequence_values(
        params, cfg, std::span<const RangeImage>(images.data() + from, t + 1 - from));
    float worst = 0.0f;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      worst = std::max(worst, std::abs(batch[i] - (*streamed)[i]));
    }
    expect_below(worst, 1e-5, "stream/batch deviation at scan " + std::to_string(t));
  }
  expect(state.encoder_evals == images.size(), "stream must encode each scan exactly once");
}

void check_yaw_invariance() {
  const ModelConfig cfg = toy_config();
  const SensorModel sensor = toy_sensor();
  const nn::TensorMap params = init_params(cfg, 80);

  std::vector<PointCloud> clouds;
  for (uint64_t i = 0; i < 4; ++i) clouds.push_back(random_cloud(sensor, 700 + i));

  const auto describe = [&](double yaw) {
    std::vector<RangeImage> images;
    for (const PointCloud& c : clouds) images.push_back(project(yaw_rotate(c, yaw), sensor));
    return encode_sequence_values(params, cfg, images);
  };

  const Descriptor base = describe(0.0);
  for (std::ptrdiff_t k : {1, 7, 12, 23}) {
    const Descriptor turned =
        describe(2.0 * kPi * static_cast<double>(k) / static_cast<double>(sensor.width));
    float worst = 0.0f;
    for (std::size_t i = 0; i < base.size(); ++i) {
      worst = std::max(worst, std::abs(base[i] - turned[i]));
    }
    expect_below(worst, 1e-4, "descriptor must not change under yaw; deviation at k=" +
                                  std::to_string(k));
  }
}

}  // namespace

SelftestResult run_selftest(const std::function<void(const std::string&)>& report) {
  SelftestResult result;
  const auto check = [&](const std::string& name, const std::function<void()>& fn) {
    try {
      fn();
      ++result.passed;
      if (report) report("ok - " + name);
    } catch (const Failure& f) {
      ++result.failed;
      if (report) report("FAIL - " + name + ": " + f.detail);
    } catch (const std::exception& e) {
      ++result.failed;
      if (report) report("FAIL - " + name + ": unexpected error: " + e.what());
    }
  };

  check("projection pin", check_projection_pin);
  check("shift commutation", check_shift_commutation);
  check("overlap counting", check_overlap_count);
  check("primitive gradients", check_primitive_gradients);
  check("model gradient", check_model_gradient);
  check("pooling permutation invariance", check_gem_permutation);
  check("stream matches batch", check_stream_matches_batch);
  check("yaw invariance", check_yaw_invariance);
  return result;
}

}  // namespace seqplace
