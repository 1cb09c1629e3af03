// Microbenchmarks for the hot paths: range projection, overlap labeling,
// per-scan streaming descriptor updates, and exhaustive top-k search. The
// streaming benchmark also reports the model's parameter count next to the
// 12.82M reference configuration.

#include <benchmark/benchmark.h>

#include <cmath>
#include <vector>

#include "seqplace/datasets.hpp"
#include "seqplace/model.hpp"
#include "seqplace/range_projection.hpp"
#include "seqplace/overlap.hpp"
#include "seqplace/retrieval.hpp"

using namespace seqplace;

namespace {

ModelConfig desk_config() {
  ModelConfig cfg;
  cfg.channels = 32;
  cfg.vlad_clusters = 32;
  cfg.seq_len = 20;
  return cfg;
}

struct Fixture {
  DatasetManifest manifest = make_benchmark(7);
  std::optional<SyntheticWorld> world = manifest_world(manifest);
  std::vector<PointCloud> clouds;
  std::vector<RangeImage> images;

  Fixture() {
    manifest.validate();
    for (std::size_t i = 0; i < 40; ++i) {
      clouds.push_back(manifest_cloud(manifest, world ? &*world : nullptr, i, ""));
      images.push_back(project(clouds.back(), manifest.sensor));
    }
  }
};

const Fixture& fixture() {
  static const Fixture f;
  return f;
}

}  // namespace

static void BM_ProjectScan(benchmark::State& state) {
  const Fixture& f = fixture();
  std::size_t i = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(project(f.clouds[i], f.manifest.sensor));
    i = (i + 1) % f.clouds.size();
  }
}
BENCHMARK(BM_ProjectScan);

static void BM_OverlapLabelPair(benchmark::State& state) {
  const Fixture& f = fixture();
  std::size_t i = 0;
  for (auto _ : state) {
    const std::size_t j = (i + 3) % f.clouds.size();
    const RangeImage rep = reproject(f.clouds[j], f.manifest.scans[j].pose,
                                     f.manifest.scans[i].pose, f.manifest.sensor);
    benchmark::DoNotOptimize(overlap(f.images[i], rep, 1.0f));
    i = (i + 1) % f.clouds.size();
  }
}
BENCHMARK(BM_OverlapLabelPair);

static void BM_StreamDescriptor(benchmark::State& state) {
  const Fixture& f = fixture();
  const ModelConfig cfg = desk_config();
  static const nn::TensorMap params = init_params(cfg, 7);

  StreamState stream;
  // warm up so every timed update pays the steady-state cost
  for (std::size_t i = 0; i < cfg.seq_len; ++i) {
    stream_update(stream, f.images[i % f.images.size()], params, cfg);
  }
  std::size_t i = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(stream_update(stream, f.images[i], params, cfg));
    i = (i + 1) % f.images.size();
  }
  state.counters["param_count"] = static_cast<double>(param_count(cfg));
  state.counters["reference_param_count"] = 12820000.0;
}
BENCHMARK(BM_StreamDescriptor)->Unit(benchmark::kMillisecond);

static void BM_QueryTop20(benchmark::State& state) {
  const ModelConfig cfg = desk_config();
  static const DescriptorIndex index = [] {
    QuerySet rows;
    Rng rng(mix_seed(7, 0xBE7C));
    for (std::size_t i = 0; i < 10000; ++i) {
      Descriptor d(256);
      double norm = 0.0;
      for (auto& v : d) {
        v = static_cast<float>(rng.normal());
        norm += static_cast<double>(v) * v;
      }
      for (auto& v : d) v = static_cast<float>(v / std::sqrt(norm));
      rows.emplace_back(i, std::move(d));
    }
    return DescriptorIndex::build(rows);
  }();

  Rng rng(99);
  Descriptor q(cfg.descriptor_dim);
  double norm = 0.0;
  for (auto& v : q) {
    v = static_cast<float>(rng.normal());
    norm += static_cast<double>(v) * v;
  }
  for (auto& v : q) v = static_cast<float>(v / std::sqrt(norm));

  for (auto _ : state) {
    benchmark::DoNotOptimize(query_top_k(index, q, 20));
  }
}
BENCHMARK(BM_QueryTop20);

BENCHMARK_MAIN();
