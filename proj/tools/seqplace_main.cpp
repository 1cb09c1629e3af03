// Command-line front end: project / label / train / describe / index / query
// / eval / bench / selftest over one JSON run configuration. Every command
// writes its artifacts under --out with fixed names plus a run manifest
// recording the config hash, the effective seed, and input fingerprints.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "seqplace/datasets.hpp"
#include "seqplace/model.hpp"
#include "seqplace/nn/checkpoint.hpp"
#include "seqplace/overlap.hpp"
#include "seqplace/range_projection.hpp"
#include "seqplace/retrieval.hpp"
#include "seqplace/run_config.hpp"
#include "seqplace/selftest.hpp"
#include "seqplace/training.hpp"

namespace fs = std::filesystem;
using namespace seqplace;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitSelftest = 3;

struct CommonOpts {
  std::string config_path;
  std::string out_dir = "out";
  int workers = 1;
  uint64_t seed = 0;
  bool seed_given = false;
};

struct TrainOpts {
  int phase = 1;
  std::string split = "database";
  std::string truth_path;  // default: labels_<split>.sqot under out
  std::string init_path;   // phase 2 default: checkpoint_phase1.sqwt under out
  bool resume = false;
};

struct DescribeOpts {
  std::string split = "query";
  std::string model_path;  // default: checkpoint_phase2.sqwt under out
  bool stream = false;
};

struct QueryOpts {
  std::string index_path, queries_path;
  std::size_t top_k = 20;
};

struct EvalOpts {
  std::string index_path, queries_path, truth_path;
  std::size_t stride = 0;  // 0: use config
};

std::string hex64(uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

/** Accumulates the per-run record and writes run_<command>.json at the end. */
class RunRecorder {
 public:
  RunRecorder(std::string command, const CommonOpts& common, const RunConfig& cfg)
      : command_(std::move(command)), out_dir_(common.out_dir) {
    doc_["command"] = command_;
    doc_["config_hash"] = hex64(config_hash(cfg));
    doc_["config"] = nlohmann::ordered_json::parse(run_config_json(cfg));
    doc_["workers"] = common.workers;
    doc_["inputs"] = nlohmann::ordered_json::object();
    doc_["outputs"] = nlohmann::ordered_json::array();
    if (!common.config_path.empty()) input(common.config_path);
  }

  void seed(uint64_t value) { doc_["seed"] = value; }
  void note(const std::string& key, const nlohmann::ordered_json& value) { doc_[key] = value; }

  void input(const std::string& path) {
    doc_["inputs"][path] = hex64(fnv1a_file(path));
  }

  void output(const fs::path& path) { doc_["outputs"].push_back(path.string()); }

  void write() const {
    const fs::path path = fs::path(out_dir_) / ("run_" + command_ + ".json");
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    out << doc_.dump(2) << "\n";
  }

 private:
  std::string command_;
  std::string out_dir_;
  nlohmann::ordered_json doc_;
};

RunConfig load_config(const CommonOpts& common) {
  if (common.config_path.empty()) return RunConfig{};
  return load_run_config(common.config_path);
}

void ensure_out(const CommonOpts& common) { fs::create_directories(common.out_dir); }

fs::path out_path(const CommonOpts& common, const std::string& name) {
  return fs::path(common.out_dir) / name;
}

std::string split_tag(const std::string& split) { return split.empty() ? "all" : split; }

/** "" selects every scan; otherwise the manifest split tag. */
std::string split_filter(const std::string& split) { return split == "all" ? "" : split; }

struct LoadedDataset {
  DatasetManifest manifest;
  std::optional<SyntheticWorld> world;
  std::string base_dir;
};

LoadedDataset load_dataset(const RunConfig& cfg, RunRecorder& rec) {
  LoadedDataset ds;
  if (!cfg.data_manifest.empty()) {
    ds.manifest = load_manifest(cfg.data_manifest);
    ds.base_dir = fs::path(cfg.data_manifest).parent_path().string();
    rec.input(cfg.data_manifest);
  } else {
    ds.manifest = make_benchmark(cfg.synthetic_seed);
    rec.note("synthetic_seed", cfg.synthetic_seed);
  }
  ds.manifest.validate();
  ds.world = manifest_world(ds.manifest);
  return ds;
}

std::vector<std::size_t> selected_scans(const LoadedDataset& ds, const std::string& split) {
  std::vector<std::size_t> indices = ds.manifest.split_indices(split_filter(split));
  if (indices.empty()) throw DataError("no scans in split '" + split_tag(split) + "'");
  return indices;
}

/** Clouds for the selected scans, simulated or loaded, in selection order. */
std::vector<PointCloud> load_clouds(const LoadedDataset& ds, const std::vector<std::size_t>& indices,
                                    int workers) {
  std::vector<PointCloud> clouds(indices.size());
  const SyntheticWorld* world = ds.world ? &*ds.world : nullptr;
  parallel_for(indices.size(), workers, [&](std::size_t i) {
    clouds[i] = manifest_cloud(ds.manifest, world, indices[i], ds.base_dir);
  });
  return clouds;
}

std::vector<RangeImage> project_clouds(const std::vector<PointCloud>& clouds,
                                       const SensorModel& sensor, int workers) {
  std::vector<RangeImage> images(clouds.size());
  parallel_for(clouds.size(), workers, [&](std::size_t i) { images[i] = project(clouds[i], sensor); });
  return images;
}

nn::TensorMap load_checkpoint(const std::string& path, const ModelConfig& cfg, RunRecorder& rec) {
  if (!fs::exists(path)) {
    throw DataError("checkpoint not found: " + path + " (train first or pass a model path)");
  }
  rec.input(path);
  nn::TensorMap params = model_tensors(nn::load_tensors(path));
  check_params(params, cfg);
  return params;
}

QuerySet index_rows(const DescriptorIndex& index) {
  QuerySet rows;
  rows.reserve(index.size());
  for (std::size_t i = 0; i < index.size(); ++i) {
    const auto r = index.row(i);
    rows.emplace_back(index.id(i), Descriptor(r.begin(), r.end()));
  }
  return rows;
}

double median_ms(std::vector<double> samples) {
  std::sort(samples.begin(), samples.end());
  const std::size_t n = samples.size();
  return n == 0 ? 0.0 : (n % 2 ? samples[n / 2] : 0.5 * (samples[n / 2 - 1] + samples[n / 2]));
}

// --- subcommands ------------------------------------------------------------

int cmd_project(const CommonOpts& common, const std::string& split) {
  const RunConfig cfg = load_config(common);
  ensure_out(common);
  RunRecorder rec("project", common, cfg);
  const LoadedDataset ds = load_dataset(cfg, rec);
  const auto indices = selected_scans(ds, split);
  const auto clouds = load_clouds(ds, indices, common.workers);
  const auto images = project_clouds(clouds, cfg.sensor, common.workers);

  const fs::path dir = out_path(common, "images");
  fs::create_directories(dir);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    std::ostringstream name;
    name << "scan_" << std::setw(6) << std::setfill('0') << ds.manifest.scans[indices[i]].id
         << ".sqri";
    const fs::path file = dir / name.str();
    save_range_image(file.string(), images[i]);
    rec.output(file);
  }
  rec.write();
  std::cout << "projected " << images.size() << " scans -> " << dir.string() << "\n";
  return kExitOk;
}

int cmd_label(const CommonOpts& common, const std::string& split) {
  const RunConfig cfg = load_config(common);
  ensure_out(common);
  RunRecorder rec("label", common, cfg);
  const LoadedDataset ds = load_dataset(cfg, rec);
  const auto indices = selected_scans(ds, split);
  const auto clouds = load_clouds(ds, indices, common.workers);
  std::vector<Pose> poses;
  poses.reserve(indices.size());
  for (std::size_t idx : indices) poses.push_back(ds.manifest.scans[idx].pose);

  OverlapBuildOptions opts = cfg.overlap;
  opts.workers = common.workers;
  const OverlapTable table = build_pair_labels(clouds, poses, cfg.sensor, opts);

  const fs::path file = out_path(common, "labels_" + split_tag(split) + ".sqot");
  save_overlap_table(file.string(), table);
  rec.output(file);
  rec.write();

  std::size_t pos_total = 0;
  for (std::size_t q = 0; q < table.n; ++q) pos_total += table.positives_of(q).size();
  std::cout << table.n << " x " << table.n << " overlap table -> " << file.string()
            << " (mean positives per scan "
            << static_cast<double>(pos_total) / static_cast<double>(table.n) << ")\n";
  return kExitOk;
}

void write_loss_curve(const fs::path& path, const std::vector<EpochStats>& curve) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "epoch,mean_loss,lr,steps\n";
  for (const EpochStats& e : curve) {
    out << e.epoch << "," << std::setprecision(10) << e.mean_loss << "," << e.lr << "," << e.steps
        << "\n";
  }
}

int cmd_train(const CommonOpts& common, const TrainOpts& topts) {
  RunConfig cfg = load_config(common);
  if (common.seed_given) cfg.train.seed = common.seed;
  ensure_out(common);
  RunRecorder rec("train", common, cfg);
  rec.seed(cfg.train.seed);
  rec.note("phase", topts.phase);

  const LoadedDataset ds = load_dataset(cfg, rec);
  const auto indices = selected_scans(ds, topts.split);
  const auto clouds = load_clouds(ds, indices, common.workers);
  const auto images = project_clouds(clouds, cfg.sensor, common.workers);

  const std::string truth_path = topts.truth_path.empty()
                                     ? out_path(common, "labels_" + split_tag(topts.split) + ".sqot").string()
                                     : topts.truth_path;
  if (!fs::exists(truth_path)) {
    throw DataError("overlap table not found: " + truth_path + " (run `label` first)");
  }
  rec.input(truth_path);
  const OverlapTable table = load_overlap_table(truth_path);

  const fs::path ckpt_out =
      out_path(common, "checkpoint_phase" + std::to_string(topts.phase) + ".sqwt");
  const auto on_epoch = [&](const EpochStats& e) {
    std::cout << "phase " << topts.phase << " epoch " << e.epoch << ": loss " << e.mean_loss
              << ", lr " << e.lr << ", steps " << e.steps << "\n";
  };

  TrainResult result;
  if (topts.phase == 1) {
    nn::TensorMap start;
    if (topts.resume && fs::exists(ckpt_out)) {
      rec.input(ckpt_out.string());
      start = nn::load_tensors(ckpt_out.string());
      std::cout << "resuming from " << ckpt_out.string() << "\n";
    } else {
      start = init_params(cfg.model, cfg.train.seed);
    }
    result = train_phase1(images, table, cfg.model, cfg.train, std::move(start), on_epoch);
  } else {
    const std::string init_path =
        topts.init_path.empty() ? out_path(common, "checkpoint_phase1.sqwt").string()
                                : topts.init_path;
    std::string from = init_path;
    if (topts.resume && fs::exists(ckpt_out)) from = ckpt_out.string();
    if (!fs::exists(from)) {
      throw DataError("checkpoint not found: " + from + " (run phase 1 first or pass --init)");
    }
    rec.input(from);
    nn::TensorMap start = nn::load_tensors(from);
    check_params(model_tensors(start), cfg.model);
    const auto subs =
        cache_sub_descriptors(model_tensors(start), cfg.model, images, common.workers);
    result = train_phase2(subs, table, cfg.model, cfg.train, std::move(start), on_epoch);
  }

  nn::save_tensors(ckpt_out.string(), result.checkpoint);
  rec.output(ckpt_out);
  const fs::path curve_path = out_path(common, "loss_phase" + std::to_string(topts.phase) + ".csv");
  write_loss_curve(curve_path, result.curve);
  rec.output(curve_path);
  rec.write();
  std::cout << "checkpoint -> " << ckpt_out.string() << "\n";
  return kExitOk;
}

int cmd_describe(const CommonOpts& common, const DescribeOpts& dopts) {
  const RunConfig cfg = load_config(common);
  ensure_out(common);
  RunRecorder rec("describe", common, cfg);
  const std::string model_path = dopts.model_path.empty()
                                     ? out_path(common, "checkpoint_phase2.sqwt").string()
                                     : dopts.model_path;
  const nn::TensorMap params = load_checkpoint(model_path, cfg.model, rec);

  const LoadedDataset ds = load_dataset(cfg, rec);
  const auto indices = selected_scans(ds, dopts.split);
  const auto clouds = load_clouds(ds, indices, common.workers);
  const auto images = project_clouds(clouds, cfg.sensor, common.workers);

  QuerySet rows;
  if (dopts.stream) {
    StreamState state;
    for (std::size_t t = 0; t < images.size(); ++t) {
      if (auto desc = stream_update(state, images[t], params, cfg.model)) {
        rows.emplace_back(ds.manifest.scans[indices[t]].id, std::move(*desc));
      }
    }
  } else {
    const std::size_t first = cfg.model.window - 1;
    if (images.size() <= first) {
      throw DataError("split '" + split_tag(dopts.split) + "' has fewer than " +
                      std::to_string(cfg.model.window) + " scans");
    }
    rows.resize(images.size() - first);
    parallel_for(rows.size(), common.workers, [&](std::size_t i) {
      const std::size_t t = first + i;
      const std::size_t len = std::min(t + 1, cfg.model.seq_len);
      const std::span<const RangeImage> window(images.data() + (t + 1 - len), len);
      rows[i] = {ds.manifest.scans[indices[t]].id, encode_sequence_values(params, cfg.model, window)};
    });
  }

  const DescriptorIndex index = DescriptorIndex::build(rows);
  const fs::path file = out_path(common, "descriptors_" + split_tag(dopts.split) + ".sqix");
  save_index(file.string(), index);
  rec.output(file);
  rec.note("mode", dopts.stream ? "stream" : "batch");
  rec.write();
  std::cout << rows.size() << " descriptors (" << (dopts.stream ? "stream" : "batch") << ") -> "
            << file.string() << "\n";
  return kExitOk;
}

int cmd_index(const CommonOpts& common, const std::vector<std::string>& inputs) {
  const RunConfig cfg = load_config(common);
  ensure_out(common);
  RunRecorder rec("index", common, cfg);
  QuerySet rows;
  for (const std::string& path : inputs) {
    rec.input(path);
    const DescriptorIndex part = load_index(path);
    const QuerySet part_rows = index_rows(part);
    rows.insert(rows.end(), part_rows.begin(), part_rows.end());
  }
  const DescriptorIndex merged = DescriptorIndex::build(rows);
  const fs::path file = out_path(common, "index.sqix");
  save_index(file.string(), merged);
  rec.output(file);
  rec.write();
  std::cout << "index of " << merged.size() << " descriptors -> " << file.string() << "\n";
  return kExitOk;
}

int cmd_query(const CommonOpts& common, const QueryOpts& qopts) {
  const RunConfig cfg = load_config(common);
  ensure_out(common);
  RunRecorder rec("query", common, cfg);
  const std::string index_path =
      qopts.index_path.empty() ? out_path(common, "index.sqix").string() : qopts.index_path;
  const std::string queries_path = qopts.queries_path.empty()
                                       ? out_path(common, "descriptors_query.sqix").string()
                                       : qopts.queries_path;
  rec.input(index_path);
  rec.input(queries_path);
  const DescriptorIndex index = load_index(index_path);
  const QuerySet queries = index_rows(load_index(queries_path));

  std::vector<std::vector<Match>> tops(queries.size());
  parallel_for(queries.size(), common.workers, [&](std::size_t i) {
    tops[i] = query_top_k(index, queries[i].second, qopts.top_k);
  });

  nlohmann::ordered_json doc;
  doc["top_k"] = qopts.top_k;
  auto& matches = doc["matches"] = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < queries.size(); ++i) {
    nlohmann::ordered_json entry;
    entry["query"] = queries[i].first;
    auto& results = entry["results"] = nlohmann::ordered_json::array();
    for (const Match& m : tops[i]) results.push_back({m.id, m.distance});
    matches.push_back(std::move(entry));
  }
  const fs::path file = out_path(common, "matches.json");
  std::ofstream out(file);
  if (!out) throw DataError("cannot write " + file.string());
  out << doc.dump(2) << "\n";
  rec.output(file);
  rec.write();
  std::cout << "top-" << qopts.top_k << " matches for " << queries.size() << " queries -> "
            << file.string() << "\n";
  return kExitOk;
}

int cmd_eval(const CommonOpts& common, const EvalOpts& eopts) {
  const RunConfig cfg = load_config(common);
  ensure_out(common);
  RunRecorder rec("eval", common, cfg);
  const std::string index_path =
      eopts.index_path.empty() ? out_path(common, "descriptors_database.sqix").string()
                               : eopts.index_path;
  const std::string queries_path = eopts.queries_path.empty()
                                       ? out_path(common, "descriptors_query.sqix").string()
                                       : eopts.queries_path;
  const std::string truth_path =
      eopts.truth_path.empty() ? out_path(common, "labels_all.sqot").string() : eopts.truth_path;
  for (const std::string& p : {index_path, queries_path, truth_path}) {
    if (!fs::exists(p)) throw DataError("missing input: " + p);
    rec.input(p);
  }
  const DescriptorIndex index = load_index(index_path);
  const QuerySet all_queries = index_rows(load_index(queries_path));
  const OverlapTable truth = load_overlap_table(truth_path);

  const std::size_t stride = eopts.stride == 0 ? cfg.eval.stride : eopts.stride;
  QuerySet queries;
  for (std::size_t i = 0; i < all_queries.size(); i += stride) queries.push_back(all_queries[i]);

  const EvalReport report = evaluate(queries, index, truth, cfg.eval.pr_points, common.workers);
  const fs::path file = out_path(common, "eval.json");
  std::ofstream out(file);
  if (!out) throw DataError("cannot write " + file.string());
  out << eval_report_json(report);
  rec.output(file);
  rec.note("stride", stride);
  rec.note("queries_evaluated", report.evaluated);
  rec.write();
  std::cout << "AR@1 " << report.ar1 << "  AR@5 " << report.ar5 << "  AR@20 " << report.ar20
            << "  (evaluated " << report.evaluated << ", excluded " << report.excluded
            << ", f1_max " << report.f1 << ") -> " << file.string() << "\n";
  return kExitOk;
}

int cmd_bench(const CommonOpts& common, const std::string& model_path_opt) {
  const RunConfig cfg = load_config(common);
  ensure_out(common);
  RunRecorder rec("bench", common, cfg);
  const uint64_t seed = common.seed_given ? common.seed : cfg.train.seed;
  rec.seed(seed);

  nn::TensorMap params;
  if (!model_path_opt.empty()) {
    params = load_checkpoint(model_path_opt, cfg.model, rec);
  } else {
    params = init_params(cfg.model, seed);
  }

  // Per-scan streaming cost, measured on simulated scans after warm-up.
  LoadedDataset ds;
  ds.manifest = make_benchmark(cfg.synthetic_seed);
  ds.manifest.validate();
  ds.world = manifest_world(ds.manifest);
  const std::size_t n_scans = cfg.model.seq_len + 30;
  std::vector<std::size_t> indices = ds.manifest.split_indices("");
  indices.resize(std::min(indices.size(), n_scans));
  const auto clouds = load_clouds(ds, indices, common.workers);
  const auto images = project_clouds(clouds, cfg.sensor, common.workers);

  // Query cost over a large random index.
  constexpr std::size_t kIndexSize = 10000;
  QuerySet rows;
  rows.reserve(kIndexSize);
  Rng rng(mix_seed(seed, 0xBE7C));
  for (std::size_t i = 0; i < kIndexSize; ++i) {
    Descriptor d(cfg.model.descriptor_dim);
    double norm = 0.0;
    for (auto& v : d) {
      v = static_cast<float>(rng.normal());
      norm += static_cast<double>(v) * v;
    }
    norm = std::sqrt(std::max(norm, 1e-12));
    for (auto& v : d) v = static_cast<float>(v / norm);
    rows.emplace_back(i, std::move(d));
  }
  const DescriptorIndex index = DescriptorIndex::build(rows);

  using clock = std::chrono::steady_clock;
  StreamState state;
  std::vector<double> stream_ms, query_ms, total_ms;
  for (std::size_t t = 0; t < images.size(); ++t) {
    const auto t0 = clock::now();
    const auto desc = stream_update(state, images[t], params, cfg.model);
    const auto t1 = clock::now();
    const double enc_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
    if (state.scans_seen <= cfg.model.seq_len || !desc) continue;  // warm-up
    const auto q0 = clock::now();
    const auto matches = query_top_k(index, *desc, 20);
    const auto q1 = clock::now();
    const double q_ms = std::chrono::duration<double, std::milli>(q1 - q0).count();
    (void)matches;
    stream_ms.push_back(enc_ms);
    query_ms.push_back(q_ms);
    total_ms.push_back(enc_ms + q_ms);
  }

  const std::size_t count = param_count(cfg.model);
  nlohmann::ordered_json doc;
  doc["stream_ms_median"] = median_ms(stream_ms);
  doc["query_ms_median"] = median_ms(query_ms);
  doc["total_ms_median"] = median_ms(total_ms);
  doc["samples"] = stream_ms.size();
  doc["index_size"] = kIndexSize;
  doc["param_count"] = count;
  doc["reference_param_count"] = 12820000;
  const fs::path file = out_path(common, "bench.json");
  std::ofstream out(file);
  if (!out) throw DataError("cannot write " + file.string());
  out << doc.dump(2) << "\n";
  rec.output(file);
  rec.write();
  std::cout << "per-scan descriptor " << median_ms(stream_ms) << " ms median, top-20 query over "
            << kIndexSize << " entries " << median_ms(query_ms) << " ms median, end to end "
            << median_ms(total_ms) << " ms median (" << stream_ms.size() << " samples)\n"
            << "param count " << count << " (reference configuration: 12820000)\n"
            << "report -> " << file.string() << "\n";
  return kExitOk;
}

int cmd_selftest(const CommonOpts& common) {
  const RunConfig cfg = load_config(common);
  ensure_out(common);
  RunRecorder rec("selftest", common, cfg);
  const SelftestResult result = run_selftest([](const std::string& line) {
    std::cout << line << "\n";
  });
  std::cout << result.passed << " passed, " << result.failed << " failed\n";
  rec.note("passed", result.passed);
  rec.note("failed", result.failed);
  rec.write();
  return result.ok() ? kExitOk : kExitSelftest;
}

void add_common(CLI::App* sub, CommonOpts& common, CLI::Option*& seed_opt) {
  sub->add_option("--config", common.config_path, "Run configuration JSON");
  sub->add_option("--out", common.out_dir, "Output directory")->capture_default_str();
  sub->add_option("--workers", common.workers, "Worker threads")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  seed_opt = sub->add_option("--seed", common.seed, "Override the configured seed");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sequence-based LiDAR place recognition pipeline"};
  app.require_subcommand(1);

  CommonOpts common;
  std::vector<CLI::Option*> seed_opts;
  const auto with_common = [&](CLI::App* sub) {
    CLI::Option* opt = nullptr;
    add_common(sub, common, opt);
    seed_opts.push_back(opt);
    return sub;
  };

  auto* project = with_common(app.add_subcommand("project", "Render scans to range images"));
  std::string project_split = "all";
  project->add_option("--split", project_split, "Scan subset")
      ->check(CLI::IsMember({"all", "database", "query"}))
      ->capture_default_str();

  auto* label = with_common(app.add_subcommand("label", "Build the pairwise overlap table"));
  std::string label_split = "all";
  label->add_option("--split", label_split, "Scan subset")
      ->check(CLI::IsMember({"all", "database", "query"}))
      ->capture_default_str();

  TrainOpts topts;
  auto* train = with_common(app.add_subcommand("train", "Train the descriptor network"));
  train->add_option("--phase", topts.phase, "1: encoder, 2: pooling exponent")
      ->required()
      ->check(CLI::IsMember({1, 2}));
  train->add_option("--split", topts.split, "Scan subset to train on")
      ->check(CLI::IsMember({"all", "database", "query"}))
      ->capture_default_str();
  train->add_option("--truth", topts.truth_path, "Overlap table path");
  train->add_option("--init", topts.init_path, "Starting checkpoint (phase 2)");
  train->add_flag("--resume", topts.resume, "Continue from this phase's checkpoint if present");

  DescribeOpts dopts;
  auto* describe = with_common(app.add_subcommand("describe", "Compute sequence descriptors"));
  describe->add_option("--split", dopts.split, "Scan subset")
      ->check(CLI::IsMember({"all", "database", "query"}))
      ->capture_default_str();
  describe->add_option("--model", dopts.model_path, "Checkpoint path");
  describe->add_flag("--stream", dopts.stream, "Incremental per-scan mode");

  std::vector<std::string> index_inputs;
  auto* index_cmd = with_common(app.add_subcommand("index", "Merge descriptor files into an index"));
  index_cmd->add_option("inputs", index_inputs, "Descriptor .sqix files")
      ->required()
      ->check(CLI::ExistingFile);

  QueryOpts qopts;
  auto* query = with_common(app.add_subcommand("query", "Search the index"));
  query->add_option("--index", qopts.index_path, "Index path");
  query->add_option("--queries", qopts.queries_path, "Query descriptor path");
  query->add_option("--top-k", qopts.top_k, "Results per query")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);

  EvalOpts eopts;
  auto* eval = with_common(app.add_subcommand("eval", "Recall and precision-recall report"));
  eval->add_option("--index", eopts.index_path, "Database descriptor path");
  eval->add_option("--queries", eopts.queries_path, "Query descriptor path");
  eval->add_option("--truth", eopts.truth_path, "Overlap table path");
  eval->add_option("--stride", eopts.stride, "Evaluate every stride-th query");

  std::string bench_model;
  auto* bench = with_common(app.add_subcommand("bench", "Latency and parameter count"));
  bench->add_option("--model", bench_model, "Checkpoint path (default: fresh parameters)");

  auto* selftest = with_common(app.add_subcommand("selftest", "Run the invariance suite"));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  for (const CLI::Option* opt : seed_opts) {
    if (opt != nullptr && opt->count() > 0) common.seed_given = true;
  }

  try {
    if (app.got_subcommand(project)) return cmd_project(common, project_split);
    if (app.got_subcommand(label)) return cmd_label(common, label_split);
    if (app.got_subcommand(train)) return cmd_train(common, topts);
    if (app.got_subcommand(describe)) return cmd_describe(common, dopts);
    if (app.got_subcommand(index_cmd)) return cmd_index(common, index_inputs);
    if (app.got_subcommand(query)) return cmd_query(common, qopts);
    if (app.got_subcommand(eval)) return cmd_eval(common, eopts);
    if (app.got_subcommand(bench)) return cmd_bench(common, bench_model);
    if (app.got_subcommand(selftest)) return cmd_selftest(common);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
  std::cerr << "error: no subcommand\n";
  return kExitUsage;
}
