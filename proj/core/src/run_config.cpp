#include "seqplace/run_config.hpp"

#include <cmath>
#include <fstream>

#include "json.hpp"

namespace seqplace {
namespace {

constexpr double kDeg = M_PI / 180.0;

void reject_unknown(const nlohmann::json& obj, std::initializer_list<const char*> allowed,
                    const std::string& where) {
  for (const auto& [key, value] : obj.items()) {
    bool ok = false;
    for (const char* a : allowed) {
      if (key == a) {
        ok = true;
        break;
      }
    }
    if (!ok) throw ConfigError("unknown config key '" + where + "." + key + "'");
  }
}

template <typename T>
void read(const nlohmann::json& obj, const char* key, T& out) {
  if (obj.contains(key)) out = obj.at(key).get<T>();
}

}  // namespace

RunConfig parse_run_config(const std::string& json_text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  RunConfig cfg;
  try {
    reject_unknown(j, {"sensor", "model", "train", "overlap", "data", "eval"}, "config");
    if (j.contains("sensor")) {
      const auto& s = j.at("sensor");
      reject_unknown(s, {"width", "height", "fov_up_deg", "fov_down_deg"}, "sensor");
      read(s, "width", cfg.sensor.width);
      read(s, "height", cfg.sensor.height);
      if (s.contains("fov_up_deg")) cfg.sensor.fov_up = s.at("fov_up_deg").get<double>() * kDeg;
      if (s.contains("fov_down_deg")) cfg.sensor.fov_down = s.at("fov_down_deg").get<double>() * kDeg;
    }
    if (j.contains("model")) {
      const auto& m = j.at("model");
      reject_unknown(m,
                     {"c", "heads_sst", "heads_mst", "ffn_mult", "vlad_clusters", "gem_p_init",
                      "seq_len_m", "input_scale", "leg"},
                     "model");
      read(m, "c", cfg.model.channels);
      read(m, "heads_sst", cfg.model.heads_sst);
      read(m, "heads_mst", cfg.model.heads_mst);
      read(m, "ffn_mult", cfg.model.ffn_mult);
      read(m, "vlad_clusters", cfg.model.vlad_clusters);
      read(m, "gem_p_init", cfg.model.gem_p_init);
      read(m, "seq_len_m", cfg.model.seq_len);
      read(m, "input_scale", cfg.model.input_scale);
      if (m.contains("leg")) {
        cfg.model.leg.clear();
        for (const auto& layer : m.at("leg")) {
          if (!layer.is_array() || layer.size() != 3) {
            throw ConfigError("model.leg entries must be [out_channels, kernel_h, stride_h]");
          }
          cfg.model.leg.push_back({layer[0].get<std::size_t>(), layer[1].get<std::size_t>(),
                                   layer[2].get<std::size_t>()});
        }
      }
    }
    if (j.contains("train")) {
      const auto& t = j.at("train");
      reject_unknown(t,
                     {"alpha", "n_pos", "n_neg", "epochs", "steps_per_epoch", "lr_phase1",
                      "lr_phase2", "lr_decay", "lr_decay_epochs", "seed"},
                     "train");
      read(t, "alpha", cfg.train.margin);
      read(t, "n_pos", cfg.train.n_pos);
      read(t, "n_neg", cfg.train.n_neg);
      read(t, "epochs", cfg.train.epochs);
      read(t, "steps_per_epoch", cfg.train.steps_per_epoch);
      read(t, "lr_phase1", cfg.train.lr_phase1);
      read(t, "lr_phase2", cfg.train.lr_phase2);
      read(t, "lr_decay", cfg.train.lr_decay);
      read(t, "lr_decay_epochs", cfg.train.lr_decay_epochs);
      read(t, "seed", cfg.train.seed);
    }
    if (j.contains("overlap")) {
      const auto& o = j.at("overlap");
      reject_unknown(o, {"delta", "pos_threshold", "gate_radius"}, "overlap");
      read(o, "delta", cfg.overlap.delta);
      read(o, "pos_threshold", cfg.overlap.pos_threshold);
      read(o, "gate_radius", cfg.overlap.gate_radius);
    }
    if (j.contains("data")) {
      const auto& d = j.at("data");
      reject_unknown(d, {"manifest", "synthetic_seed"}, "data");
      read(d, "manifest", cfg.data_manifest);
      read(d, "synthetic_seed", cfg.synthetic_seed);
    }
    if (j.contains("eval")) {
      const auto& e = j.at("eval");
      reject_unknown(e, {"top_k", "stride", "pr_points"}, "eval");
      read(e, "top_k", cfg.eval.top_k);
      read(e, "stride", cfg.eval.stride);
      read(e, "pr_points", cfg.eval.pr_points);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad config value: ") + e.what());
  }
  cfg.sensor.validate();
  cfg.model.validate();
  cfg.train.validate();
  if (cfg.eval.top_k == 0 || cfg.eval.stride == 0) {
    throw ConfigError("eval.top_k and eval.stride must be at least 1");
  }
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError(path + ": cannot open");
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return parse_run_config(text);
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

std::string run_config_json(const RunConfig& cfg) {
  nlohmann::ordered_json j;
  j["sensor"] = {{"width", cfg.sensor.width},
                 {"height", cfg.sensor.height},
                 {"fov_up_deg", cfg.sensor.fov_up / kDeg},
                 {"fov_down_deg", cfg.sensor.fov_down / kDeg}};
  auto leg = nlohmann::ordered_json::array();
  for (const LegLayer& l : cfg.model.resolved_leg()) {
    leg.push_back({l.out_channels, l.kernel_h, l.stride_h});
  }
  j["model"] = {{"c", cfg.model.channels},
                {"heads_sst", cfg.model.heads_sst},
                {"heads_mst", cfg.model.heads_mst},
                {"ffn_mult", cfg.model.ffn_mult},
                {"vlad_clusters", cfg.model.vlad_clusters},
                {"gem_p_init", cfg.model.gem_p_init},
                {"seq_len_m", cfg.model.seq_len},
                {"input_scale", cfg.model.input_scale},
                {"leg", leg}};
  j["train"] = {{"alpha", cfg.train.margin},
                {"n_pos", cfg.train.n_pos},
                {"n_neg", cfg.train.n_neg},
                {"epochs", cfg.train.epochs},
                {"steps_per_epoch", cfg.train.steps_per_epoch},
                {"lr_phase1", cfg.train.lr_phase1},
                {"lr_phase2", cfg.train.lr_phase2},
                {"lr_decay", cfg.train.lr_decay},
                {"lr_decay_epochs", cfg.train.lr_decay_epochs},
                {"seed", cfg.train.seed}};
  j["overlap"] = {{"delta", cfg.overlap.delta},
                  {"pos_threshold", cfg.overlap.pos_threshold},
                  {"gate_radius", cfg.overlap.gate_radius}};
  j["data"] = {{"manifest", cfg.data_manifest}, {"synthetic_seed", cfg.synthetic_seed}};
  j["eval"] = {{"top_k", cfg.eval.top_k}, {"stride", cfg.eval.stride},
               {"pr_points", cfg.eval.pr_points}};
  return j.dump(2) + "\n";
}

uint64_t config_hash(const RunConfig& cfg) {
  const std::string text = run_config_json(cfg);
  return fnv1a(text.data(), text.size());
}

}  // namespace seqplace
