#include "seqplace/training.hpp"

#include <cmath>

namespace seqplace {
namespace {

struct TrainerMeta {
  int phase = 0;
  int epochs_done = 0;
};

TrainerMeta read_meta(const nn::TensorMap& ckpt) {
  TrainerMeta meta;
  if (auto it = ckpt.find("trainer.phase"); it != ckpt.end()) {
    meta.phase = static_cast<int>(it->second.at(0));
  }
  if (auto it = ckpt.find("trainer.epoch"); it != ckpt.end()) {
    meta.epochs_done = static_cast<int>(it->second.at(0));
  }
  return meta;
}

AdamState read_adam(const nn::TensorMap& ckpt) {
  AdamState s;
  if (auto it = ckpt.find("adam.step"); it != ckpt.end()) {
    s.step = static_cast<std::size_t>(it->second.at(0));
  }
  for (const auto& [name, t] : ckpt) {
    if (name.rfind("adam.m.", 0) == 0) {
      s.m.emplace(name.substr(7), t);
    } else if (name.rfind("adam.v.", 0) == 0) {
      s.v.emplace(name.substr(7), t);
    }
  }
  return s;
}

nn::TensorMap make_checkpoint(const nn::TensorMap& params, const AdamState& adam, int phase,
                              int epochs_done) {
  nn::TensorMap out = params;
  for (const auto& [name, t] : adam.m) out.emplace("adam.m." + name, t);
  for (const auto& [name, t] : adam.v) out.emplace("adam.v." + name, t);
  out.emplace("adam.step", nn::Tensor<float>::scalar(static_cast<float>(adam.step)));
  out.emplace("trainer.phase", nn::Tensor<float>::scalar(static_cast<float>(phase)));
  out.emplace("trainer.epoch", nn::Tensor<float>::scalar(static_cast<float>(epochs_done)));
  return out;
}

// queries that can field a full tuple from ids >= min_id
std::vector<std::size_t> eligible_queries(const OverlapTable& table, const TrainConfig& tcfg,
                                          std::size_t min_id) {
  std::vector<std::size_t> out;
  for (std::size_t q = min_id; q < table.n; ++q) {
    std::size_t pos = 0, neg = 0;
    for (std::size_t j = min_id; j < table.n; ++j) {
      if (j == q) continue;
      if (table.at(q, j) > table.pos_threshold) {
        ++pos;
      } else {
        ++neg;
      }
    }
    if (pos >= tcfg.n_pos && neg >= tcfg.n_neg) out.push_back(q);
  }
  return out;
}

std::vector<std::size_t> epoch_order(const std::vector<std::size_t>& eligible,
                                     const TrainConfig& tcfg, uint64_t phase_seed, int epoch) {
  std::vector<std::size_t> order = eligible;
  Rng rng(mix_seed(phase_seed, static_cast<uint64_t>(epoch), 0));
  rng.shuffle(order);
  if (tcfg.steps_per_epoch > 0 && order.size() > static_cast<std::size_t>(tcfg.steps_per_epoch)) {
    order.resize(static_cast<std::size_t>(tcfg.steps_per_epoch));
  }
  return order;
}

}  // namespace

void TrainConfig::validate() const {
  if (!(margin > 0.0f)) throw ConfigError("margin must be positive");
  if (n_pos == 0 || n_neg == 0) throw ConfigError("n_pos and n_neg must be at least 1");
  if (epochs < 1) throw ConfigError("epochs must be at least 1");
  if (steps_per_epoch < 0) throw ConfigError("steps_per_epoch must be >= 0");
  if (!(lr_phase1 > 0.0f) || !(lr_phase2 > 0.0f)) throw ConfigError("learning rates must be positive");
  if (!(lr_decay > 0.0f) || lr_decay > 1.0f) throw ConfigError("lr_decay must be in (0, 1]");
  if (lr_decay_epochs < 1) throw ConfigError("lr_decay_epochs must be at least 1");
}

void adam_step(nn::TensorMap& params, const nn::TensorMap& grads, AdamState& state, float lr,
               const AdamConfig& opt) {
  ++state.step;
  const double bc1 = 1.0 - std::pow(static_cast<double>(opt.beta1), static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(static_cast<double>(opt.beta2), static_cast<double>(state.step));
  for (const auto& [name, g] : grads) {
    auto it = params.find(name);
    if (it == params.end()) {
      throw ConfigError("adam_step: gradient for unknown parameter '" + name + "'");
    }
    nn::Tensor<float>& p = it->second;
    if (!p.same_shape(g)) {
      throw ConfigError("adam_step: shape mismatch for '" + name + "' (" + p.shape_string() +
                        " vs " + g.shape_string() + ")");
    }
    nn::Tensor<float>& m =
        state.m.try_emplace(name, nn::Tensor<float>::zeros(p.shape)).first->second;
    nn::Tensor<float>& v =
        state.v.try_emplace(name, nn::Tensor<float>::zeros(p.shape)).first->second;
    if (!m.same_shape(p) || !v.same_shape(p)) {
      throw ConfigError("adam_step: moment shape mismatch for '" + name + "'");
    }
    for (std::size_t i = 0; i < p.v.size(); ++i) {
      const double gi = g.v[i];
      // round moments to f32 before using them so a reloaded checkpoint
      // continues the trajectory bit-exactly
      m.v[i] = static_cast<float>(opt.beta1 * static_cast<double>(m.v[i]) + (1.0 - opt.beta1) * gi);
      v.v[i] =
          static_cast<float>(opt.beta2 * static_cast<double>(v.v[i]) + (1.0 - opt.beta2) * gi * gi);
      const double mhat = static_cast<double>(m.v[i]) / bc1;
      const double vhat = static_cast<double>(v.v[i]) / bc2;
      p.v[i] = static_cast<float>(static_cast<double>(p.v[i]) -
                                  static_cast<double>(lr) * mhat /
                                      (std::sqrt(vhat) + static_cast<double>(opt.eps)));
    }
  }
}

float scheduled_lr(float base, float decay, int decay_epochs, int epoch) {
  if (decay_epochs <= 0) return base;
  const int k = epoch / decay_epochs;
  return static_cast<float>(static_cast<double>(base) *
                            std::pow(static_cast<double>(decay), static_cast<double>(k)));
}

TrainResult train_phase1(const std::vector<RangeImage>& scans, const OverlapTable& table,
                         const ModelConfig& mcfg, const TrainConfig& tcfg, nn::TensorMap start,
                         const EpochCallback& on_epoch) {
  mcfg.validate();
  tcfg.validate();
  if (scans.size() != table.n) {
    throw DataError("have " + std::to_string(scans.size()) + " scans but the overlap table covers " +
                    std::to_string(table.n));
  }
  const std::size_t min_id = mcfg.window - 1;
  const auto eligible = eligible_queries(table, tcfg, min_id);
  if (eligible.empty()) {
    throw DataError("no eligible queries: no scan has " + std::to_string(tcfg.n_pos) +
                    " positives and " + std::to_string(tcfg.n_neg) + " negatives");
  }

  nn::TensorMap params = model_tensors(start);
  check_params(params, mcfg);
  const TrainerMeta meta = read_meta(start);
  AdamState adam;
  int first_epoch = 0;
  if (meta.phase == 1) {
    first_epoch = meta.epochs_done;
    adam = read_adam(start);
  }
  const uint64_t phase_seed = mix_seed(tcfg.seed, 1);

  TrainResult result;
  for (int epoch = first_epoch; epoch < tcfg.epochs; ++epoch) {
    const float lr = scheduled_lr(tcfg.lr_phase1, tcfg.lr_decay, tcfg.lr_decay_epochs, epoch);
    const auto order = epoch_order(eligible, tcfg, phase_seed, epoch);
    double loss_sum = 0.0;
    for (std::size_t step = 0; step < order.size(); ++step) {
      const TrainingTuple tuple =
          sample_training_tuple(table, order[step], tcfg.n_pos, tcfg.n_neg,
                                mix_seed(phase_seed, static_cast<uint64_t>(epoch), step + 1), min_id);
      nn::Tape<float> tape;
      auto bp = bind_params<float>(tape, params, mcfg, TrainMode::All);
      const auto window_sub = [&](std::size_t id) {
        auto f0 = encode_scan(tape, bp, mcfg, scans[id - 2]);
        auto f1 = encode_scan(tape, bp, mcfg, scans[id - 1]);
        auto f2 = encode_scan(tape, bp, mcfg, scans[id]);
        return fuse_window(tape, bp, mcfg, f0, f1, f2);
      };
      auto dq = window_sub(tuple.query);
      std::vector<nn::Var<float>> dpos, dneg;
      dpos.reserve(tuple.positives.size());
      dneg.reserve(tuple.negatives.size());
      for (std::size_t id : tuple.positives) dpos.push_back(window_sub(id));
      for (std::size_t id : tuple.negatives) dneg.push_back(window_sub(id));
      auto loss = triplet_loss(dq, dpos, dneg, tcfg.margin);
      loss_sum += loss.value().at(0);
      tape.backward(loss);
      nn::TensorMap grads;
      for (const auto& [name, var] : bp.by_name) {
        if (tape.needs_grad(var.id())) grads.emplace(name, var.grad());
      }
      adam_step(params, grads, adam, lr);
    }
    EpochStats stats{epoch, loss_sum / static_cast<double>(order.size()), lr, order.size()};
    result.curve.push_back(stats);
    if (on_epoch) on_epoch(stats);
  }
  result.checkpoint = make_checkpoint(params, adam, 1, std::max(first_epoch, tcfg.epochs));
  return result;
}

std::vector<Descriptor> cache_sub_descriptors(const nn::TensorMap& params, const ModelConfig& cfg,
                                              const std::vector<RangeImage>& scans, int workers) {
  cfg.validate();
  check_params(params, cfg);
  const std::size_t n = scans.size();
  std::vector<Descriptor> subs(n);
  if (n < cfg.window) return subs;
  std::vector<nn::Tensor<float>> feats(n);
  parallel_for(n, workers, [&](std::size_t i) {
    nn::Tape<float> tape(false);
    auto bp = bind_params<float>(tape, params, cfg);
    feats[i] = encode_scan(tape, bp, cfg, scans[i]).value();
  });
  parallel_for(n - (cfg.window - 1), workers, [&](std::size_t k) {
    const std::size_t id = k + cfg.window - 1;
    nn::Tape<float> tape(false);
    auto bp = bind_params<float>(tape, params, cfg);
    auto sub = fuse_window(tape, bp, cfg, tape.constant(feats[id - 2]),
                           tape.constant(feats[id - 1]), tape.constant(feats[id]));
    subs[id] = sub.value().v;
  });
  return subs;
}

TrainResult train_phase2(const std::vector<Descriptor>& subs, const OverlapTable& table,
                         const ModelConfig& mcfg, const TrainConfig& tcfg, nn::TensorMap start,
                         const EpochCallback& on_epoch) {
  mcfg.validate();
  tcfg.validate();
  if (subs.size() != table.n) {
    throw DataError("have " + std::to_string(subs.size()) +
                    " cached sub-descriptors but the overlap table covers " +
                    std::to_string(table.n));
  }
  const std::size_t min_id = mcfg.seq_len - 1;
  if (table.n <= min_id) {
    throw DataError("need more than " + std::to_string(min_id) + " scans for sequences of " +
                    std::to_string(mcfg.seq_len));
  }
  for (std::size_t i = mcfg.window - 1; i < subs.size(); ++i) {
    if (subs[i].size() != mcfg.descriptor_dim) {
      throw DataError("sub-descriptor cache is missing scan " + std::to_string(i));
    }
  }
  const auto eligible = eligible_queries(table, tcfg, min_id);
  if (eligible.empty()) {
    throw DataError("no eligible queries among ids >= " + std::to_string(min_id));
  }

  nn::TensorMap params = model_tensors(start);
  check_params(params, mcfg);
  const TrainerMeta meta = read_meta(start);
  AdamState adam;
  int first_epoch = 0;
  if (meta.phase == 2) {
    first_epoch = meta.epochs_done;
    adam = read_adam(start);
  }
  const uint64_t phase_seed = mix_seed(tcfg.seed, 2);
  const std::size_t span = mcfg.seq_len - mcfg.window;  // window end ids: [id - span, id]

  TrainResult result;
  for (int epoch = first_epoch; epoch < tcfg.epochs; ++epoch) {
    const float lr = scheduled_lr(tcfg.lr_phase2, tcfg.lr_decay, tcfg.lr_decay_epochs, epoch);
    const auto order = epoch_order(eligible, tcfg, phase_seed, epoch);
    double loss_sum = 0.0;
    for (std::size_t step = 0; step < order.size(); ++step) {
      const TrainingTuple tuple =
          sample_training_tuple(table, order[step], tcfg.n_pos, tcfg.n_neg,
                                mix_seed(phase_seed, static_cast<uint64_t>(epoch), step + 1), min_id);
      nn::Tape<float> tape;
      auto q_leaf = tape.leaf(params.at("gem.q"), true);
      auto p = nn::add_const(nn::softplus(q_leaf), 1.0f);
      const auto sequence = [&](std::size_t id) {
        std::vector<nn::Var<float>> pool;
        pool.reserve(span + 1);
        for (std::size_t j = id - span; j <= id; ++j) {
          pool.push_back(tape.constant(nn::Tensor<float>({subs[j].size()}, subs[j])));
        }
        return gem_pool(tape, pool, p);
      };
      auto gq = sequence(tuple.query);
      std::vector<nn::Var<float>> gpos, gneg;
      for (std::size_t id : tuple.positives) gpos.push_back(sequence(id));
      for (std::size_t id : tuple.negatives) gneg.push_back(sequence(id));
      auto loss = triplet_loss(gq, gpos, gneg, tcfg.margin);
      loss_sum += loss.value().at(0);
      tape.backward(loss);
      nn::TensorMap grads;
      grads.emplace("gem.q", q_leaf.grad());
      adam_step(params, grads, adam, lr);
    }
    EpochStats stats{epoch, loss_sum / static_cast<double>(order.size()), lr, order.size()};
    result.curve.push_back(stats);
    if (on_epoch) on_epoch(stats);
  }
  result.checkpoint = make_checkpoint(params, adam, 2, std::max(first_epoch, tcfg.epochs));
  return result;
}

}  // namespace seqplace
