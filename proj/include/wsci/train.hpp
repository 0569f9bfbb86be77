#pragma once

#include <algorithm>
#include <chrono>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "wsci/adam.hpp"
#include "wsci/data.hpp"
#include "wsci/metrics.hpp"
#include "wsci/network.hpp"

namespace wsci {

struct TrainConfig {
  int epochs = 50;
  int batch_size = 96;
  double initial_lr = 1e-3;
  std::vector<double> milestones = {0.1, 0.2, 0.5};  // fractions of epochs
  double lr_factor = 0.1;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  uint64_t seed = 0;
  std::string transfer_mode = "none";  // none | full | frozen_head
  double grad_clip = 0.0;              // 0 disables; divergence escape hatch

  void validate() const {
    if (batch_size < 1) throw error("config", "batch size must be >= 1");
    if (epochs < 1) throw error("config", "epochs must be >= 1");
    double prev = 0.0;
    for (double m : milestones) {
      if (m <= prev || m >= 1.0)
        throw error("config", "milestones must be strictly increasing in (0,1)");
      prev = m;
    }
    if (transfer_mode != "none" && transfer_mode != "full" &&
        transfer_mode != "frozen_head")
      throw error("config", "unknown transfer mode '" + transfer_mode + "'");
  }

  nlohmann::json to_json() const {
    return {{"epochs", epochs},
            {"batch_size", batch_size},
            {"initial_lr", initial_lr},
            {"milestones", milestones},
            {"lr_factor", lr_factor},
            {"adam_beta1", adam_beta1},
            {"adam_beta2", adam_beta2},
            {"adam_epsilon", adam_epsilon},
            {"seed", seed},
            {"transfer_mode", transfer_mode},
            {"grad_clip", grad_clip}};
  }

  static TrainConfig from_json(const nlohmann::json& j) {
    TrainConfig c;
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.initial_lr = j.value("initial_lr", c.initial_lr);
    c.milestones = j.value("milestones", c.milestones);
    c.lr_factor = j.value("lr_factor", c.lr_factor);
    c.adam_beta1 = j.value("adam_beta1", c.adam_beta1);
    c.adam_beta2 = j.value("adam_beta2", c.adam_beta2);
    c.adam_epsilon = j.value("adam_epsilon", c.adam_epsilon);
    c.seed = j.value("seed", c.seed);
    c.transfer_mode = j.value("transfer_mode", c.transfer_mode);
    c.grad_clip = j.value("grad_clip", c.grad_clip);
    c.validate();
    return c;
  }
};

// Piecewise-constant schedule: the reduced rate applies from epoch
// floor(fraction * epochs) onward.
inline double lr_at(const TrainConfig& cfg, int epoch) {
  double lr = cfg.initial_lr;
  for (double frac : cfg.milestones)
    if (epoch >= int(std::floor(frac * cfg.epochs))) lr *= cfg.lr_factor;
  return lr;
}

// ---- Checkpoint (WSCM) ---------------------------------------------------

constexpr uint32_t kCheckpointVersion = 1;

struct TrainHistory {
  struct Row {
    int epoch;
    double mean_loss;
    double lr;
    int64_t skipped_batches;
  };
  std::vector<Row> rows;

  std::string to_csv() const {
    std::string out = "epoch,mean_loss,lr,skipped_batches\n";
    char buf[128];
    for (const auto& r : rows) {
      std::snprintf(buf, sizeof buf, "%d,%.8f,%.8g,%lld\n", r.epoch, r.mean_loss, r.lr,
                    (long long)r.skipped_batches);
      out += buf;
    }
    return out;
  }
};

inline void save_checkpoint(const std::string& path, const ModelState& m,
                            const Adam* optimizer = nullptr, int epoch = 0,
                            const nlohmann::json& config_echo = {}) {
  std::string out;
  out += "WSCM";
  put_u32(out, kCheckpointVersion);
  const std::string spec_json = m.spec.to_json().dump();
  put_u32(out, uint32_t(spec_json.size()));
  out += spec_json;

  put_u64(out, m.params.size());
  for (const auto& [name, p] : m.params) {  // std::map: sorted, stable order
    put_u32(out, uint32_t(name.size()));
    out += name;
    for (int d = 0; d < 4; ++d) put_u32(out, uint32_t(p.value.shape[d]));
    out.push_back(p.trainable ? 1 : 0);
    for (float v : p.value.data) put_f32(out, v);
  }
  put_u64(out, m.buffers.size());
  for (const auto& [name, b] : m.buffers) {
    put_u32(out, uint32_t(name.size()));
    out += name;
    put_u64(out, b.size());
    for (float v : b) put_f32(out, v);
  }
  out.push_back(optimizer ? 1 : 0);
  if (optimizer) {
    auto dump_moments = [&](const std::map<std::string, std::vector<float>>& mm) {
      put_u64(out, mm.size());
      for (const auto& [name, v] : mm) {
        put_u32(out, uint32_t(name.size()));
        out += name;
        put_u64(out, v.size());
        for (float x : v) put_f32(out, x);
      }
    };
    put_u64(out, uint64_t(optimizer->step_count()));
    dump_moments(optimizer->moments_m());
    dump_moments(optimizer->moments_v());
  }
  put_i32(out, epoch);
  const std::string cfg = config_echo.dump();
  put_u32(out, uint32_t(cfg.size()));
  out += cfg;
  write_file_atomic(path, out);
}

struct Checkpoint {
  ModelState model;
  int epoch = 0;
  nlohmann::json config_echo;
  bool has_optimizer = false;
  int64_t optimizer_step = 0;
  std::map<std::string, std::vector<float>> moments_m, moments_v;
};

inline Checkpoint load_checkpoint(const std::string& path) {
  const std::string data = read_file(path);
  ByteReader br(data, "checkpoint " + path);
  if (br.bytes(4) != "WSCM") throw error("corrupt", path + " is not a checkpoint");
  const uint32_t version = br.u32();
  if (version != kCheckpointVersion)
    throw error("corrupt", "unsupported checkpoint version " + std::to_string(version));
  Checkpoint ck;
  const uint32_t spec_len = br.u32();
  try {
    ck.model.spec = ArchitectureSpec::from_json(nlohmann::json::parse(br.bytes(spec_len)));
  } catch (const nlohmann::json::exception& e) {
    throw error("corrupt", "bad spec JSON in " + path + ": " + e.what());
  }

  const uint64_t n_params = br.u64();
  for (uint64_t i = 0; i < n_params; ++i) {
    const std::string name = br.bytes(br.u32());
    int shape[4];
    for (int d = 0; d < 4; ++d) shape[d] = int(br.u32());
    const bool trainable = br.bytes(1)[0] != 0;
    Tensor t(shape[0], shape[1], shape[2], shape[3]);
    br.f32_block(t.data.data(), t.data.size());
    Parameter p(std::move(t), trainable);
    ck.model.params.emplace(name, std::move(p));
  }
  const uint64_t n_buffers = br.u64();
  for (uint64_t i = 0; i < n_buffers; ++i) {
    const std::string name = br.bytes(br.u32());
    std::vector<float> b(br.u64());
    br.f32_block(b.data(), b.size());
    ck.model.buffers.emplace(name, std::move(b));
  }
  ck.has_optimizer = br.bytes(1)[0] != 0;
  if (ck.has_optimizer) {
    ck.optimizer_step = int64_t(br.u64());
    auto read_moments = [&](std::map<std::string, std::vector<float>>& mm) {
      const uint64_t n = br.u64();
      for (uint64_t i = 0; i < n; ++i) {
        const std::string name = br.bytes(br.u32());
        std::vector<float> v(br.u64());
        br.f32_block(v.data(), v.size());
        mm.emplace(name, std::move(v));
      }
    };
    read_moments(ck.moments_m);
    read_moments(ck.moments_v);
  }
  ck.epoch = br.i32();
  const uint32_t cfg_len = br.u32();
  try {
    ck.config_echo = nlohmann::json::parse(br.bytes(cfg_len));
  } catch (const nlohmann::json::exception& e) {
    throw error("corrupt", "bad config echo in " + path + ": " + e.what());
  }
  if (!br.at_end()) throw error("corrupt", path + " has trailing bytes");

  // spec vs tensors: rebuild the expected shape table and compare
  ModelState expected = build_model<float>(ck.model.spec, RngStream(0, 0));
  if (expected.params.size() != ck.model.params.size())
    throw error("spec_mismatch", "parameter count differs from spec (expected " +
                                     std::to_string(expected.params.size()) + ", got " +
                                     std::to_string(ck.model.params.size()) + ")");
  for (const auto& [name, p] : expected.params) {
    auto it = ck.model.params.find(name);
    if (it == ck.model.params.end())
      throw error("spec_mismatch", "missing parameter '" + name + "'");
    if (it->second.value.shape != p.value.shape)
      throw error("spec_mismatch", "shape of '" + name + "' differs from spec");
  }
  for (const auto& [name, b] : expected.buffers) {
    auto it = ck.model.buffers.find(name);
    if (it == ck.model.buffers.end())
      throw error("spec_mismatch", "missing buffer '" + name + "'");
    if (it->second.size() != b.size())
      throw error("spec_mismatch", "length of buffer '" + name + "' differs from spec");
  }
  return ck;
}

// ---- Training loop -------------------------------------------------------

struct BatchTensors {
  Tensor input;   // B x 10 x 40 x 40
  Tensor target;  // B x 1 x 32 x 32, core of the chip target
};

inline BatchTensors assemble_batch(const std::vector<Chip>& chips,
                                   const std::vector<size_t>& ids, size_t first,
                                   size_t count, int border) {
  BatchTensors bt{Tensor(int(count), kInputChannels, kChipSize, kChipSize),
                  Tensor(int(count), 1, kChipSize - 2 * border, kChipSize - 2 * border)};
  const int core = kChipSize - 2 * border;
  for (size_t b = 0; b < count; ++b) {
    const Chip& chip = chips[ids[first + b]];
    std::copy(chip.input.begin(), chip.input.end(),
              bt.input.data.begin() + b * chip.input.size());
    for (int y = 0; y < core; ++y)
      for (int x = 0; x < core; ++x)
        bt.target.at(int(b), 0, y, x) =
            chip.target[size_t(y + border) * kChipSize + (x + border)];
  }
  return bt;
}

struct TrainResult {
  TrainHistory history;
  int64_t steps = 0;
  int64_t skipped_batches = 0;
  double backward_seconds = 0.0;  // cumulative, for transfer cost reporting
  int64_t gradient_parameters = 0;
};

// Seeded, deterministic: per-epoch Fisher-Yates shuffle over chip indices,
// forward(train) -> masked NLL -> backward -> Adam with the scheduled lr.
// Batches whose core target is entirely invalid are skipped and counted.
inline TrainResult train(ModelState& model, const std::vector<Chip>& chips,
                         const TrainConfig& cfg,
                         const std::vector<Chip>* history_eval = nullptr,
                         const std::function<void(const TrainHistory::Row&)>&
                             on_epoch = nullptr) {
  cfg.validate();
  if (chips.empty()) throw error("empty", "no training chips");
  if (cfg.transfer_mode == "frozen_head")
    freeze_feature_extractor(model);
  else if (cfg.transfer_mode == "full")
    unfreeze_all(model);

  Network net(model);
  Adam opt({cfg.initial_lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_epsilon});
  RngStream shuffle_rng(cfg.seed, 0x5348'5546ULL);
  RngStream dropout_rng(cfg.seed, 0x44524fULL);
  TrainResult res;
  res.gradient_parameters = count_parameters(model, /*trainable_only=*/true);

  std::vector<size_t> ids(chips.size());
  for (size_t i = 0; i < ids.size(); ++i) ids[i] = i;
  const int border = model.spec.border_margin;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = lr_at(cfg, epoch);
    opt.set_lr(lr);
    for (size_t i = ids.size(); i > 1; --i)
      std::swap(ids[i - 1], ids[shuffle_rng.next_u64() % i]);

    double loss_sum = 0.0;
    int64_t n_batches = 0, skipped = 0;
    for (size_t first = 0; first < ids.size(); first += size_t(cfg.batch_size)) {
      const size_t count = std::min(size_t(cfg.batch_size), ids.size() - first);
      BatchTensors bt = assemble_batch(chips, ids, first, count, border);
      bool any_valid = false;
      for (float v : bt.target.data)
        if (target_valid(v)) {
          any_valid = true;
          break;
        }
      if (!any_valid) {
        ++skipped;
        continue;
      }
      model.zero_grads();
      Tensor pred = net.forward(bt.input, Mode::Train, &dropout_rng, /*record=*/true);
      Tensor grad;
      const double loss = masked_loss(pred, bt.target, &grad);
      if (!std::isfinite(loss))
        throw error("divergence", "non-finite loss at epoch " + std::to_string(epoch) +
                                      ", batch " + std::to_string(n_batches));
      const auto t0 = std::chrono::steady_clock::now();
      net.backward(grad);
      res.backward_seconds +=
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      if (cfg.grad_clip > 0.0) {
        double sq = 0.0;
        for (const auto& [_, p] : model.params)
          if (p.trainable)
            for (float g : p.grad.data) sq += double(g) * g;
        const double norm = std::sqrt(sq);
        if (norm > cfg.grad_clip) {
          const float s = float(cfg.grad_clip / norm);
          for (auto& [_, p] : model.params)
            if (p.trainable)
              for (auto& g : p.grad.data) g *= s;
        }
      }
      opt.step(model.params);
      loss_sum += loss;
      ++n_batches;
      ++res.steps;
    }
    res.skipped_batches += skipped;
    double mean_loss = n_batches ? loss_sum / double(n_batches) : kNoData;
    if (history_eval && !history_eval->empty()) {
      // optional fixed-batch eval loss instead of the running train loss
      std::vector<size_t> eids(history_eval->size());
      for (size_t i = 0; i < eids.size(); ++i) eids[i] = i;
      BatchTensors bt = assemble_batch(*history_eval, eids, 0, eids.size(), border);
      Tensor pred = net.forward(bt.input, Mode::Eval);
      mean_loss = masked_loss(pred, bt.target);
    }
    res.history.rows.push_back({epoch, mean_loss, lr, skipped});
    if (on_epoch) on_epoch(res.history.rows.back());
  }
  return res;
}

// Adapt a pre-trained model to a new target chip stream. Returns the adapted
// model plus cost accounting so the frozen/full ratio is measurable.
inline TrainResult transfer_train(ModelState& model, const std::vector<Chip>& chips,
                                  const std::string& mode, TrainConfig cfg,
                                  const std::function<void(const TrainHistory::Row&)>&
                                      on_epoch = nullptr) {
  if (mode != "full" && mode != "frozen_head")
    throw error("config", "transfer mode must be full or frozen_head");
  cfg.transfer_mode = mode;
  return train(model, chips, cfg, nullptr, on_epoch);
}

}  // namespace wsci
