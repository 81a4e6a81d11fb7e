#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "deepact/model/transformer.hpp"

namespace deepact {

class TrainingDiverged : public std::runtime_error {
 public:
  explicit TrainingDiverged(int epoch)
      : std::runtime_error("training diverged (non-finite loss) at epoch " + std::to_string(epoch)),
        epoch_(epoch) {}
  int epoch() const { return epoch_; }

 private:
  int epoch_;
};

class SchemaMismatch : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct EpochLog {
  int epoch = 0;
  double lr = 0.0;
  std::array<double, 5> train_terms{};
  double train_loss = 0.0;
  double val_loss = 0.0;
  bool improved = false;
  int stale_epochs = 0;
  bool stopped = false;
};

template <typename Scalar>
struct TrainResult {
  ModelParams<Scalar> params;  // best validation checkpoint
  std::vector<EpochLog> log;
  int best_epoch = 0;
};

struct TrainHooks {
  // Frozen groups receive no update (and keep their moment estimates).
  std::function<bool(const std::string& group, int epoch)> frozen;
  std::function<void(const EpochLog&)> on_epoch;
};

/// Adam with bias correction over a ModelParams-shaped state.
template <typename Scalar>
struct Adam {
  ModelParams<Scalar> m, v;
  long step = 0;

  explicit Adam(const ModelParams<Scalar>& like) : m(zeros_like(like)), v(zeros_like(like)) {}

  void update(ModelParams<Scalar>& p, const ModelParams<Scalar>& g, double lr, const TrainConfig& c,
              const std::vector<bool>& frozen_tensor) {
    ++step;
    const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(step));
    const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(step));
    auto pt = tensors(p);
    auto mt = tensors(m);
    auto vt = tensors(v);
    std::vector<const Mat<Scalar>*> gt;
    for_each_tensor(g, [&](const auto&, const auto&, const Mat<Scalar>& x) { gt.push_back(&x); });
    const auto b1 = static_cast<Scalar>(c.beta1), b2 = static_cast<Scalar>(c.beta2);
    const auto step_size = static_cast<Scalar>(lr / bc1);
    const auto inv_bc2 = static_cast<Scalar>(1.0 / bc2);
    const auto eps = static_cast<Scalar>(c.adam_epsilon);
    for (std::size_t i = 0; i < pt.size(); ++i) {
      if (frozen_tensor[i]) continue;
      auto& mi = *mt[i].value;
      auto& vi = *vt[i].value;
      const auto& gi = *gt[i];
      mi = b1 * mi + (Scalar(1) - b1) * gi;
      vi.array() = b2 * vi.array() + (Scalar(1) - b2) * gi.array().square();
      pt[i].value->array() -= step_size * mi.array() / ((vi.array() * inv_bc2).sqrt() + eps);
    }
  }
};

/// Mean pooled loss over a dataset with dropout off.
template <typename Scalar>
double evaluate_loss(const ModelParams<Scalar>& p, const std::vector<ModelInput>& data, const LossWeights& w,
                     const SoftLabelConfig& soft, LossTerms* terms = nullptr, int workers = 1) {
  if (data.empty()) return 0.0;
  return static_cast<double>(batch_loss<Scalar>(p, std::span<const ModelInput>(data), w, soft, nullptr, nullptr,
                                                std::max(1, workers), workers, terms));
}

template <typename Scalar>
double global_norm(const ModelParams<Scalar>& g, const std::vector<bool>& frozen_tensor) {
  double s = 0.0;
  std::size_t i = 0;
  for_each_tensor(g, [&](const auto&, const auto&, const Mat<Scalar>& m) {
    if (!frozen_tensor[i++]) s += static_cast<double>(m.squaredNorm());
  });
  return std::sqrt(s);
}

/// Mini-batch training with per-epoch lr decay and early stopping on the
/// validation loss. Returns the best-validation parameters.
template <typename Scalar>
TrainResult<Scalar> train(ModelParams<Scalar> params, const std::vector<ModelInput>& train_set,
                          const std::vector<ModelInput>& val_set, const TrainConfig& cfg, const LossWeights& w,
                          const SoftLabelConfig& soft, const TrainHooks& hooks = {}) {
  cfg.validate();
  w.validate();
  soft.validate();
  if (train_set.empty() || val_set.empty()) throw std::invalid_argument("train and validation sets must be non-empty");

  TrainResult<Scalar> result;
  result.params = params;
  Adam<Scalar> opt(params);
  std::vector<std::string> groups;
  for_each_tensor(params, [&](const auto&, const std::string& g, const Mat<Scalar>&) { groups.push_back(g); });

  double best = std::numeric_limits<double>::infinity();
  int stale = 0;
  std::vector<std::size_t> order(train_set.size());
  std::vector<ModelInput> batch;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    EpochLog log;
    log.epoch = epoch;
    log.lr = cfg.learning_rate * std::pow(cfg.decay, epoch - 1);
    std::vector<bool> frozen(groups.size(), false);
    if (hooks.frozen) {
      for (std::size_t i = 0; i < groups.size(); ++i) frozen[i] = hooks.frozen(groups[i], epoch);
    }

    std::iota(order.begin(), order.end(), std::size_t{0});
    auto rng = derive_rng(cfg.seed, 0x5eed0000ULL + static_cast<std::uint64_t>(epoch));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[uniform_index(i, rng)]);

    double loss_sum = 0.0;
    LossTerms terms;
    std::size_t batches = 0;
    for (std::size_t lo = 0; lo < order.size(); lo += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t hi = std::min(order.size(), lo + static_cast<std::size_t>(cfg.batch_size));
      batch.clear();
      for (std::size_t i = lo; i < hi; ++i) batch.push_back(train_set[order[i]]);
      ModelParams<Scalar> grad = zeros_like(params);
      const std::uint64_t dropout_seed = splitmix64(cfg.seed ^ (static_cast<std::uint64_t>(epoch) << 32) ^ batches);
      LossTerms bt;
      double loss;
      try {
        loss = static_cast<double>(batch_loss<Scalar>(params, std::span<const ModelInput>(batch), w, soft, &grad,
                                                      &dropout_seed, cfg.chunks, cfg.workers, &bt));
      } catch (const NonFiniteGradient&) {
        throw TrainingDiverged(epoch);
      }
      if (!std::isfinite(loss)) throw TrainingDiverged(epoch);
      if (cfg.clip_norm > 0.0) {
        const double norm = global_norm(grad, frozen);
        if (norm > cfg.clip_norm) {
          const auto s = static_cast<Scalar>(cfg.clip_norm / norm);
          for_each_tensor(grad, [&](const auto&, const auto&, Mat<Scalar>& m) { m *= s; });
        }
      }
      opt.update(params, grad, log.lr, cfg, frozen);
      loss_sum += loss;
      terms += bt;
      ++batches;
    }
    log.train_loss = loss_sum / static_cast<double>(std::max<std::size_t>(batches, 1));
    for (std::size_t k = 0; k < 5; ++k) log.train_terms[k] = terms.terms[k] / static_cast<double>(std::max<std::size_t>(batches, 1));
    log.val_loss = evaluate_loss(params, val_set, w, soft, nullptr, cfg.workers);
    if (!std::isfinite(log.train_loss) || !std::isfinite(log.val_loss)) throw TrainingDiverged(epoch);

    if (log.val_loss < best) {
      best = log.val_loss;
      stale = 0;
      log.improved = true;
      result.params = params;
      result.best_epoch = epoch;
    } else {
      ++stale;
    }
    log.stale_epochs = stale;
    log.stopped = stale >= cfg.patience;
    result.log.push_back(log);
    if (hooks.on_epoch) hooks.on_epoch(log);
    if (log.stopped) break;
  }
  return result;
}

// ---------------------------------------------------------------------------
// Regional fine-tuning

struct FineTunePlan {
  bool add_adapter = false;
  // Groups frozen at the start; "*" freezes everything.
  std::vector<std::string> frozen_groups{"encoder", "decoder"};
  // Every frozen group is released after this many epochs.
  int freeze_epochs = 5;
  // (epoch, group): release a group earlier, from that epoch on.
  std::vector<std::pair<int, std::string>> unfreeze_schedule;

  bool frozen(const std::string& group, int epoch) const {
    if (epoch > freeze_epochs) return false;
    bool hit = false;
    for (const auto& g : frozen_groups) hit = hit || group_matches(group, g);
    if (!hit) return false;
    for (const auto& [at, g] : unfreeze_schedule) {
      if (epoch >= at && group_matches(group, g)) return false;
    }
    return true;
  }
};

inline bool schema_compatible(const ModelConfig& c, const DatasetSchema& schema) {
  return c.attribute_cardinalities == schema.cardinalities() &&
         c.personal_count == static_cast<int>(schema.personal_count());
}

/// Adapts a pretrained model to a regional dataset. With add_adapter the
/// attribute tables and input projection are replaced by fresh layers
/// sized for the regional schema; those new layers are never frozen.
template <typename Scalar>
ModelParams<Scalar> prepare_fine_tune(const ModelParams<Scalar>& pretrained, const DatasetSchema& regional,
                                      const FineTunePlan& plan, std::uint64_t seed) {
  const bool compatible = schema_compatible(pretrained.config, regional);
  if (!compatible && !plan.add_adapter) {
    throw SchemaMismatch("regional schema differs from the pretrained model; enable add_adapter");
  }
  ModelParams<Scalar> p = pretrained;
  if (plan.add_adapter) {
    p.config.attribute_cardinalities = regional.cardinalities();
    p.config.attribute_dummies.clear();
    for (const auto* a : regional.ordered()) p.config.attribute_dummies.push_back(a->dummy);
    p.config.personal_count = static_cast<int>(regional.personal_count());
    p.config.validate();
    auto rng = derive_rng(seed, 0xada9);
    init_input_layers(p, rng);
  }
  return p;
}

template <typename Scalar>
TrainResult<Scalar> fine_tune(const ModelParams<Scalar>& pretrained, const DatasetSchema& regional,
                              const std::vector<EncodedSample>& train_set, const std::vector<EncodedSample>& val_set,
                              const FineTunePlan& plan, const TrainConfig& cfg, const LossWeights& w,
                              const SoftLabelConfig& soft, std::function<void(const EpochLog&)> on_epoch = {}) {
  ModelParams<Scalar> p = prepare_fine_tune(pretrained, regional, plan, cfg.seed);
  std::vector<ModelInput> tr, va;
  for (const auto& s : train_set) tr.push_back(make_input(s, p.config));
  for (const auto& s : val_set) va.push_back(make_input(s, p.config));
  TrainHooks hooks;
  hooks.on_epoch = std::move(on_epoch);
  hooks.frozen = [plan](const std::string& group, int epoch) {
    if (plan.add_adapter && (group == "attributes" || group == "input_proj")) return false;
    return plan.frozen(group, epoch);
  };
  return train(std::move(p), tr, va, cfg, w, soft, hooks);
}

}  // namespace deepact
