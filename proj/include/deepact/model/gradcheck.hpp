#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "deepact/model/transformer.hpp"

namespace deepact {

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t coordinates = 0;
  std::string worst_tensor;
  std::map<std::string, double> group_max;  // per parameter group
  std::set<std::string> groups_covered;
};

struct GradCheckOptions {
  double eps = 1e-4;
  std::size_t coordinates = 600;
  std::uint64_t seed = 0;
  // Only tensors whose group matches one of these are probed (empty = all).
  std::vector<std::string> groups;
};

inline double relative_error(double a, double n) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-8});
}

/// Compares backward() with central differences on a seeded subsample of
/// coordinates. Every probed tensor gets at least one coordinate;
/// coordinates with a non-zero analytic gradient are preferred so unused
/// embedding rows do not pad the sample.
inline GradCheckReport grad_check(ModelParams<double> p, std::span<const ModelInput> batch, const LossWeights& w,
                                  const SoftLabelConfig& soft, const GradCheckOptions& opt = {}) {
  ModelParams<double> grad = zeros_like(p);
  batch_loss<double>(p, batch, w, soft, &grad, nullptr);

  auto pt = tensors(p);
  auto gt = tensors(grad);
  std::vector<std::size_t> probe;
  std::size_t total = 0;
  for (std::size_t i = 0; i < pt.size(); ++i) {
    bool use = opt.groups.empty();
    for (const auto& g : opt.groups) use = use || group_matches(pt[i].group, g);
    if (use) {
      probe.push_back(i);
      total += static_cast<std::size_t>(pt[i].value->size());
    }
  }
  GradCheckReport rep;
  auto rng = derive_rng(opt.seed, 0x6c);
  auto loss_at = [&] { return static_cast<double>(batch_loss<double>(p, batch, w, soft, nullptr, nullptr)); };
  for (std::size_t i : probe) {
    auto& value = *pt[i].value;
    const auto& g = *gt[i].value;
    const auto size = static_cast<std::size_t>(value.size());
    const std::size_t share = std::max<std::size_t>(
        1, (opt.coordinates * size + total - 1) / std::max<std::size_t>(total, 1));
    std::vector<std::size_t> live;
    for (std::size_t j = 0; j < size; ++j)
      if (g.data()[j] != 0.0) live.push_back(j);
    const auto& pool = live;
    for (std::size_t s = 0; s < share; ++s) {
      const std::size_t j = pool.empty() ? uniform_index(size, rng) : pool[uniform_index(pool.size(), rng)];
      const double keep = value.data()[j];
      value.data()[j] = keep + opt.eps;
      const double up = loss_at();
      value.data()[j] = keep - opt.eps;
      const double down = loss_at();
      value.data()[j] = keep;
      const double numeric = (up - down) / (2.0 * opt.eps);
      const double err = relative_error(g.data()[j], numeric);
      ++rep.coordinates;
      rep.groups_covered.insert(pt[i].group);
      auto& gm = rep.group_max[pt[i].group];
      gm = std::max(gm, err);
      if (err > rep.max_rel_error) {
        rep.max_rel_error = err;
        rep.worst_tensor = pt[i].name;
      }
    }
  }
  return rep;
}

/// The small configuration used for gradient checks.
inline ModelConfig tiny_config(std::vector<int> cardinalities, int personal_count, std::uint64_t seed = 1) {
  ModelConfig c;
  c.d_model = 8;
  c.encoder_layers = 1;
  c.decoder_layers = 1;
  c.heads = 2;
  c.ff_width = 16;
  c.dropout = 0.0;
  c.max_len = 8;
  c.attribute_cardinalities = std::move(cardinalities);
  c.personal_count = personal_count;
  c.init_seed = seed;
  return c;
}

}  // namespace deepact
