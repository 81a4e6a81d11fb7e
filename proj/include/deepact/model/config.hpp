#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "deepact/core.hpp"

namespace deepact {

// Type embedding rows: 0..14 real types, then EOS, SOS, PAD.
inline constexpr int kTypeEos = kNumActivityTypes;
inline constexpr int kTypeSos = kNumActivityTypes + 1;
inline constexpr int kTypePad = kNumActivityTypes + 2;
inline constexpr int kTypeVocab = kNumActivityTypes + 3;
// Type head predicts the 15 real types plus EOS.
inline constexpr int kTypeClasses = kNumActivityTypes + 1;
// Time embedding rows: slots 1..96 at 0..95, row 96 for SOS/EOS/PAD steps.
inline constexpr int kTimeNone = kSlotsPerDay;
inline constexpr int kTimeVocab = kSlotsPerDay + 1;

struct ModelConfig {
  int d_model = 64;
  int encoder_layers = 2;
  int decoder_layers = 2;
  int heads = 4;
  int ff_width = 128;
  double dropout = 0.1;
  int attr_dim = 0;  // 0 means d_model
  int max_len = kDefaultMaxChainLength;
  // Personal attributes first, then household-shared ones.
  std::vector<int> attribute_cardinalities;
  std::vector<int> attribute_dummies;  // empty means cardinality - 1
  int personal_count = 13;
  std::uint64_t init_seed = 0;

  int attribute_dim() const { return attr_dim > 0 ? attr_dim : d_model; }
  int attribute_count() const { return static_cast<int>(attribute_cardinalities.size()); }
  int dummy_code(int k) const {
    const auto i = static_cast<std::size_t>(k);
    return attribute_dummies.empty() ? attribute_cardinalities[i] - 1 : attribute_dummies[i];
  }
  // Encoder layout: five member blocks each followed by a SEP, then the
  // activity prefix.
  int member_block() const { return attribute_count(); }
  int profile_positions() const { return kMaxHouseholdSize * (member_block() + 1); }
  int encoder_positions() const { return profile_positions() + max_len; }
  int decoder_positions() const { return max_len + 1; }

  void validate() const {
    if (d_model <= 0 || heads <= 0 || d_model % heads != 0)
      throw std::invalid_argument("d_model must be a positive multiple of heads");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw std::invalid_argument("dropout must be in [0,1)");
    if (encoder_layers < 0 || decoder_layers < 1 || ff_width <= 0 || max_len < 1)
      throw std::invalid_argument("invalid layer sizes");
    if (attribute_cardinalities.empty()) throw std::invalid_argument("model has no attributes");
    for (int c : attribute_cardinalities)
      if (c < 2) throw std::invalid_argument("attribute cardinality < 2");
    if (!attribute_dummies.empty() && attribute_dummies.size() != attribute_cardinalities.size())
      throw std::invalid_argument("attribute_dummies size mismatch");
    if (personal_count < 0 || personal_count > attribute_count())
      throw std::invalid_argument("personal_count out of range");
  }
};

/// Weights of the five loss terms: type CE, start soft, end soft, order,
/// sequential timing.
struct LossWeights {
  std::array<double, 5> w{1.0, 1.0, 1.0, 0.1, 0.1};

  void validate() const {
    bool any = false;
    for (double v : w) {
      if (!(v >= 0.0)) throw std::invalid_argument("loss weights must be non-negative");
      any = any || v > 0.0;
    }
    if (!any) throw std::invalid_argument("loss weights must not all be zero");
  }
};

struct SoftLabelConfig {
  double main_weight = 1.0;
  double side_weight = 0.1;
  int side_steps = 2;
  double epsilon = 1e-8;

  void validate() const {
    if (!(main_weight > side_weight && side_weight >= 0.0))
      throw std::invalid_argument("soft labels need main_weight > side_weight >= 0");
    if (side_steps < 0) throw std::invalid_argument("side_steps must be >= 0");
    if (!(epsilon > 0.0)) throw std::invalid_argument("epsilon must be > 0");
  }
};

struct TrainConfig {
  double learning_rate = 0.005;
  double decay = 0.95;
  int batch_size = 64;
  int epochs = 150;
  int patience = 10;
  std::uint64_t seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  // Gradient chunks per batch are fixed so results do not depend on the
  // number of worker threads.
  int workers = 1;
  int chunks = 8;
  double clip_norm = 1.0;  // 0 disables global-norm clipping

  void validate() const {
    if (!(learning_rate >= 0.0)) throw std::invalid_argument("learning rate must be >= 0");
    if (!(decay > 0.0 && decay <= 1.0)) throw std::invalid_argument("decay must be in (0,1]");
    if (batch_size < 1 || epochs < 0 || patience < 1 || workers < 1 || chunks < 1)
      throw std::invalid_argument("invalid training sizes");
  }
};

}  // namespace deepact
