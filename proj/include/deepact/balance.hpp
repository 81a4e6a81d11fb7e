#pragma once

#include <Eigen/Dense>

#include <array>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "deepact/core.hpp"
#include "json.hpp"

namespace deepact {

enum class BalanceFeature : int { ModeType = 0, ModeDurationBin = 1, Length = 2 };
inline constexpr std::array<BalanceFeature, 3> kBalanceFeatures{
    BalanceFeature::ModeType, BalanceFeature::ModeDurationBin, BalanceFeature::Length};

std::string_view feature_name(BalanceFeature f);
int feature_class(const ModeFeatures& m, BalanceFeature f);

/// Class shares for one feature; classes ascend.
struct Distribution {
  BalanceFeature feature = BalanceFeature::ModeType;
  std::vector<int> classes;
  Eigen::VectorXd shares;

  double share(int cls) const;
  double linf(const Distribution& other) const;  // over the union of classes
};

struct BalanceConfig {
  double step_size = 0.1;
  double threshold = 0.05;
  int max_outer_iterations = 50;
  int max_sweeps = 100;
  double rake_tol = 1e-6;
  std::size_t resample_size = 0;  // 0 = same as input

  /// Throws std::invalid_argument on bad values.
  void validate() const;
};

std::vector<ModeFeatures> features_of(std::span<const ActivityChain> chains);

/// Unweighted when `weights` is empty.
Distribution compute_distribution(std::span<const ModeFeatures> samples, BalanceFeature f,
                                  const Eigen::VectorXd& weights = {});

/// Uniform over the classes realized in `d` (zero-share classes dropped).
Distribution uniform_over_realized(const Distribution& d);

Distribution relax_target(const Distribution& target, const Distribution& ideal, double step_size);

class InfeasibleTarget : public std::runtime_error {
 public:
  InfeasibleTarget(BalanceFeature f, int cls);
  BalanceFeature feature;
  int cls;
};

struct RakeResult {
  Eigen::VectorXd weights;  // mean 1
  bool converged = false;
  int sweeps = 0;
  std::vector<double> error_trace;  // max marginal error after each sweep
};

RakeResult rake(std::span<const ModeFeatures> samples, std::span<const Distribution> targets, int max_sweeps,
                double tol);

struct BalanceIteration {
  int iteration = 0;
  std::array<double, 3> linf{};  // target vs ideal per feature
  bool converged = false;
};

struct BalanceResult {
  Eigen::VectorXd weights;
  std::vector<Distribution> targets;  // targets behind `weights`
  std::vector<BalanceIteration> log;
};

BalanceResult balance(std::span<const ModeFeatures> samples, const BalanceConfig& config);

/// n indices drawn with replacement, probability proportional to weight.
std::vector<std::size_t> resample(const Eigen::VectorXd& weights, std::size_t n, std::uint64_t seed);

template <typename T>
std::vector<T> resample(std::span<const T> samples, const Eigen::VectorXd& weights, std::size_t n,
                        std::uint64_t seed) {
  if (static_cast<Eigen::Index>(samples.size()) != weights.size()) {
    throw std::invalid_argument("resample: weights do not match samples");
  }
  std::vector<T> out;
  out.reserve(n);
  for (std::size_t i : resample(weights, n, seed)) out.push_back(samples[i]);
  return out;
}

void save_weights_csv(const Eigen::VectorXd& weights, std::span<const std::string> ids,
                      const std::filesystem::path& path);
void save_balance_log(const std::vector<BalanceIteration>& log, const std::filesystem::path& path);
nlohmann::json to_json(const BalanceIteration& it);

}  // namespace deepact
