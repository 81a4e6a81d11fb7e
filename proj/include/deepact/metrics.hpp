#pragma once

#include <Eigen/Dense>

#include <array>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "deepact/core.hpp"
#include "json.hpp"

namespace deepact {

/// Normalized masses over integer-keyed bins (slot, length or type code).
struct Histogram {
  std::string label;
  std::vector<int> keys;  // ascending
  Eigen::VectorXd mass;

  double at(int key) const;
};

/// Normalizes raw counts; zero total gives an all-zero histogram.
Histogram make_histogram(std::string label, std::vector<int> keys, const Eigen::VectorXd& counts);

/// Jensen-Shannon divergence, base 2, on the union support.
double jsd(const Histogram& p, const Histogram& q);

struct ChainHistograms {
  Histogram length, duration, start, end, type;
  std::array<const Histogram*, 5> all() const { return {&length, &duration, &start, &end, &type}; }
};

/// Pooled histograms. Out-of-range values (e.g. reversed activities from a
/// generator) get their own bins rather than being clamped.
ChainHistograms chain_histograms(std::span<const ActivityChain> chains, int max_len = kDefaultMaxChainLength);

inline constexpr int kTransitionStates = kNumActivityTypes + 2;
inline constexpr int kStartState = 0;
inline constexpr int kEndState = kNumActivityTypes + 1;

/// States: 0 = START, 1..15 = activity types, 16 = END.
struct TransitionMatrix {
  Eigen::MatrixXd counts = Eigen::MatrixXd::Zero(kTransitionStates, kTransitionStates);
  Eigen::MatrixXd probs = Eigen::MatrixXd::Zero(kTransitionStates, kTransitionStates);
  std::vector<bool> row_mask = std::vector<bool>(kTransitionStates, false);  // true = unreached
};

TransitionMatrix transition_matrix(std::span<const ActivityChain> chains);

struct Completeness {
  double node = 0.0;
  double edge = 0.0;
};

Completeness completeness(const TransitionMatrix& gen, const TransitionMatrix& truth);
double frobenius(const TransitionMatrix& a, const TransitionMatrix& b);
double frobenius(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);

class UndefinedCosine : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Throws UndefinedCosine when both matrices are all zero; 0 when only one is.
double od_cosine(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);

struct Mape {
  double value = 0.0;
  std::size_t included = 0;
  std::size_t excluded = 0;  // truth entries equal to zero
  bool operator==(const Mape&) const = default;
};

Mape count_mape(const Eigen::VectorXd& pred, const Eigen::VectorXd& truth);

struct OdPair {
  Eigen::MatrixXd generated;
  Eigen::MatrixXd truth;
};

struct MetricsReport {
  std::array<double, 5> jsd{};  // length, duration, start, end, type
  double node_completeness = 0.0;
  double edge_completeness = 0.0;
  double frobenius = 0.0;
  std::optional<double> od_cosine;
  std::optional<Mape> od_mape;

  static constexpr std::array<const char*, 5> kJsdNames{"length", "duration", "start", "end", "type"};
  bool operator==(const MetricsReport&) const = default;
};

MetricsReport report(std::span<const ActivityChain> generated, std::span<const ActivityChain> truth,
                     const std::optional<OdPair>& od = std::nullopt, int max_len = kDefaultMaxChainLength);

nlohmann::json to_json(const MetricsReport& r);
MetricsReport report_from_json(const nlohmann::json& j);
std::string csv_header(const MetricsReport& r);
std::string csv_row(const MetricsReport& r);

void save_report(const MetricsReport& r, const std::filesystem::path& json_path);
void save_histogram_csv(const Histogram& h, const std::filesystem::path& path);

}  // namespace deepact
