#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "deepact/core.hpp"

namespace deepact {

enum class LandUse : unsigned { Home = 1, Work = 2, School = 4, Other = 8 };

std::string_view land_use_name(LandUse u);
LandUse land_use_from_name(std::string_view name);
LandUse land_use_for(ActivityType t);

struct Zone {
  ZoneId id = 0;
  double x = 0.0;  // km
  double y = 0.0;
  unsigned uses = 0;  // LandUse bits
  int sub_region = 1;

  bool has(LandUse u) const { return (uses & static_cast<unsigned>(u)) != 0; }
  bool operator==(const Zone&) const = default;
};

double wrap_angle(double a);  // into (-pi, pi]

struct ZoneMap {
  std::vector<Zone> zones;
  Eigen::MatrixXd distance;  // km
  Eigen::MatrixXd bearing;   // radians, east = 0, counter-clockwise
  double diameter = 0.0;     // largest pairwise distance
  std::vector<int> sub_regions;  // sorted ids

  std::size_t index_of(ZoneId id) const;
  std::size_t region_index(int sub_region) const;  // position in sub_regions
  std::vector<std::size_t> with_use(LandUse u) const;

 private:
  friend ZoneMap build_zone_map(std::vector<Zone> zones);
  std::map<ZoneId, std::size_t> index_;
};

class AssignmentError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Throws std::invalid_argument on duplicate ids, empty land use or
/// non-finite coordinates.
ZoneMap build_zone_map(std::vector<Zone> zones);

std::vector<Zone> load_zones_csv(const std::filesystem::path& path);
void save_zones_csv(std::span<const Zone> zones, const std::filesystem::path& path);

/// Piecewise-uniform density over bins.
struct EmpiricalSampler {
  Eigen::VectorXd edges;   // bins + 1 ascending
  Eigen::VectorXd masses;  // sums to 1

  double sample(std::mt19937_64& rng) const;
  /// Cumulative distribution at x.
  double cdf(double x) const;
  bool operator==(const EmpiricalSampler& o) const { return edges == o.edges && masses == o.masses; }
};

EmpiricalSampler histogram_sampler(std::span<const double> values, double lo, double hi, int bins);

enum class SamplerKind { Md = 0, Nmd = 1, Ad = 2 };

/// D_md keyed by home sub-region; D_nmd and D_ad keyed by the previous
/// zone's sub-region. Missing regions fall back to the global histogram.
struct Samplers {
  std::map<int, EmpiricalSampler> md, nmd, ad;
  EmpiricalSampler global_md, global_nmd, global_ad;
  std::vector<std::string> fallbacks;  // "md:3" style notes

  const EmpiricalSampler& get(SamplerKind k, int sub_region) const;
  EmpiricalSampler& mutable_get(SamplerKind k, int sub_region);
  bool operator==(const Samplers& o) const {
    return md == o.md && nmd == o.nmd && ad == o.ad && global_md == o.global_md && global_nmd == o.global_nmd &&
           global_ad == o.global_ad;
  }
};

/// How the angle error is made commensurate with km in the non-mandatory
/// score: arc length at the sampled distance, or the map diameter.
enum class AngleScale { Distance, Diameter };

struct AlaConfig {
  double threshold = 0.10;  // max relative count error
  double margin = 0.05;     // max fraction of sampler mass moved per refinement iteration
  double gain = 3.0;        // bin reweighting per unit of count ratio error
  int max_iterations = 30;
  int k = 5;
  double alpha = 1.0;
  double beta = 1.0;
  AngleScale angle_scale = AngleScale::Distance;
  int distance_bins = 50;
  int angle_bins = 36;
  std::uint64_t seed = 0;
  int workers = 1;

  void validate() const;
};

Samplers fit_distributions(std::span<const Trajectory> reference, const ZoneMap& map, const AlaConfig& config);

/// Returns a zone index into map.zones.
std::size_t assign_mandatory(std::size_t home, LandUse use, const Samplers& s, const ZoneMap& map,
                             const AlaConfig& config, std::mt19937_64& rng);
std::size_t assign_nonmandatory(std::size_t prev, std::size_t anchor, LandUse use, const Samplers& s,
                                const ZoneMap& map, const AlaConfig& config, std::mt19937_64& rng);

/// Zone indices for candidates scored lowest-first; ties by index.
std::vector<std::size_t> best_candidates(const std::vector<double>& score, std::span<const std::size_t> candidates,
                                         int k);

struct Agent {
  std::string id;
  ActivityChain chain;
  ZoneId home = 0;
};

Trajectory assign_agent(const Agent& a, const Samplers& s, const ZoneMap& map, const AlaConfig& config,
                        std::mt19937_64& rng);
/// Agent i uses derive_rng(config.seed, i).
std::vector<Trajectory> assign_population(std::span<const Agent> agents, const Samplers& s, const ZoneMap& map,
                                          const AlaConfig& config);

/// Out-of-home activities per sub-region, in map.sub_regions order.
Eigen::VectorXd activity_counts(std::span<const Trajectory> trajectories, const ZoneMap& map);
double max_relative_error(const Eigen::VectorXd& assigned, const Eigen::VectorXd& target);

struct RefineResult {
  Samplers samplers;            // best so far
  std::vector<double> trace;    // error per evaluated iteration
  std::vector<double> best_trace;
  double best_error = 0.0;
  int iterations = 0;
  bool converged = false;
};

RefineResult refine(std::span<const Agent> agents, const Eigen::VectorXd& target, const Samplers& initial,
                    const ZoneMap& map, const AlaConfig& config);

enum class OdAggregation { Zone, SubRegion };
Eigen::MatrixXd build_od(std::span<const Trajectory> trajectories, const ZoneMap& map, OdAggregation agg);

void save_trajectories_jsonl(std::span<const Trajectory> t, const std::filesystem::path& path);
std::vector<Trajectory> load_trajectories_jsonl(const std::filesystem::path& path);
void save_od_csv(const Eigen::MatrixXd& od, const ZoneMap& map, OdAggregation agg, const std::filesystem::path& path);

// Synthetic city used in place of restricted TAZ data.

struct SyntheticCity {
  ZoneMap map;
  std::vector<double> home_weight;  // per zone
  std::vector<double> attraction;   // per zone, for non-home uses
};

/// 100 zones on a jittered 10x10 grid, 8 sub-regions (a core plus 7 sectors).
SyntheticCity synthetic_city(std::uint64_t seed = 2024);

/// Home zones drawn by home weight, agent i from derive_rng(seed, i).
std::vector<Agent> place_agents(std::span<const ActivityChain> chains, const SyntheticCity& city,
                                std::uint64_t seed);

/// Gravity-model locations: attraction times exp(-distance / scale), with a
/// pull toward the next anchor for non-mandatory stops.
std::vector<Trajectory> gravity_reference(std::span<const Agent> agents, const SyntheticCity& city,
                                          std::uint64_t seed);

}  // namespace deepact
