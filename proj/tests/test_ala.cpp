#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numbers>
#include <random>

#include "deepact/ala.hpp"
#include "deepact/ingest.hpp"
#include "deepact/random.hpp"

using namespace deepact;
using A = ActivityType;

namespace {

constexpr double kPi = std::numbers::pi;
constexpr unsigned kAll = 15;

Zone zone(ZoneId id, double x, double y, unsigned uses = kAll, int region = 1) { return {id, x, y, uses, region}; }
unsigned use(LandUse u) { return static_cast<unsigned>(u); }

EmpiricalSampler point(double v) {
  EmpiricalSampler s;
  s.edges = Eigen::Vector2d(v, v);
  s.masses = Eigen::VectorXd::Ones(1);
  return s;
}

Samplers point_samplers(double md, double nmd, double ad) {
  Samplers s;
  s.global_md = point(md);
  s.global_nmd = point(nmd);
  s.global_ad = point(ad);
  return s;
}

ActivityChain chain(std::initializer_list<A> types) {
  std::vector<Activity> acts;
  int slot = 1;
  for (auto t : types) {
    acts.push_back({t, slot, slot + 3});
    slot += 4;
  }
  return ActivityChain(acts);
}

std::vector<Agent> city_agents(const SyntheticCity& city, std::size_t n, std::uint64_t seed) {
  const auto schema = default_schema();
  const auto pop = synth_population(default_grammar(schema), schema, n, seed);
  std::vector<ActivityChain> chains;
  for (const auto& s : pop) chains.push_back(s.chain);
  return place_agents(chains, city, seed + 1);
}

std::filesystem::path temp_file(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "deepact_test_ala";
  std::filesystem::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST_CASE("zone map geometry") {
  const auto m = build_zone_map({zone(1, 0, 0), zone(2, 3, 4), zone(3, 1, 0), zone(4, 0, 1)});
  CHECK(m.distance(0, 1) == doctest::Approx(5.0));
  CHECK(m.bearing(0, 2) == 0.0);
  CHECK(m.bearing(0, 3) == doctest::Approx(kPi / 2));
  CHECK(m.diameter == doctest::Approx(5.0));
  for (Eigen::Index i = 0; i < 4; ++i) {
    CHECK(m.distance(i, i) == 0.0);
    CHECK(m.bearing(i, i) == 0.0);
    for (Eigen::Index j = 0; j < 4; ++j) {
      CHECK(m.distance(i, j) == m.distance(j, i));
      if (i != j) CHECK(m.bearing(i, j) == doctest::Approx(wrap_angle(m.bearing(j, i) + kPi)));
    }
  }
  const auto single = build_zone_map({zone(9, 2, 2)});
  CHECK(single.distance.size() == 1);
  CHECK(single.distance(0, 0) == 0.0);
  CHECK_THROWS_AS(build_zone_map({zone(1, 0, 0), zone(1, 1, 1)}), std::invalid_argument);
  CHECK_THROWS_AS(build_zone_map({zone(1, 0, 0, 0)}), std::invalid_argument);
}

TEST_CASE("wrap_angle range") {
  CHECK(wrap_angle(kPi) == doctest::Approx(kPi));
  CHECK(wrap_angle(-kPi) == doctest::Approx(kPi));
  CHECK(wrap_angle(3 * kPi / 2) == doctest::Approx(-kPi / 2));
  CHECK(wrap_angle(0.25) == doctest::Approx(0.25));
}

TEST_CASE("zone csv round trip") {
  const std::vector<Zone> zs{zone(5, 1.5, -2.25, use(LandUse::Home) | use(LandUse::Other), 2), zone(7, 0, 3, use(LandUse::Work), 1)};
  const auto path = temp_file("zones.csv");
  save_zones_csv(zs, path);
  CHECK(load_zones_csv(path) == zs);
}

TEST_CASE("fit_distributions degenerate cases") {
  const auto m = build_zone_map({zone(1, 0, 0, use(LandUse::Home), 1), zone(2, 5, 0, use(LandUse::Work) | use(LandUse::Other), 1),
                                 zone(3, 10, 0, use(LandUse::Other), 2)});
  AlaConfig cfg;
  std::vector<Trajectory> ref;
  for (int i = 0; i < 20; ++i) ref.push_back({"a", chain({A::Home, A::Work, A::Home}), {1, 2, 1}});
  // Home -> BuyGoods at 5 km on the way to Work at 10 km: collinear
  ref.push_back({"b", chain({A::Home, A::BuyGoods, A::Work}), {1, 2, 3}});
  const auto s = fit_distributions(ref, m, cfg);
  const auto& md = s.get(SamplerKind::Md, 1);
  const int bin = static_cast<int>(std::floor(5.0 / m.diameter * cfg.distance_bins));
  CHECK(md.masses(std::min(bin, cfg.distance_bins - 1)) == doctest::Approx(1.0 - 1.0 / 21.0));
  const auto& ad = s.get(SamplerKind::Ad, 1);
  CHECK(ad.masses(cfg.angle_bins / 2) == 1.0);  // the bin starting at 0
  CHECK(std::find(s.fallbacks.begin(), s.fallbacks.end(), "md:2") != s.fallbacks.end());
  CHECK(s.get(SamplerKind::Md, 2) == s.global_md);
}

TEST_CASE("fitted commute histogram tracks a lognormal generator") {
  std::vector<Zone> zs{zone(1, 0, 0, use(LandUse::Home), 1)};
  for (int i = 1; i <= 400; ++i) zs.push_back(zone(1 + i, 0.1 * i, 0, use(LandUse::Work), 1));
  const auto m = build_zone_map(zs);
  std::mt19937_64 rng(4);
  const double mu = std::log(8.0), sigma = 0.5;
  std::vector<Trajectory> ref;
  for (int i = 0; i < 10000; ++i) {
    const double d = std::exp(mu + sigma * standard_normal(rng));
    const int k = std::clamp(static_cast<int>(std::lround(d / 0.1)), 1, 400);
    ref.push_back({"r", chain({A::Home, A::Work}), {1, 1 + k}});
  }
  const auto s = fit_distributions(ref, m, AlaConfig{});
  double ks = 0.0;
  for (double x = 0.05; x < 40.0; x += 0.05) {
    const double truth = 0.5 * std::erfc(-(std::log(x) - mu) / (sigma * std::sqrt(2.0)));
    ks = std::max(ks, std::abs(s.get(SamplerKind::Md, 1).cdf(x) - truth));
  }
  CHECK(ks < 0.05);
}

TEST_CASE("assign_mandatory nearest distance and forced choice") {
  std::vector<Zone> line{zone(100, 0, 0, use(LandUse::Home))};
  for (int i = 1; i <= 10; ++i) line.push_back(zone(100 + i, i, 0, use(LandUse::Work)));
  const auto m = build_zone_map(line);
  AlaConfig cfg;
  cfg.k = 1;
  std::mt19937_64 rng(1);
  CHECK(m.zones[assign_mandatory(0, LandUse::Work, point_samplers(4.3, 0, 0), m, cfg, rng)].x == 4.0);

  const auto one = build_zone_map({zone(1, 0, 0, use(LandUse::Home)), zone(2, 30, 0, use(LandUse::Work))});
  cfg.k = 5;
  CHECK(assign_mandatory(0, LandUse::Work, point_samplers(1.0, 0, 0), one, cfg, rng) == 1);
  CHECK_THROWS_AS(assign_mandatory(0, LandUse::School, point_samplers(1.0, 0, 0), one, cfg, rng), AssignmentError);

  auto r1 = derive_rng(5, 0), r2 = derive_rng(5, 0);
  const auto s = point_samplers(6.0, 0, 0);
  CHECK(assign_mandatory(0, LandUse::Work, s, m, cfg, r1) == assign_mandatory(0, LandUse::Work, s, m, cfg, r2));
}

TEST_CASE("assign_nonmandatory follows the sampled heading") {
  const unsigned other = use(LandUse::Other);
  const auto m = build_zone_map({zone(1, 0, 0, use(LandUse::Home)), zone(2, 5, 0, other), zone(3, 0, 5, other),
                                 zone(4, -5, 0, other), zone(5, 0, -5, other), zone(6, 20, 0, use(LandUse::Work))});
  AlaConfig cfg;
  cfg.k = 1;
  for (auto scale : {AngleScale::Distance, AngleScale::Diameter}) {
    cfg.angle_scale = scale;
    std::mt19937_64 rng(2);
    CHECK(m.zones[assign_nonmandatory(0, 5, LandUse::Other, point_samplers(0, 5, 0), m, cfg, rng)].id == 2);
    CHECK(m.zones[assign_nonmandatory(0, 5, LandUse::Other, point_samplers(0, 5, kPi), m, cfg, rng)].id == 4);
  }
  const auto solo = build_zone_map({zone(1, 0, 0, other)});
  std::mt19937_64 rng(3);
  CHECK(assign_nonmandatory(0, 0, LandUse::Other, point_samplers(0, 3, 1), solo, cfg, rng) == 0);
  CHECK_THROWS_AS(assign_nonmandatory(0, 0, LandUse::School, point_samplers(0, 3, 1), solo, cfg, rng), AssignmentError);
}

TEST_CASE("assign_population structure and determinism") {
  const auto city = synthetic_city();
  std::vector<Agent> agents{{"w", chain({A::Home, A::Work, A::BuyGoods, A::Work, A::Home}), 101},
                            {"h", chain({A::Home}), 150},
                            {"hh", chain({A::Home, A::Home}), 122}};
  Samplers s = point_samplers(6.0, 3.0, 0.2);
  AlaConfig cfg;
  cfg.seed = 77;
  const auto t = assign_population(agents, s, city.map, cfg);
  REQUIRE(t.size() == 3);
  CHECK(t[0].zones[0] == 101);
  CHECK(t[0].zones[4] == 101);
  CHECK(t[0].zones[1] == t[0].zones[3]);
  CHECK(city.map.zones[city.map.index_of(t[0].zones[1])].has(LandUse::Work));
  CHECK(t[1].zones == std::vector<ZoneId>{150});
  CHECK(t[2].zones == std::vector<ZoneId>{122, 122});

  const auto many = city_agents(city, 1000, 3);
  const auto a = assign_population(many, s, city.map, cfg);
  cfg.workers = 3;
  const auto b = assign_population(many, s, city.map, cfg);
  CHECK(a == b);
  CHECK(activity_counts(a, city.map) == activity_counts(b, city.map));
  for (std::size_t i = 0; i < a.size(); ++i) {
    REQUIRE(a[i].zones.size() == many[i].chain.size());
    for (std::size_t k = 0; k < a[i].zones.size(); ++k) {
      if (many[i].chain[k].kind == A::Home) CHECK(a[i].zones[k] == many[i].home);
    }
  }
}

TEST_CASE("assign_population names the failing agent") {
  const auto m = build_zone_map({zone(1, 0, 0, use(LandUse::Home))});
  std::vector<Agent> agents{{"agent-7", chain({A::Home, A::Work}), 1}};
  try {
    assign_population(agents, point_samplers(1, 1, 0), m, AlaConfig{});
    FAIL("expected AssignmentError");
  } catch (const AssignmentError& e) {
    CHECK(std::string(e.what()).find("agent-7") != std::string::npos);
  }
}

TEST_CASE("assigned commutes reproduce the mandatory distance sampler") {
  // dense ring of work zones at every 0.25 km
  std::vector<Zone> zs{zone(1, 0, 0, use(LandUse::Home), 1)};
  ZoneId id = 2;
  for (double r = 0.25; r <= 20.0; r += 0.25) {
    for (int k = 0; k < 8; ++k) zs.push_back(zone(id++, r * std::cos(k * kPi / 4), r * std::sin(k * kPi / 4), use(LandUse::Work), 1));
  }
  const auto m = build_zone_map(zs);
  Samplers s = point_samplers(0, 1, 0);
  std::vector<double> draws;
  std::mt19937_64 gen(8);
  for (int i = 0; i < 5000; ++i) draws.push_back(std::exp(std::log(6.0) + 0.4 * standard_normal(gen)));
  s.md[1] = histogram_sampler(draws, 0.0, m.diameter, 50);
  std::vector<Agent> agents;
  for (int i = 0; i < 10000; ++i) agents.push_back({"a" + std::to_string(i), chain({A::Home, A::Work}), 1});
  AlaConfig cfg;
  cfg.seed = 5;
  const auto t = assign_population(agents, s, m, cfg);
  std::vector<double> got;
  for (const auto& tr : t) got.push_back(m.distance(0, static_cast<Eigen::Index>(m.index_of(tr.zones[1]))));
  std::sort(got.begin(), got.end());
  double ks = 0.0;
  for (std::size_t i = 0; i < got.size(); ++i) {
    const double ecdf = static_cast<double>(i + 1) / static_cast<double>(got.size());
    ks = std::max(ks, std::abs(ecdf - s.md[1].cdf(got[i])));
  }
  CHECK(ks < 0.05);
}

TEST_CASE("refine fixed point, cap and uniform targets") {
  const auto city = synthetic_city();
  const auto agents = city_agents(city, 5000, 11);
  const auto reference = gravity_reference(agents, city, 12);
  AlaConfig cfg;
  cfg.seed = 13;
  const auto s = fit_distributions(reference, city.map, cfg);

  const auto own = activity_counts(assign_population(agents, s, city.map, cfg), city.map);
  const auto fixed = refine(agents, own, s, city.map, cfg);
  CHECK(fixed.iterations == 1);
  CHECK(fixed.best_error == 0.0);
  CHECK(fixed.samplers == s);

  AlaConfig capped = cfg;
  capped.max_iterations = 0;
  const auto none = refine(agents, own, s, city.map, capped);
  CHECK(none.iterations == 0);
  CHECK(none.samplers == s);

  Eigen::VectorXd uniform = Eigen::VectorXd::Constant(own.size(), own.sum() / static_cast<double>(own.size()));
  const auto r = refine(agents, uniform, s, city.map, cfg);
  CHECK(r.best_error < 0.10);
  for (std::size_t i = 1; i < r.best_trace.size(); ++i) CHECK(r.best_trace[i] <= r.best_trace[i - 1]);
  const auto check = activity_counts(assign_population(agents, r.samplers, city.map, cfg), city.map);
  CHECK(max_relative_error(check, uniform) == doctest::Approx(r.best_error));
}

TEST_CASE("build_od counting and aggregation") {
  const auto m = build_zone_map({zone(1, 0, 0, kAll, 1), zone(2, 1, 0, kAll, 1), zone(3, 5, 0, kAll, 2)});
  const std::vector<Trajectory> one{{"a", chain({A::Home, A::Work, A::Home}), {1, 2, 1}}};
  const auto od = build_od(one, m, OdAggregation::Zone);
  CHECK(od(0, 1) == 1.0);
  CHECK(od(1, 0) == 1.0);
  CHECK(od.sum() == 2.0);

  const std::vector<Trajectory> stay{{"h", chain({A::Home}), {3}}, {"g", chain({A::Home, A::Home}), {2, 2}}};
  const auto so = build_od(stay, m, OdAggregation::Zone);
  CHECK(so.sum() == so.diagonal().sum());

  const auto city = synthetic_city();
  const auto agents = city_agents(city, 800, 2);
  const auto t = gravity_reference(agents, city, 3);
  const auto z = build_od(t, city.map, OdAggregation::Zone);
  const auto r = build_od(t, city.map, OdAggregation::SubRegion);
  double expected = 0.0;
  for (const auto& tr : t) expected += static_cast<double>(tr.chain.size()) - 1.0;
  CHECK(z.sum() == expected);
  Eigen::MatrixXd folded = Eigen::MatrixXd::Zero(r.rows(), r.cols());
  for (std::size_t i = 0; i < city.map.zones.size(); ++i) {
    for (std::size_t j = 0; j < city.map.zones.size(); ++j) {
      folded(static_cast<Eigen::Index>(city.map.region_index(city.map.zones[i].sub_region)),
             static_cast<Eigen::Index>(city.map.region_index(city.map.zones[j].sub_region))) +=
          z(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    }
  }
  CHECK(folded == r);
}

TEST_CASE("synthetic city shape and trajectory round trip") {
  const auto city = synthetic_city();
  CHECK(city.map.zones.size() == 100);
  CHECK(city.map.sub_regions.size() == 8);
  for (int r : city.map.sub_regions) {
    for (auto u : {LandUse::Home, LandUse::Work, LandUse::School, LandUse::Other}) {
      bool found = false;
      for (const auto& z : city.map.zones) found = found || (z.sub_region == r && z.has(u));
      CHECK(found);
    }
  }
  const auto agents = city_agents(city, 50, 4);
  const auto t = gravity_reference(agents, city, 5);
  const auto path = temp_file("traj.jsonl");
  save_trajectories_jsonl(t, path);
  CHECK(load_trajectories_jsonl(path) == t);
}
