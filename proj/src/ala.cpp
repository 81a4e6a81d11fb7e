#include "deepact/ala.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numbers>
#include <optional>
#include <set>
#include <sstream>
#include <thread>

#include "deepact/random.hpp"
#include "json.hpp"

namespace deepact {

using nlohmann::json;

std::string_view land_use_name(LandUse u) {
  switch (u) {
    case LandUse::Home: return "home";
    case LandUse::Work: return "work";
    case LandUse::School: return "school";
    case LandUse::Other: return "other";
  }
  return "?";
}

LandUse land_use_from_name(std::string_view name) {
  for (auto u : {LandUse::Home, LandUse::Work, LandUse::School, LandUse::Other}) {
    if (land_use_name(u) == name) return u;
  }
  throw std::invalid_argument("unknown land use: " + std::string(name));
}

LandUse land_use_for(ActivityType t) {
  switch (t) {
    case ActivityType::Home: return LandUse::Home;
    case ActivityType::Work: return LandUse::Work;
    case ActivityType::School: return LandUse::School;
    default: return LandUse::Other;
  }
}

double wrap_angle(double a) {
  constexpr double pi = std::numbers::pi;
  a = std::fmod(a + pi, 2.0 * pi);
  if (a < 0.0) a += 2.0 * pi;
  a -= pi;
  return a == -pi ? pi : a;
}

std::size_t ZoneMap::index_of(ZoneId id) const {
  const auto it = index_.find(id);
  if (it == index_.end()) throw AssignmentError("unknown zone id " + std::to_string(id));
  return it->second;
}

std::size_t ZoneMap::region_index(int sub_region) const {
  const auto it = std::lower_bound(sub_regions.begin(), sub_regions.end(), sub_region);
  if (it == sub_regions.end() || *it != sub_region) {
    throw std::out_of_range("unknown sub-region " + std::to_string(sub_region));
  }
  return static_cast<std::size_t>(it - sub_regions.begin());
}

std::vector<std::size_t> ZoneMap::with_use(LandUse u) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < zones.size(); ++i) {
    if (zones[i].has(u)) out.push_back(i);
  }
  return out;
}

ZoneMap build_zone_map(std::vector<Zone> zones) {
  ZoneMap m;
  std::set<int> regions;
  for (std::size_t i = 0; i < zones.size(); ++i) {
    const auto& z = zones[i];
    if (!std::isfinite(z.x) || !std::isfinite(z.y)) {
      throw std::invalid_argument("zone " + std::to_string(z.id) + " has non-finite coordinates");
    }
    if (z.uses == 0) throw std::invalid_argument("zone " + std::to_string(z.id) + " has no land use");
    if (!m.index_.emplace(z.id, i).second) throw std::invalid_argument("duplicate zone id " + std::to_string(z.id));
    regions.insert(z.sub_region);
  }
  const auto n = static_cast<Eigen::Index>(zones.size());
  m.distance = Eigen::MatrixXd::Zero(n, n);
  m.bearing = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      if (i == j) continue;
      const double dx = zones[static_cast<std::size_t>(j)].x - zones[static_cast<std::size_t>(i)].x;
      const double dy = zones[static_cast<std::size_t>(j)].y - zones[static_cast<std::size_t>(i)].y;
      m.distance(i, j) = std::hypot(dx, dy);
      m.bearing(i, j) = wrap_angle(std::atan2(dy, dx));
    }
  }
  m.diameter = n ? m.distance.maxCoeff() : 0.0;
  m.sub_regions.assign(regions.begin(), regions.end());
  m.zones = std::move(zones);
  return m;
}

namespace {

std::vector<std::string> split_on(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(s);
  while (std::getline(is, cur, sep)) out.push_back(cur);
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

}  // namespace

std::vector<Zone> load_zones_csv(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  if (!std::getline(f, line)) throw std::runtime_error("empty zone file " + path.string());
  std::vector<Zone> out;
  std::size_t lineno = 1;
  while (std::getline(f, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cols = split_on(line, ',');
    if (cols.size() != 5) {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": expected 5 columns");
    }
    try {
      Zone z;
      z.id = std::stoll(cols[0]);
      z.x = std::stod(cols[1]);
      z.y = std::stod(cols[2]);
      for (const auto& u : split_on(cols[3], '|')) z.uses |= static_cast<unsigned>(land_use_from_name(u));
      z.sub_region = std::stoi(cols[4]);
      out.push_back(z);
    } catch (const std::exception& e) {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

void save_zones_csv(std::span<const Zone> zones, const std::filesystem::path& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << "id,x_km,y_km,land_uses,sub_region\n" << std::setprecision(10);
  for (const auto& z : zones) {
    std::string uses;
    for (auto u : {LandUse::Home, LandUse::Work, LandUse::School, LandUse::Other}) {
      if (!z.has(u)) continue;
      if (!uses.empty()) uses += '|';
      uses += land_use_name(u);
    }
    f << z.id << ',' << z.x << ',' << z.y << ',' << uses << ',' << z.sub_region << '\n';
  }
}

double EmpiricalSampler::sample(std::mt19937_64& rng) const {
  const auto b = static_cast<Eigen::Index>(sample_index(masses, rng));
  return edges(b) + uniform01(rng) * (edges(b + 1) - edges(b));
}

double EmpiricalSampler::cdf(double x) const {
  double acc = 0.0;
  for (Eigen::Index b = 0; b < masses.size(); ++b) {
    if (x >= edges(b + 1)) {
      acc += masses(b);
    } else {
      if (x > edges(b)) acc += masses(b) * (x - edges(b)) / (edges(b + 1) - edges(b));
      break;
    }
  }
  return acc;
}

EmpiricalSampler histogram_sampler(std::span<const double> values, double lo, double hi, int bins) {
  if (bins < 1 || !(hi > lo)) throw std::invalid_argument("histogram_sampler: bad bin definition");
  EmpiricalSampler s;
  s.edges = Eigen::VectorXd::LinSpaced(bins + 1, lo, hi);
  s.masses = Eigen::VectorXd::Zero(bins);
  for (double v : values) {
    const auto b = std::clamp(static_cast<int>(std::floor((v - lo) / (hi - lo) * bins)), 0, bins - 1);
    s.masses(b) += 1.0;
  }
  if (values.empty()) s.masses.setOnes();
  s.masses /= s.masses.sum();
  return s;
}

const EmpiricalSampler& Samplers::get(SamplerKind k, int sub_region) const {
  const auto& m = k == SamplerKind::Md ? md : k == SamplerKind::Nmd ? nmd : ad;
  const auto it = m.find(sub_region);
  if (it != m.end()) return it->second;
  return k == SamplerKind::Md ? global_md : k == SamplerKind::Nmd ? global_nmd : global_ad;
}

EmpiricalSampler& Samplers::mutable_get(SamplerKind k, int sub_region) {
  auto& m = k == SamplerKind::Md ? md : k == SamplerKind::Nmd ? nmd : ad;
  auto it = m.find(sub_region);
  if (it == m.end()) it = m.emplace(sub_region, get(k, sub_region)).first;
  return it->second;
}

void AlaConfig::validate() const {
  if (!(threshold > 0.0)) throw std::invalid_argument("ala: threshold must be positive");
  if (k < 1) throw std::invalid_argument("ala: k must be >= 1");
  if (max_iterations < 0) throw std::invalid_argument("ala: max_iterations must be >= 0");
  if (!(margin >= 0.0)) throw std::invalid_argument("ala: margin must be non-negative");
  if (distance_bins < 1 || angle_bins < 1) throw std::invalid_argument("ala: bins must be >= 1");
}

namespace {

bool is_anchor(ActivityType t) { return t == ActivityType::Home || is_mandatory(t); }

// Zone of the next anchor after position i, or home when none remains.
std::size_t next_anchor(const ActivityChain& c, const std::vector<std::size_t>& zones, std::size_t i,
                        std::size_t home) {
  for (std::size_t j = i + 1; j < c.size(); ++j) {
    if (is_anchor(c[j].kind)) return zones[j];
  }
  return home;
}

std::size_t home_of(const Trajectory& t, const ZoneMap& map) {
  for (std::size_t i = 0; i < t.chain.size(); ++i) {
    if (t.chain[i].kind == ActivityType::Home) return map.index_of(t.zones[i]);
  }
  return map.index_of(t.zones.front());
}

}  // namespace

Samplers fit_distributions(std::span<const Trajectory> reference, const ZoneMap& map, const AlaConfig& config) {
  config.validate();
  std::map<int, std::vector<double>> md, nmd, ad;
  std::vector<double> all_md, all_nmd, all_ad;
  for (const auto& t : reference) {
    if (t.zones.size() != t.chain.size()) throw AssignmentError("trajectory " + t.agent_id + " has no zones");
    if (t.chain.empty()) continue;
    std::vector<std::size_t> z;
    for (auto id : t.zones) z.push_back(map.index_of(id));
    const std::size_t home = home_of(t, map);
    const int home_region = map.zones[home].sub_region;
    bool seen_work = false, seen_school = false;
    for (std::size_t i = 0; i < t.chain.size(); ++i) {
      const auto kind = t.chain[i].kind;
      if (is_mandatory(kind)) {
        bool& seen = kind == ActivityType::Work ? seen_work : seen_school;
        if (seen) continue;
        seen = true;
        const double d = map.distance(static_cast<Eigen::Index>(home), static_cast<Eigen::Index>(z[i]));
        md[home_region].push_back(d);
        all_md.push_back(d);
      } else if (kind != ActivityType::Home) {
        const std::size_t prev = i ? z[i - 1] : home;
        const std::size_t anchor = next_anchor(t.chain, z, i, home);
        const auto p = static_cast<Eigen::Index>(prev);
        const auto c = static_cast<Eigen::Index>(z[i]);
        const int region = map.zones[prev].sub_region;
        nmd[region].push_back(map.distance(p, c));
        all_nmd.push_back(map.distance(p, c));
        if (prev != z[i]) {  // staying put has no direction
          const double dev = wrap_angle(map.bearing(p, c) - map.bearing(p, static_cast<Eigen::Index>(anchor)));
          ad[region].push_back(dev);
          all_ad.push_back(dev);
        }
      }
    }
  }
  constexpr double pi = std::numbers::pi;
  const double diam = map.diameter > 0.0 ? map.diameter : 1.0;
  Samplers s;
  s.global_md = histogram_sampler(all_md, 0.0, diam, config.distance_bins);
  s.global_nmd = histogram_sampler(all_nmd, 0.0, diam, config.distance_bins);
  s.global_ad = histogram_sampler(all_ad, -pi, pi, config.angle_bins);
  for (int r : map.sub_regions) {
    if (md.count(r)) s.md[r] = histogram_sampler(md[r], 0.0, diam, config.distance_bins);
    else s.fallbacks.push_back("md:" + std::to_string(r));
    if (nmd.count(r)) s.nmd[r] = histogram_sampler(nmd[r], 0.0, diam, config.distance_bins);
    else s.fallbacks.push_back("nmd:" + std::to_string(r));
    if (ad.count(r)) s.ad[r] = histogram_sampler(ad[r], -pi, pi, config.angle_bins);
    else s.fallbacks.push_back("ad:" + std::to_string(r));
  }
  return s;
}

std::vector<std::size_t> best_candidates(const std::vector<double>& score, std::span<const std::size_t> candidates,
                                         int k) {
  std::vector<std::size_t> order(candidates.begin(), candidates.end());
  const auto take = std::min<std::size_t>(static_cast<std::size_t>(k), order.size());
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(take), order.end(),
                    [&](std::size_t a, std::size_t b) { return score[a] < score[b] || (score[a] == score[b] && a < b); });
  order.resize(take);
  return order;
}

namespace {

std::size_t pick(const std::vector<double>& score, const std::vector<std::size_t>& candidates, int k,
                 std::mt19937_64& rng) {
  const auto best = best_candidates(score, candidates, k);
  return best[uniform_index(best.size(), rng)];
}

}  // namespace

std::size_t assign_mandatory(std::size_t home, LandUse use, const Samplers& s, const ZoneMap& map,
                             const AlaConfig& config, std::mt19937_64& rng) {
  const auto candidates = map.with_use(use);
  if (candidates.empty()) throw AssignmentError("no zone with land use " + std::string(land_use_name(use)));
  const double dist = s.get(SamplerKind::Md, map.zones[home].sub_region).sample(rng);
  std::vector<double> score(map.zones.size(), 0.0);
  for (std::size_t z : candidates) {
    score[z] = std::abs(map.distance(static_cast<Eigen::Index>(home), static_cast<Eigen::Index>(z)) - dist);
  }
  return pick(score, candidates, config.k, rng);
}

std::size_t assign_nonmandatory(std::size_t prev, std::size_t anchor, LandUse use, const Samplers& s,
                                const ZoneMap& map, const AlaConfig& config, std::mt19937_64& rng) {
  const auto candidates = map.with_use(use);
  if (candidates.empty()) throw AssignmentError("no zone with land use " + std::string(land_use_name(use)));
  const int region = map.zones[prev].sub_region;
  const double dist = s.get(SamplerKind::Nmd, region).sample(rng);
  const double dev = s.get(SamplerKind::Ad, region).sample(rng);
  const auto p = static_cast<Eigen::Index>(prev);
  const double heading = map.bearing(p, static_cast<Eigen::Index>(anchor)) + dev;
  std::vector<double> score(map.zones.size(), 0.0);
  for (std::size_t z : candidates) {
    const auto c = static_cast<Eigen::Index>(z);
    score[z] = config.alpha * std::abs(map.distance(p, c) - dist) +
               config.beta * (config.angle_scale == AngleScale::Distance ? dist : map.diameter) * std::abs(wrap_angle(map.bearing(p, c) - heading));
  }
  return pick(score, candidates, config.k, rng);
}

Trajectory assign_agent(const Agent& a, const Samplers& s, const ZoneMap& map, const AlaConfig& config,
                        std::mt19937_64& rng) {
  const std::size_t home = map.index_of(a.home);
  const auto& c = a.chain;
  std::vector<std::size_t> z(c.size(), home);
  std::optional<std::size_t> work, school;
  for (std::size_t i = 0; i < c.size(); ++i) {
    const auto kind = c[i].kind;
    if (!is_mandatory(kind)) continue;
    auto& slot = kind == ActivityType::Work ? work : school;
    if (!slot) slot = assign_mandatory(home, land_use_for(kind), s, map, config, rng);
    z[i] = *slot;
  }
  for (std::size_t i = 0; i < c.size(); ++i) {
    if (is_anchor(c[i].kind)) continue;
    const std::size_t prev = i ? z[i - 1] : home;
    z[i] = assign_nonmandatory(prev, next_anchor(c, z, i, home), land_use_for(c[i].kind), s, map, config, rng);
  }
  Trajectory t{a.id, a.chain, {}};
  for (auto i : z) t.zones.push_back(map.zones[i].id);
  return t;
}

namespace {

template <typename F>
void parallel_for(std::size_t n, int workers, F&& body) {
  const auto w = static_cast<std::size_t>(std::max(1, workers));
  if (w == 1 || n < 2) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(w);
  for (std::size_t t = 0; t < w; ++t) {
    pool.emplace_back([&, t] {
      try {
        for (std::size_t i = t; i < n; i += w) body(i);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace

std::vector<Trajectory> assign_population(std::span<const Agent> agents, const Samplers& s, const ZoneMap& map,
                                          const AlaConfig& config) {
  std::vector<Trajectory> out(agents.size());
  parallel_for(agents.size(), config.workers, [&](std::size_t i) {
    auto rng = derive_rng(config.seed, i);
    try {
      out[i] = assign_agent(agents[i], s, map, config, rng);
    } catch (const AssignmentError& e) {
      throw AssignmentError("agent " + agents[i].id + ": " + e.what());
    }
  });
  return out;
}

Eigen::VectorXd activity_counts(std::span<const Trajectory> trajectories, const ZoneMap& map) {
  Eigen::VectorXd counts = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(map.sub_regions.size()));
  for (const auto& t : trajectories) {
    for (std::size_t i = 0; i < t.chain.size(); ++i) {
      if (t.chain[i].kind == ActivityType::Home) continue;
      counts(static_cast<Eigen::Index>(map.region_index(map.zones[map.index_of(t.zones[i])].sub_region))) += 1.0;
    }
  }
  return counts;
}

double max_relative_error(const Eigen::VectorXd& assigned, const Eigen::VectorXd& target) {
  if (assigned.size() != target.size()) throw std::invalid_argument("max_relative_error: size mismatch");
  return ((assigned - target).cwiseAbs().array() / target.array().max(1.0)).maxCoeff();
}

namespace {

// Per origin region and distance bin, the mean count ratio error of the
// destination regions reachable at that distance. Bins gain or lose mass in
// proportion; at most `margin` of the mass moves per call.
void shift_distance_mass(Samplers& s, SamplerKind kind, const Eigen::VectorXd& err, const ZoneMap& map,
                         const AlaConfig& config) {
  const unsigned origin_use = kind == SamplerKind::Md ? static_cast<unsigned>(LandUse::Home) : ~0u;
  const unsigned dest_use = kind == SamplerKind::Md
                                ? static_cast<unsigned>(LandUse::Work) | static_cast<unsigned>(LandUse::School)
                                : static_cast<unsigned>(LandUse::Other);
  for (int r : map.sub_regions) {
    auto& smp = s.mutable_get(kind, r);
    const auto bins = smp.masses.size();
    const double lo = smp.edges(0), hi = smp.edges(bins);
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(bins), cnt = Eigen::VectorXd::Zero(bins);
    for (std::size_t o = 0; o < map.zones.size(); ++o) {
      if (map.zones[o].sub_region != r || !(map.zones[o].uses & origin_use)) continue;
      for (std::size_t d = 0; d < map.zones.size(); ++d) {
        if (!(map.zones[d].uses & dest_use)) continue;
        const double dist = map.distance(static_cast<Eigen::Index>(o), static_cast<Eigen::Index>(d));
        const auto b = std::clamp<Eigen::Index>(static_cast<Eigen::Index>(std::floor((dist - lo) / (hi - lo) * bins)), 0,
                                                bins - 1);
        sum(b) += err(static_cast<Eigen::Index>(map.region_index(map.zones[d].sub_region)));
        cnt(b) += 1.0;
      }
    }
    Eigen::VectorXd next = smp.masses;
    for (Eigen::Index b = 0; b < bins; ++b) {
      if (cnt(b) > 0.0) next(b) *= std::clamp(1.0 + config.gain * sum(b) / cnt(b), 0.25, 4.0);
    }
    if (next.sum() > 0.0) next /= next.sum();
    const double moved = 0.5 * (next - smp.masses).cwiseAbs().sum();
    if (moved > config.margin) next = smp.masses + (next - smp.masses) * (config.margin / moved);
    smp.masses = next;
  }
}

}  // namespace

RefineResult refine(std::span<const Agent> agents, const Eigen::VectorXd& target, const Samplers& initial,
                    const ZoneMap& map, const AlaConfig& config) {
  config.validate();
  if (target.size() != static_cast<Eigen::Index>(map.sub_regions.size())) {
    throw std::invalid_argument("refine: one target per sub-region required");
  }
  RefineResult r;
  r.samplers = initial;
  r.best_error = std::numeric_limits<double>::infinity();
  Samplers current = initial;
  for (int it = 1; it <= config.max_iterations; ++it) {
    const auto traj = assign_population(agents, current, map, config);
    const auto counts = activity_counts(traj, map);
    const double err = max_relative_error(counts, target);
    r.iterations = it;
    r.trace.push_back(err);
    if (err < r.best_error) {
      r.best_error = err;
      r.samplers = current;
    }
    r.best_trace.push_back(r.best_error);
    if (err < config.threshold) {
      r.converged = true;
      break;
    }
    if (it == config.max_iterations) break;
    const Eigen::VectorXd signed_err = (target - counts).array() / counts.array().max(1.0);
    shift_distance_mass(current, SamplerKind::Md, signed_err, map, config);
    shift_distance_mass(current, SamplerKind::Nmd, signed_err, map, config);
  }
  return r;
}

Eigen::MatrixXd build_od(std::span<const Trajectory> trajectories, const ZoneMap& map, OdAggregation agg) {
  const auto n = static_cast<Eigen::Index>(agg == OdAggregation::Zone ? map.zones.size() : map.sub_regions.size());
  Eigen::MatrixXd od = Eigen::MatrixXd::Zero(n, n);
  auto key = [&](ZoneId id) {
    const auto z = map.index_of(id);
    return static_cast<Eigen::Index>(agg == OdAggregation::Zone ? z : map.region_index(map.zones[z].sub_region));
  };
  for (const auto& t : trajectories) {
    for (std::size_t i = 1; i < t.zones.size(); ++i) od(key(t.zones[i - 1]), key(t.zones[i])) += 1.0;
  }
  return od;
}

void save_trajectories_jsonl(std::span<const Trajectory> ts, const std::filesystem::path& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  for (const auto& t : ts) {
    json chain = json::array();
    for (const auto& a : t.chain) chain.push_back({code(a.kind), a.start, a.end});
    f << json{{"agent_id", t.agent_id}, {"chain", chain}, {"zones", t.zones}}.dump() << '\n';
  }
}

std::vector<Trajectory> load_trajectories_jsonl(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path.string());
  std::vector<Trajectory> out;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    const auto j = json::parse(line);
    std::vector<Activity> acts;
    for (const auto& a : j.at("chain")) {
      const auto kind = activity_from_code(a.at(0).get<int>());
      if (!kind) throw std::runtime_error("bad activity code in " + path.string());
      acts.push_back({*kind, a.at(1).get<int>(), a.at(2).get<int>()});
    }
    out.push_back({j.at("agent_id").get<std::string>(), ActivityChain(std::move(acts)),
                   j.at("zones").get<std::vector<ZoneId>>()});
  }
  return out;
}

void save_od_csv(const Eigen::MatrixXd& od, const ZoneMap& map, OdAggregation agg, const std::filesystem::path& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  std::vector<std::string> ids;
  if (agg == OdAggregation::Zone) {
    for (const auto& z : map.zones) ids.push_back(std::to_string(z.id));
  } else {
    for (int r : map.sub_regions) ids.push_back(std::to_string(r));
  }
  f << "origin";
  for (const auto& id : ids) f << ',' << id;
  f << '\n';
  for (Eigen::Index i = 0; i < od.rows(); ++i) {
    f << ids[static_cast<std::size_t>(i)];
    for (Eigen::Index j = 0; j < od.cols(); ++j) f << ',' << od(i, j);
    f << '\n';
  }
}

SyntheticCity synthetic_city(std::uint64_t seed) {
  constexpr double pi = std::numbers::pi;
  constexpr int side = 10;
  constexpr double spacing = 2.0;
  const double centre = spacing * (side - 1) / 2.0;
  auto rng = derive_rng(seed, 0xc17e);
  std::vector<Zone> zones;
  std::vector<double> home_weight, attraction;
  for (int gy = 0; gy < side; ++gy) {
    for (int gx = 0; gx < side; ++gx) {
      Zone z;
      z.id = 101 + gy * side + gx;
      z.x = gx * spacing + (uniform01(rng) - 0.5) * 0.8;
      z.y = gy * spacing + (uniform01(rng) - 0.5) * 0.8;
      const double dx = z.x - centre, dy = z.y - centre;
      const double r = std::hypot(dx, dy);
      const bool core = r < 5.0;
      z.sub_region = core ? 1 : 2 + std::min(6, static_cast<int>((std::atan2(dy, dx) + pi) / (2.0 * pi) * 7.0));
      z.uses = static_cast<unsigned>(LandUse::Other);
      if (!core || uniform01(rng) < 0.5) z.uses |= static_cast<unsigned>(LandUse::Home);
      if (core || uniform01(rng) < 0.3) z.uses |= static_cast<unsigned>(LandUse::Work);
      if (uniform01(rng) < 0.2) z.uses |= static_cast<unsigned>(LandUse::School);
      zones.push_back(z);
      home_weight.push_back(z.has(LandUse::Home) ? 0.5 + uniform01(rng) : 0.0);
      attraction.push_back((core ? 2.0 : 1.0) * (0.5 + uniform01(rng)));
    }
  }
  // every sub-region gets at least one of each use
  for (int region = 1; region <= 8; ++region) {
    for (auto u : {LandUse::Home, LandUse::Work, LandUse::School}) {
      bool found = false;
      std::size_t first = zones.size();
      for (std::size_t i = 0; i < zones.size(); ++i) {
        if (zones[i].sub_region != region) continue;
        if (first == zones.size()) first = i;
        found = found || zones[i].has(u);
      }
      if (!found && first < zones.size()) {
        zones[first].uses |= static_cast<unsigned>(u);
        if (u == LandUse::Home) home_weight[first] = 1.0;
      }
    }
  }
  return {build_zone_map(std::move(zones)), std::move(home_weight), std::move(attraction)};
}

std::vector<Agent> place_agents(std::span<const ActivityChain> chains, const SyntheticCity& city, std::uint64_t seed) {
  std::vector<Agent> out;
  out.reserve(chains.size());
  for (std::size_t i = 0; i < chains.size(); ++i) {
    auto rng = derive_rng(seed, i);
    const auto z = sample_index(city.home_weight, rng);
    out.push_back({"a" + std::to_string(i), chains[i], city.map.zones[z].id});
  }
  return out;
}

std::vector<Trajectory> gravity_reference(std::span<const Agent> agents, const SyntheticCity& city,
                                          std::uint64_t seed) {
  const auto& map = city.map;
  std::vector<double> w(map.zones.size());
  auto choose = [&](LandUse use, std::size_t from, std::size_t toward, double scale, std::mt19937_64& rng) {
    for (std::size_t z = 0; z < map.zones.size(); ++z) {
      const auto zi = static_cast<Eigen::Index>(z);
      w[z] = map.zones[z].has(use) ? city.attraction[z] * std::exp(-map.distance(static_cast<Eigen::Index>(from), zi) / scale -
                                                                    map.distance(zi, static_cast<Eigen::Index>(toward)) / (2.0 * scale))
                                   : 0.0;
    }
    return sample_index(w, rng);
  };
  std::vector<Trajectory> out;
  out.reserve(agents.size());
  for (std::size_t i = 0; i < agents.size(); ++i) {
    auto rng = derive_rng(seed ^ 0x9a7e, i);
    const auto& a = agents[i];
    const std::size_t home = map.index_of(a.home);
    const auto& c = a.chain;
    std::vector<std::size_t> z(c.size(), home);
    std::optional<std::size_t> work, school;
    for (std::size_t k = 0; k < c.size(); ++k) {
      if (!is_mandatory(c[k].kind)) continue;
      auto& slot = c[k].kind == ActivityType::Work ? work : school;
      if (!slot) slot = choose(land_use_for(c[k].kind), home, home, 6.0, rng);
      z[k] = *slot;
    }
    for (std::size_t k = 0; k < c.size(); ++k) {
      if (is_anchor(c[k].kind)) continue;
      const std::size_t prev = k ? z[k - 1] : home;
      z[k] = choose(LandUse::Other, prev, next_anchor(c, z, k, home), 3.0, rng);
    }
    Trajectory t{a.id, c, {}};
    for (auto zi : z) t.zones.push_back(map.zones[zi].id);
    out.push_back(std::move(t));
  }
  return out;
}

}  // namespace deepact
