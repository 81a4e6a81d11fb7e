#include "deepact/balance.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>

#include "deepact/random.hpp"

namespace deepact {

std::string_view feature_name(BalanceFeature f) {
  switch (f) {
    case BalanceFeature::ModeType: return "mode_type";
    case BalanceFeature::ModeDurationBin: return "mode_duration_bin";
    case BalanceFeature::Length: return "length";
  }
  return "?";
}

int feature_class(const ModeFeatures& m, BalanceFeature f) {
  switch (f) {
    case BalanceFeature::ModeType: return code(m.mode_type);
    case BalanceFeature::ModeDurationBin: return m.mode_duration_bin;
    case BalanceFeature::Length: return m.length;
  }
  return 0;
}

double Distribution::share(int cls) const {
  const auto it = std::lower_bound(classes.begin(), classes.end(), cls);
  if (it == classes.end() || *it != cls) return 0.0;
  return shares(it - classes.begin());
}

double Distribution::linf(const Distribution& other) const {
  double m = 0.0;
  for (int c : classes) m = std::max(m, std::abs(share(c) - other.share(c)));
  for (int c : other.classes) m = std::max(m, std::abs(share(c) - other.share(c)));
  return m;
}

void BalanceConfig::validate() const {
  if (!(step_size > 0.0 && step_size <= 1.0)) throw std::invalid_argument("balance: step_size must be in (0, 1]");
  if (!(threshold > 0.0)) throw std::invalid_argument("balance: threshold must be positive");
  if (max_outer_iterations < 1) throw std::invalid_argument("balance: max_outer_iterations must be >= 1");
  if (max_sweeps < 1) throw std::invalid_argument("balance: max_sweeps must be >= 1");
  if (!(rake_tol > 0.0)) throw std::invalid_argument("balance: rake_tol must be positive");
}

std::vector<ModeFeatures> features_of(std::span<const ActivityChain> chains) {
  std::vector<ModeFeatures> out;
  out.reserve(chains.size());
  for (const auto& c : chains) out.push_back(mode_features(c));
  return out;
}

Distribution compute_distribution(std::span<const ModeFeatures> samples, BalanceFeature f,
                                  const Eigen::VectorXd& weights) {
  if (samples.empty()) throw std::invalid_argument("compute_distribution: no samples");
  if (weights.size() != 0 && weights.size() != static_cast<Eigen::Index>(samples.size())) {
    throw std::invalid_argument("compute_distribution: weight count mismatch");
  }
  std::map<int, double> mass;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    mass[feature_class(samples[i], f)] += weights.size() ? weights(static_cast<Eigen::Index>(i)) : 1.0;
  }
  double total = 0.0;
  for (const auto& [c, m] : mass) total += m;
  if (!(total > 0.0)) throw std::invalid_argument("compute_distribution: zero total weight");
  Distribution d;
  d.feature = f;
  d.shares.resize(static_cast<Eigen::Index>(mass.size()));
  Eigen::Index i = 0;
  for (const auto& [c, m] : mass) {
    d.classes.push_back(c);
    d.shares(i++) = m / total;
  }
  return d;
}

Distribution uniform_over_realized(const Distribution& d) {
  Distribution u;
  u.feature = d.feature;
  for (std::size_t i = 0; i < d.classes.size(); ++i) {
    if (d.shares(static_cast<Eigen::Index>(i)) > 0.0) u.classes.push_back(d.classes[i]);
  }
  u.shares = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(u.classes.size()),
                                       1.0 / static_cast<double>(u.classes.size()));
  return u;
}

Distribution relax_target(const Distribution& target, const Distribution& ideal, double step_size) {
  if (target.classes != ideal.classes) throw std::invalid_argument("relax_target: class sets differ");
  Distribution t = target;
  t.shares = (target.shares - (target.shares - ideal.shares) * step_size).cwiseMax(0.0);
  const double sum = t.shares.sum();
  if (!(sum > 0.0)) throw std::invalid_argument("relax_target: target collapsed to zero");
  t.shares /= sum;
  return t;
}

InfeasibleTarget::InfeasibleTarget(BalanceFeature f, int c)
    : std::runtime_error("infeasible raking target: feature " + std::string(feature_name(f)) + " class " +
                         std::to_string(c) + " has target mass but no samples"),
      feature(f),
      cls(c) {}

namespace {

struct FeatureIndex {
  std::vector<int> slot;  // per sample, index into target classes or -1
  Eigen::VectorXd target;
};

double marginal_error(const std::vector<FeatureIndex>& idx, const Eigen::VectorXd& w) {
  const double total = w.sum();
  double err = 0.0;
  for (const auto& f : idx) {
    Eigen::VectorXd cur = Eigen::VectorXd::Zero(f.target.size());
    double outside = 0.0;
    for (std::size_t i = 0; i < f.slot.size(); ++i) {
      if (f.slot[i] >= 0) cur(f.slot[i]) += w(static_cast<Eigen::Index>(i));
      else outside += w(static_cast<Eigen::Index>(i));
    }
    err = std::max(err, (cur / total - f.target).cwiseAbs().maxCoeff());
    err = std::max(err, outside / total);
  }
  return err;
}

}  // namespace

RakeResult rake(std::span<const ModeFeatures> samples, std::span<const Distribution> targets, int max_sweeps,
                double tol) {
  if (samples.empty()) throw std::invalid_argument("rake: no samples");
  const auto n = static_cast<Eigen::Index>(samples.size());
  std::vector<FeatureIndex> idx;
  for (const auto& t : targets) {
    FeatureIndex f;
    f.target = t.shares;
    f.slot.resize(samples.size(), -1);
    std::vector<int> support(t.classes.size(), 0);
    for (std::size_t i = 0; i < samples.size(); ++i) {
      const int c = feature_class(samples[i], t.feature);
      const auto it = std::lower_bound(t.classes.begin(), t.classes.end(), c);
      if (it != t.classes.end() && *it == c) {
        f.slot[i] = static_cast<int>(it - t.classes.begin());
        ++support[static_cast<std::size_t>(f.slot[i])];
      }
    }
    for (std::size_t k = 0; k < t.classes.size(); ++k) {
      if (t.shares(static_cast<Eigen::Index>(k)) > 0.0 && support[k] == 0) throw InfeasibleTarget(t.feature, t.classes[k]);
    }
    idx.push_back(std::move(f));
  }

  RakeResult r;
  Eigen::VectorXd w = Eigen::VectorXd::Ones(n);
  double err = marginal_error(idx, w);
  r.converged = err < tol;
  while (!r.converged && r.sweeps < max_sweeps) {
    for (const auto& f : idx) {
      Eigen::VectorXd cur = Eigen::VectorXd::Zero(f.target.size());
      for (Eigen::Index i = 0; i < n; ++i) {
        if (f.slot[static_cast<std::size_t>(i)] >= 0) cur(f.slot[static_cast<std::size_t>(i)]) += w(i);
      }
      const double total = w.sum();
      for (Eigen::Index i = 0; i < n; ++i) {
        const int s = f.slot[static_cast<std::size_t>(i)];
        if (s < 0) w(i) = 0.0;
        else if (cur(s) > 0.0) w(i) *= f.target(s) * total / cur(s);
      }
    }
    ++r.sweeps;
    const double next = marginal_error(idx, w);
    r.error_trace.push_back(next);
    r.converged = next < tol;
    // stalled; the first sweep is compared with nothing since it can move away from the unweighted start
    if (!r.converged && r.sweeps > 1 && err - next < 1e-9) break;
    err = next;
  }
  const double mean = w.mean();
  r.weights = mean > 0.0 ? Eigen::VectorXd(w / mean) : w;
  return r;
}

BalanceResult balance(std::span<const ModeFeatures> samples, const BalanceConfig& config) {
  config.validate();
  if (samples.empty()) throw std::invalid_argument("balance: no samples");
  std::vector<Distribution> ideal, target;
  for (auto f : kBalanceFeatures) {
    auto d = compute_distribution(samples, f);
    ideal.push_back(uniform_over_realized(d));
    target.push_back(std::move(d));
  }
  BalanceResult out;
  out.weights = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(samples.size()));
  out.targets = target;
  for (int it = 1; it <= config.max_outer_iterations; ++it) {
    for (std::size_t f = 0; f < target.size(); ++f) target[f] = relax_target(target[f], ideal[f], config.step_size);
    const auto r = rake(samples, target, config.max_sweeps, config.rake_tol);
    BalanceIteration row;
    row.iteration = it;
    row.converged = r.converged;
    double worst = 0.0;
    for (std::size_t f = 0; f < target.size(); ++f) {
      row.linf[f] = target[f].linf(ideal[f]);
      worst = std::max(worst, row.linf[f]);
    }
    out.log.push_back(row);
    if (!r.converged) break;
    out.weights = r.weights;
    out.targets = target;
    if (worst < config.threshold) break;
  }
  return out;
}

std::vector<std::size_t> resample(const Eigen::VectorXd& weights, std::size_t n, std::uint64_t seed) {
  if ((weights.array() < 0.0).any() || !weights.allFinite()) {
    throw std::invalid_argument("resample: weights must be finite and non-negative");
  }
  std::vector<double> cum(static_cast<std::size_t>(weights.size()));
  double acc = 0.0;
  for (Eigen::Index i = 0; i < weights.size(); ++i) cum[static_cast<std::size_t>(i)] = acc += weights(i);
  if (!(acc > 0.0)) throw std::invalid_argument("resample: all weights are zero");
  auto rng = derive_rng(seed, 0x7e5a);
  std::vector<std::size_t> out(n);
  for (auto& o : out) {
    const double u = uniform01(rng) * acc;
    auto it = std::upper_bound(cum.begin(), cum.end(), u);
    if (it == cum.end()) --it;
    o = static_cast<std::size_t>(it - cum.begin());
  }
  return out;
}

void save_weights_csv(const Eigen::VectorXd& weights, std::span<const std::string> ids,
                      const std::filesystem::path& path) {
  if (!ids.empty() && static_cast<Eigen::Index>(ids.size()) != weights.size()) {
    throw std::invalid_argument("save_weights_csv: id count mismatch");
  }
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << "sample_id,weight\n" << std::setprecision(17);
  for (Eigen::Index i = 0; i < weights.size(); ++i) {
    if (ids.empty()) f << i;
    else f << ids[static_cast<std::size_t>(i)];
    f << ',' << weights(i) << '\n';
  }
}

nlohmann::json to_json(const BalanceIteration& it) {
  nlohmann::json linf;
  for (std::size_t f = 0; f < kBalanceFeatures.size(); ++f) linf[std::string(feature_name(kBalanceFeatures[f]))] = it.linf[f];
  return {{"iteration", it.iteration}, {"linf", linf}, {"converged", it.converged}};
}

void save_balance_log(const std::vector<BalanceIteration>& log, const std::filesystem::path& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  for (const auto& it : log) f << to_json(it).dump() << '\n';
}

}  // namespace deepact
