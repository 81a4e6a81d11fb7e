#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <random>

#include "deepact/metrics.hpp"

using namespace deepact;
using A = ActivityType;

namespace {

Histogram hist(std::vector<int> keys, std::vector<double> mass) {
  return make_histogram("h", std::move(keys), Eigen::Map<Eigen::VectorXd>(mass.data(), static_cast<Eigen::Index>(mass.size())));
}

// Entropy form H(M) - (H(P) + H(Q)) / 2, natural log converted to bits.
double jsd_entropy_form(const std::vector<double>& p, const std::vector<double>& q) {
  auto h = [](double x) { return x > 0.0 ? -x * std::log(x) : 0.0; };
  double hm = 0.0, hp = 0.0, hq = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    hm += h(0.5 * (p[i] + q[i]));
    hp += h(p[i]);
    hq += h(q[i]);
  }
  return (hm - 0.5 * (hp + hq)) / std::log(2.0);
}

std::vector<double> random_simplex(std::size_t n, std::mt19937_64& rng, double zero_rate) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> v(n);
  double s = 0.0;
  for (auto& x : v) {
    x = u(rng) < zero_rate ? 0.0 : -std::log(1.0 - u(rng));
    s += x;
  }
  if (s == 0.0) {
    v[0] = 1.0;
    s = 1.0;
  }
  for (auto& x : v) x /= s;
  return v;
}

ActivityChain home_work_home() { return ActivityChain({{A::Home, 1, 28}, {A::Work, 29, 61}, {A::Home, 62, 96}}); }

}  // namespace

TEST_CASE("jsd identity, disjoint and hand value") {
  const auto p = hist({1, 2}, {0.5, 0.5});
  CHECK(jsd(p, p) == 0.0);
  CHECK(jsd(hist({1, 2}, {0.3, 0.7}), hist({3, 4}, {0.1, 0.9})) == 1.0);
  CHECK(jsd(p, hist({1, 2}, {1.0, 0.0})) == doctest::Approx(0.31128).epsilon(1e-5));
}

TEST_CASE("jsd matches the entropy form on random pairs") {
  std::mt19937_64 rng(11);
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 2 + rng() % 20;
    const auto p = random_simplex(n, rng, 0.2);
    const auto q = random_simplex(n, rng, 0.2);
    std::vector<int> keys(n);
    for (std::size_t i = 0; i < n; ++i) keys[i] = static_cast<int>(i);
    const double got = jsd(hist(keys, p), hist(keys, q));
    worst = std::max(worst, std::abs(got - jsd_entropy_form(p, q)));
    CHECK(got >= 0.0);
    CHECK(got <= 1.0);
    CHECK(got == doctest::Approx(jsd(hist(keys, q), hist(keys, p))).epsilon(1e-14));
  }
  CHECK(worst < 1e-12);
}

TEST_CASE("jsd fills missing keys with zero mass") {
  const auto a = hist({1, 2}, {0.5, 0.5});
  const auto b = hist({2, 3}, {0.5, 0.5});
  const auto a3 = hist({1, 2, 3}, {0.5, 0.5, 0.0});
  const auto b3 = hist({1, 2, 3}, {0.0, 0.5, 0.5});
  CHECK(jsd(a, b) == doctest::Approx(jsd(a3, b3)).epsilon(1e-15));
}

TEST_CASE("chain_histograms counting") {
  const std::vector<ActivityChain> chains(10, home_work_home());
  const auto h = chain_histograms(chains);
  CHECK(h.length.at(3) == 1.0);
  CHECK(h.length.mass.sum() == doctest::Approx(1.0));
  CHECK(h.type.at(code(A::Home)) == doctest::Approx(2.0 / 3.0));
  CHECK(h.type.at(code(A::Work)) == doctest::Approx(1.0 / 3.0));
  CHECK(h.duration.at(28) == doctest::Approx(1.0 / 3.0));
  CHECK(h.start.keys.size() == 96);
  CHECK_THROWS_AS(chain_histograms(std::vector<ActivityChain>{}), std::invalid_argument);
}

TEST_CASE("pooled start histogram carries N times mean length") {
  std::mt19937_64 rng(5);
  std::vector<ActivityChain> chains;
  std::size_t activities = 0;
  std::vector<double> direct(97, 0.0);
  for (int i = 0; i < 50; ++i) {
    std::vector<Activity> acts;
    int slot = 1;
    const int n = 1 + static_cast<int>(rng() % 5);
    for (int k = 0; k < n; ++k) {
      acts.push_back({A::Home, slot, slot + 2});
      direct[static_cast<std::size_t>(slot)] += 1.0;
      slot += 3;
    }
    activities += static_cast<std::size_t>(n);
    chains.emplace_back(acts);
  }
  const auto h = chain_histograms(chains);
  for (int s = 1; s <= 96; ++s) {
    CHECK(h.start.at(s) * static_cast<double>(activities) == doctest::Approx(direct[static_cast<std::size_t>(s)]));
  }
}

TEST_CASE("transition_matrix rows") {
  const std::vector<ActivityChain> one{home_work_home()};
  const auto t = transition_matrix(one);
  CHECK(t.probs(kStartState, code(A::Home)) == 1.0);
  CHECK(t.probs(code(A::Home), code(A::Work)) == 0.5);
  CHECK(t.probs(code(A::Home), kEndState) == 0.5);
  CHECK(t.probs(code(A::Work), code(A::Home)) == 1.0);
  CHECK(t.row_mask[code(A::School)]);
  CHECK(t.probs.row(code(A::School)).sum() == 0.0);
  CHECK(t.row_mask[kEndState]);

  const std::vector<ActivityChain> singles(4, ActivityChain({{A::Home, 1, 96}}));
  CHECK(transition_matrix(singles).probs(code(A::Home), kEndState) == 1.0);
}

TEST_CASE("transition_matrix counts and stochastic rows") {
  std::mt19937_64 rng(8);
  std::vector<ActivityChain> chains;
  double expected = 0.0;
  for (int i = 0; i < 200; ++i) {
    std::vector<Activity> acts;
    const int n = 1 + static_cast<int>(rng() % 6);
    for (int k = 0; k < n; ++k) acts.push_back({static_cast<A>(1 + rng() % 15), k + 1, k + 1});
    expected += n + 1;
    chains.emplace_back(acts);
  }
  const auto t = transition_matrix(chains);
  CHECK(t.counts.sum() == expected);
  for (int r = 0; r < kTransitionStates; ++r) {
    if (!t.row_mask[static_cast<std::size_t>(r)]) CHECK(std::abs(t.probs.row(r).sum() - 1.0) < 1e-9);
  }
}

TEST_CASE("completeness is recall over truth") {
  TransitionMatrix truth;
  int edges = 0;
  for (int i = 0; i < kTransitionStates && edges < 20; ++i) {
    for (int j = 0; j < kTransitionStates && edges < 20; ++j) {
      if ((i * 7 + j * 3) % 5 == 0 && i != kEndState && j != kStartState) {
        truth.counts(i, j) = 1.0 + i;
        ++edges;
      }
    }
  }
  REQUIRE(edges == 20);
  auto c = completeness(truth, truth);
  CHECK(c.node == 100.0);
  CHECK(c.edge == 100.0);

  TransitionMatrix missing = truth;
  for (int i = 0; i < kTransitionStates; ++i) {
    for (int j = 0; j < kTransitionStates; ++j) {
      if (missing.counts(i, j) > 0.0) {
        missing.counts(i, j) = 0.0;
        i = j = kTransitionStates;
      }
    }
  }
  CHECK(completeness(missing, truth).edge == 95.0);

  TransitionMatrix extra = truth;
  extra.counts.array() += 1.0;
  c = completeness(extra, truth);
  CHECK(c.node == 100.0);
  CHECK(c.edge == 100.0);
}

TEST_CASE("frobenius basics") {
  const Eigen::MatrixXd i2 = Eigen::MatrixXd::Identity(2, 2);
  CHECK(frobenius(i2, i2) == 0.0);
  CHECK(frobenius(i2, Eigen::MatrixXd::Zero(2, 2)) == doctest::Approx(std::sqrt(2.0)));
  Eigen::MatrixXd a(2, 2);
  a << 0.2, 0.8, 0.6, 0.4;
  Eigen::MatrixXd swapped = a.colwise().reverse();
  CHECK(frobenius(a, swapped) > 0.0);

  std::mt19937_64 rng(3);
  for (int t = 0; t < 100; ++t) {
    const Eigen::MatrixXd x = Eigen::MatrixXd::Random(5, 5), y = Eigen::MatrixXd::Random(5, 5),
                          z = Eigen::MatrixXd::Random(5, 5);
    CHECK(frobenius(x, z) <= frobenius(x, y) + frobenius(y, z) + 1e-12);
  }
}

TEST_CASE("od_cosine and count_mape") {
  Eigen::MatrixXd b(2, 2);
  b << 1, 2, 3, 4;
  CHECK(od_cosine(b, b) == doctest::Approx(1.0));
  CHECK(od_cosine(2.0 * b, b) == doctest::Approx(1.0));
  const Eigen::Map<const Eigen::VectorXd> vb(b.data(), 4);
  const Eigen::VectorXd v2 = 2.0 * vb;
  CHECK(count_mape(v2, vb).value == doctest::Approx(100.0));
  Eigen::MatrixXd x(2, 2), y(2, 2);
  x << 1, 0, 0, 0;
  y << 0, 0, 0, 5;
  CHECK(od_cosine(x, y) == 0.0);
  CHECK_THROWS_AS(od_cosine(Eigen::MatrixXd::Zero(2, 2), Eigen::MatrixXd::Zero(2, 2)), UndefinedCosine);

  Eigen::VectorXd truth(3), pred(3);
  truth << 10, 0, 20;
  pred << 11, 4, 18;
  const auto m = count_mape(pred, truth);
  CHECK(m.excluded == 1);
  CHECK(m.included == 2);
  CHECK(m.value == doctest::Approx(10.0));
}

TEST_CASE("report identity and serialization") {
  std::vector<ActivityChain> chains{home_work_home(), ActivityChain({{A::Home, 1, 40}, {A::BuyGoods, 41, 44}, {A::Home, 45, 96}})};
  const auto r = report(chains, chains);
  for (double j : r.jsd) CHECK(j == 0.0);
  CHECK(r.node_completeness == 100.0);
  CHECK(r.edge_completeness == 100.0);
  CHECK(r.frobenius == 0.0);
  CHECK_FALSE(r.od_cosine.has_value());
  CHECK(report_from_json(to_json(r)) == r);

  Eigen::MatrixXd od(2, 2);
  od << 0, 3, 2, 1;
  const auto with_od = report(chains, std::vector<ActivityChain>{home_work_home()}, OdPair{od, od});
  CHECK(*with_od.od_cosine == doctest::Approx(1.0));
  CHECK(report_from_json(nlohmann::json::parse(to_json(with_od).dump())) == with_od);
  const auto row = csv_row(with_od);
  const auto header = csv_header(with_od);
  CHECK(std::count(row.begin(), row.end(), ',') == std::count(header.begin(), header.end(), ','));
}
