#include "deepact/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

namespace deepact {

using nlohmann::json;

double Histogram::at(int key) const {
  const auto it = std::lower_bound(keys.begin(), keys.end(), key);
  if (it == keys.end() || *it != key) return 0.0;
  return mass(it - keys.begin());
}

Histogram make_histogram(std::string label, std::vector<int> keys, const Eigen::VectorXd& counts) {
  if (static_cast<Eigen::Index>(keys.size()) != counts.size()) {
    throw std::invalid_argument("make_histogram: key/count size mismatch");
  }
  if (!std::is_sorted(keys.begin(), keys.end())) throw std::invalid_argument("make_histogram: keys must ascend");
  const double total = counts.sum();
  Histogram h{std::move(label), std::move(keys), total > 0.0 ? Eigen::VectorXd(counts / total) : counts};
  return h;
}

namespace {

double kl_term(double p, double m) { return p > 0.0 ? p * std::log2(p / m) : 0.0; }

}  // namespace

double jsd(const Histogram& p, const Histogram& q) {
  std::vector<int> keys;
  std::set_union(p.keys.begin(), p.keys.end(), q.keys.begin(), q.keys.end(), std::back_inserter(keys));
  double sum = 0.0;
  bool overlap = false;
  std::size_t i = 0, j = 0;
  for (int k : keys) {
    double a = 0.0, b = 0.0;
    if (i < p.keys.size() && p.keys[i] == k) a = p.mass(static_cast<Eigen::Index>(i++));
    if (j < q.keys.size() && q.keys[j] == k) b = q.mass(static_cast<Eigen::Index>(j++));
    overlap = overlap || (a > 0.0 && b > 0.0);
    const double m = 0.5 * (a + b);
    sum += 0.5 * kl_term(a, m) + 0.5 * kl_term(b, m);
  }
  // disjoint supports: exactly 1 rather than 1 - rounding
  if (!overlap && p.mass.sum() > 0.0 && q.mass.sum() > 0.0) return 1.0;
  return std::clamp(sum, 0.0, 1.0);
}

namespace {

Histogram from_counts(std::string label, int lo, int hi, const std::map<int, double>& counts) {
  std::map<int, double> all;
  for (int k = lo; k <= hi; ++k) all[k] = 0.0;
  for (const auto& [k, c] : counts) all[k] += c;
  std::vector<int> keys;
  Eigen::VectorXd v(static_cast<Eigen::Index>(all.size()));
  Eigen::Index i = 0;
  for (const auto& [k, c] : all) {
    keys.push_back(k);
    v(i++) = c;
  }
  return make_histogram(std::move(label), std::move(keys), v);
}

}  // namespace

ChainHistograms chain_histograms(std::span<const ActivityChain> chains, int max_len) {
  if (chains.empty()) throw std::invalid_argument("chain_histograms: no chains");
  std::map<int, double> len, dur, start, end, type;
  for (const auto& c : chains) {
    len[static_cast<int>(c.size())] += 1.0;
    for (const auto& a : c) {
      dur[duration_slots(a)] += 1.0;
      start[a.start] += 1.0;
      end[a.end] += 1.0;
      type[code(a.kind)] += 1.0;
    }
  }
  return {from_counts("length", 1, max_len, len), from_counts("duration", 1, kSlotsPerDay, dur),
          from_counts("start", 1, kSlotsPerDay, start), from_counts("end", 1, kSlotsPerDay, end),
          from_counts("type", 1, kNumActivityTypes, type)};
}

namespace {

int state_of(ActivityType t) {
  // Specials never reach a chain through the public constructors, but a
  // stray one should not index out of bounds.
  return is_real(t) ? code(t) : kEndState;
}

}  // namespace

TransitionMatrix transition_matrix(std::span<const ActivityChain> chains) {
  if (chains.empty()) throw std::invalid_argument("transition_matrix: no chains");
  TransitionMatrix m;
  for (const auto& c : chains) {
    int prev = kStartState;
    for (const auto& a : c) {
      const int s = state_of(a.kind);
      m.counts(prev, s) += 1.0;
      prev = s;
    }
    m.counts(prev, kEndState) += 1.0;
  }
  for (int r = 0; r < kTransitionStates; ++r) {
    const double total = m.counts.row(r).sum();
    m.row_mask[static_cast<std::size_t>(r)] = total == 0.0;
    if (total > 0.0) m.probs.row(r) = m.counts.row(r) / total;
  }
  return m;
}

namespace {

std::vector<bool> present_states(const Eigen::MatrixXd& counts) {
  std::vector<bool> out(static_cast<std::size_t>(counts.rows()));
  for (Eigen::Index s = 0; s < counts.rows(); ++s) {
    out[static_cast<std::size_t>(s)] = counts.row(s).sum() > 0.0 || counts.col(s).sum() > 0.0;
  }
  return out;
}

}  // namespace

Completeness completeness(const TransitionMatrix& gen, const TransitionMatrix& truth) {
  const auto g = present_states(gen.counts);
  const auto t = present_states(truth.counts);
  int truth_nodes = 0, hit_nodes = 0;
  for (std::size_t s = 0; s < t.size(); ++s) {
    if (!t[s]) continue;
    ++truth_nodes;
    hit_nodes += g[s] ? 1 : 0;
  }
  int truth_edges = 0, hit_edges = 0;
  for (Eigen::Index i = 0; i < truth.counts.rows(); ++i) {
    for (Eigen::Index j = 0; j < truth.counts.cols(); ++j) {
      if (truth.counts(i, j) <= 0.0) continue;
      ++truth_edges;
      hit_edges += gen.counts(i, j) > 0.0 ? 1 : 0;
    }
  }
  Completeness c;
  c.node = truth_nodes ? 100.0 * hit_nodes / truth_nodes : 100.0;
  c.edge = truth_edges ? 100.0 * hit_edges / truth_edges : 100.0;
  return c;
}

double frobenius(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw std::invalid_argument("frobenius: shape mismatch");
  return (a - b).norm();
}

double frobenius(const TransitionMatrix& a, const TransitionMatrix& b) {
  // masked rows are already zero in probs
  return frobenius(a.probs, b.probs);
}

double od_cosine(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw std::invalid_argument("od_cosine: shape mismatch");
  const double na = a.norm(), nb = b.norm();
  if (na == 0.0 && nb == 0.0) throw UndefinedCosine("od_cosine: both matrices are all zero");
  if (na == 0.0 || nb == 0.0) return 0.0;
  return a.cwiseProduct(b).sum() / (na * nb);
}

Mape count_mape(const Eigen::VectorXd& pred, const Eigen::VectorXd& truth) {
  if (pred.size() != truth.size()) throw std::invalid_argument("count_mape: size mismatch");
  Mape m;
  double sum = 0.0;
  for (Eigen::Index i = 0; i < truth.size(); ++i) {
    if (truth(i) == 0.0) {
      ++m.excluded;
      continue;
    }
    sum += std::abs(pred(i) - truth(i)) / std::abs(truth(i));
    ++m.included;
  }
  m.value = m.included ? 100.0 * sum / static_cast<double>(m.included) : 0.0;
  return m;
}

MetricsReport report(std::span<const ActivityChain> generated, std::span<const ActivityChain> truth,
                     const std::optional<OdPair>& od, int max_len) {
  const auto hg = chain_histograms(generated, max_len);
  const auto ht = chain_histograms(truth, max_len);
  MetricsReport r;
  const auto g = hg.all();
  const auto t = ht.all();
  for (std::size_t i = 0; i < r.jsd.size(); ++i) r.jsd[i] = jsd(*g[i], *t[i]);
  const auto tg = transition_matrix(generated);
  const auto tt = transition_matrix(truth);
  const auto c = completeness(tg, tt);
  r.node_completeness = c.node;
  r.edge_completeness = c.edge;
  r.frobenius = frobenius(tg, tt);
  if (od) {
    r.od_cosine = od_cosine(od->generated, od->truth);
    const Eigen::Map<const Eigen::VectorXd> pg(od->generated.data(), od->generated.size());
    const Eigen::Map<const Eigen::VectorXd> pt(od->truth.data(), od->truth.size());
    r.od_mape = count_mape(pg, pt);
  }
  return r;
}

json to_json(const MetricsReport& r) {
  json j;
  json js;
  for (std::size_t i = 0; i < r.jsd.size(); ++i) js[MetricsReport::kJsdNames[i]] = r.jsd[i];
  j["jsd"] = js;
  j["node_completeness"] = r.node_completeness;
  j["edge_completeness"] = r.edge_completeness;
  j["frobenius"] = r.frobenius;
  if (r.od_cosine) j["od_cosine"] = *r.od_cosine;
  if (r.od_mape) {
    j["od_mape"] = {{"value", r.od_mape->value}, {"included", r.od_mape->included}, {"excluded", r.od_mape->excluded}};
  }
  return j;
}

MetricsReport report_from_json(const json& j) {
  MetricsReport r;
  for (std::size_t i = 0; i < r.jsd.size(); ++i) r.jsd[i] = j.at("jsd").at(MetricsReport::kJsdNames[i]).get<double>();
  r.node_completeness = j.at("node_completeness").get<double>();
  r.edge_completeness = j.at("edge_completeness").get<double>();
  r.frobenius = j.at("frobenius").get<double>();
  if (j.contains("od_cosine")) r.od_cosine = j["od_cosine"].get<double>();
  if (j.contains("od_mape")) {
    const auto& m = j["od_mape"];
    r.od_mape = Mape{m.at("value").get<double>(), m.at("included").get<std::size_t>(),
                     m.at("excluded").get<std::size_t>()};
  }
  return r;
}

std::string csv_header(const MetricsReport& r) {
  std::string h = "len,dur,start,end,type,ec,f_norm,node";
  if (r.od_cosine) h += ",od_cosine";
  if (r.od_mape) h += ",od_mape";
  return h;
}

std::string csv_row(const MetricsReport& r) {
  std::ostringstream os;
  os << std::setprecision(6) << std::fixed;
  for (double v : r.jsd) os << v << ',';
  os << r.edge_completeness << ',' << r.frobenius << ',' << r.node_completeness;
  if (r.od_cosine) os << ',' << *r.od_cosine;
  if (r.od_mape) os << ',' << r.od_mape->value;
  return os.str();
}

void save_report(const MetricsReport& r, const std::filesystem::path& json_path) {
  if (json_path.has_parent_path()) std::filesystem::create_directories(json_path.parent_path());
  std::ofstream f(json_path);
  if (!f) throw std::runtime_error("cannot write " + json_path.string());
  f << to_json(r).dump(2) << '\n';
  auto csv = json_path;
  csv.replace_extension(".csv");
  std::ofstream c(csv);
  if (!c) throw std::runtime_error("cannot write " + csv.string());
  c << csv_header(r) << '\n' << csv_row(r) << '\n';
}

void save_histogram_csv(const Histogram& h, const std::filesystem::path& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << "bin,mass\n" << std::setprecision(17);
  for (std::size_t i = 0; i < h.keys.size(); ++i) f << h.keys[i] << ',' << h.mass(static_cast<Eigen::Index>(i)) << '\n';
}

}  // namespace deepact
