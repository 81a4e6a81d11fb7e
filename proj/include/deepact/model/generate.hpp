#pragma once

#include <limits>
#include <thread>
#include <vector>

#include "deepact/model/transformer.hpp"

namespace deepact {

struct SamplingConfig {
  double temperature = 1.0;  // 0 = greedy
  std::uint64_t seed = 0;
  int max_len = 0;           // 0 = model max_len
};

namespace detail {

template <typename Scalar>
int draw_class(const Eigen::Matrix<Scalar, 1, Eigen::Dynamic>& logits, double temperature, std::mt19937_64& rng) {
  Eigen::Index best = 0;
  if (temperature <= 0.0) {
    logits.maxCoeff(&best);
    return static_cast<int>(best);
  }
  const double m = static_cast<double>(logits.maxCoeff());
  std::vector<double> w(static_cast<std::size_t>(logits.size()));
  for (Eigen::Index j = 0; j < logits.size(); ++j) {
    w[static_cast<std::size_t>(j)] = std::exp((static_cast<double>(logits(j)) - m) / temperature);
  }
  return static_cast<int>(sample_index(w, rng));
}

}  // namespace detail

/// Autoregressive decoding for one member. Type, start and end are drawn
/// independently from their heads at each step; EOS ends the chain and is
/// not part of it, and cannot be the first step.
template <typename Scalar>
ActivityChain generate(const ModelParams<Scalar>& p, const Household& household, std::size_t target_index,
                       bool weekday, const SamplingConfig& sampling) {
  const int cap = std::min(sampling.max_len > 0 ? sampling.max_len : p.config.max_len, p.config.max_len);
  Household h = household;
  h.target_index = target_index;
  ModelInput in = make_input(h, weekday, p.config);
  auto rng = derive_rng(sampling.seed, 0x9e4e);
  using Row = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;
  while (static_cast<int>(in.chain.size()) < cap) {
    const HeadLogits<Scalar> z = forward<Scalar>(p, in, nullptr, nullptr);
    const Eigen::Index t = z.type.rows() - 1;
    Row type = z.type.row(t);
    if (t == 0) type(kTypeEos) = -std::numeric_limits<Scalar>::infinity();
    const int k = detail::draw_class<Scalar>(type, sampling.temperature, rng);
    const int s = detail::draw_class<Scalar>(Row(z.start.row(t)), sampling.temperature, rng);
    const int e = detail::draw_class<Scalar>(Row(z.end.row(t)), sampling.temperature, rng);
    if (k == kTypeEos) break;
    in.chain.push_back({static_cast<ActivityType>(k + 1), s + 1, e + 1});
  }
  return ActivityChain(std::move(in.chain), p.config.max_len);
}

/// One chain per sample's target member; agent i uses seed stream i so
/// results do not depend on `workers`.
template <typename Scalar>
std::vector<ActivityChain> generate_population(const ModelParams<Scalar>& p, const std::vector<EncodedSample>& samples,
                                               const SamplingConfig& sampling, int workers = 1) {
  std::vector<ActivityChain> out(samples.size());
  auto run = [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) {
      SamplingConfig sc = sampling;
      sc.seed = splitmix64(sampling.seed ^ splitmix64(i));
      out[i] = generate(p, samples[i].household, samples[i].household.target_index, samples[i].weekday, sc);
    }
  };
  workers = std::max(1, workers);
  if (workers == 1) {
    run(0, samples.size());
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back(run, samples.size() * static_cast<std::size_t>(w) / static_cast<std::size_t>(workers),
                        samples.size() * static_cast<std::size_t>(w + 1) / static_cast<std::size_t>(workers));
    }
    for (auto& t : pool) t.join();
  }
  return out;
}

}  // namespace deepact
