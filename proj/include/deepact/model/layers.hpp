#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include "deepact/model/params.hpp"
#include "deepact/random.hpp"

namespace deepact {

// Forward/backward building blocks. Every forward takes an optional cache;
// the matching backward consumes it and accumulates parameter gradients
// into a same-shaped params struct.

using AttentionMask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using Col = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// Row-wise softmax, stable under large logits.
template <typename Scalar>
Mat<Scalar> softmax_rows(const Mat<Scalar>& z) {
  Mat<Scalar> p(z.rows(), z.cols());
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    const Scalar m = z.row(i).maxCoeff();
    p.row(i) = (z.row(i).array() - m).exp();
    p.row(i) /= p.row(i).sum();
  }
  return p;
}

/// Sinusoidal position table, positions x d.
template <typename Scalar>
Mat<Scalar> positional_table(int positions, int d) {
  Mat<Scalar> pe(positions, d);
  for (int pos = 0; pos < positions; ++pos) {
    for (int i = 0; i < d; ++i) {
      const double rate = std::pow(10000.0, -static_cast<double>(i - i % 2) / d);
      pe(pos, i) = static_cast<Scalar>(i % 2 == 0 ? std::sin(pos * rate) : std::cos(pos * rate));
    }
  }
  return pe;
}

// ---------------------------------------------------------------------------
// Layer norm

template <typename Scalar>
struct NormCache {
  Mat<Scalar> xhat;
  Col<Scalar> inv_std;
};

inline constexpr double kNormEpsilon = 1e-5;

template <typename Scalar>
Mat<Scalar> layer_norm(const Mat<Scalar>& x, const NormParams<Scalar>& p, NormCache<Scalar>* cache) {
  const Eigen::Index d = x.cols();
  Mat<Scalar> xhat(x.rows(), d);
  Col<Scalar> inv_std(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const Scalar mean = x.row(i).mean();
    const auto centered = (x.row(i).array() - mean).eval();
    const Scalar var = centered.square().mean();
    inv_std(i) = Scalar(1) / std::sqrt(var + static_cast<Scalar>(kNormEpsilon));
    xhat.row(i) = centered * inv_std(i);
  }
  Mat<Scalar> y = (xhat.array().rowwise() * p.gain.row(0).array()).rowwise() + p.bias.row(0).array();
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->inv_std = std::move(inv_std);
  }
  return y;
}

template <typename Scalar>
Mat<Scalar> layer_norm_backward(const Mat<Scalar>& dy, const NormParams<Scalar>& p,
                                const NormCache<Scalar>& c, NormParams<Scalar>& g) {
  g.gain.row(0) += (dy.array() * c.xhat.array()).colwise().sum().matrix();
  g.bias.row(0) += dy.colwise().sum();
  const Mat<Scalar> dxhat = dy.array().rowwise() * p.gain.row(0).array();
  const Scalar d = static_cast<Scalar>(dy.cols());
  Mat<Scalar> dx(dy.rows(), dy.cols());
  for (Eigen::Index i = 0; i < dy.rows(); ++i) {
    const Scalar sum = dxhat.row(i).sum();
    const Scalar dot = dxhat.row(i).dot(c.xhat.row(i));
    dx.row(i) = (c.inv_std(i) / d) *
                (d * dxhat.row(i).array() - sum - c.xhat.row(i).array() * dot).matrix();
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Dropout

/// Inverted dropout mask (0 or 1/(1-rate)); empty when inactive.
template <typename Scalar>
Mat<Scalar> dropout_mask(Eigen::Index rows, Eigen::Index cols, double rate, std::mt19937_64* rng) {
  if (!rng || rate <= 0.0) return {};
  Mat<Scalar> m(rows, cols);
  const Scalar keep = static_cast<Scalar>(1.0 / (1.0 - rate));
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = uniform01(*rng) < rate ? Scalar(0) : keep;
  return m;
}

template <typename Scalar>
void apply_mask(Mat<Scalar>& x, const Mat<Scalar>& mask) {
  if (mask.size() != 0) x.array() *= mask.array();
}

// ---------------------------------------------------------------------------
// Multi-head attention

template <typename Scalar>
struct AttentionCache {
  Mat<Scalar> xq, xkv;
  Mat<Scalar> q, k, v;
  std::vector<Mat<Scalar>> probs;  // one (nq x nk) per head
  Mat<Scalar> concat;
};

/// Scaled dot-product attention with `allowed(i, j)` selecting which keys a
/// query may attend to. Every query row needs at least one allowed key.
template <typename Scalar>
Mat<Scalar> attention(const Mat<Scalar>& xq, const Mat<Scalar>& xkv, const AttentionMask& allowed,
                      const AttentionParams<Scalar>& p, int heads, AttentionCache<Scalar>* cache,
                      std::vector<Mat<Scalar>>* probs_out = nullptr) {
  const Eigen::Index d = p.wq.cols();
  const Eigen::Index dh = d / heads;
  const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(dh));
  Mat<Scalar> q = (xq * p.wq).rowwise() + p.bq.row(0);
  Mat<Scalar> k = (xkv * p.wk).rowwise() + p.bk.row(0);
  Mat<Scalar> v = (xkv * p.wv).rowwise() + p.bv.row(0);
  Mat<Scalar> concat(xq.rows(), d);
  std::vector<Mat<Scalar>> probs(static_cast<std::size_t>(heads));
  const Scalar neg_inf = -std::numeric_limits<Scalar>::infinity();
  for (int h = 0; h < heads; ++h) {
    Mat<Scalar> scores = (q.middleCols(h * dh, dh) * k.middleCols(h * dh, dh).transpose()) * scale;
    scores = allowed.select(scores, Mat<Scalar>::Constant(scores.rows(), scores.cols(), neg_inf));
    // Vectorized exp does not map -inf to exactly zero.
    probs[static_cast<std::size_t>(h)] =
        allowed.select(softmax_rows(scores), Mat<Scalar>::Zero(scores.rows(), scores.cols()));
    concat.middleCols(h * dh, dh).noalias() = probs[static_cast<std::size_t>(h)] * v.middleCols(h * dh, dh);
  }
  Mat<Scalar> out = (concat * p.wo).rowwise() + p.bo.row(0);
  if (probs_out) *probs_out = probs;
  if (cache) {
    cache->xq = xq;
    cache->xkv = xkv;
    cache->q = std::move(q);
    cache->k = std::move(k);
    cache->v = std::move(v);
    cache->probs = std::move(probs);
    cache->concat = std::move(concat);
  }
  return out;
}

/// Returns d(xq); adds d(xkv) into dxkv (which must be sized like xkv).
template <typename Scalar>
Mat<Scalar> attention_backward(const Mat<Scalar>& dout, const AttentionParams<Scalar>& p, int heads,
                               const AttentionCache<Scalar>& c, AttentionParams<Scalar>& g,
                               Mat<Scalar>& dxkv) {
  const Eigen::Index d = p.wq.cols();
  const Eigen::Index dh = d / heads;
  const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(dh));
  g.wo.noalias() += c.concat.transpose() * dout;
  g.bo.row(0) += dout.colwise().sum();
  const Mat<Scalar> dconcat = dout * p.wo.transpose();
  Mat<Scalar> dq(c.q.rows(), d), dk(c.k.rows(), d), dv(c.v.rows(), d);
  for (int h = 0; h < heads; ++h) {
    const auto& a = c.probs[static_cast<std::size_t>(h)];
    const auto dout_h = dconcat.middleCols(h * dh, dh);
    dv.middleCols(h * dh, dh).noalias() = a.transpose() * dout_h;
    const Mat<Scalar> da = dout_h * c.v.middleCols(h * dh, dh).transpose();
    const Col<Scalar> row_dot = (da.array() * a.array()).rowwise().sum();
    const Mat<Scalar> ds = (a.array() * (da.array().colwise() - row_dot.array())) * scale;
    dq.middleCols(h * dh, dh).noalias() = ds * c.k.middleCols(h * dh, dh);
    dk.middleCols(h * dh, dh).noalias() = ds.transpose() * c.q.middleCols(h * dh, dh);
  }
  g.wq.noalias() += c.xq.transpose() * dq;
  g.bq.row(0) += dq.colwise().sum();
  g.wk.noalias() += c.xkv.transpose() * dk;
  g.bk.row(0) += dk.colwise().sum();
  g.wv.noalias() += c.xkv.transpose() * dv;
  g.bv.row(0) += dv.colwise().sum();
  dxkv.noalias() += dk * p.wk.transpose();
  dxkv.noalias() += dv * p.wv.transpose();
  return dq * p.wq.transpose();
}

// ---------------------------------------------------------------------------
// Position-wise feed-forward with tanh-approximated GELU

template <typename Scalar>
struct FeedForwardCache {
  Mat<Scalar> x, pre, act;
};

namespace detail {
inline constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
inline constexpr double kGeluA = 0.044715;
}  // namespace detail

template <typename Scalar>
Mat<Scalar> feed_forward(const Mat<Scalar>& x, const FeedForwardParams<Scalar>& p,
                         FeedForwardCache<Scalar>* cache) {
  Mat<Scalar> pre = (x * p.w1).rowwise() + p.b1.row(0);
  const Scalar c = static_cast<Scalar>(detail::kGeluC), a = static_cast<Scalar>(detail::kGeluA);
  Mat<Scalar> act =
      (Scalar(0.5) * pre.array() * (Scalar(1) + (c * (pre.array() + a * pre.array().cube())).tanh()))
          .matrix();
  Mat<Scalar> out = (act * p.w2).rowwise() + p.b2.row(0);
  if (cache) {
    cache->x = x;
    cache->pre = std::move(pre);
    cache->act = std::move(act);
  }
  return out;
}

template <typename Scalar>
Mat<Scalar> feed_forward_backward(const Mat<Scalar>& dout, const FeedForwardParams<Scalar>& p,
                                  const FeedForwardCache<Scalar>& c, FeedForwardParams<Scalar>& g) {
  g.w2.noalias() += c.act.transpose() * dout;
  g.b2.row(0) += dout.colwise().sum();
  const Mat<Scalar> dact = dout * p.w2.transpose();
  const Scalar cc = static_cast<Scalar>(detail::kGeluC), a = static_cast<Scalar>(detail::kGeluA);
  const auto x = c.pre.array();
  const auto t = (cc * (x + a * x.cube())).tanh().eval();
  const auto dgelu = (Scalar(0.5) * (Scalar(1) + t) +
                      Scalar(0.5) * x * (Scalar(1) - t.square()) * cc * (Scalar(1) + Scalar(3) * a * x.square()))
                         .eval();
  const Mat<Scalar> dpre = (dact.array() * dgelu).matrix();
  g.w1.noalias() += c.x.transpose() * dpre;
  g.b1.row(0) += dpre.colwise().sum();
  return dpre * p.w1.transpose();
}

}  // namespace deepact
