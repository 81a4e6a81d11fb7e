#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "deepact/model/config.hpp"
#include "deepact/model/layers.hpp"

namespace deepact {

// Loss terms over a (positions x classes) logit matrix. Rows flagged in
// `pad` are ignored. Each returns the mean over counted rows, or the sum
// divided by `normalizer` when one is given (pooled batch means). When a
// gradient pointer is passed, weight * d(loss)/d(input) is added to it.

namespace detail {

template <typename Scalar>
Scalar resolve_normalizer(const std::vector<bool>& pad, Eigen::Index rows, double normalizer) {
  if (normalizer > 0.0) return static_cast<Scalar>(normalizer);
  Eigen::Index n = 0;
  for (Eigen::Index i = 0; i < rows; ++i) n += pad.empty() || !pad[static_cast<std::size_t>(i)];
  return static_cast<Scalar>(std::max<Eigen::Index>(n, 1));
}

inline bool skip(const std::vector<bool>& pad, Eigen::Index i) {
  return !pad.empty() && pad[static_cast<std::size_t>(i)];
}

template <typename Scalar>
void ensure_shape(Mat<Scalar>& g, Eigen::Index rows, Eigen::Index cols) {
  if (g.rows() != rows || g.cols() != cols) g = Mat<Scalar>::Zero(rows, cols);
}

template <typename Scalar>
void ensure_shape(Col<Scalar>& g, Eigen::Index rows) {
  if (g.rows() != rows) g = Col<Scalar>::Zero(rows);
}

}  // namespace detail

/// Mean of -log softmax(z)[target] over non-pad rows.
template <typename Scalar>
Scalar loss_ce(const Mat<Scalar>& logits, std::span<const int> targets, const std::vector<bool>& pad = {},
               Mat<Scalar>* grad = nullptr, Scalar weight = Scalar(1), double normalizer = 0.0) {
  const Scalar n = detail::resolve_normalizer<Scalar>(pad, logits.rows(), normalizer);
  if (grad) detail::ensure_shape(*grad, logits.rows(), logits.cols());
  Scalar total = 0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    if (detail::skip(pad, i)) continue;
    const int y = targets[static_cast<std::size_t>(i)];
    const Scalar m = logits.row(i).maxCoeff();
    const auto shifted = (logits.row(i).array() - m).eval();
    const Scalar log_z = std::log(shifted.exp().sum());
    total -= shifted(y) - log_z;
    if (grad) {
      auto row = grad->row(i);
      row.array() += (weight / n) * (shifted - log_z).exp();
      row(y) -= weight / n;
    }
  }
  return total / n;
}

/// Soft-label weights for one row: main weight at the target, side weight
/// on up to `side_steps` neighbours each side, clipped at the range ends.
inline std::vector<double> soft_label_row(int target, int classes, const SoftLabelConfig& cfg) {
  std::vector<double> s(static_cast<std::size_t>(classes), 0.0);
  s[static_cast<std::size_t>(target)] = cfg.main_weight;
  for (int k = 1; k <= cfg.side_steps; ++k) {
    if (target - k >= 0) s[static_cast<std::size_t>(target - k)] = cfg.side_weight;
    if (target + k < classes) s[static_cast<std::size_t>(target + k)] = cfg.side_weight;
  }
  return s;
}

/// Soft-label cross entropy: mean of -sum_j S_ij log(max(P_ij, eps)).
/// Targets are 0-based class indices. Terms below the floor carry no
/// gradient.
template <typename Scalar>
Scalar loss_soft(const Mat<Scalar>& logits, std::span<const int> targets, const SoftLabelConfig& cfg,
                 const std::vector<bool>& pad = {}, Mat<Scalar>* grad = nullptr, Scalar weight = Scalar(1),
                 double normalizer = 0.0) {
  const Scalar n = detail::resolve_normalizer<Scalar>(pad, logits.rows(), normalizer);
  const Eigen::Index classes = logits.cols();
  if (grad) detail::ensure_shape(*grad, logits.rows(), classes);
  const Scalar floor_p = static_cast<Scalar>(cfg.epsilon);
  const Scalar log_floor = floor_p > Scalar(0) ? std::log(floor_p) : -std::numeric_limits<Scalar>::infinity();
  Scalar total = 0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    if (detail::skip(pad, i)) continue;
    const int y = targets[static_cast<std::size_t>(i)];
    const Scalar m = logits.row(i).maxCoeff();
    const auto shifted = (logits.row(i).array() - m).eval();
    const Scalar log_z = std::log(shifted.exp().sum());
    const int lo = std::max(0, y - cfg.side_steps);
    const int hi = std::min(static_cast<int>(classes) - 1, y + cfg.side_steps);
    Scalar active = 0;  // sum of S_j over unfloored terms
    for (int j = lo; j <= hi; ++j) {
      const Scalar s = static_cast<Scalar>(j == y ? cfg.main_weight : cfg.side_weight);
      if (s == Scalar(0)) continue;
      const Scalar log_p = shifted(j) - log_z;
      if (log_p >= log_floor) {
        total -= s * log_p;
        active += s;
      } else {
        total -= s * log_floor;
      }
    }
    if (grad) {
      // d/dz of -sum_j S_j log P_j over unfloored j: P * sum S_j - S.
      auto row = grad->row(i);
      const Scalar c = weight / n;
      row.array() += (c * active) * (shifted - log_z).exp();
      for (int j = lo; j <= hi; ++j) {
        const Scalar s = static_cast<Scalar>(j == y ? cfg.main_weight : cfg.side_weight);
        if (s != Scalar(0) && shifted(j) - log_z >= log_floor) row(j) -= c * s;
      }
    }
  }
  return total / n;
}

/// Softmax expectation of the slot number (1..C) per row.
template <typename Scalar>
Col<Scalar> expected_slot(const Mat<Scalar>& logits) {
  const Mat<Scalar> p = softmax_rows(logits);
  Col<Scalar> slots(logits.cols());
  for (Eigen::Index j = 0; j < slots.size(); ++j) slots(j) = static_cast<Scalar>(j + 1);
  return p * slots;
}

/// Adds d(expected_slot)/d(logits) scaled by per-row upstream gradients.
template <typename Scalar>
void expected_slot_backward(const Mat<Scalar>& logits, const Col<Scalar>& dexpected, Mat<Scalar>& grad) {
  detail::ensure_shape(grad, logits.rows(), logits.cols());
  const Mat<Scalar> p = softmax_rows(logits);
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    if (dexpected(i) == Scalar(0)) continue;
    Scalar e = 0;
    for (Eigen::Index j = 0; j < p.cols(); ++j) e += p(i, j) * static_cast<Scalar>(j + 1);
    for (Eigen::Index j = 0; j < p.cols(); ++j) {
      grad(i, j) += dexpected(i) * p(i, j) * (static_cast<Scalar>(j + 1) - e);
    }
  }
}

/// Temporal order hinge: mean over non-pad rows of
/// max(0, end[i-1] - start[i]); the first row contributes zero.
template <typename Scalar>
Scalar loss_order(const Col<Scalar>& end_expected, const Col<Scalar>& start_expected,
                  const std::vector<bool>& pad = {}, Col<Scalar>* dend = nullptr,
                  Col<Scalar>* dstart = nullptr, Scalar weight = Scalar(1), double normalizer = 0.0) {
  const Eigen::Index rows = start_expected.rows();
  const Scalar n = detail::resolve_normalizer<Scalar>(pad, rows, normalizer);
  if (dend) detail::ensure_shape(*dend, rows);
  if (dstart) detail::ensure_shape(*dstart, rows);
  Scalar total = 0;
  for (Eigen::Index i = 1; i < rows; ++i) {
    if (detail::skip(pad, i) || detail::skip(pad, i - 1)) continue;
    const Scalar gap = end_expected(i - 1) - start_expected(i);
    if (gap > Scalar(0)) {
      total += gap;
      if (dend) (*dend)(i - 1) += weight / n;
      if (dstart) (*dstart)(i) -= weight / n;
    }
  }
  return total / n;
}

/// Sequential timing hinge: mean over non-pad rows of max(0, start - end).
template <typename Scalar>
Scalar loss_seq(const Col<Scalar>& start_expected, const Col<Scalar>& end_expected,
                const std::vector<bool>& pad = {}, Col<Scalar>* dstart = nullptr,
                Col<Scalar>* dend = nullptr, Scalar weight = Scalar(1), double normalizer = 0.0) {
  const Eigen::Index rows = start_expected.rows();
  const Scalar n = detail::resolve_normalizer<Scalar>(pad, rows, normalizer);
  if (dend) detail::ensure_shape(*dend, rows);
  if (dstart) detail::ensure_shape(*dstart, rows);
  Scalar total = 0;
  for (Eigen::Index i = 0; i < rows; ++i) {
    if (detail::skip(pad, i)) continue;
    const Scalar gap = start_expected(i) - end_expected(i);
    if (gap > Scalar(0)) {
      total += gap;
      if (dstart) (*dstart)(i) += weight / n;
      if (dend) (*dend)(i) -= weight / n;
    }
  }
  return total / n;
}

/// The five unweighted loss terms.
struct LossTerms {
  std::array<double, 5> terms{};
  double total(const LossWeights& w) const {
    double t = 0.0;
    for (std::size_t k = 0; k < 5; ++k) t += w.w[k] * terms[k];
    return t;
  }
  LossTerms& operator+=(const LossTerms& o) {
    for (std::size_t k = 0; k < 5; ++k) terms[k] += o.terms[k];
    return *this;
  }
};

/// Decoder outputs for one sequence; rows are decoder steps.
template <typename Scalar>
struct HeadLogits {
  Mat<Scalar> type;   // T x 16
  Mat<Scalar> start;  // T x 96
  Mat<Scalar> end;    // T x 96
};

/// Targets aligned with decoder steps: type index (0..14 real, 15 EOS) at
/// every step; 0-based slot targets only where `time_pad` is false.
struct StepTargets {
  std::vector<int> type;
  std::vector<int> start;
  std::vector<int> end;
  std::vector<bool> type_pad;
  std::vector<bool> time_pad;
};

/// Row counts used to pool the loss over a batch.
struct LossNormalizers {
  double type_rows = 0.0;
  double time_rows = 0.0;
};

/// Weighted five-term loss for one sequence. Fills per-term values (already
/// divided by the pooled normalizers) and, when `grad` is given, the
/// gradient of the weighted total with respect to each head's logits.
template <typename Scalar>
Scalar total_loss(const HeadLogits<Scalar>& z, const StepTargets& t, const LossWeights& w,
                  const SoftLabelConfig& cfg, const LossNormalizers& norm, LossTerms* terms = nullptr,
                  HeadLogits<Scalar>* grad = nullptr) {
  const auto W = [&](std::size_t k) { return static_cast<Scalar>(w.w[k]); };
  const auto& type_pad = t.type_pad;
  const auto& time_pad = t.time_pad;

  LossTerms local;
  if (grad) {
    detail::ensure_shape(grad->type, z.type.rows(), z.type.cols());
    detail::ensure_shape(grad->start, z.start.rows(), z.start.cols());
    detail::ensure_shape(grad->end, z.end.rows(), z.end.cols());
  }
  auto live = [&](Mat<Scalar>& m, std::size_t k) { return grad && w.w[k] != 0.0 ? &m : nullptr; };
  local.terms[0] = loss_ce<Scalar>(z.type, t.type, type_pad, grad ? live(grad->type, 0) : nullptr, W(0),
                                   norm.type_rows);
  local.terms[1] = loss_soft<Scalar>(z.start, t.start, cfg, time_pad, grad ? live(grad->start, 1) : nullptr, W(1),
                                     norm.time_rows);
  local.terms[2] = loss_soft<Scalar>(z.end, t.end, cfg, time_pad, grad ? live(grad->end, 2) : nullptr, W(2),
                                     norm.time_rows);
  if (w.w[3] != 0.0 || w.w[4] != 0.0 || terms) {
    const Col<Scalar> es = expected_slot(z.start);
    const Col<Scalar> ee = expected_slot(z.end);
    Col<Scalar> des = Col<Scalar>::Zero(es.rows()), dee = Col<Scalar>::Zero(ee.rows());
    local.terms[3] = loss_order<Scalar>(ee, es, time_pad, &dee, &des, W(3), norm.time_rows);
    local.terms[4] = loss_seq<Scalar>(es, ee, time_pad, &des, &dee, W(4), norm.time_rows);
    if (grad && (w.w[3] != 0.0 || w.w[4] != 0.0)) {
      expected_slot_backward(z.start, des, grad->start);
      expected_slot_backward(z.end, dee, grad->end);
    }
  }
  if (terms) *terms += local;
  return static_cast<Scalar>(local.total(w));
}

}  // namespace deepact
