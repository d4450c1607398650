#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <vector>

#include "lcps/errors.hpp"
#include "lcps/tensor.hpp"

namespace lcps {

/// Weights of the total training objective. alpha2/alpha3 default to the
/// heatmap/offset emphasis used by the reference configuration.
struct LossWeights {
  double a1 = 1.0;    // semantic (cross-entropy + Lovasz)
  double a2 = 100.0;  // BEV center heatmap MSE
  double a3 = 10.0;   // BEV offset L1
  double a4 = 1.0;    // foreground-gate BCE
  double a5 = 1.0;    // pointly-supervised 2D loss
};

/// Probabilities are clamped to [kProbClamp, 1-kProbClamp] before any log.
inline constexpr double kProbClamp = 1e-7;

namespace detail {

/// log softmax(logits)[label] with max-subtraction, accumulated in double.
inline double log_softmax_at(const float* logits, std::size_t m, std::size_t label) {
  double mx = logits[0];
  for (std::size_t j = 1; j < m; ++j) mx = std::max(mx, static_cast<double>(logits[j]));
  double denom = 0.0;
  for (std::size_t j = 0; j < m; ++j) denom += std::exp(static_cast<double>(logits[j]) - mx);
  return (static_cast<double>(logits[label]) - mx) - std::log(denom);
}

inline void check_labels(const std::vector<std::int32_t>& labels, std::size_t m,
                         const char* what) {
  for (std::int32_t y : labels)
    if (y < 0 || static_cast<std::size_t>(y) >= m)
      throw label_error(std::string(what) + ": label out of range");
}

}  // namespace detail

/// Mean negative log-softmax at the true class. logits is n x m row-major.
/// Returns 0 for n = 0.
inline double ce_loss(const std::vector<float>& logits, std::size_t m,
                      const std::vector<std::int32_t>& labels) {
  if (m < 1) throw dimension_error("ce_loss: empty class axis");
  if (logits.size() != labels.size() * m)
    throw dimension_error("ce_loss: logits/labels size mismatch");
  detail::check_labels(labels, m, "ce_loss");
  const std::size_t n = labels.size();
  if (n == 0) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    total -= detail::log_softmax_at(logits.data() + i * m, m,
                                    static_cast<std::size_t>(labels[i]));
  return total / static_cast<double>(n);
}

/// d(ce_loss)/d(logits): (softmax - onehot) / n, row-major n x m.
inline std::vector<double> ce_loss_grad(const std::vector<float>& logits,
                                        std::size_t m,
                                        const std::vector<std::int32_t>& labels) {
  if (logits.size() != labels.size() * m)
    throw dimension_error("ce_loss_grad: logits/labels size mismatch");
  detail::check_labels(labels, m, "ce_loss_grad");
  const std::size_t n = labels.size();
  std::vector<double> grad(logits.size(), 0.0);
  if (n == 0) return grad;
  for (std::size_t i = 0; i < n; ++i) {
    const float* row = logits.data() + i * m;
    double mx = row[0];
    for (std::size_t j = 1; j < m; ++j) mx = std::max(mx, static_cast<double>(row[j]));
    double denom = 0.0;
    for (std::size_t j = 0; j < m; ++j) denom += std::exp(static_cast<double>(row[j]) - mx);
    for (std::size_t j = 0; j < m; ++j) {
      double p = std::exp(static_cast<double>(row[j]) - mx) / denom;
      grad[i * m + j] = (p - (labels[i] == static_cast<std::int32_t>(j) ? 1.0 : 0.0)) /
                        static_cast<double>(n);
    }
  }
  return grad;
}

namespace detail {

/// Gradient of the Jaccard extension for sorted margin errors
/// (Lovasz-Softmax, applied to one class).
inline std::vector<double> lovasz_jaccard_grad(const std::vector<double>& gt_sorted) {
  const std::size_t n = gt_sorted.size();
  const double gts = std::accumulate(gt_sorted.begin(), gt_sorted.end(), 0.0);
  std::vector<double> grad(n, 0.0);
  double inter = gts;
  double uni = gts;
  double prev = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    inter -= gt_sorted[i];
    uni += 1.0 - gt_sorted[i];
    const double jac = 1.0 - inter / uni;
    grad[i] = jac - prev;
    prev = jac;
  }
  return grad;
}

}  // namespace detail

/// Multi-class Lovasz-Softmax over the classes present in the ground truth.
/// Rows of `probs` (n x m) must sum to 1 within 1e-6.
inline double lovasz_loss(const std::vector<float>& probs, std::size_t m,
                          const std::vector<std::int32_t>& labels) {
  if (m < 1) throw dimension_error("lovasz_loss: empty class axis");
  if (probs.size() != labels.size() * m)
    throw dimension_error("lovasz_loss: probs/labels size mismatch");
  detail::check_labels(labels, m, "lovasz_loss");
  const std::size_t n = labels.size();
  if (n == 0) return 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double row_sum = 0.0;
    for (std::size_t j = 0; j < m; ++j) row_sum += probs[i * m + j];
    if (std::abs(row_sum - 1.0) > 1e-6)
      throw data_error("lovasz_loss: row is not a probability vector");
  }

  std::vector<bool> present(m, false);
  for (std::int32_t y : labels) present[static_cast<std::size_t>(y)] = true;

  double total = 0.0;
  std::size_t n_classes = 0;
  std::vector<double> errors(n), gt(n);
  std::vector<std::size_t> order(n);
  for (std::size_t c = 0; c < m; ++c) {
    if (!present[c]) continue;
    for (std::size_t i = 0; i < n; ++i) {
      const bool fg = labels[i] == static_cast<std::int32_t>(c);
      const double p = probs[i * m + c];
      gt[i] = fg ? 1.0 : 0.0;
      errors[i] = fg ? 1.0 - p : p;
    }
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return errors[a] > errors[b];
    });
    std::vector<double> errors_sorted(n), gt_sorted(n);
    for (std::size_t i = 0; i < n; ++i) {
      errors_sorted[i] = errors[order[i]];
      gt_sorted[i] = gt[order[i]];
    }
    const std::vector<double> grad = detail::lovasz_jaccard_grad(gt_sorted);
    double dot = 0.0;
    for (std::size_t i = 0; i < n; ++i) dot += errors_sorted[i] * grad[i];
    total += dot;
    ++n_classes;
  }
  return total / static_cast<double>(n_classes);
}

/// Mean squared difference over the whole heatmap.
inline double mse_heatmap_loss(const Tensor& pred, const Tensor& target) {
  if (!pred.same_shape(target))
    throw dimension_error("mse_heatmap_loss: shape mismatch");
  double total = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = static_cast<double>(pred[i]) - static_cast<double>(target[i]);
    total += d * d;
  }
  return pred.size() == 0 ? 0.0 : total / static_cast<double>(pred.size());
}

/// Mean absolute difference over the channels of masked cells; 0 when the
/// mask is empty. pred/target are H x W x 2, mask is H*W row-major.
inline double l1_offset_loss(const Tensor& pred, const Tensor& target,
                             const std::vector<bool>& mask) {
  if (!pred.same_shape(target)) throw dimension_error("l1_offset_loss: shape mismatch");
  pred.require_rank(3, "l1_offset_loss");
  const std::size_t cells = static_cast<std::size_t>(pred.dim(0)) * pred.dim(1);
  const std::size_t ch = pred.dim(2);
  if (mask.size() != cells) throw dimension_error("l1_offset_loss: mask size mismatch");
  double total = 0.0;
  std::size_t n = 0;
  for (std::size_t cell = 0; cell < cells; ++cell) {
    if (!mask[cell]) continue;
    for (std::size_t c = 0; c < ch; ++c) {
      total += std::abs(static_cast<double>(pred[cell * ch + c]) -
                        static_cast<double>(target[cell * ch + c]));
      ++n;
    }
  }
  return n == 0 ? 0.0 : total / static_cast<double>(n);
}

/// Mean binary cross-entropy with probability clamping.
inline double bce_fog_loss(const Tensor& pred, const Tensor& target) {
  if (!pred.same_shape(target)) throw dimension_error("bce_fog_loss: shape mismatch");
  double total = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double p =
        std::clamp(static_cast<double>(pred[i]), kProbClamp, 1.0 - kProbClamp);
    const double t = static_cast<double>(target[i]);
    total -= t * std::log(p) + (1.0 - t) * std::log(1.0 - p);
  }
  return pred.size() == 0 ? 0.0 : total / static_cast<double>(pred.size());
}

/// d(bce_fog_loss)/d(pred). Zero where the clamp is active.
inline std::vector<double> bce_fog_loss_grad(const Tensor& pred, const Tensor& target) {
  if (!pred.same_shape(target)) throw dimension_error("bce_fog_loss_grad: shape mismatch");
  std::vector<double> grad(pred.size(), 0.0);
  const double n = static_cast<double>(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double p = static_cast<double>(pred[i]);
    if (p <= kProbClamp || p >= 1.0 - kProbClamp) continue;
    const double t = static_cast<double>(target[i]);
    grad[i] = (p - t) / (p * (1.0 - p)) / n;
  }
  return grad;
}

struct LossTerms {
  double ce = 0.0;
  double lovasz = 0.0;
  double mse = 0.0;
  double l1 = 0.0;
  double bce = 0.0;
  double l2d = 0.0;
};

/// a1*(CE + Lovasz) + a2*MSE + a3*L1 + a4*BCE + a5*L2D.
inline double total_loss(const LossTerms& t, const LossWeights& w = LossWeights{}) {
  return w.a1 * (t.ce + t.lovasz) + w.a2 * t.mse + w.a3 * t.l1 + w.a4 * t.bce +
         w.a5 * t.l2d;
}

}  // namespace lcps
