#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "egl/diffcore.hpp"
#include "egl/errors.hpp"

namespace egl {

struct DiceFpConfig {
  double alpha = 1.0;
  double epsilon = 1e-6;
  double w_fp = 2.0;

  void validate() const {
    if (!(alpha >= 0.0)) throw ConfigError("dice: alpha must be >= 0");
    if (!(epsilon > 0.0)) throw ConfigError("dice: epsilon must be > 0");
    if (!(w_fp >= 1.0)) throw ConfigError("dice: w_fp must be >= 1");
  }
};

// Binary expert attention mask.
struct AttentionTarget {
  Grid mask;

  std::size_t support() const noexcept {
    std::size_t n = 0;
    for (double v : mask.values()) n += v != 0.0;
    return n;
  }

  bool is_binary() const noexcept {
    for (double v : mask.values()) {
      if (v != 0.0 && v != 1.0) return false;
    }
    return true;
  }

  friend bool operator==(const AttentionTarget&, const AttentionTarget&) = default;
};

struct LossAndGrad {
  double loss = 0.0;
  Grid grad;
};

// Dice overlap with false-positive suppression. Sums run over every pixel of
// the map; FP_i = P_i (1 - Y_i) is weighted by w_fp in the denominator.
//
//   loss = 1 - (2 sum Y P + alpha + eps) / (sum (Y + P) + (w_fp - 1) sum FP + alpha + eps)
inline LossAndGrad dice_fp_loss(const AttentionTarget& target, const Grid& pred,
                                const DiceFpConfig& cfg = {}) {
  require_same_shape(target.mask, pred, "dice_fp_loss");
  cfg.validate();
  if (!target.is_binary()) throw DomainError("dice_fp_loss: mask entries must be 0 or 1");
  for (double p : pred.values()) {
    if (!(p >= 0.0 && p <= 1.0)) {
      throw DomainError("dice_fp_loss: prediction " + std::to_string(p) + " outside [0, 1]");
    }
  }
  if (target.support() == 0) {
    throw PreconditionError("dice_fp_loss: empty mask (negative samples carry no alignment loss)");
  }

  const auto y = target.mask.values();
  const auto p = pred.values();
  double inter = 0.0, total = 0.0, fp = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    inter += y[i] * p[i];
    total += y[i] + p[i];
    fp += p[i] * (1.0 - y[i]);
  }
  const double smooth = cfg.alpha + cfg.epsilon;
  const double num = 2.0 * inter + smooth;
  const double den = total + (cfg.w_fp - 1.0) * fp + smooth;

  LossAndGrad out{1.0 - num / den, Grid(pred.rows(), pred.cols())};
  const double den2 = den * den;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double d_num = 2.0 * y[i];
    const double d_den = 1.0 + (cfg.w_fp - 1.0) * (1.0 - y[i]);
    out.grad[i] = -(d_num * den - num * d_den) / den2;
  }
  return out;
}

struct CrossEntropyResult {
  double loss = 0.0;
  std::vector<double> grad;  // d loss / d logit
};

// Sigmoid cross-entropy summed over classes, evaluated in logit form:
// -log sigmoid(z) = softplus(-z), -log(1 - sigmoid(z)) = softplus(z).
inline CrossEntropyResult cross_entropy(std::span<const double> labels, std::span<const double> logits) {
  if (labels.size() != logits.size()) {
    throw DimensionError("cross_entropy: " + std::to_string(labels.size()) + " labels vs " +
                         std::to_string(logits.size()) + " logits");
  }
  CrossEntropyResult r;
  r.grad.resize(logits.size());
  for (std::size_t c = 0; c < logits.size(); ++c) {
    const double y = labels[c], z = logits[c];
    if (y != 0.0 && y != 1.0) throw DomainError("cross_entropy: labels must be 0 or 1");
    r.loss += y * softplus(-z) + (1.0 - y) * softplus(z);
    r.grad[c] = sigmoid(z) - y;
  }
  return r;
}

inline double total_loss(double ce, double al) {
  const double t = ce + al;
  if (!std::isfinite(t)) throw EvaluationError("total_loss: non-finite loss term");
  return t;
}

}  // namespace egl
