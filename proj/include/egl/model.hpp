#pragma once

// Single-layer class-conditioned cross-attention classifier.
//
//   tokens   v_j = tanh(flatten(patch_j) * patch_proj + patch_bias) (N x D)
//   query    q   = class_embed[c] * q_proj                          (1 x D)
//   scores   s_j = (v_j * k_proj) . q / sqrt(D)
//   raw      a   = softmax(s), reshaped to grid_side x grid_side
//   aligned  P_j = sigmoid(gamma * N * a_j + beta)
//   logit    z   = (sum_j a_j v_j) * cls_w + cls_b
//
// The score is evaluated as v_j . (k_proj * q^T), which is the same bilinear
// form without materializing the keys.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "egl/diffcore.hpp"
#include "egl/errors.hpp"
#include "egl/rng.hpp"

namespace egl {

struct ModelConfig {
  std::size_t image_size = 32;
  std::size_t patch_size = 4;
  std::size_t embed_dim = 16;
  std::size_t num_classes = 3;

  void validate() const {
    if (image_size == 0 || patch_size == 0 || embed_dim == 0 || num_classes == 0) {
      throw ConfigError("model config: sizes must be positive");
    }
    if (image_size % patch_size != 0) {
      throw ConfigError("model config: patch_size " + std::to_string(patch_size) +
                        " does not divide image_size " + std::to_string(image_size));
    }
  }

  std::size_t grid_side() const noexcept { return image_size / patch_size; }
  std::size_t num_tokens() const noexcept { return grid_side() * grid_side(); }
  std::size_t patch_dim() const noexcept { return patch_size * patch_size; }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// All learnable weights. Gradients use the same type.
struct ModelParams {
  Grid patch_proj;   // patch_dim x D
  Grid patch_bias;   // 1 x D
  Grid class_embed;  // C x D
  Grid q_proj;       // D x D
  Grid k_proj;       // D x D
  Grid aligner;      // 1 x 2: gamma, beta
  Grid cls_w;        // D x 1
  Grid cls_b;        // 1 x 1

  static ModelParams zeros(const ModelConfig& cfg) {
    const std::size_t d = cfg.embed_dim;
    return ModelParams{Grid(cfg.patch_dim(), d), Grid(1, d),          Grid(cfg.num_classes, d),
                       Grid(d, d),               Grid(d, d),          Grid(1, 2),
                       Grid(d, 1),               Grid(1, 1)};
  }

  template <typename F>
  void for_each_field(F&& f) {
    f("patch_proj", patch_proj);
    f("patch_bias", patch_bias);
    f("class_embed", class_embed);
    f("q_proj", q_proj);
    f("k_proj", k_proj);
    f("aligner", aligner);
    f("cls_w", cls_w);
    f("cls_b", cls_b);
  }

  template <typename F>
  void for_each_field(F&& f) const {
    const_cast<ModelParams*>(this)->for_each_field(
        [&](const char* name, Grid& g) { f(name, static_cast<const Grid&>(g)); });
  }

  std::size_t count() const {
    std::size_t n = 0;
    for_each_field([&](const char*, const Grid& g) { n += g.size(); });
    return n;
  }

  std::vector<double> flatten() const {
    std::vector<double> out;
    out.reserve(count());
    for_each_field([&](const char*, const Grid& g) {
      out.insert(out.end(), g.values().begin(), g.values().end());
    });
    return out;
  }

  void assign(std::span<const double> flat) {
    if (flat.size() != count()) {
      throw DimensionError("params assign: " + std::to_string(flat.size()) + " values for " +
                           std::to_string(count()) + " parameters");
    }
    std::size_t off = 0;
    for_each_field([&](const char*, Grid& g) {
      std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(off), g.size(), g.values().begin());
      off += g.size();
    });
  }

  bool matches(const ModelConfig& cfg) const {
    std::vector<std::string> mine, expected;
    for_each_field([&](const char*, const Grid& g) { mine.push_back(g.shape()); });
    zeros(cfg).for_each_field([&](const char*, const Grid& g) { expected.push_back(g.shape()); });
    return mine == expected;
  }

  friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

inline ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ModelParams p = ModelParams::zeros(cfg);
  Rng rng(derive_seed({seed, 0x6d6f64656cULL}));
  auto fill_uniform = [&](Grid& g, std::size_t fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (double& v : g.values()) v = rng.uniform(-bound, bound);
  };
  fill_uniform(p.patch_proj, cfg.patch_dim());
  fill_uniform(p.class_embed, cfg.embed_dim);
  fill_uniform(p.q_proj, cfg.embed_dim);
  fill_uniform(p.k_proj, cfg.embed_dim);
  fill_uniform(p.cls_w, cfg.embed_dim);
  p.aligner[0] = 1.0;  // gamma
  p.aligner[1] = 0.0;  // beta
  return p;
}

// Per-class model output.
struct Prediction {
  Grid raw_attention;  // grid_side x grid_side, sums to 1
  Grid aligned_map;    // grid_side x grid_side, entries in [0, 1]
  double logit = 0.0;
  double prob = 0.5;
};

struct ClassTrace {
  std::size_t class_id = 0;
  std::vector<double> query;  // q
  std::vector<double> key_q;  // k_proj * q^T
  std::vector<double> pooled;
  Prediction pred;
};

// Cached forward intermediates needed by backward().
struct ForwardPass {
  Grid patches;  // N x patch_dim
  Grid tokens;   // N x D
  std::vector<ClassTrace> classes;

  const Prediction& prediction(std::size_t i = 0) const { return classes.at(i).pred; }
};

// Upstream gradient of the loss for one class: d/d aligned_map (may be left
// empty for zero) and d/d logit.
struct ClassUpstream {
  Grid d_aligned;
  double d_logit = 0.0;
};

inline Grid extract_patches(const ModelConfig& cfg, const Grid& image) {
  if (image.rows() != cfg.image_size || image.cols() != cfg.image_size) {
    throw DimensionError("forward: image " + image.shape() + " but model expects " +
                         std::to_string(cfg.image_size) + "x" + std::to_string(cfg.image_size));
  }
  const std::size_t gs = cfg.grid_side(), ps = cfg.patch_size;
  Grid patches(cfg.num_tokens(), cfg.patch_dim());
  for (std::size_t gr = 0; gr < gs; ++gr) {
    for (std::size_t gc = 0; gc < gs; ++gc) {
      const std::size_t tok = gr * gs + gc;
      for (std::size_t r = 0; r < ps; ++r) {
        for (std::size_t c = 0; c < ps; ++c) {
          patches(tok, r * ps + c) = image(gr * ps + r, gc * ps + c);
        }
      }
    }
  }
  return patches;
}

namespace detail {

inline ClassTrace forward_class(const ModelConfig& cfg, const ModelParams& p, const Grid& tokens,
                                std::size_t class_id) {
  const std::size_t d = cfg.embed_dim, n = cfg.num_tokens(), gs = cfg.grid_side();
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  ClassTrace t;
  t.class_id = class_id;
  t.query.assign(d, 0.0);
  for (std::size_t k = 0; k < d; ++k) {
    const double e = p.class_embed(class_id, k);
    for (std::size_t j = 0; j < d; ++j) t.query[j] += e * p.q_proj(k, j);
  }
  t.key_q.assign(d, 0.0);
  for (std::size_t m = 0; m < d; ++m) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += p.k_proj(m, j) * t.query[j];
    t.key_q[m] = s;
  }
  std::vector<double> scores(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t m = 0; m < d; ++m) s += tokens(i, m) * t.key_q[m];
    scores[i] = s * scale;
  }
  const std::vector<double> attn = softmax_row(scores);
  t.pred.raw_attention = Grid(gs, gs, attn);
  t.pred.aligned_map = Grid(gs, gs);
  const double gamma = p.aligner[0], beta = p.aligner[1];
  for (std::size_t i = 0; i < n; ++i) {
    t.pred.aligned_map[i] = sigmoid(gamma * static_cast<double>(n) * attn[i] + beta);
  }
  t.pooled.assign(d, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t m = 0; m < d; ++m) t.pooled[m] += attn[i] * tokens(i, m);
  }
  double z = p.cls_b[0];
  for (std::size_t m = 0; m < d; ++m) z += t.pooled[m] * p.cls_w[m];
  t.pred.logit = z;
  t.pred.prob = sigmoid(z);
  return t;
}

}  // namespace detail

// Forward pass for the listed classes (all classes when `class_ids` is empty).
inline ForwardPass forward_classes(const ModelConfig& cfg, const ModelParams& p, const Grid& image,
                                   std::span<const std::size_t> class_ids = {}) {
  ForwardPass pass;
  pass.patches = extract_patches(cfg, image);
  pass.tokens = affine(pass.patches, p.patch_proj, p.patch_bias);
  for (double& v : pass.tokens.values()) v = std::tanh(v);
  if (class_ids.empty()) {
    for (std::size_t c = 0; c < cfg.num_classes; ++c) {
      pass.classes.push_back(detail::forward_class(cfg, p, pass.tokens, c));
    }
  } else {
    for (std::size_t c : class_ids) {
      if (c >= cfg.num_classes) {
        throw DimensionError("forward: class " + std::to_string(c) + " out of range for " +
                             std::to_string(cfg.num_classes) + " classes");
      }
      pass.classes.push_back(detail::forward_class(cfg, p, pass.tokens, c));
    }
  }
  return pass;
}

inline ForwardPass forward(const ModelConfig& cfg, const ModelParams& p, const Grid& image,
                           std::size_t class_id) {
  const std::size_t ids[] = {class_id};
  return forward_classes(cfg, p, image, ids);
}

// Accumulates parameter gradients into `grads` given one upstream per traced
// class (same order as pass.classes).
inline void backward(const ModelConfig& cfg, const ModelParams& p, const ForwardPass& pass,
                     std::span<const ClassUpstream> upstream, ModelParams& grads) {
  if (pass.tokens.empty() || pass.classes.empty()) {
    throw UsageError("backward: no forward state");
  }
  if (upstream.size() != pass.classes.size()) {
    throw DimensionError("backward: " + std::to_string(upstream.size()) + " upstream gradients for " +
                         std::to_string(pass.classes.size()) + " traced classes");
  }
  const std::size_t d = cfg.embed_dim, n = cfg.num_tokens();
  const double nd = static_cast<double>(n);
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  const double gamma = p.aligner[0];
  Grid d_tokens(n, d);
  bool any = false;

  for (std::size_t ci = 0; ci < pass.classes.size(); ++ci) {
    const ClassTrace& t = pass.classes[ci];
    const ClassUpstream& up = upstream[ci];
    const bool has_map = !up.d_aligned.empty();
    if (has_map) require_same_shape(up.d_aligned, t.pred.aligned_map, "backward: aligned-map gradient");
    if (up.d_logit == 0.0 && (!has_map || std::all_of(up.d_aligned.values().begin(),
                                                     up.d_aligned.values().end(),
                                                     [](double v) { return v == 0.0; }))) {
      continue;
    }
    any = true;
    const auto attn = t.pred.raw_attention.values();

    // classifier head
    grads.cls_b[0] += up.d_logit;
    std::vector<double> d_pooled(d);
    for (std::size_t m = 0; m < d; ++m) {
      grads.cls_w[m] += t.pooled[m] * up.d_logit;
      d_pooled[m] = up.d_logit * p.cls_w[m];
    }

    // aligner head
    std::vector<double> d_attn(n, 0.0);
    if (has_map) {
      double d_gamma = 0.0, d_beta = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double pi = t.pred.aligned_map[i];
        const double d_pre = up.d_aligned[i] * sigmoid_grad_from_output(pi);
        d_gamma += d_pre * nd * attn[i];
        d_beta += d_pre;
        d_attn[i] = d_pre * gamma * nd;
      }
      grads.aligner[0] += d_gamma;
      grads.aligner[1] += d_beta;
    }

    // pooling
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (std::size_t m = 0; m < d; ++m) {
        s += d_pooled[m] * pass.tokens(i, m);
        d_tokens(i, m) += attn[i] * d_pooled[m];
      }
      d_attn[i] += s;
    }

    const std::vector<double> d_scores = softmax_row_backward(attn, d_attn);

    // scores -> key_q and tokens
    std::vector<double> d_key_q(d, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      const double ds = d_scores[i] * scale;
      for (std::size_t m = 0; m < d; ++m) {
        d_key_q[m] += ds * pass.tokens(i, m);
        d_tokens(i, m) += ds * t.key_q[m];
      }
    }

    // key_q = k_proj * q^T
    std::vector<double> d_query(d, 0.0);
    for (std::size_t m = 0; m < d; ++m) {
      for (std::size_t j = 0; j < d; ++j) {
        grads.k_proj(m, j) += d_key_q[m] * t.query[j];
        d_query[j] += d_key_q[m] * p.k_proj(m, j);
      }
    }

    // q = class_embed[c] * q_proj
    for (std::size_t k = 0; k < d; ++k) {
      const double e = p.class_embed(t.class_id, k);
      double de = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        grads.q_proj(k, j) += e * d_query[j];
        de += d_query[j] * p.q_proj(k, j);
      }
      grads.class_embed(t.class_id, k) += de;
    }
  }

  if (!any) return;
  for (std::size_t i = 0; i < d_tokens.size(); ++i) d_tokens[i] *= 1.0 - pass.tokens[i] * pass.tokens[i];
  const AffineGrads g = affine_backward(pass.patches, p.patch_proj, d_tokens, /*need_dx=*/false);
  for (std::size_t i = 0; i < g.dw.size(); ++i) grads.patch_proj[i] += g.dw[i];
  for (std::size_t i = 0; i < g.db.size(); ++i) grads.patch_bias[i] += g.db[i];
}

}  // namespace egl
