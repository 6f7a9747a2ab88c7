#pragma once

// Synthetic imaging world with planted class lesions, expert masks, two
// demographic axes and per-class corner shortcut markers.
//
// In-domain splits (train/val/test_id) place class c's marker with
// probability governed by shortcut_strength on samples that are positive
// for c and belong to the disadvantaged sex; test_ood draws every marker
// independently of label and demographics.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "egl/diffcore.hpp"
#include "egl/errors.hpp"
#include "egl/losses.hpp"
#include "egl/rng.hpp"

namespace egl {

enum class Sex : std::uint8_t { female = 0, male = 1 };
enum class AgeGroup : std::uint8_t { young = 0, old = 1 };

struct Demographics {
  Sex sex = Sex::female;
  AgeGroup age_group = AgeGroup::young;

  // Index into the 2x2 subgroup_mix table: sex * 2 + age_group.
  std::size_t cell() const noexcept {
    return static_cast<std::size_t>(sex) * 2 + static_cast<std::size_t>(age_group);
  }
  friend bool operator==(const Demographics&, const Demographics&) = default;
};

inline const char* to_string(Sex s) { return s == Sex::female ? "female" : "male"; }
inline const char* to_string(AgeGroup a) { return a == AgeGroup::young ? "young" : "old"; }

struct Sample {
  Grid image;                                        // image_size x image_size, in [0, 1]
  std::vector<std::uint8_t> labels;                  // per class, 0/1
  Demographics demographics;
  std::vector<std::optional<AttentionTarget>> masks;  // per class, image resolution
  std::vector<std::uint8_t> markers;                 // per class, shortcut marker present
  bool align_eligible = false;

  bool any_positive() const noexcept {
    for (auto l : labels) {
      if (l) return true;
    }
    return false;
  }

  friend bool operator==(const Sample&, const Sample&) = default;
};

using SampleSet = std::vector<Sample>;

struct Dataset {
  SampleSet train;
  SampleSet val;
  SampleSet test_id;
  SampleSet test_ood;

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

inline const std::array<const char*, 3>& default_class_names() {
  static const std::array<const char*, 3> names = {"nodule", "texture_band", "haze"};
  return names;
}

struct GeneratorConfig {
  std::size_t n_train = 2000;
  std::size_t n_val = 500;
  std::size_t n_test_id = 1000;
  std::size_t n_test_ood = 1000;
  std::size_t image_size = 32;
  std::size_t classes = 3;
  double shortcut_strength = 0.8;
  // Cell order: (female, young), (female, old), (male, young), (male, old).
  std::array<double, 4> subgroup_mix = {0.25, 0.25, 0.25, 0.25};
  double noise_sigma = 0.08;
  std::uint64_t seed = 0;

  // World constants, exposed for experimentation.
  double prevalence = 0.3;        // per-class positive rate
  double marker_rate = 0.15;      // independent marker rate (OOD and the 1 - rho branch)
  double lesion_contrast = 0.30;  // peak lesion intensity
  double disadvantaged_contrast = 0.8;  // lesion contrast multiplier for the disadvantaged sex
  Sex disadvantaged = Sex::female;

  void validate() const {
    if (n_train == 0 || n_val == 0 || n_test_id == 0 || n_test_ood == 0) {
      throw ConfigError("generator: split sizes must be >= 1");
    }
    if (classes == 0 || classes > 4) throw ConfigError("generator: classes must be in [1, 4]");
    if (image_size < 8 || image_size % 4 != 0) {
      throw ConfigError("generator: image_size must be a multiple of 4 and >= 8");
    }
    if (!(shortcut_strength >= 0.0 && shortcut_strength <= 1.0)) {
      throw ConfigError("generator: shortcut_strength must be in [0, 1]");
    }
    double total = 0.0;
    for (double m : subgroup_mix) {
      if (!(m >= 0.0)) throw ConfigError("generator: subgroup_mix entries must be >= 0");
      total += m;
    }
    if (std::abs(total - 1.0) > 1e-9) throw ConfigError("generator: subgroup_mix must sum to 1");
    if (!(noise_sigma >= 0.0)) throw ConfigError("generator: noise_sigma must be >= 0");
    if (!(prevalence > 0.0 && prevalence < 1.0)) throw ConfigError("generator: prevalence in (0, 1)");
    if (!(marker_rate >= 0.0 && marker_rate <= 1.0)) throw ConfigError("generator: marker_rate in [0, 1]");
  }

  std::size_t marker_size() const noexcept { return image_size / 8; }
};

namespace detail {

inline Demographics draw_demographics(Rng& rng, const std::array<double, 4>& mix) {
  const double u = rng.uniform();
  double acc = 0.0;
  std::size_t cell = 3;
  for (std::size_t i = 0; i < 4; ++i) {
    acc += mix[i];
    if (u < acc) {
      cell = i;
      break;
    }
  }
  while (mix[cell] == 0.0) --cell;  // float slack at the top end
  return Demographics{static_cast<Sex>(cell / 2), static_cast<AgeGroup>(cell % 2)};
}

inline void plant_blob(Rng& rng, Grid& img, Grid& mask, double amp) {
  const double s = static_cast<double>(img.rows());
  const double radius = rng.uniform(0.07, 0.11) * s;
  const double margin = radius + 1.0;
  // keep clear of the corner marker cells
  const double cy = rng.uniform(margin + s / 8.0, s - margin - s / 8.0);
  const double cx = rng.uniform(margin, s - margin);
  for (std::size_t r = 0; r < img.rows(); ++r) {
    for (std::size_t c = 0; c < img.cols(); ++c) {
      const double dy = static_cast<double>(r) + 0.5 - cy, dx = static_cast<double>(c) + 0.5 - cx;
      const double d2 = (dy * dy + dx * dx) / (radius * radius);
      if (d2 <= 1.0) {
        img(r, c) += amp * (1.0 - 0.5 * d2);
        mask(r, c) = 1.0;
      }
    }
  }
}

inline void plant_band(Rng& rng, Grid& img, Grid& mask, double amp) {
  const std::size_t s = img.rows();
  const std::size_t top = (2 * s) / 3;
  const std::size_t bottom = s - s / 8;  // above the bottom marker row
  const std::size_t width = s / 3 + static_cast<std::size_t>(rng.index(s / 6 + 1));
  const std::size_t left = static_cast<std::size_t>(rng.index(s - width + 1));
  for (std::size_t r = top; r < bottom; ++r) {
    for (std::size_t c = left; c < left + width; ++c) {
      img(r, c) += ((r + c) % 2 == 0) ? amp : -0.5 * amp;
      mask(r, c) = 1.0;
    }
  }
}

inline void plant_haze(Rng& rng, Grid& img, Grid& mask, double amp) {
  const double s = static_cast<double>(img.rows());
  const double ry = rng.uniform(0.15, 0.25) * s, rx = rng.uniform(0.15, 0.25) * s;
  const double cy = rng.uniform(ry + s / 8.0, s - ry - s / 8.0);
  const double cx = rng.uniform(rx, s - rx);
  for (std::size_t r = 0; r < img.rows(); ++r) {
    for (std::size_t c = 0; c < img.cols(); ++c) {
      const double dy = (static_cast<double>(r) + 0.5 - cy) / ry;
      const double dx = (static_cast<double>(c) + 0.5 - cx) / rx;
      if (dy * dy + dx * dx <= 1.0) {
        img(r, c) += 0.5 * amp;
        mask(r, c) = 1.0;
      }
    }
  }
}

// A rectangular lesion fallback for a fourth class.
inline void plant_bar(Rng& rng, Grid& img, Grid& mask, double amp) {
  const std::size_t s = img.rows();
  const std::size_t h = s / 8 + rng.index(s / 8 + 1), w = 2;
  const std::size_t top = s / 8 + rng.index(s - 2 * (s / 8) - h + 1);
  const std::size_t left = rng.index(s - w + 1);
  for (std::size_t r = top; r < top + h; ++r) {
    for (std::size_t c = left; c < left + w; ++c) {
      img(r, c) += amp;
      mask(r, c) = 1.0;
    }
  }
}

// Corner c: 0 top-left, 1 top-right, 2 bottom-left, 3 bottom-right.
inline void paint_marker(Grid& img, std::size_t corner, std::size_t size) {
  const std::size_t s = img.rows();
  const std::size_t r0 = corner < 2 ? 0 : s - size;
  const std::size_t c0 = corner % 2 == 0 ? 0 : s - size;
  for (std::size_t r = r0; r < r0 + size; ++r) {
    for (std::size_t c = c0; c < c0 + size; ++c) img(r, c) = 1.0;
  }
}

enum class Split { in_domain, out_of_domain };

inline Sample draw_sample(Rng& rng, const GeneratorConfig& cfg, Split split) {
  const std::size_t s = cfg.image_size;
  Sample smp;
  smp.demographics = draw_demographics(rng, cfg.subgroup_mix);
  const bool disadvantaged = smp.demographics.sex == cfg.disadvantaged;

  // Background: sex shifts the mean level, age adds a vertical gradient.
  const double base = smp.demographics.sex == Sex::female ? 0.30 : 0.38;
  const double slope = smp.demographics.age_group == AgeGroup::old ? 0.08 : 0.0;
  smp.image = Grid(s, s);
  for (std::size_t r = 0; r < s; ++r) {
    for (std::size_t c = 0; c < s; ++c) {
      smp.image(r, c) = base + slope * static_cast<double>(r) / static_cast<double>(s) +
                        cfg.noise_sigma * rng.normal();
    }
  }

  const double amp = cfg.lesion_contrast * (disadvantaged ? cfg.disadvantaged_contrast : 1.0);
  smp.labels.assign(cfg.classes, 0);
  smp.markers.assign(cfg.classes, 0);
  smp.masks.assign(cfg.classes, std::nullopt);
  for (std::size_t c = 0; c < cfg.classes; ++c) {
    const bool positive = rng.bernoulli(cfg.prevalence);
    smp.labels[c] = positive ? 1 : 0;
    if (positive) {
      Grid mask(s, s);
      switch (c) {
        case 0: plant_blob(rng, smp.image, mask, amp); break;
        case 1: plant_band(rng, smp.image, mask, amp); break;
        case 2: plant_haze(rng, smp.image, mask, amp); break;
        default: plant_bar(rng, smp.image, mask, amp); break;
      }
      smp.masks[c] = AttentionTarget{std::move(mask)};
    }
    const double u = rng.uniform();
    const double v = rng.uniform();
    bool marker;
    if (split == Split::in_domain && u < cfg.shortcut_strength) {
      marker = positive && disadvantaged;
    } else {
      marker = v < cfg.marker_rate;
    }
    smp.markers[c] = marker ? 1 : 0;
  }

  for (double& v : smp.image.values()) v = std::clamp(v, 0.0, 1.0);
  for (std::size_t c = 0; c < cfg.classes; ++c) {
    if (smp.markers[c]) paint_marker(smp.image, c, cfg.marker_size());
  }
  return smp;
}

}  // namespace detail

inline Dataset generate(const GeneratorConfig& cfg) {
  cfg.validate();
  auto split = [&](std::size_t n, std::uint64_t tag, detail::Split kind) {
    Rng rng(derive_seed({cfg.seed, tag}));
    SampleSet out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) out.push_back(detail::draw_sample(rng, cfg, kind));
    return out;
  };
  Dataset d;
  d.train = split(cfg.n_train, 1, detail::Split::in_domain);
  d.val = split(cfg.n_val, 2, detail::Split::in_domain);
  d.test_id = split(cfg.n_test_id, 3, detail::Split::in_domain);
  d.test_ood = split(cfg.n_test_ood, 4, detail::Split::out_of_domain);
  return d;
}

// Pearson (phi) correlation between marker presence and label for one class;
// 0 when either indicator is constant.
inline double marker_label_correlation(const SampleSet& set, std::size_t class_id) {
  double n = 0, sx = 0, sy = 0, sxy = 0;
  for (const auto& s : set) {
    const double x = s.markers.at(class_id), y = s.labels.at(class_id);
    n += 1;
    sx += x;
    sy += y;
    sxy += x * y;
  }
  if (n == 0) return 0.0;
  const double cov = sxy / n - (sx / n) * (sy / n);
  const double vx = sx / n * (1 - sx / n), vy = sy / n * (1 - sy / n);
  if (vx <= 0 || vy <= 0) return 0.0;
  return cov / std::sqrt(vx * vy);
}

inline std::array<std::size_t, 4> subgroup_counts(const SampleSet& set) {
  std::array<std::size_t, 4> counts{};
  for (const auto& s : set) ++counts[s.demographics.cell()];
  return counts;
}

// Max-pool a binary image-resolution mask onto the attention grid.
inline AttentionTarget downsample_mask(const AttentionTarget& t, std::size_t grid_side) {
  const Grid& m = t.mask;
  if (grid_side == 0 || m.rows() % grid_side != 0 || m.cols() % grid_side != 0) {
    throw DimensionError("downsample_mask: " + m.shape() + " not divisible into " +
                         std::to_string(grid_side) + "x" + std::to_string(grid_side));
  }
  const std::size_t fr = m.rows() / grid_side, fc = m.cols() / grid_side;
  Grid out(grid_side, grid_side);
  for (std::size_t r = 0; r < m.rows(); ++r) {
    for (std::size_t c = 0; c < m.cols(); ++c) {
      if (m(r, c) != 0.0) out(r / fr, c / fc) = 1.0;
    }
  }
  return AttentionTarget{std::move(out)};
}

struct RandomShapeBounds {
  double min_area_fraction = 0.05;
  double max_area_fraction = 0.40;
};

// A random ellipse or rectangle, fully inside the grid, whose pixel count lies
// in [ceil(0.05 n), ceil(0.40 n)] for n = rows * cols. Same (seed, epoch) gives
// the same mask.
inline AttentionTarget random_attention(std::uint64_t seed, std::uint64_t epoch, std::size_t rows,
                                        std::size_t cols, RandomShapeBounds bounds = {}) {
  if (rows < 2 || cols < 2) {
    throw ConfigError("random_attention: grid " + std::to_string(rows) + "x" + std::to_string(cols) +
                      " is smaller than 2x2");
  }
  const double n = static_cast<double>(rows * cols);
  const auto lo = static_cast<std::size_t>(std::ceil(bounds.min_area_fraction * n));
  const auto hi = static_cast<std::size_t>(std::ceil(bounds.max_area_fraction * n));
  if (lo == 0 || lo > hi) throw ConfigError("random_attention: empty area range");

  Rng rng(derive_seed({seed, epoch, 0x72616e64ULL}));
  for (int attempt = 0; attempt < 100000; ++attempt) {
    Grid mask(rows, cols);
    std::size_t count = 0;
    if (rng.bernoulli(0.5)) {
      const std::size_t h = 1 + rng.index(rows), w = 1 + rng.index(cols);
      if (h * w < lo || h * w > hi) continue;
      const std::size_t top = rng.index(rows - h + 1), left = rng.index(cols - w + 1);
      for (std::size_t r = top; r < top + h; ++r) {
        for (std::size_t c = left; c < left + w; ++c) mask(r, c) = 1.0;
      }
      count = h * w;
    } else {
      const double ry = rng.uniform(0.5, static_cast<double>(rows) / 2.0);
      const double rx = rng.uniform(0.5, static_cast<double>(cols) / 2.0);
      const double cy = rng.uniform(ry, static_cast<double>(rows) - ry);
      const double cx = rng.uniform(rx, static_cast<double>(cols) - rx);
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
          const double dy = (static_cast<double>(r) + 0.5 - cy) / ry;
          const double dx = (static_cast<double>(c) + 0.5 - cx) / rx;
          if (dy * dy + dx * dx <= 1.0) {
            mask(r, c) = 1.0;
            ++count;
          }
        }
      }
      if (count < lo || count > hi) continue;
    }
    return AttentionTarget{std::move(mask)};
  }
  throw ConfigError("random_attention: could not place a shape within the area bounds");
}

}  // namespace egl
