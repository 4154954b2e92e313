#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <functional>
#include <string>

#include <unistd.h>

#include "mvfcn/graph.hpp"
#include "mvfcn/io.hpp"
#include "mvfcn/rng.hpp"
#include "mvfcn/train.hpp"

namespace testing {

using namespace mvfcn;

template <typename T>
BasicTensor<T> random_tensor(const Shape& s, Rng& rng, double lo = -1.0, double hi = 1.0) {
  BasicTensor<T> t(s);
  for (auto& v : t.data()) v = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

template <typename T>
double dot(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  return s;
}

inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

/// Largest relative error between an analytic gradient and central
/// differences of f over every coordinate of `x` (mutated and restored).
inline double fd_check(std::span<double> x, std::span<const double> analytic,
                       const std::function<double()>& f, double h = 1e-6,
                       double skip_below = 0.0) {
  double worst = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + h;
    const double up = f();
    x[i] = saved - h;
    const double down = f();
    x[i] = saved;
    const double numeric = (up - down) / (2 * h);
    if (std::abs(numeric) < skip_below && std::abs(analytic[i]) < skip_below) continue;
    // Tiny gradients compare absolutely.
    const double err = std::max(std::abs(numeric), std::abs(analytic[i])) < 1e-6
                           ? std::abs(numeric - analytic[i])
                           : rel_err(numeric, analytic[i]);
    worst = std::max(worst, err);
  }
  return worst;
}

/// Within-class variance of the split {0..t} | {t+1..255}, computed
/// directly in two passes; -1 when a class is empty.
inline long double within_class(const std::array<std::uint64_t, 256>& h, int t) {
  long double total = 0;
  for (auto c : h) total += static_cast<long double>(c);
  long double acc = 0;
  for (auto [lo, hi] : {std::pair{0, t}, std::pair{t + 1, 255}}) {
    long double n = 0, mean = 0;
    for (int l = lo; l <= hi; ++l) {
      n += static_cast<long double>(h[l]);
      mean += static_cast<long double>(h[l]) * (l / 255.0L);
    }
    if (n == 0) return -1;  // not a split
    mean /= n;
    long double var = 0;
    for (int l = lo; l <= hi; ++l) var += static_cast<long double>(h[l]) * std::pow(l / 255.0L - mean, 2);
    var /= n;
    acc += (n / total) * var;
  }
  return acc;
}

/// Exhaustive minimizer; ties keep the lower level.
inline int brute_force_level(const std::array<std::uint64_t, 256>& h) {
  int best = -1;
  long double best_v = 0;
  for (int t = 0; t < 255; ++t) {
    const long double v = within_class(h, t);
    if (v < 0) continue;
    if (best < 0 || v < best_v) {
      best = t;
      best_v = v;
    }
  }
  return best;
}

/// Bright axis-aligned rectangles over textured noise; masks mark the
/// rectangles.
inline Dataset synthetic_rectangles(std::size_t count, std::size_t h, std::size_t w,
                                    std::uint64_t seed) {
  Rng rng(seed);
  Dataset d;
  d.name = "rectangles";
  for (std::size_t n = 0; n < count; ++n) {
    Tensor image(Shape{1, 3, h, w});
    Tensor mask(Shape{1, 1, h, w});
    for (std::size_t c = 0; c < 3; ++c) {
      for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
          const double texture = 0.3 + 0.15 * std::sin(0.7 * static_cast<double>(x + 3 * c)) *
                                            std::cos(0.5 * static_cast<double>(y));
          image(0, c, y, x) = static_cast<float>(texture + rng.uniform(-0.3, 0.3));
        }
      }
    }
    const std::size_t rects = 1 + rng.below(2);
    for (std::size_t r = 0; r < rects; ++r) {
      const std::size_t rh = h / 6 + rng.below(h / 4);
      const std::size_t rw = w / 6 + rng.below(w / 4);
      const std::size_t y0 = rng.below(h - rh), x0 = rng.below(w - rw);
      for (std::size_t y = y0; y < y0 + rh; ++y) {
        for (std::size_t x = x0; x < x0 + rw; ++x) {
          for (std::size_t c = 0; c < 3; ++c) {
            image(0, c, y, x) = static_cast<float>(0.75 + rng.uniform(-0.25, 0.25));
          }
          mask(0, 0, y, x) = 1.0f;
        }
      }
    }
    d.samples.push_back({std::move(image), std::move(mask)});
  }
  return d;
}

/// Writes a dataset as input/inNNNNNN.ppm + groundtruth/gtNNNNNN.pgm.
inline void write_dataset(const Dataset& d, const std::filesystem::path& root) {
  std::filesystem::create_directories(root / "input");
  std::filesystem::create_directories(root / "groundtruth");
  for (std::size_t i = 0; i < d.samples.size(); ++i) {
    const Tensor& im = d.samples[i].image;
    const Tensor& m = d.samples[i].mask;
    const Shape s = im.shape();
    Image8 rgb{s.h, s.w, 3, std::vector<std::uint8_t>(s.h * s.w * 3)};
    Image8 gt{s.h, s.w, 1, std::vector<std::uint8_t>(s.h * s.w)};
    for (std::size_t y = 0; y < s.h; ++y) {
      for (std::size_t x = 0; x < s.w; ++x) {
        for (std::size_t c = 0; c < 3; ++c) {
          const float v = std::clamp(im(0, c, y, x), 0.0f, 1.0f);
          rgb.bytes[(y * s.w + x) * 3 + c] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
        }
        gt.bytes[y * s.w + x] = m(0, 0, y, x) >= 0.5f ? 255 : 0;
      }
    }
    char name[32];
    std::snprintf(name, sizeof name, "in%06zu.ppm", i + 1);
    write_pnm(rgb, root / "input" / name);
    std::snprintf(name, sizeof name, "gt%06zu.pgm", i + 1);
    write_pnm(gt, root / "groundtruth" / name);
  }
}

/// Fresh directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& tag) {
  const auto dir = std::filesystem::temp_directory_path() /
                   ("mvfcn_" + tag + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

/// Config used by the overfit check: no augmentation, faster rate, quick
/// running statistics.
inline TrainConfig overfit_config() {
  TrainConfig cfg;
  cfg.base_lr = 1e-3;
  cfg.lr_decay_every = 40;
  cfg.lr_decay_factor = 0.8;
  cfg.max_epochs = 200;
  cfg.bn_momentum = 0.9;
  cfg.augment.enabled = false;
  cfg.seed = 11;
  return cfg;
}

}  // namespace testing
