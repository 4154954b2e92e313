#include <cmath>
#include <numbers>

#include "mvfcn/train.hpp"

namespace mvfcn {

AffineParams draw_affine(const AugmentConfig& cfg, std::size_t h, std::size_t w, Rng& rng) {
  AffineParams p;
  p.rotation_deg = rng.uniform(-cfg.max_rotation_deg, cfg.max_rotation_deg);
  p.shift_x = rng.uniform(-cfg.shift_fraction, cfg.shift_fraction) * static_cast<double>(w);
  p.shift_y = rng.uniform(-cfg.shift_fraction, cfg.shift_fraction) * static_cast<double>(h);
  p.zoom = rng.uniform(1.0 - cfg.zoom_fraction, 1.0 + cfg.zoom_fraction);
  return p;
}

std::pair<Tensor, Tensor> apply_affine(const Tensor& image, const Tensor& gt,
                                       const AffineParams& params) {
  const Shape is = image.shape();
  const Shape gs = gt.shape();
  if (is.n != 1 || gs.n != 1 || gs.c != 1 || is.h != gs.h || is.w != gs.w) {
    throw ShapeError("augment: image " + is.str() + " and ground truth " + gs.str() +
                     " must be single samples of equal spatial size");
  }
  if (!(params.zoom > 0.0)) throw ConfigError("augment: zoom must be positive");
  const std::size_t H = is.h, W = is.w;
  const double cx = (static_cast<double>(W) - 1.0) / 2.0;
  const double cy = (static_cast<double>(H) - 1.0) / 2.0;
  const double theta = params.rotation_deg * std::numbers::pi / 180.0;
  const double cs = std::cos(theta), sn = std::sin(theta);

  Tensor out_img(is);
  Tensor out_gt(gs);
  for (std::size_t y = 0; y < H; ++y) {
    for (std::size_t x = 0; x < W; ++x) {
      // Inverse map: output pixel -> source coordinates.
      const double dx = (static_cast<double>(x) - cx - params.shift_x) / params.zoom;
      const double dy = (static_cast<double>(y) - cy - params.shift_y) / params.zoom;
      const double sx = cs * dx + sn * dy + cx;
      const double sy = -sn * dx + cs * dy + cy;

      const double fx0 = std::floor(sx), fy0 = std::floor(sy);
      const double fx = sx - fx0, fy = sy - fy0;
      const auto x0 = static_cast<long>(fx0), y0 = static_cast<long>(fy0);
      auto inside = [&](long yy, long xx) {
        return yy >= 0 && xx >= 0 && yy < static_cast<long>(H) && xx < static_cast<long>(W);
      };
      for (std::size_t c = 0; c < is.c; ++c) {
        const float* src = image.plane(0, c);
        auto at = [&](long yy, long xx) -> double {
          return inside(yy, xx) ? static_cast<double>(src[yy * static_cast<long>(W) + xx]) : 0.0;
        };
        const double v = at(y0, x0) * (1.0 - fx) * (1.0 - fy) + at(y0, x0 + 1) * fx * (1.0 - fy) +
                         at(y0 + 1, x0) * (1.0 - fx) * fy + at(y0 + 1, x0 + 1) * fx * fy;
        out_img(0, c, y, x) = static_cast<float>(v);
      }
      const long nx = std::lround(sx), ny = std::lround(sy);
      const float g = inside(ny, nx) ? gt(0, 0, static_cast<std::size_t>(ny), static_cast<std::size_t>(nx)) : 0.0f;
      out_gt(0, 0, y, x) = g >= 0.5f ? 1.0f : 0.0f;
    }
  }
  return {std::move(out_img), std::move(out_gt)};
}

std::pair<Tensor, Tensor> augment_pair(const Tensor& image, const Tensor& gt,
                                       const AugmentConfig& cfg, Rng& rng) {
  if (!cfg.enabled) return {image, gt};
  const AffineParams p = draw_affine(cfg, image.shape().h, image.shape().w, rng);
  return apply_affine(image, gt, p);
}

}  // namespace mvfcn
