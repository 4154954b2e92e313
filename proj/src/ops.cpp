#include <cmath>
#include <numeric>
#include <string>

#include "mvfcn/ops.hpp"

namespace mvfcn {

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& x) {
  BasicTensor<T> out(x.shape());
  auto src = x.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i] > T(0) ? src[i] : T(0);
  return out;
}

template <typename T>
BasicTensor<T> relu_backward(const BasicTensor<T>& x, const BasicTensor<T>& d_out) {
  if (x.shape() != d_out.shape()) throw ShapeError("relu_backward: shape mismatch");
  BasicTensor<T> out(x.shape());
  auto src = x.data();
  auto g = d_out.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i] > T(0) ? g[i] : T(0);
  return out;
}

template <typename T>
T sigmoid(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

template <typename T>
BasicTensor<T> sigmoid(const BasicTensor<T>& x) {
  BasicTensor<T> out(x.shape());
  auto src = x.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = sigmoid(src[i]);
  return out;
}

template <typename T>
BasicTensor<T> sigmoid_backward(const BasicTensor<T>& out, const BasicTensor<T>& d_out) {
  if (out.shape() != d_out.shape()) throw ShapeError("sigmoid_backward: shape mismatch");
  BasicTensor<T> dx(out.shape());
  auto s = out.data();
  auto g = d_out.data();
  auto dst = dx.data();
  for (std::size_t i = 0; i < s.size(); ++i) dst[i] = g[i] * s[i] * (T(1) - s[i]);
  return dx;
}

template <typename T>
BasicTensor<T> batchnorm_forward(const BasicTensor<T>& x, BatchNormState<T>& state, Mode mode,
                                 BatchNormCache<T>* cache) {
  const Shape& s = x.shape();
  if (s.c != state.channels() || state.beta.size() != s.c || state.running_mean.size() != s.c ||
      state.running_var.size() != s.c) {
    throw ShapeError("batchnorm: input has " + std::to_string(s.c) + " channels, state has " +
                     std::to_string(state.channels()));
  }
  BasicTensor<T> out(s);
  std::vector<T> mean(s.c), inv_std(s.c);
  const std::size_t count = s.n * s.plane();

  if (mode == Mode::Train) {
    for (std::size_t c = 0; c < s.c; ++c) {
      double sum = 0;
      for (std::size_t n = 0; n < s.n; ++n) {
        const T* p = x.plane(n, c);
        for (std::size_t i = 0; i < s.plane(); ++i) sum += p[i];
      }
      const double mu = sum / static_cast<double>(count);
      double sq = 0;
      for (std::size_t n = 0; n < s.n; ++n) {
        const T* p = x.plane(n, c);
        for (std::size_t i = 0; i < s.plane(); ++i) {
          const double d = p[i] - mu;
          sq += d * d;
        }
      }
      const double var = sq / static_cast<double>(count);
      mean[c] = static_cast<T>(mu);
      inv_std[c] = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(state.eps)));
      const double unbiased = count > 1 ? var * count / (count - 1) : var;
      state.running_mean[c] = state.momentum * state.running_mean[c] +
                              (T(1) - state.momentum) * static_cast<T>(mu);
      state.running_var[c] = state.momentum * state.running_var[c] +
                             (T(1) - state.momentum) * static_cast<T>(unbiased);
    }
    state.calibrated = true;
  } else {
    if (!state.calibrated) {
      throw Error("batchnorm: inference requested before running statistics exist "
                  "(run a training step or load them from a checkpoint)");
    }
    for (std::size_t c = 0; c < s.c; ++c) {
      mean[c] = state.running_mean[c];
      inv_std[c] = T(1) / std::sqrt(state.running_var[c] + state.eps);
    }
  }

  BasicTensor<T> x_hat(s);
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      const T* p = x.plane(n, c);
      T* h = x_hat.plane(n, c);
      T* o = out.plane(n, c);
      for (std::size_t i = 0; i < s.plane(); ++i) {
        h[i] = (p[i] - mean[c]) * inv_std[c];
        o[i] = state.gamma[c] * h[i] + state.beta[c];
      }
    }
  }
  if (cache != nullptr) {
    cache->x_hat = std::move(x_hat);
    cache->inv_std = std::move(inv_std);
  }
  return out;
}

template <typename T>
BatchNormGrads<T> batchnorm_backward(const BatchNormCache<T>& cache, const BatchNormState<T>& state,
                                     const BasicTensor<T>& d_out) {
  const Shape& s = d_out.shape();
  if (cache.x_hat.shape() != s || cache.inv_std.size() != s.c) {
    throw ShapeError("batchnorm_backward: cache does not match d_out " + s.str());
  }
  BatchNormGrads<T> g{BasicTensor<T>(s), std::vector<T>(s.c), std::vector<T>(s.c)};
  const double m = static_cast<double>(s.n * s.plane());
  for (std::size_t c = 0; c < s.c; ++c) {
    double dg = 0, db = 0;
    for (std::size_t n = 0; n < s.n; ++n) {
      const T* dy = d_out.plane(n, c);
      const T* h = cache.x_hat.plane(n, c);
      for (std::size_t i = 0; i < s.plane(); ++i) {
        dg += static_cast<double>(dy[i]) * h[i];
        db += dy[i];
      }
    }
    g.d_gamma[c] = static_cast<T>(dg);
    g.d_beta[c] = static_cast<T>(db);
    const double scale = static_cast<double>(state.gamma[c]) * cache.inv_std[c] / m;
    for (std::size_t n = 0; n < s.n; ++n) {
      const T* dy = d_out.plane(n, c);
      const T* h = cache.x_hat.plane(n, c);
      T* dx = g.d_x.plane(n, c);
      for (std::size_t i = 0; i < s.plane(); ++i) {
        dx[i] = static_cast<T>(scale * (m * dy[i] - db - h[i] * dg));
      }
    }
  }
  return g;
}

template <typename T>
BasicTensor<T> concat_channels(std::span<const BasicTensor<T>* const> inputs) {
  if (inputs.empty()) throw ShapeError("concat_channels: no inputs");
  const Shape& first = inputs.front()->shape();
  std::size_t channels = 0;
  for (const auto* t : inputs) {
    const Shape& s = t->shape();
    if (s.n != first.n || s.h != first.h || s.w != first.w) {
      throw ShapeError("concat_channels: " + s.str() + " does not match " + first.str() +
                       " in batch/spatial extents");
    }
    channels += s.c;
  }
  BasicTensor<T> out(Shape{first.n, channels, first.h, first.w});
  for (std::size_t n = 0; n < first.n; ++n) {
    std::size_t offset = 0;
    for (const auto* t : inputs) {
      const std::size_t len = t->shape().c * first.plane();
      std::copy_n(t->plane(n, 0), len, out.plane(n, offset));
      offset += t->shape().c;
    }
  }
  return out;
}

template <typename T>
BasicTensor<T> concat_channels(const std::vector<BasicTensor<T>>& inputs) {
  std::vector<const BasicTensor<T>*> ptrs;
  ptrs.reserve(inputs.size());
  for (const auto& t : inputs) ptrs.push_back(&t);
  return concat_channels<T>(std::span<const BasicTensor<T>* const>(ptrs));
}

template <typename T>
std::vector<BasicTensor<T>> concat_backward(const BasicTensor<T>& d_out,
                                            std::span<const std::size_t> channels) {
  const Shape& s = d_out.shape();
  if (std::accumulate(channels.begin(), channels.end(), std::size_t{0}) != s.c) {
    throw ShapeError("concat_backward: channel split does not sum to " + std::to_string(s.c));
  }
  std::vector<BasicTensor<T>> parts;
  parts.reserve(channels.size());
  for (std::size_t c : channels) parts.emplace_back(Shape{s.n, c, s.h, s.w});
  for (std::size_t n = 0; n < s.n; ++n) {
    std::size_t offset = 0;
    for (std::size_t k = 0; k < channels.size(); ++k) {
      std::copy_n(d_out.plane(n, offset), channels[k] * s.plane(), parts[k].plane(n, 0));
      offset += channels[k];
    }
  }
  return parts;
}

template <typename T>
BasicTensor<T> dropout(const BasicTensor<T>& x, double rate, Rng& rng, Mode mode,
                       BasicTensor<T>* mask) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw ConfigError("dropout rate must lie in [0, 1), got " + std::to_string(rate));
  }
  if (mode == Mode::Infer || rate == 0.0) {
    if (mask != nullptr) *mask = BasicTensor<T>(x.shape(), T(1));
    return x;
  }
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  BasicTensor<T> m(x.shape());
  BasicTensor<T> out(x.shape());
  auto src = x.data();
  auto md = m.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); ++i) {
    md[i] = rng.uniform() < rate ? T(0) : keep_scale;
    dst[i] = src[i] * md[i];
  }
  if (mask != nullptr) *mask = std::move(m);
  return out;
}

template <typename T>
BasicTensor<T> dropout_backward(const BasicTensor<T>& d_out, const BasicTensor<T>& mask) {
  if (d_out.shape() != mask.shape()) throw ShapeError("dropout_backward: shape mismatch");
  BasicTensor<T> dx(d_out.shape());
  auto g = d_out.data();
  auto m = mask.data();
  auto dst = dx.data();
  for (std::size_t i = 0; i < g.size(); ++i) dst[i] = g[i] * m[i];
  return dx;
}

template <typename T>
BasicTensor<T> resize_nearest(const BasicTensor<T>& image, std::size_t target_h,
                              std::size_t target_w) {
  if (target_h == 0 || target_w == 0) throw ShapeError("resize_nearest: zero target size");
  const Shape& s = image.shape();
  BasicTensor<T> out(Shape{s.n, s.c, target_h, target_w});
  std::vector<std::size_t> xs(target_w);
  for (std::size_t x = 0; x < target_w; ++x) xs[x] = x * s.w / target_w;
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      const T* src = image.plane(n, c);
      T* dst = out.plane(n, c);
      for (std::size_t y = 0; y < target_h; ++y) {
        const T* srow = src + (y * s.h / target_h) * s.w;
        T* drow = dst + y * target_w;
        for (std::size_t x = 0; x < target_w; ++x) drow[x] = srow[xs[x]];
      }
    }
  }
  return out;
}

#define MVFCN_INSTANTIATE_OPS(T)                                                                \
  template BasicTensor<T> relu(const BasicTensor<T>&);                                         \
  template BasicTensor<T> relu_backward(const BasicTensor<T>&, const BasicTensor<T>&);         \
  template T sigmoid(T);                                                                        \
  template BasicTensor<T> sigmoid(const BasicTensor<T>&);                                      \
  template BasicTensor<T> sigmoid_backward(const BasicTensor<T>&, const BasicTensor<T>&);      \
  template BasicTensor<T> batchnorm_forward(const BasicTensor<T>&, BatchNormState<T>&, Mode,   \
                                            BatchNormCache<T>*);                               \
  template BatchNormGrads<T> batchnorm_backward(const BatchNormCache<T>&,                      \
                                                const BatchNormState<T>&,                      \
                                                const BasicTensor<T>&);                        \
  template BasicTensor<T> concat_channels(std::span<const BasicTensor<T>* const>);             \
  template BasicTensor<T> concat_channels(const std::vector<BasicTensor<T>>&);                 \
  template std::vector<BasicTensor<T>> concat_backward(const BasicTensor<T>&,                  \
                                                       std::span<const std::size_t>);          \
  template BasicTensor<T> dropout(const BasicTensor<T>&, double, Rng&, Mode, BasicTensor<T>*); \
  template BasicTensor<T> dropout_backward(const BasicTensor<T>&, const BasicTensor<T>&);      \
  template BasicTensor<T> resize_nearest(const BasicTensor<T>&, std::size_t, std::size_t);

MVFCN_INSTANTIATE_OPS(float)
MVFCN_INSTANTIATE_OPS(double)

#undef MVFCN_INSTANTIATE_OPS

}  // namespace mvfcn
