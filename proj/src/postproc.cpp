#include <cmath>
#include <numeric>
#include <string>

#include "mvfcn/postproc.hpp"

namespace mvfcn {

ScoreMap to_score_map(const Tensor& t, std::size_t n, std::size_t c) {
  const Shape& s = t.shape();
  ScoreMap m(s.h, s.w);
  std::copy_n(t.plane(n, c), s.plane(), m.data.begin());
  return m;
}

Tensor to_tensor(const BinaryMask& mask) {
  Tensor t(Shape{1, 1, mask.h, mask.w});
  for (std::size_t i = 0; i < mask.size(); ++i) t[i] = mask.data[i] ? 1.0f : 0.0f;
  return t;
}

BinaryMask to_mask(const Tensor& t, std::size_t n, std::size_t c) {
  const Shape& s = t.shape();
  BinaryMask m(s.h, s.w);
  const float* p = t.plane(n, c);
  for (std::size_t i = 0; i < s.plane(); ++i) m.data[i] = p[i] >= 0.5f ? 1 : 0;
  return m;
}

BinaryMask threshold_global(const ScoreMap& score, double tau) {
  if (!(tau >= 0.0 && tau <= 1.0)) {
    throw ConfigError("global threshold must lie in [0, 1], got " + std::to_string(tau));
  }
  BinaryMask m(score.h, score.w);
  for (std::size_t i = 0; i < score.size(); ++i) m.data[i] = score.data[i] >= tau ? 1 : 0;
  return m;
}

std::uint8_t quantize_score(float s) {
  const float c = std::clamp(s, 0.0f, 1.0f);
  return static_cast<std::uint8_t>(std::lround(c * 255.0f));
}

OtsuResult otsu_threshold(const std::array<std::uint64_t, 256>& histogram) {
  std::uint64_t total = 0;
  int occupied = 0;
  for (std::uint64_t c : histogram) {
    total += c;
    occupied += c != 0;
  }
  if (occupied < 2) throw DataError("otsu: degenerate histogram (fewer than two distinct levels)");

  // Total variance is fixed, so the split minimizing the within-class term
  // maximizes the between-class term (s0*N - S*n0)^2 / (n0*n1), whose
  // numerator is exact in integers.
  std::uint64_t s_all = 0, q_all = 0;
  for (std::size_t b = 0; b < 256; ++b) {
    s_all += histogram[b] * b;
    q_all += histogram[b] * b * b;
  }
  OtsuResult best;
  best.histogram = histogram;
  long double best_between = -1.0L;
  std::uint64_t n0 = 0, s0 = 0;
  for (int t = 0; t < 255; ++t) {
    n0 += histogram[t];
    s0 += histogram[t] * static_cast<std::uint64_t>(t);
    const std::uint64_t n1 = total - n0;
    long double between = 0.0L;
    if (n0 > 0 && n1 > 0) {
      const __int128 d = static_cast<__int128>(s0) * total - static_cast<__int128>(s_all) * n0;
      const long double dd = static_cast<long double>(d);
      between = dd * dd / (static_cast<long double>(n0) * static_cast<long double>(n1));
    }
    if (between > best_between) {
      best_between = between;
      best.level = t;
    }
  }
  const long double N = static_cast<long double>(total);
  const long double mean = static_cast<long double>(s_all) / N;
  const long double var_total = static_cast<long double>(q_all) / N - mean * mean;
  best.sigma_w2 = static_cast<double>((var_total - best_between / (N * N)) / (255.0L * 255.0L));
  best.sigma_w2 = std::max(best.sigma_w2, 0.0);
  best.tau = (best.level + 0.5) / 255.0;
  return best;
}

OtsuResult otsu_threshold(const ScoreMap& score) {
  std::array<std::uint64_t, 256> hist{};
  for (float s : score.data) ++hist[quantize_score(s)];
  return otsu_threshold(hist);
}

BinaryMask threshold_otsu(const ScoreMap& score, const OtsuResult& result) {
  BinaryMask m(score.h, score.w);
  for (std::size_t i = 0; i < score.size(); ++i) {
    m.data[i] = quantize_score(score.data[i]) > result.level ? 1 : 0;
  }
  return m;
}

namespace {

// Union-find over provisional labels.
std::uint32_t find_root(std::vector<std::uint32_t>& parent, std::uint32_t x) {
  while (parent[x] != x) {
    parent[x] = parent[parent[x]];
    x = parent[x];
  }
  return x;
}

void unite(std::vector<std::uint32_t>& parent, std::uint32_t a, std::uint32_t b) {
  a = find_root(parent, a);
  b = find_root(parent, b);
  if (a < b) parent[b] = a;
  else if (b < a) parent[a] = b;
}

}  // namespace

BinaryMask remove_small_regions(const BinaryMask& mask, std::size_t min_area, int connectivity) {
  if (connectivity != 4 && connectivity != 8) {
    throw ConfigError("connectivity must be 4 or 8, got " + std::to_string(connectivity));
  }
  if (min_area == 0) return mask;
  const std::size_t h = mask.h, w = mask.w;
  std::vector<std::uint32_t> label(h * w, 0);
  std::vector<std::uint32_t> parent{0};

  // Two-pass labelling: provisional labels from already-visited neighbours.
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      if (!mask(y, x)) continue;
      std::uint32_t neighbours[4];
      int k = 0;
      if (x > 0 && label[y * w + x - 1]) neighbours[k++] = label[y * w + x - 1];
      if (y > 0 && label[(y - 1) * w + x]) neighbours[k++] = label[(y - 1) * w + x];
      if (connectivity == 8 && y > 0) {
        if (x > 0 && label[(y - 1) * w + x - 1]) neighbours[k++] = label[(y - 1) * w + x - 1];
        if (x + 1 < w && label[(y - 1) * w + x + 1]) neighbours[k++] = label[(y - 1) * w + x + 1];
      }
      if (k == 0) {
        const auto id = static_cast<std::uint32_t>(parent.size());
        parent.push_back(id);
        label[y * w + x] = id;
        continue;
      }
      std::uint32_t m = neighbours[0];
      for (int i = 1; i < k; ++i) m = std::min(m, neighbours[i]);
      label[y * w + x] = m;
      for (int i = 0; i < k; ++i) unite(parent, m, neighbours[i]);
    }
  }
  std::vector<std::size_t> area(parent.size(), 0);
  for (auto& l : label) {
    if (l) {
      l = find_root(parent, l);
      ++area[l];
    }
  }
  BinaryMask out(h, w);
  for (std::size_t i = 0; i < label.size(); ++i) {
    out.data[i] = label[i] && area[label[i]] >= min_area ? 1 : 0;
  }
  return out;
}

BinarizeResult binarize(const ScoreMap& score, const BinarizeOptions& opts) {
  BinarizeResult r;
  if (opts.method == ThresholdMethod::Otsu) {
    try {
      const OtsuResult o = otsu_threshold(score);
      r.mask = threshold_otsu(score, o);
      r.tau = o.tau;
    } catch (const DataError&) {
      r.mask = threshold_global(score, opts.tau);
      r.tau = opts.tau;
      r.fallback = true;
    }
  } else {
    r.mask = threshold_global(score, opts.tau);
    r.tau = opts.tau;
  }
  r.mask = remove_small_regions(r.mask, opts.min_area, opts.connectivity);
  return r;
}

}  // namespace mvfcn
