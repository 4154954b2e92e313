#include <doctest.h>

#include <deque>

#include "mvfcn/postproc.hpp"
#include "support.hpp"

using namespace mvfcn;
using testing::brute_force_level;
using testing::within_class;

namespace {

int between_class_level(const std::array<std::uint64_t, 256>& h) {
  int best = -1;
  long double best_v = -1;
  long double total = 0, mean_all = 0;
  for (int l = 0; l < 256; ++l) {
    total += h[l];
    mean_all += h[l] * (l / 255.0L);
  }
  mean_all /= total;
  for (int t = 0; t < 255; ++t) {
    long double n0 = 0, m0 = 0;
    for (int l = 0; l <= t; ++l) {
      n0 += h[l];
      m0 += h[l] * (l / 255.0L);
    }
    const long double n1 = total - n0;
    if (n0 == 0 || n1 == 0) continue;
    m0 /= n0;
    const long double m1 = (mean_all * total - m0 * n0) / n1;
    const long double v = (n0 / total) * (n1 / total) * (m0 - m1) * (m0 - m1);
    if (v > best_v) {
      best_v = v;
      best = t;
    }
  }
  return best;
}

BinaryMask random_mask(std::size_t h, std::size_t w, double density, Rng& rng) {
  BinaryMask m(h, w);
  for (auto& v : m.data) v = rng.uniform() < density ? 1 : 0;
  return m;
}

// Breadth-first flood fill reference for small-region removal.
BinaryMask flood_fill_filter(const BinaryMask& m, std::size_t min_area, int connectivity) {
  BinaryMask out = m;
  std::vector<int> seen(m.size(), 0);
  for (std::size_t start = 0; start < m.size(); ++start) {
    if (!m.data[start] || seen[start]) continue;
    std::vector<std::size_t> comp;
    std::deque<std::size_t> q{start};
    seen[start] = 1;
    while (!q.empty()) {
      const std::size_t p = q.front();
      q.pop_front();
      comp.push_back(p);
      const long y = static_cast<long>(p / m.w), x = static_cast<long>(p % m.w);
      for (long dy = -1; dy <= 1; ++dy) {
        for (long dx = -1; dx <= 1; ++dx) {
          if ((dy == 0 && dx == 0) || (connectivity == 4 && dy != 0 && dx != 0)) continue;
          const long ny = y + dy, nx = x + dx;
          if (ny < 0 || nx < 0 || ny >= static_cast<long>(m.h) || nx >= static_cast<long>(m.w)) continue;
          const std::size_t np = static_cast<std::size_t>(ny) * m.w + static_cast<std::size_t>(nx);
          if (m.data[np] && !seen[np]) {
            seen[np] = 1;
            q.push_back(np);
          }
        }
      }
    }
    if (comp.size() < min_area) {
      for (auto p : comp) out.data[p] = 0;
    }
  }
  return out;
}

BinaryMask blob(std::size_t h, std::size_t w, std::size_t y0, std::size_t x0, std::size_t rows,
                std::size_t cols, BinaryMask m = {}) {
  if (m.size() == 0) m = BinaryMask(h, w);
  for (std::size_t y = y0; y < y0 + rows; ++y)
    for (std::size_t x = x0; x < x0 + cols; ++x) m(y, x) = 1;
  return m;
}

std::size_t count(const BinaryMask& m) { return static_cast<std::size_t>(std::count(m.data.begin(), m.data.end(), 1)); }

}  // namespace

TEST_SUITE("postproc") {

TEST_CASE("global threshold") {
  ScoreMap s(1, 2);
  s.data = {0.2f, 0.6f};
  CHECK(threshold_global(s, 0.5).data == std::vector<std::uint8_t>{0, 1});
  CHECK(threshold_global(s, 0.6).data == std::vector<std::uint8_t>{0, 1});
  Rng rng(1);
  ScoreMap r(16, 16);
  for (auto& v : r.data) v = static_cast<float>(rng.uniform());
  CHECK(count(threshold_global(r, 0.0)) == 256);
  const float mx = *std::max_element(r.data.begin(), r.data.end());
  CHECK(count(threshold_global(r, std::nextafter(static_cast<double>(mx), 2.0))) == 0);
  CHECK_THROWS_AS(threshold_global(r, -0.01), ConfigError);
  CHECK_THROWS_AS(threshold_global(r, 1.01), ConfigError);
}

TEST_CASE("global threshold is monotone") {
  Rng rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    ScoreMap r(8, 8);
    for (auto& v : r.data) v = static_cast<float>(rng.uniform());
    double a = rng.uniform(), b = rng.uniform();
    if (a > b) std::swap(a, b);
    const BinaryMask lo = threshold_global(r, a), hi = threshold_global(r, b);
    for (std::size_t i = 0; i < lo.size(); ++i) CHECK(hi.data[i] <= lo.data[i]);
  }
}

TEST_CASE("otsu on a perfectly bimodal map") {
  ScoreMap s(4, 4);
  for (std::size_t i = 0; i < 16; ++i) s.data[i] = i < 8 ? 0.0f : 1.0f;
  const OtsuResult r = otsu_threshold(s);
  CHECK(r.tau > 0.0);
  CHECK(r.tau < 1.0);
  CHECK(r.sigma_w2 == doctest::Approx(0.0));
  const BinaryMask m = threshold_otsu(s, r);
  for (std::size_t i = 0; i < 16; ++i) CHECK(m.data[i] == (i < 8 ? 0 : 1));
  CHECK(threshold_global(s, r.tau) == m);
}

TEST_CASE("otsu refuses a constant map") {
  ScoreMap s(5, 5, 0.4f);
  try {
    otsu_threshold(s);
    FAIL("expected an error");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("degenerate histogram") != std::string::npos);
  }
}

TEST_CASE("otsu equals exhaustive minimization on random histograms") {
  Rng rng(3);
  int disagreements = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    std::array<std::uint64_t, 256> h{};
    const double sparsity = rng.uniform();
    for (auto& c : h) c = rng.uniform() < sparsity ? 0 : rng.below(1000);
    h[rng.below(128)] += 1;
    h[128 + rng.below(128)] += 1;
    const OtsuResult r = otsu_threshold(h);
    disagreements += r.level != brute_force_level(h);
    CHECK(r.level == between_class_level(h));
    CHECK(r.sigma_w2 >= 0.0);
    CHECK(static_cast<double>(r.sigma_w2) == doctest::Approx(static_cast<double>(within_class(h, r.level))).epsilon(1e-9));
  }
  CHECK(disagreements == 0);
}

TEST_CASE("otsu depends only on the quantized histogram") {
  Rng rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    ScoreMap s(10, 10);
    for (auto& v : s.data) v = static_cast<float>(rng.uniform() < 0.5 ? rng.uniform(0, 0.4) : rng.uniform(0.6, 1));
    ScoreMap moved = s;
    // Shift every score within its own bin.
    for (auto& v : moved.data) {
      const int level = quantize_score(v);
      const float lo = std::max(0.0f, (level - 0.49f) / 255.0f), hi = std::min(1.0f, (level + 0.49f) / 255.0f);
      v = static_cast<float>(rng.uniform(lo, hi));
      REQUIRE(quantize_score(v) == level);
    }
    CHECK(otsu_threshold(s).level == otsu_threshold(moved).level);
  }
}

TEST_CASE("small region removal") {
  const BinaryMask b49 = blob(20, 20, 2, 2, 7, 7);
  CHECK(count(remove_small_regions(b49, 50)) == 0);
  const BinaryMask b50 = blob(20, 20, 2, 2, 5, 10);
  CHECK(remove_small_regions(b50, 50) == b50);

  const BinaryMask two = blob(40, 40, 20, 20, 10, 20, blob(40, 40, 1, 1, 2, 5));
  const BinaryMask kept = remove_small_regions(two, 50);
  CHECK(count(kept) == 200);
  CHECK(kept == blob(40, 40, 20, 20, 10, 20));
  CHECK(remove_small_regions(two, 0) == two);

  // Diagonal neighbours join under 8-connectivity only.
  BinaryMask diag(10, 10);
  for (std::size_t i = 0; i < 10; ++i) diag(i, i) = 1;
  CHECK(count(remove_small_regions(diag, 10, 8)) == 10);
  CHECK(count(remove_small_regions(diag, 2, 4)) == 0);
}

TEST_CASE("small region removal agrees with flood fill") {
  Rng rng(5);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t h = 1 + rng.below(40), w = 1 + rng.below(40);
    const BinaryMask m = random_mask(h, w, rng.uniform(0.1, 0.7), rng);
    const std::size_t area = rng.below(60);
    const int conn = trial % 2 ? 8 : 4;
    const BinaryMask got = remove_small_regions(m, area, conn);
    CHECK(got == flood_fill_filter(m, area, conn));
    CHECK(remove_small_regions(got, area, conn) == got);
    for (std::size_t i = 0; i < m.size(); ++i) CHECK(got.data[i] <= m.data[i]);
  }
}

TEST_CASE("binarize pipeline") {
  Rng rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    ScoreMap s(24, 24);
    for (auto& v : s.data) v = static_cast<float>(rng.uniform());
    for (auto method : {ThresholdMethod::Global, ThresholdMethod::Otsu}) {
      BinarizeOptions o;
      o.method = method;
      o.min_area = rng.below(20);
      const BinarizeResult r = binarize(s, o);
      for (auto v : r.mask.data) CHECK(v <= 1);
    }
  }
  BinarizeOptions o;
  const BinarizeResult flat = binarize(ScoreMap(8, 8, 0.7f), o);
  CHECK(flat.fallback);
  CHECK(flat.tau == 0.5);
  CHECK(count(flat.mask) == 64);
}

}  // TEST_SUITE
