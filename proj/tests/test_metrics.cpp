#include <doctest.h>

#include <numeric>

#include "mvfcn/metrics.hpp"
#include "support.hpp"

using namespace mvfcn;

namespace {

BinaryMask random_mask(std::size_t h, std::size_t w, double density, Rng& rng) {
  BinaryMask m(h, w);
  for (auto& v : m.data) v = rng.uniform() < density ? 1 : 0;
  return m;
}

std::size_t count(const BinaryMask& m) { return static_cast<std::size_t>(std::count(m.data.begin(), m.data.end(), 1)); }

}  // namespace

TEST_SUITE("metrics") {

TEST_CASE("confusion counts") {
  Rng rng(7);
  const BinaryMask gt = random_mask(12, 12, 0.4, rng);
  const ConfusionCounts same = confusion(gt, gt);
  CHECK(same.tp == count(gt));
  CHECK(same.fp == 0);
  CHECK(same.fn == 0);
  BinaryMask inv = gt;
  for (auto& v : inv.data) v = 1 - v;
  const ConfusionCounts opp = confusion(inv, gt);
  CHECK(opp.tp == 0);
  CHECK(opp.tn == 0);
  CHECK(opp.total() == 144);

  // 4x4 hand fixture: tp at (0,0),(0,1),(1,0); fp at (3,3); fn at (2,2),(2,3).
  BinaryMask p(4, 4), g(4, 4);
  p(0, 0) = p(0, 1) = p(1, 0) = p(3, 3) = 1;
  g(0, 0) = g(0, 1) = g(1, 0) = g(2, 2) = g(2, 3) = 1;
  const ConfusionCounts c = confusion(p, g);
  CHECK(c == ConfusionCounts{3, 1, 2, 10});
  CHECK(fom(c) == doctest::Approx(0.6667).epsilon(1e-4));
  CHECK(fom(c) == doctest::Approx(6.0 / 9.0));

  BinaryMask roi(4, 4, 1);
  roi(3, 3) = 0;
  CHECK(confusion(p, g, &roi) == ConfusionCounts{3, 0, 2, 10});
  CHECK_THROWS_AS(confusion(p, BinaryMask(4, 5)), ShapeError);
}

TEST_CASE("fom conventions") {
  CHECK(fom({3, 1, 2, 0}) == doctest::Approx(0.6667).epsilon(1e-4));
  CHECK(fom({5, 0, 0, 11}) == 1.0);
  CHECK(fom({0, 0, 0, 16}) == 1.0);
  CHECK(fom({0, 3, 4, 9}) == 0.0);
  CHECK(fom({0, 0, 4, 9}) == 0.0);
  CHECK(precision({3, 1, 2, 0}) == 0.75);
  CHECK(recall({3, 1, 2, 0}) == 0.6);
  const double p = 0.75, r = 0.6;
  CHECK(fom({3, 1, 2, 0}) == doctest::Approx(2 * p * r / (p + r)));
  Rng rng(8);
  for (int i = 0; i < 1000; ++i) {
    ConfusionCounts c{rng.below(50), rng.below(50), rng.below(50), rng.below(50)};
    const double f = fom(c);
    CHECK(f >= 0.0);
    CHECK(f <= 1.0);
    if (c.fn > 0) {
      ConfusionCounts better = c;
      ++better.tp;
      --better.fn;
      CHECK(fom(better) >= f);
    }
  }
}

TEST_CASE("soft fom") {
  BinaryMask x(4, 4), y(4, 4);
  for (int i = 0; i < 8; ++i) x.data[static_cast<std::size_t>(i)] = y.data[static_cast<std::size_t>(i)] = 1;
  CHECK(std::abs(fom_soft(x, y) - 1.0) < 1e-8);
  BinaryMask a(4, 4), b(4, 4);
  for (int i = 0; i < 4; ++i) {
    a.data[static_cast<std::size_t>(i)] = 1;
    b.data[static_cast<std::size_t>(i + 8)] = 1;
  }
  CHECK(fom_soft(a, b) == doctest::Approx(2e-8 / (8 + 1e-8)).epsilon(1e-9));

  Rng rng(9);
  int disagreements = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t h = 1 + rng.below(20), w = 1 + rng.below(20);
    const BinaryMask p = random_mask(h, w, rng.uniform(), rng);
    const BinaryMask g = random_mask(h, w, rng.uniform(), rng);
    const double hard = fom(confusion(p, g));
    const ConfusionCounts c = confusion(p, g);
    // Both empty: the soft form gives eps/eps = 2, hard is 1 by convention.
    if (c.tp + c.fp + c.fn == 0) continue;
    disagreements += std::abs(fom_soft(p, g) - hard) > 1e-6;
    CHECK(fom_soft(p, g) == fom_soft(g, p));
  }
  CHECK(disagreements == 0);

  ScoreMap s(2, 2);
  s.data = {0.5f, 0.25f, 0.0f, 1.0f};
  BinaryMask t(2, 2);
  t.data = {1, 0, 0, 1};
  CHECK(fom_soft(s, t) == doctest::Approx(2 * (1.5 + 1e-8) / (1.75 + 2 + 1e-8)));
  CHECK_THROWS_AS(fom_soft(s, BinaryMask(2, 3)), ShapeError);
}

TEST_CASE("fom is invariant to a shared permutation") {
  Rng rng(10);
  const BinaryMask p = random_mask(6, 6, 0.5, rng), g = random_mask(6, 6, 0.5, rng);
  std::vector<std::size_t> perm(36);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  for (std::size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
  BinaryMask pp(6, 6), gg(6, 6);
  for (std::size_t i = 0; i < 36; ++i) {
    pp.data[i] = p.data[perm[i]];
    gg.data[i] = g.data[perm[i]];
  }
  CHECK(fom(confusion(p, g)) == fom(confusion(pp, gg)));
}

TEST_CASE("sequence aggregation") {
  // Frames with (tp, fp, fn) = (3, 1, 2) and (5, 0, 0).
  BinaryMask p1(4, 4), g1(4, 4);
  p1(0, 0) = p1(0, 1) = p1(1, 0) = p1(3, 3) = 1;
  g1(0, 0) = g1(0, 1) = g1(1, 0) = g1(2, 2) = g1(2, 3) = 1;
  BinaryMask p2(4, 4);
  for (std::size_t i = 0; i < 5; ++i) p2.data[i] = 1;
  const FoMReport r = evaluate_sequence({p1, p2}, {g1, p2});
  CHECK(r.aggregate.fom == doctest::Approx(16.0 / 19.0));
  CHECK(r.aggregate.fom == doctest::Approx(0.8421).epsilon(1e-4));
  CHECK(r.mean_frame_fom == doctest::Approx((6.0 / 9.0 + 1.0) / 2));
  REQUIRE(r.frames.size() == 2);
  CHECK(r.frames[1].fom == 1.0);

  const FoMReport single = evaluate_sequence({p1}, {g1});
  CHECK(single.aggregate.fom == single.frames[0].fom);
  const FoMReport perfect = evaluate_sequence({g1, p2}, {g1, p2});
  CHECK(perfect.aggregate.fom == 1.0);
  CHECK_THROWS_AS(evaluate_sequence({p1}, {g1, p2}), DataError);

  const std::string rec = r.record({"a", "b"});
  CHECK(rec.find("frames=2") != std::string::npos);
  CHECK(rec.find("aggregate_fom=") != std::string::npos);
  CHECK(rec.find("frame.1.name=b") != std::string::npos);
}

}  // TEST_SUITE
