#include <doctest.h>

#include <fstream>
#include <regex>
#include <set>
#include <sstream>

#include "support.hpp"

using namespace mvfcn;
using testing::dot;
using testing::random_tensor;

namespace {

struct GoldenRow {
  int id;
  std::string type;
  std::string shape;
  std::string inputs;
};

std::vector<GoldenRow> golden_rows() {
  std::ifstream in(std::string(MVFCN_GOLDEN_DIR) + "/layer_table.tsv");
  REQUIRE(in.good());
  std::string line;
  std::getline(in, line);
  std::vector<GoldenRow> rows;
  while (std::getline(in, line)) {
    std::istringstream ss(line);
    GoldenRow r;
    std::string id;
    std::getline(ss, id, '\t');
    std::getline(ss, r.type, '\t');
    std::getline(ss, r.shape, '\t');
    std::getline(ss, r.inputs, '\t');
    r.id = std::stoi(id);
    rows.push_back(r);
  }
  return rows;
}

// "(None, H, W, C)" -> {H, W, C}
std::array<std::size_t, 3> parse_shape(const std::string& s) {
  std::smatch m;
  REQUIRE(std::regex_match(s, m, std::regex(R"(\(None, (\d+), (\d+), (\d+)\))")));
  return {std::stoul(m[1]), std::stoul(m[2]), std::stoul(m[3])};
}

std::vector<int> parse_inputs(const std::string& s) {
  std::vector<int> ids;
  if (s == "mini-batch") return ids;
  std::istringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) ids.push_back(std::stoi(tok));
  return ids;
}

// Small graph exercising every layer kind.
ModelGraph reduced_graph() {
  using K = LayerKind;
  return ModelGraph({
      {1, K::Input, 0, 0, 2, Activation::None, {}, 0.0},
      {2, K::Conv, 3, 1, 3, Activation::ReLU, {1}, 0.0},
      {3, K::Conv, 3, 2, 3, Activation::ReLU, {2}, 0.0},
      {4, K::ConvT, 3, 2, 2, Activation::None, {3}, 0.0},
      {5, K::Concat, 0, 0, 0, Activation::None, {4, 2}, 0.0},
      {6, K::BatchNorm, 0, 0, 0, Activation::None, {5}, 0.0},
      {7, K::Dropout, 0, 0, 0, Activation::None, {6}, 0.3},
      {8, K::Conv, 1, 1, 1, Activation::Sigmoid, {7}, 0.0},
  });
}

}  // namespace

TEST_SUITE("graph") {

TEST_CASE("canonical graph structure") {
  const ModelGraph g = build_mvfcn();
  CHECK(g.layers().size() == 32);
  CHECK(g.spatial_divisor() == 16);
  const ShapeTable t = infer_shapes(g, Shape{1, 3, 240, 320});
  auto shape_of = [&](int id) { return t.at(static_cast<std::size_t>(id - 1)).shape; };
  CHECK(shape_of(12) == Shape{1, 96, 30, 40});
  CHECK(shape_of(16) == Shape{1, 96, 15, 20});
  CHECK(shape_of(7) == Shape{1, 32, 60, 80});
  CHECK(shape_of(32) == Shape{1, 1, 240, 320});
  CHECK(g.layer(32).kernel == 1);
  CHECK(g.layer(32).inputs == std::vector<int>{31});
  CHECK(g.layer(31).dropout_rate == 0.3);
}

TEST_CASE("shapes reproduce the layer table") {
  const auto rows = golden_rows();
  REQUIRE(rows.size() == 32);
  const ModelGraph g = build_mvfcn();
  const ShapeTable t = infer_shapes(g, Shape{4, 3, 240, 320});
  REQUIRE(t.size() == 32);
  for (std::size_t i = 0; i < 32; ++i) {
    const auto [h, w, c] = parse_shape(rows[i].shape);
    CHECK(t[i].id == rows[i].id);
    CHECK(t[i].shape == Shape{4, c, h, w});
    CHECK(g.layer(rows[i].id).inputs == parse_inputs(rows[i].inputs));
  }
}

TEST_CASE("summary matches the golden table") {
  const std::string text = summary(build_mvfcn());
  std::istringstream in(text);
  std::string line;
  std::getline(in, line);
  CHECK(line == "id\ttype\toutput_shape\tinputs\tparams");
  const auto rows = golden_rows();
  for (const auto& r : rows) {
    REQUIRE(std::getline(in, line));
    CHECK(line.rfind(std::to_string(r.id) + "\t" + r.type + "\t" + r.shape + "\t" + r.inputs + "\t", 0) == 0);
  }
  REQUIRE(std::getline(in, line));
  CHECK(line == "total\t\t\t\t494,337");
  CHECK_FALSE(std::getline(in, line));
  CHECK(text.find("28\tConcatenation\t(None, 240, 320, 112)\t27, 2, 3, 4\t0") != std::string::npos);

  const std::string empty = summary(ModelGraph());
  CHECK(empty == "id\ttype\toutput_shape\tinputs\tparams\ntotal\t\t\t\t0\n");
}

TEST_CASE("parameter counts by closed form") {
  // Channels and kernels come from the golden table only.
  const auto rows = golden_rows();
  std::map<int, std::size_t> channels;
  std::map<int, std::size_t> expect;
  std::size_t total = 0;
  for (const auto& r : rows) {
    channels[r.id] = parse_shape(r.shape)[2];
    std::size_t cin = 0;
    for (int in : parse_inputs(r.inputs)) cin += channels.at(in);
    std::smatch m;
    std::size_t p = 0;
    if (std::regex_match(r.type, m, std::regex(R"(Conv2DT? \((\d+), \d+\))"))) {
      const std::size_t k = std::stoul(m[1]);
      p = k * k * cin * channels[r.id] + channels[r.id];
    } else if (r.type == "BatchNorm") {
      p = 2 * channels[r.id];
    }
    expect[r.id] = p;
    total += p;
  }
  CHECK(total == 494337);
  CHECK(expect[2] == 448);
  CHECK(expect[30] == 129152);

  const ParamCount pc = count_params(build_mvfcn());
  CHECK(pc.total == 494337);
  REQUIRE(pc.per_layer.size() == 32);
  for (const auto& [id, n] : pc.per_layer) CHECK(n == expect.at(id));

  // Fully convolutional: the total does not depend on the input size.
  CHECK(summary(build_mvfcn(), 480, 640).find("total\t\t\t\t494,337") != std::string::npos);
}

TEST_CASE("shape inference at other sizes") {
  const ModelGraph g = build_mvfcn();
  const ShapeTable a = infer_shapes(g, Shape{1, 3, 240, 320});
  const ShapeTable b = infer_shapes(g, Shape{1, 3, 480, 640});
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(b[i].shape.c == a[i].shape.c);
    CHECK(b[i].shape.h == 2 * a[i].shape.h);
    CHECK(b[i].shape.w == 2 * a[i].shape.w);
  }
  try {
    infer_shapes(g, Shape{1, 3, 241, 320});
    FAIL("expected a divisibility error");
  } catch (const ShapeError& e) {
    CHECK(std::string(e.what()).find("not divisible by 16") != std::string::npos);
  }
  CHECK_THROWS_AS(infer_shapes(g, Shape{1, 1, 240, 320}), ShapeError);
}

TEST_CASE("graph validation") {
  using K = LayerKind;
  CHECK_THROWS_AS(ModelGraph({{1, K::Input, 0, 0, 1, Activation::None, {}, 0.0},
                              {2, K::Conv, 3, 1, 1, Activation::ReLU, {3}, 0.0},
                              {3, K::Conv, 3, 1, 1, Activation::ReLU, {2}, 0.0}}),
                  ShapeError);
  CHECK_THROWS_AS(ModelGraph({{1, K::Input, 0, 0, 1, Activation::None, {}, 0.0},
                              {2, K::Conv, 3, 2, 1, Activation::ReLU, {1}, 0.0},
                              {3, K::Concat, 0, 0, 0, Activation::None, {1, 2}, 0.0}}),
                  ShapeError);
  CHECK_THROWS_AS(ModelGraph({{1, K::Conv, 3, 1, 1, Activation::ReLU, {}, 0.0}}), ShapeError);
}

TEST_CASE("skip connections reappear once in the decoder") {
  const ModelGraph g = build_mvfcn();
  const std::pair<int, int> pairs[] = {{5, 25}, {8, 22}, {12, 19}};
  for (auto [enc, dec] : pairs) {
    int uses = 0;
    for (const auto& l : g.layers()) {
      if (l.id >= 17) uses += static_cast<int>(std::count(l.inputs.begin(), l.inputs.end(), enc));
    }
    CHECK(uses == 1);
    const auto& in = g.layer(dec).inputs;
    CHECK(std::find(in.begin(), in.end(), enc) != in.end());
  }
}

TEST_CASE("fingerprint tracks the layer table") {
  CHECK(build_mvfcn().fingerprint() == build_mvfcn().fingerprint());
  CHECK(build_mvfcn(0.3).fingerprint() == build_mvfcn(0.5).fingerprint());
  auto layers = build_mvfcn().layers();
  layers[29].out_channels = 64;  // layer 30
  CHECK(ModelGraph(layers).fingerprint() != build_mvfcn().fingerprint());
}

TEST_CASE("forward on zero input with zero weights") {
  const ModelGraph g = build_mvfcn();
  ModelParams<float> p = zero_params<float>(g);
  Rng rng(1);
  const Tensor y = forward(g, p, Tensor(Shape{1, 3, 32, 48}), Mode::Train, rng);
  CHECK(y.shape() == Shape{1, 1, 32, 48});
  for (float v : y.data()) CHECK(v == 0.5f);
}

TEST_CASE("forward range, determinism and runtime shapes") {
  const ModelGraph g = build_mvfcn();
  Rng rng(2);
  ModelParams<float> p = init_params(g, rng);
  const Tensor x = random_tensor<float>(Shape{2, 3, 32, 48}, rng, 0.0, 1.0);
  CHECK_THROWS_AS(forward(g, p, x, Mode::Infer, rng), Error);

  ForwardCache<float> cache;
  const Tensor train_out = forward(g, p, x, Mode::Train, rng, &cache);
  const ShapeTable t = infer_shapes(g, x.shape());
  for (const auto& [id, s] : t) {
    REQUIRE(cache.outputs.count(id) == 1);
    CHECK(cache.outputs.at(id).shape() == s);
  }
  CHECK(cache.scores == train_out);

  const Tensor a = forward(g, p, x, Mode::Infer, rng);
  const Tensor b = forward(g, p, x, Mode::Infer, rng);
  CHECK(a == b);
  CHECK(*std::min_element(a.data().begin(), a.data().end()) > 0.0f);
  CHECK(*std::max_element(a.data().begin(), a.data().end()) < 1.0f);
}

TEST_CASE("backward structure") {
  const ModelGraph g = build_mvfcn();
  Rng rng(3);
  ModelParams<float> p = init_params(g, rng);
  const Tensor x = random_tensor<float>(Shape{1, 3, 16, 16}, rng, 0.0, 1.0);
  ForwardCache<float> cache;
  forward(g, p, x, Mode::Train, rng, &cache);
  const Gradients<float> zero = backward(g, p, cache, Tensor(Shape{1, 1, 16, 16}));
  const Gradients<float> some = backward(g, p, cache, random_tensor<float>(Shape{1, 1, 16, 16}, rng));
  const auto views = p.views(false);
  CHECK(zero.size() == views.size());
  for (const auto& v : views) {
    REQUIRE(zero.count(v.key) == 1);
    CHECK(zero.at(v.key).shape() == v.shape);
    CHECK(some.at(v.key).shape() == v.shape);
    for (float e : zero.at(v.key).data()) CHECK(e == 0.0f);
  }
  std::set<int> layers;
  for (const auto& [k, t] : some) layers.insert(k.layer);
  CHECK(layers.size() == 23);  // 18 conv, 4 convT, 1 batch norm

  ForwardCache<float> infer;
  forward(g, p, x, Mode::Infer, rng, &infer);
  CHECK_THROWS_AS(backward(g, p, infer, Tensor(Shape{1, 1, 16, 16})), Error);
  CHECK_THROWS_AS(backward(reduced_graph(), p, cache, Tensor(Shape{1, 1, 16, 16})), Error);
}

TEST_CASE("reduced graph gradients match finite differences") {
  const ModelGraph g = reduced_graph();
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(700 + seed);
    ModelParams<double> p = init_params(g, rng).cast<double>();
    for (auto& v : p.views(false)) {
      for (auto& e : v.data) e = rng.uniform(-0.8, 0.8);
    }
    const auto x = random_tensor<double>(Shape{2, 2, 8, 8}, rng, 0.0, 1.0);
    TensorD target(Shape{2, 1, 8, 8});
    for (auto& t : target.data()) t = rng.below(2) ? 1.0 : 0.0;
    const Rng at = rng;

    auto loss = [&] {
      ModelParams<double> tmp = p;
      Rng r = at;
      ForwardCache<double> c;
      forward(g, tmp, x, Mode::Train, r, &c);
      return bce_loss(c.logits, target).loss;
    };
    ModelParams<double> tmp = p;
    Rng r = at;
    ForwardCache<double> c;
    forward(g, tmp, x, Mode::Train, r, &c);
    const auto grads = backward(g, p, c, bce_loss(c.logits, target).d_logits);
    for (auto& v : p.views(false)) {
      const double err = testing::fd_check(v.data, grads.at(v.key).data(), loss);
      INFO(to_string(v.key));
      CHECK(err < 1e-3);
    }
  }
}

TEST_CASE("backward from scores chains through the sigmoid") {
  const ModelGraph g = reduced_graph();
  Rng rng(4);
  ModelParams<double> p = init_params(g, rng).cast<double>();
  const auto x = random_tensor<double>(Shape{1, 2, 8, 8}, rng, 0.0, 1.0);
  ForwardCache<double> c;
  forward(g, p, x, Mode::Train, rng, &c);
  const auto d_scores = random_tensor<double>(c.scores.shape(), rng);
  const auto a = backward_from_scores(g, p, c, d_scores);
  const auto b = backward(g, p, c, sigmoid_backward(c.scores, d_scores));
  for (const auto& [k, t] : a) {
    for (std::size_t i = 0; i < t.size(); ++i) CHECK(t[i] == doctest::Approx(b.at(k)[i]).epsilon(1e-12));
  }
}

}  // TEST_SUITE
