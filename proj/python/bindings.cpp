#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "cli.hpp"
#include "mvfcn/checkpoint.hpp"
#include "mvfcn/io.hpp"
#include "mvfcn/metrics.hpp"

namespace py = pybind11;
using namespace pybind11::literals;
using namespace mvfcn;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;
using ByteArray = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;

ScoreMap to_scores(const FloatArray& a) {
  if (a.ndim() != 2) throw ShapeError("score map must be 2-D");
  ScoreMap s(static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)));
  std::copy_n(a.data(), s.size(), s.data.begin());
  return s;
}

BinaryMask to_binary(const ByteArray& a) {
  if (a.ndim() != 2) throw ShapeError("mask must be 2-D");
  BinaryMask m(static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)));
  const std::uint8_t* p = a.data();
  for (std::size_t i = 0; i < m.size(); ++i) m.data[i] = p[i] ? 1 : 0;
  return m;
}

template <typename T>
py::array_t<T> to_numpy(const Grid<T>& g) {
  py::array_t<T> out({g.h, g.w});
  std::copy(g.data.begin(), g.data.end(), out.mutable_data());
  return out;
}

py::dict counts_dict(const ConfusionCounts& c) {
  return py::dict("tp"_a = c.tp, "fp"_a = c.fp, "fn"_a = c.fn, "tn"_a = c.tn);
}

/// Frozen network for inference.
class Model {
 public:
  explicit Model(const std::string& path) : graph_(build_mvfcn()), params_(load_checkpoint(path, graph_)) {}

  /// (H, W, 3) image, uint8 or float in [0, 1]; resized to the network size.
  py::array_t<float> predict(const py::array& image, std::size_t height, std::size_t width) {
    const bool bytes = image.dtype().is(py::dtype::of<std::uint8_t>());
    const FloatArray a = FloatArray::ensure(image);
    if (a.ndim() != 3 || a.shape(2) != 3) throw ShapeError("image must have shape (H, W, 3)");
    const std::size_t h = static_cast<std::size_t>(a.shape(0)), w = static_cast<std::size_t>(a.shape(1));
    if (height % graph_.spatial_divisor() || width % graph_.spatial_divisor()) {
      throw ShapeError("network size must be divisible by " + std::to_string(graph_.spatial_divisor()));
    }
    Tensor x(Shape{1, 3, h, w});
    const float scale = bytes ? 1.0f / 255.0f : 1.0f;
    const float* p = a.data();
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t xx = 0; xx < w; ++xx)
        for (std::size_t c = 0; c < 3; ++c) x(0, c, y, xx) = p[(y * w + xx) * 3 + c] * scale;
    if (h != height || w != width) x = resize_nearest(x, height, width);
    Rng unused(0);
    Tensor out;
    {
      py::gil_scoped_release release;
      out = forward(graph_, params_, x, Mode::Infer, unused);
    }
    return to_numpy(to_score_map(out));
  }

 private:
  ModelGraph graph_;
  ModelParams<float> params_;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Foreground segmentation network: inference, thresholding and metrics";

  auto base = py::register_exception<Error>(m, "Error");
  py::register_exception<ShapeError>(m, "ShapeError", base);
  py::register_exception<ConfigError>(m, "ConfigError", base);
  py::register_exception<DataError>(m, "DataError", base);
  py::register_exception<CheckpointError>(m, "CheckpointError", base);

  m.def("parameter_count", [] { return count_params(build_mvfcn()).total; });
  m.def("summary", [](std::size_t h, std::size_t w) { return summary(build_mvfcn(), h, w); }, "height"_a = 240,
        "width"_a = 320);
  m.def(
      "layer_shapes",
      [](std::size_t h, std::size_t w) {
        std::vector<std::tuple<int, std::size_t, std::size_t, std::size_t>> rows;
        for (const auto& l : infer_shapes(build_mvfcn(), Shape{1, 3, h, w})) {
          rows.emplace_back(l.id, l.shape.h, l.shape.w, l.shape.c);
        }
        return rows;
      },
      "height"_a = 240, "width"_a = 320, "(id, H, W, C) for every layer");

  py::class_<Model>(m, "Model")
      .def(py::init<const std::string&>(), "checkpoint"_a)
      .def("predict", &Model::predict, "image"_a, "height"_a = 240, "width"_a = 320,
           "Score map of one (H, W, 3) image at the network size");

  m.def("threshold_global", [](const FloatArray& s, double tau) { return to_numpy(threshold_global(to_scores(s), tau)); },
        "scores"_a, "tau"_a);
  m.def(
      "otsu_threshold",
      [](const FloatArray& s) {
        const OtsuResult r = otsu_threshold(to_scores(s));
        return py::dict("tau"_a = r.tau, "level"_a = r.level, "sigma_w2"_a = r.sigma_w2);
      },
      "scores"_a);
  m.def(
      "remove_small_regions",
      [](const ByteArray& mask, std::size_t min_area, int connectivity) {
        return to_numpy(remove_small_regions(to_binary(mask), min_area, connectivity));
      },
      "mask"_a, "min_area"_a = 50, "connectivity"_a = 8);
  m.def(
      "binarize",
      [](const FloatArray& s, const std::string& method, std::size_t min_area, int connectivity) {
        BinarizeOptions o = parse_threshold(method);
        o.min_area = min_area;
        o.connectivity = connectivity;
        const BinarizeResult r = binarize(to_scores(s), o);
        return py::make_tuple(to_numpy(r.mask), r.tau, r.fallback);
      },
      "scores"_a, "method"_a = "otsu", "min_area"_a = 50, "connectivity"_a = 8,
      "Returns (mask, tau, fell_back_to_global)");

  m.def(
      "confusion",
      [](const ByteArray& pred, const ByteArray& gt) { return counts_dict(confusion(to_binary(pred), to_binary(gt))); },
      "pred"_a, "gt"_a);
  m.def(
      "fom", [](std::uint64_t tp, std::uint64_t fp, std::uint64_t fn) { return fom(ConfusionCounts{tp, fp, fn, 0}); },
      "tp"_a, "fp"_a, "fn"_a);
  m.def(
      "fom_soft", [](const FloatArray& x, const ByteArray& y) { return fom_soft(to_scores(x), to_binary(y)); }, "x"_a,
      "y"_a);
  m.def(
      "evaluate_sequence",
      [](const std::vector<ByteArray>& preds, const std::vector<ByteArray>& gts) {
        std::vector<BinaryMask> p, g;
        for (const auto& a : preds) p.push_back(to_binary(a));
        for (const auto& a : gts) g.push_back(to_binary(a));
        const FoMReport r = evaluate_sequence(p, g);
        py::list frames;
        for (const auto& f : r.frames) frames.append(f.fom);
        return py::dict("fom"_a = r.aggregate.fom, "precision"_a = r.aggregate.precision,
                        "recall"_a = r.aggregate.recall, "mean_frame_fom"_a = r.mean_frame_fom,
                        "counts"_a = counts_dict(r.aggregate.counts), "frame_fom"_a = frames);
      },
      "preds"_a, "gts"_a);

  m.def(
      "read_scores", [](const std::string& path) { return to_numpy(load_scores(path)); }, "path"_a);
  m.def(
      "read_mask", [](const std::string& path) { return to_numpy(load_gt(path).mask); }, "path"_a);

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        int code;
        {
          py::gil_scoped_release release;
          code = cli::run(args, out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      "args"_a, "Runs one command; returns (exit_code, stdout, stderr)");
}
