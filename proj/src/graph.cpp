#include <algorithm>
#include <set>
#include <sstream>

#include "mvfcn/graph.hpp"

namespace mvfcn {

const char* to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::Input: return "Input";
    case LayerKind::Conv: return "Conv";
    case LayerKind::ConvT: return "ConvT";
    case LayerKind::Concat: return "Concat";
    case LayerKind::BatchNorm: return "BatchNorm";
    case LayerKind::Dropout: return "Dropout";
  }
  return "?";
}

namespace {

const char* activation_name(Activation a) {
  switch (a) {
    case Activation::None: return "none";
    case Activation::ReLU: return "relu";
    case Activation::Sigmoid: return "sigmoid";
  }
  return "?";
}

std::string with_thousands(std::size_t v) {
  std::string digits = std::to_string(v);
  std::string out;
  for (std::size_t i = 0; i < digits.size(); ++i) {
    if (i != 0 && (digits.size() - i) % 3 == 0) out.push_back(',');
    out.push_back(digits[i]);
  }
  return out;
}

}  // namespace

ModelGraph::ModelGraph(std::vector<LayerSpec> layers) : layers_(std::move(layers)) {
  if (layers_.empty()) return;
  if (layers_.front().kind != LayerKind::Input) {
    throw ShapeError("graph must start with an Input layer");
  }
  std::map<int, std::size_t> factor;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const LayerSpec& l = layers_[i];
    const std::string where = "layer " + std::to_string(l.id);
    if (index_.count(l.id) != 0) throw ShapeError(where + ": duplicate id");
    if (l.kind == LayerKind::Input) {
      if (i != 0) throw ShapeError(where + ": only the first layer may be an Input");
      if (!l.inputs.empty()) throw ShapeError(where + ": Input layer takes no inputs");
      if (l.out_channels == 0) throw ShapeError(where + ": Input layer needs a channel count");
      channels_[l.id] = l.out_channels;
      factor[l.id] = 1;
      index_[l.id] = i;
      continue;
    }
    if (l.inputs.empty()) throw ShapeError(where + ": no inputs");
    for (int in : l.inputs) {
      if (index_.count(in) == 0) {
        throw ShapeError(where + ": input " + std::to_string(in) +
                         " is not defined earlier (graph must be acyclic and ordered)");
      }
    }
    const bool single = l.kind != LayerKind::Concat;
    if (single && l.inputs.size() != 1) throw ShapeError(where + ": expects exactly one input");
    const std::size_t in_c = channels_.at(l.inputs.front());
    const std::size_t in_f = factor.at(l.inputs.front());
    switch (l.kind) {
      case LayerKind::Conv:
      case LayerKind::ConvT:
        if (l.kernel < 1 || l.kernel % 2 == 0 || l.stride < 1) {
          throw ShapeError(where + ": kernel must be odd and stride positive");
        }
        if (l.out_channels == 0) throw ShapeError(where + ": zero output channels");
        channels_[l.id] = l.out_channels;
        if (l.kind == LayerKind::Conv) {
          factor[l.id] = in_f * static_cast<std::size_t>(l.stride);
        } else {
          if (in_f % static_cast<std::size_t>(l.stride) != 0) {
            throw ShapeError(where + ": upsamples beyond the input resolution");
          }
          factor[l.id] = in_f / static_cast<std::size_t>(l.stride);
        }
        break;
      case LayerKind::Concat: {
        std::size_t c = 0;
        for (int in : l.inputs) {
          c += channels_.at(in);
          if (factor.at(in) != in_f) {
            throw ShapeError(where + ": concatenated inputs live at different resolutions");
          }
        }
        channels_[l.id] = c;
        factor[l.id] = in_f;
        break;
      }
      case LayerKind::BatchNorm:
        channels_[l.id] = in_c;
        factor[l.id] = in_f;
        break;
      case LayerKind::Dropout:
        if (!(l.dropout_rate >= 0.0 && l.dropout_rate < 1.0)) {
          throw ShapeError(where + ": dropout rate outside [0, 1)");
        }
        channels_[l.id] = in_c;
        factor[l.id] = in_f;
        break;
      case LayerKind::Input:
        break;
    }
    index_[l.id] = i;
  }
  for (const auto& [id, f] : factor) divisor_ = std::max(divisor_, f);
}

const LayerSpec& ModelGraph::layer(int id) const {
  auto it = index_.find(id);
  if (it == index_.end()) throw ShapeError("no layer with id " + std::to_string(id));
  return layers_[it->second];
}

std::size_t ModelGraph::in_channels(int id) const {
  const LayerSpec& l = layer(id);
  if (l.inputs.empty()) return channels(id);
  return channels(l.inputs.front());
}

std::uint64_t ModelGraph::fingerprint() const {
  std::ostringstream os;
  for (const LayerSpec& l : layers_) {
    os << l.id << ':' << to_string(l.kind) << ':' << l.kernel << ':' << l.stride << ':'
       << channels_.at(l.id) << ':' << activation_name(l.activation) << ':';
    for (int in : l.inputs) os << in << ',';
    os << ';';
  }
  const std::string s = os.str();
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  return h;
}

ConvSpec ModelGraph::conv_spec(int id) const {
  const LayerSpec& l = layer(id);
  if (l.kind != LayerKind::Conv) throw ShapeError("layer " + std::to_string(id) + " is not a Conv");
  ConvSpec s;
  s.kernel = l.kernel;
  s.stride = l.stride;
  s.padding = PadMode::SameFloor;
  s.in_channels = in_channels(id);
  s.out_channels = l.out_channels;
  return s;
}

TransposeConvSpec ModelGraph::convT_spec(int id, std::size_t target_h, std::size_t target_w) const {
  const LayerSpec& l = layer(id);
  if (l.kind != LayerKind::ConvT) {
    throw ShapeError("layer " + std::to_string(id) + " is not a ConvT");
  }
  return TransposeConvSpec::symmetric(l.kernel, l.stride, (l.kernel - 1) / 2, in_channels(id),
                                      l.out_channels, target_h, target_w);
}

ModelGraph build_mvfcn(double dropout_rate) {
  using K = LayerKind;
  constexpr auto relu = Activation::ReLU;
  constexpr auto none = Activation::None;
  auto conv = [](int id, int k, int s, std::size_t c, int in) {
    return LayerSpec{id, K::Conv, k, s, c, relu, {in}, 0.0};
  };
  auto convT = [](int id, std::size_t c, int in) {
    return LayerSpec{id, K::ConvT, 3, 2, c, none, {in}, 0.0};
  };
  auto concat = [](int id, std::vector<int> in) {
    return LayerSpec{id, K::Concat, 0, 0, 0, none, std::move(in), 0.0};
  };
  std::vector<LayerSpec> layers = {
      {1, K::Input, 0, 0, 3, none, {}, 0.0},
      // inception head: three receptive fields at stride 1
      conv(2, 3, 1, 16, 1),
      conv(3, 5, 1, 16, 1),
      conv(4, 9, 1, 16, 1),
      // encoder
      conv(5, 3, 2, 16, 2),
      conv(6, 3, 2, 32, 5),
      conv(7, 5, 4, 32, 3),
      concat(8, {6, 7}),
      conv(9, 3, 2, 32, 8),
      conv(10, 3, 2, 32, 7),
      conv(11, 9, 8, 32, 4),
      concat(12, {9, 10, 11}),
      conv(13, 3, 2, 32, 12),
      conv(14, 5, 4, 32, 7),
      conv(15, 3, 2, 32, 11),
      concat(16, {13, 14, 15}),
      // decoder
      conv(17, 3, 1, 64, 16),
      convT(18, 64, 17),
      concat(19, {18, 12}),
      conv(20, 3, 1, 32, 19),
      convT(21, 32, 20),
      concat(22, {21, 8}),
      conv(23, 3, 1, 32, 22),
      convT(24, 16, 23),
      concat(25, {24, 5}),
      conv(26, 3, 1, 32, 25),
      convT(27, 64, 26),
      concat(28, {27, 2, 3, 4}),
      // classification head
      {29, K::BatchNorm, 0, 0, 0, none, {28}, 0.0},
      conv(30, 3, 1, 128, 29),
      {31, K::Dropout, 0, 0, 0, none, {30}, dropout_rate},
      {32, K::Conv, 1, 1, 1, Activation::Sigmoid, {31}, 0.0},
  };
  return ModelGraph(std::move(layers));
}

ShapeTable infer_shapes(const ModelGraph& graph, const Shape& input) {
  ShapeTable table;
  if (graph.empty()) return table;
  const std::size_t div = graph.spatial_divisor();
  if (input.h % div != 0) {
    throw ShapeError("input height " + std::to_string(input.h) + " is not divisible by " +
                     std::to_string(div));
  }
  if (input.w % div != 0) {
    throw ShapeError("input width " + std::to_string(input.w) + " is not divisible by " +
                     std::to_string(div));
  }
  std::map<int, Shape> shapes;
  for (const LayerSpec& l : graph.layers()) {
    Shape out;
    switch (l.kind) {
      case LayerKind::Input:
        if (input.c != l.out_channels) {
          throw ShapeError("input has " + std::to_string(input.c) + " channels, graph expects " +
                           std::to_string(l.out_channels));
        }
        out = input;
        break;
      case LayerKind::Conv: {
        const Shape& in = shapes.at(l.inputs.front());
        const ConvSpec spec = graph.conv_spec(l.id);
        out = {in.n, l.out_channels, conv_axis(in.h, spec).out, conv_axis(in.w, spec).out};
        break;
      }
      case LayerKind::ConvT: {
        const Shape& in = shapes.at(l.inputs.front());
        const std::size_t th = in.h * static_cast<std::size_t>(l.stride);
        const std::size_t tw = in.w * static_cast<std::size_t>(l.stride);
        const TransposeConvSpec spec = graph.convT_spec(l.id, th, tw);
        out = {in.n, l.out_channels, spec.output_h(in.h), spec.output_w(in.w)};
        break;
      }
      case LayerKind::Concat: {
        const Shape& first = shapes.at(l.inputs.front());
        std::size_t c = 0;
        for (int id : l.inputs) {
          const Shape& s = shapes.at(id);
          if (s.n != first.n || s.h != first.h || s.w != first.w) {
            throw ShapeError("layer " + std::to_string(l.id) + ": concat input " +
                             std::to_string(id) + " shaped " + s.str() + " does not match " +
                             first.str());
          }
          c += s.c;
        }
        out = {first.n, c, first.h, first.w};
        break;
      }
      case LayerKind::BatchNorm:
      case LayerKind::Dropout:
        out = shapes.at(l.inputs.front());
        break;
    }
    shapes[l.id] = out;
    table.push_back({l.id, out});
  }
  return table;
}

ParamCount count_params(const ModelGraph& graph) {
  ParamCount pc;
  for (const LayerSpec& l : graph.layers()) {
    std::size_t n = 0;
    if (l.kind == LayerKind::Conv || l.kind == LayerKind::ConvT) {
      const auto k = static_cast<std::size_t>(l.kernel);
      n = k * k * graph.in_channels(l.id) * l.out_channels + l.out_channels;
    } else if (l.kind == LayerKind::BatchNorm) {
      n = 2 * graph.channels(l.id);
    }
    pc.per_layer.emplace_back(l.id, n);
    pc.total += n;
  }
  return pc;
}

std::string summary(const ModelGraph& graph, std::size_t height, std::size_t width) {
  std::ostringstream os;
  os << "id\ttype\toutput_shape\tinputs\tparams\n";
  ShapeTable shapes;
  if (!graph.empty()) {
    shapes = infer_shapes(graph, Shape{1, graph.channels(graph.input_id()), height, width});
  }
  const ParamCount pc = count_params(graph);
  for (std::size_t i = 0; i < graph.layers().size(); ++i) {
    const LayerSpec& l = graph.layers()[i];
    const Shape& s = shapes[i].shape;
    os << l.id << '\t';
    switch (l.kind) {
      case LayerKind::Input: os << "Input Layer"; break;
      case LayerKind::Conv: os << "Conv2D (" << l.kernel << ", " << l.stride << ")"; break;
      case LayerKind::ConvT: os << "Conv2DT (" << l.kernel << ", " << l.stride << ")"; break;
      case LayerKind::Concat: os << "Concatenation"; break;
      case LayerKind::BatchNorm: os << "BatchNorm"; break;
      case LayerKind::Dropout: os << "Dropout"; break;
    }
    os << "\t(None, " << s.h << ", " << s.w << ", " << s.c << ")\t";
    if (l.inputs.empty()) {
      os << "mini-batch";
    } else {
      for (std::size_t k = 0; k < l.inputs.size(); ++k) os << (k ? ", " : "") << l.inputs[k];
    }
    os << '\t' << pc.per_layer[i].second << '\n';
  }
  os << "total\t\t\t\t" << with_thousands(pc.total) << '\n';
  return os.str();
}

}  // namespace mvfcn
