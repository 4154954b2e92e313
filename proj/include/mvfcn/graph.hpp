#pragma once

// Layer DAG of the multi-view receptive field FCN: construction, static shape
// inference, parameter accounting, and forward/backward execution.

#include <compare>
#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "mvfcn/ops.hpp"
#include "mvfcn/rng.hpp"
#include "mvfcn/tensor.hpp"

namespace mvfcn {

enum class LayerKind { Input, Conv, ConvT, Concat, BatchNorm, Dropout };
enum class Activation { None, ReLU, Sigmoid };

const char* to_string(LayerKind kind);

struct LayerSpec {
  int id = 0;
  LayerKind kind = LayerKind::Input;
  int kernel = 0;
  int stride = 0;
  /// Conv/ConvT filter count; for Input the image channel count. Derived for
  /// the remaining kinds.
  std::size_t out_channels = 0;
  Activation activation = Activation::None;
  std::vector<int> inputs;
  double dropout_rate = 0.0;
};

/// Immutable, validated, topologically ordered layer list.
class ModelGraph {
 public:
  ModelGraph() = default;
  explicit ModelGraph(std::vector<LayerSpec> layers);

  const std::vector<LayerSpec>& layers() const { return layers_; }
  bool empty() const { return layers_.empty(); }
  const LayerSpec& layer(int id) const;
  bool has_layer(int id) const { return index_.count(id) != 0; }

  /// Output channels of every layer.
  std::size_t channels(int id) const { return channels_.at(id); }
  /// Input channels seen by a Conv/ConvT/BatchNorm layer.
  std::size_t in_channels(int id) const;

  int input_id() const { return layers_.front().id; }
  int output_id() const { return layers_.back().id; }

  /// Spatial divisor every input extent must satisfy (product of strides on
  /// the deepest path).
  std::size_t spatial_divisor() const { return divisor_; }

  /// FNV-1a hash over the layer table; dataset independent.
  std::uint64_t fingerprint() const;

  /// Convolution spec of a Conv layer.
  ConvSpec conv_spec(int id) const;
  /// Transposed-convolution spec of a ConvT layer producing (target_h, target_w).
  TransposeConvSpec convT_spec(int id, std::size_t target_h, std::size_t target_w) const;

 private:
  std::vector<LayerSpec> layers_;
  std::map<int, std::size_t> index_;
  std::map<int, std::size_t> channels_;
  std::size_t divisor_ = 1;
};

/// The canonical 32-layer network for 3-channel input.
ModelGraph build_mvfcn(double dropout_rate = 0.3);

struct LayerShape {
  int id;
  Shape shape;
};

using ShapeTable = std::vector<LayerShape>;

/// Static per-layer output shapes; input.c must match the input layer.
ShapeTable infer_shapes(const ModelGraph& graph, const Shape& input);

struct ParamCount {
  std::size_t total = 0;
  std::vector<std::pair<int, std::size_t>> per_layer;
};

ParamCount count_params(const ModelGraph& graph);

/// Tab-separated layer table (id, type, output shape, inputs, params) followed
/// by a total row.
std::string summary(const ModelGraph& graph, std::size_t height = 240, std::size_t width = 320);

// ---------------------------------------------------------------------------
// Parameters

enum class ParamRole : std::uint8_t {
  Weight = 0,
  Bias = 1,
  Gamma = 2,
  Beta = 3,
  RunningMean = 4,
  RunningVar = 5,
};

const char* to_string(ParamRole role);
bool is_trainable(ParamRole role);

struct ParamKey {
  int layer = 0;
  ParamRole role = ParamRole::Weight;
  auto operator<=>(const ParamKey&) const = default;
};

std::string to_string(const ParamKey& key);

template <typename T>
struct ParamView {
  ParamKey key;
  Shape shape;
  std::span<T> data;
};

template <typename T>
struct ConvParams {
  BasicTensor<T> weight;
  std::vector<T> bias;
};

template <typename T>
struct ModelParams {
  std::map<int, ConvParams<T>> conv;
  std::map<int, BatchNormState<T>> norm;

  /// All tensors in key order; buffers (running statistics) only on request.
  std::vector<ParamView<T>> views(bool include_buffers = false);
  std::vector<ParamView<const T>> views(bool include_buffers = false) const;

  template <typename U>
  ModelParams<U> cast() const {
    ModelParams<U> out;
    for (const auto& [id, p] : conv) {
      out.conv[id] = {p.weight.template cast<U>(), std::vector<U>(p.bias.begin(), p.bias.end())};
    }
    for (const auto& [id, s] : norm) {
      BatchNormState<U> t;
      t.gamma.assign(s.gamma.begin(), s.gamma.end());
      t.beta.assign(s.beta.begin(), s.beta.end());
      t.running_mean.assign(s.running_mean.begin(), s.running_mean.end());
      t.running_var.assign(s.running_var.begin(), s.running_var.end());
      t.eps = static_cast<U>(s.eps);
      t.momentum = static_cast<U>(s.momentum);
      t.calibrated = s.calibrated;
      out.norm[id] = std::move(t);
    }
    return out;
  }

  bool operator==(const ModelParams&) const;
};

/// Gradient per trainable parameter, shaped like the parameter.
template <typename T>
using Gradients = std::map<ParamKey, BasicTensor<T>>;

struct InitOptions {
  double bn_momentum = 0.99;
};

/// Fan-in scaled uniform weights (gain sqrt(2) ahead of ReLU, 0.1 on the
/// output layer, 1 otherwise), zero biases, gamma = 1, beta = 0.
ModelParams<float> init_params(const ModelGraph& graph, Rng& rng, const InitOptions& opts = {});

/// Every weight, bias and shift zero; gamma = 1.
template <typename T>
ModelParams<T> zero_params(const ModelGraph& graph);

// ---------------------------------------------------------------------------
// Execution

template <typename T>
struct ForwardCache {
  Mode mode = Mode::Infer;
  std::uint64_t fingerprint = 0;
  /// Post-activation output of every layer (Train mode only).
  std::map<int, BasicTensor<T>> outputs;
  std::map<int, BatchNormCache<T>> norm;
  std::map<int, BasicTensor<T>> dropout_masks;
  /// Pre-activation of the output layer.
  BasicTensor<T> logits;
  BasicTensor<T> scores;
  bool valid = false;
};

/// Runs the graph and returns the output layer's activation (the score map for
/// the canonical graph). Train mode updates batch-norm running statistics and
/// draws dropout masks from `rng`.
template <typename T>
BasicTensor<T> forward(const ModelGraph& graph, ModelParams<T>& params, const BasicTensor<T>& x,
                       Mode mode, Rng& rng, ForwardCache<T>* cache = nullptr);

/// Backpropagates the gradient of the loss w.r.t. the output layer's
/// pre-activation (logits) through a Train-mode cache.
template <typename T>
Gradients<T> backward(const ModelGraph& graph, const ModelParams<T>& params,
                      const ForwardCache<T>& cache, const BasicTensor<T>& d_logits);

/// As backward(), starting from the gradient w.r.t. the emitted score map.
template <typename T>
Gradients<T> backward_from_scores(const ModelGraph& graph, const ModelParams<T>& params,
                                  const ForwardCache<T>& cache, const BasicTensor<T>& d_scores);

}  // namespace mvfcn
