#include <algorithm>
#include <cmath>

#include "mvfcn/graph.hpp"

namespace mvfcn {

const char* to_string(ParamRole role) {
  switch (role) {
    case ParamRole::Weight: return "weight";
    case ParamRole::Bias: return "bias";
    case ParamRole::Gamma: return "gamma";
    case ParamRole::Beta: return "beta";
    case ParamRole::RunningMean: return "running_mean";
    case ParamRole::RunningVar: return "running_var";
  }
  return "?";
}

bool is_trainable(ParamRole role) {
  return role != ParamRole::RunningMean && role != ParamRole::RunningVar;
}

std::string to_string(const ParamKey& key) {
  return "layer " + std::to_string(key.layer) + " " + to_string(key.role);
}

namespace {

template <typename T, typename Params>
std::vector<ParamView<T>> collect_views(Params& p, bool include_buffers) {
  std::vector<ParamView<T>> out;
  for (auto& [id, c] : p.conv) {
    out.push_back({{id, ParamRole::Weight}, c.weight.shape(), c.weight.data()});
    out.push_back({{id, ParamRole::Bias}, Shape{1, c.bias.size(), 1, 1}, std::span<T>(c.bias)});
  }
  for (auto& [id, s] : p.norm) {
    const Shape sh{1, s.channels(), 1, 1};
    out.push_back({{id, ParamRole::Gamma}, sh, std::span<T>(s.gamma)});
    out.push_back({{id, ParamRole::Beta}, sh, std::span<T>(s.beta)});
    if (include_buffers) {
      out.push_back({{id, ParamRole::RunningMean}, sh, std::span<T>(s.running_mean)});
      out.push_back({{id, ParamRole::RunningVar}, sh, std::span<T>(s.running_var)});
    }
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.key < b.key; });
  return out;
}

template <typename T>
const ConvParams<T>& conv_params(const ModelParams<T>& p, int id) {
  auto it = p.conv.find(id);
  if (it == p.conv.end()) {
    throw ShapeError("missing parameters for layer " + std::to_string(id));
  }
  return it->second;
}

template <typename T>
BatchNormState<T>& norm_state(ModelParams<T>& p, int id) {
  auto it = p.norm.find(id);
  if (it == p.norm.end()) {
    throw ShapeError("missing batch-norm state for layer " + std::to_string(id));
  }
  return it->second;
}

Shape weight_shape(const ModelGraph& graph, const LayerSpec& l) {
  const auto k = static_cast<std::size_t>(l.kernel);
  const std::size_t in_c = graph.in_channels(l.id);
  if (l.kind == LayerKind::Conv) return {l.out_channels, in_c, k, k};
  return {in_c, l.out_channels, k, k};
}

template <typename T>
void accumulate(std::map<int, BasicTensor<T>>& grads, int id, BasicTensor<T>&& g) {
  auto it = grads.find(id);
  if (it == grads.end()) {
    grads.emplace(id, std::move(g));
    return;
  }
  auto dst = it->second.data();
  auto src = g.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

template <typename T>
BasicTensor<T> apply_activation(Activation a, const BasicTensor<T>& pre) {
  switch (a) {
    case Activation::ReLU: return relu(pre);
    case Activation::Sigmoid: return sigmoid(pre);
    case Activation::None: break;
  }
  return pre;
}

}  // namespace

template <typename T>
std::vector<ParamView<T>> ModelParams<T>::views(bool include_buffers) {
  return collect_views<T>(*this, include_buffers);
}

template <typename T>
std::vector<ParamView<const T>> ModelParams<T>::views(bool include_buffers) const {
  return collect_views<const T>(*this, include_buffers);
}

template <typename T>
bool ModelParams<T>::operator==(const ModelParams& other) const {
  const auto a = views(true);
  const auto b = other.views(true);
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].key != b[i].key || a[i].shape != b[i].shape) return false;
    if (!std::equal(a[i].data.begin(), a[i].data.end(), b[i].data.begin())) return false;
  }
  return true;
}

ModelParams<float> init_params(const ModelGraph& graph, Rng& rng, const InitOptions& opts) {
  ModelParams<float> p;
  for (const LayerSpec& l : graph.layers()) {
    if (l.kind == LayerKind::Conv || l.kind == LayerKind::ConvT) {
      const Shape ws = weight_shape(graph, l);
      const double fan_in = static_cast<double>(ws.c) * ws.h * ws.w;
      // The sigmoid head starts small so initial predictions sit near 0.5.
      const double gain2 = l.activation == Activation::ReLU ? 2.0
                           : l.id == graph.output_id()       ? 0.01
                                                             : 1.0;
      const double bound = std::sqrt(3.0 * gain2 / fan_in);
      ConvParams<float> c{BasicTensor<float>(ws), std::vector<float>(l.out_channels, 0.0f)};
      for (float& v : c.weight.data()) v = static_cast<float>(rng.uniform(-bound, bound));
      p.conv.emplace(l.id, std::move(c));
    } else if (l.kind == LayerKind::BatchNorm) {
      BatchNormState<float> s(graph.channels(l.id));
      s.momentum = static_cast<float>(opts.bn_momentum);
      p.norm.emplace(l.id, std::move(s));
    }
  }
  return p;
}

template <typename T>
ModelParams<T> zero_params(const ModelGraph& graph) {
  ModelParams<T> p;
  for (const LayerSpec& l : graph.layers()) {
    if (l.kind == LayerKind::Conv || l.kind == LayerKind::ConvT) {
      p.conv.emplace(l.id, ConvParams<T>{BasicTensor<T>(weight_shape(graph, l)),
                                         std::vector<T>(l.out_channels, T(0))});
    } else if (l.kind == LayerKind::BatchNorm) {
      p.norm.emplace(l.id, BatchNormState<T>(graph.channels(l.id)));
    }
  }
  return p;
}

template <typename T>
BasicTensor<T> forward(const ModelGraph& graph, ModelParams<T>& params, const BasicTensor<T>& x,
                       Mode mode, Rng& rng, ForwardCache<T>* cache) {
  if (graph.empty()) throw ShapeError("forward: empty graph");
  infer_shapes(graph, x.shape());

  const bool keep = mode == Mode::Train && cache != nullptr;
  if (cache != nullptr) {
    *cache = ForwardCache<T>{};
    cache->mode = mode;
    cache->fingerprint = graph.fingerprint();
  }
  std::map<int, int> pending_uses;
  for (const LayerSpec& l : graph.layers()) {
    for (int in : l.inputs) ++pending_uses[in];
  }

  std::map<int, BasicTensor<T>> acts;
  BasicTensor<T> result;
  for (const LayerSpec& l : graph.layers()) {
    BasicTensor<T> pre;
    switch (l.kind) {
      case LayerKind::Input:
        pre = x;
        break;
      case LayerKind::Conv: {
        const auto& p = conv_params(params, l.id);
        pre = conv2d_forward<T>(acts.at(l.inputs.front()), p.weight, p.bias, graph.conv_spec(l.id));
        break;
      }
      case LayerKind::ConvT: {
        const auto& in = acts.at(l.inputs.front());
        const auto& p = conv_params(params, l.id);
        const auto s = static_cast<std::size_t>(l.stride);
        const auto spec = graph.convT_spec(l.id, in.shape().h * s, in.shape().w * s);
        pre = convT2d_forward<T>(in, p.weight, p.bias, spec);
        break;
      }
      case LayerKind::Concat: {
        std::vector<const BasicTensor<T>*> parts;
        for (int in : l.inputs) parts.push_back(&acts.at(in));
        pre = concat_channels<T>(std::span<const BasicTensor<T>* const>(parts));
        break;
      }
      case LayerKind::BatchNorm:
        pre = batchnorm_forward(acts.at(l.inputs.front()), norm_state(params, l.id), mode,
                                keep ? &cache->norm[l.id] : nullptr);
        break;
      case LayerKind::Dropout:
        pre = dropout(acts.at(l.inputs.front()), l.dropout_rate, rng, mode,
                      keep ? &cache->dropout_masks[l.id] : nullptr);
        break;
    }
    const bool is_output = l.id == graph.output_id();
    if (is_output && cache != nullptr) cache->logits = pre;
    BasicTensor<T> out = apply_activation(l.activation, pre);
    if (!keep) {
      for (int in : l.inputs) {
        if (--pending_uses[in] == 0) acts.erase(in);
      }
    }
    if (is_output) {
      result = out;
      if (cache != nullptr) cache->scores = out;
    }
    acts.insert_or_assign(l.id, std::move(out));
  }
  if (keep) cache->outputs = std::move(acts);
  if (cache != nullptr) cache->valid = true;
  return result;
}

template <typename T>
Gradients<T> backward(const ModelGraph& graph, const ModelParams<T>& params,
                      const ForwardCache<T>& cache, const BasicTensor<T>& d_logits) {
  if (!cache.valid || cache.mode != Mode::Train || cache.outputs.empty()) {
    throw Error("backward: requires the cache of a Train-mode forward pass");
  }
  if (cache.fingerprint != graph.fingerprint()) {
    throw Error("backward: cache was produced by a different graph");
  }
  if (d_logits.shape() != cache.logits.shape()) {
    throw ShapeError("backward: gradient shaped " + d_logits.shape().str() +
                     " but output is " + cache.logits.shape().str());
  }

  Gradients<T> grads;
  for (const auto& v : params.views(false)) grads.emplace(v.key, BasicTensor<T>(v.shape));

  std::map<int, BasicTensor<T>> d_acts;
  const auto& layers = graph.layers();
  for (auto it = layers.rbegin(); it != layers.rend(); ++it) {
    const LayerSpec& l = *it;
    BasicTensor<T> d_pre;
    if (l.id == graph.output_id()) {
      d_pre = d_logits;
    } else {
      auto found = d_acts.find(l.id);
      if (found == d_acts.end()) continue;
      const BasicTensor<T>& out = cache.outputs.at(l.id);
      switch (l.activation) {
        case Activation::ReLU: d_pre = relu_backward(out, found->second); break;
        case Activation::Sigmoid: d_pre = sigmoid_backward(out, found->second); break;
        case Activation::None: d_pre = std::move(found->second); break;
      }
      d_acts.erase(found);
    }

    switch (l.kind) {
      case LayerKind::Input:
        break;
      case LayerKind::Conv: {
        const auto& p = conv_params(params, l.id);
        auto g = conv2d_backward<T>(cache.outputs.at(l.inputs.front()), p.weight,
                                    graph.conv_spec(l.id), d_pre);
        grads[{l.id, ParamRole::Weight}] = std::move(g.d_weights);
        grads[{l.id, ParamRole::Bias}] = BasicTensor<T>(Shape{1, g.d_bias.size(), 1, 1}, g.d_bias);
        accumulate(d_acts, l.inputs.front(), std::move(g.d_x));
        break;
      }
      case LayerKind::ConvT: {
        const auto& p = conv_params(params, l.id);
        const auto spec = graph.convT_spec(l.id, d_pre.shape().h, d_pre.shape().w);
        auto g = convT2d_backward<T>(cache.outputs.at(l.inputs.front()), p.weight, spec, d_pre);
        grads[{l.id, ParamRole::Weight}] = std::move(g.d_weights);
        grads[{l.id, ParamRole::Bias}] = BasicTensor<T>(Shape{1, g.d_bias.size(), 1, 1}, g.d_bias);
        accumulate(d_acts, l.inputs.front(), std::move(g.d_x));
        break;
      }
      case LayerKind::Concat: {
        std::vector<std::size_t> split;
        for (int in : l.inputs) split.push_back(graph.channels(in));
        auto parts = concat_backward<T>(d_pre, split);
        for (std::size_t k = 0; k < parts.size(); ++k) {
          accumulate(d_acts, l.inputs[k], std::move(parts[k]));
        }
        break;
      }
      case LayerKind::BatchNorm: {
        auto g = batchnorm_backward(cache.norm.at(l.id), params.norm.at(l.id), d_pre);
        const Shape sh{1, g.d_gamma.size(), 1, 1};
        grads[{l.id, ParamRole::Gamma}] = BasicTensor<T>(sh, std::move(g.d_gamma));
        grads[{l.id, ParamRole::Beta}] = BasicTensor<T>(sh, std::move(g.d_beta));
        accumulate(d_acts, l.inputs.front(), std::move(g.d_x));
        break;
      }
      case LayerKind::Dropout:
        accumulate(d_acts, l.inputs.front(),
                   dropout_backward(d_pre, cache.dropout_masks.at(l.id)));
        break;
    }
  }
  return grads;
}

template <typename T>
Gradients<T> backward_from_scores(const ModelGraph& graph, const ModelParams<T>& params,
                                  const ForwardCache<T>& cache, const BasicTensor<T>& d_scores) {
  if (d_scores.shape() != cache.scores.shape()) {
    throw ShapeError("backward_from_scores: gradient shape mismatch");
  }
  switch (graph.layer(graph.output_id()).activation) {
    case Activation::Sigmoid:
      return backward(graph, params, cache, sigmoid_backward(cache.scores, d_scores));
    case Activation::ReLU:
      return backward(graph, params, cache, relu_backward(cache.scores, d_scores));
    case Activation::None:
      break;
  }
  return backward(graph, params, cache, d_scores);
}

#define MVFCN_INSTANTIATE_MODEL(T)                                                            \
  template struct ModelParams<T>;                                                            \
  template ModelParams<T> zero_params<T>(const ModelGraph&);                                 \
  template BasicTensor<T> forward(const ModelGraph&, ModelParams<T>&, const BasicTensor<T>&, \
                                  Mode, Rng&, ForwardCache<T>*);                             \
  template Gradients<T> backward(const ModelGraph&, const ModelParams<T>&,                   \
                                 const ForwardCache<T>&, const BasicTensor<T>&);             \
  template Gradients<T> backward_from_scores(const ModelGraph&, const ModelParams<T>&,       \
                                             const ForwardCache<T>&, const BasicTensor<T>&);

MVFCN_INSTANTIATE_MODEL(float)
MVFCN_INSTANTIATE_MODEL(double)

#undef MVFCN_INSTANTIATE_MODEL

}  // namespace mvfcn
