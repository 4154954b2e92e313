#pragma once

// Differentiable primitives on NCHW tensors. Every op has a hand-written
// backward pass; all templates are instantiated for float (training and
// inference) and double (gradient checks).

#include <cstddef>
#include <span>
#include <vector>

#include "mvfcn/rng.hpp"
#include "mvfcn/tensor.hpp"

namespace mvfcn {

enum class Mode { Train, Infer };

enum class PadMode {
  /// Output extent ceil(in/S); the odd padding pixel goes to the bottom/right.
  SameFloor,
  /// Symmetric zero padding of `pad` pixels, output floor((in + 2P - K)/S) + 1.
  Explicit,
};

struct ConvSpec {
  int kernel = 3;
  int stride = 1;
  PadMode padding = PadMode::SameFloor;
  int pad = 0;  // only read for PadMode::Explicit
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
};

/// Sliding-window geometry along one spatial axis:
/// out[o] reads in[o*stride + k - pad_before] for k in [0, kernel).
struct AxisWindow {
  std::size_t in = 0;
  std::size_t out = 0;
  int kernel = 1;
  int stride = 1;
  int pad_before = 0;
};

/// Resolves the window of `spec` over an axis of extent `in`.
AxisWindow conv_axis(std::size_t in, const ConvSpec& spec);

/// Transposed convolution realised as the exact adjoint of a strided
/// convolution. With symmetric padding P the output extent is
/// S*(i'-1) + alpha + K - 2P, alpha = (i + 2P - K) mod S for target extent i.
struct TransposeConvSpec {
  int kernel = 3;
  int stride = 2;
  int pad_top = 1;
  int pad_bottom = 1;
  int pad_left = 1;
  int pad_right = 1;
  int alpha_h = 1;
  int alpha_w = 1;
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;

  /// Symmetric padding P; alpha derived from the desired output extents.
  static TransposeConvSpec symmetric(int kernel, int stride, int pad, std::size_t in_channels,
                                     std::size_t out_channels, std::size_t target_h,
                                     std::size_t target_w);

  /// The transpose of `conv` applied to an input of extent (in_h, in_w).
  /// Channels swap: the transpose maps conv.out_channels -> conv.in_channels.
  static TransposeConvSpec adjoint_of(const ConvSpec& conv, std::size_t in_h, std::size_t in_w);

  std::size_t output_h(std::size_t in_h) const;
  std::size_t output_w(std::size_t in_w) const;
};

/// Number of zeros appended after the dilated input so the transpose reaches
/// `target`: (target + 2P - K) mod S. Throws if the operands are negative.
int transpose_alpha(std::size_t target, int kernel, int stride, int pad);

// ---------------------------------------------------------------------------
// Convolution

template <typename T>
struct ConvGrads {
  BasicTensor<T> d_x;
  BasicTensor<T> d_weights;
  std::vector<T> d_bias;
};

/// Zero-padded cross-correlation. weights: (Cout, Cin, K, K).
template <typename T>
BasicTensor<T> conv2d_forward(const BasicTensor<T>& x, const BasicTensor<T>& weights,
                              std::span<const T> bias, const ConvSpec& spec);

template <typename T>
ConvGrads<T> conv2d_backward(const BasicTensor<T>& x, const BasicTensor<T>& weights,
                             const ConvSpec& spec, const BasicTensor<T>& d_out);

/// weights: (Cin, Cout, K, K), i.e. the weight tensor of the convolution this
/// op transposes.
template <typename T>
BasicTensor<T> convT2d_forward(const BasicTensor<T>& x, const BasicTensor<T>& weights,
                               std::span<const T> bias, const TransposeConvSpec& spec);

template <typename T>
ConvGrads<T> convT2d_backward(const BasicTensor<T>& x, const BasicTensor<T>& weights,
                              const TransposeConvSpec& spec, const BasicTensor<T>& d_out);

// ---------------------------------------------------------------------------
// Activations

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& x);

/// Gradient of relu given its input (or output; the sign pattern is shared).
template <typename T>
BasicTensor<T> relu_backward(const BasicTensor<T>& x, const BasicTensor<T>& d_out);

template <typename T>
T sigmoid(T x);

template <typename T>
BasicTensor<T> sigmoid(const BasicTensor<T>& x);

/// Gradient of sigmoid given its output.
template <typename T>
BasicTensor<T> sigmoid_backward(const BasicTensor<T>& out, const BasicTensor<T>& d_out);

// ---------------------------------------------------------------------------
// Batch normalization

template <typename T>
struct BatchNormState {
  std::vector<T> gamma;
  std::vector<T> beta;
  std::vector<T> running_mean;
  std::vector<T> running_var;
  T eps = T(0.001);
  T momentum = T(0.99);
  /// False until a Train step ran or statistics were loaded from a checkpoint.
  bool calibrated = false;

  BatchNormState() = default;
  explicit BatchNormState(std::size_t channels)
      : gamma(channels, T(1)), beta(channels, T(0)), running_mean(channels, T(0)),
        running_var(channels, T(1)) {}

  std::size_t channels() const { return gamma.size(); }
};

template <typename T>
struct BatchNormCache {
  BasicTensor<T> x_hat;
  std::vector<T> inv_std;
};

template <typename T>
struct BatchNormGrads {
  BasicTensor<T> d_x;
  std::vector<T> d_gamma;
  std::vector<T> d_beta;
};

/// Train mode normalizes with mini-batch statistics over (N, H, W) and updates
/// the running averages; Infer mode uses the running averages.
template <typename T>
BasicTensor<T> batchnorm_forward(const BasicTensor<T>& x, BatchNormState<T>& state, Mode mode,
                                 BatchNormCache<T>* cache = nullptr);

/// Backward of a Train-mode forward.
template <typename T>
BatchNormGrads<T> batchnorm_backward(const BatchNormCache<T>& cache,
                                     const BatchNormState<T>& state,
                                     const BasicTensor<T>& d_out);

// ---------------------------------------------------------------------------
// Structural ops

template <typename T>
BasicTensor<T> concat_channels(std::span<const BasicTensor<T>* const> inputs);

template <typename T>
BasicTensor<T> concat_channels(const std::vector<BasicTensor<T>>& inputs);

/// Splits d_out back into per-input gradients with the given channel counts.
template <typename T>
std::vector<BasicTensor<T>> concat_backward(const BasicTensor<T>& d_out,
                                            std::span<const std::size_t> channels);

/// Inverted dropout. In Train mode `mask` (if given) receives the per-element
/// scale (0 or 1/(1-rate)).
template <typename T>
BasicTensor<T> dropout(const BasicTensor<T>& x, double rate, Rng& rng, Mode mode,
                       BasicTensor<T>* mask = nullptr);

template <typename T>
BasicTensor<T> dropout_backward(const BasicTensor<T>& d_out, const BasicTensor<T>& mask);

/// Nearest-neighbour resize: out[i] = in[floor(i * in_size / out_size)].
template <typename T>
BasicTensor<T> resize_nearest(const BasicTensor<T>& image, std::size_t target_h,
                              std::size_t target_w);

}  // namespace mvfcn
