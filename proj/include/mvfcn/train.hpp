#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mvfcn/checkpoint.hpp"
#include "mvfcn/graph.hpp"
#include "mvfcn/postproc.hpp"
#include "mvfcn/rng.hpp"

namespace mvfcn {

struct AugmentConfig {
  double max_rotation_deg = 10.0;
  double shift_fraction = 0.1;
  double zoom_fraction = 0.1;
  bool enabled = true;

  void validate() const;
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  bool operator==(const AdamConfig&) const = default;
};

struct TrainConfig {
  double base_lr = 0.0002;
  double lr_decay_factor = 0.8;
  /// Epochs between decays; 0 keeps the rate constant.
  int lr_decay_every = 5;
  std::size_t batch_size = 8;
  int max_epochs = 30;
  double dropout_rate = 0.3;
  double bn_momentum = 0.99;
  double split_ratio = 0.7;
  std::uint64_t seed = 0;
  AdamConfig adam;
  AugmentConfig augment;
  /// Binarization used for the per-epoch FoM.
  BinarizeOptions fom_binarize;

  void validate() const;
};

// ---------------------------------------------------------------------------
// Loss and optimizer

template <typename T>
struct BceResult {
  double loss = 0.0;
  BasicTensor<T> d_logits;
};

/// Mean binary cross-entropy of sigmoid(logits) against targets in [0, 1],
/// evaluated in the fused stable form max(z,0) - z*p + log1p(exp(-|z|)).
/// The gradient is (sigmoid(z) - p) / count.
template <typename T>
BceResult<T> bce_loss(const BasicTensor<T>& logits, const BasicTensor<T>& target);

struct AdamState {
  std::map<ParamKey, std::vector<float>> m;
  std::map<ParamKey, std::vector<float>> v;
  std::uint64_t t = 0;
  AdamConfig config;
  double lr = 0.0002;

  bool operator==(const AdamState&) const = default;
};

/// One bias-corrected Adam update of every trainable parameter.
void adam_step(ModelParams<float>& params, const Gradients<float>& grads, AdamState& state);

/// base_lr * factor^floor(epoch / decay_every).
double lr_at(int epoch, const TrainConfig& cfg);

// ---------------------------------------------------------------------------
// Data

struct SplitSpec {
  std::size_t n = 0;
  std::size_t k = 0;

  /// 1-based frame ids [1, k].
  std::vector<std::size_t> train_ids() const;
  /// 1-based frame ids [k+1, n].
  std::vector<std::size_t> test_ids() const;
};

/// Temporal split at k = floor(n * ratio); never shuffled.
SplitSpec ordered_split(std::size_t n, double ratio = 0.7);

struct AffineParams {
  double rotation_deg = 0.0;
  double shift_x = 0.0;  // pixels
  double shift_y = 0.0;  // pixels
  double zoom = 1.0;
};

AffineParams draw_affine(const AugmentConfig& cfg, std::size_t h, std::size_t w, Rng& rng);

/// Warps an image (1,C,H,W) bilinearly and its mask (1,1,H,W) by nearest
/// neighbour about the image centre; the mask is re-binarized and pixels
/// mapped from outside the frame are zero.
std::pair<Tensor, Tensor> apply_affine(const Tensor& image, const Tensor& gt,
                                       const AffineParams& params);

/// One random transform applied identically to both; identity when disabled.
std::pair<Tensor, Tensor> augment_pair(const Tensor& image, const Tensor& gt,
                                       const AugmentConfig& cfg, Rng& rng);

struct Sample {
  Tensor image;  // (1, C, H, W) in [0, 1]
  Tensor mask;   // (1, 1, H, W) in {0, 1}
};

struct Dataset {
  std::string name;
  std::vector<Sample> samples;
};

// ---------------------------------------------------------------------------
// Training loop

struct EpochRecord {
  int epoch = 0;  // 1-based
  double lr = 0;
  double train_loss = 0;
  double val_loss = 0;
  double train_fom = 0;
  double val_fom = 0;
  /// Loss of every mini-batch in order (not serialized).
  std::vector<double> batch_losses;
};

/// Everything needed to continue a run bit-exactly.
struct TrainState {
  ModelParams<float> params;
  AdamState adam;
  Rng rng;
  int epochs_done = 0;
  double best_val_fom = -1.0;
  int best_epoch = 0;
  ModelParams<float> best_params;
  std::vector<EpochRecord> history;
};

/// Fresh He-style initialization seeded from cfg.seed.
TrainState start_fresh(const ModelGraph& graph, const TrainConfig& cfg);

/// Copies every tensor of a source checkpoint into a new run (full
/// fine-tuning, fresh optimizer). Refuses on any name or shape mismatch.
ModelParams<float> transfer_init(const Checkpoint& source, const ModelGraph& graph);
TrainState start_from(const ModelGraph& graph, const TrainConfig& cfg,
                      const ModelParams<float>& init);

Checkpoint state_checkpoint(const ModelGraph& graph, const TrainState& state);
TrainState state_from_checkpoint(const Checkpoint& ckpt, const ModelGraph& graph,
                                 const TrainConfig& cfg);

struct EvalResult {
  double loss = 0;
  double fom = 0;
};

/// Infer-mode loss and pooled FoM over the given samples.
EvalResult evaluate(const ModelGraph& graph, ModelParams<float>& params,
                    const std::vector<const Sample*>& samples, const TrainConfig& cfg);

struct TrainResult {
  ModelParams<float> best;
  int best_epoch = 0;
  double best_val_fom = 0;
  TrainState state;
  /// Validation loss before the first update; present when the initial
  /// parameters carry batch-norm statistics (e.g. transferred weights).
  std::optional<double> initial_val_loss;

  const std::vector<EpochRecord>& history() const { return state.history; }
};

/// Runs epochs state.epochs_done .. cfg.max_epochs-1 over the ordered split of
/// `data`; validation uses the held-out tail. Returns the best-validation-FoM
/// parameters and the final state.
using EpochCallback = std::function<void(const EpochRecord&)>;

TrainResult train_loop(const ModelGraph& graph, const Dataset& data, const TrainConfig& cfg,
                       TrainState state, const EpochCallback& on_epoch = {});

/// Tab-separated history: epoch, lr, train_loss, val_loss, train_fom, val_fom.
std::string history_table(const std::vector<EpochRecord>& history);

}  // namespace mvfcn
