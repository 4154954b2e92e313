#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "mvfcn/metrics.hpp"
#include "mvfcn/train.hpp"

namespace mvfcn {

void AugmentConfig::validate() const {
  if (!(max_rotation_deg >= 0.0 && max_rotation_deg < 180.0)) {
    throw ConfigError("max_rotation_deg must lie in [0, 180)");
  }
  if (!(shift_fraction >= 0.0 && shift_fraction < 1.0)) {
    throw ConfigError("shift_fraction must lie in [0, 1)");
  }
  if (!(zoom_fraction >= 0.0 && zoom_fraction < 1.0)) {
    throw ConfigError("zoom_fraction must lie in [0, 1)");
  }
}

void TrainConfig::validate() const {
  if (!(base_lr > 0.0)) throw ConfigError("base_lr must be positive");
  if (!(lr_decay_factor > 0.0 && lr_decay_factor < 1.0)) {
    throw ConfigError("lr_decay_factor must lie in (0, 1)");
  }
  if (lr_decay_every < 0) throw ConfigError("lr_decay_every must be >= 0 (0 disables decay)");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (max_epochs < 1) throw ConfigError("max_epochs must be positive");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ConfigError("dropout_rate must lie in [0, 1)");
  if (!(bn_momentum > 0.0 && bn_momentum < 1.0)) throw ConfigError("bn_momentum must lie in (0, 1)");
  if (!(split_ratio > 0.0 && split_ratio < 1.0)) throw ConfigError("split_ratio must lie in (0, 1)");
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0) || !(adam.beta2 >= 0.0 && adam.beta2 < 1.0) ||
      !(adam.eps > 0.0)) {
    throw ConfigError("adam betas must lie in [0, 1) and eps must be positive");
  }
  augment.validate();
}

template <typename T>
BceResult<T> bce_loss(const BasicTensor<T>& logits, const BasicTensor<T>& target) {
  if (logits.shape() != target.shape()) {
    throw ShapeError("bce_loss: logits " + logits.shape().str() + " vs target " +
                     target.shape().str());
  }
  BceResult<T> r{0.0, BasicTensor<T>(logits.shape())};
  auto z = logits.data();
  auto p = target.data();
  auto d = r.d_logits.data();
  const double count = static_cast<double>(z.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double zi = z[i];
    const double pi = p[i];
    if (!(pi >= 0.0 && pi <= 1.0)) {
      throw DataError("bce_loss: target value " + std::to_string(pi) + " outside [0, 1]");
    }
    sum += std::max(zi, 0.0) - zi * pi + std::log1p(std::exp(-std::abs(zi)));
    d[i] = static_cast<T>((sigmoid(zi) - pi) / count);
  }
  r.loss = sum / count;
  return r;
}

template BceResult<float> bce_loss(const BasicTensor<float>&, const BasicTensor<float>&);
template BceResult<double> bce_loss(const BasicTensor<double>&, const BasicTensor<double>&);

void adam_step(ModelParams<float>& params, const Gradients<float>& grads, AdamState& state) {
  state.t += 1;
  const double b1 = state.config.beta1, b2 = state.config.beta2;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(state.t));
  for (auto& view : params.views(false)) {
    auto g = grads.find(view.key);
    if (g == grads.end()) throw ShapeError("adam_step: no gradient for " + to_string(view.key));
    if (g->second.shape() != view.shape) {
      throw ShapeError("adam_step: gradient for " + to_string(view.key) + " shaped " +
                       g->second.shape().str() + ", parameter " + view.shape.str());
    }
    auto& m = state.m[view.key];
    auto& v = state.v[view.key];
    m.resize(view.data.size(), 0.0f);
    v.resize(view.data.size(), 0.0f);
    auto gd = g->second.data();
    for (std::size_t i = 0; i < view.data.size(); ++i) {
      const double gi = gd[i];
      m[i] = static_cast<float>(b1 * m[i] + (1.0 - b1) * gi);
      v[i] = static_cast<float>(b2 * v[i] + (1.0 - b2) * gi * gi);
      const double m_hat = m[i] / bc1;
      const double v_hat = v[i] / bc2;
      view.data[i] = static_cast<float>(view.data[i] -
                                        state.lr * m_hat / (std::sqrt(v_hat) + state.config.eps));
    }
  }
}

double lr_at(int epoch, const TrainConfig& cfg) {
  if (epoch < 0) throw ConfigError("lr_at: negative epoch");
  if (cfg.lr_decay_every <= 0) return cfg.base_lr;
  return cfg.base_lr * std::pow(cfg.lr_decay_factor, epoch / cfg.lr_decay_every);
}

std::vector<std::size_t> SplitSpec::train_ids() const {
  std::vector<std::size_t> ids(k);
  std::iota(ids.begin(), ids.end(), std::size_t{1});
  return ids;
}

std::vector<std::size_t> SplitSpec::test_ids() const {
  std::vector<std::size_t> ids(n - k);
  std::iota(ids.begin(), ids.end(), k + 1);
  return ids;
}

SplitSpec ordered_split(std::size_t n, double ratio) {
  if (n < 2) throw DataError("ordered_split: need at least 2 annotated frames, got " + std::to_string(n));
  if (!(ratio > 0.0 && ratio < 1.0)) throw ConfigError("ordered_split: ratio must lie in (0, 1)");
  auto k = static_cast<std::size_t>(std::floor(static_cast<double>(n) * ratio));
  // Both sides must stay non-empty.
  k = std::clamp<std::size_t>(k, 1, n - 1);
  return {n, k};
}

// ---------------------------------------------------------------------------

TrainState start_fresh(const ModelGraph& graph, const TrainConfig& cfg) {
  cfg.validate();
  TrainState s;
  s.rng = Rng(cfg.seed);
  s.params = init_params(graph, s.rng, InitOptions{cfg.bn_momentum});
  s.best_params = s.params;
  s.adam.config = cfg.adam;
  s.adam.lr = cfg.base_lr;
  return s;
}

ModelParams<float> transfer_init(const Checkpoint& source, const ModelGraph& graph) {
  return params_from_checkpoint(source, graph, 0);
}

TrainState start_from(const ModelGraph& graph, const TrainConfig& cfg,
                      const ModelParams<float>& init) {
  cfg.validate();
  TrainState s;
  s.rng = Rng(cfg.seed);
  s.params = init;
  // Shape check against the graph.
  const ModelParams<float> expect = zero_params<float>(graph);
  const auto a = expect.views(true);
  const auto b = s.params.views(true);
  if (a.size() != b.size()) throw CheckpointError("initial parameters do not cover the graph");
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].key != b[i].key || a[i].shape != b[i].shape) {
      throw CheckpointError("initial parameters mismatch at " + to_string(b[i].key));
    }
  }
  for (auto& [id, n] : s.params.norm) n.momentum = static_cast<float>(cfg.bn_momentum);
  s.best_params = s.params;
  s.adam.config = cfg.adam;
  s.adam.lr = cfg.base_lr;
  return s;
}

namespace {

void put_double(std::vector<std::uint32_t>& words, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  words.push_back(static_cast<std::uint32_t>(bits));
  words.push_back(static_cast<std::uint32_t>(bits >> 32));
}

double get_double(const std::vector<std::uint32_t>& words, std::size_t at) {
  return std::bit_cast<double>(static_cast<std::uint64_t>(words.at(at)) |
                               (static_cast<std::uint64_t>(words.at(at + 1)) << 32));
}

std::vector<std::uint32_t> dims_of(const Shape& s) {
  return {static_cast<std::uint32_t>(s.n), static_cast<std::uint32_t>(s.c),
          static_cast<std::uint32_t>(s.h), static_cast<std::uint32_t>(s.w)};
}

}  // namespace

Checkpoint state_checkpoint(const ModelGraph& graph, const TrainState& state) {
  Checkpoint ckpt = make_checkpoint(graph, state.params, state.rng.state());
  for (const auto& view : state.params.views(false)) {
    const auto role = static_cast<std::uint8_t>(view.key.role);
    const auto layer = static_cast<std::uint16_t>(view.key.layer);
    static const std::vector<float> none;
    auto mit = state.adam.m.find(view.key);
    auto vit = state.adam.v.find(view.key);
    std::vector<float> zeros(view.data.size(), 0.0f);
    const auto& m = mit != state.adam.m.end() ? mit->second : zeros;
    const auto& v = vit != state.adam.v.end() ? vit->second : zeros;
    ckpt.entries.push_back(CheckpointEntry::from_floats(
        layer, static_cast<std::uint8_t>(checkpoint_role::kAdamM + role), dims_of(view.shape), m));
    ckpt.entries.push_back(CheckpointEntry::from_floats(
        layer, static_cast<std::uint8_t>(checkpoint_role::kAdamV + role), dims_of(view.shape), v));
  }
  append_params(ckpt, state.best_params, checkpoint_role::kBest);

  std::vector<std::uint32_t> words;
  words.push_back(static_cast<std::uint32_t>(state.epochs_done));
  words.push_back(static_cast<std::uint32_t>(state.adam.t));
  words.push_back(static_cast<std::uint32_t>(state.adam.t >> 32));
  words.push_back(static_cast<std::uint32_t>(state.best_epoch));
  put_double(words, state.best_val_fom);
  put_double(words, state.adam.lr);
  ckpt.entries.push_back({0, checkpoint_role::kTrainState,
                          {static_cast<std::uint32_t>(words.size())}, std::move(words)});

  std::vector<std::uint32_t> hist;
  for (const auto& r : state.history) {
    put_double(hist, r.epoch);
    put_double(hist, r.lr);
    put_double(hist, r.train_loss);
    put_double(hist, r.val_loss);
    put_double(hist, r.train_fom);
    put_double(hist, r.val_fom);
  }
  ckpt.entries.push_back({0, checkpoint_role::kHistory,
                          {static_cast<std::uint32_t>(state.history.size()), 12},
                          std::move(hist)});
  return ckpt;
}

TrainState state_from_checkpoint(const Checkpoint& ckpt, const ModelGraph& graph,
                                 const TrainConfig& cfg) {
  if (ckpt.fingerprint != graph.fingerprint()) {
    throw CheckpointError("training-state checkpoint was written for a different graph");
  }
  const CheckpointEntry* st = ckpt.find(0, checkpoint_role::kTrainState);
  const auto rng = rng_state_of(ckpt);
  if (st == nullptr || st->words.size() != 8 || !rng) {
    throw CheckpointError("checkpoint does not carry a resumable training state");
  }
  TrainState s = start_from(graph, cfg, params_from_checkpoint(ckpt, graph, 0));
  s.best_params = params_from_checkpoint(ckpt, graph, checkpoint_role::kBest);
  for (auto& [id, n] : s.best_params.norm) n.momentum = static_cast<float>(cfg.bn_momentum);
  s.rng.set_state(*rng);
  s.epochs_done = static_cast<int>(st->words[0]);
  s.adam.t = static_cast<std::uint64_t>(st->words[1]) | (static_cast<std::uint64_t>(st->words[2]) << 32);
  s.best_epoch = static_cast<int>(st->words[3]);
  s.best_val_fom = get_double(st->words, 4);
  s.adam.lr = get_double(st->words, 6);
  for (const auto& view : s.params.views(false)) {
    const auto role = static_cast<std::uint8_t>(view.key.role);
    const auto layer = static_cast<std::uint16_t>(view.key.layer);
    const CheckpointEntry* m = ckpt.find(layer, static_cast<std::uint8_t>(checkpoint_role::kAdamM + role));
    const CheckpointEntry* v = ckpt.find(layer, static_cast<std::uint8_t>(checkpoint_role::kAdamV + role));
    if (m == nullptr || v == nullptr || m->words.size() != view.data.size() ||
        v->words.size() != view.data.size()) {
      throw CheckpointError("optimizer state missing or malformed for " + to_string(view.key));
    }
    s.adam.m[view.key] = m->floats();
    s.adam.v[view.key] = v->floats();
  }
  if (const CheckpointEntry* h = ckpt.find(0, checkpoint_role::kHistory)) {
    for (std::size_t i = 0; i + 12 <= h->words.size(); i += 12) {
      EpochRecord r;
      r.epoch = static_cast<int>(get_double(h->words, i));
      r.lr = get_double(h->words, i + 2);
      r.train_loss = get_double(h->words, i + 4);
      r.val_loss = get_double(h->words, i + 6);
      r.train_fom = get_double(h->words, i + 8);
      r.val_fom = get_double(h->words, i + 10);
      s.history.push_back(std::move(r));
    }
  }
  return s;
}

// ---------------------------------------------------------------------------

namespace {

struct Batch {
  Tensor images;
  Tensor masks;
};

Batch stack(const std::vector<std::pair<Tensor, Tensor>>& items) {
  const Shape is = items.front().first.shape();
  const Shape ms = items.front().second.shape();
  Batch b{Tensor(Shape{items.size(), is.c, is.h, is.w}), Tensor(Shape{items.size(), 1, ms.h, ms.w})};
  for (std::size_t i = 0; i < items.size(); ++i) {
    std::copy_n(items[i].first.data().data(), is.size(), b.images.plane(i, 0));
    std::copy_n(items[i].second.data().data(), ms.size(), b.masks.plane(i, 0));
  }
  return b;
}

void check_dataset(const ModelGraph& graph, const Dataset& data) {
  if (data.samples.empty()) throw DataError("dataset is empty");
  const Shape is = data.samples.front().image.shape();
  if (is.c != graph.channels(graph.input_id())) {
    throw DataError("images have " + std::to_string(is.c) + " channels, the graph expects " +
                    std::to_string(graph.channels(graph.input_id())));
  }
  for (std::size_t i = 0; i < data.samples.size(); ++i) {
    const Sample& s = data.samples[i];
    const Shape ms = s.mask.shape();
    if (s.image.shape() != is || s.image.shape().n != 1) {
      throw DataError("sample " + std::to_string(i) + ": image shaped " + s.image.shape().str() +
                      ", expected " + is.str());
    }
    if (ms.n != 1 || ms.c != 1 || ms.h != is.h || ms.w != is.w) {
      throw DataError("sample " + std::to_string(i) + ": ground truth shaped " + ms.str() +
                      " does not match image " + is.str());
    }
  }
}

}  // namespace

EvalResult evaluate(const ModelGraph& graph, ModelParams<float>& params,
                    const std::vector<const Sample*>& samples, const TrainConfig& cfg) {
  EvalResult r;
  if (samples.empty()) return r;
  Rng unused(0);
  ConfusionCounts pooled;
  double loss_sum = 0.0;
  for (std::size_t b0 = 0; b0 < samples.size(); b0 += cfg.batch_size) {
    const std::size_t b1 = std::min(samples.size(), b0 + cfg.batch_size);
    std::vector<std::pair<Tensor, Tensor>> items;
    for (std::size_t i = b0; i < b1; ++i) items.emplace_back(samples[i]->image, samples[i]->mask);
    const Batch batch = stack(items);
    ForwardCache<float> cache;
    const Tensor scores = forward(graph, params, batch.images, Mode::Infer, unused, &cache);
    loss_sum += bce_loss(cache.logits, batch.masks).loss * static_cast<double>(b1 - b0);
    for (std::size_t i = 0; i < b1 - b0; ++i) {
      const BinarizeResult bin = binarize(to_score_map(scores, i), cfg.fom_binarize);
      pooled += confusion(bin.mask, to_mask(batch.masks, i));
    }
  }
  r.loss = loss_sum / static_cast<double>(samples.size());
  r.fom = fom(pooled);
  return r;
}

TrainResult train_loop(const ModelGraph& graph, const Dataset& data, const TrainConfig& cfg,
                       TrainState state, const EpochCallback& on_epoch) {
  cfg.validate();
  check_dataset(graph, data);
  const SplitSpec split = ordered_split(data.samples.size(), cfg.split_ratio);
  std::vector<const Sample*> train, val;
  for (std::size_t id : split.train_ids()) train.push_back(&data.samples[id - 1]);
  for (std::size_t id : split.test_ids()) val.push_back(&data.samples[id - 1]);

  TrainResult result;
  const bool calibrated = std::all_of(state.params.norm.begin(), state.params.norm.end(),
                                      [](const auto& kv) { return kv.second.calibrated; });
  if (calibrated) result.initial_val_loss = evaluate(graph, state.params, val, cfg).loss;

  state.adam.config = cfg.adam;
  for (int epoch = state.epochs_done; epoch < cfg.max_epochs; ++epoch) {
    EpochRecord rec;
    rec.epoch = epoch + 1;
    rec.lr = lr_at(epoch, cfg);
    state.adam.lr = rec.lr;

    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[state.rng.below(i)]);
    }

    double loss_sum = 0.0;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += cfg.batch_size) {
      const std::size_t b1 = std::min(order.size(), b0 + cfg.batch_size);
      std::vector<std::pair<Tensor, Tensor>> items;
      for (std::size_t i = b0; i < b1; ++i) {
        const Sample& s = *train[order[i]];
        items.push_back(augment_pair(s.image, s.mask, cfg.augment, state.rng));
      }
      const Batch batch = stack(items);
      ForwardCache<float> cache;
      forward(graph, state.params, batch.images, Mode::Train, state.rng, &cache);
      const BceResult<float> bce = bce_loss(cache.logits, batch.masks);
      const Gradients<float> grads = backward(graph, state.params, cache, bce.d_logits);
      adam_step(state.params, grads, state.adam);
      rec.batch_losses.push_back(bce.loss);
      loss_sum += bce.loss * static_cast<double>(b1 - b0);
    }
    rec.train_loss = loss_sum / static_cast<double>(order.size());
    rec.train_fom = evaluate(graph, state.params, train, cfg).fom;
    const EvalResult v = evaluate(graph, state.params, val, cfg);
    rec.val_loss = v.loss;
    rec.val_fom = v.fom;

    if (rec.val_fom > state.best_val_fom) {
      state.best_val_fom = rec.val_fom;
      state.best_epoch = rec.epoch;
      state.best_params = state.params;
    }
    state.epochs_done = epoch + 1;
    if (on_epoch) on_epoch(rec);
    state.history.push_back(std::move(rec));
  }

  result.best = state.best_epoch > 0 ? state.best_params : state.params;
  result.best_epoch = state.best_epoch;
  result.best_val_fom = std::max(state.best_val_fom, 0.0);
  result.state = std::move(state);
  return result;
}

std::string history_table(const std::vector<EpochRecord>& history) {
  std::ostringstream os;
  os << "epoch\tlr\ttrain_loss\tval_loss\ttrain_fom\tval_fom\n";
  char buf[256];
  for (const auto& r : history) {
    std::snprintf(buf, sizeof buf, "%d\t%.9g\t%.9g\t%.9g\t%.6f\t%.6f\n", r.epoch, r.lr,
                  r.train_loss, r.val_loss, r.train_fom, r.val_fom);
    os << buf;
  }
  return os.str();
}

}  // namespace mvfcn
