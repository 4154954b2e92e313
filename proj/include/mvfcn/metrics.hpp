#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mvfcn/postproc.hpp"

namespace mvfcn {

struct ConfusionCounts {
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t fn = 0;
  std::uint64_t tn = 0;

  std::uint64_t total() const { return tp + fp + fn + tn; }
  ConfusionCounts& operator+=(const ConfusionCounts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    tn += o.tn;
    return *this;
  }
  bool operator==(const ConfusionCounts&) const = default;
};

/// Counts over pixels where roi is set (all pixels without an roi).
ConfusionCounts confusion(const BinaryMask& pred, const BinaryMask& gt,
                          const BinaryMask* roi = nullptr);

/// 2tp / (2tp + fp + fn); 1 when prediction and ground truth are both empty.
double fom(const ConfusionCounts& c);
/// tp / (tp + fp); 1 when nothing was predicted and nothing was missed.
double precision(const ConfusionCounts& c);
/// tp / (tp + fn); 1 when the ground truth is empty and nothing was predicted.
double recall(const ConfusionCounts& c);

inline constexpr double kSoftFomEps = 1e-8;

/// Differentiable approximation 2*I/U with I = sum(x*y) + eps and
/// U = sum(x + y) + eps.
double fom_soft(const ScoreMap& x, const BinaryMask& y);
double fom_soft(const BinaryMask& x, const BinaryMask& y);

struct FrameScore {
  ConfusionCounts counts;
  double precision = 0;
  double recall = 0;
  double fom = 0;
};

struct FoMReport {
  std::vector<FrameScore> frames;
  /// From counts pooled over every frame.
  FrameScore aggregate;
  /// Unweighted mean of the per-frame FoM.
  double mean_frame_fom = 0;

  /// Human-readable table.
  std::string table(const std::vector<std::string>& names = {}) const;
  /// `key=value` lines: frames, aggregate_*, mean_frame_fom, then
  /// frame.<i>.{name,tp,fp,fn,tn,precision,recall,fom}.
  std::string record(const std::vector<std::string>& names = {}) const;
};

FrameScore score_counts(const ConfusionCounts& c);

FoMReport evaluate_sequence(const std::vector<BinaryMask>& preds,
                            const std::vector<BinaryMask>& gts,
                            const std::vector<BinaryMask>* rois = nullptr);

}  // namespace mvfcn
