#include <cstdio>
#include <sstream>

#include "mvfcn/metrics.hpp"

namespace mvfcn {

namespace {

void require_same(std::size_t h1, std::size_t w1, std::size_t h2, std::size_t w2,
                  const char* what) {
  if (h1 != h2 || w1 != w2) {
    throw ShapeError(std::string(what) + ": " + std::to_string(h1) + "x" + std::to_string(w1) +
                     " vs " + std::to_string(h2) + "x" + std::to_string(w2));
  }
}

std::string fixed(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace

ConfusionCounts confusion(const BinaryMask& pred, const BinaryMask& gt, const BinaryMask* roi) {
  require_same(pred.h, pred.w, gt.h, gt.w, "confusion: prediction and ground truth differ");
  if (roi != nullptr) require_same(roi->h, roi->w, gt.h, gt.w, "confusion: roi differs");
  ConfusionCounts c;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (roi != nullptr && !roi->data[i]) continue;
    const bool p = pred.data[i] != 0;
    const bool g = gt.data[i] != 0;
    if (p && g) ++c.tp;
    else if (p) ++c.fp;
    else if (g) ++c.fn;
    else ++c.tn;
  }
  return c;
}

double fom(const ConfusionCounts& c) {
  const std::uint64_t denom = 2 * c.tp + c.fp + c.fn;
  if (denom == 0) return 1.0;  // both empty
  return static_cast<double>(2 * c.tp) / static_cast<double>(denom);
}

double precision(const ConfusionCounts& c) {
  if (c.tp + c.fp == 0) return c.fn == 0 ? 1.0 : 0.0;
  return static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
}

double recall(const ConfusionCounts& c) {
  if (c.tp + c.fn == 0) return c.fp == 0 ? 1.0 : 0.0;
  return static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
}

double fom_soft(const ScoreMap& x, const BinaryMask& y) {
  require_same(x.h, x.w, y.h, y.w, "fom_soft");
  double inter = 0, uni = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double yv = y.data[i] ? 1.0 : 0.0;
    inter += x.data[i] * yv;
    uni += x.data[i] + yv;
  }
  return 2.0 * (inter + kSoftFomEps) / (uni + kSoftFomEps);
}

double fom_soft(const BinaryMask& x, const BinaryMask& y) {
  ScoreMap s(x.h, x.w);
  for (std::size_t i = 0; i < x.size(); ++i) s.data[i] = x.data[i] ? 1.0f : 0.0f;
  return fom_soft(s, y);
}

FrameScore score_counts(const ConfusionCounts& c) {
  return {c, precision(c), recall(c), fom(c)};
}

FoMReport evaluate_sequence(const std::vector<BinaryMask>& preds,
                            const std::vector<BinaryMask>& gts,
                            const std::vector<BinaryMask>* rois) {
  if (preds.size() != gts.size()) {
    throw DataError("evaluate_sequence: " + std::to_string(preds.size()) + " predictions vs " +
                    std::to_string(gts.size()) + " ground-truth frames");
  }
  if (rois != nullptr && rois->size() != gts.size()) {
    throw DataError("evaluate_sequence: roi list length mismatch");
  }
  FoMReport r;
  ConfusionCounts pooled;
  double fom_sum = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const ConfusionCounts c = confusion(preds[i], gts[i], rois ? &(*rois)[i] : nullptr);
    pooled += c;
    r.frames.push_back(score_counts(c));
    fom_sum += r.frames.back().fom;
  }
  r.aggregate = score_counts(pooled);
  r.mean_frame_fom = preds.empty() ? 0.0 : fom_sum / static_cast<double>(preds.size());
  return r;
}

std::string FoMReport::table(const std::vector<std::string>& names) const {
  std::ostringstream os;
  os << "frame\ttp\tfp\tfn\ttn\tprecision\trecall\tfom\n";
  auto row = [&](const std::string& name, const FrameScore& f) {
    os << name << '\t' << f.counts.tp << '\t' << f.counts.fp << '\t' << f.counts.fn << '\t'
       << f.counts.tn << '\t' << fixed(f.precision) << '\t' << fixed(f.recall) << '\t'
       << fixed(f.fom) << '\n';
  };
  for (std::size_t i = 0; i < frames.size(); ++i) {
    row(i < names.size() ? names[i] : std::to_string(i), frames[i]);
  }
  row("aggregate", aggregate);
  os << "mean_frame_fom\t" << fixed(mean_frame_fom) << '\n';
  return os.str();
}

std::string FoMReport::record(const std::vector<std::string>& names) const {
  std::ostringstream os;
  os << "frames=" << frames.size() << '\n';
  os << "aggregate_tp=" << aggregate.counts.tp << '\n';
  os << "aggregate_fp=" << aggregate.counts.fp << '\n';
  os << "aggregate_fn=" << aggregate.counts.fn << '\n';
  os << "aggregate_tn=" << aggregate.counts.tn << '\n';
  os << "aggregate_precision=" << fixed(aggregate.precision) << '\n';
  os << "aggregate_recall=" << fixed(aggregate.recall) << '\n';
  os << "aggregate_fom=" << fixed(aggregate.fom) << '\n';
  os << "mean_frame_fom=" << fixed(mean_frame_fom) << '\n';
  for (std::size_t i = 0; i < frames.size(); ++i) {
    const std::string p = "frame." + std::to_string(i) + ".";
    const FrameScore& f = frames[i];
    os << p << "name=" << (i < names.size() ? names[i] : std::to_string(i)) << '\n';
    os << p << "tp=" << f.counts.tp << '\n' << p << "fp=" << f.counts.fp << '\n';
    os << p << "fn=" << f.counts.fn << '\n' << p << "tn=" << f.counts.tn << '\n';
    os << p << "precision=" << fixed(f.precision) << '\n';
    os << p << "recall=" << fixed(f.recall) << '\n';
    os << p << "fom=" << fixed(f.fom) << '\n';
  }
  return os.str();
}

}  // namespace mvfcn
