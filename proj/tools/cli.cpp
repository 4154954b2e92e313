#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <charconv>
#include <fstream>
#include <map>
#include <ostream>

#include "mvfcn/checkpoint.hpp"
#include "mvfcn/io.hpp"
#include "mvfcn/metrics.hpp"
#include "mvfcn/train.hpp"

namespace mvfcn::cli {

namespace {

struct Size2 {
  std::size_t h = 240;
  std::size_t w = 320;
};

Size2 parse_size(const std::string& text) {
  const auto x = text.find_first_of("xX");
  Size2 s;
  auto num = [&](std::string_view v, std::size_t& dst) {
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), dst);
    return ec == std::errc() && p == v.data() + v.size() && dst > 0;
  };
  if (x == std::string::npos || !num(std::string_view(text).substr(0, x), s.h) ||
      !num(std::string_view(text).substr(x + 1), s.w)) {
    throw ConfigError("input size must look like HxW, got '" + text + "'");
  }
  return s;
}

void check_size(const ModelGraph& graph, const Size2& s) {
  infer_shapes(graph, Shape{1, graph.channels(graph.input_id()), s.h, s.w});
}

std::string fmt(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (!fs::is_directory(dir)) throw DataError("cannot create output directory " + dir.string());
}

// Image-like files of a directory keyed by stem; .pfm wins over 8-bit images.
std::map<std::string, fs::path> list_frames(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw DataError("not a directory: " + dir.string());
  std::map<std::string, fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const fs::path& p = e.path();
    const std::string ext = p.extension().string();
    if (ext != ".pgm" && ext != ".ppm" && ext != ".pnm" && ext != ".pfm") continue;
    auto [it, fresh] = files.emplace(p.stem().string(), p);
    if (!fresh && ext == ".pfm") it->second = p;
  }
  if (files.empty()) throw DataError("no image files in " + dir.string());
  return files;
}

// ---------------------------------------------------------------------------

int cmd_summary(const std::string& size_text, std::ostream& out) {
  const Size2 s = parse_size(size_text);
  const ModelGraph graph = build_mvfcn();
  check_size(graph, s);
  out << summary(graph, s.h, s.w);
  out << "Total trainable parameters: " << count_params(graph).total << "\n";
  return kOk;
}

struct TrainArgs {
  std::string data, config, init, out;
};

int cmd_train(const TrainArgs& a, std::ostream& out, std::ostream& err) {
  RunConfig cfg = load_config(a.config);
  if (!a.data.empty()) cfg.data = a.data;
  if (!a.init.empty()) cfg.init = a.init;
  if (!a.out.empty()) cfg.out = a.out;
  if (cfg.data.empty()) throw ConfigError("no dataset given (--data or data = ...)");
  if (cfg.out.empty()) throw ConfigError("no output checkpoint given (--out or out = ...)");
  cfg.validate();

  const ModelGraph graph = build_mvfcn(cfg.train.dropout_rate);
  check_size(graph, {cfg.input_height, cfg.input_width});

  const DatasetManifest manifest = discover_dataset(cfg.data, cfg.strict_data);
  for (const auto& w : manifest.warnings) err << "warning: " << w << "\n";
  out << "dataset " << manifest.name << ": " << manifest.size() << " annotated frames\n";
  const Dataset data =
      load_dataset(manifest, LoadOptions{cfg.input_height, cfg.input_width, 3, cfg.labels});

  TrainConfig tc = cfg.train;
  tc.fom_binarize = cfg.binarize;
  TrainState state = cfg.init.empty()
                         ? start_fresh(graph, tc)
                         : start_from(graph, tc, load_checkpoint(cfg.init, graph));

  const TrainResult r = train_loop(graph, data, tc, std::move(state), [&](const EpochRecord& e) {
    out << "epoch " << e.epoch << "  lr " << e.lr << "  train_loss " << fmt(e.train_loss, 6)
        << "  val_loss " << fmt(e.val_loss, 6) << "  train_fom " << fmt(e.train_fom)
        << "  val_fom " << fmt(e.val_fom) << "\n";
  });
  if (r.initial_val_loss) out << "initial val_loss " << fmt(*r.initial_val_loss, 6) << "\n";

  save_checkpoint(graph, r.best, r.state.rng.state(), cfg.out);
  const fs::path history = cfg.out + ".history.tsv";
  std::ofstream(history) << history_table(r.history());

  const auto& h = r.history();
  const double train_fom = h.empty() ? 0.0 : h.back().train_fom;
  const double val_fom = h.empty() ? 0.0 : h.back().val_fom;
  out << "final train FoM " << fmt(train_fom) << "  val FoM " << fmt(val_fom) << "  best epoch "
      << r.best_epoch << " (val FoM " << fmt(r.best_val_fom) << ")\n";
  out << "wrote " << cfg.out << " and " << history.string() << "\n";
  return kOk;
}

struct InferArgs {
  std::string ckpt;
  std::vector<std::string> inputs;
  std::string out;
  bool save_scores = false;
  std::string size = "240x320";
};

int cmd_infer(const InferArgs& a, std::ostream& out) {
  if (a.inputs.empty()) throw ConfigError("no input images");
  const Size2 s = parse_size(a.size);
  const ModelGraph graph = build_mvfcn();
  check_size(graph, s);
  std::map<std::string, std::string> stems;
  for (const auto& in : a.inputs) {
    auto [it, fresh] = stems.emplace(fs::path(in).stem().string(), in);
    if (!fresh && it->second != in) {
      throw ConfigError("inputs " + it->second + " and " + in + " would write the same output");
    }
  }
  ModelParams<float> params = load_checkpoint(a.ckpt, graph);
  ensure_dir(a.out);
  Rng unused(0);
  for (const auto& [stem, in] : stems) {
    Tensor image = load_image(in, 3);
    const Shape native = image.shape();
    if (native.h != s.h || native.w != s.w) image = resize_nearest(image, s.h, s.w);
    const ScoreMap score = to_score_map(forward(graph, params, image, Mode::Infer, unused));
    const fs::path dst = fs::path(a.out) / (stem + ".pgm");
    save_image(score, dst);
    if (a.save_scores) write_pfm(score, fs::path(a.out) / (stem + ".pfm"));
    out << in << " (" << native.h << "x" << native.w << ") -> " << dst.string() << "\n";
  }
  return kOk;
}

struct BinarizeArgs {
  std::string scores, method, out;
  std::size_t min_area = 50;
};

int cmd_binarize(const BinarizeArgs& a, std::ostream& out) {
  BinarizeOptions opts = parse_threshold(a.method);
  opts.min_area = a.min_area;
  const auto files = list_frames(a.scores);
  ensure_dir(a.out);
  for (const auto& [stem, path] : files) {
    const BinarizeResult r = binarize(load_scores(path), opts);
    save_image(r.mask, fs::path(a.out) / (stem + ".pgm"));
    if (opts.method == ThresholdMethod::Otsu) {
      out << stem << "\ttau=" << fmt(r.tau, 6) << (r.fallback ? "\t(constant map, global fallback)" : "")
          << "\n";
    }
  }
  out << "wrote " << files.size() << " masks to " << a.out << "\n";
  return kOk;
}

struct EvalArgs {
  std::string pred, gt, roi, report = "eval_report.txt", resolution = "network";
};

BinaryMask resize_mask(const BinaryMask& m, std::size_t h, std::size_t w) {
  if (m.h == h && m.w == w) return m;
  return to_mask(resize_nearest(to_tensor(m), h, w));
}

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  if (a.resolution != "network" && a.resolution != "native") {
    throw ConfigError("--resolution must be network or native");
  }
  const bool native = a.resolution == "native";
  const auto preds = list_frames(a.pred);
  const auto gts = list_frames(a.gt);

  std::map<long, fs::path> pred_by_idx, gt_by_idx;
  for (const auto& [stem, p] : preds) {
    const auto idx = frame_index(p);
    if (!idx || !pred_by_idx.emplace(*idx, p).second) throw DataError("ambiguous prediction name " + p.string());
  }
  for (const auto& [stem, p] : gts) {
    const auto idx = frame_index(p);
    if (!idx || !gt_by_idx.emplace(*idx, p).second) throw DataError("ambiguous ground-truth name " + p.string());
  }
  if (pred_by_idx.size() != gt_by_idx.size()) {
    throw DataError(std::to_string(pred_by_idx.size()) + " predictions vs " +
                    std::to_string(gt_by_idx.size()) + " ground-truth frames");
  }
  std::optional<BinaryMask> roi_file;
  if (!a.roi.empty()) roi_file = load_roi(a.roi);

  std::vector<BinaryMask> pred_masks, gt_masks, rois;
  std::vector<std::string> names;
  for (const auto& [idx, p] : pred_by_idx) {
    auto g = gt_by_idx.find(idx);
    if (g == gt_by_idx.end()) throw DataError("no ground truth for prediction " + p.string());
    BinaryMask pred = threshold_global(load_scores(p), 0.5);
    GroundTruth gt = load_gt(g->second);
    if (roi_file) {
      const BinaryMask r = resize_mask(*roi_file, gt.roi.h, gt.roi.w);
      for (std::size_t i = 0; i < r.size(); ++i) gt.roi.data[i] &= r.data[i];
    }
    if (native) {
      pred = resize_mask(pred, gt.mask.h, gt.mask.w);
    } else {
      gt.mask = resize_mask(gt.mask, pred.h, pred.w);
      gt.roi = resize_mask(gt.roi, pred.h, pred.w);
    }
    pred_masks.push_back(std::move(pred));
    gt_masks.push_back(std::move(gt.mask));
    rois.push_back(std::move(gt.roi));
    names.push_back(p.stem().string());
  }
  const FoMReport report = evaluate_sequence(pred_masks, gt_masks, &rois);
  out << report.table(names);
  std::ofstream rep(a.report);
  if (!rep) throw DataError("cannot write report " + a.report);
  rep << report.record(names);
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multi-view receptive field FCN: foreground segmentation toolkit", "mvfcn"};
  app.require_subcommand(1);

  std::string size_text = "240x320";
  auto* sum = app.add_subcommand("summary", "Print the layer table and parameter count");
  sum->add_option("--input-size", size_text, "Input size HxW")->capture_default_str();

  TrainArgs ta;
  auto* tr = app.add_subcommand("train", "Train on a dataset directory");
  tr->add_option("--data", ta.data, "Dataset root with input/ and groundtruth/");
  tr->add_option("--config", ta.config, "key = value config file")->required();
  tr->add_option("--init", ta.init, "Checkpoint to fine-tune from");
  tr->add_option("--out", ta.out, "Output checkpoint");

  InferArgs ia;
  auto* inf = app.add_subcommand("infer", "Write score maps for input images");
  inf->add_option("--ckpt", ia.ckpt, "Checkpoint")->required();
  inf->add_option("--in", ia.inputs, "Input images")->required();
  inf->add_option("--out", ia.out, "Output directory")->required();
  inf->add_flag("--save-scores", ia.save_scores, "Also write exact .pfm score maps");
  inf->add_option("--input-size", ia.size, "Network input size HxW")->capture_default_str();

  BinarizeArgs ba;
  auto* bin = app.add_subcommand("binarize", "Threshold score maps into masks");
  bin->add_option("--scores", ba.scores, "Directory of score maps")->required();
  bin->add_option("--method", ba.method, "global:TAU or otsu")->required();
  bin->add_option("--min-area", ba.min_area, "Smallest kept region; 0 disables cleanup")
      ->capture_default_str();
  bin->add_option("--out", ba.out, "Output directory")->required();

  EvalArgs ea;
  auto* ev = app.add_subcommand("eval", "Score masks against ground truth");
  ev->add_option("--pred", ea.pred, "Directory of predicted masks")->required();
  ev->add_option("--gt", ea.gt, "Directory of ground-truth images")->required();
  ev->add_option("--roi", ea.roi, "Region-of-interest image");
  ev->add_option("--report", ea.report, "Machine-readable report path")->capture_default_str();
  ev->add_option("--resolution", ea.resolution, "network or native")->capture_default_str();

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (sum->parsed()) return cmd_summary(size_text, out);
    if (tr->parsed()) return cmd_train(ta, out, err);
    if (inf->parsed()) return cmd_infer(ia, out);
    if (bin->parsed()) return cmd_binarize(ba, out);
    if (ev->parsed()) return cmd_eval(ea, out);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const ShapeError& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const DataError& e) {
    err << "error: " << e.what() << "\n";
    return kData;
  } catch (const CheckpointError& e) {
    err << "error: " << e.what() << "\n";
    return kCheckpoint;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return kUsage;
}

}  // namespace mvfcn::cli
