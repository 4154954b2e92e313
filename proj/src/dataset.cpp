#include <algorithm>
#include <array>
#include <cctype>
#include <map>
#include <set>

#include "mvfcn/io.hpp"

namespace mvfcn {

namespace {

constexpr std::array<CatalogEntry, 11> kCatalog{{
    {"Highway", 320, 240, Nature::Baseline, 1229},
    {"Office", 360, 240, Nature::Baseline, 1447},
    {"Canoe", 320, 240, Nature::DynamicBackground, 342},
    {"Boats", 320, 240, Nature::DynamicBackground, 6026},
    {"Overpass", 320, 240, Nature::DynamicBackground, 440},
    {"Traffic", 320, 240, Nature::CameraJitter, 609},
    {"Boulevard", 320, 240, Nature::CameraJitter, 1004},
    {"CopyMachine", 720, 480, Nature::Shadow, 1401},
    {"PeopleInShade", 380, 244, Nature::Shadow, 829},
    {"TwoPositionPTZCam", 570, 340, Nature::PTZ, 449},
    {"Turnpike_0_5fps", 320, 240, Nature::LowFramerate, 350},
}};

bool iequals(std::string_view a, std::string_view b) {
  return a.size() == b.size() &&
         std::equal(a.begin(), a.end(), b.begin(), [](char x, char y) {
           return std::tolower(static_cast<unsigned char>(x)) ==
                  std::tolower(static_cast<unsigned char>(y));
         });
}

bool is_image_file(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  static const std::set<std::string> kExt{".ppm", ".pgm", ".pnm", ".png", ".jpg", ".jpeg", ".bmp"};
  return kExt.count(ext) != 0;
}

std::map<long, fs::path> scan(const fs::path& dir, std::vector<std::string>& warnings) {
  if (!fs::is_directory(dir)) throw DataError("missing directory " + dir.string());
  std::map<long, fs::path> frames;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file() || !is_image_file(entry.path())) continue;
    const auto idx = frame_index(entry.path());
    if (!idx) {
      warnings.push_back("ignoring " + entry.path().string() + ": no frame index in name");
      continue;
    }
    auto [it, fresh] = frames.emplace(*idx, entry.path());
    if (!fresh) {
      const auto [a, b] = std::minmax(it->second, entry.path());
      throw DataError("frame " + std::to_string(*idx) + " appears twice: " + a.string() + ", " +
                      b.string());
    }
  }
  if (frames.empty()) throw DataError("no indexed image files in " + dir.string());
  return frames;
}

}  // namespace

const char* to_string(Nature nature) {
  switch (nature) {
    case Nature::Baseline: return "baseline";
    case Nature::DynamicBackground: return "dynamic background";
    case Nature::CameraJitter: return "camera jitter";
    case Nature::Shadow: return "shadow";
    case Nature::PTZ: return "PTZ";
    case Nature::LowFramerate: return "low framerate";
    case Nature::Unknown: break;
  }
  return "unknown";
}

std::span<const CatalogEntry> dataset_catalog() { return kCatalog; }

const CatalogEntry* find_catalog(std::string_view name) {
  for (const auto& e : kCatalog) {
    if (iequals(e.name, name)) return &e;
  }
  return nullptr;
}

std::optional<long> frame_index(const fs::path& file) {
  const std::string stem = file.stem().string();
  auto end = std::find_if(stem.rbegin(), stem.rend(),
                          [](unsigned char c) { return std::isdigit(c); });
  if (end == stem.rend()) return std::nullopt;
  auto begin = std::find_if(end, stem.rend(), [](unsigned char c) { return !std::isdigit(c); });
  const std::string digits(begin.base(), end.base());
  if (digits.size() > 15) return std::nullopt;
  return std::stol(digits);
}

DatasetManifest discover_dataset(const fs::path& root, bool strict) {
  DatasetManifest m;
  m.root = root;
  m.name = fs::path(root).lexically_normal().filename().string();
  if (m.name.empty()) m.name = fs::path(root).lexically_normal().parent_path().filename().string();
  if (const CatalogEntry* e = find_catalog(m.name)) m.nature = e->nature;

  const auto inputs = scan(root / "input", m.warnings);
  const auto gts = scan(root / "groundtruth", m.warnings);

  for (const auto& [idx, path] : gts) {
    auto in = inputs.find(idx);
    if (in == inputs.end()) {
      if (strict) throw DataError("ground truth " + path.string() + " has no input frame " + std::to_string(idx));
      m.warnings.push_back("skipping frame " + std::to_string(idx) + ": no input image");
      continue;
    }
    m.frames.push_back({idx, in->second, path});
  }
  for (const auto& [idx, path] : inputs) {
    if (gts.count(idx) == 0) {
      if (strict) throw DataError("input frame " + std::to_string(idx) + " has no ground truth");
      m.warnings.push_back("skipping frame " + std::to_string(idx) + ": no ground truth");
    }
  }
  if (m.frames.empty()) throw DataError("no aligned frames under " + root.string());
  for (std::size_t i = 1; i < m.frames.size(); ++i) {
    const long prev = m.frames[i - 1].index, cur = m.frames[i].index;
    if (cur != prev + 1) {
      const std::string msg = "index gap between frames " + std::to_string(prev) + " and " + std::to_string(cur);
      if (strict) throw DataError(msg);
      m.warnings.push_back(msg);
    }
  }
  if (fs::is_regular_file(root / "ROI.pgm")) m.roi = root / "ROI.pgm";
  return m;
}

Dataset load_dataset(const DatasetManifest& manifest, const LoadOptions& opts) {
  Dataset d;
  d.name = manifest.name;
  for (const FramePair& f : manifest.frames) {
    Tensor image = load_image(f.input, opts.channels);
    const GroundTruth gt = load_gt(f.groundtruth, opts.labels);
    if (gt.mask.h != image.shape().h || gt.mask.w != image.shape().w) {
      throw DataError("frame " + std::to_string(f.index) + ": ground truth is " +
                      std::to_string(gt.mask.h) + "x" + std::to_string(gt.mask.w) + ", input is " +
                      std::to_string(image.shape().h) + "x" + std::to_string(image.shape().w));
    }
    Tensor mask = to_tensor(gt.mask);
    if (opts.height != 0 && opts.width != 0) {
      image = resize_nearest(image, opts.height, opts.width);
      mask = resize_nearest(mask, opts.height, opts.width);
    }
    d.samples.push_back({std::move(image), std::move(mask)});
  }
  return d;
}

}  // namespace mvfcn
