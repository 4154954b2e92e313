#pragma once

// Image codecs (binary PGM/PPM, PFM score sidecars), ground-truth decoding,
// dataset discovery and the flat key = value run configuration.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mvfcn/postproc.hpp"
#include "mvfcn/tensor.hpp"
#include "mvfcn/train.hpp"

namespace mvfcn {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Codecs

/// 8-bit raster with interleaved channels (1 = gray, 3 = RGB).
struct Image8 {
  std::size_t h = 0;
  std::size_t w = 0;
  std::size_t channels = 1;
  std::vector<std::uint8_t> bytes;

  bool operator==(const Image8&) const = default;
};

Image8 decode_pnm(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_pnm(const Image8& image);
Image8 read_pnm(const fs::path& path);
void write_pnm(const Image8& image, const fs::path& path);

/// (1, C, H, W) tensor of bytes / 255. `channels` = 0 keeps the stored count;
/// 3 replicates a gray image.
Tensor load_image(const fs::path& path, std::size_t channels = 0);

/// Gray image with round(255 * clamp(s, 0, 1)).
void save_image(const ScoreMap& score, const fs::path& path);
/// Gray image with 0 / 255.
void save_image(const BinaryMask& mask, const fs::path& path);

/// Score map as bytes / 255.
ScoreMap load_score_image(const fs::path& path);

/// Exact 32-bit score map ("Pf", little-endian, rows stored bottom-up).
void write_pfm(const ScoreMap& score, const fs::path& path);
ScoreMap read_pfm(const fs::path& path);

/// Scores from either an 8-bit gray image or a .pfm sidecar.
ScoreMap load_scores(const fs::path& path);

// ---------------------------------------------------------------------------
// Ground truth

struct LabelMapping {
  std::vector<std::uint8_t> foreground{255};
  std::vector<std::uint8_t> background{0, 50};
  std::vector<std::uint8_t> excluded{85, 170};
  /// Unmapped values are an error when set, excluded otherwise.
  bool strict = true;

  void validate() const;
};

struct GroundTruth {
  BinaryMask mask;
  BinaryMask roi;
};

GroundTruth decode_gt(const Image8& image, const LabelMapping& mapping = {});
GroundTruth load_gt(const fs::path& path, const LabelMapping& mapping = {});

/// Any gray image; nonzero pixels are inside the region of interest.
BinaryMask load_roi(const fs::path& path);

// ---------------------------------------------------------------------------
// Datasets

enum class Nature { Unknown, Baseline, DynamicBackground, CameraJitter, Shadow, PTZ, LowFramerate };

const char* to_string(Nature nature);

struct CatalogEntry {
  std::string_view name;
  std::size_t width;
  std::size_t height;
  Nature nature;
  std::size_t frames;
};

/// The eleven benchmark sequences with their native size and annotated count.
std::span<const CatalogEntry> dataset_catalog();
/// Case-insensitive lookup by sequence name.
const CatalogEntry* find_catalog(std::string_view name);

struct FramePair {
  long index = 0;
  fs::path input;
  fs::path groundtruth;
};

struct DatasetManifest {
  fs::path root;
  std::string name;
  Nature nature = Nature::Unknown;
  std::vector<FramePair> frames;
  std::optional<fs::path> roi;
  std::vector<std::string> warnings;

  std::size_t size() const { return frames.size(); }
};

/// Integer index from the last run of digits in a file stem, if any.
std::optional<long> frame_index(const fs::path& file);

/// Pairs `root/input` with `root/groundtruth` by parsed index. Strict mode
/// refuses unpaired frames and index gaps; lenient mode keeps the
/// intersection and records a warning for everything skipped.
DatasetManifest discover_dataset(const fs::path& root, bool strict = true);

struct LoadOptions {
  /// Frames are resized to this size (nearest neighbour); 0 keeps native.
  std::size_t height = 240;
  std::size_t width = 320;
  std::size_t channels = 3;
  LabelMapping labels;
};

/// Loads every pair; excluded ground-truth pixels become background.
Dataset load_dataset(const DatasetManifest& manifest, const LoadOptions& opts = {});

// ---------------------------------------------------------------------------
// Configuration

enum class EvalResolution { Network, Native };

struct RunConfig {
  TrainConfig train;
  LabelMapping labels;
  BinarizeOptions binarize;
  std::size_t input_height = 240;
  std::size_t input_width = 320;
  EvalResolution eval_resolution = EvalResolution::Network;
  bool strict_data = true;
  std::string data;
  std::string init;
  std::string out;

  void validate() const;
};

/// Parses `key = value` lines; '#' starts a comment. Unknown keys, repeated
/// keys and out-of-range values are rejected with the offending line number.
RunConfig parse_config(std::string_view text);
RunConfig load_config(const fs::path& path);

/// "otsu" or "global:TAU" (a bare number is read as a global tau).
BinarizeOptions parse_threshold(std::string_view text, BinarizeOptions base = {});

}  // namespace mvfcn
