#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "mvfcn/io.hpp"

namespace mvfcn {

namespace {

std::vector<std::uint8_t> read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const fs::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("short write to " + path.string());
}

// Header tokenizer shared by PNM and PFM.
struct HeaderReader {
  std::span<const std::uint8_t> bytes;
  std::size_t pos = 0;

  void skip_space() {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  }

  std::string token() {
    skip_space();
    std::string t;
    while (pos < bytes.size() && !std::isspace(bytes[pos]) && bytes[pos] != '#') {
      t.push_back(static_cast<char>(bytes[pos++]));
    }
    if (t.empty()) throw DataError("malformed header: unexpected end of file");
    return t;
  }

  std::size_t positive() {
    const std::string t = token();
    std::size_t v = 0;
    for (char ch : t) {
      if (!std::isdigit(static_cast<unsigned char>(ch)) || v > 1'000'000'000) {
        throw DataError("malformed header: bad integer '" + t + "'");
      }
      v = v * 10 + static_cast<std::size_t>(ch - '0');
    }
    return v;
  }

  // Exactly one whitespace byte separates the header from the raster.
  void end_header() {
    if (pos >= bytes.size() || !std::isspace(bytes[pos])) {
      throw DataError("malformed header: missing separator before raster");
    }
    ++pos;
  }
};

}  // namespace

Image8 decode_pnm(std::span<const std::uint8_t> bytes) {
  HeaderReader r{bytes};
  const std::string magic = r.token();
  Image8 img;
  if (magic == "P5") {
    img.channels = 1;
  } else if (magic == "P6") {
    img.channels = 3;
  } else {
    throw DataError("malformed header: expected P5 or P6, found '" + magic.substr(0, 8) + "'");
  }
  img.w = r.positive();
  img.h = r.positive();
  const std::size_t maxval = r.positive();
  if (img.w == 0 || img.h == 0) throw DataError("malformed header: zero image extent");
  if (maxval != 255) {
    throw DataError("unsupported bit depth: maxval " + std::to_string(maxval) + " (only 255)");
  }
  r.end_header();
  const std::size_t need = img.h * img.w * img.channels;
  if (bytes.size() - r.pos < need) {
    throw DataError("truncated payload: " + std::to_string(bytes.size() - r.pos) + " of " +
                    std::to_string(need) + " bytes");
  }
  img.bytes.assign(bytes.begin() + static_cast<std::ptrdiff_t>(r.pos),
                   bytes.begin() + static_cast<std::ptrdiff_t>(r.pos + need));
  return img;
}

std::vector<std::uint8_t> encode_pnm(const Image8& image) {
  if (image.channels != 1 && image.channels != 3) {
    throw ShapeError("encode_pnm: 1 or 3 channels, got " + std::to_string(image.channels));
  }
  if (image.bytes.size() != image.h * image.w * image.channels) {
    throw ShapeError("encode_pnm: raster size does not match header");
  }
  const std::string header = std::string(image.channels == 1 ? "P5" : "P6") + "\n" +
                             std::to_string(image.w) + " " + std::to_string(image.h) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), image.bytes.begin(), image.bytes.end());
  return out;
}

Image8 read_pnm(const fs::path& path) {
  const auto bytes = read_bytes(path);
  try {
    return decode_pnm(bytes);
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

void write_pnm(const Image8& image, const fs::path& path) { write_bytes(path, encode_pnm(image)); }

Tensor load_image(const fs::path& path, std::size_t channels) {
  const Image8 img = read_pnm(path);
  const std::size_t c_out = channels == 0 ? img.channels : channels;
  if (c_out != img.channels && !(img.channels == 1 && c_out == 3)) {
    throw DataError(path.string() + ": cannot produce " + std::to_string(c_out) +
                    " channels from " + std::to_string(img.channels));
  }
  Tensor t(Shape{1, c_out, img.h, img.w});
  for (std::size_t c = 0; c < c_out; ++c) {
    const std::size_t src_c = img.channels == 1 ? 0 : c;
    float* dst = t.plane(0, c);
    for (std::size_t i = 0; i < img.h * img.w; ++i) {
      dst[i] = static_cast<float>(img.bytes[i * img.channels + src_c]) / 255.0f;
    }
  }
  return t;
}

void save_image(const ScoreMap& score, const fs::path& path) {
  Image8 img{score.h, score.w, 1, std::vector<std::uint8_t>(score.size())};
  std::transform(score.data.begin(), score.data.end(), img.bytes.begin(), quantize_score);
  write_pnm(img, path);
}

void save_image(const BinaryMask& mask, const fs::path& path) {
  Image8 img{mask.h, mask.w, 1, std::vector<std::uint8_t>(mask.size())};
  std::transform(mask.data.begin(), mask.data.end(), img.bytes.begin(),
                 [](std::uint8_t v) -> std::uint8_t { return v ? 255 : 0; });
  write_pnm(img, path);
}

ScoreMap load_score_image(const fs::path& path) {
  const Image8 img = read_pnm(path);
  if (img.channels != 1) throw DataError(path.string() + ": score maps must be grayscale");
  ScoreMap s(img.h, img.w);
  for (std::size_t i = 0; i < s.size(); ++i) s.data[i] = static_cast<float>(img.bytes[i]) / 255.0f;
  return s;
}

void write_pfm(const ScoreMap& score, const fs::path& path) {
  const std::string header =
      "Pf\n" + std::to_string(score.w) + " " + std::to_string(score.h) + "\n-1.0\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(out.size() + score.size() * 4);
  for (std::size_t y = score.h; y-- > 0;) {
    for (std::size_t x = 0; x < score.w; ++x) {
      const auto bits = std::bit_cast<std::uint32_t>(score(y, x));
      for (int b = 0; b < 4; ++b) out.push_back(static_cast<std::uint8_t>(bits >> (8 * b)));
    }
  }
  write_bytes(path, out);
}

ScoreMap read_pfm(const fs::path& path) {
  const auto bytes = read_bytes(path);
  HeaderReader r{bytes};
  if (r.token() != "Pf") throw DataError(path.string() + ": not a grayscale PFM file");
  const std::size_t w = r.positive();
  const std::size_t h = r.positive();
  const std::string scale = r.token();
  if (scale.empty() || scale[0] != '-') {
    throw DataError(path.string() + ": only little-endian PFM is supported");
  }
  r.end_header();
  if (w == 0 || h == 0) throw DataError(path.string() + ": zero image extent");
  if (bytes.size() - r.pos < w * h * 4) throw DataError(path.string() + ": truncated payload");
  ScoreMap s(h, w);
  const std::uint8_t* p = bytes.data() + r.pos;
  for (std::size_t y = h; y-- > 0;) {
    for (std::size_t x = 0; x < w; ++x, p += 4) {
      const std::uint32_t bits = static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
                                 (static_cast<std::uint32_t>(p[2]) << 16) |
                                 (static_cast<std::uint32_t>(p[3]) << 24);
      s(y, x) = std::bit_cast<float>(bits);
    }
  }
  return s;
}

ScoreMap load_scores(const fs::path& path) {
  if (path.extension() == ".pfm") return read_pfm(path);
  return load_score_image(path);
}

// ---------------------------------------------------------------------------

void LabelMapping::validate() const {
  std::array<int, 256> seen{};
  for (const auto* list : {&foreground, &background, &excluded}) {
    for (std::uint8_t v : *list) {
      if (seen[v]++) throw ConfigError("label value " + std::to_string(v) + " is mapped twice");
    }
  }
  if (foreground.empty()) throw ConfigError("label mapping needs at least one foreground value");
}

GroundTruth decode_gt(const Image8& image, const LabelMapping& mapping) {
  if (image.channels != 1) throw DataError("ground truth must be a grayscale image");
  enum : std::uint8_t { kUnmapped, kFg, kBg, kExcluded };
  std::array<std::uint8_t, 256> table{};
  for (auto v : mapping.foreground) table[v] = kFg;
  for (auto v : mapping.background) table[v] = kBg;
  for (auto v : mapping.excluded) table[v] = kExcluded;

  GroundTruth gt{BinaryMask(image.h, image.w), BinaryMask(image.h, image.w, 1)};
  for (std::size_t i = 0; i < image.bytes.size(); ++i) {
    const std::uint8_t v = image.bytes[i];
    switch (table[v]) {
      case kFg:
        gt.mask.data[i] = 1;
        break;
      case kBg:
        break;
      case kExcluded:
        gt.roi.data[i] = 0;
        break;
      default:
        if (mapping.strict) {
          throw DataError("unmapped ground-truth value " + std::to_string(v) + " at pixel (" +
                          std::to_string(i / image.w) + ", " + std::to_string(i % image.w) + ")");
        }
        gt.roi.data[i] = 0;
    }
  }
  return gt;
}

GroundTruth load_gt(const fs::path& path, const LabelMapping& mapping) {
  try {
    return decode_gt(read_pnm(path), mapping);
  } catch (const DataError& e) {
    const std::string what = e.what();
    if (what.rfind(path.string(), 0) == 0) throw;
    throw DataError(path.string() + ": " + what);
  }
}

BinaryMask load_roi(const fs::path& path) {
  const Image8 img = read_pnm(path);
  if (img.channels != 1) throw DataError(path.string() + ": ROI must be grayscale");
  BinaryMask roi(img.h, img.w);
  for (std::size_t i = 0; i < roi.size(); ++i) roi.data[i] = img.bytes[i] != 0 ? 1 : 0;
  return roi;
}

}  // namespace mvfcn
