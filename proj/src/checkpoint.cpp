#include <bit>
#include <fstream>
#include <iterator>
#include <sstream>

#include "mvfcn/checkpoint.hpp"

namespace mvfcn {

namespace {

constexpr char kMagic[4] = {'M', 'V', 'F', 'C'};

std::uint64_t fnv1a(std::span<const std::uint8_t> bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (std::uint8_t b : bytes) {
    h ^= b;
    h *= 0x100000001b3ull;
  }
  return h;
}

class Writer {
 public:
  template <typename U>
  void put(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      bytes_.push_back(static_cast<std::uint8_t>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xff));
    }
  }
  std::vector<std::uint8_t>& bytes() { return bytes_; }

 private:
  std::vector<std::uint8_t> bytes_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : bytes_(b) {}
  template <typename U>
  U get() {
    if (pos_ + sizeof(U) > bytes_.size()) throw CheckpointError("checkpoint truncated");
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
    }
    pos_ += sizeof(U);
    return static_cast<U>(v);
  }
  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

std::string shape_text(const std::vector<std::uint32_t>& dims) {
  std::string s = "(";
  for (std::size_t i = 0; i < dims.size(); ++i) s += (i ? "," : "") + std::to_string(dims[i]);
  return s + ")";
}

}  // namespace

std::vector<float> CheckpointEntry::floats() const {
  std::vector<float> out(words.size());
  for (std::size_t i = 0; i < words.size(); ++i) out[i] = std::bit_cast<float>(words[i]);
  return out;
}

CheckpointEntry CheckpointEntry::from_floats(std::uint16_t layer, std::uint8_t role,
                                             std::vector<std::uint32_t> dims,
                                             std::span<const float> v) {
  CheckpointEntry e{layer, role, std::move(dims), {}};
  e.words.reserve(v.size());
  for (float f : v) e.words.push_back(std::bit_cast<std::uint32_t>(f));
  return e;
}

const CheckpointEntry* Checkpoint::find(std::uint16_t layer, std::uint8_t role) const {
  for (const auto& e : entries) {
    if (e.layer == layer && e.role == role) return &e;
  }
  return nullptr;
}

CheckpointEntry* Checkpoint::find(std::uint16_t layer, std::uint8_t role) {
  for (auto& e : entries) {
    if (e.layer == layer && e.role == role) return &e;
  }
  return nullptr;
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  Writer w;
  for (char c : kMagic) w.put(static_cast<std::uint8_t>(c));
  w.put(kCheckpointVersion);
  w.put(ckpt.fingerprint);
  w.put(static_cast<std::uint32_t>(ckpt.entries.size()));
  for (const auto& e : ckpt.entries) {
    std::uint64_t count = 1;
    for (auto d : e.dims) count *= d;
    if (count != e.words.size() || e.dims.size() > 255) {
      throw CheckpointError("checkpoint entry for layer " + std::to_string(e.layer) +
                            " has inconsistent dims " + shape_text(e.dims));
    }
    w.put(e.layer);
    w.put(e.role);
    w.put(static_cast<std::uint8_t>(e.dims.size()));
    for (auto d : e.dims) w.put(d);
    for (auto word : e.words) w.put(word);
  }
  const std::uint64_t sum = fnv1a(w.bytes());
  w.put(sum);
  return std::move(w.bytes());
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 + 4 + 8 + 4 + 8) throw CheckpointError("checkpoint truncated");
  for (int i = 0; i < 4; ++i) {
    if (bytes[i] != static_cast<std::uint8_t>(kMagic[i])) {
      throw CheckpointError("bad checkpoint magic (expected \"MVFC\")");
    }
  }
  Reader trailer(bytes.subspan(bytes.size() - 8));
  const std::uint64_t stored = trailer.get<std::uint64_t>();
  Reader r(bytes.first(bytes.size() - 8));
  r.get<std::uint32_t>();  // magic
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw CheckpointError("unknown checkpoint version " + std::to_string(version));
  }
  if (fnv1a(bytes.first(bytes.size() - 8)) != stored) {
    throw CheckpointError("checkpoint checksum mismatch (file corrupt or partially written)");
  }
  Checkpoint ckpt;
  ckpt.fingerprint = r.get<std::uint64_t>();
  const auto count = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointEntry e;
    e.layer = r.get<std::uint16_t>();
    e.role = r.get<std::uint8_t>();
    const auto rank = r.get<std::uint8_t>();
    std::uint64_t n = 1;
    for (int k = 0; k < rank; ++k) {
      e.dims.push_back(r.get<std::uint32_t>());
      n *= e.dims.back();
    }
    if (n * 4 > r.remaining()) throw CheckpointError("checkpoint truncated");
    e.words.resize(n);
    for (auto& word : e.words) word = r.get<std::uint32_t>();
    ckpt.entries.push_back(std::move(e));
  }
  if (r.remaining() != 0) throw CheckpointError("trailing bytes after checkpoint entries");
  return ckpt;
}

void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("failed writing " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

void append_params(Checkpoint& ckpt, const ModelParams<float>& params, std::uint8_t role_base) {
  for (const auto& v : params.views(true)) {
    const Shape& s = v.shape;
    ckpt.entries.push_back(CheckpointEntry::from_floats(
        static_cast<std::uint16_t>(v.key.layer),
        static_cast<std::uint8_t>(role_base + static_cast<std::uint8_t>(v.key.role)),
        {static_cast<std::uint32_t>(s.n), static_cast<std::uint32_t>(s.c),
         static_cast<std::uint32_t>(s.h), static_cast<std::uint32_t>(s.w)},
        v.data));
  }
}

Checkpoint make_checkpoint(const ModelGraph& graph, const ModelParams<float>& params,
                           std::optional<std::uint64_t> rng_state) {
  Checkpoint ckpt;
  ckpt.fingerprint = graph.fingerprint();
  append_params(ckpt, params, 0);
  if (rng_state) {
    ckpt.entries.push_back({0, checkpoint_role::kRngState, {2},
                            {static_cast<std::uint32_t>(*rng_state),
                             static_cast<std::uint32_t>(*rng_state >> 32)}});
  }
  return ckpt;
}

std::optional<std::uint64_t> rng_state_of(const Checkpoint& ckpt) {
  const CheckpointEntry* e = ckpt.find(0, checkpoint_role::kRngState);
  if (e == nullptr || e->words.size() != 2) return std::nullopt;
  return static_cast<std::uint64_t>(e->words[0]) | (static_cast<std::uint64_t>(e->words[1]) << 32);
}

ModelParams<float> params_from_checkpoint(const Checkpoint& ckpt, const ModelGraph& graph,
                                          std::uint8_t role_base) {
  ModelParams<float> params = zero_params<float>(graph);
  std::size_t used = 0;
  for (auto& v : params.views(true)) {
    const auto role = static_cast<std::uint8_t>(role_base + static_cast<std::uint8_t>(v.key.role));
    const CheckpointEntry* e = ckpt.find(static_cast<std::uint16_t>(v.key.layer), role);
    if (e == nullptr) throw CheckpointError("checkpoint has no " + to_string(v.key));
    const std::vector<std::uint32_t> want = {
        static_cast<std::uint32_t>(v.shape.n), static_cast<std::uint32_t>(v.shape.c),
        static_cast<std::uint32_t>(v.shape.h), static_cast<std::uint32_t>(v.shape.w)};
    if (e->dims != want) {
      throw CheckpointError(to_string(v.key) + ": checkpoint shape " + shape_text(e->dims) +
                            " does not match graph shape " + shape_text(want));
    }
    for (std::size_t i = 0; i < v.data.size(); ++i) v.data[i] = std::bit_cast<float>(e->words[i]);
    ++used;
  }
  for (const auto& e : ckpt.entries) {
    if (e.role < role_base || e.role > role_base + 5) continue;
    if (!graph.has_layer(e.layer)) {
      throw CheckpointError("checkpoint holds tensors for layer " + std::to_string(e.layer) +
                            ", which the graph does not have");
    }
    --used;
  }
  if (used != 0) {
    throw CheckpointError("checkpoint holds tensors the graph does not expect");
  }
  for (auto& [id, s] : params.norm) s.calibrated = true;
  return params;
}

void save_checkpoint(const ModelGraph& graph, const ModelParams<float>& params,
                     std::optional<std::uint64_t> rng_state, const std::filesystem::path& path) {
  write_checkpoint(make_checkpoint(graph, params, rng_state), path);
}

ModelParams<float> load_checkpoint(const std::filesystem::path& path, const ModelGraph& graph) {
  const Checkpoint ckpt = read_checkpoint(path);
  if (ckpt.fingerprint != graph.fingerprint()) {
    std::ostringstream os;
    os << "checkpoint fingerprint " << std::hex << ckpt.fingerprint
       << " does not match graph fingerprint " << graph.fingerprint();
    throw CheckpointError(os.str());
  }
  return params_from_checkpoint(ckpt, graph);
}

}  // namespace mvfcn
