#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "mvfcn/io.hpp"

namespace mvfcn {

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double to_double(std::string_view v) {
  double out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw ConfigError("expected a number, got '" + std::string(v) + "'");
  }
  return out;
}

long long to_int(std::string_view v) {
  long long out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw ConfigError("expected an integer, got '" + std::string(v) + "'");
  }
  return out;
}

std::size_t to_count(std::string_view v) {
  const long long x = to_int(v);
  if (x < 0) throw ConfigError("expected a non-negative integer, got '" + std::string(v) + "'");
  return static_cast<std::size_t>(x);
}

bool to_bool(std::string_view v) {
  if (v == "true" || v == "yes" || v == "on" || v == "1") return true;
  if (v == "false" || v == "no" || v == "off" || v == "0") return false;
  throw ConfigError("expected true or false, got '" + std::string(v) + "'");
}

std::vector<std::uint8_t> to_levels(std::string_view v) {
  std::vector<std::uint8_t> out;
  if (trim(v) == "none") return out;
  while (!v.empty()) {
    const auto comma = v.find(',');
    const std::string_view item = trim(v.substr(0, comma));
    const long long x = to_int(item);
    if (x < 0 || x > 255) throw ConfigError("label value " + std::string(item) + " outside 0..255");
    out.push_back(static_cast<std::uint8_t>(x));
    if (comma == std::string_view::npos) break;
    v.remove_prefix(comma + 1);
  }
  return out;
}

using Setter = std::function<void(RunConfig&, std::string_view)>;

const std::map<std::string, Setter, std::less<>>& setters() {
  static const std::map<std::string, Setter, std::less<>> table{
      {"model", [](RunConfig&, std::string_view v) {
         if (v != "mvfcn") throw ConfigError("unknown model '" + std::string(v) + "' (only mvfcn)");
       }},
      {"seed", [](RunConfig& c, std::string_view v) {
         const long long s = to_int(v);
         if (s < 0) throw ConfigError("seed must be non-negative");
         c.train.seed = static_cast<std::uint64_t>(s);
       }},
      {"base_lr", [](RunConfig& c, std::string_view v) { c.train.base_lr = to_double(v); }},
      {"lr_decay_factor", [](RunConfig& c, std::string_view v) { c.train.lr_decay_factor = to_double(v); }},
      {"lr_decay_every", [](RunConfig& c, std::string_view v) {
         c.train.lr_decay_every = static_cast<int>(to_count(v));
       }},
      {"batch_size", [](RunConfig& c, std::string_view v) { c.train.batch_size = to_count(v); }},
      {"max_epochs", [](RunConfig& c, std::string_view v) {
         c.train.max_epochs = static_cast<int>(to_count(v));
       }},
      {"dropout_rate", [](RunConfig& c, std::string_view v) { c.train.dropout_rate = to_double(v); }},
      {"bn_momentum", [](RunConfig& c, std::string_view v) { c.train.bn_momentum = to_double(v); }},
      {"split_ratio", [](RunConfig& c, std::string_view v) { c.train.split_ratio = to_double(v); }},
      {"adam_beta1", [](RunConfig& c, std::string_view v) { c.train.adam.beta1 = to_double(v); }},
      {"adam_beta2", [](RunConfig& c, std::string_view v) { c.train.adam.beta2 = to_double(v); }},
      {"adam_eps", [](RunConfig& c, std::string_view v) { c.train.adam.eps = to_double(v); }},
      {"augment", [](RunConfig& c, std::string_view v) { c.train.augment.enabled = to_bool(v); }},
      {"augment_rotation_deg", [](RunConfig& c, std::string_view v) {
         c.train.augment.max_rotation_deg = to_double(v);
       }},
      {"augment_shift", [](RunConfig& c, std::string_view v) { c.train.augment.shift_fraction = to_double(v); }},
      {"augment_zoom", [](RunConfig& c, std::string_view v) { c.train.augment.zoom_fraction = to_double(v); }},
      {"threshold", [](RunConfig& c, std::string_view v) { c.binarize = parse_threshold(v, c.binarize); }},
      {"min_area", [](RunConfig& c, std::string_view v) { c.binarize.min_area = to_count(v); }},
      {"connectivity", [](RunConfig& c, std::string_view v) {
         c.binarize.connectivity = static_cast<int>(to_int(v));
       }},
      {"label_foreground", [](RunConfig& c, std::string_view v) { c.labels.foreground = to_levels(v); }},
      {"label_background", [](RunConfig& c, std::string_view v) { c.labels.background = to_levels(v); }},
      {"label_excluded", [](RunConfig& c, std::string_view v) { c.labels.excluded = to_levels(v); }},
      {"label_strict", [](RunConfig& c, std::string_view v) { c.labels.strict = to_bool(v); }},
      {"input_height", [](RunConfig& c, std::string_view v) { c.input_height = to_count(v); }},
      {"input_width", [](RunConfig& c, std::string_view v) { c.input_width = to_count(v); }},
      {"eval_resolution", [](RunConfig& c, std::string_view v) {
         if (v == "network") {
           c.eval_resolution = EvalResolution::Network;
         } else if (v == "native") {
           c.eval_resolution = EvalResolution::Native;
         } else {
           throw ConfigError("eval_resolution must be network or native, got '" + std::string(v) + "'");
         }
       }},
      {"deterministic", [](RunConfig&, std::string_view v) {
         // Every reduction is single-threaded and ordered; there is no faster
         // nondeterministic path to switch to.
         if (!to_bool(v)) throw ConfigError("only deterministic execution is available");
       }},
      {"strict_data", [](RunConfig& c, std::string_view v) { c.strict_data = to_bool(v); }},
      {"data", [](RunConfig& c, std::string_view v) { c.data = v; }},
      {"init", [](RunConfig& c, std::string_view v) { c.init = v; }},
      {"out", [](RunConfig& c, std::string_view v) { c.out = v; }},
  };
  return table;
}

}  // namespace

BinarizeOptions parse_threshold(std::string_view text, BinarizeOptions base) {
  text = trim(text);
  if (text == "otsu") {
    base.method = ThresholdMethod::Otsu;
    return base;
  }
  std::string_view tau = text;
  if (text.rfind("global:", 0) == 0) tau = text.substr(7);
  double t = 0;
  try {
    t = to_double(tau);
  } catch (const ConfigError&) {
    throw ConfigError("threshold method must be 'otsu' or 'global:TAU', got '" + std::string(text) + "'");
  }
  if (!(t >= 0.0 && t <= 1.0)) throw ConfigError("threshold tau must lie in [0, 1]");
  base.method = ThresholdMethod::Global;
  base.tau = t;
  return base;
}

void RunConfig::validate() const {
  train.validate();
  labels.validate();
  if (binarize.connectivity != 4 && binarize.connectivity != 8) {
    throw ConfigError("connectivity must be 4 or 8");
  }
  if (!(binarize.tau >= 0.0 && binarize.tau <= 1.0)) throw ConfigError("threshold tau must lie in [0, 1]");
  if (input_height == 0 || input_width == 0) throw ConfigError("input size must be positive");
}

RunConfig parse_config(std::string_view text) {
  RunConfig cfg;
  std::set<std::string, std::less<>> seen;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text.remove_prefix(nl == std::string_view::npos ? text.size() : nl + 1);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = "line " + std::to_string(line_no) + ": ";
    if (eq == std::string_view::npos) throw ConfigError(where + "expected key = value");
    const std::string_view key = trim(line.substr(0, eq));
    const std::string_view value = trim(line.substr(eq + 1));
    const auto it = setters().find(key);
    if (it == setters().end()) throw ConfigError(where + "unknown key '" + std::string(key) + "'");
    if (!seen.emplace(key).second) throw ConfigError(where + "repeated key '" + std::string(key) + "'");
    if (value.empty()) throw ConfigError(where + "empty value for '" + std::string(key) + "'");
    try {
      it->second(cfg, value);
      // Every field is range-checked on its own, so validating here pins
      // the error to this line.
      cfg.validate();
    } catch (const ConfigError& e) {
      throw ConfigError(where + std::string(key) + ": " + e.what());
    }
  }
  cfg.validate();
  return cfg;
}

RunConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

}  // namespace mvfcn
