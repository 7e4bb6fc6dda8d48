#include "vesselcouple/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

namespace vesselcouple {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string strip_comment(const std::string& line) {
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"') quoted = !quoted;
    if (line[i] == '#' && !quoted) return line.substr(0, i);
  }
  return line;
}

double parse_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size()) {
    throw ConfigError("config: " + key + ": expected a number, got '" + v + "'");
  }
  return out;
}

std::uint64_t parse_uint(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size()) {
    throw ConfigError("config: " + key + ": expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true") return true;
  if (v == "false") return false;
  throw ConfigError("config: " + key + ": expected true or false, got '" + v + "'");
}

std::string parse_string(const std::string& key, const std::string& v) {
  if (v.size() < 2 || v.front() != '"' || v.back() != '"') {
    throw ConfigError("config: " + key + ": expected a quoted string, got '" + v + "'");
  }
  return v.substr(1, v.size() - 2);
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fmt(bool v) { return v ? "true" : "false"; }

using Setter = std::function<void(RunConfig&, const std::string& key, const std::string& raw)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = [] {
    std::map<std::string, Setter> t;
    auto dbl = [&](const std::string& key, auto get) {
      t[key] = [get](RunConfig& c, const std::string& k, const std::string& v) {
        get(c) = parse_double(k, v);
      };
    };
    auto uint = [&](const std::string& key, auto get) {
      t[key] = [get](RunConfig& c, const std::string& k, const std::string& v) {
        get(c) = static_cast<std::remove_reference_t<decltype(get(c))>>(parse_uint(k, v));
      };
    };
    auto flag = [&](const std::string& key, auto get) {
      t[key] = [get](RunConfig& c, const std::string& k, const std::string& v) {
        get(c) = parse_bool(k, v);
      };
    };
    uint("net.depth", [](RunConfig& c) -> auto& { return c.net.depth; });
    uint("net.base_channels", [](RunConfig& c) -> auto& { return c.net.base_channels; });

    dbl("train.lr", [](RunConfig& c) -> auto& { return c.train.adam.lr; });
    dbl("train.beta1", [](RunConfig& c) -> auto& { return c.train.adam.beta1; });
    dbl("train.beta2", [](RunConfig& c) -> auto& { return c.train.adam.beta2; });
    dbl("train.eps", [](RunConfig& c) -> auto& { return c.train.adam.eps; });
    uint("train.batch_size", [](RunConfig& c) -> auto& { return c.train.batch_size; });
    uint("train.patience", [](RunConfig& c) -> auto& { return c.train.patience; });
    uint("train.max_epochs", [](RunConfig& c) -> auto& { return c.train.max_epochs; });
    uint("train.seed", [](RunConfig& c) -> auto& { return c.train.seed; });
    dbl("train.val_fraction", [](RunConfig& c) -> auto& { return c.val_fraction; });
    flag("train.fast", [](RunConfig& c) -> auto& { return c.fast; });
    flag("train.vessel_anchors", [](RunConfig& c) -> auto& { return c.train.vessel_anchors; });
    t["train.downsample"] = [](RunConfig& c, const std::string& k, const std::string& v) {
      const std::string s = parse_string(k, v);
      if (s == "majority") {
        c.train.downsample = DownsampleMethod::kMajority;
      } else if (s == "nearest") {
        c.train.downsample = DownsampleMethod::kNearest;
      } else {
        throw ConfigError("config: " + k + ": expected \"majority\" or \"nearest\"");
      }
    };
    flag("train.local_contrast", [](RunConfig& c) -> auto& { return c.train.preprocess.local_contrast; });

    dbl("loss.lambda1", [](RunConfig& c) -> auto& { return c.train.weights.lambda1; });
    dbl("loss.lambda2", [](RunConfig& c) -> auto& { return c.train.weights.lambda2; });

    dbl("contrastive.temperature", [](RunConfig& c) -> auto& { return c.train.contrastive.temperature; });
    uint("contrastive.anchors", [](RunConfig& c) -> auto& { return c.train.contrastive.anchors_per_image; });
    uint("contrastive.positives", [](RunConfig& c) -> auto& { return c.train.contrastive.positives_per_anchor; });
    uint("contrastive.negatives", [](RunConfig& c) -> auto& { return c.train.contrastive.negatives_per_anchor; });
    uint("contrastive.seed", [](RunConfig& c) -> auto& { return c.train.contrastive.seed; });

    flag("augment.flip", [](RunConfig& c) -> auto& { return c.train.augment.flip; });
    flag("augment.intensity", [](RunConfig& c) -> auto& { return c.train.augment.intensity; });
    flag("augment.affine", [](RunConfig& c) -> auto& { return c.train.augment.affine; });
    flag("augment.cutout", [](RunConfig& c) -> auto& { return c.train.augment.cutout; });
    dbl("augment.max_rotation_deg", [](RunConfig& c) -> auto& { return c.train.augment.max_rotation_deg; });
    dbl("augment.max_translation", [](RunConfig& c) -> auto& { return c.train.augment.max_translation; });
    dbl("augment.max_cutout", [](RunConfig& c) -> auto& { return c.train.augment.max_cutout; });

    uint("slic.k", [](RunConfig& c) -> auto& { return c.slic.k; });
    dbl("slic.compactness", [](RunConfig& c) -> auto& { return c.slic.compactness; });
    uint("slic.max_iters", [](RunConfig& c) -> auto& { return c.slic.max_iters; });
    dbl("slic.min_region_ratio", [](RunConfig& c) -> auto& { return c.slic.min_region_ratio; });
    return t;
  }();
  return table;
}

}  // namespace

void RunConfig::validate() const {
  net.validate();
  train.validate();
  slic.validate();
  if (!(val_fraction >= 0.0 && val_fraction < 1.0)) {
    throw ConfigError("config: train.val_fraction must be in [0, 1)");
  }
}

std::map<std::string, std::string> parse_config_text(const std::string& text) {
  std::map<std::string, std::string> out;
  std::istringstream in(text);
  std::string line, section;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(strip_comment(line));
    if (line.empty()) continue;
    const std::string where = "config line " + std::to_string(lineno);
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + ": unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      if (section.empty()) throw ConfigError(where + ": empty section name");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty() || value.empty()) throw ConfigError(where + ": expected key = value");
    const std::string full = section.empty() ? key : section + "." + key;
    if (out.count(full)) throw ConfigError(where + ": duplicate key " + full);
    out[full] = value;
  }
  return out;
}

void apply_config(RunConfig& cfg, const std::map<std::string, std::string>& values) {
  const auto& table = setters();
  for (const auto& [key, raw] : values) {
    const auto it = table.find(key);
    if (it == table.end()) throw ConfigError("config: unknown key " + key);
    it->second(cfg, key, raw);
  }
}

RunConfig load_config(const std::filesystem::path& path, RunConfig base) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  apply_config(base, parse_config_text(ss.str()));
  return base;
}

std::string format_config(const RunConfig& c) {
  std::ostringstream o;
  const auto& t = c.train;
  o << "[net]\n"
    << "depth = " << c.net.depth << "\n"
    << "base_channels = " << c.net.base_channels << "\n\n"
    << "[train]\n"
    << "lr = " << fmt(t.adam.lr) << "\n"
    << "beta1 = " << fmt(t.adam.beta1) << "\n"
    << "beta2 = " << fmt(t.adam.beta2) << "\n"
    << "eps = " << fmt(t.adam.eps) << "\n"
    << "batch_size = " << t.batch_size << "\n"
    << "patience = " << t.patience << "\n"
    << "max_epochs = " << t.max_epochs << "\n"
    << "seed = " << t.seed << "\n"
    << "val_fraction = " << fmt(c.val_fraction) << "\n"
    << "fast = " << fmt(c.fast) << "\n"
    << "vessel_anchors = " << fmt(t.vessel_anchors) << "\n"
    << "downsample = \"" << (t.downsample == DownsampleMethod::kMajority ? "majority" : "nearest")
    << "\"\n"
    << "local_contrast = " << fmt(t.preprocess.local_contrast) << "\n\n"
    << "[loss]\n"
    << "lambda1 = " << fmt(t.weights.lambda1) << "\n"
    << "lambda2 = " << fmt(t.weights.lambda2) << "\n\n"
    << "[contrastive]\n"
    << "temperature = " << fmt(t.contrastive.temperature) << "\n"
    << "anchors = " << t.contrastive.anchors_per_image << "\n"
    << "positives = " << t.contrastive.positives_per_anchor << "\n"
    << "negatives = " << t.contrastive.negatives_per_anchor << "\n"
    << "seed = " << t.contrastive.seed << "\n\n"
    << "[augment]\n"
    << "flip = " << fmt(t.augment.flip) << "\n"
    << "intensity = " << fmt(t.augment.intensity) << "\n"
    << "affine = " << fmt(t.augment.affine) << "\n"
    << "cutout = " << fmt(t.augment.cutout) << "\n"
    << "max_rotation_deg = " << fmt(t.augment.max_rotation_deg) << "\n"
    << "max_translation = " << fmt(t.augment.max_translation) << "\n"
    << "max_cutout = " << fmt(t.augment.max_cutout) << "\n\n"
    << "[slic]\n"
    << "k = " << c.slic.k << "\n"
    << "compactness = " << fmt(c.slic.compactness) << "\n"
    << "max_iters = " << c.slic.max_iters << "\n"
    << "min_region_ratio = " << fmt(c.slic.min_region_ratio) << "\n";
  return o.str();
}

}  // namespace vesselcouple
