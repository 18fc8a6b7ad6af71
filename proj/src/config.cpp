#include "cll/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>

#include "cll/metrics.hpp"

namespace cll {

const char* to_string(TuneMode mode) {
  switch (mode) {
    case TuneMode::ftn: return "ftn";
    case TuneMode::ftn_gc4: return "ftn-gc4";
    case TuneMode::ftn_gc16: return "ftn-gc16";
    case TuneMode::ftn_deeper: return "ftn-deeper";
    case TuneMode::adafm: return "adafm";
    case TuneMode::finetune: return "finetune";
  }
  return "unknown";
}

TuneMode parse_tune_mode(const std::string& text) {
  for (TuneMode m : {TuneMode::ftn, TuneMode::ftn_gc4, TuneMode::ftn_gc16, TuneMode::ftn_deeper, TuneMode::adafm,
                     TuneMode::finetune}) {
    if (text == to_string(m)) return m;
  }
  throw ConfigError("unknown mode '" + text + "' (ftn, ftn-gc4, ftn-gc16, ftn-deeper, adafm, finetune)");
}

ProviderConfig providers_for(TuneMode mode) {
  ProviderConfig p;
  switch (mode) {
    case TuneMode::ftn: p.mode = ProviderMode::ftn; p.ftn = {1, 2}; break;
    case TuneMode::ftn_gc4: p.mode = ProviderMode::ftn; p.ftn = {4, 2}; break;
    case TuneMode::ftn_gc16: p.mode = ProviderMode::ftn; p.ftn = {16, 2}; break;
    case TuneMode::ftn_deeper: p.mode = ProviderMode::ftn; p.ftn = {1, 3}; break;
    case TuneMode::adafm: p.mode = ProviderMode::adafm; break;
    case TuneMode::finetune: break;
  }
  return p;
}

void RunConfig::validate() const {
  train.validate();
  network.validate();
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("alpha must lie in [0, 1]");
  if (sweep_sigmas.empty()) throw ConfigError("sweep_sigmas must not be empty");
  for (double s : sweep_sigmas) NoiseLevel::from_8bit(s).validate();
  alpha_grid(sweep_step);
  NoiseLevel::from_8bit(input_sigma).validate();
  if (input_size < 3) throw ConfigError("input_size must be at least 3");
  if (gradcheck_instances == 0) throw ConfigError("gradcheck_instances must be positive");
  if (macs_height == 0 || macs_width == 0) throw ConfigError("MACs extents must be positive");
  if (network.image_channels != 1) throw ConfigError("only single-channel images are supported");
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <class T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw ConfigError("key '" + key + "': cannot parse '" + v + "' as a number");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("key '" + key + "': expected true or false, got '" + v + "'");
}

// Shortest text that parses back to the same double.
std::string fmt(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, r.ptr);
}

// Noise levels travel through /255 and *255; ten significant digits keep
// the text stable across a round trip.
std::string fmt_8bit(double sigma) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.10g", sigma * 255.0);
  return buf;
}

struct Key {
  const char* name;
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <class F>
Key size_key(const char* name, F field) {
  return {name,
          [field](RunConfig& c, const std::string& k, const std::string& v) {
            field(c) = parse_number<std::size_t>(k, v);
          },
          [field](const RunConfig& c) { return std::to_string(field(c)); }};
}

template <class F>
Key real_key(const char* name, F field) {
  return {name,
          [field](RunConfig& c, const std::string& k, const std::string& v) { field(c) = parse_number<double>(k, v); },
          [field](const RunConfig& c) { return fmt(field(c)); }};
}

template <class F>
Key sigma_key(const char* name, F field) {
  return {name,
          [field](RunConfig& c, const std::string& k, const std::string& v) {
            field(c) = parse_number<double>(k, v) / 255.0;
          },
          [field](const RunConfig& c) { return fmt_8bit(field(c)); }};
}

const std::vector<Key>& keys() {
  static const std::vector<Key> table = {
      {"seed",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.train.seed = parse_number<std::uint64_t>(k, v); },
       [](const RunConfig& c) { return std::to_string(c.train.seed); }},
      size_key("batch_size", [](auto& c) -> auto& { return c.train.batch_size; }),
      size_key("patch_size", [](auto& c) -> auto& { return c.train.patch_size; }),
      size_key("steps_phase1", [](auto& c) -> auto& { return c.train.steps_phase1; }),
      size_key("steps_phase2", [](auto& c) -> auto& { return c.train.steps_phase2; }),
      real_key("lr_phase1", [](auto& c) -> auto& { return c.train.lr_phase1; }),
      real_key("lr_phase2", [](auto& c) -> auto& { return c.train.lr_phase2; }),
      real_key("beta1", [](auto& c) -> auto& { return c.train.beta1; }),
      real_key("beta2", [](auto& c) -> auto& { return c.train.beta2; }),
      real_key("eps", [](auto& c) -> auto& { return c.train.eps; }),
      {"loss",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         if (v == "l1") c.train.loss = LossKind::l1;
         else if (v == "l2") c.train.loss = LossKind::l2;
         else throw ConfigError("key '" + k + "': expected l1 or l2, got '" + v + "'");
       },
       [](const RunConfig& c) { return std::string(to_string(c.train.loss)); }},
      {"optimizer",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         if (v == "adam") c.train.optimizer = OptimizerKind::adam;
         else if (v == "sgd") c.train.optimizer = OptimizerKind::sgd;
         else throw ConfigError("key '" + k + "': expected adam or sgd, got '" + v + "'");
       },
       [](const RunConfig& c) { return std::string(c.train.optimizer == OptimizerKind::adam ? "adam" : "sgd"); }},
      sigma_key("sigma_low", [](auto& c) -> auto& { return c.train.sigma_low; }),
      sigma_key("sigma_high", [](auto& c) -> auto& { return c.train.sigma_high; }),
      size_key("validation_images", [](auto& c) -> auto& { return c.train.validation_images; }),
      size_key("validation_size", [](auto& c) -> auto& { return c.train.validation_size; }),
      size_key("channels", [](auto& c) -> auto& { return c.network.channels; }),
      size_key("num_blocks", [](auto& c) -> auto& { return c.network.num_blocks; }),
      size_key("kernel_size", [](auto& c) -> auto& { return c.network.kernel_size; }),
      size_key("image_channels", [](auto& c) -> auto& { return c.network.image_channels; }),
      {"mode", [](RunConfig& c, const std::string&, const std::string& v) { c.mode = parse_tune_mode(v); },
       [](const RunConfig& c) { return std::string(to_string(c.mode)); }},
      {"out", [](RunConfig& c, const std::string&, const std::string& v) { c.out = v; },
       [](const RunConfig& c) { return c.out.string(); }},
      real_key("alpha", [](auto& c) -> auto& { return c.alpha; }),
      {"sweep_sigmas",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.sweep_sigmas.clear();
         std::stringstream ss(v);
         std::string item;
         while (std::getline(ss, item, ',')) c.sweep_sigmas.push_back(parse_number<double>(k, trim(item)));
       },
       [](const RunConfig& c) {
         std::string s;
         for (double v : c.sweep_sigmas) s += (s.empty() ? "" : ",") + fmt(v);
         return s;
       }},
      real_key("sweep_step", [](auto& c) -> auto& { return c.sweep_step; }),
      {"level_map", [](RunConfig& c, const std::string&, const std::string& v) { c.level_map = v; },
       [](const RunConfig& c) { return c.level_map; }},
      {"input", [](RunConfig& c, const std::string&, const std::string& v) { c.input = v; },
       [](const RunConfig& c) { return c.input; }},
      real_key("input_sigma", [](auto& c) -> auto& { return c.input_sigma; }),
      size_key("input_size", [](auto& c) -> auto& { return c.input_size; }),
      size_key("gradcheck_instances", [](auto& c) -> auto& { return c.gradcheck_instances; }),
      size_key("macs_height", [](auto& c) -> auto& { return c.macs_height; }),
      size_key("macs_width", [](auto& c) -> auto& { return c.macs_width; }),
      {"deterministic",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.deterministic = parse_bool(k, v); },
       [](const RunConfig& c) { return std::string(c.deterministic ? "true" : "false"); }},
  };
  return table;
}

}  // namespace

void set_config_value(RunConfig& config, const std::string& key, const std::string& value) {
  for (const auto& k : keys()) {
    if (key == k.name) {
      k.set(config, key, value);
      return;
    }
  }
  throw ConfigError("unknown config key '" + key + "'");
}

RunConfig parse_config(std::istream& is, const std::string& source) {
  RunConfig config;
  std::set<std::string> seen;
  std::string line;
  std::size_t number = 0;
  while (std::getline(is, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = source + ":" + std::to_string(number) + ": ";
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (!seen.insert(key).second) throw ConfigError(where + "key '" + key + "' given twice");
    try {
      set_config_value(config, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }
  return config;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file " + path.string());
  return parse_config(is, path.string());
}

std::vector<std::pair<std::string, std::string>> config_entries(const RunConfig& config) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& k : keys()) out.emplace_back(k.name, k.get(config));
  return out;
}

void write_config(std::ostream& os, const RunConfig& config) {
  for (const auto& [k, v] : config_entries(config)) os << k << " = " << v << '\n';
}

}  // namespace cll
