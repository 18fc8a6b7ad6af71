#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "cll/ftn.hpp"
#include "cll/model.hpp"
#include "cll/train.hpp"

namespace cll {

// Tuning variants selectable from the command line.
enum class TuneMode { ftn, ftn_gc4, ftn_gc16, ftn_deeper, adafm, finetune };

const char* to_string(TuneMode mode);
TuneMode parse_tune_mode(const std::string& text);
// Provider configuration a mode attaches (plain for finetune).
ProviderConfig providers_for(TuneMode mode);

// Everything one command needs. Every key has a default; noise levels are on
// the 8-bit scale in the file and converted on load.
struct RunConfig {
  TrainConfig train{};
  NetworkSpec network{};
  TuneMode mode = TuneMode::ftn;
  std::filesystem::path out = "out";
  double alpha = 0.5;
  std::vector<double> sweep_sigmas{20, 40, 60, 80};  // 8-bit scale
  double sweep_step = 0.01;
  // pixel-demo: "ramp", "constant:<a>" or a grayscale image path.
  std::string level_map = "ramp";
  // pixel-demo input: empty for a synthetic validation image, else an image path.
  std::string input;
  double input_sigma = 50;  // 8-bit scale; noise added to the demo input
  std::size_t input_size = 96;
  std::size_t gradcheck_instances = 20;
  std::size_t macs_height = 32;
  std::size_t macs_width = 32;
  bool deterministic = false;

  void validate() const;
};

// Parses `key = value` lines; `#` starts a comment, blank lines are ignored.
// Unknown keys, repeated keys and unparsable values raise ConfigError naming
// the source and line.
RunConfig parse_config(std::istream& is, const std::string& source = "<config>");
RunConfig load_config(const std::filesystem::path& path);

// Sets one key as if it had appeared in a config file.
void set_config_value(RunConfig& config, const std::string& key, const std::string& value);

// Every key with its effective value, in a fixed order; parsing the result
// reproduces the config.
std::vector<std::pair<std::string, std::string>> config_entries(const RunConfig& config);
void write_config(std::ostream& os, const RunConfig& config);

}  // namespace cll
