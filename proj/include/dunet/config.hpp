#pragma once

#include "dunet/losses.hpp"
#include "dunet/models.hpp"
#include "dunet/optim.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>

namespace dunet {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Training run settings. Defaults follow the reference training setup:
/// batch 16, lr 1e-5, 300 epochs, Nadam, binary cross-entropy.
struct TrainConfig {
  std::string model = "doubleunet";
  Index input_height = 288;
  Index input_width = 384;
  int batch_size = 16;
  double lr = 1e-5;
  OptimizerKind optimizer = OptimizerKind::nadam;
  LossKind loss = LossKind::bce;
  int epochs = 300;
  std::uint64_t seed = 42;
  double width_multiplier = 1.0;
  Index se_ratio = 8;
  bool augmentation = true;
  /// Augment validation and test splits as well (off: training split only).
  bool augment_all_splits = false;
  std::string data;
  std::string out = "runs/latest";
  double threshold = 0.5;
  bool deterministic = false;
  double plateau_factor = 0.1;
  int plateau_patience = 5;
  double min_delta = 1e-4;
  double min_lr = 1e-7;
  int early_stop_patience = 15;
  /// Stop after this many optimizer steps; 0 means no limit.
  long max_steps = 0;

  void validate() const;
  ModelConfig model_config() const;
};

/// Flat `key = value` text; `#` starts a comment. Unknown keys are rejected.
TrainConfig parse_config_text(const std::string& text, const std::string& origin = "<config>");
TrainConfig parse_config(const std::filesystem::path& path);

/// Sets one key from its textual value, with the same checks as the parser.
void set_config_value(TrainConfig& cfg, const std::string& key, const std::string& value,
                      const std::string& where = "<override>");

/// Serializes every key; parse_config_text(to_config_text(c)) reproduces c exactly.
std::string to_config_text(const TrainConfig& cfg);

/// Lossless shortest round-trip formatting of a double.
std::string format_double(double v);

/// Parses `key = value` lines into a map (shared by config and checkpoint state files).
std::map<std::string, std::string> parse_key_values(const std::string& text, const std::string& origin);

}  // namespace dunet
