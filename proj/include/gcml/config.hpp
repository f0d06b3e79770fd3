// Line-based `key = value` run configuration with `#` comments and dotted
// sections. Unknown keys are rejected; every key has a default.
#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "gcml/data.hpp"
#include "gcml/model.hpp"
#include "gcml/training.hpp"

namespace gcml {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  ModelConfig model = default_model();

  Phase phase = Phase::classify;
  TrainConfig classify = TrainConfig::defaults(Phase::classify);
  TrainConfig retrieve = TrainConfig::defaults(Phase::retrieve);
  bool log_wall_time = false;

  std::string data_root;  // empty: generate the synthetic set in memory
  std::string data_manifest = "manifest.tsv";
  SyntheticSpec synthetic;
  std::vector<int> train_views{0, 1};
  int database_view = 2;
  int query_view = 3;

  std::vector<int> eval_n_values{1, 5, 10, 100};
  std::uint64_t eval_seed = 2024;

  int threads = 1;

  /// Desk-scale backbone matched to the default synthetic image size.
  static ModelConfig default_model();

  /// Train settings for a phase; the shared train.* keys are already folded in.
  const TrainConfig& train(Phase p) const { return p == Phase::classify ? classify : retrieve; }
  void validate() const;
};

/// Applies `key = value` lines on top of `base`. Errors name the offending
/// key and line.
RunConfig parse_run_config(const std::string& text, RunConfig base = {});
RunConfig load_run_config(const std::filesystem::path& path);

/// Every key with its resolved value, one per line, in a fixed order.
std::string format_run_config(const RunConfig& cfg);

/// Synthetic dataset spec files accept the bare SyntheticSpec field names
/// (num_classes, image_size, ...).
SyntheticSpec parse_synthetic_spec(const std::string& text);
SyntheticSpec load_synthetic_spec(const std::filesystem::path& path);
std::string format_synthetic_spec(const SyntheticSpec& spec);

/// Label used in recall tables: variant, then "+attention" and "+aug".
std::string method_label(const ModelConfig& model, bool rotation_augment);

}  // namespace gcml
