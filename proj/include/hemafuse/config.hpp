#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>

#include "hemafuse/augment.hpp"
#include "hemafuse/bayes_opt.hpp"
#include "hemafuse/hyperparams.hpp"
#include "hemafuse/models.hpp"
#include "hemafuse/synth.hpp"

namespace hemafuse {

/// 64-bit FNV-1a.
std::uint64_t fnv1a64(std::string_view bytes);
std::string hex64(std::uint64_t v);

/// Flat key=value text. `[name]` lines prefix the following keys with
/// "name."; `#` starts a comment; values may be double-quoted.
struct ConfigFile {
  std::map<std::string, std::string> values;
  std::uint64_t hash = 0;  // FNV-1a of the raw bytes
  std::filesystem::path base_dir;
};

ConfigFile parse_config_text(const std::string& text, const std::filesystem::path& base_dir = {});
ConfigFile load_config_file(const std::filesystem::path& path);

/// Partial hyperparameters from `arch.<letter>.*` keys.
struct HyperOverride {
  std::optional<int> units;
  std::optional<OptimizerKind> optimizer;
  std::optional<double> learning_rate, momentum, dropout_rate;
  HyperParams apply(HyperParams h) const;
};

enum class HyperDefaults { Desk, Reference };

struct PipelineConfig {
  std::filesystem::path dataset_root;
  std::array<std::string, 2> class_dirs = {"notall", "all"};
  std::filesystem::path workdir;
  int image_size = 64;
  std::uint64_t seed = 0;

  int synth_per_class = 500;

  AugmentPolicy augment;  // seed filled from the global seed

  int epochs = 6;
  int batch_size = 16;
  HyperDefaults hyper_defaults = HyperDefaults::Desk;
  std::array<HyperOverride, 3> overrides;

  int ensemble_members = 5;

  int bo_k_init = 5;
  int bo_n_max = 25;
  int bo_epochs = 2;
  SearchSpace bo_space;

  std::uint64_t config_hash = 0;

  /// Starting point before tuning results and overrides.
  HyperParams default_hyperparams(ArchId arch) const;
  void validate() const;
};

/// Throws ConfigError for unknown keys, malformed values and out-of-range
/// settings. `seed_override` replaces the file's seed.
PipelineConfig parse_pipeline_config(const ConfigFile& file, std::optional<std::uint64_t> seed_override = {});
PipelineConfig load_pipeline_config(const std::filesystem::path& path,
                                    std::optional<std::uint64_t> seed_override = {});

}  // namespace hemafuse
