#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "clap/graphs.hpp"
#include "clap/trainer.hpp"

namespace clap::harness {

inline constexpr int kSchemaVersion = 1;

struct DataSource {
  std::optional<std::string> path;  // JSONL dataset; synthetic when absent
  graphs::SynthScenario synthetic;
  /// Planted ceiling; overrides synthetic.noise_sd when set.
  std::optional<double> kappa;
  std::size_t n = 2000;
  double test_fraction = 0.2;

  graphs::SynthScenario scenario() const;
};

struct InterventionOptions {
  std::vector<std::size_t> batch_sizes = {8, 16, 32};
  std::vector<bool> shuffles = {true, false};
  std::uint64_t seed = 0;
};

struct SaliencyOptions {
  std::vector<std::size_t> layers;  // empty: {1, L/2 rounded, L}
  std::size_t samples = 4;          // first samples of the test split
};

struct SweepOptions {
  trainer::SweepAxis axis = trainer::SweepAxis::kDepth;
  std::vector<double> values = {1, 3, 5, 9};
};

struct AblateOptions {
  std::vector<std::string> variants;  // empty: every variant
  std::vector<std::uint64_t> seeds = {0, 1, 2};
};

struct TheoryOptions {
  std::string scenario = "default";
  std::size_t mc_draws = 1000000;
  std::size_t residual_samples = 100000;
  std::uint64_t seed = 0;
};

struct RunConfig {
  DataSource data;
  trainer::TrainConfig train;
  /// Views the model reads; taken from the data when unset.
  std::optional<std::vector<std::string>> views;
  std::string output_dir = "clap_out";
  std::optional<std::string> checkpoint;  // eval/intervene/saliency input
  InterventionOptions intervene;
  SaliencyOptions saliency;
  SweepOptions sweep;
  AblateOptions ablate;
  TheoryOptions theory;

  /// Checks ranges and that referenced paths exist.
  void validate() const;
};

/// Strict TOML-like text: `[section]` headers, `key = value` lines, `#`
/// comments. Values are numbers, true/false, "strings" or flat [arrays].
/// Unknown or repeated keys throw ConfigError naming the key.
RunConfig parse_config(std::string_view text, RunConfig base = {});
RunConfig load_config(const std::string& path);

/// Set one dotted key (`train.epochs`) from its textual value.
void set_key(RunConfig& config, const std::string& dotted_key, const std::string& value);
/// Every accepted dotted key, in schema order.
std::vector<std::string> config_keys();

nlohmann::json to_json(const RunConfig& config);
/// FNV-1a 64 over the canonical JSON of the config, as 16 hex digits.
std::string config_hash(const RunConfig& config);

}  // namespace clap::harness
