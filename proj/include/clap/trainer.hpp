#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "clap/graphs.hpp"
#include "clap/objective.hpp"
#include "clap/peeling.hpp"

namespace clap::trainer {

enum class Optimizer { kAdam, kGradientDescent };

std::string optimizer_name(Optimizer o);
Optimizer parse_optimizer(const std::string& name);

struct TrainConfig {
  std::size_t epochs = 100;
  std::size_t batch_size = 16;
  double learning_rate = 3e-3;
  Optimizer optimizer = Optimizer::kAdam;
  std::uint64_t seed = 0;
  std::size_t patience = 20;
  double val_fraction = 0.15;
  double clip_norm = 5.0;  // global gradient norm; 0 disables clipping
  /// Scale of the batch context q used when assembling batches.
  double context_strength = 0.0;
  objective::ObjectiveConfig objective;
  peeling::ModelConfig model;

  void validate() const;
};

struct Metrics {
  double mae = 0.0;
  double mse = 0.0;
  double r2 = 0.0;
  /// Pearson(c^(l), y) over the whole evaluated set, per layer.
  std::vector<double> layer_corr;
};

struct Evaluation {
  Metrics metrics;
  std::vector<double> predictions;  // dataset order
  Tensor C;                         // N×L, dataset order
  Tensor T;
  std::vector<graphs::Batch> batches;
  std::vector<peeling::PeelTrace> traces;  // one per batch
};

/// Forward every batch (no parameter updates) and score against labels.
Evaluation evaluate_batches(const peeling::Model& model, const graphs::Dataset& dataset,
                            const std::vector<graphs::Batch>& batches,
                            const objective::ObjectiveConfig& objective);

/// Evaluate with batches of size `batch_size` assembled from `seed`.
Evaluation evaluate(const peeling::Model& model, const graphs::Dataset& dataset, std::size_t batch_size,
                    const objective::ObjectiveConfig& objective, double context_strength = 0.0,
                    std::uint64_t seed = 0, bool shuffle = false);

/// MAE, MSE and R^2 = 1 - SSE/SST. Throws when the labels have zero variance.
Metrics score(const std::vector<double>& predictions, const std::vector<double>& labels);

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  objective::LossBreakdown train;  // mean over the epoch's batches
  Metrics val;
};

struct RunHistory {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  double best_val_mse = 0.0;
  bool stopped_early = false;
  bool diverged = false;
  std::string divergence;  // what went non-finite, when diverged
};

struct TrainResult {
  peeling::Model model;  // parameters of the best epoch
  RunHistory history;
};

struct Split {
  graphs::Dataset train;
  graphs::Dataset val;
};

/// Seeded split off a validation fraction (at least one sample each side).
Split split_validation(const graphs::Dataset& data, double val_fraction, std::uint64_t seed);

TrainResult train(const graphs::Dataset& train_set, const graphs::Dataset& val_set, const TrainConfig& config);

enum class SweepAxis { kDepth, kRhoMax };

struct SweepRow {
  double value = 0.0;
  std::optional<Metrics> test;
  std::size_t best_epoch = 0;
  std::string error;
};

/// One training run per value with seeds held fixed; rows sorted by value.
std::vector<SweepRow> sweep(SweepAxis axis, std::vector<double> values, const TrainConfig& base,
                            const graphs::Dataset& train_set, const graphs::Dataset& val_set,
                            const graphs::Dataset& test_set);

// Serialization.
nlohmann::json to_json(const peeling::ModelConfig& c);
peeling::ModelConfig model_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const objective::ObjectiveConfig& c);
nlohmann::json to_json(const TrainConfig& c);
nlohmann::json to_json(const objective::LossBreakdown& b);
nlohmann::json to_json(const Metrics& m);
nlohmann::json to_json(const RunHistory& h);

inline constexpr int kCheckpointSchema = 1;

void save_checkpoint(const peeling::Model& model, const std::string& path);
peeling::Model load_checkpoint(const std::string& path);

}  // namespace clap::trainer
