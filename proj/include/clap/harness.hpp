#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"

#include "clap/config.hpp"
#include "clap/graphs.hpp"
#include "clap/objective.hpp"
#include "clap/peeling.hpp"
#include "clap/trainer.hpp"

namespace clap::harness {

inline constexpr const char* kVersion = "0.1.0";

struct Splits {
  graphs::Dataset train;
  graphs::Dataset val;
  graphs::Dataset test;
};

/// Load or generate the dataset and split it into train/val/test (seeded).
Splits make_splits(const RunConfig& config);
graphs::Dataset load_data(const RunConfig& config);

/// TrainConfig with views and feature width resolved from the data.
trainer::TrainConfig resolved_train_config(const RunConfig& config, const graphs::Dataset& data);

// Re-batching intervention.

struct InterventionRow {
  std::size_t batch_size = 0;
  bool shuffle = false;
  double r2 = 0.0;
  double final_corr = 0.0;              // global Pearson(c^(L), y)
  std::vector<double> layer_corr;       // per depth
};

struct InterventionReport {
  std::vector<InterventionRow> rows;  // batch sizes outer, shuffle inner
  double spread = 0.0;                // max - min of final_corr over rows
};

/// Re-batch the same test samples for every (B, shuffle) cell and evaluate.
/// Never modifies the model or the samples.
InterventionReport intervene(const peeling::Model& model, const graphs::Dataset& test,
                             const InterventionOptions& options, const objective::ObjectiveConfig& objective,
                             double context_strength);

// Ablations.

struct Variant {
  std::string name;   // CLI id
  std::string label;  // table row label
};

/// "full" followed by every ablation in table order.
const std::vector<Variant>& variants();
const Variant& find_variant(const std::string& name);
/// Objective with the variant applied on top of `base`.
objective::ObjectiveConfig apply_variant(const std::string& name, objective::ObjectiveConfig base);

struct AblationRow {
  std::string variant;
  std::string label;
  std::uint64_t seed = 0;
  trainer::Metrics test;
  std::size_t best_epoch = 0;
  std::string error;
};

/// Train one variant with `seed` for both initialization and training and
/// score it on the test split. Failures are recorded in the row.
AblationRow run_variant(const Splits& splits, const trainer::TrainConfig& base, const std::string& name,
                        std::uint64_t seed, std::optional<peeling::Model>* model_out = nullptr);

/// Train every requested variant (plus "full") for every seed on the same splits.
std::vector<AblationRow> ablate(const Splits& splits, const trainer::TrainConfig& base,
                                std::vector<std::string> variant_names, const std::vector<std::uint64_t>& seeds);

// Saliency.

/// {1, round(L/2), L} without repeats.
std::vector<std::size_t> default_saliency_layers(std::size_t depth);

struct SaliencyRecord {
  peeling::SaliencyMap map;
  std::vector<int> motif;
};

/// Causal gate scores of each sample at each layer. Throws DataError when a
/// sample lacks one of the model's views.
std::vector<SaliencyRecord> compute_saliency(const peeling::Model& model, const graphs::Dataset& samples,
                                             const std::vector<std::size_t>& layers);

/// Mean motif score minus mean non-motif score, over views and samples.
double motif_contrast(const std::vector<SaliencyRecord>& records, std::size_t layer);

/// Blue-white-red, white at 0.5; input clamped to [0, 1].
std::string diverging_color(double pi);
/// Node positions for drawing: projected stored positions for the geometry
/// view, otherwise a force-directed layout seeded by `seed`. Coordinates in [0, 1].
std::vector<std::pair<double, double>> layout(const graphs::ViewGraph& view, std::uint64_t seed);
std::string render_svg(const graphs::MultiViewSample& sample, const SaliencyRecord& record);
nlohmann::json to_json(const SaliencyRecord& record);

// Artifacts.

nlohmann::json to_json(const InterventionReport& report);
nlohmann::json to_json(const AblationRow& row);
nlohmann::json error_record(const std::string& command, const std::exception& e);
/// Manifest: config hash, seeds, version and the full config.
nlohmann::json manifest(const std::string& command, const RunConfig& config);

/// Commands understood by run_command.
const std::vector<std::string>& commands();

/// Execute one command; artifacts go under config.output_dir and a short
/// JSON summary is written to `out`. Throws on failure.
void run_command(const std::string& command, const RunConfig& config, std::ostream& out);

}  // namespace clap::harness
