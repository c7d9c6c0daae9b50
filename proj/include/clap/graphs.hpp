#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "clap/tensor.hpp"

namespace clap::graphs {

/// Canonical view ids, in the order the synthetic generator enables them.
inline constexpr const char* kGraphView = "graph";
inline constexpr const char* kPermutedView = "perm";
inline constexpr const char* kGeometryView = "geom";

struct ViewGraph {
  std::string view_id;
  Tensor x;  // n×F node features
  /// Directed pairs; every undirected edge appears in both directions,
  /// sorted, without duplicates or self-loops.
  std::vector<std::pair<int, int>> edges;
  std::optional<Tensor> pos;  // n×3, geometry view only

  std::size_t num_nodes() const noexcept { return x.rows(); }
  std::size_t feature_dim() const noexcept { return x.cols(); }

  /// Sort, symmetrize and dedupe `edges`; throws DataError on bad endpoints.
  void normalize_edges();

  friend bool operator==(const ViewGraph&, const ViewGraph&) = default;
};

struct MultiViewSample {
  std::string id;
  std::map<std::string, ViewGraph> views;
  double y = 0.0;
  std::optional<double> planted_c;
  std::optional<double> planted_noise;
  /// Node indices of the planted motif (synthetic data only).
  std::vector<int> motif;

  const ViewGraph& view(const std::string& view_id) const;
};

using Dataset = std::vector<MultiViewSample>;

/// A batch refers to dataset samples by index; samples themselves are never
/// copied or modified by batching.
struct Batch {
  std::size_t batch_id = 0;
  std::vector<std::size_t> members;
  /// Per-member context value; empty when context is disabled.
  std::vector<double> context;

  std::size_t size() const noexcept { return members.size(); }
};

struct SynthScenario {
  double theta = 1.0;
  double noise_sd = 0.75;
  std::size_t min_nodes = 8;
  std::size_t max_nodes = 16;
  std::size_t motif_size = 4;
  double motif_boost = 3.0;
  double context_strength = 1.0;
  std::size_t n_views = 2;
  std::size_t feature_dim = 8;
  std::uint64_t seed = 0;
};

/// View ids enabled for a scenario with `n_views` views (1..3).
std::vector<std::string> view_ids(std::size_t n_views);

/// Population correlation between c and y = theta*c + eta when Var(c) = 1.
double planted_kappa(double theta, double noise_sd);
/// Noise sd that yields population correlation `kappa` for a given theta.
double noise_sd_for_kappa(double theta, double kappa);

Dataset generate_synthetic(const SynthScenario& scenario, std::size_t n);

struct BatchingOptions {
  std::size_t batch_size = 16;
  bool shuffle = true;
  std::uint64_t seed = 0;
  /// Scale of the batch context q; 0 disables context.
  double context_strength = 0.0;
};

/// Partition `dataset` into batches. A trailing batch smaller than 2 is
/// merged into the previous one. Context: q_i = s * (mean of the other
/// members' labels + nu_i), nu_i ~ N(0, (sd_y / (B-1))^2), where sd_y is the
/// label sd over the whole dataset.
std::vector<Batch> assemble_batches(const Dataset& dataset, const BatchingOptions& options);

/// JSONL with one sample per line.
Dataset load_dataset(const std::string& path);
void save_dataset(const Dataset& dataset, const std::string& path);

// Exposed for tests and the CLI.
std::string sample_to_json_line(const MultiViewSample& sample);
MultiViewSample sample_from_json_line(const std::string& line, std::size_t line_no);

bool same_sample(const MultiViewSample& a, const MultiViewSample& b);

}  // namespace clap::graphs
