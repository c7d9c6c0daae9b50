#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "clap/autodiff.hpp"
#include "clap/encoders.hpp"
#include "clap/graphs.hpp"

namespace clap::peeling {

struct ModelConfig {
  std::vector<std::string> views = {graphs::kGraphView, graphs::kPermutedView};
  encoders::EncoderConfig encoder;
  std::size_t depth = 5;
  double temperature = 1.0;
  double pool_eps = 1e-8;
  std::uint64_t seed = 0;
};

/// Parameter indices of one causal block.
struct CausalBlockParams {
  std::vector<std::size_t> splitter_w;  // per view, D×1
  std::vector<std::size_t> splitter_b;  // per view, 1×1
  std::size_t gate_w = 0;               // (V·D)×V
  std::size_t gate_b = 0;               // 1×V
  std::size_t trivial_gate_w = 0;
  std::size_t trivial_gate_b = 0;
  std::size_t causal_head_w = 0;   // D×1
  std::size_t causal_head_b = 0;   // 1×1
  std::size_t trivial_head_w = 0;  // D×1
  std::size_t trivial_head_b = 0;  // 1×1
  /// D→D hand-off to the next block; absent on the last block.
  std::optional<std::size_t> forward_w;
  std::optional<std::size_t> forward_b;
};

class Model {
 public:
  explicit Model(ModelConfig config);

  const ModelConfig& config() const noexcept { return config_; }
  ad::ParameterSet& params() noexcept { return params_; }
  const ad::ParameterSet& params() const noexcept { return params_; }
  const std::vector<encoders::EncoderParams>& encoders() const noexcept { return encoders_; }
  const std::vector<CausalBlockParams>& blocks() const noexcept { return blocks_; }
  std::size_t depth() const noexcept { return blocks_.size(); }
  std::size_t num_views() const noexcept { return config_.views.size(); }

  /// Parameters used only by the causal readout path (causal heads and
  /// causal fusion gates); the trivial branch never touches them.
  std::vector<std::size_t> causal_only_params() const;

 private:
  ModelConfig config_;
  ad::ParameterSet params_;
  std::vector<encoders::EncoderParams> encoders_;
  std::vector<CausalBlockParams> blocks_;
};

struct SplitResult {
  ad::Var causal;   // 1×D
  ad::Var trivial;  // 1×D
  ad::Var alpha;    // n×1, in [0, 1]
};

/// Node-wise soft split: alpha = sigmoid(E s + b), causal/trivial pools
/// weighted by alpha and 1 - alpha.
SplitResult split(ad::Var embeddings, ad::Var splitter_w, ad::Var splitter_b, double eps);

struct FuseResult {
  ad::Var fused;    // 1×D
  ad::Var weights;  // 1×V simplex
};

/// w = softmax(g_F([z_1; ...; z_V]) / tau), fused = sum_v w_v z_v.
FuseResult fuse(std::span<const ad::Var> per_view, ad::Var gate_w, ad::Var gate_b, double temperature);

/// Everything the stack produced for one sample.
struct SampleForward {
  std::vector<ad::Var> causal;   // per layer, 1×1
  std::vector<ad::Var> trivial;  // per layer, 1×1
  std::vector<std::vector<ad::Var>> causal_views;  // [layer][view], 1×D
  std::vector<std::vector<double>> gate_weights;          // [layer] -> V
  std::vector<std::vector<double>> trivial_gate_weights;  // [layer] -> V
  std::vector<std::vector<std::vector<double>>> alphas;   // [layer][view] -> real nodes
  std::vector<std::vector<double>> context_alpha;         // [layer][view]; empty without context
};

/// Forward pass of one sample. Depends only on the sample and its context
/// value, never on other batch members.
SampleForward forward_sample(ad::Tape& tape, const Model& model, const graphs::MultiViewSample& sample,
                             std::optional<double> context);

struct PeelTrace {
  Tensor C;  // B×L causal scalars
  Tensor T;  // B×L trivial scalars
  std::vector<std::vector<std::vector<double>>> gate_weights;          // [layer][sample] -> V
  std::vector<std::vector<std::vector<double>>> trivial_gate_weights;  // [layer][sample] -> V
  std::vector<std::vector<std::vector<std::vector<double>>>> alphas;   // [layer][sample][view]
  std::vector<std::vector<std::vector<double>>> context_alpha;         // [layer][sample] -> V
  std::vector<double> y_c_star;  // C[:, L-1]
  std::vector<double> t_sum;     // row sums of T
  std::vector<std::string> sample_ids;

  std::size_t batch_size() const noexcept { return C.rows(); }
  std::size_t depth() const noexcept { return C.cols(); }
};

/// Tape handles alongside the numeric trace, for building losses.
struct PeelGraph {
  PeelTrace trace;
  std::vector<ad::Var> causal_cols;   // per layer, B×1
  std::vector<ad::Var> trivial_cols;  // per layer, B×1
  ad::Var y_c_star;                   // B×1
  ad::Var t_sum;                      // B×1
  std::vector<std::vector<std::vector<ad::Var>>> causal_views;  // [sample][layer][view]
};

PeelGraph forward_stack(ad::Tape& tape, const Model& model, const graphs::Dataset& dataset,
                        const graphs::Batch& batch);

struct SaliencyMap {
  std::string sample_id;
  std::size_t layer = 0;  // 1-based
  std::map<std::string, std::vector<double>> scores;
};

/// Causal gates of sample `position` (within the traced batch) at `layer`
/// (1-based); scores cover real nodes only.
SaliencyMap extract_saliency(const PeelTrace& trace, const std::vector<std::string>& views,
                             std::size_t position, std::size_t layer);

}  // namespace clap::peeling
