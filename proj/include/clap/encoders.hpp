#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "clap/autodiff.hpp"
#include "clap/graphs.hpp"
#include "clap/rng.hpp"

namespace clap::encoders {

struct EncoderConfig {
  std::size_t feature_dim = 8;
  std::size_t hidden = 32;
  std::size_t embed_dim = 32;
  std::size_t rounds = 2;
  /// Reserve an input channel for the batch context node.
  bool context_channel = true;
};

/// Parameter indices of one view's encoder inside a shared ParameterSet.
struct EncoderParams {
  std::string view_id;
  bool geometry = false;
  std::size_t input_dim = 0;
  std::size_t w_in = 0;
  std::vector<std::size_t> w_self;
  std::vector<std::size_t> w_msg;
  std::vector<std::size_t> bias;
  std::size_t w_out = 0;
};

/// Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
Tensor uniform_init(std::size_t fan_in, std::size_t fan_out, Rng& rng);

EncoderParams register_encoder(ad::ParameterSet& params, const std::string& view_id,
                               const EncoderConfig& config, Rng& rng);

/// Row-normalized neighbor weights; geometry views weight edges by
/// 1/(1+distance). Isolated nodes get an all-zero row. With
/// `extra_isolated_node` an additional isolated row/column is appended.
Tensor aggregation_matrix(const graphs::ViewGraph& graph, bool geometry, bool extra_isolated_node);

/// Node inputs: features, a zero context column when the channel is
/// reserved, and (if `context` is set) one extra isolated node carrying q.
Tensor node_inputs(const graphs::ViewGraph& graph, const EncoderConfig& config,
                   std::optional<double> context);

/// R rounds of H <- tanh(H W_self + A H W_msg + b) on top of X W_in, then
/// a linear projection to the shared embedding width. Returns n×D (one
/// more row when a context node is present).
ad::Var encode_view(ad::Tape& tape, const graphs::ViewGraph& graph, const EncoderParams& params,
                    const EncoderConfig& config, std::optional<double> context);

/// Gated mean: sum_i g_i emb_i / (sum_i g_i + eps). `gate` is n×1.
ad::Var pool_nodes(ad::Var embeddings, ad::Var gate, double eps);

}  // namespace clap::encoders
