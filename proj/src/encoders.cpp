#include "clap/encoders.hpp"

#include <cmath>

#include "clap/error.hpp"

namespace clap::encoders {

Tensor uniform_init(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  Tensor t(fan_in, fan_out);
  for (auto& v : t.data()) v = rng.uniform(-bound, bound);
  return t;
}

EncoderParams register_encoder(ad::ParameterSet& params, const std::string& view_id,
                               const EncoderConfig& cfg, Rng& rng) {
  EncoderParams p;
  p.view_id = view_id;
  p.geometry = view_id == graphs::kGeometryView;
  p.input_dim = cfg.feature_dim + (cfg.context_channel ? 1 : 0);
  const std::string prefix = "enc." + view_id + ".";
  p.w_in = params.add(prefix + "w_in", uniform_init(p.input_dim, cfg.hidden, rng));
  for (std::size_t r = 0; r < cfg.rounds; ++r) {
    const std::string round = prefix + "r" + std::to_string(r) + ".";
    p.w_self.push_back(params.add(round + "w_self", uniform_init(cfg.hidden, cfg.hidden, rng)));
    p.w_msg.push_back(params.add(round + "w_msg", uniform_init(cfg.hidden, cfg.hidden, rng)));
    p.bias.push_back(params.add(round + "bias", Tensor(1, cfg.hidden)));
  }
  p.w_out = params.add(prefix + "w_out", uniform_init(cfg.hidden, cfg.embed_dim, rng));
  return p;
}

Tensor aggregation_matrix(const graphs::ViewGraph& g, bool geometry, bool extra_isolated_node) {
  const std::size_t n = g.num_nodes();
  const std::size_t m = n + (extra_isolated_node ? 1 : 0);
  Tensor a(m, m);
  if (geometry && !g.pos) throw DataError("geometry view " + g.view_id + " has no positions");
  for (const auto& [s, d] : g.edges) {
    double w = 1.0;
    if (geometry) {
      double dist2 = 0.0;
      for (std::size_t k = 0; k < 3; ++k) {
        const double diff = (*g.pos)(static_cast<std::size_t>(s), k) - (*g.pos)(static_cast<std::size_t>(d), k);
        dist2 += diff * diff;
      }
      w = 1.0 / (1.0 + std::sqrt(dist2));
    }
    a(static_cast<std::size_t>(s), static_cast<std::size_t>(d)) = w;
  }
  for (std::size_t i = 0; i < n; ++i) {
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) total += a(i, j);
    if (total > 0.0)
      for (std::size_t j = 0; j < n; ++j) a(i, j) /= total;
  }
  return a;
}

Tensor node_inputs(const graphs::ViewGraph& g, const EncoderConfig& cfg, std::optional<double> context) {
  if (g.feature_dim() != cfg.feature_dim) {
    throw ShapeError("view " + g.view_id + " has feature_dim " + std::to_string(g.feature_dim()) +
                     ", encoder expects " + std::to_string(cfg.feature_dim));
  }
  if (context && !cfg.context_channel) throw Error("encoder has no context channel");
  const std::size_t n = g.num_nodes();
  const std::size_t width = cfg.feature_dim + (cfg.context_channel ? 1 : 0);
  Tensor x(n + (context ? 1 : 0), width);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < cfg.feature_dim; ++k) x(i, k) = g.x(i, k);
  if (context) x(n, width - 1) = *context;
  return x;
}

ad::Var encode_view(ad::Tape& tape, const graphs::ViewGraph& g, const EncoderParams& p,
                    const EncoderConfig& cfg, std::optional<double> context) {
  if (g.view_id != p.view_id) {
    throw Error("encoder for view " + p.view_id + " applied to view " + g.view_id);
  }
  ad::Var x = tape.constant(node_inputs(g, cfg, context));
  ad::Var agg = tape.constant(aggregation_matrix(g, p.geometry, context.has_value()));
  ad::Var h = ad::matmul(x, tape.param(p.w_in));
  for (std::size_t r = 0; r < p.w_self.size(); ++r) {
    ad::Var self = ad::matmul(h, tape.param(p.w_self[r]));
    ad::Var msg = ad::matmul(agg, ad::matmul(h, tape.param(p.w_msg[r])));
    h = ad::tanh(ad::add(ad::add(self, msg), tape.param(p.bias[r])));
  }
  return ad::matmul(h, tape.param(p.w_out));
}

ad::Var pool_nodes(ad::Var embeddings, ad::Var gate, double eps) {
  if (gate.rows() != embeddings.rows() || gate.cols() != 1) {
    throw ShapeError("pool_nodes: gate " + shape_str(gate.value()) + " vs embeddings " +
                     shape_str(embeddings.value()));
  }
  ad::Var weighted = ad::matmul(ad::transpose(gate), embeddings);  // 1×D
  return ad::div(weighted, ad::sum(gate), eps);
}

}  // namespace clap::encoders
