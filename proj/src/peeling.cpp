#include "clap/peeling.hpp"

#include "clap/error.hpp"
#include "clap/rng.hpp"

namespace clap::peeling {

using ad::Var;

Model::Model(ModelConfig config) : config_(std::move(config)) {
  if (config_.views.empty()) throw Error("model needs at least one view");
  if (config_.depth < 1) throw Error("model depth must be at least 1");
  if (!(config_.temperature > 0.0)) throw Error("temperature must be positive");
  Rng rng(config_.seed);
  for (const auto& v : config_.views) {
    encoders_.push_back(encoders::register_encoder(params_, v, config_.encoder, rng));
  }
  const std::size_t d = config_.encoder.embed_dim;
  const std::size_t nv = config_.views.size();
  for (std::size_t l = 0; l < config_.depth; ++l) {
    const std::string pre = "block" + std::to_string(l + 1) + ".";
    CausalBlockParams b;
    for (const auto& v : config_.views) {
      b.splitter_w.push_back(params_.add(pre + "split." + v + ".w", encoders::uniform_init(d, 1, rng)));
      b.splitter_b.push_back(params_.add(pre + "split." + v + ".b", Tensor(1, 1)));
    }
    b.gate_w = params_.add(pre + "gate.w", encoders::uniform_init(nv * d, nv, rng));
    b.gate_b = params_.add(pre + "gate.b", Tensor(1, nv));
    b.trivial_gate_w = params_.add(pre + "trivial_gate.w", encoders::uniform_init(nv * d, nv, rng));
    b.trivial_gate_b = params_.add(pre + "trivial_gate.b", Tensor(1, nv));
    b.causal_head_w = params_.add(pre + "causal_head.w", encoders::uniform_init(d, 1, rng));
    b.causal_head_b = params_.add(pre + "causal_head.b", Tensor(1, 1));
    b.trivial_head_w = params_.add(pre + "trivial_head.w", encoders::uniform_init(d, 1, rng));
    b.trivial_head_b = params_.add(pre + "trivial_head.b", Tensor(1, 1));
    if (l + 1 < config_.depth) {
      b.forward_w = params_.add(pre + "forward.w", encoders::uniform_init(d, d, rng));
      b.forward_b = params_.add(pre + "forward.b", Tensor(1, d));
    }
    blocks_.push_back(std::move(b));
  }
}

std::vector<std::size_t> Model::causal_only_params() const {
  std::vector<std::size_t> out;
  for (const auto& b : blocks_) {
    out.insert(out.end(), {b.gate_w, b.gate_b, b.causal_head_w, b.causal_head_b});
  }
  return out;
}

SplitResult split(Var embeddings, Var splitter_w, Var splitter_b, double eps) {
  Var alpha = ad::sigmoid(ad::add(ad::matmul(embeddings, splitter_w), splitter_b));
  Var rest = ad::add_scalar(ad::scale(alpha, -1.0), 1.0);
  return {encoders::pool_nodes(embeddings, alpha, eps), encoders::pool_nodes(embeddings, rest, eps), alpha};
}

FuseResult fuse(std::span<const Var> per_view, Var gate_w, Var gate_b, double temperature) {
  if (per_view.empty()) throw ShapeError("fuse needs at least one view");
  Var joined = ad::concat(per_view, ad::Axis::kCols);   // 1×(V·D)
  Var stacked = ad::concat(per_view, ad::Axis::kRows);  // V×D
  Var w = ad::softmax(ad::add(ad::matmul(joined, gate_w), gate_b), temperature);
  return {ad::matmul(w, stacked), w};
}

namespace {
std::vector<double> to_vector(const Tensor& t) { return {t.data().begin(), t.data().end()}; }
}  // namespace

SampleForward forward_sample(ad::Tape& tape, const Model& model, const graphs::MultiViewSample& sample,
                             std::optional<double> context) {
  const ModelConfig& cfg = model.config();
  const std::size_t nv = model.num_views();
  std::vector<Var> emb;
  std::vector<std::size_t> real_nodes;
  emb.reserve(nv);
  for (std::size_t v = 0; v < nv; ++v) {
    const graphs::ViewGraph& g = sample.view(cfg.views[v]);
    emb.push_back(encoders::encode_view(tape, g, model.encoders()[v], cfg.encoder, context));
    real_nodes.push_back(g.num_nodes());
  }

  SampleForward out;
  const std::size_t depth = model.depth();
  for (std::size_t l = 0; l < depth; ++l) {
    const CausalBlockParams& b = model.blocks()[l];
    std::vector<Var> zc, zt, alphas;
    std::vector<std::vector<double>> alpha_vals;
    std::vector<double> ctx_alpha;
    for (std::size_t v = 0; v < nv; ++v) {
      SplitResult s = split(emb[v], tape.param(b.splitter_w[v]), tape.param(b.splitter_b[v]), cfg.pool_eps);
      zc.push_back(s.causal);
      zt.push_back(s.trivial);
      alphas.push_back(s.alpha);
      const auto& av = s.alpha.value().data();
      alpha_vals.emplace_back(av.begin(), av.begin() + static_cast<std::ptrdiff_t>(real_nodes[v]));
      if (context) ctx_alpha.push_back(av[real_nodes[v]]);
    }
    FuseResult fc = fuse(zc, tape.param(b.gate_w), tape.param(b.gate_b), cfg.temperature);
    FuseResult ft = fuse(zt, tape.param(b.trivial_gate_w), tape.param(b.trivial_gate_b), cfg.temperature);
    out.causal.push_back(
        ad::add(ad::matmul(fc.fused, tape.param(b.causal_head_w)), tape.param(b.causal_head_b)));
    out.trivial.push_back(
        ad::add(ad::matmul(ft.fused, tape.param(b.trivial_head_w)), tape.param(b.trivial_head_b)));
    out.causal_views.push_back(zc);
    out.gate_weights.push_back(to_vector(fc.weights.value()));
    out.trivial_gate_weights.push_back(to_vector(ft.weights.value()));
    out.alphas.push_back(std::move(alpha_vals));
    if (context) out.context_alpha.push_back(std::move(ctx_alpha));

    if (b.forward_w) {
      Var fw = tape.param(*b.forward_w);
      Var fb = tape.param(*b.forward_b);
      for (std::size_t v = 0; v < nv; ++v) {
        emb[v] = ad::tanh(ad::add(ad::matmul(ad::mul(emb[v], alphas[v]), fw), fb));
      }
    }
  }
  return out;
}

PeelGraph forward_stack(ad::Tape& tape, const Model& model, const graphs::Dataset& dataset,
                        const graphs::Batch& batch) {
  const std::size_t bsz = batch.size();
  if (bsz < 2) throw Error("forward_stack needs a batch of at least 2 samples");
  if (!batch.context.empty() && batch.context.size() != bsz) throw Error("context length mismatch");
  const std::size_t depth = model.depth();

  PeelGraph g;
  PeelTrace& tr = g.trace;
  tr.C = Tensor(bsz, depth);
  tr.T = Tensor(bsz, depth);
  tr.gate_weights.assign(depth, {});
  tr.trivial_gate_weights.assign(depth, {});
  tr.alphas.assign(depth, {});
  tr.context_alpha.assign(depth, {});

  std::vector<std::vector<Var>> causal(depth), trivial(depth);
  for (std::size_t i = 0; i < bsz; ++i) {
    const graphs::MultiViewSample& s = dataset.at(batch.members[i]);
    std::optional<double> ctx;
    if (!batch.context.empty()) ctx = batch.context[i];
    SampleForward f = forward_sample(tape, model, s, ctx);
    for (std::size_t l = 0; l < depth; ++l) {
      causal[l].push_back(f.causal[l]);
      trivial[l].push_back(f.trivial[l]);
      tr.C(i, l) = f.causal[l].item();
      tr.T(i, l) = f.trivial[l].item();
      tr.gate_weights[l].push_back(std::move(f.gate_weights[l]));
      tr.trivial_gate_weights[l].push_back(std::move(f.trivial_gate_weights[l]));
      tr.alphas[l].push_back(std::move(f.alphas[l]));
      if (ctx) tr.context_alpha[l].push_back(std::move(f.context_alpha[l]));
    }
    g.causal_views.push_back(std::move(f.causal_views));
    tr.sample_ids.push_back(s.id);
  }

  for (std::size_t l = 0; l < depth; ++l) {
    g.causal_cols.push_back(ad::concat(causal[l], ad::Axis::kRows));
    g.trivial_cols.push_back(ad::concat(trivial[l], ad::Axis::kRows));
  }
  g.y_c_star = g.causal_cols.back();
  g.t_sum = g.trivial_cols.front();
  for (std::size_t l = 1; l < depth; ++l) g.t_sum = ad::add(g.t_sum, g.trivial_cols[l]);

  tr.y_c_star.resize(bsz);
  tr.t_sum.resize(bsz);
  for (std::size_t i = 0; i < bsz; ++i) {
    tr.y_c_star[i] = tr.C(i, depth - 1);
    tr.t_sum[i] = g.t_sum.value()(i, 0);
  }
  return g;
}

SaliencyMap extract_saliency(const PeelTrace& trace, const std::vector<std::string>& views,
                             std::size_t position, std::size_t layer) {
  if (layer < 1 || layer > trace.depth()) {
    throw Error("saliency layer " + std::to_string(layer) + " outside [1, " +
                std::to_string(trace.depth()) + "]");
  }
  if (position >= trace.batch_size()) throw Error("sample position outside the traced batch");
  SaliencyMap m;
  m.sample_id = trace.sample_ids.at(position);
  m.layer = layer;
  const auto& per_view = trace.alphas[layer - 1][position];
  for (std::size_t v = 0; v < views.size(); ++v) m.scores[views[v]] = per_view.at(v);
  return m;
}

}  // namespace clap::peeling
