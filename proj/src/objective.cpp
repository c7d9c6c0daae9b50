#include "clap/objective.hpp"

#include <charconv>
#include <cmath>

#include "clap/error.hpp"

namespace clap::objective {

using ad::Var;

void ObjectiveConfig::validate() const {
  if (rho_min < -1.0 || rho_min > 1.0) throw ConfigError("rho_min", "must lie in [-1, 1]");
  if (rho_max < -1.0 || rho_max > 1.0) throw ConfigError("rho_max", "must lie in [-1, 1]");
  if (rho_min > rho_max) throw ConfigError("rho_min", "must not exceed rho_max");
  if (margin < 0.0) throw ConfigError("margin", "must be non-negative");
  if (!(eps > 0.0)) throw ConfigError("eps", "must be positive");
  if (lambda_caus < 0.0) throw ConfigError("lambda_caus", "must be non-negative");
  if (lambda_mono < 0.0) throw ConfigError("lambda_mono", "must be non-negative");
  if (lambda_unif < 0.0) throw ConfigError("lambda_unif", "must be non-negative");
  if (lambda_cons < 0.0) throw ConfigError("lambda_cons", "must be non-negative");
}

Weights effective_weights(const ObjectiveConfig& c) {
  Weights w{c.lambda_caus, c.lambda_mono, c.lambda_unif, c.lambda_cons};
  if (c.disable_split) w = Weights{};
  if (c.disable_schedule) w.caus = 0.0;
  if (c.disable_trivial) w.unif = 0.0;
  if (c.disable_mono) w.mono = 0.0;
  return w;
}

double pearson(std::span<const double> c, std::span<const double> y, double eps) {
  if (c.size() != y.size()) throw ShapeError("pearson: length mismatch");
  if (c.size() < 2) throw Error("pearson needs at least 2 samples");
  const double n = static_cast<double>(c.size());
  double mc = 0.0, my = 0.0;
  for (std::size_t i = 0; i < c.size(); ++i) {
    mc += c[i];
    my += y[i];
  }
  mc /= n;
  my /= n;
  double num = 0.0, sc = 0.0, sy = 0.0;
  for (std::size_t i = 0; i < c.size(); ++i) {
    const double a = c[i] - mc;
    const double b = y[i] - my;
    num += a * b;
    sc += a * a;
    sy += b * b;
  }
  return num / (std::sqrt(sc) * std::sqrt(sy) + eps);
}

Var pearson_batch(Var c, Var y, double eps) {
  if (c.cols() != 1 || y.cols() != 1 || c.rows() != y.rows()) {
    throw ShapeError("pearson_batch expects two B×1 columns");
  }
  if (c.rows() < 2) throw Error("pearson_batch needs B >= 2");
  Var cc = ad::sub(c, ad::mean(c));
  Var yc = ad::sub(y, ad::mean(y));
  Var num = ad::sum(ad::mul(cc, yc));
  Var den = ad::mul(ad::sqrt(ad::sum(ad::square(cc))), ad::sqrt(ad::sum(ad::square(yc))));
  return ad::div(num, den, eps);
}

namespace {

// With binary endpoints such as 0.8 the interpolant can land one ulp off the
// decimal target (0.725 becomes 0.7250000000000001); rounding to 15
// significant digits restores the decimal value.
double round_to_15_digits(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::general, 15);
  double out = v;
  std::from_chars(buf, res.ptr, out);
  return out;
}

}  // namespace

double rho_schedule(std::size_t layer, std::size_t depth, double rho_min, double rho_max) {
  if (depth < 1 || layer < 1 || layer > depth) throw Error("rho_schedule: layer outside [1, depth]");
  if (depth == 1 || layer == depth || rho_min == rho_max) return rho_max;
  if (layer == 1) return rho_min;
  const double t = static_cast<double>(layer - 1) / static_cast<double>(depth - 1);
  return round_to_15_digits(rho_min + t * (rho_max - rho_min));
}

std::vector<double> rho_targets(std::size_t depth, double rho_min, double rho_max) {
  std::vector<double> out;
  for (std::size_t l = 1; l <= depth; ++l) out.push_back(rho_schedule(l, depth, rho_min, rho_max));
  return out;
}

CorrLoss corr_loss(std::span<const Var> causal_cols, Var y, std::span<const double> targets, double eps) {
  if (causal_cols.size() != targets.size() || causal_cols.empty()) {
    throw ShapeError("corr_loss: one target per layer required");
  }
  CorrLoss out;
  Var acc;
  for (std::size_t l = 0; l < causal_cols.size(); ++l) {
    Var r = pearson_batch(causal_cols[l], y, eps);
    out.corrs.push_back(r);
    Var dev = ad::square(ad::add_scalar(r, -targets[l]));
    acc = l == 0 ? dev : ad::add(acc, dev);
  }
  out.loss = ad::scale(acc, 1.0 / static_cast<double>(causal_cols.size()));
  return out;
}

Var mono_loss(std::span<const Var> corrs, double margin) {
  if (corrs.empty()) throw ShapeError("mono_loss needs at least one layer");
  ad::Tape& tape = *corrs[0].tape;
  if (corrs.size() < 2) return tape.constant(0.0);
  Var acc;
  for (std::size_t l = 0; l + 1 < corrs.size(); ++l) {
    Var h = ad::maximum(ad::add_scalar(ad::sub(corrs[l], corrs[l + 1]), margin), 0.0);
    acc = l == 0 ? h : ad::add(acc, h);
  }
  return ad::scale(acc, 1.0 / static_cast<double>(corrs.size() - 1));
}

Var mse(Var prediction, Var target) { return ad::mean(ad::square(ad::sub(prediction, target))); }

Var triv_loss(Var t_sum, Var y, Var y_c_star) {
  return mse(t_sum, ad::sub(y, ad::stop_gradient(y_c_star)));
}

Var consistency_loss(ad::Tape& tape, std::span<const Var> per_view, double eps) {
  if (per_view.size() < 2) return tape.constant(0.0);
  Var acc;
  std::size_t pairs = 0;
  for (std::size_t a = 0; a < per_view.size(); ++a) {
    for (std::size_t b = a + 1; b < per_view.size(); ++b) {
      Var dot = ad::sum(ad::mul(per_view[a], per_view[b]));
      Var norms = ad::mul(ad::sqrt(ad::sum(ad::square(per_view[a]))), ad::sqrt(ad::sum(ad::square(per_view[b]))));
      Var gap = ad::add_scalar(ad::scale(ad::div(dot, norms, eps), -1.0), 1.0);
      acc = pairs == 0 ? gap : ad::add(acc, gap);
      ++pairs;
    }
  }
  return ad::scale(acc, 1.0 / static_cast<double>(pairs));
}

namespace {

Var causal_readout(const peeling::PeelGraph& g, const ObjectiveConfig& cfg) {
  if (!cfg.average_causal) return g.y_c_star;
  Var acc = g.causal_cols.front();
  for (std::size_t l = 1; l < g.causal_cols.size(); ++l) acc = ad::add(acc, g.causal_cols[l]);
  return ad::scale(acc, 1.0 / static_cast<double>(g.causal_cols.size()));
}

}  // namespace

TotalLoss total_loss(ad::Tape& tape, const peeling::PeelGraph& g, std::span<const double> y,
                     const ObjectiveConfig& cfg) {
  cfg.validate();
  const std::size_t bsz = g.trace.batch_size();
  if (y.size() != bsz) throw ShapeError("total_loss: label count does not match batch");
  const std::size_t depth = g.causal_cols.size();
  const Weights w = effective_weights(cfg);

  TotalLoss out;
  LossBreakdown& bd = out.breakdown;
  Var yv = tape.constant(Tensor::column(y));
  out.y_c_star = causal_readout(g, cfg);
  out.prediction = cfg.disable_trivial ? out.y_c_star : ad::add(out.y_c_star, g.t_sum);

  Var pred = mse(out.prediction, yv);
  bd.pred = pred.item();
  bd.targets = rho_targets(depth, cfg.rho_min, cfg.rho_max);
  CorrLoss cl = corr_loss(g.causal_cols, yv, bd.targets, cfg.eps);
  for (const Var& r : cl.corrs) bd.layer_corr.push_back(r.item());

  Var total = pred;
  if (w.caus > 0.0) {
    bd.corr = cl.loss.item();
    total = ad::add(total, ad::scale(cl.loss, w.caus));
  }
  if (w.mono > 0.0) {
    Var m = mono_loss(cl.corrs, cfg.margin);
    bd.mono = m.item();
    total = ad::add(total, ad::scale(m, w.mono));
  }
  if (w.unif > 0.0) {
    Var t = triv_loss(g.t_sum, yv, out.y_c_star);
    bd.triv = t.item();
    total = ad::add(total, ad::scale(t, w.unif));
  }
  if (w.cons > 0.0 && !g.causal_views.empty()) {
    Var acc;
    std::size_t terms = 0;
    for (const auto& per_sample : g.causal_views) {
      for (const auto& per_layer : per_sample) {
        Var c = consistency_loss(tape, per_layer, cfg.eps);
        acc = terms == 0 ? c : ad::add(acc, c);
        ++terms;
      }
    }
    Var cons = ad::scale(acc, 1.0 / static_cast<double>(terms));
    bd.cons = cons.item();
    total = ad::add(total, ad::scale(cons, w.cons));
  }
  out.total = total;
  bd.total = total.item();
  return out;
}

std::vector<double> predict(const peeling::PeelTrace& trace, const ObjectiveConfig& cfg) {
  const std::size_t bsz = trace.batch_size();
  const std::size_t depth = trace.depth();
  std::vector<double> out(bsz);
  for (std::size_t i = 0; i < bsz; ++i) {
    double yc = trace.C(i, depth - 1);
    if (cfg.average_causal) {
      // Same summation order as the tape readout.
      double acc = trace.C(i, 0);
      for (std::size_t l = 1; l < depth; ++l) acc += trace.C(i, l);
      yc = acc * (1.0 / static_cast<double>(depth));
    }
    out[i] = cfg.disable_trivial ? yc : yc + trace.t_sum[i];
  }
  return out;
}

}  // namespace clap::objective
