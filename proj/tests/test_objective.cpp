#include <cmath>
#include <vector>

#include "clap/error.hpp"
#include "clap/objective.hpp"
#include "clap/rng.hpp"
#include "doctest.h"
#include "fixtures.hpp"

using namespace clap;
using namespace clap::objective;
using ad::Var;

namespace {

std::vector<double> labels(const graphs::Dataset& d) {
  std::vector<double> y;
  for (const auto& s : d) y.push_back(s.y);
  return y;
}

double corr_of(ad::Tape& t, std::vector<double> c, std::vector<double> y, double eps) {
  return pearson_batch(t.constant(Tensor::column(c)), t.constant(Tensor::column(y)), eps).item();
}

}  // namespace

TEST_SUITE("objective") {

TEST_CASE("pearson basics") {
  ad::Tape t;
  const double self = corr_of(t, {1, 2, 3}, {1, 2, 3}, 1e-8);
  CHECK(self < 1.0);
  CHECK(self == doctest::Approx(1.0).epsilon(1e-7));
  CHECK(corr_of(t, {1, 2, 3}, {3, 2, 1}, 1e-8) == doctest::Approx(-1.0).epsilon(1e-7));
  CHECK(corr_of(t, {1, 1, 1}, {0.3, -2, 5}, 1e-8) == 0.0);
  CHECK(pearson(std::vector<double>{1, 2, 3}, std::vector<double>{1, 2, 3}, 1e-8) == self);
  CHECK_THROWS_AS(corr_of(t, {1}, {1}, 1e-8), Error);
}

TEST_CASE("pearson matches the textbook formula and is affine invariant") {
  Rng rng(3);
  std::vector<double> c(12), y(12), c2(12);
  for (std::size_t i = 0; i < 12; ++i) {
    c[i] = rng.normal();
    y[i] = 0.5 * c[i] + rng.normal();
    c2[i] = 3.7 * c[i] - 11.0;
  }
  ad::Tape t;
  const double r = corr_of(t, c, y, 1e-8);
  CHECK(r == doctest::Approx(fixtures::pearson_ref(c, y)).epsilon(1e-7));
  CHECK(std::abs(corr_of(t, c2, y, 1e-8) - r) < 1e-6);
}

TEST_CASE("rho schedule") {
  const std::vector<double> expected = {0.5, 0.575, 0.65, 0.725, 0.8};
  CHECK(rho_targets(5, 0.5, 0.8) == expected);
  CHECK(rho_schedule(1, 7, -0.2, 0.9) == -0.2);
  CHECK(rho_schedule(7, 7, -0.2, 0.9) == 0.9);
  CHECK(rho_schedule(1, 1, 0.5, 0.8) == 0.8);
  for (std::size_t l = 1; l <= 4; ++l) CHECK(rho_schedule(l, 4, 0.6, 0.6) == 0.6);
  CHECK_THROWS(rho_schedule(0, 3, 0.5, 0.8));
  CHECK_THROWS(rho_schedule(4, 3, 0.5, 0.8));
}

TEST_CASE("corr loss hand values") {
  ad::Tape t;
  // Two constant columns have zero correlation with anything.
  Var c = t.constant(Tensor(4, 1, 2.0));
  Var y = t.constant(Tensor::column({1, 2, 3, 5}));
  std::vector<Var> cols = {c, c};
  std::vector<double> targets = {0.5, 0.8};
  CHECK(corr_loss(cols, y, targets, 1e-8).loss.item() == doctest::Approx(0.445).epsilon(1e-15));
  // Targets met exactly.
  Var same = t.constant(Tensor::column({1, 2, 3, 5}));
  const double r = pearson_batch(same, y, 1e-8).item();
  std::vector<Var> one = {same};
  std::vector<double> met = {r};
  CHECK(corr_loss(one, y, met, 1e-8).loss.item() == 0.0);
}

TEST_CASE("mono loss hand values") {
  ad::Tape t;
  auto mono = [&](std::vector<double> corrs, double margin) {
    std::vector<Var> v;
    for (double c : corrs) v.push_back(t.constant(c));
    return mono_loss(v, margin).item();
  };
  CHECK(mono({0.5, 0.3}, 0.1) == doctest::Approx(0.3).epsilon(1e-15));
  CHECK(mono({0.3, 0.5}, 0.1) == 0.0);
  CHECK(mono({0.1, 0.2, 0.2, 0.9}, 0.0) == 0.0);
  CHECK(mono({0.7}, 0.5) == 0.0);
  // (max(0, 0.6-0.2) + max(0, 0.2-0.5)) / 2
  CHECK(mono({0.6, 0.2, 0.5}, 0.0) == doctest::Approx(0.2));
}

TEST_CASE("triv loss hand value") {
  ad::Tape t;
  Var l = triv_loss(t.constant(-0.01), t.constant(-0.80), t.constant(-0.78));
  CHECK(l.item() == doctest::Approx(1e-4).epsilon(1e-9));
  Var zero = triv_loss(t.constant(Tensor::column({0.5, -1})), t.constant(Tensor::column({1.5, 1})),
                       t.constant(Tensor::column({1, 2})));
  CHECK(zero.item() == 0.0);
}

TEST_CASE("prediction adds the trivial correction to the causal readout") {
  peeling::PeelTrace tr;
  tr.C = Tensor::matrix({{0.1, -0.78}, {0.0, 0.0}});
  tr.T = Tensor::matrix({{-0.004, -0.006}, {0.0, 0.0}});
  tr.t_sum = {-0.01, 0.0};
  ObjectiveConfig cfg;
  CHECK(predict(tr, cfg)[0] == doctest::Approx(-0.79).epsilon(1e-12));
  cfg.disable_trivial = true;
  CHECK(predict(tr, cfg)[0] == -0.78);
  cfg.average_causal = true;
  CHECK(predict(tr, cfg)[0] == doctest::Approx(-0.34).epsilon(1e-12));
}

TEST_CASE("consistency loss") {
  ad::Tape t;
  Var a = t.constant(Tensor::row({1, 2, 3}));
  Var b = t.constant(Tensor::row({-2, 1, 0}));
  CHECK(std::abs(consistency_loss(t, std::vector<Var>{a, a}, 1e-12).item()) < 1e-12);
  CHECK(consistency_loss(t, std::vector<Var>{a, b}, 1e-12).item() == doctest::Approx(1.0));
  CHECK(consistency_loss(t, std::vector<Var>{a}, 1e-12).item() == 0.0);
}

TEST_CASE("default weights") {
  ObjectiveConfig cfg;
  CHECK(cfg.lambda_caus == 1.0);
  CHECK(cfg.lambda_mono == 0.5);
  CHECK(cfg.lambda_unif == 1.0);
  CHECK(cfg.lambda_cons == 0.0);
  CHECK(cfg.rho_min == 0.5);
  CHECK(cfg.rho_max == 0.8);
}

TEST_CASE("config validation names the field") {
  ObjectiveConfig cfg;
  cfg.rho_min = 0.9;
  try {
    cfg.validate();
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(e.field() == "rho_min");
  }
  cfg = {};
  cfg.lambda_mono = -1;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("breakdown is additive bitwise and ablations zero their terms") {
  peeling::Model m(fixtures::small_model(3));
  auto d = fixtures::small_data(8);
  auto y = labels(d);
  ObjectiveConfig cfg;
  cfg.lambda_cons = 0.3;
  cfg.margin = 0.05;
  ad::Tape t(m.params());
  auto g = peeling::forward_stack(t, m, d, fixtures::whole_batch(d, 1.0));
  LossBreakdown b = total_loss(t, g, y, cfg).breakdown;
  CHECK(b.total == b.pred + cfg.lambda_caus * b.corr + cfg.lambda_mono * b.mono + cfg.lambda_unif * b.triv +
                       cfg.lambda_cons * b.cons);
  CHECK(b.layer_corr.size() == 3);
  CHECK(b.targets == std::vector<double>{0.5, 0.65, 0.8});
  for (std::size_t l = 0; l < 3; ++l) {
    std::vector<double> col;
    for (std::size_t i = 0; i < 8; ++i) col.push_back(g.trace.C(i, l));
    // Reference with the additive stabilizer written out.
    const double n = 8.0;
    double mc = 0, my = 0;
    for (std::size_t i = 0; i < 8; ++i) {
      mc += col[i] / n;
      my += y[i] / n;
    }
    double num = 0, sc = 0, sy = 0;
    for (std::size_t i = 0; i < 8; ++i) {
      num += (col[i] - mc) * (y[i] - my);
      sc += (col[i] - mc) * (col[i] - mc);
      sy += (y[i] - my) * (y[i] - my);
    }
    CHECK(b.layer_corr[l] == doctest::Approx(num / (std::sqrt(sc) * std::sqrt(sy) + cfg.eps)).epsilon(1e-10));
  }
  // Prediction loss from the numeric prediction rule.
  auto yhat = predict(g.trace, cfg);
  double mse = 0;
  for (std::size_t i = 0; i < 8; ++i) mse += (yhat[i] - y[i]) * (yhat[i] - y[i]);
  CHECK(b.pred == doctest::Approx(mse / 8).epsilon(1e-12));

  ObjectiveConfig off;
  off.disable_split = true;
  LossBreakdown nb = total_loss(t, g, y, off).breakdown;
  CHECK(nb.total == nb.pred);
  CHECK(nb.corr == 0.0);
  CHECK(nb.triv == 0.0);
  ObjectiveConfig zero;
  zero.lambda_caus = zero.lambda_mono = zero.lambda_unif = 0.0;
  CHECK(total_loss(t, g, y, zero).breakdown.total == nb.pred);
  ObjectiveConfig nt;
  nt.disable_trivial = true;
  LossBreakdown tb = total_loss(t, g, y, nt).breakdown;
  CHECK(tb.triv == 0.0);
  CHECK(tb.corr > 0.0);
}

TEST_CASE("perfect fit with targets met gives zero total") {
  // Two layers; both causal columns equal y so the correlations are the
  // (epsilon-shrunk) self correlation, used as the targets.
  ad::Tape t;
  const std::vector<double> y = {0.3, -1.0, 2.0, 0.5};
  peeling::PeelGraph g;
  Var yc = t.constant(Tensor::column(y));
  g.causal_cols = {yc, yc};
  g.trivial_cols = {t.constant(Tensor(4, 1)), t.constant(Tensor(4, 1))};
  g.y_c_star = yc;
  g.t_sum = t.constant(Tensor(4, 1));
  g.trace.C = Tensor(4, 2);
  ObjectiveConfig cfg;
  const double r = pearson_batch(yc, yc, cfg.eps).item();
  cfg.rho_min = cfg.rho_max = r;
  LossBreakdown b = total_loss(t, g, y, cfg).breakdown;
  CHECK(b.total == 0.0);
}

TEST_CASE("trivial loss never reaches the causal readout") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    peeling::Model m(fixtures::small_model(3, seed));
    auto d = fixtures::small_data(8, seed + 10);
    auto y = labels(d);
    ad::Tape t(m.params());
    auto g = peeling::forward_stack(t, m, d, fixtures::whole_batch(d, 1.0));
    Var yv = t.constant(Tensor::column(y));
    ad::GradientMap grads = t.backward(triv_loss(g.t_sum, yv, g.y_c_star));
    for (auto i : m.causal_only_params()) {
      for (double v : grads[i].data()) CHECK(v == 0.0);
    }
    // Same gradients as a loss whose readout is a plain constant.
    Var detached = t.constant(g.y_c_star.value());
    ad::GradientMap ref = t.backward(mse(g.t_sum, ad::sub(yv, detached)));
    for (std::size_t p = 0; p < grads.size(); ++p) CHECK(grads[p] == ref[p]);
  }
}

TEST_CASE("full objective gradient matches finite differences") {
  peeling::Model m(fixtures::small_model(3, 4));
  auto d = fixtures::small_data(8, 5);
  auto y = labels(d);
  auto batch = fixtures::whole_batch(d, 1.0);
  ObjectiveConfig cfg;
  cfg.lambda_cons = 0.2;
  ad::ScalarFn f = [&](ad::Tape& t) {
    auto g = peeling::forward_stack(t, m, d, batch);
    return total_loss(t, g, y, cfg).total;
  };
  ad::GradCheckResult r = ad::grad_check(f, m.params(), {.eps = 1e-6, .max_coords = 150, .seed = 1});
  CHECK(r.coords_checked == 150);
  if (!r.non_differentiable) CHECK(r.max_rel_err < 1e-4);
}

TEST_CASE("corr loss gradient matches finite differences") {
  Rng rng(12);
  ad::ParameterSet ps;
  Tensor c(8, 3);
  for (auto& v : c.data()) v = rng.normal();
  ps.add("C", c);
  Tensor y(8, 1);
  for (auto& v : y.data()) v = rng.normal();
  ad::ScalarFn f = [&](ad::Tape& t) {
    Var all = t.param(0);
    std::vector<Var> cols;
    for (std::size_t l = 0; l < 3; ++l) {
      Tensor sel(3, 1);
      sel[l] = 1.0;
      cols.push_back(ad::matmul(all, t.constant(sel)));
    }
    return corr_loss(cols, t.constant(y), std::vector<double>{0.5, 0.65, 0.8}, 1e-8).loss;
  };
  CHECK(ad::grad_check(f, ps, {.eps = 1e-6}).max_rel_err < 1e-4);
}

}
