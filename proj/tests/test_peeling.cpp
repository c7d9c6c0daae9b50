#include <cmath>
#include <string>

#include "clap/error.hpp"
#include "clap/peeling.hpp"
#include "doctest.h"
#include "fixtures.hpp"

using namespace clap;
using namespace clap::peeling;
using ad::Var;

namespace {

void zero_params(Model& m, const std::string& needle) {
  auto& ps = m.params();
  for (std::size_t i = 0; i < ps.size(); ++i)
    if (ps.name(i).find(needle) != std::string::npos) ps.value(i).fill(0.0);
}

}  // namespace

TEST_SUITE("peeling") {

TEST_CASE("zero splitter logits: alpha one half, causal and trivial pools coincide") {
  ad::Tape t;
  Tensor emb = Tensor::matrix({{1, 2}, {3, -1}, {0, 4}});
  SplitResult s = split(t.constant(emb), t.constant(Tensor(2, 1)), t.constant(Tensor(1, 1)), 1e-12);
  for (double a : s.alpha.value().data()) CHECK(a == 0.5);
  CHECK(s.causal.value()(0, 0) == doctest::Approx(4.0 / 3.0));
  CHECK(s.causal.value()(0, 1) == doctest::Approx(5.0 / 3.0));
  CHECK(s.causal.value() == s.trivial.value());
}

TEST_CASE("saturated splitter separates motif and non-motif means") {
  ad::Tape t;
  // Column 0 tags the motif (rows 0 and 2); the splitter reads only it.
  Tensor emb = Tensor::matrix({{1, 2}, {0, -1}, {1, 4}, {0, 5}});
  SplitResult s = split(t.constant(emb), t.constant(Tensor::column({100.0, 0.0})),
                        t.constant(Tensor::scalar(-50.0)), 1e-12);
  CHECK(s.causal.value()(0, 1) == doctest::Approx(3.0).epsilon(1e-9));
  CHECK(s.trivial.value()(0, 1) == doctest::Approx(2.0).epsilon(1e-9));
  for (std::size_t i = 0; i < 4; ++i) {
    const double a = s.alpha.value()[i];
    CHECK(a + (1.0 - a) == 1.0);
  }
}

TEST_CASE("fusion: single view, symmetric views, low temperature") {
  ad::Tape t;
  Var z = t.constant(Tensor::row({1.0, -2.0}));
  FuseResult one = fuse(std::vector<Var>{z}, t.constant(Tensor(2, 1)), t.constant(Tensor(1, 1)), 1.0);
  CHECK(one.weights.value()[0] == 1.0);
  CHECK(one.fused.value() == z.value());

  FuseResult two = fuse(std::vector<Var>{z, z}, t.constant(Tensor(4, 2)), t.constant(Tensor(1, 2)), 1.0);
  CHECK(two.weights.value()[0] == 0.5);
  CHECK(two.fused.value() == z.value());

  Var a = t.constant(Tensor::row({1.0, 0.0}));
  Var b = t.constant(Tensor::row({0.0, 1.0}));
  // Logits [0.2, 0.1] from the bias alone: argmax is view 0.
  FuseResult cold = fuse(std::vector<Var>{a, b}, t.constant(Tensor(4, 2)), t.constant(Tensor::row({0.2, 0.1})), 1e-3);
  CHECK(cold.weights.value()[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(cold.fused.value()(0, 0) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("trace shapes and readout identities") {
  Model m(fixtures::small_model(3));
  auto d = fixtures::small_data(8);
  ad::Tape t(m.params());
  PeelGraph g = forward_stack(t, m, d, fixtures::whole_batch(d, 1.0));
  const PeelTrace& tr = g.trace;
  CHECK(tr.C.shape() == Tensor::Shape{8, 3});
  CHECK(tr.T.shape() == Tensor::Shape{8, 3});
  for (std::size_t i = 0; i < 8; ++i) {
    CHECK(tr.y_c_star[i] == tr.C(i, 2));
    CHECK(tr.t_sum[i] == tr.T(i, 0) + tr.T(i, 1) + tr.T(i, 2));
  }
  for (std::size_t l = 0; l < 3; ++l) {
    for (std::size_t i = 0; i < 8; ++i) {
      for (const auto* w : {&tr.gate_weights[l][i], &tr.trivial_gate_weights[l][i]}) {
        REQUIRE(w->size() == 2);
        CHECK(std::abs((*w)[0] + (*w)[1] - 1.0) <= 1e-9);
        CHECK((*w)[0] >= 0.0);
        CHECK((*w)[1] >= 0.0);
      }
      const auto& sample = d[i];
      for (std::size_t v = 0; v < 2; ++v) {
        CHECK(tr.alphas[l][i][v].size() == sample.views.begin()->second.num_nodes());
        for (double a : tr.alphas[l][i][v]) {
          CHECK(a >= 0.0);
          CHECK(a <= 1.0);
        }
      }
      CHECK(tr.context_alpha[l][i].size() == 2);
    }
  }
}

TEST_CASE("depth one: prediction is c + t") {
  Model m(fixtures::small_model(1));
  auto d = fixtures::small_data(4);
  ad::Tape t(m.params());
  PeelGraph g = forward_stack(t, m, d, fixtures::whole_batch(d));
  CHECK(g.trace.C.cols() == 1);
  for (std::size_t i = 0; i < 4; ++i) CHECK(g.trace.t_sum[i] == g.trace.T(i, 0));
  CHECK_FALSE(m.blocks()[0].forward_w.has_value());
}

TEST_CASE("zeroed trivial heads give a zero trivial sum") {
  Model m(fixtures::small_model(3));
  zero_params(m, "trivial_head");
  auto d = fixtures::small_data(5);
  ad::Tape t(m.params());
  PeelGraph g = forward_stack(t, m, d, fixtures::whole_batch(d));
  for (double v : g.trace.t_sum) CHECK(v == 0.0);
}

TEST_CASE("forward pass of a sample does not depend on its batch mates") {
  Model m(fixtures::small_model(3));
  auto d = fixtures::small_data(8);
  graphs::Batch a{.batch_id = 0, .members = {0, 1, 2}, .context = {0.4, -0.2, 1.0}};
  graphs::Batch b{.batch_id = 1, .members = {5, 0}, .context = {0.0, 0.4}};
  ad::Tape t(m.params());
  PeelTrace ta = forward_stack(t, m, d, a).trace;
  PeelTrace tb = forward_stack(t, m, d, b).trace;
  for (std::size_t l = 0; l < 3; ++l) {
    CHECK(ta.C(0, l) == tb.C(1, l));
    CHECK(ta.T(0, l) == tb.T(1, l));
  }
}

TEST_CASE("forward is deterministic for a fixed seed") {
  auto d = fixtures::small_data(6);
  auto run = [&] {
    Model m(fixtures::small_model(2, 9));
    ad::Tape t(m.params());
    return forward_stack(t, m, d, fixtures::whole_batch(d, 1.0)).trace.C;
  };
  CHECK(run() == run());
}

TEST_CASE("batch of one is rejected") {
  Model m(fixtures::small_model(2));
  auto d = fixtures::small_data(4);
  ad::Tape t(m.params());
  CHECK_THROWS_AS(forward_stack(t, m, d, graphs::Batch{.members = {0}}), Error);
}

TEST_CASE("saliency: zero splitter reads one half; out-of-range layer is an error") {
  Model m(fixtures::small_model(3));
  zero_params(m, ".split.");
  auto d = fixtures::small_data(4);
  ad::Tape t(m.params());
  PeelTrace tr = forward_stack(t, m, d, fixtures::whole_batch(d)).trace;
  SaliencyMap s = extract_saliency(tr, m.config().views, 1, 3);
  CHECK(s.sample_id == d[1].id);
  CHECK(s.layer == 3);
  CHECK(s.scores.size() == 2);
  for (const auto& [view, scores] : s.scores)
    for (double p : scores) CHECK(p == 0.5);
  CHECK_THROWS_AS(extract_saliency(tr, m.config().views, 0, 0), Error);
  CHECK_THROWS_AS(extract_saliency(tr, m.config().views, 0, 4), Error);
}

TEST_CASE("causal-only parameters are named causal gates and heads") {
  Model m(fixtures::small_model(3));
  auto ids = m.causal_only_params();
  CHECK(ids.size() == 12);
  for (auto i : ids) {
    const std::string& n = m.params().name(i);
    CHECK((n.find(".gate.") != std::string::npos || n.find(".causal_head.") != std::string::npos));
  }
}

}
