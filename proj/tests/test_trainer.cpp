#include <cmath>
#include <cstdio>
#include <filesystem>

#include <doctest.h>

#include "clap/error.hpp"
#include "clap/trainer.hpp"
#include "fixtures.hpp"

using namespace clap;
using namespace clap::trainer;

namespace {

TrainConfig quick_config(std::size_t epochs = 4) {
  TrainConfig c;
  c.epochs = epochs;
  c.batch_size = 8;
  c.seed = 5;
  c.model = fixtures::small_model(3, 3);
  return c;
}

}  // namespace

TEST_SUITE("trainer") {
  TEST_CASE("score on hand-computed examples") {
    auto m = score({0.5, 0.5}, {0.0, 1.0});
    CHECK(m.mae == doctest::Approx(0.5));
    CHECK(m.mse == doctest::Approx(0.25));
    CHECK(std::abs(m.r2) < 1e-15);

    m = score({1.0, 2.0, 4.0}, {1.0, 2.0, 4.0});
    CHECK(m.mae == 0.0);
    CHECK(m.mse == 0.0);
    CHECK(m.r2 == 1.0);

    CHECK_THROWS(score({1.0, 2.0}, {3.0, 3.0}));
  }

  TEST_CASE("R2 equals one minus MSE over label variance") {
    const std::vector<double> y = {0.3, -1.2, 2.5, 0.7, 1.1, -0.4};
    const std::vector<double> p = {0.1, -0.9, 2.0, 1.0, 0.8, 0.2};
    double mean = 0, var = 0;
    for (double v : y) mean += v / y.size();
    for (double v : y) var += (v - mean) * (v - mean) / y.size();
    const auto m = score(p, y);
    CHECK(std::abs(m.r2 - (1.0 - m.mse / var)) < 1e-12);
  }

  TEST_CASE("config validation") {
    auto c = quick_config();
    c.epochs = 0;
    CHECK_THROWS(c.validate());
    c = quick_config();
    c.batch_size = 1;
    CHECK_THROWS(c.validate());
    CHECK(parse_optimizer("gd") == Optimizer::kGradientDescent);
    CHECK_THROWS(parse_optimizer("sgdm"));
  }

  TEST_CASE("validation split is seeded and disjoint") {
    const auto d = fixtures::small_data(40, 4);
    const auto a = split_validation(d, 0.15, 9);
    const auto b = split_validation(d, 0.15, 9);
    CHECK(a.train.size() + a.val.size() == d.size());
    CHECK(a.val.size() >= 2);
    REQUIRE(a.val.size() == b.val.size());
    for (std::size_t i = 0; i < a.val.size(); ++i) CHECK(a.val[i].id == b.val[i].id);
    for (const auto& v : a.val)
      for (const auto& t : a.train) CHECK(v.id != t.id);
  }

  TEST_CASE("fixed seed gives an identical history") {
    const auto d = fixtures::small_data(40, 4);
    const auto s = split_validation(d, 0.2, 1);
    const auto c = quick_config();
    const auto r1 = train(s.train, s.val, c);
    const auto r2 = train(s.train, s.val, c);
    CHECK(to_json(r1.history).dump() == to_json(r2.history).dump());
    for (std::size_t i = 0; i < r1.model.params().size(); ++i)
      CHECK(r1.model.params().value(i) == r2.model.params().value(i));
  }

  TEST_CASE("best epoch has the minimum validation MSE and is restored") {
    const auto d = fixtures::small_data(40, 6);
    const auto s = split_validation(d, 0.25, 2);
    auto c = quick_config(12);
    c.patience = 3;
    c.learning_rate = 2e-2;
    const auto r = train(s.train, s.val, c);
    const auto& h = r.history;
    REQUIRE_FALSE(h.epochs.empty());
    double best = h.epochs.front().val.mse;
    for (const auto& e : h.epochs) best = std::min(best, e.val.mse);
    CHECK(h.best_val_mse == best);
    CHECK(h.epochs.at(h.best_epoch - 1).val.mse == best);
    const auto ev = evaluate_batches(r.model, s.val,
                                     graphs::assemble_batches(s.val, {.batch_size = c.batch_size,
                                                                      .shuffle = false,
                                                                      .seed = derive_seed(c.seed, 0xEA1),
                                                                      .context_strength = c.context_strength}),
                                     c.objective);
    CHECK(ev.metrics.mse <= best + 1e-12);
  }

  TEST_CASE("noiseless planted target is recovered") {
    graphs::SynthScenario sc;
    sc.feature_dim = 4;
    sc.min_nodes = 5;
    sc.max_nodes = 8;
    sc.motif_size = 2;
    sc.noise_sd = 0.0;
    sc.context_strength = 0.0;
    sc.seed = 11;
    const auto d = graphs::generate_synthetic(sc, 80);
    TrainConfig c;
    c.epochs = 200;
    c.batch_size = 16;
    c.learning_rate = 1e-2;
    c.patience = 200;
    c.seed = 3;
    c.model = fixtures::small_model(2, 4);
    c.model.encoder.hidden = 16;
    c.model.encoder.embed_dim = 8;
    // Training fit is the quantity of interest, so the training set also
    // drives checkpoint selection.
    const auto r = train(d, d, c);
    const auto ev = evaluate(r.model, d, 16, c.objective);
    CAPTURE(ev.metrics.mse);
    CHECK(ev.metrics.mse < 1e-2);
  }

  TEST_CASE("evaluate rejects overlapping batches") {
    const auto d = fixtures::small_data(6, 1);
    const peeling::Model m(fixtures::small_model(2));
    auto batches = graphs::assemble_batches(d, {.batch_size = 3, .shuffle = false});
    batches.push_back(batches.front());
    CHECK_THROWS(evaluate_batches(m, d, batches, {}));
  }

  TEST_CASE("checkpoint round-trip reproduces predictions") {
    const auto d = fixtures::small_data(10, 2);
    const peeling::Model m(fixtures::small_model(3, 8));
    const auto path = (std::filesystem::temp_directory_path() / "clap_ckpt_test.json").string();
    save_checkpoint(m, path);
    const auto back = load_checkpoint(path);
    std::filesystem::remove(path);
    REQUIRE(back.params().size() == m.params().size());
    for (std::size_t i = 0; i < m.params().size(); ++i) CHECK(back.params().value(i) == m.params().value(i));
    CHECK(evaluate(back, d, 5, {}).predictions == evaluate(m, d, 5, {}).predictions);
    CHECK_THROWS(load_checkpoint(path));
  }

  TEST_CASE("singleton sweep yields one row") {
    const auto d = fixtures::small_data(36, 3);
    const auto s = split_validation(d, 0.2, 1);
    const auto rows = sweep(SweepAxis::kDepth, {2}, quick_config(2), s.train, s.val, s.val);
    REQUIRE(rows.size() == 1);
    CHECK(rows[0].value == 2.0);
    CHECK(rows[0].error.empty());
    CHECK(rows[0].test.has_value());
  }

  TEST_CASE("sweep rows come back sorted and record failures") {
    const auto d = fixtures::small_data(36, 3);
    const auto s = split_validation(d, 0.2, 1);
    const auto rows = sweep(SweepAxis::kRhoMax, {0.9, 1.5, 0.6}, quick_config(1), s.train, s.val, s.val);
    REQUIRE(rows.size() == 3);
    CHECK(rows[0].value == 0.6);
    CHECK(rows[1].value == 0.9);
    CHECK(rows[2].value == 1.5);
    CHECK_FALSE(rows[2].error.empty());
    CHECK_FALSE(rows[2].test.has_value());
  }

}
