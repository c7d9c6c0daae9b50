#include "clap/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "clap/error.hpp"
#include "clap/rng.hpp"

namespace clap::trainer {

using nlohmann::json;

std::string optimizer_name(Optimizer o) { return o == Optimizer::kAdam ? "adam" : "gd"; }

Optimizer parse_optimizer(const std::string& name) {
  if (name == "adam") return Optimizer::kAdam;
  if (name == "gd") return Optimizer::kGradientDescent;
  throw ConfigError("optimizer", "expected \"adam\" or \"gd\", got \"" + name + "\"");
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs", "must be at least 1");
  if (batch_size < 2) throw ConfigError("batch_size", "must be at least 2");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate", "must be positive");
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) throw ConfigError("val_fraction", "must lie in (0, 1)");
  if (clip_norm < 0.0) throw ConfigError("clip_norm", "must be non-negative");
  if (context_strength < 0.0) throw ConfigError("context_strength", "must be non-negative");
  if (context_strength > 0.0 && !model.encoder.context_channel) {
    throw ConfigError("context_channel", "context_strength > 0 needs the encoder context channel");
  }
  if (model.depth < 1) throw ConfigError("depth", "must be at least 1");
  if (!(model.temperature > 0.0)) throw ConfigError("temperature", "must be positive");
  if (model.views.empty()) throw ConfigError("views", "at least one view is required");
  objective.validate();
}

// ---------------------------------------------------------------------------
// Evaluation

Metrics score(const std::vector<double>& pred, const std::vector<double>& y) {
  if (pred.size() != y.size()) throw ShapeError("score: prediction/label length mismatch");
  if (y.size() < 2) throw Error("evaluation needs at least 2 samples");
  const double n = static_cast<double>(y.size());
  double mean = 0.0;
  for (double v : y) mean += v;
  mean /= n;
  double sse = 0.0, sae = 0.0, sst = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double r = pred[i] - y[i];
    sse += r * r;
    sae += std::abs(r);
    sst += (y[i] - mean) * (y[i] - mean);
  }
  if (sst == 0.0) throw Error("R^2 is undefined: labels have zero variance");
  Metrics m;
  m.mae = sae / n;
  m.mse = sse / n;
  m.r2 = 1.0 - sse / sst;
  return m;
}

Evaluation evaluate_batches(const peeling::Model& model, const graphs::Dataset& dataset,
                            const std::vector<graphs::Batch>& batches,
                            const objective::ObjectiveConfig& objective) {
  const std::size_t n = dataset.size();
  const std::size_t depth = model.depth();
  Evaluation ev;
  ev.predictions.assign(n, 0.0);
  ev.C = Tensor(n, depth);
  ev.T = Tensor(n, depth);
  std::vector<char> covered(n, 0);
  ad::Tape tape(model.params());
  for (const auto& b : batches) {
    tape.clear();
    peeling::PeelTrace tr = peeling::forward_stack(tape, model, dataset, b).trace;
    const std::vector<double> yhat = objective::predict(tr, objective);
    for (std::size_t k = 0; k < b.size(); ++k) {
      const std::size_t idx = b.members[k];
      if (covered[idx]) throw Error("evaluation batches overlap");
      covered[idx] = 1;
      ev.predictions[idx] = yhat[k];
      for (std::size_t l = 0; l < depth; ++l) {
        ev.C(idx, l) = tr.C(k, l);
        ev.T(idx, l) = tr.T(k, l);
      }
    }
    ev.traces.push_back(std::move(tr));
  }
  if (std::find(covered.begin(), covered.end(), 0) != covered.end()) {
    throw Error("evaluation batches do not cover the dataset");
  }
  ev.batches = batches;

  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = dataset[i].y;
  ev.metrics = score(ev.predictions, y);
  std::vector<double> col(n);
  for (std::size_t l = 0; l < depth; ++l) {
    for (std::size_t i = 0; i < n; ++i) col[i] = ev.C(i, l);
    ev.metrics.layer_corr.push_back(objective::pearson(col, y, objective.eps));
  }
  return ev;
}

Evaluation evaluate(const peeling::Model& model, const graphs::Dataset& dataset, std::size_t batch_size,
                    const objective::ObjectiveConfig& objective, double context_strength, std::uint64_t seed,
                    bool shuffle) {
  graphs::BatchingOptions opt;
  opt.batch_size = batch_size;
  opt.shuffle = shuffle;
  opt.seed = seed;
  opt.context_strength = context_strength;
  return evaluate_batches(model, dataset, graphs::assemble_batches(dataset, opt), objective);
}

// ---------------------------------------------------------------------------
// Training

Split split_validation(const graphs::Dataset& data, double val_fraction, std::uint64_t seed) {
  if (data.size() < 4) throw Error("need at least 4 samples to split off validation data");
  std::size_t n_val = static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(data.size())));
  n_val = std::clamp<std::size_t>(n_val, 2, data.size() - 2);
  Rng rng(derive_seed(seed, 0x5711));
  std::vector<std::size_t> order = rng.permutation(data.size());
  std::vector<std::size_t> val_idx(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::sort(val_idx.begin(), val_idx.end());
  Split s;
  std::size_t next = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (next < val_idx.size() && val_idx[next] == i) {
      s.val.push_back(data[i]);
      ++next;
    } else {
      s.train.push_back(data[i]);
    }
  }
  return s;
}

namespace {

class Updater {
 public:
  Updater(const TrainConfig& cfg, const ad::ParameterSet& ps) : cfg_(cfg) {
    for (std::size_t i = 0; i < ps.size(); ++i) {
      m_.emplace_back(ps.value(i).rows(), ps.value(i).cols());
      v_.emplace_back(ps.value(i).rows(), ps.value(i).cols());
    }
  }

  void step(ad::ParameterSet& ps, ad::GradientMap& grads) {
    if (cfg_.clip_norm > 0.0) {
      double norm2 = 0.0;
      for (const auto& g : grads)
        for (double x : g.data()) norm2 += x * x;
      const double norm = std::sqrt(norm2);
      if (norm > cfg_.clip_norm) {
        const double s = cfg_.clip_norm / norm;
        for (auto& g : grads)
          for (double& x : g.data()) x *= s;
      }
    }
    ++t_;
    const double lr = cfg_.learning_rate;
    if (cfg_.optimizer == Optimizer::kGradientDescent) {
      for (std::size_t i = 0; i < ps.size(); ++i) {
        auto p = ps.value(i).data();
        auto g = grads[i].data();
        for (std::size_t k = 0; k < p.size(); ++k) p[k] -= lr * g[k];
      }
      return;
    }
    constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    for (std::size_t i = 0; i < ps.size(); ++i) {
      auto p = ps.value(i).data();
      auto g = grads[i].data();
      auto m = m_[i].data();
      auto v = v_[i].data();
      for (std::size_t k = 0; k < p.size(); ++k) {
        m[k] = b1 * m[k] + (1.0 - b1) * g[k];
        v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
        p[k] -= lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + eps);
      }
    }
  }

 private:
  const TrainConfig& cfg_;
  std::vector<Tensor> m_, v_;
  std::size_t t_ = 0;
};

std::vector<Tensor> snapshot(const ad::ParameterSet& ps) {
  std::vector<Tensor> out;
  for (std::size_t i = 0; i < ps.size(); ++i) out.push_back(ps.value(i));
  return out;
}

void restore(ad::ParameterSet& ps, const std::vector<Tensor>& values) {
  for (std::size_t i = 0; i < ps.size(); ++i) ps.value(i) = values[i];
}

bool all_finite(const ad::ParameterSet& ps) {
  for (std::size_t i = 0; i < ps.size(); ++i)
    if (!ps.value(i).all_finite()) return false;
  return true;
}

void accumulate(objective::LossBreakdown& acc, const objective::LossBreakdown& b) {
  acc.pred += b.pred;
  acc.corr += b.corr;
  acc.mono += b.mono;
  acc.triv += b.triv;
  acc.cons += b.cons;
  acc.total += b.total;
  if (acc.layer_corr.empty()) acc.layer_corr.assign(b.layer_corr.size(), 0.0);
  for (std::size_t l = 0; l < b.layer_corr.size(); ++l) acc.layer_corr[l] += b.layer_corr[l];
  acc.targets = b.targets;
}

void divide(objective::LossBreakdown& acc, double n) {
  acc.pred /= n;
  acc.corr /= n;
  acc.mono /= n;
  acc.triv /= n;
  acc.cons /= n;
  acc.total /= n;
  for (double& v : acc.layer_corr) v /= n;
}

}  // namespace

TrainResult train(const graphs::Dataset& train_set, const graphs::Dataset& val_set, const TrainConfig& cfg) {
  cfg.validate();
  if (train_set.size() < 2) throw Error("training set needs at least 2 samples");
  if (val_set.size() < 2) throw Error("validation set needs at least 2 samples");

  peeling::Model model(cfg.model);
  ad::ParameterSet& ps = model.params();
  Updater updater(cfg, ps);
  std::vector<double> y_train(train_set.size());
  for (std::size_t i = 0; i < train_set.size(); ++i) y_train[i] = train_set[i].y;

  graphs::BatchingOptions val_opt;
  val_opt.batch_size = cfg.batch_size;
  val_opt.shuffle = false;
  val_opt.seed = derive_seed(cfg.seed, 0xEA1);
  val_opt.context_strength = cfg.context_strength;
  const std::vector<graphs::Batch> val_batches = graphs::assemble_batches(val_set, val_opt);

  RunHistory hist;
  std::vector<Tensor> best = snapshot(ps);
  double best_mse = INFINITY;
  std::size_t since_best = 0;
  ad::Tape tape(ps);
  std::vector<double> yb;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    graphs::BatchingOptions opt;
    opt.batch_size = cfg.batch_size;
    opt.shuffle = true;
    opt.seed = derive_seed(cfg.seed, epoch);
    opt.context_strength = cfg.context_strength;
    const std::vector<graphs::Batch> batches = graphs::assemble_batches(train_set, opt);

    objective::LossBreakdown mean;
    std::size_t steps = 0;
    for (const auto& b : batches) {
      std::vector<Tensor> before = snapshot(ps);
      try {
        tape.clear();
        peeling::PeelGraph g = peeling::forward_stack(tape, model, train_set, b);
        yb.clear();
        for (std::size_t idx : b.members) yb.push_back(y_train[idx]);
        objective::TotalLoss loss = objective::total_loss(tape, g, yb, cfg.objective);
        if (!std::isfinite(loss.breakdown.total)) throw NumericError("non-finite loss");
        ad::GradientMap grads = tape.backward(loss.total);
        updater.step(ps, grads);
        if (!all_finite(ps)) throw NumericError("non-finite parameter after update");
        accumulate(mean, loss.breakdown);
        ++steps;
      } catch (const NumericError& e) {
        restore(ps, before);
        hist.diverged = true;
        hist.divergence = "epoch " + std::to_string(epoch) + ", batch " + std::to_string(b.batch_id) + ": " + e.what();
        break;
      }
    }
    if (hist.diverged) break;
    divide(mean, static_cast<double>(steps));

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train = std::move(mean);
    rec.val = evaluate_batches(model, val_set, val_batches, cfg.objective).metrics;
    if (rec.val.mse < best_mse) {
      best_mse = rec.val.mse;
      hist.best_epoch = epoch;
      best = snapshot(ps);
      since_best = 0;
    } else {
      ++since_best;
    }
    hist.epochs.push_back(std::move(rec));
    if (cfg.patience > 0 && since_best >= cfg.patience) {
      hist.stopped_early = epoch < cfg.epochs;
      break;
    }
  }

  hist.best_val_mse = hist.best_epoch > 0 ? best_mse : NAN;
  restore(ps, best);
  return TrainResult{std::move(model), std::move(hist)};
}

std::vector<SweepRow> sweep(SweepAxis axis, std::vector<double> values, const TrainConfig& base,
                            const graphs::Dataset& train_set, const graphs::Dataset& val_set,
                            const graphs::Dataset& test_set) {
  if (values.empty()) throw Error("sweep needs at least one value");
  std::sort(values.begin(), values.end());
  std::vector<SweepRow> rows;
  for (double v : values) {
    SweepRow row;
    row.value = v;
    try {
      TrainConfig cfg = base;
      if (axis == SweepAxis::kDepth) {
        if (v < 1.0 || v != std::floor(v)) throw ConfigError("depth", "sweep values must be positive integers");
        cfg.model.depth = static_cast<std::size_t>(v);
      } else {
        cfg.objective.rho_max = v;
      }
      TrainResult r = train(train_set, val_set, cfg);
      row.best_epoch = r.history.best_epoch;
      row.test = evaluate(r.model, test_set, cfg.batch_size, cfg.objective, cfg.context_strength,
                          derive_seed(cfg.seed, 0x7E57))
                     .metrics;
    } catch (const std::exception& e) {
      row.error = e.what();
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Serialization

json to_json(const peeling::ModelConfig& c) {
  return json{{"views", c.views},
              {"feature_dim", c.encoder.feature_dim},
              {"hidden", c.encoder.hidden},
              {"embed_dim", c.encoder.embed_dim},
              {"rounds", c.encoder.rounds},
              {"context_channel", c.encoder.context_channel},
              {"depth", c.depth},
              {"temperature", c.temperature},
              {"pool_eps", c.pool_eps},
              {"seed", c.seed}};
}

peeling::ModelConfig model_config_from_json(const json& j) {
  peeling::ModelConfig c;
  c.views = j.at("views").get<std::vector<std::string>>();
  c.encoder.feature_dim = j.at("feature_dim").get<std::size_t>();
  c.encoder.hidden = j.at("hidden").get<std::size_t>();
  c.encoder.embed_dim = j.at("embed_dim").get<std::size_t>();
  c.encoder.rounds = j.at("rounds").get<std::size_t>();
  c.encoder.context_channel = j.at("context_channel").get<bool>();
  c.depth = j.at("depth").get<std::size_t>();
  c.temperature = j.at("temperature").get<double>();
  c.pool_eps = j.at("pool_eps").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

json to_json(const objective::ObjectiveConfig& c) {
  return json{{"rho_min", c.rho_min},
              {"rho_max", c.rho_max},
              {"margin", c.margin},
              {"eps", c.eps},
              {"lambda_caus", c.lambda_caus},
              {"lambda_mono", c.lambda_mono},
              {"lambda_unif", c.lambda_unif},
              {"lambda_cons", c.lambda_cons},
              {"disable_split", c.disable_split},
              {"disable_schedule", c.disable_schedule},
              {"disable_trivial", c.disable_trivial},
              {"disable_mono", c.disable_mono},
              {"average_causal", c.average_causal}};
}

json to_json(const TrainConfig& c) {
  return json{{"epochs", c.epochs},
              {"batch_size", c.batch_size},
              {"learning_rate", c.learning_rate},
              {"optimizer", optimizer_name(c.optimizer)},
              {"seed", c.seed},
              {"patience", c.patience},
              {"val_fraction", c.val_fraction},
              {"clip_norm", c.clip_norm},
              {"context_strength", c.context_strength},
              {"objective", to_json(c.objective)},
              {"model", to_json(c.model)}};
}

json to_json(const objective::LossBreakdown& b) {
  return json{{"pred", b.pred},   {"corr", b.corr},   {"mono", b.mono},
              {"triv", b.triv},   {"cons", b.cons},   {"total", b.total},
              {"layer_corr", b.layer_corr}, {"targets", b.targets}};
}

json to_json(const Metrics& m) {
  return json{{"mae", m.mae}, {"mse", m.mse}, {"r2", m.r2}, {"layer_corr", m.layer_corr}};
}

json to_json(const RunHistory& h) {
  json epochs = json::array();
  for (const auto& e : h.epochs) {
    epochs.push_back(json{{"epoch", e.epoch}, {"train", to_json(e.train)}, {"val", to_json(e.val)}});
  }
  json j{{"epochs", epochs},
         {"best_epoch", h.best_epoch},
         {"stopped_early", h.stopped_early},
         {"diverged", h.diverged}};
  j["best_val_mse"] = std::isfinite(h.best_val_mse) ? json(h.best_val_mse) : json(nullptr);
  if (h.diverged) j["divergence"] = h.divergence;
  return j;
}

void save_checkpoint(const peeling::Model& model, const std::string& path) {
  json params = json::array();
  const auto& ps = model.params();
  for (std::size_t i = 0; i < ps.size(); ++i) {
    const Tensor& t = ps.value(i);
    params.push_back(json{{"name", ps.name(i)},
                          {"shape", {t.rows(), t.cols()}},
                          {"data", std::vector<double>(t.data().begin(), t.data().end())}});
  }
  json j{{"schema_version", kCheckpointSchema},
         {"kind", "clap-checkpoint"},
         {"model", to_json(model.config())},
         {"params", params}};
  std::ofstream out(path);
  if (!out) throw Error("cannot write checkpoint " + path);
  out << j.dump() << '\n';
}

peeling::Model load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open checkpoint " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw Error("checkpoint " + path + " is not valid JSON: " + e.what());
  }
  try {
    if (j.at("schema_version").get<int>() != kCheckpointSchema) {
      throw Error("checkpoint schema_version " + j.at("schema_version").dump() + " is not supported");
    }
    peeling::Model model(model_config_from_json(j.at("model")));
    auto& ps = model.params();
    std::vector<char> seen(ps.size(), 0);
    for (const auto& p : j.at("params")) {
      const std::string name = p.at("name").get<std::string>();
      const auto idx = ps.find(name);
      if (!idx) throw Error("checkpoint has unknown parameter " + name);
      const auto shape = p.at("shape").get<std::vector<std::size_t>>();
      Tensor t(shape.at(0), shape.at(1), p.at("data").get<std::vector<double>>());
      if (t.shape() != ps.value(*idx).shape()) throw ShapeError("checkpoint parameter " + name + " has wrong shape");
      if (!t.all_finite()) throw NumericError("checkpoint parameter " + name + " is not finite");
      ps.value(*idx) = std::move(t);
      seen[*idx] = 1;
    }
    for (std::size_t i = 0; i < ps.size(); ++i)
      if (!seen[i]) throw Error("checkpoint is missing parameter " + ps.name(i));
    return model;
  } catch (const json::exception& e) {
    throw Error("malformed checkpoint " + path + ": " + e.what());
  }
}

}  // namespace clap::trainer
