#include "clap/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "clap/error.hpp"
#include "clap/rng.hpp"
#include "clap/theory.hpp"

namespace clap::harness {
namespace {

using json = nlohmann::json;
namespace fs = std::filesystem;

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot write " + path.string());
  f << text;
  if (!f) throw Error("write failed: " + path.string());
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

std::vector<std::string> canonical_views(const graphs::MultiViewSample& s) {
  std::vector<std::string> out;
  for (const char* v : {graphs::kGraphView, graphs::kPermutedView, graphs::kGeometryView}) {
    if (s.views.count(v)) out.emplace_back(v);
  }
  for (const auto& [id, _] : s.views) {
    if (std::find(out.begin(), out.end(), id) == out.end()) out.push_back(id);
  }
  return out;
}

}  // namespace

graphs::Dataset load_data(const RunConfig& config) {
  graphs::Dataset d = config.data.path ? graphs::load_dataset(*config.data.path)
                                       : graphs::generate_synthetic(config.data.scenario(), config.data.n);
  if (d.size() < 8) throw DataError("dataset needs at least 8 samples, got " + std::to_string(d.size()));
  return d;
}

Splits make_splits(const RunConfig& config) {
  const graphs::Dataset all = load_data(config);
  const std::uint64_t seed = config.data.synthetic.seed;
  auto outer = trainer::split_validation(all, config.data.test_fraction, derive_seed(seed, 0x7E5));
  auto inner = trainer::split_validation(outer.train, config.train.val_fraction, derive_seed(seed, 0x7A1));
  return {std::move(inner.train), std::move(inner.val), std::move(outer.val)};
}

trainer::TrainConfig resolved_train_config(const RunConfig& config, const graphs::Dataset& data) {
  if (data.empty()) throw DataError("empty dataset");
  trainer::TrainConfig cfg = config.train;
  const auto& first = data.front();
  cfg.model.views = config.views ? *config.views : canonical_views(first);
  for (const auto& v : cfg.model.views) {
    if (!first.views.count(v)) throw ConfigError("model.views", "view '" + v + "' is absent from the data");
  }
  cfg.model.encoder.feature_dim = first.view(cfg.model.views.front()).feature_dim();
  cfg.validate();
  return cfg;
}

InterventionReport intervene(const peeling::Model& model, const graphs::Dataset& test,
                             const InterventionOptions& options, const objective::ObjectiveConfig& objective,
                             double context_strength) {
  if (options.batch_sizes.empty() || options.shuffles.empty()) throw Error("intervention grid is empty");
  const std::size_t max_b = *std::max_element(options.batch_sizes.begin(), options.batch_sizes.end());
  if (test.size() < max_b) {
    throw Error("test set has " + std::to_string(test.size()) + " samples, fewer than the largest batch size " +
                std::to_string(max_b));
  }
  InterventionReport report;
  for (std::size_t b : options.batch_sizes) {
    for (bool shuffle : options.shuffles) {
      const std::uint64_t seed = derive_seed(options.seed, 2 * b + (shuffle ? 1 : 0));
      const auto ev = trainer::evaluate(model, test, b, objective, context_strength, seed, shuffle);
      InterventionRow row;
      row.batch_size = b;
      row.shuffle = shuffle;
      row.r2 = ev.metrics.r2;
      row.layer_corr = ev.metrics.layer_corr;
      row.final_corr = row.layer_corr.back();
      report.rows.push_back(std::move(row));
    }
  }
  const auto [lo, hi] = std::minmax_element(report.rows.begin(), report.rows.end(),
                                            [](const auto& a, const auto& b) { return a.final_corr < b.final_corr; });
  report.spread = hi->final_corr - lo->final_corr;
  return report;
}

const std::vector<Variant>& variants() {
  static const std::vector<Variant> all = {
      {"full", "CLaP"},
      {"no-split", "w/o causal–trivial split"},
      {"no-schedule", "w/o correlation schedule"},
      {"no-trivial", "w/o trivial branch"},
      {"no-mono", "No mono penalty"},
      {"avg-causal-layer", "Average causal layer"},
      {"consistency@0.5", "λ_cons = 0.5"},
      {"consistency@1.0", "λ_cons = 1.0"},
  };
  return all;
}

const Variant& find_variant(const std::string& name) {
  for (const auto& v : variants()) {
    if (v.name == name) return v;
  }
  throw ConfigError("ablate.variants", "unknown variant '" + name + "'");
}

objective::ObjectiveConfig apply_variant(const std::string& name, objective::ObjectiveConfig c) {
  find_variant(name);
  if (name == "no-split") c.disable_split = true;
  if (name == "no-schedule") c.disable_schedule = true;
  if (name == "no-trivial") c.disable_trivial = true;
  if (name == "no-mono") c.disable_mono = true;
  if (name == "avg-causal-layer") c.average_causal = true;
  if (name == "consistency@0.5") c.lambda_cons = 0.5;
  if (name == "consistency@1.0") c.lambda_cons = 1.0;
  return c;
}

AblationRow run_variant(const Splits& splits, const trainer::TrainConfig& base, const std::string& name,
                        std::uint64_t seed, std::optional<peeling::Model>* model_out) {
  AblationRow row;
  row.variant = name;
  row.label = find_variant(name).label;
  row.seed = seed;
  try {
    trainer::TrainConfig cfg = base;
    cfg.seed = seed;
    cfg.model.seed = seed;
    cfg.objective = apply_variant(name, base.objective);
    auto r = trainer::train(splits.train, splits.val, cfg);
    row.best_epoch = r.history.best_epoch;
    row.test = trainer::evaluate(r.model, splits.test, cfg.batch_size, cfg.objective, cfg.context_strength,
                                 derive_seed(seed, 0x7E57))
                   .metrics;
    if (model_out) model_out->emplace(std::move(r.model));
  } catch (const std::exception& e) {
    row.error = e.what();
  }
  return row;
}

std::vector<AblationRow> ablate(const Splits& splits, const trainer::TrainConfig& base,
                                std::vector<std::string> variant_names, const std::vector<std::uint64_t>& seeds) {
  if (seeds.empty()) throw ConfigError("ablate.seeds", "must not be empty");
  if (variant_names.empty()) {
    for (const auto& v : variants()) variant_names.push_back(v.name);
  }
  for (const auto& n : variant_names) find_variant(n);
  if (std::find(variant_names.begin(), variant_names.end(), "full") == variant_names.end()) {
    variant_names.insert(variant_names.begin(), "full");
  }
  std::vector<AblationRow> rows;
  for (std::uint64_t seed : seeds) {
    for (const auto& name : variant_names) rows.push_back(run_variant(splits, base, name, seed));
  }
  return rows;
}

std::vector<std::size_t> default_saliency_layers(std::size_t depth) {
  if (depth == 0) throw Error("depth must be positive");
  const auto mid = static_cast<std::size_t>(std::lround(static_cast<double>(depth) / 2.0));
  std::set<std::size_t> s = {1, std::max<std::size_t>(mid, 1), depth};
  return {s.begin(), s.end()};
}

std::vector<SaliencyRecord> compute_saliency(const peeling::Model& model, const graphs::Dataset& samples,
                                             const std::vector<std::size_t>& layers) {
  const auto& views = model.config().views;
  for (const auto& s : samples) {
    for (const auto& v : views) {
      if (!s.views.count(v)) throw DataError("sample '" + s.id + "' is missing view '" + v + "'");
    }
  }
  for (auto l : layers) {
    if (l < 1 || l > model.depth()) throw Error("saliency layer " + std::to_string(l) + " outside [1, depth]");
  }
  std::vector<SaliencyRecord> out;
  ad::Tape tape(model.params());
  constexpr std::size_t kChunk = 32;
  for (std::size_t start = 0; start < samples.size(); start += kChunk) {
    graphs::Batch batch;
    for (std::size_t i = start; i < std::min(samples.size(), start + kChunk); ++i) batch.members.push_back(i);
    tape.clear();
    const auto trace = peeling::forward_stack(tape, model, samples, batch).trace;
    for (std::size_t k = 0; k < batch.size(); ++k) {
      for (auto l : layers) {
        out.push_back({peeling::extract_saliency(trace, views, k, l), samples[batch.members[k]].motif});
      }
    }
  }
  return out;
}

double motif_contrast(const std::vector<SaliencyRecord>& records, std::size_t layer) {
  double motif_sum = 0.0, other_sum = 0.0;
  std::size_t motif_n = 0, other_n = 0;
  for (const auto& r : records) {
    if (r.map.layer != layer || r.motif.empty()) continue;
    const std::set<int> motif(r.motif.begin(), r.motif.end());
    for (const auto& [view, scores] : r.map.scores) {
      for (std::size_t i = 0; i < scores.size(); ++i) {
        if (motif.count(static_cast<int>(i))) {
          motif_sum += scores[i];
          ++motif_n;
        } else {
          other_sum += scores[i];
          ++other_n;
        }
      }
    }
  }
  if (motif_n == 0 || other_n == 0) throw Error("motif contrast needs motif and non-motif nodes");
  return motif_sum / static_cast<double>(motif_n) - other_sum / static_cast<double>(other_n);
}

std::string diverging_color(double pi) {
  const double t = std::clamp(std::isfinite(pi) ? pi : 0.5, 0.0, 1.0);
  // Endpoints of the RdBu scheme around a light neutral.
  constexpr double cold[3] = {33, 102, 172}, mid[3] = {247, 247, 247}, hot[3] = {178, 24, 43};
  const double* a = t < 0.5 ? cold : mid;
  const double* b = t < 0.5 ? mid : hot;
  const double u = t < 0.5 ? t / 0.5 : (t - 0.5) / 0.5;
  char buf[8];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", static_cast<int>(std::lround(a[0] + u * (b[0] - a[0]))),
                static_cast<int>(std::lround(a[1] + u * (b[1] - a[1]))),
                static_cast<int>(std::lround(a[2] + u * (b[2] - a[2]))));
  return buf;
}

std::vector<std::pair<double, double>> layout(const graphs::ViewGraph& view, std::uint64_t seed) {
  const std::size_t n = view.num_nodes();
  std::vector<std::pair<double, double>> p(n);
  if (n == 0) return p;
  if (view.pos) {
    for (std::size_t i = 0; i < n; ++i) p[i] = {(*view.pos)(i, 0), (*view.pos)(i, 1)};
  } else {
    // Fruchterman-Reingold with linear cooling.
    Rng rng(seed);
    for (auto& q : p) q = {rng.uniform(), rng.uniform()};
    const double k = std::sqrt(1.0 / static_cast<double>(n));
    constexpr int kIters = 200;
    std::vector<std::pair<double, double>> disp(n);
    for (int it = 0; it < kIters; ++it) {
      const double temp = 0.1 * (1.0 - static_cast<double>(it) / kIters);
      std::fill(disp.begin(), disp.end(), std::pair{0.0, 0.0});
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
          const double dx = p[i].first - p[j].first, dy = p[i].second - p[j].second;
          const double d = std::max(std::hypot(dx, dy), 1e-6);
          const double f = k * k / d;
          disp[i].first += dx / d * f;
          disp[i].second += dy / d * f;
          disp[j].first -= dx / d * f;
          disp[j].second -= dy / d * f;
        }
      }
      for (auto [a, b] : view.edges) {
        if (a >= b) continue;  // each undirected edge once
        const auto i = static_cast<std::size_t>(a), j = static_cast<std::size_t>(b);
        const double dx = p[i].first - p[j].first, dy = p[i].second - p[j].second;
        const double d = std::max(std::hypot(dx, dy), 1e-6);
        const double f = d * d / k;
        disp[i].first -= dx / d * f;
        disp[i].second -= dy / d * f;
        disp[j].first += dx / d * f;
        disp[j].second += dy / d * f;
      }
      for (std::size_t i = 0; i < n; ++i) {
        const double len = std::max(std::hypot(disp[i].first, disp[i].second), 1e-12);
        const double step = std::min(len, temp);
        p[i].first += disp[i].first / len * step;
        p[i].second += disp[i].second / len * step;
      }
    }
  }
  double x0 = p[0].first, x1 = x0, y0 = p[0].second, y1 = y0;
  for (const auto& [x, y] : p) {
    x0 = std::min(x0, x), x1 = std::max(x1, x);
    y0 = std::min(y0, y), y1 = std::max(y1, y);
  }
  const double span = std::max({x1 - x0, y1 - y0, 1e-12});
  for (auto& [x, y] : p) {
    x = (x - x0) / span + (span - (x1 - x0)) / (2 * span);
    y = (y - y0) / span + (span - (y1 - y0)) / (2 * span);
  }
  return p;
}

std::string render_svg(const graphs::MultiViewSample& sample, const SaliencyRecord& record) {
  constexpr double kPanel = 260, kMargin = 24, kTitle = 28, kLegend = 40, kRadius = 8;
  const auto& scores = record.map.scores;
  const double width = kPanel * static_cast<double>(std::max<std::size_t>(scores.size(), 1));
  const double height = kTitle + kPanel + kLegend;
  const std::set<int> motif(record.motif.begin(), record.motif.end());
  std::ostringstream o;
  o.precision(6);
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
    << "\" viewBox=\"0 0 " << width << ' ' << height << "\" font-family=\"sans-serif\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  std::size_t panel = 0;
  for (const auto& [view_id, pi] : scores) {
    const auto& g = sample.view(view_id);
    const auto pts = layout(g, fnv1a(sample.id + "/" + view_id));
    const double ox = kPanel * static_cast<double>(panel++);
    auto px = [&](std::size_t i) { return ox + kMargin + pts[i].first * (kPanel - 2 * kMargin); };
    auto py = [&](std::size_t i) { return kTitle + kMargin + pts[i].second * (kPanel - 2 * kMargin); };
    o << "<text x=\"" << ox + kPanel / 2 << "\" y=\"18\" text-anchor=\"middle\" font-size=\"13\">" << sample.id
      << " / " << view_id << " / layer " << record.map.layer << "</text>\n";
    for (auto [a, b] : g.edges) {
      if (a >= b) continue;
      const auto i = static_cast<std::size_t>(a), j = static_cast<std::size_t>(b);
      o << "<line x1=\"" << px(i) << "\" y1=\"" << py(i) << "\" x2=\"" << px(j) << "\" y2=\"" << py(j)
        << "\" stroke=\"#999999\" stroke-width=\"1.2\"/>\n";
    }
    for (std::size_t i = 0; i < pi.size(); ++i) {
      const bool m = motif.count(static_cast<int>(i)) > 0;
      o << "<circle cx=\"" << px(i) << "\" cy=\"" << py(i) << "\" r=\"" << kRadius << "\" fill=\""
        << diverging_color(pi[i]) << "\" stroke=\"" << (m ? "#000000" : "#555555") << "\" stroke-width=\""
        << (m ? 2.5 : 1.0) << "\"><title>node " << i << ": " << pi[i] << "</title></circle>\n";
    }
  }
  // Colour bar from 0 to 1 with the neutral point at 0.5.
  const double bar_y = kTitle + kPanel + 8, bar_w = std::min(width - 40, 200.0), bar_x = (width - bar_w) / 2;
  constexpr int kSteps = 20;
  for (int s = 0; s < kSteps; ++s) {
    o << "<rect x=\"" << bar_x + bar_w * s / kSteps << "\" y=\"" << bar_y << "\" width=\"" << bar_w / kSteps + 0.5
      << "\" height=\"10\" fill=\"" << diverging_color((s + 0.5) / kSteps) << "\"/>\n";
  }
  o << "<text x=\"" << bar_x << "\" y=\"" << bar_y + 24 << "\" font-size=\"11\">0</text>\n";
  o << "<text x=\"" << bar_x + bar_w / 2 << "\" y=\"" << bar_y + 24
    << "\" font-size=\"11\" text-anchor=\"middle\">0.5</text>\n";
  o << "<text x=\"" << bar_x + bar_w << "\" y=\"" << bar_y + 24
    << "\" font-size=\"11\" text-anchor=\"end\">1</text>\n";
  o << "</svg>\n";
  return o.str();
}

json to_json(const SaliencyRecord& r) {
  json scores = json::object();
  for (const auto& [v, s] : r.map.scores) scores[v] = s;
  return {{"schema_version", kSchemaVersion},
          {"sample_id", r.map.sample_id},
          {"layer", r.map.layer},
          {"scores", scores},
          {"motif", r.motif}};
}

json to_json(const InterventionReport& report) {
  json rows = json::array();
  for (const auto& r : report.rows) {
    rows.push_back({{"batch_size", r.batch_size},
                    {"shuffle", r.shuffle},
                    {"r2", r.r2},
                    {"final_corr", r.final_corr},
                    {"layer_corr", r.layer_corr}});
  }
  return {{"schema_version", kSchemaVersion}, {"rows", rows}, {"spread", report.spread}};
}

json to_json(const AblationRow& row) {
  json j = {{"variant", row.variant}, {"label", row.label}, {"seed", row.seed}, {"best_epoch", row.best_epoch}};
  if (row.error.empty()) {
    j["test"] = trainer::to_json(row.test);
    j["error"] = nullptr;
  } else {
    j["test"] = nullptr;
    j["error"] = row.error;
  }
  return j;
}

json error_record(const std::string& command, const std::exception& e) {
  std::string kind = "error";
  json field = nullptr;
  if (const auto* c = dynamic_cast<const ConfigError*>(&e)) {
    kind = "config";
    if (!c->field().empty()) field = c->field();
  } else if (dynamic_cast<const DataError*>(&e)) {
    kind = "data";
  } else if (dynamic_cast<const NumericError*>(&e)) {
    kind = "numeric";
  } else if (dynamic_cast<const ShapeError*>(&e)) {
    kind = "shape";
  }
  return {{"schema_version", kSchemaVersion},
          {"command", command},
          {"ok", false},
          {"error", {{"kind", kind}, {"field", field}, {"message", e.what()}}}};
}

json manifest(const std::string& command, const RunConfig& config) {
  return {{"schema_version", kSchemaVersion},
          {"command", command},
          {"config_hash", config_hash(config)},
          {"seeds",
           {{"data", config.data.synthetic.seed},
            {"train", config.train.seed},
            {"model", config.train.model.seed},
            {"intervene", config.intervene.seed},
            {"theory", config.theory.seed}}},
          {"versions",
           {{"clap", kVersion},
            {"checkpoint_schema", trainer::kCheckpointSchema},
            {"nlohmann_json",
             std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." + std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                 std::to_string(NLOHMANN_JSON_VERSION_PATCH)},
            {"cxx", __cplusplus}}},
          {"config", to_json(config)}};
}

const std::vector<std::string>& commands() {
  static const std::vector<std::string> all = {"gen-data",  "train",         "eval",  "sweep",
                                               "intervene", "saliency", "verify-theory", "ablate"};
  return all;
}

namespace {

struct Context {
  const RunConfig& config;
  fs::path dir;
  std::ostream& out;
};

peeling::Model obtain_model(const Context& ctx, const Splits& splits, const trainer::TrainConfig& cfg) {
  const auto path = ctx.config.checkpoint ? fs::path(*ctx.config.checkpoint) : fs::path();
  if (!path.empty()) {
    peeling::Model m = trainer::load_checkpoint(path.string());
    if (m.config().views != cfg.model.views || m.config().encoder.feature_dim != cfg.model.encoder.feature_dim) {
      throw ConfigError("eval.checkpoint", "checkpoint views or feature width do not match the data");
    }
    return m;
  }
  auto r = trainer::train(splits.train, splits.val, cfg);
  trainer::save_checkpoint(r.model, (ctx.dir / "checkpoint.json").string());
  return std::move(r.model);
}

void write_metrics_log(const fs::path& path, const trainer::RunHistory& h) {
  std::string text;
  for (const auto& e : h.epochs) {
    json line = {{"schema_version", kSchemaVersion},
                 {"epoch", e.epoch},
                 {"train", trainer::to_json(e.train)},
                 {"val", trainer::to_json(e.val)}};
    text += line.dump() + "\n";
  }
  write_text(path, text);
}

void cmd_gen_data(const Context& ctx) {
  const auto data = load_data(ctx.config);
  graphs::save_dataset(data, (ctx.dir / "dataset.jsonl").string());
  ctx.out << json{{"ok", true}, {"samples", data.size()}, {"path", (ctx.dir / "dataset.jsonl").string()}}.dump()
          << "\n";
}

void cmd_train(const Context& ctx) {
  const auto splits = make_splits(ctx.config);
  const auto cfg = resolved_train_config(ctx.config, splits.train);
  const auto r = trainer::train(splits.train, splits.val, cfg);
  trainer::save_checkpoint(r.model, (ctx.dir / "checkpoint.json").string());
  write_metrics_log(ctx.dir / "metrics.jsonl", r.history);
  const auto test = trainer::evaluate(r.model, splits.test, cfg.batch_size, cfg.objective, cfg.context_strength,
                                      derive_seed(cfg.seed, 0x7E57));
  json report = {{"schema_version", kSchemaVersion},
                 {"history", trainer::to_json(r.history)},
                 {"test", trainer::to_json(test.metrics)}};
  write_json(ctx.dir / "report.json", report);
  ctx.out << json{{"ok", true},
                  {"best_epoch", r.history.best_epoch},
                  {"diverged", r.history.diverged},
                  {"test", trainer::to_json(test.metrics)}}
                 .dump()
          << "\n";
}

void cmd_eval(const Context& ctx) {
  if (!ctx.config.checkpoint) throw ConfigError("eval.checkpoint", "eval needs a checkpoint");
  const auto splits = make_splits(ctx.config);
  const auto cfg = resolved_train_config(ctx.config, splits.train);
  const auto model = obtain_model(ctx, splits, cfg);
  const auto test = trainer::evaluate(model, splits.test, cfg.batch_size, cfg.objective, cfg.context_strength,
                                      derive_seed(cfg.seed, 0x7E57));
  const json j = {{"schema_version", kSchemaVersion}, {"test", trainer::to_json(test.metrics)}};
  write_json(ctx.dir / "eval.json", j);
  ctx.out << json{{"ok", true}, {"test", j["test"]}}.dump() << "\n";
}

void cmd_sweep(const Context& ctx) {
  const auto splits = make_splits(ctx.config);
  const auto cfg = resolved_train_config(ctx.config, splits.train);
  const auto rows = trainer::sweep(ctx.config.sweep.axis, ctx.config.sweep.values, cfg, splits.train, splits.val,
                                   splits.test);
  json jr = json::array();
  for (const auto& r : rows) {
    jr.push_back({{"value", r.value},
                  {"best_epoch", r.best_epoch},
                  {"test", r.test ? trainer::to_json(*r.test) : json(nullptr)},
                  {"error", r.error.empty() ? json(nullptr) : json(r.error)}});
  }
  const json j = {{"schema_version", kSchemaVersion},
                  {"axis", ctx.config.sweep.axis == trainer::SweepAxis::kDepth ? "depth" : "rho_max"},
                  {"rows", jr}};
  write_json(ctx.dir / "sweep.json", j);
  ctx.out << json{{"ok", true}, {"rows", jr}}.dump() << "\n";
}

void cmd_intervene(const Context& ctx) {
  const auto splits = make_splits(ctx.config);
  const auto cfg = resolved_train_config(ctx.config, splits.train);
  const auto model = obtain_model(ctx, splits, cfg);
  const auto report = intervene(model, splits.test, ctx.config.intervene, cfg.objective, cfg.context_strength);
  write_json(ctx.dir / "intervention.json", to_json(report));
  ctx.out << json{{"ok", true}, {"spread", report.spread}, {"cells", report.rows.size()}}.dump() << "\n";
}

void cmd_saliency(const Context& ctx) {
  const auto splits = make_splits(ctx.config);
  const auto cfg = resolved_train_config(ctx.config, splits.train);
  const auto model = obtain_model(ctx, splits, cfg);
  const auto layers = ctx.config.saliency.layers.empty() ? default_saliency_layers(model.depth())
                                                         : ctx.config.saliency.layers;
  const std::size_t n = std::min(ctx.config.saliency.samples, splits.test.size());
  const graphs::Dataset chosen(splits.test.begin(), splits.test.begin() + static_cast<std::ptrdiff_t>(n));
  const auto records = compute_saliency(model, chosen, layers);
  json index = json::array();
  for (std::size_t k = 0; k < records.size(); ++k) {
    const auto& r = records[k];
    const auto& sample = chosen[k / layers.size()];
    const std::string stem = "saliency/" + r.map.sample_id + "_L" + std::to_string(r.map.layer);
    write_json(ctx.dir / (stem + ".json"), to_json(r));
    write_text(ctx.dir / (stem + ".svg"), render_svg(sample, r));
    index.push_back(stem);
  }
  ctx.out << json{{"ok", true}, {"layers", layers}, {"files", index}}.dump() << "\n";
}

void cmd_verify_theory(const Context& ctx) {
  theory::VerifyOptions opt;
  opt.mc_draws = ctx.config.theory.mc_draws;
  opt.residual_samples = ctx.config.theory.residual_samples;
  opt.seed = ctx.config.theory.seed;
  const auto checks = theory::verify_all(theory::default_scenario(), opt);
  json jc = json::array();
  std::size_t failed = 0;
  for (const auto& c : checks) {
    jc.push_back({{"name", c.name},
                  {"predicted", c.predicted},
                  {"observed", c.observed},
                  {"tolerance", c.tolerance},
                  {"pass", c.pass}});
    failed += c.pass ? 0 : 1;
  }
  write_json(ctx.dir / "theory.json", {{"schema_version", kSchemaVersion},
                                       {"scenario", ctx.config.theory.scenario},
                                       {"checks", jc},
                                       {"all_pass", failed == 0}});
  if (failed > 0) throw Error(std::to_string(failed) + " theory checks failed");
  ctx.out << json{{"ok", true}, {"checks", checks.size()}}.dump() << "\n";
}

void cmd_ablate(const Context& ctx) {
  const auto splits = make_splits(ctx.config);
  const auto cfg = resolved_train_config(ctx.config, splits.train);
  const auto rows = ablate(splits, cfg, ctx.config.ablate.variants, ctx.config.ablate.seeds);
  json jr = json::array();
  std::string log;
  for (const auto& r : rows) {
    jr.push_back(to_json(r));
    log += json{{"schema_version", kSchemaVersion}, {"row", to_json(r)}}.dump() + "\n";
  }
  write_json(ctx.dir / "ablation.json", {{"schema_version", kSchemaVersion}, {"rows", jr}});
  write_text(ctx.dir / "ablation.jsonl", log);
  ctx.out << json{{"ok", true}, {"rows", jr}}.dump() << "\n";
}

}  // namespace

void run_command(const std::string& command, const RunConfig& config, std::ostream& out) {
  if (std::find(commands().begin(), commands().end(), command) == commands().end()) {
    throw ConfigError("command", "unknown command '" + command + "'");
  }
  config.validate();
  const Context ctx{config, fs::path(config.output_dir), out};
  fs::create_directories(ctx.dir);
  write_json(ctx.dir / "manifest.json", manifest(command, config));
  if (command == "gen-data") cmd_gen_data(ctx);
  if (command == "train") cmd_train(ctx);
  if (command == "eval") cmd_eval(ctx);
  if (command == "sweep") cmd_sweep(ctx);
  if (command == "intervene") cmd_intervene(ctx);
  if (command == "saliency") cmd_saliency(ctx);
  if (command == "verify-theory") cmd_verify_theory(ctx);
  if (command == "ablate") cmd_ablate(ctx);
}

}  // namespace clap::harness
