#include "clap/graphs.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>

#include "json.hpp"

#include "clap/error.hpp"
#include "clap/rng.hpp"

namespace clap::graphs {

using nlohmann::json;

void ViewGraph::normalize_edges() {
  const int n = static_cast<int>(num_nodes());
  std::set<std::pair<int, int>> uniq;
  for (const auto& [s, d] : edges) {
    if (s < 0 || d < 0 || s >= n || d >= n) {
      throw DataError("edge endpoint out of range: [" + std::to_string(s) + ", " +
                      std::to_string(d) + "] with " + std::to_string(n) + " nodes");
    }
    if (s == d) continue;
    uniq.emplace(s, d);
    uniq.emplace(d, s);
  }
  edges.assign(uniq.begin(), uniq.end());
}

const ViewGraph& MultiViewSample::view(const std::string& view_id) const {
  const auto it = views.find(view_id);
  if (it == views.end()) throw DataError("sample " + id + " is missing view " + view_id);
  return it->second;
}

std::vector<std::string> view_ids(std::size_t n_views) {
  static const std::vector<std::string> all = {kGraphView, kPermutedView, kGeometryView};
  if (n_views < 1 || n_views > all.size()) throw Error("n_views must be 1, 2 or 3");
  return {all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n_views)};
}

double planted_kappa(double theta, double noise_sd) {
  const double var_c = 1.0;
  return theta * var_c / std::sqrt(var_c * (theta * theta * var_c + noise_sd * noise_sd));
}

double noise_sd_for_kappa(double theta, double kappa) {
  if (!(kappa > 0.0 && kappa <= 1.0)) throw Error("kappa must lie in (0, 1]");
  return std::abs(theta) * std::sqrt(1.0 / (kappa * kappa) - 1.0);
}

// ---------------------------------------------------------------------------
// Synthetic generator

namespace {

struct RawSample {
  Tensor x;
  std::vector<std::pair<int, int>> edges;
  Tensor pos;
  std::vector<int> motif;
  double c_raw = 0.0;
  double eta = 0.0;
};

RawSample draw_sample(const SynthScenario& sc, const std::vector<double>& direction,
                      std::size_t index) {
  Rng rng(derive_seed(sc.seed, index + 1));
  RawSample s;
  const std::size_t span = sc.max_nodes - sc.min_nodes + 1;
  const std::size_t n = sc.min_nodes + static_cast<std::size_t>(rng.below(span));
  const std::size_t f = sc.feature_dim;

  s.x = Tensor(n, f);
  for (auto& v : s.x.data()) v = rng.normal();

  // Erdős–Rényi, p = 2 log(n) / n.
  const double p = n > 1 ? std::min(1.0, 2.0 * std::log(static_cast<double>(n)) / n) : 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      if (rng.uniform() < p) s.edges.emplace_back(static_cast<int>(i), static_cast<int>(j));
    }
  }

  std::vector<std::size_t> order = rng.permutation(n);
  for (std::size_t k = 0; k < sc.motif_size; ++k) s.motif.push_back(static_cast<int>(order[k]));
  std::sort(s.motif.begin(), s.motif.end());
  for (int m : s.motif) s.x(static_cast<std::size_t>(m), 0) += sc.motif_boost;

  if (!s.motif.empty()) {
    double acc = 0.0;
    for (int m : s.motif) {
      for (std::size_t k = 1; k < f; ++k) acc += s.x(static_cast<std::size_t>(m), k) * direction[k];
    }
    s.c_raw = acc / static_cast<double>(s.motif.size());
  }

  // Uniform points in the unit ball.
  s.pos = Tensor(n, 3);
  for (std::size_t i = 0; i < n; ++i) {
    double v[3], norm2;
    do {
      norm2 = 0.0;
      for (double& c : v) {
        c = rng.uniform(-1.0, 1.0);
        norm2 += c * c;
      }
    } while (norm2 > 1.0);
    for (std::size_t k = 0; k < 3; ++k) s.pos(i, k) = v[k];
  }

  s.eta = sc.noise_sd > 0.0 ? rng.normal(0.0, sc.noise_sd) : 0.0;
  return s;
}

}  // namespace

Dataset generate_synthetic(const SynthScenario& sc, std::size_t n) {
  if (n < 2) throw Error("generate_synthetic needs n >= 2");
  if (sc.noise_sd < 0.0) throw Error("noise_sd must be non-negative");
  if (sc.feature_dim < 2) throw Error("feature_dim must be at least 2");
  if (sc.min_nodes < 1 || sc.min_nodes > sc.max_nodes) throw Error("invalid node-count range");
  if (sc.motif_size > sc.min_nodes) throw Error("motif_size exceeds the minimum node count");
  if (sc.motif_size == 0 && sc.theta != 0.0) {
    throw Error("degenerate scenario: motif_size 0 with nonzero theta");
  }
  const std::vector<std::string> ids = view_ids(sc.n_views);

  // Scenario-level draws: projection direction (coordinate 0 is the motif
  // tag and is excluded) and the feature permutation of the second view.
  Rng scenario_rng(derive_seed(sc.seed, 0));
  std::vector<double> direction(sc.feature_dim, 0.0);
  double norm = 0.0;
  for (std::size_t k = 1; k < sc.feature_dim; ++k) {
    direction[k] = scenario_rng.normal();
    norm += direction[k] * direction[k];
  }
  for (auto& d : direction) d /= std::sqrt(norm);
  const std::vector<std::size_t> perm = scenario_rng.permutation(sc.feature_dim);

  std::vector<RawSample> raw;
  raw.reserve(n);
  for (std::size_t i = 0; i < n; ++i) raw.push_back(draw_sample(sc, direction, i));

  double mean = 0.0;
  for (const auto& r : raw) mean += r.c_raw;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (const auto& r : raw) var += (r.c_raw - mean) * (r.c_raw - mean);
  var /= static_cast<double>(n);
  const double sd = std::sqrt(var);

  Dataset out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    RawSample& r = raw[i];
    MultiViewSample s;
    s.id = "syn-" + std::to_string(i);
    const double c = sd > 0.0 ? (r.c_raw - mean) / sd : 0.0;
    s.planted_c = c;
    s.y = sc.theta * c + r.eta;
    // Stored so that y - theta*c - eta is exactly zero.
    s.planted_noise = s.y - sc.theta * c;
    s.motif = r.motif;

    for (const auto& vid : ids) {
      ViewGraph g;
      g.view_id = vid;
      g.edges = r.edges;
      if (vid == kPermutedView) {
        g.x = Tensor(r.x.rows(), r.x.cols());
        for (std::size_t a = 0; a < r.x.rows(); ++a)
          for (std::size_t k = 0; k < r.x.cols(); ++k) g.x(a, k) = r.x(a, perm[k]);
      } else {
        g.x = r.x;
      }
      if (vid == kGeometryView) g.pos = r.pos;
      g.normalize_edges();
      s.views.emplace(vid, std::move(g));
    }
    out.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Batching

std::vector<Batch> assemble_batches(const Dataset& dataset, const BatchingOptions& opt) {
  if (dataset.size() < 2) throw Error("dataset smaller than 2 cannot be batched");
  if (opt.batch_size < 2) throw Error("batch size must be at least 2");
  if (opt.context_strength < 0.0) throw Error("context_strength must be non-negative");

  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(opt.seed);
  if (opt.shuffle) rng.shuffle(order);

  std::vector<Batch> batches;
  for (std::size_t start = 0; start < order.size(); start += opt.batch_size) {
    const std::size_t end = std::min(order.size(), start + opt.batch_size);
    if (end - start < 2 && !batches.empty()) {
      batches.back().members.insert(batches.back().members.end(), order.begin() + static_cast<std::ptrdiff_t>(start),
                                    order.begin() + static_cast<std::ptrdiff_t>(end));
      continue;
    }
    Batch b;
    b.batch_id = batches.size();
    b.members.assign(order.begin() + static_cast<std::ptrdiff_t>(start),
                     order.begin() + static_cast<std::ptrdiff_t>(end));
    batches.push_back(std::move(b));
  }

  if (opt.context_strength > 0.0) {
    double mean = 0.0;
    for (const auto& s : dataset) mean += s.y;
    mean /= static_cast<double>(dataset.size());
    double var = 0.0;
    for (const auto& s : dataset) var += (s.y - mean) * (s.y - mean);
    const double sd_y = std::sqrt(var / static_cast<double>(dataset.size()));

    // Context noise has its own stream so that it does not depend on
    // whether the partition was shuffled.
    Rng noise(derive_seed(opt.seed, 0xC0FFEE));
    for (auto& b : batches) {
      const double m = static_cast<double>(b.size());
      double total = 0.0;
      for (std::size_t idx : b.members) total += dataset[idx].y;
      b.context.reserve(b.size());
      for (std::size_t idx : b.members) {
        const double loo = (total - dataset[idx].y) / (m - 1.0);
        const double nu = noise.normal(0.0, sd_y / (m - 1.0));
        b.context.push_back(opt.context_strength * (loo + nu));
      }
    }
  }
  return batches;
}

// ---------------------------------------------------------------------------
// JSONL

namespace {

json matrix_json(const Tensor& t) {
  json rows = json::array();
  for (std::size_t r = 0; r < t.rows(); ++r) {
    json row = json::array();
    for (std::size_t c = 0; c < t.cols(); ++c) row.push_back(t(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

Tensor matrix_from_json(const json& j, const std::string& what, std::size_t expect_cols = 0) {
  if (!j.is_array()) throw DataError(what + " must be an array of rows");
  const std::size_t rows = j.size();
  std::size_t cols = expect_cols;
  if (rows > 0) {
    if (!j[0].is_array()) throw DataError(what + " rows must be arrays");
    cols = j[0].size();
  }
  if (expect_cols != 0 && cols != expect_cols) {
    throw DataError(what + " must have " + std::to_string(expect_cols) + " columns");
  }
  Tensor t(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    const json& row = j[r];
    if (!row.is_array() || row.size() != cols) throw DataError(what + " is ragged");
    for (std::size_t c = 0; c < cols; ++c) {
      if (!row[c].is_number()) throw DataError(what + " entries must be numbers");
      t(r, c) = row[c].get<double>();
    }
  }
  if (!t.all_finite()) throw DataError(what + " contains non-finite values");
  return t;
}

}  // namespace

std::string sample_to_json_line(const MultiViewSample& s) {
  json j;
  j["id"] = s.id;
  j["y"] = s.y;
  j["c"] = s.planted_c ? json(*s.planted_c) : json(nullptr);
  json views = json::object();
  for (const auto& [vid, g] : s.views) {
    json v;
    v["x"] = matrix_json(g.x);
    json edges = json::array();
    for (const auto& [a, b] : g.edges) {
      if (a < b) edges.push_back(json::array({a, b}));
    }
    v["edges"] = std::move(edges);
    v["pos"] = g.pos ? matrix_json(*g.pos) : json(nullptr);
    views[vid] = std::move(v);
  }
  j["views"] = std::move(views);
  if (!s.motif.empty()) j["motif"] = s.motif;
  return j.dump();
}

MultiViewSample sample_from_json_line(const std::string& line, std::size_t line_no) {
  const std::string where = "line " + std::to_string(line_no) + ": ";
  json j;
  try {
    j = json::parse(line);
  } catch (const json::parse_error& e) {
    throw DataError(where + "malformed JSON (" + e.what() + ")");
  }
  try {
    if (!j.is_object()) throw DataError("sample must be a JSON object");
    for (const auto& [key, _] : j.items()) {
      if (key != "id" && key != "y" && key != "c" && key != "views" && key != "motif") {
        throw DataError("unknown field '" + key + "'");
      }
    }
    MultiViewSample s;
    if (!j.contains("id") || !j["id"].is_string()) throw DataError("missing string field 'id'");
    s.id = j["id"].get<std::string>();
    if (!j.contains("y") || !j["y"].is_number()) throw DataError("missing numeric field 'y'");
    s.y = j["y"].get<double>();
    if (!std::isfinite(s.y)) throw DataError("label is not finite");
    if (j.contains("c") && !j["c"].is_null()) {
      if (!j["c"].is_number()) throw DataError("field 'c' must be a number or null");
      s.planted_c = j["c"].get<double>();
    }
    if (j.contains("motif")) s.motif = j["motif"].get<std::vector<int>>();
    if (!j.contains("views") || !j["views"].is_object() || j["views"].empty()) {
      throw DataError("missing object field 'views'");
    }
    for (const auto& [vid, v] : j["views"].items()) {
      ViewGraph g;
      g.view_id = vid;
      if (!v.is_object() || !v.contains("x")) throw DataError("view " + vid + " lacks 'x'");
      g.x = matrix_from_json(v["x"], "view " + vid + " x");
      if (v.contains("edges")) {
        for (const auto& e : v["edges"]) {
          if (!e.is_array() || e.size() != 2 || !e[0].is_number_integer() || !e[1].is_number_integer()) {
            throw DataError("view " + vid + " edges must be [src, dst] integer pairs");
          }
          g.edges.emplace_back(e[0].get<int>(), e[1].get<int>());
        }
      }
      g.normalize_edges();
      if (v.contains("pos") && !v["pos"].is_null()) {
        g.pos = matrix_from_json(v["pos"], "view " + vid + " pos", 3);
        if (g.pos->rows() != g.num_nodes()) throw DataError("view " + vid + " pos row count mismatch");
      }
      if (vid == kGeometryView && !g.pos) throw DataError("geometry view requires 'pos'");
      if (vid != kGeometryView && g.pos) throw DataError("only the geometry view may carry 'pos'");
      s.views.emplace(vid, std::move(g));
    }
    for (int m : s.motif) {
      const auto& first = s.views.begin()->second;
      if (m < 0 || static_cast<std::size_t>(m) >= first.num_nodes()) {
        throw DataError("motif node out of range");
      }
    }
    return s;
  } catch (const DataError& e) {
    throw DataError(where + e.what());
  } catch (const json::exception& e) {
    throw DataError(where + e.what());
  }
}

Dataset load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open dataset " + path);
  Dataset out;
  std::string line;
  std::size_t line_no = 0;
  std::map<std::string, std::size_t> feature_dims;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    MultiViewSample s = sample_from_json_line(line, line_no);
    const std::string where = "line " + std::to_string(line_no) + ": ";
    if (out.empty()) {
      for (const auto& [vid, g] : s.views) feature_dims[vid] = g.feature_dim();
    } else {
      for (const auto& [vid, dim] : feature_dims) {
        const auto it = s.views.find(vid);
        if (it == s.views.end()) throw DataError(where + "missing view " + vid);
        if (it->second.feature_dim() != dim) {
          throw DataError(where + "inconsistent feature_dim for view " + vid + ": " +
                          std::to_string(it->second.feature_dim()) + " vs " + std::to_string(dim));
        }
      }
      if (s.views.size() != feature_dims.size()) throw DataError(where + "unexpected extra view");
    }
    out.push_back(std::move(s));
  }
  return out;
}

void save_dataset(const Dataset& dataset, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write dataset " + path);
  for (const auto& s : dataset) out << sample_to_json_line(s) << '\n';
}

bool same_sample(const MultiViewSample& a, const MultiViewSample& b) {
  return a.id == b.id && a.y == b.y && a.planted_c == b.planted_c && a.views == b.views &&
         a.motif == b.motif;
}

}  // namespace clap::graphs
