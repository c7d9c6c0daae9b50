#include "clap/config.hpp"

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "clap/error.hpp"

namespace clap::harness {
namespace {

using json = nlohmann::json;

struct Value {
  enum class Kind { kScalar, kString, kArray } kind = Kind::kScalar;
  std::string text;  // raw scalar token or unquoted string
  std::vector<Value> items;
};

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::string parse_quoted(const std::string& key, std::string_view s) {
  if (s.size() < 2 || s.front() != '"' || s.back() != '"') throw ConfigError(key, "unterminated string");
  std::string out;
  for (std::size_t i = 1; i + 1 < s.size(); ++i) {
    if (s[i] == '\\') {
      if (i + 2 >= s.size()) throw ConfigError(key, "dangling escape");
      const char c = s[++i];
      if (c != '"' && c != '\\') throw ConfigError(key, std::string("unsupported escape \\") + c);
      out.push_back(c);
    } else if (s[i] == '"') {
      throw ConfigError(key, "stray quote in string");
    } else {
      out.push_back(s[i]);
    }
  }
  return out;
}

Value parse_scalar(const std::string& key, const std::string& s) {
  if (s.empty()) throw ConfigError(key, "missing value");
  if (s.front() == '"') return {Value::Kind::kString, parse_quoted(key, s), {}};
  if (s.find_first_of("\"[]") != std::string::npos) throw ConfigError(key, "malformed value '" + s + "'");
  return {Value::Kind::kScalar, s, {}};
}

Value parse_value(const std::string& key, const std::string& raw) {
  const std::string s = trim(raw);
  if (!s.empty() && s.front() == '[') {
    if (s.back() != ']') throw ConfigError(key, "unterminated array");
    Value v{Value::Kind::kArray, s, {}};
    const std::string body = trim(std::string_view(s).substr(1, s.size() - 2));
    if (body.empty()) return v;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < body.size(); ++i) {
      const char c = body[i];
      if (c == '\\' && quoted && i + 1 < body.size()) {
        cur.push_back(c);
        cur.push_back(body[++i]);
        continue;
      }
      if (c == '"') quoted = !quoted;
      if (c == ',' && !quoted) {
        v.items.push_back(parse_scalar(key, trim(cur)));
        cur.clear();
      } else {
        cur.push_back(c);
      }
    }
    v.items.push_back(parse_scalar(key, trim(cur)));
    return v;
  }
  return parse_scalar(key, s);
}

// Strip a trailing comment, ignoring '#' inside quotes.
std::string strip_comment(const std::string& line) {
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '\\' && quoted) {
      ++i;
    } else if (line[i] == '"') {
      quoted = !quoted;
    } else if (line[i] == '#' && !quoted) {
      return line.substr(0, i);
    }
  }
  return line;
}

const Value& scalar(const std::string& key, const Value& v) {
  if (v.kind == Value::Kind::kArray) throw ConfigError(key, "expected a scalar, got an array");
  return v;
}

double as_double(const std::string& key, const Value& v) {
  const auto& s = scalar(key, v);
  if (s.kind != Value::Kind::kScalar) throw ConfigError(key, "expected a number");
  double out = 0.0;
  const char* end = s.text.data() + s.text.size();
  const auto [p, ec] = std::from_chars(s.text.data(), end, out);
  if (ec != std::errc() || p != end || !std::isfinite(out)) {
    throw ConfigError(key, "expected a number, got '" + s.text + "'");
  }
  return out;
}

std::uint64_t as_u64(const std::string& key, const Value& v) {
  const auto& s = scalar(key, v);
  std::uint64_t out = 0;
  const char* end = s.text.data() + s.text.size();
  const auto [p, ec] = std::from_chars(s.text.data(), end, out);
  if (s.kind != Value::Kind::kScalar || ec != std::errc() || p != end) {
    throw ConfigError(key, "expected a non-negative integer, got '" + s.text + "'");
  }
  return out;
}

std::size_t as_size(const std::string& key, const Value& v) { return static_cast<std::size_t>(as_u64(key, v)); }

bool as_bool(const std::string& key, const Value& v) {
  const auto& s = scalar(key, v);
  if (s.kind == Value::Kind::kScalar && s.text == "true") return true;
  if (s.kind == Value::Kind::kScalar && s.text == "false") return false;
  throw ConfigError(key, "expected true or false, got '" + s.text + "'");
}

std::string as_string(const std::string& key, const Value& v) {
  const auto& s = scalar(key, v);
  if (s.kind != Value::Kind::kString) throw ConfigError(key, "expected a quoted string");
  return s.text;
}

const std::vector<Value>& as_array(const std::string& key, const Value& v) {
  if (v.kind != Value::Kind::kArray) throw ConfigError(key, "expected an array");
  return v.items;
}

template <class F>
auto map_array(const std::string& key, const Value& v, F f) {
  std::vector<decltype(f(key, v))> out;
  for (const auto& item : as_array(key, v)) out.push_back(f(key, item));
  return out;
}

using Setter = std::function<void(RunConfig&, const std::string&, const Value&)>;

const std::vector<std::pair<std::string, Setter>>& schema() {
  static const std::vector<std::pair<std::string, Setter>> table = {
      {"data.path", [](RunConfig& c, auto& k, auto& v) { c.data.path = as_string(k, v); }},
      {"data.n", [](RunConfig& c, auto& k, auto& v) { c.data.n = as_size(k, v); }},
      {"data.seed", [](RunConfig& c, auto& k, auto& v) { c.data.synthetic.seed = as_u64(k, v); }},
      {"data.theta", [](RunConfig& c, auto& k, auto& v) { c.data.synthetic.theta = as_double(k, v); }},
      {"data.noise_sd", [](RunConfig& c, auto& k, auto& v) { c.data.synthetic.noise_sd = as_double(k, v); }},
      {"data.kappa",
       [](RunConfig& c, auto& k, auto& v) { c.data.kappa = as_double(k, v); }},
      {"data.context_strength",
       [](RunConfig& c, auto& k, auto& v) {
         c.data.synthetic.context_strength = as_double(k, v);
         c.train.context_strength = c.data.synthetic.context_strength;
       }},
      {"data.min_nodes", [](RunConfig& c, auto& k, auto& v) { c.data.synthetic.min_nodes = as_size(k, v); }},
      {"data.max_nodes", [](RunConfig& c, auto& k, auto& v) { c.data.synthetic.max_nodes = as_size(k, v); }},
      {"data.motif_size", [](RunConfig& c, auto& k, auto& v) { c.data.synthetic.motif_size = as_size(k, v); }},
      {"data.motif_boost", [](RunConfig& c, auto& k, auto& v) { c.data.synthetic.motif_boost = as_double(k, v); }},
      {"data.n_views", [](RunConfig& c, auto& k, auto& v) { c.data.synthetic.n_views = as_size(k, v); }},
      {"data.feature_dim", [](RunConfig& c, auto& k, auto& v) { c.data.synthetic.feature_dim = as_size(k, v); }},
      {"data.test_fraction", [](RunConfig& c, auto& k, auto& v) { c.data.test_fraction = as_double(k, v); }},

      {"train.epochs", [](RunConfig& c, auto& k, auto& v) { c.train.epochs = as_size(k, v); }},
      {"train.batch_size", [](RunConfig& c, auto& k, auto& v) { c.train.batch_size = as_size(k, v); }},
      {"train.learning_rate", [](RunConfig& c, auto& k, auto& v) { c.train.learning_rate = as_double(k, v); }},
      {"train.optimizer",
       [](RunConfig& c, auto& k, auto& v) {
         try {
           c.train.optimizer = trainer::parse_optimizer(as_string(k, v));
         } catch (const ConfigError&) {
           throw;
         } catch (const Error& e) {
           throw ConfigError(k, e.what());
         }
       }},
      {"train.seed", [](RunConfig& c, auto& k, auto& v) { c.train.seed = as_u64(k, v); }},
      {"train.patience", [](RunConfig& c, auto& k, auto& v) { c.train.patience = as_size(k, v); }},
      {"train.val_fraction", [](RunConfig& c, auto& k, auto& v) { c.train.val_fraction = as_double(k, v); }},
      {"train.clip_norm", [](RunConfig& c, auto& k, auto& v) { c.train.clip_norm = as_double(k, v); }},

      {"objective.rho_min", [](RunConfig& c, auto& k, auto& v) { c.train.objective.rho_min = as_double(k, v); }},
      {"objective.rho_max", [](RunConfig& c, auto& k, auto& v) { c.train.objective.rho_max = as_double(k, v); }},
      {"objective.margin", [](RunConfig& c, auto& k, auto& v) { c.train.objective.margin = as_double(k, v); }},
      {"objective.eps", [](RunConfig& c, auto& k, auto& v) { c.train.objective.eps = as_double(k, v); }},
      {"objective.lambda_caus",
       [](RunConfig& c, auto& k, auto& v) { c.train.objective.lambda_caus = as_double(k, v); }},
      {"objective.lambda_mono",
       [](RunConfig& c, auto& k, auto& v) { c.train.objective.lambda_mono = as_double(k, v); }},
      {"objective.lambda_unif",
       [](RunConfig& c, auto& k, auto& v) { c.train.objective.lambda_unif = as_double(k, v); }},
      {"objective.lambda_cons",
       [](RunConfig& c, auto& k, auto& v) { c.train.objective.lambda_cons = as_double(k, v); }},
      {"objective.disable_split",
       [](RunConfig& c, auto& k, auto& v) { c.train.objective.disable_split = as_bool(k, v); }},
      {"objective.disable_schedule",
       [](RunConfig& c, auto& k, auto& v) { c.train.objective.disable_schedule = as_bool(k, v); }},
      {"objective.disable_trivial",
       [](RunConfig& c, auto& k, auto& v) { c.train.objective.disable_trivial = as_bool(k, v); }},
      {"objective.disable_mono",
       [](RunConfig& c, auto& k, auto& v) { c.train.objective.disable_mono = as_bool(k, v); }},
      {"objective.average_causal",
       [](RunConfig& c, auto& k, auto& v) { c.train.objective.average_causal = as_bool(k, v); }},

      {"model.depth", [](RunConfig& c, auto& k, auto& v) { c.train.model.depth = as_size(k, v); }},
      {"model.hidden", [](RunConfig& c, auto& k, auto& v) { c.train.model.encoder.hidden = as_size(k, v); }},
      {"model.embed_dim", [](RunConfig& c, auto& k, auto& v) { c.train.model.encoder.embed_dim = as_size(k, v); }},
      {"model.rounds", [](RunConfig& c, auto& k, auto& v) { c.train.model.encoder.rounds = as_size(k, v); }},
      {"model.temperature", [](RunConfig& c, auto& k, auto& v) { c.train.model.temperature = as_double(k, v); }},
      {"model.pool_eps", [](RunConfig& c, auto& k, auto& v) { c.train.model.pool_eps = as_double(k, v); }},
      {"model.seed", [](RunConfig& c, auto& k, auto& v) { c.train.model.seed = as_u64(k, v); }},
      {"model.views", [](RunConfig& c, auto& k, auto& v) { c.views = map_array(k, v, as_string); }},
      {"model.context_channel",
       [](RunConfig& c, auto& k, auto& v) { c.train.model.encoder.context_channel = as_bool(k, v); }},

      {"output.dir", [](RunConfig& c, auto& k, auto& v) { c.output_dir = as_string(k, v); }},
      {"eval.checkpoint", [](RunConfig& c, auto& k, auto& v) { c.checkpoint = as_string(k, v); }},

      {"intervene.batch_sizes",
       [](RunConfig& c, auto& k, auto& v) { c.intervene.batch_sizes = map_array(k, v, as_size); }},
      {"intervene.shuffle", [](RunConfig& c, auto& k, auto& v) { c.intervene.shuffles = map_array(k, v, as_bool); }},
      {"intervene.seed", [](RunConfig& c, auto& k, auto& v) { c.intervene.seed = as_u64(k, v); }},

      {"saliency.layers", [](RunConfig& c, auto& k, auto& v) { c.saliency.layers = map_array(k, v, as_size); }},
      {"saliency.samples", [](RunConfig& c, auto& k, auto& v) { c.saliency.samples = as_size(k, v); }},

      {"sweep.axis",
       [](RunConfig& c, auto& k, auto& v) {
         const auto axis = as_string(k, v);
         if (axis == "depth") {
           c.sweep.axis = trainer::SweepAxis::kDepth;
         } else if (axis == "rho_max") {
           c.sweep.axis = trainer::SweepAxis::kRhoMax;
         } else {
           throw ConfigError(k, "expected \"depth\" or \"rho_max\", got \"" + axis + "\"");
         }
       }},
      {"sweep.values", [](RunConfig& c, auto& k, auto& v) { c.sweep.values = map_array(k, v, as_double); }},

      {"ablate.variants", [](RunConfig& c, auto& k, auto& v) { c.ablate.variants = map_array(k, v, as_string); }},
      {"ablate.seeds", [](RunConfig& c, auto& k, auto& v) { c.ablate.seeds = map_array(k, v, as_u64); }},

      {"theory.scenario", [](RunConfig& c, auto& k, auto& v) { c.theory.scenario = as_string(k, v); }},
      {"theory.mc_draws", [](RunConfig& c, auto& k, auto& v) { c.theory.mc_draws = as_size(k, v); }},
      {"theory.residual_samples",
       [](RunConfig& c, auto& k, auto& v) { c.theory.residual_samples = as_size(k, v); }},
      {"theory.seed", [](RunConfig& c, auto& k, auto& v) { c.theory.seed = as_u64(k, v); }},
  };
  return table;
}

void apply(RunConfig& c, const std::string& key, const Value& v) {
  for (const auto& [name, setter] : schema()) {
    if (name == key) {
      setter(c, key, v);
      return;
    }
  }
  throw ConfigError(key, "unknown key");
}

}  // namespace

graphs::SynthScenario DataSource::scenario() const {
  graphs::SynthScenario s = synthetic;
  if (kappa) {
    try {
      s.noise_sd = graphs::noise_sd_for_kappa(s.theta, *kappa);
    } catch (const Error& e) {
      throw ConfigError("data.kappa", e.what());
    }
  }
  return s;
}

void RunConfig::validate() const {
  train.validate();
  if (data.path && !std::filesystem::exists(*data.path)) {
    throw ConfigError("data.path", "file not found: " + *data.path);
  }
  if (checkpoint && !std::filesystem::exists(*checkpoint)) {
    throw ConfigError("eval.checkpoint", "file not found: " + *checkpoint);
  }
  if (!data.path && data.n < 8) throw ConfigError("data.n", "must be at least 8");
  if (!(data.test_fraction > 0.0 && data.test_fraction < 1.0)) {
    throw ConfigError("data.test_fraction", "must lie in (0, 1)");
  }
  if (!data.path) (void)data.scenario();
  if (data.synthetic.context_strength < 0.0) throw ConfigError("data.context_strength", "must be non-negative");
  if (output_dir.empty()) throw ConfigError("output.dir", "must not be empty");
  if (intervene.batch_sizes.empty()) throw ConfigError("intervene.batch_sizes", "must not be empty");
  if (intervene.shuffles.empty()) throw ConfigError("intervene.shuffle", "must not be empty");
  for (auto b : intervene.batch_sizes) {
    if (b < 2) throw ConfigError("intervene.batch_sizes", "every batch size must be at least 2");
  }
  for (auto l : saliency.layers) {
    if (l < 1 || l > train.model.depth) throw ConfigError("saliency.layers", "layers must lie in [1, depth]");
  }
  if (sweep.values.empty()) throw ConfigError("sweep.values", "must not be empty");
  if (ablate.seeds.empty()) throw ConfigError("ablate.seeds", "must not be empty");
  if (theory.scenario != "default") throw ConfigError("theory.scenario", "only \"default\" is defined");
  if (theory.mc_draws < 1000) throw ConfigError("theory.mc_draws", "must be at least 1000");
  if (theory.residual_samples < 1000) throw ConfigError("theory.residual_samples", "must be at least 1000");
}

RunConfig parse_config(std::string_view text, RunConfig base) {
  std::istringstream in{std::string(text)};
  std::string line, section;
  std::set<std::string> seen;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string body = trim(strip_comment(line));
    if (body.empty()) continue;
    const std::string where = "line " + std::to_string(line_no);
    if (body.front() == '[' && body.find('=') == std::string::npos) {
      if (body.back() != ']') throw ConfigError(where, "malformed section header");
      section = trim(std::string_view(body).substr(1, body.size() - 2));
      if (section.empty() || section.find_first_of(" .[]") != std::string::npos) {
        throw ConfigError(where, "bad section name '" + section + "'");
      }
      continue;
    }
    const auto eq = body.find('=');
    if (eq == std::string::npos) throw ConfigError(where, "expected 'key = value'");
    const std::string key = trim(std::string_view(body).substr(0, eq));
    if (key.empty()) throw ConfigError(where, "missing key");
    const std::string dotted = section.empty() ? key : section + "." + key;
    if (!seen.insert(dotted).second) throw ConfigError(dotted, "repeated key");
    apply(base, dotted, parse_value(dotted, body.substr(eq + 1)));
  }
  if (seen.count("data.kappa") && seen.count("data.noise_sd")) {
    throw ConfigError("data.kappa", "give either kappa or noise_sd, not both");
  }
  return base;
}

RunConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("config", "cannot open " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str());
}

void set_key(RunConfig& config, const std::string& dotted_key, const std::string& value) {
  apply(config, dotted_key, parse_value(dotted_key, value));
}

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto& [name, _] : schema()) out.push_back(name);
  return out;
}

json to_json(const RunConfig& c) {
  const auto& sc = c.data.synthetic;
  json data = {{"n", c.data.n},
               {"kappa", c.data.kappa ? json(*c.data.kappa) : json(nullptr)},
               {"test_fraction", c.data.test_fraction},
               {"seed", sc.seed},
               {"theta", sc.theta},
               {"noise_sd", sc.noise_sd},
               {"context_strength", sc.context_strength},
               {"min_nodes", sc.min_nodes},
               {"max_nodes", sc.max_nodes},
               {"motif_size", sc.motif_size},
               {"motif_boost", sc.motif_boost},
               {"n_views", sc.n_views},
               {"feature_dim", sc.feature_dim}};
  data["path"] = c.data.path ? json(*c.data.path) : json(nullptr);
  std::vector<int> shuffles(c.intervene.shuffles.begin(), c.intervene.shuffles.end());
  json j = {
      {"data", data},
      {"train", trainer::to_json(c.train)},
      {"views", c.views ? json(*c.views) : json(nullptr)},
      {"output_dir", c.output_dir},
      {"checkpoint", c.checkpoint ? json(*c.checkpoint) : json(nullptr)},
      {"intervene", {{"batch_sizes", c.intervene.batch_sizes}, {"shuffle", shuffles}, {"seed", c.intervene.seed}}},
      {"saliency", {{"layers", c.saliency.layers}, {"samples", c.saliency.samples}}},
      {"sweep",
       {{"axis", c.sweep.axis == trainer::SweepAxis::kDepth ? "depth" : "rho_max"}, {"values", c.sweep.values}}},
      {"ablate", {{"variants", c.ablate.variants}, {"seeds", c.ablate.seeds}}},
      {"theory",
       {{"scenario", c.theory.scenario},
        {"mc_draws", c.theory.mc_draws},
        {"residual_samples", c.theory.residual_samples},
        {"seed", c.theory.seed}}},
  };
  return j;
}

std::string config_hash(const RunConfig& config) {
  // The output directory does not change any result.
  json j = to_json(config);
  j.erase("output_dir");
  const std::string text = j.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace clap::harness
