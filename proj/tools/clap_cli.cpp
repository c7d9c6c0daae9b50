// Command-line entry point: clap <command> [--config FILE] [--set key=value ...]
#include <algorithm>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "clap/config.hpp"
#include "clap/error.hpp"
#include "clap/harness.hpp"

namespace {

using clap::harness::RunConfig;

struct Flags {
  std::string config_path;
  std::vector<std::string> sets;
  std::string out;
  std::string checkpoint;
  std::vector<std::string> variants;
  std::string scenario;
  long long seed = -1;
};

void add_common(CLI::App* sub, Flags& f) {
  sub->add_option("-c,--config", f.config_path, "TOML-like config file");
  sub->add_option("--set", f.sets, "Override one key, e.g. --set train.epochs=20 (repeatable)");
  sub->add_option("-o,--out", f.out, "Output directory");
  sub->add_option("--seed", f.seed, "Seed for training and model initialization")->check(CLI::NonNegativeNumber);
}

RunConfig build_config(const Flags& f) {
  RunConfig c = f.config_path.empty() ? RunConfig{} : clap::harness::load_config(f.config_path);
  if (!f.out.empty()) c.output_dir = f.out;
  if (!f.checkpoint.empty()) c.checkpoint = f.checkpoint;
  if (!f.variants.empty()) c.ablate.variants = f.variants;
  if (!f.scenario.empty()) c.theory.scenario = f.scenario;
  if (f.seed >= 0) {
    c.train.seed = static_cast<std::uint64_t>(f.seed);
    c.train.model.seed = static_cast<std::uint64_t>(f.seed);
  }
  for (const auto& s : f.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw clap::ConfigError(s, "--set expects key=value");
    clap::harness::set_key(c, s.substr(0, eq), s.substr(eq + 1));
  }
  return c;
}

int fail(const std::string& command, const std::exception& e, int code) {
  std::cout << clap::harness::error_record(command, e).dump() << std::endl;
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Causal layerwise peeling: training, evaluation and analysis"};
  app.require_subcommand(1, 1);
  Flags flags;
  const std::vector<std::pair<std::string, std::string>> help = {
      {"gen-data", "Generate the configured synthetic dataset as JSONL"},
      {"train", "Train a model and write checkpoint, metrics log and report"},
      {"eval", "Evaluate a checkpoint on the test split"},
      {"sweep", "Train one model per depth or rho_max value"},
      {"intervene", "Re-batch the test split and measure the correlation spread"},
      {"saliency", "Write causal saliency maps as JSON and SVG"},
      {"verify-theory", "Run the numerical checks of the invariance theory"},
      {"ablate", "Train the ablation variants over several seeds"},
  };
  for (const auto& [name, text] : help) {
    auto* sub = app.add_subcommand(name, text);
    add_common(sub, flags);
    if (name == "eval" || name == "intervene" || name == "saliency") {
      sub->add_option("--checkpoint", flags.checkpoint, "Checkpoint to load instead of training");
    }
    if (name == "ablate") sub->add_option("--variant", flags.variants, "Variant id (repeatable)");
    if (name == "verify-theory") sub->add_option("--scenario", flags.scenario, "Theory scenario");
  }

  std::string command = "cli";
  if (argc > 1 && argv[1][0] != '-') {
    const auto& known = clap::harness::commands();
    if (std::find(known.begin(), known.end(), std::string(argv[1])) == known.end()) {
      return fail(command, clap::ConfigError("command", "unknown command '" + std::string(argv[1]) + "'"), 2);
    }
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail(command, clap::ConfigError("arguments", e.what()), 2);
  }
  command = app.get_subcommands().front()->get_name();
  try {
    const RunConfig config = build_config(flags);
    clap::harness::run_command(command, config, std::cout);
  } catch (const clap::ConfigError& e) {
    return fail(command, e, 2);
  } catch (const std::exception& e) {
    return fail(command, e, 1);
  }
  return 0;
}
