#pragma once

#include <cmath>
#include <numeric>
#include <vector>

#include "clap/graphs.hpp"
#include "clap/peeling.hpp"

namespace fixtures {

inline clap::peeling::ModelConfig small_model(std::size_t depth = 3, std::uint64_t seed = 1) {
  clap::peeling::ModelConfig cfg;
  cfg.encoder = {.feature_dim = 4, .hidden = 6, .embed_dim = 5, .rounds = 1};
  cfg.depth = depth;
  cfg.seed = seed;
  return cfg;
}

inline clap::graphs::Dataset small_data(std::size_t n = 8, std::uint64_t seed = 2) {
  clap::graphs::SynthScenario sc;
  sc.feature_dim = 4;
  sc.min_nodes = 4;
  sc.max_nodes = 7;
  sc.motif_size = 2;
  sc.seed = seed;
  return clap::graphs::generate_synthetic(sc, n);
}

inline clap::graphs::Batch whole_batch(const clap::graphs::Dataset& d, double context_strength = 0.0) {
  clap::graphs::BatchingOptions opt;
  opt.batch_size = d.size();
  opt.shuffle = false;
  opt.context_strength = context_strength;
  return clap::graphs::assemble_batches(d, opt).front();
}

inline double pearson_ref(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double num = 0, sa = 0, sb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += (a[i] - ma) * (b[i] - mb);
    sa += (a[i] - ma) * (a[i] - ma);
    sb += (b[i] - mb) * (b[i] - mb);
  }
  return num / std::sqrt(sa * sb);
}

}  // namespace fixtures
