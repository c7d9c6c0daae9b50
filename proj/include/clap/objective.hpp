#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "clap/autodiff.hpp"
#include "clap/peeling.hpp"

namespace clap::objective {

struct ObjectiveConfig {
  double rho_min = 0.5;
  double rho_max = 0.8;
  double margin = 0.0;  // hinge margin gamma
  double eps = 1e-8;
  double lambda_caus = 1.0;
  double lambda_mono = 0.5;
  double lambda_unif = 1.0;
  double lambda_cons = 0.0;

  // Ablations.
  bool disable_split = false;     // every auxiliary weight set to zero
  bool disable_schedule = false;  // no correlation loss
  bool disable_trivial = false;   // predict from y_c* alone
  bool disable_mono = false;
  bool average_causal = false;    // y_c* := mean over layers of C

  void validate() const;
};

/// Loss weights after ablation flags are applied.
struct Weights {
  double caus = 0.0;
  double mono = 0.0;
  double unif = 0.0;
  double cons = 0.0;
};
Weights effective_weights(const ObjectiveConfig& config);

struct LossBreakdown {
  double pred = 0.0;
  double corr = 0.0;
  double mono = 0.0;
  double triv = 0.0;
  double cons = 0.0;
  double total = 0.0;
  std::vector<double> layer_corr;
  std::vector<double> targets;
};

/// Batch-centered Pearson correlation <c~, y~> / (|c~| |y~| + eps).
double pearson(std::span<const double> c, std::span<const double> y, double eps);
ad::Var pearson_batch(ad::Var c, ad::Var y, double eps);

/// Target for 1-based `layer` of `depth`; depth 1 gets rho_max.
double rho_schedule(std::size_t layer, std::size_t depth, double rho_min, double rho_max);
std::vector<double> rho_targets(std::size_t depth, double rho_min, double rho_max);

struct CorrLoss {
  ad::Var loss;
  std::vector<ad::Var> corrs;
};

/// (1/L) sum_l (corr_l - rho_l)^2 over the columns of C.
CorrLoss corr_loss(std::span<const ad::Var> causal_cols, ad::Var y, std::span<const double> targets,
                   double eps);
/// (1/(L-1)) sum_l max(0, corr_l - corr_{l+1} + margin); zero for L = 1.
ad::Var mono_loss(std::span<const ad::Var> corrs, double margin);
/// MSE(t_sum, y - stop_gradient(y_c_star)).
ad::Var triv_loss(ad::Var t_sum, ad::Var y, ad::Var y_c_star);
/// Mean over view pairs of 1 - cosine(z_a, z_b); zero for fewer than 2 views.
ad::Var consistency_loss(ad::Tape& tape, std::span<const ad::Var> per_view, double eps);
ad::Var mse(ad::Var prediction, ad::Var target);

struct TotalLoss {
  ad::Var total;
  ad::Var prediction;  // B×1
  ad::Var y_c_star;    // readout actually used (last layer or layer mean)
  LossBreakdown breakdown;
};

TotalLoss total_loss(ad::Tape& tape, const peeling::PeelGraph& graph, std::span<const double> y,
                     const ObjectiveConfig& config);

/// Prediction rule applied to a numeric trace (same rule as total_loss).
std::vector<double> predict(const peeling::PeelTrace& trace, const ObjectiveConfig& config);

}  // namespace clap::objective
