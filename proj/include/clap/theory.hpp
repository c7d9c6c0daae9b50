#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace clap::theory {

/// Within-batch moments of batch e.
struct BatchMoments {
  double alpha = 0.0;    // Corr(q, y)
  double rho = 0.0;      // Corr(c, q)
  double sigma_c = 1.0;
  double sigma_q = 1.0;
  double sigma_y = 1.0;
};

/// Predictor s = a*c + b*q scored by within-batch Pearson correlation with y.
struct TheoryScenario {
  double a = 1.0;
  double b = 0.0;
  double kappa = 0.8;  // Corr(c, y), the same in every batch
  std::vector<BatchMoments> batches;
  double rho_star = 0.8;  // correlation target
  std::size_t batch_size = 16;
  double theta = 1.0;
  double var_eta = 0.5625;

  /// Throws when a sigma is not positive, a correlation leaves [-1, 1], or
  /// the (c, q, y) correlation matrix of some batch is not positive definite.
  void validate() const;
};

/// Four batches with distinct context correlations, a = 1, b = 0, rho* = kappa.
TheoryScenario default_scenario();

double coeff_A(const TheoryScenario& s, std::size_t e);  // a * sigma_c
double coeff_B(const TheoryScenario& s, std::size_t e);  // b * sigma_q
double coeff_D(const TheoryScenario& s, std::size_t e);  // sqrt(A^2 + B^2 + 2AB rho)

/// (A kappa + B alpha) / D.
double corr_closed_form(const TheoryScenario& s, std::size_t e);
/// Same with (a, b) overridden.
double corr_at(const TheoryScenario& s, std::size_t e, double a, double b);

/// Gamma_e = sigma_q / |A| * (alpha - kappa rho), the b-derivative at b = 0.
double sensitivity_at_invariant(const TheoryScenario& s, std::size_t e);
/// delta_e(0) = A kappa / |A| - rho*.
double delta_at_invariant(const TheoryScenario& s, std::size_t e);
/// b* = -sum delta_e(0) Gamma_e / sum Gamma_e^2.
double b_star(const TheoryScenario& s);

/// sum_e (Corr_e(a, b) - rho*)^2.
double surrogate(const TheoryScenario& s, double a, double b);
/// Closed-form d surrogate / db at b = 0: 2 (kappa - rho*) sum Gamma_e for a > 0.
double surrogate_slope_at_invariant(const TheoryScenario& s);

/// kappa = theta Var(c) / sqrt(Var(c) (theta^2 Var(c) + Var(eta))).
double kappa_from_model(double theta, double var_c, double var_eta);

/// Minimizer of surrogate(a, b) over b in [lo, hi] with `a` fixed.
double argmin_b(const TheoryScenario& s, double a, double lo, double hi);

struct GateReport {
  double a = 0.0;
  double b = 0.0;
  double ratio = 0.0;       // |b| / |a|
  double dispersion = 0.0;  // population sd of Corr_e across batches
  double objective = 0.0;
  bool non_identifiable = false;
};

/// Minimize the dispersion surrogate over the direction of (a, b) (the
/// correlation is invariant to positive rescaling of both). `budget` is the
/// number of grid points before golden-section refinement.
GateReport invariance_gate(const TheoryScenario& s, std::size_t budget = 2001);

/// Monte-Carlo Pearson(s, y) from `draws` jointly Gaussian (c, q, y).
double monte_carlo_corr(const TheoryScenario& s, std::size_t e, std::size_t draws, std::uint64_t seed);

struct Decomposition {
  double noise_term = 0.0;   // E[Var(r | x)]
  double bias_term = 0.0;    // E[(E[r | x])^2]
  double risk_before = 0.0;  // E[r^2]
  double risk_after = 0.0;   // E[(r - t*(x))^2]
  std::vector<double> bin_means;
};

/// Residual r = y - y_c decomposed over discrete x (bins 0..num_bins-1).
/// Throws naming the empty bins if any bin has no samples.
Decomposition residual_decomposition(const std::vector<std::size_t>& bins, const std::vector<double>& y,
                                     const std::vector<double>& y_c, std::size_t num_bins);

struct CheckRecord {
  std::string name;
  double predicted = 0.0;
  double observed = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

struct VerifyOptions {
  std::size_t mc_draws = 1000000;
  std::size_t residual_samples = 100000;
  std::uint64_t seed = 0;
};

/// Every numerical witness of the invariance theory, one record per check.
std::vector<CheckRecord> verify_all(const TheoryScenario& s, const VerifyOptions& options = {});

}  // namespace clap::theory
