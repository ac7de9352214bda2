#pragma once

// Randomized property suites over the statistic gradients, the compensation
// step and the aggregation clamp. Shared by the `diagnose` command and the
// acceptance checks.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace cbn::suites {

struct StatGradReport {
  std::size_t instances = 0;
  double max_rel_diag_mu = 0.0;  // closed form vs naive Jacobian diagonal
  double max_rel_diag_nu = 0.0;
  double max_rel_fd = 0.0;       // naive Jacobian vs central differences
  std::size_t offdiag_nonzero = 0;
  double seconds = 0.0;

  bool pass(double diag_tol = 1e-12, double fd_tol = 1e-6) const {
    return max_rel_diag_mu <= diag_tol && max_rel_diag_nu <= diag_tol && max_rel_fd <= fd_tol && offdiag_nonzero == 0;
  }
};

/// Random conv layers with extents in [1, 4], K in {1, 2, 3}, stride in {1, 2}.
StatGradReport stat_grad_suite(std::size_t instances, std::uint64_t seed);

/// Least-squares slope of log(y) against log(x); points with y <= 0 are skipped.
/// Returns NaN when fewer than two points remain.
double loglog_slope(const std::vector<double>& x, const std::vector<double>& y);

struct TaylorReport {
  std::vector<double> scales;
  std::size_t directions = 0;
  double slope_mu_comp = 0.0, slope_mu_stale = 0.0;
  double slope_nu_comp = 0.0, slope_nu_stale = 0.0;
  std::size_t zero_mu_comp = 0;  // points where the compensated mean error is exactly 0
  double max_mu_comp_error = 0.0;
  double max_mu_stale_error = 0.0;
  double max_nu_comp_error = 0.0;
  double seconds = 0.0;
};

/// Error of compensated and stale statistics against exact replay for
/// perturbations s * d of a fixed small conv layer, over random directions d
/// scaled to the weight's norm.
TaylorReport taylor_suite(std::uint64_t seed, std::size_t directions = 20,
                          std::vector<double> scales = {1e-3, 3e-3, 1e-2, 3e-2, 1e-1});

struct ClampReport {
  std::size_t trials = 0;
  std::size_t clamped_terms = 0;  // terms where max(nu, mu^2) picked mu^2
  std::size_t nu_violations = 0;  // nu-bar < mu-bar^2
  std::size_t var_violations = 0; // sigma-bar^2 < 0 or non-finite
  double seconds = 0.0;
};

/// Aggregations of random windows whose raw second moments are often invalid.
ClampReport clamp_fuzz(std::size_t trials, std::uint64_t seed);

}  // namespace cbn::suites
