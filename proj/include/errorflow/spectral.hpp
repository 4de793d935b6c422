// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "errorflow/core_risk.hpp"

namespace errorflow {

struct PowerState {
    std::vector<double> v;   // right singular direction estimate, unit norm
    double sigma_est = 0.0;  // top singular value estimate
    int iterations_used = 0;
};

/// Deterministic start vector: the normalized all-ones vector.
std::vector<double> default_power_start(int k);

/// Iterates v <- normalize(M^T M v) up to t_pi times, stopping early when
/// |sigma_t - sigma_{t-1}| <= tol * max(sigma_t, 1e-12). Convergence is on
/// sigma, not on v, so a degenerate top singular value is fine. A zero
/// matrix returns v0 unchanged with sigma_est = 0.
PowerState power_iteration(const FlowMatrix& m, std::vector<double> v0, int t_pi, double tol);

/// Stabilized estimate sqrt(||Mv||^2 + eps_spec) for a fixed unit vector v.
/// With eps_spec = 0 this is a Rayleigh-quotient lower bound on sigma_max.
double sigma_hat(const FlowMatrix& m, const std::vector<double>& v, double eps_spec);

/// d(sigma_hat)/dM = (M v v^T) / sigma_hat with v treated as fixed, the
/// within-refresh-window estimator. Returned row-major K x K; the diagonal
/// is reported as computed and must be zeroed by callers chaining through a
/// structurally zero-diagonal matrix. Throws on sigma_hat = 0.
std::vector<double> sigma_hat_grad(const FlowMatrix& m, const std::vector<double>& v,
                                   double eps_spec);

}  // namespace errorflow
