// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "errorflow/core_risk.hpp"
#include "errorflow/toy_model.hpp"

namespace errorflow {

/// Isotropic Gaussian posterior Q = N(mu, sigma_q^2 I) against prior
/// P = N(0, tau_p^2 I) over d_train trainable coordinates.
struct PosteriorSpec {
    std::vector<double> mu;
    double sigma_q = 1.0;
    double tau_p = 1.0;
    int d_train = 0;
};

struct BoundInputs {
    double vsr_emp = 0.0;  // empirical posterior spectral risk
    int k = 2;
    long long m_min = 1;  // smallest per-class sample count
    double kl = 0.0;
    double delta = 0.05;
};

struct BoundTerms {
    double term_spec = 0.0;
    double term_complexity = 0.0;
    double total = 0.0;
};

struct BridgeInputs {
    double vwr_q = 0.0;
    double gamma = 0.0;
    double eta = 0.5;
    double rho = 0.0;
};

struct CertificateResult {
    bool holds = false;
    double max_sigma_q = 0.0;  // +inf sentinel when any sigma_q works
};

/// KL(Q || P) for the isotropic Gaussian pair:
/// ||mu||^2 / (2 tau_p^2) + (d/2) (sigma_q^2/tau_p^2 - 1 - ln(sigma_q^2/tau_p^2)).
double gaussian_kl(const PosteriorSpec& ps);

/// High-probability control of the population worst-option risk:
/// sqrt(K) * vsr_emp + 2 sqrt(2K (kl + 2K ln 9 + ln(2/delta)) / m_min).
BoundTerms pac_bound(const BoundInputs& b);

/// Worst-class risk bound under (gamma, rho) logit stability:
/// eta^{-1} (1 + e^gamma) * vwr_q + rho.
double deterministic_bridge(const BridgeInputs& b);

/// Chains the bridge through the spectral bound:
/// eta^{-1} (1 + e^gamma) * pac_bound(b).total + rho.
double combined_bound(const BoundInputs& b, double gamma, double eta, double rho);

/// Smallest per-class count across unmasked columns. Throws when every
/// column is masked (the bound is undefined with no represented class).
long long min_column_count(const FlowMatrix& m);

/// Largest option-score shift between two same-architecture models over the
/// evaluation set: max over examples and options of |s_a(x,k) - s_b(x,k)|.
/// An under-estimate of the population sup, since the set is finite.
double estimate_logit_shift(const ToyModel& model_mean, const ToyModel& model_sample,
                            const std::vector<std::vector<double>>& eval_inputs);

using ModelFactory = std::function<ToyModel(const std::vector<double>&)>;

/// Coordinates of posterior sample `index`: mu + sigma_q * xi with xi drawn
/// from the (seed, posterior, index) stream. Shared by every posterior
/// consumer so samples pair up across estimates.
std::vector<double> posterior_sample_weights(const PosteriorSpec& ps, int index,
                                             std::uint64_t seed);

/// Monte Carlo estimate of the stability-failure probability: the fraction
/// of n_samples posterior draws whose logit shift exceeds gamma / 2.
double estimate_rho(const PosteriorSpec& ps, const ModelFactory& factory,
                    const std::vector<std::vector<double>>& eval_inputs, double gamma,
                    int n_samples, std::uint64_t seed);

/// Sufficient condition from Gaussian norm concentration:
/// sensitivity * sigma_q * (sqrt(d) + sqrt(2 ln(1/rho))) <= gamma / 2.
/// sensitivity is the caller-supplied Lipschitz or Jacobian-norm constant.
CertificateResult stability_certificate(double sensitivity, const PosteriorSpec& ps, double rho,
                                        double gamma);

/// Exact Jacobian-norm sensitivity of a linear model over the set:
/// max over examples of sqrt(||x||^2 + 1).
double linear_score_sensitivity(const std::vector<std::vector<double>>& eval_inputs);

/// Entrywise average of gated flow matrices over n_samples posterior draws,
/// each built on the same perturbed evaluation set.
FlowMatrix posterior_average_flow_matrix(const ToyModel& mean_model, double sigma_q,
                                         const std::vector<std::vector<double>>& perturbed_inputs,
                                         const std::vector<int>& labels, const GateParams& gp,
                                         int n_samples, std::uint64_t seed);

}  // namespace errorflow
