// SPDX-License-Identifier: Apache-2.0
#include "errorflow/pac_bayes.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "errorflow/rng.hpp"

namespace errorflow {

namespace {

void validate_posterior(const PosteriorSpec& ps) {
    if (ps.d_train < 1) throw std::invalid_argument("posterior: d_train must be >= 1");
    if (!(ps.sigma_q > 0.0)) throw std::invalid_argument("posterior: sigma_q must be > 0");
    if (!(ps.tau_p > 0.0)) throw std::invalid_argument("posterior: tau_p must be > 0");
    if (static_cast<int>(ps.mu.size()) != ps.d_train)
        throw std::invalid_argument("posterior: mu length must equal d_train");
}

}  // namespace

double gaussian_kl(const PosteriorSpec& ps) {
    validate_posterior(ps);
    double mu_sq = 0.0;
    for (double v : ps.mu) mu_sq += v * v;
    const double ratio = (ps.sigma_q * ps.sigma_q) / (ps.tau_p * ps.tau_p);
    return mu_sq / (2.0 * ps.tau_p * ps.tau_p) +
           0.5 * ps.d_train * (ratio - 1.0 - std::log(ratio));
}

BoundTerms pac_bound(const BoundInputs& b) {
    if (b.m_min < 1) throw std::invalid_argument("bound: m_min must be >= 1");
    if (b.k < 2) throw std::invalid_argument("bound: K must be >= 2");
    if (b.vsr_emp < 0.0) throw std::invalid_argument("bound: vsr must be >= 0");
    if (b.kl < 0.0) throw std::invalid_argument("bound: kl must be >= 0");
    if (!(b.delta > 0.0 && b.delta < 1.0))
        throw std::invalid_argument("bound: delta must be in (0,1)");
    BoundTerms t;
    t.term_spec = std::sqrt(static_cast<double>(b.k)) * b.vsr_emp;
    const double inner = b.kl + 2.0 * b.k * std::log(9.0) + std::log(2.0 / b.delta);
    t.term_complexity = 2.0 * std::sqrt(2.0 * b.k * inner / static_cast<double>(b.m_min));
    t.total = t.term_spec + t.term_complexity;
    return t;
}

double deterministic_bridge(const BridgeInputs& b) {
    if (!(b.eta > 0.0 && b.eta <= 1.0)) throw std::invalid_argument("bridge: eta must be in (0,1]");
    if (b.vwr_q < 0.0) throw std::invalid_argument("bridge: vwr must be >= 0");
    if (b.gamma < 0.0) throw std::invalid_argument("bridge: gamma must be >= 0");
    if (b.rho < 0.0 || b.rho > 1.0) throw std::invalid_argument("bridge: rho must be in [0,1]");
    return (1.0 / b.eta) * (1.0 + std::exp(b.gamma)) * b.vwr_q + b.rho;
}

double combined_bound(const BoundInputs& b, double gamma, double eta, double rho) {
    BridgeInputs br;
    br.vwr_q = pac_bound(b).total;
    br.gamma = gamma;
    br.eta = eta;
    br.rho = rho;
    return deterministic_bridge(br);
}

long long min_column_count(const FlowMatrix& m) {
    long long best = -1;
    for (int j = 0; j < m.k; ++j) {
        if (!m.column_mask[j]) continue;
        if (best < 0 || m.column_counts[j] < best) best = m.column_counts[j];
    }
    if (best < 0) throw std::invalid_argument("min_column_count: all columns masked");
    return best;
}

double estimate_logit_shift(const ToyModel& model_mean, const ToyModel& model_sample,
                            const std::vector<std::vector<double>>& eval_inputs) {
    if (eval_inputs.empty()) throw std::invalid_argument("logit shift: empty evaluation set");
    if (model_mean.kind != model_sample.kind || model_mean.k != model_sample.k ||
        model_mean.feature_dim != model_sample.feature_dim ||
        model_mean.hidden != model_sample.hidden)
        throw std::invalid_argument("logit shift: models must share architecture");
    double shift = 0.0;
    for (const auto& x : eval_inputs) {
        const ScoreVector a = forward(model_mean, x);
        const ScoreVector b = forward(model_sample, x);
        for (int k = 0; k < model_mean.k; ++k) shift = std::max(shift, std::fabs(b[k] - a[k]));
    }
    return shift;
}

std::vector<double> posterior_sample_weights(const PosteriorSpec& ps, int index,
                                             std::uint64_t seed) {
    validate_posterior(ps);
    CounterRng rng(seed, rng_tags::posterior, static_cast<std::uint64_t>(index));
    std::vector<double> w(ps.mu);
    for (double& v : w) v += ps.sigma_q * rng.normal();
    return w;
}

double estimate_rho(const PosteriorSpec& ps, const ModelFactory& factory,
                    const std::vector<std::vector<double>>& eval_inputs, double gamma,
                    int n_samples, std::uint64_t seed) {
    if (n_samples < 1) throw std::invalid_argument("estimate_rho: n_samples must be >= 1");
    if (gamma < 0.0) throw std::invalid_argument("estimate_rho: gamma must be >= 0");
    const ToyModel mean_model = factory(ps.mu);
    // sigma_q = 0 is the degenerate posterior: every sample is the mean.
    if (ps.sigma_q == 0.0) return 0.0;
    int exceed = 0;
    for (int i = 0; i < n_samples; ++i) {
        const ToyModel sample = factory(posterior_sample_weights(ps, i, seed));
        if (estimate_logit_shift(mean_model, sample, eval_inputs) > gamma / 2.0) ++exceed;
    }
    return static_cast<double>(exceed) / static_cast<double>(n_samples);
}

CertificateResult stability_certificate(double sensitivity, const PosteriorSpec& ps, double rho,
                                        double gamma) {
    if (sensitivity < 0.0)
        throw std::invalid_argument("certificate: sensitivity must be >= 0");
    if (!(rho > 0.0 && rho < 1.0))
        throw std::invalid_argument("certificate: rho must be in (0,1)");
    if (gamma < 0.0) throw std::invalid_argument("certificate: gamma must be >= 0");
    validate_posterior(ps);
    CertificateResult out;
    if (sensitivity == 0.0) {
        out.holds = true;
        out.max_sigma_q = std::numeric_limits<double>::infinity();
        return out;
    }
    const double concentration =
        std::sqrt(static_cast<double>(ps.d_train)) + std::sqrt(2.0 * std::log(1.0 / rho));
    out.max_sigma_q = (gamma / 2.0) / (sensitivity * concentration);
    out.holds = sensitivity * ps.sigma_q * concentration <= gamma / 2.0;
    return out;
}

double linear_score_sensitivity(const std::vector<std::vector<double>>& eval_inputs) {
    if (eval_inputs.empty()) throw std::invalid_argument("sensitivity: empty evaluation set");
    double best = 0.0;
    for (const auto& x : eval_inputs) {
        double sq = 1.0;  // bias coordinate
        for (double v : x) sq += v * v;
        best = std::max(best, std::sqrt(sq));
    }
    return best;
}

FlowMatrix posterior_average_flow_matrix(const ToyModel& mean_model, double sigma_q,
                                         const std::vector<std::vector<double>>& perturbed_inputs,
                                         const std::vector<int>& labels, const GateParams& gp,
                                         int n_samples, std::uint64_t seed) {
    if (n_samples < 1) throw std::invalid_argument("posterior average: n_samples must be >= 1");
    PosteriorSpec ps;
    ps.mu = mean_model.weights;
    ps.sigma_q = sigma_q;
    ps.tau_p = 1.0;
    ps.d_train = static_cast<int>(mean_model.weights.size());

    FlowMatrix avg;
    for (int i = 0; i < n_samples; ++i) {
        ToyModel sample = mean_model;
        sample.weights = posterior_sample_weights(ps, i, seed);
        std::vector<ScoreVector> scores;
        scores.reserve(perturbed_inputs.size());
        for (const auto& x : perturbed_inputs) scores.push_back(forward(sample, x));
        FlowMatrix m = build_flow_matrix(scores, labels, gp, /*gated=*/true);
        if (i == 0) {
            avg = m;
        } else {
            for (std::size_t e = 0; e < avg.entries.size(); ++e) avg.entries[e] += m.entries[e];
        }
    }
    for (double& e : avg.entries) e /= static_cast<double>(n_samples);
    return avg;
}

}  // namespace errorflow
