// SPDX-License-Identifier: Apache-2.0
#include "errorflow/train.hpp"

#include <cmath>
#include <stdexcept>

namespace errorflow {

FlowMatrix batch_flow_matrix(const ToyModel& model, const PairedBatch& batch,
                             const GateParams& gp) {
    std::vector<ScoreVector> scores;
    scores.reserve(batch.perturbed_inputs.size());
    for (const auto& x : batch.perturbed_inputs) scores.push_back(forward(model, x));
    return build_flow_matrix(scores, batch.labels, gp, /*gated=*/true);
}

RegTerm r_spec_and_grad(const ToyModel& model, const PairedBatch& batch, const GateParams& gp,
                        const std::vector<double>& v, double eps_spec, int* tie_count) {
    if (batch.perturbed_inputs.empty()) throw std::invalid_argument("r_spec: empty batch");
    validate_gate(gp);

    const FlowMatrix m = batch_flow_matrix(model, batch, gp);
    RegTerm out;
    out.value = sigma_hat(m, v, eps_spec);
    out.grad.assign(model.weights.size(), 0.0);
    if (tie_count) *tie_count = 0;

    // Entirely closed matrix with eps_spec = 0: the value is 0 and so is
    // the (sub)gradient.
    if (out.value == 0.0) return out;

    // dsigma/dM with v fixed; diagonal zeroed because M_jj is structural.
    std::vector<double> g_m = sigma_hat_grad(m, v, eps_spec);
    for (int j = 0; j < m.k; ++j) g_m[static_cast<std::size_t>(j) * m.k + j] = 0.0;

    for (std::size_t r = 0; r < batch.perturbed_inputs.size(); ++r) {
        const int y = batch.labels[r];
        const long long m_y = m.column_counts[y];
        if (m_y == 0) continue;
        const ScoreVector s = forward(model, batch.perturbed_inputs[r]);
        const OptionDistribution p = softmax(s);
        const double delta = margin(s, y);
        const double gv = gate(delta, gp);
        const double gd = gate_grad(delta, gp);
        const int comp = lowest_top_competitor(s, y);
        if (tie_count) {
            int hits = 0;
            for (int k = 0; k < m.k; ++k)
                if (k != y && s[k] == s[comp]) ++hits;
            if (hits > 1) ++(*tie_count);
        }

        // q = column y of the matrix cotangent, diagonal entry zero.
        double q_dot_p = 0.0;
        for (int i = 0; i < m.k; ++i)
            q_dot_p += g_m[static_cast<std::size_t>(i) * m.k + y] * p[i];

        std::vector<double> ds(m.k, 0.0);
        const double inv_m = 1.0 / static_cast<double>(m_y);
        for (int i = 0; i < m.k; ++i) {
            const double qi = g_m[static_cast<std::size_t>(i) * m.k + y];
            ds[i] += inv_m * gv * (qi * p[i] - q_dot_p * p[i]);
        }
        ds[y] += inv_m * gd * q_dot_p;
        ds[comp] -= inv_m * gd * q_dot_p;
        backward_weights(model, batch.perturbed_inputs[r], ds, out.grad);
    }
    return out;
}

namespace {

double kl_categorical(const OptionDistribution& a, const OptionDistribution& b) {
    double v = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) {
        if (a[k] <= 0.0) continue;
        v += a[k] * (std::log(a[k]) - std::log(b[k]));
    }
    return std::max(0.0, v);
}

}  // namespace

RegTerm r_stab_with_noise(const ToyModel& model, const PairedBatch& batch,
                          const std::vector<double>& u,
                          const std::vector<OptionDistribution>& refs) {
    if (batch.clean_inputs.empty()) throw std::invalid_argument("r_stab: empty batch");
    if (u.size() != model.weights.size())
        throw std::invalid_argument("r_stab: noise dimension mismatch");

    std::vector<OptionDistribution> reference = refs;
    if (reference.empty()) {
        reference.reserve(batch.clean_inputs.size());
        for (const auto& x : batch.clean_inputs) reference.push_back(softmax(forward(model, x)));
    }
    if (reference.size() != batch.clean_inputs.size())
        throw std::invalid_argument("r_stab: reference count mismatch");

    ToyModel noisy = model;
    for (std::size_t i = 0; i < u.size(); ++i) noisy.weights[i] += u[i];

    RegTerm out;
    out.grad.assign(model.weights.size(), 0.0);
    const double inv_n = 1.0 / static_cast<double>(batch.clean_inputs.size());
    for (std::size_t r = 0; r < batch.clean_inputs.size(); ++r) {
        const OptionDistribution p_noisy = softmax(forward(noisy, batch.perturbed_inputs[r]));
        out.value += inv_n * kl_categorical(reference[r], p_noisy);
        // Gradient of the KL w.r.t. the noisy branch's logits is p' - p_ref;
        // the chain through theta(w + u) is the model backward at w + u.
        std::vector<double> ds(model.k);
        for (int k = 0; k < model.k; ++k) ds[k] = inv_n * (p_noisy[k] - reference[r][k]);
        backward_weights(noisy, batch.perturbed_inputs[r], ds, out.grad);
    }
    return out;
}

RegTerm r_stab_and_grad(const ToyModel& model, const PairedBatch& batch, double sigma_q,
                        int draws, CounterRng& rng) {
    if (draws < 1) throw std::invalid_argument("r_stab: draws must be >= 1");
    RegTerm out;
    out.grad.assign(model.weights.size(), 0.0);
    for (int d = 0; d < draws; ++d) {
        const std::vector<double> u =
            sample_coordinate_noise(static_cast<int>(model.weights.size()), sigma_q, rng);
        const RegTerm one = r_stab_with_noise(model, batch, u, {});
        out.value += one.value / draws;
        for (std::size_t i = 0; i < out.grad.size(); ++i) out.grad[i] += one.grad[i] / draws;
    }
    return out;
}

std::vector<std::size_t> batch_indices(std::uint64_t seed, int step, int batch_size,
                                       std::size_t n) {
    if (n == 0) throw std::invalid_argument("batch: empty dataset");
    if (batch_size < 1) throw std::invalid_argument("batch: batch_size must be >= 1");
    CounterRng rng(seed, rng_tags::batch, static_cast<std::uint64_t>(step));
    std::vector<std::size_t> idx(batch_size);
    for (int i = 0; i < batch_size; ++i) idx[i] = static_cast<std::size_t>(rng.next_u64() % n);
    return idx;
}

TrainResult train(ToyModel model, const Dataset& data, const TrainConfig& cfg) {
    if (data.inputs.empty()) throw std::invalid_argument("train: empty dataset");
    if (cfg.refresh_n < 1) throw std::invalid_argument("train: refresh_n must be >= 1");
    if (cfg.t_pi < 1) throw std::invalid_argument("train: t_pi must be >= 1");
    if (cfg.steps < 0) throw std::invalid_argument("train: steps must be >= 0");
    if (cfg.alpha < 0.0 || cfg.beta < 0.0)
        throw std::invalid_argument("train: alpha and beta must be >= 0");
    const bool spectral_on = cfg.alpha > 0.0;
    const bool stability_on = cfg.beta > 0.0;
    if (spectral_on) validate_gate(cfg.gate);

    TrainResult res;
    res.trace.reserve(cfg.steps);
    std::vector<double> v = default_power_start(model.k);

    for (int step = 0; step < cfg.steps; ++step) {
        const std::vector<std::size_t> idx =
            batch_indices(cfg.seed, step, cfg.batch_size, data.size());
        std::vector<std::vector<double>> bx;
        std::vector<int> by;
        bx.reserve(idx.size());
        by.reserve(idx.size());
        for (std::size_t i : idx) {
            bx.push_back(data.inputs[i]);
            by.push_back(data.labels[i]);
        }

        TraceRow row;
        row.step = step;
        std::vector<double> grad(model.weights.size(), 0.0);

        const LossGrad ce = ce_loss_and_grad(model, bx, by);
        row.loss_ce = ce.value;
        for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += ce.grad[i];

        PairedBatch paired;
        if (spectral_on || stability_on)
            paired = make_paired_batch(bx, by, cfg.perturb, &model, rng_tags::perturb_train,
                                       static_cast<std::uint64_t>(step) * cfg.batch_size);

        if (spectral_on) {
            if (step % cfg.refresh_n == 0) {
                const FlowMatrix m = batch_flow_matrix(model, paired, cfg.gate);
                // tol = 0: always run the configured number of power steps.
                v = power_iteration(m, v, cfg.t_pi, 0.0).v;
            }
            int ties = 0;
            const RegTerm spec = r_spec_and_grad(model, paired, cfg.gate, v, cfg.eps_spec, &ties);
            row.r_spec = spec.value;
            row.sigma_hat = spec.value;
            row.margin_ties = ties;
            for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += cfg.alpha * spec.grad[i];
        }

        if (stability_on) {
            CounterRng noise_rng(cfg.seed, rng_tags::coord_noise,
                                 static_cast<std::uint64_t>(step));
            const RegTerm stab =
                r_stab_and_grad(model, paired, cfg.sigma_q, cfg.stab_draws, noise_rng);
            row.r_stab = stab.value;
            for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += cfg.beta * stab.grad[i];
        }

        row.loss_total = row.loss_ce + cfg.alpha * row.r_spec + cfg.beta * row.r_stab;
        res.trace.push_back(row);
        if (!std::isfinite(row.loss_total)) {
            res.aborted = true;
            res.abort_reason = "non-finite loss at step " + std::to_string(step);
            res.model = std::move(model);
            return res;
        }

        for (std::size_t i = 0; i < grad.size(); ++i)
            model.weights[i] -= cfg.learning_rate * grad[i];
    }

    res.model = std::move(model);
    return res;
}

}  // namespace errorflow
