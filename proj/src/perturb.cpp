// SPDX-License-Identifier: Apache-2.0
#include "errorflow/perturb.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace errorflow {

void validate_perturb(const PerturbSpec& spec) {
    if (spec.magnitude < 0.0 || !std::isfinite(spec.magnitude))
        throw std::invalid_argument("perturb: magnitude must be >= 0 and finite");
    if (spec.kind == PerturbKind::directional_shift) {
        if (spec.direction.empty())
            throw std::invalid_argument("perturb: directional_shift needs a direction");
        double n = 0.0;
        for (double v : spec.direction) n += v * v;
        if (std::fabs(std::sqrt(n) - 1.0) > 1e-9)
            throw std::invalid_argument("perturb: direction must be unit norm");
    }
    if (spec.kind == PerturbKind::pgd && spec.pgd_steps < 1)
        throw std::invalid_argument("perturb: pgd_steps must be >= 1");
}

std::string perturb_label(const PerturbSpec& spec) {
    switch (spec.kind) {
        case PerturbKind::gaussian_noise: return "gaussian_noise";
        case PerturbKind::directional_shift: return "directional_shift";
        case PerturbKind::pgd: return "pgd";
    }
    return "unknown";
}

std::vector<double> apply_perturbation(const std::vector<double>& x, int y,
                                       const PerturbSpec& spec, const ToyModel* model,
                                       CounterRng& rng) {
    validate_perturb(spec);
    if (spec.magnitude == 0.0) return x;

    switch (spec.kind) {
        case PerturbKind::gaussian_noise: {
            std::vector<double> out(x);
            for (double& v : out) v += spec.magnitude * rng.normal();
            return out;
        }
        case PerturbKind::directional_shift: {
            if (spec.direction.size() != x.size())
                throw std::invalid_argument("perturb: direction dimension mismatch");
            std::vector<double> out(x);
            for (std::size_t i = 0; i < out.size(); ++i)
                out[i] += spec.magnitude * spec.direction[i];
            return out;
        }
        case PerturbKind::pgd: {
            if (model == nullptr)
                throw std::invalid_argument("perturb: pgd requires a model");
            const double step =
                spec.pgd_step_size > 0.0 ? spec.pgd_step_size : spec.magnitude / 4.0;
            std::vector<double> out(x);
            for (int t = 0; t < spec.pgd_steps; ++t) {
                const std::vector<double> g = input_gradient_ce(*model, out, y);
                for (std::size_t i = 0; i < out.size(); ++i) {
                    const double sign = (g[i] > 0.0) ? 1.0 : (g[i] < 0.0 ? -1.0 : 0.0);
                    out[i] += step * sign;
                    out[i] = std::clamp(out[i], x[i] - spec.magnitude, x[i] + spec.magnitude);
                }
            }
            return out;
        }
    }
    throw std::invalid_argument("perturb: unknown kind");
}

PairedBatch make_paired_batch(const std::vector<std::vector<double>>& inputs,
                              const std::vector<int>& labels, const PerturbSpec& spec,
                              const ToyModel* model, std::uint64_t stream_tag,
                              std::uint64_t element_base) {
    if (inputs.empty()) throw std::invalid_argument("paired batch: empty batch");
    if (inputs.size() != labels.size())
        throw std::invalid_argument("paired batch: inputs/labels size mismatch");
    PairedBatch out;
    out.clean_inputs = inputs;
    out.labels = labels;
    out.perturbed_inputs.reserve(inputs.size());
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        CounterRng rng(spec.seed, stream_tag, element_base + i);
        out.perturbed_inputs.push_back(apply_perturbation(inputs[i], labels[i], spec, model, rng));
    }
    return out;
}

std::vector<double> sample_coordinate_noise(int d, double sigma_q, CounterRng& rng) {
    if (d < 0) throw std::invalid_argument("coordinate noise: d must be >= 0");
    if (sigma_q < 0.0) throw std::invalid_argument("coordinate noise: sigma_q must be >= 0");
    std::vector<double> u(d, 0.0);
    if (sigma_q == 0.0) return u;
    for (double& v : u) v = sigma_q * rng.normal();
    return u;
}

}  // namespace errorflow
