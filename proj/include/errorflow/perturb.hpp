// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "errorflow/rng.hpp"
#include "errorflow/toy_model.hpp"

namespace errorflow {

enum class PerturbKind { gaussian_noise, directional_shift, pgd };

struct PerturbSpec {
    PerturbKind kind = PerturbKind::gaussian_noise;
    double magnitude = 0.0;          // feature units
    std::vector<double> direction;   // unit vector, directional_shift only
    int pgd_steps = 10;
    double pgd_step_size = 0.0;      // <= 0 means magnitude / 4
    std::uint64_t seed = 0;
};

void validate_perturb(const PerturbSpec& spec);
std::string perturb_label(const PerturbSpec& spec);

/// Clean inputs, their perturbed counterparts, and the shared labels.
struct PairedBatch {
    std::vector<std::vector<double>> clean_inputs;
    std::vector<std::vector<double>> perturbed_inputs;
    std::vector<int> labels;
};

/// One perturbed input. gaussian_noise adds magnitude-scaled iid normals,
/// directional_shift adds magnitude * direction, pgd runs sign-gradient
/// cross-entropy ascent steps projected to the L-inf ball of radius
/// magnitude. pgd requires a model.
std::vector<double> apply_perturbation(const std::vector<double>& x, int y,
                                       const PerturbSpec& spec, const ToyModel* model,
                                       CounterRng& rng);

/// Element-wise perturbation with per-element streams keyed by
/// (spec.seed, stream_tag, element_base + index), so the draw for a given
/// element id never depends on batch composition.
PairedBatch make_paired_batch(const std::vector<std::vector<double>>& inputs,
                              const std::vector<int>& labels, const PerturbSpec& spec,
                              const ToyModel* model, std::uint64_t stream_tag,
                              std::uint64_t element_base = 0);

/// iid N(0, sigma_q^2) vector of length d.
std::vector<double> sample_coordinate_noise(int d, double sigma_q, CounterRng& rng);

}  // namespace errorflow
