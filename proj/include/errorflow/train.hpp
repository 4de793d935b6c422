// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "errorflow/core_risk.hpp"
#include "errorflow/perturb.hpp"
#include "errorflow/spectral.hpp"
#include "errorflow/synth.hpp"
#include "errorflow/toy_model.hpp"

namespace errorflow {

struct TrainConfig {
    double alpha = 0.0;  // spectral weight
    double beta = 0.0;   // stability weight
    GateParams gate;
    int t_pi = 10;       // power-iteration steps per refresh
    int refresh_n = 10;  // refresh interval for the singular direction
    double eps_spec = 1e-8;
    double sigma_q = 0.05;  // coordinate-noise scale for the stability term
    double learning_rate = 0.1;
    int batch_size = 64;
    int steps = 200;
    int stab_draws = 1;  // Monte Carlo draws per step for the stability term
    PerturbSpec perturb;
    std::uint64_t seed = 0;
};

struct TraceRow {
    int step = 0;
    double loss_total = 0.0;
    double loss_ce = 0.0;
    double r_spec = 0.0;
    double r_stab = 0.0;
    double sigma_hat = 0.0;
    int margin_ties = 0;  // competitor ties hit by the margin subgradient
};

struct TrainResult {
    ToyModel model;
    std::vector<TraceRow> trace;
    bool aborted = false;
    std::string abort_reason;
};

struct RegTerm {
    double value = 0.0;
    std::vector<double> grad;
};

/// Spectral penalty on the perturbed half of the batch: builds the gated
/// flow matrix and returns sigma_hat(M, v, eps_spec) with the analytic
/// coordinate gradient, treating v as fixed within the refresh window. The
/// margin subgradient uses the lowest-index top competitor; tie_count
/// reports how many batch examples had a tied competitor.
RegTerm r_spec_and_grad(const ToyModel& model, const PairedBatch& batch, const GateParams& gp,
                        const std::vector<double>& v, double eps_spec, int* tie_count = nullptr);

/// Builds just the gated flow matrix the spectral penalty sees.
FlowMatrix batch_flow_matrix(const ToyModel& model, const PairedBatch& batch,
                             const GateParams& gp);

/// Stability penalty for a fixed coordinate-noise draw u and fixed reference
/// distributions: mean KL(ref_r || p_{w+u}(. | x'_r)). The reference is a
/// constant under differentiation; the gradient flows only through the
/// noisy branch. refs may be empty, in which case they are computed from
/// the model on the clean inputs.
RegTerm r_stab_with_noise(const ToyModel& model, const PairedBatch& batch,
                          const std::vector<double>& u,
                          const std::vector<OptionDistribution>& refs);

/// Monte Carlo stability penalty: averages r_stab_with_noise over draws
/// u ~ N(0, sigma_q^2 I) taken from rng.
RegTerm r_stab_and_grad(const ToyModel& model, const PairedBatch& batch, double sigma_q,
                        int draws, CounterRng& rng);

/// Batch index schedule for a given step: batch_size draws with replacement
/// from [0, n), on the (seed, batch, step) stream.
std::vector<std::size_t> batch_indices(std::uint64_t seed, int step, int batch_size,
                                       std::size_t n);

/// Plain gradient descent on CE + alpha * spectral + beta * stability.
/// The singular direction v is refreshed by t_pi power steps whenever
/// step % refresh_n == 0 and held fixed otherwise. With alpha = 0 the
/// spectral machinery is skipped and the trajectory is exactly a CE
/// trainer's; with beta = 0 the stability branch is skipped. Aborts with a
/// diagnostic trace if the loss turns non-finite.
TrainResult train(ToyModel model, const Dataset& data, const TrainConfig& cfg);

}  // namespace errorflow
