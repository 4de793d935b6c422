// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "errorflow/core_risk.hpp"
#include "errorflow/synth.hpp"
#include "errorflow/toy_model.hpp"

namespace errorflow {

/// Full metric readout for one model under one perturbation condition.
/// per_class_acc and the worst-class accuracies are class-conditional;
/// classes with zero evaluation samples are excluded from the worst-class
/// minima and show up as m_per_class[j] == 0.
struct RiskReport {
    double clean_acc = 0.0;
    double ptb_acc = 0.0;
    double clean_wc_acc = 0.0;
    double ptb_wc_acc = 0.0;
    double vwr_hat = 0.0;
    double vsr_hat = 0.0;
    double gamma_used = 0.0;
    double kappa_used = 0.0;
    std::vector<double> per_class_acc;  // perturbed side
    std::vector<long long> m_per_class;
    std::string perturbation_label;
};

/// Nearest-rank quantile of the margins: the ceil(q * m)-th order statistic
/// (1-indexed) of the ascending sort. Throws on an empty input.
double calibrate_gamma(std::vector<double> margins, double q);

/// Metric readout from raw score vectors. Clean and perturbed sets must be
/// aligned by index and share labels. The deterministic predictor breaks
/// argmax ties toward the lowest index.
RiskReport evaluate_scores(const std::vector<ScoreVector>& clean_scores,
                           const std::vector<ScoreVector>& perturbed_scores,
                           const std::vector<int>& labels, const GateParams& gp,
                           const std::string& perturbation_label);

RiskReport evaluate(const ToyModel& model, const Dataset& clean_set, const Dataset& perturbed_set,
                    const GateParams& gp, const std::string& perturbation_label = "");

struct SweepRow {
    double q = 0.0;
    double gamma_q = 0.0;  // raw calibrated quantile (may be negative)
    RiskReport report;
};

/// Calibrates gamma per q on the model's perturbed validation margins and
/// evaluates at each buffer. kappa is gp_base.kappa for every row, so rows
/// differ only in gamma.
std::vector<SweepRow> calibration_sweep(const ToyModel& model, const Dataset& clean_val,
                                        const Dataset& perturbed_val,
                                        const std::vector<double>& q_list,
                                        const GateParams& gp_base,
                                        const std::string& perturbation_label = "");

/// Margins of the model over a dataset, in input order.
std::vector<double> model_margins(const ToyModel& model, const Dataset& ds);

}  // namespace errorflow
