// SPDX-License-Identifier: Apache-2.0
#include "errorflow/calibrate_eval.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace errorflow {

double calibrate_gamma(std::vector<double> margins, double q) {
    if (margins.empty()) throw std::invalid_argument("calibrate: empty margin set");
    if (!(q > 0.0 && q < 1.0)) throw std::invalid_argument("calibrate: q must be in (0,1)");
    std::sort(margins.begin(), margins.end());
    const std::size_t m = margins.size();
    std::size_t rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(m)));
    if (rank < 1) rank = 1;
    if (rank > m) rank = m;
    return margins[rank - 1];
}

namespace {

int argmax_lowest(const ScoreVector& s) {
    int best = 0;
    for (std::size_t k = 1; k < s.size(); ++k)
        if (s[k] > s[best]) best = static_cast<int>(k);
    return best;
}

struct ClassAcc {
    std::vector<long long> hits;
    std::vector<long long> counts;
};

ClassAcc per_class_hits(const std::vector<ScoreVector>& scores, const std::vector<int>& labels,
                        int k) {
    ClassAcc acc;
    acc.hits.assign(k, 0);
    acc.counts.assign(k, 0);
    for (std::size_t r = 0; r < scores.size(); ++r) {
        acc.counts[labels[r]] += 1;
        if (argmax_lowest(scores[r]) == labels[r]) acc.hits[labels[r]] += 1;
    }
    return acc;
}

double overall_acc(const ClassAcc& acc) {
    long long h = 0, n = 0;
    for (std::size_t j = 0; j < acc.hits.size(); ++j) {
        h += acc.hits[j];
        n += acc.counts[j];
    }
    return n ? static_cast<double>(h) / static_cast<double>(n) : 0.0;
}

double worst_class_acc(const ClassAcc& acc) {
    double worst = 1.0;
    bool any = false;
    for (std::size_t j = 0; j < acc.hits.size(); ++j) {
        if (acc.counts[j] == 0) continue;
        any = true;
        worst = std::min(worst,
                         static_cast<double>(acc.hits[j]) / static_cast<double>(acc.counts[j]));
    }
    return any ? worst : 0.0;
}

}  // namespace

RiskReport evaluate_scores(const std::vector<ScoreVector>& clean_scores,
                           const std::vector<ScoreVector>& perturbed_scores,
                           const std::vector<int>& labels, const GateParams& gp,
                           const std::string& perturbation_label) {
    if (clean_scores.empty()) throw std::invalid_argument("evaluate: empty evaluation set");
    if (clean_scores.size() != perturbed_scores.size() || clean_scores.size() != labels.size())
        throw std::invalid_argument("evaluate: clean/perturbed/label sets misaligned");
    validate_gate(gp);
    const int k = static_cast<int>(clean_scores[0].size());
    for (std::size_t r = 0; r < clean_scores.size(); ++r) {
        if (static_cast<int>(clean_scores[r].size()) != k ||
            static_cast<int>(perturbed_scores[r].size()) != k)
            throw std::invalid_argument("evaluate: inconsistent option count K");
        if (labels[r] < 0 || labels[r] >= k)
            throw std::invalid_argument("evaluate: label out of range");
    }

    RiskReport rep;
    rep.gamma_used = gp.gamma;
    rep.kappa_used = gp.kappa;
    rep.perturbation_label = perturbation_label;

    const ClassAcc clean_acc = per_class_hits(clean_scores, labels, k);
    const ClassAcc ptb_acc = per_class_hits(perturbed_scores, labels, k);
    rep.clean_acc = overall_acc(clean_acc);
    rep.ptb_acc = overall_acc(ptb_acc);
    rep.clean_wc_acc = worst_class_acc(clean_acc);
    rep.ptb_wc_acc = worst_class_acc(ptb_acc);
    rep.per_class_acc.assign(k, 0.0);
    rep.m_per_class.assign(k, 0);
    for (int j = 0; j < k; ++j) {
        rep.m_per_class[j] = ptb_acc.counts[j];
        if (ptb_acc.counts[j] > 0)
            rep.per_class_acc[j] =
                static_cast<double>(ptb_acc.hits[j]) / static_cast<double>(ptb_acc.counts[j]);
    }

    const FlowMatrix m = build_flow_matrix(perturbed_scores, labels, gp, /*gated=*/true);
    rep.vwr_hat = vwr(m);
    rep.vsr_hat = vsr_exact(m);
    return rep;
}

RiskReport evaluate(const ToyModel& model, const Dataset& clean_set, const Dataset& perturbed_set,
                    const GateParams& gp, const std::string& perturbation_label) {
    if (clean_set.labels != perturbed_set.labels)
        throw std::invalid_argument("evaluate: clean/perturbed labels misaligned");
    std::vector<ScoreVector> clean_scores, ptb_scores;
    clean_scores.reserve(clean_set.size());
    ptb_scores.reserve(perturbed_set.size());
    for (const auto& x : clean_set.inputs) clean_scores.push_back(forward(model, x));
    for (const auto& x : perturbed_set.inputs) ptb_scores.push_back(forward(model, x));
    return evaluate_scores(clean_scores, ptb_scores, clean_set.labels, gp, perturbation_label);
}

std::vector<double> model_margins(const ToyModel& model, const Dataset& ds) {
    std::vector<double> out;
    out.reserve(ds.size());
    for (std::size_t r = 0; r < ds.size(); ++r)
        out.push_back(margin(forward(model, ds.inputs[r]), ds.labels[r]));
    return out;
}

std::vector<SweepRow> calibration_sweep(const ToyModel& model, const Dataset& clean_val,
                                        const Dataset& perturbed_val,
                                        const std::vector<double>& q_list,
                                        const GateParams& gp_base,
                                        const std::string& perturbation_label) {
    if (q_list.empty()) throw std::invalid_argument("sweep: empty q list");
    validate_gate(gp_base);
    const std::vector<double> margins = model_margins(model, perturbed_val);
    std::vector<SweepRow> rows;
    rows.reserve(q_list.size());
    for (double q : q_list) {
        SweepRow row;
        row.q = q;
        row.gamma_q = calibrate_gamma(margins, q);
        GateParams gp;
        gp.gamma = std::max(0.0, row.gamma_q);  // theory needs gamma >= 0
        gp.kappa = gp_base.kappa;
        row.report = evaluate(model, clean_val, perturbed_val, gp, perturbation_label);
        rows.push_back(std::move(row));
    }
    return rows;
}

}  // namespace errorflow
