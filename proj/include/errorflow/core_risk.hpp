// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

namespace errorflow {

/// Option scores (logits) for one input; length K >= 2.
using ScoreVector = std::vector<double>;
/// Probabilities over the K options; entries >= 0, sum to 1.
using OptionDistribution = std::vector<double>;

/// Safety buffer gamma (logit units) and gate temperature kappa.
struct GateParams {
    double gamma = 0.0;
    double kappa = 1.0;
};

/// Throws std::invalid_argument unless kappa > 0 and gamma >= 0.
void validate_gate(const GateParams& gp);

/// Temperature rule used when the caller has no kappa: max(gamma/4, 1e-3).
double default_kappa(double gamma);

/// K x K error-flow matrix: entry (i, j) is the average (optionally gated)
/// probability mass the model places on wrong option i when the truth is j.
/// Diagonal is identically zero. Columns whose class never appears in the
/// sample are masked and zeroed; column_counts records the per-class counts.
struct FlowMatrix {
    int k = 0;
    std::vector<double> entries;           // row-major k*k
    std::vector<long long> column_counts;  // m_j per class
    std::vector<bool> column_mask;         // true = class present

    double at(int i, int j) const { return entries[static_cast<std::size_t>(i) * k + j]; }
    double& at(int i, int j) { return entries[static_cast<std::size_t>(i) * k + j]; }
};

/// Throws std::invalid_argument on any structural violation: nonzero
/// diagonal, entry outside [0,1], column sum > 1, or nonzero masked column.
void validate_flow_matrix(const FlowMatrix& m);

/// Max-shifted softmax. Throws std::invalid_argument on non-finite input.
OptionDistribution softmax(const ScoreVector& s);

/// Option margin: s[y] - max over k != y of s[k]. Positive iff y is the
/// strict argmax. Throws std::out_of_range for bad y, std::invalid_argument
/// for K < 2.
double margin(const ScoreVector& s, int y);

/// Lowest index k != y attaining max s[k]; the deterministic subgradient
/// choice for the margin's max.
int lowest_top_competitor(const ScoreVector& s, int y);

/// Smooth margin gate sigmoid((gamma - delta)/kappa), strictly decreasing in
/// delta, values in (0,1), gate(gamma) = 1/2 exactly.
double gate(double delta, const GateParams& gp);

/// d(gate)/d(delta) = -(1/kappa) * g * (1 - g).
double gate_grad(double delta, const GateParams& gp);

/// Builds the empirical error-flow matrix from per-sample scores and labels.
/// Entry (i, j), i != j, is the mean over label-j samples of
/// [gate(margin) *] softmax(s)[i]. Accumulation is in input order.
FlowMatrix build_flow_matrix(const std::vector<ScoreVector>& scores,
                             const std::vector<int>& labels,
                             const GateParams& gp,
                             bool gated);

/// Vulnerable worst-option risk: induced 1-norm restricted to unmasked
/// columns (maximum column absolute sum); 0 if every column is masked.
double vwr(const FlowMatrix& m);

/// Vulnerable spectral risk: top singular value of the entries, via a cyclic
/// Jacobi eigendecomposition of M^T M. Throws std::invalid_argument when
/// K exceeds max_exact_k; use power iteration for larger matrices.
double vsr_exact(const FlowMatrix& m, int max_exact_k = 128);

}  // namespace errorflow
