// SPDX-License-Identifier: Apache-2.0
#include "errorflow/core_risk.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace errorflow {

void validate_gate(const GateParams& gp) {
    if (!(gp.kappa > 0.0) || !std::isfinite(gp.kappa))
        throw std::invalid_argument("gate: kappa must be positive and finite");
    if (!(gp.gamma >= 0.0) || !std::isfinite(gp.gamma))
        throw std::invalid_argument("gate: gamma must be nonnegative and finite");
}

double default_kappa(double gamma) {
    return std::max(gamma / 4.0, 1e-3);
}

void validate_flow_matrix(const FlowMatrix& m) {
    if (m.k < 2) throw std::invalid_argument("flow matrix: k must be >= 2");
    const std::size_t kk = static_cast<std::size_t>(m.k) * m.k;
    if (m.entries.size() != kk || m.column_counts.size() != static_cast<std::size_t>(m.k) ||
        m.column_mask.size() != static_cast<std::size_t>(m.k))
        throw std::invalid_argument("flow matrix: inconsistent field sizes");
    for (int j = 0; j < m.k; ++j) {
        if (m.column_counts[j] < 0)
            throw std::invalid_argument("flow matrix: negative column count");
        double col_sum = 0.0;
        for (int i = 0; i < m.k; ++i) {
            const double e = m.at(i, j);
            if (!std::isfinite(e)) throw std::invalid_argument("flow matrix: non-finite entry");
            if (i == j && e != 0.0) throw std::invalid_argument("flow matrix: nonzero diagonal");
            if (e < 0.0 || e > 1.0) throw std::invalid_argument("flow matrix: entry outside [0,1]");
            if (!m.column_mask[j] && e != 0.0)
                throw std::invalid_argument("flow matrix: masked column has nonzero entry");
            col_sum += e;
        }
        if (col_sum > 1.0 + 1e-12)
            throw std::invalid_argument("flow matrix: column sum exceeds 1");
    }
}

OptionDistribution softmax(const ScoreVector& s) {
    if (s.empty()) throw std::invalid_argument("softmax: empty score vector");
    double m = s[0];
    for (double v : s) {
        if (!std::isfinite(v)) throw std::invalid_argument("softmax: non-finite score");
        m = std::max(m, v);
    }
    OptionDistribution p(s.size());
    double z = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        p[i] = std::exp(s[i] - m);
        z += p[i];
    }
    for (double& v : p) v /= z;
    return p;
}

double margin(const ScoreVector& s, int y) {
    if (s.size() < 2) throw std::invalid_argument("margin: need at least 2 options");
    if (y < 0 || static_cast<std::size_t>(y) >= s.size())
        throw std::out_of_range("margin: label out of range");
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < s.size(); ++k)
        if (static_cast<int>(k) != y) best = std::max(best, s[k]);
    return s[y] - best;
}

int lowest_top_competitor(const ScoreVector& s, int y) {
    if (s.size() < 2) throw std::invalid_argument("competitor: need at least 2 options");
    if (y < 0 || static_cast<std::size_t>(y) >= s.size())
        throw std::out_of_range("competitor: label out of range");
    int best = -1;
    for (std::size_t k = 0; k < s.size(); ++k) {
        if (static_cast<int>(k) == y) continue;
        if (best < 0 || s[k] > s[best]) best = static_cast<int>(k);
    }
    return best;
}

double gate(double delta, const GateParams& gp) {
    validate_gate(gp);
    const double z = (gp.gamma - delta) / gp.kappa;
    // Evaluated from the side that keeps exp() below 1.
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

double gate_grad(double delta, const GateParams& gp) {
    const double g = gate(delta, gp);
    return -(1.0 / gp.kappa) * g * (1.0 - g);
}

FlowMatrix build_flow_matrix(const std::vector<ScoreVector>& scores,
                             const std::vector<int>& labels,
                             const GateParams& gp,
                             bool gated) {
    if (scores.empty()) throw std::invalid_argument("flow matrix: empty sample set");
    if (scores.size() != labels.size())
        throw std::invalid_argument("flow matrix: scores/labels size mismatch");
    if (gated) validate_gate(gp);
    const int k = static_cast<int>(scores[0].size());
    if (k < 2) throw std::invalid_argument("flow matrix: need at least 2 options");

    FlowMatrix m;
    m.k = k;
    m.entries.assign(static_cast<std::size_t>(k) * k, 0.0);
    m.column_counts.assign(k, 0);
    m.column_mask.assign(k, false);

    for (std::size_t r = 0; r < scores.size(); ++r) {
        const ScoreVector& s = scores[r];
        if (static_cast<int>(s.size()) != k)
            throw std::invalid_argument("flow matrix: inconsistent option count K");
        const int y = labels[r];
        if (y < 0 || y >= k) throw std::invalid_argument("flow matrix: label out of range");
        const OptionDistribution p = softmax(s);
        const double g = gated ? gate(margin(s, y), gp) : 1.0;
        for (int i = 0; i < k; ++i) {
            if (i == y) continue;
            m.at(i, y) += g * p[i];
        }
        m.column_counts[y] += 1;
    }
    for (int j = 0; j < k; ++j) {
        if (m.column_counts[j] > 0) {
            m.column_mask[j] = true;
            for (int i = 0; i < k; ++i) m.at(i, j) /= static_cast<double>(m.column_counts[j]);
        }
    }
    return m;
}

double vwr(const FlowMatrix& m) {
    validate_flow_matrix(m);
    double best = 0.0;
    for (int j = 0; j < m.k; ++j) {
        if (!m.column_mask[j]) continue;
        double col = 0.0;
        for (int i = 0; i < m.k; ++i) col += std::fabs(m.at(i, j));
        best = std::max(best, col);
    }
    return best;
}

namespace {

// Largest eigenvalue of a symmetric PSD matrix by cyclic Jacobi sweeps.
double top_eigenvalue_jacobi(std::vector<double>& b, int n) {
    double frob = 0.0;
    for (double v : b) frob += v * v;
    frob = std::sqrt(frob);
    if (frob == 0.0) return 0.0;
    const double stop = 1e-14 * frob;
    for (int sweep = 0; sweep < 64; ++sweep) {
        double off = 0.0;
        for (int p = 0; p < n; ++p)
            for (int q = p + 1; q < n; ++q) off += 2.0 * b[p * n + q] * b[p * n + q];
        if (std::sqrt(off) <= stop) break;
        for (int p = 0; p < n; ++p) {
            for (int q = p + 1; q < n; ++q) {
                const double apq = b[p * n + q];
                if (apq == 0.0) continue;
                const double app = b[p * n + p];
                const double aqq = b[q * n + q];
                const double theta = (aqq - app) / (2.0 * apq);
                const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                                 (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (int i = 0; i < n; ++i) {
                    const double aip = b[i * n + p];
                    const double aiq = b[i * n + q];
                    b[i * n + p] = c * aip - s * aiq;
                    b[i * n + q] = s * aip + c * aiq;
                }
                for (int i = 0; i < n; ++i) {
                    const double api = b[p * n + i];
                    const double aqi = b[q * n + i];
                    b[p * n + i] = c * api - s * aqi;
                    b[q * n + i] = s * api + c * aqi;
                }
            }
        }
    }
    double lam = 0.0;
    for (int i = 0; i < n; ++i) lam = std::max(lam, b[i * n + i]);
    return lam;
}

}  // namespace

double vsr_exact(const FlowMatrix& m, int max_exact_k) {
    validate_flow_matrix(m);
    if (m.k > max_exact_k)
        throw std::invalid_argument(
            "vsr_exact: K=" + std::to_string(m.k) + " exceeds exact-eigensolver cap " +
            std::to_string(max_exact_k) + "; use power iteration");
    // B = M^T M, symmetric PSD.
    std::vector<double> b(static_cast<std::size_t>(m.k) * m.k, 0.0);
    for (int i = 0; i < m.k; ++i)
        for (int j = 0; j < m.k; ++j) {
            double acc = 0.0;
            for (int r = 0; r < m.k; ++r) acc += m.at(r, i) * m.at(r, j);
            b[static_cast<std::size_t>(i) * m.k + j] = acc;
        }
    return std::sqrt(std::max(0.0, top_eigenvalue_jacobi(b, m.k)));
}

}  // namespace errorflow
