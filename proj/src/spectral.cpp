// SPDX-License-Identifier: Apache-2.0
#include "errorflow/spectral.hpp"

#include <cmath>
#include <stdexcept>

namespace errorflow {

namespace {

double norm2(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

void check_unit(const std::vector<double>& v, int k) {
    if (static_cast<int>(v.size()) != k)
        throw std::invalid_argument("spectral: vector length does not match K");
    if (std::fabs(norm2(v) - 1.0) > 1e-9)
        throw std::invalid_argument("spectral: vector must be unit norm");
}

std::vector<double> matvec(const FlowMatrix& m, const std::vector<double>& v) {
    std::vector<double> out(m.k, 0.0);
    for (int i = 0; i < m.k; ++i) {
        double acc = 0.0;
        for (int j = 0; j < m.k; ++j) acc += m.at(i, j) * v[j];
        out[i] = acc;
    }
    return out;
}

std::vector<double> matvec_t(const FlowMatrix& m, const std::vector<double>& v) {
    std::vector<double> out(m.k, 0.0);
    for (int j = 0; j < m.k; ++j) {
        double acc = 0.0;
        for (int i = 0; i < m.k; ++i) acc += m.at(i, j) * v[i];
        out[j] = acc;
    }
    return out;
}

}  // namespace

std::vector<double> default_power_start(int k) {
    if (k < 1) throw std::invalid_argument("power start: k must be >= 1");
    return std::vector<double>(k, 1.0 / std::sqrt(static_cast<double>(k)));
}

PowerState power_iteration(const FlowMatrix& m, std::vector<double> v0, int t_pi, double tol) {
    validate_flow_matrix(m);
    if (t_pi < 1) throw std::invalid_argument("power iteration: t_pi must be >= 1");
    if (tol < 0.0) throw std::invalid_argument("power iteration: tol must be >= 0");
    check_unit(v0, m.k);

    PowerState st;
    st.v = std::move(v0);
    st.sigma_est = norm2(matvec(m, st.v));

    for (int t = 0; t < t_pi; ++t) {
        std::vector<double> w = matvec_t(m, matvec(m, st.v));
        double wn = norm2(w);
        if (wn == 0.0) {
            // v landed in the null space of M^T M. Restart from a basis
            // vector that survives; if none does the matrix is zero.
            bool restarted = false;
            for (int i = 0; i < m.k && !restarted; ++i) {
                std::vector<double> e(m.k, 0.0);
                e[i] = 1.0;
                std::vector<double> we = matvec_t(m, matvec(m, e));
                if (norm2(we) > 0.0) {
                    st.v = std::move(e);
                    restarted = true;
                }
            }
            if (!restarted) {
                st.sigma_est = 0.0;
                st.iterations_used = t;
                return st;
            }
            w = matvec_t(m, matvec(m, st.v));
            wn = norm2(w);
        }
        for (double& x : w) x /= wn;
        st.v = std::move(w);
        const double sigma_next = norm2(matvec(m, st.v));
        const double change = std::fabs(sigma_next - st.sigma_est);
        st.sigma_est = sigma_next;
        st.iterations_used = t + 1;
        if (change <= tol * std::max(sigma_next, 1e-12)) break;
    }
    return st;
}

double sigma_hat(const FlowMatrix& m, const std::vector<double>& v, double eps_spec) {
    if (eps_spec < 0.0) throw std::invalid_argument("sigma_hat: eps_spec must be >= 0");
    check_unit(v, m.k);
    const std::vector<double> mv = matvec(m, v);
    double q = 0.0;
    for (double x : mv) q += x * x;
    return std::sqrt(q + eps_spec);
}

std::vector<double> sigma_hat_grad(const FlowMatrix& m, const std::vector<double>& v,
                                   double eps_spec) {
    const double s = sigma_hat(m, v, eps_spec);
    if (s == 0.0)
        throw std::invalid_argument("sigma_hat_grad: estimate is zero, gradient undefined");
    const std::vector<double> mv = matvec(m, v);
    std::vector<double> g(static_cast<std::size_t>(m.k) * m.k, 0.0);
    for (int i = 0; i < m.k; ++i)
        for (int j = 0; j < m.k; ++j)
            g[static_cast<std::size_t>(i) * m.k + j] = mv[i] * v[j] / s;
    return g;
}

}  // namespace errorflow
