// SPDX-License-Identifier: Apache-2.0
#include "errorflow/toy_model.hpp"

#include <cmath>
#include <stdexcept>

#include "errorflow/rng.hpp"

namespace errorflow {

int ToyModel::coord_count() const {
    if (kind == ModelKind::linear) return k * feature_dim + k;
    return hidden * feature_dim + hidden + k * hidden + k;
}

ToyModel make_model(ModelKind kind, int k, int feature_dim, int hidden, std::uint64_t seed) {
    if (k < 2) throw std::invalid_argument("model: k must be >= 2");
    if (feature_dim < 1) throw std::invalid_argument("model: feature_dim must be >= 1");
    if (kind == ModelKind::mlp1 && hidden < 1)
        throw std::invalid_argument("model: mlp1 needs hidden >= 1");
    ToyModel m;
    m.kind = kind;
    m.k = k;
    m.feature_dim = feature_dim;
    m.hidden = (kind == ModelKind::mlp1) ? hidden : 0;
    m.weights.assign(m.coord_count(), 0.0);
    if (kind == ModelKind::mlp1) {
        CounterRng rng(seed, rng_tags::model_init, 0);
        const double scale = 1.0 / std::sqrt(static_cast<double>(feature_dim));
        for (double& w : m.weights) w = scale * (2.0 * rng.uniform() - 1.0);
    }
    return m;
}

namespace {

void check_input(const ToyModel& m, const std::vector<double>& x) {
    if (static_cast<int>(x.size()) != m.feature_dim)
        throw std::invalid_argument("model: input dimension mismatch");
    if (static_cast<int>(m.weights.size()) != m.coord_count())
        throw std::invalid_argument("model: coordinate vector has wrong length");
}

// Coordinate layout offsets for mlp1.
struct MlpOffsets {
    int w1, b1, w2, b2;
};

MlpOffsets mlp_offsets(const ToyModel& m) {
    MlpOffsets o;
    o.w1 = 0;
    o.b1 = m.hidden * m.feature_dim;
    o.w2 = o.b1 + m.hidden;
    o.b2 = o.w2 + m.k * m.hidden;
    return o;
}

std::vector<double> hidden_activations(const ToyModel& m, const std::vector<double>& x) {
    const MlpOffsets o = mlp_offsets(m);
    std::vector<double> h(m.hidden);
    for (int j = 0; j < m.hidden; ++j) {
        double acc = m.weights[o.b1 + j];
        for (int i = 0; i < m.feature_dim; ++i)
            acc += m.weights[o.w1 + j * m.feature_dim + i] * x[i];
        h[j] = std::tanh(acc);
    }
    return h;
}

}  // namespace

ScoreVector forward(const ToyModel& m, const std::vector<double>& x) {
    check_input(m, x);
    ScoreVector s(m.k);
    if (m.kind == ModelKind::linear) {
        for (int r = 0; r < m.k; ++r) {
            double acc = m.weights[m.k * m.feature_dim + r];  // bias
            for (int i = 0; i < m.feature_dim; ++i)
                acc += m.weights[r * m.feature_dim + i] * x[i];
            s[r] = acc;
        }
        return s;
    }
    const MlpOffsets o = mlp_offsets(m);
    const std::vector<double> h = hidden_activations(m, x);
    for (int r = 0; r < m.k; ++r) {
        double acc = m.weights[o.b2 + r];
        for (int j = 0; j < m.hidden; ++j) acc += m.weights[o.w2 + r * m.hidden + j] * h[j];
        s[r] = acc;
    }
    return s;
}

void backward_weights(const ToyModel& m, const std::vector<double>& x,
                      const std::vector<double>& dscore, std::vector<double>& grad_accum) {
    check_input(m, x);
    if (static_cast<int>(dscore.size()) != m.k)
        throw std::invalid_argument("model: dscore dimension mismatch");
    if (grad_accum.size() != m.weights.size())
        throw std::invalid_argument("model: gradient accumulator has wrong length");

    if (m.kind == ModelKind::linear) {
        for (int r = 0; r < m.k; ++r) {
            for (int i = 0; i < m.feature_dim; ++i)
                grad_accum[r * m.feature_dim + i] += dscore[r] * x[i];
            grad_accum[m.k * m.feature_dim + r] += dscore[r];
        }
        return;
    }
    const MlpOffsets o = mlp_offsets(m);
    const std::vector<double> h = hidden_activations(m, x);
    std::vector<double> dh(m.hidden, 0.0);
    for (int r = 0; r < m.k; ++r) {
        for (int j = 0; j < m.hidden; ++j) {
            grad_accum[o.w2 + r * m.hidden + j] += dscore[r] * h[j];
            dh[j] += m.weights[o.w2 + r * m.hidden + j] * dscore[r];
        }
        grad_accum[o.b2 + r] += dscore[r];
    }
    for (int j = 0; j < m.hidden; ++j) {
        const double dpre = dh[j] * (1.0 - h[j] * h[j]);
        for (int i = 0; i < m.feature_dim; ++i)
            grad_accum[o.w1 + j * m.feature_dim + i] += dpre * x[i];
        grad_accum[o.b1 + j] += dpre;
    }
}

std::vector<double> backward_input(const ToyModel& m, const std::vector<double>& x,
                                   const std::vector<double>& dscore) {
    check_input(m, x);
    std::vector<double> dx(m.feature_dim, 0.0);
    if (m.kind == ModelKind::linear) {
        for (int r = 0; r < m.k; ++r)
            for (int i = 0; i < m.feature_dim; ++i)
                dx[i] += m.weights[r * m.feature_dim + i] * dscore[r];
        return dx;
    }
    const MlpOffsets o = mlp_offsets(m);
    const std::vector<double> h = hidden_activations(m, x);
    std::vector<double> dh(m.hidden, 0.0);
    for (int r = 0; r < m.k; ++r)
        for (int j = 0; j < m.hidden; ++j) dh[j] += m.weights[o.w2 + r * m.hidden + j] * dscore[r];
    for (int j = 0; j < m.hidden; ++j) {
        const double dpre = dh[j] * (1.0 - h[j] * h[j]);
        for (int i = 0; i < m.feature_dim; ++i)
            dx[i] += m.weights[o.w1 + j * m.feature_dim + i] * dpre;
    }
    return dx;
}

namespace {

double example_ce(const ToyModel& m, const std::vector<double>& x, int y,
                  OptionDistribution* p_out) {
    const ScoreVector s = forward(m, x);
    if (y < 0 || y >= m.k) throw std::invalid_argument("cross entropy: label out of range");
    // log-sum-exp with max shift
    double mx = s[0];
    for (double v : s) mx = std::max(mx, v);
    double z = 0.0;
    for (double v : s) z += std::exp(v - mx);
    if (p_out) {
        p_out->resize(m.k);
        for (int i = 0; i < m.k; ++i) (*p_out)[i] = std::exp(s[i] - mx) / z;
    }
    return std::log(z) + mx - s[y];
}

}  // namespace

LossGrad ce_loss_and_grad(const ToyModel& m, const std::vector<std::vector<double>>& inputs,
                          const std::vector<int>& labels) {
    if (inputs.empty()) throw std::invalid_argument("cross entropy: empty batch");
    if (inputs.size() != labels.size())
        throw std::invalid_argument("cross entropy: inputs/labels size mismatch");
    LossGrad out;
    out.grad.assign(m.weights.size(), 0.0);
    const double inv_n = 1.0 / static_cast<double>(inputs.size());
    OptionDistribution p;
    for (std::size_t r = 0; r < inputs.size(); ++r) {
        out.value += example_ce(m, inputs[r], labels[r], &p) * inv_n;
        std::vector<double> ds(m.k);
        for (int i = 0; i < m.k; ++i) ds[i] = (p[i] - (i == labels[r] ? 1.0 : 0.0)) * inv_n;
        backward_weights(m, inputs[r], ds, out.grad);
    }
    return out;
}

double ce_loss(const ToyModel& m, const std::vector<std::vector<double>>& inputs,
               const std::vector<int>& labels) {
    if (inputs.empty()) throw std::invalid_argument("cross entropy: empty batch");
    if (inputs.size() != labels.size())
        throw std::invalid_argument("cross entropy: inputs/labels size mismatch");
    double v = 0.0;
    for (std::size_t r = 0; r < inputs.size(); ++r)
        v += example_ce(m, inputs[r], labels[r], nullptr);
    return v / static_cast<double>(inputs.size());
}

std::vector<double> input_gradient_ce(const ToyModel& m, const std::vector<double>& x, int y) {
    OptionDistribution p = softmax(forward(m, x));
    std::vector<double> ds(m.k);
    for (int i = 0; i < m.k; ++i) ds[i] = p[i] - (i == y ? 1.0 : 0.0);
    return backward_input(m, x, ds);
}

}  // namespace errorflow
