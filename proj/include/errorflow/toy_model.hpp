// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "errorflow/core_risk.hpp"

namespace errorflow {

enum class ModelKind { linear, mlp1 };

/// Finite-option classifier over a flat trainable coordinate vector.
/// linear: s = W x + b, coordinates [W row-major K x d | b].
/// mlp1:   s = W2 tanh(W1 x + b1) + b2, coordinates [W1 | b1 | W2 | b2].
struct ToyModel {
    ModelKind kind = ModelKind::linear;
    int feature_dim = 0;
    int k = 0;
    int hidden = 0;  // mlp1 only
    std::vector<double> weights;

    int coord_count() const;
};

/// Deterministic construction. Linear models start at zero; mlp1 uses a
/// seeded uniform init so the hidden layer is not stuck at a symmetric point.
ToyModel make_model(ModelKind kind, int k, int feature_dim, int hidden, std::uint64_t seed);

ScoreVector forward(const ToyModel& model, const std::vector<double>& x);

/// Accumulates d(loss)/d(weights) into grad_accum given the upstream
/// gradient at the score vector.
void backward_weights(const ToyModel& model, const std::vector<double>& x,
                      const std::vector<double>& dscore, std::vector<double>& grad_accum);

/// d(loss)/d(input) given the upstream gradient at the score vector.
std::vector<double> backward_input(const ToyModel& model, const std::vector<double>& x,
                                   const std::vector<double>& dscore);

struct LossGrad {
    double value = 0.0;
    std::vector<double> grad;
};

/// Mean cross-entropy over the batch with its exact coordinate gradient.
LossGrad ce_loss_and_grad(const ToyModel& model, const std::vector<std::vector<double>>& inputs,
                          const std::vector<int>& labels);

double ce_loss(const ToyModel& model, const std::vector<std::vector<double>>& inputs,
               const std::vector<int>& labels);

/// Gradient of single-example cross-entropy with respect to the input.
std::vector<double> input_gradient_ce(const ToyModel& model, const std::vector<double>& x, int y);

}  // namespace errorflow
