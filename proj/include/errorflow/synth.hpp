// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

namespace errorflow {

struct Dataset {
    std::vector<std::vector<double>> inputs;
    std::vector<int> labels;

    std::size_t size() const { return inputs.size(); }
};

struct ConfusionPair {
    int a = 0;
    int b = 0;
    double strength = 0.0;  // 0 = untouched, 1 = means collapse to midpoint
};

/// Gaussian-mixture task. confusion_pairs pull the named class means toward
/// each other so perturbations induce a dominant error-flow mode between
/// those classes.
struct SynthTaskSpec {
    int k = 2;
    int feature_dim = 2;
    std::vector<std::vector<double>> class_means;  // k vectors of feature_dim
    double class_cov_scale = 1.0;
    std::vector<ConfusionPair> confusion_pairs;
    int n_train = 0;
    int n_val = 0;
    int n_test = 0;
    std::uint64_t seed = 0;
};

struct SynthTask {
    Dataset train;
    Dataset val;
    Dataset test;
};

/// Labels are assigned round-robin so every class is represented whenever a
/// split has at least k elements. Same seed gives identical datasets.
SynthTask generate_synth_task(const SynthTaskSpec& spec);

}  // namespace errorflow
