// SPDX-License-Identifier: Apache-2.0
#include "errorflow/synth.hpp"

#include <cmath>
#include <stdexcept>

#include "errorflow/rng.hpp"

namespace errorflow {

namespace {

Dataset make_split(const std::vector<std::vector<double>>& means, const SynthTaskSpec& spec,
                   int n, std::uint64_t split_tag) {
    Dataset ds;
    ds.inputs.reserve(n);
    ds.labels.reserve(n);
    for (int i = 0; i < n; ++i) {
        const int y = i % spec.k;
        CounterRng rng(spec.seed, rng_tags::data, (split_tag << 32) | static_cast<std::uint64_t>(i));
        std::vector<double> x(means[y]);
        for (double& v : x) v += spec.class_cov_scale * rng.normal();
        ds.inputs.push_back(std::move(x));
        ds.labels.push_back(y);
    }
    return ds;
}

}  // namespace

SynthTask generate_synth_task(const SynthTaskSpec& spec) {
    if (spec.k < 2) throw std::invalid_argument("synth: k must be >= 2");
    if (spec.feature_dim < 1) throw std::invalid_argument("synth: feature_dim must be >= 1");
    if (static_cast<int>(spec.class_means.size()) != spec.k)
        throw std::invalid_argument("synth: need one mean per class");
    for (const auto& m : spec.class_means)
        if (static_cast<int>(m.size()) != spec.feature_dim)
            throw std::invalid_argument("synth: class mean dimension mismatch");
    if (spec.n_train < 1 || spec.n_val < 1 || spec.n_test < 1)
        throw std::invalid_argument("synth: split sizes must be >= 1");
    if (!(spec.class_cov_scale > 0.0) && spec.class_cov_scale != 0.0)
        throw std::invalid_argument("synth: class_cov_scale must be >= 0");

    // Pull confused pairs toward their midpoint.
    std::vector<std::vector<double>> means = spec.class_means;
    for (const ConfusionPair& cp : spec.confusion_pairs) {
        if (cp.a < 0 || cp.a >= spec.k || cp.b < 0 || cp.b >= spec.k || cp.a == cp.b)
            throw std::invalid_argument("synth: bad confusion pair indices");
        if (cp.strength < 0.0 || cp.strength > 1.0)
            throw std::invalid_argument("synth: confusion strength must be in [0,1]");
        for (int i = 0; i < spec.feature_dim; ++i) {
            const double ma = spec.class_means[cp.a][i];
            const double mb = spec.class_means[cp.b][i];
            means[cp.a][i] += 0.5 * cp.strength * (mb - ma);
            means[cp.b][i] += 0.5 * cp.strength * (ma - mb);
        }
    }

    SynthTask task;
    task.train = make_split(means, spec, spec.n_train, 0);
    task.val = make_split(means, spec, spec.n_val, 1);
    task.test = make_split(means, spec, spec.n_test, 2);
    return task;
}

}  // namespace errorflow
