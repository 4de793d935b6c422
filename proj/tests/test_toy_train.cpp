// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <random>
#include <stdexcept>

#include "doctest.h"
#include "errorflow/calibrate_eval.hpp"
#include "errorflow/train.hpp"
#include "oracles.hpp"

using namespace errorflow;

namespace {

ToyModel random_model(ModelKind kind, int k, int d, int hidden, std::mt19937_64& gen,
                      double scale = 0.8) {
    ToyModel m = make_model(kind, k, d, hidden, 0);
    std::normal_distribution<double> nd(0.0, scale);
    for (double& w : m.weights) w = nd(gen);
    return m;
}

PairedBatch random_batch(int n, int k, int d, std::mt19937_64& gen, double ptb_scale = 0.3) {
    std::normal_distribution<double> nd(0.0, 1.0);
    PairedBatch b;
    for (int i = 0; i < n; ++i) {
        std::vector<double> x(d), xp(d);
        for (int c = 0; c < d; ++c) {
            x[c] = nd(gen);
            xp[c] = x[c] + ptb_scale * nd(gen);
        }
        b.clean_inputs.push_back(std::move(x));
        b.perturbed_inputs.push_back(std::move(xp));
        b.labels.push_back(static_cast<int>(gen() % k));
    }
    return b;
}

std::vector<double> unit_vector(int k, std::mt19937_64& gen) {
    std::normal_distribution<double> nd(0.0, 1.0);
    std::vector<double> v(k);
    double n = 0.0;
    for (double& x : v) {
        x = nd(gen);
        n += x * x;
    }
    n = std::sqrt(n);
    for (double& x : v) x /= n;
    return v;
}

}  // namespace

TEST_CASE("forward: zero weights give zero scores and a uniform softmax") {
    const ToyModel m = make_model(ModelKind::linear, 3, 4, 0, 0);
    const ScoreVector s = forward(m, {1.0, 2.0, 3.0, 4.0});
    for (double v : s) CHECK(v == 0.0);
    for (double p : softmax(s)) CHECK(p == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("forward: identity weight block") {
    ToyModel m = make_model(ModelKind::linear, 3, 3, 0, 0);
    for (int r = 0; r < 3; ++r) m.weights[r * 3 + r] = 1.0;
    const ScoreVector s = forward(m, {1.0, 0.0, 0.0});
    CHECK(s[0] == 1.0);
    CHECK(s[1] == 0.0);
    CHECK(s[2] == 0.0);
}

TEST_CASE("forward: matches an independent recomputation, both architectures") {
    std::mt19937_64 gen(71);
    std::normal_distribution<double> nd(0.0, 1.0);
    for (int t = 0; t < 20; ++t) {
        const int k = 3, d = 5, h = 4;
        const ToyModel lin = random_model(ModelKind::linear, k, d, 0, gen);
        std::vector<double> x(d);
        for (double& v : x) v = nd(gen);
        const ScoreVector s = forward(lin, x);
        for (int r = 0; r < k; ++r) {
            double acc = lin.weights[k * d + r];
            for (int i = 0; i < d; ++i) acc += lin.weights[r * d + i] * x[i];
            CHECK(std::fabs(s[r] - acc) < 1e-12);
        }

        const ToyModel mlp = random_model(ModelKind::mlp1, k, d, h, gen);
        const ScoreVector sm = forward(mlp, x);
        const int ow1 = 0, ob1 = h * d, ow2 = ob1 + h, ob2 = ow2 + k * h;
        for (int r = 0; r < k; ++r) {
            double acc = mlp.weights[ob2 + r];
            for (int j = 0; j < h; ++j) {
                double pre = mlp.weights[ob1 + j];
                for (int i = 0; i < d; ++i) pre += mlp.weights[ow1 + j * d + i] * x[i];
                acc += mlp.weights[ow2 + r * h + j] * std::tanh(pre);
            }
            CHECK(std::fabs(sm[r] - acc) < 1e-12);
        }
    }
}

TEST_CASE("ce_loss_and_grad: uniform scores, saturation, finite differences") {
    const ToyModel zero = make_model(ModelKind::linear, 4, 3, 0, 0);
    const std::vector<std::vector<double>> xs{{1, 0, 0}, {0, 1, 0}};
    const std::vector<int> ys{0, 1};
    CHECK(std::fabs(ce_loss_and_grad(zero, xs, ys).value - std::log(4.0)) < 1e-12);

    ToyModel hot = make_model(ModelKind::linear, 2, 1, 0, 0);
    hot.weights = {50.0, -50.0, 0.0, 0.0};  // x = 1 -> huge correct logit
    CHECK(ce_loss_and_grad(hot, {{1.0}}, {0}).value <= 1e-6);

    std::mt19937_64 gen(72);
    for (ModelKind kind : {ModelKind::linear, ModelKind::mlp1}) {
        const ToyModel m = random_model(kind, 3, 4, 3, gen);
        const PairedBatch b = random_batch(12, 3, 4, gen);
        const LossGrad lg = ce_loss_and_grad(m, b.clean_inputs, b.labels);
        std::uniform_int_distribution<std::size_t> pick(0, m.weights.size() - 1);
        for (int c = 0; c < 20; ++c) {
            const std::size_t i = pick(gen);
            const double fd = oracles::central_diff(
                [&](const std::vector<double>& w) {
                    ToyModel mm = m;
                    mm.weights = w;
                    return ce_loss(mm, b.clean_inputs, b.labels);
                },
                m.weights, i, 1e-6);
            const double denom = std::max(std::fabs(lg.grad[i]), 1e-8);
            CHECK(std::fabs(fd - lg.grad[i]) / denom < 1e-6);
        }
    }
}

TEST_CASE("r_spec_and_grad: closed gate gives sqrt(eps) and a vanishing gradient") {
    // Scores far above the buffer on every example: margins >> gamma.
    ToyModel m = make_model(ModelKind::linear, 2, 2, 0, 0);
    m.weights = {40.0, 0.0, 0.0, 40.0, 0.0, 0.0};
    PairedBatch b;
    b.clean_inputs = {{1.0, 0.0}, {0.0, 1.0}};
    b.perturbed_inputs = b.clean_inputs;
    b.labels = {0, 1};
    const GateParams gp{0.5, 0.1};
    const double eps = 1e-8;
    const RegTerm term = r_spec_and_grad(m, b, gp, {1.0, 0.0}, eps);
    CHECK(term.value == doctest::Approx(std::sqrt(eps)).epsilon(1e-6));
    for (double g : term.grad) CHECK(std::fabs(g) < 1e-12);
}

TEST_CASE("r_spec_and_grad: full-chain finite differences with v fixed") {
    std::mt19937_64 gen(73);
    const GateParams gp{0.6, 0.25};
    const double eps = 1e-8;
    for (ModelKind kind : {ModelKind::linear, ModelKind::mlp1}) {
        const int k = 4, d = 5;
        const ToyModel m = random_model(kind, k, d, 4, gen);
        const PairedBatch b = random_batch(16, k, d, gen);
        const std::vector<double> v = unit_vector(k, gen);
        const RegTerm term = r_spec_and_grad(m, b, gp, v, eps);
        std::uniform_int_distribution<std::size_t> pick(0, m.weights.size() - 1);
        for (int c = 0; c < 20; ++c) {
            const std::size_t i = pick(gen);
            const double fd = oracles::central_diff(
                [&](const std::vector<double>& w) {
                    ToyModel mm = m;
                    mm.weights = w;
                    return r_spec_and_grad(mm, b, gp, v, eps).value;
                },
                m.weights, i, 1e-6);
            const double denom = std::max(std::fabs(term.grad[i]), 1e-7);
            CHECK(std::fabs(fd - term.grad[i]) / denom < 1e-4);
        }
    }
}

TEST_CASE("r_spec_and_grad: duplication invariance") {
    std::mt19937_64 gen(74);
    const GateParams gp{0.4, 0.2};
    const ToyModel m = random_model(ModelKind::linear, 3, 4, 0, gen);
    const PairedBatch b = random_batch(10, 3, 4, gen);
    PairedBatch doubled = b;
    for (std::size_t i = 0; i < b.clean_inputs.size(); ++i) {
        doubled.clean_inputs.push_back(b.clean_inputs[i]);
        doubled.perturbed_inputs.push_back(b.perturbed_inputs[i]);
        doubled.labels.push_back(b.labels[i]);
    }
    const std::vector<double> v = unit_vector(3, gen);
    const RegTerm a = r_spec_and_grad(m, b, gp, v, 1e-8);
    const RegTerm c = r_spec_and_grad(m, doubled, gp, v, 1e-8);
    CHECK(std::fabs(a.value - c.value) < 1e-12);
    for (std::size_t i = 0; i < a.grad.size(); ++i) CHECK(std::fabs(a.grad[i] - c.grad[i]) < 1e-12);
}

TEST_CASE("r_spec value range") {
    std::mt19937_64 gen(75);
    const GateParams gp{0.5, 0.3};
    const double eps = 1e-8;
    for (int t = 0; t < 10; ++t) {
        const int k = 4;
        const ToyModel m = random_model(ModelKind::linear, k, 3, 0, gen);
        const PairedBatch b = random_batch(20, k, 3, gen);
        const double value = r_spec_and_grad(m, b, gp, unit_vector(k, gen), eps).value;
        CHECK(value >= std::sqrt(eps) - 1e-15);
        CHECK(value <= std::sqrt(static_cast<double>(k) + eps));
    }
}

TEST_CASE("r_stab: zero noise with clean inputs is exactly zero") {
    std::mt19937_64 gen(76);
    const ToyModel m = random_model(ModelKind::linear, 3, 4, 0, gen);
    PairedBatch b = random_batch(8, 3, 4, gen);
    b.perturbed_inputs = b.clean_inputs;  // x' = x
    const std::vector<double> u(m.weights.size(), 0.0);
    const RegTerm term = r_stab_with_noise(m, b, u, {});
    CHECK(term.value == 0.0);
    for (double g : term.grad) CHECK(std::fabs(g) < 1e-14);
}

TEST_CASE("r_stab: nonnegative and matches finite differences with u fixed") {
    std::mt19937_64 gen(77);
    for (ModelKind kind : {ModelKind::linear, ModelKind::mlp1}) {
        const ToyModel m = random_model(kind, 3, 4, 3, gen);
        const PairedBatch b = random_batch(10, 3, 4, gen);
        std::normal_distribution<double> nd(0.0, 0.1);
        std::vector<double> u(m.weights.size());
        for (double& x : u) x = nd(gen);

        // Freeze the stop-gradient reference at the base point.
        std::vector<OptionDistribution> refs;
        for (const auto& x : b.clean_inputs) refs.push_back(softmax(forward(m, x)));

        const RegTerm term = r_stab_with_noise(m, b, u, refs);
        CHECK(term.value >= 0.0);
        std::uniform_int_distribution<std::size_t> pick(0, m.weights.size() - 1);
        for (int c = 0; c < 20; ++c) {
            const std::size_t i = pick(gen);
            const double fd = oracles::central_diff(
                [&](const std::vector<double>& w) {
                    ToyModel mm = m;
                    mm.weights = w;
                    return r_stab_with_noise(mm, b, u, refs).value;
                },
                m.weights, i, 1e-6);
            const double denom = std::max(std::fabs(term.grad[i]), 1e-8);
            CHECK(std::fabs(fd - term.grad[i]) / denom < 1e-5);
        }
    }
}

TEST_CASE("composite objective gradient matches finite differences") {
    std::mt19937_64 gen(78);
    const double alpha = 0.3, beta = 0.2, eps = 1e-8;
    const GateParams gp{0.5, 0.25};
    const ToyModel m = random_model(ModelKind::linear, 4, 5, 0, gen);
    const PairedBatch b = random_batch(14, 4, 5, gen);
    const std::vector<double> v = unit_vector(4, gen);
    std::normal_distribution<double> nd(0.0, 0.05);
    std::vector<double> u(m.weights.size());
    for (double& x : u) x = nd(gen);
    std::vector<OptionDistribution> refs;
    for (const auto& x : b.clean_inputs) refs.push_back(softmax(forward(m, x)));

    const LossGrad ce = ce_loss_and_grad(m, b.clean_inputs, b.labels);
    const RegTerm spec = r_spec_and_grad(m, b, gp, v, eps);
    const RegTerm stab = r_stab_with_noise(m, b, u, refs);
    std::vector<double> grad(m.weights.size());
    for (std::size_t i = 0; i < grad.size(); ++i)
        grad[i] = ce.grad[i] + alpha * spec.grad[i] + beta * stab.grad[i];

    const auto objective = [&](const std::vector<double>& w) {
        ToyModel mm = m;
        mm.weights = w;
        return ce_loss(mm, b.clean_inputs, b.labels) +
               alpha * r_spec_and_grad(mm, b, gp, v, eps).value +
               beta * r_stab_with_noise(mm, b, u, refs).value;
    };
    std::uniform_int_distribution<std::size_t> pick(0, m.weights.size() - 1);
    for (int c = 0; c < 20; ++c) {
        const std::size_t i = pick(gen);
        const double fd = oracles::central_diff(objective, m.weights, i, 1e-6);
        const double denom = std::max(std::fabs(grad[i]), 1e-7);
        CHECK(std::fabs(fd - grad[i]) / denom < 1e-4);
    }
}

TEST_CASE("margin-stability: small sup-norm perturbations never flip the argmax") {
    std::mt19937_64 gen(79);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::uniform_real_distribution<double> score(-3.0, 3.0);
    int done = 0;
    while (done < 20000) {
        ScoreVector s(4);
        for (double& v : s) v = score(gen);
        const int y = static_cast<int>(gen() % 4);
        const double delta = margin(s, y);
        if (delta <= 1e-12) continue;
        ++done;
        const double gamma = delta * (0.2 + 0.79 * unif(gen));  // gamma < margin
        const double eps = 0.5 * gamma * (0.99 * unif(gen));    // eps < gamma / 2
        ScoreVector sp(s);
        for (double& v : sp) v += eps * (2.0 * unif(gen) - 1.0);
        int best = 0;
        for (int k = 1; k < 4; ++k)
            if (sp[k] > sp[best]) best = k;
        CHECK(best == y);
    }
}

TEST_CASE("train: alpha = beta = 0 reproduces a plain CE trainer bit for bit") {
    SynthTaskSpec spec;
    spec.k = 3;
    spec.feature_dim = 4;
    spec.class_means = {{2, 0, 0, 0}, {0, 2, 0, 0}, {0, 0, 2, 0}};
    spec.n_train = 90;
    spec.n_val = 9;
    spec.n_test = 9;
    spec.seed = 5;
    const SynthTask task = generate_synth_task(spec);

    TrainConfig cfg;
    cfg.alpha = 0.0;
    cfg.beta = 0.0;
    cfg.learning_rate = 0.2;
    cfg.batch_size = 16;
    cfg.steps = 40;
    cfg.seed = 5;
    const ToyModel init = make_model(ModelKind::linear, 3, 4, 0, 5);
    const TrainResult got = train(init, task.train, cfg);

    // Reference CE loop built from the public pieces.
    ToyModel ref = init;
    for (int step = 0; step < cfg.steps; ++step) {
        const std::vector<std::size_t> idx =
            batch_indices(cfg.seed, step, cfg.batch_size, task.train.size());
        std::vector<std::vector<double>> bx;
        std::vector<int> by;
        for (std::size_t i : idx) {
            bx.push_back(task.train.inputs[i]);
            by.push_back(task.train.labels[i]);
        }
        const LossGrad lg = ce_loss_and_grad(ref, bx, by);
        for (std::size_t i = 0; i < ref.weights.size(); ++i)
            ref.weights[i] -= cfg.learning_rate * lg.grad[i];
    }
    CHECK(got.model.weights == ref.weights);
    CHECK_FALSE(got.aborted);
    CHECK(static_cast<int>(got.trace.size()) == cfg.steps);
}

TEST_CASE("train: identical config and seed give bitwise identical weights") {
    SynthTaskSpec spec;
    spec.k = 3;
    spec.feature_dim = 4;
    spec.class_means = {{2, 0, 0, 0}, {0, 2, 0, 0}, {0, 0, 2, 0}};
    spec.confusion_pairs = {{0, 1, 0.5}};
    spec.n_train = 90;
    spec.n_val = 9;
    spec.n_test = 9;
    spec.seed = 6;
    const SynthTask task = generate_synth_task(spec);

    TrainConfig cfg;
    cfg.alpha = 0.1;
    cfg.beta = 0.05;
    cfg.gate = {0.4, 0.1};
    cfg.t_pi = 5;
    cfg.refresh_n = 4;
    cfg.learning_rate = 0.1;
    cfg.batch_size = 16;
    cfg.steps = 30;
    cfg.perturb.kind = PerturbKind::gaussian_noise;
    cfg.perturb.magnitude = 0.4;
    cfg.perturb.seed = 6;
    cfg.seed = 6;
    const ToyModel init = make_model(ModelKind::linear, 3, 4, 0, 6);
    const TrainResult a = train(init, task.train, cfg);
    const TrainResult b = train(init, task.train, cfg);
    CHECK(a.model.weights == b.model.weights);
    REQUIRE(a.trace.size() == b.trace.size());
    for (std::size_t i = 0; i < a.trace.size(); ++i) {
        CHECK(a.trace[i].loss_total == b.trace[i].loss_total);
        CHECK(a.trace[i].sigma_hat == b.trace[i].sigma_hat);
    }
}

TEST_CASE("train: non-finite loss aborts with a diagnostic trace") {
    SynthTaskSpec spec;
    spec.k = 2;
    spec.feature_dim = 2;
    spec.class_means = {{5, 0}, {0, 5}};
    spec.n_train = 20;
    spec.n_val = 2;
    spec.n_test = 2;
    spec.seed = 7;
    const SynthTask task = generate_synth_task(spec);
    TrainConfig cfg;
    cfg.learning_rate = 1e308;  // first update overflows the weights
    cfg.batch_size = 8;
    cfg.steps = 50;
    cfg.seed = 7;
    const TrainResult res = train(make_model(ModelKind::linear, 2, 2, 0, 7), task.train, cfg);
    CHECK(res.aborted);
    CHECK_FALSE(res.abort_reason.empty());
    CHECK(res.trace.size() < 50);
}

TEST_CASE("generate_synth_task: separable task trains to high accuracy") {
    SynthTaskSpec spec;
    spec.k = 3;
    spec.feature_dim = 6;
    spec.class_means = {{6, 0, 0, 0, 0, 0}, {0, 6, 0, 0, 0, 0}, {0, 0, 6, 0, 0, 0}};
    spec.class_cov_scale = 0.5;
    spec.n_train = 300;
    spec.n_val = 30;
    spec.n_test = 300;
    spec.seed = 8;
    const SynthTask task = generate_synth_task(spec);

    TrainConfig cfg;
    cfg.learning_rate = 0.3;
    cfg.batch_size = 32;
    cfg.steps = 150;
    cfg.seed = 8;
    const TrainResult res = train(make_model(ModelKind::linear, 3, 6, 0, 8), task.train, cfg);
    const GateParams gp{0.0, 1e-3};
    const RiskReport rep = evaluate(res.model, task.test, task.test, gp, "none");
    CHECK(rep.clean_acc >= 0.99);
}

TEST_CASE("generate_synth_task: determinism and zero-noise permutation structure") {
    SynthTaskSpec spec;
    spec.k = 3;
    spec.feature_dim = 3;
    spec.class_means = {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
    spec.confusion_pairs = {{0, 1, 0.4}};
    spec.class_cov_scale = 0.0;
    spec.n_train = 12;
    spec.n_val = 3;
    spec.n_test = 3;
    spec.seed = 9;
    const SynthTask a = generate_synth_task(spec);
    const SynthTask b = generate_synth_task(spec);
    CHECK(a.train.inputs == b.train.inputs);
    CHECK(a.train.labels == b.train.labels);

    // Permute classes (0 1 2) -> (2 0 1) in the task definition; with zero
    // covariance each class's samples sit exactly on the adjusted mean.
    const std::vector<int> perm{2, 0, 1};
    SynthTaskSpec pspec = spec;
    pspec.class_means = {{0, 0, 0}, {0, 0, 0}, {0, 0, 0}};
    for (int c = 0; c < 3; ++c) pspec.class_means[perm[c]] = spec.class_means[c];
    pspec.confusion_pairs = {{perm[0], perm[1], 0.4}};
    const SynthTask p = generate_synth_task(pspec);
    for (std::size_t i = 0; i < a.train.size(); ++i) {
        const int y = a.train.labels[i];
        // Find a permuted-task sample of class perm[y] and compare features.
        bool found = false;
        for (std::size_t j = 0; j < p.train.size(); ++j) {
            if (p.train.labels[j] != perm[y]) continue;
            if (p.train.inputs[j] == a.train.inputs[i]) {
                found = true;
                break;
            }
        }
        CHECK(found);
    }
}

TEST_CASE("mlp1 end to end: training reduces the loss") {
    SynthTaskSpec spec;
    spec.k = 3;
    spec.feature_dim = 4;
    spec.class_means = {{3, 0, 0, 0}, {0, 3, 0, 0}, {0, 0, 3, 0}};
    spec.n_train = 120;
    spec.n_val = 12;
    spec.n_test = 12;
    spec.seed = 10;
    const SynthTask task = generate_synth_task(spec);
    TrainConfig cfg;
    cfg.learning_rate = 0.1;
    cfg.batch_size = 24;
    cfg.steps = 120;
    cfg.seed = 10;
    const TrainResult res = train(make_model(ModelKind::mlp1, 3, 4, 8, 10), task.train, cfg);
    CHECK_FALSE(res.aborted);
    CHECK(res.trace.back().loss_ce < res.trace.front().loss_ce);
}
