// SPDX-License-Identifier: Apache-2.0
#include "errorflow/cli.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <iostream>

#include "CLI11.hpp"
#include "json.hpp"

#include "errorflow/dump_io.hpp"
#include "errorflow/pac_bayes.hpp"

namespace errorflow {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

constexpr double kEta = 0.5;  // valid for the sigmoid gate at any kappa

std::string dump_json(const ordered_json& j) { return j.dump(2) + "\n"; }

int run_analyze(const std::string& input, const std::string& condition, double q, double kappa,
                const std::string& out_path) {
    const std::vector<LogitRecord> records = load_dump(input);
    const AnalyzeResult res = analyze_dump(records, condition, q, kappa);
    write_text_file(out_path, dump_json(analyze_to_json(res, condition, records.size())));
    std::cout << "analyze: " << records.size() << " records, gamma=" << format_double(
                     res.report.gamma_used)
              << " vwr=" << format_double(res.report.vwr_hat)
              << " vsr=" << format_double(res.report.vsr_hat) << " -> " << out_path << "\n";
    return 0;
}

int run_calibrate(const std::string& input, const std::string& condition,
                  const std::vector<double>& q_list, double kappa, const std::string& out_path) {
    const std::vector<LogitRecord> records = load_dump(input);
    ordered_json doc;
    doc["schema_version"] = 1;
    doc["task"] = "calibrate";
    doc["condition"] = condition;
    doc["q_list"] = q_list;
    ordered_json rows = ordered_json::array();
    // One shared kappa across the sweep so rows differ only in gamma. When
    // unspecified it comes from the default rule at the first q's buffer.
    double kappa_used = kappa;
    for (double q : q_list) {
        AnalyzeResult res = analyze_dump(records, condition, q, kappa_used);
        if (kappa_used <= 0.0) {
            kappa_used = res.report.kappa_used;
            res = analyze_dump(records, condition, q, kappa_used);
        }
        ordered_json row;
        row["q"] = q;
        row["gamma_raw"] = res.gamma_raw;
        row["report"] = report_to_json(res.report);
        rows.push_back(std::move(row));
    }
    doc["kappa"] = kappa_used;
    doc["rows"] = std::move(rows);
    write_text_file(out_path, dump_json(doc));
    std::cout << "calibrate: " << q_list.size() << " buffers -> " << out_path << "\n";
    return 0;
}

int run_bound(double vsr, int k, long long m_min, double kl, double delta, double gamma,
              double eta, double rho) {
    BoundInputs b;
    b.vsr_emp = vsr;
    b.k = k;
    b.m_min = m_min;
    b.kl = kl;
    b.delta = delta;
    const BoundTerms t = pac_bound(b);
    std::cout << "term_spec=" << format_double(t.term_spec) << "\n"
              << "term_complexity=" << format_double(t.term_complexity) << "\n"
              << "total=" << format_double(t.total) << "\n"
              << "combined_wcr_bound=" << format_double(combined_bound(b, gamma, eta, rho))
              << "\n";
    return 0;
}

std::string trace_csv(const std::vector<TraceRow>& trace) {
    std::string out = csv_row(
        {"step", "loss_total", "loss_ce", "r_spec", "r_stab", "sigma_hat", "margin_ties"});
    for (const TraceRow& r : trace)
        out += csv_row({std::to_string(r.step), format_double(r.loss_total),
                        format_double(r.loss_ce), format_double(r.r_spec),
                        format_double(r.r_stab), format_double(r.sigma_hat),
                        std::to_string(r.margin_ties)});
    return out;
}

struct SeedRun {
    std::uint64_t seed = 0;
    double gamma_raw = 0.0;
    GateParams gate;
    RiskReport base_report;
    RiskReport plugin_report;
    ordered_json base_bound;
    ordered_json plugin_bound;
};

ordered_json bound_block(const ToyModel& model, const RunConfig& cfg, const GateParams& gate,
                         const Dataset& eval_ptb, std::uint64_t seed) {
    const double sigma_q = cfg.bound.sigma_q > 0.0 ? cfg.bound.sigma_q : cfg.train.sigma_q;
    PosteriorSpec ps;
    ps.mu = model.weights;
    ps.sigma_q = sigma_q;
    ps.tau_p = cfg.bound.tau_p;
    ps.d_train = static_cast<int>(model.weights.size());

    const FlowMatrix avg = posterior_average_flow_matrix(
        model, sigma_q, eval_ptb.inputs, eval_ptb.labels, gate,
        cfg.bound.posterior_samples, seed);

    BoundInputs b;
    b.vsr_emp = vsr_exact(avg);
    b.k = model.k;
    b.m_min = min_column_count(avg);
    b.kl = gaussian_kl(ps);
    b.delta = cfg.bound.delta;
    const BoundTerms t = pac_bound(b);

    double rho;
    std::string rho_source;
    if (cfg.bound.has_user_rho) {
        rho = cfg.bound.user_rho;
        rho_source = "user";
    } else {
        const ModelFactory factory = [&model](const std::vector<double>& w) {
            ToyModel m = model;
            m.weights = w;
            return m;
        };
        rho = estimate_rho(ps, factory, eval_ptb.inputs, gate.gamma,
                           cfg.bound.posterior_samples, seed);
        rho_source = "monte_carlo";
    }

    ordered_json j;
    j["delta"] = b.delta;
    j["tau_p"] = ps.tau_p;
    j["sigma_q"] = ps.sigma_q;
    j["d_train"] = ps.d_train;
    j["kl"] = b.kl;
    j["vsr_posterior_emp"] = b.vsr_emp;
    j["vwr_posterior_emp"] = vwr(avg);
    j["m_min"] = b.m_min;
    j["posterior_samples"] = cfg.bound.posterior_samples;
    j["term_spec"] = t.term_spec;
    j["term_complexity"] = t.term_complexity;
    j["total"] = t.total;
    j["gamma"] = gate.gamma;
    j["eta"] = kEta;
    j["rho"] = rho;
    j["rho_source"] = rho_source;
    j["combined_wcr_bound"] = combined_bound(b, gate.gamma, kEta, rho);
    // An input perturbation that depends on the trained model (pgd) is
    // outside the fixed-protocol assumption of the bound.
    j["protocol_label"] = cfg.train.perturb.kind == PerturbKind::pgd
                              ? "stress-test, outside theorem conditions"
                              : "fixed-protocol";
    return j;
}

ordered_json aggregate_block(const std::vector<SeedRun>& runs, bool plugin) {
    auto mean_std = [&](auto pick) {
        double mean = 0.0;
        for (const SeedRun& r : runs) mean += pick(r);
        mean /= static_cast<double>(runs.size());
        double var = 0.0;
        for (const SeedRun& r : runs) {
            const double d = pick(r) - mean;
            var += d * d;
        }
        var = runs.size() > 1 ? var / static_cast<double>(runs.size() - 1) : 0.0;
        return std::pair<double, double>(mean, std::sqrt(var));
    };
    auto rep = [plugin](const SeedRun& r) -> const RiskReport& {
        return plugin ? r.plugin_report : r.base_report;
    };
    ordered_json j;
    const auto [vwr_m, vwr_s] = mean_std([&](const SeedRun& r) { return rep(r).vwr_hat; });
    const auto [vsr_m, vsr_s] = mean_std([&](const SeedRun& r) { return rep(r).vsr_hat; });
    const auto [ca_m, ca_s] = mean_std([&](const SeedRun& r) { return rep(r).clean_acc; });
    const auto [wc_m, wc_s] = mean_std([&](const SeedRun& r) { return rep(r).ptb_wc_acc; });
    j["vwr_mean"] = vwr_m;
    j["vwr_std"] = vwr_s;
    j["vsr_mean"] = vsr_m;
    j["vsr_std"] = vsr_s;
    j["clean_acc_mean"] = ca_m;
    j["clean_acc_std"] = ca_s;
    j["ptb_wc_acc_mean"] = wc_m;
    j["ptb_wc_acc_std"] = wc_s;
    return j;
}

int run_train(const std::string& config_path, const std::string& out_dir) {
    const RunConfig cfg = load_run_config(config_path);
    fs::create_directories(out_dir);

    std::vector<SeedRun> runs;
    for (std::uint64_t seed : cfg.seeds) {
        SeedRun run;
        run.seed = seed;

        SynthTaskSpec synth = cfg.synth;
        synth.seed = seed;
        const SynthTask task = generate_synth_task(synth);

        const ToyModel init =
            make_model(cfg.model_kind, synth.k, synth.feature_dim, cfg.hidden, seed);

        // Base run: the plain objective; no buffer needed yet.
        TrainConfig base_cfg = cfg.train;
        base_cfg.alpha = 0.0;
        base_cfg.beta = 0.0;
        base_cfg.seed = seed;
        const TrainResult base = train(init, task.train, base_cfg);
        if (base.aborted) throw ValidationError("train aborted (base): " + base.abort_reason);

        // Calibrate the buffer on the base model's perturbed validation
        // margins; both runs share it.
        const PairedBatch val_pair =
            make_paired_batch(task.val.inputs, task.val.labels, cfg.train.perturb, &base.model,
                              rng_tags::perturb_eval);
        Dataset val_ptb{val_pair.perturbed_inputs, val_pair.labels};
        run.gamma_raw = calibrate_gamma(model_margins(base.model, val_ptb), cfg.calibration_q);
        run.gate.gamma = std::max(0.0, run.gamma_raw);
        run.gate.kappa = cfg.kappa > 0.0 ? cfg.kappa : default_kappa(run.gate.gamma);

        TrainConfig plug_cfg = cfg.train;
        plug_cfg.gate = run.gate;
        plug_cfg.seed = seed;
        const TrainResult plug = train(init, task.train, plug_cfg);
        if (plug.aborted) throw ValidationError("train aborted (plugin): " + plug.abort_reason);

        // Shared test-split perturbation stream for the paired readout.
        const PairedBatch test_pair =
            make_paired_batch(task.test.inputs, task.test.labels, cfg.train.perturb, &base.model,
                              rng_tags::perturb_eval, 1ULL << 32);
        Dataset test_ptb{test_pair.perturbed_inputs, test_pair.labels};
        const std::string label = perturb_label(cfg.train.perturb);
        run.base_report = evaluate(base.model, task.test, test_ptb, run.gate, label);
        run.plugin_report = evaluate(plug.model, task.test, test_ptb, run.gate, label);
        run.base_bound = bound_block(base.model, cfg, run.gate, test_ptb, seed);
        run.plugin_bound = bound_block(plug.model, cfg, run.gate, test_ptb, seed);

        const std::string tag = "_seed" + std::to_string(seed);
        write_text_file(out_dir + "/trace_base" + tag + ".csv", trace_csv(base.trace));
        write_text_file(out_dir + "/trace_plugin" + tag + ".csv", trace_csv(plug.trace));
        runs.push_back(std::move(run));
    }

    ordered_json doc;
    doc["schema_version"] = 1;
    doc["task"] = "train";
    doc["calibration_q"] = cfg.calibration_q;
    doc["seeds"] = cfg.seeds;
    ordered_json train_cfg_json;
    train_cfg_json["alpha"] = cfg.train.alpha;
    train_cfg_json["beta"] = cfg.train.beta;
    train_cfg_json["t_pi"] = cfg.train.t_pi;
    train_cfg_json["refresh_n"] = cfg.train.refresh_n;
    train_cfg_json["eps_spec"] = cfg.train.eps_spec;
    train_cfg_json["sigma_q"] = cfg.train.sigma_q;
    train_cfg_json["learning_rate"] = cfg.train.learning_rate;
    train_cfg_json["batch_size"] = cfg.train.batch_size;
    train_cfg_json["steps"] = cfg.train.steps;
    train_cfg_json["stab_draws"] = cfg.train.stab_draws;
    train_cfg_json["perturb"] = perturb_to_json(cfg.train.perturb);
    doc["config"] = std::move(train_cfg_json);
    doc["delta"] = cfg.bound.delta;

    ordered_json runs_json = ordered_json::array();
    for (const SeedRun& run : runs) {
        for (const bool plugin : {false, true}) {
            ordered_json r;
            r["seed"] = run.seed;
            r["variant"] = plugin ? "plugin" : "base";
            r["gamma_raw"] = run.gamma_raw;
            r["gamma"] = run.gate.gamma;
            r["kappa"] = run.gate.kappa;
            r["report"] = report_to_json(plugin ? run.plugin_report : run.base_report);
            r["bound"] = plugin ? run.plugin_bound : run.base_bound;
            runs_json.push_back(std::move(r));
        }
    }
    doc["runs"] = std::move(runs_json);
    doc["aggregate"] = {{"base", aggregate_block(runs, false)},
                        {"plugin", aggregate_block(runs, true)}};
    write_text_file(out_dir + "/summary.json", dump_json(doc));

    std::cout << "train: " << runs.size() << " seeds"
              << " base vwr=" << format_double(doc["aggregate"]["base"]["vwr_mean"].get<double>())
              << " plugin vwr="
              << format_double(doc["aggregate"]["plugin"]["vwr_mean"].get<double>()) << " -> "
              << out_dir << "/summary.json\n";
    return 0;
}

void flatten_report(const std::string& file, const std::string& variant, const std::string& seed,
                    const json& rep, std::string& csv) {
    csv += csv_row({file, variant, seed, rep.value("perturbation_label", ""),
                    format_double(rep.value("gamma_used", 0.0)),
                    format_double(rep.value("kappa_used", 0.0)),
                    format_double(rep.value("clean_acc", 0.0)),
                    format_double(rep.value("ptb_acc", 0.0)),
                    format_double(rep.value("clean_wc_acc", 0.0)),
                    format_double(rep.value("ptb_wc_acc", 0.0)),
                    format_double(rep.value("vwr_hat", 0.0)),
                    format_double(rep.value("vsr_hat", 0.0))});
}

int run_report(const std::string& in_dir, const std::string& out_csv) {
    if (!fs::is_directory(in_dir)) throw IoError("not a directory: " + in_dir);
    std::string csv = csv_row({"file", "variant", "seed", "condition", "gamma", "kappa",
                               "clean_acc", "ptb_acc", "clean_wc_acc", "ptb_wc_acc", "vwr_hat",
                               "vsr_hat"});
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(in_dir))
        if (entry.is_regular_file() && entry.path().extension() == ".json")
            files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    for (const fs::path& p : files) {
        json doc;
        try {
            doc = json::parse(read_text_file(p.string()));
        } catch (const json::parse_error&) {
            continue;  // not a report
        }
        const std::string name = p.filename().string();
        if (doc.contains("runs")) {
            for (const json& r : doc["runs"])
                flatten_report(name, r.value("variant", ""),
                               std::to_string(r.value("seed", 0ULL)), r["report"], csv);
        } else if (doc.contains("report")) {
            flatten_report(name, doc.value("task", ""), "", doc["report"], csv);
        } else if (doc.contains("rows")) {
            for (const json& r : doc["rows"])
                flatten_report(name, "q=" + format_double(r.value("q", 0.0)), "", r["report"],
                               csv);
        }
    }
    write_text_file(out_csv, csv);
    std::cout << "report: " << files.size() << " files -> " << out_csv << "\n";
    return 0;
}

}  // namespace

int cli_main(const std::vector<std::string>& args) {
    CLI::App app{"margin-aware error-flow risk toolkit"};
    app.require_subcommand(1);

    std::string input, condition = "clean", out_path, config_path, out_dir, in_dir;
    double q = 0.25, kappa = 0.0;
    std::vector<double> q_list{0.10, 0.25, 0.50};

    CLI::App* analyze = app.add_subcommand("analyze", "analyze a JSONL logit dump");
    analyze->add_option("--input", input, "JSONL dump path")->required();
    analyze->add_option("--condition", condition, "perturbation condition label")->required();
    analyze->add_option("--q", q, "calibration quantile in (0,1)");
    analyze->add_option("--kappa", kappa, "gate temperature (default: max(gamma/4, 1e-3))");
    analyze->add_option("--out", out_path, "output JSON path")->required();

    CLI::App* calibrate = app.add_subcommand("calibrate", "buffer sweep over quantiles");
    calibrate->add_option("--input", input, "JSONL dump path")->required();
    calibrate->add_option("--condition", condition, "perturbation condition label")->required();
    calibrate->add_option("--q-list", q_list, "quantiles to sweep")->delimiter(',');
    calibrate->add_option("--kappa", kappa, "gate temperature shared across the sweep");
    calibrate->add_option("--out", out_path, "output JSON path")->required();

    CLI::App* train_cmd = app.add_subcommand("train", "paired base/plug-in training runs");
    train_cmd->add_option("--config", config_path, "JSON run configuration")->required();
    train_cmd->add_option("--out-dir", out_dir, "output directory")->required();

    double b_vsr = 0.0, b_kl = 0.0, b_delta = 0.05, b_gamma = 0.0, b_eta = kEta, b_rho = 0.0;
    int b_k = 2;
    long long b_mmin = 1;
    CLI::App* bound = app.add_subcommand("bound", "evaluate the risk bound terms");
    bound->add_option("--vsr", b_vsr, "empirical posterior spectral risk")->required();
    bound->add_option("--k", b_k, "option count")->required();
    bound->add_option("--m-min", b_mmin, "smallest per-class sample count")->required();
    bound->add_option("--kl", b_kl, "KL(Q||P)")->required();
    bound->add_option("--delta", b_delta, "confidence level in (0,1)")->required();
    bound->add_option("--gamma", b_gamma, "safety buffer for the bridge");
    bound->add_option("--eta", b_eta, "gate floor on the vulnerable event");
    bound->add_option("--rho", b_rho, "stability-failure probability");

    CLI::App* report = app.add_subcommand("report", "flatten report JSONs to CSV");
    report->add_option("--in", in_dir, "directory of report JSONs")->required();
    report->add_option("--out", out_path, "output CSV path")->required();

    // CLI11 wants argv-style reversed arguments.
    std::vector<std::string> rev(args.rbegin(), args.rend());
    try {
        app.parse(rev);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (analyze->parsed()) return run_analyze(input, condition, q, kappa, out_path);
        if (calibrate->parsed()) return run_calibrate(input, condition, q_list, kappa, out_path);
        if (train_cmd->parsed()) return run_train(config_path, out_dir);
        if (bound->parsed()) return run_bound(b_vsr, b_k, b_mmin, b_kl, b_delta, b_gamma, b_eta,
                                              b_rho);
        if (report->parsed()) return run_report(in_dir, out_path);
    } catch (const IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return 2;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}

int cli_main(int argc, char** argv) {
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
    return cli_main(args);
}

}  // namespace errorflow
