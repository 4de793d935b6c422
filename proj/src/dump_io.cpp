// SPDX-License-Identifier: Apache-2.0
#include "errorflow/dump_io.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace errorflow {

using nlohmann::json;
using nlohmann::ordered_json;

std::uint64_t stable_id_hash(const std::string& id) {
    std::uint64_t h = 1469598103934665603ULL;  // FNV-1a offset basis
    for (unsigned char c : id) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

std::vector<LogitRecord> load_dump(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open dump file: " + path);
    std::vector<LogitRecord> records;
    std::string line;
    std::size_t line_no = 0;
    int k = -1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json doc;
        try {
            doc = json::parse(line);
        } catch (const json::parse_error& e) {
            throw ValidationError("line " + std::to_string(line_no) +
                                  ": malformed JSON: " + e.what());
        }
        LogitRecord rec;
        try {
            rec.id = doc.at("id").get<std::string>();
            rec.label = doc.at("label").get<int>();
            for (const auto& [cond, arr] : doc.at("scores").items())
                rec.scores[cond] = arr.get<ScoreVector>();
        } catch (const json::exception& e) {
            throw ValidationError("line " + std::to_string(line_no) +
                                  ": bad record shape: " + e.what());
        }
        if (rec.scores.find("clean") == rec.scores.end())
            throw ValidationError("line " + std::to_string(line_no) + ": record '" + rec.id +
                                  "' is missing the \"clean\" condition");
        for (const auto& [cond, s] : rec.scores) {
            if (k < 0) k = static_cast<int>(s.size());
            if (static_cast<int>(s.size()) != k)
                throw ValidationError("line " + std::to_string(line_no) + ": condition '" + cond +
                                      "' has K=" + std::to_string(s.size()) +
                                      " but the dump established K=" + std::to_string(k));
            for (double v : s)
                if (!std::isfinite(v))
                    throw ValidationError("line " + std::to_string(line_no) +
                                          ": non-finite score");
        }
        if (rec.label < 0 || rec.label >= k)
            throw ValidationError("line " + std::to_string(line_no) + ": label " +
                                  std::to_string(rec.label) + " outside [0," +
                                  std::to_string(k) + ")");
        records.push_back(std::move(rec));
    }
    return records;
}

AnalyzeResult analyze_dump(const std::vector<LogitRecord>& records, const std::string& condition,
                           double q, double kappa) {
    if (records.empty()) throw ValidationError("analyze: empty record set");
    std::vector<const LogitRecord*> cal, eval;
    for (const LogitRecord& rec : records) {
        if (rec.scores.find(condition) == rec.scores.end())
            throw ValidationError("analyze: record '" + rec.id + "' is missing condition '" +
                                  condition + "'");
        if ((stable_id_hash(rec.id) & 1ULL) == 0)
            cal.push_back(&rec);
        else
            eval.push_back(&rec);
    }
    if (cal.empty() || eval.empty())
        throw ValidationError("analyze: hash split left one half empty (" +
                              std::to_string(cal.size()) + " calibration / " +
                              std::to_string(eval.size()) + " evaluation)");

    std::vector<double> margins;
    margins.reserve(cal.size());
    for (const LogitRecord* rec : cal)
        margins.push_back(margin(rec->scores.at(condition), rec->label));

    AnalyzeResult res;
    res.q = q;
    res.gamma_raw = calibrate_gamma(margins, q);
    res.n_calibration = cal.size();
    res.n_evaluation = eval.size();

    GateParams gp;
    gp.gamma = std::max(0.0, res.gamma_raw);
    gp.kappa = kappa > 0.0 ? kappa : default_kappa(gp.gamma);

    std::vector<ScoreVector> clean_scores, ptb_scores;
    std::vector<int> labels;
    clean_scores.reserve(eval.size());
    ptb_scores.reserve(eval.size());
    labels.reserve(eval.size());
    for (const LogitRecord* rec : eval) {
        clean_scores.push_back(rec->scores.at("clean"));
        ptb_scores.push_back(rec->scores.at(condition));
        labels.push_back(rec->label);
    }
    res.report = evaluate_scores(clean_scores, ptb_scores, labels, gp, condition);
    res.matrix = build_flow_matrix(ptb_scores, labels, gp, /*gated=*/true);
    return res;
}

std::string format_double(double v) {
    char buf[64];
    const auto out = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, out.ptr);
}

std::string csv_escape(const std::string& field) {
    if (field.find_first_of(",\"\r\n") == std::string::npos) return field;
    std::string out = "\"";
    for (char c : field) {
        if (c == '"') out += "\"\"";
        else out += c;
    }
    out += '"';
    return out;
}

std::string csv_row(const std::vector<std::string>& fields) {
    std::string out;
    for (std::size_t i = 0; i < fields.size(); ++i) {
        if (i) out += ',';
        out += csv_escape(fields[i]);
    }
    out += "\r\n";
    return out;
}

ordered_json report_to_json(const RiskReport& rep) {
    ordered_json j;
    j["clean_acc"] = rep.clean_acc;
    j["ptb_acc"] = rep.ptb_acc;
    j["clean_wc_acc"] = rep.clean_wc_acc;
    j["ptb_wc_acc"] = rep.ptb_wc_acc;
    j["vwr_hat"] = rep.vwr_hat;
    j["vsr_hat"] = rep.vsr_hat;
    j["gamma_used"] = rep.gamma_used;
    j["kappa_used"] = rep.kappa_used;
    j["per_class_acc"] = rep.per_class_acc;
    j["m_per_class"] = rep.m_per_class;
    j["perturbation_label"] = rep.perturbation_label;
    return j;
}

ordered_json flow_matrix_to_json(const FlowMatrix& m) {
    ordered_json j;
    j["k"] = m.k;
    ordered_json rows = ordered_json::array();
    for (int i = 0; i < m.k; ++i) {
        ordered_json row = ordered_json::array();
        for (int c = 0; c < m.k; ++c) row.push_back(m.at(i, c));
        rows.push_back(std::move(row));
    }
    j["entries"] = std::move(rows);
    j["column_counts"] = m.column_counts;
    std::vector<bool> mask(m.column_mask.begin(), m.column_mask.end());
    j["column_mask"] = mask;
    return j;
}

ordered_json analyze_to_json(const AnalyzeResult& res, const std::string& condition,
                             std::size_t input_records) {
    ordered_json j;
    j["schema_version"] = 1;
    j["task"] = "analyze";
    j["condition"] = condition;
    j["q"] = res.q;
    j["gamma_raw"] = res.gamma_raw;
    j["split"] = {{"calibration", res.n_calibration}, {"evaluation", res.n_evaluation}};
    j["input_records"] = input_records;
    j["report"] = report_to_json(res.report);
    j["flow_matrix"] = flow_matrix_to_json(res.matrix);
    return j;
}

PerturbSpec perturb_from_json(const json& doc) {
    PerturbSpec spec;
    const std::string kind = doc.value("kind", "gaussian_noise");
    if (kind == "gaussian_noise") spec.kind = PerturbKind::gaussian_noise;
    else if (kind == "directional_shift") spec.kind = PerturbKind::directional_shift;
    else if (kind == "pgd") spec.kind = PerturbKind::pgd;
    else throw ValidationError("perturb: unknown kind '" + kind + "'");
    spec.magnitude = doc.value("magnitude", 0.0);
    if (doc.contains("direction")) spec.direction = doc["direction"].get<std::vector<double>>();
    spec.pgd_steps = doc.value("pgd_steps", 10);
    spec.pgd_step_size = doc.value("pgd_step_size", 0.0);
    spec.seed = doc.value("seed", 0ULL);
    validate_perturb(spec);
    return spec;
}

ordered_json perturb_to_json(const PerturbSpec& spec) {
    ordered_json j;
    j["kind"] = perturb_label(spec);
    j["magnitude"] = spec.magnitude;
    if (!spec.direction.empty()) j["direction"] = spec.direction;
    if (spec.kind == PerturbKind::pgd) {
        j["pgd_steps"] = spec.pgd_steps;
        j["pgd_step_size"] = spec.pgd_step_size;
    }
    j["seed"] = spec.seed;
    return j;
}

namespace {

SynthTaskSpec synth_from_json(const json& doc) {
    SynthTaskSpec spec;
    spec.k = doc.value("k", 2);
    spec.feature_dim = doc.value("feature_dim", 2);
    spec.class_cov_scale = doc.value("class_cov_scale", 1.0);
    spec.n_train = doc.value("n_train", 0);
    spec.n_val = doc.value("n_val", 0);
    spec.n_test = doc.value("n_test", 0);
    spec.seed = doc.value("seed", 0ULL);
    if (doc.contains("class_means")) {
        spec.class_means = doc["class_means"].get<std::vector<std::vector<double>>>();
    } else {
        // Axis-aligned means: class j sits at separation * e_{j mod d}.
        const double sep = doc.value("mean_separation", 3.0);
        spec.class_means.assign(spec.k, std::vector<double>(spec.feature_dim, 0.0));
        for (int j = 0; j < spec.k; ++j) spec.class_means[j][j % spec.feature_dim] = sep;
    }
    if (doc.contains("confusion_pairs")) {
        for (const auto& p : doc["confusion_pairs"]) {
            if (!p.is_array() || p.size() != 3)
                throw ValidationError("synth: confusion pair must be [a, b, strength]");
            ConfusionPair cp;
            cp.a = p[0].get<int>();
            cp.b = p[1].get<int>();
            cp.strength = p[2].get<double>();
            spec.confusion_pairs.push_back(cp);
        }
    }
    return spec;
}

TrainConfig train_from_json(const json& doc) {
    TrainConfig cfg;
    cfg.alpha = doc.value("alpha", 0.1);
    cfg.beta = doc.value("beta", 0.05);
    cfg.t_pi = doc.value("t_pi", 10);
    cfg.refresh_n = doc.value("refresh_n", 10);
    cfg.eps_spec = doc.value("eps_spec", 1e-8);
    cfg.sigma_q = doc.value("sigma_q", 0.05);
    cfg.learning_rate = doc.value("learning_rate", 0.1);
    cfg.batch_size = doc.value("batch_size", 64);
    cfg.steps = doc.value("steps", 200);
    cfg.stab_draws = doc.value("stab_draws", 1);
    if (doc.contains("perturb")) cfg.perturb = perturb_from_json(doc["perturb"]);
    return cfg;
}

}  // namespace

RunConfig parse_run_config(const json& doc) {
    RunConfig cfg;
    cfg.task = doc.value("task", "train");
    if (doc.contains("seeds")) cfg.seeds = doc["seeds"].get<std::vector<std::uint64_t>>();
    if (cfg.seeds.empty()) cfg.seeds = {1};
    cfg.calibration_q = doc.value("calibration_q", 0.25);
    cfg.kappa = doc.value("kappa", 0.0);
    const std::string kind = doc.value("model", json::object()).value("kind", "linear");
    if (kind == "linear") cfg.model_kind = ModelKind::linear;
    else if (kind == "mlp1") cfg.model_kind = ModelKind::mlp1;
    else throw ValidationError("config: unknown model kind '" + kind + "'");
    if (doc.contains("model")) cfg.hidden = doc["model"].value("hidden", 16);
    if (doc.contains("synth")) cfg.synth = synth_from_json(doc["synth"]);
    if (doc.contains("train")) cfg.train = train_from_json(doc["train"]);
    if (doc.contains("bound")) {
        const json& b = doc["bound"];
        cfg.bound.delta = b.value("delta", 0.05);
        cfg.bound.tau_p = b.value("tau_p", 1.0);
        cfg.bound.sigma_q = b.value("sigma_q", 0.0);
        cfg.bound.posterior_samples = b.value("posterior_samples", 200);
        if (b.contains("rho") && !b["rho"].is_null()) {
            cfg.bound.has_user_rho = true;
            cfg.bound.user_rho = b["rho"].get<double>();
        }
    }
    return cfg;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file: " + path);
    json doc;
    try {
        in >> doc;
    } catch (const json::parse_error& e) {
        throw ValidationError(std::string("config: malformed JSON: ") + e.what());
    }
    return parse_run_config(doc);
}

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write file: " + path);
    out << content;
    if (!out) throw IoError("write failed: " + path);
}

}  // namespace errorflow
