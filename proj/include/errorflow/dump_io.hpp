// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "errorflow/calibrate_eval.hpp"
#include "errorflow/core_risk.hpp"
#include "errorflow/perturb.hpp"
#include "errorflow/synth.hpp"
#include "errorflow/train.hpp"

namespace errorflow {

/// Bad inputs or configs; the CLI maps this to exit code 1.
class ValidationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Filesystem problems; the CLI maps this to exit code 2.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// One externally produced example: a label plus a score vector per
/// condition label. The "clean" condition is mandatory.
struct LogitRecord {
    std::string id;
    int label = 0;
    std::map<std::string, ScoreVector> scores;
};

/// Parses a JSONL logit dump. K is inferred from the first record's clean
/// scores and enforced on every later score vector; violations report the
/// offending line number.
std::vector<LogitRecord> load_dump(const std::string& path);

struct AnalyzeResult {
    RiskReport report;
    FlowMatrix matrix;
    double q = 0.0;
    double gamma_raw = 0.0;  // calibrated quantile before the >= 0 clamp
    std::size_t n_calibration = 0;
    std::size_t n_evaluation = 0;
};

/// Stable-hash split of the id into a calibration half (gamma from the
/// condition margins) and an evaluation half (metric readout). Pass
/// kappa <= 0 to use the default temperature rule.
AnalyzeResult analyze_dump(const std::vector<LogitRecord>& records, const std::string& condition,
                           double q, double kappa);

/// FNV-1a; bit 0 decides the calibration/evaluation half.
std::uint64_t stable_id_hash(const std::string& id);

// --- serialization -------------------------------------------------------

/// Shortest decimal form that round-trips the double exactly.
std::string format_double(double v);

/// RFC 4180 field quoting.
std::string csv_escape(const std::string& field);
/// Joins fields with commas and terminates the row with CRLF.
std::string csv_row(const std::vector<std::string>& fields);

nlohmann::ordered_json report_to_json(const RiskReport& rep);
nlohmann::ordered_json flow_matrix_to_json(const FlowMatrix& m);
nlohmann::ordered_json analyze_to_json(const AnalyzeResult& res, const std::string& condition,
                                       std::size_t input_records);

// --- run configuration ----------------------------------------------------

struct BoundConfig {
    double delta = 0.05;
    double tau_p = 1.0;
    double sigma_q = 0.0;  // <= 0 means reuse the training sigma_q
    int posterior_samples = 200;
    bool has_user_rho = false;
    double user_rho = 0.0;
};

struct RunConfig {
    std::string task;  // analyze | calibrate | train | bound | report
    std::vector<std::uint64_t> seeds;
    double calibration_q = 0.25;
    double kappa = 0.0;  // <= 0 means the default rule
    ModelKind model_kind = ModelKind::linear;
    int hidden = 16;
    SynthTaskSpec synth;
    TrainConfig train;
    BoundConfig bound;
};

/// Parses the JSON run configuration; throws ValidationError with the
/// offending key on bad content.
RunConfig parse_run_config(const nlohmann::json& doc);
RunConfig load_run_config(const std::string& path);

PerturbSpec perturb_from_json(const nlohmann::json& doc);
nlohmann::ordered_json perturb_to_json(const PerturbSpec& spec);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);

}  // namespace errorflow
