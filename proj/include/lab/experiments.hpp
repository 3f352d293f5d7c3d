#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "lab/datagen.hpp"
#include "lab/train.hpp"

namespace lab {

// ---------------------------------------------------------------------------
// Power-law fit: 1 - R^2 ~ A * D^(-alpha_d) * V^(alpha_v), least squares in
// log space.
// ---------------------------------------------------------------------------

struct ScalingRecord {
    double d_tokens = 0;
    double vocab = 0;
    double one_minus_r2 = 0;
};

struct ScalingFit {
    double a = 0;
    double alpha_d = 0;
    double alpha_v = 0;
    double r2_fit = 0;
    bool d_identifiable = true;
    bool v_identifiable = true;
    nlohmann::json to_json() const;
};

ScalingFit fit_scaling_law(const std::vector<ScalingRecord>& records);

// Rank correlation; the monotonicity statistic for phase-transition checks.
double spearman(const std::vector<double>& a, const std::vector<double>& b);

// ---------------------------------------------------------------------------
// Sweep cells
// ---------------------------------------------------------------------------

// A fully specified experiment cell: dataset -> train -> eval (-> probes).
struct CellConfig {
    std::string kind = "sine";  // sine | kepler
    std::string head = "cls";   // cls | reg
    int64_t d_traj = 64;
    int vocab = 64;       // classification
    double sigma = 0.0;   // regression context noise
    int width = 32;       // N
    int ctx = 100;
    int n_layer = 2;
    int n_head = 1;
    int64_t steps = 20000;
    int batch = 64;
    int64_t interval = 500;
    uint64_t data_seed = 1234;  // shared across cells with equal (kind, d_traj)
    uint64_t seed = 0;          // per-cell model/train stream
    bool probe = false;         // newton/kepler probe sweep after training
    int eval_trajs = 256;
    int64_t probe_rows = 20000;

    nlohmann::json to_json() const;
    static CellConfig from_json(const nlohmann::json& j);
    std::string content_hash() const;  // sha256 of the canonical json
};

struct CellResult {
    CellConfig cfg;
    std::string hash;
    bool failed = false;
    std::string error;
    double best_spatial_r2 = std::numeric_limits<double>::quiet_NaN();
    double final_train_loss = std::numeric_limits<double>::quiet_NaN();
    double final_test_loss = std::numeric_limits<double>::quiet_NaN();
    double eval_mde = std::numeric_limits<double>::quiet_NaN();
    double newton_score = std::numeric_limits<double>::quiet_NaN();
    double kepler_score = std::numeric_limits<double>::quiet_NaN();
    nlohmann::json probe_best;          // target -> best R^2
    std::vector<double> horizon_err;    // mean rollout error per future step
    nlohmann::json to_json() const;
    static CellResult from_json(const nlohmann::json& j);
};

struct SweepSpec {
    std::string name = "sweep";
    std::vector<CellConfig> cells;
    // Grid form: lists for d_traj/vocab/sigma/width/ctx, seeds count.
    static SweepSpec from_json(const nlohmann::json& j);
};

struct SweepOptions {
    std::string work_dir = "sweep_out";
    int jobs = 1;        // capped by the LAB_THREADS environment variable
    bool reuse = true;   // skip cells whose result file already exists
    bool quiet = false;
};

// Executes every cell (datagen -> train -> eval -> probe), one row per cell.
// Results are content-addressed under work_dir/results; completed cells are
// skipped, so an interrupted sweep resumes where it stopped. Failures are
// recorded and do not stop the sweep.
std::vector<CellResult> run_sweep(const SweepSpec& spec, const SweepOptions& opt);

// Single-cell runner used by run_sweep and by the reproducibility check.
CellResult run_cell(const CellConfig& cfg, const std::string& work_dir, bool reuse = true);

void write_results_csv(const std::string& path, const std::vector<CellResult>& results);

// Comparison table: per training size D, the best-sigma regression error,
// the sigma=0 regression error, and the best-vocabulary classification error.
struct CompareRow {
    double d_tokens = 0;
    double best_sigma = 0, best_reg_mde = 0;
    double sigma0_mde = 0;
    int best_vocab = 0;
    double best_cls_mde = 0;
};
std::vector<CompareRow> compare_regression_classification(
    const std::vector<CellResult>& results);

// Per-context-length summary of the probing scores and rollout error.
struct PhaseRow {
    int ctx = 0;
    double newton_score = 0, kepler_score = 0, eval_mde = 0;
};
std::vector<PhaseRow> phase_transition_summary(const std::vector<CellResult>& results);

// Emits per-figure plot CSVs from a sweep output directory.
void write_report(const std::string& in_dir, const std::string& out_dir);

std::vector<CellResult> load_results(const std::string& work_dir);

int env_thread_cap(int requested);

}  // namespace lab
