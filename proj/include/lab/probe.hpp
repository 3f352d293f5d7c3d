#pragma once

#include <string>
#include <vector>

#include "lab/codec.hpp"
#include "lab/datagen.hpp"
#include "lab/model.hpp"

namespace lab {

// Ordinary least squares with a small ridge (relative to the mean feature
// energy) for rank safety, fit in double precision. R^2 is in-sample.
struct ProbeFit {
    std::vector<double> direction;
    double intercept = 0;
    double r2 = 0;
};

// Thrown when the target has zero variance and R^2 is undefined.
struct ZeroVarianceTarget : std::domain_error {
    using std::domain_error::domain_error;
};

ProbeFit fit_linear_probe(const double* x, int64_t n, int64_t p, const double* y,
                          double ridge_rel = 1e-6, bool intercept = true);

// Streaming normal equations: one pass over rows, many targets at once.
class ProbeAccumulator {
public:
    ProbeAccumulator(int64_t p, int64_t targets);
    void add(const double* x, const double* y);
    ProbeFit solve(int64_t target, double ridge_rel = 1e-6, bool intercept = true) const;
    int64_t rows() const { return n_; }
    int64_t features() const { return p_; }

private:
    int64_t p_, t_, n_ = 0;
    std::vector<double> sxx_;  // p x p
    std::vector<double> sx_;   // p
    std::vector<double> sxy_;  // t x p
    std::vector<double> sy_, syy_;
};

// R^2 of regressing each token's bin center on its embedding row.
double probe_spatial_map_r2(const Tensor<float>& table, const TokenCodec& codec,
                            double ridge_rel = 1e-6);

enum class TargetSet { kNewton, kKepler, kAll };

const std::vector<std::string>& newton_target_names();  // per-position force/position set
const std::vector<std::string>& kepler_target_names();  // per-trajectory ellipse constants
std::vector<std::string> target_names(TargetSet set);

// Values aligned with target_names(set), evaluated at position i.
std::vector<double> compute_probe_targets(const Trajectory& traj, int i, TargetSet set);

struct ProbeEntry {
    std::string target;
    std::string site;
    int layer = 0;
    double r2 = 0;
    std::vector<double> direction;
    double intercept = 0;
};

struct ProbeReport {
    std::vector<ProbeEntry> entries;  // one per (target, site)
    std::vector<ProbeEntry> best;     // one per target, max R^2 over sites
    double best_r2(const std::string& target) const;
    void write_csv(const std::string& path) const;
};

struct ProbeOptions {
    int64_t max_rows = 20000;
    double ridge_rel = 1e-6;
    bool intercept = true;
    int batch_windows = 64;
};

// Slides length-c windows over held-out trajectories, captures every site's
// activation at the last context position, and fits one probe per
// (site, target).
ProbeReport probe_sweep(Model<float>& m, const Dataset& probe_data, TargetSet set,
                        const ProbeOptions& opt = {});

}  // namespace lab
