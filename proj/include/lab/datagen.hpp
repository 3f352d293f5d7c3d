#pragma once

#include <string>
#include <utility>
#include <vector>

#include "lab/rng.hpp"
#include "lab/trajectory.hpp"

namespace lab {

// Sampling ranges for dataset parameters.
constexpr double kSineAmpLo = 0.5, kSineAmpHi = 1.0;
constexpr double kSineOmegaLo = 0.5, kSineOmegaHi = 2.0;
constexpr double kEccLo = 0.0, kEccHi = 0.8;
constexpr double kSemiMajorLo = 0.5, kSemiMajorHi = 2.0;

SineParams sample_sine_params(Rng& rng);
OrbitParams sample_orbit_params(Rng& rng);

Trajectory gen_sine_trajectory(const SineParams& p);

// Position and velocity at closest approach, rotated by theta.
std::pair<Vec2, Vec2> perihelion_state(const OrbitParams& p);

// Samples the two-body problem at fixed dt from the given initial state.
Trajectory integrate_orbit(Vec2 r0, Vec2 v0, double rtol = 1e-8, double atol = 1e-8,
                           int steps = kTrajSteps, double dt = kTrajDt);

// Analytic ellipse geometry plus the LRL vector measured from the states;
// throws if the trajectory is inconsistent with the parameters.
KeplerTargets ellipse_observables(const OrbitParams& p, const Trajectory& traj);

Trajectory gen_kepler_trajectory(const OrbitParams& p);

struct Dataset {
    std::string kind;  // "sine" | "kepler"
    int64_t d_traj = 0;
    uint64_t seed = 0;
    double dt = kTrajDt;
    int steps = kTrajSteps;
    std::vector<Trajectory> trajs;

    int dim() const { return kind == "sine" ? 1 : 2; }
    int64_t token_count() const { return d_traj * steps; }
};

Dataset build_dataset(const std::string& kind, int64_t d_traj, uint64_t seed);

// Binary container: magic, JSON header, then row-major 64-bit floats per
// trajectory (params, positions, velocities and targets for 2D).
void save_dataset(const std::string& path, const Dataset& ds);
Dataset load_dataset(const std::string& path);
void export_dataset_csv(const std::string& path, const Dataset& ds);

}  // namespace lab
