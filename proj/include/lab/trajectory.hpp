#pragma once

#include <cmath>
#include <optional>
#include <vector>

#include "lab/common.hpp"

namespace lab {

constexpr double kGM = 1.0;          // gravitational parameter, fixed units
constexpr double kTrajDt = 0.2;      // sampling interval
constexpr int kTrajSteps = 100;      // states per trajectory
constexpr double kTwoPi = 6.283185307179586476925286766559;

struct Vec2 {
    double x = 0, y = 0;
    Vec2 operator+(Vec2 o) const { return {x + o.x, y + o.y}; }
    Vec2 operator-(Vec2 o) const { return {x - o.x, y - o.y}; }
    Vec2 operator*(double s) const { return {x * s, y * s}; }
    double norm() const { return std::sqrt(x * x + y * y); }
};

struct SineParams {
    double amplitude = 1.0;   // U[0.5, 1]
    double omega = 1.0;       // U[0.5, 2]
    double phase = 0.0;       // U[0, 2pi)
};

struct OrbitParams {
    double eccentricity = 0.0;  // U[0, 0.8]
    double semi_major = 1.0;    // U[0.5, 2.0]
    double theta = 0.0;         // U[0, 2pi]
};

// Ellipse geometry and conserved quantities derived from an orbit; the
// constant-per-trajectory probe targets.
struct KeplerTargets {
    double a = 0, b = 0, c = 0, e = 0, rbar = 0;
    double inv_a = 0, inv_a2 = 0, inv_b = 0, inv_b2 = 0;
    double lrl_x = 0, lrl_y = 0, lrl_mag = 0;
};

// Newtonian inverse-square force toward the origin. |r| must be positive.
inline void force_at(Vec2 r, double& fx, double& fy, double& mag) {
    const double rn = r.norm();
    check(rn > 0, "force_at at zero radius");
    mag = kGM / (rn * rn);
    fx = -kGM * r.x / (rn * rn * rn);
    fy = -kGM * r.y / (rn * rn * rn);
}

struct Trajectory {
    int dim = 2;
    double dt = kTrajDt;
    std::vector<double> pos;  // n x dim, row-major
    std::vector<double> vel;  // n x dim; empty for 1D
    std::optional<SineParams> sine;
    std::optional<OrbitParams> orbit;
    std::optional<KeplerTargets> targets;

    int n() const { return static_cast<int>(pos.size()) / dim; }

    double x1d(int i) const { return pos[static_cast<size_t>(i)]; }
    Vec2 position(int i) const { return {pos[size_t(2 * i)], pos[size_t(2 * i + 1)]}; }
    Vec2 velocity(int i) const { return {vel[size_t(2 * i)], vel[size_t(2 * i + 1)]}; }

    double energy(int i) const {
        const Vec2 r = position(i), v = velocity(i);
        return 0.5 * (v.x * v.x + v.y * v.y) - kGM / r.norm();
    }
    double angular_momentum(int i) const {
        const Vec2 r = position(i), v = velocity(i);
        return r.x * v.y - r.y * v.x;
    }
    // LRL vector evaluated from state i alone; conserved along the orbit.
    Vec2 lrl(int i) const {
        const Vec2 r = position(i), v = velocity(i);
        const double lz = angular_momentum(i);
        const double rn = r.norm();
        return {lz * v.y - kGM * r.x / rn, -lz * v.x - kGM * r.y / rn};
    }
};

}  // namespace lab
