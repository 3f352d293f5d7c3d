#include "lab/datagen.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include <json.hpp>

#include "lab/integrate.hpp"

namespace lab {

SineParams sample_sine_params(Rng& rng) {
    SineParams p;
    p.amplitude = rng.uniform(kSineAmpLo, kSineAmpHi);
    p.omega = rng.uniform(kSineOmegaLo, kSineOmegaHi);
    p.phase = rng.uniform(0.0, kTwoPi);
    return p;
}

OrbitParams sample_orbit_params(Rng& rng) {
    OrbitParams p;
    p.eccentricity = rng.uniform(kEccLo, kEccHi);
    p.semi_major = rng.uniform(kSemiMajorLo, kSemiMajorHi);
    p.theta = rng.uniform(0.0, kTwoPi);
    return p;
}

Trajectory gen_sine_trajectory(const SineParams& p) {
    Trajectory t;
    t.dim = 1;
    t.sine = p;
    t.pos.resize(kTrajSteps);
    for (int i = 0; i < kTrajSteps; ++i)
        t.pos[size_t(i)] = p.amplitude * std::sin(p.omega * double(i) * kTrajDt + p.phase);
    return t;
}

std::pair<Vec2, Vec2> perihelion_state(const OrbitParams& p) {
    check(p.eccentricity < 1.0, "unbound orbit: eccentricity must be < 1");
    check(p.semi_major > 0.0, "semi-major axis must be positive");
    const double rp = p.semi_major * (1.0 - p.eccentricity);
    const double vp = std::sqrt(kGM * (1.0 + p.eccentricity) / rp);
    const double ct = std::cos(p.theta), st = std::sin(p.theta);
    const Vec2 r{rp * ct, rp * st};
    const Vec2 v{-vp * st, vp * ct};
    return {r, v};
}

Trajectory integrate_orbit(Vec2 r0, Vec2 v0, double rtol, double atol, int steps, double dt) {
    check(r0.norm() > 0, "integrate_orbit needs a nonzero initial radius");
    auto deriv = [](double, const std::array<double, 4>& s, std::array<double, 4>& d) {
        const double rn = std::sqrt(s[0] * s[0] + s[1] * s[1]);
        const double inv_r3 = 1.0 / (rn * rn * rn);
        d[0] = s[2];
        d[1] = s[3];
        d[2] = -kGM * s[0] * inv_r3;
        d[3] = -kGM * s[1] * inv_r3;
    };
    std::vector<double> times(static_cast<size_t>(steps));
    for (int i = 0; i < steps; ++i) times[size_t(i)] = double(i) * dt;
    const auto states =
        integrate_dopri45<4>(deriv, {r0.x, r0.y, v0.x, v0.y}, 0.0, times, rtol, atol, dt / 4.0);

    Trajectory t;
    t.dim = 2;
    t.dt = dt;
    t.pos.resize(size_t(steps) * 2);
    t.vel.resize(size_t(steps) * 2);
    for (int i = 0; i < steps; ++i) {
        t.pos[size_t(2 * i)] = states[size_t(i)][0];
        t.pos[size_t(2 * i + 1)] = states[size_t(i)][1];
        t.vel[size_t(2 * i)] = states[size_t(i)][2];
        t.vel[size_t(2 * i + 1)] = states[size_t(i)][3];
    }
    return t;
}

KeplerTargets ellipse_observables(const OrbitParams& p, const Trajectory& traj) {
    check(p.eccentricity < 1.0, "ellipse observables need a bound orbit");
    check(traj.dim == 2 && !traj.vel.empty(), "ellipse observables need a 2D trajectory");
    KeplerTargets k;
    k.a = p.semi_major;
    k.e = p.eccentricity;
    k.b = k.a * std::sqrt(1.0 - k.e * k.e);
    k.c = k.a * k.e;  // equals sqrt(a^2 - b^2); avoids the rounding NaN at e=0
    k.rbar = std::sqrt(k.a * k.b);
    k.inv_a = 1.0 / k.a;
    k.inv_a2 = k.inv_a * k.inv_a;
    k.inv_b = 1.0 / k.b;
    k.inv_b2 = k.inv_b * k.inv_b;

    // LRL from the states; must be constant along the trajectory
    const Vec2 a0 = traj.lrl(0);
    double max_dev = 0;
    for (int i = 1; i < traj.n(); ++i) {
        const Vec2 ai = traj.lrl(i);
        max_dev = std::max(max_dev, (ai - a0).norm());
    }
    if (max_dev > 1e-6)
        throw std::invalid_argument(
            strformat("trajectory metadata inconsistent: LRL drift %.3g", max_dev));
    k.lrl_x = a0.x;
    k.lrl_y = a0.y;
    k.lrl_mag = a0.norm();
    return k;
}

Trajectory gen_kepler_trajectory(const OrbitParams& p) {
    const auto [r0, v0] = perihelion_state(p);
    // below the interface default: conservation margins must hold across the
    // entire (e, a) box, including many-period small-a orbits
    Trajectory t = integrate_orbit(r0, v0, 2e-9, 2e-9);
    t.orbit = p;
    t.targets = ellipse_observables(p, t);
    return t;
}

Dataset build_dataset(const std::string& kind, int64_t d_traj, uint64_t seed) {
    check(kind == "sine" || kind == "kepler", "dataset kind must be sine or kepler");
    check(d_traj >= 1, "d_traj must be >= 1");
    Dataset ds;
    ds.kind = kind;
    ds.d_traj = d_traj;
    ds.seed = seed;
    ds.trajs.reserve(size_t(d_traj));
    Rng root(seed);
    for (int64_t i = 0; i < d_traj; ++i) {
        Rng rng = root.fork(uint64_t(i));
        if (kind == "sine") {
            ds.trajs.push_back(gen_sine_trajectory(sample_sine_params(rng)));
        } else {
            ds.trajs.push_back(gen_kepler_trajectory(sample_orbit_params(rng)));
        }
    }
    return ds;
}

namespace {

constexpr char kMagic[8] = {'L', 'A', 'B', 'D', 'A', 'T', 'A', '1'};

void write_doubles(std::ofstream& out, const double* p, size_t n) {
    out.write(reinterpret_cast<const char*>(p), std::streamsize(n * sizeof(double)));
}

void read_doubles(std::ifstream& in, double* p, size_t n) {
    in.read(reinterpret_cast<char*>(p), std::streamsize(n * sizeof(double)));
}

}  // namespace

void save_dataset(const std::string& path, const Dataset& ds) {
    std::ofstream out(path, std::ios::binary);
    check(out.good(), "cannot open " + path + " for writing");
    nlohmann::json hdr;
    hdr["version"] = 1;
    hdr["kind"] = ds.kind;
    hdr["d_traj"] = ds.d_traj;
    hdr["seed"] = ds.seed;
    hdr["dt"] = ds.dt;
    hdr["n"] = ds.steps;
    hdr["ranges"] = {{"amplitude", {kSineAmpLo, kSineAmpHi}},
                     {"omega", {kSineOmegaLo, kSineOmegaHi}},
                     {"eccentricity", {kEccLo, kEccHi}},
                     {"semi_major", {kSemiMajorLo, kSemiMajorHi}},
                     {"theta", {0.0, kTwoPi}}};
    const std::string js = hdr.dump();
    out.write(kMagic, 8);
    const uint64_t len = js.size();
    out.write(reinterpret_cast<const char*>(&len), 8);
    out.write(js.data(), std::streamsize(js.size()));

    // per trajectory: params[3], positions[n*dim], then for 2D velocities
    // [n*2] and targets[12] in the declaration order of KeplerTargets
    for (const auto& t : ds.trajs) {
        if (ds.kind == "sine") {
            const double par[3] = {t.sine->amplitude, t.sine->omega, t.sine->phase};
            write_doubles(out, par, 3);
            write_doubles(out, t.pos.data(), t.pos.size());
        } else {
            const double par[3] = {t.orbit->eccentricity, t.orbit->semi_major, t.orbit->theta};
            write_doubles(out, par, 3);
            write_doubles(out, t.pos.data(), t.pos.size());
            write_doubles(out, t.vel.data(), t.vel.size());
            const KeplerTargets& k = *t.targets;
            const double tg[12] = {k.a,     k.b,     k.c,     k.e,     k.rbar,   k.inv_a,
                                   k.inv_a2, k.inv_b, k.inv_b2, k.lrl_x, k.lrl_y, k.lrl_mag};
            write_doubles(out, tg, 12);
        }
    }
    check(out.good(), "write failed for " + path);
}

Dataset load_dataset(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    check(in.good(), "cannot open " + path);
    char magic[8];
    in.read(magic, 8);
    check(in.good() && std::equal(magic, magic + 8, kMagic), "not a dataset file: " + path);
    uint64_t len = 0;
    in.read(reinterpret_cast<char*>(&len), 8);
    std::string js(len, '\0');
    in.read(js.data(), std::streamsize(len));
    const auto hdr = nlohmann::json::parse(js);

    Dataset ds;
    ds.kind = hdr.at("kind").get<std::string>();
    ds.d_traj = hdr.at("d_traj").get<int64_t>();
    ds.seed = hdr.at("seed").get<uint64_t>();
    ds.dt = hdr.at("dt").get<double>();
    ds.steps = hdr.at("n").get<int>();
    const int dim = ds.dim();
    ds.trajs.resize(size_t(ds.d_traj));
    for (auto& t : ds.trajs) {
        t.dim = dim;
        t.dt = ds.dt;
        double par[3];
        read_doubles(in, par, 3);
        t.pos.resize(size_t(ds.steps) * size_t(dim));
        read_doubles(in, t.pos.data(), t.pos.size());
        if (dim == 1) {
            t.sine = SineParams{par[0], par[1], par[2]};
        } else {
            t.orbit = OrbitParams{par[0], par[1], par[2]};
            t.vel.resize(size_t(ds.steps) * 2);
            read_doubles(in, t.vel.data(), t.vel.size());
            double tg[12];
            read_doubles(in, tg, 12);
            KeplerTargets k;
            k.a = tg[0]; k.b = tg[1]; k.c = tg[2]; k.e = tg[3]; k.rbar = tg[4];
            k.inv_a = tg[5]; k.inv_a2 = tg[6]; k.inv_b = tg[7]; k.inv_b2 = tg[8];
            k.lrl_x = tg[9]; k.lrl_y = tg[10]; k.lrl_mag = tg[11];
            t.targets = k;
        }
    }
    check(in.good(), "truncated dataset file: " + path);
    return ds;
}

void export_dataset_csv(const std::string& path, const Dataset& ds) {
    std::ofstream out(path);
    check(out.good(), "cannot open " + path + " for writing");
    const int dim = ds.dim();
    out << (dim == 1 ? "traj_id,step,t,x\n" : "traj_id,step,t,x,y,vx,vy\n");
    char line[256];
    for (int64_t ti = 0; ti < ds.d_traj; ++ti) {
        const auto& t = ds.trajs[size_t(ti)];
        for (int i = 0; i < ds.steps; ++i) {
            if (dim == 1) {
                snprintf(line, sizeof(line), "%lld,%d,%.10g,%.17g\n",
                         static_cast<long long>(ti), i, double(i) * ds.dt, t.x1d(i));
            } else {
                const Vec2 r = t.position(i), v = t.velocity(i);
                snprintf(line, sizeof(line), "%lld,%d,%.10g,%.17g,%.17g,%.17g,%.17g\n",
                         static_cast<long long>(ti), i, double(i) * ds.dt, r.x, r.y, v.x, v.y);
            }
            out << line;
        }
    }
}

}  // namespace lab
