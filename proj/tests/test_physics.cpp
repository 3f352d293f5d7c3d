#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>

#include "lab/codec.hpp"
#include "lab/datagen.hpp"
#include "lab/integrate.hpp"

using namespace lab;

TEST_CASE("sine trajectories follow the closed form and stay bounded") {
    auto t = gen_sine_trajectory({1.0, 1.0, 0.0});
    CHECK(t.x1d(0) == doctest::Approx(0.0));
    t = gen_sine_trajectory({1.0, 1.0, kTwoPi / 4.0});
    CHECK(t.x1d(0) == doctest::Approx(1.0));
    t = gen_sine_trajectory({0.5, 2.0, 0.0});
    CHECK(t.x1d(1) == doctest::Approx(0.194709).epsilon(1e-5));

    Rng rng(11);
    for (int rep = 0; rep < 100; ++rep) {
        const SineParams p = sample_sine_params(rng);
        const auto tr = gen_sine_trajectory(p);
        CHECK(tr.n() == 100);
        double mx = 0;
        for (int i = 0; i < tr.n(); ++i) mx = std::max(mx, std::abs(tr.x1d(i)));
        CHECK(mx <= p.amplitude + 1e-15);
    }
}

TEST_CASE("perihelion states") {
    auto [r, v] = perihelion_state({0.0, 1.0, 0.0});
    CHECK(r.x == doctest::Approx(1.0));
    CHECK(r.y == doctest::Approx(0.0));
    CHECK(v.x == doctest::Approx(0.0));
    CHECK(v.y == doctest::Approx(1.0));

    std::tie(r, v) = perihelion_state({0.5, 1.0, 0.0});
    CHECK(r.x == doctest::Approx(0.5));
    CHECK(v.y == doctest::Approx(std::sqrt(3.0)));

    std::tie(r, v) = perihelion_state({0.0, 1.0, kTwoPi / 4.0});
    CHECK(r.x == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(r.y == doctest::Approx(1.0));
    CHECK(v.x == doctest::Approx(-1.0));
    CHECK(v.y == doctest::Approx(0.0).epsilon(1e-12));

    CHECK_THROWS_AS(perihelion_state({1.0, 1.0, 0.0}), std::invalid_argument);
}

TEST_CASE("circular orbit keeps unit radius") {
    const auto t = gen_kepler_trajectory({0.0, 1.0, 0.0});
    for (int i = 0; i < t.n(); ++i)
        CHECK(std::abs(t.position(i).norm() - 1.0) < 1e-6);
}

TEST_CASE("a=1 orbit closes after one period 2*pi") {
    const OrbitParams p{0.3, 1.0, 0.7};
    const auto [r0, v0] = perihelion_state(p);
    auto deriv = [](double, const std::array<double, 4>& s, std::array<double, 4>& d) {
        const double rn = std::sqrt(s[0] * s[0] + s[1] * s[1]);
        const double inv_r3 = 1.0 / (rn * rn * rn);
        d[0] = s[2]; d[1] = s[3];
        d[2] = -kGM * s[0] * inv_r3; d[3] = -kGM * s[1] * inv_r3;
    };
    const auto states =
        integrate_dopri45<4>(deriv, {r0.x, r0.y, v0.x, v0.y}, 0.0, {kTwoPi}, 1e-8, 1e-8);
    CHECK(std::abs(states[0][0] - r0.x) < 1e-5);
    CHECK(std::abs(states[0][1] - r0.y) < 1e-5);
    CHECK(std::abs(states[0][2] - v0.x) < 1e-5);
    CHECK(std::abs(states[0][3] - v0.y) < 1e-5);
}

TEST_CASE("energy and angular momentum conserved over random orbits") {
    Rng rng(42);
    for (int rep = 0; rep < 25; ++rep) {
        const OrbitParams p = sample_orbit_params(rng);
        const auto t = gen_kepler_trajectory(p);
        const double e0 = t.energy(0);
        const double l0 = t.angular_momentum(0);
        for (int i = 1; i < t.n(); ++i) {
            CHECK(std::abs(t.energy(i) - e0) / std::abs(e0) < 1e-6);
            CHECK(std::abs(t.angular_momentum(i) - l0) / std::abs(l0) < 1e-6);
        }
    }
}

TEST_CASE("states satisfy the rotated ellipse equation") {
    Rng rng(43);
    for (int rep = 0; rep < 25; ++rep) {
        const OrbitParams p = sample_orbit_params(rng);
        const auto t = gen_kepler_trajectory(p);
        const auto& k = *t.targets;
        const double ct = std::cos(p.theta), st = std::sin(p.theta);
        for (int i = 0; i < t.n(); ++i) {
            const Vec2 r = t.position(i);
            const double xr = ct * r.x + st * r.y;   // rotate by -theta
            const double yr = -st * r.x + ct * r.y;
            const double lhs = ((xr + k.c) / k.a) * ((xr + k.c) / k.a) +
                               (yr / k.b) * (yr / k.b);
            CHECK(std::abs(lhs - 1.0) < 1e-5);
        }
    }
}

TEST_CASE("LRL vector: magnitude GM*e, conserved, aligned with perihelion") {
    Rng rng(44);
    for (int rep = 0; rep < 25; ++rep) {
        const OrbitParams p = sample_orbit_params(rng);
        const auto t = gen_kepler_trajectory(p);
        const auto& k = *t.targets;
        CHECK(std::abs(k.lrl_mag - kGM * p.eccentricity) < 1e-6);
        for (int i = 0; i < t.n(); ++i) {
            const Vec2 a = t.lrl(i);
            CHECK(std::abs(a.norm() - kGM * p.eccentricity) < 1e-6);
        }
        if (p.eccentricity > 0.05) {
            // points toward perihelion
            const double ang = std::atan2(k.lrl_y, k.lrl_x);
            double d = std::remainder(ang - p.theta, kTwoPi);
            CHECK(std::abs(d) < 1e-5);
        }
    }
}

TEST_CASE("ellipse observables: closed forms") {
    auto t = gen_kepler_trajectory({0.0, 1.3, 0.4});
    CHECK(t.targets->lrl_mag == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(t.targets->b == doctest::Approx(1.3));
    CHECK(t.targets->c == doctest::Approx(0.0));

    t = gen_kepler_trajectory({0.5, 1.0, 0.0});
    CHECK(t.targets->b == doctest::Approx(0.8660254038).epsilon(1e-8));
    CHECK(t.targets->c == doctest::Approx(0.5).epsilon(1e-8));
    CHECK(t.targets->rbar == doctest::Approx(0.9306048591).epsilon(1e-8));
    // consistency closed to high precision: e = c/a and b^2 + c^2 = a^2
    CHECK(t.targets->e == doctest::Approx(t.targets->c / t.targets->a).epsilon(1e-12));
    const double a2 = t.targets->a * t.targets->a;
    CHECK(std::abs(t.targets->b * t.targets->b + t.targets->c * t.targets->c - a2) <
          1e-12 * a2);
}

TEST_CASE("force field") {
    double fx, fy, mag;
    force_at({1.0, 0.0}, fx, fy, mag);
    CHECK(fx == doctest::Approx(-1.0));
    CHECK(fy == doctest::Approx(0.0));
    CHECK(mag == doctest::Approx(1.0));

    force_at({0.0, 2.0}, fx, fy, mag);
    CHECK(fx == doctest::Approx(0.0));
    CHECK(fy == doctest::Approx(-0.25));

    Rng rng(9);
    for (int rep = 0; rep < 50; ++rep) {
        const Vec2 r{rng.uniform(-3, 3), rng.uniform(-3, 3)};
        if (r.norm() < 1e-3) continue;
        force_at(r, fx, fy, mag);
        CHECK(mag * r.norm() * r.norm() == doctest::Approx(kGM).epsilon(1e-12));
    }
    CHECK_THROWS_AS(force_at({0.0, 0.0}, fx, fy, mag), std::invalid_argument);
}

TEST_CASE("radial free fall hits the step-size underflow guard") {
    CHECK_THROWS_AS(integrate_orbit({1.0, 0.0}, {0.0, 0.0}), IntegrationError);
}

TEST_CASE("dataset building: counts, determinism, parameter statistics") {
    const Dataset ds = build_dataset("sine", 64, 123);
    CHECK(ds.token_count() == 6400);
    CHECK(ds.trajs.size() == 64);

    const Dataset ds2 = build_dataset("sine", 64, 123);
    for (size_t i = 0; i < ds.trajs.size(); ++i)
        CHECK(ds.trajs[i].pos == ds2.trajs[i].pos);

    Rng rng(7);
    double sum_e = 0;
    const int draws = 100000;
    for (int i = 0; i < draws; ++i) sum_e += sample_orbit_params(rng).eccentricity;
    CHECK(sum_e / draws == doctest::Approx(0.4).epsilon(0.025));
}

TEST_CASE("dataset binary round trip is bit exact; csv has one row per step") {
    const Dataset ds = build_dataset("kepler", 5, 77);
    const std::string path = "/tmp/lab_test_dataset.bin";
    save_dataset(path, ds);
    const Dataset back = load_dataset(path);
    CHECK(back.kind == ds.kind);
    CHECK(back.d_traj == ds.d_traj);
    CHECK(back.seed == ds.seed);
    for (size_t i = 0; i < ds.trajs.size(); ++i) {
        CHECK(ds.trajs[i].pos == back.trajs[i].pos);
        CHECK(ds.trajs[i].vel == back.trajs[i].vel);
        CHECK(ds.trajs[i].targets->lrl_x == back.trajs[i].targets->lrl_x);
        CHECK(ds.trajs[i].orbit->theta == back.trajs[i].orbit->theta);
    }

    const std::string csv = "/tmp/lab_test_dataset.csv";
    export_dataset_csv(csv, ds);
    FILE* f = fopen(csv.c_str(), "r");
    REQUIRE(f != nullptr);
    int lines = 0;
    for (int ch; (ch = fgetc(f)) != EOF;)
        if (ch == '\n') ++lines;
    fclose(f);
    CHECK(lines == 1 + 5 * 100);
}

TEST_CASE("codec formula, clamping and round trips") {
    const TokenCodec big(50.0, 7000);
    CHECK(big.encode(0.0) == 3500);
    CHECK(big.encode(-50.0) == 0);
    CHECK(big.encode(50.0) == 6999);  // formula overflows at +L, clamps
    CHECK(big.decode(3500) == doctest::Approx(0.0071429).epsilon(1e-4));
    CHECK(big.decode(0) == doctest::Approx(-49.992857).epsilon(1e-6));

    const TokenCodec two(1.0, 2);
    CHECK(two.decode(0) == doctest::Approx(-0.5));
    CHECK(two.decode(1) == doctest::Approx(0.5));

    CHECK_THROWS_AS(big.encode(std::nan("")), std::invalid_argument);
    CHECK_THROWS_AS(big.decode(7000), std::invalid_argument);
    CHECK_THROWS_AS(TokenCodec(0.0, 16), std::invalid_argument);
    CHECK_THROWS_AS(TokenCodec(1.0, 1), std::invalid_argument);

    Rng rng(5);
    const TokenCodec c(4.0, 333);
    int32_t prev = 0;
    double prev_x = -4.0;
    bool first = true;
    for (int rep = 0; rep < 20000; ++rep) {
        const double x = rng.uniform(-4.0, 4.0);
        const int32_t k = c.encode(x);
        CHECK(std::abs(c.decode(k) - x) <= 4.0 / 333 + 1e-12);
        CHECK(c.encode(c.decode(k)) == k);  // idempotent on bin centers
        if (!first && x >= prev_x) CHECK(k >= prev);
        prev = k;
        prev_x = x;
        first = false;
    }
}
