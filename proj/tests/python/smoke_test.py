"""Smoke tests for the lab_core python module."""

import math
import os
import sys
import tempfile

import lab_core


def approx(a, b, tol=1e-9):
    assert abs(a - b) <= tol, f"{a} != {b} (tol {tol})"


def test_codec():
    codec = lab_core.TokenCodec(50.0, 7000)
    assert codec.encode(0.0) == 3500
    assert codec.encode(-50.0) == 0
    assert codec.encode(50.0) == 6999
    approx(codec.decode(3500), 50.0 / 7000.0)
    two = lab_core.TokenCodec(1.0, 2)
    approx(two.decode(0), -0.5)
    approx(two.decode(1), 0.5)


def test_force():
    fx, fy, mag = lab_core.force_at(1.0, 0.0)
    approx(fx, -1.0)
    approx(fy, 0.0)
    approx(mag, 1.0)
    fx, fy, mag = lab_core.force_at(0.0, 2.0)
    approx(fy, -0.25, 1e-12)


def test_trajectories():
    sine = lab_core.sine_trajectory(1.0, 1.0, 0.0)
    assert len(sine["positions"]) == 100
    approx(sine["positions"][0], 0.0)

    orbit = lab_core.kepler_trajectory(0.5, 1.0, 0.0)
    assert orbit["dim"] == 2
    approx(orbit["ellipse"]["b"], math.sqrt(0.75), 1e-9)
    approx(orbit["ellipse"]["c"], 0.5, 1e-9)
    # LRL magnitude = e for GM = 1
    lrl = orbit["ellipse"]["lrl"]
    approx(math.hypot(*lrl), 0.5, 1e-6)


def test_probe_fit():
    import random

    rng = random.Random(7)
    x = [[rng.gauss(0, 1) for _ in range(4)] for _ in range(200)]
    y = [2.0 * row[0] - row[2] + 0.25 for row in x]
    fit = lab_core.fit_linear_probe(x, y)
    assert fit["r2"] > 1 - 1e-10
    approx(fit["intercept"], 0.25, 1e-6)


def test_scaling_fit():
    records = []
    for d in (1e4, 1e5, 1e6):
        for v in (64, 256, 1024):
            records.append([d, v, 0.52 * d**-1.15 * v**1.33])
    fit = lab_core.fit_scaling_law(records)
    approx(fit["alpha_D"], 1.15, 1e-9)
    approx(fit["alpha_V"], 1.33, 1e-9)
    assert fit["r2_fit"] > 1 - 1e-12


def test_train_rollout_probe():
    with tempfile.TemporaryDirectory() as tmp:
        data = os.path.join(tmp, "kp.bin")
        tokens = lab_core.generate_dataset("kepler", 24, 5, data)
        assert tokens == 2400

        out_dir = os.path.join(tmp, "run")
        summary = lab_core.train(
            data, "reg", noise=0.1, ctx=8, width=16, steps=200, seed=1, batch=8,
            out_dir=out_dir,
        )
        assert math.isfinite(summary["final_train_loss"])

        ckpt = os.path.join(out_dir, "ckpt_200.bin")
        assert os.path.exists(ckpt)
        ro = lab_core.rollout(ckpt, data, condition=50, horizon=50, max_trajs=4)
        assert ro["trajectories"] == 4
        assert math.isfinite(ro["mean_distance_error"])

        best = lab_core.probe(ckpt, data, targets="newton", max_rows=1200)
        assert best["x"] > 1 - 1e-6  # inputs are linearly recoverable
        assert best["y"] > 1 - 1e-6


def main():
    tests = [v for k, v in sorted(globals().items()) if k.startswith("test_")]
    for test in tests:
        test()
        print(f"ok {test.__name__}")
    print(f"{len(tests)} python smoke tests passed")


if __name__ == "__main__":
    sys.exit(main())
