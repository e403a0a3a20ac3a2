import csv
import json
import math
import os
import subprocess
from pathlib import Path

import numpy as np
import pytest

import mfflow


def test_sphere_samples_are_unit_vectors():
    y = mfflow.sample_uniform_sphere(7, 500, seed=3)
    assert y.shape == (7, 500)
    np.testing.assert_allclose(np.linalg.norm(y, axis=0), 1.0, atol=1e-12)


def test_disintegration_matches_direct_second_moment():
    y = mfflow.sample_sphere_by_disintegration(10, 3, 20000, seed=1)
    second = (y * y).mean(axis=1)
    np.testing.assert_allclose(second, 0.1, atol=0.01)


def test_phi_tilde_closed_form_at_zero_theta():
    d_h = 5
    want = math.gamma(d_h / 2) / (2 * math.sqrt(math.pi) * math.gamma((d_h + 1) / 2))
    for phi in (0.0, 0.4, 1.2):
        got = mfflow.phi_tilde(30, d_h, 0.0, phi)
        assert abs(got - math.cos(phi) * want) < 1e-3


def test_particle_velocity_shapes_and_step():
    cloud = mfflow.init_cloud(6, 2, 32, seed=0)
    batch = mfflow.sample_uniform_sphere(6, 200, seed=1)
    va, vb = mfflow.velocity(cloud, batch)
    assert va.shape == (32,) and vb.shape == (32, 6)
    before = mfflow.batch_loss(cloud, batch)["mean"]
    after = mfflow.batch_loss(mfflow.step(cloud, 0.05, batch), batch)["mean"]
    assert after < before


def test_projection_preserves_predictions():
    cloud = mfflow.init_cloud(8, 3, 64, seed=2)
    reduced = mfflow.project_to_angles(cloud)
    assert reduced.size == 64
    np.testing.assert_allclose(reduced.c, cloud.a * np.linalg.norm(cloud.b, axis=1) / 64, rtol=1e-12)


def test_reduced_flow_decreases_objective():
    cloud = mfflow.init_reduced(10, 3, 128, seed=0)
    a0 = mfflow.objective_a(cloud)
    for k in range(50):
        cloud = mfflow.step_reduced(cloud, 0.05, 500, seed=4, iteration=k, lifted=True)
    assert mfflow.objective_a(cloud) < a0
    plus, minus = mfflow.masses(cloud)
    assert plus > 0 and minus > 0


def test_single_atom_optimum_is_stationary():
    d_h = 5
    alpha = mfflow.alpha_expected(d_h)
    atom = mfflow.make_reduced(30, d_h, np.array([alpha]), np.array([0.0]))
    est = mfflow.estimate_g_v(atom, 200000, seed=9)
    assert abs(est["g"][0]) < 4 * est["g_stderr"][0] + 1e-12
    assert mfflow.objective_a(atom) < 1e-4


def test_ols_matches_numpy():
    rng = np.random.default_rng(0)
    x = rng.uniform(-1, 1, size=(50, 4))
    y = x @ np.array([1.0, -2.0, 0.5, 0.0]) + 0.1 * rng.standard_normal(50)
    sol = mfflow.ols_optimum(x, y)
    ref, *_ = np.linalg.lstsq(x, y, rcond=None)
    np.testing.assert_allclose(sol["w_star"], ref, atol=1e-10)


def test_bad_config_raises():
    with pytest.raises(ValueError):
        mfflow.run(json.dumps({"experiment": "reduced-figure3", "no-such-key": 1}), "unused")


def test_run_writes_metrics(tmp_path):
    cfg = json.loads(mfflow.default_config("reduced-figure3"))
    cfg.update({"d": 8, "d-H": 2, "m": 64, "N": 200, "K": 20, "log-every": 5})
    files = mfflow.run(json.dumps(cfg), str(tmp_path))
    assert "metrics.csv" in files
    with open(tmp_path / "metrics.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [int(r["iteration"]) for r in rows] == [0, 5, 10, 15, 20]
    assert all(math.isfinite(float(r["loss"])) for r in rows)
    figure = mfflow.emit_figure_data(str(tmp_path), 3)
    assert all(Path(p).exists() for p in figure)


def test_compare_reduction_small():
    cfg = {"experiment": "reduction-equivalence", "m-sweep": [64], "N": 200, "K": 10, "log-every": 5,
           "loss-samples": 2000}
    report = mfflow.compare_reduction(json.dumps(cfg))
    start = report["starts"][0]
    combined = math.hypot(start["full"]["stderr"], start["reduced"]["stderr"])
    assert abs(start["full"]["mean"] - start["reduced"]["mean"]) <= combined
    assert len(report["median_discrepancy"]) == 1


@pytest.mark.skipif("MFFLOW_CLI" not in os.environ, reason="command line tool not built")
def test_cli_round_trip(tmp_path):
    cli = os.environ["MFFLOW_CLI"]
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"experiment": "linear-figure1", "K": 200, "runs": 2}))
    out = tmp_path / "run"
    done = subprocess.run([cli, "run", "--config", str(cfg), "--out", str(out)], capture_output=True, text=True)
    assert done.returncode == 0, done.stderr
    assert (out / "metrics.csv").exists() and (out / "manifest.json").exists()
    fig = subprocess.run([cli, "emit-figure-data", "--run", str(out), "--figure", "1"], capture_output=True)
    assert fig.returncode == 0
    assert (out / "figure1_trajectories.csv").exists()
    bad = subprocess.run([cli, "run", "--experiment", "nope", "--out", str(tmp_path / "x")], capture_output=True)
    assert bad.returncode == 2
