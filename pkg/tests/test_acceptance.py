"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``CRITERION n ... PASS/FAIL`` line (also collected
into the terminal summary) before asserting, so a red criterion still reports
its measured value.  Criteria 6 and 7 run the full 20 x 10 Monte-Carlo
evaluation twice and take most of the suite's wall time.
"""

import filecmp
import json
import time
from pathlib import Path

import numpy as np
import pytest

import conftest
from hybridloc.channel import (PathLossParams, antenna_gain, random_poses, segment_path_loss,
                               synthesize_dataset)
from hybridloc.citymap import CityMap, generate_city, los_matrix, sample_street_points
from hybridloc.experiment import ExperimentConfig, run_experiment
from hybridloc.learning import (HybridChannelModel, TrainConfig, build_training_set, fit_pathloss,
                                train_gain)
from hybridloc.netgain import forward
from hybridloc.pso import PsoConfig, UserObjective, localize
from oracles import blocked_run_length, sampled_los
from test_netgain import finite_difference_check

ROOT = Path(__file__).resolve().parents[1]
ACCEPTANCE = json.loads((ROOT / "configs" / "acceptance.json").read_text())
TRUE = PathLossParams()


def report(n, name, ok, detail, seconds, limit):
    ok = ok and seconds < limit
    line = (f"CRITERION {n} {name}: {'PASS' if ok else 'FAIL'} "
            f"({detail}; {seconds:.1f} s of {limit:.0f} s)")
    print(line)
    conftest.ACCEPTANCE_LINES.append(line)
    assert ok, line


def test_criterion_1_pathloss_recovery():
    t0 = time.perf_counter()
    city = generate_city(((0, 0), (300, 300)), 36, rng_seed=1)
    rng = np.random.default_rng(1)
    users = sample_street_points(city, 10, rng)
    poses = random_poses(city, 200, rng)
    meas, labels = synthesize_dataset(city, TRUE, users, poses, rng_seed=2, gain=None, noise=False)
    train = build_training_set(city, meas, dict(enumerate(users)))
    fit = fit_pathloss(train)
    err = max(abs(fit.alpha_los - 2.2), abs(fit.alpha_nlos - 3.2),
              abs(fit.beta_los + 32.0), abs(fit.beta_nlos + 35.0))
    both = 0 < labels.mean() < 1
    report(1, "path-loss recovery", err < 1e-6 and both, f"max abs error {err:.2e}",
           time.perf_counter() - t0, 5)


def test_criterion_2_gradient():
    t0 = time.perf_counter()
    worst = finite_difference_check(n_points=100, seed=7)
    report(2, "gradient vs finite differences", worst < 1e-5, f"max relative error {worst:.2e}",
           time.perf_counter() - t0, 10)


def test_criterion_3_gain_approximation():
    t0 = time.perf_counter()
    n_users, n_poses = ACCEPTANCE["gain_records"]["users"], ACCEPTANCE["gain_records"]["poses"]
    tol = ACCEPTANCE["gain_rmse_tolerance_db"]
    city = CityMap((0, 0), (300, 300))
    rng = np.random.default_rng(0)
    users = rng.uniform(0, 300, (n_users, 2))
    meas, _ = synthesize_dataset(city, TRUE, users, random_poses(city, n_poses, rng), 2, noise=False)
    assert len(meas) == 2000
    train = build_training_set(city, meas, dict(enumerate(users)))
    net = train_gain(train, TRUE, TrainConfig.from_dict({**ACCEPTANCE["train"], "seed": 0}))

    # held out: fresh users and fresh poses
    users2 = rng.uniform(0, 300, (10, 2))
    m2, _ = synthesize_dataset(city, TRUE, users2, random_poses(city, 100, rng), 3, noise=False)
    test = build_training_set(city, m2, dict(enumerate(users2)))
    true_gain = test.g - segment_path_loss(TRUE, test.labels.astype(bool), test.d)
    rmse = float(np.sqrt(np.mean((forward(net, test.x) - true_gain) ** 2)))
    report(3, "gain approximation", rmse < tol, f"held-out RMSE {rmse:.3f} dB, tolerance {tol} dB",
           time.perf_counter() - t0, 300)


def test_criterion_4_los_oracle():
    t0 = time.perf_counter()
    raw, sub_resolution, grazing, real, n_nlos = 0, 0, 0, 0, 0
    for c in range(10):
        city = generate_city(((0, 0), (300, 300)), 36, rng_seed=c)
        rng = np.random.default_rng(100 + c)
        users = sample_street_points(city, 1000, rng)
        uav = np.column_stack([rng.uniform(0, 300, 1000), rng.uniform(0, 300, 1000),
                               rng.uniform(1, 100, 1000)])
        exact = np.array([los_matrix(city, uav[i:i + 1], users[i:i + 1])[0, 0] for i in range(1000)])
        n_nlos += int((~exact).sum())
        for i in range(1000):
            los, clearance = sampled_los(city.boxes, uav[i], users[i])
            if los == exact[i]:
                continue
            raw += 1
            if clearance < 1e-6:
                grazing += 1
            elif not exact[i] and 0 < blocked_run_length(city.boxes, uav[i], users[i]) < 0.1:
                # a wall corner clipped over less than one oracle step
                sub_resolution += 1
            else:
                real += 1
    detail = (f"{10000 - raw}/10000 raw agreement, {n_nlos} NLoS; {grazing} grazing excluded, "
              f"{sub_resolution} sub-step corner clips confirmed at 1 mm, {real} unexplained")
    report(4, "LoS oracle equivalence", real == 0, detail, time.perf_counter() - t0, 30)


def test_criterion_5_pso_identifiability():
    t0 = time.perf_counter()
    city = CityMap((0, 0), (100, 100))
    model = HybridChannelModel(TRUE, antenna_gain)
    xs = np.arange(0.0, 100.0 + 1e-9, 0.5)
    gx, gy = np.meshgrid(xs, xs, indexing="ij")
    grid = np.column_stack([gx.ravel(), gy.ravel()])
    hits, basin = 0, 0
    for run in range(100):
        rng = np.random.default_rng(run)
        user = rng.uniform(0, 100, (1, 2))
        meas, _ = synthesize_dataset(city, TRUE, user, random_poses(city, 200, rng), run, noise=False)
        res = localize(model, city, meas, PsoConfig(seed=run))
        hits += bool(np.linalg.norm(res.estimate - user[0]) < 1.0)
        f = UserObjective(model, city, meas)
        best = grid[np.argmin(f(grid))]
        # same basin: within one grid pitch of the grid minimizer in each axis
        basin += bool(np.all(np.abs(res.estimate - best) <= 0.5))
    detail = f"{hits}/100 runs under 1 m, {basin}/100 in the 0.5 m grid basin"
    report(5, "PSO identifiability", hits >= 95 and basin >= 95, detail, time.perf_counter() - t0, 120)


@pytest.fixture(scope="module")
def evaluation(tmp_path_factory):
    cfg = ExperimentConfig.load(ROOT / "configs" / "default.json")
    out = tmp_path_factory.mktemp("evaluate_a")
    t0 = time.perf_counter()
    rep = run_experiment(cfg, out)
    return cfg, out, rep, time.perf_counter() - t0


def test_criterion_6_hybrid_beats_baseline(evaluation):
    cfg, out, rep, seconds = evaluation
    s = rep["summary"]
    h, b = s["hybrid"], s["baseline"]
    n = cfg.trials * cfg.k_test
    complete = h["samples"] == n and b["samples"] == n
    ok = complete and h["median_m"] < b["median_m"] and h["p80_m"] <= b["p80_m"]
    detail = (f"{cfg.trials}x{cfg.k_test}: hybrid median {h['median_m']:.2f} m / p80 {h['p80_m']:.2f} m, "
              f"baseline median {b['median_m']:.2f} m / p80 {b['p80_m']:.2f} m")
    report(6, "hybrid beats baseline", ok, detail, seconds, 1800)


def _tree(root: Path):
    return sorted(p.relative_to(root) for p in root.rglob("*") if p.is_file())


def test_criterion_7_determinism(evaluation, tmp_path):
    cfg, first, _, _ = evaluation
    t0 = time.perf_counter()
    run_experiment(ExperimentConfig.load(ROOT / "configs" / "default.json"), tmp_path)
    files = _tree(first)
    same_set = files == _tree(tmp_path)
    differing = [str(f) for f in files if not filecmp.cmp(first / f, tmp_path / f, shallow=False)]
    detail = f"{len(files)} artifacts compared, {len(differing)} differ {differing[:3]}"
    report(7, "determinism", same_set and not differing, detail, time.perf_counter() - t0, 1800)
