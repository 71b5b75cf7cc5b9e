"""Monte-Carlo evaluation: hybrid model vs. path-loss-only baseline."""

from __future__ import annotations

import csv
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from .channel import (PathLossParams, antenna_gain, group_by_user, lawnmower_poses,
                      random_poses, synthesize_dataset)
from .citymap import CityMap, DEFAULT_HEIGHT_SCALE, classify, generate_city, sample_street_points
from .learning import (HybridChannelModel, TrainConfig, build_training_set, fit_pathloss,
                       fit_report, predict_many, train_gain, write_training_log)
from .pso import LocalizationResult, PsoConfig, localize_all

logger = logging.getLogger(__name__)

WORKERS_ENV = "HYBRIDLOC_WORKERS"
MODELS = ("hybrid", "baseline")

# The plain constant-rate Adam run (1e-3, 500 epochs, patience 25) stops well
# short of a good gain fit on 2000 records; this schedule was picked by pilot runs.
TUNED_TRAINING = {"lr": 3e-3, "batch_size": 64, "epochs": 1000, "patience": 1000, "schedule": "cosine"}


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage


@dataclass
class MapSpec:
    extent: list = field(default_factory=lambda: [[0.0, 0.0], [300.0, 300.0]])
    building_count: int = 36
    height_scale: float = DEFAULT_HEIGHT_SCALE
    street_width: float = 12.0


@dataclass
class ExperimentConfig:
    seed: int = 0
    trials: int = 20
    map: MapSpec = field(default_factory=MapSpec)
    map_path: str | None = None
    receiver_height: float = 0.0
    channel: PathLossParams = field(default_factory=PathLossParams)
    true_gain: str = "pattern"      # "pattern" or "none"
    noise: bool = True
    k_train: int = 10
    n_train: int = 200
    k_test: int = 10
    n_test: int = 200
    train_altitude: tuple = (40.0, 100.0)
    test_altitude: tuple = (40.0, 100.0)
    test_pattern: str = "random"    # or "lawnmower"
    train: TrainConfig = field(default_factory=lambda: TrainConfig(**TUNED_TRAINING))
    pso: PsoConfig = field(default_factory=PsoConfig)
    gain_dtype: str = "float32"     # precision of network evaluation inside the swarm
    figures: bool = True
    paths: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name in ("map", "train", "pso"):
                v = asdict(v)
            elif f.name == "channel":
                v = v.to_dict()
            elif isinstance(v, tuple):
                v = list(v)
            out[f.name] = v
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        kw = dict(data)
        if "map" in kw:
            kw["map"] = MapSpec(**kw["map"])
        if "channel" in kw:
            kw["channel"] = PathLossParams.from_dict(kw["channel"])
        if "train" in kw:
            kw["train"] = TrainConfig.from_dict(kw["train"])
        if "pso" in kw:
            kw["pso"] = PsoConfig.from_dict(kw["pso"])
        for key in ("train_altitude", "test_altitude"):
            if key in kw:
                kw[key] = tuple(kw[key])
        cfg = cls(**kw)
        if cfg.true_gain not in ("pattern", "none"):
            raise ValueError(f"true_gain must be 'pattern' or 'none', got {cfg.true_gain!r}")
        if cfg.test_pattern not in ("random", "lawnmower"):
            raise ValueError(f"unknown test pattern {cfg.test_pattern!r}")
        return cfg

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n")


# -- empirical CDF ----------------------------------------------------------

@dataclass(frozen=True)
class CdfCurve:
    errors: np.ndarray         # distinct sorted values
    probabilities: np.ndarray  # fraction of samples <= value

    def quantile(self, q: float) -> float:
        """Inverse CDF; at an exact plateau the midpoint to the next step is used.

        With q = 0.5 this reproduces the usual sample median.
        """
        i = int(np.searchsorted(self.probabilities, q - 1e-12))
        i = min(i, len(self.errors) - 1)
        if abs(self.probabilities[i] - q) < 1e-12 and i + 1 < len(self.errors):
            return float(0.5 * (self.errors[i] + self.errors[i + 1]))
        return float(self.errors[i])

    def rows(self):
        return zip(self.errors.tolist(), self.probabilities.tolist())


def make_cdf(errors: Sequence[float]) -> CdfCurve:
    e = np.asarray(errors, dtype=float)
    if e.size == 0:
        raise ValueError("cannot build a CDF from no samples")
    if np.any(e < 0) or not np.all(np.isfinite(e)):
        raise ValueError("errors must be finite and non-negative")
    vals, counts = np.unique(e, return_counts=True)
    return CdfCurve(vals, np.cumsum(counts) / e.size)


def write_cdf(path, curve: CdfCurve) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["error_m", "probability"])
        for x, p in curve.rows():
            wr.writerow([repr(x), repr(p)])


def read_cdf(path) -> CdfCurve:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return CdfCurve(np.array([float(r["error_m"]) for r in rows]),
                    np.array([float(r["probability"]) for r in rows]))


# -- one trial ----------------------------------------------------------------

STAGES = ("map", "train_data", "train_noise", "gain", "test_data", "test_noise", "pso")


def trial_seeds(seed: int, trial: int) -> dict[str, int]:
    """Independent per-stage seeds for a trial, derived from the root seed."""
    ss = np.random.SeedSequence([seed, trial])
    return {name: int(s.generate_state(1)[0]) for name, s in zip(STAGES, ss.spawn(len(STAGES)))}


def build_map(cfg: ExperimentConfig, seed: int) -> CityMap:
    if cfg.map_path:
        return CityMap.load(cfg.map_path, cfg.receiver_height)
    m = cfg.map
    city = generate_city(m.extent, m.building_count, m.height_scale, seed, street_width=m.street_width)
    if cfg.receiver_height:
        city = CityMap(city.extent_min, city.extent_max, city.buildings, cfg.receiver_height)
    return city


def simulate(cfg: ExperimentConfig, city: CityMap, users: int, poses: int, place_seed: int,
             noise_seed: int, pattern: str = "random", altitude=(40.0, 100.0)):
    rng = np.random.default_rng(place_seed)
    u = sample_street_points(city, users, rng)
    if pattern == "lawnmower":
        p = lawnmower_poses(city, poses, rng, altitude)
    else:
        p = random_poses(city, poses, rng, altitude)
    gain = antenna_gain if cfg.true_gain == "pattern" else None
    meas, labels = synthesize_dataset(city, cfg.channel, u, p, noise_seed, gain=gain, noise=cfg.noise)
    return u, meas, labels


def learn(cfg: ExperimentConfig, city: CityMap, users, meas, seed: int, label: str = ""):
    train = build_training_set(city, meas, {k: users[k] for k in range(len(users))})
    fitted = fit_pathloss(train, cfg.channel.sigma2_los, cfg.channel.sigma2_nlos)
    tcfg = TrainConfig(**{**asdict(cfg.train), "seed": seed})
    net = train_gain(train, fitted, tcfg, trained_on=label or None)
    return train, fitted, net


def _stage(name, fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except StageError:
        raise
    except Exception as exc:  # noqa: BLE001 - re-raised with the stage name
        raise StageError(name, exc) from exc


def run_trial(cfg: ExperimentConfig, trial: int) -> dict:
    seeds = trial_seeds(cfg.seed, trial)
    city = _stage("map", build_map, cfg, seeds["map"])
    tr_users, tr_meas, _ = _stage("train_data", simulate, cfg, city, cfg.k_train, cfg.n_train,
                                  seeds["train_data"], seeds["train_noise"], "random", cfg.train_altitude)
    train, fitted, net = _stage("learn", learn, cfg, city, tr_users, tr_meas, seeds["gain"],
                                f"trial {trial}")
    te_users, te_meas, te_labels = _stage(
        "test_data", simulate, cfg, city, cfg.k_test, cfg.n_test, seeds["test_data"], seeds["test_noise"],
        cfg.test_pattern, cfg.test_altitude)

    dtype = None if cfg.gain_dtype == "float64" else np.dtype(cfg.gain_dtype).type
    models = {"hybrid": HybridChannelModel(fitted, net, dtype), "baseline": HybridChannelModel(fitted)}
    groups = group_by_user(te_meas)
    truths = {k: te_users[k] for k in groups}
    pso = PsoConfig(**{**asdict(cfg.pso), "seed": seeds["pso"]})
    results = {name: _stage(f"localize_{name}", localize_all, m, city, groups, pso, truths)
               for name, m in models.items()}

    traces = []
    for k, meas in groups.items():
        row = {"user": k, "n": [m.n for m in meas], "measured": [m.g for m in meas]}
        for name, m in models.items():
            res = next(r for r in results[name] if r.user == k)
            if res.estimate is None:
                row[name] = None
                continue
            labels = classify(city, [x.pose for x in meas], res.estimate)
            row[name] = predict_many(m, meas, res.estimate, labels, city.receiver_height).tolist()
        traces.append(row)

    return {
        "trial": trial,
        "seeds": seeds,
        "map": city.to_dict(),
        "fit": fit_report(train, fitted),
        "training": {"epochs": net.meta["epochs"], "best_epoch": net.meta["best_epoch"],
                     "history": net.history},
        "test_users": te_users.tolist(),
        "test_los_fraction": float(np.mean(te_labels)),
        "results": {name: [r.to_dict() for r in rs] for name, rs in results.items()},
        "traces": traces,
        "model": models["hybrid"].to_dict(),
    }


# -- whole experiment -------------------------------------------------------

def worker_count() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def _errors(trials, name):
    out = []
    for t in trials:
        for r in t["results"][name]:
            out.append((t["trial"], r["user"], r.get("error_m")))
    return out


def summarize(trials: list[dict]) -> dict:
    summary = {}
    for name in MODELS:
        errs = [e for _, _, e in _errors(trials, name) if e is not None]
        failures = sum(1 for _, _, e in _errors(trials, name) if e is None)
        if not errs:
            summary[name] = {"samples": 0, "failures": failures}
            continue
        cdf = make_cdf(errs)
        summary[name] = {
            "samples": len(errs), "failures": failures,
            "median_m": cdf.quantile(0.5), "p80_m": cdf.quantile(0.8),
            "mean_m": float(np.mean(errs)), "max_m": float(np.max(errs)),
        }
    return summary


def run_experiment(cfg: ExperimentConfig, out_dir: str | Path, workers: int | None = None) -> dict:
    """Run every trial, write all artifacts into ``out_dir`` and return the report."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg.save(out / "config.json")
    workers = worker_count() if workers is None else workers
    trials: list[dict] = []
    try:
        if workers > 1 and cfg.trials > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                for res in pool.map(run_trial, [cfg] * cfg.trials, range(cfg.trials)):
                    trials.append(res)
                    logger.info("trial %d done", res["trial"])
        else:
            for t in range(cfg.trials):
                trials.append(run_trial(cfg, t))
                logger.info("trial %d done", t)
    finally:
        # flush whatever finished before a failure
        write_artifacts(cfg, out, trials)
    return json.loads((out / "report.json").read_text())


def write_artifacts(cfg: ExperimentConfig, out: Path, trials: list[dict]) -> None:
    summary = summarize(trials)
    report = {
        "summary": summary,
        "trials": [{k: v for k, v in t.items() if k not in ("traces", "model", "map", "training")}
                   | {"training_epochs": t["training"]["epochs"]} for t in trials],
    }
    (out / "report.json").write_text(json.dumps(report, indent=1) + "\n")

    with open(out / "errors.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["trial", "user", "model", "error_m"])
        for name in MODELS:
            for trial, user, err in _errors(trials, name):
                wr.writerow([trial, user, name, "" if err is None else repr(err)])

    curves = {}
    for name in MODELS:
        errs = [e for _, _, e in _errors(trials, name) if e is not None]
        if errs:
            curves[name] = make_cdf(errs)
            write_cdf(out / f"cdf_{name}.csv", curves[name])

    with open(out / "channel_traces.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["trial", "user", "n", "measured", "hybrid", "baseline"])
        for t in trials:
            for row in t["traces"]:
                for i, n in enumerate(row["n"]):
                    wr.writerow([t["trial"], row["user"], n, repr(row["measured"][i])]
                                + ["" if row[m] is None else repr(row[m][i]) for m in MODELS])

    for t in trials:
        tdir = out / "trials" / f"trial_{t['trial']:03d}"
        tdir.mkdir(parents=True, exist_ok=True)
        (tdir / "map.json").write_text(json.dumps(t["map"], indent=1))
        (tdir / "fit_report.json").write_text(json.dumps(t["fit"], indent=1) + "\n")
        (tdir / "model.json").write_text(json.dumps(t["model"]))
        write_training_log(tdir / "training_log.csv", t["training"]["history"])
        for name in MODELS:
            (tdir / f"results_{name}.json").write_text(json.dumps(t["results"][name], indent=1))

    if cfg.figures and trials:
        from . import plots
        plots.render_all(out, trials, curves)


def load_errors(path) -> dict[str, list[float]]:
    out: dict[str, list[float]] = {name: [] for name in MODELS}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            if row["error_m"]:
                out[row["model"]].append(float(row["error_m"]))
    return out


def results_from_trial(trial: dict, name: str) -> list[LocalizationResult]:
    return [LocalizationResult.from_dict(r) for r in trial["results"][name]]
