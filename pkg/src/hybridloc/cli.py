"""Command line entry point.

Every subcommand takes ``--config`` (JSON experiment config), ``--out`` (a
directory) and optionally ``--seed``.  Stages read their inputs from the
config's ``paths`` section when given, otherwise from the files an earlier
stage wrote into the same ``--out`` directory.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .channel import (PathLossParams, group_by_user, read_measurements, read_truth,
                      write_measurements, write_truth)
from .citymap import CityMap
from .experiment import (ExperimentConfig, StageError, build_map, run_experiment, simulate,
                         trial_seeds)
from .learning import (HybridChannelModel, TrainConfig, build_training_set, fit_pathloss,
                       fit_report, train_gain, write_training_log)
from .pso import PsoConfig, localize_all, write_results

log = logging.getLogger("hybridloc")

DEFAULT_FILES = {
    "map": "map.json",
    "train_measurements": "train_measurements.jsonl",
    "train_truth": "train_truth.jsonl",
    "test_measurements": "test_measurements.jsonl",
    "test_truth": "test_truth.jsonl",
    "pathloss": "pathloss.json",
    "model": "model.json",
}


def _path(cfg: ExperimentConfig, out: Path, key: str, must_exist: bool = True) -> Path:
    p = Path(cfg.paths[key]) if cfg.paths.get(key) else out / DEFAULT_FILES[key]
    if must_exist and not p.exists():
        raise FileNotFoundError(f"{key}: {p} not found (run the earlier stage or set paths.{key})")
    return p


def _load_map(cfg: ExperimentConfig, out: Path) -> CityMap:
    return CityMap.load(_path(cfg, out, "map"), cfg.receiver_height)


def _known_users(truth_path: Path) -> dict[int, np.ndarray]:
    return read_truth(truth_path)[1]


def cmd_gen_map(cfg, out):
    city = build_map(cfg, trial_seeds(cfg.seed, 0)["map"])
    city.save(out / DEFAULT_FILES["map"])
    log.info("wrote %d buildings to %s", len(city.buildings), out / DEFAULT_FILES["map"])


def cmd_gen_data(cfg, out):
    map_file = _path(cfg, out, "map", must_exist=False)
    if map_file.exists():
        city = CityMap.load(map_file, cfg.receiver_height)
    else:
        city = build_map(cfg, trial_seeds(cfg.seed, 0)["map"])
        city.save(out / DEFAULT_FILES["map"])
    seeds = trial_seeds(cfg.seed, 0)
    for split, k, n, pattern, alt in (
        ("train", cfg.k_train, cfg.n_train, "random", cfg.train_altitude),
        ("test", cfg.k_test, cfg.n_test, cfg.test_pattern, cfg.test_altitude),
    ):
        users, meas, labels = simulate(cfg, city, k, n, seeds[f"{split}_data"], seeds[f"{split}_noise"],
                                       pattern, alt)
        write_measurements(out / DEFAULT_FILES[f"{split}_measurements"], meas)
        write_truth(out / DEFAULT_FILES[f"{split}_truth"], meas, labels, users)
        log.info("%s: %d records, LoS fraction %.2f", split, len(meas), float(np.mean(labels)))


def _training_set(cfg, out):
    city = _load_map(cfg, out)
    meas = read_measurements(_path(cfg, out, "train_measurements"))
    return city, build_training_set(city, meas, _known_users(_path(cfg, out, "train_truth")))


def cmd_fit_pathloss(cfg, out):
    _, train = _training_set(cfg, out)
    params = fit_pathloss(train, cfg.channel.sigma2_los, cfg.channel.sigma2_nlos)
    (out / DEFAULT_FILES["pathloss"]).write_text(json.dumps(params.to_dict(), indent=1))
    (out / "fit_report.json").write_text(json.dumps(fit_report(train, params), indent=1) + "\n")
    log.info("fitted %s", params)


def cmd_train_gain(cfg, out):
    _, train = _training_set(cfg, out)
    params = PathLossParams.from_dict(json.loads(_path(cfg, out, "pathloss").read_text()))
    tcfg = TrainConfig(**{**asdict(cfg.train), "seed": trial_seeds(cfg.seed, 0)["gain"]})
    net = train_gain(train, params, tcfg, trained_on=str(_path(cfg, out, "train_measurements")))
    net.save(out / "gain.json")
    HybridChannelModel(params, net).save(out / DEFAULT_FILES["model"])
    write_training_log(out / "training_log.csv", net.history)
    log.info("trained %d epochs, best held-out loss %.4f", net.meta["epochs"],
             min(h[2] for h in net.history))


def cmd_localize(cfg, out):
    city = _load_map(cfg, out)
    model = HybridChannelModel.load(_path(cfg, out, "model"))
    if cfg.gain_dtype != "float64":
        model.dtype = np.dtype(cfg.gain_dtype).type
    groups = group_by_user(read_measurements(_path(cfg, out, "test_measurements")))
    truth_file = _path(cfg, out, "test_truth", must_exist=False)
    truths = _known_users(truth_file) if truth_file.exists() else None
    pso = PsoConfig(**{**asdict(cfg.pso), "seed": trial_seeds(cfg.seed, 0)["pso"]})
    ok = True
    for name, m in (("hybrid", model), ("baseline", HybridChannelModel(model.params))):
        results = localize_all(m, city, groups, pso, truths)
        write_results(out / f"results_{name}.json", results)
        ok &= all(r.failure is None for r in results)
        errs = [r.error_m for r in results if r.error_m is not None]
        if errs:
            log.info("%s: median error %.2f m over %d users", name, float(np.median(errs)), len(errs))
    if not ok:
        raise RuntimeError("some users could not be localized; see results files")


def cmd_evaluate(cfg, out):
    report = run_experiment(cfg, out)
    for name, s in report["summary"].items():
        if s.get("samples"):
            log.info("%s: median %.2f m, p80 %.2f m (%d samples)", name, s["median_m"], s["p80_m"],
                     s["samples"])
    if any(s.get("failures") for s in report["summary"].values()):
        raise RuntimeError("some localizations failed; see report.json")


COMMANDS = {
    "gen-map": cmd_gen_map,
    "gen-data": cmd_gen_data,
    "fit-pathloss": cmd_fit_pathloss,
    "train-gain": cmd_train_gain,
    "localize": cmd_localize,
    "evaluate": cmd_evaluate,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hybridloc", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="experiment config (JSON); defaults are used if omitted")
        p.add_argument("--out", type=Path, required=True, help="output directory")
        p.add_argument("--seed", type=int, help="override the config's root seed")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
        if args.seed is not None:
            cfg.seed = args.seed
        args.out.mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command](cfg, args.out)
    except (StageError, FileNotFoundError, ValueError, RuntimeError) as exc:
        log.error("%s", exc)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
