"""Offline two-phase channel learning and hybrid RSS prediction.

Phase one fits the LoS/NLoS log-distance lines with the antenna gain
ignored; phase two freezes them and trains the gain network on what is
left over.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .channel import (LOS, NLOS, Measurement, PathLossParams, UavPose,
                      measurement_arrays, segment_path_loss)
from .citymap import CityMap, los_matrix
from .netgain import Adam, GainNetwork, batch_features, forward, gradient

logger = logging.getLogger(__name__)


class FitError(ValueError):
    """Path-loss fit impossible for one segment."""


class TrainingError(RuntimeError):
    """Gain training diverged."""


@dataclass
class TrainingSet:
    d: np.ndarray        # (M,) UAV-user distance
    x: np.ndarray        # (M, 4) network features
    g: np.ndarray        # (M,) measured RSS, dB
    labels: np.ndarray   # (M,) 1 = LoS
    users: np.ndarray    # (M,) user id per record

    def __len__(self) -> int:
        return len(self.g)

    def subset(self, idx) -> "TrainingSet":
        return TrainingSet(self.d[idx], self.x[idx], self.g[idx], self.labels[idx], self.users[idx])


def build_training_set(city: CityMap, measurements: Sequence[Measurement],
                       user_positions: Mapping[int, np.ndarray]) -> TrainingSet:
    """Attach map-derived labels, distances and features to known-user records."""
    pos, psi, g = measurement_arrays(measurements)
    ks = np.array([m.k for m in measurements], dtype=int)
    d = np.empty(len(measurements))
    x = np.empty((len(measurements), 4))
    labels = np.empty(len(measurements), dtype=np.int8)
    for k in np.unique(ks):
        sel = np.flatnonzero(ks == k)
        u = np.asarray(user_positions[int(k)], dtype=float)
        labels[sel] = los_matrix(city, pos[sel], [u])[0]
        xf, dk = batch_features(pos[sel], psi[sel], u[None, :], city.receiver_height)
        x[sel] = xf[0]
        d[sel] = dk[0]
    return TrainingSet(d, x, g, labels, ks)


def _line_fit(s: np.ndarray, g: np.ndarray, segment: str) -> tuple[float, float]:
    if len(s) < 2:
        raise FitError(f"{segment} segment has {len(s)} record(s); need at least 2")
    s_mean = s.mean()
    sc = s - s_mean
    sxx = float(sc @ sc)
    if sxx <= 1e-12 * max(1.0, float(s_mean) ** 2) * len(s):
        raise FitError(f"{segment} segment has no distance spread")
    g_mean = g.mean()
    slope = float(sc @ (g - g_mean)) / sxx
    return slope, float(g_mean - slope * s_mean)


def fit_pathloss(train: TrainingSet, sigma2_los: float = 2.0, sigma2_nlos: float = 5.0) -> PathLossParams:
    """Per-segment least-squares fit of g = beta + alpha * (-10 log10 d).

    The weights 1/sigma^2 are constant inside a segment, so each segment is an
    ordinary line fit solved in closed form.  A segment absent from the data
    altogether (e.g. a map without buildings) borrows the other segment's line.
    """
    s = -10.0 * np.log10(train.d)
    los = train.labels.astype(bool)
    if len(los) and (los.all() or not los.any()):
        present, missing = (LOS, NLOS) if los.all() else (NLOS, LOS)
        a, b = _line_fit(s, train.g, present)
        logger.warning("no %s records; reusing the %s fit for it", missing, present)
        a_los = a_nlos = a
        b_los = b_nlos = b
    else:
        a_los, b_los = _line_fit(s[los], train.g[los], LOS)
        a_nlos, b_nlos = _line_fit(s[~los], train.g[~los], NLOS)
    for name, a in ((LOS, a_los), (NLOS, a_nlos)):
        if a <= 0:
            logger.warning("fitted %s path loss exponent %.3f is not positive", name, a)
    return PathLossParams(a_los, a_nlos, b_los, b_nlos, sigma2_los, sigma2_nlos)


def fit_report(train: TrainingSet, params: PathLossParams) -> dict:
    los = train.labels.astype(bool)
    resid = train.g - segment_path_loss(params, los, train.d)
    rms = {}
    counts = {}
    for name, sel in ((LOS, los), (NLOS, ~los)):
        counts[name] = int(sel.sum())
        rms[name] = float(np.sqrt(np.mean(resid[sel] ** 2))) if sel.any() else None
    return {
        "alpha_los": params.alpha_los, "beta_los": params.beta_los,
        "alpha_nlos": params.alpha_nlos, "beta_nlos": params.beta_nlos,
        "residual_rms_per_segment": rms, "n_records_per_segment": counts,
    }


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 128
    epochs: int = 500
    patience: int = 25
    val_fraction: float = 0.1
    seed: int = 0
    schedule: str = "constant"  # or "cosine": step decays to zero over `epochs`

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        return cls(**{k: data[k] for k in cls.__dataclass_fields__ if k in data})


def _weighted_mse(net, x, target, w) -> float:
    r = target - forward(net, x)
    return float(np.mean(w * r * r)) if len(r) else float("nan")


def train_gain(train: TrainingSet, fixed: PathLossParams, cfg: TrainConfig = TrainConfig(),
               net: GainNetwork | None = None, trained_on: str | None = None) -> GainNetwork:
    """Fit the gain network to g - path_loss(d) with the path loss frozen.

    Minimizes the 1/sigma^2-weighted squared residual with Adam on minibatches
    and keeps the parameters with the lowest held-out loss.  The constant
    LoS-count term of the likelihood does not depend on the network and is
    left out.
    """
    rng = np.random.default_rng(cfg.seed)
    net = GainNetwork.init(seed=cfg.seed) if net is None else net.copy()
    los = train.labels.astype(bool)
    target = train.g - segment_path_loss(fixed, los, train.d)
    w = np.where(los, 1.0 / fixed.sigma2_los, 1.0 / fixed.sigma2_nlos)

    order = rng.permutation(len(train))
    n_val = int(round(cfg.val_fraction * len(train))) if len(train) > 1 else 0
    val, tr = order[:n_val], order[n_val:]
    if len(tr) == 0:
        raise TrainingError("no training records after the validation split")
    x_tr, t_tr, w_tr = train.x[tr], target[tr], w[tr]
    x_val, t_val, w_val = train.x[val], target[val], w[val]

    def val_loss():
        return _weighted_mse(net, x_val, t_val, w_val) if n_val else _weighted_mse(net, x_tr, t_tr, w_tr)

    history = [(0, _weighted_mse(net, x_tr, t_tr, w_tr), val_loss())]
    best = (history[0][2], net.copy(), 0)
    opt = Adam(net.params(), lr=cfg.lr)
    stale = 0
    for epoch in range(1, cfg.epochs + 1):
        if cfg.schedule == "cosine":
            opt.lr = 0.5 * cfg.lr * (1.0 + math.cos(math.pi * (epoch - 1) / cfg.epochs))
        perm = rng.permutation(len(tr))
        for start in range(0, len(perm), cfg.batch_size):
            b = perm[start:start + cfg.batch_size]
            _, grads = gradient(net, x_tr[b], t_tr[b], w_tr[b])
            opt.step([gr / len(b) for gr in grads])
        row = (epoch, _weighted_mse(net, x_tr, t_tr, w_tr), val_loss())
        if not (math.isfinite(row[1]) and math.isfinite(row[2])):
            raise TrainingError(f"loss diverged at epoch {epoch}; last finite epoch {epoch - 1}")
        history.append(row)
        if row[2] < best[0]:
            best = (row[2], net.copy(), epoch)
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break

    result = best[1]
    result.history = history
    result.meta = {"trained_on": trained_on, "seed": cfg.seed, "epochs": len(history) - 1,
                   "best_epoch": best[2]}
    return result


def write_training_log(path: str | Path, history) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["epoch", "loss_train", "loss_val"])
        for epoch, lt, lv in history:
            wr.writerow([epoch, repr(float(lt)), repr(float(lv))])


def read_training_log(path: str | Path) -> list[tuple[int, float, float]]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [(int(r["epoch"]), float(r["loss_train"]), float(r["loss_val"])) for r in rows]


GainModel = GainNetwork | Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray] | None


@dataclass
class HybridChannelModel:
    """Fitted path loss plus an antenna-gain term.

    ``gain`` is a trained :class:`GainNetwork`, any callable
    ``(uav (N,3), heading (N,), users (P,2)) -> (P, N)`` in dB, or ``None`` for
    the path-loss-only baseline.
    """

    params: PathLossParams
    gain: GainModel = None
    dtype: type | None = None  # network evaluation precision; None = float64

    @property
    def is_baseline(self) -> bool:
        return self.gain is None

    def gain_db(self, uav: np.ndarray, heading: np.ndarray, users: np.ndarray,
                x: np.ndarray | None = None, receiver_height: float = 0.0) -> np.ndarray:
        users = np.asarray(users, dtype=float).reshape(-1, 2)
        shape = (len(users), len(uav))
        if self.gain is None:
            return np.zeros(shape)
        if isinstance(self.gain, GainNetwork):
            if x is None:
                x, _ = batch_features(uav, heading, users, receiver_height)
            return np.asarray(forward(self.gain, x, dtype=self.dtype), dtype=np.float64).reshape(shape)
        return np.asarray(self.gain(uav, heading, users), dtype=float).reshape(shape)

    def to_dict(self) -> dict:
        out = {"pathloss": self.params.to_dict()}
        if isinstance(self.gain, GainNetwork):
            out["gain"] = self.gain.to_dict()
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "HybridChannelModel":
        gain = GainNetwork.from_dict(data["gain"]) if data.get("gain") else None
        return cls(PathLossParams.from_dict(data["pathloss"]), gain)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path: str | Path) -> "HybridChannelModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def predict(model: HybridChannelModel, pose: UavPose, candidate, label, receiver_height: float = 0.0) -> float:
    """Predicted RSS for one pose/candidate under the given segment label."""
    los = label in (1, True, LOS)
    uav = np.array([pose.position])
    x, d = batch_features(uav, np.array([pose.heading]), np.asarray(candidate, dtype=float)[None, :],
                          receiver_height)
    pl = segment_path_loss(model.params, np.array([[los]]), d)
    return float(pl[0, 0] + model.gain_db(uav, np.array([pose.heading]), candidate, x=x)[0, 0])


def predict_many(model: HybridChannelModel, measurements: Sequence[Measurement], candidate,
                 labels, receiver_height: float = 0.0) -> np.ndarray:
    pos, psi, _ = measurement_arrays(measurements)
    cand = np.asarray(candidate, dtype=float).reshape(1, 2)
    x, d = batch_features(pos, psi, cand, receiver_height)
    pl = segment_path_loss(model.params, np.asarray(labels, dtype=bool)[None, :], d)
    return (pl + model.gain_db(pos, psi, cand, x=x))[0]


def training_config_dict(cfg: TrainConfig) -> dict:
    return asdict(cfg)
