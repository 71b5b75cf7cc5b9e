"""Map-aware particle swarm localization of ground users."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numba
import numpy as np

from .channel import Measurement, measurement_arrays
from .citymap import CityMap, GeometryError, los_matrix
from .learning import HybridChannelModel
from .netgain import GainNetwork, batch_features


class LocalizationFailure(RuntimeError):
    """No candidate position produced a finite objective."""


@dataclass(frozen=True)
class PsoConfig:
    particles: int = 100
    iterations: int = 150
    inertia: float = 0.72
    cognitive: float = 1.49
    social: float = 1.49
    velocity_cap: float | None = None  # m/iteration; None = 10% of the extent diagonal
    seed: int = 0
    cell_cache: float | None = None    # quantization pitch (m) for memoized LoS labels

    def __post_init__(self):
        if self.particles < 1:
            raise ValueError("need at least one particle")
        if self.iterations < 1:
            raise ValueError("need at least one iteration")
        if not 0.0 < self.inertia < 1.0:
            raise ValueError("inertia must lie in (0, 1)")
        if self.velocity_cap is not None and not self.velocity_cap > 0:
            raise ValueError("velocity cap must be positive")

    @classmethod
    def from_dict(cls, data: dict) -> "PsoConfig":
        return cls(**{k: data[k] for k in cls.__dataclass_fields__ if k in data})


@dataclass
class LocalizationResult:
    user: int
    estimate: np.ndarray | None
    objective: float
    trace: list[float] = field(default_factory=list)
    error_m: float | None = None
    failure: str | None = None

    def to_dict(self) -> dict:
        out = {
            "user": self.user,
            "estimate": None if self.estimate is None else [float(v) for v in self.estimate],
            "objective": self.objective,
            "trace": [float(v) for v in self.trace],
        }
        if self.error_m is not None:
            out["error_m"] = self.error_m
        if self.failure is not None:
            out["failure"] = self.failure
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "LocalizationResult":
        est = data.get("estimate")
        return cls(int(data["user"]), None if est is None else np.array(est, dtype=float),
                   float(data["objective"]), [float(v) for v in data.get("trace", [])],
                   data.get("error_m"), data.get("failure"))


@numba.njit(cache=True)
def _objective_kernel(pos, g, cands, los, gain, coef, receiver_height):
    """Weighted squared residual sum per candidate, path loss evaluated inline."""
    p, n = cands.shape[0], pos.shape[0]
    out = np.zeros(p)
    for i in range(p):
        acc = 0.0
        for j in range(n):
            dx = pos[j, 0] - cands[i, 0]
            dy = pos[j, 1] - cands[i, 1]
            dz = pos[j, 2] - receiver_height
            d2 = dx * dx + dy * dy + dz * dz
            if d2 == 0.0:
                return out, True
            k = 0 if los[i, j] else 3
            # -10 log10(d) = -5 log10(d^2)
            r = g[j] - (coef[k + 1] - 5.0 * coef[k] * math.log10(d2)) - gain[i, j]
            acc += r * r / coef[k + 2]
        out[i] = acc
    return out, False


class UserObjective:
    """Negative log-likelihood of one user's measurements as a function of its position.

    For each candidate the LoS/NLoS split is recomputed from the map, then
    ``log(s2_los / s2_nlos) * #LoS + sum_z sum_n (g_n - pl_z(d_n) - gain_n)^2 / s2_z``.
    Candidates outside the map extent score ``+inf``.
    """

    def __init__(self, model: HybridChannelModel, city: CityMap,
                 measurements: Sequence[Measurement], cell: float | None = None):
        if len(measurements) == 0:
            raise ValueError("objective needs at least one measurement")
        self.model = model
        self.city = city
        self.pos, self.psi, self.g = measurement_arrays(measurements)
        self.cell = cell
        self._labels: dict[tuple[int, int], np.ndarray] = {}
        p = model.params
        self._log_ratio = math.log(p.sigma2_los / p.sigma2_nlos)

    def labels(self, cands: np.ndarray) -> np.ndarray:
        if not self.cell:
            return los_matrix(self.city, self.pos, cands, check=False)
        keys = np.floor(cands / self.cell).astype(np.int64)
        out = np.empty((len(cands), len(self.pos)), dtype=bool)
        for i, key in enumerate(map(tuple, keys)):
            hit = self._labels.get(key)
            if hit is None:
                centre = (np.asarray(key) + 0.5) * self.cell
                hit = los_matrix(self.city, self.pos, centre[None, :], check=False)[0]
                self._labels[key] = hit
            out[i] = hit
        return out

    def __call__(self, cands) -> np.ndarray:
        cands = np.asarray(cands, dtype=float).reshape(-1, 2)
        out = np.full(len(cands), np.inf)
        ok = self.city.in_extent(cands)
        if not ok.any():
            return out
        c = cands[ok]
        los = self.labels(c)
        rh = self.city.receiver_height
        x = None
        if isinstance(self.model.gain, GainNetwork):
            x, _ = batch_features(self.pos, self.psi, c, rh)
        gain = np.ascontiguousarray(self.model.gain_db(self.pos, self.psi, c, x=x))
        p = self.model.params
        coef = np.array([p.alpha_los, p.beta_los, p.sigma2_los, p.alpha_nlos, p.beta_nlos, p.sigma2_nlos])
        val, coincide = _objective_kernel(self.pos, self.g, c, los, gain, coef, float(rh))
        if coincide:
            raise GeometryError("UAV and candidate coincide")
        out[ok] = val + self._log_ratio * los.sum(axis=1)
        return out


def objective(model: HybridChannelModel, city: CityMap, measurements: Sequence[Measurement],
              candidate) -> float:
    """Objective value of a single candidate position."""
    return float(UserObjective(model, city, measurements)(np.asarray(candidate, dtype=float))[0])


def localize(model: HybridChannelModel, city: CityMap, measurements: Sequence[Measurement],
             cfg: PsoConfig = PsoConfig(), user: int | None = None, truth=None) -> LocalizationResult:
    """Run the swarm and return the global best after the last iteration.

    ``trace[i]`` is the global-best objective after iteration ``i``
    (``trace[0]`` is the initial swarm).
    """
    if user is None:
        user = measurements[0].k if measurements else -1
    f = UserObjective(model, city, measurements, cell=cfg.cell_cache)
    rng = np.random.default_rng(cfg.seed)
    lo = np.array(city.extent_min)
    hi = np.array(city.extent_max)
    vmax = cfg.velocity_cap or 0.1 * float(np.linalg.norm(hi - lo))

    pos = rng.uniform(lo, hi, size=(cfg.particles, 2))
    vel = np.zeros_like(pos)
    val = f(pos)
    pbest, pbest_val = pos.copy(), val.copy()
    j = int(np.argmin(pbest_val))
    trace = [float(pbest_val[j])]
    for _ in range(cfg.iterations):
        r1 = rng.random(pos.shape)
        r2 = rng.random(pos.shape)
        vel = (cfg.inertia * vel + cfg.cognitive * r1 * (pbest - pos)
               + cfg.social * r2 * (pbest[j] - pos))
        speed = np.linalg.norm(vel, axis=1, keepdims=True)
        vel = np.where(speed > vmax, vel * (vmax / np.maximum(speed, 1e-300)), vel)
        pos = np.clip(pos + vel, lo, hi)
        val = f(pos)
        better = val < pbest_val
        pbest[better] = pos[better]
        pbest_val[better] = val[better]
        j = int(np.argmin(pbest_val))
        trace.append(float(pbest_val[j]))

    if not math.isfinite(pbest_val[j]):
        raise LocalizationFailure(f"user {user}: no candidate with a finite objective")
    est = pbest[j].copy()
    err = None if truth is None else float(np.linalg.norm(est - np.asarray(truth, dtype=float)))
    return LocalizationResult(user, est, float(pbest_val[j]), trace, err)


def user_seed(seed: int, user: int) -> int:
    return int(np.random.SeedSequence([seed, user]).generate_state(1)[0])


def localize_all(model: HybridChannelModel, city: CityMap,
                 grouped: Mapping[int, Sequence[Measurement]], cfg: PsoConfig = PsoConfig(),
                 truths: Mapping[int, np.ndarray] | None = None) -> list[LocalizationResult]:
    """Localize every user independently, in the mapping's order.

    Each user gets its own swarm seeded from ``(cfg.seed, user id)``; a failure
    is recorded on that user's entry instead of being raised.
    """
    results = []
    for k, meas in grouped.items():
        truth = None if truths is None else truths.get(k)
        try:
            res = localize(model, city, meas, replace(cfg, seed=user_seed(cfg.seed, k)), user=k, truth=truth)
        except (LocalizationFailure, ValueError) as exc:
            res = LocalizationResult(k, None, math.inf, [], None, str(exc))
        results.append(res)
    return results


def write_results(path: str | Path, results: Sequence[LocalizationResult]) -> None:
    Path(path).write_text(json.dumps([r.to_dict() for r in results], indent=1))


def read_results(path: str | Path) -> list[LocalizationResult]:
    return [LocalizationResult.from_dict(r) for r in json.loads(Path(path).read_text())]
