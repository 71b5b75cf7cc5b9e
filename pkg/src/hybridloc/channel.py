"""Ground-truth radio simulation: path loss, UAV antenna gain, shadowing, datasets."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numba
import numpy as np

from .citymap import CityMap, GeometryError, los_matrix

LOS, NLOS = "los", "nlos"


@dataclass(frozen=True)
class PathLossParams:
    alpha_los: float = 2.2
    alpha_nlos: float = 3.2
    beta_los: float = -32.0
    beta_nlos: float = -35.0
    sigma2_los: float = 2.0
    sigma2_nlos: float = 5.0

    def __post_init__(self):
        # fitted exponents may come out non-positive; only finiteness is enforced
        if not all(math.isfinite(v) for v in (self.alpha_los, self.alpha_nlos,
                                              self.beta_los, self.beta_nlos)):
            raise ValueError("path loss parameters must be finite")
        if not (self.sigma2_los > 0 and self.sigma2_nlos > 0):
            raise ValueError("shadowing variances must be positive")

    def alpha(self, segment: str) -> float:
        return self.alpha_los if segment == LOS else self.alpha_nlos

    def beta(self, segment: str) -> float:
        return self.beta_los if segment == LOS else self.beta_nlos

    def sigma2(self, segment: str) -> float:
        return self.sigma2_los if segment == LOS else self.sigma2_nlos

    def to_dict(self) -> dict:
        return dict(self.__dict__)

    @classmethod
    def from_dict(cls, data: dict) -> "PathLossParams":
        return cls(**{k: float(data[k]) for k in cls.__dataclass_fields__ if k in data})


def wrap_angle(a: float) -> float:
    """Wrap to [-pi, pi)."""
    return (a + math.pi) % (2 * math.pi) - math.pi


@dataclass(frozen=True)
class UavPose:
    position: tuple[float, float, float]
    heading: float = 0.0  # radians from north (+y), clockwise positive

    def __post_init__(self):
        pos = tuple(float(v) for v in self.position)
        if len(pos) != 3:
            raise ValueError("UAV position must be 3D")
        if not pos[2] > 0:
            raise GeometryError(f"UAV altitude must be positive, got {pos[2]}")
        object.__setattr__(self, "position", pos)
        object.__setattr__(self, "heading", wrap_angle(float(self.heading)))


@dataclass(frozen=True)
class Measurement:
    n: int
    k: int
    pose: UavPose
    g: float

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("time index starts at 1")
        if not math.isfinite(self.g):
            raise ValueError("RSS value must be finite")


def path_loss(params: PathLossParams, segment: str, d):
    """Log-distance mean channel gain in dB; works elementwise on arrays."""
    d = np.asarray(d, dtype=float)
    if np.any(d <= 0):
        raise GeometryError("distance must be positive")
    out = params.beta(segment) - 10.0 * params.alpha(segment) * np.log10(d)
    return float(out) if out.ndim == 0 else out


def segment_path_loss(params: PathLossParams, los, d) -> np.ndarray:
    """Path loss with the branch picked per element by a boolean LoS mask."""
    d = np.asarray(d, dtype=float)
    los = np.asarray(los, dtype=bool)
    logd = np.log10(d)
    return np.where(
        los,
        params.beta_los - 10.0 * params.alpha_los * logd,
        params.beta_nlos - 10.0 * params.alpha_nlos * logd,
    )


@numba.njit(cache=True)
def _gain_kernel(uav, heading, users, receiver_height):
    n, p = uav.shape[0], users.shape[0]
    out = np.empty((p, n))
    cos_psi = np.cos(heading)
    sin_psi = np.sin(heading)
    for j in range(n):
        up = uav[j, 2] - receiver_height
        for i in range(p):
            east = users[i, 0] - uav[j, 0]
            north = users[i, 1] - uav[j, 1]
            horiz = math.hypot(east, north)
            if horiz > 0.0:
                sin_sum = (east * cos_psi[j] + north * sin_psi[j]) / horiz
            elif up == 0.0:
                return out, False
            else:
                # directly overhead the azimuth is taken as north, like atan2(0, 0)
                sin_sum = sin_psi[j]
            out[i, j] = 15.0 * (horiz / math.hypot(horiz, up) + 2.0 * abs(sin_sum))
    return out, True


def antenna_gain(uav, heading, users, receiver_height: float = 0.0) -> np.ndarray:
    """Vectorized ground-truth gain 15 (|cos rho| + 2 |sin(phi + psi)|).

    ``uav`` is (N, 3), ``heading`` (N,), ``users`` (..., 2); the result has
    shape users.shape[:-1] + (N,).  Azimuth is measured from north clockwise,
    elevation from the horizontal plane.
    """
    uav = np.ascontiguousarray(uav, dtype=float).reshape(-1, 3)
    heading = np.ascontiguousarray(heading, dtype=float).reshape(-1)
    users = np.asarray(users, dtype=float)
    flat = np.ascontiguousarray(users.reshape(-1, 2))
    out, ok = _gain_kernel(uav, heading, flat, float(receiver_height))
    if not ok:
        raise GeometryError("UAV and user coincide")
    return out.reshape(users.shape[:-1] + (len(uav),))


def true_antenna_gain(pose: UavPose, user) -> float:
    return float(antenna_gain([pose.position], [pose.heading], np.asarray(user, dtype=float))[0])


def random_poses(city: CityMap, count: int, rng: np.random.Generator,
                 altitude=(40.0, 100.0)) -> list[UavPose]:
    (x0, y0), (x1, y1) = city.extent_min, city.extent_max
    xs = rng.uniform(x0, x1, count)
    ys = rng.uniform(y0, y1, count)
    zs = rng.uniform(altitude[0], altitude[1], count)
    psi = rng.uniform(-math.pi, math.pi, count)
    return [UavPose((x, y, z), h) for x, y, z, h in zip(xs, ys, zs, psi)]


def lawnmower_poses(city: CityMap, count: int, rng: np.random.Generator,
                    altitude=(40.0, 100.0), lanes: int = 6) -> list[UavPose]:
    """Boustrophedon sweep at a single random altitude; heading follows the track."""
    (x0, y0), (x1, y1) = city.extent_min, city.extent_max
    z = rng.uniform(*altitude)
    lane_y = np.linspace(y0, y1, lanes + 2)[1:-1]
    per_lane = int(math.ceil(count / lanes))
    poses = []
    for i, y in enumerate(lane_y):
        xs = np.linspace(x0, x1, per_lane)
        heading = math.pi / 2 if i % 2 == 0 else -math.pi / 2
        if i % 2:
            xs = xs[::-1]
        poses.extend(UavPose((float(x), float(y), z), heading) for x in xs)
    return poses[:count]


def pose_arrays(poses: Sequence[UavPose]) -> tuple[np.ndarray, np.ndarray]:
    pos = np.array([p.position for p in poses], dtype=float).reshape(-1, 3)
    psi = np.array([p.heading for p in poses], dtype=float)
    return pos, psi


GainFn = Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]


def synthesize_dataset(
    city: CityMap,
    params: PathLossParams,
    users,
    poses: Sequence[UavPose],
    rng_seed: int,
    gain: GainFn | None = antenna_gain,
    noise: bool = True,
) -> tuple[list[Measurement], np.ndarray]:
    """Simulate RSS for every (pose, user) pair.

    Records are ordered pose-major (n = 1..N, then k = 0..K-1).  Returns the
    measurements and the matching true LoS labels (1 = LoS).  ``gain=None``
    means an isotropic UAV antenna; ``noise=False`` gives the zero-shadowing
    limit.
    """
    users = np.asarray(users, dtype=float).reshape(-1, 2)
    pos, psi = pose_arrays(poses)
    if len(poses) == 0 or len(users) == 0:
        return [], np.zeros(0, dtype=np.int8)
    los = los_matrix(city, pos, users)  # (K, N)
    d = np.linalg.norm(
        np.concatenate([users, np.full((len(users), 1), city.receiver_height)], axis=1)[:, None, :]
        - pos[None, :, :],
        axis=-1,
    )
    g = segment_path_loss(params, los, d)
    if gain is not None:
        g = g + gain(pos, psi, users)
    rng = np.random.default_rng(rng_seed)
    eta = rng.standard_normal(size=(len(poses), len(users))).T
    if noise:
        sigma = np.where(los, math.sqrt(params.sigma2_los), math.sqrt(params.sigma2_nlos))
        g = g + sigma * eta
    records = []
    labels = []
    for n, pose in enumerate(poses):
        for k in range(len(users)):
            records.append(Measurement(n + 1, k, pose, float(g[k, n])))
            labels.append(int(los[k, n]))
    return records, np.array(labels, dtype=np.int8)


def group_by_user(measurements: Iterable[Measurement]) -> dict[int, list[Measurement]]:
    """Group records by user id, preserving first-seen user order."""
    groups: dict[int, list[Measurement]] = {}
    for m in measurements:
        groups.setdefault(m.k, []).append(m)
    return groups


def measurement_arrays(measurements: Sequence[Measurement]):
    """(positions (N, 3), headings (N,), rss (N,)) for a record list."""
    pos, psi = pose_arrays([m.pose for m in measurements])
    g = np.array([m.g for m in measurements], dtype=float)
    return pos, psi, g


# -- line-delimited JSON logs ---------------------------------------------

def write_measurements(path: str | Path, measurements: Iterable[Measurement]) -> None:
    with open(path, "w") as fh:
        for m in measurements:
            fh.write(json.dumps({"n": m.n, "k": m.k, "pos": list(m.pose.position),
                                 "psi": m.pose.heading, "g": m.g}) + "\n")


def read_measurements(path: str | Path) -> list[Measurement]:
    out = []
    with open(path) as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            out.append(Measurement(int(rec["n"]), int(rec["k"]),
                                   UavPose(tuple(rec["pos"]), float(rec["psi"])), float(rec["g"])))
    return out


def write_truth(path: str | Path, measurements: Sequence[Measurement], labels, users) -> None:
    users = np.asarray(users, dtype=float).reshape(-1, 2)
    with open(path, "w") as fh:
        for m, w in zip(measurements, labels):
            fh.write(json.dumps({"n": m.n, "k": m.k, "los": int(w),
                                 "user": users[m.k].tolist()}) + "\n")


def read_truth(path: str | Path) -> tuple[np.ndarray, dict[int, np.ndarray]]:
    """Labels in file order and the known user positions keyed by user id."""
    labels, users = [], {}
    with open(path) as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            labels.append(int(rec["los"]))
            users.setdefault(int(rec["k"]), np.array(rec["user"], dtype=float))
    return np.array(labels, dtype=np.int8), users
