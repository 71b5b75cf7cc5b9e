"""City geometry: extruded rectangular buildings and exact line-of-sight queries."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numba
import numpy as np

logger = logging.getLogger(__name__)

# Rayleigh scale giving a pre-clamp mean height of 15 m.
DEFAULT_HEIGHT_SCALE = 15.0 / math.sqrt(math.pi / 2.0)
MIN_HEIGHT = 5.0
MAX_HEIGHT = 40.0


class GeometryError(ValueError):
    """Raised for points outside the map or malformed geometry."""


@dataclass(frozen=True)
class Building:
    footprint_min: tuple[float, float]
    footprint_max: tuple[float, float]
    height: float

    def __post_init__(self):
        (x0, y0), (x1, y1) = self.footprint_min, self.footprint_max
        if not (x0 < x1 and y0 < y1):
            raise GeometryError(f"degenerate footprint {self.footprint_min} .. {self.footprint_max}")
        if not self.height > 0:
            raise GeometryError(f"building height must be positive, got {self.height}")

    def contains_xy(self, x: float, y: float) -> bool:
        return (self.footprint_min[0] < x < self.footprint_max[0]
                and self.footprint_min[1] < y < self.footprint_max[1])


@dataclass(frozen=True)
class CityMap:
    extent_min: tuple[float, float]
    extent_max: tuple[float, float]
    buildings: tuple[Building, ...] = ()
    receiver_height: float = 0.0
    # packed (B, 5) array [xmin, ymin, xmax, ymax, h] used by the kernels
    _boxes: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "extent_min", tuple(float(v) for v in self.extent_min))
        object.__setattr__(self, "extent_max", tuple(float(v) for v in self.extent_max))
        object.__setattr__(self, "buildings", tuple(self.buildings))
        (x0, y0), (x1, y1) = self.extent_min, self.extent_max
        if not (x0 < x1 and y0 < y1):
            raise GeometryError("map extent is degenerate")
        for b in self.buildings:
            if (b.footprint_min[0] < x0 or b.footprint_min[1] < y0
                    or b.footprint_max[0] > x1 or b.footprint_max[1] > y1):
                raise GeometryError(f"building {b} lies outside the map extent")
        boxes = np.array(
            [[*b.footprint_min, *b.footprint_max, b.height] for b in self.buildings],
            dtype=np.float64,
        ).reshape(-1, 5)
        boxes.setflags(write=False)
        object.__setattr__(self, "_boxes", boxes)

    @property
    def boxes(self) -> np.ndarray:
        return self._boxes

    @property
    def size(self) -> tuple[float, float]:
        return (self.extent_max[0] - self.extent_min[0], self.extent_max[1] - self.extent_min[1])

    def contains(self, xy) -> bool:
        x, y = float(xy[0]), float(xy[1])
        return (self.extent_min[0] <= x <= self.extent_max[0]
                and self.extent_min[1] <= y <= self.extent_max[1])

    def in_extent(self, xy: np.ndarray) -> np.ndarray:
        """Vectorized extent test over the last axis of ``xy``."""
        xy = np.asarray(xy, dtype=float)
        return ((xy[..., 0] >= self.extent_min[0]) & (xy[..., 0] <= self.extent_max[0])
                & (xy[..., 1] >= self.extent_min[1]) & (xy[..., 1] <= self.extent_max[1]))

    def inside_building(self, xy: np.ndarray) -> np.ndarray:
        xy = np.atleast_2d(np.asarray(xy, dtype=float))
        if len(self.buildings) == 0:
            return np.zeros(len(xy), dtype=bool)
        b = self._boxes
        x, y = xy[:, 0:1], xy[:, 1:2]
        hit = (x > b[:, 0]) & (x < b[:, 2]) & (y > b[:, 1]) & (y < b[:, 3])
        return hit.any(axis=1)

    def overlapping_pairs(self) -> list[tuple[int, int]]:
        b = self._boxes
        pairs = []
        for i in range(len(b)):
            for j in range(i + 1, len(b)):
                if (b[i, 0] < b[j, 2] and b[j, 0] < b[i, 2]
                        and b[i, 1] < b[j, 3] and b[j, 1] < b[i, 3]):
                    pairs.append((i, j))
        return pairs

    # -- serialization -------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "extent": [list(self.extent_min), list(self.extent_max)],
            "buildings": [
                {"min": list(b.footprint_min), "max": list(b.footprint_max), "height": b.height}
                for b in self.buildings
            ],
        }

    @classmethod
    def from_dict(cls, data: dict, receiver_height: float = 0.0) -> "CityMap":
        try:
            (ex0, ex1) = data["extent"]
            buildings = [
                Building(
                    (float(b["min"][0]), float(b["min"][1])),
                    (float(b["max"][0]), float(b["max"][1])),
                    float(b["height"]),
                )
                for b in data.get("buildings", [])
            ]
            city = cls((float(ex0[0]), float(ex0[1])), (float(ex1[0]), float(ex1[1])),
                       tuple(buildings), receiver_height)
        except (KeyError, TypeError, IndexError) as exc:
            raise GeometryError(f"malformed map document: {exc!r}") from exc
        overlaps = city.overlapping_pairs()
        if overlaps:
            logger.warning("map has %d overlapping building pairs, e.g. %s", len(overlaps), overlaps[0])
        return city

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path: str | Path, receiver_height: float = 0.0) -> "CityMap":
        return cls.from_dict(json.loads(Path(path).read_text()), receiver_height)


@numba.njit(cache=True)
def _segment_blocked(ux, uy, uz, vx, vy, vz, boxes):
    # Segment p(t) = u + t (v - u), t in [0, 1], u at ground side.  A building
    # blocks iff the open footprint is crossed over a non-empty t-interval and
    # the segment is strictly below the roof at the interval's low end.
    dx = vx - ux
    dy = vy - uy
    dz = vz - uz
    for i in range(boxes.shape[0]):
        h = boxes[i, 4]
        if uz >= h and vz >= h:
            continue
        t0 = 0.0
        t1 = 1.0
        if dx == 0.0:
            if not (boxes[i, 0] < ux < boxes[i, 2]):
                continue
        else:
            a = (boxes[i, 0] - ux) / dx
            b = (boxes[i, 2] - ux) / dx
            if a > b:
                a, b = b, a
            t0 = max(t0, a)
            t1 = min(t1, b)
        if dy == 0.0:
            if not (boxes[i, 1] < uy < boxes[i, 3]):
                continue
        else:
            a = (boxes[i, 1] - uy) / dy
            b = (boxes[i, 3] - uy) / dy
            if a > b:
                a, b = b, a
            t0 = max(t0, a)
            t1 = min(t1, b)
        if t0 >= t1:
            continue
        # z is linear in t, so its infimum over (t0, t1) sits at an endpoint
        z_low = min(uz + t0 * dz, uz + t1 * dz)
        if z_low < h:
            return True
    return False


@numba.njit(cache=True)
def _los_matrix(uav, users, user_z, boxes):
    n_users = users.shape[0]
    n_uav = uav.shape[0]
    out = np.empty((n_users, n_uav), dtype=np.bool_)
    for p in range(n_users):
        for n in range(n_uav):
            out[p, n] = not _segment_blocked(users[p, 0], users[p, 1], user_z,
                                             uav[n, 0], uav[n, 1], uav[n, 2], boxes)
    return out


def _check_extent(city: CityMap, xy: np.ndarray, what: str) -> None:
    ok = city.in_extent(xy)
    if not np.all(ok):
        bad = np.asarray(xy)[~ok][0] if np.ndim(ok) else xy
        raise GeometryError(f"{what} {np.asarray(bad).tolist()} outside map extent")


def los_matrix(city: CityMap, uav_positions, users, check: bool = True) -> np.ndarray:
    """Boolean LoS matrix of shape (n_users, n_uav)."""
    uav = np.ascontiguousarray(np.asarray(uav_positions, dtype=np.float64).reshape(-1, 3))
    xy = np.ascontiguousarray(np.asarray(users, dtype=np.float64).reshape(-1, 2))
    if check:
        _check_extent(city, uav[:, :2], "UAV position")
        _check_extent(city, xy, "user position")
        if np.any(uav[:, 2] <= 0):
            raise GeometryError("UAV altitude must be positive")
    return _los_matrix(uav, xy, float(city.receiver_height), city.boxes)


def is_los(city: CityMap, uav, user) -> bool:
    """Exact LoS test between a UAV position (x, y, z) and a ground point (x, y).

    The link is blocked only when the segment passes strictly below a roof
    while strictly inside a footprint; grazing contact counts as LoS.
    """
    return bool(los_matrix(city, [uav], [user])[0, 0])


def classify(city: CityMap, poses: Sequence, user) -> np.ndarray:
    """Per-pose LoS labels (1 = LoS, 0 = NLoS) for one ground point."""
    if len(poses) == 0:
        return np.zeros(0, dtype=np.int8)
    positions = np.array([getattr(p, "position", p) for p in poses], dtype=float)
    return los_matrix(city, positions, [user])[0].astype(np.int8)


def generate_city(
    extent=((0.0, 0.0), (300.0, 300.0)),
    building_count: int = 36,
    height_scale: float = DEFAULT_HEIGHT_SCALE,
    rng_seed: int = 0,
    street_width: float = 12.0,
    min_side: float = 4.0,
) -> CityMap:
    """Random city on a jittered grid of blocks separated by streets.

    Heights are Rayleigh draws clamped to [5, 40] m.
    """
    (x0, y0), (x1, y1) = extent
    if not (x0 < x1 and y0 < y1):
        raise GeometryError("map extent is degenerate")
    if building_count < 0:
        raise GeometryError("building_count must be non-negative")
    if building_count == 0:
        return CityMap((x0, y0), (x1, y1), ())

    width, depth = x1 - x0, y1 - y0
    nx = max(1, int(math.ceil(math.sqrt(building_count * width / depth))))
    ny = max(1, int(math.ceil(building_count / nx)))
    cw, ch = width / nx, depth / ny
    if cw < street_width + min_side or ch < street_width + min_side:
        raise GeometryError(
            f"{building_count} buildings do not fit in {width}x{depth} m "
            f"with {street_width} m streets"
        )

    rng = np.random.default_rng(rng_seed)
    cells = rng.permutation(nx * ny)[:building_count]
    cells.sort()
    heights = np.clip(rng.rayleigh(height_scale, size=building_count), MIN_HEIGHT, MAX_HEIGHT)
    buildings = []
    for cell, h in zip(cells, heights):
        i, j = divmod(int(cell), ny)
        free_w, free_h = cw - street_width, ch - street_width
        bw = rng.uniform(max(min_side, 0.6 * free_w), free_w)
        bh = rng.uniform(max(min_side, 0.6 * free_h), free_h)
        # jitter within the cell, keeping half a street on each side
        bx = x0 + i * cw + street_width / 2 + rng.uniform(0.0, free_w - bw)
        by = y0 + j * ch + street_width / 2 + rng.uniform(0.0, free_h - bh)
        buildings.append(Building((bx, by), (bx + bw, by + bh), float(h)))
    return CityMap((x0, y0), (x1, y1), tuple(buildings))


def sample_street_points(city: CityMap, count: int, rng: np.random.Generator,
                         margin: float = 0.0) -> np.ndarray:
    """Uniform points inside the extent but outside every building footprint."""
    (x0, y0), (x1, y1) = city.extent_min, city.extent_max
    out = np.empty((0, 2))
    for _ in range(1000):
        need = count - len(out)
        if need <= 0:
            break
        cand = np.column_stack([
            rng.uniform(x0 + margin, x1 - margin, size=2 * need),
            rng.uniform(y0 + margin, y1 - margin, size=2 * need),
        ])
        cand = cand[~city.inside_building(cand)]
        out = np.vstack([out, cand[:need]])
    if len(out) < count:
        raise GeometryError("could not place ground points outside buildings")
    return out
