"""Synthetic GSM world: log-distance path loss plus a moving user.

The simulator stands in for a physical war-driving survey. It generates
reproducible scan traces in the exact CSV schema the ingest module reads,
with ground-truth positions and true tower locations, so every experiment
can be rerun from a seed.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable

import numpy as np

from .geo import GeoPoint, GridSpec, PlanarPoint, haversine, project, unproject
from .ingest import RSSI_MAX, RSSI_MIN, FileVersionError, ScanRecord, _grid_from_dict, _grid_to_dict

WORLD_FORMAT = "gsmloc-world"
WORLD_VERSION = 1

BASE_TIMESTAMP = 1_273_580_000  # arbitrary epoch anchor for generated traces
MAX_NEIGHBORS = 6  # GSM reports the serving tower plus up to six neighbors
DEFAULT_V_MAX = 15.0  # m/s


@dataclass(frozen=True)
class Tower:
    tower_id: str
    pos: GeoPoint
    tx_ref_dbm: float


@dataclass(frozen=True)
class PathLoss:
    """Log-distance model: rssi = p0 - 10 n log10(d / d0) + N(0, sigma^2).

    The shadowing term keeps an N(0, sigma^2) marginal but is split into a
    static spatially-correlated component (fixed obstacles, frozen per world
    seed, decorrelating over ``corr_len_m``) and an independent per-sample
    measurement jitter carrying ``jitter_frac`` of the standard deviation.
    Purely i.i.d. shadowing would leave no location signature in the signal,
    and fingerprinting of any kind would have nothing to learn.
    """

    p0_dbm: float = -55.0
    d0_m: float = 100.0
    exponent: float = 3.0
    sigma_db: float = 6.0
    corr_len_m: float = 150.0
    jitter_frac: float = 1.0 / 3.0

    def __post_init__(self):
        if self.d0_m <= 0 or self.exponent <= 0 or self.sigma_db < 0:
            raise ValueError("need d0 > 0, exponent > 0, sigma >= 0")
        if not (0.0 <= self.jitter_frac <= 1.0) or self.corr_len_m <= 0:
            raise ValueError("need 0 <= jitter_frac <= 1 and corr_len_m > 0")

    @property
    def static_std_db(self) -> float:
        return self.sigma_db * math.sqrt(1.0 - self.jitter_frac**2)

    @property
    def jitter_std_db(self) -> float:
        return self.sigma_db * self.jitter_frac


@dataclass(frozen=True)
class SimWorld:
    spec: GridSpec
    towers: tuple[Tower, ...]
    pathloss: PathLoss = field(default_factory=PathLoss)
    seed: int = 0
    # Neighbor towers weaker than this are not reported. The default keeps the
    # mean distinct towers/scan in the 5-6 range typical of real GSM surveys.
    min_rssi_dbm: float = -95.0

    def __post_init__(self):
        if not self.towers:
            raise ValueError("world needs at least one tower")

    def tower_index(self, tower_id: str) -> int:
        return _tower_indices(self)[tower_id]


@lru_cache(maxsize=512)
def _tower_indices(world: "SimWorld") -> dict[str, int]:
    return {t.tower_id: i for i, t in enumerate(world.towers)}


def default_world(
    seed: int = 0,
    width_m: float = 2000.0,
    height_m: float = 1000.0,
    n_towers: int = 12,
    cell_len_m: float = 400.0,
    origin: GeoPoint = GeoPoint(30.06, 31.00),
    pathloss: PathLoss | None = None,
    min_rssi_dbm: float = -95.0,
    tower_spread: float = 3.0,
) -> SimWorld:
    """Desk-scale suburban world: a 2 km x 1 km user box under a jittered tower lattice.

    The lattice covers ``tower_spread`` times the box footprint, centered on
    it, so most towers sit outside the surveyed area the way macro cells
    overlook a neighborhood; typical user-to-serving-tower distances are then
    several hundred meters rather than tens.
    """
    spec = GridSpec(origin, width_m, height_m, cell_len_m)
    pl = pathloss or PathLoss()
    rng = np.random.default_rng(seed)
    span_x, span_y = tower_spread * width_m, tower_spread * height_m
    cols = max(1, math.ceil(math.sqrt(n_towers * span_x / span_y)))
    rows = max(1, math.ceil(n_towers / cols))
    pitch_x, pitch_y = span_x / cols, span_y / rows
    off_x, off_y = (span_x - width_m) / 2.0, (span_y - height_m) / 2.0
    towers = []
    for k in range(n_towers):
        i, j = k % cols, k // cols
        x = (i + 0.5) * pitch_x + rng.uniform(-0.3, 0.3) * pitch_x - off_x
        y = (j + 0.5) * pitch_y + rng.uniform(-0.3, 0.3) * pitch_y - off_y
        towers.append(Tower(f"tw{k:02d}", unproject(PlanarPoint(x, y), spec), pl.p0_dbm))
    return SimWorld(spec, tuple(towers), pl, seed, min_rssi_dbm)


@lru_cache(maxsize=512)
def _shadow_lattice(world: SimWorld, tower_index: int) -> tuple[np.ndarray, float, float]:
    """Frozen lattice of shadowing values for one tower, pitch = corr_len_m.

    The lattice covers the user box plus one pitch of margin; lookups clamp
    to the edge outside that. Seeded from (world seed, tower index) so a
    world always carries the same radio environment.
    """
    pl = world.pathloss
    pitch = pl.corr_len_m
    nx = int(world.spec.width_m // pitch) + 3
    ny = int(world.spec.height_m // pitch) + 3
    rng = np.random.default_rng([world.seed, 0x5AD0, tower_index])
    return rng.normal(0.0, pl.static_std_db, size=(ny, nx)), pitch, pitch


def _shadow_value(world: SimWorld, tower_index: int, p: GeoPoint) -> float:
    """Bilinear lookup in the tower's shadow lattice, variance-normalized.

    Raw bilinear interpolation of i.i.d. lattice values shrinks the variance
    between nodes; dividing by the root of the squared-weight sum keeps the
    marginal std equal to the lattice std everywhere.
    """
    lattice, pitch_x, pitch_y = _shadow_lattice(world, tower_index)
    ny, nx = lattice.shape
    pt = project(p, world.spec)
    u = min(max(pt.x / pitch_x + 1.0, 0.0), nx - 1.000001)
    v = min(max(pt.y / pitch_y + 1.0, 0.0), ny - 1.000001)
    i, j = int(v), int(u)
    fu, fv = u - j, v - i
    w00 = (1 - fu) * (1 - fv)
    w10 = fu * (1 - fv)
    w01 = (1 - fu) * fv
    w11 = fu * fv
    val = (
        w00 * lattice[i, j]
        + w10 * lattice[i, j + 1]
        + w01 * lattice[i + 1, j]
        + w11 * lattice[i + 1, j + 1]
    )
    norm = math.sqrt(w00**2 + w10**2 + w01**2 + w11**2)
    return val / norm


def rssi_at(world: SimWorld, tower: Tower, p: GeoPoint, rng: np.random.Generator) -> float:
    """Sampled RSSI in dBm at point p, clamped to the reportable range.

    Distances inside the reference distance d0 saturate at the reference
    power. Deterministic for a given rng state; draws nothing when sigma=0.
    """
    pl = world.pathloss
    d = max(haversine(tower.pos, p), pl.d0_m)
    r = tower.tx_ref_dbm - 10.0 * pl.exponent * math.log10(d / pl.d0_m)
    if pl.sigma_db > 0:
        idx = world.tower_index(tower.tower_id)
        r += _shadow_value(world, idx, p)
        r += rng.normal(0.0, pl.jitter_std_db)
    return min(max(r, float(RSSI_MIN)), float(RSSI_MAX))


Trajectory = list[tuple[float, GeoPoint]]


def gen_trajectory(
    world: SimWorld,
    duration_s: int,
    model: str = "random-waypoint",
    seed: int = 0,
    v_max: float = DEFAULT_V_MAX,
) -> Trajectory:
    """One position per second for duration_s seconds, inside the world box.

    ``random-waypoint`` and ``grid-walk`` emulate a user moving arbitrarily;
    ``survey`` drives boustrophedon lanes across the whole box the way a
    fingerprint-collection drive does, giving even spatial coverage.
    """
    if duration_s < 1:
        raise ValueError("duration must be >= 1 second")
    if model not in ("random-waypoint", "grid-walk", "survey"):
        raise ValueError(f"unknown trajectory model {model!r}")
    rng = np.random.default_rng(seed)
    w, h = world.spec.width_m, world.spec.height_m
    x, y = rng.uniform(0, w), rng.uniform(0, h)
    points: Trajectory = []

    if model == "survey":
        lane = min(100.0, h / 2.0)
        speed = min(10.0, v_max)
        half = lane / 2.0
        x = rng.uniform(0, w)  # start phase differs per seed
        y = half
        east, lane_i = True, 0
        n_lanes = max(1, int((h - half) // lane) + 1)
        for t in range(duration_s):
            points.append((float(BASE_TIMESTAMP + t), unproject(PlanarPoint(x, y), world.spec)))
            x = x + speed if east else x - speed
            if x > w or x < 0:  # end of lane: clamp, step to the next lane
                x = min(max(x, 0.0), w)
                east = not east
                lane_i = (lane_i + 1) % n_lanes
                y = half + lane_i * lane
        return points

    if model == "random-waypoint":
        wx, wy = rng.uniform(0, w), rng.uniform(0, h)
        speed = rng.uniform(1.0, v_max)
        for t in range(duration_s):
            points.append((float(BASE_TIMESTAMP + t), unproject(PlanarPoint(x, y), world.spec)))
            dx, dy = wx - x, wy - y
            dist = math.hypot(dx, dy)
            while dist < speed:  # reached the waypoint; pick the next leg
                wx, wy = rng.uniform(0, w), rng.uniform(0, h)
                speed = rng.uniform(1.0, v_max)
                dx, dy = wx - x, wy - y
                dist = math.hypot(dx, dy)
            x += dx / dist * speed
            y += dy / dist * speed
    else:  # grid-walk: axis-aligned legs with random turns
        heading = rng.integers(0, 4)
        speed = rng.uniform(1.0, v_max)
        remaining = int(rng.integers(5, 31))
        deltas = ((0.0, 1.0), (1.0, 0.0), (0.0, -1.0), (-1.0, 0.0))
        for t in range(duration_s):
            points.append((float(BASE_TIMESTAMP + t), unproject(PlanarPoint(x, y), world.spec)))
            if remaining <= 0:
                heading = rng.integers(0, 4)
                speed = rng.uniform(1.0, v_max)
                remaining = int(rng.integers(5, 31))
            dx, dy = deltas[heading]
            nx, ny = x + dx * speed, y + dy * speed
            if not (0.0 <= nx <= w and 0.0 <= ny <= h):
                heading = (heading + 2) % 4  # bounce off the wall
                dx, dy = deltas[heading]
                nx, ny = x + dx * speed, y + dy * speed
            x = min(max(nx, 0.0), w)
            y = min(max(ny, 0.0), h)
            remaining -= 1
    return points


def gen_trace(world: SimWorld, trajectory: Trajectory, seed: int = 0) -> list[ScanRecord]:
    """Scan records along a trajectory: one serving row per timestamp plus
    up to six audible neighbors, strongest first."""
    rng = np.random.default_rng(seed)
    records: list[ScanRecord] = []
    for ts, pos in trajectory:
        rssis = np.array([rssi_at(world, tw, pos, rng) for tw in world.towers])
        order = np.argsort(-rssis, kind="stable")
        serving = int(order[0])
        records.append(
            ScanRecord(ts, world.towers[serving].tower_id, int(round(rssis[serving])), pos, True)
        )
        neighbors = [i for i in order[1:] if rssis[i] >= world.min_rssi_dbm][:MAX_NEIGHBORS]
        for i in neighbors:
            records.append(
                ScanRecord(ts, world.towers[i].tower_id, int(round(rssis[i])), pos, False)
            )
    return records


def avg_towers_per_scan(records: Iterable[ScanRecord]) -> float:
    """Mean number of distinct towers reported per timestamp."""
    seen: dict[float, set[str]] = {}
    for r in records:
        seen.setdefault(r.timestamp, set()).add(r.tower_id)
    if not seen:
        raise ValueError("no records")
    return sum(len(s) for s in seen.values()) / len(seen)


def save_world(world: SimWorld, path) -> None:
    doc = {
        "format": WORLD_FORMAT,
        "version": WORLD_VERSION,
        "grid": _grid_to_dict(world.spec),
        "towers": [[t.tower_id, t.pos.lat, t.pos.lon, t.tx_ref_dbm] for t in world.towers],
        "pathloss": {
            "p0_dbm": world.pathloss.p0_dbm,
            "d0_m": world.pathloss.d0_m,
            "exponent": world.pathloss.exponent,
            "sigma_db": world.pathloss.sigma_db,
        },
        "seed": world.seed,
        "min_rssi_dbm": world.min_rssi_dbm,
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=1)
        f.write("\n")


def load_world(path) -> SimWorld:
    with open(path, "r", encoding="utf-8") as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as exc:
            raise FileVersionError(f"unreadable world file {path}: {exc}") from exc
    if doc.get("format") != WORLD_FORMAT or doc.get("version") != WORLD_VERSION:
        raise FileVersionError(
            f"expected {WORLD_FORMAT} v{WORLD_VERSION}, "
            f"got {doc.get('format')!r} v{doc.get('version')!r}"
        )
    pl = doc["pathloss"]
    return SimWorld(
        _grid_from_dict(doc["grid"]),
        tuple(Tower(t, GeoPoint(lat, lon), tx) for t, lat, lon, tx in doc["towers"]),
        PathLoss(pl["p0_dbm"], pl["d0_m"], pl["exponent"], pl["sigma_db"]),
        doc["seed"],
        doc["min_rssi_dbm"],
    )
