"""Reference localizers: cell-ID, deterministic KNN, and single-sample Bayes.

All three consume the same serving-tower-only measurements as the HMM
tracker; under that restriction the KNN "RSSI space" degenerates to the
scalar distance |delta RSSI| against fingerprints of the same tower.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .geo import GeoPoint, centroid, validate_point
from .hmm import HmmModel
from .ingest import Observation, ScanRecord


class UnlocalizableError(Exception):
    """No estimate is possible for this sample (e.g. tower absent from the database)."""


@dataclass(frozen=True)
class TowerEntry:
    pos: GeoPoint
    provenance: str  # "given" | "estimated"


@dataclass
class TowerDB:
    """Tower id -> location, either surveyed ("given") or estimated from scans."""

    entries: dict[str, TowerEntry]

    def __contains__(self, tower_id: str) -> bool:
        return tower_id in self.entries

    def location(self, tower_id: str) -> GeoPoint:
        entry = self.entries.get(tower_id)
        if entry is None:
            raise UnlocalizableError(f"tower {tower_id!r} not in tower database")
        return entry.pos


def load_tower_csv(path) -> TowerDB:
    """Read `tower_id,lat,lon` rows; these count as surveyed locations."""
    entries: dict[str, TowerEntry] = {}
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != ["tower_id", "lat", "lon"]:
            raise ValueError(f"bad tower CSV header: {header}")
        for row in reader:
            if not row:
                continue
            pos = GeoPoint(float(row[1]), float(row[2]))
            validate_point(pos)
            entries[row[0]] = TowerEntry(pos, "given")
    return TowerDB(entries)


def save_tower_csv(db: TowerDB, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("tower_id,lat,lon\n")
        for tower_id in sorted(db.entries):
            p = db.entries[tower_id].pos
            f.write(f"{tower_id},{p.lat!r},{p.lon!r}\n")


def estimate_tower_locations(records: Iterable[ScanRecord]) -> TowerDB:
    """Guess tower positions from survey data when no tower database exists.

    A tower sits roughly where it is heard loudest, so each tower's location
    is the centroid of its strongest decile of readings (at least 5; all of
    them if fewer).
    """
    by_tower: dict[str, list[ScanRecord]] = {}
    for r in records:
        by_tower.setdefault(r.tower_id, []).append(r)
    entries: dict[str, TowerEntry] = {}
    for tower_id, rows in by_tower.items():
        rows = sorted(rows, key=lambda r: -r.rssi_dbm)
        k = min(len(rows), max(-(-len(rows) // 10), 5))
        entries[tower_id] = TowerEntry(centroid([r.pos for r in rows[:k]]), "estimated")
    return TowerDB(entries)


def cellid_locate(db: TowerDB, obs: Observation) -> GeoPoint:
    """The serving tower's own location; RSSI is ignored entirely."""
    return db.location(obs.tower_id)


@dataclass(frozen=True)
class FingerprintPoint:
    """One survey sample kept at full RSSI resolution for KNN matching."""

    pos: GeoPoint
    tower_id: str
    rssi_dbm: int


def fingerprint_points(records: Iterable[ScanRecord]) -> list[FingerprintPoint]:
    return [FingerprintPoint(r.pos, r.tower_id, r.rssi_dbm) for r in records]


def knn_locate(
    points: list[FingerprintPoint],
    tower_id: str,
    rssi_dbm: int,
    k: int,
    tower_db: TowerDB | None = None,
) -> GeoPoint:
    """Average of the k fingerprints of the same tower nearest in RSSI.

    Ties in |delta RSSI| keep fingerprint insertion order (stable sort);
    fewer than k candidates means all of them are used. With no candidate
    at all, falls back to the tower database, else the sample is
    unlocalizable.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    candidates = [p for p in points if p.tower_id == tower_id]
    if not candidates:
        if tower_db is not None and tower_id in tower_db:
            return tower_db.location(tower_id)
        raise UnlocalizableError(f"no fingerprints or tower entry for {tower_id!r}")
    candidates.sort(key=lambda p: abs(p.rssi_dbm - rssi_dbm))
    return centroid([p.pos for p in candidates[:k]])


def bayes_locate(model: HmmModel, obs: Observation) -> GeoPoint:
    """Posterior-weighted centroid of cell centers for a single observation.

    The posterior over states is proportional to the steady-state prior
    times the state's emission probability for the observed symbol. With
    smoothing on, the posterior is positive everywhere; in the unsmoothed
    corner case where it vanishes entirely, the prior alone is used.
    """
    sym = model.B.symbol_of(obs)
    weights = model.pi * model.B.probs[:, sym]
    total = weights.sum()
    if total <= 0.0:
        weights = model.pi
        total = weights.sum()
    centers = model.states.cell_centers()
    lat, lon = (weights @ centers) / total
    return GeoPoint(float(lat), float(lon))
