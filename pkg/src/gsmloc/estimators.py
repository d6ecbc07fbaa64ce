"""Scikit-learn style wrappers around the localizers.

Each estimator is fit on a list of training ScanRecords and predicts an
(n, 2) array of [lat, lon] rows for the serving records of a test trace,
one row per serving sample. Rows that cannot be estimated are NaN: the
warm-up prefix of windowed methods, and samples whose tower is unknown to
the database-backed baselines. This keeps predictions index-aligned with
the input so callers can join estimates back to ground truth.

Estimators follow the usual conventions (params stored verbatim in
``__init__``, fitted state in trailing-underscore attributes, ``get_params``
/ ``set_params`` / ``clone`` supported), so they compose with model
selection tooling.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import baselines, hmm
from .geo import GeoPoint, GridSpec
from .ingest import Observation, build_fingerprint, quantize, serving_only


def _as_serving(X) -> list:
    records = serving_only(X)
    if not records:
        raise ValueError("no serving records in input")
    return records


class _ScanEstimator(BaseEstimator):
    """Shared predict plumbing; subclasses fill one row per serving record."""

    #: rows at the start of each trace that produce no estimate
    warmup = 0

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self)
        records = _as_serving(X)
        out = np.full((len(records), 2), np.nan)
        self._fill_estimates(records, out)
        return out

    def _fill_estimates(self, records, out):  # pragma: no cover - abstract
        raise NotImplementedError


class HmmLocalizer(_ScanEstimator):
    """Grid HMM tracker: Viterbi over a sliding window of serving observations.

    Parameters mirror the model construction knobs: grid cell length,
    decoding window length, neighbor connectivity (4 or 8), whether a user
    may stay in place between samples, emission smoothing, and RSSI bin
    width. ``grid`` may pin an explicit GridSpec; otherwise the grid is
    fitted to the training positions.
    """

    def __init__(
        self,
        cell_len_m: float = 400.0,
        window: int = 10,
        connectivity: int = 4,
        self_loop: bool = True,
        alpha: float = 0.5,
        bin_width: int = 2,
        grid: GridSpec | None = None,
    ):
        self.cell_len_m = cell_len_m
        self.window = window
        self.connectivity = connectivity
        self.self_loop = self_loop
        self.alpha = alpha
        self.bin_width = bin_width
        self.grid = grid

    @property
    def warmup(self) -> int:
        return self.window - 1

    def fit(self, X, y=None):
        if self.window < 1:
            raise ValueError("window must be >= 1")
        records = _as_serving(X)
        spec = self.grid
        if spec is None:
            spec = GridSpec.from_points([r.pos for r in records], self.cell_len_m)
        elif spec.cell_len_m != self.cell_len_m:
            spec = GridSpec(spec.origin, spec.width_m, spec.height_m, self.cell_len_m)
        self.db_ = build_fingerprint(records, spec, self.bin_width)
        self.model_ = hmm.build_hmm(self.db_, self.connectivity, self.self_loop, self.alpha)
        self.n_states_ = self.model_.states.n_states
        return self

    @classmethod
    def from_model(cls, model: hmm.HmmModel, window: int = 10) -> "HmmLocalizer":
        """Wrap an already-built (e.g. loaded) model without refitting."""
        est = cls(
            cell_len_m=model.states.spec.cell_len_m,
            window=window,
            connectivity=model.states.connectivity,
            self_loop=model.states.self_loop,
            alpha=model.B.alpha,
            bin_width=model.bin_width,
            grid=model.states.spec,
        )
        est.model_ = model
        est.n_states_ = model.states.n_states
        return est

    def _fill_estimates(self, records, out):
        for i, (_ts, p) in enumerate(hmm.track(self.model_, records, self.window)):
            out[self.window - 1 + i] = p


class CellIdLocalizer(_ScanEstimator):
    """Reports the serving tower's location. ``towers`` may supply surveyed
    positions; otherwise tower locations are estimated from the training scans."""

    def __init__(self, towers: baselines.TowerDB | None = None):
        self.towers = towers

    def fit(self, X, y=None):
        if self.towers is not None:
            self.towers_ = self.towers
        else:
            self.towers_ = baselines.estimate_tower_locations(_as_serving(X))
        return self

    def _fill_estimates(self, records, out):
        for i, r in enumerate(records):
            entry = self.towers_.entries.get(r.tower_id)
            if entry is not None:
                out[i] = entry.pos


class KnnLocalizer(_ScanEstimator):
    """Nearest fingerprints of the serving tower in |delta RSSI|, positions averaged.

    Falls back to the tower database for towers with no fingerprints.
    """

    def __init__(self, k: int = 4, towers: baselines.TowerDB | None = None):
        self.k = k
        self.towers = towers

    def fit(self, X, y=None):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        records = _as_serving(X)
        self.points_ = baselines.fingerprint_points(records)
        index: dict[str, tuple[np.ndarray, np.ndarray]] = {}
        grouped: dict[str, list] = {}
        for p in self.points_:
            grouped.setdefault(p.tower_id, []).append(p)
        for tower_id, pts in grouped.items():
            index[tower_id] = (
                np.array([[p.pos.lat, p.pos.lon] for p in pts]),
                np.array([p.rssi_dbm for p in pts], dtype=float),
            )
        self._index_ = index
        self.towers_ = (
            self.towers if self.towers is not None else baselines.estimate_tower_locations(records)
        )
        return self

    def _fill_estimates(self, records, out):
        for i, r in enumerate(records):
            hit = self._index_.get(r.tower_id)
            if hit is None:
                entry = self.towers_.entries.get(r.tower_id)
                if entry is not None:
                    out[i] = entry.pos
                continue
            positions, rssi = hit
            # stable sort keeps fingerprint insertion order on |delta RSSI| ties
            nearest = np.argsort(np.abs(rssi - r.rssi_dbm), kind="stable")[: self.k]
            out[i] = positions[nearest].mean(axis=0)


class BayesLocalizer(_ScanEstimator):
    """Single-sample probabilistic fingerprinting: posterior-weighted centroid
    of grid-cell centers under steady-state prior times emission likelihood."""

    def __init__(
        self,
        cell_len_m: float = 400.0,
        alpha: float = 0.5,
        bin_width: int = 2,
        connectivity: int = 4,
        self_loop: bool = True,
        grid: GridSpec | None = None,
    ):
        self.cell_len_m = cell_len_m
        self.alpha = alpha
        self.bin_width = bin_width
        self.connectivity = connectivity
        self.self_loop = self_loop
        self.grid = grid

    def fit(self, X, y=None):
        records = _as_serving(X)
        spec = self.grid
        if spec is None:
            spec = GridSpec.from_points([r.pos for r in records], self.cell_len_m)
        elif spec.cell_len_m != self.cell_len_m:
            spec = GridSpec(spec.origin, spec.width_m, spec.height_m, self.cell_len_m)
        db = build_fingerprint(records, spec, self.bin_width)
        self.model_ = hmm.build_hmm(db, self.connectivity, self.self_loop, self.alpha)
        self._centers_ = self.model_.states.cell_centers()
        return self

    @classmethod
    def from_model(cls, model: hmm.HmmModel) -> "BayesLocalizer":
        est = cls(
            cell_len_m=model.states.spec.cell_len_m,
            alpha=model.B.alpha,
            bin_width=model.bin_width,
            connectivity=model.states.connectivity,
            self_loop=model.states.self_loop,
            grid=model.states.spec,
        )
        est.model_ = model
        est._centers_ = model.states.cell_centers()
        return est

    def locate(self, tower_id: str, rssi_dbm: int) -> GeoPoint:
        check_is_fitted(self)
        model = self.model_
        obs = Observation(tower_id, quantize(rssi_dbm, model.bin_width))
        weights = model.pi * model.B.probs[:, model.B.symbol_of(obs)]
        total = weights.sum()
        if total <= 0.0:
            weights, total = model.pi, model.pi.sum()
        lat, lon = (weights @ self._centers_) / total
        return GeoPoint(float(lat), float(lon))

    def _fill_estimates(self, records, out):
        for i, r in enumerate(records):
            p = self.locate(r.tower_id, r.rssi_dbm)
            out[i] = (p.lat, p.lon)


def make_estimator(
    method: str,
    towers: baselines.TowerDB | None = None,
    **params,
) -> _ScanEstimator:
    """Estimator factory keyed by CLI method name.

    Extra keyword parameters a method does not use are ignored, so one flat
    config dict can drive any method.
    """

    def pick(cls):
        allowed = cls().get_params().keys()
        return cls(**{k: v for k, v in params.items() if k in allowed})

    if method == "hmm":
        return pick(HmmLocalizer)
    if method == "cellid":
        return CellIdLocalizer(towers=towers)
    if method == "knn":
        return KnnLocalizer(k=params.get("k", 4), towers=towers)
    if method == "bayes":
        return pick(BayesLocalizer)
    raise ValueError(f"unknown method {method!r}")
