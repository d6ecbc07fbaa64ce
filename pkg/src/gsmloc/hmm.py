"""Grid-state hidden Markov model for serving-cell RSSI tracking.

States are grid cells; observations are (tower, RSSI-bin) symbols. The
model is assembled directly from survey data: transitions are uniform over
each cell's grid neighbors, emissions are additively-smoothed per-cell
observation histograms, and the initial distribution is the chain's
steady state. Decoding a window of observations with Viterbi and reporting
the final state's cell center yields a location estimate.
"""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Iterator, Sequence

import numpy as np
from scipy import sparse

from .geo import CellIndex, GeoPoint, GridSpec, cell_center
from .ingest import (
    FileVersionError,
    FingerprintDB,
    Observation,
    ScanRecord,
    _grid_from_dict,
    _grid_to_dict,
    observation_of,
)

MODEL_FORMAT = "gsmloc-hmm"
MODEL_VERSION = 1

_OFFSETS_4 = ((0, -1), (-1, 0), (1, 0), (0, 1))
_OFFSETS_8 = ((-1, -1), (0, -1), (1, -1), (-1, 0), (1, 0), (-1, 1), (0, 1), (1, 1))


class ConvergenceError(RuntimeError):
    """Stationary-distribution iteration failed; carries the last iterate."""

    def __init__(self, message: str, last_iterate: np.ndarray, residual: float):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.residual = residual


@dataclass(frozen=True)
class StateSpace:
    """Grid cells as HMM states, flat id = row * n_cols + col."""

    spec: GridSpec
    connectivity: int = 4
    self_loop: bool = True

    def __post_init__(self):
        if self.connectivity not in (4, 8):
            raise ValueError("connectivity must be 4 or 8")

    @property
    def n_states(self) -> int:
        return self.spec.n_cells

    def state_id(self, cell: CellIndex) -> int:
        return cell.row * self.spec.n_cols + cell.col

    def cell(self, state: int) -> CellIndex:
        return CellIndex(state % self.spec.n_cols, state // self.spec.n_cols)

    def neighbors(self, state: int) -> list[int]:
        """Adjacent states (excluding self), ascending flat id."""
        c = self.cell(state)
        offsets = _OFFSETS_4 if self.connectivity == 4 else _OFFSETS_8
        out = []
        for dc, dr in offsets:
            col, row = c.col + dc, c.row + dr
            if 0 <= col < self.spec.n_cols and 0 <= row < self.spec.n_rows:
                out.append(row * self.spec.n_cols + col)
        return sorted(out)

    def cell_centers(self) -> np.ndarray:
        """(N, 2) array of [lat, lon] cell centers, indexed by flat state id."""
        centers = np.empty((self.n_states, 2))
        for s in range(self.n_states):
            p = cell_center(self.cell(s), self.spec)
            centers[s, 0] = p.lat
            centers[s, 1] = p.lon
        return centers


@dataclass(eq=False)
class TransitionModel:
    """Row-stochastic sparse transition matrix.

    Every stored entry is a positive probability; absent entries are
    structural zeros (moves the motion model forbids).
    """

    matrix: sparse.csr_matrix

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    @cached_property
    def edges(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(src, dst, log probability) arrays over the nonzero entries."""
        coo = self.matrix.tocoo()
        return coo.row.astype(np.int64), coo.col.astype(np.int64), np.log(coo.data)

    def to_dense(self) -> np.ndarray:
        return self.matrix.toarray()

    @classmethod
    def from_dense(cls, a: np.ndarray) -> "TransitionModel":
        a = np.asarray(a, dtype=float)
        _check_row_stochastic(a.sum(axis=1))
        return cls(sparse.csr_matrix(a))


def _check_row_stochastic(row_sums: np.ndarray) -> None:
    if not np.allclose(row_sums, 1.0, rtol=0.0, atol=1e-12):
        worst = float(np.abs(row_sums - 1.0).max())
        raise ValueError(f"transition rows must sum to 1 (worst deviation {worst:g})")


def build_transitions(states: StateSpace) -> TransitionModel:
    """Uniform transition over each cell's neighbors (plus self if enabled).

    An isolated single-cell grid keeps all its mass on itself.
    """
    rows, cols, data = [], [], []
    for i in range(states.n_states):
        targets = states.neighbors(i)
        if states.self_loop or not targets:
            targets = sorted(targets + [i])
        p = 1.0 / len(targets)
        for j in targets:
            rows.append(i)
            cols.append(j)
            data.append(p)
    n = states.n_states
    m = sparse.csr_matrix((data, (rows, cols)), shape=(n, n))
    _check_row_stochastic(np.asarray(m.sum(axis=1)).ravel())
    return TransitionModel(m)


@dataclass(eq=False)
class EmissionModel:
    """Per-state observation distributions with additive smoothing.

    The symbol set is the global survey vocabulary plus one reserved
    "unknown" symbol (index ``len(vocab)``) that absorbs any (tower, bin)
    pair never seen in training. With smoothing ``alpha > 0`` every symbol
    has positive probability in every state.
    """

    vocab: tuple[Observation, ...]
    alpha: float
    counts: np.ndarray  # (n_states, len(vocab) + 1); the unknown column is all zeros

    def __post_init__(self):
        self._index = {obs: k for k, obs in enumerate(self.vocab)}

    @property
    def n_symbols(self) -> int:
        return len(self.vocab) + 1

    @property
    def unknown_symbol(self) -> int:
        return len(self.vocab)

    def symbol_of(self, obs: Observation) -> int:
        return self._index.get(obs, self.unknown_symbol)

    @cached_property
    def probs(self) -> np.ndarray:
        n_j = self.counts.sum(axis=1, keepdims=True)
        denom = n_j + self.alpha * self.n_symbols
        with np.errstate(invalid="ignore"):
            p = (self.counts + self.alpha) / denom
        # 0/0 when alpha == 0 and the state has no samples: fall back to uniform
        empty = (denom == 0.0).ravel()
        if empty.any():
            p[empty] = 1.0 / self.n_symbols
        return p

    @cached_property
    def log_probs(self) -> np.ndarray:
        # Zero entries (alpha == 0 only) are floored at the smallest smoothed
        # probability so the log-domain lattice never collapses to -inf.
        p = self.probs
        floor = p[p > 0].min()
        return np.log(np.maximum(p, floor))


def build_emissions(db: FingerprintDB, alpha: float = 0.5) -> EmissionModel:
    """Estimate per-cell observation distributions from the fingerprint histograms."""
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    if not db.vocab:
        raise ValueError("empty observation vocabulary")
    vocab = tuple(sorted(db.vocab))
    index = {obs: k for k, obs in enumerate(vocab)}
    n_cols = db.spec.n_cols
    counts = np.zeros((db.spec.n_cells, len(vocab) + 1))
    for cell, cell_counts in db.per_cell_counts.items():
        s = cell.row * n_cols + cell.col
        for obs, c in cell_counts.items():
            counts[s, index[obs]] = c
    return EmissionModel(vocab, alpha, counts)


def steady_state(
    A: TransitionModel, tol: float = 1e-12, max_iter: int = 1_000_000
) -> np.ndarray:
    """Stationary distribution pi with pi @ A == pi, from damped power iteration.

    Iterates pi <- (pi + pi A) / 2 starting from uniform. The damping keeps
    the iteration convergent on periodic chains (a grid walk without
    self-loops is bipartite) while leaving the fixed point unchanged.
    """
    n = A.n
    at = A.matrix.transpose().tocsr()
    pi = np.full(n, 1.0 / n)
    for _ in range(max_iter):
        nxt = 0.5 * (pi + at.dot(pi))
        nxt /= nxt.sum()
        diff = float(np.abs(nxt - pi).sum())
        pi = nxt
        if diff < tol:
            break
    residual = float(np.abs(at.dot(pi) - pi).sum())
    if residual >= 1e-8:
        raise ConvergenceError(
            f"stationary distribution did not converge: L1 residual {residual:g}",
            last_iterate=pi,
            residual=residual,
        )
    return pi


@dataclass(eq=False)
class HmmModel:
    states: StateSpace
    A: TransitionModel
    B: EmissionModel
    pi: np.ndarray
    bin_width: int


def build_hmm(
    db: FingerprintDB,
    connectivity: int = 4,
    self_loop: bool = True,
    alpha: float = 0.5,
) -> HmmModel:
    """Assemble the full model from a fingerprint database."""
    states = StateSpace(db.spec, connectivity, self_loop)
    A = build_transitions(states)
    B = build_emissions(db, alpha)
    pi = steady_state(A)
    return HmmModel(states, A, B, pi, db.bin_width)


def viterbi_core(
    log_pi: np.ndarray,
    edges: tuple[np.ndarray, np.ndarray, np.ndarray],
    log_scores: np.ndarray,
) -> tuple[list[int], float]:
    """Most probable state sequence for per-step emission log scores.

    ``log_scores`` has shape (T, N). Transitions are the sparse edge arrays
    of a TransitionModel. Every argmax (per-step predecessor and final
    state) breaks ties toward the lowest state id, which makes decoding
    deterministic.
    """
    src, dst, logp = edges
    T, n = log_scores.shape
    delta = log_pi + log_scores[0]
    backptr = np.empty((T, n), dtype=np.int64)
    for t in range(1, T):
        cand = delta[src] + logp
        best_score = np.full(n, -np.inf)
        np.maximum.at(best_score, dst, cand)
        best_src = np.full(n, n, dtype=np.int64)
        winners = cand == best_score[dst]
        np.minimum.at(best_src, dst[winners], src[winners])
        backptr[t] = best_src
        delta = best_score + log_scores[t]
    last = int(np.argmax(delta))  # first maximum = lowest state id
    log_prob = float(delta[last])
    path = [last]
    for t in range(T - 1, 0, -1):
        prev = int(backptr[t, path[-1]])
        if prev >= n:
            raise ValueError(f"state {path[-1]} has no predecessor in the transition support")
        path.append(prev)
    path.reverse()
    return path, log_prob


def viterbi(model: HmmModel, observations: Sequence[Observation]) -> tuple[list[CellIndex], float]:
    """Decode an observation window; returns the cell path and its log probability.

    Symbols never seen in training map to the reserved unknown symbol.
    """
    if not observations:
        raise ValueError("cannot decode an empty observation sequence")
    symbols = [model.B.symbol_of(o) for o in observations]
    log_scores = model.B.log_probs[:, symbols].T
    with np.errstate(divide="ignore"):
        log_pi = np.log(model.pi)
    ids, log_prob = viterbi_core(log_pi, model.A.edges, log_scores)
    return [model.states.cell(s) for s in ids], log_prob


def track(
    model: HmmModel, records: Iterable[ScanRecord], window: int
) -> Iterator[tuple[float, GeoPoint]]:
    """Stream location estimates from a scan trace.

    Keeps a sliding window of the last ``window`` serving observations and,
    once the window is full, re-decodes it after every new sample, emitting
    the final decoded state's cell center. The first ``window - 1`` samples
    produce nothing (warm-up).
    """
    if window < 1:
        raise ValueError("window must be >= 1")
    buf: deque[Observation] = deque(maxlen=window)
    for r in records:
        if not r.serving:
            continue
        buf.append(observation_of(r, model.bin_width))
        if len(buf) == window:
            path, _ = viterbi(model, list(buf))
            yield r.timestamp, cell_center(path[-1], model.states.spec)


def save_model(model: HmmModel, path) -> None:
    """Persist the model as versioned JSON.

    Transitions and emission probabilities are stored by their generating
    parameters (connectivity/self-loop flags, vocabulary, raw counts, alpha),
    which rebuild bit-identically on load; pi is stored explicitly.
    """
    counts = []
    for s in range(model.states.n_states):
        row = model.B.counts[s]
        nz = np.nonzero(row)[0]
        if nz.size:
            counts.append([s, [[int(k), int(row[k])] for k in nz]])
    doc = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "grid": _grid_to_dict(model.states.spec),
        "connectivity": model.states.connectivity,
        "self_loop": model.states.self_loop,
        "alpha": model.B.alpha,
        "bin_width": model.bin_width,
        "vocab": [[o.tower_id, o.rssi_bin] for o in model.B.vocab],
        "counts": counts,
        "pi": model.pi.tolist(),
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=1)
        f.write("\n")


def load_model(path) -> HmmModel:
    with open(path, "r", encoding="utf-8") as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as exc:
            raise FileVersionError(f"unreadable model file {path}: {exc}") from exc
    if doc.get("format") != MODEL_FORMAT or doc.get("version") != MODEL_VERSION:
        raise FileVersionError(
            f"expected {MODEL_FORMAT} v{MODEL_VERSION}, "
            f"got {doc.get('format')!r} v{doc.get('version')!r}"
        )
    spec = _grid_from_dict(doc["grid"])
    states = StateSpace(spec, doc["connectivity"], doc["self_loop"])
    vocab = tuple(Observation(tower, rssi_bin) for tower, rssi_bin in doc["vocab"])
    counts = np.zeros((states.n_states, len(vocab) + 1))
    for s, row in doc["counts"]:
        for k, c in row:
            counts[s, k] = c
    B = EmissionModel(vocab, doc["alpha"], counts)
    A = build_transitions(states)
    pi = np.asarray(doc["pi"], dtype=float)
    return HmmModel(states, A, B, pi, doc["bin_width"])
