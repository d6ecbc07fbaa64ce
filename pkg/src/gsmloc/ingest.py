"""Scan-trace parsing and fingerprint database construction.

A scan trace is a CSV of timestamped cell-tower measurements with GPS
ground truth, one row per (tower, time) pair:

    timestamp,tower_id,rssi_dbm,lat,lon,serving
    1273581000,4522:101,-71,30.0712,31.0165,1

Only rows with ``serving=1`` (the tower the handset is camped on) feed the
localizers; neighbor rows exist in traces but are filtered out to model
handsets that expose the serving cell only.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple

from .geo import CellIndex, GeoPoint, GridSpec, cell_of, validate_point

SCAN_HEADER = "timestamp,tower_id,rssi_dbm,lat,lon,serving"
RSSI_MIN = -120
RSSI_MAX = -10

FINGERPRINT_FORMAT = "gsmloc-fingerprint"
FINGERPRINT_VERSION = 1


class ScanFormatError(ValueError):
    """The trace file as a whole is unusable (bad header, too many bad rows)."""


class FileVersionError(ValueError):
    """A persisted artifact has the wrong format tag or version."""


@dataclass(frozen=True)
class ScanRecord:
    """One tower measurement: when, which tower, how strong, and where the user truly was."""

    timestamp: float
    tower_id: str
    rssi_dbm: int
    pos: GeoPoint
    serving: bool


class Observation(NamedTuple):
    """Discrete emission symbol: serving tower identity plus quantized RSSI."""

    tower_id: str
    rssi_bin: int


def quantize(rssi_dbm: int, bin_width: int) -> int:
    """RSSI bin index: floor((rssi + 120) / bin_width), clamping into [-120, -10] first."""
    if bin_width < 1:
        raise ValueError("bin_width must be >= 1")
    r = min(max(rssi_dbm, RSSI_MIN), RSSI_MAX)
    return (r - RSSI_MIN) // bin_width


def observation_of(record: ScanRecord, bin_width: int) -> Observation:
    return Observation(record.tower_id, quantize(record.rssi_dbm, bin_width))


@dataclass
class ScanParseResult:
    records: list[ScanRecord]
    errors: list[tuple[int, str]] = field(default_factory=list)  # (line number, message)


def _parse_row(parts: list[str]) -> ScanRecord:
    if len(parts) != 6:
        raise ValueError(f"expected 6 fields, got {len(parts)}")
    ts = float(parts[0])
    tower = parts[1].strip()
    if not tower:
        raise ValueError("empty tower_id")
    rssi_f = float(parts[2])
    if not rssi_f.is_integer():
        raise ValueError(f"rssi_dbm must be an integer dBm value, got {parts[2]!r}")
    pos = GeoPoint(float(parts[3]), float(parts[4]))
    validate_point(pos)
    serving_raw = parts[5].strip().lower()
    if serving_raw in ("1", "true"):
        serving = True
    elif serving_raw in ("0", "false"):
        serving = False
    else:
        raise ValueError(f"serving flag must be 0/1, got {parts[5]!r}")
    return ScanRecord(ts, tower, int(rssi_f), pos, serving)


def parse_scans(stream, max_bad_fraction: float = 0.10) -> ScanParseResult:
    """Parse a scan CSV.

    Malformed rows are collected as (line number, message) pairs rather than
    aborting the parse; the whole file is rejected only when the header is
    wrong or more than ``max_bad_fraction`` of data rows fail.
    """
    if isinstance(stream, (bytes, bytearray)):
        stream = io.StringIO(stream.decode("utf-8"))
    elif isinstance(stream, str):
        stream = io.StringIO(stream)

    header = stream.readline().strip()
    if header != SCAN_HEADER:
        raise ScanFormatError(f"bad header: expected {SCAN_HEADER!r}, got {header!r}")

    records: list[ScanRecord] = []
    errors: list[tuple[int, str]] = []
    n_rows = 0
    for line_no, line in enumerate(stream, start=2):
        line = line.strip()
        if not line:
            continue
        n_rows += 1
        try:
            records.append(_parse_row(line.split(",")))
        except ValueError as exc:
            errors.append((line_no, str(exc)))

    if n_rows and len(errors) > max_bad_fraction * n_rows:
        raise ScanFormatError(
            f"{len(errors)} of {n_rows} rows malformed (> {max_bad_fraction:.0%}); "
            f"first error at line {errors[0][0]}: {errors[0][1]}"
        )
    return ScanParseResult(records, errors)


def read_scans(path) -> ScanParseResult:
    with open(path, "r", encoding="utf-8") as f:
        return parse_scans(f)


def _format_ts(ts: float) -> str:
    return str(int(ts)) if float(ts).is_integer() else repr(ts)


def write_scans(records: Iterable[ScanRecord], path) -> None:
    """Write records in the scan CSV schema (the exact format parse_scans reads)."""
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(SCAN_HEADER + "\n")
        for r in records:
            f.write(
                f"{_format_ts(r.timestamp)},{r.tower_id},{r.rssi_dbm},"
                f"{r.pos.lat!r},{r.pos.lon!r},{1 if r.serving else 0}\n"
            )


def serving_only(records: Iterable[ScanRecord]) -> list[ScanRecord]:
    """Keep serving-tower rows only, at most one per timestamp.

    If a trace flags several towers as serving at the same timestamp (raw
    survey artifacts), the strongest RSSI wins. Idempotent.
    """
    out: list[ScanRecord] = []
    for r in records:
        if not r.serving:
            continue
        if out and out[-1].timestamp == r.timestamp:
            if r.rssi_dbm > out[-1].rssi_dbm:
                out[-1] = r
            continue
        out.append(r)
    return out


@dataclass
class FingerprintDB:
    """Gridded survey data: every in-bounds serving sample bucketed by cell.

    ``points`` keeps the raw (cell, symbol, position) triples; ``per_cell_counts``
    is the per-cell observation histogram those points induce; ``vocab`` is the
    set of symbols seen anywhere.
    """

    spec: GridSpec
    bin_width: int
    points: list[tuple[CellIndex, Observation, GeoPoint]]
    per_cell_counts: dict[CellIndex, dict[Observation, int]]
    vocab: set[Observation]
    dropped: int = 0


def build_fingerprint(
    records: Iterable[ScanRecord], spec: GridSpec, bin_width: int = 2
) -> FingerprintDB:
    """Bucket serving records into grid cells and build per-cell observation counts.

    Records outside the grid are dropped (and counted) rather than clamped, so
    GPS outliers cannot pollute edge-cell histograms. Raises if nothing lands
    inside the grid.
    """
    points: list[tuple[CellIndex, Observation, GeoPoint]] = []
    counts: dict[CellIndex, dict[Observation, int]] = {}
    vocab: set[Observation] = set()
    dropped = 0
    for r in records:
        cell = cell_of(r.pos, spec, clamp=False)
        if cell is None:
            dropped += 1
            continue
        obs = observation_of(r, bin_width)
        points.append((cell, obs, r.pos))
        cell_counts = counts.setdefault(cell, {})
        cell_counts[obs] = cell_counts.get(obs, 0) + 1
        vocab.add(obs)
    if not points:
        raise ValueError("no in-bounds serving records; fingerprint would be empty")
    return FingerprintDB(spec, bin_width, points, counts, vocab, dropped)


def _grid_to_dict(spec: GridSpec) -> dict:
    return {
        "origin_lat": spec.origin.lat,
        "origin_lon": spec.origin.lon,
        "width_m": spec.width_m,
        "height_m": spec.height_m,
        "cell_len_m": spec.cell_len_m,
    }


def _grid_from_dict(d: dict) -> GridSpec:
    return GridSpec(
        GeoPoint(d["origin_lat"], d["origin_lon"]),
        d["width_m"],
        d["height_m"],
        d["cell_len_m"],
    )


def save_db(db: FingerprintDB, path) -> None:
    doc = {
        "format": FINGERPRINT_FORMAT,
        "version": FINGERPRINT_VERSION,
        "grid": _grid_to_dict(db.spec),
        "bin_width": db.bin_width,
        "dropped": db.dropped,
        "points": [
            [c.col, c.row, o.tower_id, o.rssi_bin, p.lat, p.lon] for c, o, p in db.points
        ],
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=1)
        f.write("\n")


def load_db(path) -> FingerprintDB:
    with open(path, "r", encoding="utf-8") as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as exc:
            raise FileVersionError(f"unreadable fingerprint file {path}: {exc}") from exc
    if doc.get("format") != FINGERPRINT_FORMAT or doc.get("version") != FINGERPRINT_VERSION:
        raise FileVersionError(
            f"expected {FINGERPRINT_FORMAT} v{FINGERPRINT_VERSION}, "
            f"got {doc.get('format')!r} v{doc.get('version')!r}"
        )
    spec = _grid_from_dict(doc["grid"])
    points = [
        (CellIndex(col, row), Observation(tower, rssi_bin), GeoPoint(lat, lon))
        for col, row, tower, rssi_bin, lat, lon in doc["points"]
    ]
    counts: dict[CellIndex, dict[Observation, int]] = {}
    vocab: set[Observation] = set()
    for cell, obs, _pos in points:
        cell_counts = counts.setdefault(cell, {})
        cell_counts[obs] = cell_counts.get(obs, 0) + 1
        vocab.add(obs)
    return FingerprintDB(spec, doc["bin_width"], points, counts, vocab, doc["dropped"])
