"""Local planar projection, grid indexing, and great-circle distance.

Coordinates live in two frames: WGS-84 latitude/longitude (degrees) and a
local east/north planar frame in meters anchored at a grid's southwest
corner. The planar frame uses an equirectangular projection, which is
accurate to well under 1% for the few-kilometer areas this package targets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

EARTH_RADIUS_M = 6_371_000.0
METERS_PER_DEGREE = EARTH_RADIUS_M * math.pi / 180.0


class GeoPoint(NamedTuple):
    """WGS-84 point, latitude and longitude in degrees."""

    lat: float
    lon: float


class PlanarPoint(NamedTuple):
    """Meters east (x) and north (y) of a grid's origin."""

    x: float
    y: float


class CellIndex(NamedTuple):
    """Column/row address of one grid cell."""

    col: int
    row: int


def validate_point(p: GeoPoint) -> None:
    if not (math.isfinite(p.lat) and math.isfinite(p.lon)):
        raise ValueError(f"non-finite coordinates: {p}")
    if not (-90.0 <= p.lat <= 90.0 and -180.0 <= p.lon <= 180.0):
        raise ValueError(f"coordinates out of range: {p}")


@dataclass(frozen=True)
class GridSpec:
    """A rectangular area split into square cells of side ``cell_len_m``.

    ``origin`` is the southwest corner. The grid covers
    ``n_cols * n_rows`` cells where each count is the ceiling of the
    corresponding extent over the cell length, so the grid may overhang
    the east/north box edges by a partial cell.
    """

    origin: GeoPoint
    width_m: float
    height_m: float
    cell_len_m: float

    def __post_init__(self):
        validate_point(self.origin)
        if self.cell_len_m <= 0:
            raise ValueError("cell_len_m must be positive")
        if self.width_m <= 0 or self.height_m <= 0:
            raise ValueError("grid extents must be positive")

    @property
    def n_cols(self) -> int:
        return max(1, math.ceil(self.width_m / self.cell_len_m))

    @property
    def n_rows(self) -> int:
        return max(1, math.ceil(self.height_m / self.cell_len_m))

    @property
    def n_cells(self) -> int:
        return self.n_cols * self.n_rows

    @property
    def mid_lat(self) -> float:
        """Latitude of the box's vertical midpoint; fixes the projection's east-west scale."""
        return self.origin.lat + (self.height_m / 2.0) / METERS_PER_DEGREE

    @classmethod
    def from_points(cls, points, cell_len_m: float, pad_m: float = 1.0) -> "GridSpec":
        """Smallest grid covering ``points``, padded so boundary samples stay inside."""
        points = list(points)
        if not points:
            raise ValueError("cannot build a grid from zero points")
        lats = [p.lat for p in points]
        lons = [p.lon for p in points]
        origin = GeoPoint(min(lats), min(lons))
        height_m = (max(lats) - min(lats)) * METERS_PER_DEGREE + pad_m
        mid_lat = min(lats) + (height_m / 2.0) / METERS_PER_DEGREE
        width_m = (max(lons) - min(lons)) * METERS_PER_DEGREE * math.cos(
            math.radians(mid_lat)
        ) + pad_m
        return cls(origin, width_m, height_m, cell_len_m)


def project(p: GeoPoint, spec: GridSpec) -> PlanarPoint:
    """Map a geographic point into the grid's planar frame."""
    x = (p.lon - spec.origin.lon) * METERS_PER_DEGREE * math.cos(math.radians(spec.mid_lat))
    y = (p.lat - spec.origin.lat) * METERS_PER_DEGREE
    return PlanarPoint(x, y)


def unproject(pt: PlanarPoint, spec: GridSpec) -> GeoPoint:
    """Inverse of :func:`project`."""
    lat = spec.origin.lat + pt.y / METERS_PER_DEGREE
    lon = spec.origin.lon + pt.x / (METERS_PER_DEGREE * math.cos(math.radians(spec.mid_lat)))
    return GeoPoint(lat, lon)


def haversine(a: GeoPoint, b: GeoPoint) -> float:
    """Great-circle distance in meters on a spherical earth."""
    lat1, lat2 = math.radians(a.lat), math.radians(b.lat)
    dlat = lat2 - lat1
    dlon = math.radians(b.lon - a.lon)
    h = math.sin(dlat / 2.0) ** 2 + math.cos(lat1) * math.cos(lat2) * math.sin(dlon / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_M * math.asin(min(1.0, math.sqrt(h)))


def cell_of(p: GeoPoint, spec: GridSpec, clamp: bool = True) -> CellIndex | None:
    """Grid cell containing ``p``.

    Cells are half-open: a point exactly on a shared boundary belongs to the
    upper-index cell. With ``clamp=True`` (tracking), points outside the grid
    snap to the nearest boundary cell; with ``clamp=False`` (training), they
    yield ``None`` so callers can drop them.
    """
    x, y = project(p, spec)
    col = math.floor(x / spec.cell_len_m)
    row = math.floor(y / spec.cell_len_m)
    if clamp:
        col = min(max(col, 0), spec.n_cols - 1)
        row = min(max(row, 0), spec.n_rows - 1)
        return CellIndex(col, row)
    if 0 <= col < spec.n_cols and 0 <= row < spec.n_rows:
        return CellIndex(col, row)
    return None


def cell_center(c: CellIndex, spec: GridSpec) -> GeoPoint:
    """Geographic center of a grid cell; the point reported for a cell estimate."""
    if not (0 <= c.col < spec.n_cols and 0 <= c.row < spec.n_rows):
        raise ValueError(f"cell {c} outside {spec.n_cols}x{spec.n_rows} grid")
    return unproject(
        PlanarPoint((c.col + 0.5) * spec.cell_len_m, (c.row + 0.5) * spec.cell_len_m), spec
    )


def centroid(points, weights=None) -> GeoPoint:
    """Weighted centroid of points in the local planar frame.

    The equirectangular projection is affine in (lat, lon), so the planar
    centroid is exactly the weighted mean of latitudes and longitudes.
    """
    points = list(points)
    if not points:
        raise ValueError("centroid of zero points")
    if weights is None:
        weights = [1.0] * len(points)
    total = float(sum(weights))
    if total <= 0:
        raise ValueError("weights must have positive sum")
    lat = sum(w * p.lat for w, p in zip(weights, points)) / total
    lon = sum(w * p.lon for w, p in zip(weights, points)) / total
    return GeoPoint(lat, lon)
