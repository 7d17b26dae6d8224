"""Planar geometry engine: projection, buffering, side assignment, counting.

Everything downstream works in a local planar frame measured in feet, with
x pointing east and y pointing north. Point sets are float64 arrays of
shape (n, 2); single points are length-2 arrays. Regions are shapely
Polygon/MultiPolygon objects in the same frame.

All functions here are pure and safe to call concurrently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
import shapely
from shapely.geometry import LineString, MultiPolygon, Polygon
from shapely.geometry.base import BaseGeometry

EARTH_RADIUS_FT = 20_902_231.0
FT_PER_DEGREE = EARTH_RADIUS_FT * math.pi / 180.0

# Membership fuzz for "exactly on the boundary" decisions, in feet.
BOUNDARY_EPS_FT = 1e-6


class GeometryError(ValueError):
    """Invalid geometric input (degenerate polyline, bad buffer width, ...)."""


def project(lon, lat, origin):
    """Project WGS84 coordinates to the local planar frame, in feet.

    Local equirectangular projection about ``origin = (lon0, lat0)``:
    ``y = (lat - lat0) * K`` and ``x = (lon - lon0) * K * cos(lat0)`` with
    ``K`` the length of one degree of arc at the Earth radius used here.
    Distortion is under 0.3% at city scale.

    Parameters
    ----------
    lon, lat : float or array
        Coordinates in degrees.
    origin : (float, float)
        Reference (lon0, lat0); maps to (0, 0).

    Returns
    -------
    ndarray
        Planar points in feet, shape (2,) for scalars, (n, 2) for arrays.
    """
    lon = np.asarray(lon, dtype=float)
    lat = np.asarray(lat, dtype=float)
    lon0, lat0 = float(origin[0]), float(origin[1])
    if not (np.all(np.isfinite(lon)) and np.all(np.isfinite(lat))):
        raise GeometryError("non-finite coordinates")
    if not (math.isfinite(lon0) and math.isfinite(lat0)):
        raise GeometryError("non-finite projection origin")
    if np.any(np.abs(lat) >= 89.0) or abs(lat0) >= 89.0:
        raise GeometryError("latitude too close to a pole for planar projection")
    x = (lon - lon0) * FT_PER_DEGREE * math.cos(math.radians(lat0))
    y = (lat - lat0) * FT_PER_DEGREE
    return np.stack(np.broadcast_arrays(x, y), axis=-1)


def unproject(points, origin):
    """Inverse of :func:`project`; used to write WGS84 fixtures and demos."""
    pts = np.asarray(points, dtype=float)
    lon0, lat0 = float(origin[0]), float(origin[1])
    lon = pts[..., 0] / (FT_PER_DEGREE * math.cos(math.radians(lat0))) + lon0
    lat = pts[..., 1] / FT_PER_DEGREE + lat0
    return lon, lat


@dataclass(frozen=True, eq=False)
class Polyline:
    """An open chain of planar vertices, in feet.

    Invariants: at least two vertices, all finite, consecutive vertices
    distinct, total length positive.
    """

    vertices: np.ndarray

    def __post_init__(self):
        verts = np.asarray(self.vertices, dtype=float)
        if verts.ndim != 2 or verts.shape[1] != 2 or verts.shape[0] < 2:
            raise GeometryError("polyline needs an (n, 2) array with n >= 2")
        if not np.all(np.isfinite(verts)):
            raise GeometryError("polyline has non-finite vertices")
        seg = np.diff(verts, axis=0)
        if np.any(np.hypot(seg[:, 0], seg[:, 1]) == 0.0):
            raise GeometryError("polyline has repeated consecutive vertices")
        object.__setattr__(self, "vertices", verts)

    @property
    def length(self) -> float:
        seg = np.diff(self.vertices, axis=0)
        return float(np.hypot(seg[:, 0], seg[:, 1]).sum())

    def segments(self):
        """Return (starts, ends) arrays of shape (m, 2)."""
        return self.vertices[:-1], self.vertices[1:]

    def as_shapely(self) -> LineString:
        return LineString(self.vertices)


class SideRule(str, Enum):
    PRECINCT = "precinct-membership"
    LEFT_RIGHT = "left-right-of-polyline"


@dataclass
class BorderBuffer:
    """A boundary polyline with its width and the two side regions.

    ``side1`` and ``side0`` are shapely polygons partitioning (up to the
    boundary itself) the set of points within ``delta`` of ``boundary``.
    Under the precinct rule side1 lies in region A and side0 in region B;
    under the left-right rule side1 is the left of the polyline's direction.
    """

    boundary: Polyline
    delta: float
    side1: BaseGeometry
    side0: BaseGeometry
    side_rule: SideRule
    region1: BaseGeometry | None = field(default=None, repr=False)
    region0: BaseGeometry | None = field(default=None, repr=False)

    @property
    def region(self) -> BaseGeometry:
        """The full buffer {s : d(s, boundary) < delta}."""
        return buffer_polyline(self.boundary, self.delta)

    def validate(self, tol: float = 1e-6):
        """Assert the side-region invariants; raises GeometryError."""
        overlap = self.side1.intersection(self.side0).area
        if overlap > tol * max(self.side1.area, 1.0):
            raise GeometryError(f"side regions overlap with area {overlap}")
        buf = self.region.buffer(tol)
        if not (buf.covers(self.side1) and buf.covers(self.side0)):
            raise GeometryError("side region extends beyond the buffer width")
        if self.side_rule is SideRule.PRECINCT:
            if self.region1 is not None and not self.region1.buffer(tol).covers(self.side1):
                raise GeometryError("side1 not contained in region A")
            if self.region0 is not None and not self.region0.buffer(tol).covers(self.side0):
                raise GeometryError("side0 not contained in region B")


def buffer_polyline(boundary: Polyline, delta: float) -> BaseGeometry:
    """Region within ``delta`` feet of the boundary, flat end caps, round joins.

    For a straight segment this is exactly the length x 2*delta rectangle.
    """
    if not (isinstance(delta, (int, float)) and math.isfinite(delta) and delta > 0):
        raise GeometryError(f"buffer width must be a positive number, got {delta!r}")
    return boundary.as_shapely().buffer(float(delta), cap_style="flat", join_style="round")


def _side_polygons_left_right(boundary: Polyline, delta: float):
    line = boundary.as_shapely()
    left = line.buffer(float(delta), single_sided=True)
    right = line.buffer(-float(delta), single_sided=True)
    return left, right


def border_buffer(boundary: Polyline, delta: float, region_a, region_b) -> BorderBuffer:
    """Buffer around a shared border, sides split by precinct membership."""
    buf = buffer_polyline(boundary, delta)
    return BorderBuffer(
        boundary=boundary,
        delta=float(delta),
        side1=buf.intersection(region_a),
        side0=buf.intersection(region_b),
        side_rule=SideRule.PRECINCT,
        region1=region_a,
        region0=region_b,
    )


def street_buffer(centerline: Polyline, delta: float) -> BorderBuffer:
    """Buffer around a null-street centerline, sides split left/right."""
    if not (isinstance(delta, (int, float)) and math.isfinite(delta) and delta > 0):
        raise GeometryError(f"buffer width must be a positive number, got {delta!r}")
    left, right = _side_polygons_left_right(centerline, delta)
    return BorderBuffer(
        boundary=centerline,
        delta=float(delta),
        side1=left,
        side0=right,
        side_rule=SideRule.LEFT_RIGHT,
    )


# 8 MB of intermediate per chunk at float64 keeps the segment sweep cache friendly.
_CHUNK_CELLS = 500_000


def _segment_geometry(points, starts, ends):
    """Distance to and cross product against each segment.

    Returns (dist, cross) of shape (n, m) for n points and m segments; cross
    is the z component of (end - start) x (point - start), positive on the
    left of the segment direction.
    """
    points = np.asarray(points, dtype=float)
    d = ends - starts
    L2 = np.einsum("md,md->m", d, d)
    v = points[:, None, :] - starts[None, :, :]
    t = np.einsum("nmd,md->nm", v, d) / L2
    np.clip(t, 0.0, 1.0, out=t)
    proj = starts[None, :, :] + t[..., None] * d[None, :, :]
    diff = points[:, None, :] - proj
    dist = np.hypot(diff[..., 0], diff[..., 1])
    cross = d[None, :, 0] * v[..., 1] - d[None, :, 1] * v[..., 0]
    return dist, cross


def distance_to(points, boundary: Polyline):
    """Shortest distance from each point to the boundary polyline, in feet."""
    pts = np.asarray(points, dtype=float)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    starts, ends = boundary.segments()
    m = starts.shape[0]
    out = np.full(pts.shape[0], np.inf)
    step = max(1, _CHUNK_CELLS // max(m, 1))
    for lo in range(0, pts.shape[0], step):
        dist, _ = _segment_geometry(pts[lo : lo + step], starts, ends)
        out[lo : lo + step] = dist.min(axis=1)
    return float(out[0]) if single else out


def _nearest_segment_sides(points, boundary: Polyline):
    """(min distance, side sign of nearest segment) for each point.

    Ties between equidistant segments resolve to the earliest segment;
    a point exactly on the nearest segment's line has cross 0.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    starts, ends = boundary.segments()
    m = starts.shape[0]
    dmin = np.empty(pts.shape[0])
    cross = np.empty(pts.shape[0])
    step = max(1, _CHUNK_CELLS // max(m, 1))
    for lo in range(0, pts.shape[0], step):
        dist, cr = _segment_geometry(pts[lo : lo + step], starts, ends)
        j = np.argmin(dist, axis=1)
        rows = np.arange(dist.shape[0])
        dmin[lo : lo + step] = dist[rows, j]
        cross[lo : lo + step] = cr[rows, j]
    return dmin, cross


SIDE1, SIDE0, OUTSIDE = 1, 0, -1


def assign_side(points, bb: BorderBuffer):
    """Label each point side1 (1), side0 (0), or outside (-1).

    Precinct rule: membership of region A / region B among points strictly
    within delta of the boundary. Left-right rule: sign of the cross product
    against the nearest boundary segment. Points exactly on the boundary are
    deterministically assigned side1 (and never dropped); callers that need
    the tally can count ``distance_to(points, bb.boundary) <= eps``.
    """
    pts = np.asarray(points, dtype=float)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    labels = np.full(pts.shape[0], OUTSIDE, dtype=np.int8)
    if bb.side_rule is SideRule.LEFT_RIGHT:
        dmin, cross = _nearest_segment_sides(pts, bb.boundary)
        within = dmin < bb.delta
        labels[within & (cross >= 0)] = SIDE1
        labels[within & (cross < 0)] = SIDE0
    else:
        if bb.region1 is None or bb.region0 is None:
            raise GeometryError("precinct-membership side rule needs both regions")
        within = distance_to(pts, bb.boundary) < bb.delta
        in_a = shapely.intersects_xy(bb.region1, pts[:, 0], pts[:, 1])
        in_b = shapely.intersects_xy(bb.region0, pts[:, 0], pts[:, 1])
        labels[within & in_a] = SIDE1
        labels[within & in_b & ~in_a] = SIDE0
    return labels[0] if single else labels


def count_in(points, region, months=None, month=None) -> int:
    """Count points falling inside a region (boundary inclusive).

    If ``months`` and ``month`` are given, only points of that month index
    are counted. Counts are additive over regions with disjoint interiors
    as long as no point sits exactly on the shared edge.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if month is not None:
        if months is None:
            raise ValueError("month filter requires the months array")
        pts = pts[np.asarray(months) == month]
    if pts.shape[0] == 0:
        return 0
    return int(shapely.intersects_xy(region, pts[:, 0], pts[:, 1]).sum())


def on_boundary_mask(points, boundary: Polyline, eps: float = BOUNDARY_EPS_FT):
    """Boolean mask of points lying on the boundary polyline (within eps)."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    return distance_to(pts, boundary) <= eps


def monthly_side_counts(points, months, n_months: int, bb: BorderBuffer):
    """Per-month counts on each side of a buffer, plus the on-boundary tally.

    Returns (side1_counts, side0_counts, n_on_boundary) where the count
    arrays have length ``n_months`` (month indices are 1-based).
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    months = np.asarray(months)
    labels = assign_side(pts, bb)
    n_on = int(on_boundary_mask(pts, bb.boundary).sum()) if pts.shape[0] else 0
    side1 = np.zeros(n_months, dtype=np.int64)
    side0 = np.zeros(n_months, dtype=np.int64)
    for lab, out in ((SIDE1, side1), (SIDE0, side0)):
        sel = labels == lab
        if sel.any():
            np.add.at(out, months[sel] - 1, 1)
    return side1, side0, n_on


def validate_region(geom: BaseGeometry) -> BaseGeometry:
    """Reject (never repair) malformed polygonal regions."""
    if not isinstance(geom, (Polygon, MultiPolygon)):
        raise GeometryError(f"expected polygonal geometry, got {geom.geom_type}")
    if geom.is_empty or not geom.is_valid:
        raise GeometryError("invalid or empty polygon (self-intersection or bad ring)")
    if geom.area <= 0:
        raise GeometryError("polygon has zero area")
    return geom
