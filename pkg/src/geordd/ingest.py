"""Loading of event records and region geometry, monthly aggregation, caching.

Events arrive as CSV with a configurable column mapping; geometry arrives as
GeoJSON in WGS84 and is projected into the planar frame on load. Loaded
structures are immutable and shareable; loading itself is single-writer.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path

import numpy as np
import pandas as pd
from shapely.geometry import LineString, MultiLineString, shape
from shapely.ops import linemerge

from . import geo
from .geo import GeometryError, Polyline


class IngestError(ValueError):
    """Unusable input: missing columns, invalid GeoJSON, bad config."""


def parse_month(text: str) -> date:
    """Parse 'YYYY-MM' (or 'YYYY-MM-DD') to the first day of that month."""
    parts = str(text).split("-")
    if len(parts) < 2:
        raise IngestError(f"expected YYYY-MM, got {text!r}")
    return date(int(parts[0]), int(parts[1]), 1)


def monthly_index(d: date, window_start: date) -> int:
    """1-based month index of ``d`` counted from the window start month."""
    return 1 + (d.year - window_start.year) * 12 + (d.month - window_start.month)


def n_months(window_start: date, window_end: date) -> int:
    return monthly_index(window_end, window_start)


@dataclass(frozen=True)
class EventSchema:
    """Column mapping and filters applied when loading an event CSV."""

    date_col: str = "date"
    lon_col: str = "lon"
    lat_col: str = "lat"
    kind: str | None = None
    kind_col: str | None = None
    source_col: str | None = None
    window_start: str = "2010-01"
    window_end: str = "2018-12"
    bbox: tuple[float, float, float, float] | None = None  # lon_min, lat_min, lon_max, lat_max
    origin: tuple[float, float] | None = None

    def window(self) -> tuple[date, date]:
        return parse_month(self.window_start), parse_month(self.window_end)


@dataclass
class EventSet:
    """Projected point events bucketed by 1-based month index.

    ``points`` is (n, 2) feet, ``month`` is (n,) in 1..n_months. ``kind`` and
    ``source_region`` are optional per-event arrays. ``skipped`` tallies rows
    removed during loading, by reason.
    """

    points: np.ndarray
    month: np.ndarray
    n_months: int
    kind: np.ndarray | None = None
    source_region: np.ndarray | None = None
    skipped: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 2)
        self.month = np.asarray(self.month, dtype=np.int64).reshape(-1)
        if self.points.shape[0] != self.month.shape[0]:
            raise IngestError("points and month arrays disagree in length")
        if self.points.shape[0] and (self.month.min() < 1 or self.month.max() > self.n_months):
            raise IngestError("month index outside 1..n_months")

    def __len__(self) -> int:
        return self.points.shape[0]

    def counts_by_month(self) -> np.ndarray:
        return np.bincount(self.month, minlength=self.n_months + 1)[1:]

    def of_kind(self, kind: str) -> "EventSet":
        if self.kind is None:
            raise IngestError("event set has no kind column")
        sel = self.kind == kind
        return EventSet(
            self.points[sel],
            self.month[sel],
            self.n_months,
            kind=self.kind[sel],
            source_region=None if self.source_region is None else self.source_region[sel],
        )

    def count_in(self, region, month: int | None = None) -> int:
        return geo.count_in(self.points, region, months=self.month, month=month)

    def save(self, path):
        """Persist to JSON; round-trips counts exactly (floats via repr)."""
        payload = {
            "n_months": self.n_months,
            "points": self.points.tolist(),
            "month": self.month.tolist(),
            "kind": None if self.kind is None else self.kind.tolist(),
            "source_region": None
            if self.source_region is None
            else self.source_region.tolist(),
            "skipped": self.skipped,
        }
        Path(path).write_text(json.dumps(payload, sort_keys=True))

    @classmethod
    def load(cls, path) -> "EventSet":
        raw = json.loads(Path(path).read_text())
        return cls(
            np.asarray(raw["points"], dtype=float).reshape(-1, 2),
            np.asarray(raw["month"], dtype=np.int64),
            raw["n_months"],
            kind=None if raw["kind"] is None else np.asarray(raw["kind"], dtype=object),
            source_region=None
            if raw["source_region"] is None
            else np.asarray(raw["source_region"], dtype=object),
            skipped=dict(raw.get("skipped", {})),
        )


def load_events(path, schema: EventSchema) -> EventSet:
    """Load, filter, project, and monthly-bucket an event CSV.

    Malformed rows (unparseable date or coordinates) are skipped and tallied;
    rows outside the study window or bounding box are filtered and tallied
    separately. Missing required columns are a hard error.
    """
    if schema.origin is None:
        raise IngestError("event schema needs a projection origin (lon0, lat0)")
    df = pd.read_csv(path)
    required = [schema.date_col, schema.lon_col, schema.lat_col]
    if schema.kind_col:
        required.append(schema.kind_col)
    if schema.source_col:
        required.append(schema.source_col)
    missing = [c for c in required if c not in df.columns]
    if missing:
        raise IngestError(f"missing required columns: {missing}")

    dates = pd.to_datetime(df[schema.date_col], errors="coerce")
    lon = pd.to_numeric(df[schema.lon_col], errors="coerce")
    lat = pd.to_numeric(df[schema.lat_col], errors="coerce")
    parsed = dates.notna() & np.isfinite(lon) & np.isfinite(lat)

    start, end = schema.window()
    t_end = n_months(start, end)
    # Window comparison at month granularity, robust to day-of-month.
    month_num = dates.dt.year * 12 + dates.dt.month
    in_window = parsed & (month_num >= start.year * 12 + start.month) & (
        month_num <= end.year * 12 + end.month
    )
    in_bbox = in_window.copy()
    if schema.bbox is not None:
        lon_min, lat_min, lon_max, lat_max = schema.bbox
        in_bbox = in_window & (lon >= lon_min) & (lon <= lon_max) & (lat >= lat_min) & (lat <= lat_max)

    keep = in_bbox.to_numpy()
    skipped = {
        "malformed": int((~parsed).sum()),
        "out_of_window": int((parsed & ~in_window).sum()),
        "out_of_bbox": int((in_window & ~in_bbox).sum()),
    }
    points = geo.project(lon[keep].to_numpy(), lat[keep].to_numpy(), schema.origin)
    points = points.reshape(-1, 2)
    month = np.array(
        [monthly_index(d, start) for d in dates[keep].dt.date], dtype=np.int64
    )
    if schema.kind_col:
        kind = df.loc[keep, schema.kind_col].astype(str).to_numpy(dtype=object)
    elif schema.kind:
        kind = np.full(points.shape[0], schema.kind, dtype=object)
    else:
        kind = None
    source = (
        df.loc[keep, schema.source_col].astype(str).to_numpy(dtype=object)
        if schema.source_col
        else None
    )
    return EventSet(points, month, t_end, kind=kind, source_region=source, skipped=skipped)


@dataclass
class RegionGeometry:
    """Precinct polygons with derived adjacency and shared-border polylines."""

    regions: dict[str, object]
    adjacency: list[tuple[str, str]]
    borders: dict[tuple[str, str], Polyline]
    origin: tuple[float, float] | None = None
    warnings: list[str] = field(default_factory=list)

    def border_ids(self) -> list[tuple[str, str]]:
        return sorted(self.borders)


def derive_adjacency(regions: dict[str, object], min_shared_ft: float = 50.0):
    """Find region pairs sharing a border longer than the threshold.

    Returns (adjacency, borders, warnings). Corner contact (zero shared
    length) never counts. If a shared edge merges into several disconnected
    chains, the longest chain is kept and a warning recorded.
    """
    adjacency: list[tuple[str, str]] = []
    borders: dict[tuple[str, str], Polyline] = {}
    warnings: list[str] = []
    ids = sorted(regions)
    for i, a in enumerate(ids):
        for b in ids[i + 1 :]:
            shared = regions[a].boundary.intersection(regions[b].boundary)
            if shared.is_empty or shared.length < min_shared_ft:
                continue
            merged = linemerge(shared) if isinstance(shared, MultiLineString) else shared
            if isinstance(merged, MultiLineString):
                parts = sorted(merged.geoms, key=lambda g: g.length, reverse=True)
                warnings.append(
                    f"border ({a}, {b}) has {len(parts)} disconnected pieces; keeping longest"
                )
                merged = parts[0]
            if not isinstance(merged, LineString):
                # Mixed collections can appear when edges also touch at points.
                lines = [g for g in getattr(merged, "geoms", []) if isinstance(g, LineString)]
                if not lines:
                    continue
                merged = max(lines, key=lambda g: g.length)
            adjacency.append((a, b))
            borders[(a, b)] = Polyline(np.asarray(merged.coords, dtype=float))
    return adjacency, borders, warnings


def _project_ring(ring, origin):
    arr = np.asarray(ring, dtype=float)
    return geo.project(arr[:, 0], arr[:, 1], origin)


def _project_geojson_polygon(geom: dict, origin):
    if geom["type"] == "Polygon":
        polys = [geom["coordinates"]]
    elif geom["type"] == "MultiPolygon":
        polys = geom["coordinates"]
    else:
        raise GeometryError(f"expected Polygon/MultiPolygon, got {geom['type']}")
    projected = {
        "type": "MultiPolygon",
        "coordinates": [
            [_project_ring(ring, origin).tolist() for ring in poly] for poly in polys
        ],
    }
    out = shape(projected)
    if len(out.geoms) == 1:
        return out.geoms[0]
    return out


def default_origin(features) -> tuple[float, float]:
    """Deterministic projection origin: center of the features' bbox."""
    lons, lats = [], []

    def walk(coords):
        if isinstance(coords[0], (int, float)):
            lons.append(coords[0])
            lats.append(coords[1])
        else:
            for c in coords:
                walk(c)

    for f in features:
        walk(f["geometry"]["coordinates"])
    return (
        round((min(lons) + max(lons)) / 2.0, 6),
        round((min(lats) + max(lats)) / 2.0, 6),
    )


def load_geometry(
    precincts_path,
    streets_path=None,
    origin: tuple[float, float] | None = None,
    id_property: str = "id",
    min_shared_ft: float = 50.0,
):
    """Load precinct polygons (and optional street centerlines) from GeoJSON.

    Returns (RegionGeometry, streets) where streets is a dict id -> Polyline
    (empty when no street file is given). Degenerate polygon features are
    rejected per feature and reported in RegionGeometry.warnings; invalid
    GeoJSON is a hard error.
    """
    raw = json.loads(Path(precincts_path).read_text())
    if raw.get("type") != "FeatureCollection" or "features" not in raw:
        raise IngestError("precincts file is not a GeoJSON FeatureCollection")
    features = raw["features"]
    if origin is None:
        origin = default_origin(features)

    regions: dict[str, object] = {}
    warnings: list[str] = []
    for idx, feat in enumerate(features):
        fid = str(feat.get("properties", {}).get(id_property, feat.get("id", idx)))
        try:
            poly = geo.validate_region(_project_geojson_polygon(feat["geometry"], origin))
        except (GeometryError, KeyError, TypeError) as exc:
            warnings.append(f"rejected precinct feature {fid}: {exc}")
            continue
        if fid in regions:
            raise IngestError(f"duplicate precinct id {fid}")
        regions[fid] = poly
    if not regions:
        raise IngestError("no valid precinct polygons")

    adjacency, borders, adj_warnings = derive_adjacency(regions, min_shared_ft)
    geometry = RegionGeometry(
        regions=regions,
        adjacency=adjacency,
        borders=borders,
        origin=origin,
        warnings=warnings + adj_warnings,
    )

    streets: dict[str, Polyline] = {}
    if streets_path is not None:
        sraw = json.loads(Path(streets_path).read_text())
        if sraw.get("type") != "FeatureCollection" or "features" not in sraw:
            raise IngestError("streets file is not a GeoJSON FeatureCollection")
        for idx, feat in enumerate(sraw["features"]):
            fid = str(feat.get("properties", {}).get(id_property, feat.get("id", idx)))
            gtype = feat.get("geometry", {}).get("type")
            if gtype != "LineString":
                geometry.warnings.append(f"rejected street feature {fid}: type {gtype}")
                continue
            coords = np.asarray(feat["geometry"]["coordinates"], dtype=float)
            try:
                streets[fid] = Polyline(geo.project(coords[:, 0], coords[:, 1], origin))
            except GeometryError as exc:
                geometry.warnings.append(f"rejected street feature {fid}: {exc}")
    return geometry, streets


def content_hash(*parts) -> str:
    """Stable short hash of file contents / JSON-serializable configs."""
    h = hashlib.sha256()
    for part in parts:
        if isinstance(part, (str, Path)) and Path(part).is_file():
            h.update(Path(part).read_bytes())
        else:
            h.update(json.dumps(part, sort_keys=True, default=str).encode())
    return h.hexdigest()[:12]
