"""Intensity surfaces, Poisson count sampling, and the scenario study.

Counts are modeled as an inhomogeneous Poisson point process: a raster
intensity surface (events per month per cell) is generated per dataset, the
expected count of any region is its overlap-weighted cell sum, and monthly
region counts are independent Poisson draws with those means. The scenario
runner wires the full pipeline (candidate null streets, covariate matching,
empirical-null tests) over many replicate datasets and reports rejection
rates per buffer width for both the naive and corrected procedures.

Replicates own independent generators derived from (master seed, replicate
index), so results are identical under any worker count or scheduling.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd
import scipy.ndimage
import scipy.sparse
import shapely
from shapely.geometry import box

from . import geo, inference, nullstreets, stats
from .geo import GeometryError, Polyline
from .ingest import EventSet, RegionGeometry, derive_adjacency

SCENARIO_KINDS = ("constant", "random", "spatial", "precinct")


@dataclass(frozen=True)
class ScenarioSpec:
    """Parameters of one data-generating surface family.

    ``base_intensity`` is the median cell intensity in events per month per
    cell. ``noise_scale`` is the lognormal sigma of the random/spatial
    fields, ``spatial_range_ft`` the Gaussian smoothing bandwidth of the
    spatial field, and ``precinct_sigma`` the lognormal sigma of the
    per-precinct multiplier.
    """

    kind: str
    base_intensity: float = 0.2
    noise_scale: float = 0.5
    spatial_range_ft: float = 2000.0
    precinct_sigma: float = 0.25
    seed: int = 0

    def __post_init__(self):
        if self.kind not in SCENARIO_KINDS:
            raise ValueError(f"unknown scenario kind {self.kind!r}; use one of {SCENARIO_KINDS}")
        if not (self.base_intensity > 0 and math.isfinite(self.base_intensity)):
            raise ValueError("base_intensity must be positive")
        if self.noise_scale < 0 or self.precinct_sigma < 0:
            raise ValueError("noise scales must be non-negative")
        if self.spatial_range_ft <= 0:
            raise ValueError("spatial_range_ft must be positive")


@dataclass(frozen=True)
class RasterFrame:
    """Axis-aligned raster covering the city, cell size in feet."""

    x0: float
    y0: float
    nx: int
    ny: int
    cell_ft: float

    @property
    def n_cells(self) -> int:
        return self.nx * self.ny

    def cell_centers_slice(self, i0, i1, j0, j1):
        xs = self.x0 + (np.arange(i0, i1) + 0.5) * self.cell_ft
        ys = self.y0 + (np.arange(j0, j1) + 0.5) * self.cell_ft
        return xs, ys

    def bbox_cells(self, bounds):
        """Half-open cell index ranges (i0, i1, j0, j1) covering bounds."""
        minx, miny, maxx, maxy = bounds
        i0 = max(0, int(math.floor((minx - self.x0) / self.cell_ft)))
        j0 = max(0, int(math.floor((miny - self.y0) / self.cell_ft)))
        i1 = min(self.nx, int(math.ceil((maxx - self.x0) / self.cell_ft)))
        j1 = min(self.ny, int(math.ceil((maxy - self.y0) / self.cell_ft)))
        return i0, i1, j0, j1


def frame_for_geometry(geometry: RegionGeometry, cell_ft: float = 100.0) -> RasterFrame:
    xs, ys = [], []
    for poly in geometry.regions.values():
        minx, miny, maxx, maxy = poly.bounds
        xs += [minx, maxx]
        ys += [miny, maxy]
    x0 = math.floor(min(xs) / cell_ft) * cell_ft
    y0 = math.floor(min(ys) / cell_ft) * cell_ft
    nx = int(math.ceil((max(xs) - x0) / cell_ft))
    ny = int(math.ceil((max(ys) - y0) / cell_ft))
    return RasterFrame(x0, y0, nx, ny, cell_ft)


def region_cell_weights(frame: RasterFrame, region):
    """Cell overlap of a region: (flat cell indices, covered cell fraction).

    Axis-aligned rectangles take an exact separable path; other polygons go
    through exact polygon-cell intersection.
    """
    minx, miny, maxx, maxy = region.bounds
    i0, i1, j0, j1 = frame.bbox_cells(region.bounds)
    if i0 >= i1 or j0 >= j1:
        return np.empty(0, dtype=np.int64), np.empty(0)
    c = frame.cell_ft
    bbox_area = (maxx - minx) * (maxy - miny)
    if abs(region.area - bbox_area) <= 1e-9 * max(bbox_area, 1.0):
        # Exact rectangle: separable 1-D interval overlaps.
        xe = frame.x0 + np.arange(i0, i1 + 1) * c
        ye = frame.y0 + np.arange(j0, j1 + 1) * c
        ox = np.clip(np.minimum(xe[1:], maxx) - np.maximum(xe[:-1], minx), 0.0, c) / c
        oy = np.clip(np.minimum(ye[1:], maxy) - np.maximum(ye[:-1], miny), 0.0, c) / c
        frac = np.outer(oy, ox)
        jj, ii = np.nonzero(frac)
        idx = (jj + j0) * frame.nx + (ii + i0)
        return idx, frac[jj, ii]
    xs = frame.x0 + np.arange(i0, i1) * c
    ys = frame.y0 + np.arange(j0, j1) * c
    gx, gy = np.meshgrid(xs, ys)
    gx, gy = gx.ravel(), gy.ravel()
    cells = shapely.box(gx, gy, gx + c, gy + c)
    areas = shapely.area(shapely.intersection(cells, region))
    keep = areas > 0
    jj, ii = np.divmod(np.nonzero(keep)[0], i1 - i0)
    idx = (jj + j0) * frame.nx + (ii + i0)
    return idx, areas[keep] / (c * c)


def build_weight_matrix(frame: RasterFrame, regions) -> scipy.sparse.csr_matrix:
    """Sparse (n_regions, n_cells) matrix of covered-cell fractions."""
    indptr = [0]
    indices: list[np.ndarray] = []
    data: list[np.ndarray] = []
    for region in regions:
        idx, frac = region_cell_weights(frame, region)
        indices.append(idx)
        data.append(frac)
        indptr.append(indptr[-1] + idx.shape[0])
    return scipy.sparse.csr_matrix(
        (np.concatenate(data) if data else np.empty(0),
         np.concatenate(indices) if indices else np.empty(0, dtype=np.int64),
         np.asarray(indptr)),
        shape=(len(regions), frame.n_cells),
    )


@dataclass
class IntensitySurface:
    """Raster of cell intensities (events per month per cell)."""

    grid: np.ndarray
    frame: RasterFrame

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=float)
        if self.grid.shape != (self.frame.ny, self.frame.nx):
            raise ValueError("grid shape disagrees with frame")
        if not np.all(np.isfinite(self.grid)) or np.any(self.grid < 0):
            raise ValueError("intensities must be finite and non-negative")

    def integrate(self, region) -> float:
        """Expected events per month in the region (overlap-weighted sum)."""
        idx, frac = region_cell_weights(self.frame, region)
        return float(self.grid.ravel()[idx] @ frac)


def precinct_label_raster(frame: RasterFrame, geometry: RegionGeometry):
    """Per-cell precinct index (into sorted region ids); -1 where none.

    Cell membership is decided by the cell center.
    """
    labels = np.full((frame.ny, frame.nx), -1, dtype=np.int32)
    for k, rid in enumerate(sorted(geometry.regions)):
        poly = geometry.regions[rid]
        i0, i1, j0, j1 = frame.bbox_cells(poly.bounds)
        if i0 >= i1 or j0 >= j1:
            continue
        xs, ys = frame.cell_centers_slice(i0, i1, j0, j1)
        gx, gy = np.meshgrid(xs, ys)
        inside = shapely.contains_xy(poly, gx.ravel(), gy.ravel()).reshape(gy.shape)
        block = labels[j0:j1, i0:i1]
        block[inside] = k
    return labels


def make_surface(
    spec: ScenarioSpec,
    geometry: RegionGeometry,
    frame: RasterFrame | None = None,
    rng: np.random.Generator | None = None,
    precinct_labels: np.ndarray | None = None,
) -> IntensitySurface:
    """Generate one intensity surface realization.

    constant: every cell equals the base intensity. random: iid lognormal
    cells with median at the base intensity. spatial: Gaussian white noise
    smoothed at the range bandwidth, standardized, exponentiated, and scaled
    to the base median, giving spatially correlated hotspots. precinct: the
    base intensity times a per-precinct lognormal multiplier, constant
    within each precinct. Deterministic given the spec seed (or the
    caller-supplied generator).
    """
    if frame is None:
        frame = frame_for_geometry(geometry)
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    lam0 = spec.base_intensity
    shape = (frame.ny, frame.nx)
    if spec.kind == "constant":
        grid = np.full(shape, lam0)
    elif spec.kind == "random":
        grid = lam0 * np.exp(spec.noise_scale * rng.standard_normal(shape))
    elif spec.kind == "spatial":
        noise = rng.standard_normal(shape)
        sigma_cells = spec.spatial_range_ft / frame.cell_ft
        smooth = scipy.ndimage.gaussian_filter(noise, sigma=sigma_cells, mode="reflect")
        smooth = smooth / smooth.std()
        grid = lam0 * np.exp(spec.noise_scale * smooth)
    else:  # precinct
        if precinct_labels is None:
            precinct_labels = precinct_label_raster(frame, geometry)
        mult = rng.lognormal(mean=0.0, sigma=spec.precinct_sigma, size=len(geometry.regions))
        grid = np.full(shape, lam0)
        inside = precinct_labels >= 0
        grid[inside] = lam0 * mult[precinct_labels[inside]]
    return IntensitySurface(grid, frame)


def sample_counts(surface: IntensitySurface, region, n_months: int, rng) -> np.ndarray:
    """Independent Poisson draws of the monthly count series for a region."""
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    lam = surface.integrate(region)
    return rng.poisson(lam=lam, size=n_months)


def sample_events(
    surface: IntensitySurface,
    n_months: int,
    rng,
    kind: str = "crime",
) -> EventSet:
    """Draw actual event points (cell counts plus uniform in-cell jitter).

    Intended for desk-scale fixtures feeding the ingestion / counting path;
    the scenario study itself samples region counts directly.
    """
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    frame = surface.frame
    pts, months = [], []
    for t in range(1, n_months + 1):
        counts = rng.poisson(surface.grid)
        total = int(counts.sum())
        if total == 0:
            continue
        jj, ii = np.nonzero(counts)
        reps = counts[jj, ii]
        cx = frame.x0 + (np.repeat(ii, reps) + rng.random(total)) * frame.cell_ft
        cy = frame.y0 + (np.repeat(jj, reps) + rng.random(total)) * frame.cell_ft
        pts.append(np.column_stack([cx, cy]))
        months.append(np.full(total, t, dtype=np.int64))
    if pts:
        points = np.concatenate(pts)
        month = np.concatenate(months)
    else:
        points = np.empty((0, 2))
        month = np.empty(0, dtype=np.int64)
    return EventSet(points, month, n_months, kind=np.full(points.shape[0], kind, dtype=object))


# Interior street design of the synthetic grid city, as fractions of the
# precinct side. Diagonal lengths straddle the border length so matched
# null streets can reach border-sized totals; the shorter horizontal and
# vertical streets broaden the pool toward poorly matched candidates.
_DIAG_FRACS = (0.93, 0.955, 0.98, 1.005, 1.03, 1.055, 1.08)
_H_FRACS = ((0.42, 1 / 3), (0.50, 5 / 12), (0.58, 0.5), (0.68, 7 / 12), (0.76, 2 / 3))
_V_FRACS = ((0.46, 0.375), (0.56, 0.458), (0.66, 0.542), (0.76, 0.625))


def grid_city(nx: int = 6, ny: int = 6, precinct_ft: float = 12000.0):
    """Synthetic grid of square precincts with interior streets.

    Returns (RegionGeometry, streets) where streets maps id -> Polyline.
    Each precinct carries seven diagonal interior streets with lengths
    bracketing the border length plus nine shorter axis-aligned ones.
    """
    if nx < 1 or ny < 1 or precinct_ft <= 0:
        raise ValueError("grid city needs positive dimensions")
    P = float(precinct_ft)
    regions = {}
    for r in range(ny):
        for c in range(nx):
            regions[f"p{r}-{c}"] = box(c * P, r * P, (c + 1) * P, (r + 1) * P)
    adjacency, borders, warnings = derive_adjacency(regions)
    geometry = RegionGeometry(regions, adjacency, borders, origin=None, warnings=warnings)

    streets: dict[str, Polyline] = {}
    inv_sqrt2 = 1.0 / math.sqrt(2.0)
    for r in range(ny):
        for c in range(nx):
            pid = f"p{r}-{c}"
            cx, cy = (c + 0.5) * P, (r + 0.5) * P
            for k, lf in enumerate(_DIAG_FRACS):
                h = 0.5 * lf * P * inv_sqrt2
                sign = 1.0 if k % 2 == 0 else -1.0
                streets[f"{pid}-d{k}"] = Polyline(
                    [(cx - h, cy - sign * h), (cx + h, cy + sign * h)]
                )
            for k, (lf, yf) in enumerate(_H_FRACS):
                half = 0.5 * lf * P
                y = r * P + yf * P
                streets[f"{pid}-h{k}"] = Polyline([(cx - half, y), (cx + half, y)])
            for k, (lf, xf) in enumerate(_V_FRACS):
                half = 0.5 * lf * P
                x = c * P + xf * P
                streets[f"{pid}-v{k}"] = Polyline([(x, cy - half), (x, cy + half)])
    return geometry, streets


@dataclass
class ScenarioInputs:
    """Geometry-dependent precomputation shared across scenario runs."""

    geometry: RegionGeometry
    buffers: list[float]
    n_months: int
    frame: RasterFrame
    border_ids: list[tuple[str, str]]
    pool_ids: list[list[str]]  # per buffer: candidate street ids, sorted
    weights: scipy.sparse.csr_matrix
    border_rows: list[tuple[np.ndarray, np.ndarray]]  # per buffer: (side1, side0) rows
    street_rows: list[tuple[np.ndarray, np.ndarray]]
    precinct_labels: np.ndarray
    min_length_ft: float
    margin_ft: float


def prepare_scenario_inputs(
    geometry: RegionGeometry,
    streets: dict[str, Polyline],
    buffers,
    *,
    n_months: int = 108,
    cell_ft: float = 100.0,
    min_length_ft: float = 300.0,
    margin_ft: float = 100.0,
) -> ScenarioInputs:
    """Extract candidates and precompute region-cell weights for all buffers."""
    buffers = [float(b) for b in buffers]
    frame = frame_for_geometry(geometry, cell_ft)
    border_ids = geometry.border_ids()
    polys = []
    border_rows, street_rows, pool_ids = [], [], []
    row = 0
    for delta in buffers:
        idx1 = np.arange(row, row + 2 * len(border_ids), 2)
        idx0 = idx1 + 1
        for a, b in border_ids:
            bb = geo.border_buffer(geometry.borders[(a, b)], delta, geometry.regions[a], geometry.regions[b])
            polys += [bb.side1, bb.side0]
            row += 2
        border_rows.append((idx1, idx0))

        candidates = nullstreets.extract_candidates(
            streets, geometry, delta, min_length_ft=min_length_ft, margin_ft=margin_ft
        )
        ids = [ns.street_id for ns in candidates]
        pool_ids.append(ids)
        sidx1 = np.arange(row, row + 2 * len(ids), 2)
        sidx0 = sidx1 + 1
        for ns in candidates:
            sb = geo.street_buffer(ns.centerline, delta)
            polys += [sb.side1, sb.side0]
            row += 2
        street_rows.append((sidx1, sidx0))
    weights = build_weight_matrix(frame, polys)
    labels = precinct_label_raster(frame, geometry)
    return ScenarioInputs(
        geometry=geometry,
        buffers=buffers,
        n_months=n_months,
        frame=frame,
        border_ids=border_ids,
        pool_ids=pool_ids,
        weights=weights,
        border_rows=border_rows,
        street_rows=street_rows,
        precinct_labels=labels,
        min_length_ft=min_length_ft,
        margin_ft=margin_ft,
    )


def _log_covariates(side1_totals, side0_totals):
    """(log total, log ratio) rows; non-finite where a side count is zero."""
    hi = np.maximum(side1_totals, side0_totals).astype(float)
    lo = np.minimum(side1_totals, side0_totals).astype(float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.column_stack([np.log(hi + lo), np.log(hi) - np.log(lo)])
    return out


def _dataset_statistics(inputs: ScenarioInputs, spec: ScenarioSpec, entropy, Q: int):
    """Simulate one dataset and compute all statistics and match orderings.

    Returns per-buffer lists: border stats, border naive p-values, street
    stats, and the full Mahalanobis match ordering (border x pool).
    """
    rng = np.random.default_rng(np.random.SeedSequence(entropy))
    surface = make_surface(spec, inputs.geometry, inputs.frame, rng=rng,
                           precinct_labels=inputs.precinct_labels)
    lam = inputs.weights @ surface.grid.ravel()
    counts = rng.poisson(lam=lam[:, None], size=(lam.shape[0], inputs.n_months))

    out = []
    for di in range(len(inputs.buffers)):
        b1, b0 = inputs.border_rows[di]
        s1, s0 = inputs.street_rows[di]
        zb = (counts[b1] - counts[b0]).astype(float)
        zs = (counts[s1] - counts[s0]).astype(float)
        cb, seb = stats.fit_ar_batch(zb, Q)
        cs, _ = stats.fit_ar_batch(zs, Q)
        pnaive = stats.naive_p_batch(cb, seb)

        xb = _log_covariates(counts[b1].sum(axis=1), counts[b0].sum(axis=1))
        xs = _log_covariates(counts[s1].sum(axis=1), counts[s0].sum(axis=1))
        if not np.all(np.isfinite(xb)):
            raise RuntimeError(
                "a border side has zero total count; raise base_intensity for this geometry"
            )
        order, _ = nullstreets.mahalanobis_order(xb, xs)
        out.append((cb, pnaive, cs, order))
    return out


def _quantile_threshold(abs_nulls: np.ndarray, level: float):
    """Row-wise empirical upper quantile (smallest order statistic with
    CDF at or above the level); NaN entries sort last and are excluded."""
    n_valid = np.isfinite(abs_nulls).sum(axis=1)
    srt = np.sort(abs_nulls, axis=1)
    k = np.maximum(np.ceil(level * n_valid - 1e-9).astype(int), 1)
    rows = np.arange(abs_nulls.shape[0])
    thr = srt[rows, np.minimum(k - 1, abs_nulls.shape[1] - 1)]
    thr[n_valid == 0] = np.inf
    return thr


def _evaluate_dataset(per_buffer, B: int, alpha: float):
    """Turn one dataset's statistics into p-values and decisions."""
    n_buf = len(per_buffer)
    M = per_buffer[0][0].shape[0]
    corrected = np.full((n_buf, M), np.nan)
    naive = np.full((n_buf, M), np.nan)
    qreject = np.zeros((n_buf, M), dtype=bool)
    global_p = np.full(n_buf, np.nan)
    failed = np.zeros(n_buf, dtype=np.int64)
    for di, (cb, pnaive, cs, order) in enumerate(per_buffer):
        nulls = cs[order[:, :B]]  # (M, B) matched stats, rank-aligned columns
        finite = np.isfinite(nulls)
        absn = np.abs(nulls)
        absb = np.abs(cb)[:, None]
        n_used = finite.sum(axis=1)
        n_ge = np.nansum((absn >= absb) & finite, axis=1)
        corrected[di] = (1.0 + n_ge) / (n_used + 1.0)
        naive[di] = pnaive
        thr = _quantile_threshold(np.where(finite, absn, np.nan), 1.0 - alpha)
        qreject[di] = np.abs(cb) > thr
        failed[di] = int((~np.isfinite(cs)).sum())

        t_obs = np.nanmax(np.abs(cb))
        col_ok = finite.all(axis=0)
        tb = absn[:, col_ok].max(axis=0)
        global_p[di] = (1.0 + (tb >= t_obs).sum()) / (tb.shape[0] + 1.0)
    return corrected, naive, qreject, global_p, failed


@dataclass
class ScenarioResult:
    """Per-dataset p-values and decisions from a scenario run."""

    spec: ScenarioSpec
    buffers: list[float]
    border_ids: list[tuple[str, str]]
    B: int
    alpha: float
    corrected_p: np.ndarray  # (n_datasets, n_buffers, M)
    naive_p: np.ndarray
    quantile_reject: np.ndarray
    global_p: np.ndarray  # (n_datasets, n_buffers)
    failed_fits: np.ndarray

    @property
    def n_datasets(self) -> int:
        return self.corrected_p.shape[0]

    def rejection_table(self, alpha: float | None = None) -> pd.DataFrame:
        """Rejection rates per test and buffer: the summary table layout."""
        a = self.alpha if alpha is None else alpha
        rows = []
        for di, delta in enumerate(self.buffers):
            rows.append(
                {
                    "scenario": self.spec.kind,
                    "test": "individual",
                    "buffer_ft": delta,
                    "corrected": float(np.nanmean(self.corrected_p[:, di, :] <= a)),
                    "naive": float(np.nanmean(self.naive_p[:, di, :] <= a)),
                    "n_tests": int(np.isfinite(self.corrected_p[:, di, :]).sum()),
                }
            )
        for di, delta in enumerate(self.buffers):
            rows.append(
                {
                    "scenario": self.spec.kind,
                    "test": "global",
                    "buffer_ft": delta,
                    "corrected": float(np.nanmean(self.global_p[:, di] <= a)),
                    "naive": float("nan"),
                    "n_tests": int(np.isfinite(self.global_p[:, di]).sum()),
                }
            )
        return pd.DataFrame(rows)


_WORKER_STATE: dict | None = None


def _init_worker(state):
    global _WORKER_STATE
    _WORKER_STATE = state


def _dataset_task(args):
    i, entropy = args
    st = _WORKER_STATE
    per_buffer = _dataset_statistics(st["inputs"], st["spec"], entropy, st["Q"])
    return i, _evaluate_dataset(per_buffer, st["B"], st["alpha"])


def run_scenario(
    spec: ScenarioSpec,
    geometry: RegionGeometry,
    streets: dict[str, Polyline],
    *,
    n_datasets: int,
    buffers,
    alpha: float = 0.05,
    B: int = 250,
    Q: int = 1,
    seed: int = 0,
    workers: int = 1,
    n_months: int = 108,
    inputs: ScenarioInputs | None = None,
) -> ScenarioResult:
    """Run the full testing pipeline over replicate simulated datasets.

    Per buffer width, reports the corrected (empirical-null) and naive
    per-border p-values for every dataset and border, the quantile-rule
    decisions, and the global max-statistic p-value per dataset.
    """
    if inputs is None:
        inputs = prepare_scenario_inputs(geometry, streets, buffers, n_months=n_months)
    for di, ids in enumerate(inputs.pool_ids):
        if len(ids) < B:
            raise nullstreets.PoolTooSmallError(
                f"candidate pool at {inputs.buffers[di]:.0f} ft has {len(ids)} streets, need B={B}"
            )
    n_buf = len(inputs.buffers)
    M = len(inputs.border_ids)
    corrected = np.full((n_datasets, n_buf, M), np.nan)
    naive = np.full((n_datasets, n_buf, M), np.nan)
    qreject = np.zeros((n_datasets, n_buf, M), dtype=bool)
    global_p = np.full((n_datasets, n_buf), np.nan)
    failed = np.zeros((n_datasets, n_buf), dtype=np.int64)

    entropies = [(i, s.entropy) for i, s in enumerate(np.random.SeedSequence(seed).spawn(n_datasets))]
    state = {"inputs": inputs, "spec": spec, "Q": Q, "B": B, "alpha": alpha}
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker, initargs=(state,)) as ex:
            results = ex.map(_dataset_task, entropies, chunksize=max(1, n_datasets // (4 * workers)))
            for i, (c, nv, qr, gp, ff) in results:
                corrected[i], naive[i], qreject[i], global_p[i], failed[i] = c, nv, qr, gp, ff
    else:
        _init_worker(state)
        for args in entropies:
            i, (c, nv, qr, gp, ff) = _dataset_task(args)
            corrected[i], naive[i], qreject[i], global_p[i], failed[i] = c, nv, qr, gp, ff
    return ScenarioResult(
        spec=spec,
        buffers=inputs.buffers,
        border_ids=inputs.border_ids,
        B=B,
        alpha=alpha,
        corrected_p=corrected,
        naive_p=naive,
        quantile_reject=qreject,
        global_p=global_p,
        failed_fits=failed,
    )


@dataclass
class BSweepResult:
    """Realized type I error as a function of the number of matches."""

    B_grid: list[int]
    delta: float
    decision: str
    # (n_datasets, n_B) per-dataset rejection fraction across borders
    dataset_fractions: np.ndarray

    @property
    def type1(self) -> np.ndarray:
        return self.dataset_fractions.mean(axis=0)

    @property
    def se(self) -> np.ndarray:
        n = self.dataset_fractions.shape[0]
        return self.dataset_fractions.std(axis=0, ddof=1) / math.sqrt(n)


def run_b_sweep(
    spec: ScenarioSpec,
    geometry: RegionGeometry,
    streets: dict[str, Polyline],
    *,
    B_grid,
    delta: float,
    n_datasets: int,
    alpha: float = 0.05,
    Q: int = 1,
    seed: int = 0,
    n_months: int = 108,
    decision: str = "quantile",
    inputs: ScenarioInputs | None = None,
) -> BSweepResult:
    """Type I error across match counts B, reusing one matching order.

    The Mahalanobis ordering is computed once per dataset and border; each B
    takes its prefix, so the sweep shares every simulated dataset. The
    quantile decision rule is the default: the add-one p-value cannot reject
    at all when B is below 1/alpha - 1, hiding the small-B behavior.
    """
    B_grid = [int(b) for b in B_grid]
    if inputs is None:
        inputs = prepare_scenario_inputs(geometry, streets, [delta], n_months=n_months)
        di = 0
    else:
        di = inputs.buffers.index(float(delta))
    pool = len(inputs.pool_ids[di])
    if max(B_grid) > pool:
        raise nullstreets.PoolTooSmallError(f"B={max(B_grid)} exceeds pool of {pool}")
    fractions = np.zeros((n_datasets, len(B_grid)))
    seqs = np.random.SeedSequence(seed).spawn(n_datasets)
    for i, sseq in enumerate(seqs):
        cb, _, cs, order = _dataset_statistics(inputs, spec, sseq.entropy, Q)[di]
        for bi, Bv in enumerate(B_grid):
            nulls = cs[order[:, :Bv]]
            finite = np.isfinite(nulls)
            absn = np.where(finite, np.abs(nulls), np.nan)
            if decision == "quantile":
                thr = _quantile_threshold(absn, 1.0 - alpha)
                rej = np.abs(cb) > thr
            else:
                n_used = finite.sum(axis=1)
                n_ge = np.nansum(absn >= np.abs(cb)[:, None], axis=1)
                rej = (1.0 + n_ge) / (n_used + 1.0) <= alpha
            fractions[i, bi] = float(np.mean(rej))
    return BSweepResult(B_grid=B_grid, delta=float(delta), decision=decision, dataset_fractions=fractions)
