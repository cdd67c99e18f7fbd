"""Deterministic radio-propagation core.

Received power per resource element follows

    rsrp_i = tx_i - 10 log10(12 * N_rb,i) - PL(d_i) + shadow_i

with log-distance pathloss ``PL(d) = A + B log10(d / 1 km)`` and log-normal
shadowing that is spatially correlated with ``rho(d) = exp(-d / d_corr)``.
Inactive sites radiate nothing and appear as -inf dBm.
"""
from __future__ import annotations

import csv
import functools
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .errors import CapacityError, InvalidInputError, NoCoverageError
from .learn_core import make_rng

DEFAULT_MAX_FIELD_POINTS = 20_000


@dataclass(frozen=True)
class PathlossParams:
    intercept_db: float = 128.1
    slope_db: float = 37.6  # per decade of distance
    min_distance_m: float = 10.0


@dataclass(frozen=True)
class ShadowingParams:
    sigma_db: float = 8.0
    decorrelation_m: float = 50.0
    # share of shadowing variance common to all sites at a location
    site_correlation: float = 0.5
    # spacing of the lattice the per-scenario field is drawn on
    lattice_m: float = 20.0

    def __post_init__(self):
        if not self.sigma_db >= 0:
            raise InvalidInputError("shadowing sigma must be >= 0")
        if not self.decorrelation_m > 0:
            raise InvalidInputError("decorrelation distance must be > 0")
        if not 0.0 <= self.site_correlation <= 1.0:
            raise InvalidInputError("site_correlation must be in [0, 1]")
        if not self.lattice_m > 0:
            raise InvalidInputError("lattice spacing must be > 0")


@dataclass(frozen=True)
class CellSite:
    id: int
    position: tuple[float, float]
    tx_power_dbm: float = 30.0
    bandwidth_rb: int = 50
    active: bool = True

    def __post_init__(self):
        if not math.isfinite(self.tx_power_dbm):
            raise InvalidInputError(f"site {self.id}: tx power must be finite")
        if self.bandwidth_rb < 1:
            raise InvalidInputError(f"site {self.id}: bandwidth_rb must be >= 1")


@dataclass(frozen=True)
class NetworkLayout:
    sites: tuple[CellSite, ...]
    area: tuple[float, float] = (1000.0, 1000.0)
    # thermal noise over one 180 kHz resource block plus a 9 dB noise figure
    noise_dbm_per_rb: float = -174.0 + 10 * math.log10(180e3) + 9.0
    pathloss: PathlossParams = field(default_factory=PathlossParams)
    shadowing: ShadowingParams = field(default_factory=ShadowingParams)

    def __post_init__(self):
        object.__setattr__(self, "sites", tuple(self.sites))
        if len(self.sites) < 2:
            raise InvalidInputError("a layout needs at least 2 sites")
        ids = [s.id for s in self.sites]
        if len(set(ids)) != len(ids):
            raise InvalidInputError("duplicate site ids")
        w, h = self.area
        for s in self.sites:
            x, y = s.position
            if not (0 <= x <= w and 0 <= y <= h):
                raise InvalidInputError(f"site {s.id} at {s.position} outside area {self.area}")

    @property
    def site_ids(self) -> list[int]:
        return [s.id for s in self.sites]

    @property
    def positions(self) -> np.ndarray:
        return np.array([s.position for s in self.sites], dtype=float)

    def site(self, site_id: int) -> CellSite:
        for s in self.sites:
            if s.id == site_id:
                return s
        raise InvalidInputError(f"unknown site id {site_id}")

    def index_of(self, site_id: int) -> int:
        for i, s in enumerate(self.sites):
            if s.id == site_id:
                return i
        raise InvalidInputError(f"unknown site id {site_id}")

    def with_sites(self, sites) -> "NetworkLayout":
        return replace(self, sites=tuple(sites))

    def healthy(self) -> "NetworkLayout":
        """Copy with every site switched on (tx powers untouched)."""
        return self.with_sites(replace(s, active=True) for s in self.sites)

    def to_dict(self):
        return {
            "sites": [
                {"id": s.id, "position": list(s.position), "tx_power_dbm": s.tx_power_dbm,
                 "bandwidth_rb": s.bandwidth_rb, "active": s.active}
                for s in self.sites
            ],
            "area": list(self.area),
            "noise_dbm_per_rb": self.noise_dbm_per_rb,
            "pathloss": vars(self.pathloss).copy(),
            "shadowing": vars(self.shadowing).copy(),
        }

    @classmethod
    def from_dict(cls, d) -> "NetworkLayout":
        sites = [
            CellSite(int(s["id"]), tuple(float(v) for v in s["position"]),
                     float(s.get("tx_power_dbm", 30.0)), int(s.get("bandwidth_rb", 50)),
                     bool(s.get("active", True)))
            for s in d["sites"]
        ]
        kwargs = {}
        if "noise_dbm_per_rb" in d:
            kwargs["noise_dbm_per_rb"] = float(d["noise_dbm_per_rb"])
        return cls(
            sites=tuple(sites),
            area=tuple(float(v) for v in d.get("area", (1000.0, 1000.0))),
            pathloss=PathlossParams(**d.get("pathloss", {})),
            shadowing=ShadowingParams(**d.get("shadowing", {})),
            **kwargs,
        )


def grid_layout(rows: int = 3, cols: int = 3, area=(1000.0, 1000.0), tx_power_dbm: float = 30.0,
                bandwidth_rb: int = 50, **kwargs) -> NetworkLayout:
    """Sites at the centres of a rows x cols tiling of the area, ids row-major from 0."""
    w, h = area
    sites = []
    for r in range(rows):
        for c in range(cols):
            pos = ((c + 0.5) * w / cols, (r + 0.5) * h / rows)
            sites.append(CellSite(r * cols + c, pos, tx_power_dbm, bandwidth_rb))
    return NetworkLayout(tuple(sites), tuple(area), **kwargs)


# --------------------------------------------------------------------------
# pathloss


def compute_pathloss(distance_m, params: PathlossParams = PathlossParams()):
    """Log-distance pathloss in dB; accepts scalars or arrays."""
    d = np.asarray(distance_m, dtype=float)
    if not np.all(np.isfinite(d)):
        raise InvalidInputError("distance must be finite")
    if np.any(d < 0):
        raise InvalidInputError("distance must be >= 0")
    pl = params.intercept_db + params.slope_db * np.log10(np.maximum(d, params.min_distance_m) / 1000.0)
    return float(pl) if pl.ndim == 0 else pl


# --------------------------------------------------------------------------
# shadowing


def _correlation_cholesky(positions: np.ndarray, decorrelation_m: float) -> np.ndarray:
    diff = positions[:, None, :] - positions[None, :, :]
    dist = np.sqrt(np.sum(diff * diff, axis=-1))
    corr = np.exp(-dist / decorrelation_m)
    corr[np.diag_indices_from(corr)] += 1e-9
    return np.linalg.cholesky(corr)


@functools.lru_cache(maxsize=8)
def _cached_cholesky(key: bytes, n: int, decorrelation_m: float) -> np.ndarray:
    positions = np.frombuffer(key, dtype=float).reshape(n, 2)
    return _correlation_cholesky(positions, decorrelation_m)


def _check_positions(positions, max_points: int) -> np.ndarray:
    pts = np.asarray(positions, dtype=float).reshape(-1, 2)
    if pts.shape[0] == 0:
        raise InvalidInputError("positions must be non-empty")
    if not np.all(np.isfinite(pts)):
        raise InvalidInputError("positions must be finite")
    if pts.shape[0] > max_points:
        raise CapacityError(f"{pts.shape[0]} positions exceed the field cap of {max_points}; tile the request")
    return pts


def sample_shadowing_field(positions, params: ShadowingParams, seed: int,
                           max_points: int = DEFAULT_MAX_FIELD_POINTS) -> np.ndarray:
    """One joint zero-mean Gaussian draw with Cov = sigma^2 exp(-|p_i - p_j| / d_corr).

    The diagonal carries a 1e-9 * sigma^2 jitter so coincident points still
    factorize; they receive values equal to within that jitter.
    """
    pts = _check_positions(positions, max_points)
    if params.sigma_db == 0:
        return np.zeros(pts.shape[0])
    chol = _cached_cholesky(np.ascontiguousarray(pts).tobytes(), pts.shape[0], params.decorrelation_m)
    z = make_rng(seed, "shadowing").standard_normal(pts.shape[0])
    return params.sigma_db * (chol @ z)


class ShadowingField:
    """Per-site shadowing for one scenario, defined everywhere in the area.

    Values are drawn jointly (exact Cholesky) on a regular lattice and
    bilinearly interpolated in between, so UEs, coverage-map pixels and FDT
    measurement points all see the same environment regardless of the order
    in which they are evaluated.  Each site's field mixes a component common
    to all sites with an individual one according to ``site_correlation``.
    """

    def __init__(self, layout: NetworkLayout, seed: int, max_points: int = DEFAULT_MAX_FIELD_POINTS):
        p = layout.shadowing
        w, h = layout.area
        self.site_ids = layout.site_ids
        self.xs = np.linspace(0.0, w, max(2, int(math.ceil(w / p.lattice_m)) + 1))
        self.ys = np.linspace(0.0, h, max(2, int(math.ceil(h / p.lattice_m)) + 1))
        n = self.xs.size * self.ys.size
        if n > max_points:
            raise CapacityError(f"shadowing lattice of {n} points exceeds cap {max_points}")
        gx, gy = np.meshgrid(self.xs, self.ys, indexing="ij")
        pts = np.column_stack([gx.ravel(), gy.ravel()])
        k = len(self.site_ids)
        if p.sigma_db == 0:
            values = np.zeros((self.xs.size, self.ys.size, k))
        else:
            chol = _cached_cholesky(np.ascontiguousarray(pts).tobytes(), n, p.decorrelation_m)
            z = make_rng(seed, "shadowing-field").standard_normal((n, k + 1))
            unit = chol @ z
            rho = p.site_correlation
            mixed = math.sqrt(rho) * unit[:, :1] + math.sqrt(1.0 - rho) * unit[:, 1:]
            values = (p.sigma_db * mixed).reshape(self.xs.size, self.ys.size, k)
        self._interp = RegularGridInterpolator((self.xs, self.ys), values, method="linear")

    def __call__(self, positions) -> np.ndarray:
        """Shadowing in dB, shape (n_positions, n_sites) in layout site order."""
        pts = np.asarray(positions, dtype=float).reshape(-1, 2)
        pts = np.clip(pts, [self.xs[0], self.ys[0]], [self.xs[-1], self.ys[-1]])
        return self._interp(pts)


# --------------------------------------------------------------------------
# radio samples


@dataclass(frozen=True)
class RadioSample:
    rsrp_dbm: np.ndarray  # per site in layout order; -inf for inactive sites
    rsrq_db: np.ndarray
    sinr_db: float
    serving_id: int
    neighbor_ids: tuple[int, ...]  # active non-serving sites by rsrp descending

    @property
    def serving_rsrp_dbm(self) -> float:
        return float(np.max(self.rsrp_dbm))


def rsrp_matrix(positions, layout: NetworkLayout, shadowing) -> np.ndarray:
    """Per-RE received power, shape (n_positions, n_sites), -inf for inactive sites."""
    pts = np.asarray(positions, dtype=float).reshape(-1, 2)
    shadow = np.asarray(shadowing, dtype=float).reshape(pts.shape[0], len(layout.sites))
    site_pos = layout.positions
    dist = np.sqrt(np.sum((pts[:, None, :] - site_pos[None, :, :]) ** 2, axis=-1))
    tx = np.array([s.tx_power_dbm - 10 * math.log10(12 * s.bandwidth_rb) for s in layout.sites])
    rsrp = tx[None, :] - compute_pathloss(dist, layout.pathloss) + shadow
    active = np.array([s.active for s in layout.sites])
    rsrp[:, ~active] = -np.inf
    return rsrp


def radio_quantities(rsrp: np.ndarray, layout: NetworkLayout):
    """Vectorized serving / SINR / RSRQ from an rsrp matrix.

    Returns ``(serving_index, sinr_db, rsrq_db)``.  RSRQ uses the serving
    site's bandwidth: RSSI = N_rb * (12 * sum_i rsrp_i + noise_per_rb), so
    rsrq_i = rsrp_i / (12 * sum rsrp + noise_per_rb) in linear terms.
    """
    rsrp = np.atleast_2d(rsrp)
    if rsrp.shape[0] and not np.all(np.any(np.isfinite(rsrp), axis=1)):
        raise NoCoverageError("no active site")
    serving = np.argmax(rsrp, axis=1)
    with np.errstate(divide="ignore"):
        lin = np.power(10.0, rsrp / 10.0)
    total = lin.sum(axis=1)
    s_lin = lin[np.arange(rsrp.shape[0]), serving]
    noise_rb = 10 ** (layout.noise_dbm_per_rb / 10.0)
    noise_re = noise_rb / 12.0
    sinr_db = 10 * np.log10(s_lin / (total - s_lin + noise_re))
    with np.errstate(divide="ignore"):
        rsrq_db = 10 * np.log10(lin / (12.0 * total + noise_rb)[:, None])
    return serving, sinr_db, rsrq_db


def compute_radio_sample(ue_pos, layout: NetworkLayout, shadowing) -> RadioSample:
    if not any(s.active for s in layout.sites):
        raise NoCoverageError("no active site")
    rsrp = rsrp_matrix(np.asarray(ue_pos, float).reshape(1, 2), layout, shadowing)
    serving, sinr, rsrq = radio_quantities(rsrp, layout)
    row = rsrp[0]
    order = np.argsort(-row, kind="stable")
    s = int(serving[0])
    ids = layout.site_ids
    neighbors = tuple(ids[i] for i in order if i != s and np.isfinite(row[i]))
    return RadioSample(row, rsrq[0], float(sinr[0]), ids[s], neighbors)


# --------------------------------------------------------------------------
# coverage maps


@dataclass(frozen=True)
class CoverageMap:
    xs: np.ndarray  # pixel centre x coordinates
    ys: np.ndarray
    sinr_db: np.ndarray  # (len(ys), len(xs)), row-major over y then x
    serving_rsrp_dbm: np.ndarray
    serving_id: np.ndarray

    def points(self) -> np.ndarray:
        gx, gy = np.meshgrid(self.xs, self.ys)
        return np.column_stack([gx.ravel(), gy.ravel()])

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["x_m", "y_m", "sinr_db"])
            for (x, y), v in zip(self.points(), self.sinr_db.ravel()):
                w.writerow([f"{x:.6f}", f"{y:.6f}", f"{v:.6f}"])


def grid_points(area, resolution_m: float):
    if not resolution_m > 0:
        raise InvalidInputError("resolution must be > 0")
    w, h = area
    nx = max(1, int(math.ceil(w / resolution_m - 1e-9)))
    ny = max(1, int(math.ceil(h / resolution_m - 1e-9)))
    xs = (np.arange(nx) + 0.5) * (w / nx)
    ys = (np.arange(ny) + 0.5) * (h / ny)
    return xs, ys


def coverage_map(layout: NetworkLayout, resolution_m: float, seed: int,
                 field: ShadowingField | None = None,
                 max_points: int = DEFAULT_MAX_FIELD_POINTS) -> CoverageMap:
    """Wideband SINR over a pixel grid of the area, one shadowing draw per seed."""
    xs, ys = grid_points(layout.area, resolution_m)
    if xs.size * ys.size > max_points:
        raise CapacityError(f"{xs.size * ys.size} pixels exceed the cap of {max_points}")
    if field is None:
        field = ShadowingField(layout, seed, max_points)
    gx, gy = np.meshgrid(xs, ys)
    pts = np.column_stack([gx.ravel(), gy.ravel()])
    rsrp = rsrp_matrix(pts, layout, field(pts))
    serving, sinr, _ = radio_quantities(rsrp, layout)
    ids = np.array(layout.site_ids)
    shape = (ys.size, xs.size)
    return CoverageMap(xs, ys, sinr.reshape(shape), rsrp.max(axis=1).reshape(shape), ids[serving].reshape(shape))


def nearest_site_ids(positions, layout: NetworkLayout) -> np.ndarray:
    """Geographic best-server partition (nearest site, lower id on ties), all sites considered."""
    pts = np.asarray(positions, dtype=float).reshape(-1, 2)
    d = np.sum((pts[:, None, :] - layout.positions[None, :, :]) ** 2, axis=-1)
    return np.array(layout.site_ids)[np.argmin(d, axis=1)]


def positions_array(points: Sequence) -> np.ndarray:
    return np.asarray(points, dtype=float).reshape(-1, 2)
