"""Flying drive testers: fleet placement, dispatch and on-site re-measurement."""
from __future__ import annotations

import csv
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InvalidInputError
from .radio_model import NetworkLayout, ShadowingField, grid_points, rsrp_matrix
from .scenario import MdtReport

OUTAGE_CONFIRMED = "outage_confirmed"
ATTACK_CONFIRMED = "attack_confirmed"
DEFAULT_CONFIRMATION_FLOOR_DBM = -120.0


@dataclass(frozen=True)
class FdtFleet:
    homes: tuple[tuple[float, float], ...]
    speed_mps: float = 10.0
    objective_m: float | None = None

    def __post_init__(self):
        homes = tuple((float(x), float(y)) for x, y in self.homes)
        object.__setattr__(self, "homes", homes)
        if not homes:
            raise InvalidInputError("a fleet needs at least one FDT")
        if not self.speed_mps > 0:
            raise InvalidInputError("speed must be positive")

    @property
    def k(self) -> int:
        return len(self.homes)


def area_grid(area, resolution_m: float) -> np.ndarray:
    xs, ys = grid_points(area, resolution_m)
    gx, gy = np.meshgrid(xs, ys)
    return np.column_stack([gx.ravel(), gy.ravel()])


def vertex_grid(area, resolution_m: float) -> np.ndarray:
    """Lattice over the area including its boundary and corners.

    With the corners on the lattice the farthest lattice point from any
    home is a corner, so the corner-based first pick is the exact one-FDT
    optimum.
    """
    if not resolution_m > 0:
        raise InvalidInputError("resolution must be > 0")
    w, h = area
    xs = np.linspace(0.0, w, max(1, int(np.ceil(w / resolution_m - 1e-9))) + 1)
    ys = np.linspace(0.0, h, max(1, int(np.ceil(h / resolution_m - 1e-9))) + 1)
    gx, gy = np.meshgrid(xs, ys)
    return np.column_stack([gx.ravel(), gy.ravel()])


def coverage_radius(homes, points) -> float:
    """Largest distance from any point to its nearest home."""
    h = np.asarray(homes, dtype=float).reshape(-1, 2)
    p = np.asarray(points, dtype=float).reshape(-1, 2)
    d = np.hypot(p[:, None, 0] - h[None, :, 0], p[:, None, 1] - h[None, :, 1])
    return float(d.min(axis=1).max())


def place_fdts(candidate_sites, k: int, area=(1000.0, 1000.0), grid_resolution_m: float = 25.0,
               speed_mps: float = 10.0) -> FdtFleet:
    """Greedy farthest-point placement of ``k`` FDTs on candidate sites.

    The first home is the candidate whose farthest area corner is nearest;
    each next home is the candidate farthest from the homes chosen so far
    (ties to the lower index).  The reported objective is the worst-case
    distance from a point of the boundary-inclusive area lattice to its
    nearest home.
    """
    cand = np.asarray(candidate_sites, dtype=float).reshape(-1, 2)
    if not 1 <= k <= cand.shape[0]:
        raise InvalidInputError(f"k must be in [1, {cand.shape[0]}], got {k}")
    w, h = area
    corners = np.array([[0.0, 0.0], [w, 0.0], [0.0, h], [w, h]])
    corner_d = np.hypot(cand[:, None, 0] - corners[None, :, 0], cand[:, None, 1] - corners[None, :, 1])
    chosen = [int(np.argmin(corner_d.max(axis=1)))]
    nearest = np.hypot(*(cand - cand[chosen[0]]).T)
    while len(chosen) < k:
        far = nearest.copy()
        far[chosen] = -1.0
        nxt = int(np.argmax(far))
        chosen.append(nxt)
        nearest = np.minimum(nearest, np.hypot(*(cand - cand[nxt]).T))
    homes = cand[chosen]
    objective = coverage_radius(homes, vertex_grid(area, grid_resolution_m))
    return FdtFleet(tuple(map(tuple, homes)), speed_mps, objective)


def dispatch(fleet: FdtFleet, target) -> tuple[int, float]:
    """Nearest home (lower index on ties) and its travel time in seconds."""
    h = np.asarray(fleet.homes)
    t = np.asarray(target, dtype=float)
    d = np.hypot(h[:, 0] - t[0], h[:, 1] - t[1])
    i = int(np.argmin(d))
    return i, float(d[i] / fleet.speed_mps)


@dataclass(frozen=True)
class VerificationResult:
    location: tuple[float, float]
    reported_rsrp_dbm: float
    measured_rsrp_dbm: float
    verdict: str
    travel_time_s: float = 0.0
    fdt_index: int = -1
    cell: int = -1


def verify_at(location, suspect_reports: Sequence[MdtReport], layout: NetworkLayout, field: ShadowingField,
              floor_dbm: float = DEFAULT_CONFIRMATION_FLOOR_DBM, fleet: FdtFleet | None = None) -> VerificationResult:
    """Re-measure at ``location`` against the true network state.

    The drone's UE measures the cell the suspects claim as serving (the most
    frequent claim; the strongest active cell when there are no suspects).
    A measurement below ``floor_dbm`` confirms the outage.
    """
    loc = (float(location[0]), float(location[1]))
    w, h = layout.area
    if not (0.0 <= loc[0] <= w and 0.0 <= loc[1] <= h):
        raise InvalidInputError(f"location {loc} outside the network area")
    pts = np.array([loc])
    rsrp = rsrp_matrix(pts, layout, field(pts))[0]
    if suspect_reports:
        cell = Counter(r.serving_cell for r in suspect_reports).most_common(1)[0][0]
        measured = float(rsrp[layout.index_of(cell)])
        reported = float(np.mean([r.serving_rsrp_dbm for r in suspect_reports]))
    else:
        best = int(np.argmax(rsrp))
        cell, measured, reported = layout.site_ids[best], float(rsrp[best]), float("nan")
    verdict = OUTAGE_CONFIRMED if measured < floor_dbm else ATTACK_CONFIRMED
    idx, travel = dispatch(fleet, loc) if fleet is not None else (-1, 0.0)
    return VerificationResult(loc, reported, measured, verdict, travel, idx, int(cell))


VERIFICATION_HEADER = ["x_m", "y_m", "fdt_index", "travel_time_s", "measured_rsrp_dbm", "verdict"]


def write_verification_log(results: Sequence[VerificationResult], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(VERIFICATION_HEADER)
        for r in results:
            measured = "-inf" if not np.isfinite(r.measured_rsrp_dbm) else f"{r.measured_rsrp_dbm:.6f}"
            w.writerow([f"{r.location[0]:.6f}", f"{r.location[1]:.6f}", r.fdt_index,
                        f"{r.travel_time_s:.6f}", measured, r.verdict])
