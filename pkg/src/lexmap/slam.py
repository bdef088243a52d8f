"""Grid-based SLAM primitives: motion model, likelihood field, scan matching,
occupancy update, and the measurement weight used by the particle filter."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .core import ControlInput, Pose, RangeScan, logsumexp, wrap_angle


@dataclass(frozen=True)
class MotionNoise:
    """Odometry noise coefficients of the rotate-translate-rotate model."""

    a1: float = 0.01
    a2: float = 0.01
    a3: float = 0.01
    a4: float = 0.01

    def __post_init__(self):
        if min(self.a1, self.a2, self.a3, self.a4) < 0:
            raise ValueError("noise coefficients must be nonnegative")


@dataclass(frozen=True)
class LikelihoodFieldParams:
    sigma_hit: float = 0.1
    w_hit: float = 0.9
    w_rand: float = 0.1


DEFAULT_LF = LikelihoodFieldParams()


def sample_motion_model(u: ControlInput, x_prev: Pose, noise: MotionNoise,
                        rng: np.random.Generator) -> Pose:
    """Draw a successor pose from the odometry motion model."""
    r1 = u.rot1 - rng.normal(0.0, math.sqrt(noise.a1 * u.rot1 ** 2 + noise.a2 * u.trans ** 2))
    tr = u.trans - rng.normal(0.0, math.sqrt(noise.a3 * u.trans ** 2
                                             + noise.a4 * (u.rot1 ** 2 + u.rot2 ** 2)))
    r2 = u.rot2 - rng.normal(0.0, math.sqrt(noise.a1 * u.rot2 ** 2 + noise.a2 * u.trans ** 2))
    heading = x_prev.heading + r1
    return Pose(x_prev.x + tr * math.cos(heading),
                x_prev.y + tr * math.sin(heading),
                heading + r2)


def apply_motion(u: ControlInput, x_prev: Pose) -> Pose:
    """Noise-free odometry propagation."""
    heading = x_prev.heading + u.rot1
    return Pose(x_prev.x + u.trans * math.cos(heading),
                x_prev.y + u.trans * math.sin(heading),
                heading + u.rot2)


class OccupancyGrid:
    """Axis-aligned log-odds occupancy grid that grows on demand.

    The nearest-occupied distance transform is cached and refreshed every
    ``dt_refresh`` scan integrations, bounding the per-step cost.
    """

    def __init__(self, resolution: float = 0.1, l_free: float = 0.4,
                 l_occ: float = 0.85, l_max: float = 10.0, dt_refresh: int = 10,
                 origin: tuple[float, float] = (-2.0, -2.0),
                 shape: tuple[int, int] = (48, 48)):
        self.resolution = float(resolution)
        self.l_free = float(l_free)
        self.l_occ = float(l_occ)
        self.l_max = float(l_max)
        self.dt_refresh = int(dt_refresh)
        self.origin_x, self.origin_y = (float(origin[0]), float(origin[1]))
        self.log_odds = np.zeros(shape, dtype=np.float64)
        self._dist2: np.ndarray | None = None
        self._updates_since_dt = 0

    # -- geometry ----------------------------------------------------------
    @property
    def height(self) -> int:
        return self.log_odds.shape[0]

    @property
    def width(self) -> int:
        return self.log_odds.shape[1]

    def cell_of(self, x: float, y: float) -> tuple[int, int]:
        return (int(math.floor((x - self.origin_x) / self.resolution)),
                int(math.floor((y - self.origin_y) / self.resolution)))

    def contains(self, cx: int, cy: int) -> bool:
        return 0 <= cx < self.width and 0 <= cy < self.height

    def _grow_to(self, xs: np.ndarray, ys: np.ndarray, pad: int = 16) -> None:
        cx = np.floor((xs - self.origin_x) / self.resolution).astype(np.int64)
        cy = np.floor((ys - self.origin_y) / self.resolution).astype(np.int64)
        lo_x = min(0, int(cx.min()) - pad)
        lo_y = min(0, int(cy.min()) - pad)
        hi_x = max(self.width, int(cx.max()) + 1 + pad)
        hi_y = max(self.height, int(cy.max()) + 1 + pad)
        if lo_x == 0 and lo_y == 0 and hi_x == self.width and hi_y == self.height:
            return
        fresh = np.zeros((hi_y - lo_y, hi_x - lo_x), dtype=np.float64)
        fresh[-lo_y:-lo_y + self.height, -lo_x:-lo_x + self.width] = self.log_odds
        self.log_odds = fresh
        self.origin_x += lo_x * self.resolution
        self.origin_y += lo_y * self.resolution
        self._dist2 = None

    # -- occupancy ---------------------------------------------------------
    def occupied_mask(self) -> np.ndarray:
        return self.log_odds > 0.0

    def dist2_cells(self) -> np.ndarray:
        """Squared cell distance to the nearest occupied cell (possibly stale)."""
        if self._dist2 is None or self._dist2.shape != self.log_odds.shape:
            self._dist2 = kernels.squared_edt(self.occupied_mask())
            self._updates_since_dt = 0
        return self._dist2

    def has_occupied(self) -> bool:
        return bool((self.log_odds > 0.0).any())

    def integrate_scan(self, scan: RangeScan, pose: Pose) -> None:
        """Ray-traced log-odds update for one scan taken at ``pose``."""
        angles = scan.angles + pose.heading
        hit = np.isfinite(scan.ranges)
        reach = np.where(hit, scan.ranges, scan.max_range)
        ex = pose.x + reach * np.cos(angles)
        ey = pose.y + reach * np.sin(angles)
        self._grow_to(np.append(ex, pose.x), np.append(ey, pose.y))
        cx0, cy0 = self.cell_of(pose.x, pose.y)
        ecx = np.floor((ex - self.origin_x) / self.resolution).astype(np.int64)
        ecy = np.floor((ey - self.origin_y) / self.resolution).astype(np.int64)
        kernels.raytrace_update(self.log_odds, cx0, cy0, ecx, ecy,
                                hit.astype(np.bool_), self.l_free, self.l_occ,
                                self.l_max)
        self._updates_since_dt += 1
        if self._updates_since_dt >= self.dt_refresh:
            self._dist2 = None

    def clone(self) -> "OccupancyGrid":
        dup = OccupancyGrid(self.resolution, self.l_free, self.l_occ, self.l_max,
                            self.dt_refresh, (self.origin_x, self.origin_y),
                            self.log_odds.shape)
        dup.log_odds = self.log_odds.copy()
        dup._dist2 = None if self._dist2 is None else self._dist2.copy()
        dup._updates_since_dt = self._updates_since_dt
        return dup

    # -- export ------------------------------------------------------------
    def to_pgm(self) -> str:
        prob = 1.0 / (1.0 + np.exp(-self.log_odds))
        vals = np.rint(255 * prob).astype(int)
        lines = [f"P2", f"{self.width} {self.height}", "255"]
        for row in vals:
            lines.append(" ".join(str(v) for v in row))
        return "\n".join(lines) + "\n"

    def sidecar(self) -> dict:
        return {"resolution": self.resolution,
                "origin": [self.origin_x, self.origin_y, 0.0],
                "width": self.width, "height": self.height}

    def save(self, pgm_path, json_path) -> None:
        with open(pgm_path, "w") as fh:
            fh.write(self.to_pgm())
        with open(json_path, "w") as fh:
            json.dump(self.sidecar(), fh, indent=1)


def measurement_likelihood(scan: RangeScan, pose: Pose, grid: OccupancyGrid,
                           params: LikelihoodFieldParams = DEFAULT_LF) -> float:
    """Likelihood-field log measurement model summed over returned beams."""
    hit = np.isfinite(scan.ranges)
    if not hit.any():
        return 0.0
    angles = scan.angles[hit] + pose.heading
    ex = pose.x + scan.ranges[hit] * np.cos(angles)
    ey = pose.y + scan.ranges[hit] * np.sin(angles)
    gauss_coef = params.w_hit / (params.sigma_hit * math.sqrt(2.0 * math.pi))
    inv_two_sigma2 = 1.0 / (2.0 * params.sigma_hit ** 2)
    floor_term = params.w_rand / scan.max_range
    return float(kernels.likelihood_field_sum(
        grid.dist2_cells(), ex, ey, grid.origin_x, grid.origin_y,
        grid.resolution, gauss_coef, inv_two_sigma2, floor_term))


_XY_STEPS = (0.05, 0.025, 0.0125)
_TH_STEPS = (0.02, 0.01, 0.005)
_ROUNDS = 3


def scan_match(scan: RangeScan, x_init: Pose, grid: OccupancyGrid,
               params: LikelihoodFieldParams = DEFAULT_LF) -> Pose:
    """Greedy coordinate-descent pose refinement over a fixed schedule.

    Returns a pose whose likelihood is never below the initial pose's;
    with no occupied cell in the map the initial pose is returned as-is.
    """
    if not grid.has_occupied():
        return x_init
    best = x_init
    best_ll = measurement_likelihood(scan, best, grid, params)
    for _ in range(_ROUNDS):
        for dxy, dth in zip(_XY_STEPS, _TH_STEPS):
            for dx, dy, dt in ((dxy, 0.0, 0.0), (-dxy, 0.0, 0.0),
                               (0.0, dxy, 0.0), (0.0, -dxy, 0.0),
                               (0.0, 0.0, dth), (0.0, 0.0, -dth)):
                cand = Pose(best.x + dx, best.y + dy, wrap_angle(best.heading + dt))
                ll = measurement_likelihood(scan, cand, grid, params)
                if ll > best_ll:
                    best, best_ll = cand, ll
    return best


def slam_weight(scan: RangeScan, x_prev: Pose, u: ControlInput,
                grid: OccupancyGrid, j_samples: int, noise: MotionNoise,
                rng: np.random.Generator,
                params: LikelihoodFieldParams = DEFAULT_LF) -> float:
    """Monte-Carlo log marginal measurement likelihood over motion samples."""
    if j_samples < 1:
        raise ValueError("j_samples must be >= 1")
    lls = [measurement_likelihood(scan, sample_motion_model(u, x_prev, noise, rng),
                                  grid, params)
           for _ in range(j_samples)]
    return logsumexp(lls) - math.log(j_samples)


def update_grid(scan: RangeScan, pose: Pose, grid: OccupancyGrid) -> OccupancyGrid:
    """Integrate one scan into the grid (mutates and returns it)."""
    grid.integrate_scan(scan, pose)
    return grid


def rasterize_segments(grid: OccupancyGrid, segments, log_odds: float = 5.0) -> None:
    """Paint wall segments as occupied cells; test/simulation helper."""
    step = grid.resolution * 0.25
    for (x1, y1), (x2, y2) in segments:
        length = math.hypot(x2 - x1, y2 - y1)
        n = max(2, int(length / step) + 1)
        xs = np.linspace(x1, x2, n)
        ys = np.linspace(y1, y2, n)
        grid._grow_to(xs, ys)
        for x, y in zip(xs, ys):
            cx, cy = grid.cell_of(x, y)
            grid.log_odds[cy, cx] = log_odds
    grid._dist2 = None
