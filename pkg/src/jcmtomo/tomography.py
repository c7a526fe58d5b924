"""Linear inversion of measured moments and choice of the interaction time."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple, Union

import numpy as np
from scipy.optimize import minimize_scalar

from .errors import AllSingular
from .model import BlochVector, JcmConfig, MomentVector, TimeGrid
from .moments import (
    SINGULAR_THRESHOLD,
    DesignSystem,
    TimeNoise,
    averaged_determinant_grid,
    determinant,
    determinant_grid,
)

#: slack on the unit-ball test for inverted vectors
PHYSICAL_TOL = 1e-6


@dataclass(frozen=True)
class InversionResult:
    bloch: BlochVector
    norm: float
    physical: bool
    condition: float
    det: float


def invert_moments(moments: Union[MomentVector, np.ndarray], design: DesignSystem) -> InversionResult:
    """Bloch vector (Pauli components) from measured moments.

    Moments are read in the design's spin convention. Physicality is only
    reported; nothing is clipped.
    """
    design.require_inverse()
    v = moments.as_array() if isinstance(moments, MomentVector) else np.asarray(moments, dtype=float)
    s = design.m_inv @ (v - design.b) / design.convention.scale
    bloch = BlochVector.from_array(s)
    return InversionResult(
        bloch=bloch,
        norm=bloch.norm,
        physical=bloch.norm <= 1.0 + PHYSICAL_TOL,
        condition=design.cond,
        det=design.det,
    )


@dataclass(frozen=True, eq=False)
class DeterminantScan:
    """Determinant (or its time average) sampled on a grid.

    ``times`` are the interaction times, or the centers ``t0`` when
    ``averaged`` is set.
    """

    times: np.ndarray
    values: np.ndarray
    averaged: bool
    sigma: Optional[float] = None

    @property
    def argmax_index(self) -> int:
        return int(np.argmax(np.abs(self.values)))

    @property
    def argmax(self) -> float:
        return float(self.times[self.argmax_index])

    @property
    def max_abs(self) -> float:
        return float(np.max(np.abs(self.values)))

    def rows(self):
        return list(zip(self.times.tolist(), self.values.tolist()))


def scan_determinant(
    cfg: JcmConfig, grid: TimeGrid, noise: Optional[Union[TimeNoise, float]] = None
) -> DeterminantScan:
    """Evaluate D on the grid, or the averaged determinant when ``noise`` is given.

    For the averaged scan only the variance of ``noise`` is used; the grid
    supplies the centers.
    """
    times = grid.points()
    if noise is None:
        return DeterminantScan(times, determinant_grid(cfg, times), averaged=False)
    sigma = noise.sigma if isinstance(noise, TimeNoise) else float(noise)
    return DeterminantScan(times, averaged_determinant_grid(cfg, times, sigma), averaged=True, sigma=sigma)


def pick_time(cfg: JcmConfig, grid: TimeGrid, threshold: float = SINGULAR_THRESHOLD) -> float:
    """Interaction time maximizing |D|.

    The grid argmax (first occurrence on ties) is refined by a golden-section
    search between its neighbours.
    """
    scan = scan_determinant(cfg, grid)
    if scan.max_abs < threshold:
        raise AllSingular(f"max |D| = {scan.max_abs:.3g} over the grid is below {threshold:g}")
    i = scan.argmax_index
    times = scan.times
    if i == 0 or i == len(times) - 1:
        return float(times[i])
    best = abs(float(scan.values[i]))
    res = minimize_scalar(
        lambda t: -abs(determinant(cfg, t)),
        bracket=(times[i - 1], times[i], times[i + 1]),
        method="golden",
        options={"xtol": 1e-10},
    )
    t = float(res.x)
    if times[i - 1] <= t <= times[i + 1] and -res.fun >= best:
        return t
    return float(times[i])


@dataclass(frozen=True)
class CollapseRevival:
    collapse: Tuple[float, float]
    revival_time: float
    revival_value: float
    peak: float


def collapse_revival(
    times,
    values,
    collapse_frac: float = 0.1,
    revival_frac: float = 0.3,
    min_width_frac: float = 0.1,
) -> Optional[CollapseRevival]:
    """Find a collapse window followed by a revival in a |D| trace.

    The collapse is the longest run of samples after the global maximum
    where |D| stays below ``collapse_frac`` of that maximum, and it must span
    at least ``min_width_frac`` of the time range. The revival is the largest
    local maximum after the window, which must exceed ``revival_frac`` of the
    global maximum. Returns ``None`` when either is missing.
    """
    t = np.asarray(times, dtype=float)
    a = np.abs(np.asarray(values, dtype=float))
    if a.size < 3:
        return None
    peak = float(a.max())
    if peak == 0.0:
        return None
    low = a < collapse_frac * peak
    low[: int(np.argmax(a)) + 1] = False
    best = None
    start = None
    for k, flag in enumerate(np.append(low, False)):
        if flag and start is None:
            start = k
        elif not flag and start is not None:
            if best is None or k - start > best[1] - best[0]:
                best = (start, k)
            start = None
    if best is None or t[best[1] - 1] - t[best[0]] < min_width_frac * (t[-1] - t[0]):
        return None
    tail = a[best[1] :]
    interior = np.flatnonzero((tail[1:-1] >= tail[:-2]) & (tail[1:-1] >= tail[2:])) + 1
    if interior.size == 0:
        return None
    j = interior[np.argmax(tail[interior])]
    if tail[j] <= revival_frac * peak:
        return None
    k = best[1] + j
    return CollapseRevival((float(t[best[0]]), float(t[best[1] - 1])), float(t[k]), float(a[k]), peak)
