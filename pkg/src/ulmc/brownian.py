"""Exact sampling of the correlated Gaussian functionals of Brownian motion
used by the underdamped Langevin steppers, plus a composable/splittable
interval store for coupling runs at different step sizes to one path.

For an interval of length t starting at (local time) 0, the stored
functionals are

    H = int_0^t dB_s,          G = int_0^t e^{2s} dB_s,

with the exponential weight anchored at the interval's own origin.  Per
coordinate, (H, G) is a centered bivariate Gaussian with

    Var(H) = t,   Var(G) = (e^{4t}-1)/4,   Cov(H, G) = (e^{2t}-1)/2.

Anchoring the weight locally keeps every stored value finite no matter how
far the interval sits along the path; re-anchoring to another origin a is
the scalar factor e^{2a}, which is what `compose` applies.

RNG draw order is fixed for reproducibility: within one interval H is drawn
before G; partitions are sampled left to right.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .errors import UlmcError

__all__ = [
    "IntervalStats",
    "StepIncrements",
    "ParallelIncrements",
    "ExpEulerIncrements",
    "gh_covariance",
    "sample_interval",
    "compose",
    "split",
    "step_increments",
    "step_increments_batch",
    "exp_euler_increments",
    "parallel_step_increments",
    "BrownianPathStore",
]

# int_0^t e^{4s} ds - (int_0^t e^{2s} ds)^2 / t, the variance of G left
# after conditioning on H.  The closed form cancels two leading orders at
# small t, so below the crossover we use its Taylor series (series and
# expm1 form agree to ~1e-14 at the 0.05 crossover).
_RESIDUAL_SERIES = (
    1.0 / 3.0,
    2.0 / 3.0,
    34.0 / 45.0,
    28.0 / 45.0,
    43.0 / 105.0,
    214.0 / 945.0,
    1538.0 / 14175.0,
    652.0 / 14175.0,
    8194.0 / 467775.0,
    2836.0 / 467775.0,
    27308.0 / 14189175.0,
)
_SERIES_CUTOFF = 0.05


def gh_covariance(t):
    """(Var H, Cov HG, Var G) for an interval of length t, elementwise."""
    t = np.asarray(t, dtype=float)
    var_h = t
    cov = 0.5 * np.expm1(2.0 * t)
    var_g = 0.25 * np.expm1(4.0 * t)
    return var_h, cov, var_g


def _residual_var(t):
    """Var(G | H) = Var(G) - Cov(H,G)^2 / Var(H), stable down to t = 0."""
    t = np.asarray(t, dtype=float)
    exact_t = np.where(t > 0.0, t, 1.0)
    cov = 0.5 * np.expm1(2.0 * exact_t)
    exact = 0.25 * np.expm1(4.0 * exact_t) - cov * cov / exact_t
    series = np.zeros_like(t)
    for c in reversed(_RESIDUAL_SERIES):
        series = series * t + c
    series = series * t ** 3
    return np.where(t < _SERIES_CUTOFF, series, exact)


def _require_length(t):
    if not np.isfinite(t) or t <= 0.0:
        raise UlmcError(f"interval length must be positive and finite, got {t}")


@dataclass(frozen=True)
class IntervalStats:
    """Brownian functionals (H, G) of one interval, weight anchored locally.

    length 0 is the composition identity (H = G = 0).
    """

    length: float
    H: np.ndarray
    G: np.ndarray

    def __post_init__(self):
        if not np.isfinite(self.length) or self.length < 0.0:
            raise UlmcError(f"interval length must be >= 0, got {self.length}")


class StepIncrements(NamedTuple):
    """The three Gaussian integrals of one randomized-midpoint step.

    W1 = int_0^{ah} (1 - e^{-2(ah-s)}) dB_s
    W2 = int_0^{h}  (1 - e^{-2(h-s)})  dB_s
    W3 = int_0^{h}  e^{-2(h-s)}        dB_s
    """

    W1: np.ndarray
    W2: np.ndarray
    W3: np.ndarray


class ParallelIncrements(NamedTuple):
    """Joint increments for an R-midpoint step: W1 has shape (R, d)."""

    W1: np.ndarray
    W2: np.ndarray
    W3: np.ndarray


class ExpEulerIncrements(NamedTuple):
    """(W2, W3) pair used by the frozen-gradient exponential integrator."""

    W2: np.ndarray
    W3: np.ndarray


def _sample_gh(lengths, dim, rng):
    """Sample (H, G) rows for a batch of interval lengths.

    lengths has shape (k,); returns H, G of shape (k, dim).  Draws are
    consumed for every entry so the stream layout does not depend on the
    lengths; zero-length rows come out exactly zero.
    """
    lengths = np.asarray(lengths, dtype=float)
    k = lengths.shape[0]
    t = lengths[:, None]
    z_h = rng.standard_normal((k, dim))
    z_g = rng.standard_normal((k, dim))
    var_h, cov, _ = gh_covariance(t)
    h = np.sqrt(var_h) * z_h
    slope = np.divide(cov, t, out=np.ones_like(t), where=t > 0.0)
    g = slope * h + np.sqrt(_residual_var(t)) * z_g
    return h, g


def sample_interval(length, dim, rng) -> IntervalStats:
    """Draw the (H, G) functionals of a fresh interval of the given length."""
    _require_length(length)
    h, g = _sample_gh(np.array([float(length)]), dim, rng)
    return IntervalStats(length=float(length), H=h[0], G=g[0])


def compose(left: IntervalStats, right: IntervalStats) -> IntervalStats:
    """Concatenate adjacent intervals: H adds, G re-anchors the right part."""
    if left.length == 0.0:
        return IntervalStats(right.length, right.H.copy(), right.G.copy())
    if right.length == 0.0:
        return IntervalStats(left.length, left.H.copy(), left.G.copy())
    return IntervalStats(
        length=left.length + right.length,
        H=left.H + right.H,
        G=left.G + np.exp(2.0 * left.length) * right.G,
    )


def split(parent: IntervalStats, at, rng):
    """Refine an interval into two, conditioned on the parent functionals.

    Samples the left child from the exact conditional Gaussian given
    (H_parent, G_parent), then completes the right child through the
    composition constraints, so compose(left, right) returns the parent up
    to rounding.  Marginally each child is distributed exactly as a fresh
    interval of its length.
    """
    at = float(at)
    if not (0.0 < at < parent.length):
        raise UlmcError(
            f"split point must lie strictly inside (0, {parent.length}), got {at}"
        )
    tau, total = at, parent.length
    vh_l, c_l, vg_l = gh_covariance(tau)
    vh_p, c_p, vg_p = gh_covariance(total)

    # conditional law of (H_l, G_l) given (H_p, G_p): cross-covariance with
    # the parent equals the left marginal covariance
    sig_l = np.array([[vh_l, c_l], [c_l, vg_l]])
    sig_p = np.array([[vh_p, c_p], [c_p, vg_p]])
    gain = sig_l @ np.linalg.inv(sig_p)  # 2x2, shared by all coordinates
    cond = sig_l - gain @ sig_l
    cond = 0.5 * (cond + cond.T)
    # closed-form 2x2 Cholesky with clamping against rounding
    l11 = np.sqrt(max(cond[0, 0], 0.0))
    l21 = cond[1, 0] / l11 if l11 > 0.0 else 0.0
    l22 = np.sqrt(max(cond[1, 1] - l21 * l21, 0.0))

    dim = parent.H.shape[0]
    z = rng.standard_normal((2, dim))  # H draw first, then G
    mean_h = gain[0, 0] * parent.H + gain[0, 1] * parent.G
    mean_g = gain[1, 0] * parent.H + gain[1, 1] * parent.G
    h_left = mean_h + l11 * z[0]
    g_left = mean_g + l21 * z[0] + l22 * z[1]
    h_right = parent.H - h_left
    g_right = (parent.G - g_left) * np.exp(-2.0 * tau)
    left = IntervalStats(length=tau, H=h_left, G=g_left)
    right = IntervalStats(length=total - tau, H=h_right, G=g_right)
    return left, right


def _assemble(cells, starts, w1_end: Optional[float], end: float):
    """Linear combinations of per-cell (H, G) giving (W1, W2, W3).

    cells[i] = (H, G) of the consecutive cell starting at starts[i], the
    cells covering [0, end]; W1 sums the cells ending at or before w1_end.
    """
    w2 = 0.0
    w3 = 0.0
    w1 = 0.0
    for (h, g), start in zip(cells, starts):
        w3_weight = np.exp(-2.0 * (end - start))
        w2 += h - w3_weight * g
        w3 += w3_weight * g
        if w1_end is not None and start < w1_end - 1e-15:
            w1 += h - np.exp(-2.0 * (w1_end - start)) * g
    return w1, w2, w3


def step_increments(h, alpha, dim, rng) -> StepIncrements:
    """Sample (W1, W2, W3) for one step of length h with midpoint alpha*h.

    The interval [0, h] is partitioned at alpha*h; each nonempty cell draws
    its (H, G) pair, cells left to right.  For alpha in {0, 1} the empty
    cell contributes exact zeros.
    """
    _require_length(h)
    if not (0.0 <= alpha <= 1.0):
        raise UlmcError(f"midpoint fraction must be in [0, 1], got {alpha}")
    ah = alpha * h
    zeros = np.zeros(dim)
    cells = []
    starts = []
    if ah > 0.0:
        left = sample_interval(ah, dim, rng)
        cells.append((left.H, left.G))
        starts.append(0.0)
    if h - ah > 0.0:
        right = sample_interval(h - ah, dim, rng)
        cells.append((right.H, right.G))
        starts.append(ah)
    w1, w2, w3 = _assemble(cells, starts, ah if ah > 0.0 else None, h)
    if ah == 0.0:
        w1 = zeros
    return StepIncrements(W1=np.asarray(w1), W2=np.asarray(w2), W3=np.asarray(w3))


def step_increments_batch(h, alphas, dim, rng) -> StepIncrements:
    """Vectorized step_increments for per-chain midpoints.

    alphas has shape (k,); returned arrays have shape (k, dim).  The draw
    layout differs from k scalar calls (both cells are drawn as batches),
    but each row has exactly the scalar law.
    """
    _require_length(h)
    alphas = np.asarray(alphas, dtype=float)
    ah = alphas * h
    h_l, g_l = _sample_gh(ah, dim, rng)
    h_r, g_r = _sample_gh(h - ah, dim, rng)
    t = ah[:, None]
    w1 = h_l - np.exp(-2.0 * t) * g_l
    g_total = g_l + np.exp(2.0 * t) * g_r
    w3 = np.exp(-2.0 * h) * g_total
    w2 = (h_l + h_r) - w3
    return StepIncrements(W1=w1, W2=w2, W3=w3)


def exp_euler_increments(h, dim, rng) -> ExpEulerIncrements:
    """Sample the (W2, W3) pair for one frozen-gradient step of length h."""
    _require_length(h)
    cell = sample_interval(h, dim, rng)
    w3 = np.exp(-2.0 * h) * cell.G
    return ExpEulerIncrements(W2=cell.H - w3, W3=w3)


def parallel_step_increments(h, R, alphas, dim, rng) -> ParallelIncrements:
    """Sample (W1_1..W1_R, W2, W3) jointly consistent with one path.

    [0, h] is partitioned at the cell boundaries i*h/R interleaved with the
    midpoints alpha_i*h (alpha_i must lie in its cell [ (i-1)/R, i/R ]); one
    (H, G) pair is drawn per nonempty cell, left to right, and all outputs
    are linear combinations of those draws.
    """
    _require_length(h)
    R = int(R)
    if R < 1:
        raise UlmcError(f"midpoint count must be >= 1, got {R}")
    alphas = np.asarray(alphas, dtype=float)
    if alphas.shape != (R,):
        raise UlmcError(f"expected {R} midpoints, got shape {alphas.shape}")
    delta = h / R
    for i, a in enumerate(alphas):
        if not ((i) / R - 1e-12 <= a <= (i + 1) / R + 1e-12):
            raise UlmcError(
                f"midpoint {i + 1} must lie in [{i / R}, {(i + 1) / R}], got {a}"
            )

    mids = alphas * h
    boundaries = [0.0]
    for i in range(R):
        for point in (mids[i], (i + 1) * delta):
            if point > boundaries[-1] + 1e-15:
                boundaries.append(min(point, h))
    boundaries[-1] = h

    cells = []
    starts = []
    for a, b in zip(boundaries[:-1], boundaries[1:]):
        cell = sample_interval(b - a, dim, rng)
        cells.append((cell.H, cell.G))
        starts.append(a)

    zeros = np.zeros(dim)
    w1_list = []
    for i in range(R):
        w1, _, _ = _assemble(cells, starts, mids[i], h)
        w1_list.append(np.asarray(w1) if mids[i] > 0.0 else zeros.copy())
    _, w2, w3 = _assemble(cells, starts, None, h)
    return ParallelIncrements(
        W1=np.stack(w1_list), W2=np.asarray(w2), W3=np.asarray(w3)
    )


class BrownianPathStore:
    """One Brownian path over [0, T], refinable to any breakpoint on demand.

    The path is seeded as unit-length base cells (so stored values stay
    finite for total times up to 1e4 and beyond); `ensure` conditionally
    splits cells, and functionals over any sub-span are exact compositions
    of the current cells.  A store must be owned by a single consumer; it
    mutates on refinement.
    """

    def __init__(self, total_time, dim, rng, max_cell=1.0, snap_tol=1e-9):
        _require_length(total_time)
        self.total_time = float(total_time)
        self.dim = dim
        self.rng = rng
        self.snap_tol = snap_tol
        n_base = max(1, int(np.ceil(self.total_time / max_cell)))
        edges = np.linspace(0.0, self.total_time, n_base + 1)
        self._breaks = list(edges)
        self._cells = [
            sample_interval(b - a, dim, rng)
            for a, b in zip(edges[:-1], edges[1:])
        ]

    def breakpoints(self):
        return list(self._breaks)

    def _locate(self, t):
        """Index of an existing breakpoint equal to t (within snap_tol)."""
        i = bisect.bisect_left(self._breaks, t - self.snap_tol)
        if i < len(self._breaks) and abs(self._breaks[i] - t) <= self.snap_tol:
            return i
        return None

    def ensure(self, t):
        """Make t a breakpoint, conditionally splitting the containing cell."""
        if not (0.0 <= t <= self.total_time + self.snap_tol):
            raise UlmcError(f"time {t} outside [0, {self.total_time}]")
        existing = self._locate(t)
        if existing is not None:
            return existing
        i = bisect.bisect_left(self._breaks, t) - 1
        left_edge = self._breaks[i]
        left, right = split(self._cells[i], t - left_edge, self.rng)
        self._cells[i : i + 1] = [left, right]
        self._breaks.insert(i + 1, t)
        return i + 1

    def increments(self, t0, t1, t_mid=None):
        """(W1, W2, W3) of the step [t0, t1], with optional midpoint t_mid.

        Weights are anchored at t0, matching a step of length t1 - t0; W1 is
        None when no midpoint is requested.
        """
        if not (t0 < t1):
            raise UlmcError("need t0 < t1")
        if t_mid is not None and not (t0 - self.snap_tol <= t_mid <= t1):
            raise UlmcError("midpoint must lie inside the step")
        self.ensure(t0)
        self.ensure(t1)
        if t_mid is not None:
            self.ensure(t_mid)
        # locate after all refinements; each split shifts later indices
        i0 = self._locate(t0)
        i1 = self._locate(t1)
        im = self._locate(t_mid) if t_mid is not None else None
        cells = [(c.H, c.G) for c in self._cells[i0:i1]]
        starts = [b - self._breaks[i0] for b in self._breaks[i0:i1]]
        end = self._breaks[i1] - self._breaks[i0]
        w1_end = self._breaks[im] - self._breaks[i0] if im is not None else None
        w1, w2, w3 = _assemble(cells, starts, w1_end, end)
        if t_mid is None:
            w1 = None
        elif np.isscalar(w1) and w1 == 0.0:
            w1 = np.zeros(self.dim)
        return w1, np.asarray(w2), np.asarray(w3)
