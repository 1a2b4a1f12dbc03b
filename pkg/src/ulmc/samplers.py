"""Discretized underdamped Langevin chains.

Steppers:
  rmm_step                 randomized midpoint update (two gradients/step)
  parallel_rmm_step        R-midpoint fixed-point variant (R*K gradients)
  euler_uld_step           plain Euler discretization
  exponential_euler_uld_step  frozen-gradient exponential integrator
  overdamped_lmc_step      first-order Langevin baseline (no velocity)

All steppers are pure functions of (state, randomness) with friction 2 and
inverse mass u = 1/L.  The (epsilon, kappa) -> (h, N) rules live in
`schedule` and `schedule_parallel`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .brownian import (
    ExpEulerIncrements,
    ParallelIncrements,
    StepIncrements,
    exp_euler_increments,
    parallel_step_increments,
    step_increments,
    step_increments_batch,
)
from .errors import ConfigError, ScheduleError, UlmcError
from .targets import GradientCounter, TargetSpec

__all__ = [
    "SamplerState",
    "Schedule",
    "RunResult",
    "EnsembleResult",
    "rmm_step",
    "rmm_run",
    "rmm_run_ensemble",
    "run_chain",
    "parallel_rmm_step",
    "parallel_rmm_run",
    "euler_uld_step",
    "exponential_euler_uld_step",
    "overdamped_lmc_step",
    "schedule",
    "schedule_parallel",
    "midpoint_coefficient",
    "exp_euler_coefficients",
]

# The accuracy guarantees behind the step-size rules assume h <= 1/20;
# steppers stay well-defined for larger steps, which error-vs-h
# experiments use.
H_MAX_SCHEDULE = 0.05
H_MAX_STEPPER = 1.0


@dataclass(frozen=True)
class SamplerState:
    """Chain position, velocity and step counter."""

    x: np.ndarray
    v: np.ndarray
    step: int = 0


@dataclass(frozen=True)
class Schedule:
    """Resolved run parameters: step size h, iterations N, u = 1/L.

    R is the midpoint count and K the fixed-point depth (1 and 2 for the
    serial algorithm).  C is the constant the step-size rule was called
    with, kept for provenance.
    """

    h: float
    N: int
    u: float
    R: int = 1
    K: int = 2
    C: float = 0.5

    def __post_init__(self):
        if not (0.0 < self.h <= H_MAX_SCHEDULE + 1e-12):
            raise ScheduleError(f"schedule step size must be in (0, 1/20], got {self.h}")
        if self.N < 0:
            raise ScheduleError(f"iteration count must be >= 0, got {self.N}")
        if self.u <= 0.0:
            raise ScheduleError(f"u must be positive, got {self.u}")
        if self.R < 1:
            raise ScheduleError(f"midpoint count must be >= 1, got {self.R}")
        if self.K < 2:
            raise ScheduleError(f"fixed-point depth must be >= 2, got {self.K}")

    @property
    def delta(self) -> float:
        return self.h / self.R


@dataclass
class RunResult:
    """Final state of a single chain plus audit information."""

    final: SamplerState
    grad_evals: int
    history: Optional[list] = None  # [(step, x, v)] when recording


@dataclass
class EnsembleResult:
    """Final (chains, d) positions/velocities and per-checkpoint moments."""

    x: np.ndarray
    v: np.ndarray
    grad_evals: int
    checkpoints: list = field(default_factory=list)  # [(step, mean, cov)]


def _check_step(h, state: SamplerState, target: TargetSpec):
    if not (0.0 < h < H_MAX_STEPPER):
        raise ScheduleError(f"step size must be in (0, {H_MAX_STEPPER}), got {h}")
    if state.x.shape[-1] != target.dim or state.v.shape != state.x.shape:
        raise UlmcError(
            f"state dimension {state.x.shape} does not match target d={target.dim}"
        )


def _rmm_update(x, v, h, alpha, grad_at, inc, u):
    """Shared randomized-midpoint arithmetic; alpha may be scalar or column.

    grad_at is called exactly twice: at x and at the midpoint estimate.
    """
    ah = alpha * h
    decay_mid = np.exp(-2.0 * ah)
    decay_full = math.exp(-2.0 * h)
    tail = np.exp(-2.0 * (h - ah))

    x_mid = (
        x
        + 0.5 * (1.0 - decay_mid) * v
        - 0.5 * u * (ah - 0.5 * (1.0 - decay_mid)) * grad_at(x)
        + math.sqrt(u) * inc.W1
    )
    grad_mid = grad_at(x_mid)
    x_new = (
        x
        + 0.5 * (1.0 - decay_full) * v
        - 0.5 * u * h * (1.0 - tail) * grad_mid
        + math.sqrt(u) * inc.W2
    )
    v_new = v * decay_full - u * h * tail * grad_mid + 2.0 * math.sqrt(u) * inc.W3
    return x_new, v_new


def rmm_step(
    state: SamplerState,
    target: TargetSpec,
    h: float,
    alpha: float,
    inc: StepIncrements,
) -> SamplerState:
    """One randomized-midpoint step of length h with midpoint fraction alpha.

    inc must have been generated for the same (h, alpha).  Uses exactly two
    gradient evaluations.
    """
    _check_step(h, state, target)
    if not (0.0 <= alpha <= 1.0):
        raise UlmcError(f"midpoint fraction must be in [0, 1], got {alpha}")
    u = 1.0 / target.smoothness
    x_new, v_new = _rmm_update(
        state.x, state.v, h, alpha, target.gradient, inc, u
    )
    return SamplerState(x=x_new, v=v_new, step=state.step + 1)


def _resolve_start(target: TargetSpec, x0):
    if x0 is not None:
        return np.asarray(x0, dtype=float)
    if target.minimizer is None:
        raise ConfigError("target has no minimizer and no start point was given")
    return np.asarray(target.minimizer, dtype=float)


def run_chain(
    target: TargetSpec,
    method: str,
    h: float,
    n_steps: int,
    seed,
    R: int = 1,
    K: int = 2,
    x0=None,
    record_every: Optional[int] = None,
) -> RunResult:
    """Drive one chain of any method for n_steps steps of size h.

    Methods: rmm, rmm_parallel, euler_uld, exp_euler_uld, lmc.  Starts at
    the target minimizer (or x0) with zero velocity.  Randomness per step is
    drawn in a fixed order (midpoint fractions first, then Gaussians), so a
    run is reproducible from the seed alone.  grad_evals reports the audited
    oracle count.
    """
    if method not in ("rmm", "rmm_parallel", "euler_uld", "exp_euler_uld", "lmc"):
        raise ConfigError(f"unknown method {method!r}")
    if n_steps < 0:
        raise ScheduleError(f"iteration count must be >= 0, got {n_steps}")
    counter = GradientCounter(target)
    counted = counter.wrapped()
    rng = np.random.default_rng(seed)
    x = _resolve_start(target, x0)
    state = SamplerState(x=x, v=np.zeros_like(x), step=0)
    history = [(0, state.x.copy(), state.v.copy())] if record_every else None
    cells = np.arange(R)
    for n in range(n_steps):
        if method == "rmm":
            alpha = rng.uniform()
            inc = step_increments(h, alpha, target.dim, rng)
            state = rmm_step(state, counted, h, alpha, inc)
        elif method == "rmm_parallel":
            alphas = (cells + rng.uniform(size=R)) / R
            incs = parallel_step_increments(h, R, alphas, target.dim, rng)
            state = parallel_rmm_step(state, counted, h, R, K, alphas, incs)
        elif method == "euler_uld":
            state = euler_uld_step(state, counted, h, rng)
        elif method == "exp_euler_uld":
            inc = exp_euler_increments(h, target.dim, rng)
            state = exponential_euler_uld_step(state, counted, h, inc)
        else:
            state = overdamped_lmc_step(state, counted, h, rng)
        if record_every and (n + 1) % record_every == 0:
            history.append((n + 1, state.x.copy(), state.v.copy()))
    return RunResult(final=state, grad_evals=counter.count, history=history)


def rmm_run(
    target: TargetSpec,
    sched: Schedule,
    seed,
    x0=None,
    record_every: Optional[int] = None,
) -> RunResult:
    """Run one randomized-midpoint chain under a resolved schedule."""
    return run_chain(
        target,
        "rmm",
        sched.h,
        sched.N,
        seed,
        x0=x0,
        record_every=record_every,
    )


def _ensemble_moments(x, v):
    z = np.concatenate([x, v], axis=1)
    mean = z.mean(axis=0)
    cov = np.cov(z, rowvar=False)
    return mean, cov


def rmm_run_ensemble(
    target: TargetSpec,
    sched: Schedule,
    chains: int,
    seed,
    x0=None,
    record_every: Optional[int] = None,
) -> EnsembleResult:
    """Propagate `chains` independent randomized-midpoint chains in lockstep.

    Statistically identical to `chains` rmm_run calls (independent midpoint
    fractions and increments per chain) but draws per step across the whole
    ensemble, which is much faster.  Records empirical (x, v) moments every
    record_every steps when requested.
    """
    counter = GradientCounter(target)
    counted = counter.wrapped()
    rng = np.random.default_rng(seed)
    x = np.tile(_resolve_start(target, x0), (chains, 1))
    v = np.zeros_like(x)
    u = 1.0 / target.smoothness
    result = EnsembleResult(x=x, v=v, grad_evals=0)
    for n in range(sched.N):
        alphas = rng.uniform(size=chains)
        inc = step_increments_batch(sched.h, alphas, target.dim, rng)
        x, v = _rmm_update(
            x, v, sched.h, alphas[:, None], counted.gradient, inc, u
        )
        if record_every and (n + 1) % record_every == 0:
            result.checkpoints.append((n + 1, *_ensemble_moments(x, v)))
    result.x, result.v = x, v
    result.grad_evals = counter.count
    return result


def midpoint_coefficient(theta, a, b):
    """int_a^b (1 - e^{-2(theta - s)}) ds for a <= b <= theta, in closed form."""
    b = min(b, theta)
    if b <= a:
        return 0.0
    return (b - a) - 0.5 * (math.exp(-2.0 * (theta - b)) - math.exp(-2.0 * (theta - a)))


def parallel_rmm_step(
    state: SamplerState,
    target: TargetSpec,
    h: float,
    R: int,
    K: int,
    alphas,
    incs: ParallelIncrements,
) -> SamplerState:
    """One R-midpoint step: K-1 fixed-point sweeps, then the combined update.

    Each sweep evaluates the gradient at the R current midpoint estimates
    (one batched oracle call, so the sweep parallelizes); the final update
    spends R more evaluations, R*K in total.  With R=1, K=2 this reproduces
    rmm_step exactly given the same underlying draws.
    """
    _check_step(h, state, target)
    R = int(R)
    K = int(K)
    if K < 2:
        raise ScheduleError(f"fixed-point depth must be >= 2, got {K}")
    alphas = np.asarray(alphas, dtype=float)
    if alphas.shape != (R,):
        raise UlmcError(f"expected {R} midpoint fractions, got {alphas.shape}")
    if incs.W1.shape != (R, target.dim):
        raise UlmcError("increments were generated for a different R or d")

    u = 1.0 / target.smoothness
    delta = h / R
    mids = alphas * h  # alpha_i * h, one per cell

    coeff = np.zeros((R, R))
    for i in range(R):
        for j in range(i + 1):
            coeff[i, j] = midpoint_coefficient(mids[i], j * delta, (j + 1) * delta)

    base = (
        state.x[None, :]
        + 0.5 * (1.0 - np.exp(-2.0 * mids))[:, None] * state.v[None, :]
        + math.sqrt(u) * incs.W1
    )
    estimates = np.tile(state.x, (R, 1))
    for _ in range(K - 1):
        grads = target.gradient(estimates)
        estimates = base - 0.5 * u * (coeff @ grads)

    grads = target.gradient(estimates)
    tail = np.exp(-2.0 * (h - mids))
    x_new = (
        state.x
        + 0.5 * (1.0 - math.exp(-2.0 * h)) * state.v
        - 0.5 * u * delta * ((1.0 - tail) @ grads)
        + math.sqrt(u) * incs.W2
    )
    v_new = (
        state.v * math.exp(-2.0 * h)
        - u * delta * (tail @ grads)
        + 2.0 * math.sqrt(u) * incs.W3
    )
    return SamplerState(x=x_new, v=v_new, step=state.step + 1)


def parallel_rmm_run(
    target: TargetSpec,
    sched: Schedule,
    seed,
    x0=None,
) -> RunResult:
    """Run one R-midpoint chain; alpha_i are drawn per cell, then increments."""
    return run_chain(
        target, "rmm_parallel", sched.h, sched.N, seed, R=sched.R, K=sched.K, x0=x0
    )


def euler_uld_step(state: SamplerState, target: TargetSpec, h, rng) -> SamplerState:
    """Plain Euler step: x advances with the old velocity."""
    _check_step(h, state, target)
    u = 1.0 / target.smoothness
    zeta = rng.standard_normal(state.x.shape)
    v_new = (
        (1.0 - 2.0 * h) * state.v
        - u * h * target.gradient(state.x)
        + 2.0 * math.sqrt(u * h) * zeta
    )
    x_new = state.x + h * state.v
    return SamplerState(x=x_new, v=v_new, step=state.step + 1)


def exp_euler_coefficients(h):
    """(x, v) gradient weights of the frozen-gradient exponential step.

    Closed forms of int_0^h (1 - e^{-2(h-s)}) ds and int_0^h e^{-2(h-s)} ds.
    """
    w_x = h - 0.5 * (1.0 - math.exp(-2.0 * h))
    w_v = 0.5 * (1.0 - math.exp(-2.0 * h))
    return w_x, w_v


def exponential_euler_uld_step(
    state: SamplerState, target: TargetSpec, h, inc: ExpEulerIncrements
) -> SamplerState:
    """Exponential integrator holding the gradient at the step start.

    One gradient evaluation; the linear kernel is integrated exactly.
    """
    _check_step(h, state, target)
    u = 1.0 / target.smoothness
    w_x, w_v = exp_euler_coefficients(h)
    grad = target.gradient(state.x)
    decay = math.exp(-2.0 * h)
    x_new = (
        state.x
        + 0.5 * (1.0 - decay) * state.v
        - 0.5 * u * w_x * grad
        + math.sqrt(u) * inc.W2
    )
    v_new = state.v * decay - u * w_v * grad + 2.0 * math.sqrt(u) * inc.W3
    return SamplerState(x=x_new, v=v_new, step=state.step + 1)


def overdamped_lmc_step(state: SamplerState, target: TargetSpec, h, rng) -> SamplerState:
    """First-order Langevin step; the velocity field is carried unchanged."""
    _check_step(h, state, target)
    zeta = rng.standard_normal(state.x.shape)
    x_new = state.x - h * target.gradient(state.x) + math.sqrt(2.0 * h) * zeta
    return SamplerState(x=x_new, v=state.v, step=state.step + 1)


def schedule(epsilon, kappa, C=0.5, L=1.0) -> Schedule:
    """Step size and iteration count reaching normalized W2 error epsilon.

    h = C * min(eps^{1/3} kappa^{-1/6} log^{-1/6}(1/eps^2),
                eps^{2/3} log^{-1/3}(1/eps^2)),
    clipped to 1/20, and N = ceil((2 kappa / h) log(20 / eps^2)).
    """
    _check_schedule_inputs(epsilon, kappa, C, L)
    log_term = math.log(1.0 / epsilon**2)
    h = C * min(
        epsilon ** (1.0 / 3.0) * kappa ** (-1.0 / 6.0) * log_term ** (-1.0 / 6.0),
        epsilon ** (2.0 / 3.0) * log_term ** (-1.0 / 3.0),
    )
    h = min(h, H_MAX_SCHEDULE)
    N = math.ceil(2.0 * kappa / h * math.log(20.0 / epsilon**2))
    return Schedule(h=h, N=N, u=1.0 / L, R=1, K=2, C=C)


def schedule_parallel(epsilon, kappa, C=0.5, L=1.0, c_R=1.0, c_K=3.0) -> Schedule:
    """Constant-step parallel schedule: R midpoints absorb the accuracy.

    h = min(C, 1/20) (which also guarantees (R * h/R)^4 <= 1/4),
    R = max(1, ceil(c_R sqrt(kappa)/eps log(1/eps))),
    K = max(2, ceil(c_K log(1/delta^4))) with delta = h/R,
    N = ceil((2 kappa / h) log(20 / eps^2)).
    """
    _check_schedule_inputs(epsilon, kappa, C, L)
    if c_R <= 0.0 or c_K <= 0.0:
        raise ScheduleError("schedule constants must be positive")
    h = min(C, H_MAX_SCHEDULE)
    R = max(1, math.ceil(c_R * math.sqrt(kappa) / epsilon * math.log(1.0 / epsilon)))
    delta = h / R
    K = max(2, math.ceil(c_K * math.log(1.0 / delta**4)))
    N = math.ceil(2.0 * kappa / h * math.log(20.0 / epsilon**2))
    return Schedule(h=h, N=N, u=1.0 / L, R=R, K=K, C=C)


def _check_schedule_inputs(epsilon, kappa, C, L):
    if not (0.0 < epsilon < 1.0):
        raise ScheduleError(f"epsilon must be in (0, 1), got {epsilon}")
    if kappa < 1.0:
        raise ScheduleError(f"kappa must be >= 1, got {kappa}")
    if C <= 0.0:
        raise ScheduleError(f"C must be positive, got {C}")
    if L <= 0.0:
        raise ScheduleError(f"L must be positive, got {L}")
