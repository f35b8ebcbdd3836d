"""Closed-form Brownian bridge machinery and its numerical oracles.

The diffusion clock runs on [epsilon, t_max] with unit diffusion. States
interpolate a clean endpoint x and a noisy endpoint y:

    mean(t)  = x * (1 - t) + y * t
    var(t)   = t * (1 - t)
    drift    = (y - x_t) / (1 - t)                       (bridge SDE)
    score    = -(x_t - mean(t)) / var(t)                 (Gaussian kernel)
    ode      = drift - score / 2                         (probability flow)

The probability-flow ODE conditioned on one endpoint pair has the exact
solution x(t1) = mean(t1) + (std(t1) / std(t0)) * (x(t0) - mean(t0)),
which this module exposes both in closed form (analytic_flow) and via
brute-force integrators (integrate_pf_ode, simulate_sde) used as oracles
against each other.
"""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class BridgeError(ValueError):
    """Raised for process times or shapes outside the valid domain."""


@dataclass(frozen=True)
class BridgeSchedule:
    """Process clock: endpoints, grid-warping exponent, and derived grid."""

    epsilon: float = 1e-3
    t_max: float = 0.999
    rho: float = 7.0
    n_steps: int = 30
    grid: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not 0.0 < self.epsilon < self.t_max < 1.0:
            raise BridgeError(
                f"need 0 < epsilon < t_max < 1, got ({self.epsilon}, {self.t_max})"
            )
        if self.rho < 1.0:
            raise BridgeError(f"rho must be >= 1, got {self.rho}")
        if self.n_steps < 2:
            raise BridgeError(f"n_steps must be >= 2, got {self.n_steps}")
        grid = time_grid(self.epsilon, self.t_max, self.rho, self.n_steps)
        grid.setflags(write=False)
        object.__setattr__(self, "grid", grid)


def time_grid(epsilon: float, t_max: float, rho: float, n_steps: int) -> np.ndarray:
    """Warped time grid t_i = (eps^(1/rho) + (i-1)/(N-1) * (T^(1/rho) - eps^(1/rho)))^rho.

    The endpoints are returned bit-exactly (i = 1 and i = N short-circuit
    to epsilon and t_max); interior points are evaluated in float64.
    """
    if not 0.0 < epsilon < t_max < 1.0:
        raise BridgeError(f"need 0 < epsilon < t_max < 1, got ({epsilon}, {t_max})")
    if rho < 1.0:
        raise BridgeError(f"rho must be >= 1, got {rho}")
    if n_steps < 2:
        raise BridgeError(f"n_steps must be >= 2, got {n_steps}")
    lo = epsilon ** (1.0 / rho)
    hi = t_max ** (1.0 / rho)
    ramp = np.arange(n_steps, dtype=np.float64) / (n_steps - 1)
    grid = (lo + ramp * (hi - lo)) ** rho
    grid[0] = epsilon
    grid[-1] = t_max
    if np.any(np.diff(grid) <= 0.0):
        raise BridgeError("time grid is not strictly increasing")
    return grid


@dataclass
class BridgeEndpoints:
    """Fixed ends of the bridge: clean data and its noisy counterpart."""

    x_clean: np.ndarray
    y_noisy: np.ndarray

    def __post_init__(self):
        self.x_clean = np.asarray(self.x_clean, dtype=np.float64)
        self.y_noisy = np.asarray(self.y_noisy, dtype=np.float64)
        if self.x_clean.shape != self.y_noisy.shape:
            raise BridgeError(
                f"endpoint shapes differ: {self.x_clean.shape} vs {self.y_noisy.shape}"
            )


@dataclass
class ProcessState:
    """A point x_t on a bridge trajectory, paired with its conditioning y."""

    x_t: np.ndarray
    y: np.ndarray
    t: float

    def __post_init__(self):
        self.x_t = np.asarray(self.x_t, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.float64)
        if self.x_t.shape != self.y.shape:
            raise BridgeError(
                f"state shapes differ: {self.x_t.shape} vs {self.y.shape}"
            )


def mean(endpoints: BridgeEndpoints, t: float) -> np.ndarray:
    """Linear interpolation x * (1 - t) + y * t."""
    if not 0.0 < t < 1.0:
        raise BridgeError(f"t must be in (0, 1), got {t}")
    return endpoints.x_clean * (1.0 - t) + endpoints.y_noisy * t


def std(t) -> float | np.ndarray:
    """sqrt(t * (1 - t)); zero at both ends."""
    t = np.asarray(t, dtype=np.float64)
    if np.any(t < 0.0) or np.any(t > 1.0):
        raise BridgeError(f"t must be in [0, 1], got {t}")
    out = np.sqrt(t * (1.0 - t))
    return float(out) if out.ndim == 0 else out


def perturb(endpoints: BridgeEndpoints, t: float, z: np.ndarray) -> ProcessState:
    """Sample x_t = mean(t) + std(t) * z from the perturbation kernel.

    z is one standard normal draw per plane element; passing the same z
    at two times yields the paired states used by consistency training.
    """
    z = np.asarray(z, dtype=np.float64)
    if z.shape != endpoints.x_clean.shape:
        raise BridgeError(
            f"noise shape {z.shape} != endpoint shape {endpoints.x_clean.shape}"
        )
    x_t = mean(endpoints, t) + std(t) * z
    return ProcessState(x_t=x_t, y=endpoints.y_noisy, t=t)


def sde_drift(state: ProcessState) -> np.ndarray:
    """Bridge drift (y - x_t) / (1 - t); the diffusion coefficient is 1."""
    if state.t >= 1.0:
        raise BridgeError(f"drift undefined at t >= 1, got {state.t}")
    return (state.y - state.x_t) / (1.0 - state.t)


def conditional_score(state: ProcessState, endpoints: BridgeEndpoints) -> np.ndarray:
    """Score of the Gaussian kernel: -(x_t - mean(t)) / var(t)."""
    if not 0.0 < state.t < 1.0:
        raise BridgeError(f"score undefined at t = {state.t}")
    var = state.t * (1.0 - state.t)
    return -(state.x_t - mean(endpoints, state.t)) / var


def pf_ode_drift(state: ProcessState, endpoints: BridgeEndpoints) -> np.ndarray:
    """Probability-flow drift: sde_drift - (1/2) * g^2 * score with g = 1."""
    return sde_drift(state) - 0.5 * conditional_score(state, endpoints)


def analytic_flow(
    state: ProcessState, endpoints: BridgeEndpoints, t1: float
) -> np.ndarray:
    """Exact conditional probability-flow solution from state.t to t1.

    Deviations from the mean line scale by the ratio std(t1) / std(t0).
    """
    t0 = state.t
    if not 0.0 < t0 < 1.0 or not 0.0 < t1 < 1.0:
        raise BridgeError(f"times must be in (0, 1), got ({t0}, {t1})")
    s0 = std(t0)
    if s0 == 0.0:
        raise BridgeError(f"std(t0) vanishes at t0 = {t0}")
    return mean(endpoints, t1) + (std(t1) / s0) * (state.x_t - mean(endpoints, t0))


def integrate_pf_ode(
    state: ProcessState,
    endpoints: BridgeEndpoints,
    t1: float,
    n_rk4_steps: int = 10_000,
) -> np.ndarray:
    """Classic fixed-step RK4 integration of pf_ode_drift from state.t to t1.

    Brute-force oracle for analytic_flow; t1 may be before state.t, in
    which case the step is negative.
    """
    if n_rk4_steps < 1:
        raise BridgeError(f"n_rk4_steps must be >= 1, got {n_rk4_steps}")
    h = (t1 - state.t) / n_rk4_steps
    x = state.x_t.copy()
    t = state.t

    def f(x, t):
        return pf_ode_drift(ProcessState(x_t=x, y=endpoints.y_noisy, t=t), endpoints)

    for _ in range(n_rk4_steps):
        k1 = f(x, t)
        k2 = f(x + 0.5 * h * k1, t + 0.5 * h)
        k3 = f(x + 0.5 * h * k2, t + 0.5 * h)
        k4 = f(x + h * k3, t + h)
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        t += h
    return x


@dataclass
class MomentProbe:
    """Empirical vs analytic moments of x_t at one probe time."""

    t: float
    empirical_mean: np.ndarray
    empirical_var: float
    analytic_mean: np.ndarray
    analytic_var: float
    n_paths: int
    seed: int

    @property
    def mean_err(self) -> float:
        return float(np.max(np.abs(self.empirical_mean - self.analytic_mean)))


# paths per RNG chunk; fixed so results do not depend on the worker count
_CHUNK_PATHS = 1000


def _simulate_chunk(
    endpoints: BridgeEndpoints,
    n_paths: int,
    n_substeps: int,
    seed: int,
    chunk_index: int,
    probe_steps: np.ndarray,
    times: np.ndarray,
    noise_scale: float,
) -> list[np.ndarray]:
    rng = np.random.default_rng(np.random.SeedSequence([seed, chunk_index]))
    shape = (n_paths,) + endpoints.x_clean.shape
    x = np.broadcast_to(endpoints.x_clean, shape).copy()
    y = endpoints.y_noisy
    probes = []
    probe_set = set(int(s) for s in probe_steps)
    if 0 in probe_set:
        probes.append(x.copy())
    for k in range(n_substeps):
        t = times[k]
        dt = times[k + 1] - times[k]
        drift = (y - x) / (1.0 - t)
        x = x + drift * dt
        if noise_scale != 0.0:
            x += noise_scale * np.sqrt(dt) * rng.standard_normal(shape)
        if (k + 1) in probe_set:
            probes.append(x.copy())
    return probes


def simulate_sde(
    endpoints: BridgeEndpoints,
    n_paths: int = 10_000,
    n_substeps: int = 1000,
    seed: int = 0,
    schedule: BridgeSchedule | None = None,
    probe_times: tuple[float, ...] = (0.25, 0.5, 0.75),
    noise_scale: float = 1.0,
    workers: int = 1,
) -> list[MomentProbe]:
    """Euler-Maruyama simulation of the bridge SDE on [epsilon, t_max].

    Paths start at x_clean at t = epsilon and are advanced with unit
    diffusion (noise_scale = 0 recovers the deterministic mean path).
    Returns empirical mean/variance at the grid times closest to each
    probe time, with the analytic moments evaluated at those same times.

    Path noise is drawn per fixed-size chunk from streams derived from
    (seed, chunk index), so the result is identical for any worker count.
    """
    if n_substeps < 1000:
        raise BridgeError(f"n_substeps must be >= 1000, got {n_substeps}")
    schedule = schedule or BridgeSchedule()
    times = np.linspace(schedule.epsilon, schedule.t_max, n_substeps + 1)
    probe_steps = np.array(
        [int(np.argmin(np.abs(times - p))) for p in probe_times], dtype=int
    )

    chunks = []
    remaining = n_paths
    idx = 0
    while remaining > 0:
        take = min(_CHUNK_PATHS, remaining)
        chunks.append((idx, take))
        remaining -= take
        idx += 1

    def run(chunk):
        chunk_index, paths = chunk
        return _simulate_chunk(
            endpoints, paths, n_substeps, seed, chunk_index,
            probe_steps, times, noise_scale,
        )

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            per_chunk = list(pool.map(run, chunks))
    else:
        per_chunk = [run(c) for c in chunks]

    probes = []
    for j, step in enumerate(probe_steps):
        t = float(times[step])
        samples = np.concatenate([pc[j] for pc in per_chunk], axis=0)
        emp_mean = samples.mean(axis=0)
        emp_var = (
            float(samples.var(axis=0, ddof=1).mean()) if n_paths > 1 else 0.0
        )
        probes.append(
            MomentProbe(
                t=t,
                empirical_mean=emp_mean,
                empirical_var=emp_var,
                analytic_mean=mean(endpoints, t),
                analytic_var=float(t * (1.0 - t)),
                n_paths=n_paths,
                seed=seed,
            )
        )
    return probes


def write_probe_csv(path: str | Path, probes: list[MomentProbe]) -> None:
    """CSV with columns (t, empirical_mean_err, empirical_var, analytic_var, n_paths, seed)."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(
            ["t", "empirical_mean_err", "empirical_var", "analytic_var", "n_paths", "seed"]
        )
        for p in probes:
            w.writerow(
                [repr(p.t), repr(p.mean_err), repr(p.empirical_var),
                 repr(p.analytic_var), p.n_paths, p.seed]
            )
