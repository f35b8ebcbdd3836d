"""Numerical verification suites for every closed-form expression.

Each suite pits a closed-form implementation against an independent
brute-force route: extended-precision re-evaluation for the time grid,
Euler-Maruyama Monte Carlo for the bridge moments, fixed-step RK4 for the
probability-flow solution, and central finite differences for the loss
gradients. Suites return per-check results suitable for a pass/fail table.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from decimal import Decimal, getcontext
from pathlib import Path

import numpy as np
import torch

from . import bridge
from .model import ModelConfig, init_model
from .training import build_pair, consistency_loss

SUITES = ("moments", "pfode", "grad", "schedule")


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str


def _dec_pow(x: Decimal, p: Decimal) -> Decimal:
    return (p * x.ln()).exp()


def schedule_suite(
    epsilon: float = 1e-3, t_max: float = 0.999, rho: float = 7.0, n_steps: int = 30
) -> list[CheckResult]:
    """Grid endpoints bit-exact; interior point vs 50-digit re-evaluation."""
    grid = bridge.time_grid(epsilon, t_max, rho, n_steps)
    results = [
        CheckResult(
            "schedule.t1_exact", grid[0] == epsilon,
            f"t_1 = {grid[0]!r}, epsilon = {epsilon!r}",
        ),
        CheckResult(
            "schedule.tN_exact", grid[-1] == t_max,
            f"t_N = {grid[-1]!r}, t_max = {t_max!r}",
        ),
        CheckResult(
            "schedule.strictly_increasing", bool(np.all(np.diff(grid) > 0)),
            f"min diff = {np.min(np.diff(grid)):.3e}",
        ),
    ]
    getcontext().prec = 50
    inv_rho = Decimal(1) / Decimal(repr(rho))
    lo = _dec_pow(Decimal(repr(epsilon)), inv_rho)
    hi = _dec_pow(Decimal(repr(t_max)), inv_rho)
    t2_ref = _dec_pow(lo + (hi - lo) / (n_steps - 1), Decimal(repr(rho)))
    rel = abs(Decimal(repr(float(grid[1]))) - t2_ref) / t2_ref
    results.append(
        CheckResult(
            "schedule.t2_vs_extended_precision", float(rel) < 1e-12,
            f"t_2 = {grid[1]!r}, 50-digit value = {t2_ref}, rel err = {float(rel):.3e}",
        )
    )
    return results


def moments_suite(
    seed: int = 0,
    n_paths: int = 10_000,
    n_substeps: int = 1000,
    csv_dir: str | Path | None = None,
) -> list[CheckResult]:
    """Euler-Maruyama moments vs the closed-form mean and variance."""
    endpoints = bridge.BridgeEndpoints(x_clean=np.float64(1.0), y_noisy=np.float64(3.0))
    probes = bridge.simulate_sde(
        endpoints, n_paths=n_paths, n_substeps=n_substeps, seed=seed
    )
    if csv_dir:
        bridge.write_probe_csv(Path(csv_dir) / "moments.csv", probes)
    results = []
    for p in probes:
        se = np.sqrt(p.analytic_var / p.n_paths)
        mean_ok = p.mean_err < 3.0 * se
        results.append(
            CheckResult(
                f"moments.mean_t{p.t:.2f}", bool(mean_ok),
                f"|emp - analytic| = {p.mean_err:.3e}, 3 SE = {3 * se:.3e}",
            )
        )
        var_rel = abs(p.empirical_var / p.analytic_var - 1.0)
        results.append(
            CheckResult(
                f"moments.var_t{p.t:.2f}", bool(var_rel < 0.05),
                f"emp var = {p.empirical_var:.5f}, analytic = {p.analytic_var:.5f}, "
                f"rel = {var_rel:.3%}",
            )
        )
    return results


def pfode_suite(
    seed: int = 0, n_rk4_steps: int = 10_000, csv_dir: str | Path | None = None
) -> list[CheckResult]:
    """Fixed-step RK4 vs the exact conditional probability-flow solution."""
    rng = np.random.default_rng(seed)
    shape = (2, 9, 8)
    endpoints = bridge.BridgeEndpoints(
        x_clean=rng.standard_normal(shape), y_noisy=rng.standard_normal(shape)
    )
    results = []

    # forward leg through the variance peak
    t0, t1 = 0.25, 0.75
    state = bridge.perturb(endpoints, t0, rng.standard_normal(shape))
    exact = bridge.analytic_flow(state, endpoints, t1)
    numeric = bridge.integrate_pf_ode(state, endpoints, t1, n_rk4_steps)
    rel = float(np.linalg.norm(numeric - exact) / np.linalg.norm(exact))
    results.append(
        CheckResult(
            "pfode.rk4_vs_analytic_forward", rel < 1e-6,
            f"rel err = {rel:.3e} at {n_rk4_steps} RK4 steps",
        )
    )

    # backward leg: terminal-time state must contract onto the clean end
    sched = bridge.BridgeSchedule()
    t_hi, t_lo = sched.t_max, sched.epsilon
    z = rng.standard_normal(shape)
    state_hi = bridge.perturb(endpoints, t_hi, z)
    dev_hi = state_hi.x_t - bridge.mean(endpoints, t_hi)
    back = bridge.integrate_pf_ode(state_hi, endpoints, t_lo, n_rk4_steps)
    back_fine = bridge.integrate_pf_ode(state_hi, endpoints, t_lo, 2 * n_rk4_steps)
    err_est = max(float(np.linalg.norm(back - back_fine)) * 16.0 / 15.0, 1e-12)

    ratio = bridge.std(t_lo) / bridge.std(t_hi)
    dev_lo = back - bridge.mean(endpoints, t_lo)
    contraction_gap = float(np.linalg.norm(dev_lo - ratio * dev_hi))
    results.append(
        CheckResult(
            "pfode.backward_contraction", contraction_gap <= 2.0 * err_est,
            f"|dev(eps) - ratio*dev(T)| = {contraction_gap:.3e}, "
            f"2x integration err = {2 * err_est:.3e}",
        )
    )

    # the landing point is the clean endpoint up to the contracted deviation
    land_err = float(np.linalg.norm(back - endpoints.x_clean))
    bound = (
        ratio * float(np.linalg.norm(dev_hi))
        + t_lo * float(np.linalg.norm(endpoints.y_noisy - endpoints.x_clean))
        + 2.0 * err_est
    )
    results.append(
        CheckResult(
            "pfode.lands_on_clean_state", land_err <= bound,
            f"|x(eps) - x_clean| = {land_err:.3e}, bound = {bound:.3e}",
        )
    )

    if csv_dir:
        mu1 = bridge.mean(endpoints, t1)
        probe = bridge.MomentProbe(
            t=t1,
            empirical_mean=numeric,
            empirical_var=float(np.mean((numeric - mu1) ** 2)),
            analytic_mean=exact,
            analytic_var=float(np.mean((exact - mu1) ** 2)),
            n_paths=1,
            seed=seed,
        )
        bridge.write_probe_csv(Path(csv_dir) / "pfode.csv", [probe])
    return results


def grad_suite(
    seed: int = 0,
    fd_step: float = 1e-5,
    tol: float = 1e-4,
    base_width: int = 6,
    elements_per_tensor: int | None = None,
) -> list[CheckResult]:
    """Autograd vs central finite differences on every trainable tensor.

    Runs the full consistency loss in double precision on a (2, 9, 8)
    instance. With elements_per_tensor set, only a random subset of each
    tensor is probed (the full sweep is the acceptance-grade run).
    """
    cfg = ModelConfig(base_width=base_width, time_embed_dim=16)
    model = init_model(cfg, seed=seed, dtype=torch.float64)
    target = init_model(cfg, seed=seed + 1, dtype=torch.float64)
    # probe a non-degenerate point in parameter space: the zero head blocks
    # all upstream gradients, and freshly initialized weights attenuate the
    # deep path until its gradients sink below the finite-difference noise
    # floor, so re-scale to roughly unit per-layer gain and fill the head
    gen = torch.Generator().manual_seed(seed + 2)
    with torch.no_grad():
        for m in (model, target):
            for p in (m.net.head.weight, m.net.head.bias):
                p.copy_(
                    torch.empty(p.shape, dtype=torch.float32).uniform_(
                        -0.5, 0.5, generator=gen
                    )
                )
            for name, p in m.named_parameters():
                if name.endswith("weight") and p.dim() > 1:
                    p.mul_(math.sqrt(3.0))

    rng = np.random.default_rng(seed)
    shape = (1, 2, 9, 8)
    x = torch.from_numpy(rng.standard_normal(shape))
    y = torch.from_numpy(rng.standard_normal(shape))
    z = torch.from_numpy(rng.standard_normal(shape))
    sched = bridge.BridgeSchedule()
    n = sched.n_steps - 1  # terminal interval, where the output scale is largest
    x_n, x_n1 = build_pair(x, y, n, sched.grid, z)
    t_n, t_n1 = float(sched.grid[n - 1]), float(sched.grid[n])

    loss = consistency_loss(model, target, x_n, x_n1, y, t_n, t_n1)
    loss.backward()

    # the target branch is constant in theta, so each probe is one forward
    with torch.no_grad():
        reference = target(x_n, y, t_n)

    def loss_at() -> float:
        with torch.no_grad():
            online = model(x_n1, y, t_n1)
            return float(torch.mean((online - reference) ** 2))

    results = []
    for name, p in model.named_parameters():
        flat = p.data.view(-1)
        grad = p.grad.view(-1)
        if elements_per_tensor is None or elements_per_tensor >= flat.numel():
            idx = range(flat.numel())
        else:
            idx = rng.choice(flat.numel(), size=elements_per_tensor, replace=False)
        fd = []
        an = []
        for i in idx:
            orig = float(flat[i])
            flat[i] = orig + fd_step
            up = loss_at()
            flat[i] = orig - fd_step
            down = loss_at()
            flat[i] = orig
            fd.append((up - down) / (2.0 * fd_step))
            an.append(float(grad[i]))
        fd_v, an_v = np.asarray(fd), np.asarray(an)
        denom = max(float(np.linalg.norm(fd_v)), 1e-12)
        rel = float(np.linalg.norm(an_v - fd_v)) / denom
        results.append(
            CheckResult(
                f"grad.{name}", rel < tol,
                f"rel err = {rel:.3e} over {len(fd)} elements",
            )
        )
    return results


def run_suite(
    name: str, seed: int = 0, csv_dir: str | Path | None = None
) -> list[CheckResult]:
    if name == "schedule":
        return schedule_suite()
    if name == "moments":
        return moments_suite(seed=seed, csv_dir=csv_dir)
    if name == "pfode":
        return pfode_suite(seed=seed, csv_dir=csv_dir)
    if name == "grad":
        return grad_suite(seed=seed)
    raise ValueError(f"unknown suite {name!r}; choose from {SUITES}")


def format_results(results: list[CheckResult]) -> str:
    width = max(len(r.name) for r in results)
    lines = [
        f"{r.name:<{width}}  {'PASS' if r.passed else 'FAIL'}  {r.detail}"
        for r in results
    ]
    n_fail = sum(not r.passed for r in results)
    lines.append(
        f"{len(results)} checks, {len(results) - n_fail} passed, {n_fail} failed"
    )
    return "\n".join(lines)
