"""Identity and oracle checks run by ``bridgediff selfcheck``."""

from __future__ import annotations

import time
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from .bridge import forward_transition_sample, sample
from .data import make_pointcloud_dataset, make_scene_dataset
from .denoiser import DenoiserConfig, init_params, oracle_denoiser
from .evaluation import posterior_oracle
from .numerics import make_rng
from .schedule import build_schedule, posterior_coefficients, transition_mean_coefficients, transition_variance
from .training import loss


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0


def _flip_ceps(sched, t_hi, t_lo):
    c = posterior_coefficients(sched, t_hi, t_lo)
    return replace(c, c_eps=-c.c_eps)


FAULTS: dict[str, Callable] = {"flip-ceps": _flip_ceps}


def check_schedule_identities(T: int = 1000, tol: float = 1e-12) -> CheckResult:
    sched = build_schedule(T)
    m, d = sched.m, sched.delta
    worst_var = worst_mean = 0.0
    z_b, z_a = 0.7, -1.3
    for t in range(1, T):
        a, b = transition_mean_coefficients(sched, t, t - 1)
        worst_var = max(worst_var, abs(a * a * d[t - 1] + transition_variance(sched, t, t - 1) - d[t]))
        mean_lo = (1 - m[t - 1]) * z_b + m[t - 1] * z_a
        worst_mean = max(worst_mean, abs(a * mean_lo + b * z_a - ((1 - m[t]) * z_b + m[t] * z_a)))
    ok = worst_var < tol and worst_mean < tol
    return CheckResult("schedule identities", ok, f"variance err {worst_var:.2e}, mean err {worst_mean:.2e}")


def check_posterior_oracle(cases: int = 100, tol: float = 1e-6, seed: int = 0, coefficients_fn=posterior_coefficients) -> CheckResult:
    """Grid-Bayes moments vs the closed-form reverse step fed the exact network target."""
    rng = make_rng(seed, stream=11)
    worst = 0.0
    for _ in range(cases):
        T = int(rng.integers(4, 101))
        sched = build_schedule(T, s=float(rng.uniform(0.5, 2.0)))
        t = int(rng.integers(2, T))
        z_b, z_a = rng.normal(0, 2, size=2)
        m, d = sched.m, sched.delta
        z_t = (1 - m[t]) * z_b + m[t] * z_a + np.sqrt(d[t]) * rng.standard_normal()
        mean, var = posterior_oracle(sched, z_b, z_a, z_t, t)
        c = coefficients_fn(sched, t, t - 1)
        target = z_t - z_b
        closed = c.c_b * z_t + c.c_a * z_a - c.c_eps * target
        worst = max(worst, abs(mean - closed), abs(var - c.tilde_delta))
    return CheckResult("posterior oracle", worst < tol, f"max abs err {worst:.2e} over {cases} cases")


def check_marginal_law(T: int = 1000, n: int = 100_000, seed: int = 0) -> CheckResult:
    sched = build_schedule(T)
    rng = make_rng(seed, stream=12)
    z_b, z_a = 0.0, 2.0
    marks = sorted({max(1, int(round(f * T))) for f in (0.1, 0.25, 0.5, 0.75, 0.9)})
    z = np.full(n, z_b)
    za = np.full(n, z_a)
    worst = 0.0
    failed = []
    for t in range(1, marks[-1] + 1):
        z = forward_transition_sample(sched, z, za, t, rng)
        if t in marks:
            mu = (1 - sched.m[t]) * z_b + sched.m[t] * z_a
            var = sched.delta[t]
            zm = abs(z.mean() - mu) / np.sqrt(var / n)
            zv = abs(z.var(ddof=1) - var) / (var * np.sqrt(2.0 / n))
            worst = max(worst, zm, zv)
            if zm >= 3 or zv >= 3:
                failed.append(t)
    return CheckResult("marginal law (MC)", not failed, f"max |z| {worst:.2f} at 3-sigma bands" + (f", failed t={failed}" if failed else ""))


def check_oracle_sampling(T: int = 200, seed: int = 0) -> CheckResult:
    sched = build_schedule(T)
    rng = make_rng(seed, stream=13)
    z_b = rng.standard_normal((8, 2))
    z_a = rng.standard_normal((8, 2))
    den = oracle_denoiser(sched, z_b, z_a)
    err_full = np.abs(sample(sched, den, z_a, None, T).final - z_b).max()
    err_half = np.abs(sample(sched, den, z_a, None, T // 2).final - z_b).max()
    ok = err_full < 1e-8 and err_half < 1e-6
    return CheckResult("oracle sampling", ok, f"S=T err {err_full:.2e}, S=T/2 err {err_half:.2e}")


def gradient_check(n_params: int = 200, seed: int = 0, step: float = 1e-5, scenes: bool = False) -> tuple[float, int]:
    """Max relative error between analytic and central-difference gradients over random coordinates."""
    rng = make_rng(seed, stream=14)
    if scenes:
        data = make_scene_dataset(3, rng=rng)
        cfg = DenoiserConfig(latent_shape=(16, 16), patch=4, hidden=16, blocks=2, attn_dim=8, token_dim=8, time_dim=8)
    else:
        data = make_pointcloud_dataset(6, rng)
        data[0] = replace(data[0], cond=make_scene_dataset(1, H=8, W=8, rng=rng)[0].cond)
        cfg = DenoiserConfig(latent_shape=(2,), hidden=16, blocks=2, attn_dim=8, token_dim=8, time_dim=8)
    params = init_params(rng, cfg)
    # a non-zero head so every upstream weight receives gradient
    params["net.out.w"] = rng.standard_normal(params["net.out.w"].shape) * 0.5
    sched = build_schedule(50)
    value, grads, draws = loss(params, sched, data, rng, "uniform", cfg)
    names = [k for k in params if np.any(grads[k])]
    sizes = np.array([params[k].size for k in names], dtype=float)
    worst, checked, tries = 0.0, 0, 0
    while checked < n_params and tries < 10 * n_params:
        tries += 1
        k = names[rng.choice(len(names), p=np.sqrt(sizes) / np.sqrt(sizes).sum())]
        idx = tuple(int(rng.integers(0, d)) for d in params[k].shape)
        bumped = dict(params)
        bumped[k] = params[k].copy()
        bumped[k][idx] += step
        up = loss(bumped, sched, data, None, "uniform", cfg, draws)[0]
        bumped[k][idx] -= 2 * step
        down = loss(bumped, sched, data, None, "uniform", cfg, draws)[0]
        fd = (up - down) / (2 * step)
        an = grads[k][idx]
        scale = max(abs(fd), abs(an))
        if scale == 0.0:
            continue
        worst = max(worst, abs(fd - an) / scale)
        checked += 1
    return worst, checked


def check_gradients(n_params: int = 200) -> CheckResult:
    worst, checked = gradient_check(n_params)
    ok = worst < 1e-4 and checked >= n_params
    return CheckResult("gradient fidelity", ok, f"max rel err {worst:.2e} over {checked} parameters")


def check_endpoints(T: int = 50, chains: int = 100, seed: int = 0) -> CheckResult:
    sched = build_schedule(T)
    rng = make_rng(seed, stream=15)
    z_b = rng.standard_normal((chains, 2))
    z_a = rng.standard_normal((chains, 2))
    z = z_b.copy()
    for t in range(1, T + 1):
        z = forward_transition_sample(sched, z, z_a, t, rng)
    ends = bool(np.array_equal(z, z_a))
    trace = sample(sched, oracle_denoiser(sched, z_b, z_a), z_a, None, T, rng=rng, stochastic=True)
    starts = bool(np.array_equal(trace.steps[0][1], z_a)) and trace.steps[0][0] == T
    return CheckResult("endpoint pinning", ends and starts, f"chains end at z_a: {ends}; traces start at z_a: {starts}")


def run_selfcheck(fault: str | None = None) -> list[CheckResult]:
    coeffs = FAULTS[fault] if fault else posterior_coefficients
    checks = [
        check_schedule_identities,
        lambda: check_posterior_oracle(coefficients_fn=coeffs),
        check_marginal_law,
        check_oracle_sampling,
        check_gradients,
        check_endpoints,
    ]
    results = []
    for fn in checks:
        t0 = time.perf_counter()
        res = fn()
        res.seconds = time.perf_counter() - t0
        results.append(res)
    return results


def format_results(results: list[CheckResult]) -> str:
    width = max(len(r.name) for r in results)
    lines = [f"{'PASS' if r.passed else 'FAIL'}  {r.name:<{width}}  {r.detail}  ({r.seconds:.2f}s)" for r in results]
    return "\n".join(lines)
