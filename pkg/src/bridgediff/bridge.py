"""Forward noising, reverse steps and the sampling loop of the bridge.

Latents are arrays whose leading axis (if any) is the batch; the step index
``t`` may be a scalar or a per-sample integer array.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .exceptions import DegenerateStepError, InvalidConfigError, InvalidStepError
from .numerics import check_same_shape
from .schedule import (
    BridgeSchedule,
    inference_steps,
    posterior_coefficients,
    transition_mean_coefficients,
    transition_variance,
)

# (z_t, t, z_a, cond) -> predicted network target
Denoiser = Callable[[np.ndarray, int, np.ndarray, object], np.ndarray]


def _per_sample(values: np.ndarray, t, like: np.ndarray) -> np.ndarray:
    """Gather ``values[t]`` and broadcast it against ``like`` along axis 0."""
    v = values[np.asarray(t)]
    if np.ndim(v) == 0:
        return v
    return v.reshape(v.shape + (1,) * (like.ndim - v.ndim))


def marginal_mean(sched: BridgeSchedule, z_b, z_a, t):
    m = _per_sample(sched.m, t, np.asarray(z_b))
    return (1.0 - m) * z_b + m * z_a


def forward_marginal_sample(sched, z_b, z_a, t, rng, eps=None):
    """Draw ``z_t ~ q(z_t | z_b, z_a)``; returns ``(z_t, eps)``."""
    z_b = np.asarray(z_b, dtype=np.float64)
    z_a = np.asarray(z_a, dtype=np.float64)
    check_same_shape(z_b, z_a, names=("z_b", "z_a"))
    sched.check_step(t)
    if eps is None:
        eps = rng.standard_normal(z_b.shape)
    m = _per_sample(sched.m, t, z_b)
    sd = np.sqrt(_per_sample(sched.delta, t, z_b))
    z_t = (1.0 - m) * z_b + m * z_a + sd * eps
    return z_t, eps


def forward_transition_sample(sched, z_prev, z_a, t: int, rng, noise=None):
    """One Markov step ``z_{t-1} -> z_t`` of the noising chain."""
    if not 1 <= t <= sched.T:
        raise InvalidStepError(f"transition step must be in [1, {sched.T}], got {t}")
    z_prev = np.asarray(z_prev, dtype=np.float64)
    check_same_shape(z_prev, np.asarray(z_a), names=("z_prev", "z_a"))
    a, b = transition_mean_coefficients(sched, t, t - 1)
    var = transition_variance(sched, t, t - 1)
    mean = a * z_prev + b * z_a
    if var == 0.0:
        return mean
    if noise is None:
        noise = rng.standard_normal(z_prev.shape)
    return mean + np.sqrt(var) * noise


def exact_epsilon(sched, z_t, z_b, z_a, t):
    """Invert the marginal sample for the noise that produced ``z_t``."""
    t_arr = np.asarray(t)
    if np.any(t_arr <= 0) or np.any(t_arr >= sched.T):
        raise DegenerateStepError(f"noise is undetermined at t in {{0, T}}, got {t}")
    sd = np.sqrt(_per_sample(sched.delta, t, np.asarray(z_t)))
    return (z_t - marginal_mean(sched, z_b, z_a, t)) / sd


def network_target(sched, z_b, z_a, t, eps):
    """Regression target ``m_t (z_a - z_b) + sqrt(delta_t) eps``; equals ``z_t - z_b``."""
    check_same_shape(np.asarray(z_b), np.asarray(z_a), np.asarray(eps), names=("z_b", "z_a", "eps"))
    t_arr = np.asarray(t)
    if np.any(t_arr <= 0) or np.any(t_arr > sched.T):
        raise InvalidStepError(f"target defined for 0 < t <= T, got {t}")
    z_b = np.asarray(z_b, dtype=np.float64)
    m = _per_sample(sched.m, t, z_b)
    sd = np.sqrt(_per_sample(sched.delta, t, z_b))
    return m * (z_a - z_b) + sd * eps


def reverse_step(sched, z_t, z_a, eps_pred, t_hi: int, t_lo: int, rng=None, stochastic: bool = False, coefficients=None):
    """``z_{t_lo} = c_b z_t + c_a z_a - c_eps eps_pred (+ sqrt(tilde_delta) noise)``."""
    coef = coefficients or posterior_coefficients(sched, t_hi, t_lo)
    z = coef.c_b * z_t + coef.c_a * z_a - coef.c_eps * eps_pred
    if stochastic and coef.tilde_delta > 0.0:
        if rng is None:
            raise ValueError("stochastic reverse step needs an rng")
        z = z + np.sqrt(coef.tilde_delta) * rng.standard_normal(np.shape(z))
    return z


def start_step(sched, z_a, eps_pred, t_lo: int, rng=None, stochastic: bool = False):
    """First reverse step out of ``t = T``.

    With ``z_T = z_a`` pinned the posterior of ``z_{t_lo}`` reduces to the
    marginal, evaluated at the estimate ``z_0 = z_T - eps_pred``.
    """
    z0_hat = z_a - eps_pred
    m = sched.m[t_lo]
    z = (1.0 - m) * z0_hat + m * z_a
    if stochastic and sched.delta[t_lo] > 0.0:
        if rng is None:
            raise ValueError("stochastic reverse step needs an rng")
        z = z + np.sqrt(sched.delta[t_lo]) * rng.standard_normal(np.shape(z))
    return z


@dataclass
class SampleTrace:
    steps: list  # list of (t, z) pairs, first at t = T, last at t = 0
    final: np.ndarray

    @property
    def timesteps(self) -> list[int]:
        return [t for t, _ in self.steps]

    def stack(self) -> np.ndarray:
        return np.stack([z for _, z in self.steps])


def _snapshot_indices(n_states: int, limit: int) -> set[int]:
    if limit >= n_states:
        return set(range(n_states))
    return set(np.rint(np.linspace(0, n_states - 1, limit)).astype(int).tolist())


def sample(
    sched: BridgeSchedule,
    denoiser: Denoiser,
    z_a,
    cond=None,
    S: int | None = None,
    rng=None,
    stochastic: bool = False,
    full_trace: bool = False,
    max_snapshots: int = 32,
    coefficients_fn=posterior_coefficients,
) -> SampleTrace:
    """Run the reverse chain from ``z_T = z_a`` down to ``t = 0``."""
    S = sched.T if S is None else S
    steps = inference_steps(sched.T, S)
    if max_snapshots < 2:
        raise InvalidConfigError("max_snapshots must be >= 2")
    keep = _snapshot_indices(len(steps), len(steps) if full_trace else max_snapshots)

    z_a = np.asarray(z_a, dtype=np.float64)
    z = z_a.copy()
    trace = [(steps[0], z.copy())]
    for i, (t_hi, t_lo) in enumerate(zip(steps[:-1], steps[1:]), start=1):
        eps_pred = denoiser(z, t_hi, z_a, cond)
        if t_hi == sched.T:
            z = start_step(sched, z_a, eps_pred, t_lo, rng, stochastic)
        else:
            coef = coefficients_fn(sched, t_hi, t_lo)
            z = reverse_step(sched, z, z_a, eps_pred, t_hi, t_lo, rng, stochastic, coefficients=coef)
        if i in keep:
            trace.append((t_lo, z.copy()))
    return SampleTrace(steps=trace, final=z)
