"""Closed-form quantities of the discrete Brownian bridge.

The bridge runs from ``z_0`` (post-event) at ``t = 0`` to ``z_T`` (pre-event)
at ``t = T`` with marginal ``N((1 - m_t) z_0 + m_t z_T, delta_t)`` where
``m_t = t / T`` and ``delta_t = 2 s (m_t - m_t**2)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import DegenerateStepError, InvalidConfigError, InvalidStepError


@dataclass(frozen=True)
class BridgeSchedule:
    T: int
    s: float = 1.0
    m: np.ndarray = field(init=False, repr=False, compare=False)
    delta: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if int(self.T) != self.T or self.T < 2:
            raise InvalidConfigError(f"T must be an integer >= 2, got {self.T}")
        if not np.isfinite(self.s) or self.s <= 0:
            raise InvalidConfigError(f"variance scale s must be positive, got {self.s}")
        m = np.arange(self.T + 1, dtype=np.float64) / self.T
        delta = 2.0 * self.s * (m - m * m)
        # exact zeros at the pinned endpoints
        delta[0] = delta[-1] = 0.0
        m.flags.writeable = False
        delta.flags.writeable = False
        object.__setattr__(self, "m", m)
        object.__setattr__(self, "delta", delta)

    def to_config(self) -> dict:
        return {"T": int(self.T), "s": float(self.s)}

    @classmethod
    def from_config(cls, cfg: dict) -> "BridgeSchedule":
        return cls(T=int(cfg["T"]), s=float(cfg["s"]))

    def check_step(self, t) -> None:
        t_arr = np.asarray(t)
        if np.any(t_arr < 0) or np.any(t_arr > self.T):
            raise InvalidStepError(f"step {t} outside [0, {self.T}]")


@dataclass(frozen=True)
class StepCoefficients:
    """Reverse-step weights: ``mean = c_b z_t + c_a z_a - c_eps eps``."""

    c_b: float
    c_a: float
    c_eps: float
    tilde_delta: float
    delta_trans: float


def build_schedule(T: int, s: float = 1.0) -> BridgeSchedule:
    return BridgeSchedule(T=T, s=s)


def _check_pair(sched: BridgeSchedule, t_hi: int, t_lo: int) -> None:
    if not (0 <= t_lo < t_hi <= sched.T):
        raise InvalidStepError(f"need 0 <= t_lo < t_hi <= T, got t_hi={t_hi}, t_lo={t_lo}, T={sched.T}")


def transition_variance(sched: BridgeSchedule, t_hi: int, t_lo: int) -> float:
    """Variance of ``z_{t_hi}`` given ``z_{t_lo}`` and ``z_T``.

    Chosen so that composing the kernel with the marginal at ``t_lo``
    reproduces the marginal variance at ``t_hi``.
    """
    _check_pair(sched, t_hi, t_lo)
    m, d = sched.m, sched.delta
    a = (1.0 - m[t_hi]) / (1.0 - m[t_lo])
    return max(float(d[t_hi] - d[t_lo] * a * a), 0.0)


def transition_mean_coefficients(sched: BridgeSchedule, t_hi: int, t_lo: int) -> tuple[float, float]:
    """``(a, b)`` such that ``E[z_{t_hi} | z_{t_lo}, z_T] = a z_{t_lo} + b z_T``."""
    _check_pair(sched, t_hi, t_lo)
    m = sched.m
    a = (1.0 - m[t_hi]) / (1.0 - m[t_lo])
    return float(a), float(m[t_hi] - a * m[t_lo])


def posterior_coefficients(sched: BridgeSchedule, t_hi: int, t_lo: int) -> StepCoefficients:
    """Coefficients of ``q(z_{t_lo} | z_{t_hi}, z_0, z_T)`` in noise-prediction form.

    Raises :class:`DegenerateStepError` at ``t_hi = T``, where every
    coefficient is 0/0; the sampler handles that step separately.
    """
    _check_pair(sched, t_hi, t_lo)
    m, d = sched.m, sched.delta
    if d[t_hi] <= 0.0:
        raise DegenerateStepError(f"delta[{t_hi}] = 0; posterior coefficients undefined (use the start rule)")
    d_trans = transition_variance(sched, t_hi, t_lo)
    ratio_lo = d[t_lo] / d[t_hi]
    ratio_trans = d_trans / d[t_hi]
    a = (1.0 - m[t_hi]) / (1.0 - m[t_lo])
    c_b = ratio_lo * a + ratio_trans * (1.0 - m[t_lo])
    c_a = m[t_lo] - m[t_hi] * a * ratio_lo
    c_eps = (1.0 - m[t_lo]) * ratio_trans
    tilde = max(d_trans * d[t_lo] / d[t_hi], 0.0)
    return StepCoefficients(float(c_b), float(c_a), float(c_eps), float(tilde), float(d_trans))


def inference_steps(T: int, S: int) -> list[int]:
    """Decreasing timesteps ``T = t'_S > ... > t'_0 = 0`` with ``S`` evenly spaced jumps."""
    if S < 2 or S > T:
        raise InvalidConfigError(f"need 2 <= S <= T, got S={S}, T={T}")
    raw = np.rint(np.linspace(T, 0, S + 1)).astype(int)
    steps: list[int] = []
    for t in raw.tolist():
        if not steps or t < steps[-1]:
            steps.append(t)
    return steps
