"""Independent oracles and sample-quality metrics."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.spatial.distance import cdist, pdist

from .bridge import forward_transition_sample, marginal_mean
from .exceptions import GridError, InvalidInputError, InvalidStepError
from .schedule import BridgeSchedule


@dataclass
class MarginalReport:
    t: int
    n: int
    empirical_mean: float
    empirical_var: float
    expected_mean: float
    expected_var: float
    z_mean: float
    z_var: float
    passed: bool

    def to_dict(self) -> dict:
        return asdict(self)


def chain_samples(sched: BridgeSchedule, z_b: float, z_a: float, t: int, n: int, rng) -> np.ndarray:
    """``n`` draws of ``z_t`` obtained by composing ``t`` forward transitions from ``z_b``."""
    z = np.full(n, float(z_b))
    for k in range(1, t + 1):
        z = forward_transition_sample(sched, z, np.full(n, float(z_a)), k, rng)
    return z


def marginal_stats_check(sched, z_b: float, z_a: float, t: int, n: int, rng, samples=None, sigmas: float = 3.0) -> MarginalReport:
    """Compare Monte-Carlo moments of ``z_t`` with the closed form at ``sigmas`` standard errors.

    Samples default to composed transitions; pass ``samples`` to test any other
    sampler against the same bands.
    """
    if not 0 < t < sched.T:
        raise InvalidStepError(f"need 0 < t < T, got t={t}")
    x = chain_samples(sched, z_b, z_a, t, n, rng) if samples is None else np.asarray(samples, dtype=np.float64)
    n = len(x)
    mu = float(marginal_mean(sched, z_b, z_a, t))
    var = float(sched.delta[t])
    emp_mean = float(x.mean())
    emp_var = float(x.var(ddof=1))
    z_mean = (emp_mean - mu) / np.sqrt(var / n)
    z_var = (emp_var - var) / (var * np.sqrt(2.0 / n))
    passed = abs(z_mean) < sigmas and abs(z_var) < sigmas
    return MarginalReport(t, n, emp_mean, emp_var, mu, var, float(z_mean), float(z_var), bool(passed))


def posterior_oracle(sched, z_b: float, z_a: float, z_t: float, t: int, grid=None) -> tuple[float, float]:
    """Moments of ``z_{t-1} | z_t, z_0 = z_b, z_T = z_a`` by brute-force Bayes on a grid.

    The unnormalised density is ``N(z; mean_{t-1}, delta_{t-1}) * N(z_t; a z + b z_a, v)``
    with ``a, b, v`` taken straight from the one-step noising kernel. ``grid``
    is ``(lo, hi, n)``; by default it spans both factors at +-10 sd with
    20001 points.
    """
    if not 2 <= t < sched.T:
        raise InvalidStepError(f"grid posterior needs 2 <= t < T, got t={t}")
    m, d = sched.m, sched.delta
    a = (1 - m[t]) / (1 - m[t - 1])
    b = m[t] - a * m[t - 1]
    v = d[t] - d[t - 1] * a * a
    prior_mu = (1 - m[t - 1]) * z_b + m[t - 1] * z_a
    prior_sd = np.sqrt(d[t - 1])
    lik_mu = (z_t - b * z_a) / a
    lik_sd = np.sqrt(v) / a
    if grid is None:
        lo = min(prior_mu - 10 * prior_sd, lik_mu - 10 * lik_sd)
        hi = max(prior_mu + 10 * prior_sd, lik_mu + 10 * lik_sd)
        grid = (lo, hi, 20001)
    lo, hi, n = grid
    if n < 4001:
        raise GridError(f"grid needs at least 4001 points, got {n}")
    z = np.linspace(lo, hi, int(n))
    logp = -0.5 * (z - prior_mu) ** 2 / d[t - 1] - 0.5 * (z_t - a * z - b * z_a) ** 2 / v
    p = np.exp(logp - logp.max())
    p /= p.sum()
    edge = p[0] + p[-1]
    if edge > 1e-8:
        raise GridError(f"posterior mass at grid edges {edge:.2e} > 1e-8; widen the grid")
    mean = float(np.sum(p * z))
    return mean, float(np.sum(p * (z - mean) ** 2))


def median_bandwidth(*sets) -> float:
    pooled = np.concatenate([np.asarray(s, dtype=np.float64).reshape(len(s), -1) for s in sets])
    med = float(np.median(pdist(pooled))) if len(pooled) > 1 else 1.0
    return med if med > 0 else 1.0


def mmd(set_a, set_b, bandwidth: float | None = None, biased: bool = False) -> float:
    """Squared MMD with the RBF kernel ``exp(-|x - y|^2 / (2 bw^2))``.

    Unbiased by default: within-set diagonals are dropped, and for equal-size
    sets the cross diagonal too, so ``mmd(x, x) == 0``. ``bandwidth=None``
    uses the median pairwise distance of the pooled samples.
    """
    A = np.asarray(set_a, dtype=np.float64)
    B = np.asarray(set_b, dtype=np.float64)
    if len(A) == 0 or len(B) == 0:
        raise InvalidInputError("MMD needs two non-empty sample sets")
    A, B = A.reshape(len(A), -1), B.reshape(len(B), -1)
    if bandwidth is None:
        bandwidth = median_bandwidth(A, B)
    if bandwidth <= 0:
        raise InvalidInputError(f"bandwidth must be positive, got {bandwidth}")
    g = 1.0 / (2.0 * bandwidth**2)
    Kaa = np.exp(-g * cdist(A, A, "sqeuclidean"))
    Kbb = np.exp(-g * cdist(B, B, "sqeuclidean"))
    Kab = np.exp(-g * cdist(A, B, "sqeuclidean"))
    m, n = len(A), len(B)
    if biased:
        return float(Kaa.mean() + Kbb.mean() - 2.0 * Kab.mean())
    if m < 2 or n < 2:
        raise InvalidInputError("unbiased MMD needs at least two samples per set")
    aa = (Kaa.sum() - np.trace(Kaa)) / (m * (m - 1))
    bb = (Kbb.sum() - np.trace(Kbb)) / (n * (n - 1))
    if m == n:
        # paired U-statistic: also drop i == j from the cross term
        return float(aa + bb - 2.0 * (Kab.sum() - np.trace(Kab)) / (m * (m - 1)))
    return float(aa + bb - 2.0 * Kab.mean())


def mode_accuracy(samples, labels, pre=None) -> float:
    """Fraction of samples displaced in their label's direction (label 0: +x, label 1: -x).

    Displacement is ``sample - pre`` when ``pre`` is given, else the sample itself.
    """
    x = np.asarray(samples, dtype=np.float64)
    labels = np.asarray(labels)
    if len(x) == 0:
        raise InvalidInputError("mode accuracy of an empty sample set")
    dx = x[:, 0] - (np.asarray(pre, dtype=np.float64)[:, 0] if pre is not None else 0.0)
    predicted = np.where(dx > 0, 0, 1)
    return float(np.mean(predicted == labels))


def layout_iou(generated, pre, mask, threshold: float = 0.3) -> float:
    """IoU between ``|generated - pre| > threshold`` and the layout mask.

    An empty union scores 1.0 when both are empty.
    """
    generated, pre, mask = (np.asarray(v, dtype=np.float64) for v in (generated, pre, mask))
    if not (generated.shape == pre.shape and generated.shape[:2] == mask.shape):
        raise InvalidInputError(f"shape mismatch: {generated.shape}, {pre.shape}, {mask.shape}")
    if not 0 < threshold < 1:
        raise InvalidInputError("threshold must lie in (0, 1)")
    change = np.abs(generated - pre) > threshold
    if change.ndim == 3:
        change = change.any(axis=2)
    target = mask > 0
    union = np.logical_or(change, target).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(change, target).sum() / union)
