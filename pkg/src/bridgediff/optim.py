from __future__ import annotations

import numpy as np


def global_norm(grads: dict[str, np.ndarray]) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))


def clip_by_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> tuple[dict, float]:
    norm = global_norm(grads)
    if max_norm > 0 and norm > max_norm:
        factor = max_norm / norm
        grads = {k: g * factor for k, g in grads.items()}
    return grads, norm


class Adam:
    """Adaptive-moment update with bias correction and no weight decay.

    Moments live in plain dicts keyed like the parameters so they can be
    checkpointed alongside them.
    """

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps

    def init_state(self, params: dict[str, np.ndarray]) -> tuple[dict, dict]:
        return ({k: np.zeros_like(v) for k, v in params.items()}, {k: np.zeros_like(v) for k, v in params.items()})

    def update(self, params, grads, m, v, step: int):
        """Apply update number ``step`` (1-based); returns new ``(params, m, v)``."""
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**step
        c2 = 1.0 - b2**step
        new_p, new_m, new_v = {}, {}, {}
        for k, p in params.items():
            g = grads.get(k)
            if g is None:
                new_p[k], new_m[k], new_v[k] = p, m[k], v[k]
                continue
            mk = b1 * m[k] + (1.0 - b1) * g
            vk = b2 * v[k] + (1.0 - b2) * g * g
            new_p[k] = p - self.lr * (mk / c1) / (np.sqrt(vk / c2) + self.eps)
            new_m[k], new_v[k] = mk, vk
        return new_p, new_m, new_v
