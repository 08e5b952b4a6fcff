"""Tracking error and the feedback controller built around the three networks."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .linalg import RankDeficiencyError, pinv_right

__all__ = ["DesiredTrajectory", "tracking_error", "control_input"]


@dataclass(frozen=True)
class DesiredTrajectory:
    """Desired state trajectory with its analytic derivative and norm bounds.

    ``position`` and ``velocity`` map a scalar time (or an array of times)
    to the desired state (or a stacked array of states).  ``x_bar`` and
    ``x_dot_bar`` are the assumed bounds on ``||x_d||`` and ``||dx_d/dt||``.
    """

    dim: int
    position: Callable
    velocity: Callable
    x_bar: float
    x_dot_bar: float

    def check_bounds(self, horizon: float, dt: float = 1e-3) -> bool:
        """Numerically verify the norm bounds on a dense grid over [0, horizon]."""
        t = np.arange(0.0, horizon + dt, dt)
        xs = np.asarray(self.position(t))
        vs = np.asarray(self.velocity(t))
        return bool(np.all(np.linalg.norm(xs, axis=-1) <= self.x_bar + 1e-9)
                    and np.all(np.linalg.norm(vs, axis=-1) <= self.x_dot_bar + 1e-9))


def tracking_error(x, x_d) -> np.ndarray:
    """e = x - x_d."""
    x = np.asarray(x, dtype=float)
    x_d = np.asarray(x_d, dtype=float)
    if x.shape[-1] != x_d.shape[-1]:
        raise ValueError(f"state length {x.shape[-1]} != desired length {x_d.shape[-1]}")
    return x - x_d


def control_input(x, x_d, x_d_dot, k_e: float, phi1, phi2, phi3, g1) -> np.ndarray:
    """Feedback law u = g1^+ (dx_d - k_e e - Phi1 - (1/2) e Phi2 - Phi3).

    ``phi2`` is the scalar-network output (scalar or (..., 1) or (...,));
    the quadratic-damping term scales the error vector by it.  ``g1`` is the
    control-effectiveness matrix (optionally batched); a rank-deficient
    ``g1`` raises :class:`~lbdnn.linalg.RankDeficiencyError`.
    """
    e = tracking_error(x, x_d)
    phi2 = np.asarray(phi2, dtype=float)
    if phi2.ndim and phi2.shape[-1] == 1:
        phi2 = phi2[..., 0]
    v = np.asarray(x_d_dot, dtype=float) - k_e * e - np.asarray(phi1, dtype=float) \
        - 0.5 * phi2[..., None] * e - np.asarray(phi3, dtype=float)
    g1 = np.asarray(g1, dtype=float)
    if g1.ndim == 2:
        return np.einsum("rn,...n->...r", pinv_right(g1), v)
    # batched g1: right pseudo-inverse lane by lane, same rank test
    gram = np.einsum("...ns,...ms->...nm", g1, g1)
    w = np.linalg.eigvalsh(gram)
    if np.any(w[..., 0] < 1e-12 * np.maximum(w[..., -1], 0.0)) or np.any(w[..., -1] <= 0.0):
        raise RankDeficiencyError("g1 is rank deficient on at least one lane")
    sol = np.linalg.solve(gram, v[..., None])[..., 0]
    return np.einsum("...ns,...n->...s", g1, sol)
