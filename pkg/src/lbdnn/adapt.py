"""Smooth projection operator and the three weight-estimate update laws.

The update laws drive each estimate toward reducing the tracking error while
a forgetting term leaks it back toward zero; the projection keeps every
estimate inside the ball of radius ``theta_bar * (1 + eps)`` without
breaking the inequality the stability analysis relies on.  Discrete-time
integration is explicit Euler with a hard radial clamp after each step,
since the Euler map alone does not preserve the continuous-time invariant.

All operations broadcast over leading batch axes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["AdaptGains", "ControllerState", "proj", "update_rates", "step_weights"]


def _triple(x) -> tuple:
    t = tuple(float(v) for v in np.atleast_1d(x))
    if len(t) == 1:
        t = t * 3
    if len(t) != 3:
        raise ValueError(f"expected a scalar or 3 values, got {len(t)}")
    return t


@dataclass(frozen=True)
class AdaptGains:
    """Learning rates, forgetting factors, and projection radii per network.

    ``gamma`` and ``sigma`` follow the update laws; ``theta_bar`` is the
    assumed bound on the ideal weights and ``eps_proj`` the relative width
    of the projection boundary layer.
    """

    gamma: tuple = (25.0, 5.0, 25.0)
    sigma: tuple = (0.01, 0.1, 0.01)
    theta_bar: tuple = (20.0, 20.0, 20.0)
    eps_proj: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "gamma", _triple(self.gamma))
        object.__setattr__(self, "sigma", _triple(self.sigma))
        object.__setattr__(self, "theta_bar", _triple(self.theta_bar))
        if any(g <= 0 for g in self.gamma) or any(s <= 0 for s in self.sigma):
            raise ValueError("gamma and sigma must be strictly positive")
        if any(t <= 0 for t in self.theta_bar):
            raise ValueError("theta_bar must be strictly positive")
        if not 0.0 < self.eps_proj <= 0.5:
            raise ValueError("eps_proj must lie in (0, 0.5]")


@dataclass
class ControllerState:
    """The three weight-estimate vectors, shape (..., p_l) each."""

    theta1: np.ndarray
    theta2: np.ndarray
    theta3: np.ndarray

    def __post_init__(self):
        self.theta1 = np.asarray(self.theta1, dtype=float)
        self.theta2 = np.asarray(self.theta2, dtype=float)
        self.theta3 = np.asarray(self.theta3, dtype=float)

    @property
    def estimates(self) -> tuple:
        return (self.theta1, self.theta2, self.theta3)

    def norms(self) -> np.ndarray:
        """Stacked ||theta_l|| along the last axis."""
        return np.stack([np.linalg.norm(t, axis=-1) for t in self.estimates], axis=-1)


def proj(theta_hat, mu, theta_bar: float, eps: float, out=None,
         theta_norm_sq=None) -> np.ndarray:
    """Smooth radial projection of the raw update direction ``mu``.

    With the convex boundary function
    ``f(theta) = (theta^T theta - theta_bar^2) / (eps * theta_bar^2 * (2 + eps))``
    the operator returns ``mu`` whenever ``f <= 0`` (inside the ball) or the
    update points inward, and otherwise removes a growing fraction of the
    outward radial component, reaching full removal at
    ``||theta|| = theta_bar * (1 + eps)``.

    ``out`` may alias ``mu`` for in-place use in the simulation loop, and
    ``theta_norm_sq`` may supply a cached ``||theta_hat||^2``.
    """
    theta_hat = np.asarray(theta_hat, dtype=float)
    mu = np.asarray(mu, dtype=float)
    if theta_norm_sq is None:
        nsq = np.einsum("...i,...i->...", theta_hat, theta_hat)
    else:
        nsq = theta_norm_sq
    f = (nsq - theta_bar**2) / (eps * theta_bar**2 * (2.0 + eps))
    # grad f is proportional to theta_hat, so the rank-one correction is
    # f * (theta^T mu / ||theta||^2) * theta on the active branch.
    tm = np.einsum("...i,...i->...", theta_hat, mu)
    active = (f > 0.0) & (tm > 0.0)
    if out is None:
        out = np.array(mu, dtype=float, copy=True)
    elif out is not mu:
        out[...] = mu
    if np.any(active):
        coef = np.where(active, f * tm / np.where(nsq > 0.0, nsq, 1.0), 0.0)
        out -= coef[..., None] * theta_hat
    return out


def update_rates(state: ControllerState, e, grad1, grad2, grad3,
                 gains: AdaptGains) -> tuple:
    """Projected weight-estimate rates from the three update laws.

    ``grad1``/``grad3`` are the (..., n, p) output-weight Jacobians of the
    vector networks; ``grad2`` is the (..., 1, p) Jacobian of the scalar
    network.  Rates are, before projection,

        g1 * grad1^T e - g1 s1 th1
        (1/2) g2 (e^T e) grad2^T - g2 s2 th2
        g3 * grad3^T e - g3 s3 th3
    """
    e = np.asarray(e, dtype=float)
    g, s, tb = gains.gamma, gains.sigma, gains.theta_bar
    eps = gains.eps_proj
    mu1 = g[0] * np.einsum("...op,...o->...p", np.asarray(grad1, dtype=float), e) \
        - g[0] * s[0] * state.theta1
    ee = np.einsum("...i,...i->...", e, e)
    grad2 = np.asarray(grad2, dtype=float)
    mu2 = 0.5 * g[1] * ee[..., None] * grad2[..., 0, :] - g[1] * s[1] * state.theta2
    mu3 = g[2] * np.einsum("...op,...o->...p", np.asarray(grad3, dtype=float), e) \
        - g[2] * s[2] * state.theta3
    return (proj(state.theta1, mu1, tb[0], eps),
            proj(state.theta2, mu2, tb[1], eps),
            proj(state.theta3, mu3, tb[2], eps))


def step_weights(state: ControllerState, rates: tuple, dt: float,
                 gains: AdaptGains) -> ControllerState:
    """Explicit Euler step followed by a hard radial clamp.

    The clamp restores ``||theta_l|| <= theta_bar_l * (1 + eps)`` exactly;
    it is inactive whenever the projected continuous-time law would have
    kept the estimate inside on its own.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    new = []
    for theta, rate, tb in zip(state.estimates, rates, gains.theta_bar):
        th = theta + dt * np.asarray(rate, dtype=float)
        lim = tb * (1.0 + gains.eps_proj)
        nsq = np.einsum("...i,...i->...", th, th)
        over = nsq > lim * lim
        if np.any(over):
            scale = np.where(over, lim / np.sqrt(np.where(nsq > 0.0, nsq, 1.0)), 1.0)
            th = th * scale[..., None]
        new.append(th)
    return ControllerState(*new)
