"""Stability-certificate arithmetic and Monte-Carlo validation of the
sup-exceedance probability bound.

The certificate quantities are plain arithmetic over user-supplied bound
estimates (the analysis proves such constants exist; it never provides
values).  The probabilistic piece is checked empirically: for an Ito
process whose generator satisfies ``LV <= -k1 V + k2`` inside
``Q_m = {V < m}``, the probability that ``sup V`` ever reaches a level
``lambda <= m`` is bounded by ``V0/m + (V0/lambda) exp(-k1 t) + k2/(k1 lambda)``,
and :func:`mc_sup_exceedance` estimates the left-hand side over a finite
horizon by simulating paths until they leave ``Q_m``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

__all__ = [
    "BoundEstimates",
    "CertificateReport",
    "ItoProcess",
    "MCResult",
    "alpha_bounds",
    "lyapunov_value",
    "compute_constants",
    "check_gain_condition",
    "check_feasibility",
    "set_radii",
    "escape_risk",
    "lemma1_bound",
    "wilson_interval",
    "mc_sup_exceedance",
    "ou_process",
    "sigma_sup_norms",
    "g2_vec_bound",
    "build_report",
]

# 97.5% normal quantile, for the 95% Wilson interval.
_Z95 = 1.959963984540054


@dataclass(frozen=True)
class BoundEstimates:
    """User-supplied constants entering the certificate.

    ``delta`` bounds the Taylor remainders of the three network mismatches,
    ``eps_bar`` the function-reconstruction errors, ``g_bar`` the norm of
    the vectorized diffusion along the desired trajectory, ``sigma_inf``
    the sup of the induced infinity norm of Sigma Sigma^T, ``sigma_finf_sq``
    the sup of the squared Frobenius norm of Sigma, and ``chi`` the radius
    of the certified domain.
    """

    delta: tuple = (1.0, 1.0, 1.0)
    eps_bar: tuple = (0.1, 0.1, 0.1)
    g_bar: float = 1.0
    sigma_inf: float = 1.0
    sigma_finf_sq: float = 1.0
    chi: float = 100.0

    def __post_init__(self):
        object.__setattr__(self, "delta", tuple(float(d) for d in self.delta))
        object.__setattr__(self, "eps_bar", tuple(float(e) for e in self.eps_bar))
        if len(self.delta) != 3 or len(self.eps_bar) != 3:
            raise ValueError("delta and eps_bar must have three entries")
        if min(self.delta) < 0 or min(self.eps_bar) < 0 or self.g_bar < 0:
            raise ValueError("bound estimates must be nonnegative")
        if self.sigma_inf < 0 or self.sigma_finf_sq < 0:
            raise ValueError("sigma norms must be nonnegative")
        if self.chi <= 0:
            raise ValueError("chi must be positive")


def alpha_bounds(gamma) -> tuple:
    """(alpha1, alpha2) sandwiching the Lyapunov function:
    alpha1 = (1/2) min(1, 1/g1, 1/g2, 1/g3), alpha2 = max(1, 1/g1, 1/g2, 1/g3)."""
    g = [float(v) for v in gamma]
    if len(g) != 3 or min(g) <= 0:
        raise ValueError("three positive learning rates are required")
    inv = [1.0] + [1.0 / v for v in g]
    return 0.5 * min(inv), max(inv)


def lyapunov_value(e, theta_t1, theta_t2, theta_t3, gamma) -> np.ndarray:
    """V_L = (1/2) e^T e + (1/2) sum_l theta_t_l^T theta_t_l / gamma_l,
    evaluated on the weight-estimation errors theta_t_l = theta*_l - theta_hat_l."""
    g = [float(v) for v in gamma]
    if min(g) <= 0:
        raise ValueError("learning rates must be positive")
    e = np.asarray(e, dtype=float)
    val = 0.5 * np.einsum("...i,...i->...", e, e)
    for th, gl in zip((theta_t1, theta_t2, theta_t3), g):
        th = np.asarray(th, dtype=float)
        val = val + 0.5 / gl * np.einsum("...i,...i->...", th, th)
    return val


def compute_constants(est: BoundEstimates, gains, k_e: float,
                      c_divisor: str = "alpha1") -> tuple:
    """The offset/decay pair (b, c) of the certificate.

    b = (1/2)(D1 + D3)^2 + (1/2) ||SS^T||_inf g_bar^2 + sum_l s_l tb_l^2 / 2
    c = (1/divisor) min{k_e - 1/2 - (D2 + e2)/2, s1, s2}

    The printed derivation divides by alpha1; the bounding step it follows
    suggests alpha2, so both are available behind ``c_divisor``.  A
    nonpositive c means the gain condition fails; the value is returned
    as-is for the caller to flag.
    """
    if c_divisor not in ("alpha1", "alpha2"):
        raise ValueError("c_divisor must be 'alpha1' or 'alpha2'")
    a1, a2 = alpha_bounds(gains.gamma)
    d = est.delta
    s = gains.sigma
    tb = gains.theta_bar
    b = 0.5 * (d[0] + d[2]) ** 2 + 0.5 * est.sigma_inf * est.g_bar**2 \
        + sum(sl * tl**2 / 2.0 for sl, tl in zip(s, tb))
    margin = k_e - 0.5 - 0.5 * (d[1] + est.eps_bar[1])
    c = min(margin, s[0], s[1]) / (a1 if c_divisor == "alpha1" else a2)
    return float(b), float(c)


def check_gain_condition(k_e: float, delta2: float, eps_bar2: float) -> bool:
    """k_e > 1/2 + (delta2 + eps_bar2)/2, strict."""
    return k_e > 0.5 + 0.5 * (delta2 + eps_bar2)


def check_feasibility(chi: float, alpha1: float, alpha2: float,
                      b: float, c: float) -> bool:
    """chi >= sqrt((a2/a1)(b/c)) * sqrt(a2/a1 + 1), the condition for the
    stabilizing set to be non-empty."""
    if c <= 0:
        raise ValueError("c must be positive (gain condition must hold)")
    ratio = alpha2 / alpha1
    return chi >= np.sqrt(ratio * b / c) * np.sqrt(ratio + 1.0)


def set_radii(chi: float, alpha1: float, alpha2: float, b: float, c: float,
              lam: float) -> tuple:
    """Radii of (S, B, D): the stabilizing-initial-condition set, the
    convergence ball, and the certified domain.

    radius_S = sqrt(1/a2) sqrt((a1/a2) chi^2 - b/c); a negative radicand
    (infeasible chi) yields NaN for the caller to report.
    """
    if c <= 0:
        raise ValueError("c must be positive")
    radicand = (alpha1 / alpha2) * chi**2 - b / c
    radius_s = np.sqrt(radicand / alpha2) if radicand >= 0 else float("nan")
    radius_b = float(np.sqrt(lam / alpha1))
    return float(radius_s), radius_b, float(chi)


def escape_risk(v0: float, m: float, lam: float, b: float, c: float, t):
    """Escape risk theta(t) = V0/m + (V0/lam) exp(-c t) + b/(c lam).

    Values above 1 are meaningful (a vacuous certificate) and returned
    verbatim; clip only when reporting probabilities.
    """
    if m <= 0 or lam <= 0 or c <= 0:
        raise ValueError("m, lam, c must be positive")
    t = np.asarray(t, dtype=float)
    return v0 / m + (v0 / lam) * np.exp(-c * t) + b / (c * lam)


def lemma1_bound(v0: float, m: float, lam: float, kappa1: float,
                 kappa2: float, t):
    """Sup-exceedance probability bound V0/m + (V0/lam) e^{-k1 t} + k2/(k1 lam).

    Returned unclipped; report layers clip to [0, 1] where a probability
    column is required.
    """
    if kappa1 <= 0 or lam <= 0 or m <= 0:
        raise ValueError("kappa1, lam, m must be positive")
    if lam > m:
        raise ValueError("lambda must not exceed m")
    t = np.asarray(t, dtype=float)
    return v0 / m + (v0 / lam) * np.exp(-kappa1 * t) + kappa2 / (kappa1 * lam)


def wilson_interval(successes: int, trials: int, z: float = _Z95) -> tuple:
    """Wilson score interval for a binomial proportion."""
    if trials <= 0:
        raise ValueError("trials must be positive")
    p = successes / trials
    denom = 1.0 + z * z / trials
    center = (p + z * z / (2 * trials)) / denom
    half = z * np.sqrt(p * (1 - p) / trials + z * z / (4 * trials * trials)) / denom
    return max(0.0, center - half), min(1.0, center + half)


@dataclass(frozen=True)
class ItoProcess:
    """dz = drift(z, t) dt + diffusion(z, t) dw; callables broadcast over a
    leading path axis."""

    dim: int
    noise_dim: int
    drift: Callable
    diffusion: Callable


def ou_process(a: float, sigma: float) -> ItoProcess:
    """Scalar Ornstein-Uhlenbeck process dz = -a z dt + sigma dw."""
    def drift(z, t):
        return -a * z

    def diffusion(z, t):
        return np.full(z.shape + (1,), sigma)

    return ItoProcess(dim=1, noise_dim=1, drift=drift, diffusion=diffusion)


@dataclass
class MCResult:
    """Empirical sup-exceedance estimate with its Wilson 95% interval."""

    n_paths: int
    n_exceed: int
    probability: float
    ci_low: float
    ci_high: float


def mc_sup_exceedance(process: ItoProcess, v_fn: Callable, lam: float, m: float,
                      horizon: float, n_paths: int, dt: float, seed: int,
                      z0=None) -> MCResult:
    """Fraction of Euler-Maruyama paths whose running sup of V reaches lam.

    Each path is advanced until it leaves Q_m = {V < m} (mirroring the
    stopped process in the analysis) or the horizon ends; since lam <= m,
    leaving Q_m implies the exceedance already happened.  Paths that turn
    non-finite count as exceedances.  Paths advance in lockstep from a
    single seeded stream, so the estimate is deterministic given the seed.
    """
    if lam > m:
        raise ValueError("lambda must not exceed m")
    if dt <= 0 or horizon <= 0:
        raise ValueError("dt and horizon must be positive")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    n_steps = int(round(horizon / dt))
    if z0 is None:
        z0 = np.zeros(process.dim)
    z = np.tile(np.asarray(z0, dtype=float), (n_paths, 1))
    v = np.asarray(v_fn(z), dtype=float)
    exceeded = v >= lam
    moving = v < m
    sqdt = np.sqrt(dt)
    for i in range(n_steps):
        xi = rng.standard_normal((n_paths, process.noise_dim))
        t = i * dt
        dz = process.drift(z, t) * dt \
            + np.einsum("pnq,pq->pn", np.asarray(process.diffusion(z, t), dtype=float), xi) * sqdt
        z = z + np.where(moving[:, None], dz, 0.0)
        v = np.asarray(v_fn(z), dtype=float)
        bad = ~np.isfinite(v)
        exceeded |= moving & ((v >= lam) | bad)
        moving &= (v < m) & ~bad
        if not moving.any():
            break
    k = int(np.count_nonzero(exceeded))
    lo, hi = wilson_interval(k, n_paths)
    return MCResult(n_paths=n_paths, n_exceed=k, probability=k / n_paths,
                    ci_low=lo, ci_high=hi)


def sigma_sup_norms(sigma: Callable, horizon: float, dt: float = 1e-3) -> tuple:
    """Numeric sups over [0, horizon]: (||Sigma Sigma^T||_inf, ||Sigma||_F-inf^2)."""
    best_inf, best_fro = 0.0, 0.0
    for t in np.arange(0.0, horizon + dt, dt):
        s = np.asarray(sigma(float(t)), dtype=float)
        ss = s @ s.T
        best_inf = max(best_inf, float(np.max(np.sum(np.abs(ss), axis=1))))
        best_fro = max(best_fro, float(np.sum(s * s)))
    return best_inf, best_fro


def g2_vec_bound(g2: Callable, desired, horizon: float, dt: float = 1e-3) -> float:
    """Numeric sup of ||vec(g2(x_d(t)))|| along the desired trajectory."""
    t = np.arange(0.0, horizon + dt, dt)
    xd = np.asarray(desired.position(t), dtype=float)
    vals = np.asarray(g2(xd), dtype=float)
    return float(np.max(np.sqrt(np.sum(vals * vals, axis=(-2, -1)))))


@dataclass
class CertificateReport:
    """All certificate quantities for one configuration, plus pass flags."""

    alpha1: float
    alpha2: float
    b: float
    c: float
    m: float
    lam: float
    radius_s: float
    radius_b: float
    radius_d: float
    gain_ok: bool
    feasibility_ok: bool
    inclusion_ok: bool
    v0: float
    vartheta_times: np.ndarray
    vartheta: np.ndarray
    vartheta_vacuous: bool
    c_divisor: str
    inputs: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {
            "alpha1": self.alpha1, "alpha2": self.alpha2,
            "b": self.b, "c": self.c, "m": self.m, "lambda": self.lam,
            "radius_S": self.radius_s, "radius_B": self.radius_b,
            "radius_D": self.radius_d,
            "gain_ok": self.gain_ok,
            "feasibility_ok": self.feasibility_ok,
            "inclusion_ok": self.inclusion_ok,
            "V0": self.v0,
            "escape_risk": {
                "t": [float(v) for v in self.vartheta_times],
                "vartheta": [float(v) for v in self.vartheta],
                "probability": [float(min(1.0, max(0.0, v))) for v in self.vartheta],
                "vacuous": self.vartheta_vacuous,
            },
            "c_divisor": self.c_divisor,
            "inputs": self.inputs,
        }
        return out


def build_report(est: BoundEstimates, gains, k_e: float, v0: float,
                 lam: Optional[float] = None, c_divisor: str = "alpha1",
                 t_grid=None) -> CertificateReport:
    """Assemble the certificate for one configuration.

    ``lam`` defaults to b/c (the tightest convergence ball); any value in
    [b/c, m] is accepted.  The escape-risk curve is evaluated on ``t_grid``
    (default: 0..60 s) and reported verbatim, with a vacuous flag when it
    exceeds 1.
    """
    a1, a2 = alpha_bounds(gains.gamma)
    b, c = compute_constants(est, gains, k_e, c_divisor=c_divisor)
    gain_ok = check_gain_condition(k_e, est.delta[1], est.eps_bar[1])
    m = a1 * est.chi**2
    if c > 0:
        feas = bool(check_feasibility(est.chi, a1, a2, b, c))
        if lam is None:
            lam = b / c
        if not (b / c <= lam * (1 + 1e-12) and lam <= m * (1 + 1e-12)):
            raise ValueError(f"lambda must lie in [b/c, m] = [{b/c}, {m}]")
        radius_s, radius_b_, radius_d = set_radii(est.chi, a1, a2, b, c, lam)
        inclusion = bool(np.isfinite(radius_s)
                         and radius_b_ <= radius_s + 1e-12
                         and radius_s <= radius_d + 1e-12)
        if t_grid is None:
            t_grid = np.linspace(0.0, 60.0, 601)
        t_grid = np.asarray(t_grid, dtype=float)
        theta_curve = escape_risk(v0, m, lam, b, c, t_grid)
    else:
        feas = False
        lam = float("nan") if lam is None else lam
        radius_s, radius_b_, radius_d = float("nan"), float("nan"), est.chi
        inclusion = False
        t_grid = np.asarray([0.0]) if t_grid is None else np.asarray(t_grid, dtype=float)
        theta_curve = np.full_like(t_grid, np.nan)
    return CertificateReport(
        alpha1=a1, alpha2=a2, b=b, c=c, m=float(m), lam=float(lam),
        radius_s=radius_s, radius_b=radius_b_, radius_d=radius_d,
        gain_ok=bool(gain_ok), feasibility_ok=feas, inclusion_ok=inclusion,
        v0=float(v0), vartheta_times=t_grid, vartheta=np.asarray(theta_curve),
        vartheta_vacuous=bool(np.any(theta_curve > 1.0)),
        c_divisor=c_divisor,
        inputs={
            "delta": list(est.delta), "eps_bar": list(est.eps_bar),
            "g_bar": est.g_bar, "sigma_inf": est.sigma_inf,
            "sigma_finf_sq": est.sigma_finf_sq, "chi": est.chi,
            "gamma": list(gains.gamma), "sigma": list(gains.sigma),
            "theta_bar": list(gains.theta_bar), "k_e": k_e,
        },
    )
