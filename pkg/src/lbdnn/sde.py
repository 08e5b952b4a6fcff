"""Plant definition and Euler-Maruyama closed-loop simulation.

The closed loop advances, per step: evaluate the three networks at the
current state, form the control input, advance the weight estimates by the
projected update laws, then advance the plant state by one Euler-Maruyama
step.  A batch of independent runs (different seeds and/or noise settings)
integrates in lockstep over a shared time grid; per-lane arithmetic is
identical regardless of how runs are grouped into batches, which the test
suite pins down (bit-level batch invariance).

Randomness is derived per run from its seed alone: a run's initialization
and noise streams do not depend on which ensemble it is part of, so sweep
cells with equal seeds share noise realizations (paired comparisons) and a
sweep cell reproduces the corresponding standalone run bit for bit.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import adapt as _adapt
from .adapt import AdaptGains
from .control import DesiredTrajectory
from .dnn import BatchKernel, DnnSpec, init_kaiming
from .linalg import RankDeficiencyError, pinv_right

__all__ = [
    "SystemModel",
    "NoiseConfig",
    "Trajectory",
    "RunSummary",
    "wiener_increment",
    "em_step",
    "simulate_closed_loop",
    "simulate_ensemble",
    "TRAJECTORY_CSV_HEADER",
]


@dataclass(frozen=True)
class SystemModel:
    """Control-affine stochastic plant dx = (f + g1 u) dt + g2 Sigma dw.

    The callables must broadcast over a leading batch axis: ``f`` and ``g2``
    map ``(..., n)`` states to ``(..., n)`` and ``(..., n, s)``; ``g1`` maps
    to ``(..., n, r)``.  ``sigma`` maps a scalar time to an ``(s, s)``
    matrix (an array of times to ``(T, s, s)`` is accepted and used when
    available).  Set ``g1_constant`` when ``g1`` does not depend on the
    state so the simulator can factor its pseudo-inverse once.
    """

    n: int
    r: int
    s: int
    f: Callable
    g1: Callable
    g2: Callable
    sigma: Callable
    g1_constant: bool = False


@dataclass(frozen=True)
class NoiseConfig:
    """Wiener-increment drift and scale: dw = mean*dt + sqrt(cov*dt)*xi.

    ``(mean, cov) = (0, 1)`` recovers the standard Wiener process.  ``seed``
    optionally pins the noise stream independently of the run seed.
    """

    mean: float = 0.0
    cov: float = 1.0
    seed: Optional[int] = None

    def __post_init__(self):
        if self.cov < 0:
            raise ValueError("covariance scale must be >= 0")


def wiener_increment(rng, s: int, dt: float, noise: NoiseConfig) -> np.ndarray:
    """One drifted, scaled Wiener increment of dimension ``s``."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    xi = rng.standard_normal(s)
    return xi * np.sqrt(noise.cov * dt) + noise.mean * dt


def em_step(model: SystemModel, x, u, t: float, dt: float, dw) -> np.ndarray:
    """One Euler-Maruyama step x + (f + g1 u) dt + g2 Sigma(t) dw."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    dw = np.asarray(dw, dtype=float)
    drift = model.f(x) + np.einsum("...nr,...r->...n", model.g1(x), u)
    diff = np.einsum("...ns,...s->...n", model.g2(x) @ np.asarray(model.sigma(t), dtype=float), dw)
    return x + drift * dt + diff


TRAJECTORY_CSV_HEADER = "t,{x},{e},{u},norm_e,norm_th1,norm_th2,norm_th3,VL"


@dataclass
class Trajectory:
    """One recorded closed-loop realization.

    Arrays cover the valid prefix of the run: if the run diverged (any
    non-finite sample), recording stops there and ``diverged`` is set with
    the offending step index.
    """

    t: np.ndarray
    x: np.ndarray
    e: np.ndarray
    u: np.ndarray
    theta_norms: np.ndarray
    v_l: np.ndarray
    seed: int
    dt: float
    diverged: bool = False
    diverged_step: Optional[int] = None
    config_hash: str = ""

    @property
    def norm_e(self) -> np.ndarray:
        return np.linalg.norm(self.e, axis=-1)

    def summary(self) -> dict:
        ne = self.norm_e
        out = {
            "seed": int(self.seed),
            "dt": float(self.dt),
            "steps": int(len(self.t) - 1),
            "diverged": bool(self.diverged),
            "diverged_step": None if self.diverged_step is None else int(self.diverged_step),
            "rms_tracking_error": None if self.diverged else float(np.sqrt(np.mean(ne**2))),
            "final_error": float(ne[-1]) if len(ne) else None,
            "config_hash": self.config_hash,
        }
        return out

    def to_csv(self, path) -> None:
        """Write the spec'd trajectory CSV; the VL column is blank when the
        ideal weights were not supplied."""
        n = self.x.shape[1]
        r = self.u.shape[1]
        header = TRAJECTORY_CSV_HEADER.format(
            x=",".join(f"x{i+1}" for i in range(n)),
            e=",".join(f"e{i+1}" for i in range(n)),
            u=",".join(f"u{i+1}" for i in range(r)),
        )
        ne = self.norm_e
        with open(path, "w") as fh:
            fh.write(header + "\n")
            for i in range(len(self.t)):
                cells = [repr(float(self.t[i]))]
                cells += [repr(float(v)) for v in self.x[i]]
                cells += [repr(float(v)) for v in self.e[i]]
                cells += [repr(float(v)) for v in self.u[i]]
                cells.append(repr(float(ne[i])))
                cells += [repr(float(v)) for v in self.theta_norms[i]]
                vl = self.v_l[i]
                cells.append("" if np.isnan(vl) else repr(float(vl)))
                fh.write(",".join(cells) + "\n")


@dataclass
class RunSummary:
    """Lightweight per-run record kept by ensembles that do not retain full
    state histories (sweeps)."""

    seed: int
    noise: NoiseConfig
    norm_e: np.ndarray
    diverged: bool
    diverged_step: Optional[int]


def _hash_config(payload: dict) -> str:
    blob = json.dumps(payload, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _sample_sigma(model: SystemModel, tgrid: np.ndarray) -> np.ndarray:
    """Evaluate Sigma on the whole grid, accepting scalar-only callables."""
    try:
        sig = np.asarray(model.sigma(tgrid), dtype=float)
        if sig.shape == (len(tgrid), model.s, model.s):
            return sig
    except Exception:
        pass
    return np.stack([np.asarray(model.sigma(float(t)), dtype=float) for t in tgrid])


def _spawn_run_streams(seed: int, noise_seed: Optional[int]):
    """Derive the four per-run generators (three inits, one noise stream)."""
    kids = np.random.SeedSequence(seed).spawn(4)
    init_rngs = [np.random.default_rng(k) for k in kids[:3]]
    noise_ss = kids[3] if noise_seed is None else np.random.SeedSequence(noise_seed)
    return init_rngs, np.random.default_rng(noise_ss)


def _initial_thetas(specs, gains: AdaptGains, init_rngs):
    """Kaiming draws, radially projected into the admissible ball.

    The projection guarantee requires ||theta_l(0)|| <= theta_bar_l; a draw
    landing outside is scaled onto radius theta_bar_l.
    """
    thetas = []
    for spec, tb, rng in zip(specs, gains.theta_bar, init_rngs):
        th = init_kaiming(spec, rng).flatten()
        norm = float(np.linalg.norm(th))
        if norm > tb:
            th = th * (tb / norm)
        thetas.append(th)
    return thetas


class _BatchLoop:
    """Lockstep integrator for a batch of closed-loop runs."""

    def __init__(self, model, desired, specs, gains, k_e, dt, horizon,
                 seeds, noises, x0=None, theta_star=None, record_full=False):
        if dt <= 0 or horizon <= 0:
            raise ValueError("dt and horizon must be positive")
        if len(specs) != 3:
            raise ValueError("three network specs are required")
        self.model = model
        self.desired = desired
        self.specs = tuple(specs)
        self.gains = gains
        self.k_e = float(k_e)
        self.dt = float(dt)
        self.n_steps = int(round(horizon / dt))
        self.seeds = [int(s) for s in seeds]
        self.noises = list(noises)
        self.batch = len(self.seeds)
        if len(self.noises) != self.batch:
            raise ValueError("one NoiseConfig per seed is required")
        self.record_full = record_full
        self.theta_star = None
        if theta_star is not None:
            self.theta_star = [np.asarray(t, dtype=float) for t in theta_star]

        n, s = model.n, model.s
        self.tgrid = np.arange(self.n_steps + 1) * self.dt
        self.xd = np.asarray(desired.position(self.tgrid), dtype=float)
        self.xdd = np.asarray(desired.velocity(self.tgrid), dtype=float)
        if self.xd.shape != (self.n_steps + 1, n):
            raise ValueError("desired trajectory must evaluate to (len(t), n)")
        self.sig = _sample_sigma(model, self.tgrid)
        if x0 is None:
            raise ValueError("initial state x0 is required")
        self.x = np.tile(np.asarray(x0, dtype=float), (self.batch, 1))

        self.kernels = [BatchKernel(spec, self.batch) for spec in self.specs]
        self._noise = np.empty((self.n_steps, self.batch, s))
        for b, (seed, noise) in enumerate(zip(self.seeds, self.noises)):
            init_rngs, noise_rng = _spawn_run_streams(seed, noise.seed)
            for kern, th in zip(self.kernels, _initial_thetas(self.specs, gains, init_rngs)):
                kern.theta[b] = th
            xi = noise_rng.standard_normal((self.n_steps, s))
            self._noise[:, b, :] = xi * np.sqrt(noise.cov * self.dt) + noise.mean * self.dt

        if model.g1_constant:
            g1c = np.asarray(model.g1(self.x[:1]), dtype=float)[0]
            self._g1 = g1c
            self._g1_pinv = pinv_right(g1c)
        else:
            self._g1 = None
            self._g1_pinv = None

        m = self.n_steps + 1
        self.norm_e = np.full((m, self.batch), np.nan)
        self.theta_norms = np.full((m, self.batch, 3), np.nan)
        self.v_l = np.full((m, self.batch), np.nan)
        if record_full:
            self.x_hist = np.full((m, self.batch, n), np.nan)
            self.e_hist = np.full((m, self.batch, n), np.nan)
            self.u_hist = np.full((m, self.batch, model.r), np.nan)
        self.alive = np.ones(self.batch, dtype=bool)
        self.diverged_step = np.full(self.batch, -1, dtype=int)
        self._rate = [np.empty_like(k.theta) for k in self.kernels]
        self._scratch = [np.empty_like(k.theta) for k in self.kernels]
        # ||theta_l||^2 cache, refreshed after every weight update
        self._theta_nsq = [np.einsum("bi,bi->b", k.theta, k.theta)
                           for k in self.kernels]

    def _control(self, v):
        if self._g1_pinv is not None:
            return np.einsum("rn,bn->br", self._g1_pinv, v)
        g1x = np.asarray(self.model.g1(self.x), dtype=float)
        gram = np.einsum("bns,bms->bnm", g1x, g1x)
        w = np.linalg.eigvalsh(gram)
        if np.any(w[:, 0] < 1e-12 * np.maximum(w[:, -1], 0.0)) or np.any(w[:, -1] <= 0.0):
            bad = int(np.argmin(w[:, 0]))
            raise RankDeficiencyError(
                f"g1 lost row rank on run seed {self.seeds[bad]}")
        sol = np.linalg.solve(gram, v[..., None])[..., 0]
        return np.einsum("bns,bn->bs", g1x, sol)

    def _record(self, i, e, u):
        all_alive = bool(self.alive.all())
        ee = np.einsum("bi,bi->b", e, e)
        ne = np.sqrt(ee)
        self.norm_e[i] = ne if all_alive else np.where(self.alive, ne, np.nan)
        for l in range(3):
            tn = np.sqrt(self._theta_nsq[l])
            self.theta_norms[i, :, l] = tn if all_alive else np.where(self.alive, tn, np.nan)
        if self.theta_star is not None:
            vl = 0.5 * ee
            for l, kern in enumerate(self.kernels):
                diff = self.theta_star[l][None, :] - kern.theta
                vl = vl + 0.5 / self.gains.gamma[l] * np.einsum("bi,bi->b", diff, diff)
            self.v_l[i] = vl if all_alive else np.where(self.alive, vl, np.nan)
        if self.record_full:
            if all_alive:
                self.x_hist[i] = self.x
                self.e_hist[i] = e
                self.u_hist[i] = u
            else:
                self.x_hist[i] = np.where(self.alive[:, None], self.x, np.nan)
                self.e_hist[i] = np.where(self.alive[:, None], e, np.nan)
                self.u_hist[i] = np.where(self.alive[:, None], u, np.nan)
        return ee

    def _mark_dead(self, bad, i, park):
        newly = bad & self.alive
        if np.any(newly):
            self.alive &= ~newly
            self.diverged_step[newly] = i
            self.x[newly] = park

    def run(self):
        # escaped lanes generate transient non-finite values before being
        # parked; they are detected via isfinite, not fp warnings
        with np.errstate(over="ignore", invalid="ignore", divide="ignore",
                         under="ignore"):
            return self._run()

    def _run(self):
        gains = self.gains
        k1, k2, k3 = self.kernels
        ones1 = np.ones((self.batch, 1))
        n = self.model.n
        xx = np.empty((self.batch, 2 * n))
        gamma = gains.gamma
        gsig = [g * s for g, s in zip(gains.gamma, gains.sigma)]
        lims = [tb * (1.0 + gains.eps_proj) for tb in gains.theta_bar]
        xd, xdd, sig, noise = self.xd, self.xdd, self.sig, self._noise
        dt, k_e = self.dt, self.k_e
        f, g2 = self.model.f, self.model.g2
        nets = ((0, k1), (1, k2), (2, k3))
        for i in range(self.n_steps + 1):
            xd_i = xd[i]
            e = self.x - xd_i
            phi1 = k1.forward(self.x)
            phi2 = k2.forward(self.x)
            xx[:, :n] = self.x
            xx[:, n:] = xd_i
            phi3 = k3.forward(xx)
            v = xdd[i] - k_e * e - phi1 - 0.5 * phi2 * e - phi3
            u = self._control(v)
            if not np.isfinite(u).all():
                self._mark_dead(~np.isfinite(u).all(axis=-1), i, xd_i)
            ee = self._record(i, e, u)
            if i == self.n_steps:
                break

            # projected update laws, explicit Euler, hard radial clamp;
            # the learning rate rides on the seed vector (the VJP is linear)
            vecs = (gamma[0] * e, (0.5 * gamma[1] * ee)[:, None], gamma[2] * e)
            for l, kern in nets:
                mu = kern.vjp(vecs[l], self._rate[l])
                tmp = self._scratch[l]
                np.multiply(kern.theta, gsig[l], out=tmp)
                mu -= tmp
                nsq = self._theta_nsq[l]
                tb = gains.theta_bar[l]
                box = (nsq > tb * tb)
                if box.any():
                    # only here can the projection differ from the identity;
                    # lanes inside the ball are left bitwise untouched by it
                    _adapt.proj(kern.theta, mu, tb, gains.eps_proj,
                                out=mu, theta_norm_sq=nsq)
                np.multiply(mu, dt, out=tmp)
                kern.theta += tmp
                nsq = np.einsum("bi,bi->b", kern.theta, kern.theta)
                over = nsq > lims[l] * lims[l]
                if over.any():
                    scale = np.where(over, lims[l] / np.sqrt(np.where(nsq > 0.0, nsq, 1.0)), 1.0)
                    kern.theta *= scale[:, None]
                    nsq = np.einsum("bi,bi->b", kern.theta, kern.theta)
                self._theta_nsq[l] = nsq

            fx = f(self.x)
            g2x = g2(self.x)
            if self._g1 is not None:
                gu = np.einsum("nr,br->bn", self._g1, u)
            else:
                gu = np.einsum("bnr,br->bn", np.asarray(self.model.g1(self.x), dtype=float), u)
            diff = np.einsum("bns,bs->bn", g2x @ sig[i], noise[i])
            self.x = self.x + (fx + gu) * dt + diff
            if not np.isfinite(self.x).all():
                self._mark_dead(~np.isfinite(self.x).all(axis=-1), i + 1, xd[i + 1])
        return self


def simulate_ensemble(model: SystemModel, desired: DesiredTrajectory, specs,
                      gains: AdaptGains, k_e: float, noises, dt: float,
                      horizon: float, seeds, x0, theta_star=None,
                      record_full: bool = False, config_hash: str = ""):
    """Integrate a batch of runs in lockstep; returns per-run results.

    With ``record_full`` the result is a list of :class:`Trajectory`;
    otherwise a list of :class:`RunSummary` (norm histories only).
    """
    if isinstance(noises, NoiseConfig):
        noises = [noises] * len(list(seeds))
    loop = _BatchLoop(model, desired, specs, gains, k_e, dt, horizon,
                      seeds, noises, x0=x0, theta_star=theta_star,
                      record_full=record_full).run()
    out = []
    for b, seed in enumerate(loop.seeds):
        died = loop.diverged_step[b] >= 0
        last = loop.diverged_step[b] if died else loop.n_steps + 1
        if record_full:
            out.append(Trajectory(
                t=loop.tgrid[:last].copy(),
                x=loop.x_hist[:last, b].copy(),
                e=loop.e_hist[:last, b].copy(),
                u=loop.u_hist[:last, b].copy(),
                theta_norms=loop.theta_norms[:last, b].copy(),
                v_l=loop.v_l[:last, b].copy(),
                seed=seed, dt=dt,
                diverged=bool(died),
                diverged_step=int(loop.diverged_step[b]) if died else None,
                config_hash=config_hash,
            ))
        else:
            out.append(RunSummary(
                seed=seed, noise=loop.noises[b],
                norm_e=loop.norm_e[:last, b].copy(),
                diverged=bool(died),
                diverged_step=int(loop.diverged_step[b]) if died else None,
            ))
    return out


def simulate_closed_loop(model: SystemModel, desired: DesiredTrajectory, specs,
                         gains: AdaptGains, k_e: float, noise: NoiseConfig,
                         dt: float, horizon: float, seed: int, x0,
                         theta_star=None, config_hash: str = "") -> Trajectory:
    """Simulate one closed-loop realization and record the full trajectory.

    Deterministic given ``(model, config, seed)``; the same seed inside any
    ensemble produces the identical realization.
    """
    if not config_hash:
        config_hash = _hash_config({
            "dims": (model.n, model.r, model.s),
            "specs": [(s.input_dim, s.hidden_widths, s.output_dim, s.activation, s.beta)
                      for s in specs],
            "gains": (gains.gamma, gains.sigma, gains.theta_bar, gains.eps_proj),
            "k_e": k_e, "dt": dt, "horizon": horizon,
            "noise": (noise.mean, noise.cov, noise.seed), "seed": seed,
        })
    return simulate_ensemble(model, desired, specs, gains, k_e, [noise], dt,
                             horizon, [seed], x0=x0, theta_star=theta_star,
                             record_full=True, config_hash=config_hash)[0]
