"""The five-dimensional stochastic benchmark: plant, desired trajectory,
gains, RMS metric, and the noise mean/covariance sweep.

Plant, trajectory, learning rates, forgetting factors, network shape
(eight swish hidden layers of eight neurons), initialization, horizon, and
initial state follow the published study.  The feedback gain and the
projection radii are not recoverable from it (the printed gain is
typographically ambiguous and no radii are given); the defaults here were
selected so the closed loop is robust across seeds and the noise grid and
reproduces the reported RMS magnitude.  Both are plain config fields.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np
from threadpoolctl import threadpool_limits

from .adapt import AdaptGains
from .control import DesiredTrajectory
from .dnn import DnnSpec
from .sde import NoiseConfig, RunSummary, SystemModel, Trajectory, simulate_ensemble

__all__ = [
    "BenchmarkConfig",
    "BenchmarkResult",
    "SweepResult",
    "benchmark_model",
    "desired_trajectory",
    "dnn_specs",
    "rms_from_norms",
    "rms_tracking_error",
    "run_benchmark",
    "run_sweep",
    "resolve_workers",
]


def _f(x):
    x1, x2, x3, x4, x5 = (x[..., i] for i in range(5))
    return np.stack([
        x4 * np.sqrt(np.abs(x3)) + np.sin(x1) + x5**2 * x2,
        1.5 * x3**2 * x5 + np.cos(x3 + x4) + x1 * np.sqrt(np.abs(x2)) * np.sin(x3),
        x5**2 - x3**3 * x4**2,
        (x1 * x3 - x2) ** 3,
        -x1 * x5,
    ], axis=-1)


def _g1(x):
    return np.broadcast_to(np.eye(5), x.shape[:-1] + (5, 5))


def _g2(x):
    x1, x2, x3, x4, x5 = (x[..., i] for i in range(5))
    col1 = np.stack([
        x1 * np.cos(x2),
        x3 * x5,
        x1**2,
        (x1 + x2) ** 3 - np.sin(x3),
        x2 * np.sin(x3) ** 2,
    ], axis=-1)
    col2 = np.stack([
        1.0 - x3 * np.cos(x4),
        x4**2 * np.sin(x2) ** 2,
        x3 * np.cos(x1 * x2),
        1.0 - x3**2,
        -x5 + x1 * x4**2,
    ], axis=-1)
    return np.stack([col1, col2], axis=-1)


def _sigma(t):
    t = np.asarray(t, dtype=float)
    out = np.zeros(t.shape + (2, 2))
    out[..., 0, 0] = np.sin(t) ** 2
    out[..., 1, 1] = np.exp(-t)
    return out


def benchmark_model() -> SystemModel:
    """The 5-D plant: nonlinear drift, 5x2 diffusion, diagonal time-varying
    covariance, identity control effectiveness."""
    return SystemModel(n=5, r=5, s=2, f=_f, g1=_g1, g2=_g2, sigma=_sigma,
                       g1_constant=True)


def _xd(t):
    t = np.asarray(t, dtype=float)
    return np.stack([
        np.sin(2 * t),
        -np.cos(t),
        np.sin(3 * t) + np.cos(-2 * t),
        np.sin(t) - np.cos(-0.5 * t),
        np.sin(-t),
    ], axis=-1)


def _xd_dot(t):
    t = np.asarray(t, dtype=float)
    return np.stack([
        2 * np.cos(2 * t),
        np.sin(t),
        3 * np.cos(3 * t) - 2 * np.sin(2 * t),
        np.cos(t) + 0.5 * np.sin(0.5 * t),
        -np.cos(t),
    ], axis=-1)


def desired_trajectory() -> DesiredTrajectory:
    # component amplitude bounds: (1,1,2,2,1) and (2,1,5,1.5,1)
    return DesiredTrajectory(dim=5, position=_xd, velocity=_xd_dot,
                             x_bar=float(np.sqrt(11.0)),
                             x_dot_bar=float(np.sqrt(33.25)))


@dataclass(frozen=True)
class BenchmarkConfig:
    """Benchmark settings; defaults follow the published study where it
    pins them and the robustness/reproduction analysis where it does not."""

    dt: float = 1e-3
    horizon: float = 60.0
    x0: tuple = (2.0, -1.0, 2.0, -1.0, 2.0)
    gamma: tuple = (25.0, 5.0, 25.0)
    sigma_f: tuple = (0.01, 0.1, 0.01)
    k_e: float = 10.0
    theta_bar: tuple = (3.5, 3.5, 3.5)
    eps_proj: float = 0.1
    hidden: tuple = (8, 8, 8, 8, 8, 8, 8, 8)
    activation: str = "swish"
    beta: float = 1.0
    seeds: tuple = (1, 2, 3, 4, 5)
    noise_means: tuple = (-0.1, -0.05, 0.0, 0.05, 0.1)
    noise_covs: tuple = (1.0, 2.0, 5.0, 10.0)

    def gains(self) -> AdaptGains:
        return AdaptGains(gamma=self.gamma, sigma=self.sigma_f,
                          theta_bar=self.theta_bar, eps_proj=self.eps_proj)

    def stability_margin_ok(self) -> bool:
        """Explicit-method stability of the feedback term needs dt*k_e < 2."""
        return self.dt * self.k_e < 2.0


def dnn_specs(config: BenchmarkConfig) -> tuple:
    """Shapes of the three networks: (n -> n), (n -> 1), (2n -> n)."""
    mk = lambda i, o: DnnSpec(i, config.hidden, o, config.activation, config.beta)
    return mk(5, 5), mk(5, 1), mk(10, 5)


def rms_from_norms(norm_e) -> float:
    """Root of the time-averaged squared error norm over the full horizon."""
    norm_e = np.asarray(norm_e, dtype=float)
    return float(np.sqrt(np.mean(norm_e**2)))


def rms_tracking_error(traj: Trajectory) -> float:
    """Full-horizon RMS of ||e(t)||; rejects diverged trajectories."""
    if traj.diverged:
        raise ValueError("RMS is undefined for a diverged trajectory")
    return rms_from_norms(traj.norm_e)


@dataclass
class BenchmarkResult:
    """Per-seed nominal-noise outcomes."""

    config: BenchmarkConfig
    summaries: list

    @property
    def rms(self) -> list:
        return [None if s.diverged else rms_from_norms(s.norm_e) for s in self.summaries]

    @property
    def rms_average(self) -> float:
        vals = [r for r in self.rms if r is not None]
        if not vals:
            raise ValueError("all runs diverged")
        return float(np.mean(vals))

    def fraction_small_error(self, level: float = 1.0, after: float = 5.0) -> list:
        """Per seed: fraction of samples with ||e|| <= level for t > after."""
        out = []
        for s in self.summaries:
            t = np.arange(len(s.norm_e)) * self.config.dt
            mask = t > after
            if s.diverged or not mask.any():
                out.append(0.0)
            else:
                out.append(float(np.mean(s.norm_e[mask] <= level)))
        return out


def run_benchmark(config: BenchmarkConfig = BenchmarkConfig(),
                  noise: NoiseConfig = NoiseConfig()) -> BenchmarkResult:
    """Nominal benchmark runs over the config's seed list (one batch)."""
    summaries = simulate_ensemble(
        benchmark_model(), desired_trajectory(), dnn_specs(config),
        config.gains(), config.k_e, [noise] * len(config.seeds),
        config.dt, config.horizon, list(config.seeds),
        x0=np.asarray(config.x0, dtype=float), record_full=False)
    return BenchmarkResult(config=config, summaries=summaries)


@dataclass
class SweepResult:
    """Per-(mean, cov, seed) RMS grid with divergence markers."""

    config: BenchmarkConfig
    rows: list  # (mean, cov, seed, rms or None, diverged)

    def cell(self, mean: float, cov: float) -> list:
        return [r for r in self.rows if r[0] == mean and r[1] == cov]

    def cell_average(self, mean: float, cov: float) -> Optional[float]:
        vals = [r[3] for r in self.cell(mean, cov) if r[3] is not None]
        return float(np.mean(vals)) if vals else None

    def grid_averages(self) -> np.ndarray:
        """(len(means), len(covs)) seed-averaged RMS; NaN where no run completed."""
        means, covs = self.config.noise_means, self.config.noise_covs
        out = np.full((len(means), len(covs)), np.nan)
        for i, m in enumerate(means):
            for j, c in enumerate(covs):
                avg = self.cell_average(m, c)
                if avg is not None:
                    out[i, j] = avg
        return out

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("mean,cov,seed,rms,diverged\n")
            for mean, cov, seed, rms, diverged in self.rows:
                rms_s = "" if rms is None else repr(float(rms))
                fh.write(f"{mean!r},{cov!r},{seed},{rms_s},{int(diverged)}\n")


def resolve_workers(requested: Optional[int] = None) -> int:
    """Worker count: explicit argument, else LBDNN_THREADS, else CPU count
    (capped at 4; the sweep batches vectorize well past that)."""
    if requested is not None:
        return max(1, int(requested))
    env = os.environ.get("LBDNN_THREADS")
    if env:
        return max(1, int(env))
    return max(1, min(4, os.cpu_count() or 1))


def _sweep_chunk(config: BenchmarkConfig, runs: list) -> list:
    """Simulate a chunk of (mean, cov, seed) runs as one lockstep batch."""
    noises = [NoiseConfig(mean=m, cov=c) for (m, c, _) in runs]
    seeds = [s for (_, _, s) in runs]
    # one BLAS thread per worker: the per-step operands are tiny and
    # oversubscription across workers costs far more than it buys
    with threadpool_limits(limits=1):
        summaries = simulate_ensemble(
            benchmark_model(), desired_trajectory(), dnn_specs(config),
            config.gains(), config.k_e, noises, config.dt, config.horizon,
            seeds, x0=np.asarray(config.x0, dtype=float), record_full=False)
    out = []
    for (mean, cov, seed), summ in zip(runs, summaries):
        rms = None if summ.diverged else rms_from_norms(summ.norm_e)
        out.append((mean, cov, seed, rms, summ.diverged))
    return out


def run_sweep(config: BenchmarkConfig = BenchmarkConfig(),
              workers: Optional[int] = None) -> SweepResult:
    """RMS over the noise mean/covariance grid, all seeds per cell.

    Runs are independent and derive their random streams from their seed
    alone, so results are identical for any worker count or chunking; equal
    seeds share noise realizations across cells (paired comparisons), and
    the (0, 1) cell reproduces the nominal benchmark runs bit for bit.
    """
    runs = [(m, c, s) for m in config.noise_means for c in config.noise_covs
            for s in config.seeds]
    nworkers = min(resolve_workers(workers), len(runs))
    if nworkers <= 1:
        rows = _sweep_chunk(config, runs)
    else:
        chunks = [list(ch) for ch in np.array_split(np.arange(len(runs)), nworkers)]
        parts = [None] * len(chunks)
        with ProcessPoolExecutor(max_workers=nworkers) as pool:
            futures = [pool.submit(_sweep_chunk, config, [runs[i] for i in idx])
                       for idx in chunks]
            for k, fut in enumerate(futures):
                parts[k] = fut.result()
        rows = [row for part in parts for row in part]
    return SweepResult(config=config, rows=rows)
