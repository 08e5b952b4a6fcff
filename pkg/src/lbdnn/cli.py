"""Command-line front end: simulate, sweep, certify, gradcheck, lemma-check.

Configuration is a single JSON document with a top-level ``version`` field;
unknown keys are rejected.  Exit codes partition outcomes: 0 success,
1 configuration error, 2 divergence, 3 check failure.
"""

from __future__ import annotations

import argparse
import importlib.util
import json
import os
import sys
from dataclasses import dataclass, field, fields, replace
from typing import Optional

import numpy as np

from . import bench, certify, svgplot
from .adapt import AdaptGains
from .bench import BenchmarkConfig, resolve_workers
from .control import DesiredTrajectory
from .dnn import DnnSpec, DnnWeights, forward, grad_theta
from .sde import NoiseConfig, SystemModel, simulate_closed_loop

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_DIVERGED = 2
EXIT_CHECK = 3

CONFIG_VERSION = 1


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class CertInputs:
    """Certificate overrides; ``None`` means 'derive numerically/default'."""

    delta: tuple = (1.0, 1.0, 1.0)
    eps_bar: tuple = (0.1, 0.1, 0.1)
    g_bar: Optional[float] = None
    sigma_inf: Optional[float] = None
    sigma_finf_sq: Optional[float] = None
    chi: Optional[float] = None
    lam: Optional[float] = None
    c_divisor: str = "alpha1"
    v0: Optional[float] = None


@dataclass(frozen=True)
class RunConfig:
    """Validated run configuration (the JSON document, in memory)."""

    version: int = CONFIG_VERSION
    system: str = "benchmark"
    dt: float = 1e-3
    horizon: float = 60.0
    k_e: float = 10.0
    gamma: tuple = (25.0, 5.0, 25.0)
    sigma_f: tuple = (0.01, 0.1, 0.01)
    theta_bar: tuple = (3.5, 3.5, 3.5)
    eps_proj: float = 0.1
    hidden: tuple = (8, 8, 8, 8, 8, 8, 8, 8)
    activation: str = "swish"
    beta: float = 1.0
    x0: Optional[tuple] = None
    seed: int = 1
    seeds: tuple = (1, 2, 3, 4, 5)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    noise_means: tuple = (-0.1, -0.05, 0.0, 0.05, 0.1)
    noise_covs: tuple = (1.0, 2.0, 5.0, 10.0)
    certificate: CertInputs = field(default_factory=CertInputs)

    def to_dict(self) -> dict:
        return {
            "version": self.version,
            "system": self.system,
            "dt": self.dt,
            "horizon": self.horizon,
            "k_e": self.k_e,
            "gamma": list(self.gamma),
            "sigma_f": list(self.sigma_f),
            "theta_bar": list(self.theta_bar),
            "eps_proj": self.eps_proj,
            "hidden": list(self.hidden),
            "activation": self.activation,
            "beta": self.beta,
            "x0": None if self.x0 is None else list(self.x0),
            "seed": self.seed,
            "seeds": list(self.seeds),
            "noise": {"mean": self.noise.mean, "cov": self.noise.cov,
                      "seed": self.noise.seed},
            "noise_means": list(self.noise_means),
            "noise_covs": list(self.noise_covs),
            "certificate": {
                "delta": list(self.certificate.delta),
                "eps_bar": list(self.certificate.eps_bar),
                "g_bar": self.certificate.g_bar,
                "sigma_inf": self.certificate.sigma_inf,
                "sigma_finf_sq": self.certificate.sigma_finf_sq,
                "chi": self.certificate.chi,
                "lambda": self.certificate.lam,
                "c_divisor": self.certificate.c_divisor,
                "v0": self.certificate.v0,
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


_TOP_KEYS = set(RunConfig().to_dict().keys())
_NOISE_KEYS = {"mean", "cov", "seed"}
_CERT_KEYS = {"delta", "eps_bar", "g_bar", "sigma_inf", "sigma_finf_sq",
              "chi", "lambda", "c_divisor", "v0"}


def config_from_dict(doc: dict) -> RunConfig:
    if not isinstance(doc, dict):
        raise ConfigError("configuration must be a JSON object")
    unknown = set(doc) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")
    if doc.get("version", CONFIG_VERSION) != CONFIG_VERSION:
        raise ConfigError(f"unsupported config version {doc.get('version')!r}")
    kw = {}
    for key in ("system", "dt", "horizon", "k_e", "eps_proj", "activation",
                "beta", "seed"):
        if key in doc:
            kw[key] = doc[key]
    for key in ("gamma", "sigma_f", "theta_bar", "hidden", "seeds",
                "noise_means", "noise_covs"):
        if key in doc:
            kw[key] = tuple(doc[key])
    if "x0" in doc and doc["x0"] is not None:
        kw["x0"] = tuple(doc["x0"])
    if "noise" in doc:
        nd = doc["noise"]
        unknown = set(nd) - _NOISE_KEYS
        if unknown:
            raise ConfigError(f"unknown noise keys: {sorted(unknown)}")
        kw["noise"] = NoiseConfig(mean=nd.get("mean", 0.0), cov=nd.get("cov", 1.0),
                                  seed=nd.get("seed"))
    if "certificate" in doc:
        cd = doc["certificate"]
        unknown = set(cd) - _CERT_KEYS
        if unknown:
            raise ConfigError(f"unknown certificate keys: {sorted(unknown)}")
        ck = {k: cd[k] for k in cd if k not in ("lambda", "delta", "eps_bar")}
        if "delta" in cd:
            ck["delta"] = tuple(cd["delta"])
        if "eps_bar" in cd:
            ck["eps_bar"] = tuple(cd["eps_bar"])
        if "lambda" in cd:
            ck["lam"] = cd["lambda"]
        kw["certificate"] = CertInputs(**ck)
    try:
        return RunConfig(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path: str) -> RunConfig:
    if not os.path.exists(path):
        raise ConfigError(f"configuration file not found: {path}")
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON in {path}: {exc}") from exc
    return config_from_dict(doc)


def _load_custom_system(path: str):
    """Load ``model``/``desired``/``x0`` from a Python file."""
    if not os.path.exists(path):
        raise ConfigError(f"system file not found: {path}")
    spec = importlib.util.spec_from_file_location("lbdnn_custom_system", path)
    mod = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(mod)
    model = getattr(mod, "model", None)
    desired = getattr(mod, "desired", None)
    if not isinstance(model, SystemModel) or not isinstance(desired, DesiredTrajectory):
        raise ConfigError(
            f"{path} must define `model` (SystemModel) and `desired` (DesiredTrajectory)")
    x0 = getattr(mod, "x0", None)
    return model, desired, None if x0 is None else np.asarray(x0, dtype=float)


def build_system(cfg: RunConfig):
    """(model, desired, specs, gains, x0) for a run configuration."""
    gains = AdaptGains(gamma=cfg.gamma, sigma=cfg.sigma_f,
                       theta_bar=cfg.theta_bar, eps_proj=cfg.eps_proj)
    if cfg.system == "benchmark":
        model = bench.benchmark_model()
        desired = bench.desired_trajectory()
        x0 = np.asarray(cfg.x0 if cfg.x0 is not None else
                        BenchmarkConfig().x0, dtype=float)
    else:
        model, desired, x0 = _load_custom_system(cfg.system)
        if cfg.x0 is not None:
            x0 = np.asarray(cfg.x0, dtype=float)
        if x0 is None:
            raise ConfigError("custom system needs `x0` (in the file or config)")
    mk = lambda i, o: DnnSpec(i, cfg.hidden, o, cfg.activation, cfg.beta)
    specs = (mk(model.n, model.n), mk(model.n, 1), mk(2 * model.n, model.n))
    return model, desired, specs, gains, x0


def _bench_config(cfg: RunConfig) -> BenchmarkConfig:
    return BenchmarkConfig(
        dt=cfg.dt, horizon=cfg.horizon,
        x0=cfg.x0 if cfg.x0 is not None else BenchmarkConfig().x0,
        gamma=cfg.gamma, sigma_f=cfg.sigma_f, k_e=cfg.k_e,
        theta_bar=cfg.theta_bar, eps_proj=cfg.eps_proj, hidden=cfg.hidden,
        activation=cfg.activation, beta=cfg.beta, seeds=cfg.seeds,
        noise_means=cfg.noise_means, noise_covs=cfg.noise_covs)


def _say(args, msg: str) -> None:
    if not getattr(args, "quiet", False):
        print(msg)


def _warn(msg: str) -> None:
    print(f"warning: {msg}", file=sys.stderr)


def _apply_overrides(cfg: RunConfig, args) -> RunConfig:
    over = {}
    if getattr(args, "seed", None) is not None:
        over["seed"] = args.seed
    if getattr(args, "dt", None) is not None:
        over["dt"] = args.dt
    if getattr(args, "horizon", None) is not None:
        over["horizon"] = args.horizon
    if getattr(args, "ke", None) is not None:
        over["k_e"] = args.ke
    return replace(cfg, **over) if over else cfg


def _resolve_config(args) -> RunConfig:
    if getattr(args, "config", None):
        cfg = load_config(args.config)
    else:
        cfg = RunConfig()
    return _apply_overrides(cfg, args)


def _decimate(arr, limit: int = 4000):
    step = max(1, len(arr) // limit)
    return arr[::step]


def cmd_simulate(args) -> int:
    cfg = _resolve_config(args)
    if cfg.dt * cfg.k_e >= 2.0:
        _warn(f"dt*k_e = {cfg.dt * cfg.k_e:g} >= 2: the explicit feedback "
              "update is outside its stability region")
    model, desired, specs, gains, x0 = build_system(cfg)
    os.makedirs(args.out, exist_ok=True)
    traj = simulate_closed_loop(model, desired, specs, gains, cfg.k_e,
                                cfg.noise, cfg.dt, cfg.horizon, cfg.seed, x0)
    traj.to_csv(os.path.join(args.out, "trajectory.csv"))
    with open(os.path.join(args.out, "summary.json"), "w") as fh:
        json.dump(traj.summary(), fh, sort_keys=True, indent=2)
        fh.write("\n")
    t = _decimate(traj.t)
    series = [("|e|", _decimate(traj.norm_e))]
    series += [(f"e{i+1}", _decimate(traj.e[:, i])) for i in range(traj.e.shape[1])]
    svgplot.line_plot(os.path.join(args.out, "tracking_error.svg"), t, series,
                      title="Tracking error", xlabel="t [s]", ylabel="error")
    _say(args, f"wrote trajectory.csv, summary.json, tracking_error.svg to {args.out}")
    if traj.diverged:
        _say(args, f"run diverged at step {traj.diverged_step}")
        return EXIT_DIVERGED
    _say(args, f"rms tracking error: {bench.rms_tracking_error(traj):.6g}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _resolve_config(args)
    if cfg.system != "benchmark":
        raise ConfigError("sweep supports the benchmark system only")
    bcfg = _bench_config(cfg)
    result = bench.run_sweep(bcfg, workers=args.workers)
    os.makedirs(args.out, exist_ok=True)
    result.to_csv(os.path.join(args.out, "sweep.csv"))
    grid = result.grid_averages()
    svgplot.heatmap(os.path.join(args.out, "rms_heatmap.svg"), grid,
                    [f"{m:g}" for m in bcfg.noise_means],
                    [f"{c:g}" for c in bcfg.noise_covs],
                    title="Seed-averaged RMS tracking error",
                    xlabel="noise covariance", ylabel="noise mean")
    n_div = sum(1 for r in result.rows if r[4])
    _say(args, f"wrote sweep.csv, rms_heatmap.svg to {args.out} "
               f"({len(result.rows)} runs, {n_div} diverged)")
    return EXIT_OK


def _default_v0(gains: AdaptGains, e0_norm: float) -> float:
    # worst case: ||theta*_l - theta_hat_l(0)|| <= 2 theta_bar_l, since the
    # initial estimate is projected into the ball of radius theta_bar_l
    v0 = 0.5 * e0_norm**2
    for g, tb in zip(gains.gamma, gains.theta_bar):
        v0 += (2.0 * tb) ** 2 / (2.0 * g)
    return v0


def cmd_certify(args) -> int:
    cfg = _resolve_config(args)
    model, desired, specs, gains, x0 = build_system(cfg)
    ci = cfg.certificate
    g_bar = ci.g_bar if ci.g_bar is not None else \
        certify.g2_vec_bound(model.g2, desired, cfg.horizon)
    if ci.sigma_inf is None or ci.sigma_finf_sq is None:
        s_inf, s_fro = certify.sigma_sup_norms(model.sigma, cfg.horizon)
    sigma_inf = ci.sigma_inf if ci.sigma_inf is not None else s_inf
    sigma_finf_sq = ci.sigma_finf_sq if ci.sigma_finf_sq is not None else s_fro
    a1, a2 = certify.alpha_bounds(gains.gamma)
    est0 = certify.BoundEstimates(delta=ci.delta, eps_bar=ci.eps_bar,
                                  g_bar=g_bar, sigma_inf=sigma_inf,
                                  sigma_finf_sq=sigma_finf_sq, chi=1.0)
    b, c = certify.compute_constants(est0, gains, cfg.k_e,
                                     c_divisor=ci.c_divisor)
    if ci.chi is not None:
        chi = ci.chi
    elif c > 0:
        # default: 10% above the feasibility threshold
        chi = 1.1 * float(np.sqrt((a2 / a1) * (b / c)) * np.sqrt(a2 / a1 + 1.0))
    else:
        chi = est0.chi
    est = certify.BoundEstimates(delta=ci.delta, eps_bar=ci.eps_bar,
                                 g_bar=g_bar, sigma_inf=sigma_inf,
                                 sigma_finf_sq=sigma_finf_sq, chi=chi)
    e0 = float(np.linalg.norm(x0 - np.asarray(desired.position(0.0))))
    v0 = ci.v0 if ci.v0 is not None else _default_v0(gains, e0)
    report = certify.build_report(est, gains, cfg.k_e, v0, lam=ci.lam,
                                  c_divisor=ci.c_divisor)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "certificate.json")
    with open(path, "w") as fh:
        json.dump(report.to_dict(), fh, sort_keys=True, indent=2)
        fh.write("\n")
    _say(args, f"wrote {path} (gain_ok={report.gain_ok}, "
               f"feasibility_ok={report.feasibility_ok}, "
               f"vacuous={report.vartheta_vacuous})")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    rng = np.random.default_rng(args.seed)
    worst = 0.0
    worst_case = None
    for trial in range(args.trials):
        k = int(rng.integers(1, args.layers + 1))
        widths = tuple(int(rng.integers(1, args.width + 1)) for _ in range(k))
        l0 = int(rng.integers(1, args.input + 1))
        lout = int(rng.integers(1, 6))
        spec = DnnSpec(l0, widths, lout)
        theta = rng.standard_normal(spec.param_count) * 0.6
        x = rng.standard_normal(l0)
        w = DnnWeights.from_flat(spec, theta)
        grad = grad_theta(spec, w, x)
        h = args.h
        # batched central differences over all parameters at once
        eye = np.eye(spec.param_count)
        thp = theta[None, :] + h * eye
        thm = theta[None, :] - h * eye
        fp = forward(spec, DnnWeights.from_flat(spec, thp), x)
        fm = forward(spec, DnnWeights.from_flat(spec, thm), x)
        fd = (fp - fm).T / (2.0 * h)
        rel = np.abs(grad - fd) / np.maximum(np.abs(fd), args.floor)
        err = float(rel.max())
        if err > worst:
            worst = err
            worst_case = (k, widths, l0, lout)
    ok = worst < args.threshold
    _say(args, f"gradcheck: {args.trials} trials, max relative error "
               f"{worst:.3e} (threshold {args.threshold:g}) -> "
               f"{'PASS' if ok else 'FAIL'} worst case {worst_case}")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "gradcheck.json"), "w") as fh:
            json.dump({"trials": args.trials, "max_relative_error": worst,
                       "threshold": args.threshold, "pass": bool(ok)},
                      fh, sort_keys=True, indent=2)
            fh.write("\n")
    return EXIT_OK if ok else EXIT_CHECK


def _parse_kv(pairs) -> dict:
    out = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"expected key=value, got {pair!r}")
        key, val = pair.split("=", 1)
        out[key] = float(val)
    return out


def cmd_lemma_check(args) -> int:
    params = _parse_kv(args.ou or [])
    unknown = set(params) - {"a", "sigma"}
    if unknown:
        raise ConfigError(f"unknown OU parameters: {sorted(unknown)}")
    a = params.get("a", 1.0)
    sig = params.get("sigma", 0.5)
    if a <= 0 or sig <= 0:
        raise ConfigError("OU parameters a and sigma must be positive")
    kappa1, kappa2 = 2.0 * a, sig**2 / 2.0
    m = args.m if args.m is not None else args.m_mult * kappa2 / kappa1
    process = certify.ou_process(a, sig)
    v_fn = lambda z: 0.5 * z[..., 0] ** 2
    rows = []
    violated = False
    for frac in args.lambdas:
        lam = frac * m
        res = certify.mc_sup_exceedance(process, v_fn, lam, m, args.horizon,
                                        args.paths, args.dt, args.seed)
        bound = float(certify.lemma1_bound(0.0, m, lam, kappa1, kappa2, 0.0))
        half = 0.5 * (res.ci_high - res.ci_low)
        if res.probability - half > bound:
            violated = True
        rows.append((lam, res, min(1.0, bound)))
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "lemma_check.csv")
    with open(path, "w") as fh:
        fh.write("lambda,empirical,ci_lo,ci_hi,bound\n")
        for lam, res, bound in rows:
            fh.write(f"{lam!r},{res.probability!r},{res.ci_low!r},"
                     f"{res.ci_high!r},{bound!r}\n")
    _say(args, f"wrote {path}; bound {'violated' if violated else 'holds'} "
               f"on {len(rows)} levels (a={a:g}, sigma={sig:g}, m={m:g})")
    return EXIT_CHECK if violated else EXIT_OK


def _add_common(sub) -> None:
    sub.add_argument("--config", help="JSON configuration file")
    sub.add_argument("--benchmark", action="store_true",
                     help="use the built-in benchmark configuration")
    sub.add_argument("--seed", type=int, default=None)
    sub.add_argument("--out", default="runs")
    sub.add_argument("--dt", type=float, default=None)
    sub.add_argument("--horizon", type=float, default=None)
    sub.add_argument("--quiet", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lbdnn",
        description="Lb-DNN adaptive control: simulation, noise sweeps, "
                    "stability certificates, and probabilistic checks.")
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("simulate", help="one closed-loop run")
    _add_common(p)
    p.add_argument("--ke", type=float, default=None)
    p.set_defaults(fn=cmd_simulate)

    p = subs.add_parser("sweep", help="noise mean/covariance grid")
    _add_common(p)
    p.add_argument("--ke", type=float, default=None)
    p.add_argument("--workers", type=int, default=None,
                   help="process count (default: LBDNN_THREADS or CPU count)")
    p.set_defaults(fn=cmd_sweep)

    p = subs.add_parser("certify", help="stability-certificate report")
    _add_common(p)
    p.add_argument("--ke", type=float, default=None)
    p.set_defaults(fn=cmd_certify)

    p = subs.add_parser("gradcheck", help="network gradient vs finite differences")
    _add_common(p)
    p.add_argument("--layers", type=int, default=4, help="max hidden layers")
    p.add_argument("--width", type=int, default=8, help="max hidden width")
    p.add_argument("--input", type=int, default=10, help="max input dimension")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--threshold", type=float, default=1e-5)
    p.add_argument("--h", type=float, default=1e-5)
    p.add_argument("--floor", type=float, default=1e-8)
    p.set_defaults(fn=cmd_gradcheck, out=None, seed=0)

    p = subs.add_parser("lemma-check",
                        help="Monte-Carlo check of the exceedance bound")
    _add_common(p)
    p.add_argument("--ou", nargs="*", metavar="KEY=VALUE",
                   help="OU parameters, e.g. a=1 sigma=0.5")
    p.add_argument("--paths", type=int, default=10000)
    p.add_argument("--m", type=float, default=None, help="domain level m")
    p.add_argument("--m-mult", type=float, default=32.0,
                   help="m as a multiple of kappa2/kappa1 when --m is absent")
    p.add_argument("--lambdas", type=float, nargs="+", default=[0.25, 0.5, 1.0],
                   help="levels as fractions of m")
    p.set_defaults(fn=cmd_lemma_check)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "seed", None) is None and args.command in ("simulate",):
        args.seed = None  # fall back to config value
    try:
        if getattr(args, "dt", None) is not None and args.dt <= 0:
            raise ConfigError("dt must be positive")
        if getattr(args, "horizon", None) is not None and args.horizon <= 0:
            raise ConfigError("horizon must be positive")
        return args.fn(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
