"""Command-line entry point and experiment runners.

Usage::

    spinbath <experiment> --config cfg.json [--gamma G] [--sigma S] [--kappa K] [--seed N] [--out DIR]

Every run writes CSV data files and ``summary.json`` (resolved config, estimates
and built-in checks) into the output directory.  An invalid configuration exits
with status 2 and one line ``error: config: ...`` on stderr, before anything is
written.  A numerical failure exits with status 3 and names the failing module.
"""

from __future__ import annotations

import argparse
import json
import sys
import traceback
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__

EXPERIMENTS = ("simulate", "haar-test", "relaxation", "spectrum", "gap-study", "fpt", "avg-compare", "brackets")

REQUIRED = {
    "simulate": ("gamma", "kappa", "sigma", "dt", "t_final"),
    "haar-test": ("gamma", "kappa", "sigma", "dt", "t_final", "n_paths"),
    "relaxation": ("gamma", "kappa", "sigma", "dt", "t_final", "n_paths"),
    "spectrum": ("gamma", "kappa", "sigma"),
    "gap-study": ("gammas", "kappa_sigma"),
    "fpt": ("gamma", "kappa", "dt", "n_paths", "y_levels"),
    "avg-compare": ("gamma", "kappa", "sigma", "dt", "n_paths"),
    "brackets": (),
}

EXIT_CONFIG = 2
EXIT_NUMERIC = 3


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    experiment: str
    seed: int
    gamma: float | None = None
    kappa: float | None = None
    sigma: float | None = None
    dt: float | None = None
    t_final: float | None = None
    output_stride: int = 1
    n_paths: int | None = None
    initial: str | None = None
    galerkin: dict = field(default_factory=dict)
    gammas: list | None = None
    kappa_sigma: float | None = None
    sigmas: list | None = None
    y_levels: list | None = None
    t_eval: float | None = None
    rescale_factor: float = 0.5
    n_points: int = 100
    fd_step: float = 1e-5
    out: str = "spinbath_out"

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown field {unknown[0]!r}")
        if "experiment" not in data:
            raise ConfigError("missing field 'experiment'")
        if data.get("seed") is None:
            raise ConfigError("missing field 'seed'")
        cfg = cls(**data)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}")
        if isinstance(self.seed, bool) or not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError("seed must be a non-negative integer")
        for name in REQUIRED[self.experiment]:
            if getattr(self, name) is None:
                raise ConfigError(f"missing field {name!r} for {self.experiment}")
        if self.experiment == "fpt" and self.sigma is None and not self.sigmas:
            raise ConfigError("fpt needs 'sigma' or 'sigmas'")
        for name in ("gamma", "dt", "t_final", "fd_step", "t_eval", "rescale_factor", "kappa_sigma"):
            v = getattr(self, name)
            if v is not None and not (isinstance(v, (int, float)) and v > 0):
                raise ConfigError(f"{name} must be a positive number")
        for name in ("kappa", "sigma"):
            v = getattr(self, name)
            if v is not None and not (isinstance(v, (int, float)) and v >= 0):
                raise ConfigError(f"{name} must be a non-negative number")
        for name in ("n_paths", "output_stride", "n_points"):
            v = getattr(self, name)
            if v is not None and not (isinstance(v, int) and v >= 1):
                raise ConfigError(f"{name} must be a positive integer")
        if self.initial not in (None, "identity", "haar"):
            raise ConfigError("initial must be 'identity' or 'haar'")
        if self.dt is not None and self.t_final is not None and self.t_final < self.dt:
            raise ConfigError("t_final must be >= dt")
        if self.y_levels is not None and not all(-1 <= y <= 1 for y in self.y_levels):
            raise ConfigError("y_levels must lie in [-1, 1]")
        for name in ("gammas", "sigmas"):
            v = getattr(self, name)
            if v is not None and (not v or not all(isinstance(x, (int, float)) and x > 0 for x in v)):
                raise ConfigError(f"{name} must be a non-empty list of positive numbers")
        allowed = {"n_max", "p_max", "k_max", "r", "quad_points", "k_pad"}
        bad = set(self.galerkin) - allowed
        if bad:
            raise ConfigError(f"unknown galerkin field {sorted(bad)[0]!r}")
        try:
            spec = self.galerkin_spec()
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"galerkin: {exc}") from None
        from .spectral import MAX_DIM

        if self.experiment in ("spectrum", "gap-study") and spec.dimension > MAX_DIM:
            raise ConfigError(f"galerkin: dimension {spec.dimension} exceeds the cap {MAX_DIM}")

    def galerkin_spec(self):
        from .spectral import GalerkinSpec

        return GalerkinSpec(**self.galerkin)

    def sim_params(self, sigma: float | None = None, t_final: float | None = None):
        from .dynamics import SimParams
        from .noise import NoiseParams

        return SimParams(
            noise=NoiseParams(self.gamma, self.sigma if sigma is None else sigma),
            kappa=self.kappa,
            dt=self.dt,
            t_final=self.t_final if t_final is None else t_final,
            seed=self.seed,
            output_stride=self.output_stride,
        )


# ---------------------------------------------------------------------------
# output


def fmt_float(x) -> str:
    return format(float(x), ".17g")


def write_csv(path: Path, header: str, columns, kinds=None) -> None:
    """Write columns with floats at 17 significant digits; ``kinds`` marks 'i' (int) columns."""
    cols = [np.asarray(c) for c in columns]
    kinds = kinds or "f" * len(cols)
    n = len(cols[0]) if cols else 0
    with open(path, "w", newline="\n") as fh:
        fh.write(header + "\n")
        for i in range(n):
            fh.write(",".join(str(int(c[i])) if k == "i" else fmt_float(c[i]) for c, k in zip(cols, kinds)) + "\n")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def check(value, ok: bool, tolerance: str) -> dict:
    return {"value": value, "tolerance": tolerance, "pass": bool(ok)}


# ---------------------------------------------------------------------------
# experiments


def run_simulate(cfg: ExperimentConfig, out: Path) -> dict:
    from .dynamics import TRAJECTORY_HEADER, initial_state, simulate

    p = cfg.sim_params()
    n = cfg.n_paths or 1
    finals, drifts = [], []
    for i in range(n):
        tr = simulate(p, initial_state(cfg.initial or "identity", cfg.seed, i), index=i)
        write_csv(out / f"trajectory_{i}.csv", TRAJECTORY_HEADER, tr.as_table().T)
        finals.append(tr.rho[-1])
        drifts.append(tr.norm_drift)
    return {
        "results": {"final_rho": finals, "tstar": p.tstar},
        "checks": {"unitarity_drift_per_time": check(max(drifts), max(drifts) < 1e-9, "< 1e-9")},
    }


def run_haar_test(cfg: ExperimentConfig, out: Path) -> dict:
    from .dynamics import simulate_ensemble
    from .stats import ks_uniform

    p = cfg.sim_params()
    ens = simulate_ensemble(p, cfg.n_paths, initial=cfg.initial or "haar")
    rho = ens.rho[:, -1]
    write_csv(out / "rho_final.csv", "path,rho", [np.arange(len(rho)), rho], "if")
    stat, pval = ks_uniform(rho)
    mean = float(rho.mean())
    return {
        "results": {"ks_statistic": stat, "ks_pvalue": pval, "mean_rho": mean, "max_norm_drift": ens.max_norm_drift},
        "checks": {"ks_pvalue": check(pval, pval > 0.01, "> 0.01"), "mean_rho": check(mean, abs(mean - 0.5) <= 0.02, "0.5 +- 0.02")},
    }


def run_relaxation(cfg: ExperimentConfig, out: Path) -> dict:
    from .dynamics import simulate_ensemble
    from .stats import relaxation_fit

    p = cfg.sim_params()
    ens = simulate_ensemble(p, cfg.n_paths, initial=cfg.initial or "identity")
    mean = ens.rho.mean(axis=0)
    se = ens.rho.std(axis=0, ddof=1) / np.sqrt(cfg.n_paths) if cfg.n_paths > 1 else np.zeros_like(mean)
    write_csv(out / "relaxation.csv", "t,mean_rho,se", [ens.times, mean, se])
    fit = relaxation_fit(ens.times, mean)
    rt = fit.rate * p.tstar
    return {
        "results": {"fit": asdict(fit), "tstar": p.tstar, "rate_times_tstar": rt},
        "checks": {
            "rate_times_tstar": check(rt, fit.converged and 0.05 <= rt <= 20, "[0.05, 20]"),
            "r_squared": check(fit.r_squared, fit.converged and fit.r_squared > 0.9, "> 0.9"),
        },
    }


def run_spectrum(cfg: ExperimentConfig, out: Path) -> dict:
    from .spectral import build_generator, spectrum

    spec = cfg.galerkin_spec()
    res = spectrum(build_generator(spec, cfg.gamma, cfg.kappa, cfg.sigma))
    write_csv(out / "spectrum.csv", "re,im", [res.eigenvalues.real, res.eigenvalues.imag])
    maxre = float(res.eigenvalues.real.max())
    return {
        "results": {"gap": res.gap, "zero_mode_error": res.zero_mode_error, "dimension": spec.dimension, "n_zero": res.n_zero},
        "checks": {
            "single_zero_mode": check(res.n_zero, res.n_zero == 1, "== 1"),
            "max_real_part": check(maxre, maxre <= 1e-8, "<= 1e-8"),
        },
    }


def run_gap_study(cfg: ExperimentConfig, out: Path) -> dict:
    from .spectral import gap_scaling_study

    rows = gap_scaling_study(cfg.gammas, cfg.kappa_sigma, cfg.galerkin_spec(), kappa=cfg.kappa or 1.0)
    cols = [[getattr(r, a) for r in rows] for a in ("gamma", "kappa_sigma", "gap", "tstar", "gap_times_tstar")]
    write_csv(out / "gap_study.csv", "gamma,kappa_sigma,gap,tstar,gap_times_tstar", cols)
    gt = np.array(cols[4])
    band = float(gt.max() / gt.min())
    return {
        "results": {"c_measured": float(gt.min()), "band": band},
        "checks": {"gap_times_tstar_band": check(band, band <= 4.0, "max/min <= 4")},
    }


def run_fpt(cfg: ExperimentConfig, out: Path) -> dict:
    from dataclasses import replace

    from .dynamics import relaxation_time
    from .fpt import HORIZON_FACTOR, fpt_ensemble

    sigmas = cfg.sigmas or [cfg.sigma]
    sample_rows, study_rows, tails = [], [], {}
    for s in sigmas:
        tstar = relaxation_time(cfg.gamma, cfg.kappa, s)
        t_final = cfg.t_final or HORIZON_FACTOR * tstar
        p = replace(cfg.sim_params(sigma=s, t_final=t_final), output_stride=1)
        res = fpt_ensemble(p, list(cfg.y_levels), cfg.n_paths)
        for r in res:
            for i, (tau, c) in enumerate(zip(r.samples, r.censored)):
                sample_rows.append((i, r.y_level, tau, int(c)))
            study_rows.append((cfg.gamma, cfg.kappa, s, r.y_level, r.mean, r.se, tstar, r.e_level))
            tails[f"sigma={s:g},y={r.y_level:g}"] = {
                "tail_rate": r.tail_rate,
                "tail_r_squared": r.tail.r_squared if r.tail else None,
                "censored_fraction": r.censored_fraction,
                "mean_is_lower_bound": r.mean_is_lower_bound,
            }
    sr = list(zip(*sample_rows))
    write_csv(out / "fpt_samples.csv", "seed,y_level,tau,censored", sr, "iffi")
    write_csv(out / "fpt_study.csv", "gamma,kappa,sigma,y_level,mean_tau,se,tstar,ratio", list(zip(*study_rows)))
    checks = {}
    for key, t in tails.items():
        r2 = t["tail_r_squared"]
        checks[f"tail_loglinear[{key}]"] = check(r2, r2 is not None and r2 > 0.9, "R^2 > 0.9")
    return {"results": {"tails": tails}, "checks": checks}


def run_avg_compare(cfg: ExperimentConfig, out: Path) -> dict:
    from scipy import stats as sst

    from .averaging import effective_cdf, rescaled_time, ybar_ensemble
    from .dynamics import relaxation_time

    tstar = relaxation_time(cfg.gamma, cfg.kappa, cfg.sigma)
    t_eval = cfg.t_eval or tstar
    p = cfg.sim_params(t_final=t_eval)
    yb = ybar_ensemble(p, cfg.n_paths, t_eval)
    s = float(rescaled_time(t_eval, tstar, cfg.rescale_factor))
    write_csv(out / "ybar.csv", "path,ybar", [np.arange(len(yb)), yb], "if")
    ks = sst.kstest(yb, lambda y: effective_cdf(y, s))
    return {
        "results": {"tstar": tstar, "t_eval": t_eval, "rescaled_time": s, "ks_statistic": float(ks.statistic), "ks_pvalue": float(ks.pvalue)},
        "checks": {"ks_distance": check(float(ks.statistic), ks.statistic < 0.1, "< 0.1")},
    }


def run_brackets(cfg: ExperimentConfig, out: Path) -> dict:
    from .su2 import bracket_residuals, fields_determinant, random_interior_points

    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed))
    pts = random_interior_points(rng, cfg.n_points)
    res = np.array([bracket_residuals(x, cfg.fd_step).max() for x in pts])
    det = fields_determinant(pts.T)
    det_err = float(np.max(np.abs(det * np.sin(2 * pts[:, 0]) + 1.0)))
    write_csv(out / "brackets.csv", "chi,phi,psi,residual", [pts[:, 0], pts[:, 1], pts[:, 2], res])
    return {
        "results": {"max_residual": float(res.max()), "determinant_error": det_err},
        "checks": {
            "bracket_residual": check(float(res.max()), res.max() < 1e-6, "< 1e-6"),
            "determinant_identity": check(det_err, det_err < 1e-10, "< 1e-10"),
        },
    }


RUNNERS = {
    "simulate": run_simulate,
    "haar-test": run_haar_test,
    "relaxation": run_relaxation,
    "spectrum": run_spectrum,
    "gap-study": run_gap_study,
    "fpt": run_fpt,
    "avg-compare": run_avg_compare,
    "brackets": run_brackets,
}


def run(cfg: ExperimentConfig) -> int:
    """Run one experiment; returns the process exit status."""
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    report = RUNNERS[cfg.experiment](cfg, out)
    summary = {
        "version": __version__,
        "experiment": cfg.experiment,
        "config": asdict(cfg),
        "results": report.get("results", {}),
        "checks": report.get("checks", {}),
    }
    summary["all_checks_pass"] = all(c["pass"] for c in summary["checks"].values())
    with open(out / "summary.json", "w") as fh:
        json.dump(_jsonable(summary), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return 0


# ---------------------------------------------------------------------------
# CLI


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message.replace("\n", " "))


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="spinbath", description="Spin-1/2 with OU transverse noise: experiments.")
    ap.add_argument("experiment", help="one of: " + ", ".join(EXPERIMENTS))
    ap.add_argument("--config", required=True, help="JSON configuration file")
    ap.add_argument("--gamma", type=float)
    ap.add_argument("--sigma", type=float)
    ap.add_argument("--kappa", type=float)
    ap.add_argument("--seed", type=int)
    ap.add_argument("--out")
    return ap


def load_config(argv) -> ExperimentConfig:
    args = build_parser().parse_args(argv)
    if args.experiment not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {args.experiment!r}")
    try:
        with open(args.config) as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read {args.config}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON in {args.config}: {exc.msg} at line {exc.lineno}") from None
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    if data.get("experiment", args.experiment) != args.experiment:
        raise ConfigError(f"config experiment {data['experiment']!r} does not match {args.experiment!r}")
    data["experiment"] = args.experiment
    for name in ("gamma", "sigma", "kappa", "seed", "out"):
        v = getattr(args, name)
        if v is not None:
            data[name] = v
    return ExperimentConfig.from_dict(data)


def _failing_module(exc: BaseException) -> str:
    name = "unknown"
    for frame, _ in traceback.walk_tb(exc.__traceback__):
        mod = frame.f_globals.get("__name__", "")
        if mod.startswith("spinbath.") and mod != "spinbath.harness":
            name = mod.split(".", 1)[1]
    return "su2_geom" if name == "su2" else name


def main(argv=None) -> int:
    try:
        cfg = load_config(sys.argv[1:] if argv is None else argv)
    except ConfigError as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TypeError as exc:
        print(f"error: config: {str(exc).splitlines()[0]}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return run(cfg)
    except (FloatingPointError, ArithmeticError, RuntimeError, np.linalg.LinAlgError, ValueError) as exc:
        print(f"error: numerical: {_failing_module(exc)}: {str(exc).splitlines()[0] if str(exc) else type(exc).__name__}", file=sys.stderr)
        return EXIT_NUMERIC
