"""Command-line experiment runner.

    sfde <kind> --config <path> [--seed S] [--out DIR] [--threads K]

Every run writes ``manifest.json`` (validated config with defaults, seed,
versions, thread count, wall time), ``series.csv`` and ``report.json``.
The CSV and report depend only on the config and seed.

Exit codes: 0 pass, 2 invalid config, 3 numerical abort, 4 check failed,
65 malformed config syntax, 66 config file missing.
"""

from __future__ import annotations

import argparse
import json
import math
import platform
import sys
import time
from pathlib import Path
from typing import Literal, Optional

import numpy as np
import scipy
from pydantic import BaseModel, ConfigDict, Field as PField, ValidationError

from . import __version__
from .delay_dynamics import (
    ModelSpec,
    NonlinearitySpec,
    NumericalAbort,
    constant_history,
    run_ensemble,
    trajectory_path,
)
from .fixedpoint_solvers import (
    SmallnessViolation,
    attractivity_experiment,
    freeze_noise,
    picard_solve,
    smallness_check,
    stationary_successive_approx,
)
from .measure_lab import ObservableFamily, default_burn_in, homogeneity_test, invariance_experiment
from .reports import dumps
from .semigroup_kernel import (
    hilbert_schmidt_norm_delay_op,
    verify_kernel_bound,
    verify_semigroup_law,
    verify_weighted_smoothing,
)
from .spectral_domain import DomainSpec, Field, b0_norm_sq, build_basis, delay_steps
from .stochastic_driver import QWienerSpec

KINDS = ("simulate", "picard", "stationary", "attractivity", "invariant", "homogeneity",
         "kernel-check", "smallness")

EXIT_OK, EXIT_CONFIG, EXIT_ABORT, EXIT_FAILED = 0, 2, 3, 4
EXIT_SYNTAX, EXIT_MISSING = 65, 66


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class DomainConfig(_Strict):
    kind: Literal["bounded_dirichlet", "whole_line_weighted"] = "bounded_dirichlet"
    length: float = math.pi
    truncation_radius: float = 20.0
    grid_points: int = 64
    weight_exponent: float = 0.0
    compare_weight_exponent: float = 0.0


class NoiseConfig(_Strict):
    J: int = PField(default=1, ge=1)
    family: Literal["explicit", "geometric", "polynomial"] = "geometric"
    coefficients: Optional[list[float]] = None
    ratio: float = 0.5
    power: float = 2.0
    scale: float = 1.0
    trace: Optional[float] = None


class NonlinearityConfig(_Strict):
    kind: Literal["zero", "integral_lipschitz", "point_delay"] = "zero"
    map: Literal["identity", "tanh", "sin", "constant"] = "identity"
    gain: float = 1.0
    offset: float = 0.0
    clip: Optional[float] = PField(default=None, gt=0)
    lipschitz: Optional[float] = PField(default=None, ge=0)


class ModelConfig(_Strict):
    domain: DomainConfig = DomainConfig()
    N: int = PField(default=16, ge=1)
    spectrum: Optional[list[float]] = None
    noise: NoiseConfig = NoiseConfig()
    f: NonlinearityConfig = NonlinearityConfig()
    sigma: NonlinearityConfig = NonlinearityConfig()
    h: float = PField(default=1.0, gt=0)
    dt: float = PField(default=0.01, gt=0)


class InitialConfig(_Strict):
    """Constant history equal to sum_k modes[k] e_k (plus a constant function)."""

    modes: dict[int, float] = {}
    constant: float = 0.0


class SmallnessInputs(_Strict):
    h: float = PField(gt=0)
    lambda1: float = PField(gt=0)
    a: float = PField(ge=0)
    L: float = PField(default=0.0, ge=0)


class ExperimentConfig(_Strict):
    kind: Optional[Literal[KINDS]] = None
    T: float = PField(default=1.0, ge=0)
    ensemble: int = PField(default=64, ge=1)
    record_every: int = PField(default=10, ge=1)
    burn_in: Optional[float] = PField(default=None, ge=0)
    tol: float = PField(default=1e-10, gt=0)
    max_window: Optional[float] = PField(default=None, gt=0)
    min_window: Optional[float] = PField(default=None, gt=0)
    agreement_factor: float = PField(default=5.0, gt=0)
    T_back: float = PField(default=20.0, gt=0)
    doubling_tol: float = PField(default=1e-3, gt=0)
    ratio_slack: float = PField(default=0.05, ge=0)
    z_threshold: float = PField(default=3.0, gt=0)
    observable_modes: int = PField(default=4, ge=1)
    offsets: list[float] = [0.0, 1.0, 2.0]
    lag: float = PField(default=1.0, gt=0)
    initial2: Optional[InitialConfig] = None
    smallness: Optional[SmallnessInputs] = None
    kernel_samples: int = PField(default=200, ge=10)
    hs_T0: float = PField(default=1.0, gt=0)
    hs_h: float = PField(default=0.5, gt=0)


class RunConfig(_Strict):
    seed: int = 0
    threads: int = PField(default=1, ge=1)
    output_dir: str = "sfde_out"
    model: Optional[ModelConfig] = None
    initial: InitialConfig = InitialConfig()
    experiment: ExperimentConfig = ExperimentConfig()


class ConfigError(Exception):
    def __init__(self, problems: list[str], code: int = EXIT_CONFIG):
        self.problems = problems
        self.code = code
        super().__init__("\n".join(problems))


def _pydantic_problems(err: ValidationError) -> list[str]:
    return [f"{'.'.join(str(p) for p in e['loc']) or '<root>'}: {e['msg']}" for e in err.errors()]


def _semantic_problems(cfg: RunConfig, kind: str) -> list[str]:
    """Cross-field checks the schema cannot express; all of them, not the first."""
    out = []
    ex = cfg.experiment
    if ex.kind is not None and ex.kind != kind:
        out.append(f"experiment.kind is {ex.kind!r} but the command asked for {kind!r}")
    if kind == "smallness" and ex.smallness is not None:
        return out
    m = cfg.model
    if m is None:
        out.append(f"model block is required for kind {kind!r}")
        return out
    try:
        DomainSpec(**m.domain.model_dump())
    except ValueError as e:
        out.extend(f"model.domain: {p}" for p in str(e).split("; "))
    try:
        delay_steps(m.h, m.dt)
    except ValueError as e:
        out.append(f"model: {e}")
    if m.N > m.domain.grid_points - 2:
        out.append(f"model.N = {m.N} modes alias on {m.domain.grid_points} grid points "
                   f"(need N <= grid_points - 2)")
    if m.spectrum is not None and len(m.spectrum) != m.N:
        out.append(f"model.spectrum has {len(m.spectrum)} entries, expected N = {m.N}")
    nz = m.noise
    if nz.J > m.N:
        out.append(f"model.noise.J = {nz.J} exceeds N = {m.N}")
    if nz.family == "explicit":
        if nz.coefficients is None:
            out.append("model.noise.coefficients required for the explicit family")
        elif len(nz.coefficients) != nz.J:
            out.append(f"model.noise.coefficients has {len(nz.coefficients)} entries, expected J = {nz.J}")
        elif any(a < 0 for a in nz.coefficients):
            out.append("model.noise.coefficients must be nonnegative")
    elif nz.family == "geometric" and not nz.ratio > 0:
        out.append("model.noise.ratio must be positive")
    for name in ("f", "sigma"):
        nl = getattr(m, name)
        try:
            _nonlinearity(nl).declared_lipschitz(m.h, m.dt)
        except ValueError as e:
            out.append(f"model.{name}: {e}")
    for label, init in (("initial", cfg.initial), ("experiment.initial2", ex.initial2)):
        if init is not None and any(k < 1 or k > m.N for k in init.modes):
            out.append(f"{label}.modes: mode indices must lie in 1..{m.N}")
    horizons = [("T", ex.T)]
    if kind == "homogeneity":
        horizons.append(("lag", ex.lag))
    if kind == "stationary":
        horizons.append(("T_back", ex.T_back))
    for label, val in horizons:
        n = val / m.dt
        if abs(n - round(n)) > 1e-9 * max(1.0, n):
            out.append(f"experiment.{label} = {val} is not a multiple of dt = {m.dt}")
    if kind == "homogeneity":
        for s in ex.offsets:
            n = s / m.dt
            if s < 0 or abs(n - round(n)) > 1e-9 * max(1.0, n):
                out.append(f"experiment.offsets: {s} must be a nonnegative multiple of dt")
    if kind == "attractivity" and ex.T < m.h + 2 * ex.record_every * m.dt - 1e-12:
        out.append(f"experiment.T = {ex.T} leaves fewer than 3 recorded points in the fit window "
                   f"[h, T]; need T >= {m.h + 2 * ex.record_every * m.dt:g}")
    if kind in ("invariant", "homogeneity") and ex.ensemble < 2:
        out.append("experiment.ensemble must be at least 2 for statistical tests")
    if kind == "kernel-check" and ex.hs_T0 < 2 * ex.hs_h:
        out.append(f"experiment.hs_T0 = {ex.hs_T0} must be at least 2 * hs_h = {2 * ex.hs_h}")
    return out


def parse_config(path, kind: str = "simulate") -> RunConfig:
    """Load and validate a JSON config; raises ConfigError listing every problem."""
    p = Path(path)
    if not p.is_file():
        raise ConfigError([f"config file not found: {p}"], EXIT_MISSING)
    try:
        raw = json.loads(p.read_text())
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise ConfigError([f"malformed JSON in {p}: {e}"], EXIT_SYNTAX)
    try:
        cfg = RunConfig.model_validate(raw)
    except ValidationError as e:
        raise ConfigError(_pydantic_problems(e))
    problems = _semantic_problems(cfg, kind)
    if problems:
        raise ConfigError(problems)
    return cfg


# ------------------------------------------------------------ builders

def _nonlinearity(c: NonlinearityConfig) -> NonlinearitySpec:
    return NonlinearitySpec(c.kind, c.map, c.gain, c.offset, c.clip, c.lipschitz)


def build_model(m: ModelConfig) -> ModelSpec:
    dom = DomainSpec(**m.domain.model_dump())
    basis = build_basis(dom, m.N, m.spectrum)
    nz = m.noise
    if nz.family == "explicit":
        noise = QWienerSpec(nz.coefficients, basis)
    elif nz.family == "geometric":
        noise = QWienerSpec.geometric(basis, nz.J, nz.ratio, nz.scale, nz.trace)
    else:
        noise = QWienerSpec.polynomial(basis, nz.J, nz.power, nz.scale, nz.trace)
    return ModelSpec(basis, noise, _nonlinearity(m.f), _nonlinearity(m.sigma), m.h, m.dt)


def build_initial(init: InitialConfig, model: ModelSpec):
    head = Field.zeros(model.basis)
    for k, amp in sorted(init.modes.items()):
        head = head + Field.mode(model.basis, k, amp)
    if init.constant:
        head = head + Field.from_function(model.basis, lambda x: init.constant * np.ones_like(x))
    return constant_history(head, model)


def _csv(header: list[str], rows) -> str:
    def fmt(v):
        if isinstance(v, str):
            return v
        if v is None:
            return ""
        return format(float(v), ".17g")
    return "\n".join([",".join(header)] + [",".join(fmt(v) for v in r) for r in rows]) + "\n"


# ------------------------------------------------------------ experiments

def _run_smallness(cfg: RunConfig, model: Optional[ModelSpec]):
    s = cfg.experiment.smallness
    if s is not None:
        rep = smallness_check(s.h, s.lambda1, s.a, s.L)
    else:
        rep = smallness_check(model.h, model.basis.lambda1, model.noise.trace, model.lipschitz)
    d = rep.to_dict()
    series = _csv(["h", "lambda1", "a", "L", "iteration_value", "iteration_threshold_L", "gamma0",
                   "gamma0_L2", "attractivity_threshold_L", "gamma_pred", "K_proof"],
                  [[rep.h, rep.lambda1, rep.a, rep.L, rep.iteration_value, rep.iteration_threshold_L,
                    rep.gamma0, rep.gamma0_L2, rep.attractivity_threshold_L, rep.gamma_pred, rep.K_proof]])
    report = {"check": "smallness", "pass": True, **d,
              "thresholds": {"iteration_L": round(rep.iteration_threshold_L, 5),
                             "attractivity_L": round(rep.attractivity_threshold_L, 5)}}
    return report, series


def _run_simulate(cfg, model):
    ex = cfg.experiment
    stats = run_ensemble(model, build_initial(cfg.initial, model), ex.T, ex.ensemble, cfg.seed,
                         ex.record_every, cfg.threads)
    return {"check": "simulate", "pass": True, **stats.summary()}, stats.to_csv()


def _run_picard(cfg, model):
    ex = cfg.experiment
    init = build_initial(cfg.initial, model)
    noise = freeze_noise(model, ex.T, cfg.seed)
    res = picard_solve(model, init, ex.T, noise, ex.tol, ex.max_window, ex.min_window)
    report = {"check": "picard", **res.to_dict(), "tolerance": ex.tol,
              "agreement_factor": ex.agreement_factor}
    ok = res.converged and res.max_ratio() < 1
    if res.converged:
        ref = trajectory_path(model, init, ex.T, cfg.seed)
        dist = float(np.sqrt(np.max(b0_norm_sq(res.path.values - ref, model.domain, model.representation))))
        envelope = ex.agreement_factor * (model.dt + ex.tol)
        report.update({"stepper_sup_distance": dist, "agreement_envelope": envelope})
        ok = ok and dist <= envelope
    report["pass"] = bool(ok)
    return report, res.history_csv()


def _run_stationary(cfg, model):
    ex = cfg.experiment
    res = stationary_successive_approx(model, ex.T_back, ex.T, cfg.seed, members=max(1, ex.ensemble),
                                       tol=ex.tol, doubling_tol=ex.doubling_tol, ratio_slack=ex.ratio_slack)
    d = res.distances
    rows = [[k + 1, d[k], (d[k] / d[k - 1]) if k and d[k - 1] > 0 else None] for k in range(len(d))]
    return ({"check": "stationary", **res.to_dict()},
            _csv(["iteration", "sup_mean_square_distance", "ratio"], rows))


def _run_attractivity(cfg, model):
    ex = cfg.experiment
    init1 = build_initial(cfg.initial, model)
    init2 = build_initial(ex.initial2 or InitialConfig(), model)
    rep, (t, eb, e0) = attractivity_experiment(model, init1, init2, ex.T, ex.ensemble, cfg.seed,
                                               ex.record_every, cfg.threads)
    return rep.to_dict(), _csv(["t", "E_diff_B_sq", "E_diff_B0_sq"], zip(t, eb, e0))


def _run_invariant(cfg, model):
    ex = cfg.experiment
    burn = default_burn_in(model) if ex.burn_in is None else ex.burn_in
    T = ex.T if ex.T > burn else burn + model.h
    T = round(T / model.dt) * model.dt
    fam = ObservableFamily(min(ex.observable_modes, model.basis.mode_count))
    rep, e1, e2 = invariance_experiment(model, build_initial(cfg.initial, model), T, ex.ensemble, cfg.seed,
                                        burn, fam, ex.z_threshold, cfg.threads)
    z = rep.details["z"]
    rows = [[n, e1.mean[i], e1.se[i], e2.mean[i], e2.se[i], z[n]] for i, n in enumerate(e1.names)]
    out = rep.to_dict()
    out["estimates"] = {"T": e1.to_dict(), "2T": e2.to_dict()}
    return out, _csv(["observable", "mean_T", "se_T", "mean_2T", "se_2T", "z"], rows)


def _run_homogeneity(cfg, model):
    ex = cfg.experiment
    fam = ObservableFamily(min(ex.observable_modes, model.basis.mode_count))
    rep = homogeneity_test(model, build_initial(cfg.initial, model), ex.offsets, ex.lag, ex.ensemble,
                           cfg.seed, fam, ex.z_threshold, cfg.threads)
    rows = []
    for s, est in rep.details["estimates"].items():
        for n, v in est["observables"].items():
            rows.append([s, n, v["mean"], v["se"]])
    return rep.to_dict(), _csv(["offset", "observable", "mean", "se"], rows)


def _run_kernel_check(cfg, model):
    ex = cfg.experiment
    basis = model.basis
    dom = basis.domain
    T = ex.T if ex.T > 0 else 1.0
    reports = [
        verify_kernel_bound(dom, basis, T, n_xy=ex.kernel_samples, seed=cfg.seed),
        verify_weighted_smoothing(dom, basis, list(np.linspace(T / 20, T, 20))),
        verify_semigroup_law(basis, [(0.1, 0.2), (0.5, 0.5), (T, T / 3)], seed=cfg.seed),
    ]
    hs = hilbert_schmidt_norm_delay_op(basis, ex.hs_T0, ex.hs_h)
    rows = [[r.check, r.worst_ratio, int(r.passed)] for r in reports] + [["hilbert_schmidt_sq", hs, 1]]
    report = {"check": "kernel-check", "pass": all(r.passed for r in reports),
              "checks": [r.to_dict() for r in reports],
              "hilbert_schmidt_sq": {"value": hs, "T0": ex.hs_T0, "h": ex.hs_h}}
    return report, _csv(["check", "worst_ratio", "pass"], rows)


RUNNERS = {
    "simulate": _run_simulate, "picard": _run_picard, "stationary": _run_stationary,
    "attractivity": _run_attractivity, "invariant": _run_invariant, "homogeneity": _run_homogeneity,
    "kernel-check": _run_kernel_check, "smallness": _run_smallness,
}


def run_experiment(kind: str, cfg: RunConfig, out_dir: Optional[Path] = None) -> int:
    """Run one experiment and write its artifacts; returns the exit status."""
    out = Path(out_dir if out_dir is not None else cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    model = build_model(cfg.model) if cfg.model is not None else None
    status = EXIT_OK
    try:
        report, series = RUNNERS[kind](cfg, model)
        if not report.get("pass", False):
            status = EXIT_FAILED
    except NumericalAbort as e:
        report, series, status = {"check": kind, "pass": False, "error": str(e), "t": e.t}, "", EXIT_ABORT
    except SmallnessViolation as e:
        report = {"check": kind, "pass": False, "error": "smallness condition violated",
                  "smallness": e.report.to_dict()}
        series, status = "", EXIT_FAILED
    (out / "report.json").write_text(dumps(report) + "\n")
    (out / "series.csv").write_text(series)
    manifest = {
        "kind": kind,
        "seed": cfg.seed,
        "threads": cfg.threads,
        "config": cfg.model_dump(mode="json"),
        "versions": {"sfde": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                     "python": platform.python_version()},
        "exit_status": status,
        "wall_time_s": time.perf_counter() - start,
    }
    (out / "manifest.json").write_text(dumps(manifest) + "\n")
    return status


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="sfde", description="Stochastic delay reaction-diffusion experiments.")
    ap.add_argument("kind", choices=KINDS)
    ap.add_argument("--config", required=True, help="JSON experiment config")
    ap.add_argument("--seed", type=int, default=None, help="override the config seed")
    ap.add_argument("--out", default=None, help="output directory (overrides output_dir)")
    ap.add_argument("--threads", type=int, default=None, help="worker threads for ensembles")
    args = ap.parse_args(argv)
    try:
        cfg = parse_config(args.config, args.kind)
        updates = {}
        if args.seed is not None:
            updates["seed"] = args.seed
        if args.threads is not None:
            if args.threads < 1:
                raise ConfigError(["--threads must be >= 1"])
            updates["threads"] = args.threads
        if updates:
            cfg = cfg.model_copy(update=updates)
    except ConfigError as e:
        for p in e.problems:
            print(f"config error: {p}", file=sys.stderr)
        return e.code
    status = run_experiment(args.kind, cfg, Path(args.out) if args.out else None)
    report = json.loads((Path(args.out or cfg.output_dir) / "report.json").read_text())
    label = {EXIT_OK: "pass", EXIT_FAILED: "FAILED", EXIT_ABORT: "ABORTED"}.get(status, str(status))
    print(f"{args.kind}: {label} ({report.get('check', args.kind)})")
    return status


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
