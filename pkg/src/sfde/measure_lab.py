"""Empirical invariant measures: ensemble observables, time averages, invariance,
homogeneity, tightness and continuous-dependence diagnostics.

Laws on B are compared only through a fixed finite family of observables.
Standard errors are sqrt(variance / n) with the unbiased variance, and
estimates merge with the parallel (Chan et al.) update so half-ensembles
combine into the full one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import stats as sps

from .delay_dynamics import ModelSpec, simulate_members, steps_for, _segment_b1_sq, _mode_coeffs
from .reports import CheckReport
from .spectral_domain import DelaySegment, FullState, b0_norm_sq

__all__ = [
    "ObservableFamily",
    "MeasureEstimate",
    "default_burn_in",
    "ensemble_observables",
    "krylov_bogoliubov_average",
    "invariance_test",
    "invariance_experiment",
    "homogeneity_test",
    "TerminalSample",
    "terminal_sample",
    "tightness_diagnostic",
    "feller_perturbation_test",
]

AUX_BRANCH = 2  # stream branches >= 2 are free for experiments needing independent ensembles


@dataclass(frozen=True)
class ObservableFamily:
    """Mode coefficients <u, e_k> and their squares for k <= K, the two
    squared norms, and the bounded transforms tanh(<u, e_k>)."""

    K: int

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("observable family needs at least one mode")

    @property
    def names(self) -> list[str]:
        ks = range(1, self.K + 1)
        return ([f"mode{k}" for k in ks] + [f"mode{k}_sq" for k in ks]
                + ["norm_B0_sq", "norm_B1_sq"] + [f"tanh_mode{k}" for k in ks])

    @property
    def bounded_mask(self) -> np.ndarray:
        return np.array([n.startswith("tanh_") for n in self.names])

    def index(self, name: str) -> int:
        return self.names.index(name)

    def evaluate(self, model: ModelSpec, u: np.ndarray, seg) -> np.ndarray:
        """u: (B, R) heads of copy 0; seg: the ensemble segment. Returns (B, n_obs)."""
        if self.K > model.basis.mode_count:
            raise ValueError(f"K = {self.K} exceeds the {model.basis.mode_count} available modes")
        c = _mode_coeffs(model, u)[:, : self.K]
        b0 = b0_norm_sq(u, model.domain, model.representation)
        b1 = _segment_b1_sq(seg)[:, 0]
        return np.concatenate([c, c * c, b0[:, None], b1[:, None], np.tanh(c)], axis=1)


@dataclass
class MeasureEstimate:
    """Per-observable mean, centered second-moment sum and count."""

    names: list
    count: int
    mean: np.ndarray
    m2: np.ndarray
    sample_times: list = field(default_factory=list)
    burn_in: float = 0.0
    bounded_mask: Optional[np.ndarray] = None

    @classmethod
    def from_samples(cls, family: ObservableFamily, samples: np.ndarray, sample_times=(),
                     burn_in: float = 0.0) -> "MeasureEstimate":
        x = np.asarray(samples, dtype=float)
        if x.ndim != 2 or x.shape[0] < 1:
            raise ValueError("samples must be (n, n_obs) with n >= 1")
        if not np.all(np.isfinite(x)):
            raise ValueError("observable samples contain non-finite values")
        mu = x.mean(axis=0)
        return cls(family.names, x.shape[0], mu, ((x - mu) ** 2).sum(axis=0),
                   list(sample_times), burn_in, family.bounded_mask)

    @property
    def variance(self) -> np.ndarray:
        if self.count < 2:
            return np.zeros_like(self.mean)
        return self.m2 / (self.count - 1)

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(self.variance / self.count)

    def merge(self, other: "MeasureEstimate") -> "MeasureEstimate":
        if self.names != other.names:
            raise ValueError("estimates use different observable families")
        n = self.count + other.count
        delta = other.mean - self.mean
        mean = self.mean + delta * (other.count / n)
        m2 = self.m2 + other.m2 + delta * delta * (self.count * other.count / n)
        return MeasureEstimate(self.names, n, mean, m2, self.sample_times, self.burn_in, self.bounded_mask)

    def get(self, name: str) -> tuple[float, float]:
        i = self.names.index(name)
        return float(self.mean[i]), float(self.se[i])

    def to_dict(self) -> dict:
        return {
            "count": self.count, "sample_times": self.sample_times, "burn_in": self.burn_in,
            "observables": {n: {"mean": float(m), "variance": float(v), "se": float(s)}
                            for n, m, v, s in zip(self.names, self.mean, self.variance, self.se)},
        }


def default_burn_in(model: ModelSpec) -> float:
    """5 / lambda1 + h, rounded up to a whole number of steps."""
    raw = 5.0 / model.basis.lambda1 + model.h
    return math.ceil(raw / model.dt - 1e-9) * model.dt


def _family_for(model: ModelSpec, family: Optional[ObservableFamily]) -> ObservableFamily:
    return family if family is not None else ObservableFamily(min(4, model.basis.mode_count))


def _observe(model, initial, T, n_traj, seed, family, record_steps, threads, branch=0, skip_steps=0):
    """Per-trajectory observables (n_traj, n_record, n_obs)."""
    obs = lambda n, u, seg: family.evaluate(model, u[:, 0], seg)
    parts = simulate_members(model, initial, T, n_traj, seed, obs, threads=threads, branch=branch,
                             skip_steps=skip_steps, record_steps=record_steps)
    return np.concatenate(parts, axis=0)


def ensemble_observables(model: ModelSpec, initial: FullState, n_traj: int, sample_times: Sequence[float],
                         seed: int, burn_in: Optional[float] = None,
                         family: Optional[ObservableFamily] = None, threads: int = 1,
                         branch: int = 0) -> MeasureEstimate:
    """Observables of independent trajectories at the sample times.

    With several sample times each trajectory contributes the average of
    its values over them, so samples stay independent.
    """
    if n_traj < 2:
        raise ValueError("need at least two trajectories for a variance")
    burn = default_burn_in(model) if burn_in is None else float(burn_in)
    times = sorted(float(t) for t in sample_times)
    if not times or times[0] <= burn:
        raise ValueError(f"sample times must exceed the burn-in {burn}")
    family = _family_for(model, family)
    steps = [steps_for(t, model.dt) for t in times]
    vals = _observe(model, initial, times[-1], n_traj, seed, family, steps, threads, branch)
    return MeasureEstimate.from_samples(family, vals.mean(axis=1), times, burn)


@dataclass
class KrylovBogoliubovResult:
    horizons: list
    estimates: list
    cauchy_gaps: list  # max |mean(T_{i+1}) - mean(T_i)| per consecutive pair

    def to_dict(self) -> dict:
        return {"horizons": self.horizons, "cauchy_gaps": self.cauchy_gaps,
                "estimates": [e.to_dict() for e in self.estimates]}


def krylov_bogoliubov_average(model: ModelSpec, initial: FullState, horizons: Sequence[float], n_traj: int,
                              seed: int, family: Optional[ObservableFamily] = None, record_every: int = 10,
                              threads: int = 1) -> KrylovBogoliubovResult:
    """Time averages (1/T) int_0^T phi(y(s)) ds per trajectory, for each T.

    The integral is the trapezoid rule on the recording grid, so each T must
    be a whole number of recording intervals.
    """
    hs = [float(T) for T in horizons]
    if not hs or any(b <= a for a, b in zip(hs, hs[1:])) or hs[0] <= 0:
        raise ValueError("horizons must be positive and increasing")
    family = _family_for(model, family)
    n_max = steps_for(hs[-1], model.dt)
    for T in hs:
        if steps_for(T, model.dt) % record_every:
            raise ValueError(f"horizon {T} is not a multiple of the recording interval")
    rec = np.arange(0, n_max + 1, record_every)
    vals = _observe(model, initial, hs[-1], n_traj, seed, family, rec, threads)
    dtr = record_every * model.dt
    cum = np.concatenate([np.zeros((vals.shape[0], 1, vals.shape[2])),
                          np.cumsum(0.5 * dtr * (vals[:, 1:] + vals[:, :-1]), axis=1)], axis=1)
    ests = []
    for T in hs:
        i = steps_for(T, model.dt) // record_every
        ests.append(MeasureEstimate.from_samples(family, cum[:, i] / T, [T]))
    gaps = [float(np.max(np.abs(b.mean - a.mean))) for a, b in zip(ests, ests[1:])]
    return KrylovBogoliubovResult(hs, ests, gaps)


def _z_scores(a: MeasureEstimate, b: MeasureEstimate, abs_tol: float):
    gap = a.mean - b.mean
    pooled = np.sqrt(a.se ** 2 + b.se ** 2)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(pooled > 0, gap / np.where(pooled > 0, pooled, 1.0),
                     np.where(np.abs(gap) <= abs_tol, 0.0, np.inf))
    return gap, pooled, z


def invariance_test(est_T1: MeasureEstimate, est_T2: MeasureEstimate, z_threshold: float = 3.0,
                    abs_tol: float = 1e-8) -> CheckReport:
    """z-scores of mean differences between two estimates of the same family.

    Passes iff every |z| <= z_threshold and the largest mean gap among the
    bounded transforms is within z_threshold pooled standard errors (or
    ``abs_tol`` when both ensembles are deterministic).
    """
    if est_T1.names != est_T2.names:
        raise ValueError("estimates use different observable families")
    gap, pooled, z = _z_scores(est_T1, est_T2, abs_tol)
    az = np.abs(z)
    worst = int(np.argmax(az))
    mask = est_T1.bounded_mask if est_T1.bounded_mask is not None else np.zeros(len(gap), bool)
    b_gap = float(np.max(np.abs(gap[mask]))) if mask.any() else 0.0
    b_pool = float(np.max(pooled[mask])) if mask.any() else 0.0
    bounded_ok = b_gap <= max(z_threshold * b_pool, abs_tol)
    passed = bool(az.max() <= z_threshold and bounded_ok)
    return CheckReport(
        check="invariance",
        samples=min(est_T1.count, est_T2.count),
        worst_ratio=float(az.max()),
        constants={"z_threshold": z_threshold, "abs_tol": abs_tol},
        passed=passed,
        details={"worst_observable": est_T1.names[worst],
                 "z": {n: float(v) for n, v in zip(est_T1.names, z)},
                 "bounded_max_gap": b_gap, "bounded_pooled_se": b_pool,
                 "times": [est_T1.sample_times, est_T2.sample_times]},
    )


def invariance_experiment(model: ModelSpec, initial: FullState, T: float, n_traj: int, seed: int,
                          burn_in: Optional[float] = None, family: Optional[ObservableFamily] = None,
                          z_threshold: float = 3.0, threads: int = 1):
    """Estimates at T and 2T from independent ensembles, then the invariance test."""
    e1 = ensemble_observables(model, initial, n_traj, [T], seed, burn_in, family, threads, AUX_BRANCH)
    e2 = ensemble_observables(model, initial, n_traj, [2 * T], seed, burn_in, family, threads, AUX_BRANCH + 1)
    return invariance_test(e1, e2, z_threshold), e1, e2


def homogeneity_test(model: ModelSpec, initial: FullState, offsets: Sequence[float], lag: float, n_traj: int,
                     seed: int, family: Optional[ObservableFamily] = None, z_threshold: float = 3.0,
                     threads: int = 1) -> CheckReport:
    """Law at lag after restarting from the same data at each offset s.

    The run started at s is driven by the noise increments of [s, s + lag]
    from one stream family, so offsets at least ``lag`` apart use disjoint
    noise and give independent ensembles.
    """
    if n_traj < 2:
        raise ValueError("need at least two trajectories")
    family = _family_for(model, family)
    n_lag = steps_for(lag, model.dt)
    raws, ests = [], []
    for s in offsets:
        skip = steps_for(s, model.dt)
        v = _observe(model, initial, lag, n_traj, seed, family, [n_lag], threads, skip_steps=skip)[:, 0]
        raws.append(v)
        ests.append(MeasureEstimate.from_samples(family, v, [s + lag]))
    zmax, pairs = 0.0, []
    for i in range(len(ests)):
        for j in range(i + 1, len(ests)):
            _, _, z = _z_scores(ests[i], ests[j], 1e-12)
            m = float(np.max(np.abs(z)))
            pairs.append({"offsets": [offsets[i], offsets[j]], "max_abs_z": m})
            zmax = max(zmax, m)
    identical = all(np.array_equal(raws[0], r) for r in raws[1:])
    return CheckReport(
        check="homogeneity", samples=n_traj, worst_ratio=zmax,
        constants={"z_threshold": z_threshold, "lag": lag},
        passed=bool(zmax <= z_threshold),
        details={"pairs": pairs, "bit_identical": identical,
                 "estimates": {str(s): e.to_dict() for s, e in zip(offsets, ests)}},
    )


@dataclass
class TerminalSample:
    """Norms of an ensemble's terminal states."""

    norm_B_sq: np.ndarray
    norm_B0_sq: np.ndarray
    high_energy: np.ndarray
    mode_energy: np.ndarray  # (n, N) squared coefficients

    @property
    def count(self) -> int:
        return self.norm_B_sq.size


def terminal_sample(model: ModelSpec, initial: FullState, T: float, n_traj: int, seed: int,
                    threads: int = 1, branch: int = 0) -> TerminalSample:
    N = model.basis.mode_count
    n_steps = steps_for(T, model.dt)

    def obs(n, u, seg):
        c = _mode_coeffs(model, u[:, 0])
        b0 = b0_norm_sq(u[:, 0], model.domain, model.representation)
        b1 = _segment_b1_sq(seg)[:, 0]
        return np.concatenate([(b0 + b1)[:, None], b0[:, None], c * c], axis=1)

    parts = simulate_members(model, initial, T, n_traj, seed, obs, threads=threads, branch=branch,
                             record_steps=[n_steps])
    v = np.concatenate(parts, axis=0)[:, 0]
    modes = v[:, 2:]
    return TerminalSample(v[:, 0], v[:, 1], modes[:, N // 2:].sum(axis=1), modes)


def tightness_diagnostic(sample: TerminalSample, r_levels: Sequence[float]) -> CheckReport:
    """Tail fractions P(||y||_B > r) and P(high-mode energy > r * mean ||u||^2).

    High modes are k > N/2. Passes iff both fractions are non-increasing in
    r and the norm tail respects Chebyshev, fraction <= E||y||^2 / r^2 plus
    three standard errors of both sides.
    """
    r = np.asarray(sorted(float(x) for x in r_levels))
    if r.size == 0 or r[0] <= 0:
        raise ValueError("r levels must be positive")
    n = sample.count
    norm = np.sqrt(sample.norm_B_sq)
    m2 = float(sample.norm_B_sq.mean())
    m2_se = float(sample.norm_B_sq.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    mean_u = float(sample.norm_B0_sq.mean())
    frac = np.array([(norm > x).mean() for x in r])
    frac_se = np.sqrt(frac * (1 - frac) / n)
    high = np.array([(sample.high_energy > x * mean_u).mean() for x in r]) if mean_u > 0 else np.zeros_like(r)
    cheb = m2 / r ** 2
    cheb_ok = bool(np.all(frac <= cheb + 3 * (frac_se + m2_se / r ** 2) + 1e-15))
    mono = bool(np.all(np.diff(frac) <= 0) and np.all(np.diff(high) <= 0))
    pos = frac > 0
    exponent = None
    if pos.sum() >= 2:
        exponent = float(-sps.linregress(np.log(r[pos]), np.log(frac[pos])).slope)
    tot = sample.mode_energy.sum(axis=1)
    high_frac = float(sample.high_energy.mean() / tot.mean()) if tot.mean() > 0 else 0.0
    # delta-method SE of a ratio of means
    if n > 1 and tot.mean() > 0:
        resid = sample.high_energy - high_frac * tot
        high_frac_se = float(resid.std(ddof=1) / math.sqrt(n) / tot.mean())
    else:
        high_frac_se = 0.0
    return CheckReport(
        check="tightness", samples=n, worst_ratio=float(np.max(frac / cheb)) if m2 > 0 else 0.0,
        constants={"r_levels": r.tolist(), "second_moment": m2, "second_moment_se": m2_se},
        passed=mono and cheb_ok,
        details={"tail_fraction": frac.tolist(), "chebyshev_bound": cheb.tolist(),
                 "high_mode_tail_fraction": high.tolist(), "tail_exponent": exponent,
                 "high_mode_energy_fraction": high_frac, "high_mode_energy_fraction_se": high_frac_se,
                 "monotone": mono, "chebyshev_consistent": cheb_ok},
    )


def feller_perturbation_test(model: ModelSpec, initial: FullState, perturbation: FullState,
                             scales: Sequence[float], T: float, n_traj: int, seed: int,
                             plateau_factor: float = 4.0, record_every: int = 1,
                             threads: int = 1) -> CheckReport:
    """sup_t E||y - y_s||_B^2 / ||phi - phi_s||_B^2 for phi_s = phi + s * perturbation.

    All copies of a member share its noise path. Passes iff every ratio is
    finite and none exceeds ``plateau_factor`` times the ratio at the
    largest scale, i.e. no blow-up as the perturbation shrinks.
    """
    sc = [float(s) for s in scales]
    if not sc or any(s < 0 for s in sc) or any(b > a for a, b in zip(sc, sc[1:])):
        raise ValueError("scales must be nonnegative and decreasing")
    base_h, base_seg = initial.head.values, initial.segment.ordered()
    dh, dseg = perturbation.head.values, perturbation.segment.ordered()
    copies = [initial]
    for s in sc:
        seg = DelaySegment(base_seg + s * dseg, model.h, model.dt, model.domain, model.representation)
        copies.append(FullState.from_history(seg))
    dom, rep = model.domain, model.representation
    dt = model.dt

    def obs(n, u, seg):
        du = u[:, :1] - u[:, 1:]
        d0 = b0_norm_sq(du, dom, rep)
        raw = seg.raw
        sq = b0_norm_sq(raw[:, :, :1] - raw[:, :, 1:], dom, rep)
        old = b0_norm_sq(seg.oldest[:, :1] - seg.oldest[:, 1:], dom, rep)
        return d0 + dt * (sq.sum(axis=0) - 0.5 * (old + d0))

    parts = simulate_members(model, copies, T, n_traj, seed, obs, record_every,
                             reduce=lambda a: a.sum(axis=0), threads=threads)
    total = parts[0]
    for p in parts[1:]:
        total = total + p
    mean = total / n_traj  # (n_record, S)
    sup = mean.max(axis=0)
    q = b0_norm_sq(dseg, dom, rep)
    pert = float(b0_norm_sq(dh, dom, rep) + dt * (q.sum() - 0.5 * (q[0] + q[-1])))
    init_sq = [s * s * pert for s in sc]
    ratios = [float(m / d) if d > 0 else None for m, d in zip(sup, init_sq)]
    finite = [r for r in ratios if r is not None]
    ok = all(math.isfinite(r) for r in finite)
    if finite:
        ok = ok and max(finite) <= plateau_factor * finite[0]
    zero_ok = all(float(m) == 0.0 for m, s in zip(sup, sc) if s == 0)
    return CheckReport(
        check="feller_perturbation", samples=n_traj,
        worst_ratio=max(finite) if finite else 0.0,
        constants={"plateau_factor": plateau_factor, "T": T},
        passed=bool(ok and zero_ok),
        details={"scales": sc, "ratios": ratios, "sup_E_diff_sq": sup.tolist(), "initial_diff_sq": init_sq},
    )
