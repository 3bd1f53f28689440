"""Truncated Q-Wiener noise, reproducible random streams, noise-integral checks.

W(t) = sum_i sqrt(a_i) beta_i(t) e_i with J modes of the shared sine basis.
Randomness comes from counter-based Philox streams keyed by
(seed, branch, stream id): one stream per trajectory, so an ensemble gives
the same paths however it is split across workers. Branch 0 drives
t >= 0 and branch 1 the independent copy used for t < 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .reports import CheckReport
from .spectral_domain import EigenBasis, Field

__all__ = [
    "QWienerSpec",
    "RngStream",
    "StreamFamily",
    "FORWARD",
    "BACKWARD",
    "extend_two_sided",
    "sample_increment",
    "NoiseSource",
    "two_sided_normals",
    "convolution_std",
    "verify_noise_estimate",
]

FORWARD = 0
BACKWARD = 1


@dataclass(frozen=True, eq=False)
class QWienerSpec:
    """Diagonal trace-class covariance Q e_i = a_i e_i on the first J modes."""

    coefficients: np.ndarray
    basis: EigenBasis

    def __post_init__(self):
        a = np.array(self.coefficients, dtype=float).ravel()
        if a.size < 1:
            raise ValueError("need at least one noise mode")
        if not np.all(np.isfinite(a)) or np.any(a < 0):
            raise ValueError("noise coefficients must be finite and nonnegative")
        if a.size > self.basis.mode_count:
            raise ValueError(f"J = {a.size} noise modes exceed N = {self.basis.mode_count}")
        a.setflags(write=False)
        object.__setattr__(self, "coefficients", a)

    @property
    def J(self) -> int:
        return self.coefficients.size

    @property
    def trace(self) -> float:
        return float(self.coefficients.sum())

    @property
    def sqrt_coefficients(self) -> np.ndarray:
        return np.sqrt(self.coefficients)

    @classmethod
    def geometric(cls, basis: EigenBasis, J: int, ratio: float, scale: float = 1.0,
                  trace: Optional[float] = None) -> "QWienerSpec":
        """a_i = scale * ratio^(i-1); rescaled to sum to ``trace`` if given."""
        if not 0 < ratio:
            raise ValueError("geometric ratio must be positive")
        a = scale * ratio ** np.arange(J, dtype=float)
        if trace is not None:
            a = a * (trace / a.sum())
        return cls(a, basis)

    @classmethod
    def polynomial(cls, basis: EigenBasis, J: int, power: float, scale: float = 1.0,
                   trace: Optional[float] = None) -> "QWienerSpec":
        """a_i = scale * i^(-power); rescaled to sum to ``trace`` if given."""
        a = scale * np.arange(1, J + 1, dtype=float) ** (-power)
        if trace is not None:
            a = a * (trace / a.sum())
        return cls(a, basis)

    def synthesize(self, coeffs: np.ndarray) -> np.ndarray:
        """Grid values of sum_i c_i e_i over the last axis."""
        return coeffs @ self.basis.table[: self.J]


class RngStream:
    """A Philox stream keyed by (seed, branch, stream id).

    The key is derived through :class:`numpy.random.SeedSequence`, so equal
    triples give bit-identical draws and distinct ones give independent
    streams. ``counter`` exposes the Philox block counter.
    """

    __slots__ = ("seed", "stream_id", "branch", "generator")

    def __init__(self, seed: int, stream_id: int, branch: int = FORWARD):
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        self.branch = int(branch)
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.branch, self.stream_id))
        key = ss.generate_state(2, dtype=np.uint64)
        self.generator = np.random.Generator(np.random.Philox(key=key))

    @property
    def counter(self) -> int:
        c = self.generator.bit_generator.state["state"]["counter"]
        return int(sum(int(v) << (64 * i) for i, v in enumerate(c)))

    def normal(self, size) -> np.ndarray:
        return self.generator.standard_normal(size)

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id}, branch={self.branch})"


@dataclass(frozen=True)
class StreamFamily:
    """Indexed streams sharing a seed and branch; member i gets stream i."""

    seed: int
    branch: int = FORWARD

    def stream(self, i: int) -> RngStream:
        return RngStream(self.seed, i, self.branch)


def extend_two_sided(seed: int) -> tuple[StreamFamily, StreamFamily]:
    """Independent stream families for the t >= 0 and t < 0 halves of the noise."""
    return StreamFamily(seed, FORWARD), StreamFamily(seed, BACKWARD)


def sample_increment(spec: QWienerSpec, dt: float, rng: RngStream) -> Field:
    """W(t + dt) - W(t): mode i coefficient sqrt(a_i dt) xi_i."""
    if not dt > 0:
        raise ValueError("increment needs dt > 0")
    c = spec.sqrt_coefficients * math.sqrt(dt) * rng.normal(spec.J)
    d = spec.basis.domain
    if d.bounded:
        full = np.zeros(spec.basis.mode_count)
        full[: spec.J] = c
        return Field(full, d)
    return Field(spec.synthesize(c), d, "grid")


class NoiseSource:
    """Standard normals for an ensemble, drawn per member from its own stream.

    ``next(n)`` returns an array (n, members, J). Each member's numbers depend
    only on its stream, never on how many steps are drawn at a time.
    """

    def __init__(self, family: StreamFamily, members: Sequence[int], J: int, skip_steps: int = 0):
        self.streams = [family.stream(int(m)) for m in members]
        self.J = int(J)
        if skip_steps:
            for s in self.streams:
                s.normal((skip_steps, self.J))

    def next(self, n: int) -> np.ndarray:
        out = np.empty((n, len(self.streams), self.J))
        for b, s in enumerate(self.streams):
            out[:, b, :] = s.normal((n, self.J))
        return out


def two_sided_normals(seed: int, members: Sequence[int], J: int, n_back: int, n_fwd: int) -> np.ndarray:
    """Standard normals on the step grid of [-n_back dt, n_fwd dt].

    The backward family is read outward from t = 0, so extending ``n_back``
    leaves the steps nearest zero unchanged. W(t) = V(-t) for t < 0 flips the
    sign of those increments.
    """
    fwd_family, back_family = extend_two_sided(seed)
    back = NoiseSource(back_family, members, J).next(n_back) if n_back else np.empty((0, len(members), J))
    fwd = NoiseSource(fwd_family, members, J).next(n_fwd) if n_fwd else np.empty((0, len(members), J))
    return np.concatenate([-back[::-1], fwd], axis=0)


def convolution_std(basis: EigenBasis, spec: QWienerSpec, dt: float) -> np.ndarray:
    """Std of int_0^dt exp(-lambda_k (dt - s)) sqrt(a_k) d beta_k, per noise mode."""
    lam = basis.eigenvalues[: spec.J]
    return np.sqrt(spec.coefficients * -np.expm1(-2 * lam * dt) / (2 * lam))


def verify_noise_estimate(spec: QWienerSpec, integrand: Callable[[float], np.ndarray], t: float,
                          kind: str = "multiplier", n_samples: int = 10_000, n_steps: int = 1000,
                          seed: int = 0, analytic: Optional[float] = None) -> CheckReport:
    """Monte Carlo check of E||int_0^t Psi dW||^2 <= a sup||e_n||^2 int ||Psi||^2 ds.

    ``kind="multiplier"``: integrand(s) gives grid values of phi(s, x) and
    Psi(s) dW = phi(s, .) dW. ``kind="diagonal"``: integrand(s) gives one
    multiplier per noise mode (e.g. exp(-lambda_k (t - s)) for S(t - s)),
    and the bound uses the operator norm max_k |m_k(s)| without the sup-norm
    factor.
    The stochastic integral is the left-point Ito sum on ``n_steps`` steps.
    Passes when the estimate minus three standard errors is under the bound
    and, if ``analytic`` is given, the estimate is within three standard
    errors of it.
    """
    if kind not in ("multiplier", "diagonal"):
        raise ValueError(f"unknown integrand kind {kind!r}")
    basis = spec.basis
    d = basis.domain
    ds = t / n_steps
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(7,)))
    sq = spec.sqrt_coefficients
    a = spec.coefficients
    acc = None
    exact = 0.0
    bound_int = 0.0
    e2 = basis.table[: spec.J] ** 2
    for j in range(n_steps):
        s = j * ds
        psi = np.asarray(integrand(s), dtype=float)
        xi = rng.standard_normal((n_samples, spec.J)) * (sq * math.sqrt(ds))
        if kind == "multiplier":
            incr = psi * spec.synthesize(xi)
            exact += ds * float(np.sum(a * (e2 @ (psi * psi * d.weighted_quad))))
            bound_int += ds * float((psi * psi) @ d.weighted_quad)
        else:
            psi = psi[: spec.J]
            incr = psi * xi
            exact += ds * float(np.sum(a * psi * psi))
            bound_int += ds * float(np.max(psi * psi))
        acc = incr if acc is None else acc + incr
    if kind == "multiplier":
        sq_norms = (acc * acc) @ d.weighted_quad
    else:
        sq_norms = np.sum(acc * acc, axis=-1)
    est = float(sq_norms.mean())
    se = float(sq_norms.std(ddof=1) / math.sqrt(n_samples))
    # a multiplier picks up sup ||e_n||_inf^2; a diagonal operator only its operator norm
    e_factor = basis.sup_norm ** 2 if kind == "multiplier" else 1.0
    bound = spec.trace * e_factor * bound_int
    passed = est - 3 * se <= bound
    if analytic is not None:
        passed = passed and abs(est - analytic) <= 3 * se
    return CheckReport(
        check="noise_estimate",
        samples=n_samples,
        worst_ratio=est / bound if bound > 0 else 0.0,
        constants={"bound": bound, "trace": spec.trace, "sup_e_sq": e_factor},
        passed=bool(passed),
        details={"estimate": est, "standard_error": se, "discrete_exact": exact,
                 "analytic": analytic, "kind": kind, "t": t},
    )
