"""Delay nonlinearities, the exponential-Euler mild stepper, and ensembles.

States are carried as arrays whose last axis is the field representation
(spectral coefficients on the interval, grid values on the line). The
ensemble engine stacks members along a leading axis and, optionally,
several "copies" per member that share one noise path (used for pairwise
experiments such as attractivity and continuous dependence).

One step over dt on the interval, mode by mode:

    u_k <- exp(-lam_k dt) u_k + (1 - exp(-lam_k dt)) / lam_k * f_k + P[sigma * zeta]_k

where zeta = sum_j Z_j e_j with Z_j drawn at the exact variance of the
linear stochastic convolution over one step. On the line the Gaussian
kernel replaces the mode factors: u <- K_dt (u + dt f + sigma dW).
"""

from __future__ import annotations

import enum
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Optional, Sequence

import numpy as np

from .reports import CheckReport
from .semigroup_kernel import kernel_matrix
from .spectral_domain import (
    DelaySegment,
    EigenBasis,
    Field,
    FullState,
    b0_norm_sq,
    delay_steps,
)
from .stochastic_driver import FORWARD, NoiseSource, QWienerSpec, RngStream, StreamFamily

__all__ = [
    "NonlinearityKind",
    "NonlinearitySpec",
    "ModelSpec",
    "NumericalAbort",
    "TrajectoryStats",
    "eval_f",
    "eval_sigma",
    "lipschitz_probe",
    "step",
    "run_trajectory",
    "run_ensemble",
    "simulate_members",
    "steps_for",
    "moment_bound_experiment",
    "mean_square_continuity",
]

DEFAULT_BLOCK = 32
NOISE_CHUNK = 256  # steps of normals drawn per stream at a time; any value gives the same numbers


class NumericalAbort(RuntimeError):
    """A trajectory produced a non-finite value."""

    def __init__(self, t: float, detail: str = ""):
        self.t = float(t)
        super().__init__(f"non-finite state at t={self.t:.6g}" + (f": {detail}" if detail else ""))


class NonlinearityKind(str, enum.Enum):
    ZERO = "zero"
    INTEGRAL_LIPSCHITZ = "integral_lipschitz"
    POINT_DELAY = "point_delay"
    CUSTOM = "custom"


# scalar primitives and their Lipschitz constants
_MAPS: dict[str, tuple[Callable[[np.ndarray], np.ndarray], float, bool]] = {
    "identity": (lambda v: v, 1.0, False),
    "tanh": (np.tanh, 1.0, True),
    "sin": (np.sin, 1.0, True),
    "constant": (np.ones_like, 0.0, True),
}


@dataclass(frozen=True)
class NonlinearitySpec:
    """A delay functional F: B1 -> B0 built from a scalar map.

    The scalar map is v -> offset + gain * map(v), optionally clipped to
    [-clip, clip]. IntegralLipschitz applies it pointwise to the theta
    integral of the segment, PointDelay to the value at theta = -h, Custom
    calls ``custom(grid_history, thetas)`` with the theta-ordered grid
    snapshots and expects grid values back.

    ``lipschitz`` is the declared constant in the B1 -> B0 sense. It is
    optional except for Custom; when given it must not undercut what the
    construction guarantees.
    """

    kind: NonlinearityKind = NonlinearityKind.ZERO
    map: str = "identity"
    gain: float = 1.0
    offset: float = 0.0
    clip: Optional[float] = None
    lipschitz: Optional[float] = None
    custom: Optional[Callable] = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "kind", NonlinearityKind(self.kind))
        if self.map not in _MAPS:
            raise ValueError(f"unknown scalar map {self.map!r}; choose from {sorted(_MAPS)}")
        if not (math.isfinite(self.gain) and math.isfinite(self.offset)):
            raise ValueError("gain and offset must be finite")
        if self.clip is not None and not self.clip > 0:
            raise ValueError(f"clip level must be positive, got {self.clip}")
        if self.kind is NonlinearityKind.CUSTOM:
            if not callable(self.custom):
                raise ValueError("custom nonlinearity needs a callable")
            if self.lipschitz is None:
                raise ValueError("custom nonlinearity needs a declared Lipschitz constant")
        if self.lipschitz is not None and not self.lipschitz >= 0:
            raise ValueError("declared Lipschitz constant must be nonnegative")

    # convenience constructors
    @classmethod
    def zero(cls) -> "NonlinearitySpec":
        return cls()

    @classmethod
    def integral(cls, map: str = "identity", gain: float = 1.0, offset: float = 0.0,
                 clip: Optional[float] = None) -> "NonlinearitySpec":
        return cls(NonlinearityKind.INTEGRAL_LIPSCHITZ, map, gain, offset, clip)

    @classmethod
    def point_delay(cls, map: str = "identity", gain: float = 1.0, offset: float = 0.0,
                    clip: Optional[float] = None) -> "NonlinearitySpec":
        return cls(NonlinearityKind.POINT_DELAY, map, gain, offset, clip)

    @classmethod
    def constant(cls, value: float) -> "NonlinearitySpec":
        """The state-independent functional F = value (additive noise when used as sigma)."""
        return cls(NonlinearityKind.INTEGRAL_LIPSCHITZ, "constant", gain=value)

    @property
    def is_zero(self) -> bool:
        return self.kind is NonlinearityKind.ZERO or (
            self.kind is not NonlinearityKind.CUSTOM and self.map == "constant"
            and self.gain + self.offset == 0
        )

    @property
    def state_independent(self) -> bool:
        return self.kind is NonlinearityKind.ZERO or (
            self.kind is not NonlinearityKind.CUSTOM and self.map == "constant")

    @property
    def bounded(self) -> bool:
        if self.kind is NonlinearityKind.ZERO or self.clip is not None:
            return True
        if self.kind is NonlinearityKind.CUSTOM:
            return False
        return _MAPS[self.map][2]

    def envelope(self) -> float:
        """sup |F| over all inputs (inf if unbounded)."""
        if self.kind is NonlinearityKind.ZERO:
            return 0.0
        if self.kind is NonlinearityKind.CUSTOM or not _MAPS[self.map][2]:
            bound = math.inf
        elif self.map == "constant":
            bound = abs(self.offset + self.gain)
        else:
            bound = abs(self.offset) + abs(self.gain)
        return min(bound, self.clip) if self.clip is not None else bound

    def scalar(self, v: np.ndarray) -> np.ndarray:
        fn = _MAPS[self.map][0]
        out = self.offset + self.gain * fn(v)
        if self.clip is not None:
            out = np.clip(out, -self.clip, self.clip)
        return out

    def construction_lipschitz(self, h: float, dt: float) -> float:
        """Lipschitz constant implied by the construction.

        IntegralLipschitz: |gain| Lip(map) sqrt(h), by Cauchy-Schwarz on the
        theta integral (exact for the trapezoid rule as well). PointDelay has
        no B1 bound in the continuum; on the trapezoid grid the endpoint
        weight dt/2 gives |gain| Lip(map) sqrt(2 / dt).
        """
        if self.kind is NonlinearityKind.ZERO:
            return 0.0
        if self.kind is NonlinearityKind.CUSTOM:
            return float(self.lipschitz)
        lip = abs(self.gain) * _MAPS[self.map][1]
        if self.kind is NonlinearityKind.INTEGRAL_LIPSCHITZ:
            return lip * math.sqrt(h)
        return lip * math.sqrt(2.0 / dt)

    def declared_lipschitz(self, h: float, dt: float) -> float:
        built = self.construction_lipschitz(h, dt)
        if self.lipschitz is None:
            return built
        if self.lipschitz < built * (1 - 1e-12):
            raise ValueError(
                f"declared Lipschitz constant {self.lipschitz} is below the construction's {built}")
        return float(self.lipschitz)


class _SegmentView:
    """Lazily computed grid quantities of one segment, shared by f and sigma."""

    def __init__(self, basis: EigenBasis, segment: DelaySegment):
        self.basis = basis
        self.segment = segment
        self._cache = {}

    @property
    def thetas(self):
        return self.segment.thetas

    def _grid(self, v):
        if self.segment.representation == "spectral":
            return self.basis.to_grid(v)
        return v

    def integral(self):
        if "int" not in self._cache:
            self._cache["int"] = self._grid(self.segment.integral())
        return self._cache["int"]

    def oldest(self):
        if "old" not in self._cache:
            self._cache["old"] = self._grid(self.segment.oldest)
        return self._cache["old"]

    def history(self):
        if "hist" not in self._cache:
            self._cache["hist"] = self._grid(self.segment.ordered())
        return self._cache["hist"]


def _functional_grid(nl: NonlinearitySpec, view: _SegmentView) -> Optional[np.ndarray]:
    """Grid values of F(segment); None for the zero functional."""
    if nl.kind is NonlinearityKind.ZERO:
        return None
    if nl.kind is NonlinearityKind.INTEGRAL_LIPSCHITZ:
        return nl.scalar(view.integral())
    if nl.kind is NonlinearityKind.POINT_DELAY:
        return nl.scalar(view.oldest())
    out = np.asarray(nl.custom(view.history(), view.thetas), dtype=float)
    if nl.clip is not None:
        out = np.clip(out, -nl.clip, nl.clip)
    return out


def _zero_grid(basis: EigenBasis, segment: DelaySegment) -> np.ndarray:
    return np.zeros(segment.shape[:-1] + (basis.domain.grid_points,))


def eval_f(nonlin: NonlinearitySpec, segment: DelaySegment, basis: EigenBasis) -> Field:
    """f(u_t) as a state Field (projected onto the modes on the interval)."""
    g = _functional_grid(nonlin, _SegmentView(basis, segment))
    if g is None:
        g = _zero_grid(basis, segment)
    d = basis.domain
    if d.bounded:
        return Field(basis.project(g), d)
    return Field(g, d, "grid")


def eval_sigma(nonlin: NonlinearitySpec, segment: DelaySegment, basis: EigenBasis) -> Field:
    """sigma(u_t) as a pointwise multiplier on the grid."""
    g = _functional_grid(nonlin, _SegmentView(basis, segment))
    if g is None:
        g = _zero_grid(basis, segment)
    return Field(g, basis.domain, "grid")


def _random_segment(basis: EigenBasis, h: float, dt: float, rng: np.random.Generator,
                    scale: float = 1.0) -> DelaySegment:
    M = delay_steps(h, dt)
    d = basis.domain
    N = basis.mode_count
    decay = 1.0 / np.arange(1, N + 1)
    coeffs = scale * rng.standard_normal((M + 1, N)) * decay
    # smooth-in-theta component plus rough noise, so both regimes get probed
    theta = -h + dt * np.arange(M + 1)
    coeffs += scale * np.outer(np.cos(rng.uniform(0, 4) * theta), rng.standard_normal(N) * decay)
    if d.bounded:
        return DelaySegment(coeffs, h, dt, d)
    return DelaySegment(basis.to_grid(coeffs), h, dt, d, "grid")


def lipschitz_probe(nonlin: NonlinearitySpec, basis: EigenBasis, h: float, dt: float,
                    trials: int = 200, seed: int = 0,
                    sampler: Optional[Callable[[np.random.Generator], tuple]] = None) -> CheckReport:
    """Empirical max ||F(phi1) - F(phi2)||_B0 / ||phi1 - phi2||_B1 over sampled pairs.

    Norms are the discrete ones the solver uses: grid-weighted B0 of the
    functional values and the trapezoid B1 of the segments. Passes iff the
    estimate is within (1 + 1e-6) of the declared constant.
    """
    if trials < 1:
        raise ValueError("lipschitz_probe needs at least one trial")
    rng = np.random.default_rng(seed)
    d = basis.domain
    declared = nonlin.declared_lipschitz(h, dt)
    worst = 0.0
    for _ in range(trials):
        if sampler is not None:
            s1, s2 = sampler(rng)
        else:
            s1 = _random_segment(basis, h, dt, rng, scale=float(np.exp(rng.uniform(-3, 2))))
            # near pairs probe the derivative, far pairs the global slope
            eps = float(np.exp(rng.uniform(-8, 1)))
            s2 = DelaySegment(s1.ordered() + _random_segment(basis, h, dt, rng, eps).ordered(),
                              h, dt, d, s1.representation)
        g1 = _functional_grid(nonlin, _SegmentView(basis, s1))
        g2 = _functional_grid(nonlin, _SegmentView(basis, s2))
        if g1 is None:
            continue
        num = math.sqrt(float(b0_norm_sq(g1 - g2, d, "grid")))
        diff = DelaySegment(s1.ordered() - s2.ordered(), h, dt, d, s1.representation)
        sq = b0_norm_sq(diff.ordered(), d, diff.representation)
        den = math.sqrt(float(dt * (sq.sum() - 0.5 * (sq[0] + sq[-1]))))
        if den > 0:
            worst = max(worst, num / den)
    return CheckReport(
        check="lipschitz_probe",
        samples=trials,
        worst_ratio=worst,
        constants={"declared_L": declared},
        passed=bool(worst <= declared * (1 + 1e-6)),
        details={"kind": nonlin.kind.value, "map": nonlin.map, "h": h, "dt": dt},
    )


@dataclass(frozen=True, eq=False)
class ModelSpec:
    """Everything one step needs: basis, noise, f, sigma, delay h and step dt."""

    basis: EigenBasis
    noise: QWienerSpec
    f: NonlinearitySpec
    sigma: NonlinearitySpec
    h: float
    dt: float

    def __post_init__(self):
        delay_steps(self.h, self.dt)
        if self.noise.basis.domain != self.basis.domain:
            raise ValueError("noise and state bases live on different domains")
        self.f.declared_lipschitz(self.h, self.dt)
        self.sigma.declared_lipschitz(self.h, self.dt)

    @property
    def domain(self):
        return self.basis.domain

    @property
    def M(self) -> int:
        return delay_steps(self.h, self.dt)

    @property
    def representation(self) -> str:
        return "spectral" if self.domain.bounded else "grid"

    @property
    def state_size(self) -> int:
        return self.basis.mode_count if self.domain.bounded else self.domain.grid_points

    @property
    def lipschitz_f(self) -> float:
        return self.f.declared_lipschitz(self.h, self.dt)

    @property
    def lipschitz_sigma(self) -> float:
        return self.sigma.declared_lipschitz(self.h, self.dt)

    @property
    def lipschitz(self) -> float:
        """L in the joint condition ||df|| + ||dsigma|| <= L ||dphi||_B1."""
        return self.lipschitz_f + self.lipschitz_sigma

    @property
    def noisy(self) -> bool:
        return not self.sigma.is_zero and self.noise.trace > 0

    @cached_property
    def decay(self) -> np.ndarray:
        return np.exp(-self.basis.eigenvalues * self.dt)

    @cached_property
    def phi1(self) -> np.ndarray:
        lam = self.basis.eigenvalues
        return -np.expm1(-lam * self.dt) / lam

    @cached_property
    def conv_std(self) -> np.ndarray:
        lam = self.basis.eigenvalues[: self.noise.J]
        return np.sqrt(self.noise.coefficients * -np.expm1(-2 * lam * self.dt) / (2 * lam))

    @cached_property
    def projector(self) -> np.ndarray:
        """(G, N) matrix taking grid values to mode coefficients."""
        return (self.basis.table * self.domain.quad_weights).T

    @cached_property
    def noise_table(self) -> np.ndarray:
        """(J, G) map from standard normals to one step's noise on the grid."""
        J = self.noise.J
        if self.domain.bounded:
            return self.conv_std[:, None] * self.basis.table[:J]
        return (self.noise.sqrt_coefficients * math.sqrt(self.dt))[:, None] * self.basis.table[:J]

    def zero_state(self) -> FullState:
        return constant_history(Field.zeros(self.basis), self)

    def forcing(self, view, xi: Optional[np.ndarray]) -> Optional[np.ndarray]:
        """Drift and noise contribution of one step, before propagation.

        ``view`` supplies grid values of the segment integral, oldest value
        or full history; any leading axes broadcast against ``xi``.
        """
        fg = _functional_grid(self.f, view)
        sg = _functional_grid(self.sigma, view) if self.noisy and xi is not None else None
        g = None
        if self.domain.bounded:
            if fg is not None:
                g = self.phi1 * (fg @ self.projector)
            if sg is not None:
                s = (sg * (xi @ self.noise_table)) @ self.projector
                g = s if g is None else g + s
            return g
        if fg is not None:
            g = self.dt * fg
        if sg is not None:
            s = sg * (xi @ self.noise_table)
            g = s if g is None else g + s
        return g

    def propagate(self, u: np.ndarray, g: Optional[np.ndarray]) -> np.ndarray:
        """u(t + dt) = S(dt) u(t) plus the forcing (inside S(dt) on the line)."""
        if self.domain.bounded:
            new = self.decay * u
            return new if g is None else new + g
        v = u if g is None else u + g
        return v @ kernel_matrix(self.domain, self.dt).T

    def advance(self, u: np.ndarray, segment: DelaySegment, xi: Optional[np.ndarray]) -> np.ndarray:
        """u(t + dt) from u(t), the segment u_t and standard normals xi (..., J)."""
        return self.propagate(u, self.forcing(_SegmentView(self.basis, segment), xi))


def constant_history(head: Field, model: ModelSpec) -> FullState:
    """History equal to ``head`` on all of [-h, 0]."""
    return FullState.from_history(DelaySegment.constant(head, model.h, model.dt))


def steps_for(T: float, dt: float) -> int:
    if T < 0:
        raise ValueError(f"horizon must be nonnegative, got T={T}")
    n = int(round(T / dt))
    if abs(n * dt - T) > 1e-9 * max(1.0, T):
        raise ValueError(f"horizon T={T} is not a multiple of dt={dt}")
    return n


def step(state: FullState, model: ModelSpec, rng: RngStream) -> FullState:
    """One exponential-Euler step of the mild equation."""
    if state.segment.M != model.M:
        raise ValueError("state segment does not match the model's delay grid")
    xi = rng.normal(model.noise.J) if model.noisy else None
    new = model.advance(state.head.values, state.segment, xi)
    if not np.all(np.isfinite(new)):
        raise NumericalAbort(float("nan"), "single step")
    seg = state.segment.copy()
    seg.push(new)
    return FullState.from_history(seg)


# ---------------------------------------------------------------- ensembles

class _SingleStream:
    def __init__(self, rng: RngStream, J: int):
        self.rng = rng
        self.J = J

    def next(self, n: int) -> np.ndarray:
        return self.rng.normal((n, self.J))[:, None, :]


Observer = Callable[[int, np.ndarray, DelaySegment], np.ndarray]


def _as_initial(initial, model: ModelSpec):
    """Stack one or several FullStates into (P, R) heads and (M+1, P, R) histories."""
    states = [initial] if isinstance(initial, FullState) else list(initial)
    if not states:
        raise ValueError("need at least one initial state")
    heads, hists = [], []
    for s in states:
        if s.segment.M != model.M or s.segment.domain != model.domain:
            raise ValueError("initial history does not match the model's delay grid or domain")
        if s.head.representation != model.representation:
            raise ValueError(f"initial head must be a {model.representation} field")
        heads.append(s.head.values)
        hists.append(s.segment.ordered())
    return np.stack(heads), np.stack(hists, axis=1)


def _record_steps(n_steps: int, record_every: int) -> np.ndarray:
    if record_every < 1:
        raise ValueError("record_every must be >= 1")
    idx = np.arange(0, n_steps + 1, record_every)
    if idx[-1] != n_steps:
        idx = np.append(idx, n_steps)
    return idx


def _simulate(model: ModelSpec, heads: np.ndarray, hists: np.ndarray, B: int, n_steps: int,
              record: np.ndarray, observer: Observer, source, t0: float = 0.0) -> np.ndarray:
    """Run B members x P copies; observer outputs stacked as (B, n_record, ...)."""
    u = np.broadcast_to(heads, (B,) + heads.shape).copy()
    buf = np.broadcast_to(hists[:, None], (hists.shape[0], B) + hists.shape[1:]).copy()
    seg = DelaySegment(buf, model.h, model.dt, model.domain, model.representation)
    out = []
    r = 0
    if record[0] == 0:
        out.append(observer(0, u, seg))
        r = 1
    xi_chunk = None
    for n in range(n_steps):
        xi = None
        if source is not None:
            if n % NOISE_CHUNK == 0:
                xi_chunk = source.next(min(NOISE_CHUNK, n_steps - n))
            xi = xi_chunk[n % NOISE_CHUNK][:, None, :]
        u = model.advance(u, seg, xi)
        if not np.all(np.isfinite(u)):
            raise NumericalAbort(t0 + (n + 1) * model.dt)
        seg.push(u)
        if r < len(record) and record[r] == n + 1:
            out.append(observer(n + 1, u, seg))
            r += 1
    return np.stack(out, axis=1)


def simulate_members(model: ModelSpec, initial, T: float, n_traj: int, seed: int,
                     observer: Observer, record_every: int = 1, reduce: Optional[Callable] = None,
                     threads: int = 1, block_size: int = DEFAULT_BLOCK, branch: int = FORWARD,
                     skip_steps: int = 0, first_member: int = 0,
                     record_steps: Optional[Sequence[int]] = None) -> list:
    """Run ``n_traj`` members in fixed blocks and return per-block results in block order.

    Member i draws its noise from stream ``first_member + i`` of the
    (seed, branch) family, after skipping ``skip_steps`` steps. Observations
    are taken every ``record_every`` steps (and at the end) unless explicit
    increasing ``record_steps`` are given. Each block's
    observer output (B, n_record, ...) goes through ``reduce`` inside the
    worker. Block boundaries do not depend on ``threads``, so neither do the
    results.
    """
    if n_traj < 1:
        raise ValueError("need at least one trajectory")
    heads, hists = _as_initial(initial, model)
    n_steps = steps_for(T, model.dt)
    if record_steps is None:
        record = _record_steps(n_steps, record_every)
    else:
        record = np.asarray(record_steps, dtype=int)
        if record.size == 0 or np.any(np.diff(record) <= 0) or record[0] < 0 or record[-1] > n_steps:
            raise ValueError("record_steps must be increasing step indices within the horizon")
    family = StreamFamily(seed, branch)
    starts = list(range(0, n_traj, block_size))

    def work(start):
        members = range(first_member + start, first_member + min(start + block_size, n_traj))
        source = NoiseSource(family, members, model.noise.J, skip_steps) if model.noisy else None
        arr = _simulate(model, heads, hists, len(members), n_steps, record, observer, source,
                        t0=skip_steps * model.dt)
        return reduce(arr) if reduce is not None else arr

    if threads > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(work, starts))
    return [work(s) for s in starts]


def record_times(model: ModelSpec, T: float, record_every: int = 1) -> np.ndarray:
    return _record_steps(steps_for(T, model.dt), record_every) * model.dt


def _segment_b1_sq(seg: DelaySegment) -> np.ndarray:
    sq = b0_norm_sq(seg.raw, seg.domain, seg.representation)
    return seg.dt * (sq.sum(axis=0) - 0.5 * (b0_norm_sq(seg.oldest, seg.domain, seg.representation)
                                            + b0_norm_sq(seg.newest, seg.domain, seg.representation)))


def _mode_coeffs(model: ModelSpec, u: np.ndarray) -> np.ndarray:
    return u if model.domain.bounded else model.basis.project(u)


@dataclass
class TrajectoryStats:
    """Sums over trajectories of norms and mode moments on a time grid.

    Merging adds the sums, so reductions over blocks commute; the engine
    always merges in block order for bitwise reproducibility.
    """

    times: np.ndarray
    count: int
    sum_b0: np.ndarray
    sum_b0_sq: np.ndarray
    sum_b1: np.ndarray
    sum_b: np.ndarray
    sum_b_sq: np.ndarray
    mode_sum: np.ndarray
    mode_sq: np.ndarray

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("stats need at least one trajectory")

    @classmethod
    def from_samples(cls, times, b0, b1, modes) -> "TrajectoryStats":
        """b0, b1: (B, n_times) squared norms; modes: (B, n_times, K)."""
        b = b0 + b1
        return cls(np.asarray(times, dtype=float), b0.shape[0], b0.sum(0), (b0 * b0).sum(0),
                   b1.sum(0), b.sum(0), (b * b).sum(0), modes.sum(0), (modes * modes).sum(0))

    def merge(self, other: "TrajectoryStats") -> "TrajectoryStats":
        if not np.array_equal(self.times, other.times) or self.mode_sum.shape != other.mode_sum.shape:
            raise ValueError("cannot merge stats on different grids")
        return TrajectoryStats(
            self.times, self.count + other.count,
            *(getattr(self, k) + getattr(other, k) for k in
              ("sum_b0", "sum_b0_sq", "sum_b1", "sum_b", "sum_b_sq", "mode_sum", "mode_sq")))

    @property
    def mean_b0(self):
        return self.sum_b0 / self.count

    @property
    def mean_b1(self):
        return self.sum_b1 / self.count

    @property
    def mean_b(self):
        return self.sum_b / self.count

    @property
    def mean_b4(self):
        return self.sum_b_sq / self.count

    def _se(self, s, s2):
        n = self.count
        if n < 2:
            return np.full_like(s, np.nan)
        var = np.maximum(s2 / n - (s / n) ** 2, 0.0) * n / (n - 1)
        return np.sqrt(var / n)

    @property
    def se_b0(self):
        return self._se(self.sum_b0, self.sum_b0_sq)

    @property
    def se_b(self):
        return self._se(self.sum_b, self.sum_b_sq)

    @property
    def mode_mean(self):
        return self.mode_sum / self.count

    @property
    def mode_second(self):
        return self.mode_sq / self.count

    def columns(self) -> list[str]:
        K = self.mode_sum.shape[-1]
        return (["t", "E_norm_B0_sq", "E_norm_B1_sq", "E_norm_B_sq", "SE_norm_B_sq", "E_norm_B_4th"]
                + [f"mode{k}_mean" for k in range(1, K + 1)]
                + [f"mode{k}_second" for k in range(1, K + 1)])

    def table(self) -> np.ndarray:
        se = self.se_b
        return np.column_stack([self.times, self.mean_b0, self.mean_b1, self.mean_b,
                                np.nan_to_num(se, nan=0.0), self.mean_b4,
                                self.mode_mean, self.mode_second])

    def to_csv(self) -> str:
        rows = [",".join(self.columns())]
        for r in self.table():
            rows.append(",".join(format(float(x), ".17g") for x in r))
        return "\n".join(rows) + "\n"

    def summary(self) -> dict:
        mb = self.mean_b
        i = int(np.argmax(mb))
        return {
            "count": self.count,
            "t_final": float(self.times[-1]),
            "final": {"E_norm_B0_sq": float(self.mean_b0[-1]), "E_norm_B1_sq": float(self.mean_b1[-1]),
                      "E_norm_B_sq": float(mb[-1])},
            "sup_E_norm_B_sq": float(mb[i]),
            "t_of_sup": float(self.times[i]),
        }


def _stats_observer(model: ModelSpec) -> Observer:
    def obs(n, u, seg):
        u0 = u[:, 0]
        b0 = b0_norm_sq(u0, model.domain)
        b1 = _segment_b1_sq(seg)[:, 0]
        return np.concatenate([b0[:, None], b1[:, None], _mode_coeffs(model, u0)], axis=-1)
    return obs


def _stats_reducer(times):
    def red(arr):
        return TrajectoryStats.from_samples(times, arr[..., 0], arr[..., 1], arr[..., 2:])
    return red


def _merge_all(parts: Sequence[TrajectoryStats]) -> TrajectoryStats:
    total = parts[0]
    for p in parts[1:]:
        total = total.merge(p)
    return total


def run_ensemble(model: ModelSpec, initial: FullState, T: float, n_traj: int, seed: int,
                 record_every: int = 1, threads: int = 1, block_size: int = DEFAULT_BLOCK,
                 branch: int = FORWARD, skip_steps: int = 0) -> TrajectoryStats:
    """Ensemble-averaged norms and mode moments of independent trajectories."""
    times = record_times(model, T, record_every)
    parts = simulate_members(model, initial, T, n_traj, seed, _stats_observer(model), record_every,
                             _stats_reducer(times), threads, block_size, branch, skip_steps)
    return _merge_all(parts)


def run_trajectory(model: ModelSpec, initial: FullState, T: float, rng: RngStream,
                   record_every: int = 1) -> TrajectoryStats:
    """One trajectory driven by ``rng``; the stats hold its own norms."""
    heads, hists = _as_initial(initial, model)
    n_steps = steps_for(T, model.dt)
    record = _record_steps(n_steps, record_every)
    source = _SingleStream(rng, model.noise.J) if model.noisy else None
    arr = _simulate(model, heads, hists, 1, n_steps, record, _stats_observer(model), source)
    return _stats_reducer(record * model.dt)(arr)


def trajectory_path(model: ModelSpec, initial: FullState, T: float, seed: int, member: int = 0,
                    branch: int = FORWARD) -> np.ndarray:
    """Every-step heads (n_steps + 1, R) of ensemble member ``member``."""
    obs = lambda n, u, seg: u[:, 0].copy()
    parts = simulate_members(model, initial, T, 1, seed, obs, branch=branch, first_member=member)
    return parts[0][0]


def moment_bound_experiment(model: ModelSpec, initial: FullState, n_traj: int, T: float, seed: int,
                            record_every: int = 10, ratio_threshold: float = 1.2,
                            threads: int = 1) -> tuple[CheckReport, TrajectoryStats]:
    """sup_t E||y(t)||_B^2 over [0, T] for bounded f and sigma.

    Compares the maximum over the second half of the time grid with the
    maximum over the first half; growth would push the ratio above
    ``ratio_threshold``. Returns the report and the underlying stats.
    """
    problems = []
    if not model.f.bounded:
        problems.append("f is not bounded: use a bounded scalar map (tanh, sin, constant) or set a clip level")
    if not model.sigma.bounded:
        problems.append("sigma is not bounded by a level sigma0: use a bounded map or set a clip level")
    if problems:
        raise ValueError("moment bound hypotheses violated: " + "; ".join(problems))
    stats = run_ensemble(model, initial, T, n_traj, seed, record_every, threads)
    mb, se = stats.mean_b, stats.se_b
    t = stats.times
    early = t <= T / 2
    tail = ~early
    i = int(np.argmax(mb))
    early_max = float(mb[early].max())
    tail_max = float(mb[tail].max()) if tail.any() else early_max
    ratio = tail_max / early_max if early_max > 0 else (0.0 if tail_max == 0 else math.inf)
    finite = bool(np.all(np.isfinite(mb)))
    return CheckReport(
        check="moment_bound",
        samples=n_traj,
        worst_ratio=ratio,
        constants={"ratio_threshold": ratio_threshold, "f_envelope": model.f.envelope(),
                   "sigma0": model.sigma.envelope()},
        passed=finite and ratio <= ratio_threshold,
        details={
            "sup_E_norm_B_sq": float(mb[i]),
            "sup_band": [float(mb[i] - 3 * np.nan_to_num(se[i])), float(mb[i] + 3 * np.nan_to_num(se[i]))],
            "t_of_sup": float(t[i]),
            "sup_E_norm_B0_sq": float(stats.mean_b0.max()),
            "early_max": early_max,
            "tail_max": tail_max,
            "T": T,
        },
    ), stats


def mean_square_continuity(model: ModelSpec, initial: FullState, n_traj: int, seed: int,
                           levels: int = 5) -> dict:
    """E||u_t - u_0||_B1^2 at t = h 2^-j for the j whose t is a whole number of steps."""
    M = model.M
    steps = [M >> j for j in range(levels) if (M >> j) << j == M and M >> j >= 1]
    _, hists = _as_initial(initial, model)
    ref = hists[:, 0]
    dt = model.dt

    def obs(n, u, seg):
        diff = seg.ordered()[:, :, 0] - ref[:, None]
        sq = b0_norm_sq(diff, model.domain, model.representation)
        return dt * (sq.sum(axis=0) - 0.5 * (sq[0] + sq[-1]))

    T = steps[0] * dt
    parts = simulate_members(model, initial, T, n_traj, seed, obs)
    vals = np.concatenate(parts, axis=0)  # (n_traj, n_steps + 1)
    times = [s * dt for s in steps]
    mean = [float(vals[:, s].mean()) for s in steps]
    se = [float(vals[:, s].std(ddof=1) / math.sqrt(n_traj)) if n_traj > 1 else 0.0 for s in steps]
    return {"t": times, "mean": mean, "se": se}
