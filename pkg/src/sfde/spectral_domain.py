"""State spaces for delay equations: domains, eigenbases, fields, delay segments.

Two spatial settings are supported:

* a bounded interval (0, l) with homogeneous Dirichlet conditions, where fields
  are stored as coefficients in the sine eigenbasis and no weight is used;
* the whole line, truncated to [-X, X], where fields are stored as grid values
  and norms carry the polynomial weight rho(x) = 1 / (1 + |x|^r).

The history of a solution over [-h, 0] is a :class:`DelaySegment`, a ring
buffer of M + 1 snapshots with M * dt = h, so delayed values are read by
index and never interpolated.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Optional, Sequence

import numpy as np

__all__ = [
    "DomainKind",
    "DomainSpec",
    "EigenBasis",
    "Field",
    "DelaySegment",
    "FullState",
    "build_basis",
    "norm_b0",
    "norm_b1",
    "norm_b",
    "b0_norm_sq",
    "delay_steps",
]

_ORTHO_TOL = 1e-8


class DomainKind(str, enum.Enum):
    BOUNDED_DIRICHLET = "bounded_dirichlet"
    WHOLE_LINE_WEIGHTED = "whole_line_weighted"


@dataclass(frozen=True)
class DomainSpec:
    """Spatial domain and its quadrature grid.

    For the bounded case the grid is ``grid_points`` equispaced nodes on
    [0, l] including both boundary nodes; for the whole line it is the same
    on [-X, X]. Quadrature is the trapezoid rule throughout.
    """

    kind: DomainKind = DomainKind.BOUNDED_DIRICHLET
    length: float = math.pi
    truncation_radius: float = 20.0
    grid_points: int = 64
    weight_exponent: float = 0.0
    compare_weight_exponent: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kind", DomainKind(self.kind))
        problems = self.violations()
        if problems:
            raise ValueError("; ".join(problems))

    def violations(self) -> list[str]:
        """Every invariant this spec breaks (empty when valid)."""
        out = []
        if int(self.grid_points) != self.grid_points or self.grid_points < 8:
            out.append(f"grid_points must be an integer >= 8, got {self.grid_points}")
        if self.weight_exponent < 0 or self.compare_weight_exponent < 0:
            out.append("weight exponents must be nonnegative")
        if self.kind is DomainKind.BOUNDED_DIRICHLET:
            if not (math.isfinite(self.length) and self.length > 0):
                out.append(f"length must be finite and positive, got {self.length}")
            if self.weight_exponent != 0:
                out.append(
                    f"bounded domains carry no weight: weight_exponent must be 0, "
                    f"got {self.weight_exponent}"
                )
        else:
            if not (math.isfinite(self.truncation_radius) and self.truncation_radius > 0):
                out.append(
                    f"truncation_radius must be finite and positive, got {self.truncation_radius}"
                )
            r, rbar = self.weight_exponent, self.compare_weight_exponent
            if not r > 1:
                out.append(f"whole-line weight needs r > d = 1, got r = {r}")
            if not r > 1 + rbar:
                out.append(
                    f"whole-line weight needs r > d + r_bar = {1 + rbar}, got r = {r}"
                )
        return out

    @property
    def bounded(self) -> bool:
        return self.kind is DomainKind.BOUNDED_DIRICHLET

    @property
    def left(self) -> float:
        return 0.0 if self.bounded else -self.truncation_radius

    @property
    def right(self) -> float:
        return self.length if self.bounded else self.truncation_radius

    @property
    def extent(self) -> float:
        return self.right - self.left

    @cached_property
    def grid(self) -> np.ndarray:
        return np.linspace(self.left, self.right, int(self.grid_points))

    @cached_property
    def spacing(self) -> float:
        return self.extent / (int(self.grid_points) - 1)

    @cached_property
    def quad_weights(self) -> np.ndarray:
        w = np.full(int(self.grid_points), self.spacing)
        w[0] = w[-1] = 0.5 * self.spacing
        return w

    def weight(self, x, exponent: Optional[float] = None) -> np.ndarray:
        """rho(x) = 1 / (1 + |x|^r); identically one on bounded domains."""
        r = self.weight_exponent if exponent is None else exponent
        x = np.asarray(x, dtype=float)
        if r == 0:
            return np.ones_like(x)
        return 1.0 / (1.0 + np.abs(x) ** r)

    @cached_property
    def weighted_quad(self) -> np.ndarray:
        """Trapezoid weights times rho on the grid."""
        return self.quad_weights * self.weight(self.grid)


@dataclass(frozen=True, eq=False)
class EigenBasis:
    """Sine eigenbasis with its eigenvalues and grid evaluation table.

    On the whole line this is the Dirichlet sine basis of [-X, X]; it carries
    the noise and the mode observables there, while the semigroup itself is
    the Gaussian kernel.
    """

    domain: DomainSpec
    eigenvalues: np.ndarray
    table: np.ndarray  # (N, grid_points)

    @property
    def mode_count(self) -> int:
        return len(self.eigenvalues)

    @property
    def lambda1(self) -> float:
        return float(self.eigenvalues[0])

    @property
    def sup_norm(self) -> float:
        """sup_k ||e_k||_inf, analytic for the sine family."""
        return math.sqrt(2.0 / self.domain.extent)

    def evaluate(self, x) -> np.ndarray:
        """Mode values at arbitrary points, shape (N, *x.shape)."""
        x = np.asarray(x, dtype=float)
        k = np.arange(1, self.mode_count + 1).reshape((-1,) + (1,) * x.ndim)
        d = self.domain
        return math.sqrt(2.0 / d.extent) * np.sin(k * math.pi * (x - d.left) / d.extent)

    def to_grid(self, coeffs: np.ndarray) -> np.ndarray:
        """Synthesize grid values from coefficients along the last axis."""
        c = np.asarray(coeffs)
        n = c.shape[-1]
        return c @ self.table[:n]

    def project(self, values: np.ndarray, n_modes: Optional[int] = None) -> np.ndarray:
        """Unweighted L2 projection of grid values onto the first modes."""
        n = self.mode_count if n_modes is None else n_modes
        return (np.asarray(values) * self.domain.quad_weights) @ self.table[:n].T

    @cached_property
    def gram(self) -> np.ndarray:
        return (self.table * self.domain.quad_weights) @ self.table.T


def build_basis(domain: DomainSpec, N: int, spectrum: Optional[Sequence[float]] = None) -> EigenBasis:
    """Build the sine eigenbasis with N modes.

    Without ``spectrum`` the eigenvalues are the Dirichlet-Laplacian ones,
    (k pi / L)^2 with L the domain extent. A supplied spectrum replaces the
    eigenvalues but keeps the sine modes; it must be positive and
    non-decreasing.
    """
    if int(N) != N or N < 1:
        raise ValueError(f"mode count must be a positive integer, got {N}")
    N = int(N)
    if N > domain.grid_points - 2:
        raise ValueError(
            f"{N} modes alias on a grid of {domain.grid_points} points; "
            f"need N <= grid_points - 2"
        )
    if spectrum is None:
        k = np.arange(1, N + 1)
        lam = (k * math.pi / domain.extent) ** 2
    else:
        lam = np.asarray(spectrum, dtype=float)
        if lam.shape != (N,):
            raise ValueError(f"spectrum must have exactly {N} entries, got shape {lam.shape}")
        if not np.all(np.isfinite(lam)) or np.any(lam <= 0):
            raise ValueError("spectrum must be finite and strictly positive")
        if np.any(np.diff(lam) < 0):
            raise ValueError("spectrum must be non-decreasing")
    basis = EigenBasis(domain, lam, np.empty((0, 0)))
    table = basis.evaluate(domain.grid)
    basis = EigenBasis(domain, lam, table)
    err = np.max(np.abs(basis.gram - np.eye(N)))
    if err > _ORTHO_TOL:  # pragma: no cover - guarded by the aliasing check
        raise ValueError(f"discrete orthonormality violated by {err:.2e}")
    return basis


@dataclass(frozen=True, eq=False)
class Field:
    """A function in B0: spectral coefficients or grid values.

    ``representation`` is ``"spectral"`` (bounded domain coefficients) or
    ``"grid"`` (whole-line values, or a pointwise multiplier on either
    domain).
    """

    values: np.ndarray
    domain: DomainSpec
    representation: str = "spectral"

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        if self.representation not in ("spectral", "grid"):
            raise ValueError(f"unknown representation {self.representation!r}")
        if self.representation == "spectral" and not self.domain.bounded:
            raise ValueError("whole-line fields are stored on the grid")
        if self.representation == "grid" and v.shape[-1] != self.domain.grid_points:
            raise ValueError(
                f"grid field needs {self.domain.grid_points} values, got {v.shape[-1]}"
            )
        if not np.all(np.isfinite(v)):
            raise ValueError("field has non-finite entries")

    @classmethod
    def zeros(cls, basis: EigenBasis) -> "Field":
        d = basis.domain
        if d.bounded:
            return cls(np.zeros(basis.mode_count), d)
        return cls(np.zeros(d.grid_points), d, "grid")

    @classmethod
    def mode(cls, basis: EigenBasis, k: int, amplitude: float = 1.0) -> "Field":
        """amplitude * e_k (k counted from 1)."""
        d = basis.domain
        if d.bounded:
            c = np.zeros(basis.mode_count)
            c[k - 1] = amplitude
            return cls(c, d)
        return cls(amplitude * basis.table[k - 1], d, "grid")

    @classmethod
    def from_function(cls, basis: EigenBasis, fn: Callable[[np.ndarray], np.ndarray]) -> "Field":
        d = basis.domain
        vals = np.asarray(fn(d.grid), dtype=float) * np.ones(d.grid_points)
        if d.bounded:
            return cls(basis.project(vals), d)
        return cls(vals, d, "grid")

    def grid_values(self, basis: EigenBasis) -> np.ndarray:
        if self.representation == "grid":
            return np.asarray(self.values)
        return basis.to_grid(self.values)

    def __add__(self, other: "Field") -> "Field":
        self._check_compatible(other)
        return Field(self.values + other.values, self.domain, self.representation)

    def __sub__(self, other: "Field") -> "Field":
        self._check_compatible(other)
        return Field(self.values - other.values, self.domain, self.representation)

    def __mul__(self, scalar: float) -> "Field":
        return Field(self.values * scalar, self.domain, self.representation)

    __rmul__ = __mul__

    def _check_compatible(self, other: "Field"):
        if other.domain != self.domain or other.representation != self.representation:
            raise ValueError("fields live on different domains or representations")
        if other.values.shape != self.values.shape:
            raise ValueError("field shapes differ")


def b0_norm_sq(values: np.ndarray, domain: DomainSpec, representation: Optional[str] = None) -> np.ndarray:
    """Squared B0 norm over the last axis, vectorized over leading axes."""
    if representation is None:
        representation = "spectral" if domain.bounded else "grid"
    v = np.asarray(values)
    if representation == "spectral":
        return np.sum(v * v, axis=-1)
    return (v * v) @ domain.weighted_quad


def norm_b0(field: Field) -> float:
    """Norm in B0 = L2_rho(D): Parseval for coefficients, weighted trapezoid on the grid."""
    return float(np.sqrt(b0_norm_sq(field.values, field.domain, field.representation)))


def delay_steps(h: float, dt: float) -> int:
    """M with M * dt = h; raises unless dt divides h."""
    if not (h > 0 and dt > 0):
        raise ValueError(f"delay and step must be positive, got h={h}, dt={dt}")
    M = int(round(h / dt))
    if M < 1 or abs(M * dt - h) > 1e-12 * max(1.0, h):
        raise ValueError(f"time step dt={dt} does not divide the delay h={h}")
    return M


class DelaySegment:
    """History u(t + theta), theta in [-h, 0], as a ring buffer.

    The buffer holds M + 1 snapshots at theta_j = -h + j*dt. Each snapshot is
    an array whose trailing axis is the field representation; leading axes
    (an ensemble, say) are allowed and carried along.
    """

    __slots__ = ("_buf", "h", "dt", "domain", "representation", "head_index")

    def __init__(self, buffer, h: float, dt: float, domain: DomainSpec,
                 representation: Optional[str] = None, head_index: Optional[int] = None):
        buf = np.array(buffer, dtype=float)
        M = delay_steps(h, dt)
        if buf.shape[0] != M + 1:
            raise ValueError(f"buffer needs M + 1 = {M + 1} snapshots, got {buf.shape[0]}")
        if not np.all(np.isfinite(buf)):
            raise ValueError("segment has non-finite entries")
        self._buf = buf
        self.h = float(h)
        self.dt = float(dt)
        self.domain = domain
        self.representation = representation or ("spectral" if domain.bounded else "grid")
        # head_index is the slot of theta = 0; a fresh buffer is ordered oldest -> newest
        self.head_index = M if head_index is None else int(head_index) % (M + 1)

    @classmethod
    def constant(cls, field: Field, h: float, dt: float) -> "DelaySegment":
        M = delay_steps(h, dt)
        buf = np.broadcast_to(field.values, (M + 1,) + field.values.shape)
        return cls(buf, h, dt, field.domain, field.representation)

    @classmethod
    def from_function(cls, basis: EigenBasis, fn: Callable[[float], Field], h: float, dt: float) -> "DelaySegment":
        """Sample fn(theta) -> Field at every node theta_j = -h + j*dt."""
        M = delay_steps(h, dt)
        snaps = [fn(-h + j * dt) for j in range(M + 1)]
        return cls(np.stack([s.values for s in snaps]), h, dt, basis.domain, snaps[0].representation)

    @property
    def M(self) -> int:
        return self._buf.shape[0] - 1

    @property
    def shape(self) -> tuple:
        return self._buf.shape[1:]

    @property
    def thetas(self) -> np.ndarray:
        return -self.h + self.dt * np.arange(self.M + 1)

    @property
    def raw(self) -> np.ndarray:
        """Underlying ring storage (slot order, not theta order)."""
        return self._buf

    def slot(self, j: int) -> int:
        """Ring slot holding theta_j."""
        return (self.head_index + 1 + j) % (self.M + 1)

    def at(self, j: int) -> np.ndarray:
        return self._buf[self.slot(j)]

    def ordered(self) -> np.ndarray:
        """Snapshots in theta order, shape (M + 1, ...)."""
        return np.roll(self._buf, -(self.head_index + 1), axis=0)

    @property
    def newest(self) -> np.ndarray:
        return self._buf[self.head_index]

    @property
    def oldest(self) -> np.ndarray:
        return self._buf[(self.head_index + 1) % (self.M + 1)]

    def push(self, values) -> None:
        """Advance by one step: drop theta = -h, append ``values`` at theta = 0."""
        self.head_index = (self.head_index + 1) % (self.M + 1)
        self._buf[self.head_index] = values

    def integral(self) -> np.ndarray:
        """Trapezoid integral over theta in [-h, 0]."""
        return self.dt * (self._buf.sum(axis=0) - 0.5 * (self.oldest + self.newest))

    def copy(self) -> "DelaySegment":
        return DelaySegment(self._buf.copy(), self.h, self.dt, self.domain,
                            self.representation, self.head_index)

    def field_at(self, j: int) -> Field:
        return Field(self.at(j), self.domain, self.representation)

    def __repr__(self):
        return f"DelaySegment(h={self.h}, dt={self.dt}, M={self.M}, shape={self.shape})"


def norm_b1(segment: DelaySegment):
    """Norm in B1 = L2(-h, 0; B0) by the trapezoid rule over theta nodes.

    Returns a float for a single segment, an array for a batched one.
    """
    sq = b0_norm_sq(segment.ordered(), segment.domain, segment.representation)
    total = segment.dt * (sq.sum(axis=0) - 0.5 * (sq[0] + sq[-1]))
    out = np.sqrt(total)
    return float(out) if np.ndim(out) == 0 else out


@dataclass(eq=False)
class FullState:
    """y(t) = (u(t), u_t); the newest segment snapshot is the head."""

    head: Field
    segment: DelaySegment = field(repr=False)

    def __post_init__(self):
        if self.segment.shape != self.head.values.shape:
            raise ValueError("segment snapshots and head differ in shape")
        if not np.array_equal(self.segment.newest, self.head.values):
            raise ValueError("segment's newest entry must equal the head")

    @classmethod
    def from_history(cls, segment: DelaySegment) -> "FullState":
        return cls(Field(segment.newest.copy(), segment.domain, segment.representation), segment)


def norm_b(state: FullState) -> float:
    """Product norm with ||y||^2 = ||u||_B0^2 + ||u_t||_B1^2."""
    return math.sqrt(norm_b0(state.head) ** 2 + norm_b1(state.segment) ** 2)
