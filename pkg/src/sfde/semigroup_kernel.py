"""Heat semigroup, Green's functions and numerical checks of their estimates.

On the bounded interval the semigroup is diagonal in the sine basis; on the
whole line it is convolution with the Gaussian kernel, applied by trapezoid
quadrature on the truncated grid. The ``verify_*`` functions sample the
kernel and fit the constants of the Gaussian envelopes and weighted bounds;
they return :class:`~sfde.reports.CheckReport` objects.
"""

from __future__ import annotations

import math
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np
from scipy.special import gamma as gamma_fn

from .reports import CheckReport
from .spectral_domain import DomainSpec, EigenBasis, Field, b0_norm_sq

__all__ = [
    "apply_semigroup",
    "semigroup_coefficients",
    "kernel_matrix",
    "greens_function",
    "gaussian_kernel",
    "verify_kernel_bound",
    "verify_weighted_smoothing",
    "verify_weighted_boundedness",
    "verify_semigroup_law",
    "hilbert_schmidt_norm_delay_op",
    "verify_exponential_decay",
]

NEGATIVITY_TOL = -1e-8
KERNEL_FLOOR = 1e-10
_TIE = 1e-3  # relative slack (in log) when picking the envelope exponent
# Candidate Gaussian exponents for envelope fits; 0.25 sits exactly on the grid.
_EXPONENT_GRID = np.arange(1, 101) / 100.0


def gaussian_kernel(t, d):
    """Free heat kernel (4 pi t)^(-1/2) exp(-d^2 / 4t) in one dimension."""
    t = np.asarray(t, dtype=float)
    d = np.asarray(d, dtype=float)
    return np.exp(-d * d / (4.0 * t)) / np.sqrt(4.0 * math.pi * t)


@lru_cache(maxsize=64)
def kernel_matrix(domain: DomainSpec, t: float) -> np.ndarray:
    """Quadrature matrix K with (S(t)u)(x_i) ~= sum_j K[i, j] u(x_j) on the whole line."""
    if domain.bounded:
        raise ValueError("kernel_matrix is for the whole-line domain")
    if t <= 0:
        raise ValueError("kernel matrix needs t > 0")
    x = domain.grid
    K = gaussian_kernel(t, x[:, None] - x[None, :]) * domain.quad_weights[None, :]
    K.setflags(write=False)
    return K


def semigroup_coefficients(basis: EigenBasis, t: float) -> np.ndarray:
    """Per-mode factors exp(-lambda_k t)."""
    return np.exp(-basis.eigenvalues * t)


def apply_semigroup(basis: EigenBasis, field: Field, t: float) -> Field:
    """S(t) applied to a field; S(0) is the identity."""
    if t < 0:
        raise ValueError(f"semigroup time must be nonnegative, got {t}")
    d = basis.domain
    if d.bounded:
        coeffs = field.values if field.representation == "spectral" else basis.project(field.values)
        if t == 0:
            return Field(coeffs, d)
        return Field(coeffs * semigroup_coefficients(basis, t), d)
    if t == 0:
        return Field(field.values, d, "grid")
    return Field(field.values @ kernel_matrix(d, float(t)).T, d, "grid")


def greens_function(domain: DomainSpec, basis: Optional[EigenBasis], t: float, x, y) -> np.ndarray:
    """G(t, x, y): truncated eigen-sum on the interval, Gaussian on the line."""
    if not t > 0:
        raise ValueError(f"Green's function needs t > 0, got {t}")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if not domain.bounded:
        return gaussian_kernel(t, x - y)
    if basis is None:
        raise ValueError("bounded Green's function needs an eigenbasis")
    ex = basis.evaluate(x)
    ey = basis.evaluate(y)
    decay = np.exp(-basis.eigenvalues * t).reshape((-1,) + (1,) * max(ex.ndim - 1, 0))
    return np.sum(decay * ex * ey, axis=0)


def _default_tmin(domain: DomainSpec, basis: Optional[EigenBasis], T: float) -> float:
    # below this the truncated eigen-sum rings; 30 e-folds of the last mode
    if domain.bounded:
        return min(T, 30.0 / float(basis.eigenvalues[-1]))
    return T / 1000.0


def _sample_kernel(domain, basis, T, n_t, n_xy, rng, t_min):
    ts = np.geomspace(t_min, T, n_t)
    lo, hi = domain.left, domain.right
    if not domain.bounded:  # stay where the Gaussian is resolved by the grid
        lo, hi = 0.5 * lo, 0.5 * hi
    xs = rng.uniform(lo, hi, n_xy)
    ys = rng.uniform(lo, hi, n_xy)
    # include the diagonal, where the envelope is tight
    ys[: n_xy // 4] = xs[: n_xy // 4]
    tt = np.repeat(ts, n_xy)
    xx = np.tile(xs, n_t)
    yy = np.tile(ys, n_t)
    G = np.concatenate([greens_function(domain, basis, t, xs, ys) for t in ts])
    return tt, xx, yy, G


def _log_ratio(G, t, d2, c2):
    return np.log(G) + 0.5 * np.log(t) + c2 * d2 / t


def verify_kernel_bound(domain: DomainSpec, basis: Optional[EigenBasis], T: float,
                        n_t: int = 24, n_xy: int = 200, seed: int = 0,
                        t_min: Optional[float] = None, slack: float = 1.05) -> CheckReport:
    """Fit 0 <= G <= C1 t^(-1/2) exp(-C2 |x-y|^2 / t) and validate on fresh samples.

    C2 is the largest exponent on a fixed grid that does not increase C1
    beyond its minimum; C1 is then the sampled maximum. On the whole line the
    lower envelope c1 t^(-1/2) exp(-c2 |x-y|^2 / t) is fitted the same way.
    The check passes when fresh samples stay inside ``slack`` times the
    fitted envelopes and G is never below -1e-8.
    """
    if not T > 0:
        raise ValueError("T must be positive")
    rng = np.random.default_rng(seed)
    t_min = _default_tmin(domain, basis, T) if t_min is None else t_min
    tt, xx, yy, G = _sample_kernel(domain, basis, T, n_t, n_xy, rng, t_min)
    d2 = (xx - yy) ** 2
    # eigen-sums bottom out at roundoff far off the diagonal; fit above that floor
    fit = G > KERNEL_FLOOR

    upper = np.array([np.max(_log_ratio(G[fit], tt[fit], d2[fit], c)) for c in _EXPONENT_GRID])
    idx = np.nonzero(upper <= upper.min() + _TIE)[0].max()
    c2 = float(_EXPONENT_GRID[idx])
    C1 = float(np.exp(upper[idx]))
    constants = {"C1": C1, "C2": c2, "t_min": t_min, "T": T}

    vt, vx, vy, vG = _sample_kernel(domain, basis, T, n_t, n_xy, np.random.default_rng(seed + 1), t_min)
    vd2 = (vx - vy) ** 2
    env = C1 * np.exp(-c2 * vd2 / vt) / np.sqrt(vt)
    vfit = vG > KERNEL_FLOOR
    with np.errstate(divide="ignore"):
        worst = float(np.max(vG[vfit] / env[vfit]))
    min_G = float(min(G.min(), vG.min()))
    passed = worst <= slack and min_G >= NEGATIVITY_TOL

    if not domain.bounded:
        lower = np.array([np.min(_log_ratio(G[fit], tt[fit], d2[fit], c)) for c in _EXPONENT_GRID])
        lo_idx = np.nonzero(lower >= lower.max() - _TIE)[0].min()
        k2 = float(_EXPONENT_GRID[lo_idx])
        K1 = float(np.exp(lower[lo_idx]))
        constants.update({"lower_c1": K1, "lower_c2": k2})
        lo_env = K1 * np.exp(-k2 * vd2[vfit] / vt[vfit]) / np.sqrt(vt[vfit])
        lower_ratio = float(np.min(vG[vfit] / lo_env))
        constants["lower_worst_ratio"] = lower_ratio
        passed = passed and lower_ratio >= 1.0 / slack

    return CheckReport(
        check="kernel_bound",
        samples=int(G.size + vG.size),
        worst_ratio=worst,
        constants=constants,
        passed=bool(passed),
        details={"min_G": min_G, "slack": slack, "negativity_tol": NEGATIVITY_TOL},
    )


def _abs_moment(r: float) -> float:
    """E|Z|^r for a standard normal Z."""
    return 2 ** (r / 2) * gamma_fn((r + 1) / 2) / math.sqrt(math.pi)


def weighted_smoothing_ratio(domain: DomainSpec, basis: Optional[EigenBasis], t: float, x,
                             exponent: Optional[float] = None, n_hermite: int = 96) -> np.ndarray:
    """(int G(t,x,y) rho(y) dy) / rho(x) at points x.

    Whole line: Gauss-Hermite in y = x + 2 sqrt(t) z, independent of the grid.
    Interval: closed-form mode integrals of the truncated eigen-sum.
    """
    x = np.asarray(x, dtype=float)
    if domain.bounded:
        k = np.arange(1, basis.mode_count + 1)
        L = domain.extent
        mode_int = math.sqrt(2.0 / L) * L * (1 - np.cos(k * math.pi)) / (k * math.pi)
        ex = basis.evaluate(x)
        decay = (np.exp(-basis.eigenvalues * t) * mode_int).reshape((-1,) + (1,) * x.ndim)
        return np.sum(decay * ex, axis=0)
    z, w = np.polynomial.hermite.hermgauss(n_hermite)
    y = x[..., None] + 2.0 * math.sqrt(t) * z
    integral = (domain.weight(y, exponent) * w).sum(axis=-1) / math.sqrt(math.pi)
    return integral / domain.weight(x, exponent)


def verify_weighted_smoothing(domain: DomainSpec, basis: Optional[EigenBasis],
                              t_samples: Sequence[float], n_x: int = 401,
                              x_samples=None) -> CheckReport:
    """Check int G(t,x,y) rho(y) dy <= C(r,T) rho(x) uniformly in x.

    The bound compared against is 1 on the interval (sub-Markov kernel) and
    2^r (1 + E|sqrt(2t) Z|^r) on the line, which follows from
    rho(x)/rho(y) <= 2^r (1 + |x-y|^r).
    """
    ts = np.asarray(t_samples, dtype=float)
    if np.any(ts <= 0):
        raise ValueError("t samples must be positive")
    if x_samples is None:
        x_samples = np.linspace(domain.left, domain.right, n_x)
    xs = np.asarray(x_samples, dtype=float)
    ratios = np.stack([weighted_smoothing_ratio(domain, basis, t, xs) for t in ts])
    per_t = ratios.max(axis=1)
    worst = float(per_t.max())
    if domain.bounded:
        bound = 1.0
        passed = worst <= 1.0 + 1e-6
    else:
        r = domain.weight_exponent
        bound = float(2 ** r * (1 + (2 * ts.max()) ** (r / 2) * _abs_moment(r)))
        # uniformity: the sup is not driven by the edge of the sampled range
        inner = np.abs(xs) <= 0.5 * np.abs(xs).max()
        inner_sup = float(ratios[:, inner].max())
        passed = worst <= bound and worst <= 1.5 * inner_sup
    return CheckReport(
        check="weighted_smoothing",
        samples=int(ratios.size),
        worst_ratio=worst,
        constants={"C_fit": worst, "C_bound": bound},
        passed=bool(passed and np.all(np.isfinite(ratios))),
        details={"t": ts, "sup_ratio_per_t": per_t, "ratio_at_min_t": float(per_t[np.argmin(ts)])},
    )


def verify_weighted_boundedness(domain: DomainSpec, basis: EigenBasis, T: float,
                                trials: int = 50, seed: int = 0) -> CheckReport:
    """Fit ||S(t) phi||_B0 <= C_rho(T) ||phi||_B0 over random phi and t in (0, T]."""
    rng = np.random.default_rng(seed)
    d = domain
    worst = 0.0
    for _ in range(trials):
        t = float(rng.uniform(0.05 * T, T))
        if d.bounded:
            phi = Field(rng.standard_normal(basis.mode_count), d)
        else:
            # random bumps, some far out where the weight is small
            c = rng.uniform(0.8 * d.left, 0.8 * d.right, 3)
            a = rng.standard_normal(3)
            vals = sum(ai * np.exp(-((d.grid - ci) ** 2)) for ai, ci in zip(a, c))
            phi = Field(vals, d, "grid")
        num = b0_norm_sq(apply_semigroup(basis, phi, t).values, d)
        den = b0_norm_sq(phi.values, d)
        worst = max(worst, float(math.sqrt(num / den)))
    if d.bounded:
        bound = 1.0
    else:
        r = d.weight_exponent
        bound = math.sqrt(2 ** r * (1 + (2 * T) ** (r / 2) * _abs_moment(r)))
    return CheckReport(
        check="weighted_boundedness",
        samples=trials,
        worst_ratio=worst,
        constants={"C_rho_fit": worst, "C_rho_bound": bound, "T": T},
        passed=bool(worst <= bound * (1 + 1e-9)),
    )


def verify_semigroup_law(basis: EigenBasis, pairs: Sequence[tuple], trials: int = 5,
                         seed: int = 0, tol: Optional[float] = None) -> CheckReport:
    """Relative error of S(t+s) vs S(t) S(s) over random fields."""
    rng = np.random.default_rng(seed)
    d = basis.domain
    if tol is None:
        tol = 1e-12 if d.bounded else 1e-4
    worst = 0.0
    for t, s in pairs:
        for _ in range(trials):
            if d.bounded:
                phi = Field(rng.standard_normal(basis.mode_count), d)
            else:
                c, w = rng.uniform(-3, 3), rng.uniform(0.5, 2)
                phi = Field(np.exp(-((d.grid - c) / w) ** 2), d, "grid")
            a = apply_semigroup(basis, apply_semigroup(basis, phi, s), t).values
            b = apply_semigroup(basis, phi, t + s).values
            err = np.sqrt(b0_norm_sq(a - b, d) / max(b0_norm_sq(b, d), 1e-300))
            worst = max(worst, float(err))
    return CheckReport("semigroup_law", len(pairs) * trials, worst,
                       {"tolerance": tol}, bool(worst <= tol))


def hilbert_schmidt_norm_delay_op(basis: EigenBasis, T0: float, h: float,
                                  compare_exponent: Optional[float] = None,
                                  n_theta: int = 24) -> float:
    """Squared Hilbert-Schmidt norm of phi -> S(T0 + theta) phi, theta in [-h, 0].

    The operator maps B0 (weight rho_bar) into B1 (weight rho). On the
    interval both weights are one and the value is the closed-form mode sum
    sum_k (exp(-2 lambda_k (T0 - h)) - exp(-2 lambda_k T0)) / (2 lambda_k).
    On the line it is the triple integral of rho(x) G^2 / rho_bar(y),
    by trapezoid in x, y and Gauss-Legendre in theta.
    """
    if not h > 0:
        raise ValueError("delay h must be positive")
    if T0 < 2 * h:
        raise ValueError(f"need T0 >= 2h, got T0={T0}, h={h}")
    d = basis.domain
    if d.bounded:
        lam = basis.eigenvalues
        return float(np.sum((np.exp(-2 * lam * (T0 - h)) - np.exp(-2 * lam * T0)) / (2 * lam)))
    rbar = d.compare_weight_exponent if compare_exponent is None else compare_exponent
    x = d.grid
    wx = d.quad_weights * d.weight(x)
    wy = d.quad_weights / d.weight(x, rbar)
    d2 = (x[:, None] - x[None, :]) ** 2
    nodes, weights = np.polynomial.legendre.leggauss(n_theta)
    thetas = -h / 2 * (nodes + 1)
    total = 0.0
    for th, wt in zip(thetas, weights):
        s = T0 + th
        G2 = np.exp(-d2 / (2 * s)) / (4 * math.pi * s)
        total += wt * (h / 2) * float(wx @ G2 @ wy)
    return total


def verify_exponential_decay(basis: EigenBasis, trials: int = 100, seed: int = 0,
                             t_max: float = 5.0) -> CheckReport:
    """||S(t) u0|| <= exp(-lambda_1 t) ||u0|| + 1e-12 over random u0 and t."""
    d = basis.domain
    if not d.bounded:
        raise ValueError("exponential decay needs a spectral gap: bounded domain only")
    rng = np.random.default_rng(seed)
    worst_excess = -np.inf
    worst_ratio = 0.0
    for _ in range(trials):
        u0 = Field(rng.standard_normal(basis.mode_count) * rng.uniform(0.1, 3.0), d)
        t = float(rng.uniform(0.0, t_max))
        lhs = math.sqrt(b0_norm_sq(apply_semigroup(basis, u0, t).values, d))
        rhs = math.exp(-basis.lambda1 * t) * math.sqrt(b0_norm_sq(u0.values, d))
        worst_excess = max(worst_excess, lhs - rhs)
        worst_ratio = max(worst_ratio, lhs / rhs if rhs > 0 else 0.0)
    return CheckReport("exponential_decay", trials, worst_ratio,
                       {"lambda1": basis.lambda1}, bool(worst_excess <= 1e-12),
                       {"worst_excess": worst_excess})
