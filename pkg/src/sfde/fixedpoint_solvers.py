"""Pathwise Picard iteration, stationary successive approximations, smallness and attractivity.

Both schemes evaluate the discrete mild map with the same step arithmetic
as the stepper, so the discrete fixed point of the Picard map is the
stepper's path for the same frozen noise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import stats as sps

from .delay_dynamics import ModelSpec, record_times, simulate_members, steps_for
from .reports import CheckReport, dumps
from .spectral_domain import FullState, b0_norm_sq
from .stochastic_driver import FORWARD, NoiseSource, StreamFamily, two_sided_normals

__all__ = [
    "SmallnessReport",
    "SmallnessViolation",
    "PathApproximation",
    "FrozenNoise",
    "PicardResult",
    "StationaryResult",
    "smallness_check",
    "freeze_noise",
    "picard_map",
    "picard_solve",
    "stationary_successive_approx",
    "attractivity_experiment",
]


@dataclass(frozen=True)
class SmallnessReport:
    """Both smallness conditions for (h, lambda1, a, L).

    iteration: h L^2 (4 / lambda1^2 + 2 a / lambda1) < 1.
    attractivity: gamma0 L^2 < lambda1 with gamma0 = (3 + 3 h e^{lambda1 h})(1 / lambda1 + a).
    """

    h: float
    lambda1: float
    a: float
    L: float
    iteration_value: float
    iteration_holds: bool
    iteration_threshold_L: float
    gamma0: float
    gamma0_L2: float
    attractivity_holds: bool
    attractivity_threshold_L: float
    gamma_pred: Optional[float]
    K_proof: float

    def to_dict(self) -> dict:
        return {
            "inputs": {"h": self.h, "lambda1": self.lambda1, "a": self.a, "L": self.L},
            "iteration": {"value": self.iteration_value, "holds": self.iteration_holds,
                          "threshold_L": self.iteration_threshold_L},
            "attractivity": {"gamma0": self.gamma0, "gamma0_L2": self.gamma0_L2,
                             "holds": self.attractivity_holds,
                             "threshold_L": self.attractivity_threshold_L,
                             "gamma_pred": self.gamma_pred, "K_proof": self.K_proof},
        }

    def to_json(self) -> str:
        return dumps(self.to_dict())


class SmallnessViolation(ValueError):
    def __init__(self, report: SmallnessReport, which: str):
        self.report = report
        super().__init__(f"{which} smallness condition fails: {report.to_json()}")


def smallness_check(h: float, lambda1: float, a: float, L: float) -> SmallnessReport:
    if not (h > 0 and lambda1 > 0 and a >= 0 and L >= 0):
        raise ValueError(f"need h > 0, lambda1 > 0, a >= 0, L >= 0; got h={h}, lambda1={lambda1}, a={a}, L={L}")
    c_iter = h * (4.0 / lambda1 ** 2 + 2.0 * a / lambda1)
    it = c_iter * L * L
    gamma0 = (3.0 + 3.0 * h * math.exp(lambda1 * h)) * (1.0 / lambda1 + a)
    g_l2 = gamma0 * L * L
    rate = lambda1 - g_l2
    return SmallnessReport(
        h=float(h), lambda1=float(lambda1), a=float(a), L=float(L),
        iteration_value=it, iteration_holds=bool(it < 1), iteration_threshold_L=1.0 / math.sqrt(c_iter),
        gamma0=gamma0, gamma0_L2=g_l2, attractivity_holds=bool(g_l2 < lambda1),
        attractivity_threshold_L=math.sqrt(lambda1 / gamma0),
        gamma_pred=rate if rate > 0 else None,
        K_proof=3.0 * math.exp(lambda1 * h) * h + 3.0,
    )


def model_smallness(model: ModelSpec) -> SmallnessReport:
    return smallness_check(model.h, model.basis.lambda1, model.noise.trace, model.lipschitz)


@dataclass
class PathApproximation:
    """Heads u(t_j) on a window plus the history segment at its start.

    ``values`` has shape (n + 1, ..., R) and ``history`` (M + 1, ..., R) in
    theta order; history[-1] equals values[0].
    """

    t0: float
    dt: float
    values: np.ndarray
    history: np.ndarray
    iteration: int = 0
    distance: float = math.inf

    def __post_init__(self):
        if self.values.shape[1:] != self.history.shape[1:]:
            raise ValueError("path and history shapes differ")
        if not np.array_equal(self.values[0], self.history[-1]):
            raise ValueError("path must start at the newest history value")

    @property
    def n_steps(self) -> int:
        return self.values.shape[0] - 1

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.n_steps + 1)

    def extended(self) -> np.ndarray:
        """History followed by the path, from t0 - h to the end."""
        return np.concatenate([self.history[:-1], self.values], axis=0)

    @classmethod
    def constant(cls, history: np.ndarray, n_steps: int, t0: float, dt: float) -> "PathApproximation":
        """Initial guess: the newest history value held over the window."""
        vals = np.broadcast_to(history[-1], (n_steps + 1,) + history.shape[1:]).copy()
        return cls(t0, dt, vals, np.array(history, dtype=float))


@dataclass(frozen=True, eq=False)
class FrozenNoise:
    """Standard normals per step, (n_steps, ..., J); immutable once sampled."""

    xi: np.ndarray
    t0: float = 0.0

    def __post_init__(self):
        x = np.array(self.xi, dtype=float)
        x.setflags(write=False)
        object.__setattr__(self, "xi", x)

    @property
    def n_steps(self) -> int:
        return self.xi.shape[0]

    def window(self, start: int, stop: int) -> "FrozenNoise":
        return FrozenNoise(self.xi[start:stop], self.t0)


def freeze_noise(model: ModelSpec, T: float, seed: int, members: Sequence[int] = (0,),
                 branch: int = FORWARD) -> FrozenNoise:
    """The normals the ensemble engine would use for these members over [0, T].

    A single member gives shape (n_steps, J), several give (n_steps, B, J).
    """
    n = steps_for(T, model.dt)
    xi = NoiseSource(StreamFamily(seed, branch), members, model.noise.J).next(n)
    return FrozenNoise(xi[:, 0] if len(members) == 1 else xi)


class _PathView:
    """Grid quantities of all segments along a path, for the vectorized map."""

    def __init__(self, model: ModelSpec, ext: np.ndarray):
        self.model = model
        self.ext = ext
        self.M = model.M
        self.n = ext.shape[0] - self.M - 1  # segments at nodes 0 .. n - 1
        self.thetas = -model.h + model.dt * np.arange(self.M + 1)

    def _grid(self, v):
        return self.model.basis.to_grid(v) if self.model.domain.bounded else v

    def integral(self):
        # trapezoid over each window ext[j : j + M + 1], same sums as the ring buffer
        win = sliding_window_view(self.ext[: self.n + self.M], self.M + 1, axis=0)
        total = win.sum(axis=-1)
        ends = self.ext[: self.n] + self.ext[self.M: self.M + self.n]
        return self._grid(self.model.dt * (total - 0.5 * ends))

    def oldest(self):
        return self._grid(self.ext[: self.n])

    def history(self):
        win = sliding_window_view(self.ext[: self.n + self.M], self.M + 1, axis=0)
        return self._grid(np.moveaxis(win, -1, 0))


def _sup_distance(a: np.ndarray, b: np.ndarray, model: ModelSpec) -> float:
    return float(np.sqrt(np.max(b0_norm_sq(a - b, model.domain, model.representation))))


def picard_map(model: ModelSpec, candidate: PathApproximation, noise: Optional[FrozenNoise]) -> PathApproximation:
    """One application of the mild map to a candidate path.

    The segment at node j is cut from the candidate (and its history), f and
    sigma are evaluated there, and the discrete mild sum is accumulated from
    the candidate's own starting value.
    """
    if abs(candidate.dt - model.dt) > 1e-15 * max(1.0, model.dt):
        raise ValueError(f"candidate step {candidate.dt} does not match the model's dt={model.dt}")
    if candidate.history.shape[0] != model.M + 1:
        raise ValueError("candidate history does not span the model's delay")
    n = candidate.n_steps
    xi = None
    if model.noisy:
        if noise is None or noise.n_steps != n:
            raise ValueError(f"frozen noise must cover exactly {n} steps")
        xi = noise.xi
    g = model.forcing(_PathView(model, candidate.extended()), xi) if n else None
    out = np.empty_like(candidate.values)
    out[0] = candidate.values[0]
    for j in range(n):
        out[j + 1] = model.propagate(out[j], None if g is None else g[j])
    new = PathApproximation(candidate.t0, candidate.dt, out, candidate.history,
                            candidate.iteration + 1)
    new.distance = _sup_distance(out, candidate.values, model)
    return new


@dataclass
class PicardResult:
    path: Optional[PathApproximation]
    converged: bool
    windows: list = field(default_factory=list)
    reason: str = ""

    def max_ratio(self) -> float:
        r = [x for w in self.windows if w["accepted"] for x in w["ratios"]]
        return max(r) if r else 0.0

    def to_dict(self) -> dict:
        return {"converged": self.converged, "reason": self.reason, "windows": self.windows,
                "max_accepted_ratio": self.max_ratio()}

    def history_csv(self) -> str:
        rows = ["window_start,window_end,accepted,iteration,distance,ratio"]
        for w in self.windows:
            for k, d in enumerate(w["distances"]):
                r = w["ratios"][k - 1] if k >= 1 else float("nan")
                rows.append(f"{w['t_start']!r},{w['t_end']!r},{int(w['accepted'])},{k + 1},{d!r},{r!r}")
        return "\n".join(rows) + "\n"


def picard_solve(model: ModelSpec, initial: FullState, T: float, noise: Optional[FrozenNoise],
                 tol: float = 1e-10, max_window: Optional[float] = None,
                 min_window: Optional[float] = None, max_iter: int = 200) -> PicardResult:
    """Solve the mild equation on [0, T] by windowed Picard iteration.

    Each window starts from the constant continuation of the solution so
    far and is iterated until successive iterates are within ``tol`` in the
    sup-B0 distance. Three consecutive ratios >= 1 halve the window; a
    window shorter than ``min_window`` ends with a failure report.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    dt = model.dt
    n_total = steps_for(T, dt)
    w_steps = n_total if max_window is None else max(1, steps_for(max_window, dt))
    w_min = 1 if min_window is None else max(1, int(round(min_window / dt)))
    if initial.segment.M != model.M:
        raise ValueError("initial history does not match the model's delay grid")
    ext = list(initial.segment.ordered())  # history nodes, newest last
    windows = []
    a = 0
    while a < n_total:
        b = min(a + w_steps, n_total)
        hist = np.array(ext[-(model.M + 1):])
        cand = PathApproximation.constant(hist, b - a, a * dt, dt)
        win_noise = noise.window(a, b) if (noise is not None and model.noisy) else None
        dists, ratios = [], []
        streak = 0
        status = None
        for _ in range(max_iter):
            nxt = picard_map(model, cand, win_noise)
            d = nxt.distance
            if dists:
                r = d / dists[-1] if dists[-1] > 0 else 0.0
                ratios.append(r)
                streak = streak + 1 if r >= 1 else 0
            dists.append(d)
            cand = nxt
            if d < tol:
                status = "ok"
                break
            if streak >= 3:
                status = "halve"
                break
        rec = {"t_start": a * dt, "t_end": b * dt, "iterations": len(dists), "distances": dists,
               "ratios": ratios, "accepted": status == "ok"}
        windows.append(rec)
        if status == "ok":
            ext.extend(cand.values[1:])
            a = b
            continue
        if status is None:
            return PicardResult(None, False, windows, f"no convergence within {max_iter} iterations at t={a * dt:.6g}")
        w_steps //= 2
        if w_steps < w_min:
            return PicardResult(None, False, windows, f"window fell below the minimum at t={a * dt:.6g}")
    vals = np.array(ext[model.M:])
    path = PathApproximation(0.0, dt, vals, initial.segment.ordered(), sum(w["iterations"] for w in windows),
                             windows[-1]["distances"][-1] if windows else 0.0)
    return PicardResult(path, True, windows)


@dataclass
class StationaryResult:
    path: PathApproximation
    distances: list
    ratios: list
    ratio_bound: float
    smallness: SmallnessReport
    doubling_rel: Optional[float]
    doubling_tol: float
    passed: bool
    reason: str = ""

    def to_dict(self) -> dict:
        return {"distances": self.distances, "ratios": self.ratios, "ratio_bound": self.ratio_bound,
                "smallness": self.smallness.to_dict(), "doubling_rel": self.doubling_rel,
                "doubling_tol": self.doubling_tol, "pass": self.passed, "reason": self.reason,
                "iterations": len(self.distances)}


def _successive(model: ModelSpec, xi: Optional[np.ndarray], n_back: int, n_fwd: int, shape: tuple,
                tol: float, max_iter: int):
    """Iterate the frozen-delay linear solve from zero data at -T_back."""
    dt = model.dt
    n = n_back + n_fwd
    hist = np.zeros((model.M + 1,) + shape)
    cand = PathApproximation.constant(hist, n, -n_back * dt, dt)
    noise = FrozenNoise(xi, -n_back * dt) if xi is not None else None
    dists = []
    for _ in range(max_iter):
        nxt = picard_map(model, cand, noise)
        diff = b0_norm_sq(nxt.values - cand.values, model.domain, model.representation)
        ms = diff.reshape(n + 1, -1).mean(axis=1)  # ensemble mean square per node
        d = float(ms.max())
        dists.append(d)
        cand = nxt
        if math.sqrt(d) < tol:
            break
    return cand, dists


def stationary_successive_approx(model: ModelSpec, T_back: float, T_forward: float, seed: int,
                                 members: int = 1, tol: float = 1e-10, max_iter: int = 60,
                                 doubling_check: bool = True, doubling_tol: float = 1e-3,
                                 ratio_slack: float = 0.05) -> StationaryResult:
    """Approximate the stationary solution by successive approximations.

    u^(0) = 0; u^(n+1) solves the linear equation with f and sigma frozen at
    u^(n), started from zero data at -T_back and driven by a two-sided noise
    path. Distances are sup over nodes of the ensemble mean of
    ||u^(n+1) - u^(n)||_B0^2; their ratios are compared with
    h L^2 (4 / lambda1^2 + 2 a / lambda1) plus ``ratio_slack``. The run is
    repeated from -2 T_back and the two paths on [0, T_forward] must agree
    to relative ``doubling_tol``.
    """
    rep = model_smallness(model)
    if not rep.iteration_holds:
        raise SmallnessViolation(rep, "iteration")
    dt = model.dt
    n_back, n_fwd = steps_for(T_back, dt), steps_for(T_forward, dt)
    shape = (members, model.state_size) if members > 1 else (model.state_size,)

    def normals(nb):
        if not model.noisy:
            return None
        xi = two_sided_normals(seed, range(members), model.noise.J, nb, n_fwd)
        return xi if members > 1 else xi[:, 0]

    path, dists = _successive(model, normals(n_back), n_back, n_fwd, shape, tol, max_iter)
    ratios = [dists[k] / dists[k - 1] if dists[k - 1] > 0 else 0.0 for k in range(1, len(dists))]
    converged = math.sqrt(dists[-1]) < tol
    bound = rep.iteration_value + ratio_slack
    fwd = PathApproximation(0.0, dt, path.values[n_back:], path.extended()[n_back: n_back + model.M + 1])
    rel = None
    ok = converged and all(r <= bound for r in ratios if dists[0] > 0)
    reason = "" if converged else f"no convergence within {max_iter} iterations"
    if doubling_check:
        path2, _ = _successive(model, normals(2 * n_back), 2 * n_back, n_fwd, shape, tol, max_iter)
        a = fwd.values
        b = path2.values[2 * n_back:]
        scale = math.sqrt(float(np.max(b0_norm_sq(a, model.domain, model.representation))))
        diff = _sup_distance(a, b, model)
        rel = diff / scale if scale > 0 else diff
        if rel > doubling_tol:
            ok = False
            reason = reason or f"doubling T_back moved the path by {rel:.3g} (relative)"
    if ok and not all(r <= bound for r in ratios):
        reason = "contraction ratio above the bound"
    return StationaryResult(fwd, dists, ratios, bound, rep, rel, doubling_tol, ok, reason)


def attractivity_experiment(model: ModelSpec, initial1: FullState, initial2: FullState, T: float,
                            n_pairs: int, seed: int, record_every: int = 10, threads: int = 1,
                            ci_level: float = 0.95):
    """Fit E||u - eta||_B^2 ~ K exp(-gamma t) for pairs sharing one noise path.

    The log of the ensemble mean is regressed on t over [h, T]. Passes iff
    the fitted rate is at least gamma_pred minus the confidence half-width;
    when the attractivity condition fails the run is flagged exploratory.
    Returns the report and the (t, mean, mean_B0) series.
    """
    dom, rep_ = model.domain, model.representation
    dt = model.dt

    def obs(n, u, seg):
        du = u[:, 0] - u[:, 1]
        d0 = b0_norm_sq(du, dom, rep_)
        sq = b0_norm_sq(seg.raw[:, :, 0] - seg.raw[:, :, 1], dom, rep_)
        old = b0_norm_sq(seg.oldest[:, 0] - seg.oldest[:, 1], dom, rep_)
        d1 = dt * (sq.sum(axis=0) - 0.5 * (old + d0))
        return np.stack([d0, d1], axis=-1)

    parts = simulate_members(model, [initial1, initial2], T, n_pairs, seed, obs, record_every,
                             reduce=lambda arr: arr.sum(axis=0), threads=threads)
    total = parts[0]
    for p in parts[1:]:
        total = total + p
    mean = total / n_pairs
    t = record_times(model, T, record_every)
    eb = mean[:, 0] + mean[:, 1]
    sel = (t >= model.h - 1e-12) & (eb > 0)
    rep = model_smallness(model)
    details = {"n_fit": int(sel.sum()), "fit_window": [model.h, T], "K_proof": rep.K_proof,
               "gamma_pred": rep.gamma_pred, "exploratory": not rep.attractivity_holds,
               "initial_distance_sq": float(eb[0])}
    if sel.sum() < 3:
        note = "difference vanished; nothing to fit" if eb.max() == 0 else "fewer than 3 points in the fit window"
        return CheckReport("attractivity", n_pairs, float("nan"), {}, bool(eb.max() == 0),
                           {**details, "note": note}), (t, eb, mean[:, 0])
    fit = sps.linregress(t[sel], np.log(eb[sel]))
    gamma = -fit.slope
    half = float(sps.t.ppf(0.5 + ci_level / 2, sel.sum() - 2) * fit.stderr)
    K_hat = math.exp(fit.intercept) / eb[0] if eb[0] > 0 else float("nan")
    passed = rep.gamma_pred is not None and gamma >= rep.gamma_pred - half
    rep_out = CheckReport(
        check="attractivity", samples=n_pairs, worst_ratio=gamma / rep.gamma_pred if rep.gamma_pred else float("nan"),
        constants={"gamma_hat": gamma, "gamma_ci_halfwidth": half, "K_hat": K_hat,
                   "gamma_pred": rep.gamma_pred, "ci_level": ci_level},
        passed=bool(passed), details={**details, "intercept": fit.intercept, "stderr": fit.stderr})
    return rep_out, (t, eb, mean[:, 0])

