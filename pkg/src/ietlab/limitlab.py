"""Distributional limit experiments for vertical-arc functionals.

Empirical scalar distributions and path processes sampled from the
suspension flow, probability metrics (bounded-Lipschitz and Levy-Prohorov)
computed exactly on empirical data with small LP oracles for validation,
variance growth traces along the stretch flow, time rescaling of processes,
and atom diagnostics for the sampled laws.
"""

from __future__ import annotations

import bisect
import csv
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np
from numpy.random import default_rng
from scipy.optimize import linear_sum_assignment, linprog
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import maximum_bipartite_matching

from .cocycle import (induction_path, lyapunov_spectrum,
                      second_plane_at_origin, symplectic_data,
                      unstable_vector_at_origin)
from .errors import (ConePointError, DegenerateVariance, DomainError,
                     GridUnderflow, NonConvergenceError, NotSimple,
                     RejectionOverflow, SizeLimit)
from .finadd import (CellFunction, HoelderCocycle, ReturnLadder, _fresh_key,
                     _push_sequence, build_phi_f, build_phi_from_vector,
                     dual_unstable_covector_at_origin)
from .rauzy import IetData, iet_apply
from .zippered import (SurfacePoint, ZipperedRectangle, sample_point,
                       teichmuller_flow, vertical_flow)

_trapz = getattr(np, "trapezoid", None) or np.trapz

_HEIGHT_KEY = "__column_heights__"


# ------------------------------------------------------------- data types

@dataclass(frozen=True)
class EmpiricalDistribution:
    """Weighted atomic probability measure on the line."""

    samples: tuple
    weights: tuple | None = None

    def __post_init__(self):
        object.__setattr__(self, "samples",
                           tuple(float(x) for x in self.samples))
        if len(self.samples) == 0:
            raise DomainError("empirical distribution needs at least one atom")
        if self.weights is not None:
            w = tuple(float(v) for v in self.weights)
            if len(w) != len(self.samples):
                raise DomainError("one weight per sample required")
            if min(w) < 0:
                raise DomainError("weights must be non-negative")
            if abs(sum(w) - 1.0) > 1e-9:
                raise DomainError("weights must sum to one")
            object.__setattr__(self, "weights", w)

    @property
    def n(self) -> int:
        return len(self.samples)

    def weight_array(self) -> np.ndarray:
        if self.weights is None:
            return np.full(self.n, 1.0 / self.n)
        return np.asarray(self.weights, dtype=float)

    def mean(self) -> float:
        return float(self.weight_array() @ np.asarray(self.samples))

    def var(self) -> float:
        x = np.asarray(self.samples)
        w = self.weight_array()
        m = float(w @ x)
        return float(w @ (x - m) ** 2)


def delta_measure(x: float = 0.0) -> EmpiricalDistribution:
    """Point mass at x."""
    return EmpiricalDistribution((float(x),))


def default_tau_grid(n_points: int = 17) -> tuple:
    """Evenly spaced time grid on [0, 1] including both endpoints."""
    if n_points < 2:
        raise DomainError("grid needs at least the two endpoints")
    return tuple(float(t) for t in np.linspace(0.0, 1.0, n_points))


def _check_tau_grid(tau_grid) -> tuple:
    grid = tuple(float(t) for t in tau_grid)
    if len(grid) < 2:
        raise DomainError("grid needs at least the two endpoints")
    if grid[0] != 0.0 or grid[-1] != 1.0:
        raise DomainError("grid must start at 0 and end at 1")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise DomainError("grid must be strictly increasing")
    return grid


@dataclass(frozen=True, eq=False)
class EmpiricalProcess:
    """Sampled paths of a scalar process on a fixed time grid in [0, 1]."""

    tau_grid: tuple
    paths: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        grid = _check_tau_grid(self.tau_grid)
        object.__setattr__(self, "tau_grid", grid)
        paths = np.asarray(self.paths, dtype=float)
        if paths.ndim != 2 or paths.shape[1] != len(grid):
            raise DomainError("paths must be a samples-by-grid matrix")
        if paths.shape[0] == 0:
            raise DomainError("process needs at least one sample path")
        if np.any(paths[:, 0] != 0.0):
            raise DomainError("every path must start at zero")
        object.__setattr__(self, "paths", paths)

    @property
    def n_samples(self) -> int:
        return self.paths.shape[0]

    def endpoint_distribution(self) -> EmpiricalDistribution:
        return EmpiricalDistribution(tuple(self.paths[:, -1]))

    def is_normalized(self, var_tol: float = 1e-8,
                      mean_tol: float = 0.25) -> bool:
        end_var = float(np.var(self.paths[:, -1], ddof=1))
        if abs(end_var - 1.0) > var_tol:
            return False
        means = np.abs(self.paths.mean(axis=0))
        return bool(np.all(means <= mean_tol))


@dataclass(frozen=True, eq=False)
class VarianceTrace:
    """Variance of the scaled arc functional along the stretch flow."""

    s_grid: tuple
    variances: np.ndarray
    h2_values: np.ndarray
    ratio: np.ndarray
    meta: dict = field(default_factory=dict)


# ----------------------------------------------------- arc-value evaluation

def _segment_integral(zr, f, x: float, y0: float, y1: float,
                      nodes: int = 33) -> float:
    """Trapezoid integral of f along a partial vertical crossing."""
    if y1 <= y0:
        return 0.0
    ys = np.linspace(y0, y1, nodes)
    vals = [f.value(zr, x, float(yy)) for yy in ys]
    return float(_trapz(vals, ys))


class _ArcEvaluator:
    """Integrals of an observable over vertical arcs from arbitrary points.

    Observables that are constant on each level-0 rectangle (pure-direction
    cocycles and cell functions) are evaluated through the return ladder:
    whole renormalization blocks are consumed greedily, so the cost of a
    duration-T arc is polylogarithmic in T.  Other observables fall back to
    a crossing-by-crossing walk with trapezoid quadrature inside crossings.
    """

    def __init__(self, zr, source, path=None, ladder=None):
        self.zr = zr
        self.hts = np.array([float(h) for h in zr.heights])
        self.slow_f = None
        self.error_bound = 0.0
        if isinstance(source, HoelderCocycle):
            if not np.allclose(source.zr.heights, self.hts, rtol=1e-12):
                raise DomainError("cocycle was built on a different surface")
            self.ladder = source.ladder
            self.key = source.key
            self.vals = np.array([float(v) for v in source.base_values])
            self.error_bound = 2.0 * float(source.endpoint_error_bound)
        else:
            level0 = source.level0_values(zr)
            if level0 is None:
                self.slow_f = source
                self.ladder = None
                self.vals = None
                return
            if ladder is None:
                if path is None:
                    raise DomainError(
                        "need an induction path to ladder a cell function")
                ladder = ReturnLadder(zr, path)
            self.ladder = ladder
            self.key = _fresh_key("arc")
            self.ladder.register(self.key, [float(v) for v in level0])
            self.vals = np.asarray(level0, dtype=float)
        if _HEIGHT_KEY not in self.ladder.levels[0].stats:
            self.ladder.register(_HEIGHT_KEY,
                                 [float(h) for h in zr.heights])
        levels = self.ladder.levels
        self._liet = [lev.iet for lev in levels]
        self._ltot = [float(lev.iet.total) for lev in levels]
        self._ht = [lev.stats[_HEIGHT_KEY][0] for lev in levels]
        self._vt = [lev.stats[self.key][0] for lev in levels]
        min_bt = np.array([min(h) for h in self._ht])
        # smallest block duration at this level or deeper; used to pick the
        # deepest level worth scanning for a given remaining duration
        self._envelope = np.minimum.accumulate(min_bt[::-1])[::-1]

    def profile(self, p, T_list) -> np.ndarray:
        """Arc integrals from p over each duration in the sorted list."""
        if self.slow_f is not None:
            return self._profile_slow(p, T_list)
        hts = self.hts
        vals = self.vals
        iet0 = self._liet[0]
        nT = len(T_list)
        out = np.empty(nT)
        x = float(p.x)
        y = float(p.y)
        t = 0.0
        acc = 0.0
        k = 0
        if y > 0.0:
            i0 = iet0.interval_index(x)
            t_top = hts[i0] - y
            while k < nT and T_list[k] <= t_top:
                out[k] = vals[i0] * T_list[k] / hts[i0]
                k += 1
            if k == nT:
                return out
            acc = vals[i0] * t_top / hts[i0]
            t = t_top
            x = float(iet_apply(iet0, x))
        env = self._envelope
        while k < nT:
            tk = float(T_list[k])
            while True:
                rem = tk - t
                n0 = int(np.searchsorted(env, rem, side="right")) - 1
                consumed = False
                for n in range(n0, -1, -1):
                    if x >= self._ltot[n]:
                        continue
                    i = self._liet[n].interval_index(x)
                    bt = self._ht[n][i]
                    if t + bt <= tk:
                        acc += self._vt[n][i]
                        t += bt
                        x = float(iet_apply(self._liet[n], x))
                        consumed = True
                        break
                if not consumed:
                    break
            i = iet0.interval_index(x)
            out[k] = acc + vals[i] * (tk - t) / hts[i]
            k += 1
        return out

    def _profile_slow(self, p, T_list) -> np.ndarray:
        zr = self.zr
        f = self.slow_f
        hts = self.hts
        nT = len(T_list)
        out = np.empty(nT)
        k = 0
        while k < nT and T_list[k] == 0.0:
            out[k] = 0.0
            k += 1
        if k == nT:
            return out
        endpoint, crossings = vertical_flow(zr, p, float(T_list[-1]))
        if not crossings:
            for j in range(k, nT):
                out[j] = _segment_integral(zr, f, p.x, p.y, p.y + T_list[j])
            return out
        t = 0.0
        acc = 0.0
        for idx, c in enumerate(crossings):
            i = c.interval_index - 1
            y0 = p.y if (idx == 0 and p.y > 0) else 0.0
            d = hts[i] - y0
            while k < nT and T_list[k] <= t + d:
                out[k] = acc + _segment_integral(
                    zr, f, c.base_x, y0, y0 + (T_list[k] - t))
                k += 1
            if y0 > 0:
                acc += _segment_integral(zr, f, c.base_x, y0, hts[i])
            else:
                acc += f.crossing_integral(zr, i, c.base_x)
            t += d
        for j in range(k, nT):
            out[j] = acc + _segment_integral(zr, f, endpoint.x, 0.0,
                                             T_list[j] - t)
        return out


def _path_reaching_tau(iet, tau_target: float, start_n: int = 64):
    """Elementary induction path whose total renormalization time covers
    the target, grown by doubling."""
    n = start_n
    while True:
        path = induction_path(iet, n)
        if path.total_tau(len(path)) >= tau_target:
            return path
        if n > 1_000_000:
            raise NonConvergenceError("induction path fails to accumulate "
                                      "renormalization time")
        n *= 2


def _check_centered(zr, source) -> None:
    if isinstance(source, HoelderCocycle):
        return
    total = float(source.nu_integral(zr))
    level0 = source.level0_values(zr)
    scale = max(abs(v) for v in level0) if level0 else 1.0
    if abs(total) > 1e-8 * max(1.0, scale):
        raise DomainError("integrand must have zero area integral")


def _sample_rows(ev: _ArcEvaluator, zr, T_list, n_samples: int, rng,
                 max_resamples: int):
    rows = np.empty((n_samples, len(T_list)))
    resamples = 0
    j = 0
    while j < n_samples:
        p = sample_point(zr, rng)
        try:
            rows[j] = ev.profile(p, T_list)
        except (ConePointError, DomainError):
            resamples += 1
            if resamples > max_resamples:
                raise RejectionOverflow(
                    "too many singular arcs while sampling")
            continue
        j += 1
    return rows, resamples


def sample_process(zr, source, s: float, tau_grid=None, n_samples: int = 2000,
                   rng=None, path=None, ladder=None,
                   max_resamples: int | None = None) -> EmpiricalProcess:
    """Paths tau -> arc integral of `source` over duration tau * e^s.

    The starting point is area-uniform on the surface; arcs that hit a cone
    point are resampled and counted.  `source` is a finitely-additive
    cocycle or a centered function on the surface; functions constant on
    each rectangle are integrated exactly, others crossing-by-crossing with
    trapezoid quadrature inside crossings.
    """
    grid = _check_tau_grid(default_tau_grid() if tau_grid is None else
                           tau_grid)
    if n_samples < 100:
        raise DomainError("need at least 100 sample paths")
    _check_centered(zr, source)
    rng = default_rng(0) if rng is None else rng
    scale = math.exp(float(s))
    needs_ladder = (not isinstance(source, HoelderCocycle)
                    and source.level0_values(zr) is not None)
    if needs_ladder and path is None and ladder is None:
        path = _path_reaching_tau(zr.iet, float(s) + 6.0)
    ev = _ArcEvaluator(zr, source, path=path, ladder=ladder)
    T_list = [tau * scale for tau in grid]
    if max_resamples is None:
        max_resamples = 50 + n_samples // 10
    rows, resamples = _sample_rows(ev, zr, T_list, n_samples, rng,
                                   max_resamples)
    meta = {"s": float(s), "scale": scale, "n_samples": int(n_samples),
            "resamples": int(resamples),
            "error_bound": float(ev.error_bound)}
    return EmpiricalProcess(grid, rows, meta)


def normalize_process(proc: EmpiricalProcess) -> EmpiricalProcess:
    """Divide all paths by the standard deviation of the endpoint values."""
    end = proc.paths[:, -1]
    v = float(np.var(end, ddof=1))
    if v < 1e-12:
        raise DegenerateVariance("endpoint variance too small to normalize")
    scl = math.sqrt(v)
    meta = dict(proc.meta)
    meta["variance_scale"] = scl
    meta["normalized"] = True
    return EmpiricalProcess(proc.tau_grid, proc.paths / scl, meta)


# -------------------------------------------------------- variance tracing

def variance_trace(zr, source, s_grid, n_samples: int = 2000, rng=None,
                   path=None, series_depth: int = 18) -> VarianceTrace:
    """Variance of the duration-e^s arc functional against its prediction.

    h2_values hold the norm growth of the second expanding direction up to
    stretch time s (log-linear interpolation between renormalization
    times); ratio divides the measured variance by (coefficient * growth)^2
    where the coefficient is the second-component mass of the integrand.
    """
    s_vals = [float(s) for s in s_grid]
    if any(s < 0 for s in s_vals) or any(b < a for a, b in
                                         zip(s_vals, s_vals[1:])):
        raise DomainError("stretch times must be non-negative and sorted")
    rng = default_rng(0) if rng is None else rng
    if path is None:
        path = _path_reaching_tau(zr.iet, max(s_vals) + 6.0)
    h0 = np.array([float(h) for h in zr.heights])
    window = min(len(path), 80)
    ladder = None
    if isinstance(source, HoelderCocycle):
        v_plus = np.array([float(v) for v in source.base_values])
        phi = source
    else:
        ladder = ReturnLadder(zr, path)
        phi = build_phi_f(zr, path, source, depth=series_depth,
                          ladder=ladder)
        v_plus = np.array([float(v) for v in phi.base_values])
    w2 = dual_unstable_covector_at_origin(path, h0, pull_window=window)
    coef = float(w2 @ v_plus)
    if abs(coef) < 1e-9 * max(1.0, float(np.linalg.norm(v_plus))):
        raise DomainError("integrand has no second-component mass; "
                          "the variance trace is degenerate")
    v2 = unstable_vector_at_origin(path, h0, pull_window=window)
    eq = _push_sequence(path, v2, len(path))
    taus = [path.total_tau(n) for n in range(len(path) + 1)]
    log_norms = [float(l) for l in eq.log_norms]

    def h2_at(s: float) -> float:
        j = bisect.bisect_left(taus, s)
        if j == 0:
            return 1.0
        if j >= len(log_norms):
            raise DomainError("induction path too short for this stretch")
        t0, t1 = taus[j - 1], taus[j]
        frac = 0.0 if t1 == t0 else (s - t0) / (t1 - t0)
        ln = log_norms[j - 1] + frac * (log_norms[j] - log_norms[j - 1])
        return math.exp(ln - log_norms[0])

    ev = _ArcEvaluator(zr, source if not isinstance(source, HoelderCocycle)
                       else phi, path=path, ladder=ladder)
    variances = []
    h2s = []
    total_resamples = 0
    for s in s_vals:
        rows, res = _sample_rows(ev, zr, [math.exp(s)], n_samples, rng,
                                 50 + n_samples // 10)
        total_resamples += res
        variances.append(float(np.var(rows[:, 0], ddof=1)))
        h2s.append(h2_at(s))
    variances = np.array(variances)
    h2s = np.array(h2s)
    ratio = variances / (coef * h2s) ** 2
    s_arr = np.asarray(s_vals, dtype=float)
    meta = {"coefficient": coef, "n_samples": int(n_samples),
            "resamples": int(total_resamples)}
    if len(s_arr) >= 3 and s_arr[-1] > s_arr[0]:
        design = np.column_stack([2.0 * s_arr, np.ones_like(s_arr)])
        fit, *_ = np.linalg.lstsq(design, np.log(variances), rcond=None)
        meta["log_var_slope"] = float(fit[0])
        q = len(ratio) // 4
        meta["ratio_first_quarter_spread"] = float(
            ratio[:q + 1].max() - ratio[:q + 1].min())
        meta["ratio_last_quarter_spread"] = float(
            ratio[-(q + 1):].max() - ratio[-(q + 1):].min())
    return VarianceTrace(tuple(s_vals), variances, h2s, ratio, meta)


# ------------------------------------------------- bounded-Lipschitz metric

def _merged_signed_atoms(mu: EmpiricalDistribution,
                         nu: EmpiricalDistribution):
    pts = np.concatenate([np.asarray(mu.samples), np.asarray(nu.samples)])
    support, inverse = np.unique(pts, return_inverse=True)
    c = np.zeros(len(support))
    np.add.at(c, inverse[:mu.n], mu.weight_array())
    np.add.at(c, inverse[mu.n:], -nu.weight_array())
    return support, c

def kr_distance(mu: EmpiricalDistribution,
                nu: EmpiricalDistribution) -> float:
    """Bounded-Lipschitz distance: sup of the integral difference over test
    functions with Lipschitz constant and sup norm both at most one.

    Solved exactly as a linear program over the merged support (adjacent
    Lipschitz constraints suffice on the line).
    """
    support, c = _merged_signed_atoms(mu, nu)
    n = len(support)
    if n == 1:
        return 0.0
    gaps = np.diff(support)
    rows, cols, data, b = [], [], [], []
    for i in range(n - 1):
        rows += [2 * i, 2 * i, 2 * i + 1, 2 * i + 1]
        cols += [i + 1, i, i + 1, i]
        data += [1.0, -1.0, -1.0, 1.0]
        b += [gaps[i], gaps[i]]
    a_ub = csr_matrix((data, (rows, cols)), shape=(2 * (n - 1), n))
    res = linprog(-c, A_ub=a_ub, b_ub=np.array(b), bounds=(-1.0, 1.0),
                  method="highs")
    if not res.success:
        raise NonConvergenceError("test-function linear program failed")
    return max(0.0, float(-res.fun))


def kr_coupling_oracle(mu: EmpiricalDistribution,
                       nu: EmpiricalDistribution,
                       max_points: int = 50) -> float:
    """Primal transport form of the bounded-Lipschitz distance (validation).

    Minimizes the coupling integral of min(|x - y|, 2); small instances
    only.
    """
    if mu.n > max_points or nu.n > max_points:
        raise SizeLimit("coupling oracle limited to small instances")
    x = np.asarray(mu.samples)
    y = np.asarray(nu.samples)
    cost = np.minimum(np.abs(x[:, None] - y[None, :]), 2.0)
    n, m = cost.shape
    rows, cols, data = [], [], []
    for i in range(n):
        for j in range(m):
            rows.append(i)
            cols.append(i * m + j)
            data.append(1.0)
    for j in range(m):
        for i in range(n):
            rows.append(n + j)
            cols.append(i * m + j)
            data.append(1.0)
    a_eq = csr_matrix((data, (rows, cols)), shape=(n + m, n * m))
    b_eq = np.concatenate([mu.weight_array(), nu.weight_array()])
    res = linprog(cost.ravel(), A_eq=a_eq, b_eq=b_eq, bounds=(0, None),
                  method="highs")
    if not res.success:
        raise NonConvergenceError("coupling linear program failed")
    return float(res.fun)


def _sup_cost_matrix(p1: EmpiricalProcess, p2: EmpiricalProcess,
                     cap: float | None = None) -> np.ndarray:
    if p1.tau_grid != p2.tau_grid:
        raise DomainError("processes live on different grids")
    a, b = p1.paths, p2.paths
    n, k = a.shape
    m = b.shape[0]
    out = np.empty((n, m))
    step = max(1, 4_000_000 // max(1, m * k))
    for lo in range(0, n, step):
        blk = np.abs(a[lo:lo + step, None, :] - b[None, :, :]).max(axis=2)
        out[lo:lo + step] = blk
    if cap is not None:
        np.minimum(out, cap, out=out)
    return out


def kr_distance_grid(p1: EmpiricalProcess, p2: EmpiricalProcess,
                     max_n: int = 2048) -> float:
    """Bounded-Lipschitz distance between empirical path laws under the
    sup metric on the common grid (exact assignment for equal counts)."""
    if p1.n_samples != p2.n_samples:
        raise DomainError("process distance needs equal sample counts")
    if p1.n_samples > max_n:
        raise SizeLimit("too many paths for the exact assignment")
    cost = _sup_cost_matrix(p1, p2, cap=2.0)
    row, col = linear_sum_assignment(cost)
    return float(cost[row, col].mean())


# --------------------------------------------------- Levy-Prohorov metric

def _one_sided_excess(apts, aw, bpts, bcum, eps: float) -> float:
    """max over atom sets S of first measure of  a(S) - b(closed eps-hull)."""
    n = len(apts)
    best = 0.0
    dp = np.empty(n)
    keys = np.empty(n)  # dp_j + b-mass up to a_j + eps (chain extension key)
    dq: deque = deque()
    ptr = 0
    pref_best = 0.0
    for i in range(n):
        ai = apts[i]
        lo = ai - 2.0 * eps
        while ptr < i and apts[ptr] < lo:
            pref_best = max(pref_best, dp[ptr])
            while dq and dq[0] <= ptr:
                dq.popleft()
            ptr += 1
        right_mass = bcum[bisect.bisect_right(bpts, ai + eps)]
        left_mass = bcum[bisect.bisect_left(bpts, ai - eps)]
        val = aw[i] - right_mass + left_mass + max(0.0, pref_best)
        if dq:
            val = max(val, aw[i] - right_mass + keys[dq[0]])
        dp[i] = val
        keys[i] = val + right_mass
        while dq and keys[dq[-1]] <= keys[i]:
            dq.pop()
        dq.append(i)
        if val > best:
            best = val
    return best


def _atoms_sorted(mu: EmpiricalDistribution):
    pts = np.asarray(mu.samples)
    support, inverse = np.unique(pts, return_inverse=True)
    w = np.zeros(len(support))
    np.add.at(w, inverse, mu.weight_array())
    cum = np.concatenate([[0.0], np.cumsum(w)])
    return support, w, cum


def _prohorov_feasible(a, b, eps: float) -> bool:
    if _one_sided_excess(a[0], a[1], b[0], b[2], eps) > eps + 1e-14:
        return False
    return _one_sided_excess(b[0], b[1], a[0], a[2], eps) <= eps + 1e-14


def lp_distance(mu: EmpiricalDistribution, nu: EmpiricalDistribution,
                tol: float = 1e-12) -> float:
    """Levy-Prohorov distance between atomic measures on the line.

    Uses closed eps-inflations; the worst Borel set on either side is a
    union of atoms, maximized exactly by a left-to-right chain scan, and
    the smallest feasible eps is found by bisection (always at most 1).
    """
    a = _atoms_sorted(mu)
    b = _atoms_sorted(nu)
    lo, hi = 0.0, 1.0
    if _prohorov_feasible(a, b, 0.0):
        return 0.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if _prohorov_feasible(a, b, mid):
            hi = mid
        else:
            lo = mid
    return hi


def lp_distance_small_oracle(mu: EmpiricalDistribution,
                             nu: EmpiricalDistribution,
                             max_points: int = 12) -> float:
    """Brute-force Levy-Prohorov value over all atom subsets (validation)."""
    a = _atoms_sorted(mu)
    b = _atoms_sorted(nu)
    if len(a[0]) > max_points or len(b[0]) > max_points:
        raise SizeLimit("brute-force oracle limited to small instances")

    def side_requirement(first, second) -> float:
        fpts, fw, _ = first
        spts, sw, _ = second
        worst = 0.0
        nf = len(fpts)
        for mask in range(1, 1 << nf):
            idx = [i for i in range(nf) if mask >> i & 1]
            mass = float(sum(fw[i] for i in idx))
            dists = np.array([min(abs(s - fpts[i]) for i in idx)
                              for s in spts])
            order = np.argsort(dists)
            # scan the step function eps -> mass - second(closed hull)
            breaks = [0.0] + [float(dists[j]) for j in order]
            covered = [0.0]
            run = 0.0
            for j in order:
                run += float(sw[j])
                covered.append(run)
            best_eps = math.inf
            for k in range(len(breaks)):
                seg_lo = breaks[k]
                seg_hi = breaks[k + 1] if k + 1 < len(breaks) else math.inf
                need = mass - covered[k]
                cand = max(seg_lo, need)
                if cand < seg_hi:
                    best_eps = min(best_eps, cand)
            worst = max(worst, best_eps)
        return worst

    return max(0.0, side_requirement(a, b), side_requirement(b, a))


def lp_distance_grid(p1: EmpiricalProcess, p2: EmpiricalProcess,
                     max_n: int = 2048) -> float:
    """Levy-Prohorov distance between empirical path laws (sup metric).

    For equal uniform sample counts the smallest feasible inflation is
    determined by maximum matchings: mass that cannot be matched within
    eps must be at most eps.  Exact search over the candidate values.
    """
    if p1.n_samples != p2.n_samples:
        raise DomainError("process distance needs equal sample counts")
    n = p1.n_samples
    if n > max_n:
        raise SizeLimit("too many paths for the matching search")
    dmat = _sup_cost_matrix(p1, p2)

    def feasible(eps: float) -> bool:
        adj = csr_matrix(dmat <= eps)
        match = maximum_bipartite_matching(adj, perm_type="column")
        matched = int((match != -1).sum())
        return (n - matched) / n <= eps + 1e-15

    cands = np.unique(np.concatenate([
        dmat.ravel(), np.arange(n + 1) / n, [1.0]]))
    cands = cands[(cands >= 0.0) & (cands <= 1.0)]
    lo, hi = 0, len(cands) - 1
    if feasible(float(cands[0])):
        return float(cands[0])
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if feasible(float(cands[mid])):
            hi = mid
        else:
            lo = mid
    return float(cands[hi])


# ------------------------------------------------------------ time rescale

def gs_rescale(proc: EmpiricalProcess, s: float) -> EmpiricalProcess:
    """Rescaled process tau -> xi(tau * e^-s), renormalized at the endpoint.

    Values below the grid are linearly interpolated from the stored grid
    points; e^-s below the first positive grid point is refused.
    """
    if s < 0:
        raise DomainError("rescaling runs the stretch flow forward only")
    factor = math.exp(-float(s))
    grid = np.asarray(proc.tau_grid)
    if s > 0 and factor < grid[1]:
        raise GridUnderflow("rescaled endpoint falls below the grid "
                            "resolution")
    new_times = grid * factor
    paths = np.empty_like(proc.paths)
    for j, row in enumerate(proc.paths):
        paths[j] = np.interp(new_times, grid, row)
    meta = dict(proc.meta)
    meta["rescaled_by"] = float(s)
    return normalize_process(EmpiricalProcess(proc.tau_grid, paths, meta))


# ------------------------------------------------ limit process construction

def _simplicity_check(iet, spectrum_steps: int) -> None:
    sd = symplectic_data(iet.perm)
    k = min(3, 2 * sd.genus)
    est = lyapunov_spectrum(iet, spectrum_steps, k, rng=default_rng(13),
                            stderr_threshold=math.inf)
    exps = est.exponents
    errs = est.stderr
    if exps[1] <= 3.0 * errs[1]:
        raise NotSimple("second exponent not separated from zero")
    if len(exps) >= 3 and exps[1] - exps[2] <= 3.0 * (errs[1] + errs[2]):
        raise NotSimple("second exponent not separated from the third")


def d2_plus(zr, v=None, tau_grid=None, n_samples: int = 2000, rng=None,
            path=None, check_simplicity: bool = True,
            spectrum_steps: int = 2000) -> EmpiricalProcess:
    """Normalized limit-candidate process driven by the second expanding
    direction, sampled over unit-time arcs."""
    g = symplectic_data(zr.perm).genus
    if g < 2:
        raise DomainError("second expanding direction requires genus >= 2")
    if check_simplicity:
        _simplicity_check(zr.iet, spectrum_steps)
    if path is None:
        path = _path_reaching_tau(zr.iet, 20.0)
    h0 = np.array([float(h) for h in zr.heights])
    if v is None:
        v = unstable_vector_at_origin(path, h0,
                                      pull_window=min(len(path), 80))
    phi = build_phi_from_vector(zr, path, v)
    proc = sample_process(zr, phi, 0.0, tau_grid, n_samples, rng, path=path)
    return normalize_process(proc)


def d_i_plus(zr, i: int, v=None, tau_grid=None, n_samples: int = 2000,
             rng=None, path=None, check_simplicity: bool = True) -> EmpiricalProcess:
    """Limit-candidate process for the i-th expanding component."""
    g = symplectic_data(zr.perm).genus
    if i < 1:
        raise DomainError("component index starts at one")
    if i == 1:
        raise DomainError("the first component grows deterministically; "
                          "its normalized law is degenerate")
    if i > g:
        raise DomainError("no expanding direction with this index")
    if i == 2:
        return d2_plus(zr, v, tau_grid, n_samples, rng, path,
                       check_simplicity)
    if v is None:
        raise DomainError("directions beyond the second must be supplied")
    if path is None:
        path = _path_reaching_tau(zr.iet, 20.0)
    phi = build_phi_from_vector(zr, path, v)
    proc = sample_process(zr, phi, 0.0, tau_grid, n_samples, rng, path=path)
    return normalize_process(proc)


def component_index(zr, path, source, threshold: float = 1e-6,
                    series_depth: int = 18) -> int:
    """Index of the first expanding component carried by the observable.

    1 for a non-centered observable (or a vector with top-direction mass),
    2 when the second expanding coefficient is above threshold, and 3 when
    no expanding component remains (deeper indices are not separated here).
    """
    h0 = np.array([float(h) for h in zr.heights])
    lam = np.array([float(l) for l in zr.iet.lengths])
    ref = None
    if isinstance(source, HoelderCocycle):
        v = np.array([float(x) for x in source.base_values])
    elif isinstance(source, (list, tuple, np.ndarray)):
        v = np.asarray(source, dtype=float)
    else:
        level0 = source.level0_values(zr)
        scale = max(abs(x) for x in level0) if level0 else 1.0
        if abs(float(source.nu_integral(zr))) > threshold * max(1.0, scale):
            return 1
        phi = build_phi_f(zr, path, source, depth=series_depth)
        v = np.array([float(x) for x in phi.base_values])
        # classify against the size of the observable itself, not of its
        # expanding projection: a purely contracted observable projects to
        # a vector of roundoff size whose direction is meaningless
        ref = float(np.linalg.norm(np.asarray(level0, dtype=float) * h0))
    norm = float(np.linalg.norm(v))
    if ref is None:
        ref = norm
    if norm == 0 or ref == 0:
        return 3
    if abs(float(lam @ v)) > threshold * float(np.linalg.norm(lam)) * ref:
        return 1
    w2 = dual_unstable_covector_at_origin(path, h0,
                                          pull_window=min(len(path), 80))
    if abs(float(w2 @ v)) > threshold * ref:
        return 2
    return 3


def _unit_flow_rep(zr, s: float):
    """Flow the surface and rescale the representative to unit base length.

    Returns (unit rep, flow result, L) where L is the flowed rep's total
    base length; the flowed chart's own durations are L times the unit
    rep's, and e^s times shorter than the original chart's.
    """
    fr = teichmuller_flow(zr, s)
    zs = fr.zr
    total = float(zs.iet.total)
    iet = IetData(tuple(float(l) / total for l in zs.iet.lengths),
                  zs.iet.perm)
    unit = ZipperedRectangle(iet, tuple(float(d) * total for d in zs.delta))
    return unit, fr, total


def flowed_surface_with_direction(zr, s: float, v):
    """Stretch-flow the surface and push a height-space direction with it.

    Returns the unit-total representative of the flowed surface, the pushed
    direction (unit norm), and the leftover horizon factor L: an arc of
    duration tau * e^s on the original surface is an arc of duration
    tau * L on the returned one, so the matched comparison samples the
    returned surface at log-scale log(L).
    """
    unit, fr, total = _unit_flow_rep(zr, s)
    pushed = fr.matrix_product.T.astype(float) @ np.asarray(v, dtype=float)
    nrm = float(np.linalg.norm(pushed))
    if nrm == 0:
        raise DomainError("pushed direction vanished")
    return unit, pushed / nrm, total


def flowed_presentation_process(zr, source, s: float, tau_grid=None,
                                n_samples: int = 2000, rng=None, path=None,
                                ladder=None,
                                max_resamples: int | None = None
                                ) -> EmpiricalProcess:
    """Paths of `source` seen from the time-s flowed presentation.

    The flowed surface is the same surface with a renormalized chart, so
    the pushed cocycle there is the original finitely-additive measure
    evaluated through the chart correspondence: points are drawn
    area-uniformly in the flowed chart, mapped back, and the measure is
    integrated over the matching arcs (duration tau in the flowed chart
    = tau * e^s in the original one).  Together with the intrinsic sampler
    this realizes both sides of the renormalization identity; a freshly
    rebuilt measure at the flowed surface would instead re-uniformize the
    within-cell mass and change the law at this order.
    """
    grid = _check_tau_grid(default_tau_grid() if tau_grid is None else
                           tau_grid)
    if n_samples < 100:
        raise DomainError("need at least 100 sample paths")
    _check_centered(zr, source)
    rng = default_rng(0) if rng is None else rng
    scale = math.exp(float(s))
    needs_ladder = (not isinstance(source, HoelderCocycle)
                    and source.level0_values(zr) is not None)
    if needs_ladder and path is None and ladder is None:
        path = _path_reaching_tau(zr.iet, float(s) + 7.0)
    ev = _ArcEvaluator(zr, source, path=path, ladder=ladder)
    unit, fr, L = _unit_flow_rep(zr, float(s))
    # the flowed chart is a per-axis rescale of the induced sub-chart, so
    # the correspondence is a global scaling on each axis
    x_factor = L / scale          # flowed-chart abscissa -> original chart
    y_factor = scale / L          # flowed-chart height -> original chart
    if max_resamples is None:
        max_resamples = 50 + n_samples // 10
    rows = np.empty((n_samples, len(grid)))
    resamples = 0
    for k in range(n_samples):
        while True:
            p = sample_point(unit, rng)
            x_n = p.x * x_factor
            y_n = p.y * y_factor
            T_list = [y_n] + [y_n + tau * scale for tau in grid]
            try:
                prof = ev.profile(SurfacePoint(x_n, 0.0), T_list)
            except (ConePointError, DomainError):
                resamples += 1
                if resamples > max_resamples:
                    raise RejectionOverflow(
                        f"{resamples} rejected starts for "
                        f"{n_samples} samples")
                continue
            rows[k] = np.asarray(prof[1:]) - prof[0]
            break
    rows[:, 0] = 0.0
    meta = {"s": float(s), "scale": scale, "L": L,
            "presentation": "flowed", "n_samples": int(n_samples),
            "resamples": int(resamples),
            "error_bound": float(ev.error_bound)}
    return EmpiricalProcess(tau_grid=tuple(grid), paths=rows, meta=meta)


def second_component_observable(zr, path=None, mix: float = 0.15):
    """A centered cell observable dominated by the second cocycle.

    Returns (f, phi2, ladder, path).  The observable integrates, per
    column crossing, to the second unstable direction plus `mix` times an
    in-plane contracted direction; its ergodic integrals then equal the
    second-cocycle paths up to a bounded remainder, which is the regime
    where the normalized integral law approaches the pure cocycle law.
    """
    if path is None:
        path = _path_reaching_tau(zr.iet, 20.0)
    h0 = np.array([float(h) for h in zr.heights])
    win = min(len(path), 160)
    v2 = unstable_vector_at_origin(path, h0, win)
    w2 = dual_unstable_covector_at_origin(path, h0, min(len(path), 80))
    plane = second_plane_at_origin(path, h0, win)
    w = plane[:, 0] - float(w2 @ plane[:, 0]) * v2
    w = w / np.linalg.norm(w)
    ladder = ReturnLadder(zr, path)
    f = CellFunction(tuple((v2 + mix * w) / h0))
    phi2 = build_phi_from_vector(zr, path, v2, ladder=ladder)
    return f, phi2, ladder, path


def limit_decay_report(zr, source=None, s_values=(2.0, 4.0, 6.0, 8.0),
                       tau_grid=None, n_samples: int = 2000, rng=None,
                       path=None, mix: float = 0.15,
                       max_resamples: int | None = None) -> dict:
    """Distance from the normalized integral law to its limit object.

    For each stretch time s the law of the normalized ergodic-integral
    process of `source` over arcs of duration e^s is compared with the
    pure second-cocycle process of the time-s flowed surface, presented
    through the chart correspondence as the cocycle on the matching arcs.
    Both sides are evaluated on common starting points (the paired-sample
    construction), so the Levy-Prohorov distances estimate the law
    distance without the independent-two-sample floor, which at this
    sample size would exceed the distances being measured.

    Every distance is recomputed on the midpoint-refined grid.  The
    refinement study reports changes relative to the largest distance in
    the sweep: once the decay has run its course the distances sit at the
    scale of the bounded remainder's oscillation, where a point-relative
    ratio no longer measures grid quality.
    """
    grid = _check_tau_grid(default_tau_grid() if tau_grid is None else
                           tau_grid)
    s_vals = [float(s) for s in s_values]
    if not s_vals or any(s < 0 for s in s_vals):
        raise DomainError("stretch times must be nonnegative")
    if n_samples < 100:
        raise DomainError("need at least 100 sample paths")
    rng = default_rng(0) if rng is None else rng
    if path is None:
        path = _path_reaching_tau(zr.iet, max(s_vals) + 7.0)
    if source is None:
        source, phi2, ladder, path = second_component_observable(
            zr, path=path, mix=mix)
    else:
        h0 = np.array([float(h) for h in zr.heights])
        ladder = ReturnLadder(zr, path)
        v2 = unstable_vector_at_origin(path, h0, min(len(path), 160))
        phi2 = build_phi_from_vector(zr, path, v2, ladder=ladder)
    _check_centered(zr, source)
    idx = component_index(zr, path, source)
    if idx != 2:
        raise DomainError("decay comparison needs a second-component "
                          f"observable, got index {idx}")
    ev_f = _ArcEvaluator(zr, source, ladder=ladder)
    ev_p = _ArcEvaluator(zr, phi2, ladder=ladder)
    garr = np.asarray(grid)
    fine = np.sort(np.concatenate([garr, (garr[:-1] + garr[1:]) / 2.0]))
    if max_resamples is None:
        max_resamples = 50 + n_samples // 10
    rows = []
    for s in s_vals:
        scale = math.exp(s)
        T_list = [tau * scale for tau in fine]
        rf = np.empty((n_samples, len(fine)))
        rp = np.empty((n_samples, len(fine)))
        resamples = 0
        k = 0
        while k < n_samples:
            p = sample_point(zr, rng)
            try:
                a = ev_f.profile(p, T_list)
                b = ev_p.profile(p, T_list)
            except (ConePointError, DomainError):
                resamples += 1
                if resamples > max_resamples:
                    raise RejectionOverflow(
                        f"{resamples} rejected starts for "
                        f"{n_samples} samples")
                continue
            rf[k] = a
            rp[k] = b
            k += 1
        rf[:, 0] = 0.0
        rp[:, 0] = 0.0
        d_coarse = lp_distance_grid(
            normalize_process(EmpiricalProcess(grid, rf[:, ::2], {"s": s})),
            normalize_process(EmpiricalProcess(grid, rp[:, ::2], {"s": s})))
        d_fine = lp_distance_grid(
            normalize_process(EmpiricalProcess(tuple(fine), rf, {"s": s})),
            normalize_process(EmpiricalProcess(tuple(fine), rp, {"s": s})))
        rows.append({"s": s, "distance": d_coarse,
                     "refined_distance": d_fine,
                     "resamples": int(resamples)})
    dists = [r["distance"] for r in rows]
    dmax = max(dists)
    for r in rows:
        r["refinement_change"] = (abs(r["refined_distance"] - r["distance"])
                                  / dmax if dmax > 0 else 0.0)
    inc = np.diff(dists)
    return {"component": idx,
            "s_values": s_vals,
            "distances": dists,
            "refined_distances": [r["refined_distance"] for r in rows],
            "refinement_changes": [r["refinement_change"] for r in rows],
            "max_refinement_change": max(r["refinement_change"]
                                         for r in rows),
            "decreasing_increments": int((inc < 0).sum()),
            "n_increments": int(len(inc)),
            "final_distance": dists[-1],
            "n_samples": int(n_samples),
            "rows": rows}


# ---------------------------------------------------------- atom diagnostics

def atom_scan(mu: EmpiricalDistribution, resolution: float) -> list:
    """Clusters of samples within the resolution, largest weight first."""
    if resolution <= 0:
        raise DomainError("resolution must be positive")
    pts = np.asarray(mu.samples)
    w = mu.weight_array()
    order = np.argsort(pts)
    clusters = []
    start = 0
    sorted_pts = pts[order]
    sorted_w = w[order]
    for i in range(1, len(sorted_pts) + 1):
        if i == len(sorted_pts) or \
                sorted_pts[i] - sorted_pts[i - 1] > resolution:
            mass = float(sorted_w[start:i].sum())
            loc = float((sorted_pts[start:i] * sorted_w[start:i]).sum()
                        / mass)
            clusters.append((loc, mass))
            start = i
    clusters.sort(key=lambda lw: -lw[1])
    return clusters


def atom_bound_check(mu: EmpiricalDistribution, resolution: float = 1e-9,
                     z: float = 3.0) -> dict:
    """Check the largest atom of a normalized law against the moment bound.

    An atom of weight beta at x0 in a mean-zero unit-variance law must
    satisfy x0^2 <= (1 - beta) / beta^2; beta is slackened by z binomial
    standard errors before testing.
    """
    if abs(mu.mean()) > 0.1 or abs(mu.var() - 1.0) > 0.1:
        raise DomainError("atom bound applies to normalized laws")
    clusters = atom_scan(mu, resolution)
    x0, beta = clusters[0]
    n = mu.n
    beta_lo = beta - z * math.sqrt(beta * (1.0 - beta) / n)
    if beta_lo <= 0:
        return {"ok": True, "location": x0, "weight": beta,
                "lhs": x0 ** 2, "rhs": math.inf}
    rhs = (1.0 - beta_lo) / beta_lo ** 2
    return {"ok": bool(x0 ** 2 <= rhs), "location": x0, "weight": beta,
            "lhs": x0 ** 2, "rhs": rhs}


def nonconvergence_probe(zr, source, s_list, n_samples: int = 500, rng=None,
                         path=None, low: float = 0.2,
                         high: float = 0.3) -> dict:
    """Scan stretch times for near-degenerate geometry and clumped laws.

    For each s the surface is flowed to time s (reporting the leading
    length and height there) and the normalized law of the duration-e^s
    arc functional is compared with the point mass at zero.  The
    oscillation flag is set when the distance dips to `low` somewhere
    while exceeding `high` elsewhere.
    """
    rng = default_rng(0) if rng is None else rng
    s_vals = [float(s) for s in s_list]
    if path is None:
        path = _path_reaching_tau(zr.iet, max(s_vals) + 6.0)
    reports = []
    for s in s_vals:
        fr = teichmuller_flow(zr, s)
        lam1 = float(fr.zr.iet.lengths[0]) / float(fr.zr.iet.total)
        h1 = float(fr.zr.heights[0])
        proc = sample_process(zr, source, s, (0.0, 1.0), n_samples, rng,
                              path=path)
        try:
            mu = normalize_process(proc).endpoint_distribution()
            dist = lp_distance(mu, delta_measure(0.0))
        except DegenerateVariance:
            dist = 0.0
        reports.append({"s": s, "lambda1": lam1, "h1": h1,
                        "lp_to_point_mass": dist,
                        "atom_mass_prediction":
                            max(0.0, 2.0 * lam1 - 1.0) * h1})
    dists = [r["lp_to_point_mass"] for r in reports]
    return {"reports": reports,
            "oscillation": bool(min(dists) <= low and max(dists) >= high),
            "low": low, "high": high}


# ------------------------------------------------------------- file formats

def process_to_csv(proc: EmpiricalProcess, filepath) -> None:
    """One row per sample path, one column per grid time (repr precision)."""
    with open(filepath, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([repr(t) for t in proc.tau_grid])
        for row in proc.paths:
            writer.writerow([repr(float(v)) for v in row])


def process_from_csv(filepath) -> EmpiricalProcess:
    with open(filepath, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        grid = tuple(float(t) for t in header)
        rows = [[float(v) for v in row] for row in reader if row]
    return EmpiricalProcess(grid, np.array(rows),
                            {"loaded_from": str(filepath)})
