"""Finitely-additive transverse measures built from the induction cocycle.

A measure here is determined by one vector of level-0 rectangle values; its
value on any orbit arc follows by finite additivity.  The return-ladder
evaluator consumes whole renormalization blocks (each block's value is one
entry of the pushed vector), giving an O(poly log N) alternative to the O(N)
direct sum that agrees with it exactly up to float associativity.

Built either from a vector in the estimated expanding space, or from a
centered function on the suspension via the telescoping correction series.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import (
    DomainError,
    InsufficientRange,
    NoOccurrence,
    NonConvergenceError,
    NotUnstable,
    SeriesDivergence,
)
from .rauzy import IetData, Permutation, RauzyMove, iet_apply
from .cocycle import (
    CocyclePath,
    backward_flag_at_origin,
    second_plane_at_origin,
    symplectic_data,
    unstable_vector_at_origin,
)
from .zippered import (
    SurfacePoint,
    ZipperedRectangle,
    vertical_flow,
)


@dataclass(frozen=True)
class CellFunction:
    """Function on the suspension that is constant on each level-0 rectangle."""

    values: tuple

    def nu_integral(self, zr: ZipperedRectangle) -> float:
        hts = zr.heights
        return float(sum(v * float(l) * float(h) for v, l, h in
                         zip(self.values, zr.iet.lengths, hts)))

    def crossing_integral(self, zr: ZipperedRectangle, rect_index: int,
                          x: float) -> float:
        return float(self.values[rect_index] * float(zr.heights[rect_index]))

    def level0_values(self, zr: ZipperedRectangle):
        return [float(v * float(h)) for v, h in zip(self.values, zr.heights)]

    def value(self, zr: ZipperedRectangle, x: float, y: float) -> float:
        return float(self.values[zr.iet.interval_index(x)])


def centered_cell_function(zr: ZipperedRectangle, rect_index: int) -> CellFunction:
    """Indicator of one rectangle minus the constant that centers it."""
    hts = zr.heights
    mass = float(zr.iet.lengths[rect_index]) * float(hts[rect_index])
    c = mass / float(zr.area)
    vals = [-c] * zr.m
    vals[rect_index] += 1.0
    return CellFunction(tuple(vals))


# --------------------------------------------------------------- SB markers

@dataclass(frozen=True)
class SbSubsequence:
    """Positions along a path where a fixed positive block recurs."""

    block_Q: np.ndarray
    word: tuple
    indices: tuple
    coarse_matrices: tuple
    balance_constant: float
    diagnostics: dict


def extract_sb(path: CocyclePath, q_spec) -> SbSubsequence:
    """Cut a path into blocks with entrywise-positive coarse matrices.

    With an integer spec, cut greedily: each block runs at least that many
    steps and extends until its matrix product is entrywise positive.  With
    an explicit move word, cut at the non-overlapping occurrences of that
    word (same starting permutation each time, so every occurrence carries
    the same positive matrix); each coarse block then brackets exactly one
    occurrence.
    """
    moves = tuple(s.move for s in path.steps)

    def product_over(a, b):
        mat = np.eye(path.m, dtype=object)
        for i in range(a, b):
            mat = mat @ np.asarray(path.steps[i].matrix, dtype=object)
        return mat

    if isinstance(q_spec, int):
        if not 0 < q_spec <= len(path):
            raise DomainError("marker length outside the path")
        w = q_spec
        cuts = [0]
        while True:
            start = cuts[-1]
            n = start + w
            if n > len(path):
                break
            mat = product_over(start, n)
            while not (mat > 0).all() and n < len(path):
                mat = mat @ np.asarray(path.steps[n].matrix, dtype=object)
                n += 1
            if not (mat > 0).all():
                break
            cuts.append(n)
        if len(cuts) - 1 < 3:
            raise NoOccurrence(
                f"only {len(cuts) - 1} positive blocks; lengthen the path")
        indices = tuple(cuts)
        word = moves[:cuts[1]]
        block = product_over(0, cuts[1])
    else:
        word = tuple(RauzyMove(w) if isinstance(w, str) else w for w in q_spec)
        w = len(word)
        first = None
        for n in range(len(path) - w + 1):
            if moves[n:n + w] == word:
                first = n
                break
        if first is None:
            raise NoOccurrence("marker block does not occur on this path")
        start_perm = path.perms[first]
        block = product_over(first, first + w)
        if not (block > 0).all():
            raise DomainError("marker block is not entrywise positive")
        occurrences = []
        n = 0
        while n <= len(path) - w:
            if path.perms[n] == start_perm and moves[n:n + w] == word:
                occurrences.append(n)
                n += w  # non-overlapping
            else:
                n += 1
        if len(occurrences) < 3:
            raise NoOccurrence(
                f"only {len(occurrences)} marker occurrences; lengthen the path")
        indices = [0] + [q + w for q in occurrences if q + w <= len(path)]
        indices = tuple(dict.fromkeys(indices))  # drop a duplicate leading 0

    coarse = [product_over(a, b) for a, b in zip(indices, indices[1:])]
    ratios = [float(m.max()) / float(m.min()) for m in coarse]
    entry_sums = [float(np.asarray(m, dtype=float).sum()) for m in coarse]
    gaps = [b - a for a, b in zip(indices, indices[1:])]
    return SbSubsequence(
        block_Q=block,
        word=word,
        indices=indices,
        coarse_matrices=tuple(coarse),
        balance_constant=float(max(ratios)),
        diagnostics={"gaps": gaps, "coarse_entry_sums": entry_sums,
                     "n_occurrences": len(indices) - 1},
    )


# ------------------------------------------------------------ return ladder

def _substitution(perm: Permutation, move: RauzyMove) -> tuple:
    """Level-(n+1) block i expands to this word of level-n blocks (1-based)."""
    m = perm.m
    p = perm.inverse(m)
    if move is RauzyMove.A:
        out = []
        for j in range(1, m + 1):
            if j <= p:
                out.append((j,))
            elif j == p + 1:
                out.append((p, m))
            else:
                out.append((j - 1,))
        return tuple(out)
    return tuple((j,) if j != p else (p, m) for j in range(1, m + 1))


@dataclass
class _LevelData:
    iet: IetData
    perm: Permutation
    word: tuple  # substitution from this level to the previous one
    q: np.ndarray  # exact return times (level-0 steps per block)
    stats: dict  # per functional id: (totals, prefix_mins, prefix_maxes)


class ReturnLadder:
    """Per-level block data for fast finitely-additive evaluation.

    Level n of the ladder is the n-times renormalized exchange with its
    physical (unnormalized) lengths; each level-n block decomposes into
    level-(n-1) blocks by the recorded induction move.
    """

    def __init__(self, zr: ZipperedRectangle, path: CocyclePath,
                 n_levels: int | None = None, q_cap: int = 10**9):
        if path.unit != "elementary":
            raise DomainError("return ladder needs an elementary path")
        if path.start is not None and path.start.perm != zr.perm:
            raise DomainError("path does not start at the surface's exchange")
        if not zr.iet.is_normalized():
            raise DomainError("ladder base exchange must have unit total")
        self.zr = zr
        self.path = path
        n_levels = len(path) if n_levels is None else min(n_levels, len(path))
        self.levels: list[_LevelData] = []
        perm = zr.perm
        q = np.ones(zr.m, dtype=np.int64)
        self.levels.append(_LevelData(
            iet=zr.iet, perm=perm, word=(), q=q, stats={}))
        for n in range(n_levels):
            step = path.steps[n]
            word = _substitution(perm, step.move)
            perm = step.next.perm
            q = np.array([sum(q[w - 1] for w in letters) for letters in word],
                         dtype=np.int64)
            # physical level lengths: the path's normalized lengths, scaled
            # by the surviving total (consistent with the recorded moves)
            scale = math.exp(-path.total_tau(n + 1))
            lengths = tuple(float(l) * scale for l in step.next.lengths)
            self.levels.append(_LevelData(
                iet=IetData(lengths, perm), perm=perm, word=word, q=q,
                stats={}))
            if int(q.min()) > q_cap:
                break

    @property
    def depth(self) -> int:
        return len(self.levels) - 1

    def advance(self, x: float, n_returns: int) -> float:
        """Image of x under that many base returns (greedy block walk)."""
        steps = int(n_returns)
        while steps > 0:
            advanced = False
            for lev in reversed(self.levels):
                if x < float(lev.iet.total) and \
                        int(lev.q[lev.iet.interval_index(x)]) <= steps:
                    steps -= int(lev.q[lev.iet.interval_index(x)])
                    x = float(iet_apply(lev.iet, x))
                    advanced = True
                    break
            if not advanced:
                raise NonConvergenceError("failed to advance base point")
        return x

    def return_times(self, n: int) -> np.ndarray:
        return self.levels[n].q

    def register(self, key: str, values: Sequence) -> None:
        """Attach a level-0 value vector and fold its block statistics up."""
        vals = list(values)
        totals = vals
        mins = [min(0, v) for v in vals]
        maxes = [max(0, v) for v in vals]
        self.levels[0].stats[key] = (list(totals), list(mins), list(maxes))
        for n in range(1, len(self.levels)):
            prev_t, prev_mn, prev_mx = self.levels[n - 1].stats[key]
            t_out, mn_out, mx_out = [], [], []
            for letters in self.levels[n].word:
                run = 0
                mn = 0
                mx = 0
                for w in letters:
                    mn = min(mn, run + prev_mn[w - 1])
                    mx = max(mx, run + prev_mx[w - 1])
                    run = run + prev_t[w - 1]
                t_out.append(run)
                mn_out.append(mn)
                mx_out.append(mx)
            self.levels[n].stats[key] = (t_out, mn_out, mx_out)

    def block_values(self, key: str, n: int) -> list:
        return self.levels[n].stats[key][0]

    def evaluate(self, key: str, x: float, n_returns: int,
                 with_extrema: bool = False):
        """Sum the registered values over the first n_returns base returns.

        Consumes the deepest renormalization block available at each stage;
        exact (same additions as the direct sum, reassociated).
        """
        if n_returns < 0:
            raise DomainError("negative return count")
        if not 0 <= x < float(self.levels[0].iet.total):
            raise DomainError("base point outside the exchanged interval")
        total = 0
        mn = 0
        mx = 0
        remaining = int(n_returns)
        while remaining > 0:
            consumed = False
            for n in range(len(self.levels) - 1, -1, -1):
                lev = self.levels[n]
                if x >= float(lev.iet.total):
                    continue
                i = lev.iet.interval_index(x)
                if int(lev.q[i]) > remaining:
                    continue
                t, lo, hi = lev.stats[key]
                mn = min(mn, total + lo[i])
                mx = max(mx, total + hi[i])
                total = total + t[i]
                remaining -= int(lev.q[i])
                x = float(iet_apply(lev.iet, x))
                consumed = True
                break
            if not consumed:  # cannot happen: level 0 always accepts
                raise NonConvergenceError("ladder failed to consume a step")
        if with_extrema:
            return total, mn, mx
        return total


# ------------------------------------------------------- equivariant storage

@dataclass(frozen=True)
class EquivariantSequence:
    """Forward-pushed vector family, stored as unit vectors plus log-norms."""

    base: np.ndarray
    units: tuple
    log_norms: tuple

    def vector(self, n: int):
        return self.units[n], self.log_norms[n]

    def dense(self, n: int) -> np.ndarray:
        return self.units[n] * math.exp(self.log_norms[n])

    def __len__(self) -> int:
        return len(self.units)


def _push_sequence(path: CocyclePath, v0: np.ndarray,
                   n_levels: int) -> EquivariantSequence:
    v = np.asarray(v0, dtype=float)
    norm = float(np.linalg.norm(v))
    if norm == 0:
        zero = np.zeros_like(v)
        return EquivariantSequence(base=zero,
                                   units=(zero,) * (n_levels + 1),
                                   log_norms=(0.0,) * (n_levels + 1))
    units = [v / norm]
    lognorms = [math.log(norm)]
    u = v / norm
    ln = lognorms[0]
    for n in range(n_levels):
        u = path.acting_matrix(n).astype(float) @ u
        s = float(np.linalg.norm(u))
        u = u / s
        ln += math.log(s)
        units.append(u)
        lognorms.append(ln)
    return EquivariantSequence(base=np.asarray(v0, dtype=float),
                               units=tuple(units), log_norms=tuple(lognorms))


def _pull_sequence(path: CocyclePath, w0: np.ndarray,
                   n_levels: int) -> EquivariantSequence:
    """Reverse-equivariant family: level n carries the inverse-pushed vector."""
    w = np.asarray(w0, dtype=float)
    norm = float(np.linalg.norm(w))
    if norm == 0:
        raise DomainError("zero vector has no direction to pull")
    units = [w / norm]
    lognorms = [math.log(norm)]
    u = w / norm
    ln = lognorms[0]
    for n in range(n_levels):
        inv = np.linalg.inv(np.asarray(path.steps[n].matrix, dtype=float))
        u = inv @ u
        s = float(np.linalg.norm(u))
        u = u / s
        ln += math.log(s)
        units.append(u)
        lognorms.append(ln)
    return EquivariantSequence(base=np.asarray(w0, dtype=float),
                               units=tuple(units), log_norms=tuple(lognorms))


@dataclass(frozen=True)
class HoelderCocycle:
    """A finitely-additive measure given by level-0 rectangle values."""

    source: str
    zr: ZipperedRectangle
    ladder: ReturnLadder
    key: str
    base_values: tuple
    eq_seq: EquivariantSequence
    exponent_tag: dict
    endpoint_error_bound: float
    diagnostics: dict

    def to_json_dict(self) -> dict:
        return {
            "source": self.source,
            "base_values": [float(v) for v in self.base_values],
            "log_norms": [float(v) for v in self.eq_seq.log_norms],
            "exponent_tag": {k: (None if v is None else float(v))
                             for k, v in self.exponent_tag.items()},
            "endpoint_error_bound": float(self.endpoint_error_bound),
            "diagnostics": {k: v for k, v in self.diagnostics.items()
                            if isinstance(v, (int, float, str))},
        }


@dataclass(frozen=True)
class DualCocycle:
    """Reverse-equivariant family pairing invariantly with forward ones."""

    source: str
    eq_seq: EquivariantSequence


def markov_heights(path: CocyclePath, n: int,
                   h0: Sequence[float]) -> np.ndarray:
    """Heights of the level-n renormalization rectangles."""
    if not 0 <= n <= len(path):
        raise DomainError("level outside the path")
    h = np.asarray(h0, dtype=float)
    for i in range(n):
        h = path.acting_matrix(i).astype(float) @ h
    return h


def unstable_basis_at_origin(path: CocyclePath, h0: Sequence[float],
                             pull_window: int = 80,
                             refine_steps: int | None = None) -> np.ndarray:
    """Columns spanning the estimated expanding space at level 0."""
    h0 = np.asarray(h0, dtype=float)
    sd = symplectic_data(path.perms[0])
    cols = [h0 / np.linalg.norm(h0)]
    if sd.genus >= 2:
        cols.append(unstable_vector_at_origin(path, h0, pull_window,
                                              refine_steps))
    return np.column_stack(cols)


def dual_unstable_covector_at_origin(path: CocyclePath, h0: Sequence[float],
                                     pull_window: int = 80) -> np.ndarray:
    """Covector isolating the second-exponent coefficient at level 0.

    Orthogonal to the top direction and to the contracted complement,
    normalized against the second expanding direction.
    """
    h0 = np.asarray(h0, dtype=float)
    sd = symplectic_data(path.perms[0])
    if sd.genus < 2:
        raise DomainError("no second expanding direction in genus 1")
    dim_h = 2 * sd.genus
    ccs = backward_flag_at_origin(path, dim_h - 2,
                                  min(pull_window, len(path)))
    span = np.column_stack([h0 / np.linalg.norm(h0), ccs])
    u, s, vt = np.linalg.svd(span, full_matrices=True)
    w = u[:, span.shape[1]:]
    if w.shape[1] != 1:
        raise DomainError("covector is not one-dimensional")
    w = w[:, 0]
    v2 = unstable_vector_at_origin(path, h0, pull_window)
    scale = float(w @ v2)
    if abs(scale) < 1e-12:
        raise NotUnstable("covector does not see the second direction")
    return w / scale


_KEY_COUNTER = [0]


def _fresh_key(prefix: str) -> str:
    _KEY_COUNTER[0] += 1
    return f"{prefix}-{_KEY_COUNTER[0]}"


def build_phi_from_vector(zr: ZipperedRectangle, path: CocyclePath,
                          v: Sequence, ladder: ReturnLadder | None = None,
                          angle_tol: float = 1e-3,
                          exponent_tag: dict | None = None,
                          pull_window: int = 80) -> HoelderCocycle:
    """Finitely-additive measure with the given expanding level-0 values."""
    varr = np.asarray([float(x) for x in v], dtype=float)
    norm = float(np.linalg.norm(varr))
    if norm == 0:
        raise NotUnstable("zero vector")
    h0 = np.asarray([float(h) for h in zr.heights])
    # accept anything in the forward-equivariant span of the top direction
    # and the second plane: transported vectors then pass exactly, while the
    # most contracted directions stay rejected
    cols = [h0 / np.linalg.norm(h0)]
    if symplectic_data(path.perms[0]).genus >= 2:
        cols.append(second_plane_at_origin(path, h0,
                                           min(pull_window, len(path))))
    basis = np.column_stack(cols)
    coeffs, *_ = np.linalg.lstsq(basis, varr, rcond=None)
    resid = float(np.linalg.norm(basis @ coeffs - varr))
    if resid > angle_tol * norm:
        raise NotUnstable(
            f"vector leaves the estimated expanding space "
            f"(relative residual {resid / norm:.3g})")
    ladder = ReturnLadder(zr, path) if ladder is None else ladder
    key = _fresh_key("vec")
    ladder.register(key, list(v))
    eq = _push_sequence(path, varr, min(len(path), 400))
    if exponent_tag is None:
        exponent_tag = {"top": None, "lower": None}
    return HoelderCocycle(
        source="pure_oseledets",
        zr=zr, ladder=ladder, key=key,
        base_values=tuple(v),
        eq_seq=eq,
        exponent_tag=exponent_tag,
        endpoint_error_bound=float(np.abs(varr).max()),
        diagnostics={"unstable_residual": resid / norm,
                     "unstable_coeffs": coeffs.tolist()},
    )


def _arc_integral_vector(zr: ZipperedRectangle, f, ladder: ReturnLadder,
                         n: int) -> np.ndarray:
    """Integrals of f over the level-n vertical blocks (one per rectangle)."""
    level0 = ladder.levels[0].iet
    lev = ladder.levels[n].iet
    vals = f.level0_values(zr)
    if vals is not None:
        # crossing integrals do not depend on the abscissa: push exactly
        v = np.asarray(vals, dtype=float)
        for i in range(n):
            v = ladder.path.acting_matrix(i).astype(float) @ v
        return v
    out = np.zeros(zr.m)
    for i in range(lev.m):
        left = float(lev.breakpoints[i - 1]) if i > 0 else 0.0
        x = left + 0.5 * float(lev.lengths[i])
        acc = 0.0
        for _ in range(int(ladder.levels[n].q[i])):
            j = level0.interval_index(x)
            acc += f.crossing_integral(zr, j, x)
            x = float(iet_apply(level0, x))
        out[i] = acc
    return out


def build_phi_f(zr: ZipperedRectangle, path: CocyclePath, f, depth: int,
                ladder: ReturnLadder | None = None,
                pull_window: int = 80,
                exponents: tuple | None = None,
                tail_tol: float = 1e-12) -> HoelderCocycle:
    """Expanding part of a centered function, via the correction series.

    Integrates f over the renormalization blocks level by level, projects
    each equivariance defect onto the estimated expanding space along the
    contracted complement, and pulls the corrections back to level 0.
    """
    mean = f.nu_integral(zr) / float(zr.area)
    if abs(mean) > 1e-9:
        raise DomainError("function must be centered against the area measure")
    ladder = ReturnLadder(zr, path) if ladder is None else ladder
    if depth > ladder.depth:
        raise DomainError("depth exceeds the available ladder")
    h0 = np.asarray([float(h) for h in zr.heights])
    basis_u0 = unstable_basis_at_origin(path, h0, pull_window)
    sd = symplectic_data(path.perms[0])
    dim_h = 2 * sd.genus
    k_u = basis_u0.shape[1]

    arcs = [_arc_integral_vector(zr, f, ladder, n) for n in range(depth + 1)]

    def project_u(n: int, u: np.ndarray) -> np.ndarray:
        # expanding frame at level n = pushed level-0 frame (equivariant);
        # contracted complement pulled from the future, plus any degenerate
        # directions of the pairing form at that level
        frame = basis_u0.copy()
        for i in range(n):
            frame = path.acting_matrix(i).astype(float) @ frame
            frame /= np.linalg.norm(frame, axis=0, keepdims=True)
        win = min(pull_window, len(path) - n)
        rest = backward_flag_at_origin(
            CocyclePath(path.steps[n:], path.perms[n:],
                        path.cumulative_tau[n:], unit=path.unit),
            dim_h - k_u, win)
        blocks = [frame, rest]
        sd_n = symplectic_data(path.perms[n])
        if sd_n.N_basis.shape[1] > 0:
            blocks.append(sd_n.N_basis)
        full = np.column_stack(blocks)
        coeff = np.linalg.solve(full, u) if full.shape[0] == full.shape[1] \
            else np.linalg.lstsq(full, u, rcond=None)[0]
        return frame @ coeff[:k_u]

    v_plus = project_u(0, arcs[0])
    terms = [float(np.linalg.norm(v_plus))]
    scale = max(float(np.abs(arcs[0]).max()), 1e-300)

    def settled():
        """Tail estimate if the correction terms certify decay, else None."""
        if terms[-1] <= 1e-10 * max(terms):
            return terms[-1]  # noise floor
        if len(terms) >= 4:
            t1, t2, t3 = terms[-3:]
            if t1 > 0 and t3 < t2 < t1 and (t3 / t1) ** 0.5 < 0.95:
                r = (t3 / t1) ** 0.5
                return t3 * r / (1 - r)
        return None

    tail = 0.0
    converged = depth == 0
    for n in range(1, depth + 1):
        u_n = arcs[n] - path.acting_matrix(n - 1).astype(float) @ arcs[n - 1]
        if float(np.abs(u_n).max()) <= 1e-12 * scale:
            terms.append(0.0)
            converged = True
            break
        u_plus = project_u(n, u_n)
        # pull the correction back to level 0 through the inverse steps
        w = u_plus
        for i in range(n - 1, -1, -1):
            w = np.linalg.solve(path.acting_matrix(i).astype(float), w)
        v_plus = v_plus + w
        terms.append(float(np.linalg.norm(w)))
        est = settled()
        if est is not None:
            tail = est
            converged = True
            break
    if not converged:
        raise SeriesDivergence(
            f"correction terms not decaying by the requested depth: "
            f"last terms {terms[-3:]}")
    # a centered function has no top-exponent component; the length covector
    # annihilates every other direction, so the strip is exact
    lam0 = np.asarray([float(l) for l in zr.iet.lengths])
    v_plus = v_plus - h0 * float(lam0 @ v_plus) / float(lam0 @ h0)
    key = _fresh_key("fn")
    ladder.register(key, list(v_plus))
    eq = _push_sequence(path, v_plus, min(len(path), 400))
    coeffs, *_ = np.linalg.lstsq(basis_u0, v_plus, rcond=None)
    tag: dict = {"top": None, "lower": None}
    if exponents is not None and len(coeffs) >= 1:
        present = [i for i, c in enumerate(coeffs)
                   if abs(c) > 1e-8 * max(1e-300, np.abs(coeffs).max())]
        if present:
            tag["top"] = float(exponents[min(present)])
            tag["lower"] = float(exponents[max(present)])
    return HoelderCocycle(
        source="from_function",
        zr=zr, ladder=ladder, key=key,
        base_values=tuple(float(x) for x in v_plus),
        eq_seq=eq,
        exponent_tag=tag,
        endpoint_error_bound=float(np.abs(v_plus).max()),
        diagnostics={"series_terms": terms, "tail_estimate": tail,
                     "unstable_coeffs": coeffs.tolist(),
                     "n_terms": len(terms)},
    )


def dual_from_vector(path: CocyclePath, w: Sequence[float],
                     source: str = "custom",
                     n_levels: int | None = None) -> DualCocycle:
    n_levels = min(len(path), 400) if n_levels is None else n_levels
    return DualCocycle(source=source,
                       eq_seq=_pull_sequence(path, np.asarray(w, float),
                                             n_levels))


# ------------------------------------------------------------- evaluation

def evaluate_on_returns(phi: HoelderCocycle, x: float, n_returns: int,
                        mode: str = "fast", with_extrema: bool = False):
    """Value over the arc from (x,0) through n_returns base returns."""
    if n_returns == 0:
        return (0.0, 0.0, 0.0) if with_extrema else 0.0
    if mode == "fast":
        return phi.ladder.evaluate(phi.key, x, n_returns,
                                   with_extrema=with_extrema)
    if mode != "direct":
        raise DomainError(f"unknown evaluation mode {mode!r}")
    iet = phi.ladder.levels[0].iet
    vals = phi.ladder.levels[0].stats[phi.key][0]
    total = 0
    mn = 0
    mx = 0
    for _ in range(int(n_returns)):
        total = total + vals[iet.interval_index(x)]
        mn = min(mn, total)
        mx = max(mx, total)
        x = float(iet_apply(iet, x))
    if with_extrema:
        return total, mn, mx
    return total


def partial_sums_on_returns(phi: HoelderCocycle, x: float,
                            checkpoints: Sequence[int]) -> list:
    """Values at several return counts (must be nondecreasing)."""
    out = []
    prev_n = 0
    acc = 0.0
    cur_x = x
    for n in checkpoints:
        if n < prev_n:
            raise DomainError("checkpoints must be nondecreasing")
        acc += phi.ladder.evaluate(phi.key, cur_x, n - prev_n)
        cur_x = phi.ladder.advance(cur_x, n - prev_n)
        prev_n = n
        out.append(acc)
    return out


def evaluate_on_flow_arc(phi: HoelderCocycle, p: SurfacePoint, T: float):
    """Value over a vertical arc of duration T, plus an interpolation bound.

    Full crossings are exact; the two possible partial crossings are valued
    by their height fraction, each contributing at most max|base value| to
    the reported bound.
    """
    if T < 0:
        raise DomainError("flow arcs run forward; use the inverse exchange")
    if T == 0:
        return 0.0, 0.0
    zr = phi.zr
    hts = [float(h) for h in zr.heights]
    vals = phi.base_values
    endpoint, crossings = vertical_flow(zr, p, T)
    value = 0.0
    n_partials = 0
    for k, c in enumerate(crossings):
        i = c.interval_index - 1
        if k == 0 and p.y > 0:
            value += vals[i] * (hts[i] - p.y) / hts[i]
            n_partials += 1
        else:
            value += vals[i]
    if endpoint.y > 0:
        if crossings:
            i = zr.iet.interval_index(endpoint.x)
            value += vals[i] * endpoint.y / hts[i]
            n_partials += 1
        else:
            # the whole arc sits inside one rectangle
            i = zr.iet.interval_index(p.x)
            value += vals[i] * T / hts[i]
            n_partials += 1
    return value, n_partials * phi.endpoint_error_bound


def measure_integral(zr: ZipperedRectangle, f, dual: DualCocycle,
                     level: int, ladder: ReturnLadder,
                     n_diagnostic: int = 3):
    """Pair arc integrals of f at one level with the dual vector there."""
    if level >= len(dual.eq_seq):
        raise DomainError("dual sequence too short for this level")

    def value_at(n):
        varc = _arc_integral_vector(zr, f, ladder, n)
        unit, ln = dual.eq_seq.vector(n)
        return float(varc @ unit) * math.exp(ln)

    val = value_at(level)
    diag = [value_at(k) for k in
            range(max(0, level - n_diagnostic), level)] + [val]
    return val, {"levels": diag}


# -------------------------------------------------------- Hölder exponents

def holder_exponents(phi: HoelderCocycle, x: float, T_grid: Sequence[float],
                     extra_points: Sequence[float] = ()):
    """Scaling exponents of the measure along one orbit.

    Top: regression of the running supremum of |value| over return counts
    against log time.  Lower: regression of log block values against log
    block return times over the first ladder levels.
    """
    grid = sorted(float(t) for t in T_grid)
    if len(grid) < 3 or grid[0] <= 0:
        raise InsufficientRange("need at least three positive grid points")
    if math.log10(grid[-1] / grid[0]) < 3 - 1e-9:
        raise InsufficientRange("grid must span at least three decades")
    points = [x] + list(extra_points)
    slopes = []
    for x0 in points:
        xs, ys = [], []
        run = 0.0
        for T in grid:
            n = int(round(T))
            _, mn, mx = evaluate_on_returns(phi, x0, n, with_extrema=True)
            run = max(run, abs(mn), abs(mx))
            if run > 0:
                xs.append(math.log(n))
                ys.append(math.log(run))
        if len(xs) >= 3:
            slope = np.polyfit(xs, ys, 1)[0]
            slopes.append(float(slope))
    if not slopes:
        raise InsufficientRange("no usable supremum values on the grid")
    top = float(np.mean(slopes))
    top_se = float(np.std(slopes, ddof=1) / math.sqrt(len(slopes))) \
        if len(slopes) > 1 else float("nan")

    # small-scale estimate from block values across the first levels
    ladder = phi.ladder
    xs, ys = [], []
    for n in range(1, ladder.depth + 1):
        t = ladder.levels[n].stats[phi.key][0]
        q = ladder.levels[n].q
        biggest = max(abs(v) for v in t)
        if biggest > 0 and float(q.max()) <= grid[-1]:
            xs.append(math.log(float(q.max())))
            ys.append(math.log(biggest))
    if len(xs) < 3:
        raise InsufficientRange("too few ladder levels inside the grid")
    lower = float(np.polyfit(xs, ys, 1)[0])
    resid = np.polyval(np.polyfit(xs, ys, 1), xs) - np.array(ys)
    lower_se = float(np.sqrt(resid @ resid / max(1, len(xs) - 2))
                     / math.sqrt(len(xs)))
    return {"top": top, "top_stderr": top_se,
            "lower": lower, "lower_stderr": lower_se,
            "n_points": len(points)}
