"""Induction-matrix cocycles: products, Lyapunov spectra, splittings.

The acting matrix of one induction step on height-like vectors is the
transpose of the bookkeeping matrix; length-like vectors move by the inverse.
Products are kept in exact integer arithmetic, escalating from int64 to
Python big integers when entries grow too large.

Exponents are normalized by the renormalization clock (the cumulative log
contraction), so the top exponent of the length/height cocycle is 1.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

from .errors import (
    DomainError,
    NonConvergenceError,
    SingularForm,
    WindowTooSmall,
)
from .rauzy import (
    IetData,
    InductionStep,
    Permutation,
    RauzyMove,
    rauzy_step,
)

logger = logging.getLogger(__name__)

_INT64_GUARD = 2**55


@dataclass(frozen=True)
class CocyclePath:
    """A finite induction orbit: steps plus the running renormalization clock.

    `perms[i]` is the permutation before step i; `cumulative_tau[i]` the clock
    at that moment (starting at 0).
    """

    steps: tuple
    perms: tuple
    cumulative_tau: tuple
    start: IetData | None = None
    unit: str = "elementary"

    def __post_init__(self):
        if len(self.perms) != len(self.steps) + 1:
            raise DomainError("need one permutation per step boundary")
        if len(self.cumulative_tau) != len(self.steps) + 1:
            raise DomainError("clock must have one entry per step boundary")
        if any(b < a - 1e-15 for a, b in zip(self.cumulative_tau,
                                             self.cumulative_tau[1:])):
            raise DomainError("renormalization clock must be nondecreasing")

    def __len__(self) -> int:
        return len(self.steps)

    @property
    def m(self) -> int:
        return self.perms[0].m

    def acting_matrix(self, i: int) -> np.ndarray:
        """Transpose of step i's bookkeeping matrix (height dynamics)."""
        return self.steps[i].matrix.T

    def total_tau(self, n: int | None = None) -> float:
        n = len(self.steps) if n is None else n
        return float(self.cumulative_tau[n] - self.cumulative_tau[0])


def induction_path(iet: IetData, n_steps: int,
                   unit: str = "elementary") -> CocyclePath:
    """Iterate induction from a normalized exchange.

    unit="elementary" records every step; unit="zorich" groups maximal runs of
    equal move type into single aggregated steps (n_steps counts groups).
    """
    if unit not in ("elementary", "zorich"):
        raise DomainError(f"unknown path unit {unit!r}")
    steps: list[InductionStep] = []
    perms = [iet.perm]
    taus = [0.0]
    cur = iet
    if unit == "elementary":
        for _ in range(n_steps):
            step = rauzy_step(cur)
            steps.append(step)
            cur = step.next
            perms.append(cur.perm)
            taus.append(taus[-1] + step.tau)
        return CocyclePath(tuple(steps), tuple(perms), tuple(taus),
                           start=iet, unit=unit)
    # zorich grouping: emit one aggregated step per maximal equal-move run
    run_move = None
    run_matrix = None
    run_tau = 0.0
    while len(steps) < n_steps:
        step = rauzy_step(cur)
        if run_move is None:
            run_move, run_matrix, run_tau = step.move, step.matrix, step.tau
        elif step.move is run_move:
            run_matrix = run_matrix @ step.matrix
            run_tau += step.tau
        else:
            steps.append(InductionStep(move=run_move, matrix=run_matrix,
                                       tau=run_tau, next=cur))
            perms.append(cur.perm)
            taus.append(taus[-1] + run_tau)
            run_move, run_matrix, run_tau = step.move, step.matrix, step.tau
        cur = step.next
    return CocyclePath(tuple(steps), tuple(perms), tuple(taus),
                       start=iet, unit=unit)


def synthetic_path(matrices: Sequence[np.ndarray], perm: Permutation,
                   taus: Sequence[float] | None = None) -> CocyclePath:
    """Constant-permutation path from explicit step matrices (test oracle)."""
    n = len(matrices)
    taus = [1.0] * n if taus is None else list(taus)
    steps = tuple(
        InductionStep(move=RauzyMove.A, matrix=np.asarray(mat), tau=t)
        for mat, t in zip(matrices, taus))
    cum = [0.0]
    for t in taus:
        cum.append(cum[-1] + t)
    return CocyclePath(steps, tuple([perm] * (n + 1)), tuple(cum),
                       unit="synthetic")


def _escalate(mat: np.ndarray) -> np.ndarray:
    out = np.empty(mat.shape, dtype=object)
    for i in range(mat.shape[0]):
        for j in range(mat.shape[1]):
            out[i, j] = int(mat[i, j])
    return out


def _int_matmul(acc: np.ndarray, nxt: np.ndarray) -> np.ndarray:
    """Exact integer product with automatic big-integer escalation."""
    if acc.dtype == object or nxt.dtype == object:
        if acc.dtype != object:
            acc = _escalate(acc)
        if nxt.dtype != object:
            nxt = _escalate(nxt)
        return acc @ nxt
    bound = int(acc.shape[1]) * int(np.abs(acc).max(initial=0)) * \
        int(np.abs(nxt).max(initial=0))
    if bound > _INT64_GUARD:
        logger.info("integer cocycle product escalated to big integers")
        return _escalate(acc) @ _escalate(nxt)
    return acc @ nxt


def _integer_inverse(mat: np.ndarray) -> np.ndarray:
    """Exact inverse of a unimodular integer matrix via Fraction elimination."""
    from fractions import Fraction

    n = mat.shape[0]
    a = [[Fraction(int(mat[i, j])) for j in range(n)] for i in range(n)]
    inv = [[Fraction(int(i == j)) for j in range(n)] for i in range(n)]
    for col in range(n):
        piv = next(r for r in range(col, n) if a[r][col] != 0)
        a[col], a[piv] = a[piv], a[col]
        inv[col], inv[piv] = inv[piv], inv[col]
        fac = a[col][col]
        a[col] = [v / fac for v in a[col]]
        inv[col] = [v / fac for v in inv[col]]
        for r in range(n):
            if r != col and a[r][col] != 0:
                f = a[r][col]
                a[r] = [v - f * w for v, w in zip(a[r], a[col])]
                inv[r] = [v - f * w for v, w in zip(inv[r], inv[col])]
    out = np.empty((n, n), dtype=object)
    for i in range(n):
        for j in range(n):
            if inv[i][j].denominator != 1:
                raise DomainError("matrix is not unimodular")
            out[i, j] = int(inv[i][j])
    return out


def cocycle_product(path: CocyclePath, n: int,
                    variant: str = "forward") -> np.ndarray:
    """Ordered product of the first n step matrices.

    forward: M_0 M_1 .. M_{n-1} (carries level-n lengths to level 0);
    transpose: its transpose (acting cocycle on heights);
    inverse / inverse_transpose: exact integer inverses of those.
    """
    if not 0 <= n <= len(path):
        raise DomainError("product length exceeds path length")
    m = path.m
    acc = np.eye(m, dtype=np.int64)
    for i in range(n):
        acc = _int_matmul(acc, np.asarray(path.steps[i].matrix))
    if variant == "forward":
        return acc
    if variant == "transpose":
        return acc.T.copy()
    if variant in ("inverse", "inverse_transpose"):
        inv = _integer_inverse(acc)
        out = inv if variant == "inverse" else inv.T.copy()
        if np.abs(np.vectorize(int)(out)).max(initial=0) <= _INT64_GUARD:
            return out.astype(np.int64)
        return out
    raise DomainError(f"unknown product variant {variant!r}")


# ------------------------------------------------------------ symplectic data

@dataclass(frozen=True)
class SymplecticData:
    """Alternating pairing attached to a permutation."""

    L: np.ndarray
    H_basis: np.ndarray
    N_basis: np.ndarray
    genus: int

    @property
    def rank(self) -> int:
        return 2 * self.genus


def symplectic_data(perm: Permutation) -> SymplecticData:
    """Alternating matrix, its image/kernel bases, and the genus.

    L[i,j] for i<j is +1 when the exchange reverses the order of intervals
    i and j (images decrease) and 0 otherwise; antisymmetric below.
    """
    m = perm.m
    L = np.zeros((m, m), dtype=np.int64)
    for i in range(1, m + 1):
        for j in range(i + 1, m + 1):
            if perm(i) > perm(j):
                L[i - 1, j - 1] = 1
                L[j - 1, i - 1] = -1
    u, s, vt = np.linalg.svd(L.astype(float))
    rank = int((s > 1e-9 * max(1.0, s[0])).sum())
    if rank % 2:
        raise DomainError("alternating matrix with odd rank")
    H_basis = u[:, :rank]
    N_basis = vt[rank:].T
    H_basis.setflags(write=False)
    N_basis.setflags(write=False)
    L.setflags(write=False)
    return SymplecticData(L=L, H_basis=H_basis, N_basis=N_basis,
                          genus=rank // 2)


def dual_pairing(v: Sequence[float], w: Sequence[float], perm: Permutation,
                 form: str = "euclidean") -> float:
    """Euclidean pairing, or the alternating pairing <v, L^{-1} w>."""
    v = np.asarray(v, dtype=float)
    w = np.asarray(w, dtype=float)
    if form == "euclidean":
        return float(v @ w)
    if form != "symplectic":
        raise DomainError(f"unknown pairing form {form!r}")
    sd = symplectic_data(perm)
    x, res, rank, _ = np.linalg.lstsq(sd.L.astype(float), w, rcond=None)
    resid = np.linalg.norm(sd.L @ x - w)
    if resid > 1e-9 * max(1.0, float(np.linalg.norm(w))):
        raise SingularForm("second argument outside the image of L")
    return float(v @ x)


# --------------------------------------------------------- Lyapunov spectrum

@dataclass(frozen=True)
class OseledetsEstimate:
    """Exponent estimates plus the frames used to certify them."""

    exponents: tuple
    stderr: tuple
    subspaces: dict
    window: int
    diagnostics: dict
    teich_time: float
    n_steps: int


def _spectrum_from_path(path: CocyclePath, k: int, basis: np.ndarray,
                        n_blocks: int, threshold: float) -> tuple:
    n = len(path)
    m = path.m
    q, _ = np.linalg.qr(basis[:, :k])
    logs = np.zeros((n, k))
    for i in range(n):
        pushed = path.acting_matrix(i).astype(float) @ q
        q, r = np.linalg.qr(pushed)
        diag = np.abs(np.diag(r))
        if (diag == 0).any():
            raise NonConvergenceError("degenerate frame during QR sweep")
        logs[i] = np.log(diag)
    total_tau = path.total_tau()
    if total_tau <= 0:
        raise NonConvergenceError("zero renormalization time on path")
    exponents = logs.sum(axis=0) / total_tau
    # per-block estimates, weighted by block duration so the weighted mean
    # reproduces the global estimate (short blocks carry little information)
    edges = np.linspace(0, n, n_blocks + 1).astype(int)
    block_vals = []
    block_w = []
    for a, b in zip(edges, edges[1:]):
        if a == b:
            continue
        dt = path.cumulative_tau[b] - path.cumulative_tau[a]
        if dt <= 0:
            continue
        block_vals.append(logs[a:b].sum(axis=0) / dt)
        block_w.append(dt / total_tau)
    block_vals = np.array(block_vals)
    block_w = np.array(block_w)
    nb = len(block_vals)
    if nb < 2:
        raise NonConvergenceError("not enough blocks for an error estimate")
    dev = block_vals - exponents
    stderr = np.sqrt(nb / (nb - 1) *
                     (block_w[:, None] ** 2 * dev ** 2).sum(axis=0))
    if float(stderr[0]) > threshold:
        raise NonConvergenceError(
            f"top-exponent standard error {float(stderr[0]):.3g} above "
            f"threshold {threshold:.3g}")
    return exponents, stderr, q, block_vals


def lyapunov_spectrum(iet: IetData, n_steps: int, k: int,
                      rng: np.random.Generator | None = None,
                      unit: str = "zorich", n_blocks: int = 10,
                      stderr_threshold: float = 0.1,
                      path: CocyclePath | None = None) -> OseledetsEstimate:
    """Top-k exponents of the height cocycle restricted to the image of L.

    QR-renormalized frame pushed along an induction orbit; exponents are the
    accumulated log diagonals divided by the total renormalization time, so
    the top exponent is 1.  Standard errors come from consecutive orbit
    blocks.
    """
    if n_steps <= 0 and path is None:
        raise NonConvergenceError("need a positive number of steps")
    sd = symplectic_data(iet.perm)
    if k > sd.genus * 2:
        raise DomainError("requested more exponents than the pairing rank")
    if path is None:
        path = induction_path(iet, n_steps, unit=unit)
    if len(path) == 0:
        raise NonConvergenceError("need a positive number of steps")
    exponents, stderr, q_end, blocks = _spectrum_from_path(
        path, k, sd.H_basis, n_blocks, stderr_threshold)
    order = np.argsort(-exponents)
    exponents = exponents[order]
    stderr = stderr[order]
    return OseledetsEstimate(
        exponents=tuple(float(t) for t in exponents),
        stderr=tuple(float(s) for s in stderr),
        subspaces={"forward_flag_end": q_end},
        window=len(path),
        diagnostics={"block_exponents": blocks},
        teich_time=path.total_tau(),
        n_steps=len(path),
    )


def full_space_spectrum(iet: IetData, n_steps: int,
                        unit: str = "zorich") -> tuple:
    """All m exponents without the pairing restriction (diagnostic)."""
    path = induction_path(iet, n_steps, unit=unit)
    exponents, _, _, _ = _spectrum_from_path(
        path, iet.m, np.eye(iet.m), 10, math.inf)
    return tuple(sorted((float(t) for t in exponents), reverse=True))


# ------------------------------------------------------- Oseledets splitting

def subspace_intersection(u: np.ndarray, v: np.ndarray,
                          tol: float = 1e-6) -> np.ndarray:
    """Orthonormal basis of the intersection of two column spans."""
    qu, _ = np.linalg.qr(u)
    qv, _ = np.linalg.qr(v)
    w, s, _ = np.linalg.svd(qu.T @ qv)
    keep = s > 1 - tol
    return qu @ w[:, keep]


def principal_angle(u: np.ndarray, v: np.ndarray) -> float:
    """Largest principal angle between two column spans (radians)."""
    qu, _ = np.linalg.qr(np.atleast_2d(u.T).T)
    qv, _ = np.linalg.qr(np.atleast_2d(v.T).T)
    s = np.linalg.svd(qu.T @ qv, compute_uv=False)
    return float(math.acos(min(1.0, float(s.min()))))


def _push_frame(path: CocyclePath, frame: np.ndarray, start: int,
                stop: int) -> np.ndarray:
    q, _ = np.linalg.qr(frame)
    for i in range(start, stop):
        q, _ = np.linalg.qr(path.acting_matrix(i).astype(float) @ q)
    return q


def _pull_frame(path: CocyclePath, frame: np.ndarray, stop: int,
                start: int) -> np.ndarray:
    """Pull a frame at step index `stop` back to `start` via inverses."""
    q, _ = np.linalg.qr(frame)
    for i in range(stop - 1, start - 1, -1):
        inv = np.linalg.inv(path.acting_matrix(i).astype(float))
        q, _ = np.linalg.qr(inv @ q)
    return q


def _splitting_once(path: CocyclePath, anchor: int, window: int,
                    k_u: int, rng: np.random.Generator) -> dict:
    m = path.m
    sd = symplectic_data(path.perms[anchor])
    dim_h = 2 * sd.genus
    # forward flag from the past
    seed_f = symplectic_data(path.perms[anchor - window]).H_basis[:, :k_u]
    seed_f = seed_f + 1e-3 * rng.standard_normal(seed_f.shape)
    q_fwd = _push_frame(path, seed_f, anchor - window, anchor)
    # backward flag from the future (most contracted first)
    seed_b = symplectic_data(path.perms[anchor + window]).H_basis
    seed_b = seed_b + 1e-3 * rng.standard_normal(seed_b.shape)
    q_bwd = _pull_frame(path, seed_b, anchor + window, anchor)
    e_u = []
    for i in range(1, k_u + 1):
        # E_i sits in both the i-dim forward flag and the span of the
        # (dim_h - i + 1) most contracted backward directions
        cap = subspace_intersection(q_fwd[:, :i], q_bwd[:, :dim_h - i + 1],
                                    tol=1e-3)
        e_u.append(cap[:, :1] if cap.shape[1] >= 1 else q_fwd[:, i - 1:i])
    e_cs = q_bwd[:, :dim_h - k_u]
    return {"E_u": e_u, "E_cs": e_cs, "forward_flag": q_fwd,
            "backward_flag": q_bwd}


@dataclass(frozen=True)
class SubspaceSplitting:
    """Window-certified splitting at one path anchor."""

    anchor: int
    window: int
    k_u: int
    E_u: tuple
    E_cs: np.ndarray
    diagnostics: dict


def oseledets_splitting(path: CocyclePath, anchor_n: int, window_W: int,
                        k_u: int = 1, tol: float = 1e-3,
                        rng: np.random.Generator | None = None
                        ) -> SubspaceSplitting:
    """Two-sided splitting estimate with a window-halving certificate.

    Expanding directions come from pushing a generic frame forward over
    [anchor-W, anchor]; the contracted complement from pulling one back over
    [anchor, anchor+W].  The same estimate at W//2 must agree within `tol`
    (largest principal angle), otherwise WindowTooSmall.
    """
    if window_W < 2:
        raise DomainError("window must be at least 2")
    if anchor_n < window_W or anchor_n + window_W > len(path):
        raise DomainError("anchor does not admit the requested window")
    rng = np.random.default_rng(12345) if rng is None else rng
    full = _splitting_once(path, anchor_n, window_W, k_u, rng)
    half = _splitting_once(path, anchor_n, window_W // 2, k_u, rng)
    angles = {}
    for i, (a, b) in enumerate(zip(full["E_u"], half["E_u"]), start=1):
        angles[f"E_u{i}"] = principal_angle(a, b)
    angles["E_cs"] = principal_angle(full["E_cs"], half["E_cs"])
    worst = max(angles.values())
    if worst > tol:
        raise WindowTooSmall(
            f"subspace angle changed by {worst:.3g} when halving the window")
    return SubspaceSplitting(anchor=anchor_n, window=window_W, k_u=k_u,
                             E_u=tuple(full["E_u"]), E_cs=full["E_cs"],
                             diagnostics={"halving_angles": angles})


# ------------------------------------------- one-sided frames at the origin

def backward_flag_at_origin(path: CocyclePath, dim: int,
                            window: int) -> np.ndarray:
    """Columns 1..dim span the dim most-contracted directions at level 0."""
    if window > len(path):
        raise DomainError("window exceeds path length")
    sd = symplectic_data(path.perms[window])
    rng = np.random.default_rng(987654321)
    seed = sd.H_basis + 1e-3 * rng.standard_normal(sd.H_basis.shape)
    q = _pull_frame(path, seed, window, 0)
    return q[:, :dim]


def second_plane_at_origin(path: CocyclePath, h0: Sequence[float],
                           pull_window: int,
                           lam0: Sequence[float] | None = None) -> np.ndarray:
    """Plane of the second expanding and second contracting directions.

    Intersects the pulled complement of the top direction with the
    L-orthogonal of h0 and strips residual top-direction content exactly
    (the length covector annihilates every other Oseledets direction).
    The span is forward-equivariant; individual directions inside it are
    not determined by forward data alone.
    """
    perm0 = path.perms[0]
    sd = symplectic_data(perm0)
    if sd.N_basis.shape[1] != 0:
        raise DomainError("needs a permutation with full pairing rank")
    dim_h = 2 * sd.genus
    if dim_h < 4:
        raise DomainError("no second expanding direction in genus 1")
    h0 = np.asarray(h0, dtype=float)
    if lam0 is None:
        if path.start is None:
            raise DomainError("need the level-0 lengths to strip top content")
        lam0 = path.start.lengths
    lam = np.asarray([float(l) for l in lam0])
    top_mass = float(lam @ h0)
    b2 = backward_flag_at_origin(path, dim_h - 1,
                                 min(pull_window, len(path)))
    u = np.linalg.lstsq(sd.L.astype(float), h0, rcond=None)[0]
    coeff = u @ b2
    _, _, vt = np.linalg.svd(coeff.reshape(1, -1))
    plane = b2 @ vt[1:].T  # in-plane directions annihilating <., L^{-1}h0>
    plane = plane - np.outer(h0, lam @ plane) / top_mass
    plane, _ = np.linalg.qr(plane)
    return plane


def unstable_vector_at_origin(path: CocyclePath, h0: Sequence[float],
                              pull_window: int,
                              refine_steps: int | None = None,
                              lam0: Sequence[float] | None = None) -> np.ndarray:
    """Second expanding direction at level 0, certified two ways.

    Builds the plane of the second expanding and second contracting
    directions, then picks the most forward-expanded in-plane direction.
    By default the forward horizon extends until the in-plane growth gap
    certifies the pick (capped before double precision degenerates).  The
    result is a canonical representative modulo contracted directions; it
    is not equivariant under the renormalization, so comparisons across
    surfaces must transport one choice rather than re-estimate.
    """
    h0 = np.asarray(h0, dtype=float)
    if lam0 is None:
        if path.start is None:
            raise DomainError("need the level-0 lengths to strip top content")
        lam0 = path.start.lengths
    lam = np.asarray([float(l) for l in lam0])
    top_mass = float(lam @ h0)
    plane = second_plane_at_origin(path, h0, pull_window, lam0)
    adaptive = refine_steps is None
    if adaptive:
        taus = np.asarray(path.cumulative_tau)
        limit = int(np.searchsorted(taus, taus[0] + 30.0))
        limit = max(2, min(limit, len(path)))
    else:
        limit = min(refine_steps, len(path))
    q = plane
    r_prod = np.eye(plane.shape[1])
    for i in range(limit):
        q, r = np.linalg.qr(path.acting_matrix(i).astype(float) @ q)
        r_prod = r @ r_prod
        if adaptive and i % 16 == 15:
            sv = np.linalg.svd(r_prod, compute_uv=False)
            if sv[0] > 1e9 * sv[-1]:
                break
    _, _, vt = np.linalg.svd(r_prod)
    vec = plane @ vt[0]
    vec = vec - h0 * (lam @ vec) / top_mass
    return vec / np.linalg.norm(vec)
