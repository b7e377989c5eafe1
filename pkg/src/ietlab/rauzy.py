"""Interval exchange maps, Rauzy classes, and the Rauzy-Veech induction step.

The induction renormalizes an interval exchange by first return to a shorter
interval.  Each step is one of two combinatorial moves (`a` when the last
image interval wins, `b` when the last domain interval wins), bookkept by a
nonnegative unimodular matrix.  A tie between the two competing lengths is a
measure-zero degeneracy and raises :class:`BoundaryError` instead of being
tie-broken.

Lengths may be floats or :class:`fractions.Fraction`; the exact-rational mode
makes short-orbit computations usable as brute-force oracles.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from functools import cached_property
from typing import Callable, Sequence, Union

import numpy as np

from .errors import BoundaryError, DomainError

Scalar = Union[float, Fraction]


class RauzyMove(Enum):
    A = "a"
    B = "b"


class _BoundarySentinel:
    """Marker returned by :func:`rauzy_type` on the tie set."""

    __slots__ = ()

    def __repr__(self) -> str:
        return "Boundary"


BOUNDARY = _BoundarySentinel()


@dataclass(frozen=True)
class Permutation:
    """A permutation of {1..m} stored as its image sequence pi(1..m).

    Irreducibility is required: pi{1..k} = {1..k} may hold only for k = m.
    """

    images: tuple[int, ...]

    def __post_init__(self):
        images = tuple(int(i) for i in self.images)
        object.__setattr__(self, "images", images)
        m = len(images)
        if m == 0:
            raise ValueError("empty permutation")
        if sorted(images) != list(range(1, m + 1)):
            raise ValueError(f"not a permutation of 1..{m}: {images!r}")
        top = 0
        for k, img in enumerate(images[:-1], start=1):
            top = max(top, img)
            if top == k:
                raise ValueError(f"reducible permutation: {images!r}")

    @property
    def m(self) -> int:
        return len(self.images)

    def __call__(self, i: int) -> int:
        return self.images[i - 1]

    @cached_property
    def inverse_images(self) -> tuple[int, ...]:
        inv = [0] * self.m
        for pos, img in enumerate(self.images, start=1):
            inv[img - 1] = pos
        return tuple(inv)

    def inverse(self, j: int) -> int:
        """Position i with pi(i) = j."""
        return self.inverse_images[j - 1]

    def inverted(self) -> "Permutation":
        return Permutation(self.inverse_images)


def parse_permutation(text: str) -> Permutation:
    """Parse a comma-separated image list such as "4,3,2,1"."""
    try:
        images = tuple(int(part) for part in text.split(","))
    except ValueError as exc:
        raise ValueError(f"cannot parse permutation {text!r}") from exc
    return Permutation(images)


@dataclass(frozen=True)
class IetData:
    """Length vector plus permutation: the interval exchange T(lengths, perm).

    Domain subintervals are I_i = [beta_{i-1}, beta_i) with beta the running
    sums of `lengths`; the image order is prescribed by `perm`.
    """

    lengths: tuple[Scalar, ...]
    perm: Permutation

    def __post_init__(self):
        lengths = tuple(self.lengths)
        object.__setattr__(self, "lengths", lengths)
        if len(lengths) != self.perm.m:
            raise ValueError("lengths / permutation size mismatch")
        if any(not (l > 0) for l in lengths):
            raise ValueError(f"lengths must be positive: {lengths!r}")

    @property
    def m(self) -> int:
        return self.perm.m

    @property
    def total(self) -> Scalar:
        tot = self.lengths[0]
        for l in self.lengths[1:]:
            tot = tot + l
        return tot

    def is_normalized(self, tol: float = 1e-12) -> bool:
        return abs(float(self.total) - 1.0) <= tol

    def normalized(self) -> "IetData":
        tot = self.total
        return IetData(tuple(l / tot for l in self.lengths), self.perm)

    @cached_property
    def breakpoints(self) -> tuple[Scalar, ...]:
        """Right endpoints beta_1..beta_m of the domain subintervals."""
        out = []
        acc = None
        for l in self.lengths:
            acc = l if acc is None else acc + l
            out.append(acc)
        return tuple(out)

    @cached_property
    def image_lengths(self) -> tuple[Scalar, ...]:
        """Lengths reordered as the image intervals appear left to right."""
        inv = self.perm.inverse_images
        return tuple(self.lengths[i - 1] for i in inv)

    @cached_property
    def translations(self) -> tuple[Scalar, ...]:
        """T(x) = x + translations[i-1] on subinterval I_i."""
        image_left = []
        acc = 0
        for l in self.image_lengths:
            image_left.append(acc)
            acc = acc + l
        out = []
        dom_left = 0
        for i, l in enumerate(self.lengths, start=1):
            out.append(image_left[self.perm(i) - 1] - dom_left)
            dom_left = dom_left + l
        return tuple(out)

    def interval_index(self, x: Scalar) -> int:
        """0-based index of the subinterval containing x in [0, total)."""
        if not (0 <= x) or not (x < self.total):
            raise DomainError(f"point {x!r} outside [0, {self.total!r})")
        idx = bisect.bisect_right(self.breakpoints, x)
        return min(idx, self.m - 1)

    def inverted(self) -> "IetData":
        """The inverse exchange: image lengths with the inverse permutation."""
        return IetData(self.image_lengths, self.perm.inverted())


def iet_apply(iet: IetData, x: Scalar) -> Scalar:
    """Apply the interval exchange to a point of [0, |lengths|)."""
    idx = iet.interval_index(x)
    return x + iet.translations[idx]


def iet_apply_inverse(iet: IetData, x: Scalar) -> Scalar:
    return iet_apply(iet.inverted(), x)


def rauzy_type(iet: IetData):
    """`a` if the last image interval wins, `b` if the last domain one does.

    Returns :data:`BOUNDARY` on the tie set where the induction is undefined.
    """
    p = iet.perm.inverse(iet.m)
    last_image = iet.lengths[p - 1]
    last_domain = iet.lengths[-1]
    if last_image > last_domain:
        return RauzyMove.A
    if last_domain > last_image:
        return RauzyMove.B
    return BOUNDARY


def apply_move(perm: Permutation, move: RauzyMove) -> Permutation:
    """Apply one combinatorial move; irreducibility is preserved."""
    m = perm.m
    if move is RauzyMove.A:
        p = perm.inverse(m)
        images = [0] * m
        for j in range(1, m + 1):
            if j <= p:
                images[j - 1] = perm(j)
            elif j == p + 1:
                images[j - 1] = perm(m)
            else:
                images[j - 1] = perm(j - 1)
        return Permutation(tuple(images))
    if move is RauzyMove.B:
        last = perm(m)
        images = [0] * m
        for j in range(1, m + 1):
            pj = perm(j)
            if pj <= last:
                images[j - 1] = pj
            elif pj < m:
                images[j - 1] = pj + 1
            else:
                images[j - 1] = last + 1
        return Permutation(tuple(images))
    raise DomainError(f"unknown move {move!r}")


def induction_matrix(perm: Permutation, move: RauzyMove) -> np.ndarray:
    """The nonnegative unimodular bookkeeping matrix of one move.

    Maps the induced lengths back to the original ones: lengths = M @ induced.
    """
    m = perm.m
    mat = np.zeros((m, m), dtype=np.int64)
    p = perm.inverse(m)
    if move is RauzyMove.A:
        for i in range(1, p + 1):
            mat[i - 1, i - 1] = 1
        mat[m - 1, p] = 1
        for i in range(p, m):
            mat[i - 1, i] = 1
    elif move is RauzyMove.B:
        for i in range(m):
            mat[i, i] = 1
        mat[m - 1, p - 1] = 1
    else:
        raise DomainError(f"unknown move {move!r}")
    mat.setflags(write=False)
    return mat


def inverse_induction_matrix(perm: Permutation, move: RauzyMove) -> np.ndarray:
    """Exact integer inverse of :func:`induction_matrix`."""
    m = perm.m
    mat = np.zeros((m, m), dtype=np.int64)
    p = perm.inverse(m)
    if move is RauzyMove.A:
        for i in range(1, p):
            mat[i - 1, i - 1] = 1
        mat[p - 1, p - 1] = 1
        mat[p - 1, m - 1] = -1
        mat[p, m - 1] = 1
        for j in range(p + 2, m + 1):
            mat[j - 1, j - 2] = 1
    elif move is RauzyMove.B:
        for i in range(m):
            mat[i, i] = 1
        mat[m - 1, p - 1] = -1
    else:
        raise DomainError(f"unknown move {move!r}")
    mat.setflags(write=False)
    return mat


def induction_update(lengths: Sequence[Scalar], perm: Permutation):
    """One unnormalized induction step on a positive length vector.

    Returns (move, new_perm, new_lengths, shrink) where shrink is the length
    removed from the total.  Works for floats and Fractions alike; raises
    BoundaryError on ties.
    """
    m = perm.m
    p = perm.inverse(m)
    last_image = lengths[p - 1]
    last_domain = lengths[m - 1]
    if last_image > last_domain:
        move = RauzyMove.A
        new = list(lengths[:p - 1])
        new.append(last_image - last_domain)
        new.append(last_domain)
        new.extend(lengths[p:m - 1])
        shrink = last_domain
    elif last_domain > last_image:
        move = RauzyMove.B
        new = list(lengths[:m - 1])
        new.append(last_domain - last_image)
        shrink = last_image
    else:
        raise BoundaryError(
            f"tie between competing lengths {last_image!r}; step undefined")
    return move, apply_move(perm, move), tuple(new), shrink


@dataclass(frozen=True)
class InductionStep:
    """One normalized induction step: move, matrix, log-contraction, image."""

    move: RauzyMove
    matrix: np.ndarray
    tau: float
    next: IetData | None = None

    def __post_init__(self):
        mat = np.asarray(self.matrix)
        if mat.flags.writeable:
            mat = mat.copy()
            mat.setflags(write=False)
        object.__setattr__(self, "matrix", mat)


def rauzy_step(iet: IetData) -> InductionStep:
    """One induction step on a normalized exchange.

    The image lengths are renormalized to unit total; `tau` is the log of the
    normalization factor (the return-time increment of the renormalization
    clock).
    """
    if not iet.is_normalized(1e-9):
        raise DomainError("rauzy_step requires |lengths| = 1")
    move, new_perm, new_lengths, _ = induction_update(iet.lengths, iet.perm)
    remaining = sum(new_lengths)
    tau = -math.log(float(remaining))
    normalized = tuple(l / remaining for l in new_lengths)
    return InductionStep(
        move=move,
        matrix=induction_matrix(iet.perm, move),
        tau=tau,
        next=IetData(normalized, new_perm),
    )


@dataclass(frozen=True)
class RauzyClass:
    """A full Rauzy class with its labeled diagram.

    `members` are sorted lexicographically by image sequences so fixtures are
    reproducible; `edges` holds (source_index, move_kind, target_index).
    """

    members: tuple[Permutation, ...]
    edges: tuple[tuple[int, str, int], ...]

    def __len__(self) -> int:
        return len(self.members)

    def index(self, perm: Permutation) -> int:
        return self.members.index(perm)


def rauzy_class(perm: Permutation, max_size: int = 100000) -> RauzyClass:
    """Closure of a permutation under both moves, with the labeled diagram."""
    seen = {perm.images}
    frontier = [perm]
    raw_edges = []
    while frontier:
        current = frontier.pop()
        for move in (RauzyMove.A, RauzyMove.B):
            image = apply_move(current, move)
            raw_edges.append((current.images, move.value, image.images))
            if image.images not in seen:
                seen.add(image.images)
                frontier.append(image)
                if len(seen) > max_size:
                    raise DomainError(f"class exceeds max_size={max_size}")
    members = tuple(Permutation(images) for images in sorted(seen))
    order = {p.images: i for i, p in enumerate(members)}
    edges = tuple(sorted((order[src], kind, order[dst])
                         for src, kind, dst in raw_edges))
    return RauzyClass(members=members, edges=edges)


def birkhoff_sum(
    iet: IetData,
    f: Union[Sequence[Scalar], Callable[[Scalar], Scalar]],
    x: Scalar,
    n_steps: int,
    mode: str = "partials",
):
    """Partial sums of f along the forward orbit of x.

    `f` is either a per-subinterval value vector (piecewise-constant case) or
    a callable on points.  Modes: "partials" returns [S_0..S_N] with S_0 = 0;
    "final" returns S_N alone; "extrema" returns (S_N, min_k S_k, max_k S_k)
    in O(1) extra memory.
    """
    if n_steps < 0:
        raise DomainError("n_steps must be >= 0")
    if callable(f):
        evaluate = f
    else:
        values = list(f)
        if len(values) != iet.m:
            raise DomainError("value vector length mismatch")
        evaluate = lambda pt: values[iet.interval_index(pt)]
    if mode not in ("partials", "final", "extrema"):
        raise DomainError(f"unknown mode {mode!r}")

    total = 0
    lo = hi = 0
    partials = [0] if mode == "partials" else None
    point = x
    for _ in range(n_steps):
        total = total + evaluate(point)
        if partials is not None:
            partials.append(total)
        else:
            lo = min(lo, total)
            hi = max(hi, total)
        point = iet_apply(iet, point)
    if mode == "partials":
        return partials
    if mode == "final":
        return total
    return total, lo, hi


def running_sup_profile(
    iet: IetData,
    f: Union[Sequence[Scalar], Callable[[Scalar], Scalar]],
    x: Scalar,
    checkpoints: Sequence[int],
):
    """sup of |partial sums| over the first N orbit steps, per checkpoint.

    One pass over the orbit; checkpoints must be increasing positive step
    counts.  Returns a list of floats aligned with the checkpoints.
    """
    marks = [int(n) for n in checkpoints]
    if not marks or marks[0] <= 0 or \
            any(b <= a for a, b in zip(marks, marks[1:])):
        raise DomainError("checkpoints must be increasing positive counts")
    if callable(f):
        evaluate = f
    else:
        values = list(f)
        if len(values) != iet.m:
            raise DomainError("value vector length mismatch")
        evaluate = lambda pt: values[iet.interval_index(pt)]
    sups = []
    total = 0
    peak = 0.0
    point = x
    target = iter(marks)
    nxt = next(target)
    for k in range(1, marks[-1] + 1):
        total = total + evaluate(point)
        point = iet_apply(iet, point)
        peak = max(peak, abs(total))
        if k == nxt:
            sups.append(float(peak))
            nxt = next(target, None)
    return sups
