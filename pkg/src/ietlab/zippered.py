"""Zippered-rectangle suspensions and their flows.

A suspension datum is (lengths, perm, delta) with delta in the closed
suspension cone; the derived rectangle heights give a special flow over the
interval exchange (flow up at unit speed, jump by the exchange at the roof).
The renormalized stretch flow scales lengths by e^s and delta by e^{-s}, then
applies as many induction steps as needed to land back in the fundamental
domain.

Cone-point hits (an orbit meeting a discontinuity exactly) raise
:class:`ConePointError`; callers resample, the engine never perturbs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence, Union

import numpy as np

from .errors import (
    BoundaryError,
    ConePointError,
    DomainError,
    NonRecurrentError,
    RejectionOverflow,
)
from .rauzy import (
    IetData,
    Permutation,
    RauzyMove,
    Scalar,
    iet_apply,
    iet_apply_inverse,
    induction_matrix,
    induction_update,
)

CONE_TOL = 1e-9


def heights(perm: Permutation, delta: Sequence[Scalar]) -> tuple:
    """Rectangle heights derived from the suspension vector.

    h_j = -(delta_1 + .. + delta_{j-1}) + (delta^im_1 + .. + delta^im_{pi(j)-1})
    where delta^im_l = delta at the position mapped to image slot l.
    """
    m = perm.m
    if len(delta) != m:
        raise DomainError("delta length mismatch")
    dom_prefix = [0]
    for d in delta[:-1]:
        dom_prefix.append(dom_prefix[-1] + d)
    img_prefix = [0]
    for l in range(1, m):
        img_prefix.append(img_prefix[-1] + delta[perm.inverse(l) - 1])
    return tuple(-dom_prefix[j - 1] + img_prefix[perm(j) - 1]
                 for j in range(1, m + 1))


def cone_check(perm: Permutation, delta: Sequence[Scalar]) -> bool:
    """True iff delta lies in the closed suspension cone.

    Domain prefix sums must be <= 0 and image-order prefix sums >= 0, both for
    the first m-1 prefixes.
    """
    m = perm.m
    acc = 0
    for d in delta[:-1]:
        acc = acc + d
        if acc > 0:
            return False
    acc = 0
    for l in range(1, m):
        acc = acc + delta[perm.inverse(l) - 1]
        if acc < 0:
            return False
    return True


def _cone_margin(perm: Permutation, delta: Sequence[Scalar]) -> float:
    """Worst violation of the cone inequalities (<= 0 means inside)."""
    m = perm.m
    worst = -math.inf
    acc = 0.0
    for d in delta[:-1]:
        acc += float(d)
        worst = max(worst, acc)
    acc = 0.0
    for l in range(1, m):
        acc += float(delta[perm.inverse(l) - 1])
        worst = max(worst, -acc)
    return worst


@dataclass(frozen=True)
class ZipperedRectangle:
    """Suspension surface: interval exchange base plus rectangle heights."""

    iet: IetData
    delta: tuple

    def __post_init__(self):
        delta = tuple(self.delta)
        object.__setattr__(self, "delta", delta)
        if len(delta) != self.iet.m:
            raise DomainError("delta / lengths size mismatch")
        scale = max((abs(float(d)) for d in delta), default=0.0) or 1.0
        if _cone_margin(self.iet.perm, delta) > CONE_TOL * scale:
            raise DomainError("delta outside the suspension cone")

    @property
    def m(self) -> int:
        return self.iet.m

    @property
    def perm(self) -> Permutation:
        return self.iet.perm

    @cached_property
    def heights(self) -> tuple:
        return heights(self.iet.perm, self.delta)

    @cached_property
    def area(self):
        total = 0
        for l, h in zip(self.iet.lengths, self.heights):
            total = total + l * h
        return total

    @property
    def unit_area(self) -> bool:
        return abs(float(self.area) - 1.0) <= 1e-10

    def normalize_area(self) -> "ZipperedRectangle":
        a = self.area
        if not a > 0:
            raise DomainError("cannot normalize zero-area surface")
        return ZipperedRectangle(self.iet, tuple(d / a for d in self.delta))

    def to_json_dict(self) -> dict:
        return {
            "lambda": [float(l) for l in self.iet.lengths],
            "pi": list(self.iet.perm.images),
            "delta": [float(d) for d in self.delta],
            "heights": [float(h) for h in self.heights],
            "area": float(self.area),
        }


def area(zr: ZipperedRectangle):
    return zr.area


def sample_delta(perm: Permutation, rng: np.random.Generator,
                 max_attempts: int = 10**6) -> tuple:
    """Gaussian-rejection sample from the open interior of the cone."""
    m = perm.m
    for _ in range(max_attempts):
        cand = rng.standard_normal(m)
        dom = np.cumsum(cand[:-1])
        img = np.cumsum([cand[perm.inverse(l) - 1] for l in range(1, m)])
        if (dom < 0).all() and (img > 0).all():
            return tuple(float(c) for c in cand)
    raise RejectionOverflow(
        f"no interior cone sample for {perm.images} in {max_attempts} draws")


def random_surface(iet: IetData, rng: np.random.Generator) -> ZipperedRectangle:
    """Unit-area suspension over the given exchange with a random cone datum."""
    delta = sample_delta(iet.perm, rng)
    zr = ZipperedRectangle(iet, delta)
    return zr.normalize_area()


# ------------------------------------------------------------ stretch flow

def in_fundamental_domain(lengths: Sequence[Scalar], perm: Permutation,
                          tol: float = 1e-12) -> bool:
    """Membership in the renormalization fundamental domain.

    Total length at least 1, and the induction step would drop it below 1:
    total - min(competing lengths) < 1.
    """
    total = float(sum(lengths))
    gamma = min(float(lengths[-1]), float(lengths[perm.inverse(perm.m) - 1]))
    return total >= 1.0 - tol and total - gamma < 1.0


def _delta_update(delta, p: int, move: RauzyMove):
    """Apply the inverse bookkeeping matrix to delta (same action as lengths)."""
    m = len(delta)
    if move is RauzyMove.A:
        new = list(delta[:p - 1])
        new.append(delta[p - 1] - delta[m - 1])
        new.append(delta[m - 1])
        new.extend(delta[p:m - 1])
    else:
        new = list(delta[:m - 1])
        new.append(delta[m - 1] - delta[p - 1])
    return tuple(new)


@dataclass(frozen=True)
class FlowResult:
    """Output of the renormalized stretch flow.

    `zr` is the renormalized surface; `matrix_product` is the ordered product
    of the bookkeeping matrices of the applied induction steps (level-0
    lengths = matrix_product @ final lengths).
    """

    zr: ZipperedRectangle
    n_renormalizations: int
    moves: tuple
    matrix_product: np.ndarray
    taus: tuple


def teichmuller_flow(zr: ZipperedRectangle, s: float,
                     max_steps: int | None = None) -> FlowResult:
    """Stretch lengths by e^s, shrink delta by e^{-s}, renormalize.

    Requires a unit-area surface already inside the fundamental domain and
    s >= 0.  Area is preserved by every step; the applied induction steps are
    recorded.
    """
    if s < 0:
        raise DomainError("stretch flow implemented for s >= 0 only")
    if not zr.unit_area:
        raise DomainError("stretch flow requires unit area")
    if not in_fundamental_domain(zr.iet.lengths, zr.perm):
        raise DomainError("surface not in the fundamental domain")
    if max_steps is None:
        max_steps = int(1000 + 100 * s)

    scale = math.exp(s)
    lengths = tuple(float(l) * scale for l in zr.iet.lengths)
    delta = tuple(float(d) / scale for d in zr.delta)
    perm = zr.perm
    moves = []
    taus = []
    product = np.eye(zr.m, dtype=np.int64)
    count = 0
    while not in_fundamental_domain(lengths, perm):
        if count >= max_steps:
            raise NonRecurrentError(
                f"renormalization count exceeded {max_steps}")
        p = perm.inverse(perm.m)
        total_before = sum(lengths)
        move, new_perm, lengths, _ = induction_update(lengths, perm)
        delta = _delta_update(delta, p, move)
        product = product @ induction_matrix(perm, move)
        taus.append(math.log(total_before) - math.log(sum(lengths)))
        moves.append(move)
        perm = new_perm
        count += 1
    out = ZipperedRectangle(IetData(lengths, perm), delta)
    return FlowResult(zr=out, n_renormalizations=count, moves=tuple(moves),
                      matrix_product=product, taus=tuple(taus))


def induction_on_surface(zr: ZipperedRectangle) -> ZipperedRectangle:
    """One unnormalized induction step applied to the whole suspension."""
    p = zr.perm.inverse(zr.m)
    move, new_perm, new_lengths, _ = induction_update(zr.iet.lengths, zr.perm)
    new_delta = _delta_update(zr.delta, p, move)
    return ZipperedRectangle(IetData(new_lengths, new_perm), new_delta)


# ------------------------------------------------------------ vertical flow

@dataclass(frozen=True)
class SurfacePoint:
    """Base coordinate plus height above the base, inside one rectangle."""

    x: float
    y: float = 0.0


@dataclass(frozen=True)
class Crossing:
    """One completed roof crossing: sequence number, rectangle, entry base x."""

    step: int
    interval_index: int
    base_x: float


def _check_point(zr: ZipperedRectangle, p: SurfacePoint) -> int:
    idx = zr.iet.interval_index(p.x)
    if not (0 <= p.y < float(zr.heights[idx])):
        raise DomainError(f"height {p.y} outside rectangle {idx + 1}")
    return idx


def _interior_breakpoints(iet: IetData) -> tuple:
    return iet.breakpoints[:-1]


def vertical_flow(zr: ZipperedRectangle, p: SurfacePoint, t: float):
    """Flow a surface point along the vertical field for time t.

    Returns (endpoint, crossings).  Negative times flow downward through the
    inverse exchange.  Hitting a discontinuity point exactly raises
    :class:`ConePointError` carrying the elapsed time.
    """
    idx = _check_point(zr, p)
    hts = [float(h) for h in zr.heights]
    if t >= 0:
        iet = zr.iet
        disc = set(float(b) for b in _interior_breakpoints(iet))
        x, y = float(p.x), float(p.y)
        remaining = float(t)
        elapsed = 0.0
        crossings = []
        step = 0
        while remaining > 0 and remaining >= hts[idx] - y:
            hop = hts[idx] - y
            crossings.append(Crossing(step, idx + 1, x))
            x_new = float(iet_apply(iet, x))
            elapsed += hop
            remaining -= hop
            if x_new in disc:
                raise ConePointError("orbit hit a discontinuity", elapsed)
            x, y = x_new, 0.0
            idx = iet.interval_index(x)
            step += 1
        return SurfacePoint(x, y + remaining), crossings
    # downward: cross the base, pulling back through the inverse exchange
    inv = zr.iet.inverted()
    disc = set(float(b) for b in _interior_breakpoints(inv))
    x, y = float(p.x), float(p.y)
    remaining = -float(t)
    elapsed = 0.0
    crossings = []
    step = 0
    while remaining > y:
        elapsed += y
        remaining -= y
        x_new = float(iet_apply(inv, x))
        if x_new in disc:
            raise ConePointError("orbit hit a discontinuity", -elapsed)
        crossings.append(Crossing(step, zr.iet.interval_index(x_new) + 1, x_new))
        x = x_new
        y = hts[zr.iet.interval_index(x)]
        step += 1
    return SurfacePoint(x, y - remaining), crossings


def sample_point(zr: ZipperedRectangle, rng: np.random.Generator) -> SurfacePoint:
    """Area-uniform random point of the suspension surface."""
    lengths = np.array([float(l) for l in zr.iet.lengths])
    hts = np.array([float(h) for h in zr.heights])
    weights = lengths * hts
    weights = weights / weights.sum()
    i = int(rng.choice(len(lengths), p=weights))
    left = float(zr.iet.breakpoints[i - 1]) if i > 0 else 0.0
    x = left + float(rng.random()) * lengths[i]
    y = float(rng.random()) * hts[i]
    return SurfacePoint(x, y)


# ------------------------------------------------- function families on the surface

@dataclass(frozen=True)
class RectangleIndicator:
    """Indicator of a box inside a single rectangle of the suspension.

    The box [x_left, x_left+width) x [y_bottom, y_bottom+height) must stay
    within one rectangle, which makes it an admissible rectangle and its
    indicator weakly Lipschitz.  Height None means the full rectangle height.
    """

    x_left: float
    width: float
    y_bottom: float = 0.0
    height: float | None = None

    def _resolved(self, zr: ZipperedRectangle):
        idx = zr.iet.interval_index(self.x_left)
        left = float(zr.iet.breakpoints[idx - 1]) if idx > 0 else 0.0
        right = float(zr.iet.breakpoints[idx])
        h = float(zr.heights[idx])
        height = h - self.y_bottom if self.height is None else self.height
        if self.x_left + self.width > right + 1e-12:
            raise DomainError("box straddles a vertical boundary")
        if self.y_bottom < 0 or self.y_bottom + height > h + 1e-12:
            raise DomainError("box exceeds the rectangle height")
        return idx, left, height

    @classmethod
    def full(cls, zr: ZipperedRectangle, index: int) -> "RectangleIndicator":
        """Indicator of the whole rectangle with the given 0-based index."""
        left = float(zr.iet.breakpoints[index - 1]) if index > 0 else 0.0
        return cls(x_left=left, width=float(zr.iet.lengths[index]),
                   y_bottom=0.0, height=float(zr.heights[index]))

    def value(self, zr: ZipperedRectangle, x: float, y: float) -> float:
        idx, _, height = self._resolved(zr)
        if zr.iet.interval_index(x) != idx:
            return 0.0
        inside_x = self.x_left <= x < self.x_left + self.width
        inside_y = self.y_bottom <= y < self.y_bottom + height
        return 1.0 if (inside_x and inside_y) else 0.0

    def nu_integral(self, zr: ZipperedRectangle) -> float:
        _, _, height = self._resolved(zr)
        return self.width * height

    def crossing_integral(self, zr: ZipperedRectangle, rect_index: int,
                          x: float) -> float:
        """Integral over one full bottom-to-roof crossing at abscissa x."""
        idx, _, height = self._resolved(zr)
        if rect_index != idx:
            return 0.0
        if self.x_left <= x < self.x_left + self.width:
            return height
        return 0.0

    def level0_values(self, zr: ZipperedRectangle):
        """Per-rectangle crossing integrals when x-independent, else None."""
        idx, left, height = self._resolved(zr)
        if (abs(self.x_left - left) > 0 or
                abs(self.width - float(zr.iet.lengths[idx])) > 0):
            return None
        vals = [0.0] * zr.m
        vals[idx] = height
        return tuple(vals)


@dataclass(frozen=True)
class LipschitzFunction:
    """A Lipschitz function of (x, y), weakly Lipschitz on the suspension."""

    func: Callable[[float, float], float]
    name: str = "f"

    def value(self, zr: ZipperedRectangle, x: float, y: float) -> float:
        return float(self.func(x, y))

    def nu_integral(self, zr: ZipperedRectangle, order: int = 24) -> float:
        nodes, weights = np.polynomial.legendre.leggauss(order)
        total = 0.0
        left = 0.0
        for i in range(zr.m):
            lam = float(zr.iet.lengths[i])
            h = float(zr.heights[i])
            xs = left + (nodes + 1) * lam / 2
            ys = (nodes + 1) * h / 2
            vals = np.array([[self.func(x, y) for y in ys] for x in xs])
            total += (lam / 2) * (h / 2) * weights @ vals @ weights
            left += lam
        return float(total)

    def crossing_integral(self, zr: ZipperedRectangle, rect_index: int,
                          x: float, order: int = 24) -> float:
        nodes, weights = np.polynomial.legendre.leggauss(order)
        h = float(zr.heights[rect_index])
        ys = (nodes + 1) * h / 2
        return float((h / 2) * sum(w * self.func(x, y)
                                   for w, y in zip(weights, ys)))

    def level0_values(self, zr: ZipperedRectangle):
        return None


FunctionSpec = Union[RectangleIndicator, LipschitzFunction]


def weakly_lipschitz_eval(zr: ZipperedRectangle, f: FunctionSpec,
                          p: SurfacePoint, centered: bool = False) -> float:
    """Pointwise evaluation; `centered` subtracts the area-average."""
    _check_point(zr, p)
    out = f.value(zr, p.x, p.y)
    if centered:
        out -= f.nu_integral(zr) / float(zr.area)
    return out


# ------------------------------------------------- admissible flow boxes

@dataclass(frozen=True)
class AdmissibleRectangle:
    """A flow box: horizontal segment at the anchor flowed for time t1."""

    anchor: SurfacePoint
    t1: float
    t2: float


def is_admissible(zr: ZipperedRectangle, rect: AdmissibleRectangle,
                  max_crossings: int = 10**5) -> bool:
    """Exact check that the flow box avoids discontinuities.

    The horizontal segment must stay inside a single base subinterval at every
    level it crosses; within one rectangle the roof is flat, so the whole
    segment crosses together.
    """
    iet = zr.iet
    x, y = float(rect.anchor.x), float(rect.anchor.y)
    remaining = float(rect.t1)
    for _ in range(max_crossings):
        idx = iet.interval_index(x)
        right = float(iet.breakpoints[idx])
        if x + rect.t2 > right:
            return False
        room = float(zr.heights[idx]) - y
        if remaining <= room:
            return True
        remaining -= room
        x = float(iet_apply(iet, x))
        y = 0.0
    raise NonRecurrentError("admissibility scan exceeded crossing budget")
