"""Tests for finitely-additive measures over induction paths.

Frozen values were cross-checked against independent oracles: direct O(N)
orbit sums, vertical-flow return-time simulation, Monte Carlo surface
integrals, and exact rational arithmetic.
"""

import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st
from numpy.random import default_rng

from ietlab.errors import (
    DomainError,
    InsufficientRange,
    NoOccurrence,
    NotUnstable,
    SeriesDivergence,
)
from ietlab.rauzy import IetData, Permutation, iet_apply
from ietlab.zippered import (
    LipschitzFunction,
    SurfacePoint,
    ZipperedRectangle,
    random_surface,
    sample_point,
)
from ietlab.cocycle import induction_path, unstable_vector_at_origin
from ietlab.finadd import (
    CellFunction,
    ReturnLadder,
    build_phi_f,
    build_phi_from_vector,
    centered_cell_function,
    dual_from_vector,
    dual_unstable_covector_at_origin,
    evaluate_on_flow_arc,
    evaluate_on_returns,
    extract_sb,
    holder_exponents,
    markov_heights,
    measure_integral,
    partial_sums_on_returns,
)

GOLD = (math.sqrt(5) - 1) / 2

TORUS_IET = IetData((0.7, 0.3), Permutation((2, 1)))
TORUS = ZipperedRectangle(TORUS_IET, (-1.0, 1.0))


def desk_setup(n_steps=400):
    rng = default_rng(7)
    lengths = rng.random(4) + 0.05
    lengths = lengths / lengths.sum()
    iet = IetData(tuple(lengths), Permutation((4, 3, 2, 1)))
    zr = random_surface(iet, default_rng(11))
    return zr, induction_path(iet, n_steps)


@pytest.fixture(scope="module")
def desk():
    return desk_setup()


@pytest.fixture(scope="module")
def torus_path():
    return induction_path(TORUS_IET, 60)


# ------------------------------------------------------------ ladder engine

def test_ladder_matches_direct_orbit_sum(desk):
    zr, path = desk
    ladder = ReturnLadder(zr, path)
    values = [float(h) for h in zr.heights]
    ladder.register("h", values)
    iet = zr.iet
    for x in (0.05, 0.31, 0.62):
        n = 12345
        fast, lo_f, hi_f = ladder.evaluate("h", x, n, with_extrema=True)
        total, lo, hi, z = 0.0, 0.0, 0.0, x
        for _ in range(n):
            total += values[iet.interval_index(z)]
            lo = min(lo, total)
            hi = max(hi, total)
            z = float(iet_apply(iet, z))
        assert abs(fast - total) <= 1e-6 * abs(total)
        assert abs(lo_f - lo) <= 1e-6 * max(1.0, abs(lo))
        assert abs(hi_f - hi) <= 1e-6 * max(1.0, abs(hi))


def test_ladder_exact_additivity_with_rationals(torus_path):
    ladder = ReturnLadder(TORUS, torus_path, n_levels=20)
    ladder.register("q", [Fraction(3, 2), Fraction(-7, 3)])
    x = 0.123
    n1, n2 = 777, 1234
    first = ladder.evaluate("q", x, n1)
    z = x
    iet = ladder.levels[0].iet
    for _ in range(n1):
        z = float(iet_apply(iet, z))
    second = ladder.evaluate("q", z, n2)
    combined = ladder.evaluate("q", x, n1 + n2)
    assert first + second == combined
    assert isinstance(combined, Fraction)


def test_ladder_zero_and_one_steps(desk):
    zr, path = desk
    ladder = ReturnLadder(zr, path)
    ladder.register("h", [float(h) for h in zr.heights])
    assert ladder.evaluate("h", 0.3, 0) == 0
    one = ladder.evaluate("h", 0.3, 1)
    assert one == float(zr.heights[zr.iet.interval_index(0.3)])


def test_ladder_rejects_outside_point(desk):
    zr, path = desk
    ladder = ReturnLadder(zr, path)
    ladder.register("h", [float(h) for h in zr.heights])
    with pytest.raises(DomainError):
        ladder.evaluate("h", 1.5, 10)


# --------------------------------------------------------------- sb markers

def test_sb_two_step_marker_on_golden_torus():
    path = induction_path(IetData((GOLD, 1 - GOLD), Permutation((2, 1))), 40)
    sb = extract_sb(path, 2)
    assert np.asarray(sb.block_Q, dtype=int).tolist() == [[2, 1], [1, 1]]
    assert sb.indices[:6] == (0, 2, 4, 6, 8, 10)
    assert sb.balance_constant <= 3.0
    assert all((np.asarray(m, dtype=float) > 0).all()
               for m in sb.coarse_matrices)


def test_sb_explicit_word_marker():
    c = 1 / math.sqrt(2)
    path = induction_path(IetData((c, 1 - c), Permutation((2, 1))), 60)
    sb = extract_sb(path, ("a", "b"))
    assert np.asarray(sb.block_Q, dtype=int).tolist() == [[2, 1], [1, 1]]
    assert sb.indices[:5] == (0, 3, 7, 11, 15)
    assert sb.diagnostics["n_occurrences"] >= 10


def test_sb_greedy_cuts_on_genus_two_path(desk):
    zr, path = desk
    sb = extract_sb(path, 8)
    assert sb.diagnostics["n_occurrences"] >= 3
    assert sb.indices[0] == 0
    assert all(g >= 8 for g in sb.diagnostics["gaps"])
    assert all((np.asarray(m, dtype=float) > 0).all()
               for m in sb.coarse_matrices)
    assert sb.balance_constant >= 1.0


def test_sb_short_path_raises():
    zr, _ = desk_setup()
    with pytest.raises(NoOccurrence):
        extract_sb(induction_path(zr.iet, 20), 15)


# ------------------------------------------------------------ markov heights

def test_markov_heights_level_zero_is_input(desk):
    zr, path = desk
    h0 = [float(h) for h in zr.heights]
    assert np.allclose(markov_heights(path, 0, h0), h0)


def test_markov_heights_match_flow_return_times(desk):
    zr, path = desk
    h0 = [float(h) for h in zr.heights]
    level = 3
    ladder = ReturnLadder(zr, path, n_levels=level)
    got = markov_heights(path, level, h0)
    lev = ladder.levels[level]
    total_lv = float(lev.iet.total)
    for i in range(zr.m):
        left = float(lev.iet.breakpoints[i - 1]) if i > 0 else 0.0
        x = left + 0.5 * float(lev.iet.lengths[i])
        elapsed, z = 0.0, x
        while True:
            elapsed += h0[zr.iet.interval_index(z)]
            z = float(iet_apply(zr.iet, z))
            if z < total_lv:
                break
        assert abs(got[i] - elapsed) <= 1e-9 * max(1.0, elapsed)


def test_markov_heights_stay_balanced(torus_path):
    h0 = [1.0, 1.0]
    for level in (2, 5, 9):
        hn = markov_heights(torus_path, level, h0)
        assert hn.min() > 0
        assert hn.max() / hn.min() <= 10.0


# ------------------------------------------- vertical-time measure (surrogate)

def test_vertical_time_measure_equals_duration(desk):
    zr, path = desk
    phi = build_phi_from_vector(zr, path, [float(h) for h in zr.heights])
    for T in (0.37, 1.234, 5.6789):
        value, bound = evaluate_on_flow_arc(phi, SurfacePoint(0.21, 0.13), T)
        assert value == pytest.approx(T, abs=1e-12)
        assert bound <= 2 * phi.endpoint_error_bound
    assert evaluate_on_flow_arc(phi, SurfacePoint(0.21, 0.13), 0.0) == (0.0, 0.0)


def test_full_crossing_arc_has_zero_bound(desk):
    zr, path = desk
    phi = build_phi_from_vector(zr, path, [float(h) for h in zr.heights])
    i = 2
    left = float(zr.iet.breakpoints[1])
    x = left + 0.4 * float(zr.iet.lengths[i])
    value, bound = evaluate_on_flow_arc(phi, SurfacePoint(x, 0.0),
                                        float(zr.heights[i]))
    assert value == float(zr.heights[i])
    assert bound == 0.0


def test_flow_arc_rejects_negative_time(desk):
    zr, path = desk
    phi = build_phi_from_vector(zr, path, [float(h) for h in zr.heights])
    with pytest.raises(DomainError):
        evaluate_on_flow_arc(phi, SurfacePoint(0.2, 0.1), -1.0)


# ----------------------------------------------------- building from vectors

def test_second_direction_has_no_length_pairing(desk):
    zr, path = desk
    h0 = np.array([float(h) for h in zr.heights])
    lam = np.array([float(l) for l in zr.iet.lengths])
    v2 = unstable_vector_at_origin(path, h0, 80)
    assert abs(lam @ v2) < 1e-12


def test_build_from_vector_rejects_non_expanding(desk):
    zr, path = desk
    with pytest.raises(NotUnstable):
        build_phi_from_vector(zr, path, [1.0, 0.0, 0.0, 0.0])
    with pytest.raises(NotUnstable):
        build_phi_from_vector(zr, path, [0.0, 0.0, 0.0, 0.0])


def test_equivariant_sequence_matches_exact_pushes(desk):
    zr, path = desk
    h0 = np.array([float(h) for h in zr.heights])
    phi = build_phi_from_vector(zr, path, h0)
    v = h0.copy()
    for n in range(6):
        dense = phi.eq_seq.dense(n)
        assert np.allclose(dense, v, rtol=1e-9)
        v = path.acting_matrix(n).astype(float) @ v


def test_json_round_trip(desk):
    import json

    zr, path = desk
    phi = build_phi_from_vector(zr, path, [float(h) for h in zr.heights])
    payload = json.dumps(phi.to_json_dict())
    parsed = json.loads(payload)
    assert parsed["source"] == "pure_oseledets"
    assert np.allclose(parsed["base_values"], [float(h) for h in zr.heights])


# ---------------------------------------------------- building from functions

def test_cell_function_series_has_one_term(desk):
    zr, path = desk
    f = centered_cell_function(zr, 0)
    assert abs(f.nu_integral(zr)) < 1e-12
    phi = build_phi_f(zr, path, f, depth=10)
    terms = phi.diagnostics["series_terms"]
    assert len(terms) == 2 and terms[1] == 0.0
    # centered input leaves no top-exponent component
    assert abs(phi.diagnostics["unstable_coeffs"][0]) < 1e-12


def test_build_phi_f_requires_centered_input(desk):
    zr, path = desk
    with pytest.raises(DomainError):
        build_phi_f(zr, path, CellFunction((1.0, 1.0, 1.0, 1.0)), depth=5)


def test_zero_function_gives_zero_measure(desk):
    zr, path = desk
    phi = build_phi_f(zr, path, CellFunction((0.0, 0.0, 0.0, 0.0)), depth=5)
    assert np.allclose(phi.base_values, 0.0)
    assert evaluate_on_returns(phi, 0.3, 1000) == pytest.approx(0.0, abs=1e-12)


def test_lipschitz_series_converges_and_truncates(torus_path):
    f = LipschitzFunction(
        lambda x, y: math.sin(2 * math.pi * 9 * x) * math.sin(1.3 * y), "osc")
    c = f.nu_integral(TORUS)
    centered = LipschitzFunction(
        lambda x, y: math.sin(2 * math.pi * 9 * x) * math.sin(1.3 * y) - c,
        "osc-centered")
    phi = build_phi_f(TORUS, torus_path, centered, depth=18)
    terms = phi.diagnostics["series_terms"]
    assert len(terms) <= 8  # geometric-decay stop long before the depth cap
    assert terms[-1] < terms[1]
    assert phi.diagnostics["tail_estimate"] >= 0


def test_lipschitz_series_divergence_when_depth_too_small(torus_path):
    f = LipschitzFunction(
        lambda x, y: math.sin(2 * math.pi * 9 * x) * math.sin(1.3 * y), "osc")
    c = f.nu_integral(TORUS)
    centered = LipschitzFunction(
        lambda x, y: math.sin(2 * math.pi * 9 * x) * math.sin(1.3 * y) - c,
        "osc-centered")
    with pytest.raises(SeriesDivergence):
        build_phi_f(TORUS, torus_path, centered, depth=2)


def test_remainder_after_extraction_stays_bounded(desk):
    zr, path = desk
    f = centered_cell_function(zr, 0)
    phi = build_phi_f(zr, path, f, depth=10)
    w = f.level0_values(zr)
    phi.ladder.register("raw", w)
    base_points = (0.123, 0.345, 0.567, 0.789, 0.912)
    sizes = (10**3, 10**4, 10**5, 10**6)
    worst = []
    for n in sizes:
        diffs = [abs(phi.ladder.evaluate("raw", x, n)
                     - evaluate_on_returns(phi, x, n)) for x in base_points]
        worst.append(max(diffs))
    slope = np.polyfit(np.log(sizes), np.log(worst), 1)[0]
    assert slope <= 0.1


# ------------------------------------------------------------- evaluation

def test_fast_and_direct_evaluators_agree(desk):
    zr, path = desk
    h0 = np.array([float(h) for h in zr.heights])
    v2 = unstable_vector_at_origin(path, h0, 80)
    phi = build_phi_from_vector(zr, path, v2)
    n = 10**5
    for x in (0.21, 0.64):
        fast = evaluate_on_returns(phi, x, n, mode="fast")
        direct = evaluate_on_returns(phi, x, n, mode="direct")
        assert abs(fast - direct) <= 1e-6 * max(1.0, abs(direct))
    assert evaluate_on_returns(phi, 0.21, 0) == 0.0


def test_partial_sums_match_direct(desk):
    zr, path = desk
    h0 = np.array([float(h) for h in zr.heights])
    v2 = unstable_vector_at_origin(path, h0, 80)
    phi = build_phi_from_vector(zr, path, v2)
    checkpoints = [10, 100, 1000, 5000]
    partials = partial_sums_on_returns(phi, 0.3, checkpoints)
    for n, value in zip(checkpoints, partials):
        direct = evaluate_on_returns(phi, 0.3, n, mode="direct")
        assert abs(value - direct) <= 1e-8 * max(1.0, abs(direct))


@given(st.floats(min_value=0.01, max_value=0.95),
       st.integers(min_value=1, max_value=400),
       st.integers(min_value=1, max_value=400))
def test_finite_additivity_over_concatenation(x, n1, n2):
    zr, path = _CACHED_DESK
    phi = _CACHED_PHI
    first = evaluate_on_returns(phi, x, n1)
    z = x
    for _ in range(n1):
        z = float(iet_apply(zr.iet, z))
    second = evaluate_on_returns(phi, z, n2)
    combined = evaluate_on_returns(phi, x, n1 + n2)
    assert first + second == pytest.approx(combined, abs=1e-9)


_CACHED_DESK = desk_setup()
_CACHED_PHI = build_phi_from_vector(
    _CACHED_DESK[0], _CACHED_DESK[1],
    [float(h) for h in _CACHED_DESK[0].heights])


def test_holonomy_invariance_same_rectangle(desk):
    zr, path = desk
    h0 = np.array([float(h) for h in zr.heights])
    v2 = unstable_vector_at_origin(path, h0, 80)
    phi = build_phi_from_vector(zr, path, v2)
    i = 2
    left = float(zr.iet.breakpoints[1])
    height = float(zr.heights[i])
    vals = []
    for frac in (0.1, 0.5, 0.77):
        x = left + frac * float(zr.iet.lengths[i])
        value, bound = evaluate_on_flow_arc(phi, SurfacePoint(x, 0.0), height)
        vals.append(value)
        assert bound == 0.0
    assert vals[0] == vals[1] == vals[2] == float(v2[i])


def test_expectation_identity_and_variance(desk):
    zr, path = desk
    h0 = np.array([float(h) for h in zr.heights])
    v2 = unstable_vector_at_origin(path, h0, 80)
    phi = build_phi_from_vector(zr, path, v2)
    rng = default_rng(2024)
    values = np.array([evaluate_on_flow_arc(phi, sample_point(zr, rng), 1.0)[0]
                       for _ in range(3000)])
    mean = values.mean()
    stderr = values.std(ddof=1) / math.sqrt(len(values))
    # the second-direction measure is centered: <v2, lengths> = 0
    assert abs(mean) <= 3 * stderr
    var = values.var(ddof=1)
    m4 = ((values - mean) ** 4).mean()
    n = len(values)
    var_stderr = math.sqrt((m4 - (n - 3) / (n - 1) * var**2) / n)
    assert var >= 10 * var_stderr


# ------------------------------------------------------------------ duals

def test_dual_pairing_constant_along_levels(desk):
    zr, path = desk
    h0 = np.array([float(h) for h in zr.heights])
    v2 = unstable_vector_at_origin(path, h0, 80)
    phi = build_phi_from_vector(zr, path, v2)
    w2 = dual_unstable_covector_at_origin(path, h0, 80)
    dual = dual_from_vector(path, w2)
    base = float(np.dot(phi.eq_seq.dense(0), dual.eq_seq.dense(0)))
    assert base == pytest.approx(1.0, abs=1e-9)
    for level in (5, 20, 60):
        paired = float(np.dot(phi.eq_seq.dense(level),
                              dual.eq_seq.dense(level)))
        assert paired == pytest.approx(base, rel=1e-8)


def test_measure_integral_against_length_dual_is_exact(desk):
    zr, path = desk
    ladder = ReturnLadder(zr, path)
    lam = [float(l) for l in zr.iet.lengths]
    dual = dual_from_vector(path, lam, "area_dual")
    f = CellFunction((1.0, -0.5, 2.0, 0.3))
    exact = f.nu_integral(zr)
    for level in (0, 2, 5):
        got, diag = measure_integral(zr, f, dual, level, ladder)
        assert got == pytest.approx(exact, abs=1e-12)
        assert len(diag["levels"]) >= 1


def test_measure_integral_extracts_second_coefficient(desk):
    zr, path = desk
    h0 = np.array([float(h) for h in zr.heights])
    f = centered_cell_function(zr, 0)
    phi = build_phi_f(zr, path, f, depth=10)
    w2 = dual_unstable_covector_at_origin(path, h0, 80)
    dual = dual_from_vector(path, w2)
    got, _ = measure_integral(zr, f, dual, 0, phi.ladder)
    coefficient = phi.diagnostics["unstable_coeffs"][1]
    assert got == pytest.approx(coefficient, abs=1e-3)


def test_montecarlo_oracle_for_measure_integral(desk):
    zr, path = desk
    ladder = ReturnLadder(zr, path)
    lam = [float(l) for l in zr.iet.lengths]
    dual = dual_from_vector(path, lam, "area_dual")
    f = LipschitzFunction(lambda x, y: x * x + 0.5 * math.cos(y), "poly")
    got, _ = measure_integral(zr, f, dual, 3, ladder)
    rng = default_rng(99)
    samples = []
    for _ in range(20000):
        p = sample_point(zr, rng)
        samples.append(f.value(zr, p.x, p.y))
    samples = np.array(samples)
    mc = samples.mean() * float(zr.area)
    mc_err = samples.std(ddof=1) / math.sqrt(len(samples)) * float(zr.area)
    assert abs(got - mc) <= 4 * mc_err


# ------------------------------------------------------------ scaling slopes

def test_vertical_time_scaling_exponent_is_one(desk):
    zr, path = desk
    phi = build_phi_from_vector(zr, path, [float(h) for h in zr.heights])
    grid = [10 ** (k / 4) for k in range(8, 25)]
    result = holder_exponents(phi, 0.37, grid)
    assert result["top"] == pytest.approx(1.0, abs=0.02)


def test_second_measure_scaling_matches_second_exponent(desk):
    zr, path = desk
    h0 = np.array([float(h) for h in zr.heights])
    v2 = unstable_vector_at_origin(path, h0, 80)
    phi = build_phi_from_vector(zr, path, v2)
    grid = [10 ** (k / 4) for k in range(8, 25)]
    result = holder_exponents(phi, 0.37, grid,
                              extra_points=[0.11, 0.52, 0.74, 0.9])
    # second exponent of this class sits near 0.34
    assert 0.15 <= result["top"] <= 0.5
    assert 0.2 <= result["lower"] <= 0.5


def test_holder_requires_three_decades(desk):
    zr, path = desk
    phi = build_phi_from_vector(zr, path, [float(h) for h in zr.heights])
    with pytest.raises(InsufficientRange):
        holder_exponents(phi, 0.37, [10.0, 50.0, 100.0])
