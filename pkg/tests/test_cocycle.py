"""Cocycle products, Lyapunov spectra, splittings, symplectic pairing."""

import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from numpy.random import default_rng

from ietlab.errors import (
    DomainError,
    NonConvergenceError,
    SingularForm,
    WindowTooSmall,
)
from ietlab.rauzy import IetData, Permutation, rauzy_step
from ietlab.cocycle import (
    CocyclePath,
    backward_flag_at_origin,
    cocycle_product,
    dual_pairing,
    full_space_spectrum,
    induction_path,
    lyapunov_spectrum,
    oseledets_splitting,
    principal_angle,
    subspace_intersection,
    symplectic_data,
    synthetic_path,
    unstable_vector_at_origin,
)
from ietlab.zippered import random_surface

PHI = (1 + 5**0.5) / 2
GOLDEN = IetData((1 / PHI, 1 - 1 / PHI), Permutation((2, 1)))


def random_irreducible(rng, m):
    while True:
        images = tuple(int(v) for v in rng.permutation(m) + 1)
        try:
            return Permutation(images)
        except ValueError:
            continue


def desk4_iet(seed):
    rng = default_rng(seed)
    lam = rng.random(4) + 0.05
    return IetData(tuple(lam / lam.sum()), Permutation((4, 3, 2, 1)))


# ----------------------------------------------------------------- paths

def test_induction_path_chains():
    path = induction_path(GOLDEN, 6)
    assert len(path) == 6
    assert [s.move.value for s in path.steps] == ["a", "b"] * 3
    for i, step in enumerate(path.steps):
        assert step.next.perm == path.perms[i + 1]
    diffs = np.diff(path.cumulative_tau)
    assert (diffs > 0).all()
    np.testing.assert_allclose(diffs, math.log(PHI), rtol=1e-9)


def test_zorich_path_groups_runs():
    iet = desk4_iet(0)
    elem = induction_path(iet, 400, unit="elementary")
    zor = induction_path(iet, 40, unit="zorich")
    moves = [s.move for s in zor.steps]
    assert all(a is not b for a, b in zip(moves, moves[1:]))
    # the grouped product over the first groups matches the elementary prefix
    n_elem = 0
    prod = np.eye(4, dtype=np.int64)
    for s in zor.steps[:10]:
        prod = prod @ np.asarray(s.matrix)
    while not (cocycle_product(elem, n_elem) == prod).all():
        n_elem += 1
        assert n_elem <= 400
    assert n_elem > 10  # groups really aggregate several elementary steps


def test_path_validation():
    with pytest.raises(DomainError):
        CocyclePath(steps=(), perms=(), cumulative_tau=(0.0,))
    with pytest.raises(DomainError):
        induction_path(GOLDEN, 3, unit="bogus")


# --------------------------------------------------------------- products

def test_product_identity_and_frozen_value():
    path = induction_path(GOLDEN, 6)
    assert (cocycle_product(path, 0) == np.eye(2, dtype=np.int64)).all()
    assert cocycle_product(path, 2).tolist() == [[2, 1], [1, 1]]


def test_product_inverse_and_transpose():
    path = induction_path(desk4_iet(1), 30, unit="elementary")
    fw = cocycle_product(path, 30)
    inv = cocycle_product(path, 30, "inverse")
    assert (np.asarray(fw, dtype=object) @ np.asarray(inv, dtype=object)
            == np.eye(4, dtype=object)).all()
    assert (cocycle_product(path, 17, "transpose")
            == cocycle_product(path, 17).T).all()


def test_product_big_integer_escalation_exact():
    m = [[2, 1], [1, 1]]
    path = synthetic_path([np.array(m, dtype=np.int64)] * 120,
                          Permutation((2, 1)))
    big = cocycle_product(path, 120)
    assert big.dtype == object
    acc = [[1, 0], [0, 1]]
    for _ in range(120):
        acc = [[acc[i][0] * m[0][j] + acc[i][1] * m[1][j] for j in range(2)]
               for i in range(2)]
    assert all(int(big[i][j]) == acc[i][j] for i in range(2) for j in range(2))


# --------------------------------------------------------------- spectrum

def test_spectrum_golden_top_exponent():
    est = lyapunov_spectrum(GOLDEN, 400, 1, unit="elementary")
    assert est.exponents[0] == pytest.approx(1.0, abs=0.01)
    assert est.stderr[0] < 0.1
    assert est.teich_time > 0


def test_spectrum_random_torus():
    rng = default_rng(3)
    lam = rng.random(2)
    iet = IetData(tuple(lam / lam.sum()), Permutation((2, 1)))
    est = lyapunov_spectrum(iet, 1000, 1)
    assert est.exponents[0] == pytest.approx(1.0, abs=0.005)


def test_full_space_symmetric_pair():
    rng = default_rng(3)
    lam = rng.random(2)
    iet = IetData(tuple(lam / lam.sum()), Permutation((2, 1)))
    top, bottom = full_space_spectrum(iet, 1000)
    assert top == pytest.approx(1.0, abs=0.01)
    assert top + bottom == pytest.approx(0.0, abs=0.01)


def test_spectrum_desk4():
    est = lyapunov_spectrum(desk4_iet(0), 2000, 2)
    assert est.exponents[0] == pytest.approx(1.0, abs=0.01)
    assert 0.2 < est.exponents[1] < 0.45
    assert est.exponents[0] > est.exponents[1]


def test_spectrum_symplectic_pairing():
    est = lyapunov_spectrum(desk4_iet(0), 3000, 4)
    th = est.exponents
    assert th[0] + th[3] == pytest.approx(0.0, abs=0.03)
    assert th[1] + th[2] == pytest.approx(0.0, abs=0.03)


def test_spectrum_rejects_zero_steps():
    with pytest.raises(NonConvergenceError):
        lyapunov_spectrum(GOLDEN, 0, 1)


def test_spectrum_rejects_too_many_exponents():
    with pytest.raises(DomainError):
        lyapunov_spectrum(IetData((0.3, 0.3, 0.4), Permutation((3, 2, 1))),
                          100, 3)  # rank of the pairing is 2


# --------------------------------------------------------------- symplectic

def test_symplectic_frozen_values():
    sd = symplectic_data(Permutation((2, 1)))
    assert sd.L.tolist() == [[0, 1], [-1, 0]]
    assert sd.genus == 1 and sd.N_basis.shape[1] == 0

    sd4 = symplectic_data(Permutation((4, 3, 2, 1)))
    expect = np.triu(np.ones((4, 4), dtype=int), 1)
    assert (sd4.L == expect - expect.T).all()
    assert sd4.genus == 2 and sd4.N_basis.shape[1] == 0

    sd3 = symplectic_data(Permutation((3, 2, 1)))
    assert sd3.genus == 1 and sd3.N_basis.shape[1] == 1


@given(st.integers(0, 10**6), st.integers(2, 7))
def test_symplectic_structure(seed, m):
    rng = default_rng(seed)
    perm = random_irreducible(rng, m)
    sd = symplectic_data(perm)
    assert (sd.L + sd.L.T == 0).all()
    assert set(np.unique(sd.L)) <= {-1, 0, 1}
    assert sd.H_basis.shape[1] == 2 * sd.genus
    assert sd.H_basis.shape[1] + sd.N_basis.shape[1] == m
    # independent entry check against the definition
    for i in range(1, m + 1):
        for j in range(i + 1, m + 1):
            assert sd.L[i - 1, j - 1] == (1 if perm(i) > perm(j) else 0)


def test_dual_pairing_constant_along_path():
    path = induction_path(desk4_iet(2), 20, unit="elementary")
    rng = default_rng(9)
    v = rng.standard_normal(4)
    w = rng.standard_normal(4)
    base = dual_pairing(v, w, path.perms[0])
    vt = cocycle_product(path, 20, "transpose").astype(float) @ v
    wt = cocycle_product(path, 20, "inverse").astype(float) @ w
    assert dual_pairing(vt, wt, path.perms[-1]) == pytest.approx(base, abs=1e-9)


def test_symplectic_pairing_antisymmetry_and_kernel():
    perm = Permutation((4, 3, 2, 1))
    v = np.array([1.0, 2.0, -1.0, 0.5])
    assert dual_pairing(v, v, perm, "symplectic") == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(SingularForm):
        dual_pairing(np.ones(3), np.array([1.0, -1.0, 1.0]),
                     Permutation((3, 2, 1)), "symplectic")


@given(st.integers(0, 10**6))
def test_symplectic_pairing_invariant_under_induction(seed):
    rng = default_rng(seed)
    m = int(rng.integers(2, 6))
    perm = random_irreducible(rng, m)
    lengths = tuple(float(v) for v in rng.random(m) + 0.05)
    step = rauzy_step(IetData(tuple(np.array(lengths) / sum(lengths)), perm))
    sd = symplectic_data(perm)
    v = sd.H_basis @ rng.standard_normal(2 * sd.genus)
    w = sd.H_basis @ rng.standard_normal(2 * sd.genus)
    before = dual_pairing(v, w, perm, "symplectic")
    act = np.asarray(step.matrix).T.astype(float)
    after = dual_pairing(act @ v, act @ w, step.next.perm, "symplectic")
    assert after == pytest.approx(before, abs=1e-9 * max(1, abs(before)))


@given(st.integers(0, 10**6))
def test_image_space_transport(seed):
    rng = default_rng(seed)
    m = int(rng.integers(2, 6))
    perm = random_irreducible(rng, m)
    lengths = tuple(float(v) for v in rng.random(m) + 0.05)
    step = rauzy_step(IetData(tuple(np.array(lengths) / sum(lengths)), perm))
    act = np.asarray(step.matrix).T.astype(float)
    h_before = symplectic_data(perm).H_basis
    h_after = symplectic_data(step.next.perm).H_basis
    assert principal_angle(act @ h_before, h_after) < 1e-6


# --------------------------------------------------------------- splitting

def test_splitting_constant_matrix_oracle():
    mat = np.array([[2, 1], [1, 1]], dtype=np.int64)  # symmetric, so its
    # transpose (the acting matrix) has eigenvectors (phi,1) and (-1,phi)
    path = synthetic_path([mat] * 60, Permutation((2, 1)))
    split = oseledets_splitting(path, 30, 16, k_u=1)
    e_u = np.array([PHI, 1.0]) / math.sqrt(PHI**2 + 1)
    e_cs = np.array([-1.0, PHI]) / math.sqrt(PHI**2 + 1)

    def sine_to(col, target):  # resolves below the acos precision floor
        col = col.ravel()
        return float(np.linalg.norm(col - target * (target @ col)))

    assert sine_to(split.E_u[0], e_u) < 1e-8
    assert sine_to(split.E_cs, e_cs) < 1e-8
    assert max(split.diagnostics["halving_angles"].values()) < 1e-6


def test_splitting_window_certificate():
    path = induction_path(desk4_iet(0), 400, unit="zorich")
    with pytest.raises(WindowTooSmall):
        oseledets_splitting(path, 200, 30, k_u=2, tol=1e-3)
    split = oseledets_splitting(path, 200, 120, k_u=2, tol=1e-2)
    assert max(split.diagnostics["halving_angles"].values()) < 1e-6


def test_splitting_equivariance():
    path = induction_path(desk4_iet(0), 400, unit="zorich")
    s1 = oseledets_splitting(path, 200, 120, k_u=2, tol=1e-2)
    s2 = oseledets_splitting(path, 201, 120, k_u=2, tol=1e-2)
    act = path.acting_matrix(200).astype(float)
    for i in range(2):
        assert principal_angle(act @ s1.E_u[i], s2.E_u[i]) < 1e-6
    assert principal_angle(act @ s1.E_cs, s2.E_cs) < 1e-6


def test_splitting_window_preconditions():
    path = induction_path(desk4_iet(0), 50, unit="zorich")
    with pytest.raises(DomainError):
        oseledets_splitting(path, 10, 20)
    with pytest.raises(DomainError):
        oseledets_splitting(path, 45, 20)


def test_subspace_intersection_basic():
    u = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]])
    v = np.array([[1.0, 0.0], [0.0, 0.0], [0.0, 1.0]])
    cap = subspace_intersection(u, v)
    assert cap.shape[1] == 1
    assert abs(abs(cap[0, 0]) - 1.0) < 1e-12


# ------------------------------------------------------ origin-level frames

def test_unstable_vector_at_origin():
    iet = desk4_iet(0)
    path = induction_path(iet, 400, unit="zorich")
    zr = random_surface(iet, default_rng(7))
    h0 = np.array([float(h) for h in zr.heights])
    v2 = unstable_vector_at_origin(path, h0, pull_window=80, refine_steps=40)
    assert np.linalg.norm(v2) == pytest.approx(1.0)
    perm0 = path.perms[0]
    # no most-contracted content: pairing with h0 vanishes by construction
    assert abs(dual_pairing(v2, h0, perm0, "symplectic")) < 1e-10
    # no top content: pairing with the most contracted direction vanishes
    b1 = backward_flag_at_origin(path, 1, 80)[:, 0]
    ref = abs(dual_pairing(h0 / np.linalg.norm(h0), b1, perm0, "symplectic"))
    assert abs(dual_pairing(v2, b1, perm0, "symplectic")) < 1e-8 * ref
    # stepwise growth over the clean horizon shows the second exponent
    v = v2.copy()
    logs = [0.0]
    for i in range(70):
        v = path.acting_matrix(i).astype(float) @ v
        nv = np.linalg.norm(v)
        logs.append(logs[-1] + math.log(nv))
        v /= nv
    slope = (logs[70] - logs[40]) / (path.cumulative_tau[70]
                                     - path.cumulative_tau[40])
    assert 0.2 < slope < 0.55


def test_unstable_vector_rejects_genus_one():
    path = induction_path(GOLDEN, 50)
    with pytest.raises(DomainError):
        unstable_vector_at_origin(path, np.ones(2), pull_window=20)
