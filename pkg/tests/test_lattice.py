import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rsolab.disorder import CouplingField, SingleSiteProfile
from rsolab.lattice import (
    BC,
    BoxSpec,
    HamiltonianMatrix,
    PotentialField,
    assemble_alloy_potential,
    build_hamiltonian,
    dirichlet_1d_spectrum,
    kronecker_sum_spectrum,
    periodic_background,
)


def field(values):
    return CouplingField(np.asarray(values, dtype=float), None, 0, 0)


def test_dirichlet_three_sites():
    H = build_hamiltonian(BoxSpec((3,)))
    np.testing.assert_array_equal(H.dense(), [[2, -1, 0], [-1, 2, -1], [0, -1, 2]])
    w = np.linalg.eigvalsh(H.dense())
    np.testing.assert_allclose(w, [2 - np.sqrt(2), 2, 2 + np.sqrt(2)], atol=1e-14)


def test_neumann_edge():
    H = build_hamiltonian(BoxSpec((2,), bc="neumann"))
    np.testing.assert_array_equal(H.dense(), [[1, -1], [-1, 1]])
    np.testing.assert_allclose(np.linalg.eigvalsh(H.dense()), [0, 2], atol=1e-15)


def test_periodic_ring_spectrum():
    n = 7
    H = build_hamiltonian(BoxSpec((n,), bc="periodic"))
    want = np.sort(2 - 2 * np.cos(2 * np.pi * np.arange(n) / n))
    np.testing.assert_allclose(np.linalg.eigvalsh(H.dense()), want, atol=1e-13)


def test_dirichlet2_adds_two_per_exterior_edge():
    H = build_hamiltonian(BoxSpec((3,), bc="dirichlet2"))
    np.testing.assert_array_equal(np.diag(H.dense()), [3, 2, 3])


def test_2d_kronecker_sum():
    H = build_hamiltonian(BoxSpec((3, 3)))
    s = dirichlet_1d_spectrum(3)
    np.testing.assert_allclose(np.linalg.eigvalsh(H.dense()), kronecker_sum_spectrum(s, s), atol=1e-12)


def test_bandwidth_is_product_of_leading_sides():
    assert build_hamiltonian(BoxSpec((4, 5))).bandwidth == 5
    assert build_hamiltonian(BoxSpec((2, 3, 4))).bandwidth == 12
    assert build_hamiltonian(BoxSpec((9,))).bandwidth == 1


def test_spacing_scales_stencil():
    H = build_hamiltonian(BoxSpec((3,), spacing=0.5))
    assert H.dense()[0, 1] == -4.0
    assert H.dense()[1, 1] == 8.0


def test_lower_bound_is_min_potential():
    box = BoxSpec((4,))
    H = build_hamiltonian(box, PotentialField(box, [3.0, -1.0, 2.0, 0.5]))
    assert H.lower_bound == -1.0
    assert np.linalg.eigvalsh(H.dense()).min() >= H.lower_bound


def test_potential_shape_mismatch():
    with pytest.raises(ValueError):
        build_hamiltonian(BoxSpec((3,)), np.zeros(4))
    with pytest.raises(ValueError):
        build_hamiltonian(BoxSpec((3,)), PotentialField(BoxSpec((4,)), np.zeros(4)))


def test_potential_rejects_nonfinite():
    with pytest.raises(ValueError):
        PotentialField(BoxSpec((2,)), [0.0, np.nan])


def test_box_validation():
    for bad in [(), (0,), (1, 2, 3, 4)]:
        with pytest.raises(ValueError):
            BoxSpec(bad)
    with pytest.raises(ValueError):
        BoxSpec((2,), spacing=0.0)


def test_box_roundtrip():
    box = BoxSpec((3, 4), 0.25, BC.NEUMANN)
    assert BoxSpec.from_dict(json.loads(json.dumps(box.to_dict()))) == box
    assert box.volume == 12 * 0.25 ** 2


def test_hamiltonian_json_roundtrip():
    box = BoxSpec((3, 2))
    H = build_hamiltonian(box, np.arange(6.0))
    H2 = HamiltonianMatrix.from_json(H.to_json())
    np.testing.assert_array_equal(H2.dense(), H.dense())
    assert H2.lower_bound == H.lower_bound
    V = PotentialField(box, np.arange(6.0))
    np.testing.assert_array_equal(PotentialField.from_json(V.to_json()).values, V.values)


def test_alloy_identity_profile():
    box = BoxSpec((5,))
    V = assemble_alloy_potential(field(np.ones(5)), SingleSiteProfile.site(1), box)
    np.testing.assert_array_equal(V.values, np.ones(5))


def test_alloy_single_coupling():
    box = BoxSpec((4, 4))
    w = np.zeros(16)
    w[6] = 1.0
    V = assemble_alloy_potential(field(w), SingleSiteProfile.site(2), box)
    np.testing.assert_array_equal(V.values, w)


def test_alloy_matches_hand_convolution():
    # brute-force oracle: V(x) = sum_k w_k u(x - k) with u = chi_0 - 0.5 chi_1
    n = 12
    w = np.random.default_rng(42).uniform(size=n)
    V = assemble_alloy_potential(field(w), SingleSiteProfile(((0,), (1,)), (1.0, -0.5)), BoxSpec((n,)))
    ref = np.zeros(n)
    for x in range(n):
        for k in range(n):
            ref[x] += w[k] * {0: 1.0, 1: -0.5}.get(x - k, 0.0)
    np.testing.assert_allclose(V.values, ref, atol=1e-15)


def test_alloy_mask_suppresses_couplings():
    box = BoxSpec((4,))
    cf = CouplingField(np.ones(4), np.array([True, False, True, False]), 0, 0)
    V = assemble_alloy_potential(cf, SingleSiteProfile.site(1), box)
    np.testing.assert_array_equal(V.values, [1, 0, 1, 0])


def test_alloy_errors():
    box = BoxSpec((3,))
    with pytest.raises(ValueError):
        assemble_alloy_potential(field([1.0, np.inf, 0.0]), SingleSiteProfile.site(1), box)
    with pytest.raises(ValueError):
        assemble_alloy_potential(field(np.ones(3)), SingleSiteProfile.site(2), box)


def test_periodic_background():
    box = BoxSpec((6,))
    np.testing.assert_array_equal(periodic_background([0], box).values, np.zeros(6))
    np.testing.assert_array_equal(periodic_background([2.5], box).values, np.full(6, 2.5))
    np.testing.assert_array_equal(periodic_background([0, 1], box).values, [0, 1, 0, 1, 0, 1])
    with pytest.raises(ValueError):
        periodic_background([], box)
    with pytest.raises(ValueError):
        periodic_background([0, 1, 2, 3], BoxSpec((6,), bc="periodic"))


@st.composite
def boxes(draw):
    d = draw(st.integers(1, 3))
    sides = tuple(draw(st.integers(1, 5)) for _ in range(d))
    bc = draw(st.sampled_from(list(BC)))
    return BoxSpec(sides, bc=bc)


@given(boxes(), st.integers(0, 2 ** 32 - 1))
def test_symmetric_and_psd(box, seed):
    V = np.random.default_rng(seed).uniform(0, 2, box.n_sites)
    M = build_hamiltonian(box, V).dense()
    assert np.array_equal(M, M.T)
    assert np.linalg.eigvalsh(M).min() >= -1e-12


@given(boxes(), st.integers(0, 2 ** 32 - 1))
def test_monotone_in_potential(box, seed):
    rng = np.random.default_rng(seed)
    V1 = rng.normal(size=box.n_sites)
    V2 = V1 + rng.uniform(0, 1, box.n_sites)
    w1 = np.linalg.eigvalsh(build_hamiltonian(box, V1).dense())
    w2 = np.linalg.eigvalsh(build_hamiltonian(box, V2).dense())
    assert np.all(w1 <= w2 + 1e-12)


@given(st.lists(st.integers(1, 5), min_size=1, max_size=3), st.integers(0, 2 ** 32 - 1))
def test_dirichlet_dominates_neumann(sides, seed):
    V = np.random.default_rng(seed).normal(size=int(np.prod(sides)))
    wd = np.linalg.eigvalsh(build_hamiltonian(BoxSpec(tuple(sides)), V).dense())
    wn = np.linalg.eigvalsh(build_hamiltonian(BoxSpec(tuple(sides), bc="neumann"), V).dense())
    assert np.all(wn <= wd + 1e-12)


@given(boxes())
def test_off_diagonals_are_minus_one(box):
    M = build_hamiltonian(box).dense()
    off = M - np.diag(np.diag(M))
    assert set(np.unique(off)) <= {0.0, -1.0, -2.0}
    if all(s >= 3 for s in box.sides) or box.bc is not BC.PERIODIC:
        assert set(np.unique(off)) <= {0.0, -1.0}
