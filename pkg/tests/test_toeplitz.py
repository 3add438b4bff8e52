import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rsolab.disorder import Uniform
from rsolab.toeplitz import (
    SingularTransform,
    SymbolVanishes,
    as_alpha,
    common_density,
    conditional_density_probe,
    inverse_rowsum,
    inverse_transform,
    pushforward_check,
    symbol,
    symbol_analysis,
    toeplitz_matrix,
    transform_couplings,
)


def test_plus_sites_and_bidiagonal():
    op = toeplitz_matrix({0: 1.0, 1: -0.5}, (3,))
    np.testing.assert_array_equal(op.sites.ravel(), [-1, 0, 1, 2])
    want = np.eye(4) - 0.5 * np.eye(4, k=-1)
    np.testing.assert_array_equal(op.dense(), want)


def test_plain_box_and_dense_oracle(rng):
    alpha = {(0, 0): 2.0, (1, 0): 0.3, (0, -1): -0.4, (1, 1): 0.1}
    op = toeplitz_matrix(alpha, (3, 4), plus=False)
    S = op.sites
    want = np.array([[alpha.get(tuple(S[j] - S[k]), 0.0) for k in range(len(S))] for j in range(len(S))])
    np.testing.assert_array_equal(op.dense(), want)
    om = rng.normal(size=op.size)
    np.testing.assert_allclose(inverse_transform(op, transform_couplings(op, om)), om, atol=1e-13)
    assert op.log_abs_det() == pytest.approx(math.log(abs(np.linalg.det(want))))


def test_alpha_validation():
    with pytest.raises(ValueError):
        as_alpha({0: 0.0})
    with pytest.raises(ValueError):
        as_alpha({(0,): 1.0, (0, 1): 1.0})
    with pytest.raises(ValueError):
        toeplitz_matrix({(0, 0): 1.0}, (4,))
    assert as_alpha([1.0, 2.0]) == {(0,): 1.0, (1,): 2.0}


def test_symbol_examples():
    s = symbol_analysis({0: 1.0})
    assert s.min_abs == pytest.approx(1.0) and s.winding == 0
    s = symbol_analysis({0: 1.0, 1: -0.5})
    assert s.min_abs == pytest.approx(0.5) and s.winding == 0
    assert s.lower_bound > 0.49
    s = symbol_analysis({0: 1.0, 1: 2.0})
    assert s.winding == 1 and s.min_abs == pytest.approx(1.0, abs=1e-6)


def test_symbol_values():
    th = np.linspace(-np.pi, np.pi, 7)
    np.testing.assert_allclose(symbol({0: 1.0, 1: -0.5}, th), 1 - 0.5 * np.exp(1j * th))
    s2 = symbol({(0, 0): 1.0, (1, 0): 0.2, (0, 1): 0.3}, np.array([[0.0, 0.0], [np.pi, np.pi]]))
    np.testing.assert_allclose(s2, [1.5, 0.5])


def test_symbol_vanishes():
    with pytest.raises(SymbolVanishes):
        symbol_analysis({0: 1.0, 1: -1.0})


def test_symbol_csv():
    s = symbol_analysis({0: 1.0, 1: -0.5}, points=16)
    lines = s.to_csv().splitlines()
    assert lines[0] == "theta,re_s,im_s,abs_s" and len(lines) == 17
    with pytest.raises(ValueError):
        symbol_analysis({(0, 0): 1.0}, points=16).to_csv()


@pytest.mark.parametrize("n", [4, 64, 1024, 4096])
def test_rowsum_bidiagonal(n):
    r = inverse_rowsum(toeplitz_matrix({0: 1.0, 1: -0.5}, (n,)))
    assert r.bound == pytest.approx(2.0)
    assert r.ok and r.norm <= 2.0 and r.identity_residual <= 1e-12
    # exact row sum of the inverse of I - S/2 on n+1 sites
    assert r.norm == pytest.approx(2.0 * (1 - 0.5 ** (n + 1)))


def test_rowsum_2d():
    alpha = {(0, 0): 1.0, (1, 0): -0.3, (0, 1): -0.3, (1, 1): 0.25}
    r = inverse_rowsum(toeplitz_matrix(alpha, (32, 32)))
    assert r.ok and r.norm <= r.bound == pytest.approx(1 / 0.15)


def test_rowsum_negative_alpha0():
    r = inverse_rowsum(toeplitz_matrix({0: -2.0, 1: 0.5, -1: 0.5}, (50,)))
    assert r.ok and r.bound == pytest.approx(2.0)


def test_rowsum_not_dominant_has_no_bound():
    r = inverse_rowsum(toeplitz_matrix({0: 1.0, 1: 2.0}, (10,)))
    assert r.bound is None and r.ok is None


@given(st.integers(0, 10 ** 6))
def test_rowsum_property(seed):
    rng = np.random.default_rng(seed)
    raw = rng.uniform(-1, 1, size=3)
    share = rng.uniform(0, 0.99)
    alpha = {0: 1.0, **{o: float(v * share / np.abs(raw).sum()) for o, v in zip((-2, 1, 2), raw)}}
    r = inverse_rowsum(toeplitz_matrix(alpha, (int(rng.integers(2, 100)),)))
    assert r.ok and r.identity_residual <= 1e-10


def test_singular_transform():
    op = toeplitz_matrix({0: 1.0, 1: -1.0, -1: 0.0, 2: 0.0}, (3,), plus=False)
    op.matrix = op.matrix.tolil()
    op.matrix[:, 0] = 0
    op.matrix = op.matrix.tocsr()
    with pytest.raises(SingularTransform):
        op.lu()


def test_common_density_closed_form():
    op = toeplitz_matrix({0: 1.0, 1: -0.5}, (1,))
    f = Uniform(0.0, 1.0)
    assert common_density(op, f, np.array([0.5, 0.1])) == pytest.approx(1.0)
    assert common_density(op, f, np.array([0.5, 0.9])) == 0.0  # omega_2 = 1.15
    with pytest.raises(ValueError):
        transform_couplings(op, np.zeros(3))


def test_pushforward():
    op = toeplitz_matrix({0: 1.0, 1: -0.5}, (1,))
    r = pushforward_check(op, Uniform(0.0, 1.0), 200_000, 8, seed=1)
    assert r.bins_used > 10
    assert r.max_z < 5.0


def test_conditional_divergence():
    op = toeplitz_matrix({0: 1.0, 1: -0.5}, (3,))
    rows = conditional_density_probe(op, Uniform(0.0, 1.0), 1, [0.2, 0.9, 0.99, 0.999, 1.0])
    assert rows[0].rho == pytest.approx(1.0)
    for row, want in zip(rows[1:4], (5.0, 50.0, 500.0)):
        assert row.status == "ok" and row.rho == pytest.approx(want, rel=1e-9)
    assert rows[-1].status == "diverged" and math.isinf(rows[-1].rho)
    with pytest.raises(IndexError):
        conditional_density_probe(op, Uniform(0.0, 1.0), op.size - 1, [0.5])
