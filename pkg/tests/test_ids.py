import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rsolab.disorder import DisorderSpec, SingleSiteProfile, Uniform
from rsolab.ids import (
    CountingFunction,
    EnsembleTable,
    GridTooCoarse,
    bc_gap,
    bracketing_audit,
    counting_function,
    detect_jumps,
    grid_counts,
    ids_ensemble,
    laplace_transform,
    localized_trace,
    percolation_ids,
)
from rsolab.lattice import BC, BoxSpec, build_cluster_hamiltonian, build_hamiltonian, dirichlet_1d_spectrum
from rsolab.model import AlloyModel
from rsolab.spectra import count_below


def test_counting_function_examples():
    cf = counting_function(build_hamiltonian(BoxSpec((3,))))
    assert cf(10.0) == 1.0
    assert cf(-1.0) == 0.0
    assert cf(2.0) == pytest.approx(1 / 3)


def test_counting_function_matches_count_below():
    model = AlloyModel.anderson(2, 0.0, 3.0)
    box = model.box(9)
    H = model.hamiltonian(box, 5, 0)
    cf = counting_function(H)
    grid = np.linspace(-0.5, 12, 20)
    np.testing.assert_array_equal(cf.counts(grid), count_below(H, grid))
    np.testing.assert_array_equal(grid_counts(H, grid), count_below(H, grid))


def test_volume_normalisation_with_spacing():
    box = BoxSpec((4,), spacing=0.5)
    cf = counting_function(build_hamiltonian(box))
    assert cf(1e9) == 4 / (4 * 0.5)


def test_laplace_transform_examples():
    assert laplace_transform(CountingFunction(np.array([0.0]), 1.0), 1.0) == 1.0
    assert laplace_transform(CountingFunction(np.array([0.0, np.log(2)]), 2.0), 1.0) == pytest.approx(0.75)
    with pytest.raises(ValueError):
        laplace_transform(CountingFunction(np.array([0.0]), 1.0), 0.0)


@given(st.lists(st.floats(0, 10), min_size=1, max_size=20))
def test_laplace_completely_monotone(vals):
    cf = CountingFunction(np.array(vals), float(len(vals)))
    t = np.linspace(0.5, 3, 6)
    L = np.array([laplace_transform(cf, s) for s in t])
    for k in range(1, 4):
        diff = np.diff(L, n=k)
        assert np.all((-1) ** k * diff >= -1e-12)


def test_ensemble_zero_disorder_has_zero_variance():
    tabs = ids_ensemble(AlloyModel.free(1), [16, 32], 5, np.linspace(0, 4, 9), 0)
    for t in tabs.values():
        assert np.all(t.variance == 0)


def test_degenerate_couplings_shift_free_ids():
    c = 0.7
    model = AlloyModel(DisorderSpec(Uniform(c, c)), 1, SingleSiteProfile.site(1))
    # offset keeps grid points off the (exactly representable) levels
    grid = np.linspace(0, 5, 41) + 0.00317
    tab = ids_ensemble(model, [20], 3, grid, 1)[20]
    free = np.searchsorted(dirichlet_1d_spectrum(20) + c, grid, side="left") / 20
    np.testing.assert_allclose(tab.mean, free, rtol=0, atol=1e-15)
    assert np.all(tab.variance <= 1e-30)


def test_ensemble_bounds_and_monotone():
    tab = ids_ensemble(AlloyModel.anderson(2), [6], 10, np.linspace(-1, 10, 30), 4)[6]
    assert np.all(tab.mean >= 0) and np.all(tab.mean <= 1)
    assert np.all(np.diff(tab.mean) >= 0)


def test_ensemble_deterministic_across_workers():
    m = AlloyModel.anderson(1)
    g = np.linspace(0, 5, 11)
    a = ids_ensemble(m, [50], 6, g, 9, workers=1)[50]
    b = ids_ensemble(m, [50], 6, g, 9, workers=3)[50]
    assert np.array_equal(a.mean, b.mean) and np.array_equal(a.m2, b.m2)


def test_merge_matches_pooled(rng):
    S = rng.normal(size=(17, 5))
    E = np.arange(5.0)
    whole = EnsembleTable.from_samples(E, S)
    merged = EnsembleTable.from_samples(E, S[:6]).merge(EnsembleTable.from_samples(E, S[6:]))
    np.testing.assert_allclose(merged.mean, whole.mean, atol=1e-14)
    np.testing.assert_allclose(merged.variance, whole.variance, atol=1e-13)
    assert merged.count == 17
    with pytest.raises(ValueError):
        whole.merge(EnsembleTable.from_samples(E + 1, S))


@given(st.integers(1, 6), st.integers(1, 6), st.integers(1, 6), st.integers(0, 10 ** 6))
def test_merge_associative(a, b, c, seed):
    r = np.random.default_rng(seed)
    E = np.arange(3.0)
    A, B, C = (EnsembleTable.from_samples(E, r.normal(size=(k, 3))) for k in (a, b, c))
    x, y = A.merge(B).merge(C), A.merge(B.merge(C))
    np.testing.assert_allclose(x.mean, y.mean, atol=1e-12)
    np.testing.assert_allclose(x.m2, y.m2, atol=1e-10)


def test_table_csv(tmp_path):
    tab = EnsembleTable.from_samples([0.0, 1.0], [[0.1, 0.2], [0.3, 0.4]], seed=3, keep_samples=True)
    p = tab.to_csv(tmp_path / "t.csv")
    assert p.read_text().splitlines()[0] == "energy,mean,variance,trials"
    assert (tmp_path / "t.json").exists()
    rows = tab.samples_to_csv(tmp_path / "s.csv").read_text().splitlines()
    assert rows[0] == "trial,energy,value" and len(rows) == 5


def test_localized_trace_close_to_ensemble():
    model = AlloyModel.anderson(1)
    grid = np.linspace(0.5, 4.5, 9)
    lt = localized_trace(model, 64, grid, 2, trials=20)
    ens = ids_ensemble(model, [256], 20, grid, 2)[256]
    err = np.sqrt(lt.stderr ** 2 + ens.stderr ** 2) + 4 / 256
    assert np.all(np.abs(lt.mean - ens.mean) <= 4 * err)
    with pytest.raises(ValueError):
        localized_trace(model, 8, grid, 0, factor=2)


def test_bracketing_free_split():
    rep = bracketing_audit(AlloyModel.free(1), BoxSpec((4,)), 0, 2, 0)
    assert rep.ok


def test_bracketing_random_2d():
    model = AlloyModel.anderson(2, -1.0, 2.0)
    for t in range(100):
        rep = bracketing_audit(model, BoxSpec((8, 8)), t % 2, 1 + t % 7, 11, t)
        assert rep.ok, rep.violations[:3]


def test_bracketing_bad_split():
    with pytest.raises(ValueError):
        bracketing_audit(AlloyModel.free(1), BoxSpec((4,)), 0, 4, 0)


def test_bc_gap_free_1d():
    for l in (16, 64, 256):
        gap = bc_gap(AlloyModel.free(1), [l], np.linspace(0, 4, 401), 1, 0)[l]
        assert gap <= 2 / l + 1e-15


def test_bc_gap_free_2d_decays():
    grid = np.linspace(0, 8, 801)
    g = bc_gap(AlloyModel.free(2), [8, 16, 32], grid, 1, 0)
    assert g[8] > g[16] > g[32]
    slope = np.polyfit(np.log([8, 16, 32]), np.log([g[8], g[16], g[32]]), 1)[0]
    assert -1.3 < slope < -0.7


def test_detect_jumps_smooth_and_step():
    E = np.linspace(0, 1, 1001)
    smooth = EnsembleTable.from_samples(E, [E / 2])
    assert detect_jumps(smooth, 0.01, max_step=1e-3 + 1e-12) == []
    step = EnsembleTable.from_samples(E, [0.5 * E + 0.05 * (E >= 0.5)])
    j = detect_jumps(step, 0.01, max_step=1e-3 + 1e-12)
    assert len(j) == 1 and j[0].size == pytest.approx(0.05 + 0.0005, abs=1e-12)
    assert 0.499 <= j[0].energy <= 0.5


def test_detect_jumps_coarse():
    with pytest.raises(GridTooCoarse):
        detect_jumps(EnsembleTable.from_samples([0.0, 1.0], [[0.0, 1.0]]), 0.01)
    with pytest.raises(GridTooCoarse):
        detect_jumps(EnsembleTable.from_samples([0.0], [[0.0]]), 0.01)


def test_pendant_cluster_has_eigenvalue_one():
    # sites u - w - v in a row; w also touches a fourth site x
    box = BoxSpec((3, 3), bc="neumann")
    keep = np.zeros(9, dtype=bool)
    keep[[3, 4, 5, 1]] = True
    H = build_cluster_hamiltonian(box, keep)
    M = H.dense()
    w, V = np.linalg.eigh(M)
    assert np.any(np.abs(w - 1.0) < 1e-12)
    # the antisymmetric vector on the two pendants u, v
    sites = list(H.sites)
    psi = np.zeros(4)
    psi[sites.index(3)], psi[sites.index(5)] = 1.0, -1.0
    np.testing.assert_allclose(M @ psi, psi, atol=1e-15)


def test_percolation_p_one_equals_neumann_lattice():
    grid = np.linspace(0, 8, 81) + 0.00317
    tabs, jumps = percolation_ids(1.0, [8], 2, grid, 0, threshold=0.01)
    free = np.searchsorted(np.linalg.eigvalsh(build_hamiltonian(BoxSpec((8, 8), bc="neumann")).dense()),
                           grid, side="left") / 64
    np.testing.assert_array_equal(tabs[8].mean, free)
    assert tabs[8].variance.max() == 0


def test_percolation_invalid_p():
    with pytest.raises(ValueError):
        percolation_ids(0.0, [4], 1, [0.0, 1.0], 0)


@pytest.mark.slow
def test_percolation_jump_at_one():
    grid = np.arange(0.9, 1.1, 1e-3)
    tabs, jumps = percolation_ids(0.7, [32], 20, grid, 5, threshold=0.002)
    assert any(abs(j.energy - 1.0) < 1e-3 for j in jumps[32])


def test_bracketing_dirichlet_bc_enum():
    # the audit accepts any bc on the input box and uses its own three
    rep = bracketing_audit(AlloyModel.anderson(1), BoxSpec((10,), bc=BC.NEUMANN), 0, 3, 1)
    assert rep.ok and rep.n_energies > 0
