import numpy as np
import pytest

from poistomo.fields import Grid, ScalarField
from poistomo.klbasis import (CovarianceSpec, build_kl_basis, load_basis,
                              save_basis)


def kernel_matrix(grid: Grid, cov: CovarianceSpec) -> np.ndarray:
    """Dense covariance kernel on pixel centers, built from scratch."""
    x, y = grid.centers()
    xs = np.repeat(x, grid.ny)
    ys = np.tile(y, grid.nx)
    d1 = np.abs(xs[:, None] - xs[None, :])
    d2 = np.abs(ys[:, None] - ys[None, :])
    return cov.gamma * np.exp(-(d1 + d2) / cov.corr_len)


def test_modes_satisfy_weighted_eigenproblem():
    # each mode solves  (K * cell) e = eta e  for the dense kernel
    grid = Grid(7, 5)
    cov = CovarianceSpec(gamma=1.7, corr_len=0.4)
    basis = build_kl_basis(grid, cov, 12)
    K = kernel_matrix(grid, cov)
    A = K * grid.cell
    for i in range(12):
        e = basis.modes[i]
        resid = A @ e - basis.eigenvalues[i] * e
        assert np.abs(resid).max() < 1e-10


def test_modes_orthonormal_in_cell_weighted_product():
    grid = Grid(6, 9)
    basis = build_kl_basis(grid, CovarianceSpec(gamma=2.0, corr_len=0.25), 15)
    G = grid.cell * (basis.modes @ basis.modes.T)
    assert np.abs(G - np.eye(15)).max() < 1e-10


def test_leading_pair_matches_power_iteration():
    # independent oracle: power iteration on the dense weighted kernel
    grid = Grid(8, 8)
    cov = CovarianceSpec(gamma=2.0, corr_len=0.3)
    A = kernel_matrix(grid, cov) * grid.cell
    v = np.ones(grid.npix)
    lam = 0.0
    for _ in range(4000):
        w = A @ v
        lam = np.linalg.norm(w)
        v = w / lam
    basis = build_kl_basis(grid, cov, 4)
    assert basis.eigenvalues[0] == pytest.approx(lam, rel=1e-8)
    e = basis.modes[0] / np.linalg.norm(basis.modes[0])
    assert min(np.abs(e - v).max(), np.abs(e + v).max()) < 1e-6


def test_eigenvalues_sorted_descending():
    basis = build_kl_basis(Grid(10, 10), CovarianceSpec(corr_len=0.2), 30)
    assert np.all(np.diff(basis.eigenvalues) <= 1e-15)


def test_full_trace_equals_gamma():
    # sum of all npix eigenvalues = trace(K cell) = gamma (kernel is 1 on
    # the diagonal)
    grid = Grid(9, 6)
    for gamma in (1.0, 2.0, 3.5):
        basis = build_kl_basis(grid, CovarianceSpec(gamma=gamma, corr_len=0.15),
                               grid.npix)
        assert basis.eigenvalues.sum() == pytest.approx(gamma, rel=1e-6)


def test_project_inverts_synthesize():
    grid = Grid(8, 8)
    basis = build_kl_basis(grid, CovarianceSpec(corr_len=0.2), 20)
    rng = np.random.default_rng(1)
    c = rng.standard_normal(20)
    f = basis.synthesize(c)
    coeffs = basis.project(f, 20) / np.sqrt(basis.eigenvalues)
    assert np.abs(coeffs - c).max() < 1e-10


def test_project_with_nonzero_mean():
    grid = Grid(6, 6)
    basis = build_kl_basis(grid, CovarianceSpec(corr_len=0.2), 10, mean=1.3)
    c = np.zeros(10)
    f = basis.synthesize(c)
    assert np.allclose(f.values, 1.3)


def test_pullback_is_adjoint_of_synthesize_direction():
    # <synthesize'(dc), w> pixelwise = <dc, pullback(w)> euclidean
    grid = Grid(7, 7)
    basis = build_kl_basis(grid, CovarianceSpec(corr_len=0.3), 14)
    rng = np.random.default_rng(4)
    dc = rng.standard_normal(14)
    w = rng.standard_normal(grid.npix)
    push = (dc * np.sqrt(basis.eigenvalues)) @ basis.modes
    assert float(push @ w) == pytest.approx(float(dc @ basis.pullback(w)),
                                            rel=1e-12)


def test_sampled_field_moments_match_kernel():
    # MC check: pixel covariance of synthesized reference draws matches the
    # kernel at probe pairs within 5 standard errors
    grid = Grid(6, 6)
    cov = CovarianceSpec(gamma=2.0, corr_len=0.5)
    basis = build_kl_basis(grid, cov, grid.npix)
    rng = np.random.default_rng(9)
    n = 20000
    draws = np.empty((n, grid.npix))
    for k in range(n):
        draws[k] = basis.synthesize_values(basis.sample_reference(rng))
    K = kernel_matrix(grid, cov)
    pairs = [(0, 0), (5, 5), (0, 35), (12, 13), (7, 30)]
    for i, j in pairs:
        est = np.mean(draws[:, i] * draws[:, j]) \
            - draws[:, i].mean() * draws[:, j].mean()
        # var of a covariance estimate of jointly gaussian pairs
        se = np.sqrt((K[i, i] * K[j, j] + K[i, j] ** 2) / n)
        assert abs(est - K[i, j]) < 5 * se


def test_apply_c0_scales_by_eigenvalues():
    basis = build_kl_basis(Grid(5, 5), CovarianceSpec(corr_len=0.2), 8)
    v = np.arange(1.0, 9.0)
    assert np.allclose(basis.apply_c0(v), basis.eigenvalues * v)
    assert np.allclose(basis.apply_c0_sqrt(v), np.sqrt(basis.eigenvalues) * v)


def test_floor_applied_to_tiny_eigenvalues(caplog):
    # a very long correlation length makes the kernel numerically rank
    # deficient; trailing eigenvalues get floored, with a warning
    import logging
    grid = Grid(32, 32)
    with caplog.at_level(logging.WARNING, logger="poistomo.klbasis"):
        basis = build_kl_basis(grid, CovarianceSpec(corr_len=1e6), grid.npix)
    assert np.all(basis.eigenvalues > 0.0)
    assert any("clamped" in r.getMessage() for r in caplog.records)


def test_n_modes_bounds():
    grid = Grid(4, 4)
    with pytest.raises(ValueError):
        build_kl_basis(grid, CovarianceSpec(), 17)
    with pytest.raises(ValueError):
        build_kl_basis(grid, CovarianceSpec(), 0)


def test_covariance_spec_validation():
    with pytest.raises(ValueError):
        CovarianceSpec(gamma=0.0)
    with pytest.raises(ValueError):
        CovarianceSpec(corr_len=-1.0)


def test_save_load_roundtrip(tmp_path):
    grid = Grid(6, 7)
    basis = build_kl_basis(grid, CovarianceSpec(gamma=1.5, corr_len=0.2), 11,
                           mean=0.7)
    path = tmp_path / "basis.klb"
    save_basis(basis, path)
    back = load_basis(path)
    assert back.grid == basis.grid
    assert back.cov == basis.cov
    assert np.array_equal(back.eigenvalues, basis.eigenvalues)
    assert np.array_equal(back.modes, basis.modes)
    assert np.array_equal(back.mean, basis.mean)


def test_load_rejects_wrong_magic(tmp_path):
    path = tmp_path / "bad.klb"
    path.write_bytes(b"NOPE" + b"\x00" * 64)
    with pytest.raises(ValueError):
        load_basis(path)


def test_synthesize_returns_field_on_grid():
    grid = Grid(5, 8)
    basis = build_kl_basis(grid, CovarianceSpec(corr_len=0.2), 6)
    f = basis.synthesize(np.zeros(6))
    assert isinstance(f, ScalarField)
    assert f.grid == grid
