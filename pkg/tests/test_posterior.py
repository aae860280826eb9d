import numpy as np
import pytest

from poistomo.fields import tv_arrays
from poistomo.posterior import TGPosterior


def transition_logdensity(src, dst, g_src, delta):
    """Log density (up to constant) of the drift proposal dst | src."""
    mean = ((2.0 - delta) * src - 2.0 * delta * g_src) / (2.0 + delta)
    var = 8.0 * delta / (2.0 + delta) ** 2
    return -float(np.sum((dst - mean) ** 2)) / (2.0 * var)


@pytest.mark.parametrize("delta", [0.05, 0.3, 1.0, 1.9])
def test_rho_difference_is_exact_mh_log_ratio(post16, delta):
    """Oracle: for ANY drift vectors, rho(z,v) - rho(v,z) must equal the
    Metropolis log ratio assembled from the explicit Gaussian transition
    densities and the reference-weighted posterior densities."""
    rng = np.random.default_rng(71)
    for _ in range(6):
        z = 0.5 * rng.standard_normal(60)
        v = 0.5 * rng.standard_normal(60)
        g_z = rng.standard_normal(60)
        g_v = rng.standard_normal(60)
        lhs = post16.rho(z, v, g_z, delta) - post16.rho(v, z, g_v, delta)
        rhs = (post16.psi(z) - post16.psi(v)
               + 0.5 * (float(z @ z) - float(v @ v))
               + transition_logdensity(v, z, g_v, delta)
               - transition_logdensity(z, v, g_z, delta))
        assert lhs == pytest.approx(rhs, abs=1e-10)


def test_rho_zero_drift_collapses_to_psi(post16):
    rng = np.random.default_rng(3)
    z = rng.standard_normal(60)
    v = rng.standard_normal(60)
    zero = np.zeros(60)
    assert post16.rho(z, v, zero, 0.3) == pytest.approx(post16.psi(z))


def test_rho_validates_delta_and_shapes(post16):
    z = np.zeros(60)
    with pytest.raises(ValueError):
        post16.rho(z, z, z, -0.1)
    with pytest.raises(ValueError):
        post16.rho(z, z, z, 2.5)
    with pytest.raises(ValueError):
        post16.rho(z, np.zeros(59), z, 0.3)


def test_psi_splits_into_phi_and_tv(post16, basis60):
    rng = np.random.default_rng(13)
    c = 0.4 * rng.standard_normal(60)
    ev = post16.evaluate(c)
    g = post16.grid
    z = basis60.synthesize_values(c).reshape(g.shape)
    assert ev.reg == pytest.approx(1.0 * tv_arrays(z, g.hx, g.hy), rel=1e-12)
    assert ev.psi == pytest.approx(ev.phi + ev.reg, rel=1e-12)
    assert np.all(ev.theta > 0.0)


def test_smooth_posterior_has_zero_reg(post16_smooth):
    c = np.full(60, 0.2)
    ev = post16_smooth.evaluate(c)
    assert ev.reg == 0.0
    assert ev.psi == ev.phi


def test_phi_grad_at_reuses_evaluation(post16_smooth):
    rng = np.random.default_rng(19)
    c = 0.3 * rng.standard_normal(60)
    ev = post16_smooth.evaluate(c)
    assert np.allclose(post16_smooth.phi_grad_at(ev),
                       post16_smooth.phi_grad(c))


def test_psi_grad_refuses_nonsmooth(post16, post16_smooth):
    c = np.zeros(60)
    with pytest.raises(ValueError):
        post16.psi_grad(c)
    assert np.allclose(post16_smooth.psi_grad(c), post16_smooth.phi_grad(c))


def test_posterior_validation(op16, rep, basis60, sino16):
    with pytest.raises(ValueError):
        TGPosterior(op16, rep, basis60, sino16, tv_weight=-0.5)
