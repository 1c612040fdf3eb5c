import numpy as np
import pytest

from cgolab.grid import ball_mask, spectral_derivative, make_field
from cgolab.media import (
    MediumPair,
    check_admissibility,
    compute_fg,
    log_fields,
    make_bump_medium,
    make_exp_medium,
)


def test_background_medium(grid16):
    m = make_bump_medium(grid16, mu0=2.0, eps0=3.0, omega=1.5)
    assert np.abs(m.mu.values - 2.0).max() == 0.0
    assert np.abs(m.gamma.values - 3.0).max() == 0.0
    assert check_admissibility(m).passed


def test_single_bump_admissible(grid16):
    m = make_bump_medium(
        grid16,
        mu_bumps=[(0.1, 0.2, 0.0, -0.1, 0.8)],
        gamma_bumps=[(0.15 + 0.05j, -0.2, 0.1, 0.0, 0.7)],
        bound_m=10.0,
    )
    rep = check_admissibility(m)
    assert rep.passed
    assert rep.min_mu >= 1.0 / 10.0
    assert rep.min_re_gamma >= 1.0 / 10.0
    # compact profile: exact support outside the ball
    outside = grid16.radius() > m.rho
    assert np.abs(m.mu.values - 1.0)[outside].max() == 0.0


def test_bump_lower_bound_violation(grid16):
    with pytest.raises(ValueError, match="admissibility"):
        make_bump_medium(grid16, mu_bumps=[(-1.0, 0.0, 0.0, 0.0, 0.8)])


def test_bump_support_violation(grid16):
    with pytest.raises(ValueError, match="support ball"):
        make_bump_medium(grid16, mu_bumps=[(0.1, 1.4, 0.0, 0.0, 0.8)])


def test_w2inf_budget_flagged(grid16):
    with pytest.raises(ValueError, match="admissibility"):
        make_bump_medium(grid16, mu_bumps=[(0.4, 0.0, 0.0, 0.0, 0.5)], bound_m=2.0)


def test_admissibility_failure_location(grid16):
    m = make_bump_medium(grid16, gamma_bumps=[(0.2, 0.0, 0.0, 0.0, 0.9)])
    # manufacture a dipping-gamma medium around the constructor
    bad_vals = m.gamma.values.copy()
    center = (grid16.n // 2,) * 3
    bad_vals[center] = 1e-4
    bad = type(m)(
        grid=m.grid, mu=m.mu, gamma=make_field(grid16, "scalar", bad_vals),
        mu0=m.mu0, eps0=m.eps0, omega=m.omega, bound_m=m.bound_m, rho=m.rho,
        support_tol=m.support_tol,
    )
    rep = check_admissibility(bad)
    assert not rep.passed
    names = [f[0] for f in rep.failures]
    assert "re_gamma_lower_bound" in names
    loc = dict((f[0], f[2]) for f in rep.failures)["re_gamma_lower_bound"]
    assert loc == center


def test_log_fields_round_trip(grid16):
    m = make_bump_medium(
        grid16,
        mu_bumps=[(0.2, 0.1, 0.0, 0.0, 0.9)],
        gamma_bumps=[(0.3 + 0.1j, 0.0, -0.1, 0.1, 0.8)],
    )
    lf = log_fields(m)
    assert np.abs(np.exp(lf.alpha.values) - m.gamma.values).max() < 1e-12 * np.abs(m.gamma.values).max()
    assert np.abs(np.exp(lf.beta.values) - m.mu.values).max() < 1e-12 * np.abs(m.mu.values).max()
    # principal branch keeps the argument in (-pi/2, pi/2)
    assert np.abs(lf.alpha.values.imag).max() < np.pi / 2
    # kappa^2 = omega^2 mu gamma pointwise
    k2 = lf.kappa.values**2
    expect = m.omega**2 * m.mu.values * m.gamma.values
    assert np.abs(k2 - expect).max() < 1e-12 * np.abs(expect).max()
    # kappa equals the background wavenumber outside the bumps
    outside = grid16.radius() > m.rho
    k0 = m.omega * np.sqrt(m.mu0 * m.eps0)
    assert np.abs(lf.kappa.values[outside] - k0).max() < 1e-12


def test_exp_medium_band_limited_logs(grid16):
    m = make_exp_medium(
        grid16,
        alpha_bumps=[(0.1, 0.2, 0.0, -0.1, 0.8)],
        beta_bumps=[(0.08, -0.2, 0.1, 0.0, 0.7)],
        profile="gauss",
        band_limit_modes=4,
    )
    lf = log_fields(m)
    spec = np.fft.fftn(lf.alpha.values - np.log(m.eps0))
    mx, my, mz = grid16.mode_index()
    outside = (np.abs(mx) > 4) | (np.abs(my) > 4) | (np.abs(mz) > 4)
    assert np.abs(spec[outside]).max() < 1e-9 * np.abs(spec).max()


def test_medium_pair_support_hypothesis(grid16):
    m1 = make_exp_medium(grid16, alpha_bumps=[(0.05, 0.1, 0.0, 0.0, 0.6)])
    m2 = make_exp_medium(grid16)
    mask = ball_mask(grid16, 1.0)
    pair = MediumPair(m1, m2, mask, diff_tol=1e-6)
    assert pair.grid == grid16
    # difference leaking outside Omega' is rejected
    small = ball_mask(grid16, 0.3)
    with pytest.raises(ValueError, match="leaks outside"):
        MediumPair(m1, m2, small, diff_tol=1e-6)


def test_compute_fg_equal_media_zero(grid16):
    m = make_exp_medium(grid16, alpha_bumps=[(0.1, 0.0, 0.0, 0.0, 0.8)])
    pair = MediumPair(m, m, ball_mask(grid16, 1.0))
    f, g = compute_fg(pair, ball_mask(grid16, 1.3))
    assert np.abs(f.values).max() == 0.0
    assert np.abs(g.values).max() == 0.0


def test_compute_fg_closed_form(grid32):
    """gamma_1 = eps0 e^{da} against the background: closed-form f and g."""
    grid = grid32
    omega, mu0, eps0 = 1.3, 1.0, 1.0
    m1 = make_exp_medium(
        grid, alpha_bumps=[(0.08, 0.2, -0.1, 0.1, 0.9)], omega=omega,
        profile="gauss", band_limit_modes=5,
    )
    m2 = make_exp_medium(grid, omega=omega)
    mask_o = ball_mask(grid, 1.45)
    pair = MediumPair(m1, m2, ball_mask(grid, 1.3))
    f, g = compute_fg(pair, mask_o)

    da = np.log(m1.gamma.values) - np.log(eps0)
    da_f = make_field(grid, "scalar", da)
    lap = spectral_derivative(da_f, "laplacian").values
    dd = spectral_derivative(da_f, "gradient").values
    grad_sq = -(dd[0] ** 2 + dd[1] ** 2 + dd[2] ** 2)  # true grad . grad
    chi = mask_o.indicator
    f_expect = chi * (0.5 * lap + 0.25 * grad_sq + omega**2 * mu0 * eps0 * (1.0 - np.exp(da)))
    g_expect = chi * (omega**2 * mu0 * eps0 * (1.0 - np.exp(da)))
    scale = np.abs(f_expect).max()
    assert np.abs(f.values - f_expect).max() < 1e-12 * scale
    assert np.abs(g.values - g_expect).max() < 1e-12 * scale


def test_compute_fg_continuity(grid16):
    """Perturbing gamma by eta changes ||f|| by O(eta)."""
    mask_o = ball_mask(grid16, 1.3)
    mask_p = ball_mask(grid16, 1.0)
    norms = {}
    for eta in (1e-3, 1e-4):
        m1 = make_exp_medium(grid16, alpha_bumps=[(eta, 0.0, 0.0, 0.0, 0.8)])
        m2 = make_exp_medium(grid16)
        f, _ = compute_fg(MediumPair(m1, m2, mask_p), mask_o)
        norms[eta] = np.linalg.norm(f.values.ravel())
    ratio = norms[1e-3] / norms[1e-4]
    assert 5.0 < ratio < 20.0  # within a factor 2 of linear scaling
