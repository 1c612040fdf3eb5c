import csv

import numpy as np
import pytest

from cgolab.grid import GridSpec, ball_mask, make_field
from cgolab.media import MediumPair, log_fields, make_exp_medium
from cgolab.cgo import build_zeta_pair
from cgolab.pipeline import (
    PairingContext,
    carleman_functionals,
    compute_pairing,
    forward_linearized,
    invert_linearized,
    null_test,
    oracle_spectrum,
    sweep_spectrum,
    write_spectrum_csv,
    _mode_index_of_xi,
)

BG = (1.0, 1.0, 1.0)


@pytest.fixture(scope="module")
def small_pair():
    g = GridSpec(24, 2 * np.pi)
    # equal amplitude and width keep the xi = 0 sum/difference split
    # exactly representable by the minimum-norm completion
    m1 = make_exp_medium(
        g,
        alpha_bumps=[(0.01, 0.1, -0.1, 0.1, 1.0)],
        beta_bumps=[(0.01, -0.1, 0.1, -0.1, 1.0)],
        profile="gauss",
        band_limit_modes=6,
        support_tol=0.05,
    )
    m2 = make_exp_medium(g)
    return MediumPair(m1, m2, ball_mask(g, 1.4), diff_tol=0.01)


@pytest.fixture(scope="module")
def ctx(small_pair):
    return PairingContext(small_pair, ball_mask(small_pair.grid, 1.5))


def test_equal_media_pairing_exact_zero():
    g = GridSpec(16, 2 * np.pi)
    m = make_exp_medium(
        g, alpha_bumps=[(0.02, 0.1, 0.0, 0.0, 0.8)], profile="gauss",
        band_limit_modes=3,
    )
    pair = MediumPair(m, m, ball_mask(g, 1.2))
    ctx = PairingContext(pair, ball_mask(g, 1.4))
    assert ctx.delta_q_norm == 0.0
    d = build_zeta_pair((1, 0, 0), 8.0, 1.0, 1.0, 1.0)
    sample = compute_pairing(ctx, d, "f", tol=1e-7)
    assert sample.value == 0.0


def test_pairing_requires_commensurate_xi(ctx):
    d = build_zeta_pair((1.05, 0, 0), 8.0, 1.0, 1.0, 1.0)
    with pytest.raises(ValueError, match="commensurate"):
        compute_pairing(ctx, d, "f")


def test_pairing_converges_to_oracle(ctx):
    xi = (1.0, 0.0, 0.0)
    oracle = oracle_spectrum(ctx, [xi])
    fo, go = oracle[xi]
    for mode, target in (("f", fo), ("g", go)):
        errs = []
        for tau in (8.0, 16.0, 32.0):
            d = build_zeta_pair(xi, tau, 1.0, 1.0, 1.0)
            s = compute_pairing(ctx, d, mode, tol=1e-7)
            errs.append(abs(s.value - target))
        assert errs[-1] < 0.01 * abs(target)
        assert errs[0] > errs[-1]


def test_sweep_spectrum_and_csv(ctx, tmp_path):
    xi_list = [(1.0, 0.0, 0.0), (0.0, 1.0, 1.0)]
    est = sweep_spectrum(ctx, xi_list, tau_schedule=(8.0, 16.0), tol=1e-6)
    assert not est.failures
    oracle = oracle_spectrum(ctx, xi_list)
    for xi in [tuple(np.asarray(x)) for x in xi_list]:
        fo, go = oracle[xi]
        assert abs(est.fhat[xi] - fo) < 0.05 * abs(fo)
        assert abs(est.ghat[xi] - go) < 0.05 * abs(go)
        assert est.tau_used[xi] == 16.0
        assert est.extrapolation_error[xi] > 0.0
    path = tmp_path / "spectrum.csv"
    write_spectrum_csv(path, est, oracle)
    with open(path) as fh:
        rows = list(csv.reader(fh))
    assert rows[0][:5] == ["xi1", "xi2", "xi3", "tau", "mode"]
    assert len(rows) == 1 + len(est.samples)
    assert float(rows[1][-1]) >= 0.0  # error column populated


def test_hermitian_symmetry_real_media(ctx):
    """Real coefficients: fhat(-xi) = conj(fhat(xi)) within tau error."""
    est = sweep_spectrum(
        ctx, [(1.0, 0.0, 0.0), (-1.0, 0.0, 0.0)], tau_schedule=(16.0,), tol=1e-6
    )
    plus = est.fhat[(1.0, 0.0, 0.0)]
    minus = est.fhat[(-1.0, 0.0, 0.0)]
    assert abs(minus - np.conj(plus)) < 0.02 * abs(plus)


def test_forward_invert_round_trip(small_pair):
    g = small_pair.grid
    lf1, lf2 = log_fields(small_pair.m1), log_fields(small_pair.m2)
    ref_a = make_field(g, "scalar", (lf1.alpha.values - lf2.alpha.values).real)
    ref_b = make_field(g, "scalar", (lf1.beta.values - lf2.beta.values).real)
    fh_grid, gh_grid = forward_linearized(g, ref_a, ref_b, BG)
    half = g.n // 2
    full = [
        (float(i), float(j), float(k))
        for i in range(-half, half)
        for j in range(-half, half)
        for k in range(-half, half)
    ]
    fh = {xi: complex(fh_grid[_mode_index_of_xi(g, xi)]) for xi in full}
    gh = {xi: complex(gh_grid[_mode_index_of_xi(g, xi)]) for xi in full}
    res = invert_linearized(
        g, fh, gh, BG, reference=(ref_a, ref_b),
        mask_omega_prime=small_pair.mask_omega_prime,
    )
    assert res.rel_error_alpha < 1e-10
    assert res.rel_error_beta < 1e-10
    assert res.verdict == "differ"


def test_invert_zero_spectrum_coincides():
    g = GridSpec(16, 2 * np.pi)
    xi_list = [(1.0, 0.0, 0.0), (0.0, 1.0, 0.0)]
    fh = {xi: 0.0 + 0.0j for xi in xi_list}
    gh = {xi: 0.0 + 0.0j for xi in xi_list}
    res = invert_linearized(g, fh, gh, BG, noise_floor=1e-12)
    assert res.verdict == "coincide"
    assert np.abs(res.delta_alpha.values).max() == 0.0


def test_null_test_verdicts(ctx, small_pair):
    out = null_test(ctx, [(1.0, 0.0, 0.0)], tau=16.0, tol=1e-6)
    assert out["verdict"] == "differ"
    assert out["separation"] > 10.0
    g = small_pair.grid
    m2 = small_pair.m2
    equal = MediumPair(m2, m2, small_pair.mask_omega_prime)
    ctx_eq = PairingContext(equal, ball_mask(g, 1.5))
    out_eq = null_test(ctx_eq, [(1.0, 0.0, 0.0)], tau=16.0, tol=1e-6)
    assert out_eq["verdict"] == "coincide"
    assert out_eq["max_estimate"] == 0.0


def test_carleman_diagnostics(small_pair):
    mask = ball_mask(small_pair.grid, 1.5)
    diag = carleman_functionals(small_pair, mask, (2.6, 0.0, 0.0), (0.3, 0.2, 0.1))
    assert 0.0 < diag.d1 < diag.d2
    assert all(v > 0 for v in diag.lhs_core)
    assert all(np.isfinite(diag.ratio))
    # equal media: both cores vanish identically
    eq = MediumPair(small_pair.m2, small_pair.m2, small_pair.mask_omega_prime)
    diag_eq = carleman_functionals(eq, mask, (2.6, 0.0, 0.0), (0.3, 0.1))
    assert max(diag_eq.lhs_core) == 0.0
    assert max(diag_eq.rhs_core) == 0.0
    with pytest.raises(ValueError, match="outside"):
        carleman_functionals(small_pair, mask, (0.5, 0.0, 0.0), (0.2,))
