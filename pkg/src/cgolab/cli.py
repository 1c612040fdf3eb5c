"""Batch experiment driver with flat-text configs and replayable reports.

Config files are flat ``key = value`` lines with dotted section names and
JSON-parsed values; the sha256 of the canonicalized content is recorded in
every report so a run can be replayed and cross-checked bit-for-bit (to
the determinism tolerance).  Exit codes: 0 pass, 1 check failure,
2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import cgo, grid, media, operators, pipeline

log = logging.getLogger("cgolab")

EXPERIMENTS = (
    "verify-operators",
    "cgo-decay",
    "pairing-sweep",
    "recover",
    "null-test",
    "carleman",
)

EXIT_PASS = 0
EXIT_CHECK_FAILURE = 1
EXIT_CONFIG_ERROR = 2
EXIT_NUMERICAL_FAILURE = 3


class ConfigError(Exception):
    pass


def parse_config_text(text: str) -> dict:
    """Parse ``key = value`` lines; values are JSON with string fallback."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        value = value.strip()
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        try:
            out[key] = json.loads(value)
        except json.JSONDecodeError:
            out[key] = value
    return out


def canonical_config(cfg: dict) -> str:
    lines = [f"{k} = {json.dumps(cfg[k], sort_keys=True)}" for k in sorted(cfg)]
    return "\n".join(lines) + "\n"


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(canonical_config(cfg).encode()).hexdigest()


_DEFAULTS = {
    "seed": 1234,
    "grid.n": 48,
    "grid.box_length": 2.0 * np.pi,
    "medium.omega": 1.0,
    "medium.mu0": 1.0,
    "medium.eps0": 1.0,
    "medium.bound_m": 50.0,
    "medium.profile": "gauss",
    "medium.band_limit": 8,
    "medium.support_tol": 0.1,
    "medium1.alpha_bumps": [],
    "medium1.beta_bumps": [],
    "medium2.alpha_bumps": [],
    "medium2.beta_bumps": [],
    "masks.omega_radius": 1.45,
    "masks.omega_prime_radius": 1.3,
    "solver.tol": 1e-9,
    "solver.max_iter": 600,
    "solver.tau_schedule": [4.0, 8.0, 16.0, 32.0],
    "pairing.xi_list": [[1, 0, 0], [0, 1, 1], [1, 1, 0]],
    "pairing.xi_weights": [1.0, -1.0],
    "pairing.tol": 1e-7,
    "recover.xi_cutoff": 4,
    "recover.tau_schedule": [16.0, 32.0],
    "recover.tol": 1e-6,
    "nulltest.xi_list": [[1, 0, 0], [0, 1, 1]],
    "nulltest.tau": 32.0,
    "nulltest.tol": 1e-7,
    "nulltest.expect": "",
    "carleman.x0": [2.5, 0.0, 0.0],
    "carleman.h_sweep": [0.3, 0.2, 0.1, 0.05],
}


@dataclass
class Check:
    name: str
    value: float
    threshold: float
    op: str  # 'le' or 'ge' or 'eq'

    @property
    def passed(self) -> bool:
        if self.op == "le":
            return self.value <= self.threshold
        if self.op == "ge":
            return self.value >= self.threshold
        return self.value == self.threshold


class Runner:
    """Resolves config values, builds shared objects, collects checks."""

    def __init__(self, cfg: dict, output_dir: Path):
        self.cfg = dict(_DEFAULTS)
        self.cfg.update(cfg)
        unknown = [
            k for k in cfg
            if k not in _DEFAULTS and k not in ("experiment", "output_dir")
        ]
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        self.output_dir = output_dir
        self.checks: list = []
        self.artifacts: list = []

    def get(self, key):
        return self.cfg[key]

    def check(self, name, value, threshold, op="le"):
        self.checks.append(Check(name, float(value), float(threshold), op))

    def grid_spec(self) -> grid.GridSpec:
        return grid.GridSpec(int(self.get("grid.n")), float(self.get("grid.box_length")))

    def medium(self, section: str) -> media.Medium:
        g = self.grid_spec()
        band = self.get("medium.band_limit")
        return media.make_exp_medium(
            g,
            alpha_bumps=[tuple(b) for b in self.get(f"{section}.alpha_bumps")],
            beta_bumps=[tuple(b) for b in self.get(f"{section}.beta_bumps")],
            mu0=float(self.get("medium.mu0")),
            eps0=float(self.get("medium.eps0")),
            omega=float(self.get("medium.omega")),
            bound_m=float(self.get("medium.bound_m")),
            profile=str(self.get("medium.profile")),
            band_limit_modes=None if band in (None, "none") else int(band),
            support_tol=float(self.get("medium.support_tol")),
        )

    def medium_pair(self) -> media.MediumPair:
        m1 = self.medium("medium1")
        m2 = self.medium("medium2")
        mask_prime = grid.ball_mask(self.grid_spec(), float(self.get("masks.omega_prime_radius")))
        return media.MediumPair(m1, m2, mask_prime, diff_tol=float(self.get("medium.support_tol")))

    def mask_omega(self) -> grid.DomainMask:
        return grid.ball_mask(self.grid_spec(), float(self.get("masks.omega_radius")))

    def background(self) -> tuple:
        return (
            float(self.get("medium.mu0")),
            float(self.get("medium.eps0")),
            float(self.get("medium.omega")),
        )

    def rng(self) -> np.random.Generator:
        return np.random.default_rng(int(self.get("seed")))


# ---------------------------------------------------------------------------
# experiment families
# ---------------------------------------------------------------------------


def run_verify_operators(r: Runner):
    rng = r.rng()
    medium = r.medium("medium1")
    ops = operators.MediumOperators(medium)

    for which in ("Q", "Qhat", "Qtilde"):
        rep = operators.verify_zeroth_order(ops, which, rng)
        r.check(f"operators.leibniz.{which}", rep.residual, 1e-8)
        rep = operators.verify_factorization(ops, which, rng)
        r.check(f"operators.factorization.{which}", rep.residual, 1e-8)
    control = operators.verify_zeroth_order(ops, "P", rng)
    r.check("operators.leibniz.control_first_order", control.residual, 1e-2, op="ge")

    r.check(
        "operators.wstar_transpose",
        operators.verify_w_star_identity(ops).residual,
        1e-12,
    )

    worst = 0.0
    for _ in range(100):
        lam = rng.standard_normal(3)
        sym = operators.symbol_matrix(lam)
        worst = max(
            worst,
            float(np.abs(sym @ sym - (lam @ lam) * np.eye(8)).max())
            / max(float(lam @ lam), 1e-300),
        )
    r.check("operators.symbol_squared", worst, 1e-13)

    normal = np.array([0.3, -0.4, np.sqrt(1 - 0.25)])
    pn = operators.assemble_PN(normal)
    r.check("operators.pn_squared", float(np.abs(pn @ pn - np.eye(8)).max()), 1e-13)
    r.check(
        "operators.pn_is_symbol",
        float(np.abs(pn - operators.symbol_matrix(normal)).max()),
        1e-14,
    )

    # background plane wave solves both first-order systems
    g = r.grid_spec()
    mu0, eps0, omega = r.background()
    kmag = omega * np.sqrt(mu0 * eps0)
    kvec = np.array([round(kmag), 0.0, 0.0])
    if abs(np.linalg.norm(kvec) - kmag) > 1e-12:
        raise ConfigError("omega sqrt(eps0 mu0) must be a lattice wavenumber for the plane-wave check")
    bg = media.make_exp_medium(g, mu0=mu0, eps0=eps0, omega=omega)
    ops_bg = operators.MediumOperators(bg)
    p = np.array([0.0, 1.0, -0.5])
    E = grid.plane_wave(g, "vector3", kvec, p)
    H = grid.plane_wave(g, "vector3", kvec, np.cross(kvec, p) / (omega * mu0))
    X = operators.maxwell_to_augmented(E, H)
    res_v = operators.apply_P(X).values + ops_bg.apply_v(X.values)
    r.check(
        "operators.plane_wave_PV",
        float(np.linalg.norm(res_v.ravel()) / np.linalg.norm(X.values.ravel())),
        1e-10,
    )
    Y = operators.rescale_X(X, bg)
    res_w = operators.apply_P(Y).values + ops_bg.apply_w(Y.values, "W")
    r.check(
        "operators.plane_wave_PW",
        float(np.linalg.norm(res_w.ravel()) / np.linalg.norm(Y.values.ravel())),
        1e-10,
    )

    U = grid.random_band_limited(g, "spinor8", rng, 4)
    V = grid.random_band_limited(g, "spinor8", rng, 4)
    r.check("operators.p_symmetry", operators.verify_P_symmetry(U, V).residual, 1e-10)


def run_cgo_decay(r: Runner):
    medium = r.medium("medium1")
    ops = operators.MediumOperators(medium)
    mu0, eps0, omega = r.background()
    mask = r.mask_omega()
    tol = float(r.get("solver.tol"))
    max_iter = int(r.get("solver.max_iter"))
    taus = [float(t) for t in r.get("solver.tau_schedule")]
    xi = tuple(float(v) for v in r.get("pairing.xi_list")[0])

    q_pot = operators.assemble_potential(ops, "Q")
    qhat_pot = operators.assemble_potential(ops, "Qhat")

    rows = []
    r_norms, s_norms, z_mags = [], [], []
    last_sol = None
    for tau in taus:
        d = cgo.build_zeta_pair(xi, tau, omega, eps0, mu0)
        pol1, pol2 = cgo.canonical_polarizations(d, "f")
        L1 = cgo.build_L(d.zeta1_vec, pol1, omega, eps0, mu0)
        sol = cgo.solve_cgo(d.zeta1_vec, q_pot, L1, tol=tol, max_iter=max_iter)
        r_norm = grid.l2_norm(sol.remainder, mask)

        seed2 = cgo.dirac_seed(d.zeta2_vec, pol2)
        sol2 = cgo.solve_cgo(
            d.zeta2_vec, qhat_pot, seed2, tol=tol, max_iter=max_iter,
            kind="schrodinger_Qhat",
        )
        dirac = cgo.derive_dirac_solution(sol2, ops)
        m_ref = cgo.build_M(d.zeta2_vec, pol2)
        s_field = grid.make_field(
            medium.grid, "spinor8", dirac.Y.values - m_ref.reshape(8, 1, 1, 1)
        )
        s_norm = grid.l2_norm(s_field, mask)

        r_norms.append(r_norm)
        s_norms.append(s_norm)
        z_mags.append(d.zeta_mag)
        rows.append(
            (tau, d.zeta_mag, r_norm, s_norm, sol.stats.residual_live,
             sol.stats.residual_floor, dirac.residual_PWstar)
        )
        last_sol = sol

    slope_r = float(np.polyfit(np.log(z_mags), np.log(r_norms), 1)[0])
    slope_s = float(np.polyfit(np.log(z_mags), np.log(s_norms), 1)[0])
    r.check("cgo.decay.slope_R", slope_r, -1.3, op="ge")
    r.check("cgo.decay.slope_R_upper", slope_r, -0.7)
    r.check("cgo.decay.slope_S", slope_s, -1.3, op="ge")
    r.check("cgo.decay.slope_S_upper", slope_s, -0.7)

    # constant-coefficient control: remainder identically zero
    bg = media.make_exp_medium(medium.grid, mu0=mu0, eps0=eps0, omega=omega)
    ops_bg = operators.MediumOperators(bg)
    q_bg = operators.assemble_potential(ops_bg, "Q")
    d = cgo.build_zeta_pair(xi, taus[0], omega, eps0, mu0)
    pol1, _ = cgo.canonical_polarizations(d, "f")
    sol_bg = cgo.solve_cgo(
        d.zeta1_vec, q_bg, cgo.build_L(d.zeta1_vec, pol1, omega, eps0, mu0),
        tol=tol,
    )
    r.check(
        "cgo.decay.constant_medium_R",
        float(np.abs(sol_bg.remainder.values).max()),
        0.0, op="eq",
    )

    csv_path = r.output_dir / "decay.csv"
    with open(csv_path, "w") as fh:
        fh.write("tau,zeta_mag,r_norm,s_norm,res_live,res_floor,dirac_res\n")
        for row in rows:
            fh.write(",".join(f"{v:.16e}" for v in row) + "\n")
    r.artifacts.append(csv_path.name)
    snap = r.output_dir / "remainder_last.cgof"
    grid.write_snapshot(snap, last_sol.remainder)
    meta = r.output_dir / "remainder_last.meta"
    with open(meta, "w") as fh:
        fh.write(f"zeta = {json.dumps([[z.real, z.imag] for z in last_sol.zeta_vec])}\n")
        fh.write(
            f"leading = {json.dumps([[v.real, v.imag] for v in last_sol.leading_vec])}\n"
        )
        fh.write(f"kind = {last_sol.kind}\n")
        fh.write(f"residual = {last_sol.stats.residual:.6e}\n")
        fh.write(f"residual_live = {last_sol.stats.residual_live:.6e}\n")
        fh.write(f"residual_floor = {last_sol.stats.residual_floor:.6e}\n")
        fh.write(f"born_iterations = {last_sol.stats.born_iterations}\n")
        fh.write(f"gmres_iterations = {last_sol.stats.gmres_iterations}\n")
        fh.write(f"contraction = {last_sol.stats.contraction:.4f}\n")
        fh.write(f"floor_modes = {last_sol.stats.floor_modes}\n")
    r.artifacts.append(snap.name)
    r.artifacts.append(meta.name)


def run_pairing_sweep(r: Runner):
    pair = r.medium_pair()
    ctx = pipeline.PairingContext(pair, r.mask_omega())
    taus = [float(t) for t in r.get("solver.tau_schedule")]
    tol = float(r.get("pairing.tol"))
    xi_weights = tuple(float(w) for w in r.get("pairing.xi_weights"))
    xi_list = [tuple(float(v) for v in xi) for xi in r.get("pairing.xi_list")]

    oracle = pipeline.oracle_spectrum(ctx, xi_list)
    est = pipeline.sweep_spectrum(
        ctx, xi_list, tau_schedule=taus, tol=tol, xi_weights=xi_weights
    )
    if est.failures:
        raise RuntimeError(f"pairing sweep failures: {est.failures}")
    noise = ctx.noise_floor(tol)
    for xi in xi_list:
        fo, go = oracle[xi]
        for mode, target in (("f", fo), ("g", go)):
            series = [
                s for s in est.samples if s.xi == xi and s.mode == mode
            ]
            series.sort(key=lambda s: s.tau)
            errs = [abs(s.value - target) for s in series]
            tag = f"pairing.{mode}.xi{'_'.join(str(int(v)) for v in xi)}"
            for i in range(len(errs) - 1):
                ratio = errs[i] / max(errs[i + 1], 1e-300)
                r.check(f"{tag}.halving.step{i}", ratio, 1.5, op="ge")
                r.check(f"{tag}.halving.step{i}_upper", ratio, 2.5)
            if abs(target) > noise:
                r.check(f"{tag}.final_rel_err", errs[-1] / abs(target), 0.05)

    csv_path = r.output_dir / "pairing.csv"
    pipeline.write_spectrum_csv(csv_path, est, oracle)
    r.artifacts.append(csv_path.name)


def run_recover(r: Runner):
    pair = r.medium_pair()
    g = pair.grid
    ctx = pipeline.PairingContext(pair, r.mask_omega())
    bg = r.background()
    tol = float(r.get("recover.tol"))
    taus = [float(t) for t in r.get("recover.tau_schedule")]
    cut = int(r.get("recover.xi_cutoff"))
    step = 2.0 * np.pi / g.box_length

    from .media import log_fields

    lf1, lf2 = log_fields(pair.m1), log_fields(pair.m2)
    ref_a = grid.make_field(g, "scalar", (lf1.alpha.values - lf2.alpha.values).real)
    ref_b = grid.make_field(g, "scalar", (lf1.beta.values - lf2.beta.values).real)

    # oracle round trip through the linearized maps (pure linear algebra)
    fh_grid, gh_grid = pipeline.forward_linearized(g, ref_a, ref_b, bg)
    full = []
    half = g.n // 2
    for i in range(-half, half):
        for j in range(-half, half):
            for k in range(-half, half):
                full.append((float(i) * step, float(j) * step, float(k) * step))
    fh_all = {xi: complex(fh_grid[pipeline._mode_index_of_xi(g, xi)]) for xi in full}
    gh_all = {xi: complex(gh_grid[pipeline._mode_index_of_xi(g, xi)]) for xi in full}
    round_trip = pipeline.invert_linearized(
        g, fh_all, gh_all, bg, reference=(ref_a, ref_b),
        mask_omega_prime=pair.mask_omega_prime,
    )
    r.check("recover.round_trip_alpha", round_trip.rel_error_alpha, 1e-10)
    r.check("recover.round_trip_beta", round_trip.rel_error_beta, 1e-10)

    xi_half = []
    for i in range(-cut, cut + 1):
        for j in range(-cut, cut + 1):
            for k in range(-cut, cut + 1):
                if (i, j, k) == (0, 0, 0):
                    continue
                if (i > 0) or (i == 0 and j > 0) or (i == 0 and j == 0 and k > 0):
                    xi_half.append((float(i) * step, float(j) * step, float(k) * step))
    est = pipeline.sweep_spectrum(ctx, xi_half, tau_schedule=taus, tol=tol)
    if est.failures:
        raise RuntimeError(f"recovery sweep failures: {est.failures}")
    result = pipeline.invert_linearized(
        g, est.fhat, est.ghat, bg, reference=(ref_a, ref_b),
        mask_omega_prime=pair.mask_omega_prime,
        noise_floor=10.0 * tol * max(ctx.delta_q_norm, 1.0),
    )
    r.check("recover.rel_error_alpha", result.rel_error_alpha, 0.10)
    r.check("recover.rel_error_beta", result.rel_error_beta, 0.10)
    r.check("recover.support_leak_alpha", result.support_leak_alpha, 0.01)
    r.check("recover.support_leak_beta", result.support_leak_beta, 0.01)
    r.check("recover.verdict_differ", 1.0 if result.verdict == "differ" else 0.0, 1.0, op="ge")

    for name, fld in (
        ("recovered_alpha.cgof", result.delta_alpha),
        ("recovered_beta.cgof", result.delta_beta),
    ):
        grid.write_snapshot(r.output_dir / name, fld)
        r.artifacts.append(name)
    csv_path = r.output_dir / "recover_spectrum.csv"
    pipeline.write_spectrum_csv(csv_path, est, pipeline.oracle_spectrum(ctx, list(est.fhat)))
    r.artifacts.append(csv_path.name)


def run_null_test(r: Runner):
    pair = r.medium_pair()
    ctx = pipeline.PairingContext(pair, r.mask_omega())
    tol = float(r.get("nulltest.tol"))
    xi_list = [tuple(float(v) for v in xi) for xi in r.get("nulltest.xi_list")]
    out = pipeline.null_test(ctx, xi_list, tau=float(r.get("nulltest.tau")), tol=tol)
    expect = str(r.get("nulltest.expect")) or ("coincide" if ctx.delta_q_norm == 0 else "differ")
    r.check(
        "nulltest.verdict_matches",
        1.0 if out["verdict"] == expect else 0.0,
        1.0, op="ge",
    )
    if expect == "coincide":
        r.check("nulltest.pairing_exact_zero", out["max_estimate"], 0.0, op="eq")
    else:
        r.check("nulltest.separation", out["separation"], 10.0, op="ge")


def run_carleman(r: Runner):
    pair = r.medium_pair()
    diag = pipeline.carleman_functionals(
        pair, r.mask_omega(),
        [float(v) for v in r.get("carleman.x0")],
        [float(h) for h in r.get("carleman.h_sweep")],
    )
    r.check("carleman.d1_positive", diag.d1, 0.0, op="ge")
    r.check("carleman.d2_gt_d1", diag.d2 - diag.d1, 0.0, op="ge")
    equal_media = float(np.abs(pair.m1.mu.values - pair.m2.mu.values).max()) == 0.0 and (
        float(np.abs(pair.m1.gamma.values - pair.m2.gamma.values).max()) == 0.0
    )
    if equal_media:
        r.check("carleman.lhs_zero", max(diag.lhs_core), 0.0, op="eq")
        r.check("carleman.rhs_zero", max(diag.rhs_core), 0.0, op="eq")
    else:
        r.check("carleman.lhs_positive", min(diag.lhs_core), 0.0, op="ge")
        r.check("carleman.ratio_finite", float(np.isfinite(diag.ratio).all()), 1.0, op="ge")

    csv_path = r.output_dir / "carleman.csv"
    with open(csv_path, "w") as fh:
        fh.write("h,lhs_core,rhs_core,ratio\n")
        for h, lhs_v, rhs_v, rat in zip(diag.h_sweep, diag.lhs_core, diag.rhs_core, diag.ratio):
            fh.write(f"{h:.6e},{lhs_v:.16e},{rhs_v:.16e},{rat:.16e}\n")
    r.artifacts.append(csv_path.name)


_RUNNERS = {
    "verify-operators": run_verify_operators,
    "cgo-decay": run_cgo_decay,
    "pairing-sweep": run_pairing_sweep,
    "recover": run_recover,
    "null-test": run_null_test,
    "carleman": run_carleman,
}


# ---------------------------------------------------------------------------
# report I/O
# ---------------------------------------------------------------------------


def write_report(path: Path, experiment: str, cfg_hash: str, seed: int,
                 checks, wall_time: float, artifacts) -> bool:
    overall = all(c.passed for c in checks)
    with open(path, "w") as fh:
        fh.write(f"experiment = {experiment}\n")
        fh.write(f"config_hash = {cfg_hash}\n")
        fh.write(f"seed = {seed}\n")
        fh.write(f"wall_time_s = {wall_time:.3f}\n")
        fh.write(f"overall_pass = {json.dumps(overall)}\n")
        fh.write(f"artifacts = {json.dumps(sorted(artifacts))}\n")
        for c in checks:
            fh.write(
                f"check.{c.name} = "
                + json.dumps(
                    {"value": c.value, "threshold": c.threshold, "op": c.op,
                     "pass": c.passed}
                )
                + "\n"
            )
    return overall


def read_report(path: Path) -> dict:
    data = parse_config_text(path.read_text())
    checks = {}
    for key, val in data.items():
        if key.startswith("check."):
            checks[key[len("check."):]] = val
    data["checks"] = checks
    return data


def execute(cfg: dict, output_dir: Path) -> int:
    experiment = cfg.get("experiment")
    if experiment not in EXPERIMENTS:
        raise ConfigError(
            f"experiment must be one of {EXPERIMENTS}, got {experiment!r}"
        )
    run_cfg = {k: v for k, v in cfg.items() if k not in ("experiment", "output_dir")}
    runner = Runner(run_cfg, output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    with open(output_dir / "config.cfg", "w") as fh:
        fh.write(canonical_config(cfg))
    started = time.time()
    _RUNNERS[experiment](runner)
    wall = time.time() - started
    overall = write_report(
        output_dir / "report.txt", experiment, config_hash(cfg),
        int(runner.get("seed")), runner.checks, wall, runner.artifacts,
    )
    for c in runner.checks:
        log.info("%s %s = %.6e (threshold %s %.3e)",
                 "PASS" if c.passed else "FAIL", c.name, c.value, c.op, c.threshold)
    return EXIT_PASS if overall else EXIT_CHECK_FAILURE


def replay(report_dir: Path, output_dir: Path) -> int:
    """Re-execute a stored run and compare every reported value.

    Refuses when the stored config no longer matches the recorded hash;
    values must agree to 1e-13 relative and verdict fields exactly.
    """
    cfg_path = report_dir / "config.cfg"
    report_path = report_dir / "report.txt"
    if not cfg_path.exists() or not report_path.exists():
        raise ConfigError(f"{report_dir} does not contain config.cfg and report.txt")
    cfg = parse_config_text(cfg_path.read_text())
    old = read_report(report_path)
    if config_hash(cfg) != old["config_hash"]:
        log.error("config hash mismatch: stored config was modified; refusing replay")
        return EXIT_CONFIG_ERROR
    status = execute(cfg, output_dir)
    new = read_report(output_dir / "report.txt")
    worst = 0.0
    for name, rec in old["checks"].items():
        if name not in new["checks"]:
            log.error("replay lost check %s", name)
            return EXIT_CHECK_FAILURE
        nv, ov = new["checks"][name]["value"], rec["value"]
        rel = abs(nv - ov) / max(abs(ov), 1e-300)
        worst = max(worst, rel if ov != 0 else abs(nv))
        if new["checks"][name]["pass"] != rec["pass"]:
            log.error("replay verdict changed for %s", name)
            return EXIT_CHECK_FAILURE
    if worst > 1e-13:
        log.error("replay values deviate by %.3e relative (tolerance 1e-13)", worst)
        return EXIT_CHECK_FAILURE
    log.info("replay reproduced %d checks within %.2e", len(old["checks"]), worst)
    return status


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="cgolab",
        description="Spectral laboratory for CGO Maxwell analysis",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in EXPERIMENTS:
        p = sub.add_parser(name, help=f"run the {name} experiment family")
        p.add_argument("--config", type=Path, default=None, help="config file path")
        p.add_argument("--output", type=Path, required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--threads", type=int, default=None, help="BLAS thread cap")
    p = sub.add_parser("replay", help="re-execute a stored run and compare")
    p.add_argument("report_dir", type=Path)
    p.add_argument("--output", type=Path, required=True)
    p.add_argument("--threads", type=int, default=None)

    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")

    limits = None
    if args.threads is not None:
        try:
            from threadpoolctl import threadpool_limits

            limits = threadpool_limits(limits=args.threads)
        except ImportError:
            log.warning("threadpoolctl unavailable; --threads ignored")

    try:
        if args.command == "replay":
            return replay(args.report_dir, args.output)
        cfg = {}
        if args.config is not None:
            cfg = parse_config_text(args.config.read_text())
        cfg["experiment"] = args.command
        if args.seed is not None:
            cfg["seed"] = args.seed
        return execute(cfg, args.output)
    except ConfigError as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG_ERROR
    except (RuntimeError, ValueError) as exc:
        log.error("numerical failure: %s", exc)
        return EXIT_NUMERICAL_FAILURE
    finally:
        if limits is not None:
            limits.unregister()


if __name__ == "__main__":
    sys.exit(main())
