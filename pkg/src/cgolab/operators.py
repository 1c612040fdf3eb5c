"""First-order 8x8 operator algebra for the augmented Maxwell system.

An 8-spinor is laid out as (h, H | e, E): scalar slot 0, magnetic 3-vector
slots 1..3, scalar slot 4, electric 3-vector slots 5..7.  The coefficient-
free operator P acts spectrally,

    (P u)_0     = D . u_E
    (P u)_{1:4} = D u_4 - D x u_E
    (P u)_4     = D . u_H
    (P u)_{5:8} = D u_0 + D x u_H,

with D = (1/i) grad, and satisfies P^2 = -Lap I_8.  The zeroth-order
multipliers V and the W family are pointwise 8x8 matrices built from
kappa = omega sqrt(mu gamma) and the log-gradients D(log gamma), D(log mu).
The matrix potentials Q, Qhat, Qtilde are materialized column-by-column by
applying the defining operator expressions to the constant basis spinors,
which is exact because the expressions are zeroth-order.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Optional

import numpy as np

from .grid import Field, GridSpec, dealias, l2_norm, random_band_limited
from .media import Medium, log_fields

__all__ = [
    "symbol_matrix",
    "assemble_PN",
    "apply_P",
    "MediumOperators",
    "W_VARIANTS",
    "assemble_potential",
    "maxwell_to_augmented",
    "rescale_X",
    "split_blocks",
    "pack_blocks",
    "apply_matrix_field",
    "verify_zeroth_order",
    "verify_factorization",
    "verify_P_symmetry",
    "verify_w_star_identity",
]

W_VARIANTS = ("W", "Wt", "Wbar", "Wstar", "Wswap", "Wtswap")


def _block_A(lam: np.ndarray) -> np.ndarray:
    l1, l2, l3 = lam
    z = np.zeros_like(l1)
    return np.array(
        [
            [z, l1, l2, l3],
            [l1, z, l3, -l2],
            [l2, -l3, z, l1],
            [l3, l2, -l1, z],
        ]
    )


def _block_B(lam: np.ndarray) -> np.ndarray:
    l1, l2, l3 = lam
    z = np.zeros_like(l1)
    return np.array(
        [
            [z, l1, l2, l3],
            [l1, z, -l3, l2],
            [l2, l3, z, -l1],
            [l3, -l2, l1, z],
        ]
    )


def symbol_matrix(lam) -> np.ndarray:
    """8x8 symbol of P: P e^{i lam.x} u0 = e^{i lam.x} symbol_matrix(lam) u0.

    Satisfies symbol_matrix(lam)^2 = (lam . lam) I_8 (bilinear dot, no
    conjugation), and is linear in lam.
    """
    lam = np.asarray(lam, dtype=np.complex128)
    out = np.zeros((8, 8), dtype=np.complex128)
    out[:4, 4:] = _block_A(lam)
    out[4:, :4] = _block_B(lam)
    return out


def assemble_PN(normal) -> np.ndarray:
    """Boundary symbol for a unit normal: P_N = symbol_matrix(N), P_N^2 = I_8."""
    normal = np.asarray(normal, dtype=np.float64)
    if abs(np.linalg.norm(normal) - 1.0) > 1e-12:
        raise ValueError(f"normal must be a unit vector, |N| = {np.linalg.norm(normal)}")
    return symbol_matrix(normal)


def _fft(values: np.ndarray) -> np.ndarray:
    return np.fft.fftn(values, axes=(-3, -2, -1))


def _ifft(values: np.ndarray) -> np.ndarray:
    return np.fft.ifftn(values, axes=(-3, -2, -1))


def apply_P_raw(grid: GridSpec, u: np.ndarray, zeta=None) -> np.ndarray:
    """Apply P (or the phase-conjugated P + symbol(zeta)) to raw (8,n,n,n)."""
    kx, ky, kz = grid.wavenumbers()
    if zeta is not None:
        zeta = np.asarray(zeta, dtype=np.complex128)
        kx = kx + zeta[0]
        ky = ky + zeta[1]
        kz = kz + zeta[2]
    uh = _fft(u)
    out = np.empty_like(uh)
    # row 0: D . u_E
    out[0] = kx * uh[5] + ky * uh[6] + kz * uh[7]
    # rows 1..3: D u_4 - D x u_E
    out[1] = kx * uh[4] - (ky * uh[7] - kz * uh[6])
    out[2] = ky * uh[4] - (kz * uh[5] - kx * uh[7])
    out[3] = kz * uh[4] - (kx * uh[6] - ky * uh[5])
    # row 4: D . u_H
    out[4] = kx * uh[1] + ky * uh[2] + kz * uh[3]
    # rows 5..7: D u_0 + D x u_H
    out[5] = kx * uh[0] + (ky * uh[3] - kz * uh[2])
    out[6] = ky * uh[0] + (kz * uh[1] - kx * uh[3])
    out[7] = kz * uh[0] + (kx * uh[2] - ky * uh[1])
    return _ifft(out)


def apply_P(u: Field, zeta=None) -> Field:
    """P applied spectrally; with ``zeta`` the shifted operator P + symbol(zeta).

    The shifted form acts on periodic profiles U = e^{-i zeta.x} u and equals
    e^{-i zeta.x} P e^{i zeta.x}.
    """
    if u.rank != "spinor8":
        raise ValueError("P acts on spinor8 fields")
    return Field(u.grid, "spinor8", apply_P_raw(u.grid, u.values, zeta))


def split_blocks(u: np.ndarray):
    """(scalar0, H-vector, scalar4, E-vector) views of an (8, ...) array."""
    return u[0], u[1:4], u[4], u[5:8]


def pack_blocks(s0, vh, s4, ve) -> np.ndarray:
    return np.concatenate(
        [s0[None], np.asarray(vh), s4[None], np.asarray(ve)], axis=0
    )


def _cross(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.stack(
        [
            a[1] * b[2] - a[2] * b[1],
            a[2] * b[0] - a[0] * b[2],
            a[0] * b[1] - a[1] * b[0],
        ]
    )


def _dot(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]


def _apply_w_generic(kap, da, db, u: np.ndarray) -> np.ndarray:
    """kappa I_8 + half the printed derivative block with slots (da, db)."""
    s0, vh, s4, ve = split_blocks(u)
    out = np.empty_like(u)
    out[0] = kap * s0 + 0.5 * _dot(da, ve)
    out[1:4] = kap * vh + 0.5 * (da * s4 + _cross(da, ve))
    out[4] = kap * s4 + 0.5 * _dot(db, vh)
    out[5:8] = kap * ve + 0.5 * (db * s0 - _cross(db, vh))
    return out


@dataclass(frozen=True)
class MediumOperators:
    """Pointwise multiplier family (V and the W variants) of one medium.

    Caches kappa and the spectral log-gradients; every ``apply_*`` acts on
    raw (8, n, n, n) arrays, is a pure function, and never mutates inputs.
    The W variants are parameter swaps of one generic builder:

        W      (kappa,  Da,  Db)        Wt     (kappa,  Db,  Da)
        Wbar   (kappa~, Da~, Db~)       Wstar  (kappa~, Db~, Da~)
        Wswap  (-kappa~, -Da~, Db)      Wtswap (-kappa~, Db, -Da~)

    where ~ is complex conjugation and beta = log mu is real for admissible
    media (so Db~ = Db).  These realize W^t = W(kappa, beta, alpha) and
    W* = -W^t(-conj kappa, conj alpha, beta) from the printed block forms.
    """

    medium: Medium

    @cached_property
    def _coeffs(self):
        from .grid import spectral_derivative

        lf = log_fields(self.medium)
        da = spectral_derivative(lf.alpha, "gradient").values
        db = spectral_derivative(lf.beta, "gradient").values
        return lf.kappa.values, da, db

    @property
    def kappa(self) -> np.ndarray:
        return self._coeffs[0]

    @property
    def dalpha(self) -> np.ndarray:
        return self._coeffs[1]

    @property
    def dbeta(self) -> np.ndarray:
        return self._coeffs[2]

    def _variant_args(self, variant: str):
        kap, da, db = self._coeffs
        if variant == "W":
            return kap, da, db
        if variant == "Wt":
            return kap, db, da
        if variant == "Wbar":
            return np.conj(kap), np.conj(da), np.conj(db)
        if variant == "Wstar":
            return np.conj(kap), np.conj(db), np.conj(da)
        if variant == "Wswap":
            return -np.conj(kap), -np.conj(da), db
        if variant == "Wtswap":
            return -np.conj(kap), db, -np.conj(da)
        raise ValueError(f"unknown W variant {variant!r}")

    def apply_w(self, u: np.ndarray, variant: str = "W") -> np.ndarray:
        kap, da, db = self._variant_args(variant)
        return _apply_w_generic(kap, da, db, u)

    def apply_v(self, u: np.ndarray) -> np.ndarray:
        """Augmented-system multiplier V (frequency-weighted coefficients)."""
        m = self.medium
        _, da, db = self._coeffs
        om_mu = m.omega * m.mu.values
        om_ga = m.omega * m.gamma.values
        s0, vh, s4, ve = split_blocks(u)
        out = np.empty_like(u)
        out[0] = om_mu * s0 + _dot(da, ve)
        out[1:4] = om_mu * vh + da * s4
        out[4] = _dot(db, vh) + om_ga * s4
        out[5:8] = db * s0 + om_ga * ve
        return out

    def materialize_w(self, variant: str = "W") -> Field:
        """W variant as an explicit matrix8x8 field (column-by-column)."""
        n = self.medium.grid.n
        cols = np.zeros((8, 8, n, n, n), dtype=np.complex128)
        basis = np.zeros((8, n, n, n), dtype=np.complex128)
        for j in range(8):
            basis[j] = 1.0
            cols[:, j] = self.apply_w(basis, variant)
            basis[j] = 0.0
        return Field(self.medium.grid, "matrix8x8", cols)


_POTENTIAL_PAIRS = {
    # which -> (left multiplier, right multiplier) in  M P - P M' - M M'
    "Q": ("W", "Wt"),
    "Qhat": ("Wstar", "Wbar"),
    "Qtilde": ("Wswap", "Wtswap"),
}


def assemble_potential(ops: MediumOperators, which: str = "Q", use_dealias: bool = True) -> Field:
    """Materialize Q, Qhat or Qtilde as a pointwise matrix8x8 field.

    Column j is (M P - P M' - M M') e_j = -(P + M)(M' e_j) since P kills
    constants; the expression is zeroth-order so the columns determine the
    multiplication operator exactly.  Optional 2/3 dealiasing truncates the
    coefficient products before and after the differentiation.
    """
    if which not in _POTENTIAL_PAIRS:
        raise ValueError(f"unknown potential {which!r}")
    left, right = _POTENTIAL_PAIRS[which]
    grid = ops.medium.grid
    n = grid.n
    out = np.zeros((8, 8, n, n, n), dtype=np.complex128)
    basis = np.zeros((8, n, n, n), dtype=np.complex128)
    for j in range(8):
        basis[j] = 1.0
        w_col = ops.apply_w(basis, right)
        if use_dealias:
            w_col = dealias(Field(grid, "spinor8", w_col)).values
        col = -(apply_P_raw(grid, w_col) + ops.apply_w(w_col, left))
        if use_dealias:
            col = dealias(Field(grid, "spinor8", col)).values
        out[:, j] = col
        basis[j] = 0.0
    return Field(grid, "matrix8x8", out)


def apply_matrix_field(mat: Field, u: np.ndarray) -> np.ndarray:
    """Pointwise 8x8 matrix action on a raw (8, n, n, n) spinor."""
    if mat.rank != "matrix8x8":
        raise ValueError("need a matrix8x8 field")
    return np.einsum("ij...,j...->i...", mat.values, u)


def maxwell_to_augmented(E: Field, H: Field) -> Field:
    """Pack electromagnetic fields into X = (0, H | 0, E)."""
    if E.rank != "vector3" or H.rank != "vector3":
        raise ValueError("E and H must be vector3 fields")
    if E.grid != H.grid:
        raise ValueError("E and H on different grids")
    n = E.grid.n
    x = np.zeros((8, n, n, n), dtype=np.complex128)
    x[1:4] = H.values
    x[5:8] = E.values
    return Field(E.grid, "spinor8", x)


def rescale_X(X: Field, medium: Medium) -> Field:
    """Y = diag(mu^{1/2} I_4, gamma^{1/2} I_4) X."""
    if X.rank != "spinor8":
        raise ValueError("rescale_X acts on spinor8 fields")
    sq_mu = np.sqrt(medium.mu.values)
    sq_ga = np.sqrt(medium.gamma.values)
    y = X.values.copy()
    y[:4] *= sq_mu
    y[4:] *= sq_ga
    return Field(X.grid, "spinor8", y)


@dataclass(frozen=True)
class ResidualReport:
    name: str
    residual: float
    threshold: float

    @property
    def passed(self) -> bool:
        return self.residual <= self.threshold


def _zeroth_order_apply(ops: MediumOperators, which: str, v: np.ndarray) -> np.ndarray:
    grid = ops.medium.grid
    if which == "P":  # negative control: genuinely first-order
        return apply_P_raw(grid, v)
    left, right = _POTENTIAL_PAIRS[which]
    return ops.apply_w(apply_P_raw(grid, v), left) - apply_P_raw(
        grid, ops.apply_w(v, right)
    )


def verify_zeroth_order(
    ops: MediumOperators,
    which: str,
    rng: np.random.Generator,
    kmax: int = 3,
    threshold: float = 1e-8,
) -> ResidualReport:
    """Leibniz test that M P - P M' contains no derivatives.

    For random band-limited chi (scalar) and u (spinor), a multiplication
    operator T satisfies T(chi u) = chi T(u) exactly; any surviving
    first-order part contributes grad(chi) terms of order one.
    """
    grid = ops.medium.grid
    chi = random_band_limited(grid, "scalar", rng, kmax).values
    u = random_band_limited(grid, "spinor8", rng, kmax).values
    t_chiu = _zeroth_order_apply(ops, which, chi * u)
    chi_tu = chi * _zeroth_order_apply(ops, which, u)
    num = np.linalg.norm((t_chiu - chi_tu).ravel())
    den = np.linalg.norm(t_chiu.ravel())
    return ResidualReport(f"leibniz.{which}", float(num / den), threshold)


def verify_factorization(
    ops: MediumOperators,
    which: str,
    rng: np.random.Generator,
    kmax: int = 3,
    threshold: float = 1e-8,
    use_dealias: bool = True,
) -> ResidualReport:
    """Check (P + M)(P - M')u = -Lap u + Q_which u on band-limited u."""
    left, right = _POTENTIAL_PAIRS[which]
    grid = ops.medium.grid
    u = random_band_limited(grid, "spinor8", rng, kmax).values
    inner = apply_P_raw(grid, u) - ops.apply_w(u, right)
    product = apply_P_raw(grid, inner) + ops.apply_w(inner, left)
    pot = assemble_potential(ops, which, use_dealias=use_dealias)
    kk = grid.k_squared()
    lap_u = _ifft(-kk * _fft(u))
    rhs = -lap_u + apply_matrix_field(pot, u)
    num = np.linalg.norm((product - rhs).ravel())
    den = np.linalg.norm(lap_u.ravel())
    return ResidualReport(f"factorization.{which}", float(num / den), threshold)


def verify_P_symmetry(U: Field, V: Field, threshold: float = 1e-10) -> ResidualReport:
    """|(PU|V) - (U|PV)| / (||U|| ||V||) over the periodic box."""
    from .grid import inner_product

    pu = apply_P(U)
    pv = apply_P(V)
    lhs = inner_product(pu, V)
    rhs = inner_product(U, pv)
    scale = l2_norm(U) * l2_norm(V)
    return ResidualReport("p_symmetry", abs(lhs - rhs) / scale, threshold)


def verify_w_star_identity(ops: MediumOperators, threshold: float = 1e-12) -> ResidualReport:
    """Pointwise W*(kappa, alpha, beta) + W^t(-conj kappa, conj alpha, beta) = 0.

    Checked entrywise on the materialized matrices; the identity pins the
    conjugation and transposition conventions of the whole W family.
    """
    wstar = ops.materialize_w("Wstar").values
    wtswap = ops.materialize_w("Wtswap").values
    num = np.abs(wstar + wtswap).max()
    den = max(np.abs(wstar).max(), 1e-300)
    return ResidualReport("w_star_transpose", float(num / den), threshold)
