"""Complex-geometrical-optics machinery on the periodic box.

A CGO solution Z = e^{i zeta.x}(L + R) is represented by its periodic
profile U = L + R; the exponential factor never needs to be materialized
(its dynamic range at large tau would be astronomical) because every
operator is conjugated: P becomes P + symbol(zeta), the Laplacian becomes
the Faddeev operator with multiplier |k|^2 + 2 zeta.k, and pairings of two
CGO objects combine the phases into the bounded factor e^{-i xi.x}.

The remainder solves R = -G_zeta[(Q + k0^2 I)(L + R)].  On the lattice the
Faddeev symbol has exact zeros (k = 0 and k = xi always lie on the
characteristic set), so a pure multiplier inverse cannot reach tight
equation residuals: a Born sweep with the zero-projected inverse supplies
a warm start and a preconditioned GMRES polish then solves the honestly
coupled system, in which the potential itself couples the characteristic
modes to the rest of the spectrum.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.sparse.linalg import LinearOperator, gmres

from .grid import DomainMask, Field, GridSpec, make_field
from .operators import (
    MediumOperators,
    apply_P_raw,
    split_blocks,
    symbol_matrix,
)

__all__ = [
    "CgoDirections",
    "Polarization",
    "CgoSolution",
    "SolverStats",
    "build_zeta_pair",
    "canonical_polarizations",
    "build_L",
    "build_M",
    "dirac_seed",
    "faddeev_symbol",
    "faddeev_apply",
    "PotentialApply",
    "solve_cgo",
    "MaxwellSolution",
    "derive_maxwell_solution",
    "DiracSolution",
    "derive_dirac_solution",
    "build_z_aux",
    "verify_aux_identity",
    "measure_stability_ratio",
]


@dataclass(frozen=True)
class CgoDirections:
    """Phase frame for one Fourier probe: xi, tau and the two unit vectors.

    zeta1/zeta2 satisfy zeta.zeta = omega^2 eps0 mu0, zeta1 - conj(zeta2)
    = -xi, and |zeta|^2 = |xi|^2/2 + 2 tau^2 + omega^2 eps0 mu0.
    """

    xi: tuple
    tau: float
    eta1: tuple
    eta2: tuple
    zeta1: tuple
    zeta2: tuple
    k0sq: float

    @property
    def xi_vec(self) -> np.ndarray:
        return np.asarray(self.xi, dtype=np.float64)

    @property
    def zeta1_vec(self) -> np.ndarray:
        return np.asarray(self.zeta1, dtype=np.complex128)

    @property
    def zeta2_vec(self) -> np.ndarray:
        return np.asarray(self.zeta2, dtype=np.complex128)

    @property
    def zeta_mag(self) -> float:
        return float(np.linalg.norm(self.zeta1_vec))


def _frame_from_xi(xi: np.ndarray) -> tuple:
    """Deterministic orthonormal (eta1, eta2) orthogonal to xi.

    eta1 is the least-xi-aligned coordinate axis Gram-Schmidt-projected
    against xi (ties broken by axis order); eta2 = xi_hat x eta1.
    """
    xi_hat = xi / np.linalg.norm(xi)
    axis = int(np.argmin(np.abs(xi_hat)))
    e = np.zeros(3)
    e[axis] = 1.0
    eta1 = e - (e @ xi_hat) * xi_hat
    eta1 /= np.linalg.norm(eta1)
    eta2 = np.cross(xi_hat, eta1)
    return eta1, eta2


def build_zeta_pair(xi, tau: float, omega: float, eps0: float, mu0: float) -> CgoDirections:
    """Construct the two complex phase vectors for a probe (xi, tau)."""
    xi = np.asarray(xi, dtype=np.float64)
    if np.linalg.norm(xi) == 0.0:
        raise ValueError("xi must be nonzero")
    if tau < 1.0:
        raise ValueError("tau must be at least 1")
    k0sq = omega**2 * eps0 * mu0
    eta1, eta2 = _frame_from_xi(xi)
    a = np.sqrt(tau**2 + 0.25 * np.dot(xi, xi))
    b = np.sqrt(tau**2 + k0sq)
    zeta1 = -0.5 * xi + 1j * a * eta1 + b * eta2
    zeta2 = 0.5 * xi - 1j * a * eta1 + b * eta2
    return CgoDirections(
        xi=tuple(xi),
        tau=float(tau),
        eta1=tuple(eta1),
        eta2=tuple(eta2),
        zeta1=tuple(zeta1),
        zeta2=tuple(zeta2),
        k0sq=float(k0sq),
    )


@dataclass(frozen=True)
class Polarization:
    """Constant amplitude pair; f-mode uses A with B = 0, g-mode swaps roles.

    The normalization pins (i eta1 + eta2)/sqrt(2) . A1 = 1 for the first
    solution and the same value for conj(A2) of the second.
    """

    A: tuple
    B: tuple
    mode: str

    @property
    def A_vec(self) -> np.ndarray:
        return np.asarray(self.A, dtype=np.complex128)

    @property
    def B_vec(self) -> np.ndarray:
        return np.asarray(self.B, dtype=np.complex128)


def canonical_polarizations(
    directions: CgoDirections, mode: str, xi_weights=(0.0, 0.0)
) -> tuple:
    """Constraint-satisfying amplitudes for both solutions of a pairing.

    Returns (pol1, pol2).  The base choice is minimal-norm: the active
    vector of pol1 is (-i eta1 + eta2)/sqrt(2) and of pol2 its conjugate.
    ``xi_weights`` adds (w1, w2) multiples of the unit xi direction to the
    active vector of solution 1 and to the conjugate vector of solution 2;
    the unit constraints only pin the components in the limiting phase
    direction, so any xi admixture remains admissible.  The symmetric
    default cancels the first-order tau corrections of the pairing
    (superconvergence); an asymmetric choice such as (1, -1) restores the
    generic 1/tau error law.
    """
    if mode not in ("f", "g"):
        raise ValueError("mode must be 'f' or 'g'")
    eta1 = np.asarray(directions.eta1)
    eta2 = np.asarray(directions.eta2)
    xi = directions.xi_vec
    xi_hat = xi / np.linalg.norm(xi)
    base = (-1j * eta1 + eta2) / np.sqrt(2.0)
    amp1 = base + xi_weights[0] * xi_hat
    amp2 = np.conj(base + xi_weights[1] * xi_hat)
    zero = (0.0, 0.0, 0.0)
    if mode == "f":
        return (
            Polarization(A=tuple(amp1), B=zero, mode="f"),
            Polarization(A=tuple(amp2), B=zero, mode="f"),
        )
    return (
        Polarization(A=zero, B=tuple(amp1), mode="g"),
        Polarization(A=zero, B=tuple(amp2), mode="g"),
    )


def build_L(zeta, pol: Polarization, omega: float, eps0: float, mu0: float) -> np.ndarray:
    """Leading amplitude of the Schrodinger-kind ansatz.

    L = (zeta.A, k0 B | zeta.B, k0 A) / |zeta| with k0 = omega sqrt(eps0 mu0).
    """
    zeta = np.asarray(zeta, dtype=np.complex128)
    mag = float(np.linalg.norm(zeta))
    if mag == 0.0:
        raise ValueError("zeta must be nonzero")
    k0 = omega * np.sqrt(eps0 * mu0)
    A, B = pol.A_vec, pol.B_vec
    out = np.empty(8, dtype=np.complex128)
    out[0] = zeta @ A
    out[1:4] = k0 * B
    out[4] = zeta @ B
    out[5:8] = k0 * A
    return out / mag


def build_M(zeta, pol: Polarization) -> np.ndarray:
    """Leading amplitude of the Dirac-kind solution.

    M = (zeta.A, -zeta x A | zeta.B, zeta x B) / |zeta|; identically
    symbol_matrix(zeta) applied to (0, B | 0, A)/|zeta|.
    """
    zeta = np.asarray(zeta, dtype=np.complex128)
    mag = float(np.linalg.norm(zeta))
    A, B = pol.A_vec, pol.B_vec
    out = np.empty(8, dtype=np.complex128)
    out[0] = zeta @ A
    out[1:4] = -np.cross(zeta, A)
    out[4] = zeta @ B
    out[5:8] = np.cross(zeta, B)
    return out / mag


def dirac_seed(zeta, pol: Polarization) -> np.ndarray:
    """Ansatz amplitude (0, B | 0, A)/|zeta| whose symbol image is build_M.

    Feeding this to the Qhat Schrodinger solve makes (P - Wbar) of the
    result carry exactly M(zeta) as its leading constant term.
    """
    zeta = np.asarray(zeta, dtype=np.complex128)
    mag = float(np.linalg.norm(zeta))
    out = np.zeros(8, dtype=np.complex128)
    out[1:4] = pol.B_vec
    out[5:8] = pol.A_vec
    return out / mag


def faddeev_symbol(grid: GridSpec, zeta) -> np.ndarray:
    """Lattice symbol |k|^2 + 2 zeta.k of the conjugated Laplacian."""
    zeta = np.asarray(zeta, dtype=np.complex128)
    kx, ky, kz = grid.wavenumbers()
    return grid.k_squared() + 2.0 * (zeta[0] * kx + zeta[1] * ky + zeta[2] * kz)


def _floor_mask(sym: np.ndarray, zeta, floor_scale: float) -> tuple:
    eps = floor_scale * float(np.linalg.norm(np.asarray(zeta)) ** 2)
    return np.abs(sym) < eps, eps


def faddeev_apply(zeta, F: Field, floor_scale: float = 1e-6) -> tuple:
    """Apply the regularized inverse multiplier 1/(|k|^2 + 2 zeta.k).

    Modes whose symbol magnitude falls below floor_scale |zeta|^2 receive
    the complex shift +i eps before inversion.  Returns (field, count of
    shifted modes); more than 0.1% shifted modes aborts, advising a
    different box length.
    """
    grid = F.grid
    sym = faddeev_symbol(grid, zeta)
    mask, eps = _floor_mask(sym, zeta, floor_scale)
    genuine = mask & ~_dead_plane_mask(grid.n)
    count = int(genuine.sum())
    if count > 0.001 * grid.n**3:
        raise RuntimeError(
            f"{count} lattice modes sit on the characteristic set; "
            "choose a different box length to steer the lattice off it"
        )
    sym_reg = sym + 1j * eps * mask
    fh = np.fft.fftn(F.values, axes=(-3, -2, -1))
    out = np.fft.ifftn(fh / sym_reg, axes=(-3, -2, -1))
    return Field(grid, F.rank, out), count


class PotentialApply:
    """Pointwise 8x8 potential action, support-restricted when sparse.

    Wraps m_pot = potential + k0^2 I; when the entries above a relative
    threshold fill less than half the box, the action gathers the support
    points, applies a batched matmul, and scatters back.  The Fourier
    blocks m_hat(q) needed by the deflated solver are cached lazily, so
    one potential can serve many phase vectors.
    """

    def __init__(self, potential: Field, k0sq: float, threshold: float = 1e-14):
        if potential.rank != "matrix8x8":
            raise ValueError("potential must be a matrix8x8 field")
        self.k0sq = float(k0sq)
        self.grid = potential.grid
        n = self.grid.n
        m_pot = potential.values.copy()
        idx = np.arange(8)
        m_pot[idx, idx] += k0sq
        self.sup_norm = float(np.abs(m_pot).max())
        # largest pointwise Frobenius norm bounds the operator 2-norm
        self.op_norm_bound = float(
            np.sqrt((np.abs(m_pot) ** 2).sum(axis=(0, 1))).max()
        )
        flat = m_pot.reshape(8, 8, n**3)
        colmax = np.abs(flat).max(axis=(0, 1))
        self.support = np.flatnonzero(colmax > threshold * max(self.sup_norm, 1e-300))
        self.is_zero = self.sup_norm == 0.0 or self.support.size == 0
        self.dense = self.support.size > 0.5 * n**3
        self._m_pot = m_pot
        self._mhat: Optional[np.ndarray] = None
        if self.dense:
            # (npts, 8, 8) layout feeds batched matmul directly
            self._mats = np.ascontiguousarray(flat.transpose(2, 0, 1))
        else:
            self._mats = np.ascontiguousarray(flat[:, :, self.support].transpose(2, 0, 1))

    def __call__(self, u: np.ndarray) -> np.ndarray:
        n = self.grid.n
        if self.is_zero:
            return np.zeros_like(u)
        flat = u.reshape(8, n**3)
        if self.dense:
            out = np.matmul(self._mats, flat.T[:, :, None])[:, :, 0].T
            return np.ascontiguousarray(out).reshape(8, n, n, n)
        out = np.zeros_like(flat)
        gathered = flat[:, self.support].T[:, :, None]
        out[:, self.support] = np.matmul(self._mats, gathered)[:, :, 0].T
        return out.reshape(8, n, n, n)

    def fourier_block(self, offset) -> np.ndarray:
        """m_hat(q) = sum_x m_pot(x) e^{-i q.x} at an integer mode offset."""
        if self._mhat is None:
            self._mhat = np.fft.fftn(self._m_pot, axes=(-3, -2, -1))
        a, b, c = (int(o) % self.grid.n for o in offset)
        return self._mhat[:, :, a, b, c]


@dataclass(frozen=True)
class SolverStats:
    born_iterations: int
    gmres_iterations: int
    residual: float
    residual_live: float
    residual_floor: float
    contraction: float
    floor_modes: int
    deflated_modes: int
    min_abs_symbol: float
    floor_eps: float


@dataclass(frozen=True)
class CgoSolution:
    """Remainder profile of one CGO solve; Z = e^{i zeta.x}(leading + R)."""

    zeta: tuple
    leading: tuple
    remainder: Field
    kind: str
    stats: SolverStats

    @property
    def zeta_vec(self) -> np.ndarray:
        return np.asarray(self.zeta, dtype=np.complex128)

    @property
    def leading_vec(self) -> np.ndarray:
        return np.asarray(self.leading, dtype=np.complex128)

    def profile(self) -> np.ndarray:
        """U = leading + R as a raw (8, n, n, n) array."""
        return self.leading_vec.reshape(8, 1, 1, 1) + self.remainder.values


def _fftn(u):
    return np.fft.fftn(u, axes=(-3, -2, -1))


def _ifftn(u):
    return np.fft.ifftn(u, axes=(-3, -2, -1))


def _dead_plane_mask(n: int) -> np.ndarray:
    """Unpaired Nyquist planes; excluded from the computational space.

    Matches the derivative convention of :mod:`cgolab.grid`, which
    annihilates these modes: they carry no differentiable content, so the
    conjugated system neither updates nor tests them.
    """
    idx = np.fft.fftfreq(n, d=1.0 / n)
    on_plane = idx == -(n // 2)
    mx, my, mz = np.meshgrid(on_plane, on_plane, on_plane, indexing="ij")
    return mx | my | mz


class _ConjugatedSystem:
    """Spectral-space workhorse for one (zeta, potential) remainder solve.

    Lattice modes split four ways: dead Nyquist planes (outside the
    computational space), the characteristic floor (|symbol| below the
    regularization floor; coefficients pinned to zero, rows reported as
    the truncation defect), a near-characteristic shell (|symbol| below a
    multiple of the potential strength; handled by a small dense block),
    and the bulk.  Live-space solves use the preconditioned Richardson
    sweep x <- x + P(rhs - A x) with P the shell-block/bulk-multiplier
    inverse, whose contraction is bounded by roughly 1/deflation_factor;
    GMRES with the same preconditioner is the fallback when contraction
    degrades.
    """

    def __init__(self, grid, zeta, m_pot, floor_scale, deflation_factor):
        self.grid = grid
        self.n = n = grid.n
        self.m_pot = m_pot
        self.sym = faddeev_symbol(grid, zeta)
        self.dead = _dead_plane_mask(n)
        floor_all, self.eps = _floor_mask(self.sym, zeta, floor_scale)
        self.floor = floor_all & ~self.dead
        self.n_floor = int(self.floor.sum())
        if self.n_floor > 0.001 * n**3:
            raise RuntimeError(
                f"{self.n_floor} lattice modes sit on the characteristic set; "
                "choose a different box length to steer the lattice off it"
            )
        self.live = ~self.dead & ~self.floor
        self.min_sym = float(np.abs(self.sym[self.live]).min())
        cut = max(self.eps, deflation_factor * m_pot.op_norm_bound)
        shell = (np.abs(self.sym) < cut) & self.live
        self.shell_idx = np.argwhere(shell)
        if len(self.shell_idx) > max(4096, int(0.01 * n**3)):
            raise RuntimeError(
                f"{len(self.shell_idx)} modes fall below the deflation cut "
                f"{cut:.3e}; the potential is too strong for this tau"
            )
        self.bulk = self.live & ~shell
        self.inv_bulk = np.where(
            self.bulk, 1.0 / np.where(self.bulk, self.sym, 1.0), 0.0
        )
        self.floor_idx = np.argwhere(self.floor)
        self.matvecs = 0
        self._shell_lu = None

    # -- basic operator pieces (all on spectral arrays, batch-aware) ----

    def conv_pot(self, rh: np.ndarray) -> np.ndarray:
        """F[m_pot ifft(rh)]; leading batch axes allowed."""
        phys = _ifftn(rh)
        if phys.ndim == 4:
            self.matvecs += 1
            return _fftn(self.m_pot(phys))
        self.matvecs += phys.shape[0]
        return _fftn(np.stack([self.m_pot(p) for p in phys]))

    def live_apply(self, vh: np.ndarray) -> np.ndarray:
        """sym v + P_live F[m_pot v], rows projected to the live modes."""
        out = self.sym * vh + self.conv_pot(vh)
        out[..., ~self.live] = 0.0
        return out

    # -- preconditioner ------------------------------------------------

    def _ensure_shell_lu(self):
        if self._shell_lu is not None or len(self.shell_idx) == 0:
            return
        from scipy.linalg import lu_factor

        nfs = len(self.shell_idx)
        J = np.zeros((nfs, 8, nfs, 8), dtype=np.complex128)
        eye8 = np.eye(8)
        for j in range(nfs):
            for k in range(nfs):
                off = self.shell_idx[j] - self.shell_idx[k]
                J[j, :, k, :] = self.m_pot.fourier_block(off) / self.n**3
            J[j, :, j, :] += self.sym[tuple(self.shell_idx[j])] * eye8
        self._shell_lu = lu_factor(J.reshape(nfs * 8, nfs * 8))

    def precond(self, uh: np.ndarray) -> np.ndarray:
        """Inverse of the shell block plus 1/sym on the bulk (batched)."""
        out = self.inv_bulk * uh
        if len(self.shell_idx) == 0:
            return out
        from scipy.linalg import lu_solve

        self._ensure_shell_lu()
        ai, bi, ci = self.shell_idx.T
        coeffs = uh[..., ai, bi, ci]  # (..., 8, ns)
        moved = np.moveaxis(coeffs, -1, -2)  # (..., ns, 8)
        flat = moved.reshape(-1, len(self.shell_idx) * 8)
        solved = lu_solve(self._shell_lu, flat.T).T
        solved = solved.reshape(moved.shape)
        out[..., ai, bi, ci] = np.moveaxis(solved, -2, -1)
        return out

    # -- solvers on the live space --------------------------------------

    def richardson_live(self, rhs_hat, x0, target_abs, max_sweeps=40):
        """Preconditioned Richardson for live_apply(x) = rhs_hat.

        Batch-aware; returns (x, sweeps, converged, contraction).
        """
        x = x0
        resid = rhs_hat - self.live_apply(x)
        norm = float(np.linalg.norm(resid.ravel()))
        contraction = 0.0
        sweeps = 0
        while norm > target_abs and sweeps < max_sweeps:
            x = x + self.precond(resid)
            resid = rhs_hat - self.live_apply(x)
            new_norm = float(np.linalg.norm(resid.ravel()))
            contraction = new_norm / norm if norm > 0 else 0.0
            norm = new_norm
            sweeps += 1
            if contraction > 0.9:
                break
        return x, sweeps, norm <= target_abs, contraction

    def gmres_live(self, rhs_hat, x0, target_abs, budget):
        """Fallback Krylov solve of the live system, right-preconditioned."""
        n = self.n
        size = 8 * n**3
        shape = (8, n, n, n)

        def mv(y):
            return self.live_apply(self.precond(y.reshape(shape))).ravel()

        A = LinearOperator((size, size), matvec=mv, dtype=np.complex128)
        resid = rhs_hat - self.live_apply(x0)
        norm = np.linalg.norm(resid.ravel())
        if norm == 0.0:
            return x0, 0
        counter = {"n": 0}

        def cb(_):
            counter["n"] += 1

        y, _info = gmres(
            A, resid.ravel(), rtol=max(0.5 * target_abs / norm, 1e-14),
            atol=0.0, restart=40, maxiter=max(budget // 40 + 1, 1),
            callback=cb, callback_type="pr_norm",
        )
        self.matvecs += counter["n"]
        return x0 + self.precond(y.reshape(shape)), counter["n"]

    def solve_live(self, rhs_hat, x0, target_abs, budget):
        x, sweeps, ok, _c = self.richardson_live(rhs_hat, x0, target_abs)
        its = sweeps
        if not ok:
            x, g_its = self.gmres_live(rhs_hat, x, target_abs, budget)
            its += g_its
        return x, its


def solve_cgo(
    zeta,
    potential: Field,
    leading,
    tol: float = 1e-9,
    max_iter: int = 600,
    floor_scale: float = 1e-6,
    deflation_factor: float = 4.0,
    kind: str = "schrodinger_Q",
) -> CgoSolution:
    """Solve the conjugated remainder equation for one CGO ansatz.

    The profile U = L + R satisfies (-Lap - 2i zeta.grad)R + m_pot U = 0
    with m_pot = potential + (zeta.zeta) I, posed on the lattice modes off
    the Nyquist planes.  The lattice always carries exact characteristic
    zeros (k = 0 and k = xi); the remainder is computed with those floor
    coefficients pinned near zero, which is the lattice analogue of the
    decay normalization that selects the remainder in the continuum
    theory (the exact discrete system is near-resonant and its exact
    solution is a physically different, far-drifted member of the CGO
    family).  Consequences of the choice:

    * the live-mode equations are solved to ``tol`` (Born/Richardson
      sweeps with a dense near-characteristic shell block, GMRES
      fallback); this is ``residual_live`` and gates success;
    * the floor-row defect that remains is the periodic-image truncation
      error of the box, reported as ``residual_floor`` and folded into
      the total ``residual``; it shrinks with tau, box size and potential
      strength but cannot be iterated away on a fixed lattice.

    Raises if the floor set exceeds 0.1% of the modes or if the live
    equations cannot reach ``tol`` within the iteration budget.
    """
    zeta = np.asarray(zeta, dtype=np.complex128)
    grid = potential.grid
    n = grid.n
    k0sq = complex(zeta @ zeta)
    if abs(k0sq.imag) > 1e-10 * max(abs(k0sq), 1.0):
        raise ValueError(f"zeta.zeta must be (numerically) real, got {k0sq}")
    leading = np.asarray(leading, dtype=np.complex128)
    if isinstance(potential, PotentialApply):
        m_pot = potential
        if abs(m_pot.k0sq - k0sq.real) > 1e-9 * max(abs(k0sq), 1.0):
            raise ValueError(
                f"reused potential was built for k0^2={m_pot.k0sq}, "
                f"but zeta.zeta={k0sq.real}"
            )
        grid = m_pot.grid
    else:
        m_pot = PotentialApply(potential, k0sq.real)
    sysm = _ConjugatedSystem(grid, zeta, m_pot, floor_scale, deflation_factor)
    lead_field = np.ascontiguousarray(
        np.broadcast_to(leading.reshape(8, 1, 1, 1), (8, n, n, n))
    )
    lead_norm_phys = float(np.linalg.norm(leading)) * n**1.5

    zero = np.zeros((8, n, n, n), dtype=np.complex128)
    if m_pot.is_zero:
        stats = SolverStats(0, 0, 0.0, 0.0, 0.0, 0.0, sysm.n_floor,
                            len(sysm.shell_idx), sysm.min_sym, sysm.eps)
        return CgoSolution(
            tuple(zeta), tuple(leading), Field(grid, "spinor8", zero), kind, stats
        )

    # constant part of the source: F[m_pot(L + R)] = pot_lead + conv_pot(R)
    pot_lead = _fftn(m_pot(lead_field))

    def residuals(rh):
        rows = sysm.sym * rh + sysm.conv_pot(rh) + pot_lead
        rows[:, sysm.dead] = 0.0
        u_norm = max(
            float(np.linalg.norm((_ifftn(rh) + lead_field).ravel())) * n**1.5,
            1e-300,
        )
        floor_rows = rows[:, sysm.floor]
        r_floor = float(np.linalg.norm(floor_rows.ravel()) / u_norm)
        rows[:, sysm.floor] = 0.0
        r_live = float(np.linalg.norm(rows.ravel()) / u_norm)
        return np.hypot(r_live, r_floor), r_live, r_floor

    res, r_live, r_floor = residuals(zero)
    if res <= tol:
        stats = SolverStats(0, 0, res, r_live, r_floor, 0.0, sysm.n_floor,
                            len(sysm.shell_idx), sysm.min_sym, sysm.eps)
        return CgoSolution(
            tuple(zeta), tuple(leading), Field(grid, "spinor8", zero), kind, stats
        )

    live_target = 0.5 * tol * lead_norm_phys
    rhs_main = -pot_lead.copy()
    rhs_main[:, ~sysm.live] = 0.0

    # Born phase: plain projected sweeps measure the Neumann-series
    # contraction before the preconditioned machinery takes over.
    rh = zero
    prev_inc = None
    contraction = 0.0
    born_iters = 0
    for born_iters in range(1, 9):
        rh_new = sysm.inv_bulk * rhs_main - sysm.inv_bulk * sysm.conv_pot(rh)
        inc = float(np.linalg.norm((rh_new - rh).ravel()))
        rh = rh_new
        if prev_inc is not None and prev_inc > 0:
            contraction = inc / prev_inc
            if contraction > 0.9 or inc < 0.3 * live_target:
                break
        prev_inc = inc

    rh, solver_its = sysm.solve_live(rhs_main, rh, live_target,
                                     max_iter - sysm.matvecs)

    # The floor coefficients stay pinned at zero: the Schur block that
    # couples them is uniformly near-singular (the system is close to a
    # whole-family resonance), so any attempt to cancel the floor rows
    # drifts far along the CGO family.  The defect that remains on those
    # rows is the periodic-image truncation error of the box and is
    # reported, not iterated on.
    res, r_live, r_floor = residuals(rh)
    if r_live > tol:
        raise RuntimeError(
            f"CGO solve stalled: live-mode residual {r_live:.3e} > tol "
            f"{tol:.1e} after {sysm.matvecs} operator applications; "
            "a larger tau usually restores contraction"
        )

    stats = SolverStats(
        born_iterations=born_iters,
        gmres_iterations=solver_its,
        residual=res,
        residual_live=r_live,
        residual_floor=r_floor,
        contraction=contraction,
        floor_modes=sysm.n_floor,
        deflated_modes=len(sysm.shell_idx),
        min_abs_symbol=sysm.min_sym,
        floor_eps=sysm.eps,
    )
    return CgoSolution(
        zeta=tuple(zeta),
        leading=tuple(leading),
        remainder=Field(grid, "spinor8", _ifftn(rh)),
        kind=kind,
        stats=stats,
    )


@dataclass(frozen=True)
class MaxwellSolution:
    """Maxwell-form output Y = (P - W^t)Z, all stored as profiles."""

    zeta: tuple
    Y: Field
    E: Field
    H: Field
    scalar_slot_rel: float
    residual_PW: float
    residual_ampere: float
    residual_faraday: float


def _shifted_curl(grid: GridSpec, v: np.ndarray, zeta: np.ndarray) -> np.ndarray:
    """Profile curl: e^{-i zeta.x} (grad x) e^{i zeta.x} = curl + i zeta x."""
    kx, ky, kz = grid.wavenumbers()
    vh = _fftn(v)
    curl = np.stack(
        [
            _ifftn(1j * (ky * vh[2] - kz * vh[1])),
            _ifftn(1j * (kz * vh[0] - kx * vh[2])),
            _ifftn(1j * (kx * vh[1] - ky * vh[0])),
        ]
    )
    zx = np.stack(
        [
            zeta[1] * v[2] - zeta[2] * v[1],
            zeta[2] * v[0] - zeta[0] * v[2],
            zeta[0] * v[1] - zeta[1] * v[0],
        ]
    )
    return curl + 1j * zx


def derive_maxwell_solution(sol: CgoSolution, ops: MediumOperators) -> MaxwellSolution:
    """Y = (P - W^t)Z for a Q-kind solve, unpacked into (E, H) profiles.

    The scalar slots of Y must vanish up to solver error; E and H are read
    off the vector slots after removing the sqrt(gamma), sqrt(mu) scaling,
    and both time-harmonic Maxwell equations are evaluated as shifted-
    operator residuals on the profiles.
    """
    if sol.kind != "schrodinger_Q":
        raise ValueError("Maxwell derivation needs a Q-kind CGO solution")
    grid = sol.remainder.grid
    zeta = sol.zeta_vec
    medium = ops.medium
    u = sol.profile()
    y = apply_P_raw(grid, u, zeta) - ops.apply_w(u, "Wt")
    y_norm = max(float(np.linalg.norm(y.ravel())), 1e-300)
    s0, vh, s4, ve = split_blocks(y)
    scalar_rel = float(
        np.sqrt(np.linalg.norm(s0.ravel()) ** 2 + np.linalg.norm(s4.ravel()) ** 2)
        / y_norm
    )
    H = vh / np.sqrt(medium.mu.values)
    E = ve / np.sqrt(medium.gamma.values)

    pw = apply_P_raw(grid, y, zeta) + ops.apply_w(y, "W")
    res_pw = float(np.linalg.norm(pw.ravel()) / y_norm)

    om = medium.omega
    ampere = _shifted_curl(grid, H, zeta) + 1j * om * medium.gamma.values * E
    faraday = _shifted_curl(grid, E, zeta) - 1j * om * medium.mu.values * H
    amp_scale = max(np.linalg.norm((om * medium.gamma.values * E).ravel()), 1e-300)
    far_scale = max(np.linalg.norm((om * medium.mu.values * H).ravel()), 1e-300)
    return MaxwellSolution(
        zeta=sol.zeta,
        Y=Field(grid, "spinor8", y),
        E=Field(grid, "vector3", E),
        H=Field(grid, "vector3", H),
        scalar_slot_rel=scalar_rel,
        residual_PW=res_pw,
        residual_ampere=float(np.linalg.norm(ampere.ravel()) / amp_scale),
        residual_faraday=float(np.linalg.norm(faraday.ravel()) / far_scale),
    )


@dataclass(frozen=True)
class DiracSolution:
    """Dirac-system output Yhat = (P - Wbar)Zhat as a profile field."""

    zeta: tuple
    Y: Field
    residual_PWstar: float
    leading_reference: tuple

    @property
    def leading_vec(self) -> np.ndarray:
        return np.asarray(self.leading_reference, dtype=np.complex128)


def derive_dirac_solution(
    sol: CgoSolution, ops: MediumOperators, m_reference=None
) -> DiracSolution:
    """Yhat = (P - Wbar)Zhat for a Qhat-kind solve.

    With the dirac_seed ansatz the constant part of the profile is exactly
    M(zeta) plus O(1/|zeta|) corrections; ``m_reference`` defaults to the
    symbol image of the seed, which equals build_M of the polarization.
    """
    if sol.kind != "schrodinger_Qhat":
        raise ValueError("Dirac derivation needs a Qhat-kind CGO solution")
    grid = sol.remainder.grid
    zeta = sol.zeta_vec
    u = sol.profile()
    y = apply_P_raw(grid, u, zeta) - ops.apply_w(u, "Wbar")
    pws = apply_P_raw(grid, y, zeta) + ops.apply_w(y, "Wstar")
    res = float(np.linalg.norm(pws.ravel()) / max(np.linalg.norm(y.ravel()), 1e-300))
    if m_reference is None:
        m_reference = symbol_matrix(zeta) @ sol.leading_vec
    return DiracSolution(
        zeta=sol.zeta,
        Y=Field(grid, "spinor8", y),
        residual_PWstar=res,
        leading_reference=tuple(np.asarray(m_reference, dtype=np.complex128)),
    )


def build_z_aux(sol: CgoSolution, maxwell: MaxwellSolution, ops: MediumOperators) -> Field:
    """Augment the Z-profile's electric slot by mu^{-1/2} E / omega."""
    medium = ops.medium
    u = sol.profile().copy()
    u[5:8] += maxwell.E.values / (np.sqrt(medium.mu.values) * medium.omega)
    return Field(sol.remainder.grid, "spinor8", u)


@dataclass(frozen=True)
class AuxIdentityReport:
    residual: float
    slot_gamma_kappa: float
    first_slot_sign: float


def verify_aux_identity(
    sol: CgoSolution, maxwell: MaxwellSolution, ops: MediumOperators
) -> AuxIdentityReport:
    """Check the zeroth-order form of (P - W^t) on the augmented profile.

    The right-hand side has a single nonzero scalar slot proportional to
    (-2 grad(mu^{-1/2}) + mu^{-1/2} grad(alpha)) . E / omega and an
    electric slot (gamma^{1/2} - kappa mu^{-1/2}/omega) E that vanishes
    identically by the definition of kappa (its measured size is reported
    separately).  The residual is normalized by ||E||/omega, the scale of
    the slot that was modified.

    The conventions here force the first slot to carry +i/omega (the
    printed source has -i/omega on the same bracket; the discrepancy is a
    fixed sign, recorded by ``first_slot_sign``: +1 means the +i/omega
    form matches the measured field).
    """
    medium = ops.medium
    grid = sol.remainder.grid
    zeta = sol.zeta_vec
    om = medium.omega

    u_aux = build_z_aux(sol, maxwell, ops).values
    lhs = apply_P_raw(grid, u_aux, zeta) - ops.apply_w(u_aux, "Wt")

    from .grid import spectral_derivative
    from .media import log_fields

    lf = log_fields(medium)
    inv_sqrt_mu = 1.0 / np.sqrt(medium.mu.values)
    # true gradients: grad = i D
    grad_ism = 1j * spectral_derivative(
        make_field(grid, "scalar", inv_sqrt_mu), "gradient"
    ).values
    grad_alpha = 1j * spectral_derivative(lf.alpha, "gradient").values
    e_vals = maxwell.E.values
    coeff = -2.0 * grad_ism + inv_sqrt_mu * grad_alpha
    slot0 = (1j / om) * (
        coeff[0] * e_vals[0] + coeff[1] * e_vals[1] + coeff[2] * e_vals[2]
    )
    gamma_slot = np.sqrt(medium.gamma.values) - lf.kappa.values * inv_sqrt_mu / om
    rhs = np.zeros_like(lhs)
    rhs[0] = slot0
    rhs[5:8] = gamma_slot * e_vals

    e_scale = max(np.linalg.norm(e_vals.ravel()), 1e-300) / om
    resid = float(np.linalg.norm((lhs - rhs).ravel()) / e_scale)
    lhs0 = lhs[0].ravel()
    rhs0 = rhs[0].ravel()
    denom = float(np.linalg.norm(lhs0) * np.linalg.norm(rhs0))
    sign = float(np.vdot(rhs0, lhs0).real / denom) if denom > 0 else 0.0
    slot_gamma = float(
        np.abs(gamma_slot).max()
        / max(np.abs(np.sqrt(medium.gamma.values)).max(), 1e-300)
    )
    return AuxIdentityReport(residual=resid, slot_gamma_kappa=slot_gamma, first_slot_sign=sign)


def measure_stability_ratio(
    sol: CgoSolution, maxwell: MaxwellSolution, mask: DomainMask
) -> float:
    """||Z|| / ||E|| over the mask, exponential phase weight included.

    |e^{i zeta.x}| = e^{-Im(zeta).x} does not cancel between numerator and
    denominator pointwise, so it is carried explicitly; the ratio is the
    empirical stand-in for the Dirac stability constant and no bound is
    asserted.
    """
    grid = sol.remainder.grid
    zeta = sol.zeta_vec
    x, y, z = grid.coords()
    im = np.imag(zeta)
    weight = np.exp(-(im[0] * x + im[1] * y + im[2] * z))
    wu = sol.profile() * weight
    we = maxwell.E.values * weight
    ind = mask.indicator
    num = np.sqrt((np.abs(wu) ** 2 * ind).sum())
    den = np.sqrt((np.abs(we) ** 2 * ind).sum())
    if den == 0.0:
        raise ValueError("electric field vanishes on the mask")
    return float(num / den)
