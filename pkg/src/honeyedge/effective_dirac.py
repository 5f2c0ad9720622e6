"""One-dimensional domain-wall Dirac operators.

The effective operator attached to a vertex ``K*`` is

    D(mu) = sigma(khat2) D_zeta + mu sigma(khat1) + theta kappa(zeta) sigma3,
    sigma(m) = upsilon (m1 sigma1 - m2 sigma2),  D_zeta = -i d/dzeta,

and it is unitarily equivalent to

    D0(mu) = upsilon |khat2| sigma1 D_zeta - (upsilon / |khat2|) mu sigma2 + theta kappa sigma3

through ``(N alpha)(zeta) = diag(omega, conj(omega)) alpha(zeta) exp(i mu Kc zeta)``.
Writing ``alpha = (a1, i b2)`` turns ``D0`` into a real symmetric operator, which is
what the solver diagonalizes.
"""
from __future__ import annotations

import csv
import math
import threading
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.linalg

from .bloch_solver import SIGMA1, SIGMA2, SIGMA3, DiracPointData, fmt, twisted_pauli
from .lattice_frame import EdgeFrame, WrapIndex, enumerate_L_eps, gamma_values, K_TAGS


class InsufficientWindow(RuntimeError):
    """The truncation window does not saturate the wall or holds no localized mode."""


class ResolutionWarning(UserWarning):
    """Halving the grid moved an eigenvalue by more than the resolution tolerance."""


# ---------------------------------------------------------------------------
# walls and operator description
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Wall:
    """Domain-wall profile ``kappa`` with ``kappa(+-inf) = +-1``."""

    wall_id: str
    func: Callable[[np.ndarray], np.ndarray] = field(compare=False)
    antiderivative: Callable[[np.ndarray], np.ndarray] | None = field(default=None, compare=False)
    deriv: Callable[[np.ndarray], np.ndarray] | None = field(default=None, compare=False)

    def __call__(self, z):
        return self.func(np.asarray(z, dtype=float))

    def derivative(self, z):
        """``kappa'(zeta)``, analytic when available, else a fourth-order difference."""
        z = np.asarray(z, dtype=float)
        if self.deriv is not None:
            return self.deriv(z)
        h = 1e-3
        return (-self.func(z + 2 * h) + 8 * self.func(z + h) - 8 * self.func(z - h) + self.func(z - 2 * h)) / (12 * h)


def _logcosh(z):
    z = np.abs(z)
    return z + np.log1p(np.exp(-2 * z)) - math.log(2)


def make_wall(kind: str = "tanh", scale: float = 1.0, bump: float = 0.0, bump_center: float = 0.0,
              bump_width: float = 1.0) -> Wall:
    """Build a domain-wall function.

    Parameters
    ----------
    kind : {"tanh", "erf", "algebraic"}
        Base profile evaluated at ``zeta / scale``.
    scale : float
        Wall width.
    bump : float
        Amplitude of an added Gaussian bump ``bump * exp(-((zeta - c)/w)^2)``.
    bump_center, bump_width : float
        Bump location and width.

    Returns
    -------
    Wall
    """
    if scale <= 0:
        raise ValueError("scale must be positive")
    if kind == "tanh":
        base = lambda z: np.tanh(z / scale)
        anti = lambda z: scale * _logcosh(z / scale)
        der = lambda z: 1.0 / (scale * np.cosh(z / scale) ** 2)
    elif kind == "erf":
        from scipy.special import erf

        base = lambda z: erf(z / scale)
        anti = None
        der = lambda z: 2 / (math.sqrt(math.pi) * scale) * np.exp(-((z / scale) ** 2))
    elif kind == "algebraic":
        base = lambda z: (z / scale) / np.sqrt(1 + (z / scale) ** 2)
        anti = lambda z: scale * (np.sqrt(1 + (z / scale) ** 2) - 1)
        der = lambda z: 1.0 / (scale * (1 + (z / scale) ** 2) ** 1.5)
    else:
        raise ValueError(f"unknown wall kind {kind!r}")
    wid = f"{kind}(scale={scale!r})"
    if bump:
        b, c, w = float(bump), float(bump_center), float(bump_width)
        fn = lambda z: base(z) + b * np.exp(-(((z - c) / w) ** 2))
        dfn = lambda z: der(z) - 2 * b * (z - c) / w**2 * np.exp(-(((z - c) / w) ** 2))
        return Wall(wid + f"+bump({b!r},{c!r},{w!r})", fn, None, dfn)
    return Wall(wid, base, anti, der)


TANH = make_wall("tanh")


@dataclass(frozen=True)
class DiracOperatorSpec:
    """Data defining ``D^{K*}(mu_hat)``."""

    Kstar: str
    mu_hat: float
    v: float
    theta: float
    khat1: np.ndarray
    khat2: np.ndarray
    wall: Wall = TANH

    @property
    def sigma1_coeff(self) -> np.ndarray:
        """``sigma^{K*}(khat2)``, the coefficient of ``D_zeta``."""
        return twisted_pauli(self.khat2, self.v)

    @property
    def sigma2_coeff(self) -> np.ndarray:
        """``sigma^{K*}(khat1)``, the coefficient of ``mu_hat``."""
        return twisted_pauli(self.khat1, self.v)

    @property
    def khat2_norm(self) -> float:
        return float(np.linalg.norm(self.khat2))

    @property
    def decay_rate(self) -> float:
        """``|theta| / (|v| |khat2|)``, the zero-mode decay rate for a unit wall."""
        return abs(self.theta) / (abs(self.v) * self.khat2_norm)

    def default_window(self) -> float:
        return 30.0 / min(1.0, self.decay_rate)

    def with_mu(self, mu_hat: float) -> "DiracOperatorSpec":
        return DiracOperatorSpec(self.Kstar, float(mu_hat), self.v, self.theta, self.khat1, self.khat2, self.wall)

    def cache_key(self, L: float, N_grid: int, method: str) -> tuple:
        return (self.wall.wall_id, self.v, self.theta, self.mu_hat, tuple(self.khat1), tuple(self.khat2),
                float(L), int(N_grid), method)


def dirac_spec(dp: DiracPointData, frame: EdgeFrame, theta: float, mu_hat: float = 0.0,
               wall: Wall = TANH) -> DiracOperatorSpec:
    """Operator description from a Dirac point, an edge frame and ``theta``."""
    return DiracOperatorSpec(dp.Kstar, float(mu_hat), dp.upsilon, float(theta), frame.khat1, frame.khat2, wall)


# ---------------------------------------------------------------------------
# closed forms and unitary equivalence
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DiracSpectrum:
    """In-gap eigenvalues of a domain-wall Dirac operator.

    ``eigenvalues`` is sorted ascending with ``2N + 1`` entries; the middle entry is the
    branch ``z_0``.  ``eigenfunctions`` (if present) has shape ``(2N+1, N_grid, 2)`` and is
    normalized in ``L^2(dzeta)``.
    """

    theta_gap: float
    eigenvalues: np.ndarray
    N: int
    zeta: np.ndarray | None = None
    eigenfunctions: np.ndarray | None = None
    eigenfunctions_d0: np.ndarray | None = None
    boundary_mass: np.ndarray | None = None
    mu_hat: float = 0.0

    @property
    def z0(self) -> float:
        return float(self.eigenvalues[self.N])

    def branch(self, j: int) -> float:
        return float(self.eigenvalues[self.N + j])


def zero_branch_slope(v: float, theta: float, khat2_norm: float) -> float:
    """Slope ``dz_0/dmu_hat = -sign(theta) |v| / |khat2|`` of the protected branch.

    The zero mode of ``D0(0)`` is ``f (1, i s)`` with ``s = sign(theta / v)``; it stays an
    eigenfunction of ``D0(mu_hat)`` with eigenvalue ``-s v mu_hat / |khat2|``.
    """
    return -math.copysign(1.0, theta) * abs(v) / khat2_norm


def closed_form_spectrum(base_z: Sequence[float], mu_hat: float, v: float, theta: float,
                         khat2_norm: float) -> DiracSpectrum:
    """Spectrum of ``D(mu_hat)`` from that of ``D(0)``.

    Parameters
    ----------
    base_z : sequence of float
        Sorted in-gap eigenvalues of ``D(0)``, symmetric about 0, odd count.
    mu_hat : float
    v : float
        ``upsilon^{K*}`` (signed).
    theta : float
        ``theta^{K*}``.
    khat2_norm : float
        ``|khat2|``.

    Returns
    -------
    DiracSpectrum
        ``z_0 = zero_branch_slope * mu_hat``, ``z_{+-j} = +-sqrt(z_j^2 + v^2 mu_hat^2 / |khat2|^2)``
        and ``theta_gap = sqrt(theta^2 + v^2 mu_hat^2 / |khat2|^2)``.
    """
    z = np.sort(np.asarray(base_z, dtype=float))
    if len(z) % 2 != 1:
        raise ValueError("base spectrum must have an odd number of eigenvalues")
    N = len(z) // 2
    m2 = (v * mu_hat / khat2_norm) ** 2
    pos = np.sqrt(z[N + 1:] ** 2 + m2)
    z0 = zero_branch_slope(v, theta, khat2_norm) * mu_hat
    eig = np.concatenate([-pos[::-1], [z0], pos])
    return DiracSpectrum(math.sqrt(theta**2 + m2), eig, N, mu_hat=float(mu_hat))


def unitary_equivalence_constants(khat1: np.ndarray, khat2: np.ndarray, v: float = 1.0) -> tuple[float, complex]:
    """Constants ``(Kc, omega)`` with ``D(mu) = N(mu)^* D0(mu) N(mu)``.

    Parameters
    ----------
    khat1, khat2 : ndarray
    v : float
        Dirac coefficient; the constants do not depend on it.

    Returns
    -------
    Kc : float
        ``khat1 . khat2 / |khat2|^2``.
    omega : complex
        Unit number with ``omega^2 zhat2 = |zhat2|``, ``zhat2 = khat2[0] + i khat2[1]``.
    """
    khat1 = np.asarray(khat1, dtype=float)
    khat2 = np.asarray(khat2, dtype=float)
    n2 = float(khat2 @ khat2)
    if n2 == 0:
        raise ValueError("khat2 must be nonzero")
    Kc = float(khat1 @ khat2) / n2
    z2 = complex(khat2[0], khat2[1])
    omega = np.sqrt(abs(z2) / z2)
    return Kc, complex(omega / abs(omega))


# ---------------------------------------------------------------------------
# discretization
# ---------------------------------------------------------------------------


def zeta_grid(L: float, N_grid: int) -> np.ndarray:
    """Periodic grid ``-L + j * 2L / N`` for ``j = 0..N-1``."""
    return -L + np.arange(N_grid) * (2 * L / N_grid)


def derivative_matrix(L: float, N_grid: int, method: str = "fourier") -> np.ndarray:
    """Real antisymmetric periodic first-derivative matrix on :func:`zeta_grid`.

    ``fourier`` is the spectral derivative with the Nyquist mode removed; ``fd4`` is the
    fourth-order centred difference.
    """
    if N_grid % 2:
        raise ValueError("N_grid must be even")
    h = 2 * L / N_grid
    j = np.arange(N_grid)
    d = (j[:, None] - j[None, :]) % N_grid
    if method == "fourier":
        with np.errstate(divide="ignore"):
            col = 0.5 * (-1.0) ** d / np.tan(np.pi * d / N_grid)
        col[d == 0] = 0.0
        return col * (np.pi / L)
    if method == "fd4":
        D = np.zeros((N_grid, N_grid))
        for off, w in ((1, 8.0), (2, -1.0)):
            D[d == off] = -w
            D[d == N_grid - off] = w
        return D / (12 * h)
    raise ValueError(f"unknown method {method!r}")


def dirac_matrices(spec: DiracOperatorSpec, L: float, N_grid: int, method: str = "fourier"):
    """Discretized ``D(mu_hat)``, ``D0(mu_hat)`` and the conjugation ``N(mu_hat)``.

    ``D`` acts on spinors with the twisted window condition ``alpha(zeta + 2L) =
    exp(-2i mu_hat Kc L) alpha(zeta)`` and ``D0`` on periodic ones, so that
    ``N D N^* = D0`` holds exactly at the matrix level.  Spinor components are stored
    blockwise, ``[alpha_1(zeta_0..), alpha_2(zeta_0..)]``.

    Returns
    -------
    D, D0, Nmat : ndarray
    """
    z = zeta_grid(L, N_grid)
    Pd = -1j * derivative_matrix(L, N_grid, method)
    Kc, omega = unitary_equivalence_constants(spec.khat1, spec.khat2)
    a = spec.mu_hat * Kc
    E = np.exp(1j * a * z)
    # twisted derivative D_s = E_s D_0 E_s^* + s, here s = -a
    Ds = (E.conj()[:, None] * Pd * E[None, :]) - a * np.eye(N_grid)
    kap = np.diag(spec.wall(z))
    I = np.eye(N_grid)
    D = (np.kron(spec.sigma1_coeff, Ds) + spec.mu_hat * np.kron(spec.sigma2_coeff, I)
         + spec.theta * np.kron(SIGMA3, kap))
    n2 = spec.khat2_norm
    D0 = (spec.v * n2 * np.kron(SIGMA1, Pd) - (spec.v / n2) * spec.mu_hat * np.kron(SIGMA2, I)
          + spec.theta * np.kron(SIGMA3, kap))
    Nmat = np.kron(np.diag([omega, omega.conjugate()]), np.diag(E))
    return D, D0, Nmat


def _real_reduced_d0(spec: DiracOperatorSpec, L: float, N_grid: int, method: str) -> np.ndarray:
    z = zeta_grid(L, N_grid)
    dz = derivative_matrix(L, N_grid, method)
    n2 = spec.khat2_norm
    c = spec.v * n2
    m = spec.v * spec.mu_hat / n2
    kap = np.diag(spec.wall(z))
    I = np.eye(N_grid)
    top = np.hstack([spec.theta * kap, c * dz - m * I])
    bot = np.hstack([-c * dz - m * I, -spec.theta * kap])
    return np.vstack([top, bot])


def _boundary_mass(vecs: np.ndarray, z: np.ndarray, L: float, frac: float) -> np.ndarray:
    outer = np.abs(z) > (1 - frac) * L
    dens = np.sum(np.abs(vecs) ** 2, axis=-1)
    return dens[:, outer].sum(axis=1) / dens.sum(axis=1)


def _localize_clusters(w: np.ndarray, U: np.ndarray, outer: np.ndarray, tol: float) -> np.ndarray:
    """Rotate near-degenerate eigenvectors so each is either wall- or boundary-localized.

    The periodic window carries an anti-wall at its ends whose modes can be degenerate
    with those of the wall; diagonalizing the outer-mass operator inside each cluster
    separates them.
    """
    U = U.copy()
    ncomp = U.shape[0] // len(outer)
    weight = np.tile(outer.astype(float), ncomp)
    i = 0
    while i < len(w):
        j = i + 1
        while j < len(w) and w[j] - w[j - 1] < tol:
            j += 1
        if j - i > 1:
            blk = U[:, i:j]
            M = blk.conj().T @ (weight[:, None] * blk)
            _, R = np.linalg.eigh(M)
            U[:, i:j] = blk @ R
        i = j
    return U


def _high_frequency_fraction(vecs: np.ndarray) -> np.ndarray:
    """Share of each spinor's spectral weight above half the Nyquist wavenumber."""
    c = np.abs(np.fft.fft(vecs, axis=1)) ** 2
    c = c.sum(axis=-1)
    k = np.abs(np.fft.fftfreq(vecs.shape[1]))
    return c[:, k > 0.25].sum(axis=1) / c.sum(axis=1)


def _drop_doublers(method: str, vecs: np.ndarray) -> np.ndarray:
    # centred differences carry a spurious copy of every mode near the Nyquist wavenumber
    if method != "fd4" or len(vecs) == 0:
        return np.ones(len(vecs), dtype=bool)
    return _high_frequency_fraction(vecs) < 0.5


def _solve_once(spec, L, N_grid, method, margin, mass_tol, outer_frac):
    z = zeta_grid(L, N_grid)
    h = 2 * L / N_grid
    A = _real_reduced_d0(spec, L, N_grid, method)
    n2 = spec.khat2_norm
    gap = math.sqrt(spec.theta**2 + (spec.v * spec.mu_hat / n2) ** 2)
    lo, hi = -gap + margin, gap - margin
    w, U = scipy.linalg.eigh(A, subset_by_value=(lo, hi), driver="evr")
    U = _localize_clusters(w, U, np.abs(z) > (1 - outer_frac) * L, 1e-9 * gap)
    a1 = U[:N_grid].T
    a2 = 1j * U[N_grid:].T
    vec0 = np.stack([a1, a2], axis=-1)
    bm = _boundary_mass(vec0, z, L, outer_frac)
    keep = (bm < mass_tol) & _drop_doublers(method, vec0)
    w, vec0, bm = w[keep], vec0[keep], bm[keep]
    vec0 = vec0 / np.sqrt(np.sum(np.abs(vec0) ** 2, axis=(1, 2)) * h)[:, None, None]
    return z, gap, w, vec0, bm


def solve_dirac_1d(
    spec: DiracOperatorSpec,
    L: float | None = None,
    N_grid: int = 1024,
    method: str = "fourier",
    margin: float | None = None,
    mass_tol: float = 1e-8,
    outer_frac: float = 0.1,
    check_resolution: bool = True,
    resolution_tol: float = 1e-6,
) -> DiracSpectrum:
    """In-gap eigenpairs of ``D^{K*}(mu_hat)`` on a truncated window.

    Parameters
    ----------
    spec : DiracOperatorSpec
    L : float, optional
        Half-width of the window; defaults to ``30 / min(1, decay rate)``.
    N_grid : int
        Even number of grid points.
    method : {"fourier", "fd4"}
        Discretization of ``D_zeta``.
    margin : float, optional
        Eigenvalues within ``margin`` of the gap edges are discarded; defaults to
        ``1e-6 * theta_gap``.
    mass_tol : float
        Maximal eigenfunction mass in the outer ``outer_frac`` of the window at each end.
        With ``fd4``, modes carrying most of their weight above half the Nyquist
        wavenumber (the doublers of centred differences) are discarded as well.
    outer_frac : float
    check_resolution : bool
        Re-solve on half the grid and warn if any eigenvalue moves by more than
        ``resolution_tol``.
    resolution_tol : float

    Returns
    -------
    DiracSpectrum
        Eigenfunctions are returned both in the ``D`` frame (``eigenfunctions``) and in
        the ``D0`` frame (``eigenfunctions_d0``).

    Raises
    ------
    InsufficientWindow
        If the wall is not saturated at the window ends or no localized mode survives.
    """
    if L is None:
        L = spec.default_window()
    if N_grid % 2:
        raise ValueError("N_grid must be even")
    sat = max(abs(float(spec.wall(L)) - 1), abs(float(spec.wall(-L)) + 1))
    if sat >= 1e-10:
        raise InsufficientWindow(f"|kappa(+-L) -+ 1| = {sat:.2e} at L = {L}")
    gap0 = math.sqrt(spec.theta**2 + (spec.v * spec.mu_hat / spec.khat2_norm) ** 2)
    margin = 1e-6 * gap0 if margin is None else margin
    z, gap, w, vec0, bm = _solve_once(spec, L, N_grid, method, margin, mass_tol, outer_frac)
    if len(w) == 0:
        raise InsufficientWindow("boundary-mass filter removed every in-gap candidate")
    if check_resolution:
        _, _, wh, _, _ = _solve_once(spec, L, N_grid // 2, method, margin, mass_tol, outer_frac)
        if len(wh) != len(w):
            warnings.warn(f"halving the grid changed the in-gap count {len(w)} -> {len(wh)}", ResolutionWarning)
        elif len(w) and np.max(np.abs(wh - w)) > resolution_tol:
            warnings.warn(f"halving the grid moved eigenvalues by {np.max(np.abs(wh - w)):.2e}", ResolutionWarning)
    Kc, omega = unitary_equivalence_constants(spec.khat1, spec.khat2)
    phase = np.exp(-1j * spec.mu_hat * Kc * z)
    vec = np.stack([omega.conjugate() * vec0[..., 0], omega * vec0[..., 1]], axis=-1) * phase[None, :, None]
    N = len(w) // 2
    return DiracSpectrum(gap, w, N, z, vec, vec0, bm, float(spec.mu_hat))


def solve_dirac_direct(spec: DiracOperatorSpec, L: float | None = None, N_grid: int = 1024,
                       method: str = "fourier", mass_tol: float = 1e-8, outer_frac: float = 0.1) -> np.ndarray:
    """In-gap eigenvalues from the complex Hermitian discretization of ``D`` itself.

    Independent of the ``D0`` reduction; used as a cross-check.
    """
    if L is None:
        L = spec.default_window()
    D, _, _ = dirac_matrices(spec, L, N_grid, method)
    z = zeta_grid(L, N_grid)
    gap = math.sqrt(spec.theta**2 + (spec.v * spec.mu_hat / spec.khat2_norm) ** 2)
    w, U = scipy.linalg.eigh(D, subset_by_value=(-gap * (1 - 1e-6), gap * (1 - 1e-6)), driver="evr")
    U = _localize_clusters(w, U, np.abs(z) > (1 - outer_frac) * L, 1e-9 * gap)
    vec = np.stack([U[:N_grid].T, U[N_grid:].T], axis=-1)
    bm = _boundary_mass(vec, z, L, outer_frac)
    return w[(bm < mass_tol) & _drop_doublers(method, vec)]


# ---------------------------------------------------------------------------
# mu-invariance of eigenfunctions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class InvarianceReport:
    """Overlaps of ``D0``-frame eigenfunctions across a family of ``mu_hat`` values."""

    comparable: bool
    mu_values: list
    zero_mode_overlap: float
    branch_overlaps: dict
    pair_subspace_overlaps: dict
    reason: str = ""


def eigenfunction_mu_invariance_check(specs: Sequence[DiracOperatorSpec], L: float | None = None,
                                      N_grid: int = 1024, method: str = "fourier") -> InvarianceReport:
    """Compare ``D0(mu_hat)`` eigenfunctions across ``mu_hat``.

    Parameters
    ----------
    specs : sequence of DiracOperatorSpec
        Family differing only in ``mu_hat``.
    L, N_grid, method
        Discretization passed to :func:`solve_dirac_1d`.

    Returns
    -------
    InvarianceReport
        ``zero_mode_overlap`` is the minimum ``|<alpha_0(mu), alpha_0(mu')>|``.
        ``branch_overlaps[j]`` is the same for branch ``j``, and
        ``pair_subspace_overlaps[j]`` measures how well ``span{alpha_j, alpha_-j}`` is
        preserved (smallest singular value of the overlap block).
    """
    base = specs[0]
    for s in specs[1:]:
        same = (s.wall.wall_id == base.wall.wall_id and s.v == base.v and s.theta == base.theta
                and np.array_equal(s.khat1, base.khat1) and np.array_equal(s.khat2, base.khat2))
        if not same:
            return InvarianceReport(False, [x.mu_hat for x in specs], float("nan"), {}, {},
                                    "family differs in wall, v, theta or frame")
    L = base.default_window() if L is None else L
    sols = [solve_dirac_1d(s, L, N_grid, method, check_resolution=False) for s in specs]
    counts = {len(s.eigenvalues) for s in sols}
    if len(counts) != 1:
        return InvarianceReport(False, [x.mu_hat for x in specs], float("nan"), {}, {},
                                f"in-gap counts differ across the family: {sorted(counts)}")
    h = 2 * L / N_grid
    N = sols[0].N
    ref = sols[0].eigenfunctions_d0

    def ov(a, b):
        return abs(np.sum(a.conj() * b) * h)

    branch, pair = {}, {}
    for j in range(-N, N + 1):
        branch[j] = min(ov(ref[N + j], s.eigenfunctions_d0[N + j]) for s in sols)
    for j in range(1, N + 1):
        vals = []
        for s in sols:
            P = np.array([[np.sum(ref[N + a].conj() * s.eigenfunctions_d0[N + b]) * h for b in (-j, j)]
                          for a in (-j, j)])
            vals.append(float(np.linalg.svd(P, compute_uv=False).min()))
        pair[j] = min(vals)
    return InvarianceReport(True, [x.mu_hat for x in specs], branch[0], branch, pair)


# ---------------------------------------------------------------------------
# block-diagonal spectrum
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BlockEntry:
    index: WrapIndex
    gamma: float
    mu_shifted: float
    z: np.ndarray
    theta_gap_shifted: float
    in_gap: np.ndarray


@dataclass(frozen=True)
class BlockSpectrumSample:
    """Closed-form spectra of the blocks of the block-diagonal operator."""

    mu: float
    delta: float
    theta_gap: float
    entries: list

    def in_gap_values(self) -> np.ndarray:
        vals = [e.z[e.in_gap] for e in self.entries]
        return np.sort(np.concatenate(vals)) if vals else np.zeros(0)

    def max_in_gap_spacing(self) -> float:
        """Largest gap between consecutive in-gap values, the gap edges included."""
        v = np.concatenate([[-self.theta_gap], self.in_gap_values(), [self.theta_gap]])
        return float(np.max(np.diff(v)))

    def distinct_in_gap(self, tol: float = 1e-12) -> np.ndarray:
        v = self.in_gap_values()
        if len(v) == 0:
            return v
        keep = np.concatenate([[True], np.diff(v) > tol])
        return v[keep]


def sample_block_spectrum(mu: float, delta: float, m_max: int, dp_by_tag: dict, frame: EdgeFrame,
                          base_z: Sequence[float], theta: float) -> BlockSpectrumSample:
    """Evaluate every block ``D^{K_I}(mu + gamma_I / delta)`` for ``|m| <= m_max``.

    Parameters
    ----------
    mu : float
    delta : float
        Positive scale parameter.
    m_max : int
    dp_by_tag : dict
        ``{"K": DiracPointData, "K'": DiracPointData}`` (or bare ``upsilon`` floats).
    frame : EdgeFrame
    base_z : sequence of float
        In-gap spectrum of ``D(0)`` from :func:`solve_dirac_1d`.
    theta : float

    Returns
    -------
    BlockSpectrumSample
        Entries sorted by index; ``in_gap`` flags values inside ``(-|theta|, |theta|)``.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    n2 = float(np.linalg.norm(frame.khat2))
    tg = abs(theta)
    ms = np.arange(-m_max, m_max + 1)
    entries = []
    for tag in K_TAGS:
        d = dp_by_tag[tag]
        v = d.upsilon if isinstance(d, DiracPointData) else float(d)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            gam = gamma_values(frame, tag, ms)
        for m, g in zip(ms, gam):
            g = float(g)
            muh = mu + g / delta
            cf = closed_form_spectrum(base_z, muh, v, theta, n2)
            entries.append(BlockEntry(WrapIndex(tag, int(m)), g, muh, cf.eigenvalues, cf.theta_gap,
                                      np.abs(cf.eigenvalues) < tg))
    entries.sort(key=lambda e: e.index.sort_key)
    return BlockSpectrumSample(float(mu), float(delta), tg, entries)


def write_block_spectrum_csv(sample: BlockSpectrumSample, path) -> None:
    """CSV with columns ``Kstar, m, gamma_I, mu_hat_I, j, z, in_gap``."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["Kstar", "m", "gamma_I", "mu_hat_I", "j", "z", "in_gap"])
        for e in sample.entries:
            N = len(e.z) // 2
            for j, (z, ig) in enumerate(zip(e.z, e.in_gap)):
                w.writerow([e.index.Kstar, e.index.m, fmt(e.gamma), fmt(e.mu_shifted), j - N, fmt(z), int(ig)])


# ---------------------------------------------------------------------------
# cache
# ---------------------------------------------------------------------------


class SpectrumCache:
    """Thread-safe in-memory cache of :func:`solve_dirac_1d` results."""

    def __init__(self):
        self._lock = threading.Lock()
        self._data: dict = {}

    def get_or_solve(self, spec: DiracOperatorSpec, L: float | None = None, N_grid: int = 1024,
                     method: str = "fourier", **kw) -> DiracSpectrum:
        L = spec.default_window() if L is None else L
        key = spec.cache_key(L, N_grid, method)
        with self._lock:
            hit = self._data.get(key)
        if hit is not None:
            return hit
        res = solve_dirac_1d(spec, L, N_grid, method, **kw)
        with self._lock:
            return self._data.setdefault(key, res)

    def __len__(self):
        with self._lock:
            return len(self._data)
