"""Approximate edge states built from Bloch modes and Dirac envelopes.

For a wrapped index ``I = (K*, m)`` and an in-gap branch ``j`` the augmented wavepacket is

    Psi_aug(x, s) = exp(i((mu delta + gamma_I) khat1.x + (lambda_I + K.v2) s))
                    Phi^{K*}(x)^T alpha_j(delta khat2.(x + s v2); mu + gamma_I / delta),

and its restriction ``Psi(x) = Psi_aug(x, 0)`` approximately solves the domain-wall
eigenproblem at energy ``E_D + delta z_j``.  This module evaluates both, measures the
residual of ``-div(A grad) + V - E`` on them, and implements the cell-averaging
operators that map functions on the augmented cylinder to spinor envelopes.
"""
from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .bloch_solver import DiracPointData, PeriodicScalarField, fmt
from .effective_dirac import TANH, DiracSpectrum, Wall, unitary_equivalence_constants
from .lattice_frame import EdgeFrame, LatticeBasis, WrapData, WrapIndex, build_lattice_basis, wrap_data


class IndexOutsideL(ValueError):
    """``|gamma_I| > delta``: the index is not in the multiscale set."""


class UnderresolvedGrid(RuntimeError):
    """The residual changes by more than 20% when the envelope grid is halved."""


class QuadratureWarning(UserWarning):
    """Cell quadrature does not reproduce the Bloch-mode Gram matrix to 1e-10."""


# ---------------------------------------------------------------------------
# envelopes
# ---------------------------------------------------------------------------


def _wavenumbers(n: int, h: float) -> np.ndarray:
    p = 2 * np.pi * np.fft.fftfreq(n, d=h)
    p[n // 2] = 0.0  # drop the Nyquist mode, matching the spectral derivative
    return p


@dataclass(frozen=True)
class EnvelopeSampler:
    """Spinor envelope ``alpha(zeta)`` of ``D(mu_hat)`` rebuilt from its ``D0``-frame samples.

    ``beta`` holds the periodic ``D0``-frame samples on ``zeta``; the ``D``-frame envelope is
    ``diag(conj(omega), omega) beta(zeta) exp(-i twist zeta)`` with ``twist = mu_hat Kc``.
    Outside the window the envelope is taken to vanish.
    """

    zeta: np.ndarray
    beta: np.ndarray
    twist: float
    omega: complex

    @classmethod
    def from_spectrum(cls, sp: DiracSpectrum, j: int, frame: EdgeFrame) -> "EnvelopeSampler":
        if sp.eigenfunctions_d0 is None:
            raise ValueError("the Dirac solution carries no eigenfunctions")
        if not -sp.N <= j <= sp.N:
            raise ValueError(f"branch {j} outside -{sp.N}..{sp.N}")
        Kc, omega = unitary_equivalence_constants(frame.khat1, frame.khat2)
        return cls(np.asarray(sp.zeta), np.asarray(sp.eigenfunctions_d0[sp.N + j]), sp.mu_hat * Kc, omega)

    @property
    def h(self) -> float:
        return float(self.zeta[1] - self.zeta[0])

    @property
    def L(self) -> float:
        return float(-self.zeta[0])

    def norm(self) -> float:
        return float(math.sqrt(np.sum(np.abs(self.beta) ** 2) * self.h))

    def coarsened(self) -> "EnvelopeSampler":
        """Same envelope on every other grid point."""
        return EnvelopeSampler(self.zeta[::2], self.beta[::2], self.twist, self.omega)

    def _frame(self, z: np.ndarray, b: np.ndarray) -> np.ndarray:
        m = np.array([self.omega.conjugate(), self.omega])
        return b * m * np.exp(-1j * self.twist * z)[..., None]

    def on_grid(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``alpha``, ``alpha'`` and ``alpha''`` on the grid by spectral differentiation."""
        p = _wavenumbers(len(self.zeta), self.h)[:, None]
        c = np.fft.fft(self.beta, axis=0)
        b1 = np.fft.ifft(1j * p * c, axis=0)
        b2 = np.fft.ifft(-(p**2) * c, axis=0)
        a = self.twist
        b0 = self.beta
        return (self._frame(self.zeta, b0), self._frame(self.zeta, b1 - 1j * a * b0),
                self._frame(self.zeta, b2 - 2j * a * b1 - a * a * b0))

    def __call__(self, z) -> np.ndarray:
        """Trigonometric interpolation at arbitrary points; zero outside ``[-L, L)``."""
        z = np.asarray(z, dtype=float)
        flat = z.ravel()
        n = len(self.zeta)
        p = _wavenumbers(n, self.h)
        c = np.fft.fft(self.beta, axis=0) / n
        out = np.zeros((flat.size, 2), dtype=complex)
        inside = (flat >= -self.L) & (flat < self.L)
        idx = np.nonzero(inside)[0]
        for s in range(0, len(idx), 4096):
            sel = idx[s:s + 4096]
            ph = np.exp(1j * np.outer(flat[sel] - self.zeta[0], p))
            out[sel] = ph @ c
        return self._frame(z, out.reshape(z.shape + (2,)))


# ---------------------------------------------------------------------------
# wavepackets
# ---------------------------------------------------------------------------


def _bloch_modes(dp: DiracPointData, x: np.ndarray) -> np.ndarray:
    """``(Phi1(x), Phi2(x))`` at points ``x[..., 2]``, shape ``(..., 2)``."""
    ph = np.exp(1j * (np.asarray(x, dtype=float) @ dp.momenta.T))
    return ph @ dp.Phi


@dataclass(frozen=True)
class EdgeWavepacket:
    """First-order edge wavepacket for the index ``I`` and Dirac branch ``j``."""

    index: WrapIndex
    j: int
    mu: float
    delta: float
    dp: DiracPointData = field(repr=False)
    frame: EdgeFrame = field(repr=False)
    wrap: WrapData
    alpha: EnvelopeSampler = field(repr=False)
    z: float
    energy: float

    @property
    def mu_hat(self) -> float:
        return self.mu + self.wrap.gamma_I / self.delta

    @property
    def k_parallel(self) -> float:
        """``K . vhat1 + delta mu``."""
        return float(self.frame.basis.K @ self.frame.vhat1 + self.delta * self.mu)

    @property
    def shift(self) -> float:
        """Coefficient ``mu delta + gamma_I`` of ``khat1 . x`` in the phase."""
        return self.mu * self.delta + self.wrap.gamma_I

    @property
    def s_rate(self) -> float:
        """Coefficient ``lambda_I + K . v2`` of ``s`` in the phase."""
        return float(self.wrap.lambda_I + self.frame.basis.K @ self.frame.basis.v2)

    def slow_envelope(self, x) -> np.ndarray:
        """``U(x) = exp(i shift khat1.x) alpha(delta khat2.x)``, so that ``Psi = Phi^T U``."""
        x = np.asarray(x, dtype=float)
        ph = np.exp(1j * self.shift * (x @ self.frame.khat1))
        return ph[..., None] * self.alpha(self.delta * (x @ self.frame.khat2))

    def augmented(self, x, s) -> np.ndarray:
        """``Psi_aug(x, s)`` for ``x[..., 2]`` and broadcastable ``s``."""
        x = np.asarray(x, dtype=float)
        s = np.asarray(s, dtype=float)
        ph = np.exp(1j * (self.shift * (x @ self.frame.khat1) + self.s_rate * s))
        zeta = self.delta * (x @ self.frame.khat2 + s)  # khat2 . v2 = 1
        modes = _bloch_modes(self.dp, x)
        return ph * np.sum(modes * self.alpha(zeta), axis=-1)

    def restriction(self, x) -> np.ndarray:
        """Two-dimensional wavepacket ``Psi(x) = Psi_aug(x, 0)``."""
        x = np.asarray(x, dtype=float)
        return self.augmented(x, np.zeros(x.shape[:-1]))

    def along_edge(self, y, u=None) -> np.ndarray:
        """``Q(y, u) = exp(-i k_par y) Psi_aug(y v1 + u v2, y r - u)``.

        ``Q`` is 1-periodic in both arguments and ``Q(y, y r)`` is the phase-stripped
        restriction along the edge line ``y vhat1``.
        """
        y = np.asarray(y, dtype=float)
        r = self.frame.r
        u = y * r if u is None else np.asarray(u, dtype=float)
        b = self.frame.basis
        x = y[..., None] * b.v1 + u[..., None] * b.v2
        return np.exp(-1j * self.k_parallel * y) * self.augmented(x, y * r - u)


def build_wavepacket(index: WrapIndex, j: int, mu: float, delta: float, dp: DiracPointData,
                     frame: EdgeFrame, dirac_solution: DiracSpectrum, mu_tol: float = 1e-9) -> EdgeWavepacket:
    """Assemble the first-order wavepacket of branch ``j`` at the index ``I``.

    Parameters
    ----------
    index : WrapIndex
    j : int
        Branch of ``D^{K_I}(mu + gamma_I / delta)``, ``-N <= j <= N``.
    mu, delta : float
    dp : DiracPointData
        Dirac point at ``K_I``.
    frame : EdgeFrame
    dirac_solution : DiracSpectrum
        Output of :func:`solve_dirac_1d` at ``mu_hat = mu + gamma_I / delta`` with eigenfunctions.
    mu_tol : float
        Allowed mismatch between the solution's ``mu_hat`` and the required one.

    Returns
    -------
    EdgeWavepacket
        With ``energy = E_D + delta z_j``.

    Raises
    ------
    IndexOutsideL
        If ``|gamma_I| > delta``.
    ValueError
        On a vertex mismatch, a wrong ``mu_hat``, or a vanishing envelope.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    if dp.Kstar != index.Kstar:
        raise ValueError(f"Dirac point at {dp.Kstar} does not match index vertex {index.Kstar}")
    wd = wrap_data(frame, index)
    if abs(wd.gamma_I) > delta:
        raise IndexOutsideL(f"|gamma_I| = {abs(wd.gamma_I):.3g} > delta = {delta}")
    need = mu + wd.gamma_I / delta
    if abs(dirac_solution.mu_hat - need) > mu_tol * max(1.0, abs(need)):
        raise ValueError(f"Dirac solution at mu_hat = {dirac_solution.mu_hat}, need {need}")
    alpha = EnvelopeSampler.from_spectrum(dirac_solution, j, frame)
    if not alpha.norm() > 0:
        raise ValueError("zero envelope gives a zero wavepacket")
    z = dirac_solution.branch(j)
    return EdgeWavepacket(index, int(j), float(mu), float(delta), dp, frame, wd, alpha, z,
                          float(dp.E_D + delta * z))


# ---------------------------------------------------------------------------
# residual of the domain-wall operator
# ---------------------------------------------------------------------------


def _support(field_: PeriodicScalarField, rel: float = 1e-14) -> tuple[np.ndarray, np.ndarray]:
    c = field_.coeffs
    cut = rel * np.abs(c).max() if np.abs(c).max() > 0 else 0.0
    idx = np.argwhere(np.abs(c) > cut)
    return idx - field_.M, c[tuple(idx.T)]


def _shift_index(pos: dict, n: np.ndarray, d: np.ndarray) -> np.ndarray:
    return np.array([pos.get((int(a) - int(d[0]), int(b) - int(d[1])), -1) for a, b in n])


def _convolve(field_: tuple[np.ndarray, np.ndarray], arr: np.ndarray, pos: dict, n: np.ndarray) -> np.ndarray:
    out = np.zeros_like(arr)
    for d, c in zip(*field_):
        src = _shift_index(pos, n, d)
        ok = src >= 0
        out[ok] += c * arr[src[ok]]
    return out


@dataclass(frozen=True)
class ModalResidual:
    """Residual of ``(-div(A grad) + V - E)`` on ``sum_n exp(i Q_n.x) f_n(zeta)``."""

    relative: float
    projected: float
    g: np.ndarray = field(repr=False)


def modal_residual(Q: np.ndarray, n: np.ndarray, f: np.ndarray, f1: np.ndarray, f2: np.ndarray,
                   kappa: np.ndarray, dkappa: np.ndarray, V: PeriodicScalarField, a: PeriodicScalarField,
                   delta: float, khat2: np.ndarray, E: float, weights: np.ndarray,
                   modes: np.ndarray | None = None, lattice: LatticeBasis | None = None) -> ModalResidual:
    """Apply the domain-wall operator to a field written as plane waves times slow profiles.

    The field is ``F(x) = sum_n exp(i Q_n.x) f_n(delta khat2.x)`` with ``Q_n`` differing by
    dual-lattice vectors ``2 pi n``.  With ``A = Id - delta kappa(zeta) a(x) sigma2`` one has
    ``grad(e^{iQx} f) = e^{iQx}(iQ f + delta khat2 f')``; the x-dependence is handled exactly
    on the plane waves and the zeta-dependence through the supplied derivatives.

    Parameters
    ----------
    Q : ndarray, shape (nb, 2)
        Momenta of the input modes.
    n : ndarray, shape (nb, 2)
        Their integer dual coordinates.
    f, f1, f2 : ndarray, shape (nb, nz)
        Profiles and their first two zeta-derivatives on the zeta-grid.
    kappa, dkappa : ndarray, shape (nz,)
        Wall values and derivative on the grid.
    V, a : PeriodicScalarField
    delta : float
    khat2 : ndarray
    E : float
    weights : ndarray, shape (nz,)
        Quadrature weights in zeta (zero outside the strip).
    modes : ndarray, shape (nb, 2), optional
        Bloch coefficient columns; when given, ``projected`` is the relative norm of the
        residual projected onto their span.
    lattice : LatticeBasis, optional

    Returns
    -------
    ModalResidual
        ``relative = ||g|| / ||f||`` where ``g`` lives on the enlarged mode set.
    """
    sV, sa = _support(V), _support(a)
    shifts = np.unique(np.concatenate([sV[0], sa[0], [[0, 0]]]), axis=0)
    ext = {tuple(map(int, x)) for x in n}
    for d in shifts:
        ext |= {(int(x[0] + d[0]), int(x[1] + d[1])) for x in n}
    base = [tuple(map(int, x)) for x in n]
    ext_n = np.array(base + sorted(ext - set(base)))
    pos = {t: i for i, t in enumerate(map(tuple, ext_n.tolist()))}
    ne, nz = len(ext_n), f.shape[1]
    lat = lattice or build_lattice_basis()
    Q0 = Q[0] - 2 * np.pi * (n[0, 0] * lat.k1 + n[0, 1] * lat.k2)
    Qe = Q0[None, :] + 2 * np.pi * (ext_n[:, :1] * lat.k1 + ext_n[:, 1:] * lat.k2)
    into = np.arange(len(n))

    def lift(arr):
        out = np.zeros((ne, nz), dtype=complex)
        out[into] = arr
        return out

    F, F1, F2 = lift(f), lift(f1), lift(f2)
    kh = np.asarray(khat2, dtype=float)
    # G = iQ F + delta khat2 F', G' = iQ F' + delta khat2 F''
    G = 1j * Qe[:, :, None] * F[:, None, :] + delta * kh[None, :, None] * F1[:, None, :]
    Gd = 1j * Qe[:, :, None] * F1[:, None, :] + delta * kh[None, :, None] * F2[:, None, :]
    S = _convolve(sa, G, pos, ext_n)
    Sd = _convolve(sa, Gd, pos, ext_n)

    def sig2(w):  # sigma2 acting on the gradient components
        return np.stack([-1j * w[:, 1], 1j * w[:, 0]], axis=1)

    W = G - delta * kappa[None, None, :] * sig2(S)
    Wd = Gd - delta * sig2(dkappa[None, None, :] * S + kappa[None, None, :] * Sd)
    div = -(1j * np.einsum("nc,ncz->nz", Qe, W) + delta * np.einsum("c,ncz->nz", kh, Wd))
    g = div + _convolve(sV, F, pos, ext_n) - E * F
    num = math.sqrt(float(np.sum(np.abs(g) ** 2 * weights[None, :])))
    den = math.sqrt(float(np.sum(np.abs(F) ** 2 * weights[None, :])))
    proj = float("nan")
    if modes is not None:
        P = modes.conj().T @ g[into]
        proj = math.sqrt(float(np.sum(np.abs(P) ** 2 * weights[None, :]))) / den
    return ModalResidual(num / den, proj, g)


@dataclass(frozen=True)
class ResidualReport:
    """``||(H_dw - E) Psi|| / ||Psi||`` and its component along the Bloch modes."""

    relative: float
    projected: float
    coarse_relative: float
    delta: float
    strip_halfwidth: float
    n_zeta: int
    outside_mass: float


def _wavepacket_residual(wp: EdgeWavepacket, alpha: EnvelopeSampler, a: PeriodicScalarField, wall: Wall,
                         Lz: float) -> ModalResidual:
    z = alpha.zeta
    al, al1, al2 = alpha.on_grid()
    C = wp.dp.Phi  # (nb, 2)
    f = C @ al.T
    f1 = C @ al1.T
    f2 = C @ al2.T
    Q = wp.dp.momenta + wp.shift * wp.frame.khat1[None, :]
    w = np.where(np.abs(z) <= Lz, alpha.h, 0.0)
    return modal_residual(Q, wp.dp.basis.n, f, f1, f2, wall(z), wall.derivative(z), wp.dp.V, a,
                          wp.delta, wp.frame.khat2, wp.energy, w, modes=C, lattice=wp.frame.basis)


def dw_residual(wp: EdgeWavepacket, a: PeriodicScalarField, wall: Wall = TANH,
                strip_halfwidth: float | None = None, check_resolution: bool = True,
                mass_tol: float = 1e-6) -> ResidualReport:
    """Relative residual of the domain-wall eigenproblem on the restricted wavepacket.

    The operator is ``-div(A grad) + V`` with ``A = Id - delta kappa(delta khat2.x) a(x) sigma2``.
    The wavepacket is exactly a finite sum of plane waves ``exp(i Q.x)`` times profiles of
    ``zeta = delta khat2.x``; the operator is applied mode by mode, with exact
    x-derivatives and spectral zeta-derivatives of the envelope.  Norms are taken per unit
    length along the edge over the strip ``|zeta| <= strip_halfwidth``, where cross terms
    between distinct plane waves average out.

    Parameters
    ----------
    wp : EdgeWavepacket
    a : PeriodicScalarField
        Conjugation-breaking field of the perturbation.
    wall : Wall
    strip_halfwidth : float, optional
        Half-width ``L_zeta`` of the strip in ``zeta``; defaults to the envelope window.
    check_resolution : bool
        Recompute on every other envelope grid point and raise if the residual changes
        by more than 20%.
    mass_tol : float
        Maximal envelope mass outside the strip.

    Returns
    -------
    ResidualReport

    Raises
    ------
    ValueError
        If the envelope has more than ``mass_tol`` of its mass outside the strip.
    UnderresolvedGrid
    """
    alpha = wp.alpha
    Lz = alpha.L if strip_halfwidth is None else float(strip_halfwidth)
    dens = np.sum(np.abs(alpha.beta) ** 2, axis=1)
    outside = float(dens[np.abs(alpha.zeta) > Lz].sum() / dens.sum())
    if outside > mass_tol:
        raise ValueError(f"envelope mass outside the strip is {outside:.2e} > {mass_tol}")
    fine = _wavepacket_residual(wp, alpha, a, wall, Lz)
    coarse = float("nan")
    if check_resolution:
        coarse = _wavepacket_residual(wp, alpha.coarsened(), a, wall, Lz).relative
        if abs(coarse - fine.relative) > 0.2 * fine.relative:
            raise UnderresolvedGrid(f"residual {fine.relative:.4g} on the full grid, {coarse:.4g} on half")
    return ResidualReport(fine.relative, fine.projected, coarse, wp.delta, Lz, len(alpha.zeta), outside)


# ---------------------------------------------------------------------------
# averaging operators
# ---------------------------------------------------------------------------


class CellAverager:
    """Grid-level ``T_I``, ``T_I^*`` and their dilated versions ``J = U_delta T_I``.

    Cell integrals use a tensor Gauss-Legendre rule on the unit square mapped to the
    cell ``{t1 v1 + t2 v2}`` (unit Jacobian).
    """

    def __init__(self, index: WrapIndex, dp: DiracPointData, frame: EdgeFrame, order: int = 48,
                 gram_tol: float = 1e-10):
        if dp.Kstar != index.Kstar:
            raise ValueError("Dirac point does not match the index vertex")
        self.index, self.dp, self.frame, self.order = index, dp, frame, int(order)
        self.wrap = wrap_data(frame, index)
        t, w = np.polynomial.legendre.leggauss(self.order)
        t, w = (t + 1) / 2, w / 2
        T1, T2 = np.meshgrid(t, t, indexing="ij")
        b = frame.basis
        self.nodes = T1.ravel()[:, None] * b.v1 + T2.ravel()[:, None] * b.v2
        self.weights = np.outer(w, w).ravel()
        self._modes = _bloch_modes(dp, self.nodes)
        gram = self._modes.conj().T @ (self.weights[:, None] * self._modes)
        self.gram_error = float(np.abs(gram - np.eye(2)).max())
        if self.gram_error > gram_tol:
            warnings.warn(f"cell quadrature of order {order} reproduces the Gram matrix only to "
                          f"{self.gram_error:.1e}", QuadratureWarning)
        self._s_rate = float(self.wrap.lambda_I + b.K @ b.v2)

    def phi(self, x, s) -> np.ndarray:
        """``phi_I(x, s) = exp(i(gamma_I khat1.x + (lambda_I + K.v2) s)) Phi^{K_I}(x)``."""
        x = np.asarray(x, dtype=float)
        ph = np.exp(1j * (self.wrap.gamma_I * (x @ self.frame.khat1) + self._s_rate * np.asarray(s)))
        return ph[..., None] * _bloch_modes(self.dp, x)

    def apply(self, F: Callable, zeta) -> np.ndarray:
        """``(T_I F)(zeta)`` for a scalar field ``F(x, s)``; shape ``zeta.shape + (2,)``."""
        zeta = np.atleast_1d(np.asarray(zeta, dtype=float))
        flat = zeta.ravel()
        kx = self.nodes @ self.frame.khat2
        gx = self.wrap.gamma_I * (self.nodes @ self.frame.khat1)
        out = np.empty((flat.size, 2), dtype=complex)
        step = max(1, 20000 // len(self.nodes))
        for i in range(0, flat.size, step):
            s = flat[i:i + step, None] - kx[None, :]
            X = np.broadcast_to(self.nodes, s.shape + (2,))
            ph = np.exp(1j * (gx[None, :] + self._s_rate * s))
            phi = ph[..., None] * self._modes[None, :, :]
            vals = np.asarray(F(X, s))
            out[i:i + step] = np.einsum("zkc,zk,k->zc", phi.conj(), vals, self.weights)
        return out.reshape(zeta.shape + (2,))

    def adjoint(self, g: Callable) -> Callable:
        """``(T_I^* g)(x, s) = phi_I(x, s)^T g(khat2.(x + s v2))``."""
        kh = self.frame.khat2

        def Fg(x, s):
            x = np.asarray(x, dtype=float)
            s = np.asarray(s, dtype=float)
            return np.sum(self.phi(x, s) * g(x @ kh + s), axis=-1)

        return Fg

    def apply_dilated(self, F: Callable, zeta, delta: float) -> np.ndarray:
        """``(J F)(zeta) = delta^{-1/2} (T_I F)(zeta / delta)``."""
        return self.apply(F, np.asarray(zeta, dtype=float) / delta) / math.sqrt(delta)

    def adjoint_dilated(self, g: Callable, delta: float) -> Callable:
        """``J^* g = T_I^* U_delta^* g`` with ``(U_delta^* g)(zeta) = delta^{1/2} g(delta zeta)``."""
        return self.adjoint(lambda z: math.sqrt(delta) * g(delta * np.asarray(z)))


def averaging_apply(index: WrapIndex, F: Callable, zeta, dp: DiracPointData, frame: EdgeFrame,
                    delta: float | None = None, order: int = 48) -> np.ndarray:
    """``T_I F`` (or ``J_{delta,I} F`` when ``delta`` is given) sampled at ``zeta``."""
    avg = CellAverager(index, dp, frame, order)
    return avg.apply(F, zeta) if delta is None else avg.apply_dilated(F, zeta, delta)


def adjoint_apply(index: WrapIndex, g: Callable, dp: DiracPointData, frame: EdgeFrame,
                  delta: float | None = None) -> Callable:
    """``T_I^* g`` (or ``J_{delta,I}^* g`` when ``delta`` is given) as a field ``(x, s) -> value``."""
    avg = CellAverager(index, dp, frame)
    return avg.adjoint(g) if delta is None else avg.adjoint_dilated(g, delta)


# ---------------------------------------------------------------------------
# export
# ---------------------------------------------------------------------------


def write_wavepacket_grid(wp: EdgeWavepacket, path_json, path_csv, y1: np.ndarray, y2: np.ndarray) -> None:
    """Sample the restriction on ``x = y1 v1 + y2 v2`` and write a JSON header plus CSV payload."""
    b = wp.frame.basis
    Y1, Y2 = np.meshgrid(np.asarray(y1, float), np.asarray(y2, float), indexing="ij")
    X = Y1[..., None] * b.v1 + Y2[..., None] * b.v2
    psi = wp.restriction(X)
    header = {
        "index": {"Kstar": wp.index.Kstar, "m": wp.index.m},
        "branch": wp.j,
        "mu": wp.mu,
        "delta": wp.delta,
        "mu_hat": wp.mu_hat,
        "energy": wp.energy,
        "z": wp.z,
        "E_D": wp.dp.E_D,
        "k_parallel": wp.k_parallel,
        "r": wp.frame.r,
        "shape": [len(y1), len(y2)],
        "coordinates": "x = y1 v1 + y2 v2",
        "payload": str(path_csv),
        "columns": ["y1", "y2", "x1", "x2", "re", "im"],
    }
    with open(path_json, "w", encoding="utf-8") as fh:
        json.dump(header, fh, indent=2, sort_keys=True)
    with open(path_csv, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header["columns"])
        for a_, b_, x, p in zip(Y1.ravel(), Y2.ravel(), X.reshape(-1, 2), psi.ravel()):
            w.writerow([fmt(a_), fmt(b_), fmt(x[0]), fmt(x[1]), fmt(p.real), fmt(p.imag)])
