"""Plane-wave Floquet-Bloch solver for honeycomb Schroedinger operators.

Bloch functions are expanded as ``u(x) = sum_kappa c_kappa exp(i (k + kappa) . x)`` over
dual lattice vectors ``kappa``.  The unit cell has area one, so coefficient vectors
carry the cell inner product directly.  The bulk operator is
``-div((Id - delta*a*sigma2) grad) + V``, whose plane-wave matrix entries are

    |q|^2 delta_{q q'} + V_hat(q - q') + i*delta*a_hat(q - q') (q ^ q'),

where ``q ^ q' = q1*q2' - q2*q1'``.
"""
from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np
import scipy.linalg

from .lattice_frame import (
    K_TAGS,
    TWO_PI,
    EdgeFrame,
    LatticeBasis,
    build_lattice_basis,
    distance_to_vertices,
)

TAU = np.exp(2j * np.pi / 3)
SIGMA1 = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA2 = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA3 = np.array([[1, 0], [0, -1]], dtype=complex)


class NoDoubleEigenvalue(RuntimeError):
    """No isolated double eigenvalue was found at the requested vertex."""


class WrongSymmetryType(RuntimeError):
    """A double eigenvalue exists but does not split across the tau / conj(tau) eigenspaces."""


class VelocityZero(RuntimeError):
    """The Dirac coefficient upsilon vanishes."""


class NonDegeneracyFailure(RuntimeError):
    """The gap-opening coefficient theta vanishes for the supplied perturbation."""


class EigensolverFailure(RuntimeError):
    """The dense eigensolver failed."""


def _rot_coords(n: np.ndarray) -> np.ndarray:
    """Integer coordinates of ``R kappa`` given those of ``kappa`` (R k1 = k2, R k2 = -k1 - k2)."""
    n = np.asarray(n)
    return np.stack([-n[..., 1], n[..., 0] - n[..., 1]], axis=-1)


# ---------------------------------------------------------------------------
# plane-wave basis and periodic fields
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PlaneWaveBasis:
    """Dual-lattice plane waves ``kappa`` with ``|center + kappa| <= cutoff*|2 pi k1|``.

    Attributes
    ----------
    cutoff : int
        Number of dual-lattice shells; the disk radius is ``cutoff * 2*pi*|k1|``.
    center : ndarray
        Quasimomentum around which the disk is drawn.
    n : ndarray of int, shape (dim, 2)
        Dual coordinates of the waves, ``kappa = 2 pi (n1 k1 + n2 k2)``.
    waves : ndarray, shape (dim, 2)
        The vectors ``kappa``.
    """

    cutoff: int
    center: np.ndarray
    n: np.ndarray
    waves: np.ndarray
    lattice: LatticeBasis = field(repr=False)

    @property
    def dim(self) -> int:
        return len(self.n)

    @property
    def radius(self) -> float:
        return self.cutoff * TWO_PI * float(np.linalg.norm(self.lattice.k1))

    def momenta(self, k: np.ndarray) -> np.ndarray:
        """Shifted momenta ``k + kappa``."""
        return np.asarray(k, dtype=float)[None, :] + self.waves

    def index_map(self) -> dict[tuple[int, int], int]:
        return {(int(a), int(b)): i for i, (a, b) in enumerate(self.n)}

    def rotation_permutation(self, Kstar: str) -> np.ndarray:
        """Permutation ``p`` with ``R(K* + kappa_i) = K* + kappa_{p[i]}``.

        Only defined when the basis is centred at the vertex ``K*``.
        """
        lat = self.lattice
        vtx = lat.vertex(Kstar)
        if not np.allclose(self.center, vtx, atol=1e-12):
            raise ValueError("rotation action requires a basis centred at the vertex")
        # R K = K + 2 pi k2 and R K' = K' - 2 pi k2
        shift = np.array([0, 1]) if Kstar == "K" else np.array([0, -1])
        target = _rot_coords(self.n) + shift
        idx = self.index_map()
        try:
            return np.array([idx[(int(a), int(b))] for a, b in target])
        except KeyError as exc:  # pragma: no cover - guarded by construction
            raise RuntimeError("plane-wave basis not closed under rotation") from exc


def build_plane_wave_basis(cutoff: int, center=(0.0, 0.0), lattice: LatticeBasis | None = None) -> PlaneWaveBasis:
    """Plane waves inside the disk ``|center + kappa| <= cutoff * 2 pi |k1|``.

    Parameters
    ----------
    cutoff : int
        Number of shells (at least 1).
    center : array_like
        Disk centre.  Drawing the disk around the quasimomentum makes the basis
        exactly periodic under dual translations and rotation-closed at vertices.
    lattice : LatticeBasis, optional
        Geometry; defaults to the standard honeycomb basis.

    Returns
    -------
    PlaneWaveBasis
    """
    if int(cutoff) < 1:
        raise ValueError("cutoff must be a positive integer")
    lat = lattice or build_lattice_basis()
    c = np.asarray(center, dtype=float)
    G = cutoff * TWO_PI * float(np.linalg.norm(lat.k1))
    cc = lat.dual_coords(c)
    span = int(math.ceil(2 * cutoff + 2 + np.abs(cc).max()))
    r = np.arange(-span, span + 1)
    N1, N2 = np.meshgrid(r, r, indexing="ij")
    n = np.stack([N1.ravel(), N2.ravel()], axis=1)
    kap = TWO_PI * (n[:, :1] * lat.k1 + n[:, 1:] * lat.k2)
    rad = np.linalg.norm(c + kap, axis=1)
    keep = rad <= G * (1 + 1e-12)
    n, kap, rad = n[keep], kap[keep], rad[keep]
    order = np.lexsort((n[:, 1], n[:, 0], np.round(rad, 9)))
    return PlaneWaveBasis(int(cutoff), c, n[order].astype(int), kap[order], lat)


@dataclass(frozen=True)
class PeriodicScalarField:
    """Lattice-periodic field stored by its Fourier coefficients on a square index box.

    ``coeffs[n1 + M, n2 + M]`` is the coefficient of ``exp(2 pi i (n1 k1 + n2 k2) . x)``.
    """

    coeffs: np.ndarray
    real_valued: bool = True
    even: bool = True
    rotation_invariant: bool = True
    label: str = ""

    @property
    def M(self) -> int:
        return (self.coeffs.shape[0] - 1) // 2

    def coefficient(self, n1: int, n2: int) -> complex:
        M = self.M
        if abs(n1) > M or abs(n2) > M:
            return 0.0
        return complex(self.coeffs[n1 + M, n2 + M])

    def lookup(self, dn: np.ndarray) -> np.ndarray:
        """Coefficients at integer coordinate array ``dn[..., 2]`` (zero outside the box)."""
        M = self.M
        a, b = dn[..., 0], dn[..., 1]
        inside = (np.abs(a) <= M) & (np.abs(b) <= M)
        out = np.zeros(a.shape, dtype=complex)
        out[inside] = self.coeffs[a[inside] + M, b[inside] + M]
        return out

    def symmetry_residuals(self) -> dict[str, float]:
        """Max violation of conjugate symmetry, evenness and rotation invariance."""
        c = self.coeffs
        flipped = c[::-1, ::-1]
        M = self.M
        r = np.arange(-M, M + 1)
        N1, N2 = np.meshgrid(r, r, indexing="ij")
        rot = _rot_coords(np.stack([N1, N2], axis=-1))
        rotated = self.lookup(rot)
        inside = (np.abs(rot[..., 0]) <= M) & (np.abs(rot[..., 1]) <= M)
        rot_res = np.abs(np.where(inside, rotated - c, c)).max()
        return {
            "real_valued": float(np.abs(flipped.conj() - c).max()),
            "even": float(np.abs(flipped - c).max()),
            "rotation_invariant": float(rot_res),
        }

    def evaluate(self, x: np.ndarray, lattice: LatticeBasis | None = None) -> np.ndarray:
        """Point values at ``x[..., 2]``."""
        lat = lattice or build_lattice_basis()
        x = np.asarray(x, dtype=float)
        M = self.M
        nz = np.argwhere(np.abs(self.coeffs) > 0)
        out = np.zeros(x.shape[:-1], dtype=complex)
        for i, j in nz:
            kap = TWO_PI * ((i - M) * lat.k1 + (j - M) * lat.k2)
            out = out + self.coeffs[i, j] * np.exp(1j * (x @ kap))
        return out.real if self.real_valued else out

    def top_harmonic(self) -> complex:
        """Coefficient at ``2 pi (k1 + k2)``, nonzero for generic honeycomb potentials."""
        return self.coefficient(1, 1)


def _trig_coeffs(amplitude: float) -> np.ndarray:
    c = np.zeros((3, 3), dtype=complex)
    for a, b in [(1, 0), (0, 1), (1, 1)]:
        c[1 + a, 1 + b] += amplitude / 2
        c[1 - a, 1 - b] += amplitude / 2
    return c


def _gaussian_well_coeffs(amplitude: float, width: float, lat: LatticeBasis, tol: float = 1e-16) -> np.ndarray:
    # wells at +-(v1 + v2)/3; kappa . (v1 + v2)/3 = 2 pi (n1 + n2)/3
    kmin = TWO_PI * float(np.linalg.norm(lat.k1)) * math.sqrt(3) / 2
    M = 1
    while math.exp(-((M * kmin) ** 2) * width**2 / 4) > tol:
        M += 1
    r = np.arange(-M, M + 1)
    N1, N2 = np.meshgrid(r, r, indexing="ij")
    kap = TWO_PI * (N1[..., None] * lat.k1 + N2[..., None] * lat.k2)
    k2n = np.sum(kap**2, axis=-1)
    c = amplitude * math.pi * width**2 * np.exp(-k2n * width**2 / 4) * 2 * np.cos(TWO_PI * (N1 + N2) / 3)
    c[np.abs(c) < tol * abs(amplitude)] = 0.0
    return c.astype(complex)


def synth_honeycomb_potential(
    kind: str,
    amplitude: float,
    width: float | None = None,
    basis: PlaneWaveBasis | None = None,
    tol: float = 1e-12,
) -> PeriodicScalarField:
    """Build a honeycomb lattice potential.

    Parameters
    ----------
    kind : {"trig", "gaussian_wells"}
        ``trig`` is ``A [cos(2 pi k1.x) + cos(2 pi k2.x) + cos(2 pi (k1+k2).x)]``;
        ``gaussian_wells`` periodizes ``A exp(-|x - x_s|^2 / w^2)`` over both
        honeycomb sites ``x_s = +-(v1 + v2)/3``.
    amplitude : float
        Nonzero amplitude ``A`` (negative for wells).
    width : float, optional
        Gaussian width ``w``; required for ``gaussian_wells``.
    basis : PlaneWaveBasis, optional
        Only used for its geometry.
    tol : float
        Maximum allowed symmetry residual.

    Returns
    -------
    PeriodicScalarField
        Field with all three symmetry flags verified.
    """
    if amplitude == 0:
        raise ValueError("amplitude must be nonzero")
    lat = basis.lattice if basis is not None else build_lattice_basis()
    if kind == "trig":
        c = _trig_coeffs(float(amplitude))
        label = f"trig(amplitude={amplitude!r})"
    elif kind == "gaussian_wells":
        if width is None or width <= 0:
            raise ValueError("gaussian_wells requires width > 0")
        c = _gaussian_well_coeffs(float(amplitude), float(width), lat)
        label = f"gaussian_wells(amplitude={amplitude!r}, width={width!r})"
    else:
        raise ValueError(f"unknown potential kind {kind!r}")
    field_ = PeriodicScalarField(c, label=label)
    res = field_.symmetry_residuals()
    bad = {k: v for k, v in res.items() if v > tol * max(1.0, abs(amplitude))}
    if bad:
        raise RuntimeError(f"honeycomb symmetry violated by construction: {bad}")
    if field_.top_harmonic() == 0:
        raise RuntimeError("Fourier coefficient at 2 pi (k1 + k2) vanishes")
    return field_


def constant_field(value: float) -> PeriodicScalarField:
    """The constant field ``value``."""
    return PeriodicScalarField(np.array([[complex(value)]]), label=f"const({value!r})")


# ---------------------------------------------------------------------------
# Hamiltonian assembly and eigensolve
# ---------------------------------------------------------------------------


def _wedge(q: np.ndarray) -> np.ndarray:
    return q[:, None, 0] * q[None, :, 1] - q[:, None, 1] * q[None, :, 0]


def convolution_matrix(field_: PeriodicScalarField, basis: PlaneWaveBasis) -> np.ndarray:
    """Matrix ``F_hat(kappa_i - kappa_j)`` of multiplication by the field."""
    dn = basis.n[:, None, :] - basis.n[None, :, :]
    return field_.lookup(dn)


def skew_matrix(k: np.ndarray, a: PeriodicScalarField, basis: PlaneWaveBasis) -> np.ndarray:
    """Plane-wave matrix of ``div(a sigma2 grad)``: entries ``i a_hat(kappa - kappa') (q ^ q')``."""
    q = basis.momenta(k)
    return 1j * convolution_matrix(a, basis) * _wedge(q)


def assemble_bloch_hamiltonian(
    k: np.ndarray,
    V: PeriodicScalarField,
    perturbation: tuple[float, PeriodicScalarField] | None = None,
    basis: PlaneWaveBasis | None = None,
) -> np.ndarray:
    """Hermitian matrix of ``-div((Id - delta a sigma2) grad) + V`` on ``L^2_k``.

    Parameters
    ----------
    k : array_like, shape (2,)
        Quasimomentum.
    V : PeriodicScalarField
        Periodic potential.
    perturbation : (delta, a), optional
        Coefficient of the ``sigma2`` term; ``delta`` carries the bulk sign.
    basis : PlaneWaveBasis
        Plane waves; ``q = k + kappa``.

    Returns
    -------
    ndarray
        Complex Hermitian matrix of size ``basis.dim``.
    """
    if basis is None:
        raise ValueError("a plane-wave basis is required")
    k = np.asarray(k, dtype=float)
    if k.shape != (2,):
        raise ValueError("k must be a 2-vector")
    q = basis.momenta(k)
    H = convolution_matrix(V, basis)
    H[np.diag_indices_from(H)] += np.sum(q**2, axis=1)
    if perturbation is not None:
        delta, a = perturbation
        if delta != 0:
            H = H + delta * 1j * convolution_matrix(a, basis) * _wedge(q)
    return H


@dataclass(frozen=True)
class BlochEigensystem:
    """Bloch eigenpairs at one quasimomentum (energies ascending, columns of ``vectors``)."""

    k: np.ndarray
    energies: np.ndarray
    vectors: np.ndarray

    def residual(self, H: np.ndarray) -> np.ndarray:
        R = H @ self.vectors - self.vectors * self.energies[None, :]
        return np.linalg.norm(R, axis=0)


def solve_bloch(H: np.ndarray, k: np.ndarray, n_bands: int, vectors: bool = True) -> BlochEigensystem:
    """Lowest ``n_bands`` eigenpairs of an assembled Bloch Hamiltonian.

    Parameters
    ----------
    H : ndarray
        Hermitian matrix.
    k : array_like
        Quasimomentum (recorded in the result).
    n_bands : int
        Number of bands, at most ``H.shape[0]``.
    vectors : bool
        Whether to compute eigenvectors.

    Returns
    -------
    BlochEigensystem
    """
    dim = H.shape[0]
    if not 1 <= n_bands <= dim:
        raise ValueError(f"n_bands must lie in [1, {dim}]")
    try:
        out = scipy.linalg.eigh(H, subset_by_index=[0, n_bands - 1], eigvals_only=not vectors, driver="evr")
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as exc:
        herm = float(np.abs(H - H.conj().T).max())
        raise EigensolverFailure(f"eigh failed (dim={dim}, hermiticity residual={herm:.3e}): {exc}") from exc
    if vectors:
        w, U = out
    else:
        w, U = out, np.zeros((dim, 0), dtype=complex)
    return BlochEigensystem(np.asarray(k, dtype=float), np.asarray(w), U)


def bloch_energies(V: PeriodicScalarField, k: np.ndarray, cutoff: int, n_bands: int,
                   perturbation=None, lattice: LatticeBasis | None = None) -> np.ndarray:
    """Lowest energies at ``k`` using a basis centred at ``k``."""
    b = build_plane_wave_basis(cutoff, k, lattice)
    H = assemble_bloch_hamiltonian(k, V, perturbation, b)
    return solve_bloch(H, k, n_bands, vectors=False).energies


# ---------------------------------------------------------------------------
# Dirac points
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DiracTolerances:
    """Tolerances for Dirac point detection."""

    degeneracy_rel: float = 1e-8
    separation_factor: float = 10.0
    velocity_min: float = 1e-6
    phase_imag_rel: float = 1e-10
    fit_radii: tuple[float, float] = (1e-3, 1e-2)
    n_radii: int = 8
    n_directions: int = 12
    fit_rel_tol: float = 0.01
    max_bands: int = 12


@dataclass(frozen=True)
class DiracPointData:
    """Dirac point at a vertex together with its phase-normalized eigenbasis.

    ``b_star`` is 1-based: bands ``b_star`` and ``b_star + 1`` touch at ``E_D``.
    """

    Kstar: str
    E_D: float
    b_star: int
    Phi1: np.ndarray
    Phi2: np.ndarray
    upsilon: float
    theta_coeff: float | None
    gap_estimate: float
    basis: PlaneWaveBasis = field(repr=False)
    V: PeriodicScalarField = field(repr=False)
    conical_slope: float = float("nan")
    phase_residual: float = 0.0

    @property
    def momenta(self) -> np.ndarray:
        return self.basis.momenta(self.basis.center)

    @property
    def Phi(self) -> np.ndarray:
        """Coefficient matrix with columns ``Phi1, Phi2``."""
        return np.stack([self.Phi1, self.Phi2], axis=1)


def _upsilon_raw(Phi1: np.ndarray, Phi2: np.ndarray, q: np.ndarray) -> complex:
    w = (Phi1.conj()[:, None] * 2 * q * Phi2[:, None]).sum(axis=0)
    return 0.5 * complex(np.conj(w) @ np.array([1, 1j]))


def _conical_slope(V, dp_basis: PlaneWaveBasis, Kstar: str, E_D: float, b_star: int, tol: DiracTolerances):
    lat = dp_basis.lattice
    vtx = lat.vertex(Kstar)
    radii = np.geomspace(tol.fit_radii[0], tol.fit_radii[1], tol.n_radii)
    angles = np.arange(tol.n_directions) * TWO_PI / tol.n_directions
    rho, half = [], []
    for r in radii:
        for t in angles:
            k = vtx + r * np.array([math.cos(t), math.sin(t)])
            H = assemble_bloch_hamiltonian(k, V, None, dp_basis)
            e = solve_bloch(H, k, b_star + 1, vectors=False).energies
            rho.append(r)
            half.append(0.5 * (e[b_star] - e[b_star - 1]))
    rho = np.array(rho)
    half = np.array(half)
    A = np.stack([rho, rho**2], axis=1)
    coef, *_ = np.linalg.lstsq(A, half, rcond=None)
    return float(coef[0])


def detect_dirac_point(
    V: PeriodicScalarField,
    Kstar: str,
    basis: PlaneWaveBasis | int,
    tolerances: DiracTolerances | None = None,
    conical_fit: bool = True,
) -> DiracPointData:
    """Locate the lowest rotation-split double eigenvalue at a vertex.

    Parameters
    ----------
    V : PeriodicScalarField
        Honeycomb potential.
    Kstar : {"K", "K'"}
        Vertex.
    basis : PlaneWaveBasis or int
        Basis centred at the vertex, or a shell cutoff from which to build one.
    tolerances : DiracTolerances, optional
    conical_fit : bool
        Also fit the cone slope on small circles and compare with ``|upsilon|``.

    Returns
    -------
    DiracPointData
        With ``Phi1`` in the ``tau`` rotation eigenspace, ``Phi2 = PC Phi1`` and the
        phase fixed so that ``upsilon`` is real, positive at K and negative at K'.

    Raises
    ------
    NoDoubleEigenvalue, WrongSymmetryType, VelocityZero
    """
    if Kstar not in K_TAGS:
        raise ValueError(f"unknown vertex {Kstar!r}")
    tol = tolerances or DiracTolerances()
    lat = basis.lattice if isinstance(basis, PlaneWaveBasis) else build_lattice_basis()
    vtx = lat.vertex(Kstar)
    if not isinstance(basis, PlaneWaveBasis):
        basis = build_plane_wave_basis(int(basis), vtx, lat)
    H = assemble_bloch_hamiltonian(vtx, V, None, basis)
    nb = min(tol.max_bands, basis.dim)
    es = solve_bloch(H, vtx, nb)
    E, U = es.energies, es.vectors
    perm = basis.rotation_permutation(Kstar)

    def rot(c):
        out = np.zeros_like(c)
        out[perm] = c
        return out

    found_pair = False
    for b in range(nb - 2):
        thr = tol.degeneracy_rel * (1 + abs(E[b]))
        if abs(E[b + 1] - E[b]) >= thr:
            continue
        below = E[b] - E[b - 1] if b > 0 else np.inf
        above = E[b + 2] - E[b + 1]
        if min(below, above) < tol.separation_factor * thr:
            continue
        found_pair = True
        P = U[:, b:b + 2]
        M = P.conj().T @ rot(P)
        ev, evec = np.linalg.eig(M)
        i_tau = int(np.argmin(np.abs(ev - TAU)))
        i_bar = 1 - i_tau
        if abs(ev[i_tau] - TAU) > 1e-6 or abs(ev[i_bar] - TAU.conjugate()) > 1e-6:
            continue
        Phi1 = P @ evec[:, i_tau]
        Phi1 = Phi1 / np.linalg.norm(Phi1)
        Phi2 = Phi1.conj()
        q = basis.momenta(vtx)
        ups = _upsilon_raw(Phi1, Phi2, q)
        if abs(ups) < tol.velocity_min:
            raise VelocityZero(f"|upsilon| = {abs(ups):.3e} at {Kstar}, E = {E[b]:.10g}")
        # Phi1 -> e^{i th} Phi1, Phi2 -> e^{-i th} Phi2 multiplies upsilon by e^{2 i th}
        target = 0.0 if Kstar == "K" else math.pi
        th = 0.5 * (target - np.angle(ups))
        Phi1 = Phi1 * np.exp(1j * th)
        Phi2 = Phi1.conj()
        ups = _upsilon_raw(Phi1, Phi2, q)
        phase_res = abs(ups.imag) / abs(ups)
        if phase_res > tol.phase_imag_rel:
            raise RuntimeError(f"phase normalisation left Im(upsilon)/|upsilon| = {phase_res:.3e}")
        E_D = 0.5 * (E[b] + E[b + 1])
        gap = min(below, above)
        slope = _conical_slope(V, basis, Kstar, E_D, b + 1, tol) if conical_fit else float("nan")
        return DiracPointData(Kstar, float(E_D), b + 1, Phi1, Phi2, float(ups.real), None, float(gap),
                              basis, V, slope, float(phase_res))
    if found_pair:
        raise WrongSymmetryType(f"degenerate pairs at {Kstar} do not split as tau / conj(tau)")
    raise NoDoubleEigenvalue(f"no isolated double eigenvalue among the lowest {nb} bands at {Kstar}")


def theta_matrix(a: PeriodicScalarField, dp: DiracPointData) -> np.ndarray:
    """2x2 matrix ``<Phi_j, div(a sigma2 grad) Phi_l>``."""
    W = skew_matrix(dp.basis.center, a, dp.basis)
    P = dp.Phi
    return P.conj().T @ W @ P


def compute_theta(a: PeriodicScalarField, dp: DiracPointData, threshold: float = 1e-10) -> tuple[float, np.ndarray]:
    """Gap-opening coefficient ``theta = <Phi1, div(a sigma2 grad) Phi1>`` and the full pairing matrix.

    Parameters
    ----------
    a : PeriodicScalarField
        Coefficient of the conjugation-breaking term.
    dp : DiracPointData
        Dirac point.
    threshold : float
        Minimal admissible ``|theta|``.

    Returns
    -------
    theta : float
    Theta : ndarray, shape (2, 2)

    Raises
    ------
    NonDegeneracyFailure
        If ``|theta| < threshold``.
    """
    Th = theta_matrix(a, dp)
    theta = float(Th[0, 0].real)
    if abs(theta) < threshold:
        raise NonDegeneracyFailure(f"|theta| = {abs(theta):.3e} below {threshold:.1e}")
    return theta, Th


def with_theta(dp: DiracPointData, a: PeriodicScalarField) -> DiracPointData:
    """Copy of ``dp`` carrying ``theta_coeff`` for the field ``a``."""
    return replace(dp, theta_coeff=compute_theta(a, dp)[0])


def sigma_matrix(m: np.ndarray, dp: DiracPointData) -> np.ndarray:
    """Pairing matrix ``<Phi_j, -2i m.grad Phi_l>`` computed from the eigenbasis."""
    m = np.asarray(m, dtype=float)
    mq = 2 * (dp.momenta @ m)
    P = dp.Phi
    return P.conj().T @ (mq[:, None] * P)


def twisted_pauli(m: np.ndarray, upsilon: float) -> np.ndarray:
    """``upsilon (m1 sigma1 - m2 sigma2)``."""
    return upsilon * (m[0] * SIGMA1 - m[1] * SIGMA2)


# ---------------------------------------------------------------------------
# dispersion, no-fold and gap opening
# ---------------------------------------------------------------------------


def _map(fn, items, workers: int):
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))


@dataclass(frozen=True)
class DispersionTable:
    """Band energies along ``K + lam*khat2``."""

    lam: np.ndarray
    energies: np.ndarray
    metadata: dict


def dispersion_slice(
    V: PeriodicScalarField,
    frame: EdgeFrame,
    lam_grid: Sequence[float],
    n_bands: int,
    cutoff: int = 6,
    workers: int = 1,
) -> DispersionTable:
    """Band energies ``E_b(K + lam*khat2)`` for each ``lam``.

    Parameters
    ----------
    V : PeriodicScalarField
    frame : EdgeFrame
    lam_grid : sequence of float
    n_bands : int
    cutoff : int
        Plane-wave shells.
    workers : int
        Thread count.

    Returns
    -------
    DispersionTable
    """
    lat = frame.basis
    lam = np.asarray(lam_grid, dtype=float)

    def one(l):
        return bloch_energies(V, lat.K + l * frame.khat2, cutoff, n_bands, lattice=lat)

    E = np.array(_map(one, lam, workers))
    meta = {"r": float(frame.r), "cutoff": cutoff, "potential": V.label, "n_bands": n_bands}
    return DispersionTable(lam, E, meta)


@dataclass(frozen=True)
class NoFoldReport:
    """Result of the Brillouin-zone no-fold scan."""

    passed: bool
    min_gap: float
    argmin_k: np.ndarray
    eps: float
    grid_density: int
    C0: float
    C1: float
    annulus_slope: float
    annulus_intercept: float
    annulus_r2: float
    annulus_linear: bool
    violating_k: list


def nofold_scan(
    V: PeriodicScalarField,
    dp: DiracPointData,
    grid_density: int = 200,
    eps: float = 0.3,
    cutoff: int | None = None,
    inner: float | None = None,
    n_annuli: int = 8,
    workers: int = 4,
    violation_tol: float = 1e-6,
) -> NoFoldReport:
    """Scan ``|E_pm(k) - E_D|`` on a uniform Brillouin-zone grid.

    Parameters
    ----------
    V : PeriodicScalarField
    dp : DiracPointData
        Supplies ``E_D`` and ``b_star``.
    grid_density : int
        Grid points per reciprocal direction, ``k = 2 pi (t1 k1 + t2 k2)``.
    eps : float
        Exclusion radius around ``K + Lambda*`` and ``K' + Lambda*``.
    cutoff : int, optional
        Plane-wave shells; defaults to that of ``dp``.
    inner : float, optional
        Inner radius of the annulus fit; defaults to ``eps / 10``.
    n_annuli : int
        Number of annular bins in ``(inner, eps]``.
    workers : int
        Thread count.
    violation_tol : float
        Gaps below this count as violations.

    Returns
    -------
    NoFoldReport
        ``C0`` is the minimum gap outside the exclusion disks; ``C1`` the smallest
        ratio gap/dist on the annulus; the per-bin minima are fitted linearly.
    """
    lat = dp.basis.lattice
    cutoff = cutoff or dp.basis.cutoff
    inner = eps / 10 if inner is None else inner
    t = np.arange(grid_density) / grid_density
    T1, T2 = np.meshgrid(t, t, indexing="ij")
    ks = TWO_PI * (T1.ravel()[:, None] * lat.k1 + T2.ravel()[:, None] * lat.k2)
    dist = distance_to_vertices(lat, ks)
    active = dist > 0
    nb = dp.b_star + 1

    def one(k):
        return bloch_energies(V, k, cutoff, nb, lattice=lat)[dp.b_star - 1:dp.b_star + 1]

    idx = np.nonzero(active)[0]
    E = np.full((len(ks), 2), np.nan)
    chunks = np.array_split(idx, max(1, workers * 4))

    def run_chunk(ch):
        return ch, np.array([one(ks[i]) for i in ch]) if len(ch) else np.zeros((0, 2))

    for ch, vals in _map(run_chunk, chunks, workers):
        if len(ch):
            E[ch] = vals
    gap = np.min(np.abs(E - dp.E_D), axis=1)
    outside = active & (dist >= eps)
    gout = gap[outside]
    j = int(np.argmin(gout))
    min_gap = float(gout[j])
    argk = ks[outside][j]
    viol = [ks[outside][i].tolist() for i in np.nonzero(gout < violation_tol)[0]]
    ann = active & (dist > inner) & (dist <= eps)
    C1 = float(np.min(gap[ann] / dist[ann])) if ann.any() else float("nan")
    edges = np.linspace(inner, eps, n_annuli + 1)
    dmid, gmin = [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        sel = ann & (dist > lo) & (dist <= hi)
        if sel.any():
            s = np.argmin(gap[sel])
            dmid.append(dist[sel][s])
            gmin.append(gap[sel][s])
    dmid, gmin = np.array(dmid), np.array(gmin)
    if len(dmid) >= 3:
        A = np.stack([dmid, np.ones_like(dmid)], axis=1)
        (slope, icpt), *_ = np.linalg.lstsq(A, gmin, rcond=None)
        pred = A @ np.array([slope, icpt])
        r2 = 1 - np.sum((gmin - pred) ** 2) / max(np.sum((gmin - gmin.mean()) ** 2), 1e-300)
    else:
        slope = icpt = r2 = float("nan")
    linear = bool(slope > 0 and r2 > 0.9 and abs(icpt) < 0.25 * slope * eps)
    return NoFoldReport(bool(min_gap > violation_tol), min_gap, argk, eps, grid_density, min_gap, C1,
                        float(slope), float(icpt), float(r2), linear, viol)


@dataclass(frozen=True)
class GapSplitting:
    E_minus: float
    E_plus: float
    pred_minus: float
    pred_plus: float


def bulk_gap_splitting(V: PeriodicScalarField, a: PeriodicScalarField, dp: DiracPointData, delta: float,
                       theta: float | None = None) -> GapSplitting:
    """Split pair at the vertex for the perturbed bulk operator and the first-order prediction.

    Parameters
    ----------
    V, a : PeriodicScalarField
    dp : DiracPointData
    delta : float
        Perturbation strength (bulk sign included).
    theta : float, optional
        Precomputed ``theta``; computed from ``a`` if omitted.

    Returns
    -------
    GapSplitting
        ``E_minus <= E_plus`` and predictions ``E_D -+ delta |theta|``.
    """
    if theta is None:
        theta = theta_matrix(a, dp)[0, 0].real
    k = dp.basis.center
    H = assemble_bloch_hamiltonian(k, V, (delta, a), dp.basis)
    e = solve_bloch(H, k, dp.b_star + 1, vectors=False).energies
    em, ep = float(e[dp.b_star - 1]), float(e[dp.b_star])
    d = abs(delta) * abs(theta)
    return GapSplitting(em, ep, dp.E_D - d, dp.E_D + d)


# ---------------------------------------------------------------------------
# export
# ---------------------------------------------------------------------------


def fmt(x: float) -> str:
    """Round-trip float formatting."""
    return format(float(x), ".17g")


def write_dispersion_csv(table: DispersionTable, path) -> None:
    """CSV with columns ``lam, E_1 .. E_n``."""
    n = table.energies.shape[1]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["lam"] + [f"E_{b + 1}" for b in range(n)])
        for l, row in zip(table.lam, table.energies):
            w.writerow([fmt(l)] + [fmt(x) for x in row])


def write_json(obj: dict, path) -> None:
    """Deterministic JSON (sorted keys, fixed indentation)."""
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    if isinstance(o, complex):
        return [o.real, o.imag]
    raise TypeError(f"not serialisable: {type(o)}")


def dirac_point_to_dict(dp: DiracPointData) -> dict:
    """Serialisable summary of a Dirac point including the eigenbasis coefficients."""
    return {
        "Kstar": dp.Kstar,
        "E_D": dp.E_D,
        "b_star": dp.b_star,
        "upsilon": dp.upsilon,
        "theta_coeff": dp.theta_coeff,
        "gap_estimate": dp.gap_estimate,
        "conical_slope": dp.conical_slope,
        "cutoff": dp.basis.cutoff,
        "potential": dp.V.label,
        "n": dp.basis.n.tolist(),
        "Phi1_re": dp.Phi1.real.tolist(),
        "Phi1_im": dp.Phi1.imag.tolist(),
    }


def dirac_point_from_dict(d: dict, V: PeriodicScalarField) -> DiracPointData:
    """Inverse of :func:`dirac_point_to_dict` (requires the same potential)."""
    lat = build_lattice_basis()
    basis = build_plane_wave_basis(int(d["cutoff"]), lat.vertex(d["Kstar"]), lat)
    if basis.n.tolist() != d["n"]:
        raise ValueError("cached plane-wave ordering does not match this build")
    Phi1 = np.array(d["Phi1_re"]) + 1j * np.array(d["Phi1_im"])
    return DiracPointData(d["Kstar"], float(d["E_D"]), int(d["b_star"]), Phi1, Phi1.conj(), float(d["upsilon"]),
                          d["theta_coeff"], float(d["gap_estimate"]), basis, V, float(d["conical_slope"]))
