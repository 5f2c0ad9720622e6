"""Direct eigensolver for rational-edge domain-wall operators on a cylinder.

For ``r = b1/a1`` the vectors ``w1 = a1 v1 + b1 v2`` (the edge period) and
``w2 = a2 v1 + b2 v2`` with ``a1 b2 - a2 b1 = 1`` form a primitive lattice basis.
A point is written ``x = t1 w1 + t2 w2``; then ``khat2 . x = t2 / a1`` and the
wall argument is ``zeta = delta (t2 / a1 + s)``.

The operator ``-div((Id - delta kappa(zeta) a sigma2) grad) + V`` is discretized on
``N_t`` transverse layers with plane waves

    q = k_base + 2 pi (n1 kappa1 + (m / N_t) kappa2),      |q| <= cutoff * 2 pi |k1|,

where ``kappa1, kappa2`` is the dual basis of ``w1, w2`` and ``k_base . w1 = a1 k_par``.
The disk is the same absolute disk as in :mod:`honeyedge.bloch_solver`, so at
``delta = 0`` the matrix is exactly the direct sum of the Bloch matrices on the fiber
``k_base + 2 pi (m / N_t) kappa2``.

The wall is made periodic in ``t2`` by pairing it with an antiwall half a period away:
``kappa_per(zeta) = -1 + sum_n [kappa(zeta - nP) - kappa(zeta - nP - P/2)]`` with
``P = delta N_t / a1``.  Edge states of the wall and of the antiwall are told apart by
their transverse centre.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np
import scipy.linalg

from .bloch_solver import (
    PeriodicScalarField,
    assemble_bloch_hamiltonian,
    build_plane_wave_basis,
    compute_theta,
    fmt,
    write_json,
)
from .effective_dirac import TANH, Wall, closed_form_spectrum, dirac_spec, solve_dirac_1d
from .lattice_frame import (
    K_TAGS,
    TWO_PI,
    ArmchairType,
    EdgeFrame,
    LatticeBasis,
    bezout_pair,
    classify_rational_edge,
)

__all__ = [
    "IncommensurateInput",
    "BranchMatchingAmbiguous",
    "CylinderGeometry",
    "CylinderProblem",
    "EdgeState",
    "EdgeSpectrum",
    "ComparisonRow",
    "ComparisonTable",
    "PeriodicityReport",
    "cylinder_geometry",
    "periodic_wall_coefficients",
    "assemble_cylinder",
    "edge_spectrum",
    "fiber_bloch_union",
    "compare_to_effective",
    "kpar_periodicity_check",
    "write_comparison_csv",
    "write_comparison_json",
]


class IncommensurateInput(ValueError):
    """The edge slope is not an exact rational number."""


class BranchMatchingAmbiguous(RuntimeError):
    """Two effective-Dirac predictions cannot be separated at the discretization tolerance."""


# ---------------------------------------------------------------------------
# geometry
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CylinderGeometry:
    """Primitive edge-adapted basis ``w1, w2`` and its dual ``kappa1, kappa2``."""

    a1: int
    b1: int
    a2: int
    b2: int
    w1: np.ndarray
    w2: np.ndarray
    kappa1: np.ndarray
    kappa2: np.ndarray
    lattice: LatticeBasis = field(repr=False)

    def to_lattice_coords(self, g1: int, g2: int) -> tuple[int, int]:
        """Coordinates in ``(k1, k2)`` of ``g1 kappa1 + g2 kappa2``."""
        return g1 * self.b2 - g2 * self.b1, -g1 * self.a2 + g2 * self.a1

    def from_lattice_coords(self, p1: int, p2: int) -> tuple[int, int]:
        """Coordinates in ``(kappa1, kappa2)`` of ``p1 k1 + p2 k2``."""
        return p1 * self.a1 + p2 * self.b1, p1 * self.a2 + p2 * self.b2


def _require_rational(frame: EdgeFrame) -> tuple[int, int]:
    if not frame.is_rational:
        raise IncommensurateInput(
            f"edge slope r = {frame.r!r} is not an exact rational; supply a rational approximant "
            "b1/a1 (e.g. a continued-fraction convergent) as an int or fractions.Fraction"
        )
    return frame.rational_pair


def cylinder_geometry(frame: EdgeFrame) -> CylinderGeometry:
    """Edge-adapted primitive basis for a rational frame.

    Raises
    ------
    IncommensurateInput
        If ``frame.r`` is not an exact rational.
    """
    a1, b1 = _require_rational(frame)
    a2, b2 = bezout_pair(a1, b1)
    lat = frame.basis
    w1 = a1 * lat.v1 + b1 * lat.v2
    w2 = a2 * lat.v1 + b2 * lat.v2
    kappa1 = b2 * lat.k1 - a2 * lat.k2
    kappa2 = -b1 * lat.k1 + a1 * lat.k2
    return CylinderGeometry(a1, b1, a2, b2, w1, w2, kappa1, kappa2, lat)


# ---------------------------------------------------------------------------
# periodic wall
# ---------------------------------------------------------------------------


def periodic_wall_coefficients(wall: Wall, delta: float, s_shift: float, N_t: int, a1: int,
                               n_samples: int | None = None, images: int = 3) -> np.ndarray:
    """Fourier coefficients of ``kappa_per(delta (t2/a1 + s))`` in ``t2`` over ``[0, N_t)``.

    Returns
    -------
    ndarray, shape (n_samples,)
        ``c[j]`` (FFT ordering) is the coefficient of ``exp(2 pi i j t2 / N_t)``.
    """
    if n_samples is None:
        n_samples = max(512, 8 * N_t)
    P = delta * N_t / a1
    t2 = np.arange(n_samples) * (N_t / n_samples)
    zeta = delta * (t2 / a1 + s_shift)
    zeta = zeta - P * np.floor(zeta / P + 0.5)
    vals = -np.ones_like(zeta)
    for n in range(-images, images + 1):
        vals += wall(zeta - n * P) - wall(zeta - n * P - P / 2)
    return np.fft.fft(vals) / n_samples


def periodic_wall_values(wall: Wall, zeta: np.ndarray, P: float, images: int = 3) -> np.ndarray:
    """Point values of the wall/antiwall profile of period ``P``."""
    zeta = np.asarray(zeta, dtype=float)
    z = zeta - P * np.floor(zeta / P + 0.5)
    vals = -np.ones_like(z)
    for n in range(-images, images + 1):
        vals += wall(z - n * P) - wall(z - n * P - P / 2)
    return vals


# ---------------------------------------------------------------------------
# assembly
# ---------------------------------------------------------------------------


@dataclass
class CylinderProblem:
    """Assembled cylinder operator at one ``(k_par, delta, s)``.

    Attributes
    ----------
    n1, m : ndarray of int
        Plane-wave labels, ``q = k_base + 2 pi (n1 kappa1 + (m/N_t) kappa2)``.
    q : ndarray, shape (dim, 2)
        Absolute momenta.
    H : ndarray
        Hermitian matrix.
    """

    frame: EdgeFrame
    geometry: CylinderGeometry
    k_par: float
    delta: float
    s_shift: float
    N_t: int
    cutoff: int
    wall: Wall
    n1: np.ndarray
    m: np.ndarray
    q: np.ndarray
    H: np.ndarray = field(repr=False)
    wall_tail: float = 0.0
    assembly_hermiticity: float = 0.0

    @property
    def dim(self) -> int:
        return len(self.q)

    @property
    def period(self) -> float:
        """Period ``P`` of the wall profile in ``zeta``."""
        return self.delta * self.N_t / self.geometry.a1

    def hermiticity_residual(self) -> float:
        """Largest ``|H - H^*|`` entry of the matrix as assembled, before symmetrization."""
        return self.assembly_hermiticity

    def zeta_of_layer(self, t2: np.ndarray) -> np.ndarray:
        return self.delta * (np.asarray(t2, dtype=float) / self.geometry.a1 + self.s_shift)


def _field_support(f: PeriodicScalarField, geo: CylinderGeometry, rel: float = 1e-15):
    M = f.M
    c = f.coeffs
    thr = rel * max(1.0, float(np.abs(c).max()))
    out = []
    for i, j in np.argwhere(np.abs(c) > thr):
        g1, g2 = geo.from_lattice_coords(int(i - M), int(j - M))
        out.append((g1, g2, complex(c[i, j])))
    return out


def _plane_waves(geo: CylinderGeometry, k_par: float, N_t: int, cutoff: int):
    lat = geo.lattice
    R = cutoff * TWO_PI * float(np.linalg.norm(lat.k1))
    k_base = geo.a1 * k_par * geo.kappa1
    A = int(math.ceil(R * np.linalg.norm(geo.w1) / TWO_PI)) + abs(geo.a1) * int(math.ceil(abs(k_par))) + 2
    B = int(math.ceil(N_t * R * np.linalg.norm(geo.w2) / TWO_PI)) + 1
    n1, m = np.meshgrid(np.arange(-A, A + 1), np.arange(-B, B + 1), indexing="ij")
    n1, m = n1.ravel(), m.ravel()
    q = k_base[None, :] + TWO_PI * (n1[:, None] * geo.kappa1[None, :] + (m / N_t)[:, None] * geo.kappa2[None, :])
    keep = np.linalg.norm(q, axis=1) <= R * (1 + 1e-12)
    return n1[keep], m[keep], q[keep]


def assemble_cylinder(frame: EdgeFrame, k_par: float, delta: float, s_shift: float, N_t: int, cutoff: int,
                      V: PeriodicScalarField, a: PeriodicScalarField, wall: Wall = TANH,
                      block_rows: int = 512, uniform_kappa: float | None = None) -> CylinderProblem:
    """Assemble the cylinder operator for a rational edge.

    Parameters
    ----------
    frame : EdgeFrame
        Rational frame ``r = b1/a1``.
    k_par : float
        Quasimomentum along the edge: ``psi(x + a1 vhat1) = exp(i a1 k_par) psi(x)``.
    delta : float
        Wall strength; ``delta = 0`` gives the unperturbed operator.
    s_shift : float
        Fiber parameter ``s``; the wall sits at ``zeta = delta (t2/a1 + s) = 0``.
    N_t : int
        Number of transverse layers (one primitive cell each).
    cutoff : int
        Shell cutoff of the plane-wave disk.
    V, a : PeriodicScalarField
        Potential and the coefficient of the ``sigma2`` term.
    wall : Wall
        Domain-wall profile.
    block_rows : int
        Rows assembled at a time.
    uniform_kappa : float, optional
        Replace the wall/antiwall profile by this constant (bulk comparison runs).

    Returns
    -------
    CylinderProblem

    Raises
    ------
    IncommensurateInput
        If ``frame.r`` is not rational.
    """
    geo = cylinder_geometry(frame)
    if N_t < 2:
        raise ValueError("N_t must be at least 2")
    n1, m, q = _plane_waves(geo, float(k_par), int(N_t), int(cutoff))
    dim = len(q)
    V_sup = _field_support(V, geo)
    a_sup = _field_support(a, geo) if delta != 0 else []
    mspan = int(m.max() - m.min()) if dim else 0
    tail = 0.0
    if delta != 0:
        ns = max(512, 8 * N_t)
        while ns < 2 * (mspan + N_t * 4):
            ns *= 2
        if uniform_kappa is None:
            cw = periodic_wall_coefficients(wall, delta, s_shift, N_t, geo.a1, ns)
        else:
            cw = np.zeros(ns, dtype=complex)
            cw[0] = float(uniform_kappa)
        half = ns // 2
        freqs = np.fft.fftfreq(ns, 1.0 / ns).astype(int)
        tail = float(np.abs(cw[np.abs(freqs) >= half // 2]).max())
        cfull = np.zeros(ns + 1, dtype=complex)
        cfull[freqs + half] = cw
        cfull[0] = 0.0  # the Nyquist term is dropped to keep the expansion symmetric
    H = np.zeros((dim, dim), dtype=complex)
    q2 = np.sum(q**2, axis=1)
    for r0 in range(0, dim, block_rows):
        r1 = min(dim, r0 + block_rows)
        dn1 = n1[r0:r1, None] - n1[None, :]
        dm = m[r0:r1, None] - m[None, :]
        blk = np.zeros((r1 - r0, dim), dtype=complex)
        for g1, g2, c in V_sup:
            blk[(dn1 == g1) & (dm == N_t * g2)] += c
        if a_sup:
            ka = np.zeros((r1 - r0, dim), dtype=complex)
            for g1, g2, c in a_sup:
                sel = dn1 == g1
                j = dm[sel] - N_t * g2
                inside = np.abs(j) < half
                vals = np.zeros(j.shape, dtype=complex)
                vals[inside] = cfull[j[inside] + half]
                ka[sel] += c * vals
            wedge = q[r0:r1, None, 0] * q[None, :, 1] - q[r0:r1, None, 1] * q[None, :, 0]
            blk += 1j * delta * ka * wedge
        blk[np.arange(r1 - r0), np.arange(r0, r1)] += q2[r0:r1]
        H[r0:r1] = blk
    herm = float(np.abs(H - H.conj().T).max())
    H = 0.5 * (H + H.conj().T)
    return CylinderProblem(frame, geo, float(k_par), float(delta), float(s_shift), int(N_t), int(cutoff), wall,
                           n1, m, q, H, tail, herm)


def fiber_bloch_union(problem: CylinderProblem, V: PeriodicScalarField, lo: float, hi: float,
                      perturbation: tuple[float, PeriodicScalarField] | None = None) -> np.ndarray:
    """Bloch energies in ``[lo, hi]`` over the fiber ``k_base + 2 pi (j/N_t) kappa2``, ``j = 0..N_t-1``.

    Uses :mod:`honeyedge.bloch_solver` with a disk of the same cutoff around each fiber point;
    ``perturbation = (delta, a)`` adds the uniform ``sigma2`` term.
    """
    geo = problem.geometry
    k_base = geo.a1 * problem.k_par * geo.kappa1
    out = []
    for j in range(problem.N_t):
        k = k_base + TWO_PI * (j / problem.N_t) * geo.kappa2
        b = build_plane_wave_basis(problem.cutoff, k, geo.lattice)
        H = assemble_bloch_hamiltonian(k, V, perturbation, b)
        e = scipy.linalg.eigh(H, eigvals_only=True, subset_by_value=(lo, hi), driver="evr")
        out.append(e)
    return np.sort(np.concatenate(out)) if out else np.zeros(0)


# ---------------------------------------------------------------------------
# edge spectrum
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EdgeState:
    """One eigenpair of the cylinder operator in the requested window.

    ``participation`` is the inverse participation number over the ``N_t`` layers;
    ``center_zeta`` is the circular mean of the layer density expressed in ``zeta``
    and reduced to ``[-P/2, P/2)``; ``side`` is ``"wall"`` when that centre lies
    within ``P/4`` of the wall, else ``"antiwall"``; ``valley_K`` is the weight carried by
    momenta closer to ``K + dual lattice`` than to ``K' + dual lattice``.
    """

    energy: float
    participation: float
    localized: bool
    center_zeta: float
    side: str
    valley_K: float
    far_mass: float
    localization_length: float


@dataclass
class EdgeSpectrum:
    """States in a window together with their eigenvectors (columns)."""

    window: tuple[float, float]
    states: list[EdgeState]
    vectors: np.ndarray = field(repr=False)
    N_t: int = 0

    @property
    def energies(self) -> np.ndarray:
        return np.array([s.energy for s in self.states])

    def localized(self, side: str | None = None) -> list[EdgeState]:
        return [s for s in self.states if s.localized and (side is None or s.side == side)]

    def as_pairs(self) -> list[tuple[float, float]]:
        """``(eigenvalue, localization length)`` for every state in the window."""
        return [(s.energy, s.localization_length) for s in self.states]


def _vertex_distance(lat: LatticeBasis, q: np.ndarray, tag: str) -> np.ndarray:
    vtx = lat.vertex(tag)
    c = lat.dual_coords(q - vtx[None, :])
    best = np.full(len(q), np.inf)
    base = np.round(c)
    for d1 in (-1, 0, 1):
        for d2 in (-1, 0, 1):
            n = base + np.array([d1, d2])
            pt = vtx[None, :] + TWO_PI * (n[:, :1] * lat.k1[None, :] + n[:, 1:] * lat.k2[None, :])
            best = np.minimum(best, np.linalg.norm(q - pt, axis=1))
    return best


def _valley_mask(problem: CylinderProblem) -> np.ndarray:
    lat = problem.geometry.lattice
    return _vertex_distance(lat, problem.q, "K") < _vertex_distance(lat, problem.q, "K'")


def _separate_valleys(w: np.ndarray, U: np.ndarray, maskK: np.ndarray, tol: float) -> np.ndarray:
    """Rotate near-degenerate clusters so that each vector has a definite valley weight."""
    U = U.copy()
    i = 0
    while i < len(w):
        j = i + 1
        while j < len(w) and w[j] - w[j - 1] < tol:
            j += 1
        if j - i > 1:
            B = U[:, i:j]
            P = B[maskK].conj().T @ B[maskK]
            _, R = np.linalg.eigh(0.5 * (P + P.conj().T))
            U[:, i:j] = B @ R
        i = j
    return U


def _layer_density(problem: CylinderProblem, U: np.ndarray, oversample: int = 4) -> np.ndarray:
    """Mass per transverse layer, shape ``(n_vec, N_t)``."""
    N_t = problem.N_t
    m0 = int(problem.m.min())
    span = int(problem.m.max()) - m0 + 1
    per = oversample
    while per * N_t < span:
        per *= 2
    Lg = per * N_t
    groups, gidx = np.unique(problem.n1, return_inverse=True)
    C = np.zeros((U.shape[1], len(groups), Lg), dtype=complex)
    C[:, gidx, problem.m - m0] = U.T
    f = np.fft.ifft(C, axis=-1) * Lg
    # shift by the lowest m label: sum_m c_m e^{2 pi i m t/N_t} = e^{2 pi i m0 t/N_t} sum c e^{...}
    dens = np.sum(np.abs(f) ** 2, axis=1)
    dens = dens.reshape(U.shape[1], N_t, per).sum(axis=-1)
    return dens / dens.sum(axis=1, keepdims=True)


def edge_spectrum(problem: CylinderProblem, window: tuple[float, float], localized_fraction: float = 0.3,
                  cluster_tol: float | None = None) -> EdgeSpectrum:
    """Eigenpairs in ``window`` with transverse localization diagnostics.

    Parameters
    ----------
    problem : CylinderProblem
    window : (lo, hi)
        Energy window, typically around ``E_D`` inside the bulk gap.
    localized_fraction : float
        A state counts as localized when its participation number is below
        ``localized_fraction * N_t``.
    cluster_tol : float, optional
        Eigenvalues closer than this are rotated to valley-definite vectors;
        defaults to ``1e-7 * max(delta, 1e-3)``.

    Returns
    -------
    EdgeSpectrum
        States sorted by energy; empty if the window holds no eigenvalue.
    """
    lo, hi = float(window[0]), float(window[1])
    if not lo < hi:
        raise ValueError("window must satisfy lo < hi")
    w, U = scipy.linalg.eigh(problem.H, subset_by_value=(lo, hi), driver="evr")
    N_t = problem.N_t
    if len(w) == 0:
        return EdgeSpectrum((lo, hi), [], np.zeros((problem.dim, 0), dtype=complex), N_t)
    maskK = _valley_mask(problem)
    tol = 1e-7 * max(problem.delta, 1e-3) if cluster_tol is None else cluster_tol
    U = _separate_valleys(w, U, maskK, tol)
    dens = _layer_density(problem, U)
    pr = 1.0 / np.sum(dens**2, axis=1)
    layers = np.arange(N_t) + 0.5
    phase = np.exp(2j * np.pi * layers / N_t)
    ang = np.angle(dens @ phase)
    t2c = np.mod(ang, 2 * np.pi) * N_t / (2 * np.pi)
    P = problem.period if problem.delta != 0 else float(N_t)
    zc = problem.zeta_of_layer(t2c) if problem.delta != 0 else t2c
    zc = zc - P * np.floor(zc / P + 0.5)
    states = []
    for i in range(len(w)):
        near_wall = abs(zc[i]) < P / 4
        side = "wall" if near_wall else "antiwall"
        # distance in layers from the state's own centre, on the circle
        dl = np.abs(((layers - t2c[i]) + N_t / 2) % N_t - N_t / 2)
        far = float(dens[i][dl > N_t / 4].sum())
        ell = float(np.sqrt(np.sum(dens[i] * dl**2)))
        vk = float(np.sum(np.abs(U[maskK, i]) ** 2))
        states.append(EdgeState(float(w[i]), float(pr[i]), bool(pr[i] < localized_fraction * N_t), float(zc[i]),
                                side, vk, far, ell))
    return EdgeSpectrum((lo, hi), states, U, N_t)


# ---------------------------------------------------------------------------
# comparison with the effective Dirac prediction
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ComparisonRow:
    delta: float
    Kstar: str
    j: int
    numerical: float
    predicted: float
    error: float
    scaled_error: float
    theta_gap: float
    participation: float
    valley_K: float
    alt_predicted: float


@dataclass
class ComparisonTable:
    """Matched (numerical, predicted) pairs and empirical orders per branch."""

    mu: float
    rows: list[ComparisonRow]
    orders: dict[tuple[str, int], list[float]]
    fitted_order: dict[tuple[str, int], float]
    branches_seen: set

    def rows_for(self, Kstar: str, j: int) -> list[ComparisonRow]:
        return sorted((r for r in self.rows if r.Kstar == Kstar and r.j == j), key=lambda r: -r.delta)


def _tags_for(frame: EdgeFrame) -> tuple[str, ...]:
    a1, b1 = frame.rational_pair
    return K_TAGS if isinstance(classify_rational_edge(a1, b1), ArmchairType) else ("K",)


def compare_to_effective(frame: EdgeFrame, deltas: Sequence[float], mu: float, dps: dict,
                         a: PeriodicScalarField, cutoff: int, wall: Wall = TANH, half_period: float = 5.0,
                         branches: Sequence[int] = (0,), disc_tol: float = 1e-6, theta: float | None = None,
                         dirac_grid: int = 2048, problems: dict | None = None) -> ComparisonTable:
    """Match localized cylinder eigenvalues with ``E_D + delta z_j(mu)``.

    Parameters
    ----------
    frame : EdgeFrame
        Rational frame of zigzag or armchair type.
    deltas : sequence of float
        Positive wall strengths.
    mu : float
        Offset ``k_par = K . vhat1 + delta mu``.
    dps : dict
        ``{"K": DiracPointData, "K'": DiracPointData}`` computed at the same ``cutoff``.
    a : PeriodicScalarField
    cutoff : int
        Plane-wave cutoff of the cylinder.
    wall : Wall
    half_period : float
        Distance in ``zeta`` between wall and antiwall; ``N_t = round(2 half_period a1 / delta)``.
    branches : sequence of int
        Branch labels ``j`` to match.
    disc_tol : float
        Discretization error estimate; predictions of the same valley closer than
        ``3 disc_tol`` make the assignment ambiguous.
    theta : float, optional
        ``theta``; computed from ``a`` and ``dps["K"]`` if omitted.
    dirac_grid : int
        Grid size for the one-dimensional Dirac solve.
    problems : dict, optional
        Receives the assembled problems keyed by ``delta`` (for inspection).

    Returns
    -------
    ComparisonTable
        ``alt_predicted`` holds the prediction with the opposite sign of the ``z_0`` slope.

    Raises
    ------
    BranchMatchingAmbiguous
    """
    _require_rational(frame)
    tags = _tags_for(frame)
    a1 = frame.rational_pair[0]
    if theta is None:
        theta, _ = compute_theta(a, dps["K"])
    n2 = float(np.linalg.norm(frame.khat2))
    base = {}
    for tag in tags:
        spec = dirac_spec(dps[tag], frame, theta, 0.0, wall)
        base[tag] = solve_dirac_1d(spec, N_grid=dirac_grid, check_resolution=False)
    K = frame.basis.K
    kpar0 = float(K @ frame.vhat1)
    V = dps["K"].V
    rows: list[ComparisonRow] = []
    seen = set()
    E_D = dps["K"].E_D
    for delta in deltas:
        if delta <= 0:
            raise ValueError("delta must be positive")
        preds = []
        for tag in tags:
            dp = dps[tag]
            sp = closed_form_spectrum(base[tag].eigenvalues, mu, dp.upsilon, theta, n2)
            for j in branches:
                if abs(j) > sp.N:
                    continue
                z = sp.branch(j)
                alt = -z if j == 0 else z
                preds.append((tag, j, dp.E_D + delta * z, dp.E_D + delta * alt, sp.theta_gap))
        for t1 in tags:
            same = [p for p in preds if p[0] == t1]
            for i in range(len(same)):
                for k in range(i + 1, len(same)):
                    if abs(same[i][2] - same[k][2]) < 3 * disc_tol:
                        raise BranchMatchingAmbiguous(
                            f"branches {same[i][1]} and {same[k][1]} of {t1} are closer than 3 x {disc_tol:g}")
        N_t = int(round(2 * half_period * a1 / delta))
        prob = assemble_cylinder(frame, kpar0 + delta * mu, delta, 0.0, N_t, cutoff, V, a, wall)
        if problems is not None:
            problems[delta] = prob
        gap = delta * abs(theta)
        es = edge_spectrum(prob, (E_D - 0.98 * gap, E_D + 0.98 * gap))
        cands = es.localized("wall")
        if len(tags) == 2:
            valley_ok = all(abs(c.valley_K - 0.5) > 0.25 for c in cands)
            for pK in [p for p in preds if p[0] == "K"]:
                for pKp in [p for p in preds if p[0] == "K'"]:
                    if abs(pK[2] - pKp[2]) < 3 * disc_tol and not valley_ok:
                        raise BranchMatchingAmbiguous(
                            "K and K' predictions coincide and the valley labels do not separate the states")
        used = set()
        for tag, j, pred, alt, tg in preds:
            pool = [c for c in cands if (len(tags) == 1 or (c.valley_K > 0.5) == (tag == "K")) and id(c) not in used]
            if not pool:
                continue
            best = min(pool, key=lambda c: abs(c.energy - pred))
            used.add(id(best))
            err = abs(best.energy - pred)
            rows.append(ComparisonRow(float(delta), tag, int(j), best.energy, pred, err, err / (delta * tg), tg,
                                      best.participation, best.valley_K, alt))
            seen.add(tag)
    orders: dict = {}
    fitted: dict = {}
    keys = sorted({(r.Kstar, r.j) for r in rows})
    tab = ComparisonTable(float(mu), rows, orders, fitted, seen)
    for key in keys:
        rs = tab.rows_for(*key)
        ds = np.array([r.delta for r in rs])
        es_ = np.array([max(r.error, 1e-300) for r in rs])
        orders[key] = [float(np.log(es_[i] / es_[i + 1]) / np.log(ds[i] / ds[i + 1])) for i in range(len(rs) - 1)]
        if len(rs) >= 2:
            fitted[key] = float(np.polyfit(np.log(ds), np.log(es_), 1)[0])
    return tab


def write_comparison_csv(table: ComparisonTable, path) -> None:
    """CSV with one row per matched branch and ``delta``."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["delta", "Kstar", "j", "numerical", "predicted", "error", "error_over_delta_theta_gap",
                    "theta_gap", "participation", "valley_K", "alt_predicted"])
        for r in sorted(table.rows, key=lambda r: (r.Kstar, r.j, -r.delta)):
            w.writerow([fmt(r.delta), r.Kstar, r.j, fmt(r.numerical), fmt(r.predicted), fmt(r.error),
                        fmt(r.scaled_error), fmt(r.theta_gap), fmt(r.participation), fmt(r.valley_K),
                        fmt(r.alt_predicted)])


def write_comparison_json(table: ComparisonTable, path) -> None:
    write_json({
        "mu": table.mu,
        "rows": [r.__dict__ for r in sorted(table.rows, key=lambda r: (r.Kstar, r.j, -r.delta))],
        "orders": {f"{k[0]}:{k[1]}": v for k, v in sorted(table.orders.items())},
        "fitted_order": {f"{k[0]}:{k[1]}": v for k, v in sorted(table.fitted_order.items())},
        "branches_seen": sorted(table.branches_seen),
    }, path)


# ---------------------------------------------------------------------------
# k_par periodicity
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PeriodicityReport:
    k_par: float
    shift: float
    energies: np.ndarray
    shifted_energies: np.ndarray
    max_difference: float
    same_count: bool


def kpar_periodicity_check(frame: EdgeFrame, delta: float, k_par: float, window: tuple[float, float],
                           N_t: int, cutoff: int, V: PeriodicScalarField, a: PeriodicScalarField,
                           wall: Wall = TANH, s_shift: float = 0.0) -> PeriodicityReport:
    """Compare window spectra at ``k_par`` and ``k_par + 2 pi / a1``.

    The shifted fiber is assembled from scratch; its plane-wave labels differ from the
    unshifted ones by ``n1 -> n1 + 1``, which is a relabelling of the same disk.

    Raises
    ------
    IncommensurateInput
        If ``frame.r`` is not rational.
    """
    a1, _ = _require_rational(frame)
    shift = TWO_PI / a1
    e0 = edge_spectrum(assemble_cylinder(frame, k_par, delta, s_shift, N_t, cutoff, V, a, wall), window).energies
    e1 = edge_spectrum(assemble_cylinder(frame, k_par + shift, delta, s_shift, N_t, cutoff, V, a, wall),
                       window).energies
    same = len(e0) == len(e1)
    diff = float(np.max(np.abs(e0 - e1))) if same and len(e0) else (0.0 if same else float("inf"))
    return PeriodicityReport(float(k_par), shift, e0, e1, diff, same)


def problem_summary(problem: CylinderProblem) -> dict:
    """Plain description of a cylinder problem for manifests."""
    r = problem.frame.r_exact
    return {
        "r": f"{r.numerator}/{r.denominator}" if isinstance(r, Fraction) else fmt(problem.frame.r),
        "k_par": problem.k_par,
        "delta": problem.delta,
        "s_shift": problem.s_shift,
        "N_t": problem.N_t,
        "cutoff": problem.cutoff,
        "dim": problem.dim,
        "wall": problem.wall.wall_id,
        "wall_fourier_tail": problem.wall_tail,
    }
