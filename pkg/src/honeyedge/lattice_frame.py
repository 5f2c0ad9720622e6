"""Honeycomb lattice geometry, edge frames and quasimomentum wrapping.

The equilateral lattice is spanned by ``v1, v2`` and its dual basis ``k1, k2``
satisfies ``k_n . v_l = delta_nl``; dual lattice vectors are ``2*pi*(n1*k1 + n2*k2)``.
An edge of slope ``r`` is described by the frame

    vhat1 = v1 + r v2,  vhat2 = v2,  khat1 = k1,  khat2 = -r k1 + k2.

Lines ``K + lam*khat2`` wrap around the Brillouin torus; the helpers here locate
where such a line passes close to the vertices K and K'.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import Iterable, Sequence, Union

import numpy as np

TWO_PI = 2.0 * math.pi
K_TAGS = ("K", "K'")

RealLike = Union[int, float, Fraction]


class BoundaryWarning(UserWarning):
    """A fractional part was evaluated within round-off of a discontinuity."""


class NotCoprimeError(ValueError):
    """Raised when a rational edge is not given in lowest terms."""


@dataclass(frozen=True)
class LatticeBasis:
    v1: np.ndarray
    v2: np.ndarray
    k1: np.ndarray
    k2: np.ndarray
    K: np.ndarray
    Kp: np.ndarray
    R: np.ndarray
    varsigma: float

    def vertex(self, tag: str) -> np.ndarray:
        """Return K or K' for the tag ``"K"`` / ``"K'"``."""
        _check_tag(tag)
        return self.K if tag == "K" else self.Kp

    def dual_vector(self, n1: float, n2: float) -> np.ndarray:
        return TWO_PI * (n1 * self.k1 + n2 * self.k2)

    def dual_coords(self, kappa: np.ndarray) -> np.ndarray:
        """Coordinates ``(n1, n2)`` of ``kappa = 2 pi (n1 k1 + n2 k2)``."""
        kappa = np.asarray(kappa, dtype=float)
        return np.stack([kappa @ self.v1, kappa @ self.v2], axis=-1) / TWO_PI


@lru_cache(maxsize=1)
def build_lattice_basis() -> LatticeBasis:
    """Construct the fixed honeycomb geometry.

    Returns
    -------
    LatticeBasis
        Lattice vectors of unit cell area, the dual basis, the Brillouin-zone
        vertices ``K = (2 pi / 3)(k1 - k2)`` and ``K' = -K``, and the clockwise
        rotation by ``2 pi / 3``.
    """
    s = math.sqrt(2.0 / math.sqrt(3.0))
    h = math.sqrt(3.0) / 2.0
    v1 = s * np.array([h, 0.5])
    v2 = s * np.array([h, -0.5])
    k1 = s * np.array([0.5, h])
    k2 = s * np.array([0.5, -h])
    K = (TWO_PI / 3.0) * (k1 - k2)
    R = np.array([[-0.5, h], [-h, -0.5]])
    for arr in (v1, v2, k1, k2, K, R):
        arr.setflags(write=False)
    Kp = -K
    Kp.setflags(write=False)
    return LatticeBasis(v1=v1, v2=v2, k1=k1, k2=k2, K=K, Kp=Kp, R=R, varsigma=s)


def _check_tag(tag: str) -> None:
    if tag not in K_TAGS:
        raise ValueError(f"vertex tag must be 'K' or \"K'\", got {tag!r}")


def _frac_floor(x: RealLike) -> tuple[RealLike, int]:
    n = math.floor(x)
    return x - n, int(n)


@dataclass(frozen=True)
class EdgeFrame:
    """Edge-adapted lattice frame of slope ``r``.

    ``r_exact`` holds the slope as a :class:`fractions.Fraction` when it was
    supplied as a rational number; wrapping arithmetic is then carried out
    exactly.
    """

    r: float
    r_exact: Fraction | None
    basis: LatticeBasis
    vhat1: np.ndarray
    vhat2: np.ndarray
    khat1: np.ndarray
    khat2: np.ndarray
    a1: np.ndarray
    a2: np.ndarray
    a_perp: np.ndarray

    @property
    def is_rational(self) -> bool:
        return self.r_exact is not None

    @property
    def rational_pair(self) -> tuple[int, int]:
        """``(a1, b1)`` with ``r = b1 / a1`` and ``a1 > 0``."""
        if self.r_exact is None:
            raise ValueError("edge slope is not rational")
        return self.r_exact.denominator, self.r_exact.numerator


def build_edge_frame(basis: LatticeBasis, r: RealLike) -> EdgeFrame:
    """Build the edge frame for slope ``r``.

    Parameters
    ----------
    basis : LatticeBasis
    r : int, float or Fraction
        Edge slope. Integers and fractions are kept exactly; floats are
        treated as (possibly irrational) reals.
    """
    if isinstance(r, bool):
        raise TypeError("r must be numeric")
    if isinstance(r, (int, Fraction)):
        r_exact: Fraction | None = Fraction(r)
    else:
        r_exact = None
    rf = float(r)
    if not math.isfinite(rf):
        raise ValueError("edge slope must be finite")
    vhat1 = basis.v1 + rf * basis.v2
    vhat2 = basis.v2.copy()
    khat1 = basis.k1.copy()
    khat2 = -rf * basis.k1 + basis.k2
    a1 = np.array([*basis.v1, rf])
    a2 = np.array([*basis.v2, -1.0])
    a_perp = np.array([0.0, 0.0, 1.0])
    return EdgeFrame(rf, r_exact, basis, vhat1, vhat2, khat1, khat2, a1, a2, a_perp)


@dataclass(frozen=True)
class WrapIndex:
    """Wrapped index ``(K*, m)``."""

    Kstar: str
    m: int

    def __post_init__(self):
        _check_tag(self.Kstar)
        object.__setattr__(self, "m", int(self.m))

    @property
    def sort_key(self) -> tuple[int, int]:
        return K_TAGS.index(self.Kstar), self.m


@dataclass(frozen=True)
class WrapData:
    index: WrapIndex
    lambda_I: float
    gamma_I: float
    ell_I: np.ndarray
    ell_coords: tuple[int, int]

    def gamma_tilde(self, delta: float) -> float:
        return self.gamma_I / delta


def _vertex_offsets(Kstar: str) -> tuple[Fraction, Fraction]:
    # (K - K*).v1 / 2pi and (K* - K).v2 / 2pi, exact since K.v1 = 2pi/3, K.v2 = -2pi/3
    if Kstar == "K":
        return Fraction(0), Fraction(0)
    return Fraction(2, 3), Fraction(2, 3)


def _gamma_argument(frame: EdgeFrame, Kstar: str, m: int) -> RealLike:
    c1, _ = _vertex_offsets(Kstar)
    if frame.r_exact is not None:
        r = frame.r_exact
        return c1 * (1 - r) - m * r + Fraction(1, 2)
    r = frame.r
    return float(c1) * (1.0 - r) - m * r + 0.5


def _warn_if_near_integer(x: RealLike, what: str) -> None:
    if isinstance(x, Fraction):
        return
    if abs(x - round(x)) < 1e-9:
        warnings.warn(
            f"{what} argument {x!r} lies within 1e-9 of a fractional-part "
            "discontinuity; the lower-closed side was chosen",
            BoundaryWarning,
            stacklevel=3,
        )


def wrap_data(frame: EdgeFrame, index: WrapIndex) -> WrapData:
    """Return ``lambda_I``, ``gamma_I`` and ``ell_I`` for the index ``(K*, m)``.

    ``lambda_I = (K* - K).vhat2 + 2 pi m`` and
    ``gamma_I = 2 pi frac((K - K*).vhat1 / 2 pi - m r + 1/2) - pi``, so that
    ``K + lambda_I khat2 = K* + gamma_I khat1 + ell_I`` with ``ell_I`` in the
    dual lattice.
    """
    b = frame.basis
    _, c2 = _vertex_offsets(index.Kstar)
    x = _gamma_argument(frame, index.Kstar, index.m)
    _warn_if_near_integer(x, "gamma")
    fr, n1 = _frac_floor(x)
    gamma = TWO_PI * float(fr) - math.pi
    lam = TWO_PI * (float(c2) + index.m)
    ell = b.dual_vector(n1, index.m)
    return WrapData(index, lam, gamma, ell, (n1, index.m))


def wrap_quasimomentum(frame: EdgeFrame, Kstar: str, lam: float):
    """Wrap the point ``K + lam*khat2`` around the vertex ``K*``.

    Returns
    -------
    index : WrapIndex
    m_of_lambda : ndarray
        ``gamma_I khat1 + (lam - lambda_I) khat2``, with both coordinates in
        ``[-pi, pi)``.
    ell : ndarray
        Dual lattice vector with ``K + lam khat2 = K* + m_of_lambda + ell``.
    """
    _check_tag(Kstar)
    _, c2 = _vertex_offsets(Kstar)
    y = (lam - TWO_PI * float(c2)) / TWO_PI + 0.5
    _warn_if_near_integer(y, "transverse")
    m = math.floor(y)
    wd = wrap_data(frame, WrapIndex(Kstar, m))
    m_of_lam = wd.gamma_I * frame.khat1 + (lam - wd.lambda_I) * frame.khat2
    return wd.index, m_of_lam, wd.ell_I


def gamma_values(frame: EdgeFrame, Kstar: str, ms: Iterable[int]) -> np.ndarray:
    """Vectorized ``gamma_I`` over ``m`` (no boundary warnings)."""
    ms = np.asarray(list(ms), dtype=np.int64)
    if frame.r_exact is not None:
        out = np.empty(ms.size)
        for i, m in enumerate(ms):
            fr, _ = _frac_floor(_gamma_argument(frame, Kstar, int(m)))
            out[i] = TWO_PI * float(fr) - math.pi
        return out
    c1, _ = _vertex_offsets(Kstar)
    x = float(c1) * (1.0 - frame.r) - ms * frame.r + 0.5
    return TWO_PI * (x - np.floor(x)) - math.pi


def enumerate_L_eps(frame: EdgeFrame, eps: float, m_max: int) -> list[WrapData]:
    """All indices with ``|m| <= m_max`` and ``|gamma_I| <= eps``, sorted."""
    if not 0.0 < eps <= math.pi:
        raise ValueError("eps must lie in (0, pi]")
    if m_max < 0:
        raise ValueError("m_max must be nonnegative")
    ms = np.arange(-m_max, m_max + 1)
    out: list[WrapData] = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", BoundaryWarning)
        for tag in K_TAGS:
            g = gamma_values(frame, tag, ms)
            for m in ms[np.abs(g) <= eps]:
                out.append(wrap_data(frame, WrapIndex(tag, int(m))))
    return sorted(out, key=lambda w: w.index.sort_key)


def bezout_pair(a1: int, b1: int) -> tuple[int, int]:
    """Integers ``(a2, b2)`` with ``a1*b2 - a2*b1 = 1`` and ``|a2|`` minimal."""
    old_r, r = a1, b1
    old_s, s = 1, 0
    old_t, t = 0, 1
    while r != 0:
        q = old_r // r
        old_r, r = r, old_r - q * r
        old_s, s = s, old_s - q * s
        old_t, t = t, old_t - q * t
    if abs(old_r) != 1:
        raise NotCoprimeError(f"gcd({a1}, {b1}) = {abs(old_r)} != 1")
    sgn = 1 if old_r == 1 else -1
    # a1*x + b1*y = 1  ->  b2 = x, a2 = -y
    b2, a2 = sgn * old_s, -sgn * old_t
    # a2 -> a2 + t*a1, b2 -> b2 + t*b1 preserves the relation
    shift = -round(a2 / a1)
    a2, b2 = a2 + shift * a1, b2 + shift * b1
    if abs(a2 - a1) < abs(a2):
        a2, b2 = a2 - a1, b2 - b1
    if 2 * abs(a2) == a1 and a2 < 0:
        a2, b2 = a2 + a1, b2 + b1
    return a2, b2


@dataclass(frozen=True)
class ZigzagType:
    a1: int
    b1: int
    a2: int
    b2: int

    def index_set(self, m_max: int) -> list[WrapIndex]:
        return [WrapIndex("K", m) for m in range(-m_max, m_max + 1) if m % self.a1 == 0]


@dataclass(frozen=True)
class ArmchairType:
    a1: int
    b1: int
    a2: int
    b2: int
    m0: int

    def index_set(self, m_max: int) -> list[WrapIndex]:
        ms = range(-m_max, m_max + 1)
        out = [WrapIndex("K", m) for m in ms if m % self.a1 == 0]
        out += [WrapIndex("K'", m) for m in ms if (m - self.m0) % self.a1 == 0]
        return out


def classify_rational_edge(a1: int, b1: int) -> ZigzagType | ArmchairType:
    """Classify the rational edge ``r = b1 / a1``.

    Zigzag-type edges (``a1 != b1 mod 3``) meet only the K sublattice of wrapped
    vertices; armchair-type edges meet both, the K' family sitting at
    ``m = m0 mod a1`` with ``m0 = (-c*a2) mod a1`` and ``c = 2(a1 - b1)/3``.
    """
    a1, b1 = int(a1), int(b1)
    if a1 <= 0:
        raise ValueError("a1 must be positive")
    if math.gcd(a1, b1) != 1:
        raise NotCoprimeError(f"({a1}, {b1}) is not a coprime pair")
    a2, b2 = bezout_pair(a1, b1)
    if (a1 - b1) % 3 != 0:
        return ZigzagType(a1, b1, a2, b2)
    c = 2 * (a1 - b1) // 3
    return ArmchairType(a1, b1, a2, b2, (-c * a2) % a1)


def kronecker_gap_scan(
    frame: EdgeFrame, Kstar: str, M_list: Sequence[int]
) -> list[tuple[int, float]]:
    """Minimum of ``|gamma_(K*, m)|`` over ``|m| <= M`` for each ``M``.

    The trivial index ``(K, 0)``, where ``gamma`` vanishes for every slope, is
    left out.
    """
    _check_tag(Kstar)
    if list(M_list) != sorted(M_list):
        raise ValueError("M_list must be increasing")
    Mmax = max(M_list)
    ms = np.arange(-Mmax, Mmax + 1)
    g = np.abs(gamma_values(frame, Kstar, ms))
    if Kstar == "K":
        g[ms == 0] = np.inf
    out = []
    for M in M_list:
        sel = np.abs(ms) <= M
        out.append((int(M), float(g[sel].min())))
    return out


def distance_to_vertices(basis: LatticeBasis, k: np.ndarray) -> np.ndarray:
    """Distance from each quasimomentum in ``k`` (shape (..., 2)) to K + dual lattice or K' + dual lattice."""
    k = np.asarray(k, dtype=float)
    coords = basis.dual_coords(k)
    base = np.floor(coords)
    best = np.full(k.shape[:-1], np.inf)
    for vtx in (basis.K, basis.Kp):
        vc = basis.dual_coords(vtx)
        for d1 in (-1, 0, 1, 2):
            for d2 in (-1, 0, 1, 2):
                n = base + np.array([d1, d2]) - np.floor(vc)
                pt = vtx + TWO_PI * (n[..., :1] * basis.k1 + n[..., 1:] * basis.k2)
                best = np.minimum(best, np.linalg.norm(k - pt, axis=-1))
    return best
