import csv
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from honeyedge.bloch_solver import (
    SIGMA3,
    TAU,
    NonDegeneracyFailure,
    NoDoubleEigenvalue,
    WrongSymmetryType,
    assemble_bloch_hamiltonian,
    bloch_energies,
    build_plane_wave_basis,
    bulk_gap_splitting,
    compute_theta,
    constant_field,
    convolution_matrix,
    detect_dirac_point,
    dirac_point_from_dict,
    dirac_point_to_dict,
    dispersion_slice,
    nofold_scan,
    sigma_matrix,
    skew_matrix,
    solve_bloch,
    synth_honeycomb_potential,
    twisted_pauli,
    write_dispersion_csv,
)
from honeyedge.lattice_frame import (
    WrapIndex,
    build_edge_frame,
    build_lattice_basis,
    enumerate_L_eps,
)

B = build_lattice_basis()


@pytest.fixture(scope="module")
def V():
    return synth_honeycomb_potential("trig", 10.0)


@pytest.fixture(scope="module")
def a_field():
    return synth_honeycomb_potential("trig", 1.0)


@pytest.fixture(scope="module")
def dpK(V):
    return detect_dirac_point(V, "K", 6)


@pytest.fixture(scope="module")
def dpKp(V):
    return detect_dirac_point(V, "K'", 6)


def test_basis_closed_under_negation_and_rotation():
    b = build_plane_wave_basis(5)
    s = {tuple(n) for n in b.n}
    assert {(-x, -y) for x, y in s} == s
    assert {(-y, x - y) for x, y in s} == s
    for tag in ("K", "K'"):
        bk = build_plane_wave_basis(6, B.vertex(tag))
        p = bk.rotation_permutation(tag)
        q = bk.momenta(B.vertex(tag))
        assert np.allclose(q @ B.R.T, q[p], atol=1e-12)


def test_trig_potential_matches_formula():
    V = synth_honeycomb_potential("trig", 3.0)
    x = np.random.default_rng(0).normal(size=(20, 2))
    ref = 3.0 * sum(np.cos(2 * np.pi * x @ k) for k in (B.k1, B.k2, B.k1 + B.k2))
    assert np.allclose(V.evaluate(x), ref, atol=1e-13)
    assert all(v < 1e-12 for v in V.symmetry_residuals().values())
    assert V.top_harmonic() != 0


def test_gaussian_wells_match_direct_periodization():
    w, g = 0.35, -4.0
    V = synth_honeycomb_potential("gaussian_wells", g, width=w)
    assert all(v < 1e-12 for v in V.symmetry_residuals().values())
    x = np.random.default_rng(1).uniform(-1, 1, size=(10, 2))
    site = (B.v1 + B.v2) / 3
    ref = np.zeros(len(x))
    for n1 in range(-6, 7):
        for n2 in range(-6, 7):
            c = n1 * B.v1 + n2 * B.v2
            for s in (site, -site):
                ref += g * np.exp(-np.sum((x - c - s) ** 2, axis=1) / w**2)
    assert np.allclose(V.evaluate(x), ref, atol=1e-10)


def test_potential_preconditions():
    with pytest.raises(ValueError):
        synth_honeycomb_potential("trig", 0.0)
    with pytest.raises(ValueError):
        synth_honeycomb_potential("gaussian_wells", -1.0)


def test_free_laplacian_diagonal():
    b = build_plane_wave_basis(4)
    H = assemble_bloch_hamiltonian(np.zeros(2), constant_field(0.0), None, b)
    assert np.allclose(H, np.diag(np.sum(b.waves**2, axis=1)))


def test_assembly_hermitian_and_delta_derivative(V, a_field):
    b = build_plane_wave_basis(6, B.K)
    H = assemble_bloch_hamiltonian(B.K, V, None, b)
    assert np.abs(H - H.conj().T).max() < 1e-12
    h = 1e-4
    Hp = assemble_bloch_hamiltonian(B.K, V, (0.05 + h, a_field), b)
    Hm = assemble_bloch_hamiltonian(B.K, V, (0.05 - h, a_field), b)
    assert np.abs((Hp - Hm) / (2 * h) - skew_matrix(B.K, a_field, b)).max() < 1e-8
    Hd = assemble_bloch_hamiltonian(B.K, V, (0.05, a_field), b)
    assert np.abs(Hd - Hd.conj().T).max() < 1e-12


def test_quadratic_form_oracle(a_field):
    # <grad u, A grad u> evaluated by real-space quadrature on a cell
    b = build_plane_wave_basis(2, B.K)
    rng = np.random.default_rng(3)
    c = rng.normal(size=b.dim) + 1j * rng.normal(size=b.dim)
    delta = 0.3
    H = assemble_bloch_hamiltonian(B.K, constant_field(0.0), (delta, a_field), b)
    n = 48
    t = (np.arange(n) + 0.5) / n
    T1, T2 = np.meshgrid(t, t, indexing="ij")
    x = T1[..., None] * B.v1 + T2[..., None] * B.v2
    q = b.momenta(B.K)
    ph = np.exp(1j * x @ q.T)
    grad = 1j * np.einsum("...i,i,id->...d", ph, c, q)
    a = a_field.evaluate(x)
    s2 = np.array([[0, -1j], [1j, 0]])
    Ag = grad - delta * a[..., None] * np.einsum("de,...e->...d", s2, grad)
    form = np.mean(np.sum(grad.conj() * Ag, axis=-1))
    assert abs(form - c.conj() @ H @ c) < 1e-9 * abs(form)


def test_free_dispersion():
    k = np.array([0.7, -0.4])
    e = bloch_energies(constant_field(0.0), k, 4, 1)
    b = build_plane_wave_basis(4, k)
    assert e[0] == pytest.approx(np.min(np.sum(b.momenta(k) ** 2, axis=1)), abs=1e-12)


def test_dual_periodicity_and_evenness(V):
    k = np.array([0.37, 1.21])
    e0 = bloch_energies(V, k, 6, 6)
    e1 = bloch_energies(V, k + 2 * np.pi * B.k1, 6, 6)
    e2 = bloch_energies(V, -k, 6, 6)
    assert np.allclose(e0, e1, atol=1e-9) and np.allclose(e0, e2, atol=1e-9)


def test_solve_bloch_invariants(V):
    k = np.array([0.1, 0.9])
    b = build_plane_wave_basis(6, k)
    H = assemble_bloch_hamiltonian(k, V, None, b)
    es = solve_bloch(H, k, 8)
    assert np.all(np.diff(es.energies) >= 0)
    assert np.allclose(es.vectors.conj().T @ es.vectors, np.eye(8), atol=1e-12)
    assert np.all(es.residual(H) <= 1e-9 * (1 + np.abs(es.energies)))
    with pytest.raises(ValueError):
        solve_bloch(H, k, b.dim + 1)


def test_hamiltonian_commutes_with_rotation(V):
    for tag in ("K", "K'"):
        b = build_plane_wave_basis(6, B.vertex(tag))
        H = assemble_bloch_hamiltonian(B.vertex(tag), V, None, b)
        p = b.rotation_permutation(tag)
        P = np.zeros((b.dim, b.dim))
        P[p, np.arange(b.dim)] = 1
        assert np.abs(P @ H - H @ P).max() < 1e-10


def test_dirac_point_basic(dpK, dpKp):
    assert dpK.b_star == 1
    assert dpK.upsilon > 0
    assert dpKp.upsilon == pytest.approx(-dpK.upsilon, abs=1e-8)
    assert dpKp.E_D == pytest.approx(dpK.E_D, abs=1e-10)
    for dp in (dpK, dpKp):
        P = dp.Phi
        assert np.allclose(P.conj().T @ P, np.eye(2), atol=1e-12)
        p = dp.basis.rotation_permutation(dp.Kstar)
        rot2 = np.zeros_like(dp.Phi2)
        rot2[p] = dp.Phi2
        rot1 = np.zeros_like(dp.Phi1)
        rot1[p] = dp.Phi1
        assert np.allclose(rot1, TAU * dp.Phi1, atol=1e-10)
        assert np.allclose(rot2, TAU.conjugate() * dp.Phi2, atol=1e-10)
        assert abs(dp.conical_slope - abs(dp.upsilon)) < 0.01 * abs(dp.upsilon)


def test_dirac_eigenvectors_solve_cell_problem(V, dpK):
    H = assemble_bloch_hamiltonian(B.K, V, None, dpK.basis)
    for Phi in (dpK.Phi1, dpK.Phi2):
        assert np.linalg.norm(H @ Phi - dpK.E_D * Phi) < 1e-9 * (1 + dpK.E_D)


def test_cutoff_convergence(V, dpK, a_field):
    d8 = detect_dirac_point(V, "K", 8, conical_fit=False)
    assert abs(d8.E_D - dpK.E_D) < 1e-6
    assert abs(d8.upsilon - dpK.upsilon) < 1e-6
    assert abs(compute_theta(a_field, d8)[0] - compute_theta(a_field, dpK)[0]) < 1e-6


def test_free_operator_has_no_isolated_pair():
    # free levels at K come in rotation orbits of size 3 or 6, never an isolated pair
    with pytest.raises(NoDoubleEigenvalue):
        detect_dirac_point(constant_field(0.0), "K", 4, conical_fit=False)


def test_trivial_rotation_action_is_wrong_symmetry_type(V, monkeypatch):
    from honeyedge import bloch_solver

    monkeypatch.setattr(bloch_solver.PlaneWaveBasis, "rotation_permutation", lambda self, tag: np.arange(self.dim))
    with pytest.raises(WrongSymmetryType):
        detect_dirac_point(V, "K", 6, conical_fit=False)


def test_theta_structure(a_field, dpK, dpKp):
    th, Th = compute_theta(a_field, dpK)
    assert np.abs(Th - th * SIGMA3).max() < 1e-6 * abs(th)
    th2, Th2 = compute_theta(a_field, dpKp)
    assert th2 == pytest.approx(th, abs=1e-8)
    assert np.abs(Th2 - th2 * SIGMA3).max() < 1e-6 * abs(th)


def test_theta_constant_field_fails(dpK):
    with pytest.raises(NonDegeneracyFailure):
        compute_theta(constant_field(2.5), dpK)


@pytest.mark.parametrize("m,expect", [((1, 0), "s1"), ((0, 1), "s2"), ((0, 0), "zero")])
def test_sigma_matrix_examples(dpK, m, expect):
    S = sigma_matrix(m, dpK)
    u = dpK.upsilon
    ref = {"s1": u * np.array([[0, 1], [1, 0]]), "s2": -u * np.array([[0, -1j], [1j, 0]]), "zero": np.zeros((2, 2))}
    assert np.abs(S - ref[expect]).max() < 1e-6 * abs(u)


@settings(max_examples=20, deadline=None)
@given(st.floats(-5, 5), st.floats(-5, 5), st.sampled_from(["K", "K'"]))
def test_sigma_matrix_property(m1, m2, tag):
    dp = _DP[tag]
    m = np.array([m1, m2])
    err = np.abs(sigma_matrix(m, dp) - twisted_pauli(m, dp.upsilon)).max()
    assert err <= 1e-6 * abs(dp.upsilon) * max(np.linalg.norm(m), 1e-300) + 1e-14


_DP = {}


@pytest.fixture(scope="module", autouse=True)
def _share(dpK, dpKp):
    _DP["K"], _DP["K'"] = dpK, dpKp


def test_gap_splitting(V, a_field, dpK):
    g0 = bulk_gap_splitting(V, a_field, dpK, 0.0)
    assert g0.E_minus == pytest.approx(dpK.E_D, abs=1e-9) and g0.E_plus == pytest.approx(dpK.E_D, abs=1e-9)
    errs = []
    for d in (0.1, 0.05):
        g = bulk_gap_splitting(V, a_field, dpK, d)
        errs.append(max(abs(g.E_minus - g.pred_minus), abs(g.E_plus - g.pred_plus)))
    assert 3 <= errs[0] / errs[1] <= 5


def test_conjugation_preserving_perturbation_keeps_degeneracy(V, dpK):
    # a real honeycomb-symmetric potential perturbation preserves C, so no first-order splitting
    W = synth_honeycomb_potential("gaussian_wells", -1.0, width=0.3)
    b = dpK.basis
    H = assemble_bloch_hamiltonian(B.K, V, None, b) + 0.05 * convolution_matrix(W, b)
    e = solve_bloch(H, B.K, 3, vectors=False).energies
    assert abs(e[1] - e[0]) < 1e-9


def test_dispersion_slice_properties(V, dpK):
    f0 = build_edge_frame(B, 0)
    lam = np.linspace(-np.pi, np.pi, 9)
    t1 = dispersion_slice(V, f0, lam, 4)
    t2 = dispersion_slice(V, f0, lam + 2 * np.pi, 4)
    assert np.allclose(t1.energies, t2.energies, atol=1e-9)
    assert np.allclose(t1.energies[4, :2], dpK.E_D, atol=1e-9)


def test_dispersion_slice_meets_dirac_energy_near_wrapped_indices(V, dpK):
    f = build_edge_frame(B, math.sqrt(2))
    eps = 0.05
    Ls = enumerate_L_eps(f, eps, 200)
    assert len(Ls) > 2
    lam = [w.lambda_I for w in Ls]
    t = dispersion_slice(V, f, lam, 2)
    for w, e in zip(Ls, t.energies):
        bound = abs(dpK.upsilon) * abs(w.gamma_I) * np.linalg.norm(B.k1) * 1.05 + 1e-9
        assert np.all(np.abs(e - dpK.E_D) <= bound)


def test_nofold_small_grid(V, dpK):
    rep = nofold_scan(V, dpK, 60, 0.3, workers=1)
    assert rep.passed and rep.min_gap > 0
    assert rep.C1 > 0 and rep.annulus_slope > 0


def test_dirac_cache_round_trip(V, dpK, tmp_path):
    d = dirac_point_to_dict(dpK)
    dp2 = dirac_point_from_dict(d, V)
    assert np.allclose(dp2.Phi1, dpK.Phi1) and dp2.upsilon == dpK.upsilon


def test_dispersion_csv(V, tmp_path):
    t = dispersion_slice(V, build_edge_frame(B, Fraction(1, 2)), [0.0, 1.0], 3)
    p = tmp_path / "d.csv"
    write_dispersion_csv(t, p)
    rows = list(csv.reader(open(p)))
    assert rows[0] == ["lam", "E_1", "E_2", "E_3"]
    assert float(rows[2][3]) == t.energies[1, 2]
