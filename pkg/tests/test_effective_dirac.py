from __future__ import annotations

import math
import warnings

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from honeyedge.bloch_solver import (
    compute_theta,
    detect_dirac_point,
    synth_honeycomb_potential,
)
from honeyedge.effective_dirac import (
    InsufficientWindow,
    ResolutionWarning,
    SpectrumCache,
    closed_form_spectrum,
    derivative_matrix,
    dirac_matrices,
    dirac_spec,
    eigenfunction_mu_invariance_check,
    make_wall,
    sample_block_spectrum,
    solve_dirac_1d,
    solve_dirac_direct,
    unitary_equivalence_constants,
    write_block_spectrum_csv,
    zero_branch_slope,
    zeta_grid,
)
from honeyedge.lattice_frame import build_edge_frame, build_lattice_basis


@pytest.fixture(scope="module")
def setup():
    B = build_lattice_basis()
    V = synth_honeycomb_potential("trig", 10.0)
    a = synth_honeycomb_potential("trig", 1.0)
    dpK = detect_dirac_point(V, "K", 6, conical_fit=False)
    dpKp = detect_dirac_point(V, "K'", 6, conical_fit=False)
    theta = compute_theta(a, dpK)[0]
    return dict(B=B, dpK=dpK, dpKp=dpKp, theta=theta, zig=build_edge_frame(B, 0))


@pytest.fixture(scope="module")
def base(setup):
    spec = dirac_spec(setup["dpK"], setup["zig"], setup["theta"])
    return spec, solve_dirac_1d(spec, N_grid=512)


# -- closed forms ----------------------------------------------------------


def test_closed_form_at_zero_returns_base():
    sp = closed_form_spectrum([-0.4, 0.0, 0.4], 0.0, 1.0, 0.5, 1.0)
    assert np.allclose(sp.eigenvalues, [-0.4, 0.0, 0.4])
    assert sp.theta_gap == pytest.approx(0.5)


def test_closed_form_gap_arithmetic():
    sp = closed_form_spectrum([0.0], 1.2, 1.0, 0.5, 1.0)
    assert sp.theta_gap == pytest.approx(1.3, abs=1e-14)


def test_closed_form_pythagorean_pair():
    sp = closed_form_spectrum([-0.4, 0.0, 0.4], 0.3, 1.0, 0.5, 1.0)
    assert sp.eigenvalues[0] == pytest.approx(-0.5, abs=1e-14)
    assert sp.eigenvalues[2] == pytest.approx(0.5, abs=1e-14)


def test_closed_form_rejects_even_count():
    with pytest.raises(ValueError):
        closed_form_spectrum([-0.1, 0.1], 0.0, 1.0, 0.5, 1.0)


# -- unitary equivalence ---------------------------------------------------


def test_zigzag_constant(setup):
    Kc, omega = unitary_equivalence_constants(setup["zig"].khat1, setup["zig"].khat2)
    assert Kc == pytest.approx(-0.5, abs=1e-14)
    assert abs(omega) == pytest.approx(1.0, abs=1e-14)


@pytest.mark.parametrize("r", [0, 1, 2, math.sqrt(2)])
def test_omega_unit_and_alignment(setup, r):
    fr = build_edge_frame(setup["B"], r)
    _, omega = unitary_equivalence_constants(fr.khat1, fr.khat2)
    z2 = complex(*fr.khat2)
    assert abs(abs(omega) - 1) < 1e-14
    assert abs(omega**2 * z2 - abs(z2)) < 1e-12


@pytest.mark.parametrize("tag", ["K", "K'"])
@pytest.mark.parametrize("r", [0, math.sqrt(2)])
def test_matrix_level_equivalence(setup, tag, r):
    dp = setup["dpK"] if tag == "K" else setup["dpKp"]
    spec = dirac_spec(dp, build_edge_frame(setup["B"], r), setup["theta"], 0.37)
    D, D0, Nm = dirac_matrices(spec, 25.0, 128)
    assert np.max(np.abs(Nm @ D @ Nm.conj().T - D0)) < 1e-8
    assert np.allclose(D, D.conj().T, atol=1e-12)


@pytest.mark.parametrize("method", ["fourier", "fd4"])
def test_derivative_matrix_is_real_antisymmetric_and_accurate(method):
    L, N = 10.0, 256
    Dm = derivative_matrix(L, N, method)
    assert np.allclose(Dm, -Dm.T)
    z = zeta_grid(L, N)
    f = np.exp(-(z**2))
    err = np.max(np.abs(Dm @ f + 2 * z * f))
    assert err < (1e-10 if method == "fourier" else 1e-3)


# -- 1D solver -------------------------------------------------------------


def test_zero_eigenvalue_and_symmetry(base):
    _, sp = base
    assert len(sp.eigenvalues) % 2 == 1
    assert abs(sp.z0) < 1e-8
    assert np.allclose(sp.eigenvalues, -sp.eigenvalues[::-1], atol=1e-8)
    assert np.all(np.abs(sp.eigenvalues) < sp.theta_gap)


def test_bound_state_count_matches_tanh_formula(base):
    # for kappa = tanh the bound states of D0(0) are z_n^2 = c^2 (2 p n - n^2), n < p
    spec, sp = base
    c = abs(spec.v) * spec.khat2_norm
    p = spec.decay_rate
    pos = [c * math.sqrt(2 * p * n - n * n) for n in range(1, math.ceil(p))]
    assert sp.N == len(pos)
    assert np.allclose(sp.eigenvalues[sp.N + 1:], pos, atol=1e-8)


def test_zero_mode_matches_ode_oracle(base):
    spec, sp = base
    z = sp.zeta
    h = z[1] - z[0]
    c = spec.v * spec.khat2_norm
    # oracle: integrate f' = -(theta/c) s kappa f with s = sign(theta / v) from zeta = 0
    s = math.copysign(1.0, spec.theta / spec.v)
    rate = spec.theta * s / c
    sol = solve_ivp(lambda t, y: -rate * np.tanh(t) * y, (0, z[-1]), [1.0], t_eval=z[z >= 0],
                    rtol=1e-12, atol=1e-300)
    solm = solve_ivp(lambda t, y: -rate * np.tanh(t) * y, (0, z[0]), [1.0],
                     t_eval=z[z < 0][::-1], rtol=1e-12, atol=1e-300)
    f = np.concatenate([solm.y[0][::-1], sol.y[0]])
    ref = np.stack([f, 1j * s * f], axis=-1)
    ref /= np.sqrt(np.sum(np.abs(ref) ** 2) * h)
    got = sp.eigenfunctions_d0[sp.N]
    ph = np.sum(ref.conj() * got) * h
    err = math.sqrt(np.sum(np.abs(got - ph / abs(ph) * ref) ** 2) * h)
    assert err < 1e-6


def test_closed_form_consistency_over_mu(base):
    spec, sp = base
    mus = np.linspace(-1, 1, 20)
    for mu in mus:
        num = solve_dirac_1d(spec.with_mu(mu), N_grid=512, check_resolution=False)
        cf = closed_form_spectrum(sp.eigenvalues, mu, spec.v, spec.theta, spec.khat2_norm)
        assert len(num.eigenvalues) == len(cf.eigenvalues)
        assert np.max(np.abs(num.eigenvalues - cf.eigenvalues)) < 1e-6
        assert num.theta_gap == pytest.approx(cf.theta_gap, abs=1e-12)


def test_zero_branch_slope_fit(base):
    spec, _ = base
    mus = np.linspace(-0.2, 0.2, 5)
    z0 = [solve_dirac_1d(spec.with_mu(m), N_grid=512, check_resolution=False).z0 for m in mus]
    slope = np.polyfit(mus, z0, 1)[0]
    expect = zero_branch_slope(spec.v, spec.theta, spec.khat2_norm)
    assert abs(slope - expect) < 0.01 * abs(expect)


def test_direct_route_agrees(base):
    spec, _ = base
    for mu in (0.0, 0.45):
        s = spec.with_mu(mu)
        a = solve_dirac_1d(s, N_grid=256, check_resolution=False).eigenvalues
        b = solve_dirac_direct(s, N_grid=256)
        assert np.allclose(a, b, atol=1e-8)


def test_kprime_branch_matches_closed_form(setup):
    spec = dirac_spec(setup["dpKp"], setup["zig"], setup["theta"])
    base_z = solve_dirac_1d(spec, N_grid=256, check_resolution=False).eigenvalues
    num = solve_dirac_1d(spec.with_mu(0.3), N_grid=256, check_resolution=False)
    cf = closed_form_spectrum(base_z, 0.3, spec.v, spec.theta, spec.khat2_norm)
    assert np.allclose(num.eigenvalues, cf.eigenvalues, atol=1e-6)


@pytest.mark.parametrize("bump", [(0.8, 0.5, 1.0), (3.0, -1.0, 0.7), (-1.5, 2.0, 1.5)])
def test_wall_robustness(base, bump):
    spec, _ = base
    w = make_wall("tanh", 1.0, *bump)
    spec_b = type(spec)(spec.Kstar, 0.0, spec.v, spec.theta, spec.khat1, spec.khat2, w)
    zs = []
    for mu in (-0.5, 0.5):
        sp = solve_dirac_1d(spec_b.with_mu(mu), N_grid=512, check_resolution=False)
        assert len(sp.eigenvalues) % 2 == 1
        zs.append(sp.z0)
    assert zs[0] * zs[1] < 0


@pytest.mark.parametrize("kind", ["erf", "algebraic"])
def test_other_walls_odd_count(base, kind):
    spec, _ = base
    L = 60.0 if kind == "erf" else None
    w = make_wall(kind, 1.0)
    spec_w = type(spec)(spec.Kstar, 0.2, spec.v, spec.theta, spec.khat1, spec.khat2, w)
    if kind == "algebraic":
        with pytest.raises(InsufficientWindow):
            solve_dirac_1d(spec_w, N_grid=256)
        return
    sp = solve_dirac_1d(spec_w, L=L, N_grid=1024, check_resolution=False)
    assert len(sp.eigenvalues) % 2 == 1


def test_fd4_option(base):
    spec, sp = base
    alt = solve_dirac_1d(spec, N_grid=1024, method="fd4", check_resolution=False)
    assert abs(alt.z0) < 1e-8
    assert np.allclose(alt.eigenvalues, sp.eigenvalues, atol=1e-3)


def test_wall_derivative_matches_difference():
    for kind in ("tanh", "erf", "algebraic"):
        w = make_wall(kind, 1.7, bump=0.4, bump_center=0.3, bump_width=0.8)
        z = np.linspace(-3, 3, 41)
        h = 1e-5
        assert np.allclose(w.derivative(z), (w(z + h) - w(z - h)) / (2 * h), atol=1e-8)


def test_insufficient_window(base):
    spec, _ = base
    with pytest.raises(InsufficientWindow):
        solve_dirac_1d(spec, L=5.0, N_grid=128)


def test_resolution_warning(base):
    spec, _ = base
    with pytest.warns(ResolutionWarning):
        solve_dirac_1d(spec, L=30.0, N_grid=64)


def test_odd_grid_rejected(base):
    spec, _ = base
    with pytest.raises(ValueError):
        solve_dirac_1d(spec, N_grid=255)


def test_eigenfunctions_solve_the_twisted_operator(base):
    spec, _ = base
    s = spec.with_mu(0.4)
    sp = solve_dirac_1d(s, N_grid=256, check_resolution=False)
    D, _, _ = dirac_matrices(s, spec.default_window(), 256)
    h = sp.zeta[1] - sp.zeta[0]
    for k, z in enumerate(sp.eigenvalues):
        vec = np.concatenate([sp.eigenfunctions[k][:, 0], sp.eigenfunctions[k][:, 1]])
        assert np.sum(np.abs(vec) ** 2) * h == pytest.approx(1.0, abs=1e-12)
        assert np.max(np.abs(D @ vec - z * vec)) < 1e-8


# -- mu-invariance ---------------------------------------------------------


def test_invariance_zero_mode_and_pairs(base):
    spec, _ = base
    rep = eigenfunction_mu_invariance_check([spec, spec.with_mu(0.2)], N_grid=512)
    assert rep.comparable
    assert rep.zero_mode_overlap > 1 - 1e-6
    for v in rep.pair_subspace_overlaps.values():
        assert v > 1 - 1e-6


def test_invariance_identical_operator(base):
    spec, _ = base
    rep = eigenfunction_mu_invariance_check([spec, spec], N_grid=256)
    assert all(v == pytest.approx(1.0, abs=1e-12) for v in rep.branch_overlaps.values())


def test_invariance_flags_different_walls(base):
    spec, _ = base
    other = type(spec)(spec.Kstar, 0.0, spec.v, spec.theta, spec.khat1, spec.khat2, make_wall("tanh", 2.0))
    rep = eigenfunction_mu_invariance_check([spec, other], N_grid=256)
    assert not rep.comparable and rep.reason


# -- block spectrum --------------------------------------------------------


def test_block_spectrum_rational_finite(setup, base):
    _, sp = base
    dps = {"K": setup["dpK"], "K'": setup["dpKp"]}
    samp = sample_block_spectrum(0.3, 0.1, 50, dps, setup["zig"], sp.eigenvalues, setup["theta"])
    assert len(samp.distinct_in_gap(1e-9)) <= 2 * len(sp.eigenvalues)
    assert len(samp.in_gap_values()) >= 50
    for e in samp.entries:
        assert np.all(np.abs(e.z) < e.theta_gap_shifted)
        if e.index.Kstar == "K" and e.index.m == 0:
            assert e.mu_shifted == 0.3


def test_block_spectrum_irrational_dense(setup, base):
    _, sp = base
    dps = {"K": setup["dpK"], "K'": setup["dpKp"]}
    fr = build_edge_frame(setup["B"], math.sqrt(2))
    spacing = []
    for m_max in (50, 500):
        samp = sample_block_spectrum(0.0, 0.1, m_max, dps, fr, sp.eigenvalues, setup["theta"])
        spacing.append(samp.max_in_gap_spacing())
    assert spacing[1] <= spacing[0]
    assert spacing[1] < 0.05 * abs(setup["theta"])


def test_block_spectrum_rejects_bad_delta(setup, base):
    with pytest.raises(ValueError):
        sample_block_spectrum(0.0, 0.0, 5, {"K": 1.0, "K'": -1.0}, setup["zig"], [0.0], 1.0)


def test_block_csv(tmp_path, setup, base):
    _, sp = base
    samp = sample_block_spectrum(0.0, 0.1, 3, {"K": setup["dpK"], "K'": setup["dpKp"]}, setup["zig"],
                                 sp.eigenvalues, setup["theta"])
    p = tmp_path / "b.csv"
    write_block_spectrum_csv(samp, p)
    lines = p.read_text().splitlines()
    assert lines[0] == "Kstar,m,gamma_I,mu_hat_I,j,z,in_gap"
    assert len(lines) == 1 + sum(len(e.z) for e in samp.entries)


def test_cache_reuses_result(base):
    spec, _ = base
    cache = SpectrumCache()
    a = cache.get_or_solve(spec, N_grid=256, check_resolution=False)
    b = cache.get_or_solve(spec, N_grid=256, check_resolution=False)
    assert a is b and len(cache) == 1
    cache.get_or_solve(spec.with_mu(0.1), N_grid=256, check_resolution=False)
    assert len(cache) == 2


def test_cache_concurrent_access(base):
    from concurrent.futures import ThreadPoolExecutor

    spec, _ = base
    cache = SpectrumCache()
    with ThreadPoolExecutor(4) as ex:
        res = list(ex.map(lambda _: cache.get_or_solve(spec, N_grid=128, check_resolution=False), range(6)))
    assert len(cache) == 1
    assert all(np.allclose(r.eigenvalues, res[0].eigenvalues) for r in res)
