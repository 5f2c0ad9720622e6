from __future__ import annotations

import csv
import json
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from honeyedge.bloch_solver import compute_theta, detect_dirac_point, synth_honeycomb_potential
from honeyedge.cylinder_solver import (
    BranchMatchingAmbiguous,
    IncommensurateInput,
    assemble_cylinder,
    compare_to_effective,
    cylinder_geometry,
    edge_spectrum,
    fiber_bloch_union,
    kpar_periodicity_check,
    periodic_wall_coefficients,
    periodic_wall_values,
    write_comparison_csv,
    write_comparison_json,
)
from honeyedge.effective_dirac import TANH
from honeyedge.lattice_frame import build_edge_frame, build_lattice_basis


@pytest.fixture(scope="module")
def env():
    B = build_lattice_basis()
    V = synth_honeycomb_potential("trig", 10.0)
    a = synth_honeycomb_potential("trig", 1.0)
    dps = {t: detect_dirac_point(V, t, 2, conical_fit=False) for t in ("K", "K'")}
    theta = compute_theta(a, dps["K"])[0]
    return dict(B=B, V=V, a=a, dps=dps, theta=theta, zig=build_edge_frame(B, 0))


def _kpar(frame):
    return float(frame.basis.K @ frame.vhat1)


# ---------------------------------------------------------------------------
# geometry and wall profile
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("r", [0, 1, Fraction(1, 2), Fraction(-2, 3), Fraction(5, 7)])
def test_geometry_is_primitive_and_dual(env, r):
    geo = cylinder_geometry(build_edge_frame(env["B"], r))
    W = np.stack([geo.w1, geo.w2])
    Kd = np.stack([geo.kappa1, geo.kappa2])
    assert np.allclose(Kd @ W.T, np.eye(2), atol=1e-13)
    assert abs(abs(np.linalg.det(W)) - 1.0) < 1e-13
    fr = build_edge_frame(env["B"], r)
    assert np.allclose(geo.kappa2, geo.a1 * fr.khat2, atol=1e-13)
    for p in [(1, 0), (0, 1), (2, -3)]:
        assert geo.to_lattice_coords(*geo.from_lattice_coords(*p)) == p


def test_periodic_wall_profile(env):
    delta, N_t, a1, s = 0.2, 50, 1, 0.3
    c = periodic_wall_coefficients(TANH, delta, s, N_t, a1, 1024)
    t2 = np.linspace(0, N_t, 37, endpoint=False)
    j = np.fft.fftfreq(1024, 1 / 1024)
    synth = (c[None, :] * np.exp(2j * np.pi * j[None, :] * t2[:, None] / N_t)).sum(axis=1)
    P = delta * N_t / a1
    direct = periodic_wall_values(TANH, delta * (t2 / a1 + s), P)
    assert np.abs(synth - direct).max() < 1e-10
    z = np.array([0.0, P / 2, P / 4, -P / 4])
    vals = periodic_wall_values(TANH, z, P)
    assert abs(vals[0]) < 1e-12 and abs(vals[1]) < 1e-12
    tail = 2 * (1 - math.tanh(P / 4))
    assert abs(vals[2] - 1) < 1.01 * tail and abs(vals[3] + 1) < 1.01 * tail


# ---------------------------------------------------------------------------
# assembly oracles
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("r", [0, Fraction(1, 2)])
def test_zero_delta_matches_fiber_bands(env, r):
    fr = build_edge_frame(env["B"], r)
    P = assemble_cylinder(fr, _kpar(fr) + 0.17, 0.0, 0.0, 12, 2, env["V"], env["a"])
    e = np.linalg.eigvalsh(P.H)
    lo, hi = e[0] - 1.0, 0.5 * (e[80] + e[81])
    ref = fiber_bloch_union(P, env["V"], lo, hi)
    assert len(ref) == 81
    assert np.abs(e[:81] - ref).max() < 1e-6


def test_uniform_kappa_matches_perturbed_fiber(env):
    fr = env["zig"]
    delta = 0.1
    P = assemble_cylinder(fr, _kpar(fr) + 0.05, delta, 0.0, 10, 2, env["V"], env["a"], uniform_kappa=1.0)
    e = np.linalg.eigvalsh(P.H)
    lo, hi = e[0] - 1.0, 0.5 * (e[60] + e[61])
    ref = fiber_bloch_union(P, env["V"], lo, hi, perturbation=(delta, env["a"]))
    assert np.abs(e[:61] - ref).max() < 1e-9
    es = edge_spectrum(P, (env["dps"]["K"].E_D - 0.5 * delta * abs(env["theta"]),
                           env["dps"]["K"].E_D + 0.5 * delta * abs(env["theta"])))
    assert es.localized() == []


def test_integer_fiber_shift_is_a_translation(env):
    fr = env["zig"]
    kw = dict(N_t=60, cutoff=2, V=env["V"], a=env["a"])
    e0 = np.linalg.eigvalsh(assemble_cylinder(fr, _kpar(fr) + 0.02, 0.2, s_shift=0.0, **kw).H)
    e1 = np.linalg.eigvalsh(assemble_cylinder(fr, _kpar(fr) + 0.02, 0.2, s_shift=1.0, **kw).H)
    assert np.abs(e0 - e1).max() < 1e-9


@settings(max_examples=15, deadline=None)
@given(k=st.floats(-4, 4), s=st.floats(-2, 2), delta=st.floats(0.05, 0.5))
def test_assembled_matrix_is_hermitian(k, s, delta):
    B = build_lattice_basis()
    V = synth_honeycomb_potential("trig", 10.0)
    a = synth_honeycomb_potential("trig", 1.0)
    P = assemble_cylinder(build_edge_frame(B, Fraction(1, 2)), k, delta, s, 8, 1, V, a)
    assert P.hermiticity_residual() < 1e-12
    assert np.all(np.isfinite(np.linalg.eigvalsh(P.H)))


def test_irrational_edge_refused(env):
    fr = build_edge_frame(env["B"], math.sqrt(2))
    with pytest.raises(IncommensurateInput, match="rational approximant"):
        assemble_cylinder(fr, 0.0, 0.1, 0.0, 10, 1, env["V"], env["a"])
    with pytest.raises(IncommensurateInput):
        kpar_periodicity_check(fr, 0.1, 0.0, (9.0, 9.5), 10, 1, env["V"], env["a"])
    with pytest.raises(IncommensurateInput):
        compare_to_effective(fr, [0.1], 0.3, env["dps"], env["a"], 2)


# ---------------------------------------------------------------------------
# edge spectrum
# ---------------------------------------------------------------------------


def test_zigzag_gap_state_at_vertex_momentum(env):
    fr = env["zig"]
    delta = 0.1
    E_D = env["dps"]["K"].E_D
    gap = delta * abs(env["theta"])
    P = assemble_cylinder(fr, _kpar(fr), delta, 0.0, 100, 2, env["V"], env["a"])
    es = edge_spectrum(P, (E_D - 0.9 * gap, E_D + 0.9 * gap))
    loc = es.localized()
    assert len(loc) >= 1
    assert {s.side for s in loc} == {"wall", "antiwall"}
    for s in loc:
        assert s.participation < 0.3 * P.N_t
        assert s.far_mass < 1e-2
        assert abs(s.valley_K - 1) < 1e-8
    wall_state = es.localized("wall")[0]
    assert abs(wall_state.center_zeta) < 0.2
    pairs = es.as_pairs()
    assert len(pairs) == len(es.states) and all(ell > 0 for _, ell in pairs)


def test_empty_window(env):
    fr = env["zig"]
    P = assemble_cylinder(fr, _kpar(fr), 0.1, 0.0, 20, 2, env["V"], env["a"])
    emin = float(np.linalg.eigvalsh(P.H)[0])
    es = edge_spectrum(P, (emin - 10.0, emin - 5.0))
    assert es.states == [] and es.vectors.shape[1] == 0
    with pytest.raises(ValueError):
        edge_spectrum(P, (1.0, 0.0))


def test_transverse_doubling_converged(env):
    # cutoff 3: at cutoff 2 the disk boundary alone moves eigenvalues by ~1e-6 between N_t values
    B, V, a = env["B"], env["V"], env["a"]
    fr = env["zig"]
    dp3 = detect_dirac_point(V, "K", 3, conical_fit=False)
    delta = 0.4
    win = (dp3.E_D - 0.6 * delta * abs(env["theta"]), dp3.E_D + 0.6 * delta * abs(env["theta"]))
    res = []
    for N_t in (50, 100):
        P = assemble_cylinder(fr, _kpar(fr) + delta * 0.3, delta, 0.0, N_t, 3, V, a)
        res.append(edge_spectrum(P, win))
    e0 = np.array([s.energy for s in res[0].localized()])
    e1 = np.array([s.energy for s in res[1].localized()])
    assert len(e0) == len(e1) >= 2
    assert np.abs(e0 - e1).max() < 1e-6
    p0 = np.array([s.participation for s in res[0].localized()])
    p1 = np.array([s.participation for s in res[1].localized()])
    assert np.abs(p0 - p1).max() < 1e-6
    assert np.all(p1 < 0.3 * 50)


def test_armchair_valleys_separate(env):
    fr = build_edge_frame(env["B"], 1)
    delta = 0.1
    E_D = env["dps"]["K"].E_D
    gap = delta * abs(env["theta"])
    P = assemble_cylinder(fr, _kpar(fr) + delta * 0.3, delta, 0.0, 100, 2, env["V"], env["a"])
    loc = edge_spectrum(P, (E_D - 0.9 * gap, E_D + 0.9 * gap)).localized("wall")
    labels = sorted(round(s.valley_K) for s in loc)
    assert labels == [0, 1]
    assert all(min(s.valley_K, 1 - s.valley_K) < 1e-6 for s in loc)


# ---------------------------------------------------------------------------
# k_par periodicity
# ---------------------------------------------------------------------------


def test_kpar_full_period_zigzag(env):
    fr = env["zig"]
    E_D = env["dps"]["K"].E_D
    rep = kpar_periodicity_check(fr, 0.2, _kpar(fr) + 0.05, (E_D - 1.0, E_D + 1.0), 50, 2, env["V"], env["a"])
    assert rep.same_count and len(rep.energies) > 0
    assert abs(rep.shift - 2 * math.pi) < 1e-15
    assert rep.max_difference < 1e-9


def test_kpar_period_half_slope(env):
    fr = build_edge_frame(env["B"], Fraction(1, 2))
    E_D = env["dps"]["K"].E_D
    rep = kpar_periodicity_check(fr, 0.2, _kpar(fr) + 0.05, (E_D - 1.0, E_D + 1.0), 50, 2, env["V"], env["a"])
    assert abs(rep.shift - math.pi) < 1e-15
    assert rep.same_count and len(rep.energies) > 0
    assert rep.max_difference < 1e-6


# ---------------------------------------------------------------------------
# comparison with the effective prediction
# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def zig_table(env):
    return compare_to_effective(env["zig"], [0.1, 0.05], 0.3, env["dps"], env["a"], 2, theta=env["theta"])


def test_zigzag_first_order_prediction(zig_table):
    rows = zig_table.rows_for("K", 0)
    assert [r.delta for r in rows] == [0.1, 0.05]
    assert rows[0].scaled_error <= 0.1
    assert rows[0].error / rows[1].error > 1.5
    assert zig_table.fitted_order[("K", 0)] > 1.3
    assert zig_table.branches_seen == {"K"}


def test_opposite_slope_sign_does_not_converge(zig_table):
    # the opposite sign of the protected-branch slope leaves an O(delta) error
    rows = zig_table.rows_for("K", 0)
    alt = [abs(r.numerical - r.alt_predicted) for r in rows]
    assert all(a > 3 * r.error for a, r in zip(alt, rows))
    assert math.log(alt[0] / alt[1]) / math.log(2) < 1.2


def test_armchair_both_branches(env):
    fr = build_edge_frame(env["B"], 1)
    tab = compare_to_effective(fr, [0.1], 0.3, env["dps"], env["a"], 2, theta=env["theta"])
    assert tab.branches_seen == {"K", "K'"}
    for tag in ("K", "K'"):
        (row,) = tab.rows_for(tag, 0)
        assert row.scaled_error <= 0.1


def test_ambiguous_branches_raise(env):
    with pytest.raises(BranchMatchingAmbiguous):
        compare_to_effective(env["zig"], [0.1], 0.3, env["dps"], env["a"], 2, branches=(-1, 0, 1),
                             disc_tol=1.0, theta=env["theta"])


def test_comparison_export(zig_table, tmp_path):
    write_comparison_csv(zig_table, tmp_path / "t.csv")
    write_comparison_json(zig_table, tmp_path / "t.json")
    with open(tmp_path / "t.csv", newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 2 and rows[0]["Kstar"] == "K"
    assert float(rows[0]["numerical"]) == zig_table.rows_for("K", 0)[0].numerical
    doc = json.loads((tmp_path / "t.json").read_text())
    assert doc["branches_seen"] == ["K"] and "K:0" in doc["fitted_order"]
