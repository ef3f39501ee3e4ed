import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gaugelab.bundle_calculus import (
    TransportMatrix,
    connection_preset,
    edge_links,
    gauge_pullback,
    interpolate,
    parallel_transport,
    random_unitary_gauge,
    zero_connection,
)
from gaugelab.elliptic_solver import assemble, dn_discrepancy, dn_matrix, solve_dirichlet
from gaugelab.geometry import build_grid, metric_preset, region_all, region_where, trace_curve
from gaugelab.reconstruction import (
    HarmonicGauge,
    JetMismatchError,
    PreconditionError,
    ReconstructionError,
    ReconstructionReport,
    Scene,
    ThickZeroSetError,
    compose_transports,
    extend_quotient,
    extend_scene,
    gauge_quotient,
    harmonic_gauge,
    modulus_components,
    pulled_back_connection,
    recover_holonomy,
    runge_basis,
    runge_fit,
    window_data,
    zero_set_scan,
)


def gauge_pair(n, m, seed, conn="random-smooth:1,0.5", amplitude=2.0):
    g = build_grid("rectangle", n, n)
    met = metric_preset(g, "flat")
    A = connection_preset(g, m, conn)
    H = random_unitary_gauge(g, m, seed, amplitude)
    return g, met, A, H, gauge_pullback(g, H, A)


def quotient(g, met, A, B, data):
    F = harmonic_gauge(assemble(g, met, A), data)
    G = harmonic_gauge(assemble(g, met, B), data)
    return F, G, gauge_quotient(g, F, G, conn_a=A, conn_b=B)


# -- harmonic gauges and quotients


@settings(max_examples=4, deadline=None)
@given(st.integers(0, 1000), st.sampled_from([1, 2]))
def test_quotient_recovers_gauge(seed, m):
    g, met, A, H, B = gauge_pair(24, m, seed)
    data, V = window_data(g, region_all(g), m)
    _, _, q = quotient(g, met, A, B, data)
    assert q.mask.all()
    assert np.abs(q.h - H.F).max() <= 1e-10
    assert q.unit_modulus_deviation <= 1e-10
    assert q.link_certificate <= 1e-9


def test_quotient_on_partial_region():
    g, met, A, H, B = gauge_pair(24, 2, 4)
    gamma = region_where(g, lambda x1, x2: x2 < 1e-12)
    data, V = window_data(g, gamma, 2, ramp_cells=3)
    assert 0 < V.sum() < gamma.size()
    assert np.all(data[~gamma.mask] == 0)
    _, _, q = quotient(g, met, A, B, data)
    ok = q.mask
    assert np.abs(q.h[ok] - H.F[ok]).max() <= 1e-8


def test_window_data_profile():
    g = build_grid("rectangle", 16, 16)
    gamma = region_where(g, lambda x1, x2: x2 < 1e-12)
    data, V = window_data(g, gamma, 1, ramp_cells=4)
    w = data[:, 0, 0].real
    assert w.max() == 1.0 and w.min() == 0.0
    assert np.all(w[V] == 1.0)
    assert np.all((w[gamma.mask] > 0) | ~V[gamma.mask])


def test_quotient_rejects_different_data():
    g, met, A, H, B = gauge_pair(12, 1, 0)
    data, _ = window_data(g, region_all(g), 1)
    F = harmonic_gauge(assemble(g, met, A), data)
    G = harmonic_gauge(assemble(g, met, B), 2 * data)
    with pytest.raises(ReconstructionError, match="different boundary data"):
        gauge_quotient(g, F, G)


def test_pulled_back_connection_certificate():
    g, met, A, H, B = gauge_pair(32, 1, 2, conn="zero")
    data, _ = window_data(g, region_all(g), 1)
    F = harmonic_gauge(assemble(g, met, A), data)
    Ap, cert = pulled_back_connection(g, met, F, A)
    assert cert <= 2.0
    assert Ap.A.shape == A.A.shape
    with pytest.raises(ReconstructionError):
        pulled_back_connection(g, met, F, A, mask=np.zeros(g.shape, bool))


# -- zero sets


def test_zero_set_line_codim_one():
    g = build_grid("rectangle", 33, 33)
    X1, X2 = g.coords()
    zs = zero_set_scan(g, X1 - 0.5 + 0j, tau=1e-9)
    assert len(zs.flagged) == 33
    assert set(zs.codim_labels()) == {"1"}
    assert zs.stats()["codim1"] == 33


def test_zero_set_point_codim_two():
    g = build_grid("rectangle", 33, 33)
    X1, X2 = g.coords()
    zs = zero_set_scan(g, (X1 - 0.5) + 1j * (X2 - 0.5), tau=1e-9)
    assert zs.flagged.tolist() == [g.node_index(16, 16)]
    assert zs.codim.tolist() == [2]
    assert zs.fraction == pytest.approx(1 / 33 ** 2)


def test_zero_line_filled_exactly():
    # boundary data x1 - 0.5 vanishes on a column; the transported fill recovers H there
    g = build_grid("rectangle", 65, 65)
    met = metric_preset(g, "flat")
    A = zero_connection(g, 1)
    H = random_unitary_gauge(g, 1, 3, 2.0)
    B = gauge_pullback(g, H, A)
    data = (g.boundary_coords()[:, 0] - 0.5).astype(complex)
    _, G, q = quotient(g, met, A, B, data)
    zs = zero_set_scan(g, G.det())
    assert len(zs.flagged) == 65 and zs.stats()["codim1"] == 65
    h, link = extend_quotient(g, q, zs, A, B)
    assert np.abs(h - H.F).max() <= 1e-10
    assert link <= 1e-9


def test_thick_zero_set_refused():
    g, met, A, H, B = gauge_pair(16, 1, 0, conn="zero")
    data, _ = window_data(g, region_all(g), 1)
    _, _, q = quotient(g, met, A, B, data)
    q.mask[5:9, 5:9] = False
    with pytest.raises(ThickZeroSetError, match="thick"):
        extend_quotient(g, q, None, A, B)


def test_modulus_components():
    g = build_grid("rectangle", 8, 8)
    mask = np.zeros(g.shape, bool)
    mask[:, :3] = True
    mask[:, 5:] = True
    vals = np.where(np.arange(8)[None, :] < 4, 1.0, 2.0) * np.ones(g.shape)
    comps = modulus_components(g, vals, mask)
    assert sorted((c["size"], c["mean"]) for c in comps) == [(24, 1.0), (24, 2.0)]


# -- Runge frames


def test_runge_basis_nested_and_supported():
    g = build_grid("rectangle", 16, 16)
    gamma = region_where(g, lambda x1, x2: x1 < 1e-12)
    b8, b4 = runge_basis(g, gamma, 2, 8), runge_basis(g, gamma, 2, 4)
    assert np.array_equal(b8[:4], b4)
    assert np.all(b8[:, ~gamma.mask] == 0)
    with pytest.raises(ValueError, match="exceeds"):
        runge_basis(g, gamma, 2, 2 * gamma.size() + 1)


def test_runge_annulus_fourier_modes():
    g = build_grid("annulus", 8, 16)
    inner = region_where(g, lambda x1, x2: x1 < 1e-12)
    b = runge_basis(g, inner, 1, 3)
    assert np.allclose(b[0, inner.mask, 0], 1.0)
    assert np.allclose(b[1, inner.mask, 0] @ b[2, inner.mask, 0], 0, atol=1e-12)


def test_runge_residual_decreases():
    g = build_grid("rectangle", 32, 32)
    op = assemble(g, metric_preset(g, "flat"), connection_preset(g, 2, "random-smooth:2,0.5"))
    gamma = region_where(g, lambda x1, x2: x1 < 1e-12)
    curve = trace_curve(g, [(0.3, 0.3), (0.3, 0.7)])
    res = [runge_fit(op, curve, np.eye(2), gamma, 1e-8, N).residual for N in (4, 8, 16)]
    assert res[0] > res[1] > res[2]
    fr = runge_fit(op, curve, np.eye(2), gamma, 1e-8, 16)
    assert np.all(fr.data[~gamma.mask] == 0)
    assert fr.min_singular_value > 0.1


# -- scene extension and holonomy


def annulus_pair(n=24, alpha=0.25):
    g = build_grid("annulus", n, n)
    met = metric_preset(g, "flat")
    A = connection_preset(g, 1, f"flat-annulus:{alpha}")
    H = random_unitary_gauge(g, 1, 1, 2.0, center=(0.5, math.pi), radius=0.3)
    return g, met, A, H, gauge_pullback(g, H, A)


def annulus_loop(g):
    r = ((g.n1 - 1) // 2) * g.h1
    return trace_curve(g, [(1, 0), (r, 0), (r, 2 * math.pi), (1, 2 * math.pi)])


def test_extend_scene_keeps_gauge_relation():
    g, met, A, H, B = gauge_pair(16, 2, 5)
    anchor = g.node_index(0, 8)
    ea, eb = extend_scene(Scene(g, met, A), Scene(g, met, B), anchor, 4)
    assert ea.grid.shape == (20, 16)
    assert ea.gamma.size() == 16
    da, db = dn_matrix(ea.operator(), ea.gamma), dn_matrix(eb.operator(), eb.gamma)
    assert dn_discrepancy(da, db) <= 1e-10
    # original links survive inside the window
    assert np.allclose(edge_links(ea.grid, ea.conn)[0][4:], edge_links(g, A)[0])


def test_extend_scene_jet_mismatch():
    g = build_grid("rectangle", 12, 12)
    met = metric_preset(g, "flat")
    a = Scene(g, met, connection_preset(g, 1, "constant:0.1,0"))
    b = Scene(g, met, connection_preset(g, 1, "constant:0.2,0"))
    with pytest.raises(JetMismatchError):
        extend_scene(a, b, g.node_index(0, 5), 3)


def test_holonomy_gauge_pair_annulus():
    g, met, A, H, B = annulus_pair()
    rep = recover_holonomy(Scene(g, met, A), Scene(g, met, B), annulus_loop(g))
    assert rep.holonomy_distance <= 1e-10
    assert rep.gauge_error <= 1e-10
    re, im = rep.holonomy_a[0][0]
    # the loop winds once around the annulus: exp(-2 pi i alpha) = -i
    assert abs(complex(re, im) - np.exp(-2j * math.pi * 0.25)) <= 1e-8
    assert rep.to_json()["kind"] == "reconstruction-report"


def test_holonomy_precondition_refuses_distinct_dn():
    g, met, A, _, _ = annulus_pair(alpha=0.25)
    B = connection_preset(g, 1, "flat-annulus:0.3")
    with pytest.raises(PreconditionError, match="DN"):
        recover_holonomy(Scene(g, met, A), Scene(g, met, B), annulus_loop(g))


def test_holonomy_requires_closed_loop():
    g, met, A, H, B = annulus_pair()
    open_curve = trace_curve(g, [(1, 0), (0.5, 0)])
    with pytest.raises(PreconditionError, match="closed"):
        recover_holonomy(Scene(g, met, A), Scene(g, met, B), open_curve)


def test_compose_transports():
    P1 = TransportMatrix(np.array([[0, 1], [1, 0]], dtype=complex), (0.0, 0.0), (1.0, 0.0))
    P2 = TransportMatrix(np.diag([1j, -1j]), (1.0, 0.0), (1.0, 2 * math.pi))
    P = compose_transports([P1, P2])
    assert np.allclose(P.P, P2.P @ P1.P)
    assert P.start == (0.0, 0.0) and P.end == (1.0, 2 * math.pi)
    # x^2 is an angle: ending at 2 pi and restarting at 0 is continuous
    assert np.allclose(compose_transports([P2, P2]).P, P2.P @ P2.P)
    with pytest.raises(ValueError, match="anchor"):
        compose_transports([P1, P1])
    with pytest.raises(ValueError):
        compose_transports([])


def test_report_validation():
    with pytest.raises(ValueError, match="non-negative"):
        ReconstructionReport(gauge_error=-1.0)


def harmonic_scalar(g, data):
    op = assemble(g, metric_preset(g, "flat"), zero_connection(g, 1))
    return harmonic_gauge(op, np.asarray(data, dtype=complex))


def test_equal_connections_give_identity_quotient():
    g = build_grid("rectangle", 24, 24)
    met = metric_preset(g, "flat")
    A = connection_preset(g, 2, "random-smooth:3,0.6")
    F = harmonic_gauge(assemble(g, met, A), window_data(g, region_all(g), 2)[0])
    q = gauge_quotient(g, F, F, conn_a=A, conn_b=A)
    assert q.mask.all()
    assert np.abs(q.h - np.eye(2)).max() <= 1e-12


def test_identity_data_flat_connection():
    g = build_grid("rectangle", 24, 24)
    data = np.broadcast_to(np.eye(2), (g.n_boundary, 2, 2))
    F = harmonic_gauge(assemble(g, metric_preset(g, "flat"), zero_connection(g, 2)), data)
    assert np.abs(F.F - np.eye(2)).max() <= 1e-12


def test_identity_frame_pullback_is_original():
    g = build_grid("rectangle", 24, 24)
    met = metric_preset(g, "flat")
    A = connection_preset(g, 2, "random-smooth:3,0.6")
    data = np.broadcast_to(np.eye(2), (g.n_boundary, 2, 2))
    hg = HarmonicGauge(np.broadcast_to(np.eye(2, dtype=complex), g.shape + (2, 2)).copy(), data, 0.0)
    Ap, cert = pulled_back_connection(g, met, hg, A)
    assert np.abs(Ap.A - A.A).max() <= 1e-14
    # a random connection is far from Coulomb gauge
    assert cert > 1.0


def test_maximum_principle_scalar():
    g = build_grid("rectangle", 33, 33)
    bc = g.boundary_coords()
    f = np.sin(3 * bc[:, 0]) + np.cos(2 * bc[:, 1])
    u = harmonic_scalar(g, f).F[..., 0, 0].real
    assert u.max() <= f.max() + 1e-12 and u.min() >= f.min() - 1e-12


def test_half_edge_data_decays():
    # [DERIVED] frozen at 64^2: far / near = 0.0029416
    g = build_grid("rectangle", 64, 64)
    bc = g.boundary_coords()
    data = np.where((bc[:, 1] < 1e-12) & (bc[:, 0] <= 0.5), 1.0, 0.0)
    u = harmonic_scalar(g, data).F[..., 0, 0]
    ratio = np.abs(u[:, -2]).max() / np.abs(u[:, 1]).max()
    assert ratio == pytest.approx(0.0029416, rel=1e-3)


def test_harmonic_scalar_certificate_second_order():
    # [DERIVED] certificates 1.539e-5 at 129^2 and 4.056e-6 at 257^2
    certs = []
    for n in (129, 257):
        g = build_grid("rectangle", n, n)
        bc = g.boundary_coords()
        F = harmonic_scalar(g, 2 + np.exp(bc[:, 0]) * np.cos(bc[:, 1]))
        certs.append(pulled_back_connection(g, metric_preset(g, "flat"), F, zero_connection(g, 1))[1])
    assert certs[1] == pytest.approx(4.056e-6, rel=1e-2)
    assert math.log2(certs[0] / certs[1]) >= 1.9


def test_quotient_modulus_constant_on_single_component():
    from gaugelab.cli import _quotient_data, build, preset

    scn = preset("gauge-pair-m1:0")
    b = build(scn)
    data, _ = _quotient_data(scn, b)
    F = harmonic_gauge(assemble(b.grid, b.metric, b.A), data)
    G = harmonic_gauge(assemble(b.grid, b.metric, b.B), data)
    q = gauge_quotient(b.grid, F, G, conn_a=b.A, conn_b=b.B)
    comps = modulus_components(b.grid, np.abs(q.h[..., 0, 0]), q.mask)
    assert len(comps) == 1
    assert comps[0]["mean"] == pytest.approx(1.0, abs=1e-10)
    assert comps[0]["std"] <= 1e-10


def test_zero_set_empty_for_nonvanishing_det():
    g = build_grid("rectangle", 24, 24)
    assert len(zero_set_scan(g, np.ones(g.shape)).flagged) == 0


def oscillating_annulus_datum():
    g = build_grid("annulus", 64, 64)
    bc = g.boundary_coords()
    th = bc[:, 1]
    f = np.where((bc[:, 0] > 0.5) & (th > 0), th * np.sin(100 / np.where(th > 0, th, 1)), 0.0)
    return g, harmonic_scalar(g, f).F[..., 0, 0]


def test_zero_set_fraction_linear_in_tau():
    # [DERIVED] interior flagged counts 710, 145, 12, 0 for tau = 10^-k median|u|
    g, u = oscillating_annulus_datum()
    med = np.median(np.abs(u))
    interior = ~g.boundary_mask().ravel()
    counts = []
    for k in (1, 2, 3, 4):
        zs = zero_set_scan(g, u, tau=10.0**-k * med)
        counts.append(int(interior[zs.flagged].sum()))
    assert counts == [710, 145, 12, 0]
    for k, c in zip((1, 2, 3), counts):
        assert c / g.n_nodes / 10.0**-k <= 5.0


def test_extend_quotient_without_flags_is_identity():
    g = build_grid("rectangle", 24, 24)
    met = metric_preset(g, "flat")
    A = connection_preset(g, 2, "random-smooth:3,0.6")
    B = gauge_pullback(g, random_unitary_gauge(g, 2, 1, 2.0), A)
    data = window_data(g, region_all(g), 2)[0]
    F = harmonic_gauge(assemble(g, met, A), data)
    G = harmonic_gauge(assemble(g, met, B), data)
    q = gauge_quotient(g, F, G, conn_a=A, conn_b=B)
    zs = zero_set_scan(g, G.det())
    assert len(zs.flagged) == 0
    h, _ = extend_quotient(g, q, zs, A, B)
    assert np.array_equal(h, q.h)


def test_runge_fit_target_in_range():
    g = build_grid("rectangle", 32, 32)
    op = assemble(g, metric_preset(g, "flat"), connection_preset(g, 2, "random-smooth:2,0.5"))
    gamma = region_where(g, lambda x1, x2: x1 < 1e-12)
    curve = trace_curve(g, [(0.3, 0.3), (0.3, 0.7)])
    basis = runge_basis(g, gamma, 2, 8)
    data = np.stack([basis[0] + 0.5 * basis[3], basis[1] - basis[5]], axis=-1)
    target = interpolate(g, solve_dirichlet(op, data).u.u, curve.points)
    assert runge_fit(op, curve, target, gamma, 1e-12, 8).residual <= 1e-8


def test_extend_scene_equal_connections():
    g = build_grid("rectangle", 24, 24)
    met = metric_preset(g, "flat")
    A = connection_preset(g, 2, "random-smooth:3,0.6")
    ea, eb = extend_scene(Scene(g, met, A), Scene(g, met, A), g.node_index(0, 12), 4)
    assert np.array_equal(ea.conn.A, eb.conn.A)
    assert dn_discrepancy(dn_matrix(ea.operator(), ea.gamma), dn_matrix(eb.operator(), eb.gamma)) == 0.0


def test_holonomy_equal_connections():
    g = build_grid("annulus", 24, 24)
    met = metric_preset(g, "flat")
    A = connection_preset(g, 1, "flat-annulus:0.25")
    r = ((g.n1 - 1) // 2) * g.h1
    loop = trace_curve(g, [(1, 0), (r, 0), (r, 2 * math.pi), (1, 2 * math.pi)])
    rep = recover_holonomy(Scene(g, met, A), Scene(g, met, A), loop)
    assert rep.holonomy_a == rep.holonomy_b
    assert rep.holonomy_distance <= 1e-12


def test_compose_with_reverse_path_is_identity():
    g = build_grid("rectangle", 33, 33)
    A = connection_preset(g, 2, "random-smooth:3,0.8")
    fwd = parallel_transport(g, A, trace_curve(g, [(0.25, 0.25), (0.75, 0.25), (0.75, 0.5)]), method="links")
    back = parallel_transport(g, A, trace_curve(g, [(0.75, 0.5), (0.75, 0.25), (0.25, 0.25)]), method="links")
    assert np.abs(compose_transports([fwd, back]).P - np.eye(2)).max() <= 1e-12


def test_figure_eight_composition():
    g = build_grid("annulus", 24, 24)
    A = connection_preset(g, 2, "random-smooth:3,0.8")
    p = (0.5, 2.0)
    upper = [p, (0.7, 2.5), (0.3, 2.5), p]
    lower = [p, (0.7, 1.5), (0.3, 1.5), p]
    whole = parallel_transport(g, A, trace_curve(g, upper + lower[1:]), 4)
    parts = [parallel_transport(g, A, trace_curve(g, c), 4) for c in (upper, lower)]
    assert np.abs(compose_transports(parts).P - whole.P).max() <= 1e-6


def test_relaxed_ym_certificate():
    # [DERIVED] 0.0773 at 32^2; the certificate decays roughly first order (0.0436 at 64^2)
    from gaugelab.cli import Scenario, build, preset

    d = preset("ym-perturbed-flat:3").to_dict()
    d["n1"] = d["n2"] = 32
    b = build(Scenario.from_dict(d))
    g, m = b.grid, b.A.m
    F = harmonic_gauge(assemble(g, b.metric, b.A), np.broadcast_to(np.eye(m), (g.n_boundary, m, m)))
    assert b.ym.converged
    assert pulled_back_connection(g, b.metric, F, b.A)[1] == pytest.approx(0.0773, rel=1e-2)
