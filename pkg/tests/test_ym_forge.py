import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gaugelab.bundle_calculus import (
    ConnectionField,
    OneFormField,
    bump,
    connection_preset,
    gauge_pullback,
    random_unitary_gauge,
    ym_residual,
    zero_connection,
)
from gaugelab.geometry import build_grid, metric_preset
from gaugelab.ym_forge import (
    OptimizerConfig,
    minimize_ym,
    one_form_pairing,
    residual_norm,
    ym_energy,
    ym_gradient,
)


def perturbed_flat(g, m=1, seed=3, amp=0.3):
    A = connection_preset(g, m, f"random-smooth:{seed},1.0").A * (amp * bump(g, (0.5, 0.5), 0.45))[None, ..., None, None]
    return ConnectionField(A)


def test_zero_energy_for_zero_connection():
    g = build_grid("rectangle", 8, 8)
    assert ym_energy(g, metric_preset(g, "flat"), zero_connection(g, 2)) == 0.0


def test_constant_curvature_energy_one():
    # [DERIVED] |F12|^2 = 1 over the unit square
    g = build_grid("rectangle", 33, 33)
    E = ym_energy(g, metric_preset(g, "flat"), connection_preset(g, 1, "constant-curvature:1"))
    assert E == pytest.approx(1.0, abs=1e-12)


def test_energy_scales_with_rank():
    g = build_grid("rectangle", 17, 17)
    met = metric_preset(g, "flat")
    E1 = ym_energy(g, met, connection_preset(g, 1, "constant-curvature:0.5"))
    E3 = ym_energy(g, met, connection_preset(g, 3, "constant-curvature:0.5"))
    assert E3 == pytest.approx(3 * E1)


def test_cell_energy_gauge_invariant_asymptotically():
    # node-based energy: [DERIVED] |E(H*A) - E(A)| = 0.438, 0.0542 at n = 65, 129
    gaps = []
    for n in (65, 129):
        g = build_grid("rectangle", n, n)
        met = metric_preset(g, "flat")
        A = connection_preset(g, 2, "random-smooth:1,0.5")
        B = gauge_pullback(g, random_unitary_gauge(g, 2, 1, 0.5, radius=0.4), A)
        gaps.append(abs(ym_energy(g, met, A) - ym_energy(g, met, B)))
    assert gaps[0] == pytest.approx(0.438, rel=0.01)
    assert gaps[1] <= gaps[0] / 4


@settings(max_examples=4, deadline=None)
@given(st.integers(0, 1000), st.sampled_from(["rectangle", "annulus"]))
def test_lattice_energy_gauge_invariant(seed, topo):
    g = build_grid(topo, 33, 33)
    met = metric_preset(g, "flat")
    A = connection_preset(g, 2, f"random-smooth:{seed},0.5")
    center = (0.5, math.pi) if topo == "annulus" else (0.5, 0.5)
    B = gauge_pullback(g, random_unitary_gauge(g, 2, seed, 2.0, center=center, radius=0.4), A)
    E = ym_energy(g, met, A, scheme="lattice")
    assert abs(ym_energy(g, met, B, scheme="lattice") - E) <= 1e-10 * E


def test_lattice_energy_matches_cell_energy():
    # [DERIVED] |E_lattice - E_cell| = 7.46e-4, 1.87e-4 at n = 33, 65 (second order)
    gaps = []
    for n in (33, 65):
        g = build_grid("rectangle", n, n)
        met = metric_preset(g, "flat")
        A = connection_preset(g, 2, "random-smooth:1,0.5")
        gaps.append(abs(ym_energy(g, met, A, scheme="lattice") - ym_energy(g, met, A)))
    assert gaps[0] == pytest.approx(7.457e-4, rel=0.01)
    assert math.log2(gaps[0] / gaps[1]) >= 1.9
    g = build_grid("rectangle", 33, 33)
    E = ym_energy(g, metric_preset(g, "flat"), connection_preset(g, 1, "constant-curvature:1"), scheme="lattice")
    assert E == pytest.approx(1.0, abs=1e-9)
    with pytest.raises(ValueError, match="scheme"):
        ym_energy(g, metric_preset(g, "flat"), zero_connection(g, 1), scheme="wilson")


@pytest.mark.parametrize("metric", ["flat", "diag(1.5,0.8)", "conformal:1+0.3*x1*x2"])
def test_gradient_matches_finite_difference(metric):
    # [DERIVED] |fd - analytic| ~ 2.6e-9 for these three metrics
    g = build_grid("rectangle", 12, 12)
    met = metric_preset(g, metric)
    A = connection_preset(g, 2, "random-smooth:5,0.8")
    rng = np.random.default_rng(0)
    D = 1j * rng.normal(size=A.A.shape)
    D = 0.5 * (D - np.conj(np.swapaxes(D, -1, -2)))
    D[:, [0, -1]] = 0
    D[:, :, [0, -1]] = 0
    eps = 1e-5
    Ep = ym_energy(g, met, ConnectionField(A.A + eps * D))
    Em = ym_energy(g, met, ConnectionField(A.A - eps * D))
    fd = (Ep - Em) / (2 * eps)
    grad = ym_gradient(g, met, A)
    analytic = one_form_pairing(g, met, grad, OneFormField(D[0], D[1]))
    assert abs(fd - analytic) <= 1e-7


@settings(max_examples=6, deadline=None)
@given(st.integers(0, 1000))
def test_gradient_is_twice_residual(seed):
    g = build_grid("rectangle", 10, 10)
    met = metric_preset(g, "flat")
    A = connection_preset(g, 2, f"random-smooth:{seed},0.8")
    grad = ym_gradient(g, met, A)
    R = ym_residual(g, met, A)
    assert np.allclose(grad.c1[1:-1, 1:-1], 2 * R.c1[1:-1, 1:-1])
    assert np.allclose(grad.c2[1:-1, 1:-1], 2 * R.c2[1:-1, 1:-1])


def test_minimize_from_perturbed_flat():
    g = build_grid("rectangle", 24, 24)
    met = metric_preset(g, "flat")
    conn, rep = minimize_ym(g, met, perturbed_flat(g), OptimizerConfig(tol=1e-6))
    assert rep.converged
    assert rep.final_residual <= 1e-6
    assert np.all(np.diff(rep.energies) <= 0)
    assert rep.energies[-1] < rep.energies[0]
    assert residual_norm(g, met, conn) == pytest.approx(rep.final_residual)
    # tangential boundary data is never moved: A_2 on x1 sides, A_1 on x2 sides
    init = perturbed_flat(g)
    assert np.array_equal(conn.A[1][[0, -1]], init.A[1][[0, -1]])
    assert np.array_equal(conn.A[0][:, [0, -1]], init.A[0][:, [0, -1]])


def test_boundary_rules():
    # freezing the transverse component too leaves a jump at the boundary layer
    g = build_grid("rectangle", 24, 24)
    met = metric_preset(g, "flat")
    init = perturbed_flat(g)
    jumps = {}
    for rule in ("tangential", "all"):
        conn, rep = minimize_ym(g, met, init, OptimizerConfig(tol=1e-6, boundary=rule))
        assert rep.converged
        A2 = conn.A[1][..., 0, 0]
        jumps[rule] = float(np.abs(A2[5:-5, 1] - A2[5:-5, 0]).max())
        if rule == "all":
            assert np.array_equal(conn.A[:, 0], init.A[:, 0]) and np.array_equal(conn.A[:, :, -1], init.A[:, :, -1])
    assert jumps["tangential"] < jumps["all"] / 10
    with pytest.raises(ValueError, match="boundary"):
        OptimizerConfig(boundary="none")


def test_unconverged_run_reported():
    g = build_grid("rectangle", 16, 16)
    conn, rep = minimize_ym(g, metric_preset(g, "flat"), perturbed_flat(g), OptimizerConfig(max_iters=1))
    assert rep.iterations == 1
    assert not rep.converged
    assert len(rep.energies) == 2


def test_minimizer_keeps_connection_unitary():
    g = build_grid("rectangle", 16, 16)
    conn, _ = minimize_ym(g, metric_preset(g, "flat"), perturbed_flat(g, m=2), OptimizerConfig(max_iters=50))
    assert conn.unitary
    assert np.abs(conn.A + np.conj(np.swapaxes(conn.A, -1, -2))).max() <= 1e-14


def test_already_critical_connection_takes_no_steps():
    g = build_grid("rectangle", 20, 20)
    conn, rep = minimize_ym(g, metric_preset(g, "flat"), connection_preset(g, 1, "constant-curvature:1"))
    assert rep.iterations == 0 and rep.converged
    assert rep.final_residual <= 1e-10


def test_fixed_rule_recorded():
    g = build_grid("rectangle", 12, 12)
    _, rep = minimize_ym(g, metric_preset(g, "flat"), perturbed_flat(g), OptimizerConfig(armijo_c=0, max_iters=5))
    assert rep.rule == "fixed"


def test_report_json():
    g = build_grid("rectangle", 12, 12)
    _, rep = minimize_ym(g, metric_preset(g, "flat"), perturbed_flat(g), OptimizerConfig(max_iters=3))
    d = rep.to_json()
    assert d["kind"] == "energy-report" and d["iterations"] == 3
    assert all(math.isfinite(e) for e in d["energies"])


def test_config_validation():
    with pytest.raises(ValueError, match="unknown"):
        OptimizerConfig.from_dict({"tol": 1e-6, "momentum": 0.9})
    for bad in ({"tol": 0}, {"max_iters": 0}, {"step0": -1}, {"armijo_c": 1.0}):
        with pytest.raises(ValueError):
            OptimizerConfig.from_dict(bad)
    assert OptimizerConfig.from_dict({"tol": 1e-8}).tol == 1e-8
