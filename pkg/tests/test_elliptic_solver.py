import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gaugelab.bundle_calculus import (
    PotentialField,
    SectionField,
    codifferential,
    connection_preset,
    covariant_derivative,
    gauge_pullback,
    random_unitary_gauge,
    zero_connection,
)
from gaugelab.elliptic_solver import (
    DNMatrix,
    SingularSystemError,
    assemble,
    dn_discrepancy,
    dn_matrix,
    normal_derivative,
    solve_dirichlet,
)
from gaugelab.geometry import GeometryError, build_grid, metric_geometry, metric_preset, region_where


def flat_op(n, m=1, topo="rectangle", conn="zero", metric="flat"):
    g = build_grid(topo, n, n)
    return assemble(g, metric_preset(g, metric), connection_preset(g, m, conn))


def boundary_values(g, fn, m=1):
    bc = g.boundary_coords()
    v = fn(bc[:, 0], bc[:, 1]).astype(complex)
    return np.repeat(v[:, None], m, axis=1)


# -- assembly


def test_five_point_stencil():
    op = flat_op(5)
    g = op.grid
    row = op.L.getrow(int(np.where(op.interior == g.node_index(2, 2))[0][0])).toarray().ravel()
    h2 = g.h1 ** 2
    c = g.node_index(2, 2)
    assert row[c] == pytest.approx(4 / h2)
    for nb in (g.node_index(1, 2), g.node_index(3, 2), g.node_index(2, 1), g.node_index(2, 3)):
        assert row[nb] == pytest.approx(-1 / h2)
    assert np.count_nonzero(row) == 5


def test_constant_data_gives_constant_solution():
    op = flat_op(9)
    sol = solve_dirichlet(op, np.ones(op.grid.n_boundary))
    assert np.allclose(sol.u.u, 1.0, atol=1e-12)


def test_linear_data_reproduced_exactly():
    op = flat_op(9)
    sol = solve_dirichlet(op, boundary_values(op.grid, lambda x1, x2: x1))
    X1, _ = op.grid.coords()
    assert np.allclose(sol.u.u[..., 0, 0], X1, atol=1e-12)


def test_discrete_maximum_principle():
    op = flat_op(17)
    rng = np.random.default_rng(0)
    f = rng.uniform(-1, 1, size=op.grid.n_boundary)
    u = solve_dirichlet(op, f).u.u.real
    assert u.max() <= f.max() + 1e-12 and u.min() >= f.min() - 1e-12


def test_operator_matches_bundle_calculus():
    # L u = d_A^* d_A u at interior nodes, with staggered d_A and the link codifferential
    g = build_grid("rectangle", 10, 11)
    met = metric_preset(g, "conformal:1+0.3*x1*x2")
    A = connection_preset(g, 2, "random-smooth:1,0.7")
    op = assemble(g, met, A)
    rng = np.random.default_rng(3)
    u = SectionField(rng.normal(size=g.shape + (2, 1)) + 1j * rng.normal(size=g.shape + (2, 1)))
    ref = codifferential(g, met, A, covariant_derivative(g, A, u, staggered=True))
    i, j = np.divmod(op.interior, g.n2)
    assert np.abs(op.apply(u) - ref[i, j]).max() <= 1e-9 * np.abs(ref).max()


def test_potential_enters_diagonal():
    g = build_grid("rectangle", 6, 6)
    Q = PotentialField(np.broadcast_to(2.5 * np.eye(1), g.shape + (1, 1)).copy())
    base = assemble(g, metric_preset(g, "flat"), zero_connection(g, 1))
    withq = assemble(g, metric_preset(g, "flat"), zero_connection(g, 1), Q)
    assert np.allclose((withq.L_II - base.L_II).diagonal(), 2.5)


@settings(max_examples=8, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from([1, 2]), st.sampled_from(["rectangle", "annulus"]))
def test_hermitian_positive_definite(seed, m, topo):
    g = build_grid(topo, 9, 10)
    op = assemble(g, metric_preset(g, "diag(1.5,0.8)"), connection_preset(g, m, f"random-smooth:{seed},0.8"))
    H = op.hermitian_form().toarray()
    assert np.abs(H - H.conj().T).max() <= 1e-10 * np.abs(H).max()
    assert np.linalg.eigvalsh(0.5 * (H + H.conj().T)).min() > 0


def test_non_diagonal_metric_rejected():
    g = build_grid("rectangle", 6, 6)
    Gm = np.broadcast_to(np.array([[1.0, 0.2], [0.2, 1.0]]), g.shape + (2, 2)).copy()
    with pytest.raises(GeometryError, match="diagonal"):
        assemble(g, metric_geometry(g, Gm), zero_connection(g, 1))


def test_singular_system_raised():
    g = build_grid("rectangle", 5, 5)
    # Q = -lambda_1 of the interior 3x3 block makes the system singular
    op0 = assemble(g, metric_preset(g, "flat"), zero_connection(g, 1))
    lam = float(np.linalg.eigvalsh(op0.L_II.toarray()).min())
    Q = PotentialField(np.broadcast_to(-lam * np.eye(1), g.shape + (1, 1)).copy())
    op = assemble(g, metric_preset(g, "flat"), zero_connection(g, 1), Q)
    with pytest.raises(SingularSystemError):
        solve_dirichlet(op, np.ones(g.n_boundary))


def test_bad_boundary_shape():
    op = flat_op(6, m=2)
    with pytest.raises(ValueError, match="boundary data"):
        solve_dirichlet(op, np.ones(op.grid.n_boundary))


# -- normal derivative


def test_normal_derivative_second_order_off_corners():
    # f = sin(pi x1) on x2 = 0: exact d_nu u = pi coth(pi) sin(pi x1) there
    # [DERIVED] errors 0.0119, 0.00306 at n = 33, 65
    errs = []
    for n in (33, 65):
        op = flat_op(n)
        g = op.grid
        bc = g.boundary_coords()
        bottom = np.abs(bc[:, 1]) < 1e-14
        f = np.where(bottom, np.sin(np.pi * bc[:, 0]), 0.0)
        nd = normal_derivative(solve_dirichlet(op, f))[:, 0, 0]
        on = bottom & (bc[:, 0] > 1e-12) & (bc[:, 0] < 1 - 1e-12)
        exact = np.pi / np.tanh(np.pi) * np.sin(np.pi * bc[:, 0])
        errs.append(np.abs(nd[on] - exact[on]).max())
    assert errs[0] == pytest.approx(0.0119, rel=0.03)
    assert math.log2(errs[0] / errs[1]) >= 1.9


def test_normal_derivative_of_linear_solution():
    op = flat_op(9)
    g = op.grid
    nd = normal_derivative(solve_dirichlet(op, boundary_values(g, lambda x1, x2: x2)))[:, 0, 0]
    sides = np.array(g.boundary_sides)
    assert np.allclose(nd[sides == "x2+"], 1.0) and np.allclose(nd[sides == "x2-"], -1.0)


# -- DN matrix


def test_dn_shape_and_row_sums():
    op = flat_op(12, m=2)
    dn = dn_matrix(op)
    assert dn.shape == (2 * op.grid.n_boundary,) * 2
    # constants are harmonic for A = 0: Lambda 1 = 0
    ones = np.ones(dn.shape[0])
    assert np.abs(dn.matrix @ ones).max() <= 1e-9


def test_dn_fibres_decouple_for_scalar_connection():
    op = flat_op(10, m=2, conn="constant:0.2,0")
    M = dn_matrix(op).matrix
    assert np.abs(M[0::2, 1::2]).max() <= 1e-12


def test_dn_region_restriction():
    op = flat_op(10)
    g = op.grid
    gamma = region_where(g, lambda x1, x2: x1 < 1e-12)
    full, sub = dn_matrix(op), dn_matrix(op, gamma)
    p = gamma.positions
    assert sub.shape == (10, 10)
    assert np.allclose(sub.matrix, full.matrix[np.ix_(p, p)])


@settings(max_examples=5, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from([1, 2]))
def test_dn_gauge_invariance_exact(seed, m):
    g = build_grid("rectangle", 16, 16)
    met = metric_preset(g, "flat")
    A = connection_preset(g, m, f"random-smooth:{seed},0.6")
    H = random_unitary_gauge(g, m, seed, 2.0)
    a = dn_matrix(assemble(g, met, A))
    b = dn_matrix(assemble(g, met, gauge_pullback(g, H, A)))
    assert dn_discrepancy(a, b) <= 1e-10


def test_dn_symmetric_on_smooth_data():
    # the discrete map is not symmetric at corners; on smooth data near-symmetry holds
    op = flat_op(33, m=1, conn="constant:0.2,0.1")
    M = dn_matrix(op).matrix
    g = op.grid
    f = boundary_values(g, lambda x1, x2: np.cos(np.pi * x1) * (1 + x2))[:, 0]
    h = boundary_values(g, lambda x1, x2: np.sin(np.pi * x2) + x1 * x2)[:, 0]
    lhs, rhs = np.vdot(h, M @ f), np.vdot(M @ h, f)
    assert abs(lhs - rhs) <= 0.05 * abs(lhs)


def test_dn_positive_on_smooth_data():
    op = flat_op(33, m=2, conn="random-smooth:2,0.5")
    M = dn_matrix(op).matrix
    g = op.grid
    for fn in (lambda x1, x2: np.cos(np.pi * x1), lambda x1, x2: x1 * x2 + 0.3, lambda x1, x2: np.exp(x2)):
        f = boundary_values(g, fn, m=2).ravel()
        assert np.vdot(f, M @ f).real > 0


def test_annulus_flat_connections_distinct():
    # [DERIVED] holonomies exp(-2 pi i 0.25) vs exp(-2 pi i 0.3) at 64 x 64
    g = build_grid("annulus", 64, 64)
    met = metric_preset(g, "flat")
    a = dn_matrix(assemble(g, met, connection_preset(g, 1, "flat-annulus:0.25")))
    b = dn_matrix(assemble(g, met, connection_preset(g, 1, "flat-annulus:0.3")))
    assert dn_discrepancy(a, b) == pytest.approx(0.00301392173221, rel=1e-8)


def test_dn_discrepancy_shape_mismatch():
    a, b = dn_matrix(flat_op(6)), dn_matrix(flat_op(7))
    with pytest.raises(ValueError):
        dn_discrepancy(a, b)


def test_dn_csv_roundtrip(tmp_path):
    op = flat_op(7, m=2, conn="random-smooth:1,0.5")
    dn = dn_matrix(op, scenario_hash="abc")
    path = str(tmp_path / "dn.csv")
    dn.to_csv(path)
    M, side = DNMatrix.read_csv(path)
    assert np.array_equal(M, dn.matrix)
    assert side["kind"] == "dn-matrix" and side["m"] == 2 and side["scenario_hash"] == "abc"
    assert side["gamma_nodes"] == [int(n) for n in op.grid.boundary_nodes]


def test_solution_satisfies_interior_equation():
    op = flat_op(20, m=2, conn="random-smooth:4,0.8")
    rng = np.random.default_rng(1)
    f = rng.normal(size=(op.grid.n_boundary, 2, 3)) + 0j
    sol = solve_dirichlet(op, f)
    assert np.abs(op.apply(sol.u)).max() <= 1e-8 * np.abs(op.L).max()
    assert sol.residual <= 1e-10
    assert sol.u.k == 3
