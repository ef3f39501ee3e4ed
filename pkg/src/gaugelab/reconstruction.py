"""Inverse-problem pipelines: harmonic gauges, gauge quotients, Runge frames, holonomy.

Given two connections ``A`` and ``B`` with the same DN data on ``Gamma``, the
gauge relating them is recovered as ``h = F G^{-1}`` where ``F`` and ``G``
solve ``d_A^* d_A F = 0`` and ``d_B^* d_B G = 0`` with the same matrix
boundary data supported in ``Gamma``.  Conventions: ``B = H^* A`` means
``B = H^{-1} dH + H^{-1} A H``, so ``G = H^{-1} F`` and ``h = H``;
``h`` satisfies ``dh = h B - A h`` (which is ``(B - A) h`` for ``m = 1``), and
on the lattice ``U^B_e = h_tail^{-1} U^A_e h_head``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.ndimage

from .bundle_calculus import (
    ConnectionField,
    FieldError,
    GaugeField,
    OneFormField,
    PotentialField,
    TransportMatrix,
    _quintic_ramp,
    codifferential,
    edge_links,
    interpolate,
    parallel_transport,
    partial,
)
from .elliptic_solver import DiscreteOperator, assemble, dn_discrepancy, dn_matrix, solve_dirichlet
from .geometry import (
    SIDES,
    BoundaryRegion,
    ChartGrid,
    Curve,
    GeometryError,
    MetricField,
    _boundary_cycles,
    metric_geometry,
    pad_grid,
    region_all,
)

__all__ = [
    "ReconstructionError",
    "ThickZeroSetError",
    "DegenerateFrameError",
    "PreconditionError",
    "JetMismatchError",
    "Scene",
    "HarmonicGauge",
    "GaugeQuotient",
    "ZeroSetSample",
    "RungeFrame",
    "ReconstructionReport",
    "window_data",
    "harmonic_gauge",
    "pulled_back_connection",
    "gauge_quotient",
    "zero_set_scan",
    "extend_quotient",
    "runge_basis",
    "runge_fit",
    "extend_scene",
    "recover_holonomy",
    "compose_transports",
    "modulus_components",
]


class ReconstructionError(RuntimeError):
    """A reconstruction pipeline could not proceed."""


class ThickZeroSetError(ReconstructionError):
    """The flagged zero set has interior nodes (or ``det G`` collapses)."""


class DegenerateFrameError(ReconstructionError):
    """A fitted frame is (nearly) linearly dependent along the curve."""


class PreconditionError(ReconstructionError):
    """A declared precondition (such as DN agreement) fails."""


class JetMismatchError(ReconstructionError):
    """Two scenes differ near the boundary point where they are to be glued."""


def _cplx(z) -> list:
    z = np.asarray(z)
    return np.stack([z.real, z.imag], axis=-1).tolist()


# ---------------------------------------------------------------------------
# scenes and harmonic gauges


@dataclass(eq=False)
class Scene:
    """Grid, metric, connection and potential, with a measurement region."""

    grid: ChartGrid
    metric: MetricField
    conn: ConnectionField
    potential: Optional[PotentialField] = None
    region: Optional[BoundaryRegion] = None

    def operator(self) -> DiscreteOperator:
        return assemble(self.grid, self.metric, self.conn, self.potential)

    @property
    def gamma(self) -> BoundaryRegion:
        return self.region if self.region is not None else region_all(self.grid)


@dataclass(eq=False)
class HarmonicGauge:
    """Matrix solution ``F`` of ``d_A^* d_A F = 0`` with given boundary data.

    Attributes
    ----------
    F : ndarray, shape (n1, n2, m, m)
        Column ``a`` is the Dirichlet solution for data column ``a``.
    data : ndarray, shape (N_bnd, m, m)
    residual : float
        Relative residual of the interior solve.
    """

    F: np.ndarray = field(repr=False)
    data: np.ndarray = field(repr=False)
    residual: float

    @property
    def m(self) -> int:
        return self.F.shape[-1]

    def det(self) -> np.ndarray:
        return np.linalg.det(self.F)

    def gauge(self) -> GaugeField:
        return GaugeField(self.F, unitary=False)


def _boundary_distance(grid: ChartGrid, mask: np.ndarray) -> np.ndarray:
    """Index distance along the boundary cycles from each position to the complement of ``mask``."""
    d = np.full(grid.n_boundary, np.inf)
    for cyc in _boundary_cycles(grid):
        inside = mask[cyc]
        L = len(cyc)
        out = np.flatnonzero(~inside)
        if out.size == 0:
            continue
        k = np.arange(L)
        dist = np.abs(k[:, None] - out[None, :])
        dist = np.minimum(dist, L - dist)
        d[cyc] = dist.min(axis=1)
    return d


def window_data(grid: ChartGrid, region: BoundaryRegion, m: int, ramp_cells: int = 4) -> Tuple[np.ndarray, np.ndarray]:
    """Boundary data ``w Id`` with ``w`` a quintic-ramp window supported in Gamma.

    ``w = 0`` outside Gamma, rises over ``ramp_cells`` nodes and equals ``1``
    on the sub-window ``V``.  Returns ``(data, V)`` with data of shape
    ``(N_bnd, m, m)`` and ``V`` a boolean mask over boundary positions.
    """
    region.require_nonempty()
    d = _boundary_distance(grid, region.mask)
    w = np.where(np.isinf(d), 1.0, _quintic_ramp(d / (ramp_cells + 1)))
    w[~region.mask] = 0.0
    V = w == 1.0
    if not V.any():
        raise GeometryError("region too short for the window ramp; no node with full weight")
    return w[:, None, None] * np.eye(m)[None], V


def harmonic_gauge(op: DiscreteOperator, data) -> HarmonicGauge:
    """Column-wise Dirichlet solves of ``d_A^* d_A F = 0``, ``F|_bdry = data``.

    Parameters
    ----------
    data : array_like, shape (N_bnd, m, m), or (N_bnd,) for ``m = 1``
    """
    data = np.asarray(data, dtype=complex)
    m = op.m
    if data.ndim == 1 and m == 1:
        data = data[:, None, None]
    if data.shape != (op.grid.n_boundary, m, m):
        raise FieldError(f"matrix boundary data must have shape ({op.grid.n_boundary}, {m}, {m}), got {data.shape}")
    sol = solve_dirichlet(op, data)
    lu_res = op.apply(sol.u)
    scale = max(1.0, float(np.abs(data).max()))
    res = float(np.abs(lu_res).max()) / scale
    return HarmonicGauge(sol.u.u.copy(), data.copy(), res)


def pulled_back_connection(
    grid: ChartGrid,
    metric: MetricField,
    hg: HarmonicGauge,
    conn: ConnectionField,
    mask: Optional[np.ndarray] = None,
) -> Tuple[ConnectionField, float]:
    """``A' = F^{-1} dF + F^{-1} A F`` on a mask, and the certificate ``||d^* A' - (A', A')||``.

    ``(A', A') = g^{ij} A'_i A'_j``.  The certificate is the max over mask
    nodes whose whole 3x3 neighbourhood lies in the mask and that are at least
    two cells from the boundary (where the centred divergence would read
    one-sided boundary differences); ``A' = 0`` off the mask.

    Raises
    ------
    ReconstructionError
        If the mask is empty.
    """
    F = hg.F
    if mask is None:
        mask = np.abs(hg.det()) > 1e-6 * np.median(np.abs(hg.det()))
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ReconstructionError("valid mask is empty")
    m = hg.m
    Fs = np.where(mask[..., None, None], F, np.eye(m))
    Finv = np.linalg.inv(Fs)
    Ap = np.stack([Finv @ partial(grid, F, k) + Finv @ conn.A[k] @ F for k in range(2)])
    Ap = np.where(mask[None, ..., None, None], Ap, 0)
    zero = ConnectionField(np.zeros_like(Ap), unitary=False)
    div = codifferential(grid, metric, zero, OneFormField(Ap[0], Ap[1]))
    gi = metric.g_inv[..., None, None, :, :]
    quad = sum(gi[..., i, j] * (Ap[i] @ Ap[j]) for i in range(2) for j in range(2))
    core = scipy.ndimage.binary_erosion(mask, np.ones((3, 3)), border_value=0)
    core &= ~scipy.ndimage.binary_dilation(grid.boundary_mask(), np.ones((3, 3)))
    resid = np.abs(div - quad).max(axis=(-1, -2))
    cert = float(resid[core].max()) if core.any() else 0.0
    return ConnectionField(Ap, unitary=False), cert


# ---------------------------------------------------------------------------
# gauge quotient and zero sets


def _components(grid: ChartGrid, mask: np.ndarray) -> np.ndarray:
    """Connected-component labels of a node mask (4-neighbour), periodic in x^2 on the annulus."""
    lab, n = scipy.ndimage.label(mask)
    if grid.periodic and n > 1:
        parent = list(range(n + 1))

        def find(a):
            while parent[a] != a:
                parent[a] = parent[parent[a]]
                a = parent[a]
            return a

        for i in range(grid.n1):
            a, b = lab[i, 0], lab[i, -1]
            if a and b:
                ra, rb = find(a), find(b)
                if ra != rb:
                    parent[max(ra, rb)] = min(ra, rb)
        roots = np.array([find(a) for a in range(n + 1)])
        _, relab = np.unique(roots, return_inverse=True)
        lab = relab[lab]
    return lab


def modulus_components(grid: ChartGrid, values: np.ndarray, mask: np.ndarray) -> List[Dict[str, float]]:
    """Per connected component of ``mask``: size, mean and standard deviation of ``values``."""
    lab = _components(grid, mask)
    out = []
    for c in range(1, int(lab.max()) + 1):
        v = values[lab == c]
        if v.size:
            out.append({"size": int(v.size), "mean": float(v.mean()), "std": float(v.std())})
    return out


@dataclass(eq=False)
class GaugeQuotient:
    """``h = F G^{-1}`` on the valid mask ``|det G| > tau`` (NaN elsewhere).

    Attributes
    ----------
    h : ndarray, shape (n1, n2, m, m)
    mask : ndarray of bool, shape (n1, n2)
    tau : float
    unit_modulus_deviation : float or None
        ``max | |det h| - 1 |`` on the mask (unitary case).
    certificate : float or None
        ``max ||dh - (h B - A h)||`` over mask nodes with a full stencil.
    link_certificate : float or None
        ``max ||U^A h_head - h_tail U^B|| / h`` over edges inside the mask.
    """

    h: np.ndarray = field(repr=False)
    mask: np.ndarray = field(repr=False)
    tau: float
    unit_modulus_deviation: Optional[float] = None
    certificate: Optional[float] = None
    link_certificate: Optional[float] = None

    @property
    def m(self) -> int:
        return self.h.shape[-1]

    @property
    def flagged_fraction(self) -> float:
        return float(1.0 - self.mask.mean())


def _quotient_certificates(grid: ChartGrid, h: np.ndarray, mask: np.ndarray, A: ConnectionField, B: ConnectionField):
    hs = np.where(mask[..., None, None], h, 0)
    core = scipy.ndimage.binary_erosion(mask, np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]]), border_value=1)
    if grid.periodic:
        core &= np.roll(mask, 1, axis=1) & np.roll(mask, -1, axis=1)
    else:
        core &= np.pad(mask, ((0, 0), (1, 1)), constant_values=True)[:, 2:]
        core &= np.pad(mask, ((0, 0), (1, 1)), constant_values=True)[:, :-2]
    core &= np.pad(mask, ((1, 1), (0, 0)), constant_values=True)[2:]
    core &= np.pad(mask, ((1, 1), (0, 0)), constant_values=True)[:-2]
    node = 0.0
    for k in range(2):
        r = partial(grid, hs, k) - (hs @ B.A[k] - A.A[k] @ hs)
        r = np.linalg.norm(r, axis=(-1, -2))
        if core.any():
            node = max(node, float(r[core].max()))
    UA1, UA2, _, _ = edge_links(grid, A)
    UB1, UB2, _, _ = edge_links(grid, B)
    link = 0.0
    e1 = mask[:-1] & mask[1:]
    r1 = np.linalg.norm(UA1 @ hs[1:] - hs[:-1] @ UB1, axis=(-1, -2)) / grid.h1
    if e1.any():
        link = max(link, float(r1[e1].max()))
    if grid.periodic:
        head = np.roll(hs, -1, axis=1)
        e2 = mask & np.roll(mask, -1, axis=1)
    else:
        head = hs[:, 1:]
        hs2 = hs[:, :-1]
        e2 = mask[:, :-1] & mask[:, 1:]
    tail = hs if grid.periodic else hs2
    r2 = np.linalg.norm(UA2 @ head - tail @ UB2, axis=(-1, -2)) / grid.h2
    if e2.any():
        link = max(link, float(r2[e2].max()))
    return node, link


def gauge_quotient(
    grid: ChartGrid,
    F: HarmonicGauge,
    G: HarmonicGauge,
    tau: Optional[float] = None,
    conn_a: Optional[ConnectionField] = None,
    conn_b: Optional[ConnectionField] = None,
    unitary: bool = True,
) -> GaugeQuotient:
    """``h = F G^{-1}`` where ``|det G| > tau``.

    ``tau`` defaults to ``1e-6 * median |det G|``.  With both connections
    given, the relation ``dh = h B - A h`` is certified on the mask.

    Raises
    ------
    ReconstructionError
        If ``F`` and ``G`` are incompatible or the mask is empty.
    """
    if F.F.shape != G.F.shape:
        raise ReconstructionError(f"harmonic gauges have different shapes {F.F.shape} vs {G.F.shape}")
    if not np.array_equal(F.data, G.data):
        raise ReconstructionError("harmonic gauges were built from different boundary data")
    detG = np.abs(G.det())
    if tau is None:
        tau = 1e-6 * float(np.median(detG))
    mask = detG > tau
    if not mask.any():
        raise ReconstructionError(f"valid mask is empty at tau = {tau:.3e}")
    m = F.m
    Gs = np.where(mask[..., None, None], G.F, np.eye(m))
    h = F.F @ np.linalg.inv(Gs)
    h = np.where(mask[..., None, None], h, np.nan)
    dev = None
    if unitary:
        dev = float(np.abs(np.abs(np.linalg.det(h[mask])) - 1).max())
    cert = link = None
    if conn_a is not None and conn_b is not None:
        cert, link = _quotient_certificates(grid, np.nan_to_num(h), mask, conn_a, conn_b)
    return GaugeQuotient(h, mask, float(tau), dev, cert, link)


@dataclass(eq=False)
class ZeroSetSample:
    """Sampled zero set of a scalar field.

    Attributes
    ----------
    flagged : ndarray of int
        Flat node indices with ``|det G| <= tau``.
    gradient : ndarray, shape (n1, n2)
        ``|grad det G|`` (Euclidean in the chart).
    codim : ndarray of int
        Per flagged node: ``1`` or ``2`` (numerical rank of the Jacobian of
        ``(Re det G, Im det G)`` against the threshold), ``0`` for degenerate.
    tau, threshold : float
    """

    flagged: np.ndarray
    gradient: np.ndarray = field(repr=False)
    codim: np.ndarray
    tau: float
    threshold: float
    n_nodes: int

    @property
    def fraction(self) -> float:
        return len(self.flagged) / self.n_nodes

    def codim_labels(self) -> List[str]:
        return ["degenerate" if c == 0 else str(int(c)) for c in self.codim]

    def stats(self) -> dict:
        return {
            "tau": self.tau,
            "gradient_threshold": self.threshold,
            "flagged": int(len(self.flagged)),
            "fraction": self.fraction,
            "codim1": int(np.sum(self.codim == 1)),
            "codim2": int(np.sum(self.codim == 2)),
            "degenerate": int(np.sum(self.codim == 0)),
        }


def zero_set_scan(
    grid: ChartGrid, field_values: np.ndarray, tau: Optional[float] = None, threshold: Optional[float] = None
) -> ZeroSetSample:
    """Flag ``|f| <= tau`` and estimate the local codimension of the zero set.

    Defaults: ``tau = 1e-6 * median |f|`` and
    ``threshold = 1e-3 * median |grad f|``.
    """
    f = np.asarray(field_values)
    if f.shape != grid.shape:
        raise FieldError(f"scalar field must have grid shape {grid.shape}, got {f.shape}")
    f = f.astype(complex)
    J = np.empty(grid.shape + (2, 2))
    for k in range(2):
        d = partial(grid, f, k)
        J[..., 0, k] = d.real
        J[..., 1, k] = d.imag
    grad = np.sqrt(np.sum(J ** 2, axis=(-1, -2)))
    if tau is None:
        tau = 1e-6 * float(np.median(np.abs(f)))
    if threshold is None:
        threshold = 1e-3 * float(np.median(grad))
    flagged = np.flatnonzero(np.abs(f).ravel() <= tau)
    sv = np.linalg.svd(J.reshape(-1, 2, 2)[flagged], compute_uv=False) if flagged.size else np.zeros((0, 2))
    codim = np.where(sv[:, 1] > threshold, 2, np.where(sv[:, 0] > threshold, 1, 0)) if flagged.size else np.zeros(0, int)
    return ZeroSetSample(flagged, grad, codim.astype(int), float(tau), float(threshold), grid.n_nodes)


def extend_quotient(
    grid: ChartGrid, q: GaugeQuotient, zs: Optional[ZeroSetSample], conn_a: ConnectionField, conn_b: ConnectionField
) -> Tuple[np.ndarray, float]:
    """Fill the nodes off the valid mask from unflagged neighbours.

    Each neighbour transports its value across the connecting edge with the
    lattice form of ``dh = h B - A h`` (``h_head = V^A h_tail U^B`` and its
    reverse); the fill is the average over available neighbours.  Returns the
    full field and the post-fill link certificate over the whole grid.

    Raises
    ------
    ThickZeroSetError
        If a node to be filled has no valid neighbour.
    """
    fill = ~q.mask
    if zs is not None:
        extra = np.zeros(grid.n_nodes, dtype=bool)
        extra[zs.flagged] = True
        fill |= extra.reshape(grid.shape)
    valid = ~fill
    h = np.where(valid[..., None, None], np.nan_to_num(q.h), 0)
    if not fill.any():
        _, link = _quotient_certificates(grid, h, np.ones(grid.shape, bool), conn_a, conn_b)
        return h, link
    UA1, UA2, VA1, VA2 = edge_links(grid, conn_a)
    UB1, UB2, VB1, VB2 = edge_links(grid, conn_b)
    acc = np.zeros_like(h)
    cnt = np.zeros(grid.shape)
    # neighbour at i-1 (tail) -> fill at i (head): h_i = V1[i-1] h_{i-1} U1B[i-1]
    s = valid[:-1] & fill[1:]
    acc[1:][s] += (VA1 @ h[:-1] @ UB1)[s]
    cnt[1:][s] += 1
    # neighbour at i+1 (head) -> fill at i (tail): h_i = U1A[i] h_{i+1} V1B[i]
    s = valid[1:] & fill[:-1]
    acc[:-1][s] += (UA1 @ h[1:] @ VB1)[s]
    cnt[:-1][s] += 1
    if grid.periodic:
        hp = np.roll(h, 1, axis=1)  # value at j-1
        vp = np.roll(valid, 1, axis=1)
        t = np.roll(VA2, 1, axis=1) @ hp @ np.roll(UB2, 1, axis=1)
        s = vp & fill
        acc[s] += t[s]
        cnt[s] += 1
        hn = np.roll(h, -1, axis=1)
        vn = np.roll(valid, -1, axis=1)
        t = UA2 @ hn @ VB2
        s = vn & fill
        acc[s] += t[s]
        cnt[s] += 1
    else:
        s = valid[:, :-1] & fill[:, 1:]
        acc[:, 1:][s] += (VA2 @ h[:, :-1] @ UB2)[s]
        cnt[:, 1:][s] += 1
        s = valid[:, 1:] & fill[:, :-1]
        acc[:, :-1][s] += (UA2 @ h[:, 1:] @ VB2)[s]
        cnt[:, :-1][s] += 1
    bad = fill & (cnt == 0)
    if bad.any():
        i, j = np.argwhere(bad)[0]
        raise ThickZeroSetError(
            f"flagged set has interior ({int(bad.sum())} nodes without a valid neighbour, e.g. node ({i}, {j})); "
            "thick zero sets are not handled"
        )
    out = h.copy()
    out[fill] = acc[fill] / cnt[fill][:, None, None]
    _, link = _quotient_certificates(grid, out, np.ones(grid.shape, bool), conn_a, conn_b)
    return out, link


# ---------------------------------------------------------------------------
# Runge frames


def runge_basis(grid: ChartGrid, region: BoundaryRegion, m: int, N: int) -> np.ndarray:
    """First ``N`` basis data on Gamma, shape (N, N_bnd, m); exact zeros off Gamma.

    Scalar profiles on each connected run of Gamma are ``sin(pi s)^2`` window
    times ``cos(k pi s)`` (open runs, ``s`` in ``(0, 1)``) or the Fourier
    modes ``1, cos, sin, ...`` (closed cycles).  The ``N`` data are taken
    mode-major, then run, then fibre index, so bases are nested in ``N``.

    Raises
    ------
    ValueError
        If ``N`` exceeds ``m * |Gamma|``.
    """
    region.require_nonempty()
    if N < 1 or N > m * region.size():
        raise ValueError(f"basis size N = {N} exceeds the available m * |Gamma| = {m * region.size()}")
    runs = region.components()
    cycles = [set(c.tolist()) for c in _boundary_cycles(grid)]
    out = np.zeros((N, grid.n_boundary, m))
    k = 0
    mode = 0
    while k < N:
        for run in runs:
            closed = any(len(run) == len(c) and set(run.tolist()) == c for c in cycles)
            L = len(run)
            if closed:
                s = np.arange(L) / L
                if mode == 0:
                    prof = np.ones(L)
                else:
                    q = (mode + 1) // 2
                    prof = np.cos(2 * np.pi * q * s) if mode % 2 == 1 else np.sin(2 * np.pi * q * s)
            else:
                if mode >= L:
                    continue
                s = (np.arange(L) + 1) / (L + 1)
                prof = np.sin(np.pi * s) ** 2 * np.cos(mode * np.pi * s)
            for a in range(m):
                if k >= N:
                    break
                out[k, run, a] = prof
                k += 1
            if k >= N:
                break
        mode += 1
        if mode > grid.n_boundary + 2 and k < N:
            raise ValueError(f"basis size N = {N} exceeds the available basis")
    return out


@dataclass(eq=False)
class RungeFrame:
    """Fitted sections, their Gamma-supported data, and along-curve diagnostics.

    Attributes
    ----------
    sections : ndarray, shape (n1, n2, m, k)
    data : ndarray, shape (N_bnd, m, k)
    coefficients : ndarray, shape (N, k)
    residual : float
        ``||S(g)|_K - target||_F / ||target||_F``.
    min_singular_value : float
        Minimum over curve points of the smallest singular value of the
        ``m x k`` frame matrix; from the same evaluation as the residual.
    """

    sections: np.ndarray = field(repr=False)
    data: np.ndarray = field(repr=False)
    coefficients: np.ndarray = field(repr=False)
    residual: float
    min_singular_value: float
    N: int
    lam: float


def runge_fit(
    op: DiscreteOperator,
    curve: Curve,
    targets,
    region: BoundaryRegion,
    lam: float,
    N: int,
) -> RungeFrame:
    """Tikhonov least squares over Gamma-supported boundary data.

    Minimizes ``||S(g)|_K - target||^2 + lam ||g||^2`` over ``g`` in the span
    of :func:`runge_basis`, ``S`` the Dirichlet solution operator of ``op``
    and ``|_K`` bilinear interpolation at the curve points.

    Parameters
    ----------
    targets : array_like, shape (P, m, k) or (m, k)
        Target values at the ``P`` curve points (broadcast if constant).
    """
    grid, m = op.grid, op.m
    pts = curve.points
    P = len(pts)
    t = np.asarray(targets, dtype=complex)
    if t.ndim == 2:
        t = np.broadcast_to(t, (P,) + t.shape)
    if t.shape[:2] != (P, m):
        raise FieldError(f"targets must have shape ({P}, {m}, k), got {t.shape}")
    kt = t.shape[2]
    for p in pts:
        if not grid.contains(p):
            raise GeometryError(f"curve point {tuple(p)} is outside the chart")
    basis = runge_basis(grid, region, m, N)  # (N, Nb, m)
    data = np.moveaxis(basis, 0, -1)  # (Nb, m, N)
    sol = solve_dirichlet(op, data)
    S = interpolate(grid, sol.u.u, pts)  # (P, m, N)
    Smat = S.reshape(P * m, N)
    Phi = data.reshape(-1, N)
    lhs = np.vstack([Smat, math.sqrt(lam) * Phi])
    rhs = np.vstack([t.reshape(P * m, kt), np.zeros((Phi.shape[0], kt))])
    coef, *_ = np.linalg.lstsq(lhs, rhs, rcond=None)
    fit = (Smat @ coef).reshape(P, m, kt)
    resid = float(np.linalg.norm(fit - t) / (np.linalg.norm(t) or 1.0))
    sv = np.linalg.svd(fit, compute_uv=False)
    smin = float(sv[:, -1].min()) if min(m, kt) > 0 else 0.0
    sections = np.einsum("xyan,nk->xyak", sol.u.u, coef)
    bdata = np.einsum("ban,nk->bak", data, coef)
    bdata[~region.mask] = 0.0
    return RungeFrame(sections, bdata, coef, resid, smin, N, float(lam))


# ---------------------------------------------------------------------------
# scene extension


def _outer_side(grid: ChartGrid, node: int) -> str:
    i, j = grid.node_ij(node)
    if i == 0:
        return "x1-"
    if i == grid.n1 - 1:
        return "x1+"
    if not grid.periodic and j == 0:
        return "x2-"
    if not grid.periodic and j == grid.n2 - 1:
        return "x2+"
    raise GeometryError(f"node {node} is not on the boundary")


def _layers(grid: ChartGrid, side: str, k: int):
    axis, sign = SIDES[side]
    n = grid.shape[axis]
    idx = np.arange(k) if sign < 0 else n - 1 - np.arange(k)
    return (idx, slice(None)) if axis == 0 else (slice(None), idx)


def _reflect_pad(arr: np.ndarray, side: str, cells: int, n: int, ramp: bool) -> np.ndarray:
    """Array over the padded grid: original values, plus even reflection across ``side`` on the pad."""
    axis, sign = SIDES[side]
    ax = axis
    k = np.arange(1, cells + 1)
    src = k if sign < 0 else n - 1 - k
    pad = np.take(arr, src, axis=ax)
    if ramp:
        r = 1.0 - _quintic_ramp(k / cells)
        shape = [1] * pad.ndim
        shape[ax] = cells
        pad = pad * r.reshape(shape)
    if sign < 0:
        return np.concatenate([np.flip(pad, axis=ax), arr], axis=ax)
    return np.concatenate([arr, pad], axis=ax)


def _extend_conn(grid: ChartGrid, new: ChartGrid, conn: ConnectionField, pad_A: np.ndarray, side: str, cells: int):
    """Connection on the padded grid: given node values, original links on original edges."""
    tmp = ConnectionField(pad_A, unitary=conn.unitary)
    nU1, nU2, nV1, nV2 = (x.copy() for x in edge_links(new, tmp))
    U1, U2, V1, V2 = edge_links(grid, conn)
    axis, sign = SIDES[side]
    o = cells if sign < 0 else 0
    if axis == 0:
        nU1[o : o + grid.n1 - 1], nV1[o : o + grid.n1 - 1] = U1, V1
        nU2[o : o + grid.n1], nV2[o : o + grid.n1] = U2, V2
    else:
        nU1[:, o : o + grid.n2], nV1[:, o : o + grid.n2] = U1, V1
        nU2[:, o : o + grid.n2 - 1], nV2[:, o : o + grid.n2 - 1] = U2, V2
    return ConnectionField(pad_A, unitary=conn.unitary, links=(nU1, nU2, nV1, nV2))


def extend_scene(scene_a: Scene, scene_b: Scene, anchor: int, cells: int, tol: float = 1e-6) -> Tuple[Scene, Scene]:
    """Pad both scenes outward across the side containing ``anchor``.

    The pad is the whole side (tensor-product charts).  Metric and the
    connection of ``scene_a`` are extended by even reflection across the side,
    the connection blended to zero toward the new edge by a quintic ramp; the
    same pad values are used for ``scene_b``, so ``A = B`` exactly on the pad.
    Links on original edges are kept, so gauge-related scenes stay exactly
    gauge related.  The new measurement region is the outer side of the pad.

    Raises
    ------
    JetMismatchError
        If the two connections (values on the three outermost layers, hence
        value and normal derivative) differ by more than ``tol`` on the side.
    """
    grid = scene_a.grid
    if scene_b.grid.shape != grid.shape or scene_b.conn.m != scene_a.conn.m:
        raise FieldError("scenes live on different grids or ranks")
    side = _outer_side(grid, anchor)
    axis, sign = SIDES[side]
    if cells >= grid.shape[axis] - 1:
        raise GeometryError("pad larger than the grid")
    lay = _layers(grid, side, 3)
    Aa, Ab = scene_a.conn.A, scene_b.conn.A
    mis = float(np.abs(Aa[(slice(None),) + lay] - Ab[(slice(None),) + lay]).max())
    if mis > tol:
        raise JetMismatchError(f"connections differ by {mis:.3e} > {tol:.1e} near the boundary side {side}")
    new, win = pad_grid(grid, side, cells)
    n = grid.shape[axis]
    g = _reflect_pad(scene_a.metric.g, side, cells, n, ramp=False)
    metric = metric_geometry(new, g)
    pad_A = np.stack([_reflect_pad(Aa[k], side, cells, n, ramp=True) for k in range(2)])
    pad_B = pad_A.copy()
    pad_B[(slice(None),) + win] = Ab
    ca = _extend_conn(grid, new, scene_a.conn, pad_A, side, cells)
    cb = _extend_conn(grid, new, scene_b.conn, pad_B, side, cells)
    pots = []
    for sc in (scene_a, scene_b):
        if sc.potential is None:
            pots.append(None)
        else:
            Qa = scene_a.potential.Q if scene_a.potential is not None else np.zeros_like(sc.potential.Q)
            Q = _reflect_pad(Qa, side, cells, n, ramp=True)
            Q[win] = sc.potential.Q
            pots.append(PotentialField(Q, sc.potential.hermitian))
    bc = new.boundary_coords()
    coord = new.origin[axis] + (0 if sign < 0 else (new.shape[axis] - 1)) * (new.h1, new.h2)[axis]
    gmask = np.abs(bc[:, axis] - coord) < 1e-12
    region = BoundaryRegion(new, gmask)
    return (
        Scene(new, metric, ca, pots[0], region),
        Scene(new, metric, cb, pots[1], region),
    )


# ---------------------------------------------------------------------------
# holonomy


@dataclass
class ReconstructionReport:
    """Norms, thresholds and holonomies of a reconstruction run (schema v1)."""

    gauge_error: float = 0.0
    boundary_identity_error: float = 0.0
    unit_modulus_deviation: float = 0.0
    zero_set: dict = field(default_factory=dict)
    holonomy_a: Optional[list] = None
    holonomy_b: Optional[list] = None
    holonomy_distance: Optional[float] = None
    discrepancies: dict = field(default_factory=dict)
    thresholds: dict = field(default_factory=dict)
    scenario_hashes: list = field(default_factory=list)

    def __post_init__(self):
        for name in ("gauge_error", "boundary_identity_error", "unit_modulus_deviation"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    def to_json(self) -> dict:
        return {
            "kind": "reconstruction-report",
            "schema": 1,
            "gauge_error": self.gauge_error,
            "boundary_identity_error": self.boundary_identity_error,
            "unit_modulus_deviation": self.unit_modulus_deviation,
            "zero_set": self.zero_set,
            "holonomy_a": self.holonomy_a,
            "holonomy_b": self.holonomy_b,
            "holonomy_distance": self.holonomy_distance,
            "discrepancies": self.discrepancies,
            "thresholds": self.thresholds,
            "scenario_hashes": self.scenario_hashes,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True)


def _tube_mask(grid: ChartGrid, curve: Curve, radius: int) -> np.ndarray:
    mask = np.zeros(grid.shape, dtype=bool)
    for p in curve.points:
        s1, s2 = grid.fractional_index(p)
        i0, j0 = int(math.floor(s1)), int(math.floor(s2))
        for di in range(-radius, radius + 2):
            i = i0 + di
            if not 0 <= i < grid.n1:
                continue
            for dj in range(-radius, radius + 2):
                j = j0 + dj
                if grid.periodic:
                    mask[i, j % grid.n2] = True
                elif 0 <= j < grid.n2:
                    mask[i, j] = True
    return mask


def recover_holonomy(
    scene_a: Scene,
    scene_b: Scene,
    loop: Curve,
    dn_tol: float = 1e-6,
    pad: int = 4,
    N: int = 24,
    lam: float = 1e-8,
    frame_threshold: float = 1e-3,
    tube_radius: int = 3,
    substeps: int = 2,
    transport: str = "auto",
) -> ReconstructionReport:
    """Compare holonomies of two scenes along a loop anchored on Gamma.

    Steps: DN agreement on Gamma (precondition); extension of both scenes
    across the anchor's side; Runge frame ``F`` for ``A`` fitted to ``Id``
    along the loop with data on the new outer side; ``G`` for ``B`` from the
    same data; ``h = F G^{-1}`` on a tube of ``tube_radius`` cells; parallel
    transports ``P^A``, ``P^B`` along the loop (link products when the loop
    runs along grid edges, see :func:`parallel_transport`).  ``gauge_error``
    is the lattice form ``max ||U^A h_head - h_tail U^B|| / h`` of
    ``h^* A - B`` on the tube; the node-formula value is recorded among the
    discrepancies.  With ``B = H^* A`` one has
    ``P^B = H(p)^{-1} P^A H(p)``, so the reported distance is
    ``||P^A - h(p) P^B h(p)^{-1}||``.

    Raises
    ------
    PreconditionError
        If the DN matrices disagree on Gamma beyond ``dn_tol``, or the loop
        is not closed and anchored at a boundary node.
    DegenerateFrameError
        If the fitted frame has minimal singular value below ``frame_threshold``.
    ThickZeroSetError
        If ``min |det G| < min |det F| / 2`` on the tube.
    """
    grid = scene_a.grid
    if not loop.closed or loop.anchor is None:
        raise PreconditionError("the loop must be closed and start at a boundary node")
    gamma = scene_a.gamma
    dn_a = dn_matrix(scene_a.operator(), gamma)
    dn_b = dn_matrix(scene_b.operator(), gamma)
    disc = dn_discrepancy(dn_a, dn_b)
    if not disc <= dn_tol:
        raise PreconditionError(f"DN matrices differ on Gamma: relative discrepancy {disc:.3e} > {dn_tol:.1e}")
    ext_a, ext_b = extend_scene(scene_a, scene_b, loop.anchor, pad)
    eg = ext_a.grid
    m = scene_a.conn.m
    op_a, op_b = ext_a.operator(), ext_b.operator()
    frame = runge_fit(op_a, loop, np.eye(m), ext_a.gamma, lam, N)
    if frame.min_singular_value < frame_threshold:
        raise DegenerateFrameError(
            f"frame degenerate along the loop: min singular value {frame.min_singular_value:.3e} < {frame_threshold:.1e}"
        )
    F = frame.sections
    G = solve_dirichlet(op_b, frame.data).u.u
    tube = _tube_mask(eg, loop, tube_radius)
    dF = np.abs(np.linalg.det(F[tube]))
    dG = np.abs(np.linalg.det(G[tube]))
    if dG.min() < 0.5 * dF.min():
        raise ThickZeroSetError(
            f"min |det G| = {dG.min():.3e} < min |det F| / 2 = {0.5 * dF.min():.3e} on the tube; refusing"
        )
    Gs = np.where(tube[..., None, None], G, np.eye(m))
    h = np.where(tube[..., None, None], F @ np.linalg.inv(Gs), np.eye(m))
    PA = parallel_transport(eg, ext_a.conn, loop, substeps, method=transport)
    PB = parallel_transport(eg, ext_b.conn, loop, substeps, method=transport)
    hp = interpolate(eg, h, loop.points[:1])[0]
    dist = float(np.linalg.norm(PA.P - hp @ PB.P @ np.linalg.inv(hp), 2))
    # h^* A - B on the tube core: lattice relation (exact for gauge-related links) and node formula
    core = scipy.ndimage.binary_erosion(tube, np.ones((3, 3)), border_value=0) & ~eg.boundary_mask()
    node_err, gerr = _quotient_certificates(eg, h, core, ext_a.conn, ext_b.conn)
    # h on the original boundary inside the tube
    orig_b = np.zeros(eg.shape, dtype=bool)
    axis, sign = SIDES[_outer_side(grid, loop.anchor)]
    ob = grid.boundary_mask()
    _, win = pad_grid(grid, _outer_side(grid, loop.anchor), pad)
    orig_b[win] = ob
    sel = orig_b & tube
    bid = float(np.linalg.norm(h[sel] - np.eye(m), axis=(-1, -2)).max()) if sel.any() else 0.0
    umd = float(np.abs(np.abs(np.linalg.det(h[tube])) - 1).max())
    return ReconstructionReport(
        gauge_error=gerr,
        boundary_identity_error=bid,
        unit_modulus_deviation=umd,
        zero_set={"min_det_F": float(dF.min()), "min_det_G": float(dG.min())},
        holonomy_a=_cplx(PA.P),
        holonomy_b=_cplx(PB.P),
        holonomy_distance=dist,
        discrepancies={
            "dn_gamma": disc,
            "gauge_error_nodes": node_err,
            "frame_residual": frame.residual,
            "frame_min_singular_value": frame.min_singular_value,
        },
        thresholds={"dn_tol": dn_tol, "lambda": lam, "N": N, "pad": pad, "tube_radius": tube_radius},
    )


def compose_transports(transports: Sequence[TransportMatrix], tol: float = 1e-9) -> TransportMatrix:
    """Transport along the concatenated path: ``P = P_n ... P_2 P_1``.

    Raises
    ------
    ValueError
        If the list is empty or the end of one transport is not the start of the next.
    """
    if not transports:
        raise ValueError("no transports to compose")
    P = transports[0].P.copy()
    for a, b in zip(transports[:-1], transports[1:]):
        d1 = a.end[0] - b.start[0]
        d2 = math.remainder(a.end[1] - b.start[1], 2 * math.pi)
        d2_plain = a.end[1] - b.start[1]
        if abs(d1) > tol or min(abs(d2), abs(d2_plain)) > tol:
            raise ValueError(f"anchor mismatch: segment ends at {a.end} but the next starts at {b.start}")
        P = b.P @ P
    return TransportMatrix(P, transports[0].start, transports[-1].end)
