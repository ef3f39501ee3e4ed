"""Command-line driver: scenario configs, task pipelines, reports, plots.

Subcommands
-----------
``run CONFIG``      execute the scenario's tasks and write reports.
``gen PRESET``      write a complete scenario config.
``plot INPUT``      render a field or boundary-trace file as SVG.
``compare A B``     discrepancy table between two run reports.

Exit codes: 0 all certificates pass, 1 certificate failure, 2 config error,
3 numerical error.  ``GAUGELAB_THREADS`` caps BLAS threads.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import math
import os
import sys
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from . import __version__
from .bundle_calculus import (
    ConnectionField,
    FieldError,
    PotentialField,
    SingularGaugeError,
    bump,
    connection_preset,
    gauge_pullback,
    parallel_transport,
    random_unitary_gauge,
)
from .elliptic_solver import SolverError, assemble, dn_discrepancy, dn_matrix
from .geometry import (
    BoundaryRegion,
    ChartGrid,
    GeometryError,
    build_grid,
    metric_preset,
    region_all,
    trace_curve,
)
from .reconstruction import (
    DegenerateFrameError,
    JetMismatchError,
    PreconditionError,
    ReconstructionError,
    Scene,
    ThickZeroSetError,
    extend_quotient,
    gauge_quotient,
    harmonic_gauge,
    modulus_components,
    recover_holonomy,
    runge_fit,
    window_data,
    zero_set_scan,
)
from .symbol_engine import (
    JetError,
    factorize,
    probe_leading_symbols,
    random_normalized_jet,
    recover_jet,
    recover_jet_surface,
    verify_factorization,
)
from .ym_forge import DivergedError, OptimizerConfig, minimize_ym

__all__ = [
    "ConfigError",
    "CertificateError",
    "TASKS",
    "DEFAULT_TOLERANCES",
    "ConnectionTerm",
    "Partner",
    "TaskParams",
    "Scenario",
    "PRESETS",
    "preset",
    "parse_region",
    "run_scenario",
    "main",
]

EXIT_OK, EXIT_CERT, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3

TASKS = ("ym-relax", "dn", "probe-symbols", "jet-roundtrip", "reconstruct", "holonomy", "runge")

DEFAULT_TOLERANCES = {
    "ym_residual": 1e-6,
    "dn_gauge": 1e-6,
    "dn_distinct": 1e-3,
    "probe_beta1": 0.03,
    "probe_beta0": 0.10,
    "gauge_error": 1e-3,
    "flagged_fraction": 0.01,
    "unit_modulus": 1e-4,
    "quotient_certificate": 1e-6,
    "holonomy_closed_form": 1e-8,
    "holonomy_distance": 1e-3,
    "runge_sigma": 0.1,
    "runge_residual": 1e-3,
}

NUMERICAL_ERRORS = (
    SolverError,
    SingularGaugeError,
    DegenerateFrameError,
    ThickZeroSetError,
    DivergedError,
    ArithmeticError,
    np.linalg.LinAlgError,
)


class ConfigError(ValueError):
    """Invalid scenario, preset, override or input file."""


class CertificateError(RuntimeError):
    """A task certificate failed."""


# ---------------------------------------------------------------------------
# scenario records


def _strict(cls, d: Any, where: str):
    """Build dataclass ``cls`` from a dict, rejecting unknown keys."""
    if not isinstance(d, dict):
        raise ConfigError(f"{where}: expected an object, got {type(d).__name__}")
    names = {f.name for f in dataclasses.fields(cls)}
    bad = sorted(set(d) - names)
    if bad:
        raise ConfigError(f"{where}: unknown keys {bad}")
    try:
        return cls(**d)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from None


@dataclass
class ConnectionTerm:
    """One summand of a connection: ``scale * bump * preset``.

    ``bump`` is ``[c1, c2, radius]`` for a smooth cut-off, or None.
    """

    preset: str
    scale: float = 1.0
    bump: Optional[List[float]] = None

    def __post_init__(self):
        if not isinstance(self.preset, str) or not self.preset:
            raise ConfigError("connection term needs a preset name")
        self.scale = float(self.scale)
        if self.bump is not None:
            if len(self.bump) != 3:
                raise ConfigError("bump must be [c1, c2, radius]")
            self.bump = [float(v) for v in self.bump]


@dataclass
class Partner:
    """Second connection ``B`` of a pair.

    ``kind="gauge"``: ``B = H^* A`` with ``H`` a random unitary gauge
    supported in a disc (``seed`` None means the scenario seed, ``center``
    None means the chart centre).  ``kind="connection"``: ``B`` from its own
    terms.
    """

    kind: str
    seed: Optional[int] = None
    amplitude: float = 2.0
    center: Optional[List[float]] = None
    radius: float = 0.3
    modes: int = 2
    connection: Optional[List[Any]] = None

    def __post_init__(self):
        if self.kind not in ("gauge", "connection"):
            raise ConfigError(f"partner kind must be 'gauge' or 'connection', got {self.kind!r}")
        if self.kind == "connection":
            if not self.connection:
                raise ConfigError("connection partner needs terms")
            self.connection = [
                t if isinstance(t, ConnectionTerm) else _strict(ConnectionTerm, t, "partner.connection[]")
                for t in self.connection
            ]


@dataclass
class TaskParams:
    """Per-task settings (every key optional in configs)."""

    dn_expect: str = "auto"
    probe_edge: str = "x2-"
    probe_frequencies: List[float] = field(default_factory=lambda: [3.0, 4.0, 5.0, 6.0, 8.0])
    probe_window: float = 0.4
    jet_dims: List[int] = field(default_factory=lambda: [3, 2])
    jet_m: int = 2
    jet_count: int = 20
    jet_verify_J: int = 2
    jet_depth: int = 3
    quotient_data: str = "window"
    ramp_cells: int = 4
    loop: Optional[List[List[float]]] = None
    holonomy_expect: str = "auto"
    holonomy_N: int = 24
    holonomy_pad: int = 4
    holonomy_lambda: float = 1e-8
    dn_tol: float = 1e-6
    runge_gamma: str = "edge:x1-"
    runge_curve: List[List[float]] = field(default_factory=lambda: [[0.3, 0.3], [0.3, 0.7]])
    runge_N: List[int] = field(default_factory=lambda: [4, 8, 16, 24])
    runge_lambda: float = 1e-8

    def __post_init__(self):
        if self.dn_expect not in ("auto", "equal", "distinct", "none"):
            raise ConfigError(f"dn_expect must be auto|equal|distinct|none, got {self.dn_expect!r}")
        if self.holonomy_expect not in ("auto", "recover", "refuse"):
            raise ConfigError(f"holonomy_expect must be auto|recover|refuse, got {self.holonomy_expect!r}")
        if self.quotient_data not in ("window", "fourier", "linear"):
            raise ConfigError(f"quotient_data must be window|fourier|linear, got {self.quotient_data!r}")
        if not self.runge_N or any(int(n) < 1 for n in self.runge_N):
            raise ConfigError("runge_N must be a non-empty list of positive sizes")


@dataclass
class Scenario:
    """Complete, hashable description of one run.

    The hash covers every field except ``name``, ``description`` and
    ``generated`` (provenance notes written by ``gen``).
    """

    name: str
    topology: str
    n1: int
    n2: int
    m: int
    connection: List[Any]
    tasks: List[str]
    metric: str = "flat"
    partner: Optional[Any] = None
    potential: str = "zero"
    gamma: str = "all"
    seed: int = 0
    tolerances: Dict[str, float] = field(default_factory=dict)
    optimizer: Dict[str, Any] = field(default_factory=dict)
    params: Any = field(default_factory=TaskParams)
    description: str = ""
    generated: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.topology not in ("rectangle", "annulus"):
            raise ConfigError(f"topology must be rectangle or annulus, got {self.topology!r}")
        for k in ("n1", "n2", "m", "seed"):
            v = getattr(self, k)
            if isinstance(v, bool) or not isinstance(v, int):
                raise ConfigError(f"{k} must be an integer")
        if self.m < 1:
            raise ConfigError("rank m must be >= 1")
        if self.n1 < 3 or self.n2 < 3:
            raise ConfigError(f"grid size ({self.n1}, {self.n2}) too small; both counts must be >= 3")
        if not self.connection:
            raise ConfigError("connection needs at least one term")
        self.connection = [
            t if isinstance(t, ConnectionTerm) else _strict(ConnectionTerm, t, "connection[]") for t in self.connection
        ]
        if self.partner is not None and not isinstance(self.partner, Partner):
            self.partner = _strict(Partner, self.partner, "partner")
        if not isinstance(self.params, TaskParams):
            self.params = _strict(TaskParams, self.params, "params")
        bad = [t for t in self.tasks if t not in TASKS]
        if bad or not self.tasks:
            raise ConfigError(f"unknown task(s) {bad}; known: {list(TASKS)}" if bad else "task list is empty")
        if len(set(self.tasks)) != len(self.tasks):
            raise ConfigError("duplicate tasks")
        badtol = sorted(set(self.tolerances) - set(DEFAULT_TOLERANCES))
        if badtol:
            raise ConfigError(f"unknown tolerance keys {badtol}")
        self.tolerances = {k: float(v) for k, v in self.tolerances.items()}
        try:
            OptimizerConfig.from_dict(self.optimizer)
        except ValueError as exc:
            raise ConfigError(f"optimizer: {exc}") from None

    # -- serialization

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        return _strict(cls, d, "scenario")

    @classmethod
    def load(cls, path: str) -> "Scenario":
        try:
            with open(path) as fh:
                d = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
        return cls.from_dict(d)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def semantic(self) -> dict:
        d = self.to_dict()
        for k in ("name", "description", "generated"):
            d.pop(k)
        return d

    @property
    def hash(self) -> str:
        text = json.dumps(self.semantic(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()

    def tol(self, key: str) -> float:
        return self.tolerances.get(key, DEFAULT_TOLERANCES[key])

    def ordered_tasks(self) -> List[str]:
        return [t for t in TASKS if t in self.tasks]


# ---------------------------------------------------------------------------
# presets


def _chart_center(topology: str) -> List[float]:
    return [0.5, math.pi] if topology == "annulus" else [0.5, 0.5]


def preset(spec: str) -> Scenario:
    """Scenario from a preset name (``name`` or ``name:seed``).

    Raises
    ------
    ConfigError
        For an empty or unknown name, or a bad seed.
    """
    spec = (spec or "").strip()
    if not spec:
        raise ConfigError("empty preset name")
    name, _, arg = spec.partition(":")
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; known: {sorted(PRESETS)}")
    try:
        seed = int(arg) if arg else 0
    except ValueError:
        raise ConfigError(f"preset seed must be an integer, got {arg!r}") from None
    return PRESETS[name](seed)


def _flat_square_m1(seed: int) -> Scenario:
    return Scenario(
        name="flat-square-m1",
        description="flat unit square, trivial line bundle, A = 0",
        topology="rectangle", n1=64, n2=64, m=1, seed=seed,
        connection=[ConnectionTerm("zero")],
        tasks=["dn", "probe-symbols"],
    )


def _gauge_pair(m: int):
    def make(seed: int) -> Scenario:
        return Scenario(
            name=f"gauge-pair-m{m}:{seed}",
            description="YM-relaxed A (constant curvature plus interior perturbation) and B = H^* A",
            topology="rectangle", n1=64, n2=64, m=m, seed=seed,
            connection=[
                ConnectionTerm("constant-curvature:0.5"),
                ConnectionTerm(f"random-smooth:{seed},1.0", 0.1, [0.5, 0.5, 0.45]),
            ],
            partner=Partner("gauge", amplitude=2.0),
            tasks=["ym-relax", "dn", "reconstruct"],
            params=TaskParams(quotient_data="window" if m > 1 else "fourier"),
        )

    return make


def _annulus_flat_holonomy(seed: int) -> Scenario:
    return Scenario(
        name="annulus-flat-holonomy",
        description="flat annulus connections with holonomy exp(-2 pi i alpha), alpha = 0.25 vs 0.3",
        topology="annulus", n1=64, n2=64, m=1, seed=seed,
        connection=[ConnectionTerm("flat-annulus:0.25")],
        partner=Partner("connection", connection=[ConnectionTerm("flat-annulus:0.3")]),
        tasks=["dn", "holonomy"],
        params=TaskParams(dn_expect="distinct", holonomy_expect="refuse"),
    )


def _annulus_gauge_holonomy(seed: int) -> Scenario:
    return Scenario(
        name=f"annulus-gauge-holonomy:{seed}",
        description="YM-relaxed annulus connection and an interior gauge transform of it",
        topology="annulus", n1=64, n2=64, m=1, seed=seed,
        connection=[
            ConnectionTerm("flat-annulus:0.25"),
            ConnectionTerm(f"random-smooth:{seed},1.0", 0.3, [0.5, math.pi, 0.45]),
        ],
        partner=Partner("gauge", amplitude=2.0, center=[0.5, math.pi], radius=0.3),
        tasks=["ym-relax", "dn", "holonomy"],
    )


def _probe_a1(seed: int) -> Scenario:
    return Scenario(
        name="probe-a1-m1",
        description="flat square, constant A = i 0.2 dx^1",
        topology="rectangle", n1=64, n2=64, m=1, seed=seed,
        connection=[ConnectionTerm("constant:0.2,0")],
        tasks=["dn", "probe-symbols"],
    )


def _runge_m2(seed: int) -> Scenario:
    return Scenario(
        name="runge-m2",
        description="Runge frame on x1 = 0.3 from data on the edge x1 = 0",
        topology="rectangle", n1=64, n2=64, m=2, seed=seed,
        connection=[ConnectionTerm("zero")],
        tasks=["runge"],
    )


def _jets(seed: int) -> Scenario:
    return Scenario(
        name="jets",
        description="exact factorization and boundary-determination on random normalized jets",
        topology="rectangle", n1=3, n2=3, m=2, seed=seed,
        connection=[ConnectionTerm("zero")],
        tasks=["jet-roundtrip"],
    )


def _ym_perturbed(seed: int) -> Scenario:
    return Scenario(
        name=f"ym-perturbed-flat:{seed}",
        description="flat start plus an interior band-limited perturbation of amplitude 0.1",
        topology="rectangle", n1=64, n2=64, m=2, seed=seed,
        connection=[ConnectionTerm(f"random-smooth:{seed},1.0", 0.1, [0.5, 0.5, 0.45])],
        tasks=["ym-relax"],
    )


PRESETS = {
    "flat-square-m1": _flat_square_m1,
    "gauge-pair-m1": _gauge_pair(1),
    "gauge-pair-m2": _gauge_pair(2),
    "annulus-flat-holonomy": _annulus_flat_holonomy,
    "annulus-gauge-holonomy": _annulus_gauge_holonomy,
    "probe-a1-m1": _probe_a1,
    "runge-m2": _runge_m2,
    "jets": _jets,
    "ym-perturbed-flat": _ym_perturbed,
}

SUITE = (
    "flat-square-m1",
    "probe-a1-m1",
    "gauge-pair-m1:0",
    "gauge-pair-m2:0",
    "annulus-flat-holonomy",
    "annulus-gauge-holonomy:1",
    "runge-m2",
    "jets",
    "ym-perturbed-flat:3",
)


# ---------------------------------------------------------------------------
# building fields


def parse_region(grid: ChartGrid, spec: str) -> BoundaryRegion:
    """``all``, ``sides:a,b`` (side labels) or ``edge:a,b`` (full edges, corners included)."""
    from .geometry import SIDES, region_sides

    spec = spec.strip()
    if spec == "all":
        return region_all(grid)
    kind, _, arg = spec.partition(":")
    labels = [s.strip() for s in arg.split(",") if s.strip()]
    if kind not in ("sides", "edge") or not labels or any(s not in SIDES for s in labels):
        raise ConfigError(f"bad region spec {spec!r}; use all, sides:x1-,... or edge:x1-,...")
    if kind == "sides":
        return region_sides(grid, labels).require_nonempty()
    bc = grid.boundary_coords()
    mask = np.zeros(grid.n_boundary, dtype=bool)
    ext = {0: (0.0, 1.0), 1: (grid.origin[1], grid.origin[1] + (grid.n2 - 1) * grid.h2)}
    for s in labels:
        axis, sign = SIDES[s]
        if grid.periodic and axis == 1:
            raise ConfigError("the annulus has no x2 edges")
        target = ext[axis][0 if sign < 0 else 1]
        mask |= np.abs(bc[:, axis] - target) < 1e-12
    return BoundaryRegion(grid, mask).require_nonempty()


def _connection(grid: ChartGrid, m: int, terms: List[ConnectionTerm]) -> ConnectionField:
    A = np.zeros((2,) + grid.shape + (m, m), dtype=complex)
    for t in terms:
        a = connection_preset(grid, m, t.preset).A
        if t.bump is not None:
            a = a * bump(grid, center=t.bump[:2], radius=t.bump[2])[None, ..., None, None]
        A = A + t.scale * a
    return ConnectionField(A)


def _potential(grid: ChartGrid, m: int, spec: str) -> Optional[PotentialField]:
    spec = spec.strip()
    if spec == "zero":
        return None
    if spec.startswith("constant:"):
        try:
            c = float(spec[len("constant:"):])
        except ValueError:
            raise ConfigError(f"bad potential {spec!r}") from None
        return PotentialField(np.broadcast_to(c * np.eye(m), grid.shape + (m, m)).copy())
    raise ConfigError(f"unknown potential {spec!r}; use zero or constant:c")


@dataclass(eq=False)
class Built:
    """Fields of a scenario after construction (and relaxation, if requested)."""

    grid: ChartGrid
    metric: Any
    A: ConnectionField
    B: Optional[ConnectionField]
    H: Optional[np.ndarray]
    potential: Optional[PotentialField]
    gamma: BoundaryRegion
    ym: Optional[Any] = None
    cache: Dict[str, Any] = field(default_factory=dict)


def build(scn: Scenario) -> Built:
    """Construct grid, metric, connections and region; relax ``A`` if ``ym-relax`` is a task.

    Config-level problems raise ConfigError.
    """
    try:
        grid = build_grid(scn.topology, scn.n1, scn.n2)
        metric = metric_preset(grid, scn.metric)
        A = _connection(grid, scn.m, scn.connection)
        pot = _potential(grid, scn.m, scn.potential)
        gamma = parse_region(grid, scn.gamma)
    except (GeometryError, FieldError) as exc:
        raise ConfigError(str(exc)) from None
    ym = None
    if "ym-relax" in scn.tasks:
        cfg = OptimizerConfig.from_dict({"tol": scn.tol("ym_residual"), **scn.optimizer})
        A, ym = minimize_ym(grid, metric, A, cfg)
    B = H = None
    p = scn.partner
    if p is not None:
        if p.kind == "gauge":
            seed = scn.seed if p.seed is None else p.seed
            center = p.center or _chart_center(scn.topology)
            Hf = random_unitary_gauge(grid, scn.m, seed, p.amplitude, center, p.radius, p.modes)
            if Hf.F[grid.boundary_mask()].size and np.abs(Hf.F[grid.boundary_mask()] - np.eye(scn.m)).max() > 1e-12:
                raise ConfigError("gauge partner is not the identity on the boundary; shrink its radius")
            B, H = gauge_pullback(grid, Hf, A), Hf.F
        else:
            try:
                B = _connection(grid, scn.m, p.connection)
            except FieldError as exc:
                raise ConfigError(str(exc)) from None
    return Built(grid, metric, A, B, H, pot, gamma, ym)


# ---------------------------------------------------------------------------
# report helpers


def _clean(x):
    """JSON-ready copy with floats at 12 significant digits (stable across runs)."""
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, np.ndarray):
        return _clean(x.tolist())
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        v = float(x)
        if not math.isfinite(v):
            return None
        return float(f"{v:.12g}")
    if isinstance(x, complex):
        return [_clean(x.real), _clean(x.imag)]
    return x


def _cmat(M) -> dict:
    M = np.asarray(M)
    return {"re": M.real.tolist(), "im": M.imag.tolist()}


def _write_json(path: str, obj: dict) -> None:
    with open(path, "w") as fh:
        fh.write(json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n")


def _header(kind: str, scn: Scenario) -> dict:
    return {"kind": kind, "schema": 1, "tool_version": __version__, "scenario_hash": scn.hash}


def _dn(b: Built, which: str, full: bool = False):
    key = f"dn_{which}_{'full' if full else 'gamma'}"
    if key not in b.cache:
        conn = b.A if which == "a" else b.B
        op = assemble(b.grid, b.metric, conn, b.potential)
        b.cache[key] = dn_matrix(op, region_all(b.grid) if full else b.gamma)
    return b.cache[key]


# ---------------------------------------------------------------------------
# tasks; each returns a dict with a boolean "passed"


def task_ym_relax(scn: Scenario, b: Built, out: str) -> dict:
    rep = b.ym
    E = np.asarray(rep.energies)
    monotone = bool(np.all(np.diff(E) <= 0))
    tol = scn.tol("ym_residual")
    trace = dict(rep.to_json(), **_header("energy-report", scn))
    _write_json(os.path.join(out, "ym_trace.json"), trace)
    return {
        "iterations": rep.iterations,
        "converged": rep.converged,
        "final_residual": rep.final_residual,
        "energy_initial": float(E[0]),
        "energy_final": float(E[-1]),
        "monotone": monotone,
        "threshold": tol,
        "passed": bool(rep.converged and rep.final_residual <= tol and monotone),
    }


def _dn_expectation(scn: Scenario) -> str:
    e = scn.params.dn_expect
    if e != "auto":
        return e
    if scn.partner is None:
        return "none"
    return "equal" if scn.partner.kind == "gauge" else "none"


def task_dn(scn: Scenario, b: Built, out: str) -> dict:
    da = _dn(b, "a")
    da.scenario_hash = scn.hash
    da.to_csv(os.path.join(out, "dn_a.csv"))
    M = da.matrix
    nrm = float(np.linalg.norm(M, 2))
    res = {
        "shape": list(M.shape),
        "norm": nrm,
        "hermitian_defect": float(np.linalg.norm(M - M.conj().T, 2) / nrm) if nrm else 0.0,
    }
    m = b.A.m
    pos = b.gamma.positions
    if b.B is not None:
        db = _dn(b, "b")
        db.scenario_hash = scn.hash
        db.to_csv(os.path.join(out, "dn_b.csv"))
        disc = dn_discrepancy(da, db)
        D = (db.matrix - M).reshape(len(pos), m, -1)
        per_node = np.linalg.norm(D, axis=(1, 2)) / (nrm or 1.0)
        res["discrepancy"] = disc
        trace_vals, label = per_node, "DN discrepancy per boundary node (relative row norm)"
    else:
        R = M.reshape(len(pos), m, -1)
        trace_vals, label = np.linalg.norm(R, axis=(1, 2)), "DN row norm per boundary node"
    _write_json(
        os.path.join(out, "dn_trace.json"),
        dict(
            _header("boundary-trace", scn),
            label=label,
            positions=pos.tolist(),
            nodes=b.gamma.nodes.tolist(),
            sides=[b.grid.boundary_sides[p] for p in pos],
            values=trace_vals,
        ),
    )
    expect = _dn_expectation(scn)
    res["expect"] = expect
    if expect == "equal":
        res["threshold"] = scn.tol("dn_gauge")
        res["passed"] = bool(res["discrepancy"] <= res["threshold"])
    elif expect == "distinct":
        res["threshold"] = scn.tol("dn_distinct")
        res["passed"] = bool(res["discrepancy"] > res["threshold"])
    else:
        res["passed"] = True
    return res


def task_probe(scn: Scenario, b: Built, out: str) -> dict:
    P = scn.params
    dn = _dn(b, "a", full=True)
    try:
        pr = probe_leading_symbols(dn, b.grid, P.probe_edge, P.probe_frequencies, P.probe_window)
    except JetError as exc:
        raise ConfigError(f"probe-symbols: {exc}") from None
    node = pr.center_node
    i, j = b.grid.node_ij(node)
    axis = 0 if P.probe_edge.startswith("x1") else 1
    t = 1 - axis  # tangential component index
    gtt = float(b.metric.g_inv[i, j, t, t])
    m = b.A.m
    beta1_exp = math.sqrt(gtt) * np.eye(m)
    beta0_exp = -1j * math.sqrt(gtt) * b.A.A[t, i, j]
    e1 = float(np.linalg.norm(pr.beta1 - beta1_exp, 2) / np.linalg.norm(beta1_exp, 2))
    n0 = float(np.linalg.norm(beta0_exp, 2))
    d0 = float(np.linalg.norm(pr.beta0 - beta0_exp, 2))
    e0 = d0 / n0 if n0 > 1e-12 else d0 / math.sqrt(gtt)
    return {
        "probe": pr.to_json(),
        "beta1_expected": _cmat(beta1_exp),
        "beta0_expected": _cmat(beta0_exp),
        "beta1_error": e1,
        "beta0_error": e0,
        "beta0_error_kind": "relative" if n0 > 1e-12 else "absolute",
        "thresholds": {"beta1": scn.tol("probe_beta1"), "beta0": scn.tol("probe_beta0")},
        "passed": bool(e1 <= scn.tol("probe_beta1") and e0 <= scn.tol("probe_beta0")),
    }


def task_jets(scn: Scenario, b: Built, out: str) -> dict:
    P = scn.params
    rows = []
    ok = True
    for n in P.jet_dims:
        for k in range(P.jet_count):
            seed = scn.seed + k
            row = {"n": n, "seed": seed}
            if n >= 3:
                jv = random_normalized_jet(n, P.jet_m, P.jet_verify_J + 1, seed)
                rep = verify_factorization(jv, factorize(jv, P.jet_verify_J))
                row["verify_leading_order"] = rep.leading_order
                row["verify_passes"] = rep.passes
                jet = random_normalized_jet(n, P.jet_m, P.jet_depth + 1, seed)
                tr = recover_jet(factorize(jet, P.jet_depth), n, P.jet_depth)
            else:
                jet = random_normalized_jet(n, P.jet_m, P.jet_depth + 1, seed, with_Q=False)
                tr = recover_jet_surface(factorize(jet, P.jet_depth), Q_declared_zero=True)
                row["verify_passes"] = True
            mism = tr.mismatches(jet)
            row["recovered_orders"] = tr.recovered_orders()
            row["mismatches"] = len(mism)
            row["unrecoverable"] = list(tr.unrecoverable)
            ok &= bool(row["verify_passes"]) and not mism
            rows.append(row)
    return {"jets": rows, "m": P.jet_m, "depth": P.jet_depth, "verify_J": P.jet_verify_J, "passed": bool(ok)}


def _quotient_data(scn: Scenario, b: Built):
    grid, m = b.grid, b.A.m
    kind = scn.params.quotient_data
    if kind == "window":
        data, V = window_data(grid, b.gamma, m, scn.params.ramp_cells)
        return data, V
    if m != 1:
        raise ConfigError(f"quotient_data={kind!r} needs m = 1")
    bc = grid.boundary_coords()
    s2 = bc[:, 1] / (2 * math.pi) if grid.periodic else bc[:, 1]
    if kind == "fourier":
        f = np.cos(2 * math.pi * bc[:, 0]) + 0.3 * np.sin(2 * math.pi * s2)
    else:
        f = bc[:, 0] - 0.5
    f = np.where(b.gamma.mask, f, 0.0)
    return f[:, None, None].astype(complex), b.gamma.mask.copy()


def task_reconstruct(scn: Scenario, b: Built, out: str) -> dict:
    if b.B is None:
        raise ConfigError("reconstruct needs a partner connection")
    grid = b.grid
    data, V = _quotient_data(scn, b)
    F = harmonic_gauge(assemble(grid, b.metric, b.A, b.potential), data)
    G = harmonic_gauge(assemble(grid, b.metric, b.B, b.potential), data)
    q = gauge_quotient(grid, F, G, conn_a=b.A, conn_b=b.B)
    detG = G.det()
    zs = zero_set_scan(grid, detG)
    h, link = extend_quotient(grid, q, zs, b.A, b.B)
    flagged = ~q.mask
    flagged.ravel()[zs.flagged] = True
    valid = ~flagged
    frac = float(flagged.mean())
    mod = np.abs(np.linalg.det(h))
    comps = modulus_components(grid, mod, valid)
    umd = float(np.abs(mod[valid] - 1).max()) if valid.any() else float("inf")
    res = {
        "pairs": int(data.shape[-1]) if scn.params.quotient_data == "window" else 1,
        "data": scn.params.quotient_data,
        "flagged_fraction": frac,
        "zero_set": zs.stats(),
        "unit_modulus_deviation": umd,
        "modulus_components": comps,
        "node_certificate": q.certificate,
        "link_certificate": link,
        "harmonic_residual": max(F.residual, G.residual),
    }
    on_v = h.reshape((-1,) + h.shape[2:])[grid.boundary_nodes[V]]
    res["boundary_identity_error"] = float(np.abs(on_v - np.eye(b.A.m)).max()) if on_v.size else 0.0
    ok = frac <= scn.tol("flagged_fraction") and link <= scn.tol("quotient_certificate")
    ok &= umd <= scn.tol("unit_modulus")
    if b.H is not None:
        err = np.abs(h - b.H).max(axis=(-1, -2))
        res["gauge_error"] = float(err[valid].max()) if valid.any() else float("inf")
        res["gauge_error_all_nodes"] = float(err.max())
        ok &= res["gauge_error"] <= scn.tol("gauge_error")
    res["thresholds"] = {
        k: scn.tol(k) for k in ("flagged_fraction", "quotient_certificate", "unit_modulus", "gauge_error")
    }
    res["passed"] = bool(ok)
    _write_json(
        os.path.join(out, "detG.json"),
        dict(
            _header("field", scn),
            label="|det G|",
            shape=list(grid.shape),
            values=np.abs(detG),
            flagged=np.flatnonzero(flagged.ravel()).tolist(),
        ),
    )
    return res


def _default_loop(grid: ChartGrid) -> List[List[float]]:
    i = (grid.n1 - 1) // 2
    r = i * grid.h1
    if grid.periodic:
        return [[1.0, 0.0], [r, 0.0], [r, 2 * math.pi], [1.0, 0.0 + 2 * math.pi]]
    j0, j1 = (grid.n2 - 1) // 4, 3 * (grid.n2 - 1) // 4
    y0, y1 = j0 * grid.h2, j1 * grid.h2
    return [[0.0, y0], [r, y0], [r, y1], [0.0, y1], [0.0, y0]]


def _closed_form(scn: Scenario, terms: List[ConnectionTerm], m: int, winding: int) -> Optional[np.ndarray]:
    if scn.topology != "annulus":
        return None
    alpha = 0.0
    for t in terms:
        name, _, arg = t.preset.partition(":")
        if t.preset == "zero":
            continue
        if name != "flat-annulus" or t.bump is not None:
            return None
        alpha += t.scale * float(arg)
    return np.diag(np.exp(-2j * math.pi * alpha * winding * np.arange(1, m + 1)))


def task_holonomy(scn: Scenario, b: Built, out: str) -> dict:
    grid = b.grid
    pts = scn.params.loop or _default_loop(grid)
    try:
        loop = trace_curve(grid, pts)
    except GeometryError as exc:
        raise ConfigError(f"holonomy loop: {exc}") from None
    res: Dict[str, Any] = {"loop": pts, "winding_number": loop.winding_number()}
    ok = True
    tol = scn.tol("holonomy_closed_form")
    res["threshold_closed_form"] = tol
    for label, conn, terms in (
        ("a", b.A, scn.connection),
        ("b", b.B, scn.partner.connection if scn.partner is not None and scn.partner.kind == "connection" else None),
    ):
        if conn is None:
            continue
        P = parallel_transport(grid, conn, loop, 2, method="auto").P
        res[f"direct_{label}"] = _cmat(P)
        if terms is not None and not (label == "a" and "ym-relax" in scn.tasks):
            cf = _closed_form(scn, terms, conn.m, loop.winding_number())
            if cf is not None:
                err = float(np.abs(P - cf).max())
                res[f"closed_form_{label}"] = _cmat(cf)
                res[f"closed_form_error_{label}"] = err
                ok &= err <= tol
    if b.B is not None:
        expect = scn.params.holonomy_expect
        if expect == "auto":
            expect = "recover" if scn.partner.kind == "gauge" else "refuse"
        res["expect"] = expect
        sa = Scene(grid, b.metric, b.A, b.potential, b.gamma)
        sb = Scene(grid, b.metric, b.B, b.potential, b.gamma)
        try:
            rep = recover_holonomy(
                sa, sb, loop, dn_tol=scn.params.dn_tol, pad=scn.params.holonomy_pad,
                N=scn.params.holonomy_N, lam=scn.params.holonomy_lambda,
            )
        except PreconditionError as exc:
            res["refused"] = True
            res["refusal"] = str(exc)
            ok &= expect == "refuse"
        except JetMismatchError as exc:
            res["refused"] = True
            res["refusal"] = str(exc)
            ok &= expect == "refuse"
        else:
            res["refused"] = False
            res["recovery"] = rep.to_json()
            res["threshold_distance"] = scn.tol("holonomy_distance")
            ok &= expect == "recover" and rep.holonomy_distance <= scn.tol("holonomy_distance")
    res["passed"] = bool(ok)
    return res


def task_runge(scn: Scenario, b: Built, out: str) -> dict:
    P = scn.params
    grid = b.grid
    region = parse_region(grid, P.runge_gamma)
    try:
        curve = trace_curve(grid, P.runge_curve)
    except GeometryError as exc:
        raise ConfigError(f"runge curve: {exc}") from None
    op = assemble(grid, b.metric, b.A, b.potential)
    m = b.A.m
    rows = []
    for N in P.runge_N:
        try:
            fr = runge_fit(op, curve, np.eye(m), region, P.runge_lambda, int(N))
        except ValueError as exc:
            if isinstance(exc, (GeometryError, FieldError)):
                raise
            raise ConfigError(f"runge: {exc}") from None
        rows.append({"N": int(N), "residual": fr.residual, "min_singular_value": fr.min_singular_value})
    resid = [r["residual"] for r in rows]
    monotone = bool(all(b_ <= a_ * (1 + 1e-9) + 1e-15 for a_, b_ in zip(resid[:-1], resid[1:])))
    bc = grid.boundary_coords()[region.mask]
    cp = curve.points
    dist = float(np.min(np.hypot(cp[:, None, 0] - bc[None, :, 0], cp[:, None, 1] - bc[None, :, 1])))
    last = rows[-1]
    ok = monotone and last["min_singular_value"] >= scn.tol("runge_sigma") and last["residual"] <= scn.tol("runge_residual")
    return {
        "fits": rows,
        "monotone": monotone,
        "curve_distance_to_gamma": dist,
        "lambda": P.runge_lambda,
        "thresholds": {"sigma": scn.tol("runge_sigma"), "residual": scn.tol("runge_residual")},
        "passed": bool(ok),
    }


TASK_FUNCS = {
    "ym-relax": task_ym_relax,
    "dn": task_dn,
    "probe-symbols": task_probe,
    "jet-roundtrip": task_jets,
    "reconstruct": task_reconstruct,
    "holonomy": task_holonomy,
    "runge": task_runge,
}


# ---------------------------------------------------------------------------
# run


def run_scenario(scn: Scenario, out: str) -> Tuple[int, dict]:
    """Build the scenario, execute its tasks in canonical order, write ``report.json``.

    Returns ``(exit_code, report)``.  Config errors raise ConfigError before
    anything is written.
    """
    os.makedirs(out, exist_ok=True)
    b = build(scn)
    with open(os.path.join(out, "scenario.json"), "w") as fh:
        fh.write(scn.dumps())
    tasks: List[dict] = []
    code = EXIT_OK
    for name in scn.ordered_tasks():
        try:
            r = TASK_FUNCS[name](scn, b, out)
        except ConfigError:
            raise
        except NUMERICAL_ERRORS + (ReconstructionError,) as exc:
            tasks.append({"task": name, "passed": False, "error": f"{type(exc).__name__}: {exc}"})
            code = EXIT_NUMERIC
            break
        r = dict(r, task=name)
        tasks.append(r)
        if not r["passed"] and code == EXIT_OK:
            code = EXIT_CERT
    report = dict(
        _header("run-report", scn),
        scenario=scn.to_dict(),
        tasks=tasks,
        passed=code == EXIT_OK,
        exit_code=code,
    )
    _write_json(os.path.join(out, "report.json"), report)
    return code, _clean(report)


def _apply_overrides(scn: Scenario, args) -> Scenario:
    d = scn.to_dict()
    if args.seed is not None:
        d["seed"] = args.seed
    for item in args.tol_override or []:
        key, sep, val = item.partition("=")
        if not sep or key not in DEFAULT_TOLERANCES:
            raise ConfigError(f"bad --tol-override {item!r}; keys: {sorted(DEFAULT_TOLERANCES)}")
        try:
            d["tolerances"][key] = float(val)
        except ValueError:
            raise ConfigError(f"--tol-override value is not a number: {item!r}") from None
    if args.tasks:
        d["tasks"] = [t.strip() for t in args.tasks.split(",") if t.strip()]
    return Scenario.from_dict(d)


def _threads():
    v = os.environ.get("GAUGELAB_THREADS")
    if v is None or v == "":
        return None
    try:
        n = int(v)
    except ValueError:
        n = 0
    if n < 1:
        raise ConfigError(f"GAUGELAB_THREADS must be a positive integer, got {v!r}")
    return n


def cmd_run(args) -> int:
    scn = _apply_overrides(Scenario.load(args.config), args)
    code, rep = run_scenario(scn, args.out)
    for t in rep["tasks"]:
        status = "PASS" if t["passed"] else "FAIL"
        extra = f" ({t['error']})" if "error" in t else ""
        print(f"{status} {t['task']}{extra}")
    print(f"report: {os.path.join(args.out, 'report.json')} hash {scn.hash[:12]} exit {code}")
    return code


def cmd_gen(args) -> int:
    scn = preset(args.preset)
    if scn.partner is not None or "ym-relax" in scn.tasks:
        # construct once so the written config is known to build and relax
        b = build(scn)
        if b.ym is not None:
            scn.generated["ym_iterations"] = b.ym.iterations
            scn.generated["ym_residual"] = float(f"{b.ym.final_residual:.6g}")
            scn.generated["ym_converged"] = b.ym.converged
        if b.H is not None:
            scn.generated["gauge_max_deviation_from_id"] = float(f"{np.abs(b.H - np.eye(scn.m)).max():.6g}")
    os.makedirs(args.out, exist_ok=True)
    fname = scn.name.replace(":", "_") + ".json"
    path = os.path.join(args.out, fname)
    with open(path, "w") as fh:
        fh.write(scn.dumps())
    print(path)
    return EXIT_OK


def _load_json(path: str) -> dict:
    try:
        with open(path) as fh:
            d = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from None
    if not isinstance(d, dict) or "kind" not in d:
        raise ConfigError(f"{path}: unrecognized schema (no 'kind')")
    return d


def render_svg(d: dict, path: str) -> None:
    """Heatmap (``field``) or line plot (``boundary-trace``, ``energy-report``) as SVG.

    Raises
    ------
    ConfigError
        For an unrecognized or inconsistent schema.
    """
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "gaugelab"
    plt.rcParams["svg.fonttype"] = "none"
    kind = d.get("kind")
    footer = f"scenario {d.get('scenario_hash', '?')}  gaugelab {d.get('tool_version', '?')}"
    fig, ax = plt.subplots(figsize=(6.4, 5.0))
    try:
        if kind == "field":
            try:
                V = np.asarray(d["values"], dtype=float)
                shape = tuple(d["shape"])
            except (KeyError, TypeError, ValueError) as exc:
                raise ConfigError(f"field file is malformed: {exc}") from None
            if V.shape != shape:
                raise ConfigError(f"field values have shape {V.shape}, declared {shape}")
            im = ax.imshow(V.T, origin="lower", cmap="viridis", aspect="auto")
            fig.colorbar(im, ax=ax, label=d.get("label", "value"))
            fl = np.asarray(d.get("flagged", []), dtype=int)
            if fl.size:
                i, j = np.divmod(fl, shape[1])
                ax.scatter(i, j, s=6, c="red", marker="x", label="flagged")
                ax.legend(loc="upper right")
            ax.set_xlabel("i (x1 index)")
            ax.set_ylabel("j (x2 index)")
        elif kind in ("boundary-trace", "energy-report"):
            if kind == "boundary-trace":
                try:
                    y = np.asarray(d["values"], dtype=float)
                    x = np.asarray(d.get("positions", range(len(y))), dtype=float)
                except (KeyError, TypeError, ValueError) as exc:
                    raise ConfigError(f"boundary-trace file is malformed: {exc}") from None
                xl = "boundary position (counterclockwise)"
            else:
                try:
                    y = np.asarray(d["energies"], dtype=float)
                except (KeyError, TypeError, ValueError) as exc:
                    raise ConfigError(f"energy report is malformed: {exc}") from None
                x = np.arange(len(y))
                xl = "iteration"
            if x.shape != y.shape:
                raise ConfigError("positions and values differ in length")
            pos = y[np.isfinite(y) & (y > 0)]
            sc = ax.scatter(x, y, c=y, s=8, cmap="viridis")
            ax.plot(x, y, lw=0.8, color="0.4")
            if pos.size and pos.max() > 100 * pos.min():
                ax.set_yscale("log")
            fig.colorbar(sc, ax=ax, label=d.get("label", "energy" if kind == "energy-report" else "value"))
            ax.set_xlabel(xl)
            ax.set_ylabel(d.get("label", "energy" if kind == "energy-report" else "value"))
        else:
            raise ConfigError(f"cannot plot schema kind {kind!r}")
        fig.text(0.01, 0.01, footer, fontsize=7, family="monospace")
        fig.savefig(path, format="svg", metadata={"Date": None})
    finally:
        plt.close(fig)


def cmd_plot(args) -> int:
    d = _load_json(args.input)
    os.makedirs(args.out, exist_ok=True)
    stem = os.path.splitext(os.path.basename(args.input))[0]
    path = os.path.join(args.out, stem + ".svg")
    render_svg(d, path)
    print(path)
    return EXIT_OK


def _leaves(d, prefix="") -> Dict[str, float]:
    out: Dict[str, float] = {}
    if isinstance(d, dict):
        for k in sorted(d):
            out.update(_leaves(d[k], f"{prefix}.{k}" if prefix else str(k)))
    elif isinstance(d, list):
        if isinstance(d, list) and len(d) > 64:
            return out
        for i, v in enumerate(d):
            out.update(_leaves(v, f"{prefix}[{i}]"))
    elif isinstance(d, bool):
        out[prefix] = float(d)
    elif isinstance(d, (int, float)):
        out[prefix] = float(d)
    return out


def compare_reports(a: dict, b: dict) -> List[Tuple[str, Optional[float], Optional[float], Optional[float]]]:
    """Rows ``(key, a, b, |a - b|)`` over numeric leaves of two run reports."""
    for d in (a, b):
        if d.get("kind") != "run-report":
            raise ConfigError(f"compare needs run reports, got kind {d.get('kind')!r}")

    def by_task(d):
        return {t["task"]: t for t in d.get("tasks", [])}

    la = _leaves({"tasks": by_task(a), "passed": a.get("passed")})
    lb = _leaves({"tasks": by_task(b), "passed": b.get("passed")})
    rows = []
    for k in sorted(set(la) | set(lb)):
        va, vb = la.get(k), lb.get(k)
        diff = abs(va - vb) if va is not None and vb is not None else None
        rows.append((k, va, vb, diff))
    return rows


def cmd_compare(args) -> int:
    a, b = _load_json(args.a), _load_json(args.b)
    rows = compare_reports(a, b)
    fmt = lambda v: "-" if v is None else f"{v:.6g}"  # noqa: E731
    w = max([len(r[0]) for r in rows] + [3])
    print(f"scenario a {a.get('scenario_hash', '?')[:12]}  b {b.get('scenario_hash', '?')[:12]}")
    print(f"{'key':<{w}}  {'a':>14}  {'b':>14}  {'|a-b|':>12}")
    for k, va, vb, d in rows:
        if args.all or d is None or d > 0:
            print(f"{k:<{w}}  {fmt(va):>14}  {fmt(vb):>14}  {fmt(d):>12}")
    ndiff = sum(1 for r in rows if r[3] is None or r[3] > 0)
    print(f"{ndiff} of {len(rows)} entries differ")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "compare.csv"), "w") as fh:
            fh.write("key,a,b,abs_diff\n")
            for k, va, vb, d in rows:
                fh.write(f"{k},{fmt(va)},{fmt(vb)},{fmt(d)}\n")
    return EXIT_OK


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gaugelab", description="Boundary inverse problems for Yang-Mills connections")
    p.add_argument("--version", action="version", version=f"gaugelab {__version__}")
    sub = p.add_subparsers(dest="cmd", required=True)
    r = sub.add_parser("run", help="run a scenario config")
    r.add_argument("config")
    r.add_argument("--out", default="out")
    r.add_argument("--seed", type=int, default=None)
    r.add_argument("--tol-override", action="append", metavar="KEY=VAL")
    r.add_argument("--tasks", metavar="LIST", help="comma-separated task subset")
    g = sub.add_parser("gen", help="write a preset scenario config")
    g.add_argument("preset")
    g.add_argument("--out", default=".")
    pl = sub.add_parser("plot", help="render a field or boundary-trace file as SVG")
    pl.add_argument("input")
    pl.add_argument("--out", default=".")
    c = sub.add_parser("compare", help="discrepancy table of two run reports")
    c.add_argument("a")
    c.add_argument("b")
    c.add_argument("--out", default=None)
    c.add_argument("--all", action="store_true", help="list equal entries too")
    return p


def main(argv: Optional[List[str]] = None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    cmds = {"run": cmd_run, "gen": cmd_gen, "plot": cmd_plot, "compare": cmd_compare}
    try:
        n = _threads()
        if n is None:
            return cmds[args.cmd](args)
        from threadpoolctl import threadpool_limits

        with threadpool_limits(limits=n):
            return cmds[args.cmd](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NUMERICAL_ERRORS + (ReconstructionError,) as exc:
        print(f"numerical error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
