"""Boundary symbols of the connection Laplacian.

Jet level (exact): the factorization recursion for the symbols ``b_j`` of the
first-order operator ``B`` with ``L = (D_n + iE - iB)(D_n + iB)`` modulo
smoothing, an independent verification of that factorization by the symbol
composition formula, and the inverse recursion recovering the Taylor series of
``(g, A, Q)`` at a boundary point from ``b_j``.

Numeric level: an estimate of the two leading symbols from a discrete
Dirichlet-to-Neumann matrix by oscillatory probing.

Conventions
-----------
Coordinates ``x = (x^1, .., x^{n-1}, x^n)`` are boundary normal coordinates at
the base point p = 0, ``x^n`` being the normal variable, with
``g^{nn} = 1``, ``g^{an} = 0`` and (after normalization) ``A_n = 0``.
A jet stores Taylor coefficients ``c_mu = d^mu f(p) / mu!``; tangential
indices are 0-based in code.
"""

from __future__ import annotations

import itertools
import json
import math
import random
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, List, Optional, Sequence, Tuple

import flint
import numpy as np

from ._exact import (
    Ring,
    Sym,
    mat_add,
    mat_is_zero,
    mat_map,
    mat_mul,
    mat_scalar,
    mat_scale,
    mat_sub,
    mat_sum,
    mat_zero,
    to_fmpq,
)

__all__ = [
    "JetError",
    "BoundaryJet",
    "SymbolTable",
    "ResidualReport",
    "RecoveryTrace",
    "flat_jet",
    "random_normalized_jet",
    "factorize",
    "verify_factorization",
    "recover_jet",
    "recover_jet_surface",
    "probe_leading_symbols",
    "ProbeResult",
    "DEFAULT_FREQUENCIES",
]

MAX_J = 4
MAX_K = 5

Poly = Dict[Tuple[int, ...], Tuple[Fraction, Fraction]]


class JetError(ValueError):
    """Invalid jet, depth or dimension for the requested operation."""


# ---------------------------------------------------------------------------
# jets


def _poly_trunc(p: Poly, order: int) -> Poly:
    return {mu: c for mu, c in p.items() if sum(mu) <= order and (c[0] != 0 or c[1] != 0)}


def _poly_mul(p: Poly, q: Poly, order: int) -> Poly:
    out: Poly = {}
    for mu, (a, b) in p.items():
        for nu, (c, d) in q.items():
            k = tuple(i + j for i, j in zip(mu, nu))
            if sum(k) > order:
                continue
            re, im = out.get(k, (Fraction(0), Fraction(0)))
            out[k] = (re + a * c - b * d, im + a * d + b * c)
    return _poly_trunc(out, order)


def _poly_add(p: Poly, q: Poly, s: Fraction = Fraction(1)) -> Poly:
    out = dict(p)
    for k, (c, d) in q.items():
        re, im = out.get(k, (Fraction(0), Fraction(0)))
        out[k] = (re + s * c, im + s * d)
    return {k: v for k, v in out.items() if v[0] != 0 or v[1] != 0}


def _poly_const(c, n: int) -> Poly:
    c = c if isinstance(c, tuple) else (Fraction(c), Fraction(0))
    return {(0,) * n: (Fraction(c[0]), Fraction(c[1]))} if (c[0] or c[1]) else {}


@dataclass(frozen=True)
class BoundaryJet:
    """Taylor data of a normalized triple (g, A, Q) at a boundary point.

    Attributes
    ----------
    n, m : int
        Dimension and bundle rank.
    K : int
        Normal depth; every field is a polynomial of total degree at most K,
        so the coefficient of ``(x^n)^j`` carries ``K - j`` tangential orders.
    g_inv : tuple
        ``(n-1)x(n-1)`` nested tuple of polynomials for ``g^{ab}``.
    A : tuple
        ``n-1`` tangential components, each an ``m x m`` nested tuple of
        polynomials.
    Q : tuple
        ``m x m`` nested tuple of polynomials.
    base_point : tuple
        Chart label of p (informational).
    """

    n: int
    m: int
    K: int
    g_inv: tuple
    A: tuple
    Q: tuple
    base_point: tuple = ()

    def __post_init__(self):
        if self.n < 2:
            raise JetError("dimension must be at least 2")
        if self.K < 1 or self.K > MAX_K + 1:
            raise JetError(f"jet depth K={self.K} outside [1, {MAX_K + 1}]")
        g0 = self.metric_at_base()
        if np.any(np.linalg.eigvalsh(g0) <= 0):
            raise JetError("g^{ab}(p) is not positive definite")

    @property
    def cond_A(self) -> bool:
        return True  # A_n is structurally absent

    def metric_at_base(self) -> np.ndarray:
        z = (0,) * self.n
        return np.array([[float(self.g_inv[a][b].get(z, (0, 0))[0]) for b in range(self.n - 1)] for a in range(self.n - 1)])

    def cond_g(self) -> bool:
        """Check d_n^j (g_ab d_n g^ab) = 0 at x^n = 0 for 1 <= j <= K-1, exactly."""
        R = Ring(self.n, _base_matrix(self), self.K)
        fields = _jet_fields(self, R)
        S1 = _mean_curvature_series(fields, R)
        cur = S1
        for j in range(1, self.K):
            cur = cur.dx(self.n - 1)
            if not cur.restrict_normal().is_zero():
                return False
        return True

    def normal_coefficient(self, name: str, j: int, index=()) -> complex:
        """``d_n^j`` of a stored field at p, e.g. ``('A', 2, (0, 1, 1))``."""
        src = {"g": self.g_inv, "A": self.A, "Q": self.Q}[name]
        p = src
        for i in index:
            p = p[i]
        mu = (0,) * (self.n - 1) + (j,)
        re, im = p.get(mu, (Fraction(0), Fraction(0)))
        return complex(float(re), float(im)) * math.factorial(j)

    # -- serialization --------------------------------------------------
    def to_json(self) -> str:
        def enc(p: Poly):
            return [[list(mu), str(c[0]), str(c[1])] for mu, c in sorted(p.items())]

        def enc_nested(x):
            if isinstance(x, dict):
                return enc(x)
            return [enc_nested(y) for y in x]

        doc = {
            "kind": "boundary-jet",
            "schema": 1,
            "conventions": {
                "coordinates": "x^1..x^(n-1) tangential, x^n normal; base point at 0",
                "coefficients": "Taylor coefficients d^mu f(p)/mu!",
                "indices": "alpha, beta range over 1..n-1 (stored 0-based); j is the normal order",
                "entries": "[multi-index, real part, imaginary part] as exact rationals",
            },
            "n": self.n,
            "m": self.m,
            "K": self.K,
            "base_point": list(self.base_point),
            "g_inv": enc_nested(self.g_inv),
            "A": enc_nested(self.A),
            "Q": enc_nested(self.Q),
        }
        return json.dumps(doc, indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "BoundaryJet":
        doc = json.loads(text)
        if doc.get("kind") != "boundary-jet":
            raise JetError("not a boundary-jet document")

        def dec(lst):
            return {tuple(mu): (Fraction(re), Fraction(im)) for mu, re, im in lst}

        def dec_nested(x, depth):
            if depth == 0:
                return dec(x)
            return tuple(dec_nested(y, depth - 1) for y in x)

        return cls(
            n=doc["n"],
            m=doc["m"],
            K=doc["K"],
            g_inv=dec_nested(doc["g_inv"], 2),
            A=dec_nested(doc["A"], 3),
            Q=dec_nested(doc["Q"], 2),
            base_point=tuple(doc.get("base_point", ())),
        )


def _base_matrix(jet: BoundaryJet):
    z = (0,) * jet.n
    return [[jet.g_inv[a][b].get(z, (Fraction(0), Fraction(0)))[0] for b in range(jet.n - 1)] for a in range(jet.n - 1)]


def flat_jet(n: int, m: int, K: int, A_const: Optional[Sequence] = None) -> BoundaryJet:
    """Euclidean metric and Q = 0; optional constant tangential potentials.

    ``A_const[a]`` is an m x m array of Gaussian rationals ``(re, im)``.
    """
    z = (0,) * n
    g = tuple(tuple(({z: (Fraction(1), Fraction(0))} if a == b else {}) for b in range(n - 1)) for a in range(n - 1))
    A = []
    for a in range(n - 1):
        rows = []
        for i in range(m):
            row = []
            for j in range(m):
                c = A_const[a][i][j] if A_const is not None else (0, 0)
                row.append(_poly_const(c, n))
            rows.append(tuple(row))
        A.append(tuple(rows))
    Q = tuple(tuple({} for _ in range(m)) for _ in range(m))
    return BoundaryJet(n=n, m=m, K=K, g_inv=g, A=tuple(A), Q=Q)


def _monomials(n: int, order: int):
    for d in range(order + 1):
        for mu in itertools.product(range(d + 1), repeat=n):
            if sum(mu) == d:
                yield mu


def _rand_frac(rng: random.Random, num: int = 3, dens=(1, 2, 3)) -> Fraction:
    return Fraction(rng.randint(-num, num), rng.choice(dens))


def random_normalized_jet(n: int, m: int, K: int, seed: int, with_Q: bool = True, degree: Optional[int] = None) -> BoundaryJet:
    """Random jet satisfying both normalization conditions exactly.

    The inverse metric is ``sigma * R P0 R^T`` with ``R`` unipotent (so
    ``det R = 1``), ``P0 = P0(x')`` symmetric positive definite at p, and
    ``sigma = exp(c(x') x^n / (n-1))`` Taylor-truncated; then
    ``g_ab d_n g^ab = c(x')`` has vanishing normal derivatives.  For n = 2 the
    base value of ``g^{11}`` is a non-square rational.

    ``degree`` caps the polynomial degree of the random ingredients.
    """
    if n < 2:
        raise JetError("dimension must be at least 2")
    rng = random.Random(seed)
    deg = K if degree is None else min(degree, K)
    d = n - 1
    z = (0,) * n
    tang = [mu for mu in _monomials(n, deg) if mu[-1] == 0]
    allm = list(_monomials(n, deg))

    def rpoly(monos, skip_const=False, scale=Fraction(1)):
        p = {}
        for mu in monos:
            if skip_const and sum(mu) == 0:
                continue
            c = _rand_frac(rng) * scale
            if c:
                p[mu] = (c, Fraction(0))
        return p

    def cpoly(monos):
        p = {}
        for mu in monos:
            re, im = _rand_frac(rng), _rand_frac(rng)
            if re or im:
                p[mu] = (re, im)
        return p

    # P0(x') SPD at p
    if d == 1:
        base = rng.choice([Fraction(2), Fraction(3), Fraction(5), Fraction(2, 3), Fraction(7, 2)])
        P0 = [[_poly_add(_poly_const(base, n), rpoly(tang, skip_const=True, scale=Fraction(1, 4)))]]
    else:
        while True:
            B = [[rng.randint(-2, 2) for _ in range(d)] for _ in range(d)]
            M0 = [[Fraction(sum(B[i][k] * B[j][k] for k in range(d))) + (1 if i == j else 0) for j in range(d)] for i in range(d)]
            if np.all(np.linalg.eigvalsh(np.array(M0, dtype=float)) > 0.2):
                break
        P0 = [[None] * d for _ in range(d)]
        for a in range(d):
            for b in range(a, d):
                p = _poly_add(_poly_const(M0[a][b], n), rpoly(tang, skip_const=True, scale=Fraction(1, 4)))
                P0[a][b] = p
                P0[b][a] = p
    # unipotent R(x)
    Rm = [[_poly_const(1 if a == b else 0, n) for b in range(d)] for a in range(d)]
    for a in range(d):
        for b in range(a + 1, d):
            Rm[a][b] = rpoly(allm, scale=Fraction(1, 2))
    # sigma = exp(c(x') x^n / (n-1))
    c = rpoly(tang, scale=Fraction(1, 2))
    arg = _poly_mul(c, {tuple([0] * (n - 1) + [1]): (Fraction(1, d), Fraction(0))}, K)
    sigma = _poly_const(1, n)
    term = _poly_const(1, n)
    for k in range(1, K + 1):
        term = _poly_mul(term, arg, K)
        term = {mu: (v[0] / k, v[1] / k) for mu, v in term.items()}
        sigma = _poly_add(sigma, term)
    # G = sigma R P0 R^T
    RP = [[{} for _ in range(d)] for _ in range(d)]
    for a in range(d):
        for b in range(d):
            acc = {}
            for k in range(d):
                acc = _poly_add(acc, _poly_mul(Rm[a][k], P0[k][b], K))
            RP[a][b] = acc
    G = [[{} for _ in range(d)] for _ in range(d)]
    for a in range(d):
        for b in range(d):
            acc = {}
            for k in range(d):
                acc = _poly_add(acc, _poly_mul(RP[a][k], Rm[b][k], K))
            G[a][b] = _poly_mul(sigma, acc, K)
    # symmetrize exactly (it already is, up to representation)
    g_inv = tuple(tuple(G[a][b] if a <= b else G[b][a] for b in range(d)) for a in range(d))

    A = []
    for _ in range(d):
        X = [[cpoly(allm) for _ in range(m)] for _ in range(m)]
        comp = []
        for i in range(m):
            row = []
            for j in range(m):
                xij = X[i][j]
                xji = X[j][i]
                conj = {mu: (v[0], -v[1]) for mu, v in xji.items()}
                row.append(_poly_trunc(_poly_add(xij, conj, Fraction(-1)), K))
            comp.append(tuple(row))
        A.append(tuple(comp))
    if with_Q:
        Y = [[cpoly(allm) for _ in range(m)] for _ in range(m)]
        Q = []
        for i in range(m):
            row = []
            for j in range(m):
                conj = {mu: (v[0], -v[1]) for mu, v in Y[j][i].items()}
                row.append(_poly_trunc(_poly_add(Y[i][j], conj), K))
            Q.append(tuple(row))
        Q = tuple(Q)
    else:
        Q = tuple(tuple({} for _ in range(m)) for _ in range(m))
    return BoundaryJet(n=n, m=m, K=K, g_inv=g_inv, A=tuple(A), Q=Q, base_point=tuple([0] * n))


# ---------------------------------------------------------------------------
# fields as series


@dataclass
class _Fields:
    """Jet fields as exact series plus derived geometric quantities."""

    n: int
    m: int
    G: list  # (n-1)x(n-1) Sym, g^{ab}
    A: list  # n-1 object arrays m x m
    Q: np.ndarray
    Delta: Sym = None
    invDelta: Sym = None
    dlog: list = None  # d_k log|g|, k = 0..n-1
    E: Sym = None


def _jet_fields(jet: BoundaryJet, R: Ring) -> _Fields:
    n, m = jet.n, jet.m
    G = [[R.from_taylor(jet.g_inv[a][b]) for b in range(n - 1)] for a in range(n - 1)]
    A = []
    for a in range(n - 1):
        arr = np.empty((m, m), dtype=object)
        for i in range(m):
            for j in range(m):
                arr[i, j] = R.from_taylor(jet.A[a][i][j])
        A.append(arr)
    Q = np.empty((m, m), dtype=object)
    for i in range(m):
        for j in range(m):
            Q[i, j] = R.from_taylor(jet.Q[i][j])
    return _Fields(n, m, G, A, Q)


def _det(M: list) -> Sym:
    k = len(M)
    if k == 1:
        return M[0][0]
    if k == 2:
        return M[0][0] * M[1][1] - M[0][1] * M[1][0]
    acc = None
    for j in range(k):
        minor = [row[:j] + row[j + 1 :] for row in M[1:]]
        t = M[0][j] * _det(minor)
        if j % 2:
            t = -t
        acc = t if acc is None else acc + t
    return acc


def _series_inverse(s: Sym) -> Sym:
    """1/s for an x-series with nonzero rational constant term (no xi, rho)."""
    R = s.R
    c0 = _constant_term(s)
    if c0 == 0:
        raise JetError("series with vanishing constant term is not invertible")
    inv0 = 1 / c0
    delta = s - R.const(c0)
    out = R.const(inv0, o=s.o)
    term = R.const(inv0, o=s.o)
    for _ in range(s.o):
        term = -(term * delta) * inv0
        if term.is_zero():
            break
        out = out + term
    return out


def _constant_term(s: Sym) -> flint.fmpq:
    """Rational constant (x-degree 0, no covector, real) coefficient."""
    R = s.R
    z = (0,) * R.nvars
    if s.M != 0:
        raise JetError("constant term requested from a covector-dependent element")
    return s.P.to_dict().get(z, flint.fmpq(0))


def _derived(F: _Fields, R: Ring) -> _Fields:
    n = F.n
    F.Delta = _det(F.G)
    F.invDelta = _series_inverse(F.Delta)
    # log|g| = -log det(g^{ab})
    F.dlog = [-(F.Delta.dx(k) * F.invDelta) for k in range(n)]
    F.E = (F.Delta.dx(n - 1) * F.invDelta) * Fraction(1, 2)
    return F


def _mean_curvature_series(F: _Fields, R: Ring) -> Sym:
    """S_1 = g_ab d_n g^ab = d_n log det(g^ab)."""
    D = _det(F.G)
    return D.dx(F.n - 1) * _series_inverse(D)


def _sqrt_series(q: Sym, inverse: bool = False) -> Sym:
    """sqrt(q) (or 1/sqrt(q)) for q = q0 + delta, delta of positive x-degree."""
    R = q.R
    q0 = Sym(R, R.q0 + 0, 0, q.o)
    delta = q - q0
    power = flint.fmpq(-1, 2) if inverse else flint.fmpq(1, 2)
    out = None
    term = Sym(R, R.one_poly() + 0, 0, q.o)
    coef = flint.fmpq(1)
    for k in range(0, q.o + 1):
        if k > 0:
            coef = coef * (power - (k - 1)) / k
            term = (term * delta).div_q0(1)
            if term.is_zero():
                break
        t = term * coef
        out = t if out is None else out + t
    # multiply by rho (sqrt) or rho / q0 (inverse)
    out = out.times_rho()
    if inverse:
        out = out.div_q0(1)
    return out


# ---------------------------------------------------------------------------
# symbol table


@dataclass
class SymbolTable:
    """Symbols ``b_1, b_0, .., b_{1-J}`` and auxiliary quantities.

    ``b[j]`` is an m x m object array of :class:`Sym` restricted to the
    boundary ``x^n = 0`` (Taylor series in x'), with covector dependence as
    polynomials in ``xi'`` and ``rho = sqrt(q2(p, xi'))`` over powers of
    ``q2(p, xi')``.  ``full`` holds the same symbols before restriction, when
    they were produced from a jet.
    """

    n: int
    m: int
    J: int
    ring: Ring
    b: Dict[int, np.ndarray]
    E: Optional[Sym] = None
    q1: Optional[Sym] = None
    q2: Optional[Sym] = None
    G: Optional[np.ndarray] = None
    full: Optional[Dict[int, np.ndarray]] = None

    def orders(self) -> List[int]:
        return list(range(1, 1 - self.J - 1, -1))

    def check_b1(self) -> bool:
        """b_1 = -sqrt(q2) Id, exactly."""
        b1 = self.b[1]
        s = b1[0, 0]
        # (b1)^2 must reproduce q2 on the diagonal and vanish off it
        for i in range(self.m):
            for j in range(self.m):
                e = b1[i, j]
                if i != j and not e.is_zero():
                    return False
                if i == j and not (e - s).is_zero():
                    return False
        if self.q2 is not None:
            q2b = self.q2.restrict_normal()
            if not ((s * s) - q2b).is_zero():
                return False
        return True

    def check_homogeneity(self) -> bool:
        """b_j(2 xi') = 2^j b_j(xi') for every stored j, exactly."""
        for j, bj in self.b.items():
            for e in bj.flat:
                lhs = e.scale_xi(2)
                rhs = e * (Fraction(2) ** j)
                if not (lhs - rhs).is_zero():
                    return False
        return True

    def evaluate(self, j: int, xi: Sequence[float], x: Optional[Sequence[float]] = None) -> np.ndarray:
        """Numeric m x m value of ``b_j`` at covector ``xi'`` (boundary point offset x')."""
        bj = self.b[j]
        xx = None if x is None else list(x) + [0.0] * (self.n - len(x))
        return np.array([[bj[i, k].evaluate(xi, xx) for k in range(self.m)] for i in range(self.m)])

    def to_json(self) -> str:
        R = self.ring

        def enc(s: Sym):
            terms = []
            for (mu, xe, re), (a, b) in sorted(s.taylor().items()):
                terms.append([[int(v) for v in mu], [int(v) for v in xe[: self.n - 1]], int(re), str(a), str(b)])
            return {"q2_power": int(s.M), "valid_order": int(s.o), "terms": terms}

        doc = {
            "kind": "symbol-table",
            "schema": 1,
            "basis": "sum c * x^mu * xi^e * rho^r / q2(p,xi)^q2_power, rho = sqrt(q2(p,xi)); "
            "entries [mu, e, r, re(c), im(c)]",
            "n": self.n,
            "m": self.m,
            "J": self.J,
            "q2_base": [[str(R.g0[a][b]) for b in range(self.n - 1)] for a in range(self.n - 1)],
            "b": {str(j): [[enc(bj[i, k]) for k in range(self.m)] for i in range(self.m)] for j, bj in sorted(self.b.items())},
        }
        return json.dumps(doc, indent=1, sort_keys=True)


def _multi_indices(dim: int, order: int):
    for mu in itertools.product(range(order + 1), repeat=dim):
        if sum(mu) == order:
            yield mu


def _mi_factorial(mu) -> int:
    out = 1
    for k in mu:
        out *= math.factorial(k)
    return out


class _DerivCache:
    """Memoized mixed xi- and x-derivatives of matrix symbols."""

    def __init__(self):
        self._xi = {}
        self._x = {}

    def dxi(self, key, arr: np.ndarray, K: tuple) -> np.ndarray:
        k = (key, K)
        if k in self._xi:
            return self._xi[k]
        if sum(K) == 0:
            res = arr
        else:
            a = next(i for i, v in enumerate(K) if v > 0)
            K1 = list(K)
            K1[a] -= 1
            prev = self.dxi(key, arr, tuple(K1))
            res = mat_map(lambda e: e.dxi(a), prev)
        self._xi[k] = res
        return res

    def Dx(self, key, arr: np.ndarray, K: tuple) -> np.ndarray:
        """(-i d_x)^K."""
        k = (key, K)
        if k in self._x:
            return self._x[k]
        if sum(K) == 0:
            res = arr
        else:
            a = next(i for i, v in enumerate(K) if v > 0)
            K1 = list(K)
            K1[a] -= 1
            prev = self.Dx(key, arr, tuple(K1))
            res = mat_map(lambda e: -(e.dx(a).times_i()), prev)
        self._x[k] = res
        return res


def _forward(F: _Fields, R: Ring, J: int):
    """Run the factorization recursion; returns full symbols and auxiliaries."""
    n, m = F.n, F.m
    d = n - 1
    G = F.G
    xis = [R.xi_sym(a) for a in range(d)]
    q2 = mat_sum_scalar(G[a][b] * (xis[a] * xis[b]) for a in range(d) for b in range(d))
    q1_inner = mat_sum_scalar(
        (G[a][b] * F.dlog[a]) * Fraction(1, 2) * xis[b] + G[a][b].dx(a) * xis[b] for a in range(d) for b in range(d)
    )
    q1 = -(q1_inner.times_i())
    # d*A with A_n = 0 and g^{an} = 0
    gA = []  # g^{al} A_l
    for a in range(d):
        gA.append(mat_sum(mat_scale(G[a][l], F.A[l]) for l in range(d)))
    dstarA = mat_sum(
        mat_add(mat_map(lambda e, a=a: -e.dx(a), gA[a]), mat_scale(F.dlog[a] * Fraction(-1, 2), gA[a])) for a in range(d)
    )
    AA = mat_sum(mat_scale(G[a][b], mat_mul(F.A[a], F.A[b])) for a in range(d) for b in range(d))
    Gterm = mat_add(mat_sub(dstarA, AA), F.Q)
    gAxi = mat_sum(mat_scale(xis[b], gA[b]) for b in range(d))

    sqrtq = _sqrt_series(q2)
    half_inv = _sqrt_series(q2, inverse=True) * Fraction(1, 2)
    b = {1: mat_scalar(-sqrtq, m)}
    cache = _DerivCache()
    for dd in range(1, 2 - J - 1, -1):
        # equation of homogeneity degree dd determines b_{dd-1}
        terms = [mat_map(lambda e: e.dx(n - 1), b[dd]), mat_scale(-F.E, b[dd])]
        if dd == 1:
            terms.append(mat_scalar(-q1, m))
            terms.append(mat_map(lambda e: e.times_i() * 2, gAxi))
        if dd == 0:
            terms.append(mat_map(lambda e: -e, Gterm))
        for j in range(dd, 2):
            for k in range(dd, 2):
                order = j + k - dd
                if order < 0:
                    continue
                for K in _multi_indices(d, order):
                    lhs = cache.dxi(j, b[j], K)
                    rhs = cache.Dx(k, b[k], K)
                    if mat_is_zero(lhs) or mat_is_zero(rhs):
                        continue
                    prod = mat_mul(lhs, rhs)
                    fK = _mi_factorial(K)
                    if fK != 1:
                        prod = mat_map(lambda e: e * Fraction(1, fK), prod)
                    terms.append(prod)
        rest = mat_sum(terms)
        b[dd - 1] = mat_map(lambda e: (half_inv * e).normalize(), rest)
    return b, q1, q2, Gterm


def mat_sum_scalar(it) -> Sym:
    acc = None
    for s in it:
        acc = s if acc is None else acc + s
    return acc


def factorize(jet: BoundaryJet, J: int) -> SymbolTable:
    """Symbols b_1 .. b_{1-J} of the boundary factorization, exactly.

    Parameters
    ----------
    jet : BoundaryJet
        Normalized jet with depth ``K >= J + 1``.
    J : int
        Number of symbols, ``1 <= J <= 4``.
    """
    if J < 1 or J > MAX_J:
        raise JetError(f"depth J={J} outside [1, {MAX_J}]")
    if jet.K < J + 1:
        raise JetError(f"insufficient jet depth: K={jet.K} < J+1={J + 1}")
    R = Ring(jet.n, _base_matrix(jet), jet.K)
    F = _derived(_jet_fields(jet, R), R)
    full, q1, q2, Gterm = _forward(F, R, J)
    bnd = {j: mat_map(lambda e: e.restrict_normal(), v) for j, v in full.items()}
    return SymbolTable(n=jet.n, m=jet.m, J=J, ring=R, b=bnd, E=F.E, q1=q1, q2=q2, G=Gterm, full=full)


# ---------------------------------------------------------------------------
# verification by symbol composition


@dataclass
class ResidualReport:
    """Outcome of composing the two factors against the operator symbol.

    Attributes
    ----------
    leading_order : int or None
        Homogeneity degree of the highest nonzero residual piece among the
        computed degrees, ``None`` if every computed piece vanishes.
    computed_orders : list of int
        Degrees that were examined (from 2 down to ``floor``).
    nonzero_orders : list of int
    passes : bool
        ``leading_order`` is ``None`` or at most ``1 - J``.
    """

    J: int
    leading_order: Optional[int]
    computed_orders: List[int]
    nonzero_orders: List[int]
    passes: bool


def _operator_symbol(F: _Fields, R: Ring) -> Dict[int, np.ndarray]:
    """Full symbol of d_A* d_A + Q split by homogeneity, from the definition.

    With ``w^v = g^{vl} (i xi_l + A_l)`` acting on ``e^{i x.xi}``:
    ``sigma = -d_v w^v - 1/2 d_v log|g| w^v - i xi_v w^v - A_v w^v + Q``.
    """
    n, m = F.n, F.m
    d = n - 1
    xis = [R.xi_sym(a) for a in range(n)]
    # full inverse metric, block diagonal with g^{nn} = 1; A_n = 0
    ginv = [[None] * n for _ in range(n)]
    for a in range(n):
        for b in range(n):
            if a < d and b < d:
                ginv[a][b] = F.G[a][b]
            else:
                ginv[a][b] = R.const(1 if a == b else 0)
    Afull = list(F.A) + [mat_zero(R, m)]
    # w^v split: degree 1 part (scalar times Id) and degree 0 part (matrix)
    w1 = [mat_sum_scalar(ginv[v][l] * xis[l] for l in range(n)).times_i() for v in range(n)]
    w0 = [mat_sum(mat_scale(ginv[v][l], Afull[l]) for l in range(n)) for v in range(n)]
    deg2 = mat_scalar(mat_sum_scalar(-(xis[v] * w1[v]).times_i() for v in range(n)), m)
    deg1_s = mat_sum_scalar(-w1[v].dx(v) - (F.dlog[v] * w1[v]) * Fraction(1, 2) for v in range(n))
    deg1 = mat_add(
        mat_scalar(deg1_s, m),
        mat_sum(
            mat_add(mat_map(lambda e: -(e.times_i()), mat_scale(xis[v], w0[v])), mat_scale(-w1[v], Afull[v]))
            for v in range(n)
        ),
    )
    deg0 = mat_add(
        mat_sum(
            mat_sub(
                mat_sub(mat_map(lambda e, v=v: -e.dx(v), w0[v]), mat_scale(F.dlog[v] * Fraction(1, 2), w0[v])),
                mat_mul(Afull[v], w0[v]),
            )
            for v in range(n)
        ),
        F.Q,
    )
    return {2: deg2, 1: deg1, 0: deg0}


def _compose(p1: Dict[int, np.ndarray], p2: Dict[int, np.ndarray], n: int, floor: int) -> Dict[int, np.ndarray]:
    """Homogeneous pieces of ``p1 # p2`` down to degree ``floor``, full n-dim formula."""
    out: Dict[int, List[np.ndarray]] = {}
    cache = _DerivCache()
    for da, a in p1.items():
        for db, b in p2.items():
            top = da + db - floor
            for order in range(0, top + 1):
                for K in _multi_indices(n, order):
                    lhs = cache.dxi(("L", da), a, K)
                    if mat_is_zero(lhs):
                        continue
                    rhs = cache.Dx(("R", db), b, K)
                    if mat_is_zero(rhs):
                        continue
                    prod = mat_mul(lhs, rhs)
                    fK = _mi_factorial(K)
                    if fK != 1:
                        prod = mat_map(lambda e: e * Fraction(1, fK), prod)
                    out.setdefault(da + db - order, []).append(prod)
    return {k: mat_sum(v) for k, v in out.items()}


def verify_factorization(jet: BoundaryJet, table: SymbolTable) -> ResidualReport:
    """Compose ``(xi_n + iE - iB)`` with ``(xi_n + iB)`` and subtract the operator symbol.

    ``B = b_1 + b_0 + .. + b_{1-J}`` uses the x-dependent symbols of
    ``table.full``.  The residual is examined in every homogeneity degree
    from 2 down to ``1 - J``; in exact arithmetic the check has zero
    tolerance.
    """
    if table.full is None:
        raise JetError("table carries no interior symbols; build it with factorize")
    R = table.ring
    n, m, J = jet.n, jet.m, table.J
    F = _derived(_jet_fields(jet, R), R)
    xin = mat_scalar(R.xi_sym(n - 1), m)
    iE = mat_scalar(F.E.times_i(), m)
    p1: Dict[int, np.ndarray] = {}
    p2: Dict[int, np.ndarray] = {}
    for j, bj in table.full.items():
        ib = mat_map(lambda e: e.times_i(), bj)
        p1[j] = mat_map(lambda e: -e, ib)
        p2[j] = ib
    p1[1] = mat_add(p1[1], xin)
    p2[1] = mat_add(p2[1], xin)
    p1[0] = mat_add(p1.get(0, mat_zero(R, m)), iE)
    floor = 1 - J
    comp = _compose(p1, p2, n, floor)
    sym = _operator_symbol(F, R)
    orders = list(range(2, floor - 1, -1))
    nonzero = []
    for k in orders:
        c = comp.get(k, mat_zero(R, m))
        s = sym.get(k, mat_zero(R, m))
        diff = mat_sub(c, s)
        if min(e.o for e in diff.ravel()) < 0:
            raise JetError(f"jet depth K={jet.K} too small to validate degree {k}")
        res = mat_map(lambda e: e.restrict_normal().normalize(), diff)
        if not mat_is_zero(res):
            nonzero.append(k)
    lead = nonzero[0] if nonzero else None
    return ResidualReport(J=J, leading_order=lead, computed_orders=orders, nonzero_orders=nonzero, passes=lead is None or lead <= 1 - J)


# ---------------------------------------------------------------------------
# inverse recursion


@dataclass
class RecoveryTrace:
    """Intermediates and result of the boundary-determination recursion.

    Attributes
    ----------
    g, A, Q : dict
        ``g[j]`` is the (n-1)x(n-1) nested list of series ``d_n^j g^{ab}(x')``;
        ``A[j]`` a list over tangential components of m x m arrays;
        ``Q[j]`` an m x m array.  Series are exact in x' up to their ``o``.
    k : nested list
        ``k^{ab}`` from the even part of ``b_0``.
    l : dict
        ``l[j]`` = the even-part tensor at level ``-j`` (matrix-valued entries).
    S : dict
        ``S[j] = g_ab d_n^j g^ab`` at the boundary, as series.
    P : dict
        ``P[j-1]^{ab} = 1/4 d_n^{j+1} g^{ab} + d_n^{j-1} Q g^{ab}`` for j >= 1.
    probe : str
        How odd and even parts were separated.
    unrecoverable : tuple
        Quantities structurally absent from the result.
    """

    n: int
    m: int
    depth: int
    g: Dict[int, list]
    A: Dict[int, list]
    Q: Dict[int, np.ndarray]
    k: Optional[list] = None
    l: Dict[int, list] = field(default_factory=dict)
    S: Dict[int, Sym] = field(default_factory=dict)
    P: Dict[int, list] = field(default_factory=dict)
    probe: str = "odd/even parts under xi' -> -xi' (plugging in +omega and -omega)"
    unrecoverable: tuple = ()

    def to_jet(self, K: Optional[int] = None) -> BoundaryJet:
        """Assemble the recovered coefficients into a BoundaryJet.

        Unrecovered normal orders are left at zero; tangential orders beyond
        each series' validity are dropped.
        """
        n, m = self.n, self.m
        if K is None:
            K = max(self.g) if self.g else 1
        d = n - 1

        def acc(store, getter):
            out: Poly = {}
            for j, val in store.items():
                s = getter(val)
                if s is None:
                    continue
                for mu, c in _sym_to_poly(s).items():
                    if mu[-1] != 0:
                        raise JetError("recovered boundary series depends on x^n")
                    nu = mu[:-1] + (j,)
                    if sum(nu) <= K:
                        fac = Fraction(1, math.factorial(j))
                        out[nu] = (c[0] * fac, c[1] * fac)
            return out

        g = tuple(tuple(acc(self.g, lambda v, a=a, b=b: v[a][b]) for b in range(d)) for a in range(d))
        A = tuple(
            tuple(tuple(acc(self.A, lambda v, a=a, i=i, j=j: v[a][i, j]) for j in range(m)) for i in range(m)) for a in range(d)
        )
        Q = tuple(tuple(acc(self.Q, lambda v, i=i, j=j: v[i, j]) for j in range(m)) for i in range(m))
        return BoundaryJet(n=n, m=m, K=K, g_inv=g, A=A, Q=Q)

    def mismatches(self, jet: BoundaryJet) -> List[str]:
        """Coefficients where the recovered data disagrees with ``jet``.

        Compares every recovered normal order, up to the recovered tangential
        validity, exactly.
        """
        out = []
        d = self.n - 1

        def cmp(label, store, getter, src_getter):
            for j, val in store.items():
                s = getter(val)
                src = src_getter()
                rec = {mu: c for mu, c in _sym_to_poly(s).items()}
                for mu in set(rec) | {m_[:-1] + (0,) for m_ in src if m_[-1] == j}:
                    if sum(mu) > s.o:
                        continue
                    want = src.get(mu[:-1] + (j,), (Fraction(0), Fraction(0)))
                    fac = math.factorial(j)
                    want = (want[0] * fac, want[1] * fac)
                    got = rec.get(mu, (Fraction(0), Fraction(0)))
                    if want != got:
                        out.append(f"{label} d_n^{j} at x'^{mu[:-1]}: recovered {got}, expected {want}")

        for a in range(d):
            for b in range(d):
                cmp(f"g^{a}{b}", self.g, lambda v, a=a, b=b: v[a][b], lambda a=a, b=b: jet.g_inv[a][b])
        for a in range(d):
            for i in range(self.m):
                for j in range(self.m):
                    cmp(f"A_{a}[{i},{j}]", self.A, lambda v, a=a, i=i, j=j: v[a][i, j], lambda a=a, i=i, j=j: jet.A[a][i][j])
        for i in range(self.m):
            for j in range(self.m):
                cmp(f"Q[{i},{j}]", self.Q, lambda v, i=i, j=j: v[i, j], lambda i=i, j=j: jet.Q[i][j])
        return out

    def recovered_orders(self) -> Dict[str, List[int]]:
        return {"g": sorted(self.g), "A": sorted(self.A), "Q": sorted(self.Q)}


def _sym_to_poly(s: Sym) -> Poly:
    """Covector-free series -> Taylor polynomial in x (Gaussian rationals)."""
    R = s.R
    P = s.exact_poly() if s.M else s.P
    out: Poly = {}
    for exps, c in P.to_dict().items():
        if exps[2] or any(exps[3 : 3 + R.n]):
            raise JetError("series still depends on the covector")
        mu = tuple(exps[3 + R.n :])
        re, im = out.get(mu, (Fraction(0), Fraction(0)))
        cf = Fraction(int(c.p), int(c.q))
        if exps[1]:
            im += cf
        else:
            re += cf
        out[mu] = (re, im)
    return {k: v for k, v in out.items() if v[0] or v[1]}


def _lift(v: Sym, j: int) -> Sym:
    """(x^n)^j / j! times a boundary series; validity grows by j."""
    if j == 0:
        return v
    R = v.R
    p = v.P * (R.tau**j * R.x[R.n - 1] ** j * flint.fmpq(1, math.factorial(j)))
    o = min(v.o + j, R.cap)
    return Sym(R, R.truncate(p, o), v.M, o)


class _Partial:
    """Partially known jet assembled from recovered boundary series."""

    def __init__(self, R: Ring, n: int, m: int):
        self.R, self.n, self.m = R, n, m
        self.g: Dict[int, list] = {}
        self.A: Dict[int, list] = {}
        self.Q: Dict[int, np.ndarray] = {}

    def fields(self) -> _Fields:
        R, n, m = self.R, self.n, self.m
        d = n - 1
        G = [[None] * d for _ in range(d)]
        for a in range(d):
            for b in range(d):
                G[a][b] = mat_sum_scalar(_lift(v[a][b], j) for j, v in sorted(self.g.items()))
        A = []
        for a in range(d):
            terms = [mat_map(lambda e, j=j: _lift(e, j), v[a]) for j, v in sorted(self.A.items())]
            A.append(mat_sum(terms) if terms else mat_zero(R, m))
        qterms = [mat_map(lambda e, j=j: _lift(e, j), v) for j, v in sorted(self.Q.items())]
        Q = mat_sum(qterms) if qterms else mat_zero(R, m)
        return _Fields(n, m, G, A, Q)


def _quadratic_coeffs(s: Sym, d: int) -> list:
    """Symmetric coefficients c^{ab} of a quadratic form sum c^{ab} xi_a xi_b."""
    R = s.R
    p = s.exact_poly()
    base = Sym(R, p, 0, s.o)
    out = [[None] * d for _ in range(d)]
    for a in range(d):
        for b in range(d):
            out[a][b] = _xfree(base.dxi(a).dxi(b)) * Fraction(1, 2)
    return out


def _linear_coeffs(s: Sym, d: int) -> list:
    R = s.R
    p = s.exact_poly()
    base = Sym(R, p, 0, s.o)
    return [_xfree(base.dxi(a)) for a in range(d)]


def _xfree(s: Sym) -> Sym:
    """Canonical form (denominator 1) of a covector-free element."""
    return Sym(s.R, s.exact_poly(), 0, s.o)


def _lower_metric(G: list) -> list:
    d = len(G)
    det = _det(G)
    inv = _series_inverse(det)
    if d == 1:
        return [[inv]]
    out = [[None] * d for _ in range(d)]
    for a in range(d):
        for b in range(d):
            minor = [[G[i][j] for j in range(d) if j != a] for i in range(d) if i != b]
            c = _det(minor)
            if (a + b) % 2:
                c = -c
            out[a][b] = c * inv
    return out


def _scalar_part(arr: np.ndarray, label: str) -> Sym:
    """The scalar s of an array equal to s * Id, checked exactly."""
    m = arr.shape[0]
    s = arr[0, 0]
    for i in range(m):
        for j in range(m):
            e = arr[i, j]
            ok = (e - s).is_zero() if i == j else e.is_zero()
            if not ok:
                raise JetError(f"{label} is not a multiple of the identity")
    return s


def _odd_even(Z: np.ndarray):
    flipped = mat_map(lambda e: e.subs_xi_sign(), Z)
    odd = mat_map(lambda e: e * Fraction(1, 2), mat_sub(Z, flipped))
    even = mat_map(lambda e: e * Fraction(1, 2), mat_add(Z, flipped))
    return odd, even


def _boundary_symbol(part: _Partial, R: Ring, level: int) -> np.ndarray:
    F = _derived(part.fields(), R)
    full, *_ = _forward(F, R, 1 - level)
    return mat_map(lambda e: e.restrict_normal(), full[level])


def recover_jet(table: SymbolTable, n: int, depth: Optional[int] = None) -> RecoveryTrace:
    """Recover normal derivatives of ``(g, A, Q)`` at the boundary from ``b_j``.

    Level 1 gives ``g^{ab}``; level 0 gives ``A_a`` (odd part) and ``k^{ab}``
    hence ``d_n g^{ab}`` (even part); level ``-j`` gives ``d_n^j A_a`` (odd
    part) and, with the normalization of the mean curvature fixing the trace
    ``S_{j+1}``, both ``d_n^{j-1} Q`` and ``d_n^{j+1} g^{ab}`` (even part).

    Parameters
    ----------
    table : SymbolTable
        Boundary symbols ``b_1 .. b_{1-J}``.
    n : int
        Dimension, at least 3.
    depth : int, optional
        Number of symbols used (default ``table.J``).
    """
    if n == 2:
        raise JetError("dimension 2: use recover_jet_surface")
    if n != table.n:
        raise JetError("dimension does not match the symbol table")
    J = table.J if depth is None else depth
    if J < 1 or J > table.J:
        raise JetError(f"depth {J} not available in a table of depth {table.J}")
    R = table.ring
    m = table.m
    d = n - 1
    xis = [R.xi_sym(a) for a in range(d)]
    part = _Partial(R, n, m)
    trace = RecoveryTrace(n=n, m=m, depth=J, g=part.g, A=part.A, Q=part.Q)

    # level 1: q2 = b1^2
    b1 = _scalar_part(table.b[1], "b_1")
    g0 = _quadratic_coeffs(b1 * b1, d)
    part.g[0] = g0
    if J == 1:
        return trace
    glow = _lower_metric(g0)
    q2b = mat_sum_scalar(g0[a][b] * (xis[a] * xis[b]) for a in range(d) for b in range(d))
    rho_b = _sqrt_series(q2b)

    def extract(Z, scale, label):
        odd, even = _odd_even(Z)
        C = mat_map(lambda e: e * (scale * rho_b), odd)
        # C = i g^{ab} X_a xi_b  ->  X_a = -i g_ab C^b
        Cb = [mat_map(lambda e, b=b: _linear_coeffs(e, d)[b], C) for b in range(d)]
        X = []
        for a in range(d):
            acc = mat_sum(mat_scale(glow[a][b], Cb[b]) for b in range(d))
            X.append(mat_map(lambda e: -(e.times_i()), acc))
        Ev = mat_map(lambda e: e * (scale * q2b), even)
        W = [[mat_map(lambda e, a=a, b=b: _quadratic_coeffs(e, d)[a][b], Ev) for b in range(d)] for a in range(d)]
        return X, W

    # level 0
    part.A[0] = [mat_zero(R, m) for _ in range(d)]
    T = _boundary_symbol(part, R, 0)
    Z = mat_sub(table.b[0], T)
    A0, W = extract(Z, R.const(1), "b_0")
    part.A[0] = A0
    k = [[_scalar_part(W[a][b], "k") * (-4) for b in range(d)] for a in range(d)]
    trace.k = k
    S1 = mat_sum_scalar(glow[a][b] * k[a][b] for a in range(d) for b in range(d)) * Fraction(1, 2 - n)
    trace.S[1] = S1
    part.g[1] = [[k[a][b] + S1 * g0[a][b] for b in range(d)] for a in range(d)]
    if J == 2:
        return trace

    for j in range(1, J - 1):
        # trace of the unknown top metric derivative from the normalization
        part.g[j + 1] = [[R.zero() for _ in range(d)] for _ in range(d)]
        S1_series = _mean_curvature_series(part.fields(), R)
        V = S1_series
        for _ in range(j):
            V = V.dx(n - 1)
        S_next = -(V.restrict_normal())
        trace.S[j + 1] = S_next
        part.g[j + 1] = [[S_next * g0[a][b] * Fraction(1, d) for b in range(d)] for a in range(d)]
        part.A[j] = [mat_zero(R, m) for _ in range(d)]
        if j >= 1:
            part.Q[j - 1] = mat_zero(R, m)
        T = _boundary_symbol(part, R, -j)
        Z = mat_sub(table.b[-j], T)
        scale = (rho_b * 2)
        sc = R.const(1)
        for _ in range(j):
            sc = sc * scale
        Aj, W = extract(Z, sc, f"b_{-j}")
        part.A[j] = Aj
        Y = [[mat_map(lambda e: -e, W[a][b]) for b in range(d)] for a in range(d)]
        trace.l[j] = Y
        trQ = mat_sum(mat_scale(glow[a][b], Y[a][b]) for a in range(d) for b in range(d))
        Qj = mat_map(lambda e: e * Fraction(1, d), trQ)
        part.Q[j - 1] = Qj
        D = [[_scalar_part(mat_sub(Y[a][b], mat_scale(g0[a][b], Qj)), "traceless part") * 4 for b in range(d)] for a in range(d)]
        part.g[j + 1] = [[part.g[j + 1][a][b] + D[a][b] for b in range(d)] for a in range(d)]
        trace.P[j - 1] = [
            [mat_add(Y[a][b], mat_scalar(S_next * g0[a][b] * Fraction(1, 4 * d), m)) for b in range(d)] for a in range(d)
        ]
    return trace


def recover_jet_surface(table: SymbolTable, Q_declared_zero: bool = True) -> RecoveryTrace:
    """Dimension-2 recovery: ``g^{11}``, ``A_1`` and ``d_n A_1`` at the boundary.

    ``d_n g^{11}`` is not determined by the symbols in dimension 2 and is never
    emitted; the result marks it unrecoverable.
    """
    if not Q_declared_zero:
        raise JetError("dimension 2 with nonzero Q: d_n A_1 and Q are not separable from b_{-1}")
    if table.n != 2:
        raise JetError("recover_jet_surface requires n = 2")
    R = table.ring
    m = table.m
    part = _Partial(R, 2, m)
    trace = RecoveryTrace(n=2, m=m, depth=min(table.J, 3), g=part.g, A=part.A, Q={}, unrecoverable=("d_n g^11",))
    b1 = _scalar_part(table.b[1], "b_1")
    g0 = _quadratic_coeffs(b1 * b1, 1)
    part.g[0] = g0
    if table.J < 2:
        return trace
    xi = R.xi_sym(0)
    q2b = g0[0][0] * (xi * xi)
    rho_b = _sqrt_series(q2b)
    glow = _lower_metric(g0)

    def odd_coeff(Z, scale):
        odd, _ = _odd_even(Z)
        C = mat_map(lambda e: e * (scale * rho_b), odd)
        Cb = mat_map(lambda e: _linear_coeffs(e, 1)[0], C)
        return [mat_map(lambda e: -(e.times_i()), mat_scale(glow[0][0], Cb))]

    part.A[0] = [mat_zero(R, m)]
    Z = mat_sub(table.b[0], _boundary_symbol(part, R, 0))
    part.A[0] = odd_coeff(Z, R.const(1))
    if table.J >= 3:
        part.A[1] = [mat_zero(R, m)]
        Z = mat_sub(table.b[-1], _boundary_symbol(part, R, -1))
        part.A[1] = odd_coeff(Z, rho_b * 2)
    return trace


# ---------------------------------------------------------------------------
# numeric probing of a DN matrix


@dataclass
class ProbeResult:
    """Leading-symbol estimates on one edge from oscillatory probing.

    Attributes
    ----------
    edge : str
        Side label (``"x2-"`` is the bottom edge, tangential variable ``x^1``).
    frequencies : ndarray
        Tangential wave numbers ``k > 0`` (chart units).
    responses : ndarray, shape (len(k), m, m)
        ``(Lambda (w e^{ikx'} e_b))_a / (w e^{ikx'})`` at the window centre.
    beta1, beta0, beta_m1 : ndarray, shape (m, m)
        Least-squares coefficients of ``|k| beta1 + beta0 + beta_m1 / |k|``.
    b1, b0 : ndarray
        ``-beta1`` (the estimate of ``b_1 / |xi'|``) and ``-beta0``.
    center_node : int
    """

    edge: str
    frequencies: np.ndarray
    responses: np.ndarray
    beta1: np.ndarray
    beta0: np.ndarray
    beta_m1: np.ndarray
    b1: np.ndarray
    b0: np.ndarray
    center_node: int
    fit_residual: float

    def to_json(self) -> dict:
        cj = lambda a: {"re": np.real(a).tolist(), "im": np.imag(a).tolist()}  # noqa: E731
        return {
            "kind": "probe-result",
            "edge": self.edge,
            "frequencies": self.frequencies.tolist(),
            "beta1": cj(self.beta1),
            "beta0": cj(self.beta0),
            "beta_m1": cj(self.beta_m1),
            "center_node": int(self.center_node),
            "fit_residual": float(self.fit_residual),
        }


def _edge_positions(grid, edge: str):
    """Boundary positions on a full edge, sorted by the tangential coordinate."""
    bc = grid.boundary_coords()
    axis = 0 if edge.startswith("x1") else 1
    target = 0.0 if edge.endswith("-") else 1.0
    if grid.periodic and axis == 1:
        raise JetError("annulus has no x2 edges")
    on = np.flatnonzero(np.abs(bc[:, axis] - target) < 1e-12)
    tang = bc[on, 1 - axis]
    order = np.argsort(tang, kind="stable")
    return on[order], tang[order], axis


def _model_responses(w: np.ndarray, t: np.ndarray, c: int, ks: np.ndarray, h: float, pad: int = 16) -> np.ndarray:
    """Responses at node ``c`` of ``|xi|``, ``sgn xi`` and ``1/|xi|`` to the probe data.

    The symbols act on the zero-padded data through the discrete Fourier
    transform, so window leakage is represented identically in the model
    and in the measured response.
    """
    N = len(w) * pad
    xi = 2 * np.pi * np.fft.fftfreq(N, d=h)
    absxi = np.abs(xi)
    inv = np.zeros_like(xi)
    inv[absxi > 0] = 1 / absxi[absxi > 0]
    symbols = (absxi, np.sign(xi), inv)
    X = np.empty((len(ks), 3), dtype=complex)
    for ik, k in enumerate(ks):
        data = np.zeros(N, dtype=complex)
        data[: len(w)] = w * np.exp(1j * k * t)
        fd = np.fft.fft(data)
        for s, sym in enumerate(symbols):
            X[ik, s] = np.fft.ifft(sym * fd)[c] / data[c]
    return X


DEFAULT_FREQUENCIES = (3.0, 4.0, 5.0, 6.0, 8.0)


def probe_leading_symbols(
    dn, grid, edge: str, frequencies: Sequence[float] = DEFAULT_FREQUENCIES, window: float = 0.4
) -> ProbeResult:
    """Estimate ``(b_1, b_0)`` on an edge from a full-boundary DN matrix.

    For each ``k`` the data ``w(x') e^{ikx'} e_b`` (``w`` a smooth bump of
    radius ``window`` centred on the edge) is mapped by ``Lambda``; the
    response at the centre divided by the data there is fitted to
    ``|k| beta1 + beta0 + beta_m1/|k|`` by least squares, each term being
    applied to the same windowed data (degree 0 as ``sgn xi``), so the fit
    is insensitive to the window's spectral spread.  Since
    ``Lambda = -B`` modulo smoothing, ``b1 ~ -beta1`` and ``b0 ~ -beta0``.

    Raises
    ------
    JetError
        Fewer than three frequencies, a frequency above a quarter of the
        edge Nyquist number, or a DN matrix not over the full boundary.
    """
    ks = np.asarray(sorted(float(k) for k in frequencies))
    if len(ks) < 3:
        raise JetError("at least three frequencies are needed for the three-term fit")
    if np.any(ks <= 0):
        raise JetError("frequencies must be positive")
    m = dn.m
    if dn.shape != (m * grid.n_boundary, m * grid.n_boundary):
        raise JetError("probing needs a DN matrix over the full boundary")
    pos, t, axis = _edge_positions(grid, edge)
    h = grid.h1 if axis == 1 else grid.h2
    nyq = math.pi / h
    if ks.max() > nyq / 4 + 1e-12:
        raise JetError(f"frequency {ks.max():g} exceeds Nyquist/4 = {nyq / 4:g}")
    c = int(np.argmin(np.abs(t - 0.5)))
    tc = t[c]
    r2 = ((t - tc) / window) ** 2
    w = np.where(r2 < 1, np.exp(1 - 1 / np.where(r2 < 1, 1 - r2, 1.0)), 0.0)
    M = dn.matrix
    resp = np.empty((len(ks), m, m), dtype=complex)
    rows = pos[c] * m + np.arange(m)
    for ik, k in enumerate(ks):
        data = w * np.exp(1j * k * (t - tc))
        for b in range(m):
            cols = pos * m + b
            resp[ik, :, b] = (M[np.ix_(rows, cols)] @ data) / data[c]
    X = _model_responses(w, t - tc, c, ks, h)
    coef, res, *_ = np.linalg.lstsq(X, resp.reshape(len(ks), -1), rcond=None)
    fit = X @ coef - resp.reshape(len(ks), -1)
    coef = coef.reshape(3, m, m)
    return ProbeResult(
        edge=edge,
        frequencies=ks,
        responses=resp,
        beta1=coef[0],
        beta0=coef[1],
        beta_m1=coef[2],
        b1=-coef[0],
        b0=-coef[1],
        center_node=int(grid.boundary_nodes[pos[c]]),
        fit_residual=float(np.abs(fit).max()),
    )
