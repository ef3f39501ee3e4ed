"""Exact truncated-Taylor symbol arithmetic.

Every quantity handled by the jet-level symbol engine is a truncated Taylor
series at the base point p in the chart coordinates x = (x', x^n), whose
coefficients are polynomials in the covector variables with Gaussian-rational
coefficients, divided by a power of the base quadratic form
``q0(xi') = g^{ab}(p) xi_a xi_b``.  The square root ``rho = sqrt(q0)`` is
adjoined formally.

All of that lives in a single ``fmpq_mpoly`` ring with lex ordering on the
generators ``(tau, iota, rho, xi_1..xi_n, x_1..x_n)`` where

* ``tau`` tags the total x-degree of a term, so truncation at order o is
  reduction modulo ``tau**(o+1)``;
* ``iota`` is the imaginary unit, reduced modulo ``iota**2 + 1``;
* ``rho`` is reduced modulo ``rho**2 - q0``.

A :class:`Sym` is ``P / q0**M`` together with a validity order ``o``: the
Taylor coefficients of total x-degree at most ``o`` are exact, higher ones are
discarded.
"""

from __future__ import annotations

from fractions import Fraction
from typing import Iterable, Sequence

import flint
import numpy as np

__all__ = ["Ring", "Sym", "to_fmpq"]


def to_fmpq(v) -> flint.fmpq:
    if isinstance(v, flint.fmpq):
        return v
    if isinstance(v, Fraction):
        return flint.fmpq(v.numerator, v.denominator)
    if isinstance(v, int):
        return flint.fmpq(v)
    f = Fraction(v)
    return flint.fmpq(f.numerator, f.denominator)


class Ring:
    """Polynomial ring and reduction data for one base point.

    Parameters
    ----------
    n : int
        Manifold dimension; x has n components, the covector has n components
        (the last one, ``xi_n``, is only used when composing full symbols).
    q0 : sequence of sequence
        The (n-1)x(n-1) symmetric rational matrix g^{ab}(p).
    cap : int
        Global truncation order in x.
    """

    def __init__(self, n: int, q0: Sequence[Sequence], cap: int):
        self.n = n
        self.cap = cap
        names = ["tau", "iota", "rho"]
        names += [f"xi{k + 1}" for k in range(n)]
        names += [f"x{k + 1}" for k in range(n)]
        self.names = tuple(names)
        self.ctx = flint.fmpq_mpoly_ctx.get(self.names, "lex")
        gens = self.ctx.gens()
        self.tau, self.iota, self.rho = gens[0], gens[1], gens[2]
        self.xi = gens[3 : 3 + n]
        self.x = gens[3 + n : 3 + 2 * n]
        self.nvars = len(names)
        self.g0 = [[to_fmpq(q0[a][b]) for b in range(n - 1)] for a in range(n - 1)]
        q = self.ctx.from_dict({})
        for a in range(n - 1):
            for b in range(n - 1):
                q += self.g0[a][b] * self.xi[a] * self.xi[b]
        self.q0 = q
        self._iota_rel = self.iota**2 + 1
        self._rho_rel = self.rho**2 - q
        self._tau_pow = {}
        self._q0_pow = [self.ctx.from_dict({(0,) * self.nvars: 1})]

    # -- constructors ---------------------------------------------------
    def one_poly(self):
        return self._q0_pow[0]

    def q0_pow(self, k: int):
        while len(self._q0_pow) <= k:
            self._q0_pow.append(self._q0_pow[-1] * self.q0)
        return self._q0_pow[k]

    def zero(self, o: int | None = None) -> "Sym":
        return Sym(self, self.ctx.from_dict({}), 0, self.cap if o is None else o)

    def const(self, re, im=0, o: int | None = None) -> "Sym":
        p = to_fmpq(re) * self.one_poly() + to_fmpq(im) * self.iota
        return Sym(self, p, 0, self.cap if o is None else o)

    def xi_sym(self, a: int) -> "Sym":
        return Sym(self, self.xi[a] + 0, 0, self.cap)

    def from_taylor(self, coeffs: dict, o: int | None = None) -> "Sym":
        """Series from ``{multi-index: (re, im)}`` Taylor coefficients."""
        o = self.cap if o is None else o
        d = {}
        for mu, c in coeffs.items():
            deg = sum(mu)
            if deg > o:
                continue
            re, im = (c if isinstance(c, tuple) else (c, 0))
            base = [0] * self.nvars
            base[0] = deg
            for k, e in enumerate(mu):
                base[3 + self.n + k] = e
            re, im = to_fmpq(re), to_fmpq(im)
            if re != 0:
                d[tuple(base)] = d.get(tuple(base), 0) + re
            if im != 0:
                b2 = list(base)
                b2[1] = 1
                d[tuple(b2)] = d.get(tuple(b2), 0) + im
        return Sym(self, self.ctx.from_dict(d), 0, o)

    # -- reductions -----------------------------------------------------
    def tau_pow(self, k: int):
        p = self._tau_pow.get(k)
        if p is None:
            p = self.tau**k
            self._tau_pow[k] = p
        return p

    def truncate(self, p, o: int):
        if o < 0:
            return self.ctx.from_dict({})
        degs = p.degrees()
        if degs and degs[0] > o:
            p = divmod(p, self.tau_pow(o + 1))[1]
        return p

    def reduce(self, p, o: int):
        p = self.truncate(p, o)
        degs = p.degrees()
        if not degs:
            return p
        if degs[1] > 1:
            p = divmod(p, self._iota_rel)[1]
        if degs[2] > 1:
            p = divmod(p, self._rho_rel)[1]
        return p


class Sym:
    """Element ``P / q0**M`` of the truncated symbol algebra, valid to order ``o``."""

    __slots__ = ("R", "P", "M", "o")

    def __init__(self, R: Ring, P, M: int, o: int):
        self.R = R
        self.P = P
        self.M = M
        self.o = min(o, R.cap)

    # -- arithmetic -----------------------------------------------------
    def _align(self, other: "Sym"):
        R = self.R
        M = max(self.M, other.M)
        p1 = self.P if self.M == M else self.P * R.q0_pow(M - self.M)
        p2 = other.P if other.M == M else other.P * R.q0_pow(M - other.M)
        return p1, p2, M

    def __add__(self, other):
        if isinstance(other, int) and other == 0:
            return self
        if not isinstance(other, Sym):
            other = self.R.const(other)
        p1, p2, M = self._align(other)
        o = min(self.o, other.o)
        return Sym(self.R, self.R.truncate(p1 + p2, o), M, o)

    __radd__ = __add__

    def __sub__(self, other):
        if not isinstance(other, Sym):
            other = self.R.const(other)
        p1, p2, M = self._align(other)
        o = min(self.o, other.o)
        return Sym(self.R, self.R.truncate(p1 - p2, o), M, o)

    def __rsub__(self, other):
        return (-self) + other

    def __neg__(self):
        return Sym(self.R, -self.P, self.M, self.o)

    def __mul__(self, other):
        if isinstance(other, Sym):
            o = min(self.o, other.o)
            if self.P == 0 or other.P == 0:
                return self.R.zero(o)
            p = self.R.reduce(self.P * other.P, o)
            return Sym(self.R, p, self.M + other.M, o)
        if isinstance(other, (int, Fraction, flint.fmpq)):
            return Sym(self.R, self.P * to_fmpq(other), self.M, self.o)
        return NotImplemented

    def __rmul__(self, other):
        return self.__mul__(other)

    def times_i(self) -> "Sym":
        R = self.R
        return Sym(R, R.reduce(self.P * R.iota, self.o), self.M, self.o)

    def times_rho(self) -> "Sym":
        R = self.R
        return Sym(R, R.reduce(self.P * R.rho, self.o), self.M, self.o)

    def div_q0(self, k: int = 1) -> "Sym":
        return Sym(self.R, self.P, self.M + k, self.o)

    # -- calculus -------------------------------------------------------
    def dx(self, k: int) -> "Sym":
        """Partial derivative in x_{k+1}; loses one order of validity."""
        R = self.R
        d = self.P.derivative(R.names[3 + R.n + k])
        if d != 0:
            d = d / R.tau
        return Sym(R, d, self.M, self.o - 1)

    def dxi(self, a: int) -> "Sym":
        """Partial derivative in xi_{a+1}, with rho = sqrt(q0) differentiated."""
        R = self.R
        name = R.names[3 + a]
        P = self.P
        dP = P.derivative(name)
        if a >= R.n - 1:
            return Sym(R, dP, self.M, self.o)
        dq = R.q0.derivative(name)
        rho_part = P.derivative("rho") * R.rho
        num = R.q0 * dP + (rho_part - 2 * self.M * P) * dq * flint.fmpq(1, 2)
        num = R.reduce(num, self.o)
        return Sym(R, num, self.M + 1, self.o)

    # -- inspection -----------------------------------------------------
    def is_zero(self) -> bool:
        return self.P == 0

    def normalize(self) -> "Sym":
        """Cancel common powers of q0 between numerator and denominator."""
        R = self.R
        P, M = self.P, self.M
        if P == 0:
            return Sym(R, P, 0, self.o)
        while M > 0:
            q, r = divmod(P, R.q0)
            if r != 0:
                break
            P, M = q, M - 1
        return Sym(R, P, M, self.o)

    def subs_xi_sign(self) -> "Sym":
        """Substitute xi' -> -xi' (rho is even)."""
        R = self.R
        imgs = list(R.ctx.gens())
        for a in range(R.n - 1):
            imgs[3 + a] = -imgs[3 + a]
        return Sym(R, self.P.compose(*imgs), self.M, self.o)

    def scale_xi(self, s) -> "Sym":
        """Substitute xi' -> s xi' for rational s > 0 (so rho -> s rho)."""
        R = self.R
        s = to_fmpq(s)
        imgs = list(R.ctx.gens())
        imgs[2] = imgs[2] * s
        for a in range(R.n - 1):
            imgs[3 + a] = imgs[3 + a] * s
        P = self.P.compose(*imgs)
        return Sym(R, P * (1 / s) ** (2 * self.M), self.M, self.o)

    def restrict_normal(self) -> "Sym":
        """Restrict to x^n = 0."""
        R = self.R
        imgs = list(R.ctx.gens())
        imgs[3 + 2 * R.n - 1] = R.ctx.from_dict({})
        return Sym(R, self.P.compose(*imgs), self.M, self.o)

    def with_order(self, o: int) -> "Sym":
        o = min(o, self.o)
        return Sym(self.R, self.R.truncate(self.P, o), self.M, o)

    def exact_poly(self):
        """Return ``P / q0**M`` as a polynomial, raising if not exact."""
        R = self.R
        if self.M == 0:
            return self.P
        q, r = divmod(self.P, R.q0_pow(self.M))
        if r != 0:
            raise ArithmeticError("element is not polynomial in the covector")
        return q

    def taylor(self) -> dict:
        """Decode into ``{(x-multi-index, xi-exps, rho-exp): (re, im)}`` with M."""
        R = self.R
        out = {}
        for exps, c in self.P.to_dict().items():
            key = (tuple(exps[3 + R.n :]), tuple(exps[3 : 3 + R.n]), exps[2])
            re, im = out.get(key, (flint.fmpq(0), flint.fmpq(0)))
            if exps[1]:
                im += c
            else:
                re += c
            out[key] = (re, im)
        return out

    def evaluate(self, xi: Sequence[float], x: Sequence[float] | None = None) -> complex:
        """Numeric value at covector xi' (and optional chart offset x)."""
        R = self.R
        xi = list(xi) + [0.0] * (R.n - len(xi))
        x = [0.0] * R.n if x is None else list(x)
        q0 = sum(float(R.g0[a][b]) * xi[a] * xi[b] for a in range(R.n - 1) for b in range(R.n - 1))
        rho = np.sqrt(q0)
        total = 0j
        for exps, c in self.P.to_dict().items():
            exps = [int(e) for e in exps]
            term = float(c) * (1j if exps[1] else 1.0) * rho ** exps[2]
            for k in range(R.n):
                term *= xi[k] ** exps[3 + k] * x[k] ** exps[3 + R.n + k]
            total += term
        return total / q0**self.M

    def __repr__(self) -> str:
        return f"Sym(M={self.M}, o={self.o}, terms={len(self.P)})"


# ---------------------------------------------------------------------------
# matrix helpers on object arrays of Sym


def mat_zero(R: Ring, m: int, o: int | None = None) -> np.ndarray:
    out = np.empty((m, m), dtype=object)
    for i in range(m):
        for j in range(m):
            out[i, j] = R.zero(o)
    return out


def mat_scalar(s: Sym, m: int) -> np.ndarray:
    out = mat_zero(s.R, m, s.o)
    for i in range(m):
        out[i, i] = s
    return out


def mat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    m = a.shape[0]
    out = np.empty((m, m), dtype=object)
    for i in range(m):
        for j in range(m):
            acc = None
            for k in range(m):
                t = a[i, k] * b[k, j]
                acc = t if acc is None else acc + t
            out[i, j] = acc
    return out


def mat_map(f, a: np.ndarray) -> np.ndarray:
    out = np.empty(a.shape, dtype=object)
    for idx in np.ndindex(a.shape):
        out[idx] = f(a[idx])
    return out


def mat_add(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    out = np.empty(a.shape, dtype=object)
    for idx in np.ndindex(a.shape):
        out[idx] = a[idx] + b[idx]
    return out


def mat_sub(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    out = np.empty(a.shape, dtype=object)
    for idx in np.ndindex(a.shape):
        out[idx] = a[idx] - b[idx]
    return out


def mat_scale(s: Sym, a: np.ndarray) -> np.ndarray:
    """Scalar series times matrix."""
    return mat_map(lambda e: s * e, a)


def mat_is_zero(a: np.ndarray) -> bool:
    return all(e.is_zero() for e in a.flat)


def mat_sum(mats: Iterable[np.ndarray]) -> np.ndarray | None:
    acc = None
    for mt in mats:
        acc = mt if acc is None else mat_add(acc, mt)
    return acc
