"""Reverse-mode automatic differentiation on a flat scalar tape.

Every arithmetic operation on a :class:`Var` appends one node to its
:class:`Tape`: the node value, the indices of its parent nodes and the local
partial derivatives with respect to those parents. A reverse sweep then
accumulates adjoints from an output node back to any set of earlier nodes.

The module level functions (``exp``, ``log``, ``tanh`` ...) accept plain
floats as well as ``Var`` objects, so the same constitutive code runs either
on the tape or on bare floats.

A few fused primitives (``dot``, ``softplus``, ``sigmoid`` and ``tanh`` with an
adaptive sharpness argument) exist only to keep node counts low for the small
networks that are evaluated thousands of times per training epoch.
"""
from __future__ import annotations

import math
from typing import Iterable, Sequence

import numpy as np

# Node kinds. LINEAR nodes store value = aux + sum(partial_i * parent_i).
LEAF = 0
LINEAR = 1
MUL = 2
DIV = 3
DOT = 4
EXP = 5
LOG = 6
TANH = 7
RELU = 8
SQRT = 9
POW = 10
SOFTPLUS = 11
SIGMOID = 12
RDIV = 13
ADAPTIVE_TANH = 14
ABS = 15
CUSTOM = 16


class TapeError(ValueError):
    pass


def _sigmoid(z: float) -> float:
    if z >= 0.0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


def _softplus(z: float) -> float:
    # log(1 + e^z) without overflow
    if z > 0.0:
        return z + math.log1p(math.exp(-z))
    return math.log1p(math.exp(z))


class Tape:
    """Append-only record of scalar operations.

    Nodes are stored in parallel lists so a reverse sweep is a tight loop over
    plain Python lists.
    """

    __slots__ = ("val", "kind", "par", "der", "aux")

    def __init__(self):
        self.val: list[float] = []
        self.kind: list[int] = []
        self.par: list[tuple] = []
        self.der: list[tuple] = []
        self.aux: list = []

    def __len__(self):
        return len(self.val)

    def var(self, value: float) -> "Var":
        """Create an independent (leaf) variable."""
        value = float(value)
        idx = len(self.val)
        self.val.append(value)
        self.kind.append(LEAF)
        self.par.append(())
        self.der.append(())
        self.aux.append(None)
        return Var(self, idx, value)

    def vars(self, values: Iterable[float]) -> list["Var"]:
        return [self.var(v) for v in values]

    def _push(self, value, kind, par, der, aux=None) -> "Var":
        idx = len(self.val)
        self.val.append(value)
        self.kind.append(kind)
        self.par.append(par)
        self.der.append(der)
        self.aux.append(aux)
        return Var(self, idx, value)

    def truncate(self, n: int):
        """Drop every node from index ``n`` on; handles to them become dangling."""
        if not 0 <= n <= len(self.val):
            raise TapeError(f"cannot truncate a tape of {len(self.val)} nodes to {n}")
        del self.val[n:], self.kind[n:], self.par[n:], self.der[n:], self.aux[n:]

    # ------------------------------------------------------------------ sweeps
    def _check(self, v: "Var"):
        if not isinstance(v, Var) or v.tape is not self or not 0 <= v.idx < len(self.val):
            raise TapeError(f"dangling node {v!r}")

    def adjoints(self, output: "Var", lo: int = 0) -> list[float]:
        """Adjoints of nodes ``lo .. output.idx`` (offset by ``lo``)."""
        self._check(output)
        out = output.idx
        adj = [0.0] * (out - lo + 1)
        adj[-1] = 1.0
        par = self.par
        der = self.der
        if lo == 0:
            for k in range(out, -1, -1):
                a = adj[k]
                if a != 0.0:
                    for p, d in zip(par[k], der[k]):
                        adj[p] += a * d
        else:
            for k in range(out, lo - 1, -1):
                a = adj[k - lo]
                if a != 0.0:
                    for p, d in zip(par[k], der[k]):
                        if p >= lo:
                            adj[p - lo] += a * d
        return adj

    def grad(self, output: "Var", inputs: Sequence["Var"]) -> list[float]:
        """d output / d input for every input, by one reverse sweep.

        Inputs need not be leaves: for an interior node the result is the
        derivative with the node's own ancestors held fixed.
        """
        for v in inputs:
            self._check(v)
        if not isinstance(output, Var):
            return [0.0] * len(inputs)
        self._check(output)
        lo = min((v.idx for v in inputs), default=output.idx)
        if lo > output.idx:
            return [0.0] * len(inputs)
        adj = self.adjoints(output, lo)
        return [adj[v.idx - lo] if v.idx <= output.idx else 0.0 for v in inputs]

    def jacobian(self, outputs: Sequence["Var"], inputs: Sequence["Var"]) -> np.ndarray:
        jac = np.zeros((len(outputs), len(inputs)))
        for i, out in enumerate(outputs):
            jac[i] = self.grad(out, inputs)
        return jac

    # ------------------------------------------------------------------ replay
    def replay(self) -> list[float]:
        """Recompute every node value from the leaves, in recorded order."""
        v = list(self.val)
        for k, kind in enumerate(self.kind):
            if kind == LEAF:
                continue
            p = self.par[k]
            a = self.aux[k]
            if kind == LINEAR:
                s = a
                for i, d in zip(p, self.der[k]):
                    s += d * v[i]
                v[k] = s
            elif kind == MUL:
                v[k] = v[p[0]] * v[p[1]]
            elif kind == DIV:
                v[k] = v[p[0]] / v[p[1]]
            elif kind == DOT:
                n = a
                s = 0.0
                for i in range(n):
                    s += v[p[i]] * v[p[n + i]]
                if len(p) > 2 * n:
                    s += v[p[-1]]
                v[k] = s
            elif kind == RDIV:
                v[k] = a / v[p[0]]
            elif kind == EXP:
                v[k] = math.exp(v[p[0]])
            elif kind == LOG:
                v[k] = math.log(v[p[0]])
            elif kind == TANH:
                v[k] = math.tanh(v[p[0]])
            elif kind == RELU:
                v[k] = v[p[0]] if v[p[0]] > 0.0 else 0.0
            elif kind == ABS:
                v[k] = abs(v[p[0]])
            elif kind == SQRT:
                v[k] = math.sqrt(v[p[0]])
            elif kind == POW:
                v[k] = v[p[0]] ** a
            elif kind == CUSTOM:
                v[k] = a([v[i] for i in p])
            elif kind in (SOFTPLUS, SIGMOID, ADAPTIVE_TANH):
                z = v[p[0]]
                beta = v[p[1]] if len(p) > 1 else a
                if kind == SOFTPLUS:
                    v[k] = _softplus(beta * z) / beta
                elif kind == SIGMOID:
                    v[k] = _sigmoid(beta * z)
                else:
                    v[k] = math.tanh(beta * z)
            else:  # pragma: no cover
                raise TapeError(f"unknown node kind {kind}")
        return v


class Var:
    """Handle to one tape node, carrying its value."""

    __slots__ = ("tape", "idx", "value")

    def __init__(self, tape: Tape, idx: int, value: float):
        self.tape = tape
        self.idx = idx
        self.value = value

    def __repr__(self):
        return f"Var({self.value!r}, idx={self.idx})"

    def __float__(self):
        return self.value

    def _same(self, other: "Var"):
        if other.tape is not self.tape:
            raise TapeError("operands recorded on different tapes")

    def __add__(self, other):
        if isinstance(other, Var):
            self._same(other)
            return self.tape._push(self.value + other.value, LINEAR,
                                   (self.idx, other.idx), (1.0, 1.0), 0.0)
        other = float(other)
        return self.tape._push(other + self.value, LINEAR, (self.idx,), (1.0,), other)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Var):
            self._same(other)
            return self.tape._push(self.value - other.value, LINEAR,
                                   (self.idx, other.idx), (1.0, -1.0), 0.0)
        other = float(other)
        return self.tape._push(-other + self.value, LINEAR, (self.idx,), (1.0,), -other)

    def __rsub__(self, other):
        other = float(other)
        return self.tape._push(other + -1.0 * self.value, LINEAR, (self.idx,), (-1.0,), other)

    def __neg__(self):
        return self.tape._push(0.0 + -1.0 * self.value, LINEAR, (self.idx,), (-1.0,), 0.0)

    def __mul__(self, other):
        if isinstance(other, Var):
            self._same(other)
            return self.tape._push(self.value * other.value, MUL,
                                   (self.idx, other.idx), (other.value, self.value))
        other = float(other)
        return self.tape._push(0.0 + other * self.value, LINEAR, (self.idx,), (other,), 0.0)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Var):
            self._same(other)
            q = self.value / other.value
            return self.tape._push(q, DIV, (self.idx, other.idx),
                                   (1.0 / other.value, -q / other.value))
        return self * (1.0 / float(other))

    def __rtruediv__(self, other):
        other = float(other)
        q = other / self.value
        return self.tape._push(q, RDIV, (self.idx,), (-q / self.value,), other)

    def __pow__(self, c):
        if isinstance(c, Var):
            return exp(c * log(self))
        c = float(c)
        x = self.value
        if c == 2.0:
            return self.tape._push(x ** c, POW, (self.idx,), (2.0 * x,), c)
        d = c * x ** (c - 1.0) if x != 0.0 else (0.0 if c > 1.0 else math.inf)
        return self.tape._push(x ** c, POW, (self.idx,), (d,), c)


# ---------------------------------------------------------------------- helpers
def value(x) -> float:
    return x.value if isinstance(x, Var) else float(x)


def values(xs) -> list[float]:
    return [value(x) for x in xs]


def _unary(x: Var, kind: int, val: float, d: float, aux=None) -> Var:
    return x.tape._push(val, kind, (x.idx,), (d,), aux)


def exp(x):
    if isinstance(x, Var):
        e = math.exp(x.value)
        return _unary(x, EXP, e, e)
    return math.exp(x)


def log(x):
    if isinstance(x, Var):
        return _unary(x, LOG, math.log(x.value), 1.0 / x.value)
    return math.log(x)


def tanh(x, beta=None):
    """tanh(beta * x); ``beta`` may itself be a Var (adaptive tanh)."""
    if beta is None:
        if isinstance(x, Var):
            t = math.tanh(x.value)
            return _unary(x, TANH, t, 1.0 - t * t)
        return math.tanh(x)
    return _adaptive(x, beta, ADAPTIVE_TANH)


def relu(x):
    """max(x, 0) with subgradient 0 at x == 0."""
    if isinstance(x, Var):
        if x.value > 0.0:
            return _unary(x, RELU, x.value, 1.0)
        return _unary(x, RELU, 0.0, 0.0)
    return x if x > 0.0 else 0.0


def sqrt(x):
    if isinstance(x, Var):
        s = math.sqrt(x.value)
        return _unary(x, SQRT, s, 0.5 / s if s > 0.0 else 0.0)
    return math.sqrt(x)


def absolute(x):
    """|x| with derivative sign(x), and 0 at the origin."""
    if isinstance(x, Var):
        v = x.value
        return _unary(x, ABS, abs(v), 1.0 if v > 0.0 else (-1.0 if v < 0.0 else 0.0))
    return abs(x)


def power(x, c: float):
    if isinstance(x, Var):
        return x ** c
    return float(x) ** c


def select(flag: bool, a, b):
    """Return ``a`` if flag else ``b``; the flag is a plain bool, not recorded."""
    return a if flag else b


def sigmoid(x, beta=1.0):
    """Logistic 1 / (1 + exp(-beta * x))."""
    return _adaptive(x, beta, SIGMOID)


def softplus(x, beta=1.0):
    """log(1 + exp(beta * x)) / beta."""
    return _adaptive(x, beta, SOFTPLUS)


def _adaptive(x, beta, kind):
    zx = value(x)
    b = value(beta)
    bz = b * zx
    if kind == SOFTPLUS:
        f = _softplus(bz) / b
        s = _sigmoid(bz)
        dz = s
        db = (zx * s - f) / b
    elif kind == SIGMOID:
        f = _sigmoid(bz)
        g = f * (1.0 - f)
        dz = b * g
        db = zx * g
    else:
        f = math.tanh(bz)
        g = 1.0 - f * f
        dz = b * g
        db = zx * g
    xv = isinstance(x, Var)
    bv = isinstance(beta, Var)
    if xv and bv:
        x._same(beta)
        return x.tape._push(f, kind, (x.idx, beta.idx), (dz, db))
    if xv:
        return x.tape._push(f, kind, (x.idx,), (dz,), b)
    if bv:
        z = beta.tape.var(zx)
        return beta.tape._push(f, kind, (z.idx, beta.idx), (dz, db))
    return f


def dot(xs: Sequence, ys: Sequence, bias=None):
    """sum(x_i * y_i) (+ bias) as a single node when every factor is a Var."""
    n = len(xs)
    if n != len(ys):
        raise TapeError("dot: length mismatch")
    tape = None
    all_var = True
    for x in xs:
        if isinstance(x, Var):
            tape = x.tape
        else:
            all_var = False
    for y in ys:
        if isinstance(y, Var):
            tape = y.tape
        else:
            all_var = False
    if tape is None and not isinstance(bias, Var):
        s = 0.0
        for x, y in zip(xs, ys):
            s += x * y
        return s + bias if bias is not None else s
    if all_var and n and (bias is None or isinstance(bias, Var)):
        xv = [x.value for x in xs]
        yv = [y.value for y in ys]
        s = 0.0
        for a, b in zip(xv, yv):
            s += a * b
        par = [x.idx for x in xs] + [y.idx for y in ys]
        der = yv + xv
        if bias is not None:
            s += bias.value
            par.append(bias.idx)
            der.append(1.0)
        return tape._push(s, DOT, tuple(par), tuple(der), n)
    # mixed constants and variables: a linear node over the variable factors
    if tape is None:
        tape = bias.tape
    const = 0.0
    par = []
    der = []
    for x, y in zip(xs, ys):
        xvar = isinstance(x, Var)
        yvar = isinstance(y, Var)
        if xvar and yvar:
            par.append((x * y).idx)
            der.append(1.0)
        elif xvar:
            par.append(x.idx)
            der.append(float(y))
        elif yvar:
            par.append(y.idx)
            der.append(float(x))
        else:
            const += x * y
    if bias is not None:
        if isinstance(bias, Var):
            par.append(bias.idx)
            der.append(1.0)
        else:
            const += float(bias)
    return linear(tape, const, par, der)


def linear(tape: Tape, const: float, par: Sequence[int], der: Sequence[float]) -> Var:
    s = const
    val = tape.val
    for p, d in zip(par, der):
        s += d * val[p]
    return tape._push(s, LINEAR, tuple(par), tuple(der), const)


def lincomb(coeffs: Sequence[float], xs: Sequence, const: float = 0.0):
    """const + sum(c_i * x_i) with constant coefficients."""
    tape = None
    for x in xs:
        if isinstance(x, Var):
            tape = x.tape
            break
    if tape is None:
        s = const
        for c, x in zip(coeffs, xs):
            s += c * x
        return s
    par = []
    der = []
    for c, x in zip(coeffs, xs):
        c = float(c)
        if isinstance(x, Var):
            if c != 0.0:
                par.append(x.idx)
                der.append(c)
        else:
            const += c * x
    return linear(tape, const, par, der)


def vsum(xs: Sequence):
    return lincomb([1.0] * len(xs), xs)


def custom(tape: Tape, val: float, parents: Sequence[Var], partials: Sequence[float],
           recompute) -> Var:
    """Record a user primitive with precomputed local partials.

    ``recompute`` maps the list of parent values back to the node value and is
    only used by :meth:`Tape.replay`.
    """
    par = tuple(v.idx for v in parents)
    if len(par) != len(partials):
        raise TapeError("custom node: parents and partials differ in length")
    for v in parents:
        if v.tape is not tape:
            raise TapeError("custom node: parent on another tape")
    return tape._push(float(val), CUSTOM, par, tuple(partials), recompute)


def grad(tape: Tape, output, inputs: Sequence[Var]) -> list[float]:
    return tape.grad(output, inputs)


def jacobian(tape: Tape, outputs: Sequence, inputs: Sequence[Var]) -> np.ndarray:
    return tape.jacobian(outputs, inputs)
