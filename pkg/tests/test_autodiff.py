import math

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from nnevp import autodiff as ad

from conftest import rel_err

H = 1e-3


def central(f, x, h=H):
    """Five-point central difference; truncation error O(h^4)."""
    s = h * max(1.0, abs(x))
    return (-f(x + 2 * s) + 8 * f(x + s) - 8 * f(x - s) + f(x - 2 * s)) / (12.0 * s)


def tape_derivative(f, x):
    tape = ad.Tape()
    v = tape.var(x)
    return tape.grad(f(v), [v])[0]


UNARY = {
    "exp": (ad.exp, st.floats(-5, 5)),
    "log": (ad.log, st.floats(0.05, 50)),
    "tanh": (ad.tanh, st.floats(-3, 3)),
    "sqrt": (ad.sqrt, st.floats(0.05, 50)),
    "softplus": (lambda x: ad.softplus(x, 2.5), st.floats(-4, 4)),
    "sigmoid": (lambda x: ad.sigmoid(x, 0.7), st.floats(-6, 6)),
    "adaptive_tanh": (lambda x: ad.tanh(x, 1.7), st.floats(-2, 2)),
    "power": (lambda x: ad.power(x, 3.3), st.floats(0.1, 4)),
    "square": (lambda x: x ** 2, st.floats(-4, 4)),
    "reciprocal": (lambda x: 2.0 / x, st.floats(0.2, 5)),
    "relu": (ad.relu, st.floats(-3, 3)),
    "abs": (ad.absolute, st.floats(-3, 3)),
}


@pytest.mark.parametrize("name", sorted(UNARY))
@given(data=st.data())
def test_unary_primitive_matches_finite_difference(name, data):
    f, xs = UNARY[name]
    x = data.draw(xs)
    if name in ("relu", "abs"):
        assume(abs(x) > 1e-3)
    exact = tape_derivative(f, x)
    fd = central(lambda t: ad.value(f(t)), x)
    assert rel_err(exact, fd, floor=1e-8) <= 1e-6


# arguments kept out of tanh/logistic saturation, where differences lose all digits
@given(st.floats(-2, 2), st.floats(0.2, 3))
def test_binary_primitives(a, b):
    for f in (lambda x, y: x * y, lambda x, y: x / y, lambda x, y: x - y,
              lambda x, y: ad.softplus(x, y), lambda x, y: ad.sigmoid(x, y),
              lambda x, y: ad.tanh(x, y), lambda x, y: y ** x):
        tape = ad.Tape()
        x, y = tape.var(a), tape.var(b)
        ga, gb = tape.grad(f(x, y), [x, y])
        fa = central(lambda t: ad.value(f(t, b)), a)
        fb = central(lambda t: ad.value(f(a, t)), b)
        assert rel_err(ga, fa, floor=1e-8) <= 1e-6
        assert rel_err(gb, fb, floor=1e-8) <= 1e-6


@given(st.lists(st.floats(-2, 2), min_size=3, max_size=3),
       st.lists(st.floats(-2, 2), min_size=3, max_size=3), st.floats(-1, 1))
def test_dot_and_lincomb(xs, ys, c):
    tape = ad.Tape()
    xv, yv = tape.vars(xs), tape.vars(ys)
    b = tape.var(c)
    d = ad.dot(xv, yv, b)
    assert d.value == pytest.approx(float(np.dot(xs, ys)) + c)
    g = tape.grad(d, xv + yv + [b])
    assert np.allclose(g, ys + xs + [1.0])
    mixed = ad.dot(xv, ys, 0.5)
    assert tape.grad(mixed, xv) == pytest.approx(ys)
    lc = ad.lincomb([2.0, -1.0, 0.0], xv, const=3.0)
    assert lc.value == pytest.approx(2 * xs[0] - xs[1] + 3.0)
    assert tape.grad(lc, xv) == [2.0, -1.0, 0.0]


def test_composite_chain_rule():
    def f(x, y):
        return ad.exp(ad.tanh(x * y)) / ad.sqrt(1.0 + x * x) + ad.log(y) * x ** 3

    a, b = 0.7, 1.3
    tape = ad.Tape()
    x, y = tape.var(a), tape.var(b)
    g = tape.grad(f(x, y), [x, y])
    assert rel_err(g[0], central(lambda t: ad.value(f(t, b)), a)) <= 1e-6
    assert rel_err(g[1], central(lambda t: ad.value(f(a, t)), b)) <= 1e-6


def test_reused_node_accumulates_adjoint():
    tape = ad.Tape()
    x = tape.var(3.0)
    y = x * x + x * 2.0 + x
    assert tape.grad(y, [x]) == [2 * 3.0 + 3.0]


def test_gradient_of_interior_node():
    tape = ad.Tape()
    x = tape.var(2.0)
    u = x * x
    y = ad.exp(u)
    assert tape.grad(y, [u])[0] == pytest.approx(math.exp(4.0))


def test_jacobian():
    tape = ad.Tape()
    x, y = tape.vars([1.0, 2.0])
    outs = [x * y, x + y, ad.sin(x) if hasattr(ad, "sin") else x * 3.0]
    assert np.allclose(tape.jacobian(outs, [x, y]), [[2.0, 1.0], [1.0, 1.0], [3.0, 0.0]])


def test_replay_reproduces_values():
    tape = ad.Tape()
    x, b = tape.vars([0.4, 2.0])
    out = ad.softplus(x * 3.0 - 1.0, b) + ad.dot([x, b], [b, x]) + ad.relu(x - 1.0)
    c = ad.custom(tape, x.value ** 2, [x], [2 * x.value], lambda v: v[0] ** 2)
    z = out * c
    assert tape.replay()[z.idx] == pytest.approx(z.value, rel=1e-15)


def test_custom_node_partials():
    tape = ad.Tape()
    x, y = tape.vars([1.5, -2.0])
    c = ad.custom(tape, x.value * y.value, [x, y], [y.value, x.value], lambda v: v[0] * v[1])
    assert tape.grad(c * 2.0, [x, y]) == [-4.0, 3.0]
    with pytest.raises(ad.TapeError):
        ad.custom(tape, 0.0, [x], [1.0, 2.0], None)


def test_cross_tape_operands_rejected():
    a, b = ad.Tape().var(1.0), ad.Tape().var(2.0)
    with pytest.raises(ad.TapeError):
        a + b
    with pytest.raises(ad.TapeError):
        ad.custom(a.tape, 0.0, [b], [1.0], None)


def test_truncate_discards_scratch_nodes():
    tape = ad.Tape()
    x = tape.var(1.0)
    keep = x * 2.0
    mark = len(tape)
    scratch = ad.exp(keep) * keep
    tape.truncate(mark)
    assert len(tape) == mark
    with pytest.raises(ad.TapeError):
        tape.grad(scratch, [x])
    assert tape.grad(keep + 1.0, [x]) == [2.0]
    with pytest.raises(ad.TapeError):
        tape.truncate(len(tape) + 1)


def test_constants_pass_through():
    assert ad.exp(0.0) == 1.0
    assert ad.relu(-2.0) == 0.0
    assert ad.dot([1.0, 2.0], [3.0, 4.0], 1.0) == 12.0
    assert ad.value(3) == 3.0
    tape = ad.Tape()
    x = tape.var(1.0)
    assert tape.grad(2.0, [x]) == [0.0]


def test_relu_subgradient_at_kink():
    assert tape_derivative(ad.relu, 0.0) == 0.0
    assert tape_derivative(ad.absolute, 0.0) == 0.0
