"""Constrained feedforward networks for the dual potential, the hardening
resistance and the Hall-Petch term.

A network is an architecture plus one flat parameter vector. The numpy cores
``mlp_value`` and ``mlp_slope`` return a network output (or its input
derivative) together with the input derivative one order higher and the full
parameter gradient; the tape wrappers record each evaluation as one custom
node carrying those partials. ``mlp_value_taped`` / ``mlp_slope_taped`` build
the same quantities from elementary tape operations and serve as a cross-check.

Parameter layout, per layer: W (row-major, n_out x n_in) then b; after the
last layer come the per-hidden-layer sharpness values beta, then the two mix
weights alpha.
"""
from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from . import tensor as tn

FORMAT_VERSION = 1
BETA_MIN = 1e-3
OUTPUT_FLOOR = 1e-3
KNOT_LO, KNOT_HI = 0.8, 1.3  # potential kinks, x = s_eq / D
EPS_DIV = 1e-12

CONVEX = "convex-increasing-through-origin"
MONOTONE = "monotone-increasing-positive"
RECIPROCAL = "reciprocal-decreasing-positive"
PROFILES = (CONVEX, MONOTONE, RECIPROCAL)

MIXES = ("relu+logistic", "relu+tanh", "logistic+tanh")
ACTIVATIONS = ("softplus", "tanh") + MIXES


class ConstraintViolation(RuntimeError):
    pass


# ----------------------------------------------------------------- activations
def _sig(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _softplus(x):
    return np.logaddexp(0.0, x)


def _part(kind, z, b):
    """g, g', g'', dg/dbeta, dg'/dbeta for one mix component."""
    if kind == "relu":
        pos = (z > 0.0).astype(float)
        zero = np.zeros_like(z)
        return z * pos, pos, zero, zero, zero
    if kind == "logistic":
        s = _sig(b * z)
        q = s * (1.0 - s)
        return s, b * q, b * b * q * (1.0 - 2.0 * s), z * q, q * (1.0 + b * z * (1.0 - 2.0 * s))
    if kind == "tanh":
        t = np.tanh(b * z)
        q = 1.0 - t * t
        return t, b * q, -2.0 * b * b * t * q, z * q, q * (1.0 - 2.0 * b * z * t)
    raise ValueError(kind)


def activation_terms(name: str, z: np.ndarray, beta: float, alpha: np.ndarray):
    """Return f, f', f'', df/dbeta, df'/dbeta, df/dalpha (2,n), df'/dalpha (2,n)."""
    zero = np.zeros_like(z)
    if name == "softplus":
        s = _sig(beta * z)
        f = _softplus(beta * z) / beta
        q = s * (1.0 - s)
        return f, s, beta * q, (z * s - f) / beta, z * q, np.stack([zero, zero]), np.stack([zero, zero])
    if name == "tanh":
        t = np.tanh(z)
        q = 1.0 - t * t
        return t, q, -2.0 * t * q, zero, zero, np.stack([zero, zero]), np.stack([zero, zero])
    k1, k2 = name.split("+")
    g1 = _part(k1, z, beta)
    g2 = _part(k2, z, beta)
    a1, a2 = alpha
    return (a1 * g1[0] + a2 * g2[0], a1 * g1[1] + a2 * g2[1], a1 * g1[2] + a2 * g2[2],
            a1 * g1[3] + a2 * g2[3], a1 * g1[4] + a2 * g2[4],
            np.stack([g1[0], g2[0]]), np.stack([g1[1], g2[1]]))


def activation_taped(name: str, z, beta, alpha):
    """Activation built from elementary tape operations (reference path)."""
    if name == "softplus":
        return ad.softplus(z, beta)
    if name == "tanh":
        return ad.tanh(z)
    parts = []
    for kind in name.split("+"):
        if kind == "relu":
            parts.append(ad.relu(z))
        elif kind == "logistic":
            parts.append(ad.sigmoid(z, beta))
        else:
            parts.append(ad.tanh(z, beta))
    return ad.dot(list(alpha), parts)


# ---------------------------------------------------------------- architecture
@dataclass(frozen=True)
class Architecture:
    sizes: tuple  # (1, n_1, ..., n_L, 1)
    activation: str
    out_mult: float = 1.0  # fixed multiplier on the output-layer weights

    def __post_init__(self):
        if self.sizes[0] != 1 or self.sizes[-1] != 1 or len(self.sizes) < 3:
            raise ValueError(f"scalar-in scalar-out network expected, got sizes {self.sizes}")
        if not self.out_mult > 0.0:
            raise ValueError("output multiplier must be positive")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def n_hidden(self) -> int:
        return len(self.sizes) - 2

    def layer_slices(self):
        """(W slice, W shape, b slice) per layer, in flat-vector order."""
        out = []
        k = 0
        for n_in, n_out in zip(self.sizes[:-1], self.sizes[1:]):
            w = slice(k, k + n_in * n_out)
            k += n_in * n_out
            b = slice(k, k + n_out)
            k += n_out
            out.append((w, (n_out, n_in), b))
        return out

    @property
    def beta_slice(self) -> slice:
        k = self.layer_slices()[-1][2].stop
        return slice(k, k + self.n_hidden)

    @property
    def alpha_slice(self) -> slice:
        k = self.beta_slice.stop
        return slice(k, k + 2)

    @property
    def n_params(self) -> int:
        return self.alpha_slice.stop


def _unpack(arch: Architecture, theta: np.ndarray):
    layers = [(theta[w].reshape(shape), theta[b]) for w, shape, b in arch.layer_slices()]
    W_out, b_out = layers[-1]
    layers[-1] = (arch.out_mult * W_out, b_out)
    return layers, theta[arch.beta_slice], theta[arch.alpha_slice]


def mlp_value(arch: Architecture, theta: np.ndarray, x: float):
    """Network output y(x), dy/dx and dy/dtheta."""
    layers, beta, alpha = _unpack(arch, theta)
    hs = [np.array([x], dtype=float)]
    terms = []
    for l, (W, b) in enumerate(layers[:-1]):
        z = W @ hs[-1] + b
        t = activation_terms(arch.activation, z, beta[l], alpha)
        terms.append(t)
        hs.append(t[0])
    W_out, b_out = layers[-1]
    y = float(W_out[0] @ hs[-1] + b_out[0])

    g = np.zeros(arch.n_params)
    slices = arch.layer_slices()
    g[slices[-1][0]] = arch.out_mult * hs[-1]
    g[slices[-1][2]] = 1.0
    hb = W_out[0].copy()
    g_beta = g[arch.beta_slice]
    g_alpha = g[arch.alpha_slice]
    for l in range(arch.n_hidden - 1, -1, -1):
        f, fz, _, fb, _, fa, _ = terms[l]
        zb = hb * fz
        g_beta[l] = hb @ fb
        g_alpha += fa @ hb
        W, _ = layers[l]
        g[slices[l][0]] = np.outer(zb, hs[l]).ravel()
        g[slices[l][2]] = zb
        hb = W.T @ zb
    return y, float(hb[0]), g


def mlp_slope(arch: Architecture, theta: np.ndarray, x: float):
    """Input derivative y'(x), second derivative y''(x) and dy'/dtheta."""
    layers, beta, alpha = _unpack(arch, theta)
    hs = [np.array([x], dtype=float)]
    ts = [np.array([1.0])]
    dzs = []
    terms = []
    for l, (W, b) in enumerate(layers[:-1]):
        z = W @ hs[-1] + b
        dz = W @ ts[-1]
        t = activation_terms(arch.activation, z, beta[l], alpha)
        terms.append(t)
        dzs.append(dz)
        hs.append(t[0])
        ts.append(t[1] * dz)
    W_out, _ = layers[-1]
    yp = float(W_out[0] @ ts[-1])

    g = np.zeros(arch.n_params)
    slices = arch.layer_slices()
    g[slices[-1][0]] = arch.out_mult * ts[-1]
    tb = W_out[0].copy()
    hb = np.zeros_like(tb)
    g_beta = g[arch.beta_slice]
    g_alpha = g[arch.alpha_slice]
    for l in range(arch.n_hidden - 1, -1, -1):
        f, fz, fzz, fb, fzb, fa, fza = terms[l]
        dz = dzs[l]
        dzb = tb * fz
        zb = tb * dz * fzz + hb * fz
        g_beta[l] = (tb * dz) @ fzb + hb @ fb
        g_alpha += fza @ (tb * dz) + fa @ hb
        W, _ = layers[l]
        g[slices[l][0]] = (np.outer(dzb, ts[l]) + np.outer(zb, hs[l])).ravel()
        g[slices[l][2]] = zb
        tb = W.T @ dzb
        hb = W.T @ zb
    return yp, float(hb[0]), g


def _taped_layers(arch, theta_vars):
    layers = []
    for w, shape, b in arch.layer_slices():
        flat = theta_vars[w]
        W = [flat[i * shape[1]:(i + 1) * shape[1]] for i in range(shape[0])]
        layers.append((W, theta_vars[b]))
    layers[-1] = ([[arch.out_mult * w for w in layers[-1][0][0]]], layers[-1][1])
    return layers, theta_vars[arch.beta_slice], theta_vars[arch.alpha_slice]


def mlp_value_taped(arch: Architecture, theta_vars: Sequence, x):
    layers, beta, alpha = _taped_layers(arch, list(theta_vars))
    h = [x]
    for l, (W, b) in enumerate(layers[:-1]):
        h = [activation_taped(arch.activation, ad.dot(row, h, bi), beta[l], alpha)
             for row, bi in zip(W, b)]
    W_out, b_out = layers[-1]
    return ad.dot(W_out[0], h, b_out[0])


def mlp_slope_taped(arch: Architecture, theta_vars: Sequence, x):
    """Forward-mode input derivative written out in elementary operations."""
    layers, beta, alpha = _taped_layers(arch, list(theta_vars))
    h, t = [x], [1.0]
    for l, (W, b) in enumerate(layers[:-1]):
        z = [ad.dot(row, h, bi) for row, bi in zip(W, b)]
        dz = [ad.dot(row, t) for row in W]
        h = [activation_taped(arch.activation, zi, beta[l], alpha) for zi in z]
        t = [_activation_slope_taped(arch.activation, zi, beta[l], alpha) * d
             for zi, d in zip(z, dz)]
    W_out, _ = layers[-1]
    return ad.dot(W_out[0], t)


def _activation_slope_taped(name, z, beta, alpha):
    if name == "softplus":
        return ad.sigmoid(z, beta)
    if name == "tanh":
        th = ad.tanh(z)
        return 1.0 - th * th
    parts = []
    for kind in name.split("+"):
        if kind == "relu":
            parts.append(1.0 if ad.value(z) > 0.0 else 0.0)
        elif kind == "logistic":
            s = ad.sigmoid(z, beta)
            parts.append(beta * s * (1.0 - s))
        else:
            th = ad.tanh(z, beta)
            parts.append(beta * (1.0 - th * th))
    return ad.dot(list(alpha), parts)


# ------------------------------------------------------------------ the network
@dataclass
class ConstrainedNet:
    """One constrained network with its input and output scales.

    potential  : N(x) = net(x) - net(0) - net'(0) x,  x = s_eq / D (dimensionless)
    hardening  : R(r) = out_scale * net(r / in_scale)
    hall-petch : HP(d) = out_scale / net(d / in_scale)

    Weights are always nonnegative. With ``free_biases`` the hidden-layer
    biases are unconstrained, which keeps monotonicity (and convexity for the
    softplus potential) but lets units switch on inside the input range. For
    the hardening and Hall-Petch nets the output bias is then projected so
    that net(0) >= OUTPUT_FLOOR, which with monotonicity keeps the output
    positive for every nonnegative input.
    """

    profile: str
    arch: Architecture
    theta: np.ndarray
    in_scale: float = 1.0
    out_scale: float = 1.0
    train_beta: bool = True
    train_alpha: bool = False
    free_biases: bool = False

    def __post_init__(self):
        if self.profile not in PROFILES:
            raise ValueError(f"unknown constraint profile {self.profile!r}")
        self.theta = np.asarray(self.theta, dtype=float)
        if self.theta.shape != (self.arch.n_params,):
            raise ValueError("parameter vector does not match the architecture")
        if not (self.in_scale > 0.0 and self.out_scale > 0.0):
            raise ValueError("input and output scales must be positive")

    @classmethod
    def create(cls, profile: str, hidden=(20, 20), activation=None, alpha=(0.0, 1.0),
               rng=None, in_scale=1.0, out_scale=1.0, train_alpha=False,
               free_biases=None, init_level=1.0, out_weight=1.0) -> "ConstrainedNet":
        """Random initialisation.

        Weights are drawn in [0, 2/sqrt(fan_in)] so that a learning-rate sized
        step is a small relative change. The potential's first layer gets
        slopes spread log-uniformly over [2, 200] with kinks spread over
        [KNOT_LO, KNOT_HI], around the yield point x = 1, and is rescaled to
        unit slope at x = 1 (flow at the reference rate when s_eq equals the
        reference stress). The hardening net starts at net(0) = init_level
        with a weak slope; the Hall-Petch net starts at
        out_scale / net(1) = init_level * out_scale.
        """
        if activation is None:
            activation = {CONVEX: "softplus", MONOTONE: "relu+tanh",
                          RECIPROCAL: "tanh"}[profile]
        if free_biases is None:
            free_biases = profile != RECIPROCAL
        rng = np.random.default_rng(rng)
        arch = Architecture((1, *hidden, 1), activation)
        theta = np.zeros(arch.n_params)
        layers = arch.layer_slices()
        for w, (n_out, n_in), b in layers[1:]:
            theta[w] = rng.uniform(0.0, 2.0 / math.sqrt(n_in), n_out * n_in)
            theta[b] = rng.uniform(-0.1 if free_biases else 0.0, 0.1, n_out)
        w, (n1, _), b = layers[0]
        if profile == CONVEX:
            theta[w] = np.exp(rng.uniform(math.log(2.0), math.log(200.0), n1))
            theta[b] = -theta[w] * rng.uniform(KNOT_LO, KNOT_HI, n1)
        elif free_biases:
            theta[w] = rng.uniform(0.5, 2.0, n1)
            theta[b] = -theta[w] * rng.uniform(0.0, 2.0, n1)
        else:
            theta[w] = rng.uniform(0.0, 2.0, n1)
            theta[b] = rng.uniform(0.0, 0.1, n1)
        theta[layers[-1][0]] *= out_weight
        theta[layers[-1][2]] = 0.0
        theta[arch.beta_slice] = 1.0
        theta[arch.alpha_slice] = alpha
        net = cls(profile, arch, theta, in_scale, out_scale,
                  train_beta=activation != "tanh", train_alpha=train_alpha,
                  free_biases=bool(free_biases))
        # calibrate through the fixed output multiplier, leaving weights O(1)
        b_out = layers[-1][2]
        if profile == CONVEX:
            mult = 1.0 / net.slope(1.0)
        elif profile == MONOTONE:
            gain = net.raw(1.0) - net.raw(0.0)
            mult = 0.05 * init_level / gain if gain > 0.0 else 1.0
        else:
            # inner(0) = 1/(2 level), inner(1) = 1/level
            gain = net.raw(1.0) - net.raw(0.0)
            mult = 0.5 / (init_level * gain) if gain > 0.0 else 1.0
        net.arch = dataclasses.replace(arch, out_mult=mult)
        if profile == MONOTONE:
            net.theta[b_out] = max(init_level - net.raw(0.0), 0.0)
        elif profile == RECIPROCAL:
            net.theta[b_out] = 1.0 / init_level - net.raw(1.0)
        net.project()
        return net

    # -- parameter bookkeeping
    @property
    def n_params(self) -> int:
        return self.arch.n_params

    def masks(self):
        """Boolean masks: nonnegative, beta, alpha, trainable, decayed."""
        n = self.n_params
        weights = np.zeros(n, bool)
        biases = np.zeros(n, bool)
        for w, _, b in self.arch.layer_slices():
            weights[w] = True
            biases[b] = True
        nonneg = weights.copy()
        out_bias = np.zeros(n, bool)
        out_bias[self.arch.layer_slices()[-1][2]] = True
        if self.profile == CONVEX:
            # the output bias cancels in net(x) - net(0)
            biases &= ~out_bias
        elif self.free_biases:
            nonneg |= out_bias
        else:
            nonneg |= biases
        if self.profile == CONVEX and not self.free_biases:
            nonneg |= biases
        beta = np.zeros(n, bool)
        beta[self.arch.beta_slice] = True
        alpha = np.zeros(n, bool)
        alpha[self.arch.alpha_slice] = True
        trainable = weights | biases
        if self.train_beta:
            trainable |= beta
        if self.train_alpha and self.arch.activation in MIXES:
            trainable |= alpha
        decay = weights | biases
        return {"nonneg": nonneg, "beta": beta, "alpha": alpha,
                "trainable": trainable, "decay": decay}

    def project(self):
        """Map the parameters onto the feasible set, in place."""
        m = self.masks()
        th = self.theta
        th[m["nonneg"]] = np.maximum(th[m["nonneg"]], 0.0)
        th[m["beta"]] = np.maximum(th[m["beta"]], BETA_MIN)
        th[m["alpha"]] = np.maximum(th[m["alpha"]], 0.0)
        if self.profile != CONVEX:
            low = self.raw(0.0)
            if low < OUTPUT_FLOOR:
                th[self.arch.layer_slices()[-1][2]] += OUTPUT_FLOOR - low
        return self

    def check(self):
        m = self.masks()
        if np.any(self.theta[m["nonneg"]] < 0.0):
            raise ConstraintViolation(f"{self.profile}: negative constrained weight")
        if np.any(self.theta[m["beta"]] < BETA_MIN):
            raise ConstraintViolation(f"{self.profile}: beta below {BETA_MIN}")
        if np.any(self.theta[m["alpha"]] < 0.0):
            raise ConstraintViolation(f"{self.profile}: negative mix weight")
        if self.profile != CONVEX and not self.raw(0.0) > 0.0:
            raise ConstraintViolation(f"{self.profile}: nonpositive output at zero input")

    # -- float evaluation (no tape)
    def raw(self, x: float) -> float:
        return mlp_value(self.arch, self.theta, x)[0]

    def __call__(self, x: float) -> float:
        if self.profile == CONVEX:
            return self.raw(x) - self.raw(0.0) - self.raw_slope(0.0) * x
        if self.profile == MONOTONE:
            return self.out_scale * self.raw(x / self.in_scale)
        inner = self.raw(x / self.in_scale)
        return self.out_scale / max(inner, EPS_DIV)

    def raw_slope(self, x: float) -> float:
        return mlp_slope(self.arch, self.theta, x)[0]

    def slope(self, x: float) -> float:
        """Derivative of the profile output (the potential for the convex net)."""
        if self.profile == CONVEX:
            return self.raw_slope(x) - self.raw_slope(0.0)
        xs = x / self.in_scale
        if self.profile == MONOTONE:
            return self.out_scale * self.raw_slope(xs) / self.in_scale
        inner = max(self.raw(xs), EPS_DIV)
        return -self.out_scale * self.raw_slope(xs) / (inner * inner * self.in_scale)

    # -- serialisation
    def to_dict(self) -> dict:
        return {
            "profile": self.profile,
            "sizes": list(self.arch.sizes),
            "activation": self.arch.activation,
            "out_mult": self.arch.out_mult,
            "in_scale": self.in_scale,
            "out_scale": self.out_scale,
            "train_beta": self.train_beta,
            "train_alpha": self.train_alpha,
            "free_biases": self.free_biases,
            "theta": [float(v) for v in self.theta],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ConstrainedNet":
        arch = Architecture(tuple(d["sizes"]), d["activation"], float(d["out_mult"]))
        return cls(d["profile"], arch, np.array(d["theta"], dtype=float),
                   float(d["in_scale"]), float(d["out_scale"]),
                   bool(d["train_beta"]), bool(d["train_alpha"]), bool(d["free_biases"]))

    def bind(self, tape: ad.Tape) -> "BoundNet":
        return BoundNet(self, tape)


class BoundNet:
    """A network whose parameters live as leaf variables on one tape."""

    def __init__(self, net: ConstrainedNet, tape: ad.Tape):
        net.check()
        self.net = net
        self.tape = tape
        self.params = tape.vars(net.theta)
        self.theta = net.theta.copy()
        self.degenerate = False
        # recorded up front: later calls may happen on scratch tape segments
        self._origin = (self.raw(0.0), self.raw_slope(0.0)) if net.profile == CONVEX else None

    def _node(self, fn, x):
        arch, theta = self.net.arch, self.theta
        xv = ad.value(x)
        y, dx, g = fn(arch, theta, xv)
        if isinstance(x, ad.Var):
            def recompute(vals):
                return fn(arch, np.array(vals[1:]), vals[0])[0]
            return ad.custom(self.tape, y, [x] + self.params, [dx] + g.tolist(), recompute)

        def recompute(vals):
            return fn(arch, np.array(vals), xv)[0]
        return ad.custom(self.tape, y, self.params, g.tolist(), recompute)

    def raw(self, x):
        return self._node(mlp_value, x)

    def raw_slope(self, x):
        return self._node(mlp_slope, x)

    # -- profile-specific outputs
    def _origin_terms(self):
        if self._origin is None:
            raise ConstraintViolation("potential requested from a non-convex profile")
        return self._origin

    def potential(self, x):
        """net(x) - net(0) - net'(0) x: convex, increasing, flat at the origin."""
        v0, s0 = self._origin_terms()
        return self.raw(x) - v0 - s0 * x

    def potential_slope(self, x):
        return self.raw_slope(x) - self._origin_terms()[1]

    def hardening(self, r):
        if self.net.profile != MONOTONE:
            raise ConstraintViolation("hardening requested from a non-monotone profile")
        scaled = r * (1.0 / self.net.in_scale) if isinstance(r, ad.Var) else r / self.net.in_scale
        return self.net.out_scale * self.raw(scaled)

    def hall_petch(self, d_grain: float):
        if self.net.profile != RECIPROCAL:
            raise ConstraintViolation("Hall-Petch term requested from a non-reciprocal profile")
        if d_grain <= 0.0:
            raise ValueError("grain size must be positive")
        inner = self.raw(d_grain / self.net.in_scale)
        if inner.value <= EPS_DIV:
            self.degenerate = True
            return self.net.out_scale / EPS_DIV
        return self.net.out_scale / inner


# ------------------------------------------------------------ model and flow
@dataclass
class NNEVPModel:
    """Dual potential plus optional hardening and Hall-Petch networks.

    The flow rule is eps_vp_dot = rate_ref * N'(s_eq / D) * 3/2 dev(s) / s_eq
    with D = R(r) + HP(d) when a hardening network is present and D =
    stress_ref otherwise; this is the stress gradient of rate_ref * D * N.
    """

    potential: ConstrainedNet
    hardening: ConstrainedNet | None = None
    hall_petch: ConstrainedNet | None = None
    rate_ref: float = 1e-3
    stress_ref: float = 100.0
    meta: dict = field(default_factory=dict)

    def nets(self) -> dict:
        out = {"potential": self.potential}
        if self.hardening is not None:
            out["hardening"] = self.hardening
        if self.hall_petch is not None:
            out["hall_petch"] = self.hall_petch
        return out

    def kind(self) -> str:
        return "+".join(self.nets())

    def bind(self, tape: ad.Tape) -> "BoundModel":
        return BoundModel(self, tape)

    def project(self):
        for net in self.nets().values():
            net.project()

    def check(self):
        for net in self.nets().values():
            net.check()

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "rate_ref": self.rate_ref,
            "stress_ref": self.stress_ref,
            "nets": {k: v.to_dict() for k, v in self.nets().items()},
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NNEVPModel":
        if d.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported parameter file version {d.get('format_version')!r}")
        nets = {k: ConstrainedNet.from_dict(v) for k, v in d["nets"].items()}
        if "potential" not in nets:
            raise ValueError("parameter file has no potential network")
        if "hall_petch" in nets and "hardening" not in nets:
            raise ValueError("a Hall-Petch network requires a hardening network")
        return cls(nets["potential"], nets.get("hardening"), nets.get("hall_petch"),
                   float(d["rate_ref"]), float(d["stress_ref"]), dict(d.get("meta", {})))

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "NNEVPModel":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def flow_model(self, tape: ad.Tape | None = None, d_grain: float | None = None):
        """Flow model on a fresh binding (forward-only use)."""
        return self.bind(tape or ad.Tape()).flow_model(d_grain)


class BoundModel:
    def __init__(self, model: NNEVPModel, tape: ad.Tape):
        self.model = model
        self.tape = tape
        self.bound = {k: net.bind(tape) for k, net in model.nets().items()}

    def parameters(self) -> list:
        out = []
        for b in self.bound.values():
            out.extend(b.params)
        return out

    def flow_model(self, d_grain: float | None = None) -> "NeuralFlow":
        hp = self.bound.get("hall_petch")
        if (hp is None) != (d_grain is None):
            raise ValueError("grain size must be given exactly when a Hall-Petch network is present")
        hp_term = hp.hall_petch(d_grain) if hp is not None else None
        return NeuralFlow(self.bound["potential"], self.bound.get("hardening"), hp_term,
                          self.model.rate_ref, self.model.stress_ref)

    @property
    def degenerate(self) -> bool:
        hp = self.bound.get("hall_petch")
        return bool(hp is not None and hp.degenerate)


class NeuralFlow:
    """Flow model backed by bound networks; plugs into the solver."""

    def __init__(self, potential: BoundNet, hardening: BoundNet | None, hp_term,
                 rate_ref: float, stress_ref: float):
        self.potential = potential
        self.hardening = hardening
        self.hp_term = hp_term
        self.rate_ref = rate_ref
        self.stress_ref = stress_ref

    def resistance(self, r):
        if self.hardening is None:
            return self.stress_ref
        R = self.hardening.hardening(r)
        if self.hp_term is not None:
            R = R + self.hp_term
        return R

    def flow(self, sigma, resistance) -> list:
        return viscoplastic_flow_nn(sigma, resistance, self.potential, self.rate_ref)

    def potential_value(self, sigma, resistance):
        """Dual potential rate_ref * D * N(s_eq / D) on the tape."""
        s_eq = tn.von_mises(sigma)
        return (self.rate_ref * resistance) * self.potential.potential(s_eq / resistance)


def viscoplastic_flow_nn(sigma, resistance, potential: BoundNet, rate_ref: float) -> list:
    """Stress gradient of the network potential, via the chain rule through s_eq."""
    dev = tn.deviator(sigma)
    s_eq = ad.sqrt(1.5 * tn.norm_squared(dev))
    if ad.value(s_eq) == 0.0:
        return tn.zeros()
    x = s_eq / resistance
    k = (1.5 * rate_ref) * potential.potential_slope(x) / s_eq
    return [k * d for d in dev]


def weighted_slope(net: ConstrainedNet, x: float) -> float:
    return mlp_slope(net.arch, net.theta, x)[0]


def potential_threshold(net: ConstrainedNet, level: float = 1.0, hi: float = 50.0) -> float:
    """Smallest x with N'(x) >= level (bisection); inf if never reached."""
    if net.slope(hi) < level:
        return math.inf
    lo = 0.0
    if net.slope(lo) >= level:
        return 0.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if net.slope(mid) >= level:
            hi = mid
        else:
            lo = mid
    return hi
