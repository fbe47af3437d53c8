"""Strain-driven material-point simulation under uniaxial tension.

Each step solves the backward-Euler consistency residual for the end-of-step
stress with Newton-Raphson. The Newton iterates themselves are computed on
scratch tape segments that are discarded after use; only one final Newton
update from the converged point is kept on the tape. Because that update uses
the Jacobian at the converged point, its derivative with respect to anything
upstream (network parameters, previous state) is exactly the implicit-function
derivative of the solution, and the tape stays a few dozen nodes per step.

Two loading modes exist:

true-uniaxial
    unknowns (s11, e22 = e33); residuals are Hooke consistency of s11 and
    s22 = 0, so the lateral total strain is solved for.
prescribed-lateral
    six stress unknowns with prescribed lateral strain rates -rate/2; the
    axial row enforces consistency and the remaining rows enforce zero stress.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import tensor as tn
from .elasticity import ElasticParams, build_stiffness

TRUE_UNIAXIAL = "true-uniaxial"
PRESCRIBED_LATERAL = "prescribed-lateral"
MODES = (TRUE_UNIAXIAL, PRESCRIBED_LATERAL)
CURVE_HEADER = ("strain", "stress_mpa", "time_s", "r", "nr_iters")


class NumericalFailure(RuntimeError):
    """Newton-Raphson did not converge even after halving the step."""

    def __init__(self, msg, partial=None):
        super().__init__(msg)
        self.partial = partial


@dataclass(frozen=True)
class LoadingProgram:
    strain_rate: float = 1e-3  # 1/s
    total_strain: float = 0.02
    n_steps: int = 100
    growth: float = 1.0  # 1.0 gives uniform steps
    mode: str = TRUE_UNIAXIAL

    def __post_init__(self):
        if not self.strain_rate > 0.0:
            raise ValueError(f"strain rate must be positive, got {self.strain_rate}")
        if not self.total_strain > 0.0:
            raise ValueError(f"target strain must be positive, got {self.total_strain}")
        if self.n_steps < 1:
            raise ValueError("need at least one step")
        if self.growth < 1.0:
            raise ValueError(f"step growth ratio must be >= 1, got {self.growth}")
        if self.mode not in MODES:
            raise ValueError(f"unknown loading mode {self.mode!r}")

    @property
    def duration(self) -> float:
        return self.total_strain / self.strain_rate

    def time_steps(self) -> np.ndarray:
        T, g, N = self.duration, self.growth, self.n_steps
        if g == 1.0:
            return np.full(N, T / N)
        dt0 = T * (g - 1.0) / (g ** N - 1.0)
        return dt0 * g ** np.arange(N)

    def times(self) -> np.ndarray:
        t = np.cumsum(self.time_steps())
        t[-1] = self.duration
        return t

    def strains(self) -> np.ndarray:
        return self.strain_rate * self.times()

    def refined(self, factor: int) -> "LoadingProgram":
        """Same program with every step split into ``factor`` equal substeps."""
        if self.growth != 1.0:
            raise ValueError("refinement is only defined for uniform stepping")
        return LoadingProgram(self.strain_rate, self.total_strain, self.n_steps * factor,
                              1.0, self.mode)

    def extended(self, total_strain: float) -> "LoadingProgram":
        """Same step size carried on to a larger target strain."""
        if self.growth != 1.0:
            n = self.n_steps
        else:
            n = max(1, int(round(self.n_steps * total_strain / self.total_strain)))
        return LoadingProgram(self.strain_rate, total_strain, n, self.growth, self.mode)


@dataclass(frozen=True)
class SolverOptions:
    tol: float = 1e-6
    max_iter: int = 25
    predictor: str = "elastic"  # or "previous"
    line_search: bool = True

    def __post_init__(self):
        if self.predictor not in ("elastic", "previous"):
            raise ValueError(f"unknown predictor {self.predictor!r}")
        if not self.tol > 0.0 or self.max_iter < 1:
            raise ValueError("tolerance must be positive and max_iter >= 1")


@dataclass
class MaterialState:
    eps: list = field(default_factory=tn.zeros)
    eps_vp: list = field(default_factory=tn.zeros)
    r: object = 0.0
    sigma: list = field(default_factory=tn.zeros)
    t: float = 0.0
    unknowns: list | None = None


@dataclass(frozen=True)
class StepStats:
    iters: int
    residual: float
    halved: bool = False


@dataclass
class Curve:
    strain: np.ndarray
    stress: np.ndarray
    time: np.ndarray
    r: np.ndarray | None = None
    nr_iters: np.ndarray | None = None

    def __post_init__(self):
        n = len(self.strain)
        self.strain = np.asarray(self.strain, dtype=float)
        self.stress = np.asarray(self.stress, dtype=float)
        self.time = np.asarray(self.time, dtype=float)
        self.r = np.zeros(n) if self.r is None else np.asarray(self.r, dtype=float)
        self.nr_iters = (np.zeros(n, dtype=int) if self.nr_iters is None
                         else np.asarray(self.nr_iters, dtype=int))
        if not all(len(a) == n for a in (self.stress, self.time, self.r, self.nr_iters)):
            raise ValueError("curve columns differ in length")

    def __len__(self):
        return len(self.strain)

    @property
    def time_steps(self) -> np.ndarray:
        return np.diff(self.time, prepend=0.0)

    def write_csv(self, path, meta: dict | None = None):
        with open(path, "w", newline="") as fh:
            for k, v in (meta or {}).items():
                fh.write(f"# {k}: {v}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CURVE_HEADER)
            for row in zip(self.strain, self.stress, self.time, self.r, self.nr_iters):
                w.writerow([repr(float(v)) for v in row[:4]] + [int(row[4])])

    @classmethod
    def read_csv(cls, path) -> "Curve":
        with open(path, newline="") as fh:
            rows = list(csv.reader(line for line in fh if not line.startswith("#")))
        if not rows or tuple(rows[0]) != CURVE_HEADER:
            raise ValueError(f"{path}: expected header {','.join(CURVE_HEADER)}")
        cols = list(zip(*rows[1:])) if len(rows) > 1 else [()] * 5
        return cls(*(np.array(c, dtype=float) for c in cols[:4]),
                   np.array(cols[4], dtype=int))


@dataclass
class SimResult:
    curve: Curve
    stats: list
    stress_vars: list  # axial stress per step, floats or tape variables
    r_values: np.ndarray
    states: list


# ---------------------------------------------------------------- residual
def _total_strain(u, eps_axial: float, mode: str) -> list:
    if mode == TRUE_UNIAXIAL:
        return [eps_axial, u[1], u[1], 0.0, 0.0, 0.0]
    return [eps_axial, -0.5 * eps_axial, -0.5 * eps_axial, 0.0, 0.0, 0.0]


def _stress(u, mode: str) -> list:
    if mode == TRUE_UNIAXIAL:
        return tn.diag(u[0], 0.0, 0.0)
    return list(u)


def residual(u, state: MaterialState, eps_axial: float, dt: float, flow_model, resistance,
             c: np.ndarray, mode: str) -> list:
    """Backward-Euler consistency residual (MPa) for the unknowns ``u``."""
    if not dt > 0.0:
        raise ValueError("time step must be positive")
    sigma = _stress(u, mode)
    f = flow_model.flow(sigma, resistance)
    eps = _total_strain(u, eps_axial, mode)
    ee = [ad.lincomb((1.0, -1.0, -dt), (e, vp, fk)) for e, vp, fk in zip(eps, state.eps_vp, f)]
    if mode == TRUE_UNIAXIAL:
        return [u[0] - ad.lincomb(c[0], ee), ad.lincomb(c[1], ee)]
    return [u[0] - ad.lincomb(c[0], ee)] + list(u[1:])


def _elastic_trial(state, eps_axial, c, mode, elastic):
    vp = ad.values(state.eps_vp)
    if mode == TRUE_UNIAXIAL:
        e11 = eps_axial - vp[0]
        return [elastic.E * e11, vp[1] - elastic.nu * e11]
    ee = np.array(_total_strain([0.0, 0.0], eps_axial, mode)) - np.array(vp)
    return [float(c[0] @ ee)] + [0.0] * 5


def _norm(values) -> float:
    s = 0.0
    for v in values:
        s += v * v
    return math.sqrt(s) if math.isfinite(s) else math.inf


def nr_solve(tape: ad.Tape, state: MaterialState, eps_axial: float, dt: float, flow_model,
             resistance, c: np.ndarray, mode: str, elastic: ElasticParams,
             opts: SolverOptions = SolverOptions()):
    """Newton-Raphson stress update; returns (unknown vars, StepStats) or None.

    On convergence the returned unknowns are one recorded Newton update away
    from the converged iterate, so their tape derivatives are exact.
    """
    if opts.predictor == "previous" and state.unknowns is not None:
        u = ad.values(state.unknowns)
    else:
        u = _elastic_trial(state, eps_axial, c, mode, elastic)
    m = len(u)
    mark = len(tape)
    res_norm = math.inf
    for it in range(1, opts.max_iter + 1):
        uv = tape.vars(u)
        res = residual(uv, state, eps_axial, dt, flow_model, resistance, c, mode)
        rv = ad.values(res)
        res_norm = _norm(rv)
        if not math.isfinite(res_norm):
            tape.truncate(mark)
            return None, StepStats(it, res_norm)
        jac = tape.jacobian(res, uv)
        try:
            step = np.linalg.solve(jac, rv)
        except np.linalg.LinAlgError:
            tape.truncate(mark)
            return None, StepStats(it, res_norm)
        if res_norm < opts.tol:
            jinv = np.linalg.inv(jac)
            out = [ad.lincomb([1.0] + list(-jinv[i]), [uv[i]] + list(res)) for i in range(m)]
            return out, StepStats(it, res_norm)
        tape.truncate(mark)
        lam = 1.0
        new = [a - b for a, b in zip(u, step)]
        if opts.line_search:
            for _ in range(30):
                trial = residual(tape.vars(new), state, eps_axial, dt, flow_model,
                                 resistance, c, mode)
                tn_ = _norm(ad.values(trial))
                tape.truncate(mark)
                if tn_ < res_norm:
                    break
                lam *= 0.5
                new = [a - lam * b for a, b in zip(u, step)]
        u = new
    return None, StepStats(opts.max_iter, res_norm)


def _finish_step(tape, state, u, eps_axial, dt, flow_model, resistance, mode, t_new):
    sigma = _stress(u, mode)
    f = flow_model.flow(sigma, resistance)
    eps_vp = [ad.lincomb((1.0, dt), (vp, fk)) for vp, fk in zip(state.eps_vp, f)]
    rate = tn.frobenius_norm(f)
    r = ad.lincomb((1.0, dt * tn.SQRT_2_3), (state.r, rate))
    return MaterialState(_total_strain(u, eps_axial, mode), eps_vp, r, sigma, t_new, u)


def advance(tape: ad.Tape, state: MaterialState, eps_axial: float, dt: float, flow_model,
            c: np.ndarray, mode: str, elastic: ElasticParams,
            opts: SolverOptions = SolverOptions()):
    """One load step to axial strain ``eps_axial``; halves dt once on failure."""
    resistance = flow_model.resistance(state.r)
    u, stats = nr_solve(tape, state, eps_axial, dt, flow_model, resistance, c, mode,
                        elastic, opts)
    if u is not None:
        return _finish_step(tape, state, u, eps_axial, dt, flow_model, resistance, mode,
                            state.t + dt), stats
    # two half steps to the same end point
    eps_mid = 0.5 * (ad.value(state.eps[0]) + eps_axial)
    half = 0.5 * dt
    u, s1 = nr_solve(tape, state, eps_mid, half, flow_model, resistance, c, mode,
                     elastic, opts)
    if u is None:
        raise NumericalFailure(f"Newton-Raphson failed at t={state.t + dt:.6g} s "
                               f"(residual {s1.residual:.3e} after {s1.iters} iterations)")
    mid = _finish_step(tape, state, u, eps_mid, half, flow_model, resistance, mode,
                       state.t + half)
    resistance = flow_model.resistance(mid.r)
    u, s2 = nr_solve(tape, mid, eps_axial, half, flow_model, resistance, c, mode,
                     elastic, opts)
    if u is None:
        raise NumericalFailure(f"Newton-Raphson failed at t={state.t + dt:.6g} s "
                               f"(residual {s2.residual:.3e} after {s2.iters} iterations)")
    out = _finish_step(tape, mid, u, eps_axial, half, flow_model, resistance, mode,
                       state.t + dt)
    return out, StepStats(s1.iters + s2.iters, s2.residual, halved=True)


def simulate_curve(program: LoadingProgram, flow_model, elastic: ElasticParams,
                   tape: ad.Tape | None = None, opts: SolverOptions = SolverOptions(),
                   ) -> SimResult:
    """Integrate the program; axial stress and strain at every accepted step."""
    tape = tape if tape is not None else ad.Tape()
    c = build_stiffness(elastic)
    state = MaterialState()
    dts = program.time_steps()
    times = program.times()
    strains = program.strains()
    stats, sig, rs, states = [], [], [], []
    for k, dt in enumerate(dts):
        try:
            state, st = advance(tape, state, float(strains[k]), float(dt), flow_model, c,
                                program.mode, elastic, opts)
        except NumericalFailure as exc:
            exc.partial = _curve(strains[:k], sig, times[:k], rs, stats)
            raise
        state.t = float(times[k])
        stats.append(st)
        sig.append(state.sigma[0])
        rs.append(ad.value(state.r))
        states.append(state)
    curve = _curve(strains, sig, times, rs, stats)
    return SimResult(curve, stats, sig, np.array(rs), states)


def _curve(strains, sig, times, rs, stats) -> Curve:
    return Curve(np.array(strains, dtype=float), np.array(ad.values(sig)),
                 np.array(times, dtype=float), np.array(rs, dtype=float),
                 np.array([s.iters for s in stats], dtype=int))


def saturation_stress(sigma_y: float, n: float, eps_dot: float, eps_dot_0: float) -> float:
    """Steady-state uniaxial stress of the power law: s_y (rate/rate_0)^(1/n)."""
    return sigma_y * (eps_dot / eps_dot_0) ** (1.0 / n)
