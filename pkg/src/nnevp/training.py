"""Training loop: time-step weighted stress loss through the implicit solver,
AdamW with cosine learning-rate annealing, and projection back onto the
constraint set after every update.
"""
from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from . import networks as nw
from .elasticity import ElasticParams
from .solver import (Curve, LoadingProgram, NumericalFailure, SolverOptions,
                     simulate_curve)


class TrainingAborted(RuntimeError):
    def __init__(self, msg, report=None):
        super().__init__(msg)
        self.report = report


class DegenerateDesign(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 500
    lr_max: float = 1e-2
    lr_min: float = 1e-3
    weight_decay: float = 1e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    nr_tol: float = 1e-6
    nr_max_iter: int = 25
    predictor: str = "previous"
    elastic_mask: bool = False
    r_min: float = 1e-5
    seed: int = 0
    loss_norm: float | None = None  # None: mean squared true stress
    target_loss: float | None = None  # stop once the loss falls below this
    check_constraints: bool = True
    # step rejection: an epoch whose loss exceeds spike_factor times the last
    # accepted loss (or whose solve fails) is undone and retried with the step
    # scale multiplied by backoff; each accepted epoch divides it back out
    spike_factor: float | None = 10.0
    backoff: float = 0.5

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not self.lr_max >= self.lr_min > 0.0:
            raise ValueError("need lr_max >= lr_min > 0")
        if self.weight_decay < 0.0:
            raise ValueError("weight decay must be >= 0")
        if self.loss_norm is not None and not self.loss_norm > 0.0:
            raise ValueError("loss normalisation must be positive")
        if self.spike_factor is not None and not self.spike_factor > 1.0:
            raise ValueError("spike_factor must exceed 1")
        if not 0.0 < self.backoff < 1.0:
            raise ValueError("backoff must lie in (0, 1)")

    def solver_options(self) -> SolverOptions:
        return SolverOptions(self.nr_tol, self.nr_max_iter, self.predictor)


@dataclass
class TrainingCurve:
    """Target stresses on the solver grid of ``program``."""

    truth: Curve
    program: LoadingProgram
    d_grain: float | None = None
    name: str = ""

    def __post_init__(self):
        if len(self.truth) != self.program.n_steps:
            raise ValueError(f"curve {self.name!r}: {len(self.truth)} points for "
                             f"{self.program.n_steps} solver steps")
        if not np.allclose(self.truth.strain, self.program.strains(), rtol=1e-9, atol=1e-15):
            raise ValueError(f"curve {self.name!r}: strains do not match the loading grid")


@dataclass(frozen=True)
class LossRecord:
    epoch: int
    loss: float
    lr: float
    wall: float
    failed: bool = False
    flagged: bool = False
    rejected: bool = False


# ---------------------------------------------------------------- schedule
def cosine_lr(epoch: int, cfg: TrainConfig) -> float:
    if not 0 <= epoch <= cfg.epochs:
        raise ValueError(f"epoch {epoch} outside [0, {cfg.epochs}]")
    return cfg.lr_min + 0.5 * (cfg.lr_max - cfg.lr_min) * (1.0 + math.cos(math.pi * epoch / cfg.epochs))


# ---------------------------------------------------------------- loss
def loss_weights(time_steps: np.ndarray) -> np.ndarray:
    dt = np.asarray(time_steps, dtype=float)
    return dt / dt.sum()


def curve_loss(pred, truth: np.ndarray, weights: np.ndarray, mask: np.ndarray | None = None,
               norm: float | None = None):
    """sum w (pred - truth)^2 / norm over unmasked points.

    ``pred`` may hold tape variables. ``mask`` is True where a point is kept.
    The default norm is the mean squared truth over kept points.
    """
    truth = np.asarray(truth, dtype=float)
    if len(pred) != len(truth) or len(weights) != len(truth):
        raise ValueError("prediction, truth and weights must share the time grid")
    keep = np.ones(len(truth), bool) if mask is None else np.asarray(mask, bool)
    if norm is None:
        norm = float(np.mean(truth[keep] ** 2)) if keep.any() else 1.0
    if not norm > 0.0:
        raise ValueError("loss normalisation must be positive")
    diffs, scaled = [], []
    for p, t, w, k in zip(pred, truth, weights, keep):
        if k:
            d = p - float(t)
            diffs.append(d)
            scaled.append(d * (float(w) / norm))
    if not diffs:
        return 0.0
    return ad.dot(diffs, scaled)


def elastic_mask(r_values: np.ndarray, r_min: float) -> np.ndarray:
    keep = np.asarray(r_values) >= r_min
    return keep if keep.any() else np.ones_like(keep)


# ---------------------------------------------------------------- parameters
def flat_theta(model: nw.NNEVPModel) -> np.ndarray:
    return np.concatenate([n.theta for n in model.nets().values()])


def set_flat_theta(model: nw.NNEVPModel, theta: np.ndarray):
    k = 0
    for net in model.nets().values():
        net.theta = np.array(theta[k:k + net.n_params], dtype=float)
        k += net.n_params


def flat_masks(model: nw.NNEVPModel) -> dict:
    ms = [n.masks() for n in model.nets().values()]
    return {key: np.concatenate([m[key] for m in ms]) for key in ms[0]}


class AdamW:
    """Adam with decoupled weight decay on a flat parameter vector."""

    def __init__(self, n: int, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.0):
        self.m = np.zeros(n)
        self.v = np.zeros(n)
        self.t = 0
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.weight_decay = weight_decay

    def state(self):
        return self.m.copy(), self.v.copy(), self.t

    def restore(self, state):
        m, v, self.t = state
        self.m, self.v = m.copy(), v.copy()

    def step(self, theta: np.ndarray, grad: np.ndarray, lr: float,
             trainable: np.ndarray | None = None, decay: np.ndarray | None = None) -> bool:
        """In-place update; returns True if any gradient entry was non-finite."""
        n = len(theta)
        trainable = np.ones(n, bool) if trainable is None else trainable
        decay = np.ones(n, bool) if decay is None else decay
        finite = np.isfinite(grad)
        active = trainable & finite
        g = np.where(active, grad, 0.0)
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        self.m[active] = b1 * self.m[active] + (1.0 - b1) * g[active]
        self.v[active] = b2 * self.v[active] + (1.0 - b2) * g[active] ** 2
        m_hat = self.m / (1.0 - b1 ** self.t)
        v_hat = self.v / (1.0 - b2 ** self.t)
        upd = m_hat / (np.sqrt(v_hat) + self.eps)
        shrink = active & decay
        theta[shrink] -= lr * self.weight_decay * theta[shrink]
        theta[active] -= lr * upd[active]
        return bool((trainable & ~finite).any())


# ---------------------------------------------------------------- evaluation
@dataclass
class Evaluation:
    loss: object  # tape variable or float
    per_curve: list
    sims: list
    tape: ad.Tape
    bound: nw.BoundModel


def evaluate(model: nw.NNEVPModel, dataset: list, elastic: ElasticParams,
             cfg: TrainConfig = TrainConfig()) -> Evaluation:
    """Simulate every curve on one tape and build the summed loss."""
    tape = ad.Tape()
    bound = model.bind(tape)
    total, per, sims = 0.0, [], []
    for item in dataset:
        flow = bound.flow_model(item.d_grain if model.hall_petch is not None else None)
        sim = simulate_curve(item.program, flow, elastic, tape, cfg.solver_options())
        mask = elastic_mask(sim.r_values, cfg.r_min) if cfg.elastic_mask else None
        w = loss_weights(item.truth.time_steps)
        lc = curve_loss(sim.stress_vars, item.truth.stress, w, mask, cfg.loss_norm)
        per.append(ad.value(lc))
        total = total + lc
        sims.append(sim)
    return Evaluation(total, per, sims, tape, bound)


def loss_and_gradient(model: nw.NNEVPModel, dataset: list, elastic: ElasticParams,
                      cfg: TrainConfig = TrainConfig()):
    """Total loss and its gradient with respect to the flat parameter vector."""
    ev = evaluate(model, dataset, elastic, cfg)
    params = ev.bound.parameters()
    if not isinstance(ev.loss, ad.Var):
        return float(ev.loss), np.zeros(len(params)), ev
    adj = ev.tape.adjoints(ev.loss)
    grad = np.array([adj[p.idx] for p in params])
    return ev.loss.value, grad, ev


# ---------------------------------------------------------------- training
@dataclass
class RunReport:
    seed: int
    config: dict
    history: list = field(default_factory=list)
    nr_hist: dict = field(default_factory=dict)
    failed_epochs: list = field(default_factory=list)
    rejected_epochs: list = field(default_factory=list)
    flagged_epochs: list = field(default_factory=list)
    degenerate_hp: bool = False
    hp_table: list | None = None
    hp_slope: float | None = None
    notes: list = field(default_factory=list)
    final_loss: float | None = None
    best_loss: float | None = None

    def add_nr(self, iters):
        for k in iters:
            self.nr_hist[int(k)] = self.nr_hist.get(int(k), 0) + 1

    def nr_fraction_within(self, k: int) -> float:
        tot = sum(self.nr_hist.values())
        return sum(v for i, v in self.nr_hist.items() if i <= k) / tot if tot else 1.0

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "config": self.config,
            "final_loss": self.final_loss,
            "best_loss": self.best_loss,
            "epochs_run": len(self.history),
            "nr_histogram": {str(k): v for k, v in sorted(self.nr_hist.items())},
            "failed_epochs": self.failed_epochs,
            "rejected_epochs": self.rejected_epochs,
            "flagged_epochs": self.flagged_epochs,
            "degenerate_hall_petch": self.degenerate_hp,
            "hall_petch_table": self.hp_table,
            "hall_petch_slope": self.hp_slope,
            "notes": self.notes,
        }


@dataclass
class TrainResult:
    model: nw.NNEVPModel
    history: list
    report: RunReport


def train(model: nw.NNEVPModel, dataset: list, elastic: ElasticParams,
          cfg: TrainConfig = TrainConfig(), callback=None, log=None) -> TrainResult:
    """Fit the networks of ``model`` in place.

    ``callback(epoch, model, evaluation)`` runs after each successful epoch,
    before the parameter update is applied.
    """
    if not dataset:
        raise ValueError("empty dataset")
    if model.hall_petch is not None and any(c.d_grain is None for c in dataset):
        raise ValueError("every curve needs a grain size when a Hall-Petch network is trained")
    report = RunReport(cfg.seed, asdict(cfg))
    masks = flat_masks(model)
    theta = flat_theta(model)
    opt = AdamW(len(theta), cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps, cfg.weight_decay)
    history = []
    consecutive = 0
    scale = 1.0
    last = None  # (theta, optimizer state, gradient, loss) before the last update
    t0 = time.perf_counter()
    best = (math.inf, theta.copy())

    def update(theta, grad, lr):
        flagged = opt.step(theta, grad, lr, masks["trainable"], masks["decay"])
        set_flat_theta(model, theta)
        model.project()
        if cfg.check_constraints:
            model.check()
        return flat_theta(model), flagged

    def retry(lr):
        # undo the last update and redo it with a shorter step
        nonlocal scale
        scale *= cfg.backoff
        theta0, state, grad0, _ = last
        opt.restore(state)
        return update(theta0.copy(), grad0, lr * scale)

    for epoch in range(cfg.epochs):
        lr = cosine_lr(epoch, cfg)
        try:
            loss, grad, ev = loss_and_gradient(model, dataset, elastic, cfg)
        except NumericalFailure as exc:
            consecutive += 1
            report.failed_epochs.append(epoch)
            history.append(LossRecord(epoch, math.nan, lr, time.perf_counter() - t0, failed=True))
            if log:
                log(f"epoch {epoch}: solver failure ({exc})")
            if consecutive >= 3 or last is None:
                report.notes.append(f"training aborted at epoch {epoch}: solver failure")
                raise TrainingAborted(f"training aborted at epoch {epoch}: {exc}", report) from exc
            theta, _ = retry(lr)
            continue
        consecutive = 0
        if (cfg.spike_factor is not None and last is not None
                and not loss <= cfg.spike_factor * last[3]):
            report.rejected_epochs.append(epoch)
            history.append(LossRecord(epoch, loss, lr, time.perf_counter() - t0, rejected=True))
            if log:
                log(f"epoch {epoch}: loss jumped to {loss:.3e}, step undone (scale {scale * cfg.backoff:g})")
            theta, _ = retry(lr)
            continue
        report.add_nr(k for sim in ev.sims for k in sim.curve.nr_iters)
        report.degenerate_hp |= ev.bound.degenerate
        if loss < best[0]:
            best = (loss, theta.copy())
        if callback is not None:
            callback(epoch, model, ev)
        if cfg.target_loss is not None and loss <= cfg.target_loss:
            history.append(LossRecord(epoch, loss, lr, time.perf_counter() - t0))
            break
        last = (theta.copy(), opt.state(), grad, loss)
        theta, flagged = update(theta, grad, lr * scale)
        scale = min(1.0, scale / cfg.backoff)
        if flagged:
            report.flagged_epochs.append(epoch)
        history.append(LossRecord(epoch, loss, lr, time.perf_counter() - t0, flagged=flagged))
        if log and (epoch % 10 == 0 or epoch == cfg.epochs - 1):
            log(f"epoch {epoch:4d}  loss {loss:.4e}  lr {lr * scale:.2e}")
    report.history = history
    report.best_loss = float(best[0]) if math.isfinite(best[0]) else None
    report.final_loss = next((h.loss for h in reversed(history)
                              if not (h.failed or h.rejected)), None)
    return TrainResult(model, history, report)


# ---------------------------------------------------------------- prediction
def predict(model: nw.NNEVPModel, program: LoadingProgram, elastic: ElasticParams,
            d_grain: float | None = None, opts: SolverOptions = SolverOptions(predictor="previous")
            ) -> Curve:
    tape = ad.Tape()
    flow = model.bind(tape).flow_model(d_grain if model.hall_petch is not None else None)
    return simulate_curve(program, flow, elastic, tape, opts).curve


def extrapolate_strain(model: nw.NNEVPModel, program: LoadingProgram, total_strain: float,
                       elastic: ElasticParams, d_grain: float | None = None) -> Curve:
    """Frozen-parameter prediction carried on to a larger strain."""
    return predict(model, program.extended(total_strain), elastic, d_grain)


def discover_hall_petch(model: nw.NNEVPModel, grains, train_grains=None):
    """Evaluate the Hall-Petch network and fit its log-log slope.

    The slope uses the evaluation points inside the training grain range
    (all points if no training range is given).
    """
    if model.hall_petch is None:
        raise ValueError("model has no Hall-Petch network")
    bound = model.bind(ad.Tape()).bound["hall_petch"]
    grains = np.asarray(grains, dtype=float)
    stress = np.array([ad.value(bound.hall_petch(float(d))) for d in grains])
    if train_grains is not None:
        tg = np.unique(np.asarray(train_grains, dtype=float))
        if len(tg) < 2:
            raise DegenerateDesign("slope fit needs at least two distinct training grain sizes")
        sel = (grains >= tg.min()) & (grains <= tg.max())
    else:
        sel = np.ones(len(grains), bool)
    if len(np.unique(grains[sel])) < 2:
        raise DegenerateDesign("slope fit needs at least two distinct grain sizes")
    slope = float(np.polyfit(np.log(grains[sel]), np.log(stress[sel]), 1)[0])
    return grains, stress, slope
