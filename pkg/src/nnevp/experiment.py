"""The four pipeline commands: generate, train, extrapolate, discover-hp.

Each takes a validated :class:`RunConfig` and an output directory and writes
its artefacts there. CSV and JSON outputs are byte-reproducible for a fixed
config and seed; wall-clock timings go to a separate ``timing.json``.
"""
from __future__ import annotations

import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from . import data as dp
from . import networks as nw
from . import plots
from . import reference as ref
from . import training as tr
from .config import ConfigError, RunConfig, to_dict
from .solver import Curve, LoadingProgram, simulate_curve


def thread_cap() -> int:
    raw = os.environ.get("NNEVP_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"NNEVP_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError(f"NNEVP_THREADS must be a positive integer, got {raw!r}")
    return n


def _fmt(x: float) -> str:
    return f"{x:g}"


def _write_json(obj, path):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1, sort_keys=False)
        fh.write("\n")


# ---------------------------------------------------------------- generate
@dataclass(frozen=True)
class _Job:
    name: str
    flow: object
    program: LoadingProgram
    meta: dict
    grain: float | None


def generation_jobs(cfg: RunConfig) -> list:
    g = cfg.generate
    jobs = []
    for rate in g.strain_rates:
        program = replace(cfg.loading, strain_rate=float(rate))
        if g.model == "power-law":
            for n in g.exponents:
                p = replace(g.power_law, n=float(n))
                meta = {"model": "power-law", "n": p.n, "eps_dot_0": p.eps_dot_0,
                        "sigma_y": p.sigma_y, "strain_rate": rate}
                jobs.append(_Job(f"power_n{_fmt(n)}_rate{_fmt(rate)}", ref.PowerLawFlow(p),
                                 program, meta, None))
        else:
            jc = g.johnson_cook
            power = ref.PowerLawParams(g.rate_exponent, jc.r_star, 1.0)
            ratio = rate / jc.r_star
            if g.model == "johnson-cook":
                meta = {"model": "johnson-cook", "rate_exponent": g.rate_exponent,
                        "strain_rate": rate}
                jobs.append(_Job(f"jc_rate{_fmt(rate)}", ref.JohnsonCookFlow(jc, power, ratio),
                                 program, meta, None))
            else:
                base = replace(jc, A=g.base_stress)
                for d in g.grains:
                    hp = ref.hall_petch_stress(float(d), g.hall_petch)
                    meta = {"model": "hall-petch", "grain_size_um": float(d),
                            "hall_petch_mpa": hp, "strain_rate": rate}
                    jobs.append(_Job(f"hp_d{_fmt(d)}_rate{_fmt(rate)}",
                                     ref.JohnsonCookFlow(base, power, ratio, offset=hp),
                                     program, meta, float(d)))
    return jobs


def _run_job(job: _Job, cfg: RunConfig) -> Curve:
    return simulate_curve(job.program, job.flow, cfg.elastic, opts=cfg.solver).curve


def cmd_generate(cfg: RunConfig, out: str) -> list:
    os.makedirs(out, exist_ok=True)
    jobs = generation_jobs(cfg)
    workers = min(thread_cap(), len(jobs))
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            curves = list(pool.map(_run_job, jobs, [cfg] * len(jobs)))
    else:
        curves = [_run_job(j, cfg) for j in jobs]
    entries = []
    for job, curve in zip(jobs, curves):
        path = os.path.join(out, job.name + ".csv")
        curve.write_csv(path, job.meta)
        entries.append(dp.ManifestEntry(path, job.grain, job.name))
    dp.write_manifest(entries, os.path.join(out, "manifest.yaml"))
    return entries


# ---------------------------------------------------------------- datasets
def training_program(cfg: RunConfig, rate: float) -> LoadingProgram:
    program = replace(cfg.loading, strain_rate=rate)
    limit = cfg.data.train_strain
    if limit is not None and limit < program.total_strain:
        if program.growth != 1.0:
            raise ConfigError("data.train_strain needs uniform stepping")
        n = max(1, int(round(program.n_steps * limit / program.total_strain)))
        program = replace(program, total_strain=limit, n_steps=n)
    return program


def load_dataset(cfg: RunConfig, manifest: str | None = None) -> list:
    path = manifest or cfg.data.manifest
    if path is None:
        raise ConfigError("data.manifest is required")
    if not os.path.exists(path):
        raise ConfigError(f"manifest not found: {path}")
    out = []
    for entry in dp.read_manifest(path):
        if not os.path.exists(entry.path):
            raise ConfigError(f"curve file not found: {entry.path}")
        raw = dp.parse_curve_csv(entry.path)
        rate = raw.strain_rate or cfg.loading.strain_rate
        program = training_program(cfg, rate)
        truth, _ = dp.resample_to_grid(dp.fit_interpolant(raw), program)
        grain = entry.grain_size_um if entry.grain_size_um is not None else raw.grain_size
        out.append(tr.TrainingCurve(truth, program, grain, entry.name))
    return out


# ---------------------------------------------------------------- models
def build_model(cfg: RunConfig, dataset: list) -> nw.NNEVPModel:
    m = cfg.model
    stress_ref = m.stress_ref or max(float(np.max(np.abs(c.truth.stress))) for c in dataset)
    rate = m.rate_ref or cfg.loading.strain_rate * (math.sqrt(1.5) if m.rate_norm == "frobenius" else 1.0)
    seeds = np.random.SeedSequence(cfg.seed).spawn(3)

    def make(profile, nc, seed, **kw):
        rng = np.random.default_rng([*seed.generate_state(2), nc.init_seed_offset])
        return nw.ConstrainedNet.create(
            profile, hidden=nc.hidden, activation=nc.activation, alpha=nc.alpha,
            rng=rng, in_scale=nc.in_scale, train_alpha=nc.train_alpha,
            free_biases=nc.free_biases, **kw)

    pot = make(nw.CONVEX, m.potential, seeds[0])
    hard = hp = None
    if m.experiment in ("hardening", "hall-petch"):
        hard = make(nw.MONOTONE, m.hardening, seeds[1], out_scale=stress_ref,
                    init_level=HARDENING_LEVEL[m.experiment])
    if m.experiment == "hall-petch":
        if any(c.d_grain is None for c in dataset):
            raise ConfigError("hall-petch experiment needs a grain size for every curve")
        hp = make(nw.RECIPROCAL, m.hall_petch, seeds[2], out_scale=stress_ref,
                  init_level=HP_LEVEL)
    meta = {"experiment": m.experiment, "seed": cfg.seed}
    return nw.NNEVPModel(pot, hard, hp, rate, stress_ref, meta)


# initial resistance as a fraction of the stress scale
HARDENING_LEVEL = {"hardening": 1.0, "hall-petch": 0.1}
HP_LEVEL = 0.5


def check_architecture(cfg: RunConfig, model: nw.NNEVPModel):
    """Refuse a parameter file that does not match the configured networks."""
    m = cfg.model
    want = {"perfect-plasticity": {"potential"}, "hardening": {"potential", "hardening"},
            "hall-petch": {"potential", "hardening", "hall_petch"}}[m.experiment]
    have = set(model.nets())
    if want != have:
        raise ConfigError(f"parameter file holds networks {sorted(have)}, "
                          f"config expects {sorted(want)}")
    for name, nc in (("potential", m.potential), ("hardening", m.hardening),
                     ("hall_petch", m.hall_petch)):
        net = model.nets().get(name)
        if net is None:
            continue
        if tuple(net.arch.sizes[1:-1]) != tuple(nc.hidden):
            raise ConfigError(f"{name}: parameter file has hidden sizes {net.arch.sizes[1:-1]}, "
                              f"config says {tuple(nc.hidden)}")
        if nc.activation is not None and net.arch.activation != nc.activation:
            raise ConfigError(f"{name}: parameter file uses {net.arch.activation}, "
                              f"config says {nc.activation}")


def load_params(cfg: RunConfig, path: str | None, out: str) -> nw.NNEVPModel:
    path = path or os.path.join(out, "params.json")
    if not os.path.exists(path):
        raise ConfigError(f"parameter file not found: {path}")
    try:
        model = nw.NNEVPModel.load(path)
    except (ValueError, KeyError) as exc:
        raise ConfigError(f"{path}: {exc}") from None
    check_architecture(cfg, model)
    return model


# ---------------------------------------------------------------- train
def train_config(cfg: RunConfig) -> tr.TrainConfig:
    t = cfg.train
    return replace(t, seed=cfg.seed, nr_tol=cfg.solver.tol, nr_max_iter=cfg.solver.max_iter,
                   predictor=cfg.solver.predictor)


def write_history(history, path):
    with open(path, "w") as fh:
        fh.write("epoch,loss,lr,failed,flagged\n")
        for h in history:
            fh.write(f"{h.epoch},{h.loss!r},{h.lr!r},{int(h.failed)},{int(h.flagged)}\n")


def cmd_train(cfg: RunConfig, out: str, log=None) -> tr.TrainResult:
    os.makedirs(out, exist_ok=True)
    dataset = load_dataset(cfg)
    model = build_model(cfg, dataset)
    tcfg = train_config(cfg)
    try:
        result = tr.train(model, dataset, cfg.elastic, tcfg, log=log)
    except tr.TrainingAborted as exc:
        if exc.report is not None:
            _write_json(exc.report.to_dict(), os.path.join(out, "report.json"))
        raise
    model.meta["final_loss"] = result.report.final_loss
    model.save(os.path.join(out, "params.json"))
    report = result.report
    report.config = to_dict(cfg)
    write_history(result.history, os.path.join(out, "loss_history.csv"))
    plots.plot_loss([h.epoch for h in result.history], [h.loss for h in result.history],
                    os.path.join(out, "loss.svg"))
    for item in dataset:
        pred = tr.predict(model, item.program, cfg.elastic, item.d_grain, cfg.solver)
        stem = item.name or "curve"
        pred.write_csv(os.path.join(out, f"fit_{stem}.csv"))
        plots.plot_overlay([("truth", item.truth.strain, item.truth.stress, "truth"),
                            ("model", pred.strain, pred.stress, "model")],
                           os.path.join(out, f"fit_{stem}.svg"), title=stem)
    if model.hall_petch is not None:
        grains = sorted({c.d_grain for c in dataset})
        if len(grains) > 1:
            g, s, slope = tr.discover_hall_petch(model, cfg.discover_hp.grains, grains)
            report.hp_table = [[float(a), float(b)] for a, b in zip(g, s)]
            report.hp_slope = slope
        else:
            report.notes.append("single grain size: Hall-Petch extrapolation is unconstrained")
    _write_json(report.to_dict(), os.path.join(out, "report.json"))
    _write_json({"wall_seconds": [h.wall for h in result.history]},
                os.path.join(out, "timing.json"))
    return result


# ---------------------------------------------------------------- extrapolate
def cmd_extrapolate(cfg: RunConfig, out: str) -> Curve:
    os.makedirs(out, exist_ok=True)
    model = load_params(cfg, cfg.extrapolate.params, out)
    e = cfg.extrapolate
    grain = None
    if model.hall_petch is not None:
        dataset = load_dataset(cfg)
        grain = dataset[0].d_grain
    base = training_program(cfg, cfg.loading.strain_rate)
    pred = tr.extrapolate_strain(model, base, e.total_strain, cfg.elastic, grain)
    pred.write_csv(os.path.join(out, "extrapolation.csv"))
    series = [("model", pred.strain, pred.stress, "model")]
    if e.truth is not None:
        if not os.path.exists(e.truth):
            raise ConfigError(f"reference curve not found: {e.truth}")
        raw = dp.parse_curve_csv(e.truth)
        series.insert(0, ("truth", raw.strain, raw.stress, "truth"))
    plots.plot_overlay(series, os.path.join(out, "extrapolation.svg"),
                       title="extrapolation", boundary=base.total_strain)
    return pred


# ---------------------------------------------------------------- discover-hp
def cmd_discover_hp(cfg: RunConfig, out: str, warn=None):
    os.makedirs(out, exist_ok=True)
    model = load_params(cfg, cfg.discover_hp.params, out)
    if model.hall_petch is None:
        raise ConfigError("parameter file has no Hall-Petch network")
    d = cfg.discover_hp
    train_grains = d.train_grains
    if train_grains is None and cfg.data.manifest is not None:
        train_grains = tuple(sorted({e.grain_size_um for e in dp.read_manifest(cfg.data.manifest)
                                     if e.grain_size_um is not None}))
    if train_grains is not None and len(set(train_grains)) < 2 and warn:
        warn("trained on a single grain size: the Hall-Petch extrapolation is unconstrained")
    try:
        grains, stress, slope = tr.discover_hall_petch(model, d.grains, train_grains)
    except tr.DegenerateDesign:
        grains, stress, slope = tr.discover_hall_petch(model, d.grains, None)
    with open(os.path.join(out, "hall_petch.csv"), "w") as fh:
        fh.write("grain_um,hp_stress_mpa\n")
        for a, b in zip(grains, stress):
            fh.write(f"{float(a)!r},{float(b)!r}\n")
        fh.write(f"# loglog_slope: {slope!r}\n")
    plots.plot_hall_petch(grains, stress, slope, os.path.join(out, "hall_petch.svg"),
                          train_grains)
    return grains, stress, slope
