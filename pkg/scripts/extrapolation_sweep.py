"""Signed extrapolation error at 2% strain for the three activation mixes,
over several seeds. Training data stop at 0.5% strain.

    python scripts/extrapolation_sweep.py --seeds 0 1 2 3 --epochs 200
"""
import argparse
import tempfile
from dataclasses import replace

from nnevp import experiment as ex
from nnevp import reference as ref
from nnevp import solver as sv
from nnevp import training as tr
from nnevp.config import RunConfig, build

MIXES = {"80% tanh / 20% relu": ("relu+tanh", [0.2, 0.8]),
         "100% logistic": ("relu+logistic", [0.0, 1.0]),
         "20% logistic / 80% relu": ("relu+logistic", [0.8, 0.2])}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3])
    ap.add_argument("--epochs", type=int, default=200)
    ap.add_argument("--free-biases", action="store_true")
    args = ap.parse_args()

    jc = ref.JohnsonCookFlow(ref.JohnsonCookParams(), ref.PowerLawParams(20.0, 1e-3, 1.0))
    elastic = RunConfig().elastic
    truth = sv.simulate_curve(sv.LoadingProgram(1e-3, 0.02, 80), jc, elastic,
                              opts=sv.SolverOptions(predictor="previous")).curve
    with tempfile.TemporaryDirectory() as tmp:
        print(f"{'mix':26s}" + "".join(f"  seed {s:<4d}" for s in args.seeds))
        for name, (act, alpha) in MIXES.items():
            row = []
            for seed in args.seeds:
                cfg = build(RunConfig, {
                    "seed": seed,
                    "loading": {"n_steps": 80},
                    "generate": {"model": "johnson-cook"},
                    "model": {"experiment": "hardening",
                              "hardening": {"activation": act, "alpha": alpha,
                                            "free_biases": args.free_biases}},
                    "train": {"epochs": args.epochs},
                    "data": {"manifest": f"{tmp}/manifest.yaml", "train_strain": 0.005}})
                ex.cmd_generate(replace(cfg, seed=0), tmp)
                data = ex.load_dataset(cfg)
                model = ex.build_model(cfg, data)
                tr.train(model, data, elastic, ex.train_config(cfg))
                pred = tr.extrapolate_strain(model, data[0].program, 0.02, elastic)
                row.append((pred.stress[-1] - truth.stress[-1]) / truth.stress[-1])
            print(f"{name:26s}" + "".join(f"  {e:+9.4f}" for e in row), flush=True)


if __name__ == "__main__":
    main()
