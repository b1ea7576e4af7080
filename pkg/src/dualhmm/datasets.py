"""Shipped simulated datasets and the recipes that regenerate them.

Each dataset ``name`` is stored in the package ``data`` directory as

* ``name.yaml``: model parameters, observation grid, sample sizes and seed;
* ``name.csv``: observations (``time,y1[,...,yK]``);
* ``name_signal.csv``: the latent signal at the observation times.

``python -m dualhmm.datasets`` rewrites all files from the recipes below.
"""

from __future__ import annotations

import csv
import sys
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from .cir import CirModel, CirParams
from .model import ObservationSeries
from .simulate import simulate
from .wf import WfModel, WfParams

RECIPES = {
    "cir_desk": {
        "description": "CIR/Poisson filtering and smoothing benchmark",
        "model": {"family": "cir", "a": 5.0, "b": 9.6, "s": 8.0, "lam": 1.0},
        "x0": [3.0],
        "times": {"start": 0.0, "step": 0.011, "count": 200},
        "n_obs": 10,
        "seed": 1,
    },
    "wf_desk": {
        "description": "Wright-Fisher/multinomial filtering and smoothing benchmark",
        "model": {"family": "wf", "alpha": [0.3, 0.3, 0.3]},
        "x0": None,
        "times": {"start": 0.0, "step": 0.1, "count": 10},
        "n_obs": 15,
        "seed": 1,
    },
    "cir_mcmc": {
        "description": "CIR/Poisson parameter inference",
        "model": {"family": "cir", "a": 5.0, "b": 2.4, "s": 4.0, "lam": 1.0},
        "x0": None,
        "times": {"start": 0.0, "step": 0.011, "count": 200},
        "n_obs": 2,
        "seed": 1,
    },
    "wf_mcmc": {
        "description": "Wright-Fisher/multinomial parameter inference",
        "model": {"family": "wf", "alpha": [1.1, 2.5, 2.1]},
        "x0": None,
        "times": {"start": 0.0, "step": 0.1, "count": 100},
        "n_obs": 15,
        "seed": 1,
    },
}


@dataclass(frozen=True)
class Dataset:
    name: str
    model: object
    series: ObservationSeries
    signal: np.ndarray  # (T+1, d)
    recipe: dict


def model_from_dict(d: dict):
    """Model from a ``{"family": ..., parameters...}`` mapping.

    CIR accepts either ``a, b, s`` or ``delta, gamma, sigma`` (plus ``lam``);
    WF takes ``alpha``.
    """
    fam = d.get("family")
    if fam == "cir":
        lam = float(d.get("lam", 1.0))
        if all(k in d for k in ("a", "b", "s")):
            return CirModel(CirParams.from_natural(float(d["a"]), float(d["b"]), float(d["s"]), lam))
        if all(k in d for k in ("delta", "gamma", "sigma")):
            return CirModel(CirParams(float(d["delta"]), float(d["gamma"]), float(d["sigma"]), lam))
        raise ValueError("CIR model needs (a, b, s) or (delta, gamma, sigma)")
    if fam == "wf":
        if "alpha" not in d:
            raise ValueError("WF model needs alpha")
        return WfModel(WfParams(tuple(float(v) for v in d["alpha"])))
    raise ValueError(f"unknown model family {fam!r}")


def grid_times(spec: dict) -> np.ndarray:
    return float(spec["start"]) + float(spec["step"]) * np.arange(int(spec["count"]))


def generate(recipe: dict):
    """Simulate ``(model, states, series)`` from a recipe."""
    model = model_from_dict(recipe["model"])
    rng = np.random.default_rng(np.random.SeedSequence(int(recipe["seed"])))
    x0 = recipe.get("x0")
    states, series = simulate(model, grid_times(recipe["times"]), int(recipe["n_obs"]), rng,
                              x0=None if x0 is None else np.asarray(x0, dtype=float))
    return model, states, series


def write_signal(path, times, states) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["time"] + [f"x{j + 1}" for j in range(states.shape[1])])
        for t, x in zip(times, states):
            w.writerow([repr(float(t))] + [repr(float(v)) for v in x])


def read_signal(path) -> np.ndarray:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))[1:]
    return np.array([[float(v) for v in r[1:]] for r in rows if r])


def data_dir() -> Path:
    return Path(str(resources.files("dualhmm") / "data"))


def write_dataset(name: str, out_dir=None) -> None:
    out = Path(out_dir) if out_dir is not None else data_dir()
    out.mkdir(parents=True, exist_ok=True)
    recipe = RECIPES[name]
    _, states, series = generate(recipe)
    with open(out / f"{name}.yaml", "w", encoding="utf-8") as fh:
        yaml.safe_dump({"name": name, **recipe}, fh, sort_keys=False)
    series.to_csv(out / f"{name}.csv")
    write_signal(out / f"{name}_signal.csv", series.times, states)


def load(name: str, directory=None) -> Dataset:
    """Load a shipped dataset (or one written to ``directory``)."""
    d = Path(directory) if directory is not None else data_dir()
    path = d / f"{name}.yaml"
    if not path.exists():
        raise FileNotFoundError(f"no dataset {name!r} in {d}")
    with open(path, encoding="utf-8") as fh:
        recipe = yaml.safe_load(fh)
    series = ObservationSeries.from_csv(d / f"{name}.csv")
    signal = read_signal(d / f"{name}_signal.csv")
    return Dataset(name, model_from_dict(recipe["model"]), series, signal, recipe)


def main(argv=None) -> int:
    names = (argv if argv is not None else sys.argv[1:]) or list(RECIPES)
    for name in names:
        write_dataset(name)
        print(f"wrote {name}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
