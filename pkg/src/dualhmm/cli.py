"""Command-line front end.

``dualhmm <command> --config run.yaml [--seed N] [--out DIR]``

Commands: simulate, filter, smooth, likelihood, sample-traj, mcmc, pf,
benchmark.  The YAML config is validated against a fixed schema (unknown
keys are rejected with their line number).  Exit codes: 0 success, 2
invalid config or input data, 1 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from pathlib import Path

import numpy as np
import yaml

from . import datasets
from .inference import PruneRule, cost_to_go_recursion, loglik, run_filter, run_smoother
from .model import ObservationSeries, WeightedMixture, mixture_mean, mixture_quantile

COMMANDS = ("simulate", "filter", "smooth", "likelihood", "sample-traj", "mcmc", "pf", "benchmark")


class ConfigError(ValueError):
    """Invalid configuration or input data (exit code 2)."""


# ------------------------------------------------------------------ schema

ANY = object()

SCHEMA = {
    "model": {"family": str, "a": float, "b": float, "s": float, "lam": float,
              "delta": float, "gamma": float, "sigma": float, "alpha": list},
    "data": str,
    "dataset": str,
    "prune": str,
    "seed": int,
    "out": str,
    "precision": {"precision_bits": int, "precision_max_bits": int, "row_sum_tol": float},
    "wf_min_dt": float,
    "series_max_refine": int,
    "simulate": {"times": {"start": float, "step": float, "count": int}, "n_obs": int, "x0": list},
    "filter": {"quantiles": list},
    "smooth": {"quantiles": list},
    "sample_traj": {"n_traj": int},
    "mcmc": {"sampler": str, "n_iter": int, "n_chains": int, "pilot_iter": int, "init_scale": float,
             "init": list, "burn_in": int, "mh_steps": int, "priors": list, "proposal_cov": list,
             "max_lag": int, "lam": float},
    "pf": {"particles": ANY, "replicates": int, "ess_frac": float, "smoother": bool,
           "kde_bandwidth": float},
    "benchmark": {"datasets": list, "strategies": list, "pf_particles": ANY, "replicates": int,
                  "repeats": int, "mass_levels": list, "parts": list,
                  "smoothing": {"n_times": int, "strategies": list, "pf_particles": list}},
}


def _type_ok(value, typ) -> bool:
    if typ is ANY:
        return True
    if typ is float:
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if typ is int:
        return isinstance(value, int) and not isinstance(value, bool)
    return isinstance(value, typ)


def _check(node, schema, path, src):
    if not isinstance(node, yaml.MappingNode):
        raise ConfigError(f"{src}:{node.start_mark.line + 1}: section '{path or 'top level'}' must be a mapping")
    for knode, vnode in node.value:
        key = knode.value
        where = f"{src}:{knode.start_mark.line + 1}"
        if key not in schema:
            sect = f" in section '{path}'" if path else ""
            raise ConfigError(f"{where}: unknown key '{key}'{sect}")
        sub = schema[key]
        if isinstance(sub, dict):
            _check(vnode, sub, f"{path}.{key}" if path else key, src)


def _check_types(data, schema, path, src, lines):
    for key, val in data.items():
        sub = schema[key]
        name = f"{path}.{key}" if path else key
        if isinstance(sub, dict):
            _check_types(val, sub, name, src, lines)
        elif val is not None and not _type_ok(val, sub):
            raise ConfigError(f"{src}:{lines.get(name, '?')}: '{name}' must be of type {sub.__name__}")


def _key_lines(node, path="", out=None):
    out = {} if out is None else out
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            name = f"{path}.{k.value}" if path else k.value
            out[name] = k.start_mark.line + 1
            _key_lines(v, name, out)
    return out


def load_config(path) -> dict:
    """Parse and validate a YAML run configuration."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        node = yaml.compose(text)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if node is None:
        return {"_dir": str(path.parent)}
    _check(node, SCHEMA, "", path)
    _check_types(data, SCHEMA, "", path, _key_lines(node))
    data["_dir"] = str(path.parent)
    return data


# --------------------------------------------------------------- plumbing


def _model_and_series(cfg: dict, need_data: bool = True):
    """Model and observation series from ``model``/``data`` or a shipped ``dataset``."""
    base = Path(cfg.get("_dir", "."))
    ds = None
    if cfg.get("dataset"):
        try:
            ds = datasets.load(cfg["dataset"])
        except FileNotFoundError as exc:
            raise ConfigError(str(exc)) from None
    try:
        if cfg.get("model"):
            model = datasets.model_from_dict(cfg["model"])
        elif ds is not None:
            model = ds.model
        else:
            raise ConfigError("config needs a 'model' section or a 'dataset'")
    except ValueError as exc:
        raise ConfigError(f"invalid model: {exc}") from None
    if model.family == "wf":
        opts = {}
        if "wf_min_dt" in cfg:
            opts["min_dt"] = float(cfg["wf_min_dt"])
        if "series_max_refine" in cfg:
            opts["max_refine"] = int(cfg["series_max_refine"])
        if cfg.get("precision"):
            opts["precision"] = dict(cfg["precision"])
        if opts:
            model = type(model)(model.params, **opts)
    series = None
    if cfg.get("data") and need_data:
        p = Path(cfg["data"])
        p = p if p.is_absolute() else base / p
        try:
            series = ObservationSeries.from_csv(p)
        except (OSError, ValueError) as exc:
            raise ConfigError(f"invalid data file: {exc}") from None
    elif ds is not None:
        series = ds.series
    if need_data and series is None:
        raise ConfigError("config needs 'data' (observations CSV) or a shipped 'dataset'")
    if series is not None:
        D = series.counts[0].shape[1]
        if D != model.dim:
            raise ConfigError(f"data have {D} count columns but the model has dimension {model.dim}")
    return model, series, ds


def _prune(cfg: dict) -> PruneRule:
    try:
        return PruneRule.parse(cfg.get("prune", "off"))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow(r)


def _write_dict_rows(path: Path, rows: list) -> None:
    if not rows:
        _write_csv(path, [], [])
        return
    header = list(rows[0].keys())
    _write_csv(path, header, ([r[k] for k in header] for r in rows))


def _write_json(path: Path, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, allow_nan=False)
        fh.write("\n")


def dump_mixtures(path, mixtures, extra: dict | None = None) -> None:
    """Write mixtures (indices, log-weights, theta, time) as JSON."""
    _write_json(Path(path), {**(extra or {}), "mixtures": [m.to_dict() for m in mixtures]})


def load_mixtures(path) -> list:
    with open(path, encoding="utf-8") as fh:
        obj = json.load(fh)
    return [WeightedMixture.from_dict(d) for d in obj["mixtures"]]


def _bands(mixtures, model, quantiles) -> tuple:
    qs = [float(q) for q in quantiles]
    if any(not 0 < q < 1 for q in qs):
        raise ConfigError("quantiles must lie in (0, 1)")
    header = ["time"]
    for j in range(model.dim):
        header += [f"mean{j + 1}"] + [f"q{q:g}_{j + 1}" for q in qs]
    rows = []
    for mix in mixtures:
        mean = np.atleast_1d(mixture_mean(mix, model))
        row = [mix.time]
        for j in range(model.dim):
            row += [float(mean[j])] + [mixture_quantile(mix, q, model, j) for q in qs]
        rows.append(row)
    return header, rows


def _seed_info(seed: int) -> dict:
    return {"seed": int(seed), "seed_rule": "numpy SeedSequence(seed).spawn per component"}


# ----------------------------------------------------------------- commands


def cmd_simulate(cfg, seed, out):
    sim = cfg.get("simulate") or {}
    model, _, ds = _model_and_series(cfg, need_data=False)
    recipe = ds.recipe if ds is not None else {}
    tspec = sim.get("times") or recipe.get("times")
    if not tspec:
        raise ConfigError("simulate needs 'simulate.times' with start, step and count")
    missing = {"start", "step", "count"} - set(tspec)
    if missing:
        raise ConfigError(f"simulate.times is missing {sorted(missing)}")
    if int(tspec["count"]) < 1 or not float(tspec["step"]) > 0:
        raise ConfigError("simulate.times needs count >= 1 and step > 0")
    n_obs = int(sim.get("n_obs", recipe.get("n_obs", 1)))
    if n_obs < 1:
        raise ConfigError("simulate.n_obs must be positive")
    x0 = sim.get("x0", recipe.get("x0"))
    if x0 is not None and len(x0) != model.dim:
        raise ConfigError(f"simulate.x0 must have {model.dim} entries")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    times = datasets.grid_times(tspec)
    from .simulate import simulate
    states, series = simulate(model, times, n_obs, rng, None if x0 is None else np.asarray(x0, dtype=float))
    series.to_csv(out / "observations.csv")
    datasets.write_signal(out / "signal.csv", series.times, states)
    _write_json(out / "run.json", {"command": "simulate", **_seed_info(seed), "model": repr(model),
                                   "n_times": len(series), "n_obs": n_obs})
    return f"simulated {len(series)} times into {out}"


def cmd_filter(cfg, seed, out):
    model, series, _ = _model_and_series(cfg)
    rule = _prune(cfg)
    fo = run_filter(series, model, rule)
    dump_mixtures(out / "filtering.json", fo.filtering, {"model": repr(model), "prune": str(rule)})
    dump_mixtures(out / "predictive.json", fo.predictive, {"model": repr(model), "prune": str(rule)})
    header, rows = _bands(fo.filtering, model, (cfg.get("filter") or {}).get("quantiles", [0.025, 0.975]))
    _write_csv(out / "filtering_bands.csv", header, rows)
    _write_json(out / "loglik.json", {"loglik": fo.loglik, "log_marginals": fo.log_marginals.tolist(),
                                      "prune": str(rule)})
    return f"filtered {len(series)} times; loglik {fo.loglik:.10g}"


def cmd_smooth(cfg, seed, out):
    model, series, _ = _model_and_series(cfg)
    rule = _prune(cfg)
    sm = run_smoother(series, model, rule)
    dump_mixtures(out / "smoothing.json", sm, {"model": repr(model), "prune": str(rule)})
    header, rows = _bands(sm, model, (cfg.get("smooth") or {}).get("quantiles", [0.025, 0.975]))
    _write_csv(out / "smoothing_bands.csv", header, rows)
    return f"smoothed {len(series)} times"


def cmd_likelihood(cfg, seed, out):
    model, series, _ = _model_and_series(cfg)
    rule = _prune(cfg)
    t0 = time.perf_counter()
    v = loglik(series, model, rule)
    t = time.perf_counter() - t0
    _write_json(out / "likelihood.json", {"loglik": v, "prune": str(rule), "runtime": t, "model": repr(model)})
    return f"loglik {v!r}"


def cmd_sample_traj(cfg, seed, out):
    from .trajectory import sample_joint_cir, sample_joint_wf
    model, series, _ = _model_and_series(cfg)
    rule = _prune(cfg)
    n = int((cfg.get("sample_traj") or {}).get("n_traj", 100))
    if n < 1:
        raise ConfigError("sample_traj.n_traj must be positive")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    if model.family == "cir":
        ts = sample_joint_cir(run_filter(series, model, rule), model, n, rng, seed)
    else:
        ts = sample_joint_wf(series, model, cost_to_go_recursion(series, model, rule), rng, n, seed)
    _write_csv(out / "trajectories.csv", ["traj_id", "time"] + [f"x{j + 1}" for j in range(model.dim)],
               ts.to_rows())
    _write_json(out / "run.json", {"command": "sample-traj", **_seed_info(seed), "n_traj": n, "prune": str(rule)})
    return f"sampled {n} trajectories"


def _priors(spec, family, dim):
    from .mcmc import Prior, default_priors
    if spec is None:
        return default_priors(family, dim)
    out = []
    for p in spec:
        if not isinstance(p, dict):
            raise ConfigError("each prior must be a mapping with 'kind' and its parameters")
        unknown = set(p) - {"kind", "rate", "loc", "scale"}
        if unknown:
            raise ConfigError(f"unknown prior keys {sorted(unknown)}")
        try:
            out.append(Prior(**p))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid prior {p}: {exc}") from None
    return tuple(out)


def cmd_mcmc(cfg, seed, out):
    from .mcmc import ChainConfig, diagnostics, gibbs_joint_cir, rwmh_marginal
    model, series, _ = _model_and_series(cfg)
    mc = cfg.get("mcmc") or {}
    sampler = mc.get("sampler", "marginal")
    if sampler not in ("marginal", "gibbs"):
        raise ConfigError("mcmc.sampler must be 'marginal' or 'gibbs'")
    rule = _prune(cfg) if "prune" in cfg else PruneRule.fixed_number(10)
    lam = float(mc.get("lam", getattr(getattr(model, "params", None), "lam", 1.0)))
    try:
        chain_cfg = ChainConfig(
            n_iter=int(mc.get("n_iter", 2000)), n_chains=int(mc.get("n_chains", 3)),
            proposal_cov=None if mc.get("proposal_cov") is None else np.asarray(mc["proposal_cov"], dtype=float),
            init_scale=float(mc.get("init_scale", 0.05)), pilot_iter=int(mc.get("pilot_iter", 2000)),
            priors=_priors(mc.get("priors"), model.family, model.dim), prune=rule, seed=int(seed),
            init=None if mc.get("init") is None else np.asarray(mc["init"], dtype=float),
            burn_in=mc.get("burn_in"), mh_steps=int(mc.get("mh_steps", 1)))
    except ValueError as exc:
        raise ConfigError(f"invalid mcmc settings: {exc}") from None
    if sampler == "gibbs":
        if model.family != "cir":
            raise ConfigError("the joint Gibbs sampler is only available for the CIR model")
        res = gibbs_joint_cir(series, chain_cfg, lam)
    else:
        res = rwmh_marginal(series, model.family, chain_cfg, lam)
    _write_csv(out / "chain.csv", ["chain", "iter", *res.names, "log_post"], res.rows())
    diag = {"sampler": sampler, **_seed_info(seed), "prune": str(rule), "accept_rate": res.accept_rate.tolist(),
            "burn_in": res.burn, "n_failed": res.n_failed, "proposal_cov": res.proposal_cov.tolist(),
            "summary": res.summary()}
    if res.draws.shape[0] >= 2 and res.kept.shape[1] >= 4:
        rh, ac = diagnostics(res.kept, int(mc.get("max_lag", 50)))
        diag["rhat"] = dict(zip(res.names, rh.tolist()))
        diag["acf"] = {n: [None if not np.isfinite(v) else float(v) for v in a] for n, a in zip(res.names, ac)}
    _write_json(out / "diagnostics.json", diag)
    if res.trajectories is not None:
        tr = res.trajectories
        _write_csv(out / "trajectory_draws.csv", ["chain", "iter"] + [f"t{i}" for i in range(tr.shape[2])],
                   ([c, i, *map(float, tr[c, i])] for c in range(tr.shape[0]) for i in range(tr.shape[1])))
    return f"{sampler} chains done; acceptance {np.round(res.accept_rate, 3).tolist()}"


def cmd_pf(cfg, seed, out):
    from .particle import bootstrap_pf, ffbs_particle_smoother, gamma_kde
    from .metrics import GammaMixture, l2_distance
    model, series, _ = _model_and_series(cfg)
    pc = cfg.get("pf") or {}
    parts = pc.get("particles", 1000)
    parts = [int(parts)] if isinstance(parts, (int, float)) else [int(v) for v in parts]
    if not parts or any(n < 1 for n in parts):
        raise ConfigError("pf.particles must be positive integers")
    reps = int(pc.get("replicates", 10))
    ess = float(pc.get("ess_frac", 0.5))
    if not 0 <= ess <= 1:
        raise ConfigError("pf.ess_frac must lie in [0, 1]")
    exact = loglik(series, model, PruneRule.off())
    children = np.random.SeedSequence(seed).spawn(len(parts))
    rows, timing = [], []
    for n, ss in zip(parts, children):
        rng = np.random.default_rng(ss)
        for r in range(reps):
            t0 = time.perf_counter()
            v = bootstrap_pf(series, model, n, rng, ess).loglik
            rows.append([n, r, v, exact])
            timing.append([n, r, time.perf_counter() - t0])
    # wall times live in their own file so the estimates stay bit-reproducible
    _write_csv(out / "pf.csv", ["particles", "replicate", "loglik", "exact_loglik"], rows)
    _write_csv(out / "pf_timing.csv", ["particles", "replicate", "runtime"], timing)
    if pc.get("smoother"):
        if model.family != "cir":
            raise ConfigError("particle smoothing needs the CIR transition density")
        exact_sm = run_smoother(series, model, PruneRule.off())
        srows = []
        for n, ss in zip(parts, np.random.SeedSequence(seed).spawn(2 * len(parts))[len(parts):]):
            clouds = ffbs_particle_smoother(series, model, n, np.random.default_rng(ss), ess)
            for g, c in zip(exact_sm, clouds):
                kde = gamma_kde(c.states.ravel(), pc.get("kde_bandwidth"), c.weights)
                srows.append([n, c.time, float(c.mean()[0]),
                              l2_distance(GammaMixture.from_weighted(g, model), kde)])
        _write_csv(out / "pf_smoothing.csv", ["particles", "time", "mean", "l2_to_exact"], srows)
    _write_json(out / "run.json", {"command": "pf", **_seed_info(seed), "particles": parts, "replicates": reps,
                                   "ess_frac": ess, "exact_loglik": exact})
    return f"particle filters done for N = {parts}"


def cmd_benchmark(cfg, seed, out):
    from . import experiments as ex
    bc = cfg.get("benchmark") or {}
    names = bc.get("datasets", ["cir_desk", "wf_desk"])
    parts = bc.get("parts", ["support", "likelihood", "smoothing"])
    unknown = set(parts) - {"support", "likelihood", "smoothing"}
    if unknown:
        raise ConfigError(f"unknown benchmark parts {sorted(unknown)}")
    strategies = bc.get("strategies", list(ex.LIKELIHOOD_STRATEGIES))
    if not strategies:
        raise ConfigError("benchmark.strategies must not be empty")
    for s in strategies:
        try:
            PruneRule.parse(s)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    pf_spec = bc.get("pf_particles", {"cir": [1000, 5000, 7500, 10000], "wf": [100, 500, 1000, 5000, 7500, 10000]})
    levels = bc.get("mass_levels", [0.95, 0.99, 0.999])
    reps = int(bc.get("replicates", 50))
    repeats = int(bc.get("repeats", 5))
    children = np.random.SeedSequence(seed).spawn(2 * len(names))
    verdicts = {}
    for k, name in enumerate(names):
        try:
            ds = datasets.load(name)
        except FileNotFoundError as exc:
            raise ConfigError(str(exc)) from None
        fam = ds.model.family
        if "support" in parts:
            rows = ex.support_table(ds.series, ds.model, levels)
            _write_dict_rows(out / f"support_{name}.csv", rows)
            last = rows[-1]
            verdicts[f"support_law_{name}"] = all(r["support"] == r["formula"] for r in rows)
            verdicts[f"mass95_below_10pct_{name}"] = bool(last[f"mass_{0.95:g}"] < 0.1 * last["support"]) \
                if 0.95 in levels else None
        if "likelihood" in parts:
            pfs = pf_spec.get(fam, []) if isinstance(pf_spec, dict) else pf_spec
            rows = ex.likelihood_table(ds.series, ds.model, strategies, pfs, reps,
                                       np.random.default_rng(children[2 * k]), repeats)
            _write_dict_rows(out / f"likelihood_{name}.csv", rows)
            pairs = ex.pareto_dominates([r for r in rows if r["method"] != "pf" or int(r["setting"]) <= 10000])
            verdicts[f"pareto_{name}"] = all(p[2] for p in pairs)
        if "smoothing" in parts and fam == "cir":
            sc = bc.get("smoothing") or {}
            n_times = int(sc.get("n_times", 20))
            sub = ds.series.subset(min(n_times, len(ds.series)))
            rows = ex.smoothing_table(sub, ds.model, sc.get("strategies", ["fixed_number:10", "fixed_number:50",
                                                                           "fixed_mass:0.95", "fixed_mass:0.99",
                                                                           "fixed_mass:0.999"]),
                                      sc.get("pf_particles", [50, 100, 500]),
                                      np.random.default_rng(children[2 * k + 1]))
            _write_dict_rows(out / f"smoothing_{name}.csv", rows)
    _write_json(out / "acceptance.json", {**_seed_info(seed), "criteria": verdicts})
    return "benchmark verdicts: " + ", ".join(f"{k}={'pass' if v else 'fail'}" for k, v in verdicts.items())


HANDLERS = {
    "simulate": cmd_simulate, "filter": cmd_filter, "smooth": cmd_smooth, "likelihood": cmd_likelihood,
    "sample-traj": cmd_sample_traj, "mcmc": cmd_mcmc, "pf": cmd_pf, "benchmark": cmd_benchmark,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dualhmm", description="Exact filtering and smoothing for dual-process HMMs.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, help="YAML run configuration")
    p.add_argument("--seed", type=int, default=None, help="global seed (overrides the config)")
    p.add_argument("--out", default=None, help="output directory (overrides the config)")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code else 0
    try:
        cfg = load_config(args.config)
        seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
        if seed < 0:
            raise ConfigError("seed must be nonnegative")
        base = Path(cfg.get("_dir", "."))
        out = Path(args.out) if args.out is not None else Path(cfg.get("out", "results"))
        if args.out is None and not out.is_absolute():
            out = base / out
        out.mkdir(parents=True, exist_ok=True)
        msg = HANDLERS[args.command](cfg, seed, out)
    except ConfigError as exc:
        print(f"dualhmm: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        print(f"dualhmm: {args.command} failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    print(msg)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
