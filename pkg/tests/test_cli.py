import json

import numpy as np
import pytest

from dualhmm import cli
from dualhmm.model import ObservationSeries


def write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


@pytest.fixture
def cir_run(tmp_path, cir_series):
    cir_series.to_csv(tmp_path / "obs.csv")
    return write(tmp_path / "run.yaml", "model: {family: cir, delta: 3.0, gamma: 2.5, sigma: 4.0, lam: 1.0}\n"
                                        "data: obs.csv\nseed: 5\n")


def test_unknown_key_reports_its_line(tmp_path, capsys):
    cfg = write(tmp_path / "bad.yaml", "dataset: cir_desk\nmcmc:\n  n_iter: 10\n  n_iterations: 5\n")
    assert cli.main(["mcmc", "--config", str(cfg)]) == 2
    err = capsys.readouterr().err
    assert "bad.yaml:4" in err and "n_iterations" in err


def test_wrong_type_is_a_validation_error(tmp_path):
    cfg = write(tmp_path / "bad.yaml", "dataset: cir_desk\nseed: abc\n")
    assert cli.main(["likelihood", "--config", str(cfg)]) == 2


def test_missing_config_and_bad_data(tmp_path):
    assert cli.main(["filter", "--config", str(tmp_path / "none.yaml")]) == 2
    write(tmp_path / "obs.csv", "time,y1\n0.0,3\n0.5,-1\n")
    cfg = write(tmp_path / "run.yaml", "model: {family: cir, a: 5, b: 2, s: 3}\ndata: obs.csv\n")
    assert cli.main(["filter", "--config", str(cfg)]) == 2


def test_bad_prune_rule_and_unknown_command(cir_run, tmp_path):
    cfg = write(tmp_path / "p.yaml", cir_run.read_text() + "prune: fixed_mass:2\n")
    assert cli.main(["likelihood", "--config", str(cfg)]) == 2
    assert cli.main(["explode", "--config", str(cir_run)]) == 2


def test_runtime_failure_exit_code(tmp_path):
    # a WF step shorter than the series sampler's minimum time raises at run time
    write(tmp_path / "obs.csv", "time,y1,y2\n0.0,1,2\n0.001,2,1\n")
    cfg = write(tmp_path / "run.yaml", "model: {family: wf, alpha: [1.0, 1.0]}\ndata: obs.csv\n"
                                        "sample_traj: {n_traj: 2}\n")
    assert cli.main(["sample-traj", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 1


def test_likelihood_prune_off_equals_full_mass(cir_run, tmp_path):
    out = {}
    for rule in ("off", "fixed_mass:1.0"):
        cfg = write(tmp_path / f"{rule[:3]}.yaml", cir_run.read_text() + f"prune: '{rule}'\n")
        assert cli.main(["likelihood", "--config", str(cfg), "--out", str(tmp_path / rule[:3])]) == 0
        out[rule] = json.loads((tmp_path / rule[:3] / "likelihood.json").read_text())["loglik"]
    assert out["off"] == out["fixed_mass:1.0"]


def test_zero_observations_give_single_components(tmp_path):
    ObservationSeries.from_rows([0.0, 0.3, 0.9], [0, 0, 0]).to_csv(tmp_path / "zero.csv")
    cfg = write(tmp_path / "z.yaml", "model: {family: cir, a: 5, b: 2.4, s: 4}\ndata: zero.csv\n")
    assert cli.main(["filter", "--config", str(cfg), "--out", str(tmp_path / "z")]) == 0
    mix = cli.load_mixtures(tmp_path / "z" / "filtering.json")
    assert [len(m) for m in mix] == [1, 1, 1]


def test_mixture_dump_round_trips(cir_run, tmp_path):
    assert cli.main(["filter", "--config", str(cir_run), "--out", str(tmp_path / "f")]) == 0
    path = tmp_path / "f" / "filtering.json"
    mix = cli.load_mixtures(path)
    cli.dump_mixtures(tmp_path / "again.json", mix)
    again = cli.load_mixtures(tmp_path / "again.json")
    for a, b in zip(mix, again):
        np.testing.assert_array_equal(a.indices, b.indices)
        np.testing.assert_array_equal(a.log_weights, b.log_weights)
        assert a.theta == b.theta and a.time == b.time


def test_simulate_then_filter_with_one_config(tmp_path):
    # the data path names the file that simulate is about to write
    cfg = write(tmp_path / "s.yaml", "model: {family: wf, alpha: [1.1, 2.5, 2.1]}\n"
                                      "simulate: {times: {start: 0, step: 0.1, count: 3}, n_obs: 4}\n"
                                      "data: out/observations.csv\nout: out\nprune: fixed_number:5\n")
    assert cli.main(["simulate", "--config", str(cfg)]) == 0
    assert cli.main(["filter", "--config", str(cfg)]) == 0
    assert len(cli.load_mixtures(tmp_path / "out" / "filtering.json")) == 3


@pytest.mark.parametrize("command", ["simulate", "sample-traj", "pf"])
def test_reruns_are_bit_identical(cir_run, tmp_path, command):
    cfg = write(tmp_path / "r.yaml", cir_run.read_text()
                + "simulate: {times: {start: 0, step: 0.1, count: 4}, n_obs: 2}\n"
                + "sample_traj: {n_traj: 5}\npf: {particles: [50], replicates: 2}\n")
    files = {}
    for k in (1, 2):
        assert cli.main([command, "--config", str(cfg), "--out", str(tmp_path / f"o{k}")]) == 0
        files[k] = {p.name: p.read_bytes() for p in (tmp_path / f"o{k}").iterdir() if p.suffix == ".csv" and "timing" not in p.name}
    assert files[1] and files[1] == files[2]


def test_seed_option_overrides_config(cir_run, tmp_path):
    cfg = write(tmp_path / "r.yaml", cir_run.read_text() + "sample_traj: {n_traj: 3}\n")
    cli.main(["sample-traj", "--config", str(cfg), "--out", str(tmp_path / "a"), "--seed", "1"])
    cli.main(["sample-traj", "--config", str(cfg), "--out", str(tmp_path / "b"), "--seed", "2"])
    assert (tmp_path / "a" / "trajectories.csv").read_bytes() != (tmp_path / "b" / "trajectories.csv").read_bytes()
    assert json.loads((tmp_path / "a" / "run.json").read_text())["seed"] == 1


def test_benchmark_rejects_empty_strategy_list(tmp_path):
    cfg = write(tmp_path / "b.yaml", "benchmark: {datasets: [wf_desk], strategies: [], parts: [likelihood]}\n")
    assert cli.main(["benchmark", "--config", str(cfg), "--out", str(tmp_path / "b")]) == 2


def test_mcmc_writes_chain_and_diagnostics(tmp_path):
    cfg = write(tmp_path / "m.yaml", "dataset: cir_mcmc\nmcmc: {n_iter: 8, n_chains: 2, pilot_iter: 8}\n")
    assert cli.main(["mcmc", "--config", str(cfg), "--out", str(tmp_path / "m")]) == 0
    diag = json.loads((tmp_path / "m" / "diagnostics.json").read_text())
    assert set(diag["summary"]) == {"a", "b", "s"}
    assert all(0.0 <= r <= 1.0 for r in diag["accept_rate"])
    lines = (tmp_path / "m" / "chain.csv").read_text().splitlines()
    assert lines[0] == "chain,iter,a,b,s,log_post" and len(lines) == 1 + 2 * 9
