import csv

import numpy as np
import pytest

from FedFV.FedCore import FEDAVG, FEDFV, LOSS_ASCENDING, ORDER_MODES, RANDOM_ORDER, REVERSE_ORDER
from FedFV.Harness import SUMMARY_STATISTICS, build_federation, run_seed, run_experiment, run_order_ablation, \
    run_theory_suite, summarize
from FedFV.Log import read_records, read_round_log
from FedFV.Settings import read_config
from FedFV.Theory import FAIL, PASS, GradientEnsemble
from FedFV.Utility import UsageError, mean_and_std


def _small_config(tmp_path, **sections):
    overrides = {"experiment": {"seeds": "1,2", "eval_every": "5", "output_dir": str(tmp_path / "out")},
                 "fedfv": {"sample_count": "4", "rounds": "20"},
                 "federation": {"num_clients": "10", "examples_per_class": "20", "feature_dim": "8"}}
    for section, keys in sections.items():
        overrides.setdefault(section, {}).update(keys)
    return read_config(overrides=overrides)


def test_build_federation(tmp_path):
    config = _small_config(tmp_path)
    datasets = build_federation(config, 1)
    assert [dataset.client_id for dataset in datasets] == list(range(10))
    assert sum(dataset.n_k + len(dataset.test_labels) for dataset in datasets) == 200
    grouped_config = _small_config(tmp_path, fedfv={"sample_count": "2"},
                                   federation={"num_clients": "2", "partition": "groups:0,1|2"})
    grouped = build_federation(grouped_config, 1)
    assert set(np.unique(grouped[0].train_labels)) <= {0, 1}
    assert set(np.unique(grouped[1].train_labels)) == {2}


def test_default_federation_sizes():
    datasets = build_federation(read_config(), 1)
    assert len(datasets) == 100
    assert {dataset.n_k for dataset in datasets} == {120}
    assert {len(dataset.test_labels) for dataset in datasets} == {30}
    assert all(len(np.unique(dataset.train_labels)) <= 2 for dataset in datasets)


def test_run_seed_deterministic(tmp_path):
    config = _small_config(tmp_path, fedfv={"dropout_prob": "0.2"})
    first = run_seed(config, 3, tmp_path / "a")
    second = run_seed(config, 3, tmp_path / "b")
    assert np.array_equal(first.params, second.params)
    assert [report.per_client_acc for report in first.reports] == \
        [report.per_client_acc for report in second.reports]
    assert [report.round for report in first.reports] == [5, 10, 15, 20]
    other = run_seed(config, 4, tmp_path / "c")
    assert not np.array_equal(first.params, other.params)


def test_fedfv_reduces_to_fedavg(tmp_path):
    config = _small_config(tmp_path, fedfv={"alpha": "1", "tau": "0", "dropout_prob": "0"})
    fedavg = run_seed(config, 1, tmp_path / "fedavg", algorithm=FEDAVG)
    fedfv = run_seed(config, 1, tmp_path / "fedfv", algorithm=FEDFV)
    assert np.array_equal(fedavg.params, fedfv.params)


def test_fedfv_reduces_to_fedavg_default_federation(tmp_path):
    config = read_config(overrides={"fedfv": {"alpha": "1", "tau": "0", "rounds": "50"},
                                    "experiment": {"eval_every": "50"}})
    fedavg = run_seed(config, 2, tmp_path / "fedavg", algorithm=FEDAVG)
    fedfv = run_seed(config, 2, tmp_path / "fedfv", algorithm=FEDFV)
    assert np.array_equal(fedavg.params, fedfv.params)


def test_rescaled_update_norm(tmp_path):
    config = _small_config(tmp_path, fedfv={"rounds": "300", "tau": "3", "dropout_prob": "0.3"},
                           experiment={"eval_every": "300"})
    run_seed(config, 5, tmp_path / "seed")
    records = read_round_log(tmp_path / "seed" / "rounds.jsonl")
    assert len(records) == 300
    for record in records:
        if record.skipped:
            assert record.update_norm == 0.0
        else:
            assert record.update_norm == pytest.approx(record.mean_norm, rel=1.e-9)
    assert any(record.internal_projections > 0 for record in records)


def test_run_experiment_outputs(tmp_path):
    config = _small_config(tmp_path, experiment={"dump_data": "yes"})
    summary = run_experiment(config)
    out = tmp_path / "out"
    assert (out / "effective_config.ini").is_file()
    assert read_config(out / "effective_config.ini") == config
    for seed in (1, 2):
        directory = out / f"seed_{seed}"
        for name in ("fairness.csv", "clients.csv", "rounds.jsonl"):
            assert (directory / name).is_file()
        assert len(read_records(directory / "rounds.jsonl")) == 20
        assert (directory / "data").is_dir()
    with open(out / "summary.csv", newline="") as f:
        rows = list(csv.DictReader(f))
    assert [row["statistic"] for row in rows] == list(SUMMARY_STATISTICS)
    for row in rows:
        assert float(row["mean"]) == summary.statistics[row["statistic"]][0]
    assert [result.seed for result in summary.results] == [1, 2]


def test_summarize(tmp_path):
    config = _small_config(tmp_path)
    results = [run_seed(config, seed, tmp_path / f"seed_{seed}") for seed in (1, 2)]
    summary = summarize(results)
    mean, std = summary.statistics["std"]
    hand_mean = (results[0].final.std + results[1].final.std) / 2.0
    assert mean == pytest.approx(hand_mean, rel=1.e-12)
    assert (mean, std) == mean_and_std([result.final.std for result in results])


def test_run_order_ablation_needs_plain_projection(tmp_path):
    with pytest.raises(UsageError):
        run_order_ablation(_small_config(tmp_path))
    with pytest.raises(UsageError):
        run_order_ablation(_small_config(tmp_path, fedfv={"alpha": "0", "tau": "2"}))


def test_run_order_ablation(tmp_path):
    config = _small_config(tmp_path, fedfv={"alpha": "0", "tau": "0", "rounds": "10"})
    summaries = run_order_ablation(config)
    assert list(summaries) == list(ORDER_MODES)
    out = tmp_path / "out"
    with open(out / "ablation.csv", newline="") as f:
        assert [row["order_mode"] for row in csv.DictReader(f)] == list(ORDER_MODES)
    for mode in ORDER_MODES:
        assert (out / mode / "summary.csv").is_file()
        assert (out / mode / "seed_1" / "rounds.jsonl").is_file()
    again = run_order_ablation(_small_config(tmp_path / "again", fedfv={"alpha": "0", "tau": "0", "rounds": "10"}))
    for first, second in zip(summaries[RANDOM_ORDER].results, again[RANDOM_ORDER].results):
        assert np.array_equal(first.params, second.params)


def test_run_theory_suite_fixed_ensembles(tmp_path):
    ensembles = [GradientEnsemble((np.array([1.0, 0.0, 0.0]), np.array([0.0, 2.0, 0.0]),
                                   np.array([0.0, 0.0, 3.0])))]
    report = run_theory_suite(seed=1, output_dir=tmp_path, problems=3, ensembles=ensembles)
    assert not report.failed
    assert {record.check for record in report.records} == {"theorem1", "theorem2", "theorem3", "theorem4"}
    assert sum(report.counts.values()) == len(report.records)
    assert read_records(tmp_path / "theory.jsonl") == list(report.records)


def test_run_theory_suite_theorem4_passes():
    ensembles = [GradientEnsemble((np.array([1.0, 0.0]), np.array([-1.0, 1.0])))]
    report = run_theory_suite(seed=0, problems=20, steps=200, ensembles=ensembles)
    statuses = [record.status for record in report.records if record.check == "theorem4"]
    assert len(statuses) == 20
    assert FAIL not in statuses
    assert PASS in statuses


def test_run_theory_suite_negative_control():
    ensembles = [GradientEnsemble((np.array([1.0, 0.0]), np.array([-1.0, 1.0])))]
    report = run_theory_suite(problems=0, ensembles=ensembles, bound_function=lambda m, k, eps1, eps2: -1.0)
    assert report.failed
    assert all(record.check == "theorem2" for record in report.records if record.status == FAIL)
    with pytest.raises(UsageError):
        run_theory_suite(count=0)


@pytest.mark.slow
def test_fairness_trend(tmp_path):
    fedavg = run_experiment(read_config(overrides={
        "experiment": {"algorithm": FEDAVG, "output_dir": str(tmp_path / "fedavg"), "eval_every": "300"}}))
    fedfv = run_experiment(read_config(overrides={
        "experiment": {"algorithm": FEDFV, "output_dir": str(tmp_path / "fedfv"), "eval_every": "300"},
        "fedfv": {"alpha": "0.1", "tau": "10"}}))
    assert fedfv.statistics["std"][0] < fedavg.statistics["std"][0]
    assert fedfv.statistics["worst5"][0] > fedavg.statistics["worst5"][0]


@pytest.mark.slow
def test_projecting_order_trend(tmp_path):
    summaries = run_order_ablation(read_config(overrides={
        "experiment": {"output_dir": str(tmp_path), "eval_every": "300"}, "fedfv": {"alpha": "0", "tau": "0"}}))
    assert summaries[LOSS_ASCENDING].statistics["std"][0] < summaries[REVERSE_ORDER].statistics["std"][0]
