"""
Harnessモジュール

実験の実行: フェデレーションの構築、シードごとのFedAvg/FedFVの実行と評価、
射影順序のアブレーション、理論チェックのスイート、結果ファイルの書き出し。

出力(output_dir以下):
    effective_config.ini       実効設定
    seed_<s>/fairness.csv      round, mean, std, variance, worst5, best5
    seed_<s>/clients.csv       round, client_id, acc
    seed_<s>/rounds.jsonl      ラウンドログ
    seed_<s>/data/             データセットのテキストダンプ(dump_data = yes のとき)
    summary.csv                statistic, mean, std (シード間)
"""
from __future__ import annotations

__all__ = ["ExperimentConfig", "SeedResult", "ExperimentSummary", "TheoryReport", "build_federation",
           "build_run", "run_seed", "summarize", "run_experiment", "run_order_ablation", "run_theory_suite",
           "display_summary", "display_ablation", "display_theory_report", "SUMMARY_STATISTICS"]

import collections
import csv
import dataclasses
import logging
import pathlib as p
from concurrent.futures import Future, ProcessPoolExecutor
from typing import Dict, Final, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .DataGen import ClientDataset, FederationSpec, dump_datasets, group_partition, load_idx, shard_partition, \
    synth_classification
from .FedCore import FEDFV, ORDER_MODES, FedFVConfig, FederatedRun, run_round, size_weights
from .Log import BoundRecord, append_records
from .Metrics import FairnessReport, append_client_rows, append_fairness_rows, evaluate_clients, fairness_report
from .Models import MLP2, LocalTrainConfig, Model, init_model
from .Settings import ExperimentConfig, write_effective_config
from .Theory import FAIL, PASS, SKIP, BoundFunction, ConvexQuadratic, GradientEnsemble, bound_sweep, f_bound, \
    ordered_projection_run, random_two_objective_problem, theorem1_check, theorem2_check, theorem3_check, \
    theorem4_check
from .Utility import THEORY_STREAM, DataWriteError, UsageError, mean_and_std, seeded_rng
from .VecMath import ParamVector

logger = logging.getLogger(__name__)

SUMMARY_STATISTICS: Final[Tuple[str, ...]] = ("mean", "std", "variance", "worst5", "best5", "std_points")
PROBLEM_KEY: Final[int] = 1  # 凸二次問題の乱数列をアンサンブルの乱数列と分ける


@dataclasses.dataclass(frozen=True, eq=False)
class SeedResult:
    """
    1シードの実行結果
    """
    seed: int
    reports: Tuple[FairnessReport, ...]  # 評価したラウンドごとの統計量
    params: ParamVector  # 最終モデルのパラメータ

    @property
    def final(self) -> FairnessReport:
        return self.reports[-1]


@dataclasses.dataclass(frozen=True, eq=False)
class ExperimentSummary:
    """
    シード間の集計。statistics[name] = (平均, 標準偏差)
    """
    results: Tuple[SeedResult, ...]
    statistics: Mapping[str, Tuple[float, float]]


@dataclasses.dataclass(frozen=True)
class TheoryReport:
    records: Tuple[BoundRecord, ...]

    @property
    def counts(self) -> Mapping[str, int]:
        counter = collections.Counter(record.status for record in self.records)
        return {status: counter.get(status, 0) for status in (PASS, SKIP, FAIL)}

    @property
    def failed(self) -> bool:
        return self.counts[FAIL] > 0


def _mkdir(directory: p.Path) -> p.Path:
    try:
        directory.mkdir(parents=True, exist_ok=True)
    except OSError:
        raise DataWriteError(f"cannot create {directory} (module {__name__}).")
    return directory


def build_federation(config: ExperimentConfig, seed: int) -> Sequence[ClientDataset]:
    """
    設定に従ってクライアントのデータセットを作る
    Args:
        config(ExperimentConfig): 実験設定
        seed(int): シード

    Returns:
        クライアントID順のデータセット(Sequence[ClientDataset])
    """
    federation = config.federation
    if federation.idx_images is not None:
        features, labels = load_idx(federation.idx_images, federation.idx_labels)
    else:
        features, labels = synth_classification(federation.num_classes, federation.examples_per_class,
                                                federation.feature_dim, federation.cluster_spread, seed)
    groups = federation.groups
    if groups is not None:
        return group_partition(features, labels, groups, seed)
    spec = FederationSpec(num_clients=federation.num_clients, shards_per_client=federation.shards_per_client,
                          num_classes=federation.num_classes, examples_per_class=federation.examples_per_class,
                          feature_dim=int(features.shape[1]), seed=seed)
    return shard_partition(features, labels, spec)


def build_run(config: ExperimentConfig, seed: int, datasets: Sequence[ClientDataset], algorithm: Optional[str] = None,
              order_mode: Optional[str] = None, workers: int = 1) -> FederatedRun:
    """
    初期モデルとサーバ設定を用意する。algorithm, order_mode は設定を上書きする。
    """
    num_classes: int = max(config.federation.num_classes,
                           1 + max(int(dataset.train_labels.max(initial=0)) for dataset in datasets))
    model: Model = init_model(config.model.kind, int(datasets[0].train_features.shape[1]), num_classes, seed,
                              hidden_dim=config.model.hidden_dim if config.model.kind == MLP2 else None)
    server = FedFVConfig(alpha=config.fedfv.alpha, tau=config.fedfv.tau, sample_count=config.sample_count,
                         dropout_prob=config.fedfv.dropout_prob, total_rounds=config.fedfv.rounds,
                         weights=size_weights(datasets), order_mode=order_mode or config.experiment.order_mode)
    training = LocalTrainConfig(epochs=config.training.epochs, batch_size=config.training.batch_size,
                                learning_rate=config.training.learning_rate, shuffle_seed=seed)
    return FederatedRun(config=server, model=model, datasets=datasets, train_config=training, seed=seed,
                        algorithm=algorithm or config.experiment.algorithm, workers=workers)


def run_seed(config: ExperimentConfig, seed: int, directory: p.Path, algorithm: Optional[str] = None,
             order_mode: Optional[str] = None, workers: int = 1) -> SeedResult:
    """
    1シード分の学習を行い、eval_everyラウンドごとと最終ラウンドに評価して書き出す
    Args:
        config(ExperimentConfig): 実験設定
        seed(int): シード
        directory(pathlib.Path): このシードの出力ディレクトリ
        algorithm(Optional[str]): アルゴリズムの上書き
        order_mode(Optional[str]): 射影順序の上書き
        workers(int): クライアント学習のスレッド数

    Returns:
        実行結果(SeedResult)
    """
    _mkdir(directory)
    for name in ("fairness.csv", "clients.csv", "rounds.jsonl"):
        (directory / name).unlink(missing_ok=True)
    datasets: Sequence[ClientDataset] = build_federation(config, seed)
    if config.experiment.dump_data:
        dump_datasets(datasets, directory / "data")
    state: FederatedRun = build_run(config, seed, datasets, algorithm, order_mode, workers)
    reports: List[FairnessReport] = []
    every: int = config.experiment.eval_every
    while state.round < state.config.total_rounds:
        run_round(state)
        append_records(directory / "rounds.jsonl", state.logs[-1:])
        if state.round % every == 0 or state.round == state.config.total_rounds:
            report: FairnessReport = fairness_report(evaluate_clients(state.model, datasets), state.round)
            append_fairness_rows(directory / "fairness.csv", [report])
            append_client_rows(directory / "clients.csv", [report])
            reports.append(report)
            logger.info("seed %d round %d: mean %.4f std %.4f worst5 %.4f", seed, report.round, report.mean,
                        report.std, report.worst5)
    return SeedResult(seed=seed, reports=tuple(reports), params=state.model.params)


def summarize(results: Sequence[SeedResult]) -> ExperimentSummary:
    """
    最終ラウンドの統計量のシード間の平均と標準偏差
    """
    statistics: Dict[str, Tuple[float, float]] = {
        name: mean_and_std([getattr(result.final, name) for result in results]) for name in SUMMARY_STATISTICS}
    return ExperimentSummary(results=tuple(results), statistics=statistics)


def _write_summary(summary: ExperimentSummary, path: p.Path) -> None:
    try:
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["statistic", "mean", "std", "seeds"])
            for name, (mean, std) in summary.statistics.items():
                writer.writerow([name, repr(mean), repr(std), len(summary.results)])
    except OSError:
        raise DataWriteError(f"summary write failed: {path} (module {__name__}).")


def _run_seeds(config: ExperimentConfig, directory: p.Path, algorithm: Optional[str] = None,
               order_mode: Optional[str] = None) -> List[SeedResult]:
    seeds: Sequence[int] = config.experiment.seeds
    workers: int = config.experiment.workers
    if workers > 1 and len(seeds) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(seeds))) as pool_executor:
            futures: List[Future] = [pool_executor.submit(run_seed, config, seed, directory / f"seed_{seed}",
                                                          algorithm, order_mode) for seed in seeds]
            return [future.result() for future in futures]
    return [run_seed(config, seed, directory / f"seed_{seed}", algorithm, order_mode, workers) for seed in seeds]


def run_experiment(config: ExperimentConfig) -> ExperimentSummary:
    """
    全シードを実行し、シードごとの結果とシード間の集計を書き出す
    Args:
        config(ExperimentConfig): 実験設定

    Returns:
        集計(ExperimentSummary)
    """
    directory: p.Path = _mkdir(config.experiment.output_dir)
    write_effective_config(config, directory / "effective_config.ini")
    summary: ExperimentSummary = summarize(_run_seeds(config, directory))
    _write_summary(summary, directory / "summary.csv")
    return summary


def run_order_ablation(config: ExperimentConfig) -> Mapping[str, ExperimentSummary]:
    """
    同じフェデレーション・シードで3つの射影順序を比較する(α=0, τ=0が前提)
    Args:
        config(ExperimentConfig): 実験設定

    Returns:
        射影順序 -> 集計(Mapping[str, ExperimentSummary])

    Raises:
        UsageError: α != 0 または τ != 0
    """
    if config.fedfv.alpha != 0.0 or config.fedfv.tau != 0:
        raise UsageError(f"the order ablation needs alpha = 0 and tau = 0, got alpha={config.fedfv.alpha},"
                         f" tau={config.fedfv.tau} (module {__name__}).")
    directory: p.Path = _mkdir(config.experiment.output_dir)
    write_effective_config(config, directory / "effective_config.ini")
    summaries: Dict[str, ExperimentSummary] = {}
    for mode in ORDER_MODES:
        summaries[mode] = summarize(_run_seeds(config, directory / mode, FEDFV, mode))
        _write_summary(summaries[mode], directory / mode / "summary.csv")
    try:
        with open(directory / "ablation.csv", "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["order_mode", "std_mean", "std_std", "mean_mean", "worst5_mean"])
            for mode, summary in summaries.items():
                writer.writerow([mode, repr(summary.statistics["std"][0]), repr(summary.statistics["std"][1]),
                                 repr(summary.statistics["mean"][0]), repr(summary.statistics["worst5"][0])])
    except OSError:
        raise DataWriteError(f"ablation table write failed: {directory} (module {__name__}).")
    return summaries


def run_theory_suite(seed: int = 0, count: int = 1000, output_dir: Optional[p.Path] = None,
                     bound_function: BoundFunction = f_bound, problems: int = 100, steps: int = 5000,
                     ensembles: Optional[Sequence[GradientEnsemble]] = None) -> TheoryReport:
    """
    衝突上界のスイープ、2目的の降下、真の勾配の前提と降下をまとめて調べる
    Args:
        seed(int): スイートのシード
        count(int): スイープで集める前提を満たすアンサンブルの数
        output_dir(Optional[pathlib.Path]): theory.jsonlの出力先
        bound_function(BoundFunction): 2つ目の上界のf。チェッカ自身の試験用に差し替えられる
        problems(int): 2目的の降下と真の勾配のチェックそれぞれに使う凸問題の数
        steps(int): 2目的の降下のステップ数の上限
        ensembles(Optional[Sequence[GradientEnsemble]]): スイープの代わりに調べる固定アンサンブル

    Returns:
        全レコード(TheoryReport)

    Raises:
        UsageError: countが1未満
    """
    if count < 1:
        raise UsageError(f"count must be at least 1, got {count} (module {__name__}).")
    records: List[BoundRecord] = []
    if ensembles is None:
        records += bound_sweep(seed, count, bound_function)
    else:
        for index, ensemble in enumerate(ensembles):
            run = ordered_projection_run(ensemble)
            records += theorem1_check(run, index) + theorem2_check(run, index, bound_function)
    for index in range(problems):
        rng: np.random.Generator = seeded_rng(seed, THEORY_STREAM, PROBLEM_KEY, index)
        f1, f2, theta0 = random_two_objective_problem(rng)
        records.append(theorem3_check(f1, f2, theta0, steps, index))
        m: int = int(rng.integers(2, 5))
        d: int = int(rng.integers(2, 5))
        objectives: List[ConvexQuadratic] = [ConvexQuadratic(center=rng.uniform(-2.0, 2.0, size=d),
                                                             scale=float(rng.uniform(0.2, 1.0))) for _ in range(m)]
        records.append(theorem4_check(objectives, rng.uniform(-2.0, 2.0, size=d), problem_seed=index))
    report = TheoryReport(tuple(records))
    if output_dir is not None:
        path: p.Path = _mkdir(p.Path(output_dir)) / "theory.jsonl"
        path.unlink(missing_ok=True)
        append_records(path, records)
    return report


def display_summary(summary: ExperimentSummary, title: str = "Summary") -> None:
    """
    集計の表示
    Args:
        summary(ExperimentSummary): 集計
        title(str): 見出し
    """
    print(f"{'=' * (len(title) + 4)}\n  {title}\n{'=' * (len(title) + 4)}")
    print(f"seeds: {', '.join(str(result.seed) for result in summary.results)}")
    for name, (mean, std) in summary.statistics.items():
        print(f"{name:>10s}: {mean:10.4f} +- {std:.4f}")


def display_ablation(summaries: Mapping[str, ExperimentSummary]) -> None:
    print('==================\n  Projecting order\n==================')
    for mode, summary in summaries.items():
        mean, std = summary.statistics["std_points"]
        print(f"{mode:>15s}: std {mean:8.3f} +- {std:.3f} (percentage points)")


def display_theory_report(report: TheoryReport) -> None:
    print('==========\n  Theory\n==========')
    by_check: Dict[str, collections.Counter] = collections.defaultdict(collections.Counter)
    for record in report.records:
        by_check[record.check][record.status] += 1
    for check in sorted(by_check):
        counts = by_check[check]
        print(f"{check}: {counts[PASS]} pass, {counts[SKIP]} skip, {counts[FAIL]} fail")
    for record in report.records:
        if record.status == FAIL:
            print(f"FAIL {record.check} ensemble {record.ensemble_seed} m={record.m} d={record.d} k={record.k}:"
                  f" observed {record.observed} > bound {record.bound}")
