"""
Metricsモジュール

クライアントごとのテスト精度と、公平性の統計量(平均、標準偏差、分散、
下位5%平均、上位5%平均)を計算し、CSVに書き出す。
"""
from __future__ import annotations

__all__ = ["TAIL_FRACTION", "FairnessReport", "evaluate_clients", "fairness_report", "append_fairness_rows",
           "append_client_rows", "FAIRNESS_HEADER", "CLIENT_HEADER"]

import csv
import dataclasses
import pathlib as p
from typing import Final, Iterable, List, Sequence, Tuple

import numpy as np

from .DataGen import ClientDataset
from .Models import Model, predict
from .Utility import DataWriteError, EmptyDataError, ceil_fraction

TAIL_FRACTION: Final[float] = 0.05
FAIRNESS_HEADER: Final[Tuple[str, ...]] = ("round", "mean", "std", "variance", "worst5", "best5")
CLIENT_HEADER: Final[Tuple[str, ...]] = ("round", "client_id", "acc")


@dataclasses.dataclass(frozen=True)
class FairnessReport:
    """
    全クライアントのテスト精度の統計量
    """
    per_client_acc: Tuple[float, ...]
    mean: float
    std: float  # 母標準偏差
    variance: float  # 母分散
    worst5: float  # 精度の低い⌈0.05K⌉クライアントの平均
    best5: float  # 精度の高い⌈0.05K⌉クライアントの平均
    round: int

    @property
    def std_points(self) -> float:
        """
        パーセントポイント単位の標準偏差
        """
        return 100.0 * self.std

    def row(self) -> List[str]:
        return [str(self.round)] + [repr(value) for value in
                                    (self.mean, self.std, self.variance, self.worst5, self.best5)]


def evaluate_clients(model: Model, datasets: Sequence[ClientDataset]) -> List[float]:
    """
    クライアントごとのテスト精度(正答率)
    Args:
        model(Model): 分類器
        datasets(Sequence[ClientDataset]): クライアントのデータセット

    Returns:
        クライアントID順の精度のリスト(List[float])

    Raises:
        EmptyDataError: テストデータが空のクライアントがある
    """
    accuracies: List[float] = []
    for dataset in datasets:
        if dataset.test_labels.size == 0:
            raise EmptyDataError(f"client {dataset.client_id} has an empty test set (module {__name__}).")
        predicted: np.ndarray = predict(model, dataset.test_features)
        accuracies.append(float(np.mean(predicted == dataset.test_labels)))
    return accuracies


def fairness_report(accs: Sequence[float], round_index: int) -> FairnessReport:
    """
    精度のリストから公平性の統計量を作る
    Args:
        accs(Sequence[float]): クライアントごとの精度
        round_index(int): ラウンド番号

    Returns:
        統計量(FairnessReport)

    Raises:
        EmptyDataError: 空のリスト
    """
    if len(accs) == 0:
        raise EmptyDataError(f"fairness report of no clients (module {__name__}).")
    ordered: np.ndarray = np.sort(np.asarray(accs, dtype=np.float64))
    tail: int = max(1, ceil_fraction(TAIL_FRACTION, ordered.size))
    variance: float = float(ordered.var())
    return FairnessReport(per_client_acc=tuple(float(acc) for acc in accs), mean=float(ordered.mean()),
                          std=float(np.sqrt(variance)), variance=variance,
                          worst5=float(ordered[:tail].mean()), best5=float(ordered[-tail:].mean()),
                          round=round_index)


def _append_rows(path: p.Path, header: Sequence[str], rows: Iterable[Sequence[str]]) -> None:
    try:
        new_file: bool = not path.exists() or path.stat().st_size == 0
        with open(path, "a", newline="") as f:
            writer = csv.writer(f)
            if new_file:
                writer.writerow(header)
            writer.writerows(rows)
    except OSError:
        raise DataWriteError(f"CSV write failed: {path} (module {__name__}).")


def append_fairness_rows(path: p.Path, reports: Iterable[FairnessReport]) -> None:
    """
    round, mean, std, variance, worst5, best5 の行を追記する。新規ファイルにはヘッダを付ける。
    """
    _append_rows(path, FAIRNESS_HEADER, [report.row() for report in reports])


def append_client_rows(path: p.Path, reports: Iterable[FairnessReport]) -> None:
    """
    round, client_id, acc の行を追記する
    """
    _append_rows(path, CLIENT_HEADER, [[str(report.round), str(client_id), repr(acc)]
                                       for report in reports
                                       for client_id, acc in enumerate(report.per_client_acc)])
