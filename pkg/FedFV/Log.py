"""
Logモジュール

ラウンドログと理論チェック結果を1行1レコードのJSONとして読み書きする。
各行は "record" キーでレコード種別を自己記述する。
"""
from __future__ import annotations

__all__ = ["RoundRecord", "BoundRecord", "record2line", "line2record", "append_records",
           "read_records", "read_round_log"]

import dataclasses
import json
import pathlib as p
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

from .Utility import DataReadError, DataWriteError


@dataclasses.dataclass(frozen=True)
class RoundRecord:
    """
    1ラウンドのサーバ側の記録
    """
    round: int  # ラウンド番号t
    algorithm: str  # fedavg / fedfv
    selected: Tuple[int, ...]  # サンプルされたクライアント
    survivors: Tuple[int, ...]  # ドロップアウト後に残ったクライアント
    losses: Dict[int, float]  # クライアントごとの訓練損失 l_k^t
    conflict_pairs: int  # 勾配が衝突するクライアント対の数
    internal_projections: int  # 内部衝突の射影回数
    external_projections: int  # 外部衝突の射影回数
    cosine_internal: Optional[float]  # 単純平均と内部衝突緩和後の更新のcos
    cosine_final: Optional[float]  # 単純平均と最終更新のcos
    update_norm: float  # 最終更新のノルム
    mean_norm: float  # 単純平均のノルム
    skipped: bool  # 更新がノルム0でモデルを更新しなかった


@dataclasses.dataclass(frozen=True)
class BoundRecord:
    """
    理論チェック1件の結果
    """
    check: str  # theorem1 / theorem2 / theorem3 / theorem4
    ensemble_seed: int
    m: int
    d: int
    k: Optional[int]
    bound: Optional[float]
    observed: Optional[float]
    status: str  # PASS / SKIP / FAIL


Record = Union[RoundRecord, BoundRecord]
_RECORD_TYPES: Mapping[str, type] = {"round": RoundRecord, "bound": BoundRecord}
_RECORD_NAMES: Mapping[type, str] = {record_type: name for name, record_type in _RECORD_TYPES.items()}


def record2line(record: Record) -> str:
    """
    レコードをJSONの1行にする
    Args:
        record(Record): レコード

    Returns:
        改行なしのJSON文字列(str)
    """
    body: Dict[str, Any] = {"record": _RECORD_NAMES[type(record)]}
    body.update(dataclasses.asdict(record))
    if isinstance(record, RoundRecord):
        body["losses"] = {str(client_id): loss for client_id, loss in record.losses.items()}
    return json.dumps(body, sort_keys=True)


def line2record(line: str) -> Record:
    """
    JSONの1行をレコードに戻す
    Args:
        line(str): JSON文字列

    Returns:
        レコード(Record)

    Raises:
        DataReadError: 不正な行
    """
    try:
        body: Dict[str, Any] = json.loads(line)
        record_type: type = _RECORD_TYPES[body.pop("record")]
        if record_type is RoundRecord:
            body["selected"] = tuple(body["selected"])
            body["survivors"] = tuple(body["survivors"])
            body["losses"] = {int(client_id): loss for client_id, loss in body["losses"].items()}
        return record_type(**body)
    except (ValueError, KeyError, TypeError):
        raise DataReadError(f"malformed log line: {line.strip()[:80]} (module {__name__}).")


def append_records(path: p.Path, records: Iterable[Record]) -> None:
    """
    レコードをファイルに追記する
    Args:
        path(pathlib.Path): ログファイル
        records(Iterable[Record]): レコード

    Raises:
        DataWriteError: 書き込み失敗
    """
    try:
        with open(path, "a") as f:
            for record in records:
                f.write(record2line(record) + "\n")
    except OSError:
        raise DataWriteError(f"log write failed: {path} (module {__name__}).")


def read_records(path: p.Path) -> Sequence[Record]:
    """
    ログファイルを読み出す
    Args:
        path(pathlib.Path): ログファイル

    Returns:
        レコードのリスト(Sequence[Record])

    Raises:
        DataReadError: 読み出し失敗
    """
    try:
        with open(path, "r") as f:
            return [line2record(line) for line in f if line.strip()]
    except OSError:
        raise DataReadError(f"log readout failed: {path} (module {__name__}).")


def read_round_log(path: p.Path) -> List[RoundRecord]:
    return [record for record in read_records(path) if isinstance(record, RoundRecord)]
