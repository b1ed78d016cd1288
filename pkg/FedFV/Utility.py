"""
Utilityモジュール

パッケージ共通の例外クラスと各種ユーティリティ関数
"""
from __future__ import annotations

import math
from typing import Sequence, Tuple

import numpy as np

# 乱数ストリームの識別子。(seed, stream, ...)で独立な乱数列を作る。
SAMPLING_STREAM: int = 1
DROPOUT_STREAM: int = 2
ORDER_STREAM: int = 3
INIT_STREAM: int = 4
SPLIT_STREAM: int = 5
DATA_STREAM: int = 6
SHARD_STREAM: int = 7
TRAIN_STREAM: int = 8
THEORY_STREAM: int = 9


class Error(Exception):
    """
    パッケージの例外基本クラス
    """
    pass


class DataReadError(Error):
    """
    データ読み出し失敗の例外クラス
    """
    pass


class DataWriteError(Error):
    """
    データ書き込み失敗の例外クラス
    """
    pass


class UsageError(Error):
    """
    関数の使用法が誤っているエラー
    """
    pass


class ConfigError(Error):
    """
    設定値が不正なエラー。メッセージに設定項目のパス(section.key)を含む。
    """
    pass


class DimensionError(UsageError):
    """
    ベクトルの次元が一致しないエラー
    """
    pass


class ZeroNormError(UsageError):
    """
    ノルム0のベクトルに対して方向が必要な演算をしたエラー
    """
    pass


class NonFiniteError(UsageError):
    """
    NaN/Infを含むベクトルが演算に入ったエラー
    """
    pass


class EmptyDataError(UsageError):
    """
    空のバッチ・データセット・更新集合のエラー
    """
    pass


class IdxFormatError(DataReadError):
    """
    IDXファイルの形式が不正なエラー
    """
    pass


class SolverError(Error):
    """
    反復解法が上限回数内に収束しなかったエラー
    """
    pass


def seeded_rng(*keys: int) -> np.random.Generator:
    """
    整数キーの組から決定的な乱数生成器を作る。
    同じキーの組からは常に同じ乱数列が得られる。
    Args:
        *keys(int): 非負整数のキー(seed, round, client_idなど)

    Returns:
        乱数生成器(numpy.random.Generator)

    Raises:
        UsageError: 負のキー
    """
    if any(key < 0 for key in keys):
        raise UsageError(f"random stream keys must be non-negative: {keys} (module {__name__}).")
    return np.random.default_rng(np.random.SeedSequence([int(key) for key in keys]))


def mean_and_std(values: Sequence[float]) -> Tuple[float, float]:
    """
    平均と母標準偏差
    Args:
        values(Sequence[float]): 値のリスト

    Returns:
        (平均, 標準偏差)

    Raises:
        EmptyDataError: 空のリスト
    """
    if len(values) == 0:
        raise EmptyDataError(f"mean of an empty sequence (module {__name__}).")
    array: np.ndarray = np.asarray(values, dtype=np.float64)
    return float(array.mean()), float(array.std())


def ceil_fraction(fraction: float, count: int) -> int:
    """
    count * fraction の切り上げ。丸め誤差で整数を超えないように補正する。
    Args:
        fraction(float): 割合
        count(int): 個数

    Returns:
        切り上げた個数(int)
    """
    return int(math.ceil(fraction * count - 1.e-9))


def floor_fraction(fraction: float, count: int) -> int:
    """
    count * fraction の切り捨て。丸め誤差で整数を下回らないように補正する。
    Args:
        fraction(float): 割合
        count(int): 個数

    Returns:
        切り捨てた個数(int)
    """
    return int(math.floor(fraction * count + 1.e-9))
