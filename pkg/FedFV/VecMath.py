"""
VecMathモジュール

勾配射影のための平坦なベクトル演算。
ParamVectorは1次元のfloat64のnumpy配列。
"""
from __future__ import annotations

__all__ = ["ParamVector", "as_param_vector", "dot", "norm", "cosine", "conflicts",
           "project_to_normal_plane", "rescale_to"]

import math
from typing import Iterable, Union

import numpy as np

from .Utility import DimensionError, NonFiniteError, UsageError, ZeroNormError

ParamVector = np.ndarray


def as_param_vector(values: Union[ParamVector, Iterable[float]]) -> ParamVector:
    """
    値を有限なfloat64ベクトルにする
    Args:
        values(Union[numpy.ndarray, Iterable[float]]): 成分

    Returns:
        ベクトル(ParamVector)

    Raises:
        UsageError: 1次元でないか空
        NonFiniteError: 成分にNaNかInfがある
    """
    vector: np.ndarray = np.asarray(values, dtype=np.float64)
    if vector.ndim != 1 or vector.size == 0:
        raise UsageError(f"a parameter vector must be 1-D and nonempty, got shape {vector.shape}"
                         f" (module {__name__}).")
    if not np.all(np.isfinite(vector)):
        raise NonFiniteError(f"non-finite component in a parameter vector (module {__name__}).")
    return vector


def _pair(a: Union[ParamVector, Iterable[float]], b: Union[ParamVector, Iterable[float]]):
    va: ParamVector = as_param_vector(a)
    vb: ParamVector = as_param_vector(b)
    if va.shape != vb.shape:
        raise DimensionError(f"dimension mismatch: {va.size} vs {vb.size} (module {__name__}).")
    return va, vb


def dot(a: ParamVector, b: ParamVector) -> float:
    """
    内積
    Args:
        a(ParamVector): ベクトル
        b(ParamVector): 同じ次元のベクトル

    Returns:
        a_i * b_i の和(float)

    Raises:
        DimensionError: 次元の不一致
    """
    va, vb = _pair(a, b)
    return float(np.dot(va, vb))


def norm(a: ParamVector) -> float:
    """
    ユークリッドノルム
    Args:
        a(ParamVector): ベクトル

    Returns:
        sqrt(a . a)(float)
    """
    return float(np.linalg.norm(as_param_vector(a)))


def cosine(a: ParamVector, b: ParamVector) -> float:
    """
    cos類似度。丸め誤差で範囲を出ないよう[-1, 1]に切り詰める
    Args:
        a(ParamVector): 0でないベクトル
        b(ParamVector): 同じ次元の0でないベクトル

    Returns:
        aとbのなす角のcos(float)

    Raises:
        DimensionError: 次元の不一致
        ZeroNormError: aかbのノルムが0
    """
    va, vb = _pair(a, b)
    norm_a: float = float(np.linalg.norm(va))
    norm_b: float = float(np.linalg.norm(vb))
    if norm_a == 0.0 or norm_b == 0.0:
        raise ZeroNormError(f"cosine of a zero-length vector (module {__name__}).")
    return min(1.0, max(-1.0, float(np.dot(va, vb)) / (norm_a * norm_b)))


def conflicts(a: ParamVector, b: ParamVector) -> bool:
    """
    勾配の衝突。内積が厳密に負のとき。内積0は衝突ではない
    Args:
        a(ParamVector): ベクトル
        b(ParamVector): 同じ次元のベクトル

    Returns:
        a . b < 0 ならTrue(bool)
    """
    return dot(a, b) < 0.0


def project_to_normal_plane(v: ParamVector, target: ParamVector) -> ParamVector:
    """
    vからtarget方向の成分を取り除く
    Args:
        v(ParamVector): 射影するベクトル
        target(ParamVector): 平面の法線(0でない)

    Returns:
        v - (v . target / |target|^2) target(ParamVector)

    Raises:
        DimensionError: 次元の不一致
        ZeroNormError: targetのノルムが0
    """
    vv, vt = _pair(v, target)
    squared: float = float(np.dot(vt, vt))
    if squared == 0.0:
        raise ZeroNormError(f"projection onto the normal plane of a zero vector (module {__name__}).")
    return vv - (float(np.dot(vv, vt)) / squared) * vt


def rescale_to(v: ParamVector, length: float) -> ParamVector:
    """
    向きを保ったままvを指定の長さにする
    Args:
        v(ParamVector): ベクトル
        length(float): 目標の長さ(非負)

    Returns:
        長さを変えたベクトル(ParamVector)。lengthが0なら零ベクトル

    Raises:
        UsageError: 負または有限でない長さ
        ZeroNormError: length > 0 なのにvのノルムが0
    """
    vector: ParamVector = as_param_vector(v)
    if not math.isfinite(length) or length < 0.0:
        raise UsageError(f"target length must be finite and non-negative, got {length}"
                         f" (module {__name__}).")
    if length == 0.0:
        return np.zeros_like(vector)
    current: float = float(np.linalg.norm(vector))
    if current == 0.0:
        raise ZeroNormError(f"cannot rescale a zero vector to length {length} (module {__name__}).")
    return vector * (length / current)
