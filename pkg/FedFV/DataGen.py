"""
DataGenモジュール

クライアントごとのデータセットを作る。合成ガウスクラスタ、クラス順に並べてシャードに切る
non-IID分割、ラベルグループ分割、IDX画像の読み込み、行単位のテキストダンプを扱う。

テキストダンプの形式: 1行1サンプルで、整数ラベルに続けて特徴量の値を
半角スペース1つ区切りで並べる。
"""
from __future__ import annotations

__all__ = ["ClientDataset", "FederationSpec", "synth_classification", "class_means",
           "shard_partition", "group_partition", "split_train_test", "load_idx",
           "dump_examples", "read_examples", "dump_datasets"]

import dataclasses
import logging
import pathlib as p
import struct
from typing import Iterable, List, Sequence, Tuple

import numpy as np

from .Utility import DATA_STREAM, SHARD_STREAM, SPLIT_STREAM, DataReadError, DataWriteError, \
    EmptyDataError, IdxFormatError, UsageError, seeded_rng

logger = logging.getLogger(__name__)

IDX_IMAGES_MAGIC: int = 0x00000803
IDX_LABELS_MAGIC: int = 0x00000801
TRAIN_FRACTION: float = 0.8

Examples = Tuple[np.ndarray, np.ndarray]


@dataclasses.dataclass(frozen=True, eq=False)
class ClientDataset:
    """
    1クライアントのローカルデータD_k。訓練とテストに80/20で分ける
    """
    client_id: int
    train_features: np.ndarray  # (n_k, feature_dim)
    train_labels: np.ndarray  # (n_k,)
    test_features: np.ndarray
    test_labels: np.ndarray

    @property
    def n_k(self) -> int:
        return int(self.train_labels.shape[0])

    @property
    def size(self) -> int:
        return self.n_k + int(self.test_labels.shape[0])

    @property
    def classes(self) -> Sequence[int]:
        """
        クライアントが持つラベルの種類(訓練とテストの両方)
        """
        return sorted(set(self.train_labels.tolist()) | set(self.test_labels.tolist()))


@dataclasses.dataclass(frozen=True)
class FederationSpec:
    """
    シャード分割フェデレーションの形
    """
    num_clients: int  # K
    shards_per_client: int
    num_classes: int
    examples_per_class: int
    feature_dim: int
    seed: int

    def __post_init__(self):
        for field in dataclasses.fields(self):
            value = getattr(self, field.name)
            if field.name == "seed":
                if value < 0:
                    raise UsageError(f"seed must be non-negative, got {value} (module {__name__}).")
            elif value <= 0:
                raise UsageError(f"{field.name} must be positive, got {value} (module {__name__}).")

    @property
    def total_shards(self) -> int:
        return self.num_clients * self.shards_per_client


def class_means(num_classes: int, feature_dim: int, rng: np.random.Generator) -> np.ndarray:
    """
    正単体の頂点に置いたノルム1のクラス中心を、ランダムに回転して特徴空間に埋め込む。
    特徴空間が単体を収めるには小さいとき(feature_dim < num_classes - 1)はランダムな単位ベクトルにする
    Args:
        num_classes(int): クラス数C
        feature_dim(int): 特徴量の次元
        rng(numpy.random.Generator): 乱数生成器

    Returns:
        クラス中心(numpy.ndarray, 形は(C, feature_dim))
    """
    if num_classes == 1 or feature_dim < num_classes - 1:
        if num_classes > 1:
            logger.warning("feature_dim %d cannot hold a %d-class simplex; using random centers",
                           feature_dim, num_classes)
        raw: np.ndarray = rng.standard_normal((num_classes, feature_dim))
        return raw / np.linalg.norm(raw, axis=1, keepdims=True)
    centered: np.ndarray = np.eye(num_classes) - 1.0 / num_classes
    basis, _, _ = np.linalg.svd(centered)
    simplex: np.ndarray = centered @ basis[:, :num_classes - 1]
    rotation, _ = np.linalg.qr(rng.standard_normal((feature_dim, num_classes - 1)))
    means: np.ndarray = simplex @ rotation.T
    return means / np.linalg.norm(means, axis=1, keepdims=True)


def synth_classification(num_classes: int, examples_per_class: int, feature_dim: int,
                         cluster_spread: float, seed: int) -> Examples:
    """
    等距離の単位中心の周りの等方ガウスクラスタ。クラス順に並ぶ
    Args:
        num_classes(int): クラス数
        examples_per_class(int): クラスあたりのサンプル数
        feature_dim(int): 特徴量の次元
        cluster_spread(float): 各座標の標準偏差
        seed(int): 乱数シード

    Returns:
        (特徴量 (N, feature_dim), ラベル (N,))。ラベルは昇順

    Raises:
        UsageError: 正でない個数か負の広がり
    """
    if num_classes <= 0 or examples_per_class <= 0 or feature_dim <= 0:
        raise UsageError(f"class count, examples per class and feature_dim must be positive"
                         f" (module {__name__}).")
    if cluster_spread < 0.0:
        raise UsageError(f"cluster_spread must be non-negative, got {cluster_spread}"
                         f" (module {__name__}).")
    rng: np.random.Generator = seeded_rng(seed, DATA_STREAM)
    means: np.ndarray = class_means(num_classes, feature_dim, rng)
    labels: np.ndarray = np.repeat(np.arange(num_classes, dtype=np.int64), examples_per_class)
    noise: np.ndarray = rng.standard_normal((labels.size, feature_dim)) * cluster_spread
    return means[labels] + noise, labels


def split_train_test(client_id: int, features: np.ndarray, labels: np.ndarray,
                     seed: int) -> ClientDataset:
    """
    クライアントのサンプルを並べ替え、訓練とテストに80/20で分ける。
    2つ以上あればどちらにも最低1つ残す
    Args:
        client_id(int): クライアントID
        features(numpy.ndarray): ローカルの特徴量
        labels(numpy.ndarray): ローカルのラベル
        seed(int): 乱数シード

    Returns:
        クライアントのデータセット(ClientDataset)

    Raises:
        EmptyDataError: サンプルがない
    """
    n: int = int(labels.shape[0])
    if n == 0:
        raise EmptyDataError(f"client {client_id} received no examples (module {__name__}).")
    order: np.ndarray = seeded_rng(seed, SPLIT_STREAM, client_id).permutation(n)
    n_train: int = int(np.floor(TRAIN_FRACTION * n + 0.5))
    if n >= 2:
        n_train = min(max(n_train, 1), n - 1)
    train, test = order[:n_train], order[n_train:]
    return ClientDataset(client_id=client_id,
                         train_features=features[train], train_labels=labels[train],
                         test_features=features[test], test_labels=labels[test])


def shard_partition(features: np.ndarray, labels: np.ndarray,
                    spec: FederationSpec) -> Sequence[ClientDataset]:
    """
    クラス順に並べて K * shards_per_client 個の等しい連続シャードに切り、シード付きの1つの置換で配る。
    クライアントkは置換の [k * s, (k + 1) * s) 番目を受け取る。シャード数の倍数を超える分は
    並べた順の末尾から捨てる
    Args:
        features(numpy.ndarray): (N, feature_dim)
        labels(numpy.ndarray): (N,)
        spec(FederationSpec): フェデレーションの形

    Returns:
        クライアントID順のデータセット(Sequence[ClientDataset])

    Raises:
        UsageError: サンプルがシャードより少ないか、特徴量とラベルの数が合わない
    """
    n: int = int(labels.shape[0])
    if features.shape[0] != n:
        raise UsageError(f"{features.shape[0]} feature rows for {n} labels (module {__name__}).")
    total: int = spec.total_shards
    if n < total:
        raise UsageError(f"{n} examples cannot fill {total} shards (module {__name__}).")
    shard_size: int = n // total
    usable: int = shard_size * total
    if usable < n:
        logger.warning("trimming %d examples so that %d shards are equal", n - usable, total)
    order: np.ndarray = np.argsort(labels, kind="stable")[:usable]
    shards: np.ndarray = order.reshape(total, shard_size)
    permutation: np.ndarray = seeded_rng(spec.seed, SHARD_STREAM).permutation(total)
    datasets: List[ClientDataset] = []
    for client_id in range(spec.num_clients):
        picked = permutation[client_id * spec.shards_per_client:(client_id + 1) * spec.shards_per_client]
        indices: np.ndarray = shards[picked].reshape(-1)
        datasets.append(split_train_test(client_id, features[indices], labels[indices], spec.seed))
    return datasets


def group_partition(features: np.ndarray, labels: np.ndarray,
                    groups: Sequence[Sequence[int]], seed: int) -> Sequence[ClientDataset]:
    """
    ラベルグループのフェデレーション。クライアントkはgroups[k]のクラスのサンプルを持つ。
    複数のクライアントに挙がったクラスはそれらに均等に分ける
    Args:
        features(numpy.ndarray): (N, feature_dim)
        labels(numpy.ndarray): (N,)
        groups(Sequence[Sequence[int]]): 各クライアントのクラス
        seed(int): 乱数シード

    Returns:
        クライアントのデータセット(Sequence[ClientDataset])

    Raises:
        UsageError: グループが空か、クラスを持たないクライアントがある
    """
    if len(groups) == 0 or any(len(group) == 0 for group in groups):
        raise UsageError(f"every client needs at least one class (module {__name__}).")
    owners = {}
    for client_id, group in enumerate(groups):
        for label in group:
            owners.setdefault(int(label), []).append(client_id)
    picked: List[List[np.ndarray]] = [[] for _ in groups]
    for label, clients in owners.items():
        members: np.ndarray = np.flatnonzero(labels == label)
        for client_id, part in zip(clients, np.array_split(members, len(clients))):
            picked[client_id].append(part)
    return [split_train_test(client_id, features[np.concatenate(parts)], labels[np.concatenate(parts)], seed)
            for client_id, parts in enumerate(picked)]


def _read_bytes(path: p.Path) -> bytes:
    try:
        with open(path, "rb") as f:
            return f.read()
    except OSError:
        raise DataReadError(f"data readout failed: {path} (module {__name__}).")


def load_idx(images_path: p.Path, labels_path: p.Path) -> Examples:
    """
    IDX画像ファイルと対応するIDXラベルファイルを読む(ビッグエンディアンのヘッダ、符号なしバイトの本体)
    Args:
        images_path(pathlib.Path): 画像ファイル(マジック 0x00000803)
        labels_path(pathlib.Path): ラベルファイル(マジック 0x00000801)

    Returns:
        ([0, 1]に縮めた特徴量 (N, rows * cols), ラベル (N,))

    Raises:
        DataReadError: ファイルがない
        IdxFormatError: マジック不正、本体の途切れ、個数の不一致
    """
    images: bytes = _read_bytes(p.Path(images_path))
    labels: bytes = _read_bytes(p.Path(labels_path))
    if len(images) < 16 or struct.unpack(">I", images[:4])[0] != IDX_IMAGES_MAGIC:
        raise IdxFormatError(f"bad magic in IDX image file {images_path} (module {__name__}).")
    if len(labels) < 8 or struct.unpack(">I", labels[:4])[0] != IDX_LABELS_MAGIC:
        raise IdxFormatError(f"bad magic in IDX label file {labels_path} (module {__name__}).")
    _, num_images, rows, cols = struct.unpack(">IIII", images[:16])
    _, num_labels = struct.unpack(">II", labels[:8])
    if num_images != num_labels:
        raise IdxFormatError(f"count mismatch: {num_images} images, {num_labels} labels"
                             f" (module {__name__}).")
    pixels: int = num_images * rows * cols
    if len(images) - 16 < pixels:
        raise IdxFormatError(f"truncated IDX image payload in {images_path} (module {__name__}).")
    if len(labels) - 8 < num_labels:
        raise IdxFormatError(f"truncated IDX label payload in {labels_path} (module {__name__}).")
    features: np.ndarray = np.frombuffer(images, dtype=np.uint8, count=pixels, offset=16)\
        .reshape(num_images, rows * cols).astype(np.float64) / 255.0
    label_array: np.ndarray = np.frombuffer(labels, dtype=np.uint8, count=num_labels, offset=8)\
        .astype(np.int64)
    return features, label_array


def dump_examples(features: np.ndarray, labels: np.ndarray, path: p.Path) -> None:
    """
    サンプルをテキストダンプ形式で書き出す
    Args:
        features(numpy.ndarray): (N, feature_dim)
        labels(numpy.ndarray): (N,)
        path(pathlib.Path): 出力ファイル

    Raises:
        DataWriteError: 書き込み失敗
    """
    try:
        with open(path, "w") as f:
            for row, label in zip(features, labels):
                f.write(" ".join([str(int(label))] + [repr(float(x)) for x in row]) + "\n")
    except OSError:
        raise DataWriteError(f"data write failed: {path} (module {__name__}).")


def read_examples(path: p.Path) -> Examples:
    """
    テキストダンプを読み出す
    Args:
        path(pathlib.Path): ダンプファイル

    Returns:
        (特徴量, ラベル)(Tuple[numpy.ndarray, numpy.ndarray])

    Raises:
        DataReadError: ファイルがないか不正な行
    """
    try:
        with open(path, "r") as f:
            rows: List[List[str]] = [line.split() for line in f if line.strip()]
    except OSError:
        raise DataReadError(f"data readout failed: {path} (module {__name__}).")
    try:
        labels: np.ndarray = np.array([int(row[0]) for row in rows], dtype=np.int64)
        features: np.ndarray = np.array([[float(x) for x in row[1:]] for row in rows], dtype=np.float64)
    except (ValueError, IndexError):
        raise DataReadError(f"malformed example line in {path} (module {__name__}).")
    return features.reshape(len(rows), -1), labels


def dump_datasets(datasets: Iterable[ClientDataset], directory: p.Path) -> None:
    """
    各クライアントの訓練とテストを client_<id>_train.txt / client_<id>_test.txt に書き出す
    Args:
        datasets(Iterable[ClientDataset]): クライアントのデータセット
        directory(pathlib.Path): 出力ディレクトリ(なければ作る)

    Raises:
        DataWriteError: ディレクトリを作れないか書き込み失敗
    """
    directory = p.Path(directory)
    try:
        directory.mkdir(parents=True, exist_ok=True)
    except OSError:
        raise DataWriteError(f"cannot create {directory} (module {__name__}).")
    for dataset in datasets:
        dump_examples(dataset.train_features, dataset.train_labels,
                      directory / f"client_{dataset.client_id}_train.txt")
        dump_examples(dataset.test_features, dataset.test_labels,
                      directory / f"client_{dataset.client_id}_test.txt")
