"""
Modelsモジュール

勾配を解析的に求められる小さな分類器と、受け取ったモデルから
クライアントの疑似勾配を作るローカルSGD。

パラメータの並び(固定。全モジュール共通):
    入力側から出力側への層の順に、形 (fan_in, fan_out) の重み行列を
    行優先で平坦にしたもの、続いてバイアス (fan_out,)。
    softmax-regression: [W (d, C), b (C)]
    mlp2:               [W1 (d, h), b1 (h), W2 (h, h), b2 (h), W3 (h, C), b3 (C)]
mlp2は2つの隠れ層を持ち、隠れ層の活性化はロジスティックシグモイド。
"""
from __future__ import annotations

__all__ = ["SOFTMAX_REGRESSION", "MLP2", "MODEL_KINDS", "FULL_BATCH", "Model", "LocalTrainConfig",
           "ClientUpdate", "layer_shapes", "parameter_count", "init_model", "forward_loss",
           "gradient", "probabilities", "predict", "client_rng", "local_train"]

import dataclasses
from typing import Final, List, Optional, Sequence, Tuple, Union

import numpy as np

from .DataGen import ClientDataset
from .Utility import INIT_STREAM, TRAIN_STREAM, DimensionError, EmptyDataError, UsageError, seeded_rng
from .VecMath import ParamVector, as_param_vector

SOFTMAX_REGRESSION: Final[str] = "softmax-regression"
MLP2: Final[str] = "mlp2"
MODEL_KINDS: Final[Tuple[str, ...]] = (SOFTMAX_REGRESSION, MLP2)
FULL_BATCH: Final[str] = "full"
INIT_RANGE: Final[float] = 0.05


def layer_shapes(kind: str, input_dim: int, num_classes: int,
                 hidden_dim: Optional[int] = None) -> Sequence[Tuple[int, int]]:
    """
    各層の (fan_in, fan_out)
    Args:
        kind(str): モデルの種類
        input_dim(int): 特徴量の次元
        num_classes(int): クラス数
        hidden_dim(Optional[int]): 隠れ層の幅(mlp2のみ)

    Returns:
        層の形(Sequence[Tuple[int, int]])

    Raises:
        UsageError: 未知の種類か正でない大きさ
    """
    if input_dim <= 0 or num_classes <= 0:
        raise UsageError(f"input_dim and num_classes must be positive (module {__name__}).")
    if kind == SOFTMAX_REGRESSION:
        return [(input_dim, num_classes)]
    if kind == MLP2:
        if hidden_dim is None or hidden_dim <= 0:
            raise UsageError(f"mlp2 needs a positive hidden_dim, got {hidden_dim} (module {__name__}).")
        return [(input_dim, hidden_dim), (hidden_dim, hidden_dim), (hidden_dim, num_classes)]
    raise UsageError(f"unknown model kind {kind}; expected one of {MODEL_KINDS} (module {__name__}).")


def parameter_count(kind: str, input_dim: int, num_classes: int, hidden_dim: Optional[int] = None) -> int:
    return sum(fan_in * fan_out + fan_out
               for fan_in, fan_out in layer_shapes(kind, input_dim, num_classes, hidden_dim))


@dataclasses.dataclass(frozen=True, eq=False)
class Model:
    """
    分類器θ。paramsはモジュール冒頭の並びに従う
    """
    kind: str
    input_dim: int
    num_classes: int
    params: ParamVector
    hidden_dim: Optional[int] = None

    def __post_init__(self):
        expected: int = parameter_count(self.kind, self.input_dim, self.num_classes, self.hidden_dim)
        vector: ParamVector = as_param_vector(self.params)
        if vector.size != expected:
            raise DimensionError(f"{self.kind} with dims ({self.input_dim}, {self.hidden_dim},"
                                 f" {self.num_classes}) needs {expected} parameters, got {vector.size}"
                                 f" (module {__name__}).")
        object.__setattr__(self, "params", vector)

    @property
    def dim(self) -> int:
        return int(self.params.size)

    def with_params(self, params: ParamVector) -> Model:
        """
        構造はそのままでパラメータを差し替える
        """
        return dataclasses.replace(self, params=params)

    def layers(self) -> List[Tuple[np.ndarray, np.ndarray]]:
        """
        paramsへの (W, b) のビュー(並び順)
        """
        views: List[Tuple[np.ndarray, np.ndarray]] = []
        offset: int = 0
        for fan_in, fan_out in layer_shapes(self.kind, self.input_dim, self.num_classes, self.hidden_dim):
            weights = self.params[offset:offset + fan_in * fan_out].reshape(fan_in, fan_out)
            offset += fan_in * fan_out
            bias = self.params[offset:offset + fan_out]
            offset += fan_out
            views.append((weights, bias))
        return views


@dataclasses.dataclass(frozen=True)
class LocalTrainConfig:
    """
    ローカルSGDの設定。エポック数E、バッチサイズB(またはFULL_BATCH)、学習率η
    """
    epochs: int
    batch_size: Union[int, str]
    learning_rate: float
    shuffle_seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise UsageError(f"epochs must be at least 1, got {self.epochs} (module {__name__}).")
        if self.batch_size != FULL_BATCH and (not isinstance(self.batch_size, int) or self.batch_size < 1):
            raise UsageError(f"batch_size must be a positive integer or '{FULL_BATCH}',"
                             f" got {self.batch_size} (module {__name__}).")
        # 0は動かない退化ケースとして受け付ける。設定ファイルでは > 0 が必要
        if self.learning_rate < 0.0:
            raise UsageError(f"learning_rate must be non-negative, got {self.learning_rate}"
                             f" (module {__name__}).")


@dataclasses.dataclass(frozen=True, eq=False)
class ClientUpdate:
    """
    1ラウンドでクライアントがサーバに返すもの
    """
    client_id: int
    grad: ParamVector  # 疑似勾配 θ^t - θ_k^t
    loss: float  # 受け取ったθ^tでの訓練損失
    round: int


def init_model(kind: str, input_dim: int, num_classes: int, seed: int,
               hidden_dim: Optional[int] = None) -> Model:
    """
    重みを[-0.05, 0.05]の一様分布で初期化したモデル
    Args:
        kind(str): モデルの種類
        input_dim(int): 特徴量の次元
        num_classes(int): クラス数
        seed(int): 実行のシード
        hidden_dim(Optional[int]): 隠れ層の幅(mlp2のみ)

    Returns:
        モデル(Model)
    """
    count: int = parameter_count(kind, input_dim, num_classes, hidden_dim)
    params: np.ndarray = seeded_rng(seed, INIT_STREAM).uniform(-INIT_RANGE, INIT_RANGE, size=count)
    return Model(kind=kind, input_dim=input_dim, num_classes=num_classes, params=params,
                 hidden_dim=hidden_dim)


def _check_batch(model: Model, features: np.ndarray, labels: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    x: np.ndarray = np.asarray(features, dtype=np.float64)
    y: np.ndarray = np.asarray(labels, dtype=np.int64)
    if x.ndim != 2 or y.ndim != 1 or x.shape[0] != y.shape[0]:
        raise DimensionError(f"features {x.shape} and labels {y.shape} do not describe one batch"
                             f" (module {__name__}).")
    if y.shape[0] == 0:
        raise EmptyDataError(f"empty batch (module {__name__}).")
    if x.shape[1] != model.input_dim:
        raise DimensionError(f"feature width {x.shape[1]} != input_dim {model.input_dim}"
                             f" (module {__name__}).")
    if y.min() < 0 or y.max() >= model.num_classes:
        raise UsageError(f"labels outside [0, {model.num_classes}) (module {__name__}).")
    return x, y


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _forward(model: Model, x: np.ndarray) -> Tuple[List[np.ndarray], np.ndarray]:
    """
    隠れ層の活性(先頭は入力)と出力のロジット
    """
    activations: List[np.ndarray] = [x]
    layers = model.layers()
    for weights, bias in layers[:-1]:
        activations.append(_sigmoid(activations[-1] @ weights + bias))
    weights, bias = layers[-1]
    return activations, activations[-1] @ weights + bias


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted: np.ndarray = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def probabilities(model: Model, features: np.ndarray) -> np.ndarray:
    """
    featuresの各行の予測分布
    """
    x: np.ndarray = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.input_dim:
        raise DimensionError(f"features of shape {x.shape} for input_dim {model.input_dim}"
                             f" (module {__name__}).")
    _, logits = _forward(model, x)
    return np.exp(_log_softmax(logits))


def forward_loss(model: Model, features: np.ndarray, labels: np.ndarray) -> float:
    """
    バッチの平均交差エントロピー
    Args:
        model(Model): 分類器
        features(numpy.ndarray): (n, input_dim)
        labels(numpy.ndarray): (n,)の整数ラベル

    Returns:
        損失(float)

    Raises:
        DimensionError: 形の不一致
        EmptyDataError: 空のバッチ
    """
    x, y = _check_batch(model, features, labels)
    _, logits = _forward(model, x)
    return float(-_log_softmax(logits)[np.arange(y.size), y].mean())


def gradient(model: Model, features: np.ndarray, labels: np.ndarray) -> ParamVector:
    """
    forward_lossのparamsに関する解析的な勾配(並び順)
    Args:
        model(Model): 分類器
        features(numpy.ndarray): (n, input_dim)
        labels(numpy.ndarray): (n,)の整数ラベル

    Returns:
        勾配(ParamVector)

    Raises:
        DimensionError: 形の不一致
        EmptyDataError: 空のバッチ
    """
    x, y = _check_batch(model, features, labels)
    activations, logits = _forward(model, x)
    delta: np.ndarray = np.exp(_log_softmax(logits))
    delta[np.arange(y.size), y] -= 1.0
    delta /= y.size
    layers = model.layers()
    blocks: List[np.ndarray] = []
    for index in range(len(layers) - 1, -1, -1):
        weights, _ = layers[index]
        inputs: np.ndarray = activations[index]
        blocks.append(delta.sum(axis=0))
        blocks.append((inputs.T @ delta).reshape(-1))
        if index > 0:
            delta = (delta @ weights.T) * inputs * (1.0 - inputs)
    return np.concatenate(blocks[::-1])


def predict(model: Model, features: np.ndarray) -> np.ndarray:
    """
    各行で最も確率の高いクラス
    """
    return probabilities(model, features).argmax(axis=1)


def client_rng(seed: int, round_index: int, client_id: int) -> np.random.Generator:
    """
    1クライアント1ラウンド分のミニバッチ並べ替え用の乱数列
    """
    return seeded_rng(seed, TRAIN_STREAM, round_index, client_id)


def _batches(n: int, cfg: LocalTrainConfig, rng: np.random.Generator) -> List[np.ndarray]:
    if cfg.batch_size == FULL_BATCH:
        return [np.arange(n)]
    order: np.ndarray = rng.permutation(n)
    return [order[start:start + cfg.batch_size] for start in range(0, n, cfg.batch_size)]


def local_train(model: Model, data: ClientDataset, cfg: LocalTrainConfig, round_index: int,
                client_id: int) -> ClientUpdate:
    """
    受け取ったパラメータの複製にEエポックのミニバッチSGDをかける
    Args:
        model(Model): 受け取ったモデルθ^t(変更しない)
        data(ClientDataset): ローカルデータ
        cfg(LocalTrainConfig): ローカル学習の設定
        round_index(int): ラウンドt
        client_id(int): クライアントk

    Returns:
        grad = θ^t - θ_k^t と、θ^tでの訓練データ全体の損失を持つ更新(ClientUpdate)

    Raises:
        EmptyDataError: 訓練データが空
    """
    if data.n_k == 0:
        raise EmptyDataError(f"client {client_id} has no training data (module {__name__}).")
    features, labels = data.train_features, data.train_labels
    loss: float = forward_loss(model, features, labels)
    rng: np.random.Generator = client_rng(cfg.shuffle_seed, round_index, client_id)
    theta: np.ndarray = model.params.copy()
    for _ in range(cfg.epochs):
        for batch in _batches(data.n_k, cfg, rng):
            theta = theta - cfg.learning_rate * gradient(model.with_params(theta), features[batch], labels[batch])
    return ClientUpdate(client_id=client_id, grad=model.params - theta, loss=loss, round=round_index)
