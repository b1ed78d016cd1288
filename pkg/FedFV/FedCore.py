"""
FedCoreモジュール

フェデレーションのサーバ側。クライアントのサンプリングとドロップアウト、勾配履歴、
損失にもとづく射影順、内部と外部の衝突緩和、再スケール、
比較用のFedAvgラウンドを扱う。
"""
from __future__ import annotations

__all__ = ["FEDFV", "FEDAVG", "ALGORITHMS", "LOSS_ASCENDING", "RANDOM_ORDER", "REVERSE_ORDER", "ORDER_MODES",
           "HistoryEntry", "GradientHistory", "ProjectingOrder", "FedFVConfig", "FederatedRun",
           "uniform_weights", "size_weights", "sample_clients", "apply_dropout", "weighted_sum",
           "fedavg_aggregate", "build_projecting_order", "arrange_projecting_order", "projection_steps",
           "mitigate_internal", "mitigate_external", "count_conflict_pairs", "fedfv_round", "fedavg_round",
           "run_round"]

import concurrent.futures
import dataclasses
import logging
from typing import Callable, Dict, Final, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .DataGen import ClientDataset
from .Log import RoundRecord
from .Models import ClientUpdate, LocalTrainConfig, Model, local_train
from .Utility import (DROPOUT_STREAM, ORDER_STREAM, SAMPLING_STREAM, EmptyDataError, UsageError,
                      floor_fraction, seeded_rng)
from .VecMath import ParamVector, conflicts, cosine, norm, project_to_normal_plane, rescale_to

logger = logging.getLogger(__name__)

FEDFV: Final[str] = "fedfv"
FEDAVG: Final[str] = "fedavg"
ALGORITHMS: Final[Tuple[str, ...]] = (FEDFV, FEDAVG)
LOSS_ASCENDING: Final[str] = "loss_ascending"
RANDOM_ORDER: Final[str] = "random"
REVERSE_ORDER: Final[str] = "reverse"
ORDER_MODES: Final[Tuple[str, ...]] = (LOSS_ASCENDING, RANDOM_ORDER, REVERSE_ORDER)
WEIGHT_SUM_TOLERANCE: Final[float] = 1.e-9

Trainer = Callable[[Model, ClientDataset, int, int], ClientUpdate]


@dataclasses.dataclass(frozen=True, eq=False)
class HistoryEntry:
    grad: ParamVector
    round: int


class GradientHistory:
    """
    報告したことのある各クライアントの最新の疑似勾配とそのラウンド
    """

    def __init__(self):
        self._entries: Dict[int, HistoryEntry] = {}

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, client_id: int) -> bool:
        return client_id in self._entries

    def __getitem__(self, client_id: int) -> HistoryEntry:
        return self._entries[client_id]

    def update(self, client_id: int, grad: ParamVector, round_index: int) -> None:
        """
        クライアントのエントリを上書きする
        Args:
            client_id(int): クライアントk
            grad(ParamVector): g_k
            round_index(int): g_kのラウンド

        Raises:
            UsageError: 保存済みのラウンドより新しくない
        """
        entry: Optional[HistoryEntry] = self._entries.get(client_id)
        if entry is not None and round_index <= entry.round:
            raise UsageError(f"history of client {client_id} is at round {entry.round};"
                             f" cannot store round {round_index} (module {__name__}).")
        self._entries[client_id] = HistoryEntry(grad=grad, round=round_index)

    def from_round(self, round_index: int) -> List[Tuple[int, ParamVector]]:
        """
        ちょうどround_indexに記録されたエントリの (client_id, grad)。ID昇順
        """
        return [(client_id, entry.grad) for client_id, entry in sorted(self._entries.items())
                if entry.round == round_index]


@dataclasses.dataclass(frozen=True)
class ProjectingOrder:
    ordered: Tuple[ClientUpdate, ...]

    @property
    def client_ids(self) -> List[int]:
        return [update.client_id for update in self.ordered]


@dataclasses.dataclass(frozen=True)
class FedFVConfig:
    """
    サーバの設定
    Attributes:
        alpha(float): 勾配を射影しない高損失側クライアントの割合α
        tau(int): 外部衝突緩和の履歴窓τ
        sample_count(int): 1ラウンドにサンプルするクライアント数m
        dropout_prob(float): サンプルされたクライアントが独立に脱落する確率
        total_rounds(int): ラウンド数T
        weights(Tuple[float, ...]): K個のクライアントのサンプリング確率p_k
        order_mode(str): 射影順のモード
    """
    alpha: float
    tau: int
    sample_count: int
    dropout_prob: float
    total_rounds: int
    weights: Tuple[float, ...]
    order_mode: str = LOSS_ASCENDING

    def __post_init__(self):
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        if not 0.0 <= self.alpha <= 1.0:
            raise UsageError(f"alpha must be in [0, 1], got {self.alpha} (module {__name__}).")
        if self.tau < 0:
            raise UsageError(f"tau must be non-negative, got {self.tau} (module {__name__}).")
        if not 0 < self.sample_count <= len(self.weights):
            raise UsageError(f"sample_count must be in (0, {len(self.weights)}], got {self.sample_count}"
                             f" (module {__name__}).")
        if not 0.0 <= self.dropout_prob < 1.0:
            raise UsageError(f"dropout_prob must be in [0, 1), got {self.dropout_prob} (module {__name__}).")
        if self.total_rounds < 0:
            raise UsageError(f"total_rounds must be non-negative, got {self.total_rounds}"
                             f" (module {__name__}).")
        if min(self.weights) < 0.0 or abs(sum(self.weights) - 1.0) > WEIGHT_SUM_TOLERANCE:
            raise UsageError(f"weights must be non-negative and sum to 1 (module {__name__}).")
        if self.order_mode not in ORDER_MODES:
            raise UsageError(f"unknown order mode {self.order_mode}; expected one of {ORDER_MODES}"
                             f" (module {__name__}).")

    @property
    def num_clients(self) -> int:
        return len(self.weights)


def uniform_weights(num_clients: int) -> Tuple[float, ...]:
    return tuple([1.0 / num_clients] * num_clients)


def size_weights(datasets: Sequence[ClientDataset]) -> Tuple[float, ...]:
    """
    p_k = n_k / Σ n_j
    """
    sizes: np.ndarray = np.asarray([dataset.n_k for dataset in datasets], dtype=np.float64)
    return tuple(float(w) for w in sizes / sizes.sum())


@dataclasses.dataclass
class FederatedRun:
    """
    1回の連合学習の可変状態。1つのドライバだけが持つ
    """
    config: FedFVConfig
    model: Model
    datasets: Sequence[ClientDataset]
    train_config: LocalTrainConfig
    seed: int
    algorithm: str = FEDFV
    round: int = 0
    history: GradientHistory = dataclasses.field(default_factory=GradientHistory)
    logs: List[RoundRecord] = dataclasses.field(default_factory=list)
    trainer: Optional[Trainer] = None
    workers: int = 1

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise UsageError(f"unknown algorithm {self.algorithm}; expected one of {ALGORITHMS}"
                             f" (module {__name__}).")
        if len(self.datasets) != self.config.num_clients:
            raise UsageError(f"{len(self.datasets)} datasets for {self.config.num_clients} client weights"
                             f" (module {__name__}).")
        if any(dataset.client_id != k for k, dataset in enumerate(self.datasets)):
            raise UsageError(f"datasets must be indexed by client id (module {__name__}).")

    def train(self, model: Model, dataset: ClientDataset, round_index: int, client_id: int) -> ClientUpdate:
        if self.trainer is not None:
            return self.trainer(model, dataset, round_index, client_id)
        return local_train(model, dataset, self.train_config, round_index, client_id)


def sample_clients(weights: Sequence[float], m: int, round_index: int, seed: int) -> List[int]:
    """
    p_kに比例する確率で1つずつ、異なるm個のクライアントを引く。
    確率はまだ引かれていないクライアントで正規化し直す
    Args:
        weights(Sequence[float]): 各クライアントのp_k
        m(int): サンプル数
        round_index(int): ラウンドt
        seed(int): 実行のシード

    Returns:
        サンプルしたクライアントID(昇順)(List[int])

    Raises:
        UsageError: m > K
    """
    pool: List[int] = list(range(len(weights)))
    if not 0 <= m <= len(pool):
        raise UsageError(f"cannot sample {m} of {len(pool)} clients (module {__name__}).")
    probabilities: np.ndarray = np.asarray(weights, dtype=np.float64)
    rng: np.random.Generator = seeded_rng(seed, SAMPLING_STREAM, round_index)
    chosen: List[int] = []
    for _ in range(m):
        remaining: np.ndarray = probabilities[pool]
        total: float = float(remaining.sum())
        # 重み0のクライアントしか残っていない
        p: np.ndarray = remaining / total if total > 0.0 else np.full(len(pool), 1.0 / len(pool))
        chosen.append(pool.pop(int(rng.choice(len(pool), p=p))))
    return sorted(chosen)


def apply_dropout(selected: Sequence[int], dropout_prob: float, round_index: int, seed: int) -> List[int]:
    """
    選ばれた各クライアントを独立に脱落させる。全員脱落したら最小IDを残す
    Args:
        selected(Sequence[int]): サンプルしたクライアント
        dropout_prob(float): 脱落確率
        round_index(int): ラウンドt
        seed(int): 実行のシード

    Returns:
        残ったクライアントID(昇順)(List[int])
    """
    if not 0.0 <= dropout_prob <= 1.0:
        raise UsageError(f"dropout_prob must be in [0, 1], got {dropout_prob} (module {__name__}).")
    ids: List[int] = sorted(selected)
    if not ids:
        return []
    draws: np.ndarray = seeded_rng(seed, DROPOUT_STREAM, round_index).random(len(ids))
    survivors: List[int] = [client_id for client_id, draw in zip(ids, draws) if draw >= dropout_prob]
    if not survivors:
        logger.debug("round %d: every sampled client dropped; client %d is kept", round_index, ids[0])
        return ids[:1]
    return survivors


def weighted_sum(vectors: Sequence[ParamVector], coefficients: Sequence[float]) -> ParamVector:
    """
    与えた順に足し上げた Σ c_i v_i
    Args:
        vectors(Sequence[ParamVector]): 同じ次元のベクトル
        coefficients(Sequence[float]): ベクトルごとの係数

    Returns:
        和(ParamVector)

    Raises:
        EmptyDataError: ベクトルがない
    """
    if len(vectors) == 0:
        raise EmptyDataError(f"sum over an empty set of vectors (module {__name__}).")
    if len(vectors) != len(coefficients):
        raise UsageError(f"{len(vectors)} vectors for {len(coefficients)} coefficients (module {__name__}).")
    total: ParamVector = np.zeros_like(vectors[0], dtype=np.float64)
    for coefficient, vector in zip(coefficients, vectors):
        total = total + coefficient * vector
    return total


def _uniform_mean(vectors: Sequence[ParamVector]) -> ParamVector:
    return weighted_sum(vectors, [1.0 / len(vectors)] * len(vectors))


def fedavg_aggregate(updates: Sequence[ClientUpdate], weights: Sequence[float]) -> ParamVector:
    """
    更新の勾配の加重平均。重みは与えた更新の中で正規化し直す
    Args:
        updates(Sequence[ClientUpdate]): クライアントの更新
        weights(Sequence[float]): 更新ごとの非負の重み(FedAvgではn_k)

    Returns:
        集約した勾配(ParamVector)

    Raises:
        EmptyDataError: 更新がない
    """
    if len(updates) == 0:
        raise EmptyDataError(f"aggregation of an empty update set (module {__name__}).")
    w: np.ndarray = np.asarray(weights, dtype=np.float64)
    if w.shape != (len(updates),) or w.min() < 0.0 or w.sum() <= 0.0:
        raise UsageError(f"need one non-negative weight per update with a positive sum (module {__name__}).")
    return weighted_sum([update.grad for update in updates], list(w / w.sum()))


def build_projecting_order(updates: Sequence[ClientUpdate]) -> ProjectingOrder:
    """
    訓練損失の昇順に並べた更新。同じ損失はクライアントID順
    """
    if len(updates) == 0:
        raise EmptyDataError(f"projecting order of an empty update set (module {__name__}).")
    return ProjectingOrder(tuple(sorted(updates, key=lambda update: (update.loss, update.client_id))))


def arrange_projecting_order(updates: Sequence[ClientUpdate], mode: str, seed: int,
                             round_index: int) -> ProjectingOrder:
    """
    ORDER_MODESのいずれかのモードで射影順を作る
    Args:
        updates(Sequence[ClientUpdate]): クライアントの更新
        mode(str): loss_ascending / random(シードとラウンドで決まる) / reverse
        seed(int): 実行のシード
        round_index(int): ラウンドt

    Returns:
        射影順(ProjectingOrder)
    """
    order: ProjectingOrder = build_projecting_order(updates)
    if mode == LOSS_ASCENDING:
        return order
    if mode == REVERSE_ORDER:
        return ProjectingOrder(order.ordered[::-1])
    if mode == RANDOM_ORDER:
        permutation: np.ndarray = seeded_rng(seed, ORDER_STREAM, round_index).permutation(len(order.ordered))
        return ProjectingOrder(tuple(order.ordered[i] for i in permutation))
    raise UsageError(f"unknown order mode {mode}; expected one of {ORDER_MODES} (module {__name__}).")


def projection_steps(grad: ParamVector, client_id: int,
                     order: ProjectingOrder) -> Iterator[Tuple[ClientUpdate, ParamVector]]:
    """
    射影順に沿って、衝突する元の勾配それぞれの法平面にgradを射影する
    Args:
        grad(ParamVector): g_k
        client_id(int): k。自分の勾配は射影先にしない
        order(ProjectingOrder): 射影先

    Yields:
        射影が起きるたびに (射影先の更新, 射影後の勾配)
    """
    current: ParamVector = grad
    for target in order.ordered:
        if target.client_id != client_id and conflicts(current, target.grad):
            current = project_to_normal_plane(current, target.grad)
            yield target, current


@dataclasses.dataclass(frozen=True, eq=False)
class _Mitigated:
    vector: ParamVector
    projections: int


def _mitigate_internal(updates: Sequence[ClientUpdate], order: ProjectingOrder, alpha: float) -> _Mitigated:
    if len(updates) == 0:
        raise EmptyDataError(f"internal mitigation of an empty update set (module {__name__}).")
    if not 0.0 <= alpha <= 1.0:
        raise UsageError(f"alpha must be in [0, 1], got {alpha} (module {__name__}).")
    projected_ids = set(order.client_ids[:floor_fraction(1.0 - alpha, len(updates))])
    projections: int = 0
    mitigated: List[ParamVector] = []
    for update in updates:
        grad: ParamVector = update.grad
        if update.client_id in projected_ids:
            for _, grad_after in projection_steps(update.grad, update.client_id, order):
                grad = grad_after
                projections += 1
        mitigated.append(grad)
    return _Mitigated(_uniform_mean(mitigated), projections)


def mitigate_internal(updates: Sequence[ClientUpdate], order: ProjectingOrder, alpha: float) -> ParamVector:
    """
    射影順の先頭 ⌊(1-α)m⌋ 個のクライアントの勾配を、そのラウンドの衝突する勾配に対して
    射影したあとの平均
    Args:
        updates(Sequence[ClientUpdate]): そのラウンドのクライアントの更新
        order(ProjectingOrder): 同じ更新の射影順
        alpha(float): 射影順の末尾で勾配をそのまま残すクライアントの割合α

    Returns:
        (1/m) Σ g_k^PC (ParamVector)
    """
    return _mitigate_internal(updates, order, alpha).vector


def _mitigate_external(grad: ParamVector, history: GradientHistory, round_index: int, tau: int) -> _Mitigated:
    if tau < 0 or round_index < tau:
        raise UsageError(f"external mitigation needs 0 <= tau <= t, got tau={tau}, t={round_index}"
                         f" (module {__name__}).")
    projections: int = 0
    for lag in range(tau, 0, -1):
        conflicting: List[ParamVector] = [past for _, past in history.from_round(round_index - lag)
                                          if conflicts(grad, past)]
        if not conflicting:
            continue
        # 個々に衝突する勾配の和は衝突しないこともある
        summed: ParamVector = weighted_sum(conflicting, [1.0] * len(conflicting))
        if conflicts(grad, summed):
            grad = project_to_normal_plane(grad, summed)
            projections += 1
    return _Mitigated(grad, projections)


def mitigate_external(g: ParamVector, history: GradientHistory, current_round: int, tau: int) -> ParamVector:
    """
    ラウンド t-i (i = τ, ..., 1) の履歴勾配のうちgと衝突するものの和の法平面に、
    古いものから順にgを射影する
    Args:
        g(ParamVector): 内部衝突緩和後の更新
        history(GradientHistory): 勾配履歴
        current_round(int): ラウンドt
        tau(int): 窓τ

    Returns:
        射影後の更新(ParamVector)

    Raises:
        UsageError: t < τ
    """
    return _mitigate_external(g, history, current_round, tau).vector


def count_conflict_pairs(grads: Sequence[ParamVector]) -> int:
    return sum(1 for i in range(len(grads)) for j in range(i + 1, len(grads)) if conflicts(grads[i], grads[j]))


def _cosine_or_none(a: ParamVector, b: ParamVector) -> Optional[float]:
    if norm(a) == 0.0 or norm(b) == 0.0:
        return None
    return cosine(a, b)


def _collect_updates(state: FederatedRun, survivors: Sequence[int]) -> List[ClientUpdate]:
    """
    残ったクライアントを現在のモデルで学習させる。結果はクライアントID昇順
    """
    round_index: int = state.round
    if state.workers > 1 and len(survivors) > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=state.workers) as executor:
            return list(executor.map(
                lambda client_id: state.train(state.model, state.datasets[client_id], round_index, client_id),
                survivors))
    return [state.train(state.model, state.datasets[client_id], round_index, client_id)
            for client_id in survivors]


def _begin_round(state: FederatedRun) -> Tuple[List[int], List[int], List[ClientUpdate]]:
    config: FedFVConfig = state.config
    if state.round >= config.total_rounds:
        raise UsageError(f"run already finished {config.total_rounds} rounds (module {__name__}).")
    selected: List[int] = sample_clients(config.weights, config.sample_count, state.round, state.seed)
    survivors: List[int] = apply_dropout(selected, config.dropout_prob, state.round, state.seed)
    return selected, survivors, _collect_updates(state, survivors)


def _finish_round(state: FederatedRun, record: RoundRecord, step: Optional[ParamVector]) -> FederatedRun:
    if step is None:
        logger.info("round %d: zero-norm update, model left unchanged", state.round)
    else:
        state.model = state.model.with_params(state.model.params - step)
    state.logs.append(record)
    state.round += 1
    return state


def fedfv_round(state: FederatedRun) -> FederatedRun:
    """
    FedFVの1ラウンド。サンプル、脱落、学習、履歴の記録、損失順の整列、
    内部と外部の衝突緩和、単純平均のノルムへの再スケール、更新の順に進める
    Args:
        state(FederatedRun): 実行状態(変更して返す)

    Returns:
        ラウンド後の状態(FederatedRun)

    Raises:
        UsageError: すでにtotal_roundsに達している
    """
    config: FedFVConfig = state.config
    t: int = state.round
    selected, survivors, updates = _begin_round(state)
    for update in updates:
        state.history.update(update.client_id, update.grad, t)
    grads: List[ParamVector] = [update.grad for update in updates]
    plain: ParamVector = _uniform_mean(grads)

    order: ProjectingOrder = arrange_projecting_order(updates, config.order_mode, state.seed, t)
    internal: _Mitigated = _mitigate_internal(updates, order, config.alpha)
    external: _Mitigated = _Mitigated(internal.vector, 0)
    if t >= config.tau:
        external = _mitigate_external(internal.vector, state.history, t, config.tau)

    step: Optional[ParamVector] = None
    # 単純平均が0だとどの向きも長さ0の更新になる
    if norm(external.vector) > 0.0 and norm(plain) > 0.0:
        step = rescale_to(external.vector, norm(plain))
    record = RoundRecord(round=t, algorithm=FEDFV, selected=tuple(selected), survivors=tuple(survivors),
                         losses={update.client_id: update.loss for update in updates},
                         conflict_pairs=count_conflict_pairs(grads),
                         internal_projections=internal.projections,
                         external_projections=external.projections,
                         cosine_internal=_cosine_or_none(plain, internal.vector),
                         cosine_final=None if step is None else _cosine_or_none(plain, step),
                         update_norm=0.0 if step is None else norm(step),
                         mean_norm=norm(plain), skipped=step is None)
    logger.debug("round %d: survivors %s, %d conflicting pairs, %d+%d projections", t, survivors,
                 record.conflict_pairs, record.internal_projections, record.external_projections)
    return _finish_round(state, record, step)


def fedavg_round(state: FederatedRun) -> FederatedRun:
    """
    残ったクライアントをn_kに比例する重みで平均するFedAvgの1ラウンド
    Args:
        state(FederatedRun): 実行状態(変更して返す)

    Returns:
        ラウンド後の状態(FederatedRun)
    """
    t: int = state.round
    selected, survivors, updates = _begin_round(state)
    grads: List[ParamVector] = [update.grad for update in updates]
    aggregated: ParamVector = fedavg_aggregate(updates, [state.datasets[update.client_id].n_k
                                                          for update in updates])
    plain: ParamVector = _uniform_mean(grads)
    step: Optional[ParamVector] = aggregated if norm(aggregated) > 0.0 else None
    record = RoundRecord(round=t, algorithm=FEDAVG, selected=tuple(selected), survivors=tuple(survivors),
                         losses={update.client_id: update.loss for update in updates},
                         conflict_pairs=count_conflict_pairs(grads), internal_projections=0,
                         external_projections=0, cosine_internal=None,
                         cosine_final=None if step is None else _cosine_or_none(plain, step),
                         update_norm=norm(aggregated), mean_norm=norm(plain), skipped=step is None)
    return _finish_round(state, record, step)


def run_round(state: FederatedRun) -> FederatedRun:
    if state.algorithm == FEDAVG:
        return fedavg_round(state)
    return fedfv_round(state)
