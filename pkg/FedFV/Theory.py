"""
Theoryモジュール

衝突緩和の理論を実行して確かめる。勾配アンサンブル上の順序付き射影、2つの衝突上界、
上界関数 f(m, k, ε1, ε2)、単体上の最小ノルム解法によるパレート停留性、
2目的の降下結果と真の勾配の前提を調べる凸2次関数のテストベッドを持つ。

アンサンブルの添字kは上界の式と同じく1始まり。
"""
from __future__ import annotations

__all__ = ["PASS", "SKIP", "FAIL", "GradientEnsemble", "ConvexQuadratic", "FiringStep", "ProjectionRun",
           "ordered_projection_run", "theorem1_bound", "theorem1_check", "f_bound", "theorem2_check",
           "min_norm_element", "pareto_stationary", "TwoObjectiveTrajectory", "run_two_objective_fedfv",
           "Theorem4Record", "theorem4_monitor", "QuadraticRun", "run_quadratic_fedfv", "obtuse_ensemble",
           "bound_sweep", "random_two_objective_problem", "theorem3_check", "theorem4_check"]

import dataclasses
import itertools
import logging
import math
from typing import Callable, Final, List, Optional, Sequence, Tuple

import numpy as np

from .DataGen import class_means
from .FedCore import build_projecting_order, mitigate_internal
from .Log import BoundRecord
from .Models import ClientUpdate
from .Utility import THEORY_STREAM, DimensionError, SolverError, UsageError, ZeroNormError, seeded_rng
from .VecMath import ParamVector, as_param_vector, conflicts, cosine, dot, norm, project_to_normal_plane, \
    rescale_to

logger = logging.getLogger(__name__)

PASS: Final[str] = "PASS"
SKIP: Final[str] = "SKIP"
FAIL: Final[str] = "FAIL"

EXACT_SOLVER_LIMIT: Final[int] = 4
SOLVER_MAX_ITER: Final[int] = 500
SOLVER_TOL: Final[float] = 1.e-8
PARETO_TOL: Final[float] = 1.e-6
TRAJECTORY_PARETO_TOL: Final[float] = 1.e-4
DESCENT_TOL: Final[float] = 1.e-9

BoundFunction = Callable[[int, int, float, float], float]


def _within(observed: float, bound: float) -> bool:
    return observed <= bound * (1.0 + 1.e-9) + 1.e-12


@dataclasses.dataclass(frozen=True, eq=False)
class GradientEnsemble:
    """
    勾配 g_1..g_m と、任意で指定するcosの絶対値の範囲 0 < ε1 <= ε2 <= 1
    """
    grads: Tuple[ParamVector, ...]
    eps1: Optional[float] = None
    eps2: Optional[float] = None

    def __post_init__(self):
        grads: Tuple[ParamVector, ...] = tuple(as_param_vector(grad) for grad in self.grads)
        if len(grads) < 2:
            raise UsageError(f"an ensemble needs at least 2 gradients, got {len(grads)} (module {__name__}).")
        if len({grad.size for grad in grads}) != 1:
            raise DimensionError(f"ensemble gradients of different dimensions (module {__name__}).")
        if any(norm(grad) == 0.0 for grad in grads):
            raise ZeroNormError(f"zero gradient in an ensemble (module {__name__}).")
        if self.eps1 is not None and self.eps2 is not None and not 0.0 < self.eps1 <= self.eps2 <= 1.0:
            raise UsageError(f"need 0 < eps1 <= eps2 <= 1, got {self.eps1}, {self.eps2} (module {__name__}).")
        object.__setattr__(self, "grads", grads)

    @property
    def m(self) -> int:
        return len(self.grads)

    @property
    def d(self) -> int:
        return int(self.grads[0].size)


@dataclasses.dataclass(frozen=True, eq=False)
class ConvexQuadratic:
    """
    F(θ) = scale / 2 * |θ - center|^2。L = scale で L-平滑
    """
    center: ParamVector
    scale: float

    def __post_init__(self):
        object.__setattr__(self, "center", as_param_vector(self.center))
        if not self.scale > 0.0:
            raise UsageError(f"scale must be positive, got {self.scale} (module {__name__}).")

    def value(self, theta: ParamVector) -> float:
        return 0.5 * self.scale * dot(theta - self.center, theta - self.center)

    def gradient(self, theta: ParamVector) -> ParamVector:
        return self.scale * (as_param_vector(theta) - self.center)


@dataclasses.dataclass(frozen=True)
class FiringStep:
    target: int  # k(1始まり)
    client: int  # i(1始まり)
    cosine: float  # g_i^(k-1) と g_k のcos


@dataclasses.dataclass(frozen=True, eq=False)
class ProjectionRun:
    """
    順序付き射影の途中の g_i^(j) をすべて保持する
    Attributes:
        ensemble(GradientEnsemble): 入力の勾配
        stages(numpy.ndarray): (m + 1, m, d)。stages[j][i - 1] = g_i^(j)
        firings(Tuple[FiringStep, ...]): 実行された射影(実行順)
        fired(numpy.ndarray): (m, m)のbool。g_iが目標kに射影されたとき fired[k - 1][i - 1]
    """
    ensemble: GradientEnsemble
    stages: np.ndarray
    firings: Tuple[FiringStep, ...]
    fired: np.ndarray

    @property
    def projected(self) -> np.ndarray:
        return self.stages[-1]

    @property
    def mean(self) -> ParamVector:
        return self.stages[-1].sum(axis=0) / self.ensemble.m

    @property
    def norm_table(self) -> np.ndarray:
        """
        (m + 1, m); norm_table[j][i - 1] = |g_i^(j)|
        """
        return np.linalg.norm(self.stages, axis=2)

    @property
    def premise(self) -> bool:
        """
        各g_iが、目標g_k (k != i) に達した時点ですべて衝突していた
        """
        return bool(np.all(self.fired | np.eye(self.ensemble.m, dtype=bool)))

    @property
    def firing_cosines(self) -> List[float]:
        return [abs(step.cosine) for step in self.firings]

    @property
    def pairwise_cosines(self) -> List[float]:
        grads = self.ensemble.grads
        return [abs(cosine(grads[i], grads[j])) for i, j in itertools.combinations(range(len(grads)), 2)]

    @property
    def eps(self) -> float:
        """
        射影中および元の勾配対で現れたcosの絶対値の最大
        """
        return max(self.firing_cosines + self.pairwise_cosines)

    @property
    def eps1(self) -> Optional[float]:
        cosines: List[float] = self.firing_cosines
        return min(cosines) if cosines else None

    def handoff(self, k: int) -> bool:
        """
        g_k . Σ_i g_i^(k) >= 0 (k以降の目標に引き渡す状態)
        """
        grad: ParamVector = self.ensemble.grads[k - 1]
        total: np.ndarray = self.stages[k].sum(axis=0)
        return dot(grad, total) >= 0.0


def ordered_projection_run(ensemble: GradientEnsemble) -> ProjectionRun:
    """
    k = 1..m の順に、元のg_kと衝突する g_i^(k-1) (i != k) をg_kの法平面に射影する。
    衝突しないものはそのまま次に渡す
    Args:
        ensemble(GradientEnsemble): 目標順に並べた勾配

    Returns:
        途中経過、射影の記録、前提の判定(ProjectionRun)
    """
    m: int = ensemble.m
    stages: np.ndarray = np.empty((m + 1, m, ensemble.d))
    stages[0] = np.stack(ensemble.grads)
    fired: np.ndarray = np.zeros((m, m), dtype=bool)
    firings: List[FiringStep] = []
    for k in range(1, m + 1):
        target: ParamVector = ensemble.grads[k - 1]
        stages[k] = stages[k - 1]
        for i in range(1, m + 1):
            current: ParamVector = stages[k - 1][i - 1]
            if i == k or not conflicts(current, target):
                continue
            firings.append(FiringStep(target=k, client=i, cosine=cosine(current, target)))
            stages[k][i - 1] = project_to_normal_plane(current, target)
            fired[k - 1][i - 1] = True
    return ProjectionRun(ensemble=ensemble, stages=stages, firings=tuple(firings), fired=fired)


def theorem1_bound(ensemble: GradientEnsemble, k: int, norm_table: np.ndarray, eps: float) -> float:
    """
    (ε^2 / m) Σ_{j=k}^{m-1} Σ_{i != j+1} |g_i^(j)|
    Args:
        ensemble(GradientEnsemble): 勾配
        k(int): 目標の添字(1始まり)
        norm_table(numpy.ndarray): 途中の勾配のノルム, (m + 1, m)
        eps(float): cosの絶対値の上界ε

    Returns:
        e_kと射影後の平均の衝突の上界(float)

    Raises:
        UsageError: kが範囲外
    """
    m: int = ensemble.m
    if not 1 <= k <= m:
        raise UsageError(f"k must be in [1, {m}], got {k} (module {__name__}).")
    total: float = 0.0
    for j in range(k, m):
        total += float(norm_table[j].sum() - norm_table[j][j])  # i = j + 1 を除く
    return eps * eps / m * total


def _check_statuses(run: ProjectionRun, k: int, observed: float, bound: Optional[float]) -> str:
    if run.premise and run.handoff(k) and bound is not None:
        return PASS if _within(observed, bound) else FAIL
    # 衝突0は非負のどの上界にも収まる
    return PASS if observed <= 1.e-12 else SKIP


def theorem1_check(run: ProjectionRun, ensemble_seed: int = 0) -> List[BoundRecord]:
    """
    各kについて max(0, -e_k . ḡ') を1つ目の衝突上界と比べる
    Args:
        run(ProjectionRun): 記録済みの射影
        ensemble_seed(int): レコードに記すID

    Returns:
        kごとに1件のレコード(List[BoundRecord])
    """
    ensemble: GradientEnsemble = run.ensemble
    table: np.ndarray = run.norm_table
    records: List[BoundRecord] = []
    for k in range(1, ensemble.m + 1):
        direction: ParamVector = ensemble.grads[k - 1] / norm(ensemble.grads[k - 1])
        observed: float = max(0.0, -dot(direction, run.mean))
        bound: Optional[float] = theorem1_bound(ensemble, k, table, run.eps) if run.premise else None
        records.append(BoundRecord(check="theorem1", ensemble_seed=ensemble_seed, m=ensemble.m, d=ensemble.d,
                                   k=k, bound=bound, observed=observed,
                                   status=_check_statuses(run, k, observed, bound)))
    return records


def f_bound(m: int, k: int, eps1: float, eps2: float) -> float:
    """
    f(m, k, ε1, ε2) = ε2^2 (1-ε1^2)^(1/2) (1 - (1-ε1^2)^((m-k)/2)) / (1 - (1-ε1^2)^(1/2))
    Args:
        m(int): アンサンブルの大きさ
        k(int): 目標の添字, 1 <= k <= m
        eps1(float): cosの絶対値の最小, 0 < ε1 <= ε2
        eps2(float): cosの絶対値の最大, ε2 <= 1

    Returns:
        f(float)。ε1 = 1 では極限値の0

    Raises:
        UsageError: 定義域外の引数
    """
    if not 1 <= k <= m:
        raise UsageError(f"need 1 <= k <= m, got k={k}, m={m} (module {__name__}).")
    if not 0.0 < eps1 <= eps2 <= 1.0:
        raise UsageError(f"need 0 < eps1 <= eps2 <= 1, got {eps1}, {eps2} (module {__name__}).")
    if eps1 == 1.0:
        return 0.0
    shrink: float = math.sqrt(1.0 - eps1 * eps1)
    return eps2 * eps2 * shrink * (1.0 - shrink ** (m - k)) / (1.0 - shrink)


def theorem2_check(run: ProjectionRun, ensemble_seed: int = 0,
                   bound_function: BoundFunction = f_bound) -> List[BoundRecord]:
    """
    各kについて max(0, -g_k . ḡ') を (m-1)/m (max_i |g_i|)^2 f(m, k, ε1, ε2) と比べる。
    ε1, ε2 は測ったcosの絶対値の最小と最大
    Args:
        run(ProjectionRun): 記録済みの射影
        ensemble_seed(int): レコードに記すID
        bound_function(BoundFunction): f。チェッカ自身の試験用に差し替えられる

    Returns:
        kごとに1件のレコード(List[BoundRecord])
    """
    ensemble: GradientEnsemble = run.ensemble
    m: int = ensemble.m
    largest: float = max(norm(grad) for grad in ensemble.grads)
    eps1: Optional[float] = run.eps1
    records: List[BoundRecord] = []
    for k in range(1, m + 1):
        observed: float = max(0.0, -dot(ensemble.grads[k - 1], run.mean))
        bound: Optional[float] = None
        if run.premise and eps1 is not None and eps1 > 0.0:
            bound = (m - 1) / m * largest * largest * bound_function(m, k, eps1, max(eps1, run.eps))
        records.append(BoundRecord(check="theorem2", ensemble_seed=ensemble_seed, m=m, d=ensemble.d, k=k,
                                   bound=bound, observed=observed,
                                   status=_check_statuses(run, k, observed, bound)))
    return records


def _project_to_simplex(v: np.ndarray) -> np.ndarray:
    ordered: np.ndarray = np.sort(v)[::-1]
    cumulative: np.ndarray = np.cumsum(ordered) - 1.0
    rho: int = int(np.nonzero(ordered * np.arange(1, v.size + 1) > cumulative)[0][-1])
    return np.maximum(v - cumulative[rho] / (rho + 1), 0.0)


def _two_point_weights(gram: np.ndarray) -> np.ndarray:
    gap: float = gram[0, 0] - 2.0 * gram[0, 1] + gram[1, 1]  # |g1 - g2|^2
    if gap <= 0.0:
        return np.array([0.5, 0.5])
    p: float = min(1.0, max(0.0, (gram[1, 1] - gram[0, 1]) / gap))
    return np.array([p, 1.0 - p])


def _active_set_weights(gram: np.ndarray) -> np.ndarray:
    """
    単体の各面で等式制約付き問題を解き、実行可能なもののうち最良を残す
    """
    m: int = gram.shape[0]
    best: Optional[np.ndarray] = None
    best_value: float = math.inf
    for size in range(1, m + 1):
        for face in itertools.combinations(range(m), size):
            index: List[int] = list(face)
            kkt: np.ndarray = np.zeros((size + 1, size + 1))
            kkt[:size, :size] = gram[np.ix_(index, index)]
            kkt[:size, size] = 1.0
            kkt[size, :size] = 1.0
            rhs: np.ndarray = np.zeros(size + 1)
            rhs[size] = 1.0
            solution: np.ndarray = np.linalg.lstsq(kkt, rhs, rcond=None)[0][:size]
            if solution.min() < -1.e-12 or abs(solution.sum() - 1.0) > 1.e-9:
                continue
            weights: np.ndarray = np.zeros(m)
            weights[index] = np.maximum(solution, 0.0) / np.maximum(solution, 0.0).sum()
            value: float = float(weights @ gram @ weights)
            if value < best_value:
                best, best_value = weights, value
    return best


def _projected_gradient_weights(gram: np.ndarray, max_iter: int, tol: float) -> np.ndarray:
    m: int = gram.shape[0]
    weights: np.ndarray = np.full(m, 1.0 / m)
    curvature: float = float(np.linalg.eigvalsh(gram).max())
    if curvature <= 0.0:
        return weights
    value: float = float(weights @ gram @ weights)
    for _ in range(max_iter):
        candidate: np.ndarray = _project_to_simplex(weights - gram @ weights / curvature)
        candidate_value: float = float(candidate @ gram @ candidate)
        if value - candidate_value <= tol:
            return candidate
        weights, value = candidate, candidate_value
    raise SolverError(f"simplex solver did not converge in {max_iter} iterations (module {__name__}).")


def min_norm_element(grads: Sequence[ParamVector], max_iter: int = SOLVER_MAX_ITER,
                     tol: float = SOLVER_TOL) -> Tuple[np.ndarray, float]:
    """
    勾配の凸結合のうちノルム最小のもの
    Args:
        grads(Sequence[ParamVector]): 同じ次元の勾配
        max_iter(int): 反復解法の反復上限(勾配が5本以上のとき)
        tol(float): 反復解法の目的関数減少の許容値

    Returns:
        (単体上の重み, 結合のノルム)(Tuple[numpy.ndarray, float])

    Raises:
        UsageError: 勾配がない
        DimensionError: 次元の異なる勾配
        SolverError: 反復上限に達した
    """
    if len(grads) == 0:
        raise UsageError(f"min-norm element of no gradients (module {__name__}).")
    checked: List[ParamVector] = [as_param_vector(grad) for grad in grads]
    if len({grad.size for grad in checked}) != 1:
        raise DimensionError(f"gradients of different dimensions (module {__name__}).")
    vectors: np.ndarray = np.stack(checked)
    gram: np.ndarray = vectors @ vectors.T
    if len(grads) == 1:
        weights: np.ndarray = np.ones(1)
    elif len(grads) == 2:
        weights = _two_point_weights(gram)
    elif len(grads) <= EXACT_SOLVER_LIMIT:
        weights = _active_set_weights(gram)
    else:
        weights = _projected_gradient_weights(gram, max_iter, tol)
    return weights, float(np.linalg.norm(weights @ vectors))


def pareto_stationary(grads: Sequence[ParamVector], tol: float = PARETO_TOL) -> bool:
    """
    勾配のある凸結合が数値的に0
    """
    return min_norm_element(grads)[1] <= tol


@dataclasses.dataclass(frozen=True, eq=False)
class TwoObjectiveTrajectory:
    thetas: Tuple[ParamVector, ...]
    values: Tuple[float, ...]  # F(θ_t) = (F1 + F2) / 2
    conflicted: Tuple[bool, ...]  # ステップtで g1 . g2 < 0
    floors: Tuple[float, ...]  # ステップtで保証されるFの減少量

    @property
    def final(self) -> ParamVector:
        return self.thetas[-1]


def run_two_objective_fedfv(f1: ConvexQuadratic, f2: ConvexQuadratic, theta0: ParamVector, eta: float,
                            steps: int, min_step: float = 0.0) -> TwoObjectiveTrajectory:
    """
    F = (F1 + F2) / 2 上の2ユーザFedFV。g_i = ∇F_i / 2 とする(g1 + g2 = ∇F)。
    衝突時は互いに射影した2つの勾配の和で θ <- θ - η (g1 + g2 - (g1.g2/|g1|^2) g1 - (g1.g2/|g2|^2) g2)
    (再スケールなし)、衝突しなければ θ <- θ - η (g1 + g2) / 2
    Args:
        f1(ConvexQuadratic): 1つ目の目的関数
        f2(ConvexQuadratic): 2つ目の目的関数
        theta0(ParamVector): 初期点
        eta(float): 学習率(1/L以下)
        steps(int): ステップ数の上限
        min_step(float): θの移動量がこれ以下になったら打ち切る

    Returns:
        軌跡(TwoObjectiveTrajectory)

    Raises:
        UsageError: η > 1/L
    """
    smoothness: float = max(f1.scale, f2.scale)
    if not 0.0 < eta <= 1.0 / smoothness * (1.0 + 1.e-12):
        raise UsageError(f"step size {eta} exceeds 1/L = {1.0 / smoothness} (module {__name__}).")
    theta: ParamVector = as_param_vector(theta0).copy()
    thetas: List[ParamVector] = [theta]
    values: List[float] = [0.5 * (f1.value(theta) + f2.value(theta))]
    conflicted: List[bool] = []
    floors: List[float] = []
    for _ in range(steps):
        g1: ParamVector = 0.5 * f1.gradient(theta)
        g2: ParamVector = 0.5 * f2.gradient(theta)
        if conflicts(g1, g2):
            inner: float = dot(g1, g2)
            direction: ParamVector = g1 + g2 - inner / dot(g1, g1) * g1 - inner / dot(g2, g2) * g2
            half: ParamVector = 0.5 * (g1 + g2)
            floors.append(0.5 * eta * (1.0 - cosine(g1, g2) ** 2) * dot(half, half))
            conflicted.append(True)
        else:
            direction = 0.5 * (g1 + g2)
            floors.append(0.0)
            conflicted.append(False)
        theta = theta - eta * direction
        thetas.append(theta)
        values.append(0.5 * (f1.value(theta) + f2.value(theta)))
        if eta * norm(direction) <= min_step:
            break
    return TwoObjectiveTrajectory(thetas=tuple(thetas), values=tuple(values), conflicted=tuple(conflicted),
                                  floors=tuple(floors))


@dataclasses.dataclass(frozen=True)
class Theorem4Record:
    cos: float
    norm_ok: bool
    premise_holds: bool


def theorem4_monitor(gbar: ParamVector, gbar_prime: ParamVector) -> Theorem4Record:
    """
    真の勾配に関する降下結果の前提 cos<ḡ, ḡ'> >= 1/2 かつ |ḡ| >= |ḡ'| を判定する
    Args:
        gbar(ParamVector): 平均目的関数の真の勾配
        gbar_prime(ParamVector): 実際に適用した更新

    Returns:
        判定結果(Theorem4Record)

    Raises:
        ZeroNormError: ノルム0の入力
    """
    cos: float = cosine(gbar, gbar_prime)
    norm_ok: bool = norm(gbar) >= norm(gbar_prime) * (1.0 - 1.e-12)
    return Theorem4Record(cos=cos, norm_ok=norm_ok, premise_holds=cos >= 0.5 and norm_ok)


@dataclasses.dataclass(frozen=True, eq=False)
class QuadraticRun:
    """
    monitors[t] は values[t] から values[t + 1] への1ステップに対応する
    """
    thetas: Tuple[ParamVector, ...]
    values: Tuple[float, ...]  # 平均目的関数の値
    monitors: Tuple[Theorem4Record, ...]
    gradient_norms: Tuple[float, ...]  # |ḡ|
    step_norms: Tuple[float, ...]  # |ḡ'|


def run_quadratic_fedfv(objectives: Sequence[ConvexQuadratic], theta0: ParamVector, eta: float, steps: int,
                        alpha: float = 0.0) -> QuadraticRun:
    """
    凸2次関数上の全員参加FedFV。損失順の内部衝突緩和、単純平均のノルムへの再スケール、更新の順に進め、
    毎ステップ真の勾配の前提を記録する。単純平均か緩和後の更新が消えた時点で打ち切る。
    """
    theta: ParamVector = as_param_vector(theta0).copy()
    thetas: List[ParamVector] = [theta]
    values: List[float] = [float(np.mean([f.value(theta) for f in objectives]))]
    monitors: List[Theorem4Record] = []
    gradient_norms: List[float] = []
    step_norms: List[float] = []
    for t in range(steps):
        updates: List[ClientUpdate] = [ClientUpdate(client_id=i, grad=f.gradient(theta), loss=f.value(theta),
                                                    round=t) for i, f in enumerate(objectives)]
        gbar: ParamVector = np.mean(np.stack([update.grad for update in updates]), axis=0)
        mitigated: ParamVector = mitigate_internal(updates, build_projecting_order(updates), alpha)
        if norm(gbar) == 0.0 or norm(mitigated) == 0.0:
            break
        step: ParamVector = rescale_to(mitigated, norm(gbar))
        monitors.append(theorem4_monitor(gbar, step))
        gradient_norms.append(norm(gbar))
        step_norms.append(norm(step))
        theta = theta - eta * step
        thetas.append(theta)
        values.append(float(np.mean([f.value(theta) for f in objectives])))
    return QuadraticRun(thetas=tuple(thetas), values=tuple(values), monitors=tuple(monitors),
                        gradient_norms=tuple(gradient_norms), step_norms=tuple(step_norms))


def obtuse_ensemble(m: int, d: int, rng: np.random.Generator, jitter: float = 0.05) -> GradientEnsemble:
    """
    互いに鈍角をなす勾配を作る。m >= 3 ではランダムに回転した正単体の方向に揺らぎを加え、
    m = 2 ではcosが[-0.9, -0.1]のランダムな対にする。ノルムは[0.5, 2]の一様分布
    Args:
        m(int): アンサンブルの大きさ, 2 <= m <= d + 1
        d(int): 次元(2以上)
        rng(numpy.random.Generator): 乱数生成器
        jitter(float): 方向の揺らぎ

    Returns:
        アンサンブル(GradientEnsemble)

    Raises:
        UsageError: m, dが範囲外
    """
    if m < 2 or d < 2 or m > d + 1:
        raise UsageError(f"need 2 <= m <= d + 1 and d >= 2, got m={m}, d={d} (module {__name__}).")
    if m == 2:
        first: np.ndarray = rng.standard_normal(d)
        first /= np.linalg.norm(first)
        other: np.ndarray = rng.standard_normal(d)
        other -= (other @ first) * first
        other /= np.linalg.norm(other)
        cos: float = float(rng.uniform(-0.9, -0.1))
        directions: np.ndarray = np.stack([first, cos * first + math.sqrt(1.0 - cos * cos) * other])
    else:
        directions = class_means(m, d, rng) + rng.standard_normal((m, d)) * jitter / math.sqrt(d)
        directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    magnitudes: np.ndarray = rng.uniform(0.5, 2.0, size=m)
    return GradientEnsemble(tuple(directions * magnitudes[:, None]))


def bound_sweep(seed: int, count: int, bound_function: BoundFunction = f_bound,
                max_attempts: Optional[int] = None) -> List[BoundRecord]:
    """
    前提を満たすアンサンブル(m は 2..6, d は 2..8)をcount個集め、2つの衝突上界を調べる
    Args:
        seed(int): スイープのシード
        count(int): 集めるアンサンブルの数
        bound_function(BoundFunction): 2つ目の上界で使うf
        max_attempts(Optional[int]): 生成するアンサンブル数の上限(省略時 50 * count)

    Returns:
        集めた全アンサンブルの全kのレコード(List[BoundRecord])

    Raises:
        UsageError: countが1未満
    """
    if count < 1:
        raise UsageError(f"count must be at least 1, got {count} (module {__name__}).")
    attempts: int = max_attempts if max_attempts is not None else 50 * count
    records: List[BoundRecord] = []
    collected: int = 0
    index: int = 0
    while collected < count and index < attempts:
        rng: np.random.Generator = seeded_rng(seed, THEORY_STREAM, index)
        m: int = int(rng.integers(2, 7))
        d: int = int(rng.integers(max(2, m - 1), 9))
        run: ProjectionRun = ordered_projection_run(obtuse_ensemble(m, d, rng))
        if run.premise:
            records += theorem1_check(run, index) + theorem2_check(run, index, bound_function)
            collected += 1
        index += 1
    if collected < count:
        logger.warning("only %d of %d ensembles satisfied the premise in %d attempts", collected, count, attempts)
    logger.debug("bound sweep: %d ensembles from %d attempts", collected, index)
    return records


def random_two_objective_problem(rng: np.random.Generator, d: int = 2) \
        -> Tuple[ConvexQuadratic, ConvexQuadratic, ParamVector]:
    """
    L = 1 の2つの2次関数(scaleは1とU[0.2, 0.5])と初期点。いずれも[-2, 2]^d内
    """
    f1 = ConvexQuadratic(center=rng.uniform(-2.0, 2.0, size=d), scale=1.0)
    f2 = ConvexQuadratic(center=rng.uniform(-2.0, 2.0, size=d), scale=float(rng.uniform(0.2, 0.5)))
    return f1, f2, rng.uniform(-2.0, 2.0, size=d)


def theorem3_check(f1: ConvexQuadratic, f2: ConvexQuadratic, theta0: ParamVector, steps: int = 5000,
                   problem_seed: int = 0) -> BoundRecord:
    """
    η = 1/L で走らせ、Fが1e-9を超えて増えないこと、衝突時に保証量以上減ること、
    最終点がパレート停留(1e-4)か平均の最適点(1e-4)であることを確かめる
    Args:
        f1(ConvexQuadratic): 1つ目の目的関数
        f2(ConvexQuadratic): 2つ目の目的関数
        theta0(ParamVector): 初期点
        steps(int): ステップ数の上限
        problem_seed(int): レコードに記す問題ID

    Returns:
        observed = 最終点の停留性からの距離(BoundRecord)
    """
    eta: float = 1.0 / max(f1.scale, f2.scale)
    trajectory: TwoObjectiveTrajectory = run_two_objective_fedfv(f1, f2, theta0, eta, steps, min_step=1.e-13)
    descends: bool = all(after <= before - floor + DESCENT_TOL for before, after, floor
                         in zip(trajectory.values, trajectory.values[1:], trajectory.floors))
    final: ParamVector = trajectory.final
    optimum: ParamVector = (f1.scale * f1.center + f2.scale * f2.center) / (f1.scale + f2.scale)
    stationarity: float = min_norm_element([f1.gradient(final), f2.gradient(final)])[1]
    converged: bool = stationarity <= TRAJECTORY_PARETO_TOL or norm(final - optimum) < TRAJECTORY_PARETO_TOL
    return BoundRecord(check="theorem3", ensemble_seed=problem_seed, m=2, d=int(final.size), k=None,
                       bound=TRAJECTORY_PARETO_TOL, observed=stationarity,
                       status=PASS if descends and converged else FAIL)


def theorem4_check(objectives: Sequence[ConvexQuadratic], theta0: ParamVector, steps: int = 50,
                   problem_seed: int = 0, eta: Optional[float] = None) -> BoundRecord:
    """
    全員参加FedFVを走らせ、前提をステップごとに判定する。前提が成り立つステップでは
    F(θ_{t+1}) <= F(θ_t) - (η/2)(1 - Lη)|ḡ||ḡ'| を確かめる。
    再スケール後の更新が真の勾配より大きくなったステップか、降下が保証量に届かないステップがあればFAIL、
    前提が成り立つステップが1つもなければSKIP
    Args:
        objectives(Sequence[ConvexQuadratic]): クライアントの目的関数
        theta0(ParamVector): 初期点
        steps(int): ステップ数の上限
        problem_seed(int): レコードに記す問題ID
        eta(Optional[float]): 学習率(省略時 1/(2L))

    Returns:
        observed = 前提が成り立つステップでの保証量に対する最大の超過(BoundRecord)

    Raises:
        UsageError: 0 < η <= 1/L でない
    """
    smoothness: float = max(f.scale for f in objectives)
    if eta is None:
        eta = 0.5 / smoothness
    if not 0.0 < eta <= 1.0 / smoothness * (1.0 + 1.e-12):
        raise UsageError(f"step size {eta} exceeds 1/L = {1.0 / smoothness} (module {__name__}).")
    run: QuadraticRun = run_quadratic_fedfv(objectives, theta0, eta, steps)
    rate: float = 0.5 * eta * (1.0 - smoothness * eta)
    excesses: List[float] = [after - (before - rate * gradient_norm * step_norm)
                             for before, after, record, gradient_norm, step_norm
                             in zip(run.values, run.values[1:], run.monitors, run.gradient_norms, run.step_norms)
                             if record.premise_holds]
    worst: Optional[float] = max(excesses, default=None)
    if not all(record.norm_ok for record in run.monitors) or (worst is not None and worst > DESCENT_TOL):
        status: str = FAIL
    elif worst is None:
        status = SKIP
    else:
        status = PASS
    logger.debug("theorem4 problem %d: %d of %d steps satisfy the premise", problem_seed, len(excesses),
                 len(run.monitors))
    return BoundRecord(check="theorem4", ensemble_seed=problem_seed, m=len(objectives), d=objectives[0].center.size,
                       k=None, bound=DESCENT_TOL, observed=worst, status=status)
