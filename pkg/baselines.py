"""
비교/검증용 기준 알고리즘 - DGD, 결정적 기울기 추적, 중앙집중 경사하강

엔진 내부 루틴을 쓰지 않고 독립적으로 작성한다 (동등성 검증용).
"""
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from analysis import TheoryParams
from metrics_recorder import MetricsRecord
from problems import FiniteSumProblem, ReferenceOptimum, initial_iterates
from sim_utils import setup_integrated_logging, ConfigError, DivergenceError
from topology import MixingMatrix

logger = setup_integrated_logging(__name__)

METHODS = ('dgd', 'gradient_tracking', 'centralized_gd')
DIVERGENCE_LIMIT = 1e12


@dataclass
class BaselineConfig:
    method: str
    alpha: float
    K: int
    x0_mode: str = 'zeros'
    x0_seed: int = 0
    record_history: bool = False
    gap_target: Optional[float] = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"지원하지 않는 기준 알고리즘: {self.method} (가능: {', '.join(METHODS)})")
        if self.alpha < 0:
            raise ConfigError(f"step size 는 음수일 수 없습니다: alpha={self.alpha}")
        if self.K < 0:
            raise ConfigError(f"반복 횟수는 0 이상이어야 합니다: K={self.K}")


@dataclass
class BaselineResult:
    method: str
    records: List[MetricsRecord]
    x_final: np.ndarray
    x_history: List[np.ndarray] = field(default_factory=list)


def _stacked_gradients(problem: FiniteSumProblem, X: np.ndarray) -> np.ndarray:
    return np.vstack([problem.local_full_gradient(i, X[i]) for i in range(problem.n)])


def _guard(X: np.ndarray, k: int, method: str) -> None:
    if not np.all(np.isfinite(X)) or np.max(np.abs(X)) > DIVERGENCE_LIMIT:
        raise DivergenceError(f"{method} 발산 감지: k={k}")


def _network_record(k: int, X: np.ndarray, G: Optional[np.ndarray], problem: FiniteSumProblem,
                    ref: ReferenceOptimum, mixing: MixingMatrix, L: float, mu: float,
                    grad_evals: int) -> MetricsRecord:
    n = X.shape[0]
    xbar = X.mean(axis=0)
    consensus = float(np.sum((X - xbar) ** 2))
    gap = max(problem.optimality_gap(xbar, ref), 0.0)
    gap_scaled = 2.0 * n / L * gap
    q = TheoryParams(alpha=0.0, T=1, B=0.0, L=L, mu=mu, sigma=mixing.sigma).q
    if G is None:
        tracking = float('nan')
        u_q = max(consensus / q[0], gap_scaled / q[1])
    else:
        tracking = (1.0 - mixing.sigma ** 2) / L ** 2 * float(np.sum((G - G.mean(axis=0)) ** 2))
        u_q = max(consensus / q[0], gap_scaled / q[1], tracking / q[2])
    return MetricsRecord(k=k, consensus_err=consensus, opt_gap_raw=gap, opt_gap_scaled=gap_scaled,
                         tracking_err=tracking, u_inf_q=u_q, grad_evals_cumulative=grad_evals)


def run_dgd(problem: FiniteSumProblem, mixing: MixingMatrix, config: BaselineConfig,
            ref: Optional[ReferenceOptimum] = None) -> BaselineResult:
    """x^{k+1} = W x^k - alpha grad f(x^k)"""
    ref = ref or problem.reference
    L, mu = problem.smoothness_constants()
    W = mixing.W
    X = initial_iterates(problem, config.x0_mode, config.x0_seed)
    evals = 0
    records = [_network_record(0, X, None, problem, ref, mixing, L, mu, evals)]
    history = [X.copy()] if config.record_history else []

    for k in range(config.K):
        grads = _stacked_gradients(problem, X)
        evals += sum(problem.m)
        X = W @ X - config.alpha * grads
        _guard(X, k + 1, 'dgd')
        records.append(_network_record(k + 1, X, None, problem, ref, mixing, L, mu, evals))
        if config.record_history:
            history.append(X.copy())
        if config.gap_target is not None and records[-1].opt_gap_raw <= config.gap_target:
            break

    logger.info(f"DGD 완료: k={records[-1].k}, gap={records[-1].opt_gap_raw:.3e}")
    return BaselineResult(method='dgd', records=records, x_final=X, x_history=history)


def run_gradient_tracking(problem: FiniteSumProblem, mixing: MixingMatrix, config: BaselineConfig,
                          ref: Optional[ReferenceOptimum] = None) -> BaselineResult:
    """x^{k+1} = W x^k - alpha g^k,  g^{k+1} = W g^k + grad f(x^{k+1}) - grad f(x^k)"""
    ref = ref or problem.reference
    L, mu = problem.smoothness_constants()
    W = mixing.W
    X = initial_iterates(problem, config.x0_mode, config.x0_seed)
    V = _stacked_gradients(problem, X)
    G = V.copy()
    evals = sum(problem.m)
    records = [_network_record(0, X, G, problem, ref, mixing, L, mu, evals)]
    history = [X.copy()] if config.record_history else []

    for k in range(config.K):
        X = W @ X - config.alpha * G
        V_new = _stacked_gradients(problem, X)
        G = (W @ G + V_new) - V
        V = V_new
        evals += sum(problem.m)
        _guard(X, k + 1, 'gradient_tracking')
        records.append(_network_record(k + 1, X, G, problem, ref, mixing, L, mu, evals))
        if config.record_history:
            history.append(X.copy())
        if (config.gap_target is not None and records[-1].opt_gap_raw <= config.gap_target
                and records[-1].consensus_err <= config.gap_target):
            break

    logger.info(f"기울기 추적 완료: k={records[-1].k}, gap={records[-1].opt_gap_raw:.3e}")
    return BaselineResult(method='gradient_tracking', records=records, x_final=X, x_history=history)


def run_centralized_gd(problem: FiniteSumProblem, config: BaselineConfig,
                       ref: Optional[ReferenceOptimum] = None) -> BaselineResult:
    """x^{k+1} = x^k - alpha grad F(x^k); ref 가 없으면 간격 열은 NaN"""
    L, _ = problem.smoothness_constants()
    x = initial_iterates(problem, config.x0_mode, config.x0_seed).mean(axis=0)
    per_iter = sum(problem.m)

    def record(k: int, evals: int) -> MetricsRecord:
        if ref is None:
            gap = float('nan')
        else:
            gap = max(problem.optimality_gap(x, ref), 0.0)
        return MetricsRecord(k=k, consensus_err=0.0, opt_gap_raw=gap,
                             opt_gap_scaled=2.0 * problem.n / L * gap, tracking_err=0.0,
                             u_inf_q=2.0 * problem.n / L * gap / 10.0, grad_evals_cumulative=evals)

    records = [record(0, 0)]
    history = [x.copy()] if config.record_history else []
    for k in range(config.K):
        x = x - config.alpha * problem.global_gradient(x)
        if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > DIVERGENCE_LIMIT:
            raise DivergenceError(f"중앙집중 경사하강 발산: k={k + 1}, alpha={config.alpha} (2/L={2.0 / L:.3e})")
        records.append(record(k + 1, (k + 1) * per_iter))
        if config.record_history:
            history.append(x.copy())
        if config.gap_target is not None and records[-1].opt_gap_raw <= config.gap_target:
            break

    return BaselineResult(method='centralized_gd', records=records, x_final=x, x_history=history)
