"""
유한합(finite-sum) 로컬 비용 함수와 기울기 오라클, 기준 최적해
"""
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy.linalg import eigvalsh, solve
from scipy.special import expit

from sim_utils import setup_integrated_logging, ProblemError

logger = setup_integrated_logging(__name__)

FAMILIES = ('quadratic', 'ridge_least_squares', 'l2_logistic')
QUADRATIC_FAMILIES = ('quadratic', 'ridge_least_squares')
REFERENCE_TOL = 1e-12


@dataclass
class ReferenceOptimum:
    """중앙집중 기준 최적해 x*"""
    x_star: np.ndarray
    F_star: float
    grad_norm_at_star: float
    iterations: int = 0
    method: str = ""

    def to_dict(self) -> Dict:
        return {
            'x_star': self.x_star.tolist(),
            'F_star': self.F_star,
            'grad_norm_at_star': self.grad_norm_at_star,
            'iterations': self.iterations,
            'method': self.method,
        }


@dataclass
class FiniteSumProblem:
    """노드별 샘플 목록으로 정의된 유한합 문제 f_i = (1/m_i) sum_l f_{i,l}"""
    family: str
    features: List[np.ndarray]
    targets: List[np.ndarray]
    regularizer: float = 0.0
    seed: Optional[int] = None
    _reference: Optional[ReferenceOptimum] = field(default=None, init=False, repr=False)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ProblemError(f"지원하지 않는 문제 유형: {self.family} (가능: {', '.join(FAMILIES)})")
        if len(self.features) != len(self.targets) or len(self.features) == 0:
            raise ProblemError("노드별 특징/목표 목록의 길이가 맞지 않습니다")
        if self.regularizer < 0:
            raise ProblemError(f"정규화 가중치는 음수일 수 없습니다: {self.regularizer}")
        if self.family != 'quadratic' and self.regularizer <= 0:
            raise ProblemError(f"{self.family} 는 양의 정규화 가중치가 필요합니다")

        self.features = [np.atleast_2d(np.asarray(a, dtype=float)) for a in self.features]
        self.targets = [np.asarray(y, dtype=float).reshape(-1) for y in self.targets]
        d = self.features[0].shape[1]
        for i, (a, y) in enumerate(zip(self.features, self.targets)):
            if a.shape[1] != d:
                raise ProblemError(f"노드 {i} 특징 차원 {a.shape[1]} != {d}")
            if a.shape[0] != y.shape[0] or a.shape[0] == 0:
                raise ProblemError(f"노드 {i} 샘플 수 불일치: {a.shape[0]} vs {y.shape[0]}")
            if self.family == 'l2_logistic' and not np.all(np.isin(y, (-1.0, 1.0))):
                raise ProblemError(f"노드 {i} 로지스틱 라벨은 -1 또는 +1 이어야 합니다")

        if self.family in QUADRATIC_FAMILIES:
            # 조립된 평균 헤시안 A_bar 와 선형항 c_bar: F(x) = 1/2 x^T A x - c^T x + const
            self._local_hessians = [a.T @ a / a.shape[0] + self.regularizer * np.eye(d)
                                    for a in self.features]
            self._local_linear = [a.T @ y / a.shape[0] for a, y in zip(self.features, self.targets)]
            self.assembled_hessian = np.mean(self._local_hessians, axis=0)
            self.assembled_linear = np.mean(self._local_linear, axis=0)

    @property
    def n(self) -> int:
        return len(self.features)

    @property
    def d(self) -> int:
        return self.features[0].shape[1]

    @property
    def m(self) -> List[int]:
        return [a.shape[0] for a in self.features]

    def _check_node(self, i: int):
        if not 0 <= i < self.n:
            raise IndexError(f"노드 번호 범위 초과: i={i}, n={self.n}")

    def _check_sample(self, i: int, l: int):
        self._check_node(i)
        if not 0 <= l < self.m[i]:
            raise IndexError(f"샘플 번호 범위 초과: l={l}, m_{i}={self.m[i]}")

    # ===== 샘플 단위 오라클 =====

    def sample_cost(self, i: int, l: int, x: np.ndarray) -> float:
        self._check_sample(i, l)
        return self._batch_cost(i, np.array([l]), x)

    def sample_gradient(self, i: int, l: int, x: np.ndarray) -> np.ndarray:
        """f_{i,l} 의 정확한 기울기"""
        self._check_sample(i, l)
        return self.batch_gradient(i, np.array([l]), x)

    def batch_gradient(self, i: int, S: Sequence[int], x: np.ndarray) -> np.ndarray:
        """(1/|S|) sum_{l in S} grad f_{i,l}(x)"""
        self._check_node(i)
        S = np.asarray(S, dtype=int)
        a = self.features[i][S]
        y = self.targets[i][S]
        if self.family in QUADRATIC_FAMILIES:
            residual = a @ x - y
            grad = a.T @ residual / S.size
        else:
            margin = y * (a @ x)
            grad = -(a.T @ (y * expit(-margin))) / S.size
        return grad + self.regularizer * x

    def _batch_cost(self, i: int, S: np.ndarray, x: np.ndarray) -> float:
        a = self.features[i][S]
        y = self.targets[i][S]
        if self.family in QUADRATIC_FAMILIES:
            losses = 0.5 * (a @ x - y) ** 2
        else:
            losses = np.logaddexp(0.0, -y * (a @ x))
        return float(np.mean(losses) + 0.5 * self.regularizer * float(x @ x))

    # ===== 노드 / 전역 오라클 =====

    def local_cost(self, i: int, x: np.ndarray) -> float:
        self._check_node(i)
        return self._batch_cost(i, np.arange(self.m[i]), x)

    def local_full_gradient(self, i: int, x: np.ndarray) -> np.ndarray:
        """grad f_i(x): 모든 로컬 샘플 기울기의 평균"""
        return self.batch_gradient(i, np.arange(self.m[i]), x)

    def global_objective(self, x: np.ndarray) -> float:
        return float(np.mean([self.local_cost(i, x) for i in range(self.n)]))

    def global_gradient(self, x: np.ndarray) -> np.ndarray:
        return np.mean([self.local_full_gradient(i, x) for i in range(self.n)], axis=0)

    def global_hessian(self, x: np.ndarray) -> np.ndarray:
        if self.family in QUADRATIC_FAMILIES:
            return self.assembled_hessian
        hessians = []
        for a, y in zip(self.features, self.targets):
            s = expit(y * (a @ x))
            weights = s * (1.0 - s)
            hessians.append((a.T * weights) @ a / a.shape[0])
        return np.mean(hessians, axis=0) + self.regularizer * np.eye(self.d)

    def smoothness_constants(self) -> Tuple[float, float]:
        """(L, mu): 샘플 단위 L-평활 상한과 F 의 강볼록 하한"""
        max_sq_norm = max(float(np.max(np.sum(a ** 2, axis=1))) for a in self.features)
        if self.family in QUADRATIC_FAMILIES:
            L = max_sq_norm + self.regularizer
            mu = float(eigvalsh(self.assembled_hessian)[0])
        else:
            L = max_sq_norm / 4.0 + self.regularizer
            mu = self.regularizer

        if not mu > 0:
            raise ProblemError(f"F 가 강볼록이 아닙니다: mu={mu:.3e} (샘플 수/정규화 확인)")
        return L, mu

    def optimality_gap(self, x: np.ndarray, ref: ReferenceOptimum) -> float:
        """F(x) - F(x*); 이차 유형은 1/2 (x-x*)^T A (x-x*) 로 정확히 계산"""
        if self.family in QUADRATIC_FAMILIES:
            delta = x - ref.x_star
            return float(0.5 * delta @ self.assembled_hessian @ delta)
        return self.global_objective(x) - ref.F_star

    @property
    def reference(self) -> ReferenceOptimum:
        if self._reference is None:
            self._reference = solve_reference(self)
        return self._reference


def solve_reference(problem: FiniteSumProblem, tol: float = REFERENCE_TOL,
                    max_iter: int = 100) -> ReferenceOptimum:
    """고정밀 중앙집중 최적해 계산"""
    if problem.family in QUADRATIC_FAMILIES:
        A = problem.assembled_hessian
        x = solve(A, problem.assembled_linear, assume_a='pos')
        iterations = 0
        grad = problem.global_gradient(x)
        # 반복 정밀화
        while np.linalg.norm(grad) > tol and iterations < 5:
            x = x - solve(A, grad, assume_a='pos')
            grad = problem.global_gradient(x)
            iterations += 1
        method = 'linear_solve'
    else:
        # 경사하강으로 초기점을 잡고 뉴턴 단계로 마무리
        from baselines import BaselineConfig, run_centralized_gd

        L, _ = problem.smoothness_constants()
        warm = run_centralized_gd(problem, BaselineConfig(method='centralized_gd', alpha=1.0 / L, K=200))
        x = warm.x_final.copy()
        grad = problem.global_gradient(x)
        iterations = 0
        while np.linalg.norm(grad) > tol and iterations < max_iter:
            step = solve(problem.global_hessian(x), grad, assume_a='pos')
            t = 1.0
            f_x = problem.global_objective(x)
            # 백트래킹 (Armijo)
            while problem.global_objective(x - t * step) > f_x - 1e-4 * t * float(grad @ step) and t > 1e-10:
                t *= 0.5
            x = x - t * step
            grad = problem.global_gradient(x)
            iterations += 1
        method = 'gd_newton'

    grad_norm = float(np.linalg.norm(grad))
    if grad_norm > tol:
        raise ProblemError(f"기준 최적해 수렴 실패: |grad F| = {grad_norm:.3e} > {tol:.0e} ({iterations}회)")

    ref = ReferenceOptimum(x_star=x, F_star=problem.global_objective(x),
                           grad_norm_at_star=grad_norm, iterations=iterations, method=method)
    logger.info(f"✅ 기준 최적해 계산 완료: F*={ref.F_star:.12g}, |grad|={grad_norm:.2e} ({method})")
    return ref


def generate_problem(family: str, n: int, m: Union[int, Sequence[int]], d: int,
                     seed: int = 0, regularizer: Optional[float] = None,
                     heterogeneity: float = 1.0, noise: float = 0.1) -> FiniteSumProblem:
    """시드 고정 합성 데이터로 문제 생성"""
    if family not in FAMILIES:
        raise ProblemError(f"지원하지 않는 문제 유형: {family}")
    sizes = [int(m)] * n if np.isscalar(m) else [int(v) for v in m]
    if len(sizes) != n:
        raise ProblemError(f"m_i 목록 길이 {len(sizes)} != n={n}")
    if regularizer is None:
        regularizer = 0.0 if family == 'quadratic' else 0.01

    rng = np.random.default_rng(seed)
    w_common = rng.normal(size=d)
    features, targets = [], []
    for m_i in sizes:
        # 노드 간 이질성: 노드별 기준 모델을 공통 모델 주변에서 흔듦
        w_node = w_common + heterogeneity * rng.normal(size=d)
        a = rng.normal(size=(m_i, d)) / np.sqrt(d)
        if family in QUADRATIC_FAMILIES:
            y = a @ w_node + noise * rng.normal(size=m_i)
        else:
            y = np.where(a @ w_node + noise * rng.normal(size=m_i) >= 0.0, 1.0, -1.0)
        features.append(a)
        targets.append(y)

    problem = FiniteSumProblem(family=family, features=features, targets=targets,
                               regularizer=float(regularizer), seed=seed)
    logger.info(f"문제 생성: {family}, n={n}, d={d}, m={sizes[0] if len(set(sizes)) == 1 else sizes}")
    return problem


def initial_iterates(problem: FiniteSumProblem, mode: str = 'zeros', seed: int = 0,
                     scale: float = 1.0) -> np.ndarray:
    """x^0 (n x d): zeros / consensual(모든 노드 동일 난수) / random(노드별 난수)"""
    if mode == 'zeros':
        return np.zeros((problem.n, problem.d))
    rng = np.random.default_rng(seed)
    if mode == 'consensual':
        return np.tile(scale * rng.normal(size=problem.d), (problem.n, 1))
    if mode == 'random':
        return scale * rng.normal(size=(problem.n, problem.d))
    raise ProblemError(f"지원하지 않는 x0 모드: {mode}")


def export_csv(problem: FiniteSumProblem, path: str) -> None:
    """샘플당 한 줄: node, f0..f{d-1}, target"""
    frames = []
    for i, (a, y) in enumerate(zip(problem.features, problem.targets)):
        frame = pd.DataFrame(a, columns=[f"f{j}" for j in range(problem.d)])
        frame.insert(0, 'node', i)
        frame['target'] = y
        frames.append(frame)
    pd.concat(frames, ignore_index=True).to_csv(path, index=False, float_format='%.17g')


def load_csv(path: str, family: str, regularizer: float = 0.0) -> FiniteSumProblem:
    df = pd.read_csv(path)
    feature_cols = [c for c in df.columns if c.startswith('f')]
    features, targets = [], []
    for _, group in df.groupby('node', sort=True):
        features.append(group[feature_cols].to_numpy(dtype=float))
        targets.append(group['target'].to_numpy(dtype=float))
    return FiniteSumProblem(family=family, features=features, targets=targets, regularizer=regularizer)
