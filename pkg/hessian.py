"""
헤시안 역행렬 근사 전략

모든 전략은 노드 자신의 (x, g) 이력만 사용하며, 출력 H 는 대칭이고
고유값이 [M1, M2] 안에 있어야 한다. 후보 행렬이 경계를 벗어나면
eigenvalue_clip 으로 투영한다.
"""
from typing import Optional, Tuple

import numpy as np
from scipy.linalg import eigh, eigvalsh

from sim_utils import setup_integrated_logging, AssumptionViolation, ConfigError

logger = setup_integrated_logging(__name__)

HESSIAN_BOUND_TOL = 1e-10
SYMMETRY_TOL = 1e-12
STRATEGIES = ('identity', 'scaled_identity', 'clipped_secant')
DEFAULT_M1 = 0.1
DEFAULT_M2 = 10.0


def eigenvalue_clip(H: np.ndarray, M1: float, M2: float) -> np.ndarray:
    """고유벡터는 유지하고 고유값만 [M1, M2] 로 잘라낸 대칭 행렬"""
    H = np.asarray(H, dtype=float)
    if not np.allclose(H, H.T, rtol=0.0, atol=SYMMETRY_TOL):
        raise AssumptionViolation('symmetry', f"비대칭 후보 행렬: max |H - H^T| = {np.abs(H - H.T).max():.3e}")

    eigenvalues, eigenvectors = eigh(H)
    if eigenvalues[0] >= M1 and eigenvalues[-1] <= M2:
        return H.copy()

    clipped = np.clip(eigenvalues, M1, M2)
    out = (eigenvectors * clipped) @ eigenvectors.T
    return 0.5 * (out + out.T)


def verify_hessian_bounds(H: np.ndarray, M1: float, M2: float, tol: float = HESSIAN_BOUND_TOL) -> bool:
    """M1 I <= H <= M2 I (허용오차 tol)"""
    eigenvalues = eigvalsh(H)
    return bool(eigenvalues[0] >= M1 - tol and eigenvalues[-1] <= M2 + tol)


def spectrum_range(H: np.ndarray) -> Tuple[float, float]:
    eigenvalues = eigvalsh(H)
    return float(eigenvalues[0]), float(eigenvalues[-1])


class HessianApprox:
    """헤시안 역행렬 근사 전략의 기본 클래스 (노드당 인스턴스 하나)"""
    name = 'base'

    def __init__(self, dim: int, M1: float = DEFAULT_M1, M2: float = DEFAULT_M2):
        if not 0 < M1 <= M2 < np.inf:
            raise ConfigError(f"헤시안 경계는 0 < M1 <= M2 < inf 이어야 합니다: M1={M1}, M2={M2}")
        self.dim = dim
        self.M1 = float(M1)
        self.M2 = float(M2)
        self._H = self.initial_matrix()

    def initial_matrix(self) -> np.ndarray:
        return np.eye(self.dim)

    def reset(self, x0: np.ndarray, g0: np.ndarray) -> None:
        self._H = self.initial_matrix()

    def update(self, x: np.ndarray, g: np.ndarray) -> np.ndarray:
        raise NotImplementedError()

    def get_mat(self) -> np.ndarray:
        return self._H

    def direction(self, H: np.ndarray, g: np.ndarray) -> np.ndarray:
        """d = H g"""
        return H @ g

    def theory_bounds(self) -> Tuple[float, float]:
        """이론 상수 계산에 쓰는 (M1, M2)"""
        return self.M1, self.M2

    @property
    def kappa_H(self) -> float:
        M1, M2 = self.theory_bounds()
        return M2 / M1

    @property
    def gamma(self) -> float:
        M1, M2 = self.theory_bounds()
        return 1.0 - M1 / M2


class IdentityApprox(HessianApprox):
    """H = I (gamma = 0)"""
    name = 'identity'

    def __init__(self, dim: int, M1: float = 1.0, M2: float = 1.0):
        super().__init__(dim, M1=1.0, M2=1.0)

    def update(self, x, g):
        return self._H

    def direction(self, H, g):
        return g.copy()


class ScaledIdentityApprox(HessianApprox):
    """H = c I, c 는 [M1, M2] 안"""
    name = 'scaled_identity'

    def __init__(self, dim: int, M1: float = DEFAULT_M1, M2: float = DEFAULT_M2, scale: float = 1.0):
        if not M1 <= scale <= M2:
            raise ConfigError(f"스케일 c={scale} 가 [M1, M2] = [{M1}, {M2}] 밖입니다")
        self.scale = float(scale)
        super().__init__(dim, M1, M2)

    def initial_matrix(self):
        return self.scale * np.eye(self.dim)

    def update(self, x, g):
        return self._H

    def theory_bounds(self):
        return self.scale, self.scale


class ClippedSecantApprox(HessianApprox):
    """
    연속된 (x, g) 차분으로 만든 역-BFGS 후보를 고유값 절단으로 [M1, M2] 에 투영.
    곡률 조건 s^T y > eps |s| |y| 이 깨지면 갱신을 건너뛴다.
    """
    name = 'clipped_secant'

    def __init__(self, dim: int, M1: float = DEFAULT_M1, M2: float = DEFAULT_M2,
                 curvature_eps: float = 1e-8):
        self.curvature_eps = curvature_eps
        self._x_prev: Optional[np.ndarray] = None
        self._g_prev: Optional[np.ndarray] = None
        self.skipped = 0
        super().__init__(dim, M1, M2)

    def initial_matrix(self):
        return eigenvalue_clip(np.eye(self.dim), self.M1, self.M2)

    def reset(self, x0, g0):
        super().reset(x0, g0)
        self._x_prev = np.array(x0, dtype=float)
        self._g_prev = np.array(g0, dtype=float)
        self.skipped = 0

    def update(self, x, g):
        if self._x_prev is None:
            self.reset(x, g)
            return self._H

        s = x - self._x_prev
        y = g - self._g_prev
        self._x_prev = np.array(x, dtype=float)
        self._g_prev = np.array(g, dtype=float)

        sy = float(s @ y)
        if sy <= self.curvature_eps * np.linalg.norm(s) * np.linalg.norm(y) or sy <= 0.0:
            self.skipped += 1
            return self._H

        rho = 1.0 / sy
        left = np.eye(self.dim) - rho * np.outer(s, y)
        candidate = left @ self._H @ left.T + rho * np.outer(s, s)
        candidate = 0.5 * (candidate + candidate.T)
        self._H = eigenvalue_clip(candidate, self.M1, self.M2)
        return self._H


def make_strategy(name: str, dim: int, M1: float = DEFAULT_M1, M2: float = DEFAULT_M2,
                  scale: float = 1.0) -> HessianApprox:
    """설정 이름으로 전략 인스턴스 생성"""
    if name == 'identity':
        return IdentityApprox(dim)
    if name == 'scaled_identity':
        return ScaledIdentityApprox(dim, M1, M2, scale=scale)
    if name == 'clipped_secant':
        return ClippedSecantApprox(dim, M1, M2)
    raise ConfigError(f"지원하지 않는 헤시안 전략: {name} (가능: {', '.join(STRATEGIES)})")
