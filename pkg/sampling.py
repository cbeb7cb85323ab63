"""
비복원 미니배치 추출, SVRG 보정 확률 기울기, 스냅샷 주기 관리
"""
import hashlib
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from problems import FiniteSumProblem
from sim_utils import setup_integrated_logging, ConfigError, StaleSnapshotError

logger = setup_integrated_logging(__name__)


def _snapshot_tag(tau: np.ndarray) -> str:
    return hashlib.blake2b(np.ascontiguousarray(tau).tobytes(), digest_size=16).hexdigest()


def non_sampling_rate(m: Sequence[int], b: Sequence[int]) -> float:
    """B = max_i (m_i - b_i) / ((m_i - 1) b_i); 전체 배치 노드는 0"""
    if len(m) != len(b) or len(m) == 0:
        raise ConfigError(f"m, b 목록 길이가 맞지 않습니다: {len(m)} vs {len(b)}")
    rates = []
    for m_i, b_i in zip(m, b):
        if not 1 <= b_i <= m_i:
            raise ConfigError(f"배치 크기는 1 <= b <= m 이어야 합니다: b={b_i}, m={m_i}")
        if b_i == m_i:
            rates.append(0.0)
            continue
        rates.append((m_i - b_i) / ((m_i - 1) * b_i))
    return float(max(rates))


@dataclass
class SamplerConfig:
    """노드별 배치 크기, 스냅샷 주기 T, 실험 시드"""
    batch_sizes: List[int]
    T: int
    seed: int = 0

    def validate(self, m: Sequence[int]) -> None:
        if self.T < 1:
            raise ConfigError(f"스냅샷 주기 T 는 양의 정수여야 합니다: T={self.T}")
        if len(self.batch_sizes) != len(m):
            raise ConfigError(f"배치 크기 {len(self.batch_sizes)}개 != 노드 {len(m)}개")
        for i, (b_i, m_i) in enumerate(zip(self.batch_sizes, m)):
            if not 1 <= b_i <= m_i:
                raise ConfigError(f"노드 {i}: 배치 크기 b={b_i} 가 범위 [1, {m_i}] 밖입니다")

    def B(self, m: Sequence[int]) -> float:
        return non_sampling_rate(m, self.batch_sizes)


@dataclass
class SvrgState:
    """노드별 SVRG 스냅샷 상태"""
    tau: np.ndarray
    full_grad_at_tau: np.ndarray
    last_v: np.ndarray
    tag: str = field(default="")

    @classmethod
    def at(cls, problem: FiniteSumProblem, i: int, tau: np.ndarray,
           last_v: Optional[np.ndarray] = None,
           full_grad: Optional[np.ndarray] = None) -> 'SvrgState':
        tau = np.array(tau, dtype=float)
        if full_grad is None:
            full_grad = problem.local_full_gradient(i, tau)
        return cls(tau=tau, full_grad_at_tau=full_grad,
                   last_v=full_grad.copy() if last_v is None else last_v,
                   tag=_snapshot_tag(tau))

    def check(self) -> None:
        if self.tag != _snapshot_tag(self.tau):
            raise StaleSnapshotError("스냅샷 지점이 바뀌었지만 스냅샷 기울기가 재계산되지 않았습니다")


def draw_batch(rng: np.random.Generator, m: int, b: int) -> np.ndarray:
    """부분 Fisher-Yates 로 b 개 비복원 추출 (정렬된 인덱스 반환)"""
    if not 1 <= b <= m:
        raise ValueError(f"배치 크기는 1 <= b <= m 이어야 합니다: b={b}, m={m}")
    if b == m:
        return np.arange(m)

    idx = np.arange(m)
    for j in range(b):
        r = j + int(rng.integers(m - j))
        idx[j], idx[r] = idx[r], idx[j]
    return np.sort(idx[:b])


def svrg_gradient(problem: FiniteSumProblem, i: int, x: np.ndarray,
                  state: SvrgState, S: np.ndarray) -> np.ndarray:
    """v = (1/b) sum_{l in S} (grad f_{i,l}(x) - grad f_{i,l}(tau)) + grad f_i(tau)"""
    state.check()
    if len(S) == problem.m[i]:
        return problem.local_full_gradient(i, x)
    correction = problem.batch_gradient(i, S, x) - problem.batch_gradient(i, S, state.tau)
    return correction + state.full_grad_at_tau


def is_refresh(k_plus_1: int, T: int) -> bool:
    return k_plus_1 % T == 0


def advance_snapshot(k_plus_1: int, T: int, x_new: np.ndarray, state: SvrgState,
                     problem: FiniteSumProblem, i: int) -> Tuple[SvrgState, bool]:
    """(k+1) mod T == 0 이면 tau <- x^{k+1} 로 교체하고 전체 기울기 재계산"""
    if k_plus_1 < 1:
        raise ValueError(f"k+1 은 1 이상이어야 합니다: {k_plus_1}")
    if not is_refresh(k_plus_1, T):
        return state, False
    return SvrgState.at(problem, i, x_new, last_v=state.last_v), True
