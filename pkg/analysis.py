"""
수렴 이론 수치 검증 - 오차 벡터 u^k, 가중 무한 노름, 파라미터 게이트,
축약 행렬 J / H 와 벡터 z / q, 수렴률 인증서, 에폭 축약 비율
"""
import math
from dataclasses import dataclass, field, asdict
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd
from scipy.linalg import det as matrix_det, eigvals, solve

from sim_utils import setup_integrated_logging

logger = setup_integrated_logging(__name__)

# 수렴 정리에 인쇄된 상수 (위치 설명 -> 값)
CONSTANTS: Dict[str, float] = {
    'step_size_denominator': 200.0,        # alpha 상한 분모
    'sampling_bound_scale': 1.0 / 160.0,   # B 상한 계수
    'period_log_numerator': 280.0,         # T 하한 로그 안 분자
    'beta_per_B': 16.0,                    # beta = 16 B
    'c_zeta_coeff': 0.162,                 # c 의 (1-sigma^2) zeta alpha~ 계수
    'c_beta_coeff': 2.01,                  # c 의 beta 계수
    'J_diag_consensus': 0.99,              # J[0,0], J[2,2] 의 (1-sigma^2)/2 계수
    'J_01': 0.011,
    'J_02': 0.02,
    'J_10': 4.1,
    'J_11': 0.96,
    'J_12': 0.51,
    'J_20': 33.0,
    'H_row0': 0.01,
    'H_row1': 0.03,
    'H_row2': 2.03,
    'z2_base': 10.0,
    'z2_gamma': 1.2,
    'z3_scale': 200.0,
    'q2': 10.0,
    'q3_scale': 200.0,
    'det_divisor': 6.0,                    # det(I - J) 하한 분모
    'resolvent_bound': 0.8,                # (I - J)^{-1} H q <= 0.8 q
    'epoch_prefactor': 28.0,               # z <= 28/(zeta(1-sigma^2)^2) q
    'epoch_rate': 0.9,                     # 에폭당 축약률
}

ALPHA_REL_TOL = 1e-12
EPOCH_TOL = 1e-12
CONVERGED = 'converged'


@dataclass
class TheoryParams:
    """게이트/인증서 입력 파라미터와 파생 상수"""
    alpha: float
    T: int
    B: float
    L: float
    mu: float
    sigma: float
    M1: float = 1.0
    M2: float = 1.0

    @property
    def kappa_F(self) -> float:
        return self.L / self.mu

    @property
    def kappa_H(self) -> float:
        return self.M2 / self.M1

    @property
    def one_minus_sigma2(self) -> float:
        return 1.0 - self.sigma ** 2

    @property
    def zeta(self) -> float:
        return (self.mu / self.L) ** 2 * (self.M1 / self.M2) ** 2

    @property
    def gamma(self) -> float:
        return 1.0 - self.M1 / self.M2

    @property
    def alpha_tilde(self) -> float:
        return self.M2 ** 2 * self.L ** 2 / (self.M1 * self.mu) * self.alpha

    @property
    def beta(self) -> float:
        return CONSTANTS['beta_per_B'] * self.B

    @property
    def c(self) -> float:
        return (CONSTANTS['c_zeta_coeff'] * self.one_minus_sigma2 * self.zeta * self.alpha_tilde
                + CONSTANTS['c_beta_coeff'] * self.beta)

    @property
    def q(self) -> np.ndarray:
        return np.array([1.0, CONSTANTS['q2'],
                         CONSTANTS['q3_scale'] * (self.zeta + self.beta) / self.one_minus_sigma2])

    @property
    def z(self) -> np.ndarray:
        s = self.one_minus_sigma2
        z3 = CONSTANTS['z3_scale'] * (self.zeta + self.beta) / (self.zeta * s)
        z2 = CONSTANTS['z2_base'] / self.zeta + CONSTANTS['z2_gamma'] * self.gamma ** 2 * z3 / (self.zeta * s)
        return np.array([1.0, z2, z3])

    def to_dict(self) -> Dict:
        data = asdict(self)
        data.update({
            'kappa_F': self.kappa_F, 'kappa_H': self.kappa_H, 'zeta': self.zeta,
            'gamma': self.gamma, 'alpha_tilde': self.alpha_tilde, 'beta': self.beta, 'c': self.c,
        })
        return data


@dataclass
class ErrorVector:
    """u^k = (합의 오차, 스케일된 최적성 간격, 스케일된 추적 오차)"""
    consensus_err: float
    opt_gap_raw: float
    opt_gap_scaled: float
    tracking_err: float

    def as_array(self) -> np.ndarray:
        return np.array([self.consensus_err, self.opt_gap_scaled, self.tracking_err])

    def inf_q(self, q: np.ndarray) -> float:
        return weighted_inf_norm(self.as_array(), q)


def weighted_inf_norm(a: Sequence[float], z: Sequence[float]) -> float:
    """||a||_inf^z = max_i |a_i| / z_i"""
    a = np.asarray(a, dtype=float)
    z = np.asarray(z, dtype=float)
    if np.any(z <= 0):
        raise ValueError("가중 벡터 z 는 양수여야 합니다")
    return float(np.max(np.abs(a) / z))


def weighted_matrix_norm(A: np.ndarray, z: Sequence[float]) -> float:
    """유도 노름 ||A||_inf^z = max_i (|A| z)_i / z_i"""
    z = np.asarray(z, dtype=float)
    return float(np.max((np.abs(A) @ z) / z))


def error_vector_from_arrays(X: np.ndarray, G: np.ndarray, problem, ref, sigma: float,
                             L: Optional[float] = None) -> ErrorVector:
    """적층 배열 X, G (n x d) 로부터 u^k 계산 (실현값)"""
    if L is None:
        L, _ = problem.smoothness_constants()
    n = X.shape[0]
    xbar = X.mean(axis=0)
    consensus = float(np.sum((X - xbar) ** 2))
    gap = max(problem.optimality_gap(xbar, ref), 0.0)
    tracking = (1.0 - sigma ** 2) / L ** 2 * float(np.sum((G - G.mean(axis=0)) ** 2))
    return ErrorVector(consensus_err=consensus, opt_gap_raw=gap,
                       opt_gap_scaled=2.0 * n / L * gap, tracking_err=tracking)


def error_vector(network, problem, ref, sigma: float, L: Optional[float] = None) -> ErrorVector:
    return error_vector_from_arrays(network.X, network.G, problem, ref, sigma, L)


def max_step_size(L: float, mu: float, sigma: float, M1: float = 1.0, M2: float = 1.0) -> float:
    """alpha <= (1-sigma^2)^2 mu M1 / (200 L^2 M2^2)"""
    return (1.0 - sigma ** 2) ** 2 * mu * M1 / (CONSTANTS['step_size_denominator'] * L ** 2 * M2 ** 2)


def sampling_rate_bound(params: TheoryParams) -> float:
    """B <= (1/160) min{1, zeta (1-sigma^2)^2 / gamma^2}; gamma = 0 이면 1/160"""
    if params.gamma == 0.0:
        return CONSTANTS['sampling_bound_scale']
    ratio = params.zeta * params.one_minus_sigma2 ** 2 / params.gamma ** 2
    return CONSTANTS['sampling_bound_scale'] * min(1.0, ratio)


def period_floor(params: TheoryParams) -> int:
    """T >= 2 log(280 / (zeta (1-sigma^2)^2)) / (zeta alpha~) 의 정수 하한"""
    zeta = params.zeta
    log_term = math.log(CONSTANTS['period_log_numerator'] / (zeta * params.one_minus_sigma2 ** 2))
    return int(math.ceil(2.0 * log_term / (zeta * params.alpha_tilde)))


@dataclass
class GateReport:
    """선형 수렴 파라미터 조건 (alpha, B, T) 판정"""
    conditions: Dict[str, Dict] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(item['passed'] for item in self.conditions.values())

    def failures(self) -> List[str]:
        return [name for name, item in self.conditions.items() if not item['passed']]

    def to_dict(self) -> Dict:
        return {'passed': self.passed, 'conditions': self.conditions}


def check_rate_conditions(params: TheoryParams) -> GateReport:
    """step size / 비샘플링률 / 스냅샷 주기 조건 검사 (실패해도 예외 없이 보고)"""
    report = GateReport()

    alpha_max = max_step_size(params.L, params.mu, params.sigma, params.M1, params.M2)
    report.conditions['alpha'] = {
        'passed': 0.0 < params.alpha <= alpha_max * (1.0 + ALPHA_REL_TOL),
        'value': params.alpha,
        'bound': alpha_max,
    }

    B_max = sampling_rate_bound(params)
    report.conditions['B'] = {
        'passed': params.B <= B_max,
        'value': params.B,
        'bound': B_max,
    }

    if params.alpha > 0:
        T_min = period_floor(params)
        report.conditions['T'] = {'passed': params.T >= T_min, 'value': params.T, 'bound': T_min}
    else:
        report.conditions['T'] = {'passed': False, 'value': params.T, 'bound': None}

    if not report.passed:
        logger.warning(f"⚠️ 파라미터 조건 미충족: {', '.join(report.failures())}")
    return report


@dataclass
class ContractionSet:
    J: np.ndarray
    H: np.ndarray
    z: np.ndarray
    q: np.ndarray
    I_minus_J: np.ndarray


def contraction_matrices(params: TheoryParams) -> ContractionSet:
    """J_{alpha,beta}, H_{alpha,beta}, z, q (인쇄된 항목 그대로)"""
    s = params.one_minus_sigma2
    zeta, at, gamma, beta, c = params.zeta, params.alpha_tilde, params.gamma, params.beta, params.c
    k = CONSTANTS

    diag_gap = k['J_diag_consensus'] * s / 2.0
    off = np.array([
        [0.0, k['J_01'] * s * zeta * at * gamma ** 2, k['J_02'] * zeta * at],
        [k['J_10'] * at, 0.0, k['J_12'] * at * gamma ** 2 / s],
        [k['J_20'], c, 0.0],
    ])
    # I - J 는 대각을 상쇄 없이 직접 구성 (alpha~ 가 매우 작을 때 1 - 작은수 반올림 방지)
    I_minus_J = np.diag([diag_gap, k['J_11'] * zeta * at, diag_gap]) - off
    J = off + np.diag([1.0 - diag_gap, 1.0 - k['J_11'] * zeta * at, 1.0 - diag_gap])

    h0 = k['H_row0'] * at * beta * gamma ** 2 * s
    h1 = k['H_row1'] * at * zeta * s ** 2
    h2 = k['H_row2'] * beta
    H = np.array([[h0, h0, 0.0], [h1, h1, 0.0], [h2, h2, 0.0]])

    return ContractionSet(J=J, H=H, z=params.z, q=params.q, I_minus_J=I_minus_J)


def period_order(kappa_F: float, kappa_H: float, sigma: float) -> float:
    """스냅샷 주기 차수 kappa_F^2 kappa_H^2 log(kappa_F kappa_H / (1-sigma^2)) / (1-sigma^2)^2"""
    s = 1.0 - sigma ** 2
    return kappa_F ** 2 * kappa_H ** 2 * math.log(kappa_F * kappa_H / s) / s ** 2


def gradient_complexity_bound(m_max: int, b_max: int, kappa_F: float, kappa_H: float,
                              sigma: float, eps: float) -> float:
    """eps 정확도까지의 확률 기울기 계산 횟수 차수 (상수 1)"""
    return (m_max + b_max * period_order(kappa_F, kappa_H, sigma)) * math.log(1.0 / eps)


@dataclass
class RateCertificate:
    params: TheoryParams
    gate: GateReport
    checks: Dict[str, Dict]
    spectral_radius_J: float
    weighted_norm_J: float
    epoch_factor: float
    informational: Dict[str, float] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(item['passed'] for item in self.checks.values())

    @property
    def discrepancy(self) -> bool:
        """게이트를 통과했는데 검사가 실패한 경우"""
        return self.gate.passed and not self.passed

    def to_dict(self) -> Dict:
        return {
            'passed': self.passed,
            'discrepancy': self.discrepancy,
            'params': self.params.to_dict(),
            'gate': self.gate.to_dict(),
            'checks': self.checks,
            'spectral_radius_J': self.spectral_radius_J,
            'weighted_norm_J': self.weighted_norm_J,
            'epoch_factor': self.epoch_factor,
            'informational': self.informational,
        }


def _entrywise_check(lhs: np.ndarray, rhs: np.ndarray) -> Dict:
    violated = [int(i) for i in np.flatnonzero(lhs > rhs)]
    return {'passed': not violated, 'lhs': lhs.tolist(), 'rhs': rhs.tolist(), 'violated_entries': violated}


def certify_rate(params: TheoryParams, m_max: Optional[int] = None,
                 b_max: Optional[int] = None, eps: float = 1e-10) -> RateCertificate:
    """행렬 수준 수렴 주장 네 가지를 수치 검증"""
    gate = check_rate_conditions(params)
    cs = contraction_matrices(params)
    s, zeta, at = params.one_minus_sigma2, params.zeta, params.alpha_tilde
    checks: Dict[str, Dict] = {}

    # (i) J z <= (1 - zeta alpha~/2) z  <=>  (I - J) z >= (zeta alpha~/2) z
    checks['J_z_contraction'] = _entrywise_check(0.5 * zeta * at * cs.z, cs.I_minus_J @ cs.z)

    # (ii) det(I - J) >= (1-sigma^2)^2 zeta alpha~ / 6
    det = float(matrix_det(cs.I_minus_J))
    det_bound = s ** 2 * zeta * at / CONSTANTS['det_divisor']
    checks['determinant'] = {'passed': det >= det_bound, 'lhs': det, 'rhs': det_bound, 'violated_entries': []}

    # (iii) (I - J)^{-1} H q <= 0.8 q
    if det > 0:
        resolvent_q = solve(cs.I_minus_J, cs.H @ cs.q)
        checks['resolvent'] = _entrywise_check(resolvent_q, CONSTANTS['resolvent_bound'] * cs.q)
        checks['resolvent']['weighted_norm'] = weighted_inf_norm(resolvent_q, cs.q)
    else:
        checks['resolvent'] = {'passed': False, 'lhs': None, 'rhs': None, 'violated_entries': [0, 1, 2]}

    # (iv) 28/(zeta(1-sigma^2)^2) exp(-zeta alpha~ T/2) + 0.8 <= 0.9
    factor = (CONSTANTS['epoch_prefactor'] / (zeta * s ** 2) * math.exp(-zeta * at * params.T / 2.0)
              + CONSTANTS['resolvent_bound'])
    checks['epoch_factor'] = {'passed': factor <= CONSTANTS['epoch_rate'] + EPOCH_TOL,
                              'lhs': factor, 'rhs': CONSTANTS['epoch_rate'], 'violated_entries': []}

    informational = {'period_order': period_order(params.kappa_F, params.kappa_H, params.sigma)}
    if m_max is not None and b_max is not None:
        informational['gradient_complexity_bound'] = gradient_complexity_bound(
            m_max, b_max, params.kappa_F, params.kappa_H, params.sigma, eps)

    cert = RateCertificate(
        params=params, gate=gate, checks=checks,
        spectral_radius_J=float(np.max(np.abs(eigvals(cs.J)))),
        weighted_norm_J=weighted_matrix_norm(cs.J, cs.z),
        epoch_factor=factor,
        informational=informational,
    )

    for name, item in checks.items():
        if item['passed']:
            continue
        if gate.passed:
            logger.error(f"❌ 이론-구현 불일치: {name} 검사 실패 (위반 항목 {item['violated_entries']}, "
                         f"lhs={item['lhs']}, rhs={item['rhs']})")
        else:
            logger.warning(f"⚠️ {name} 검사 실패 (게이트 미충족 구성)")
    return cert


@dataclass
class EpochContraction:
    """에폭별 ||u^{(t+1)T}||_q / ||u^{tT}||_q"""
    ratios: List[Union[float, str]]
    norms: List[float]
    threshold: float
    flagged: List[int]

    def numeric_ratios(self) -> List[float]:
        return [r for r in self.ratios if r != CONVERGED]

    def to_dict(self) -> Dict:
        return asdict(self)


def _stream_array(stream) -> np.ndarray:
    if isinstance(stream, pd.DataFrame):
        return stream[['consensus_err', 'opt_gap_scaled', 'tracking_err']].to_numpy(dtype=float)
    if len(stream) and isinstance(stream[0], ErrorVector):
        return np.array([u.as_array() for u in stream])
    return np.asarray(stream, dtype=float)


def epoch_contraction(stream, T: int, q: Sequence[float], threshold: float = 0.9,
                      floor: float = 0.0) -> EpochContraction:
    """
    u^k 흐름(k = 0, 1, ...)에서 에폭 경계마다 가중 노름 비율 계산.
    시작 노름이 floor 이하인 에폭은 CONVERGED 로 표시한다.
    """
    u = _stream_array(stream)
    if T < 1 or u.shape[0] < T + 1:
        raise ValueError(f"에폭 비율에는 최소 T+1={T + 1}개 항목이 필요합니다 (현재 {u.shape[0]})")

    boundaries = list(range(0, u.shape[0], T))
    norms = [weighted_inf_norm(u[k], q) for k in boundaries]
    ratios: List[Union[float, str]] = []
    flagged = []
    for t in range(len(norms) - 1):
        start, end = norms[t], norms[t + 1]
        if start <= floor:
            ratios.append(CONVERGED)
            continue
        ratio = end / start
        ratios.append(ratio)
        if ratio > threshold:
            flagged.append(t)

    if flagged:
        logger.warning(f"⚠️ 축약 기준 {threshold} 초과 에폭: {flagged}")
    return EpochContraction(ratios=ratios, norms=norms, threshold=threshold, flagged=flagged)


def network_diagnostics(network, problem, prev_xbar: np.ndarray, prev_dbar: np.ndarray,
                        alpha: float,
                        L: Optional[float] = None) -> Dict[str, float]:
    """평균 보존, 평균 동역학, 이질성 상한 잔차"""
    X, G, V = network.X, network.G, network.V
    n = X.shape[0]
    if L is None:
        L, _ = problem.smoothness_constants()

    vbar = V.mean(axis=0)
    gbar = G.mean(axis=0)
    xbar = X.mean(axis=0)

    avg_preservation = float(np.linalg.norm(gbar - vbar) / (1.0 + np.linalg.norm(vbar)))
    avg_dynamics = float(np.linalg.norm(xbar - (prev_xbar - alpha * prev_dbar)))

    local_mean = np.mean([problem.local_full_gradient(i, X[i]) for i in range(n)], axis=0)
    lhs = float(np.linalg.norm(local_mean - problem.global_gradient(xbar)))
    rhs = L / math.sqrt(n) * float(np.linalg.norm(X - xbar))

    return {
        'avg_preservation': avg_preservation,
        'avg_dynamics': avg_dynamics,
        'heterogeneity_residual': lhs - rhs,
    }
