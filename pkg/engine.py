"""
분산 확률적 준뉴턴 반복 엔진 (동기 배리어, 노드별 상태)

한 반복의 순서:
  1) x^{k+1} = W x^k - alpha d^k
  2) 미니배치 추출 후 스냅샷 일정 적용
  3) v^{k+1} (SVRG 보정 기울기)
  4) g^{k+1} = W g^k + v^{k+1} - v^k
  5) H^{k+1} 구성
  6) d^{k+1} = H^{k+1} g^{k+1}
"""
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from analysis import (TheoryParams, GateReport, check_rate_conditions, error_vector,
                      network_diagnostics)
from hessian import HessianApprox, make_strategy, verify_hessian_bounds, spectrum_range
from metrics_recorder import MetricsRecord, run_summary
from problems import FiniteSumProblem, ReferenceOptimum, initial_iterates
from sampling import (SamplerConfig, SvrgState, advance_snapshot, draw_batch,
                      non_sampling_rate, svrg_gradient)
from sim_utils import (setup_integrated_logging, node_rng, ConfigError, ProblemError,
                       AssumptionViolation, GateError, DivergenceError)
from topology import MixingMatrix

logger = setup_integrated_logging(__name__)

DIVERGENCE_LIMIT = 1e12


@dataclass
class EngineConfig:
    """엔진 실행 파라미터 (설정 파일의 algorithm / run 블록에서 채워짐)"""
    alpha: float
    T: int
    batch_sizes: List[int]
    strategy: str = 'identity'
    M1: float = 0.1
    M2: float = 10.0
    scale: float = 1.0
    x0_mode: str = 'zeros'
    x0_seed: int = 0
    x0: Optional[np.ndarray] = None
    seed: int = 0
    max_iter: int = 1000
    gap_target: Optional[float] = None
    strict: bool = False
    workers: int = 1
    log_every: int = 1000
    record_states: bool = False
    record_iterates: bool = False
    diagnostics: bool = False
    log_hessian_spectrum: bool = False

    def sampler(self) -> SamplerConfig:
        return SamplerConfig(batch_sizes=list(self.batch_sizes), T=self.T, seed=self.seed)


@dataclass
class NodeState:
    """노드 i 의 반복 상태"""
    x: np.ndarray
    g: np.ndarray
    v: np.ndarray
    dirn: np.ndarray
    svrg: SvrgState
    happrox: HessianApprox
    rng: np.random.Generator
    last_H: Optional[np.ndarray] = None
    grad_evals: int = 0


@dataclass
class Network:
    nodes: List[NodeState]
    k: int = 0

    @property
    def n(self) -> int:
        return len(self.nodes)

    @property
    def X(self) -> np.ndarray:
        return np.vstack([node.x for node in self.nodes])

    @property
    def G(self) -> np.ndarray:
        return np.vstack([node.g for node in self.nodes])

    @property
    def V(self) -> np.ndarray:
        return np.vstack([node.v for node in self.nodes])

    @property
    def D(self) -> np.ndarray:
        return np.vstack([node.dirn for node in self.nodes])

    @property
    def grad_evals_total(self) -> int:
        return int(sum(node.grad_evals for node in self.nodes))

    def rng_states(self) -> List[Dict]:
        return [node.rng.bit_generator.state for node in self.nodes]


@dataclass
class IterationTranscript:
    """추가만 가능한 실행 기록"""
    records: List[MetricsRecord] = field(default_factory=list)
    state_dumps: List[Dict] = field(default_factory=list)
    rng_checkpoints: List[Dict] = field(default_factory=list)
    iterates: List[np.ndarray] = field(default_factory=list)
    diagnostics_max: Dict[str, float] = field(default_factory=dict)

    def append(self, record: MetricsRecord) -> None:
        if self.records and record.k <= self.records[-1].k:
            raise ValueError(f"기록은 추가만 가능합니다: k={record.k} <= {self.records[-1].k}")
        self.records.append(record)

    @property
    def k(self) -> int:
        return self.records[-1].k if self.records else -1


@dataclass
class RunResult:
    transcript: IterationTranscript
    params: TheoryParams
    gate: GateReport
    network: Network
    stop_reason: str
    elapsed: float = 0.0

    @property
    def records(self) -> List[MetricsRecord]:
        return self.transcript.records

    def summary(self) -> Dict:
        data = run_summary(self.records)
        data.update({'stop_reason': self.stop_reason, 'gate_passed': self.gate.passed,
                     'elapsed_sec': self.elapsed})
        data.update({f"max_{name}": value for name, value in self.transcript.diagnostics_max.items()})
        return data


def theory_params(problem: FiniteSumProblem, mixing: MixingMatrix, config: EngineConfig) -> TheoryParams:
    """문제/토폴로지/설정으로부터 게이트 입력 구성"""
    L, mu = problem.smoothness_constants()
    M1, M2 = make_strategy(config.strategy, problem.d, config.M1, config.M2, config.scale).theory_bounds()
    B = non_sampling_rate(problem.m, config.batch_sizes)
    return TheoryParams(alpha=config.alpha, T=config.T, B=B, L=L, mu=mu,
                        sigma=mixing.sigma, M1=M1, M2=M2)


def initialize(problem: FiniteSumProblem, mixing: MixingMatrix, config: EngineConfig) -> Network:
    """x^0 설정, tau^0 = x^0, g^0 = v^0 = grad f_i(x^0), d^0 = g^0"""
    n, d = problem.n, problem.d
    if mixing.W.shape != (n, n):
        raise ProblemError(f"혼합 행렬 크기 {mixing.W.shape} 가 노드 수 {n} 과 맞지 않습니다")
    config.sampler().validate(problem.m)

    if config.x0 is not None:
        X0 = np.array(config.x0, dtype=float)
    else:
        X0 = initial_iterates(problem, config.x0_mode, config.x0_seed)
    if X0.shape != (n, d):
        raise ProblemError(f"x0 크기 {X0.shape} != ({n}, {d})")

    nodes = []
    for i in range(n):
        x0 = X0[i].copy()
        g0 = problem.local_full_gradient(i, x0)
        happrox = make_strategy(config.strategy, d, config.M1, config.M2, config.scale)
        happrox.reset(x0, g0)
        nodes.append(NodeState(
            x=x0, g=g0.copy(), v=g0.copy(), dirn=g0.copy(),
            svrg=SvrgState.at(problem, i, x0, last_v=g0.copy(), full_grad=g0.copy()),
            happrox=happrox,
            rng=node_rng(config.seed, i),
            last_H=np.eye(d),
            grad_evals=problem.m[i],
        ))
    return Network(nodes=nodes, k=0)


def _node_update(problem: FiniteSumProblem, node: NodeState, i: int, x_new: np.ndarray,
                 g_mixed: np.ndarray, k_plus_1: int, config: EngineConfig) -> NodeState:
    b_i = config.batch_sizes[i]
    S = draw_batch(node.rng, problem.m[i], b_i)
    svrg, refreshed = advance_snapshot(k_plus_1, config.T, x_new, node.svrg, problem, i)

    v_new = svrg_gradient(problem, i, x_new, svrg, S)
    g_new = g_mixed + v_new - node.v

    H = node.happrox.update(x_new, g_new)
    if not verify_hessian_bounds(H, node.happrox.M1, node.happrox.M2):
        lo, hi = spectrum_range(H)
        raise AssumptionViolation('hessian_bounds', f"노드 {i}, k={k_plus_1}: 고유값 [{lo:.3e}, {hi:.3e}] "
                                                 f"!⊂ [{node.happrox.M1}, {node.happrox.M2}]")
    dirn = node.happrox.direction(H, g_new)
    svrg.last_v = v_new

    return NodeState(x=x_new, g=g_new, v=v_new, dirn=dirn, svrg=svrg, happrox=node.happrox,
                     rng=node.rng, last_H=H,
                     grad_evals=node.grad_evals + b_i + (problem.m[i] if refreshed else 0))


def step(network: Network, problem: FiniteSumProblem, mixing: MixingMatrix,
         config: EngineConfig, executor: Optional[ThreadPoolExecutor] = None) -> Network:
    """k -> k+1 한 번의 동기 반복"""
    W = mixing.W
    X_new = W @ network.X - config.alpha * network.D
    G_mixed = W @ network.G
    k_plus_1 = network.k + 1

    def update(i: int) -> NodeState:
        return _node_update(problem, network.nodes[i], i, X_new[i], G_mixed[i], k_plus_1, config)

    if executor is not None:
        nodes = list(executor.map(update, range(network.n)))
    else:
        nodes = [update(i) for i in range(network.n)]
    return Network(nodes=nodes, k=k_plus_1)


def _record(network: Network, problem: FiniteSumProblem, ref: ReferenceOptimum,
            params: TheoryParams, q: np.ndarray, config: EngineConfig) -> MetricsRecord:
    u = error_vector(network, problem, ref, params.sigma, params.L)
    record = MetricsRecord(
        k=network.k,
        consensus_err=u.consensus_err,
        opt_gap_raw=u.opt_gap_raw,
        opt_gap_scaled=u.opt_gap_scaled,
        tracking_err=u.tracking_err,
        u_inf_q=u.inf_q(q),
        grad_evals_cumulative=network.grad_evals_total,
    )
    if config.log_hessian_spectrum:
        ranges = [spectrum_range(node.last_H) for node in network.nodes]
        record.h_lambda_min = min(lo for lo, _ in ranges)
        record.h_lambda_max = max(hi for _, hi in ranges)
    return record


def _check_divergence(network: Network) -> None:
    X = network.X
    if not np.all(np.isfinite(X)):
        raise DivergenceError(f"발산 감지: k={network.k} 에서 유한하지 않은 반복값")
    norm = float(np.max(np.linalg.norm(X, axis=1)))
    if norm > DIVERGENCE_LIMIT:
        raise DivergenceError(f"발산 감지: k={network.k}, max ||x_i|| = {norm:.3e} > {DIVERGENCE_LIMIT:.0e}")


def _checkpoint(transcript: IterationTranscript, network: Network, config: EngineConfig) -> None:
    if network.k % config.T != 0:
        return
    transcript.rng_checkpoints.append({'k': network.k, 'states': network.rng_states()})
    if config.record_states:
        transcript.state_dumps.append({
            'k': network.k, 'X': network.X, 'G': network.G, 'V': network.V, 'D': network.D,
        })


def run(problem: FiniteSumProblem, mixing: MixingMatrix, config: EngineConfig,
        ref: Optional[ReferenceOptimum] = None) -> RunResult:
    """max_iter 회 또는 간격 목표 도달까지 반복하며 매 반복 지표 기록"""
    if config.alpha <= 0:
        raise ConfigError(f"step size alpha 는 양수여야 합니다: {config.alpha}")
    params = theory_params(problem, mixing, config)
    gate = check_rate_conditions(params)
    if config.strict and not gate.passed:
        raise GateError(f"엄격 모드: 파라미터 조건 실패 ({', '.join(gate.failures())})", report=gate)

    ref = ref or problem.reference
    q = params.q
    started = time.time()
    network = initialize(problem, mixing, config)
    transcript = IterationTranscript()
    transcript.append(_record(network, problem, ref, params, q, config))
    _checkpoint(transcript, network, config)
    if config.record_iterates:
        transcript.iterates.append(network.X)

    logger.info(f"🚀 실행 시작: n={problem.n}, alpha={config.alpha:.6g}, T={config.T}, "
                f"H={config.strategy}, 게이트={'통과' if gate.passed else '미통과'}")

    stop_reason = 'max_iter'
    executor = ThreadPoolExecutor(max_workers=config.workers) if config.workers > 1 else None
    try:
        for _ in range(config.max_iter):
            prev_xbar = network.X.mean(axis=0)
            prev_dbar = network.D.mean(axis=0)

            network = step(network, problem, mixing, config, executor)
            _check_divergence(network)

            record = _record(network, problem, ref, params, q, config)
            transcript.append(record)
            _checkpoint(transcript, network, config)
            if config.record_iterates:
                transcript.iterates.append(network.X)

            if config.diagnostics:
                diag = network_diagnostics(network, problem, prev_xbar, prev_dbar, config.alpha, L=params.L)
                for name, value in diag.items():
                    transcript.diagnostics_max[name] = max(transcript.diagnostics_max.get(name, -np.inf), value)

            if config.log_every and network.k % config.log_every == 0:
                logger.info(f"k={network.k}: gap={record.opt_gap_raw:.3e}, "
                            f"consensus={record.consensus_err:.3e}, u_q={record.u_inf_q:.3e}")

            if (config.gap_target is not None and record.opt_gap_raw <= config.gap_target
                    and record.consensus_err <= config.gap_target):
                stop_reason = 'gap_target'
                break
    finally:
        if executor is not None:
            executor.shutdown()

    result = RunResult(transcript=transcript, params=params, gate=gate, network=network,
                       stop_reason=stop_reason, elapsed=time.time() - started)
    last = transcript.records[-1]
    logger.info(f"✅ 실행 완료: k={last.k}, gap={last.opt_gap_raw:.3e}, "
                f"consensus={last.consensus_err:.3e}, 종료 사유={stop_reason}")
    return result
