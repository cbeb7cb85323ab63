"""
네트워크 토폴로지 및 혼합 행렬(mixing matrix) 생성/검증
"""
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Optional, Tuple, List

import networkx as nx
import numpy as np
import pandas as pd
from scipy.linalg import eigvalsh, svdvals

from sim_utils import setup_integrated_logging, TopologyError, AssumptionViolation

logger = setup_integrated_logging(__name__)

VALIDATION_TOL = 1e-12
GRAPH_KINDS = ('ring', 'complete', 'star', 'erdos_renyi', 'grid')
MIXING_CLAUSES = ('nonnegativity', 'symmetry', 'double_stochasticity',
                   'support_pattern', 'null_space')


@dataclass(frozen=True)
class Graph:
    """무방향 그래프 (자기 루프는 암묵적, 저장하지 않음)"""
    n: int
    edges: FrozenSet[Tuple[int, int]]
    connected: bool = field(init=False)

    def __post_init__(self):
        if self.n < 1:
            raise TopologyError(f"노드 수는 1 이상이어야 합니다: n={self.n}")

        normalized = set()
        for i, j in self.edges:
            if i == j:
                raise TopologyError(f"자기 루프는 저장하지 않습니다: ({i}, {j})")
            if not (0 <= i < self.n and 0 <= j < self.n):
                raise TopologyError(f"간선 끝점이 범위를 벗어났습니다: ({i}, {j}), n={self.n}")
            edge = (min(i, j), max(i, j))
            if edge in normalized:
                raise TopologyError(f"중복 간선: {edge}")
            normalized.add(edge)

        object.__setattr__(self, 'edges', frozenset(normalized))
        object.__setattr__(self, 'connected', nx.is_connected(self.to_networkx()))

    def to_networkx(self) -> nx.Graph:
        g = nx.Graph()
        g.add_nodes_from(range(self.n))
        g.add_edges_from(self.edges)
        return g

    def degrees(self) -> np.ndarray:
        deg = np.zeros(self.n, dtype=int)
        for i, j in self.edges:
            deg[i] += 1
            deg[j] += 1
        return deg

    @classmethod
    def from_networkx(cls, g: nx.Graph) -> 'Graph':
        mapping = {node: idx for idx, node in enumerate(sorted(g.nodes()))}
        edges = {(mapping[u], mapping[v]) for u, v in g.edges() if u != v}
        return cls(n=g.number_of_nodes(), edges=frozenset(edges))


@dataclass
class MixingReport:
    """혼합 행렬 가정 검증 결과 (조항별 통과/실패)"""
    clauses: Dict[str, bool]
    details: Dict[str, str]

    @property
    def passed(self) -> bool:
        return all(self.clauses.values())

    def failures(self) -> List[str]:
        return [name for name in MIXING_CLAUSES if not self.clauses.get(name, False)]

    def to_dict(self) -> Dict:
        return {'passed': self.passed, 'clauses': dict(self.clauses), 'details': dict(self.details)}


@dataclass
class MixingMatrix:
    """이중 확률 대칭 혼합 행렬과 스펙트럼 간격 sigma"""
    W: np.ndarray
    sigma: float
    graph: Optional[Graph] = None

    @property
    def n(self) -> int:
        return self.W.shape[0]

    def export_csv(self, path: str) -> None:
        """교차 검증용 dense CSV 내보내기"""
        pd.DataFrame(self.W).to_csv(path, header=False, index=False, float_format='%.17g')

    @classmethod
    def from_array(cls, W: np.ndarray, graph: Optional[Graph] = None) -> 'MixingMatrix':
        W = np.array(W, dtype=float)
        return cls(W=W, sigma=spectral_gap(W, graph), graph=graph)

    @classmethod
    def load_csv(cls, path: str) -> 'MixingMatrix':
        W = pd.read_csv(path, header=None).to_numpy(dtype=float)
        return cls.from_array(W)


def make_graph(kind: str, n: int, p: Optional[float] = None, seed: Optional[int] = None,
               rows: Optional[int] = None, cols: Optional[int] = None,
               max_retries: int = 50) -> Graph:
    """토폴로지 종류별 연결 그래프 생성"""
    if kind not in GRAPH_KINDS:
        raise TopologyError(f"지원하지 않는 토폴로지: {kind} (가능: {', '.join(GRAPH_KINDS)})")

    if kind == 'grid':
        if rows is None or cols is None:
            raise TopologyError("grid 토폴로지는 rows, cols 가 필요합니다")
        if n is not None and n != rows * cols:
            raise TopologyError(f"grid 크기 불일치: n={n}, rows*cols={rows * cols}")
        n = rows * cols

    if n < 2:
        raise TopologyError(f"그래프 노드 수는 2 이상이어야 합니다: n={n}")

    if kind == 'ring':
        g = nx.cycle_graph(n)
    elif kind == 'complete':
        g = nx.complete_graph(n)
    elif kind == 'star':
        g = nx.star_graph(n - 1)
    elif kind == 'grid':
        g = nx.grid_2d_graph(rows, cols)
    else:
        if p is None or not (0.0 <= p <= 1.0):
            raise TopologyError(f"erdos_renyi 확률 p 는 [0, 1] 범위여야 합니다: p={p}")
        base_seed = 0 if seed is None else int(seed)
        for attempt in range(max_retries):
            candidate = nx.erdos_renyi_graph(n, p, seed=base_seed + attempt)
            if nx.is_connected(candidate):
                logger.info(f"erdos_renyi 연결 그래프 생성 ({attempt + 1}회 시도)")
                return Graph.from_networkx(candidate)
        raise TopologyError(f"disconnected topology: erdos_renyi(p={p}) {max_retries}회 재시도 실패")

    graph = Graph.from_networkx(g)
    if not graph.connected:
        raise TopologyError(f"disconnected topology: {kind}, n={n}")
    return graph


def metropolis_weights(g: Graph, lazy: bool = False) -> MixingMatrix:
    """Metropolis 가중치 혼합 행렬 생성"""
    if not g.connected:
        raise TopologyError("disconnected topology: Metropolis 가중치는 연결 그래프에서만 정의됩니다")

    deg = g.degrees()
    W = np.zeros((g.n, g.n))
    for i, j in g.edges:
        w = 1.0 / (1.0 + max(deg[i], deg[j]))
        W[i, j] = w
        W[j, i] = w
    # w_ii = 1 - sum_{j != i} w_ij
    W[np.diag_indices(g.n)] = 1.0 - W.sum(axis=1)

    if lazy:
        W = 0.5 * (np.eye(g.n) + W)

    mixing = MixingMatrix.from_array(W, graph=g)
    logger.info(f"✅ Metropolis 혼합 행렬 생성: n={g.n}, 간선 {len(g.edges)}개, sigma={mixing.sigma:.6f}")
    return mixing


def lazy(mixing: MixingMatrix) -> MixingMatrix:
    """게으른 변형 W <- (I + W) / 2"""
    W = 0.5 * (np.eye(mixing.n) + mixing.W)
    return MixingMatrix.from_array(W, graph=mixing.graph)


def validate_mixing(W: np.ndarray, graph: Optional[Graph] = None,
                    tol: float = VALIDATION_TOL) -> MixingReport:
    """혼합 행렬 가정 조항별 검증 (실패는 보고서에 기록)"""
    W = np.asarray(W, dtype=float)
    clauses: Dict[str, bool] = {}
    details: Dict[str, str] = {}

    if W.ndim != 2 or W.shape[0] != W.shape[1]:
        for name in MIXING_CLAUSES:
            clauses[name] = False
        details['shape'] = f"정방 행렬이 아닙니다: {W.shape}"
        return MixingReport(clauses, details)

    n = W.shape[0]
    ones = np.ones(n)

    min_entry = float(W.min())
    clauses['nonnegativity'] = min_entry >= 0.0
    details['nonnegativity'] = f"min w_ij = {min_entry:.3e}"

    asym = float(np.abs(W - W.T).max())
    clauses['symmetry'] = asym <= tol
    details['symmetry'] = f"max |W - W^T| = {asym:.3e}"

    row_err = float(np.abs(W @ ones - ones).max())
    col_err = float(np.abs(W.T @ ones - ones).max())
    clauses['double_stochasticity'] = max(row_err, col_err) <= tol
    details['double_stochasticity'] = f"행 합 오차 {row_err:.3e}, 열 합 오차 {col_err:.3e}"

    # 이웃 집합은 자기 자신을 포함: w_ii > 0, w_ij > 0 iff (i, j) 간선
    positive = W > 0.0
    if graph is not None:
        if graph.n != n:
            clauses['support_pattern'] = False
            details['support_pattern'] = f"그래프 크기 {graph.n} != 행렬 크기 {n}"
        else:
            expected = np.eye(n, dtype=bool)
            for i, j in graph.edges:
                expected[i, j] = expected[j, i] = True
            mismatches = int(np.sum(positive != expected))
            clauses['support_pattern'] = mismatches == 0
            details['support_pattern'] = f"불일치 항목 {mismatches}개"
    else:
        zero_diag = int(np.sum(~np.diag(positive)))
        clauses['support_pattern'] = zero_diag == 0
        details['support_pattern'] = f"대각 0 항목 {zero_diag}개 (그래프 미지정, 비대각 지지집합으로 이웃 추론)"

    # I - W 의 영공간이 span(1) 인지: 특이값 0 의 개수가 1 이고 (I - W)1 = 0
    singular = svdvals(np.eye(n) - W)
    null_dim = int(np.sum(singular <= tol))
    residual = float(np.abs((np.eye(n) - W) @ ones).max())
    clauses['null_space'] = null_dim == 1 and residual <= tol
    details['null_space'] = f"영공간 차원 {null_dim}, |(I-W)1| = {residual:.3e}"

    return MixingReport(clauses, details)


def spectral_gap(W: np.ndarray, graph: Optional[Graph] = None) -> float:
    """sigma = ||W - (1/n) 11^T||_2 (가정 검증 통과 필요)"""
    if isinstance(W, MixingMatrix):
        graph = graph or W.graph
        W = W.W
    W = np.asarray(W, dtype=float)

    report = validate_mixing(W, graph)
    if not report.passed:
        clause = report.failures()[0]
        raise AssumptionViolation(clause, report.details.get(clause, ""))

    n = W.shape[0]
    deviation = W - np.full((n, n), 1.0 / n)
    # 대칭 행렬이므로 2-노름 = 최대 |고유값|
    sigma = float(np.max(np.abs(eigvalsh(deviation))))
    return sigma
