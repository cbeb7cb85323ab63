"""
실험 설정 관리 (JSON, 블록: problem / topology / algorithm / run)
"""
import copy
import json
import os
from dataclasses import dataclass, field, asdict
from typing import Any, Dict, List, Optional, Tuple, Union

from analysis import TheoryParams, max_step_size, period_floor
from hessian import STRATEGIES
from problems import FAMILIES
from sim_utils import setup_integrated_logging, ConfigError
from topology import GRAPH_KINDS

logger = setup_integrated_logging(__name__)

X0_MODES = ('zeros', 'random', 'consensual')
COMPARE_METHODS = ('framework', 'gt_svrg', 'dgd', 'gradient_tracking')

NUMBER = (int, float)

# 블록별 기본값 (모든 키는 기본값을 가진다)
DEFAULTS: Dict[str, Dict[str, Any]] = {
    'problem': {
        'family': 'quadratic',
        'n': 4,
        'd': 5,
        'm': 20,                  # 정수(전 노드 동일) 또는 노드별 목록
        'seed': 0,
        'regularizer': None,      # None 이면 유형별 기본값
        'heterogeneity': 1.0,
        'noise': 0.1,
        'data_file': None,        # CSV 데이터셋 (지정 시 합성 데이터 대신 사용)
    },
    'topology': {
        'kind': 'ring',
        'p': None,
        'rows': None,
        'cols': None,
        'seed': 0,
        'weights': 'metropolis',
        'lazy': False,
        'matrix_file': None,      # dense CSV 혼합 행렬 (지정 시 kind 무시)
    },
    'algorithm': {
        'alpha': 'auto',          # 'auto' = step size 상한
        'T': 'auto',              # 'auto' = 스냅샷 주기 하한
        'b': None,                # None = 전체 배치 (b_i = m_i)
        'hessian': 'identity',
        'M1': 0.1,
        'M2': 10.0,
        'scale': 1.0,
        'x0': 'zeros',
        'x0_seed': 0,
    },
    'run': {
        'max_iter': 1000,
        'replications': 1,
        'seed': 0,
        'strict_gate': False,
        'output_dir': 'results',
        'gap_target': None,
        'workers': 1,
        'log_every': 1000,
        'diagnostics': False,
        'log_hessian_spectrum': False,
        'record_states': False,
        'epoch_floor': 0.0,
        'methods': ['framework'],
    },
}

# 키별 허용 타입 (None 포함 시 null 허용)
SCHEMA: Dict[str, Dict[str, Tuple]] = {
    'problem': {
        'family': (str,), 'n': (int,), 'd': (int,), 'm': (int, list), 'seed': (int,),
        'regularizer': (int, float, None), 'heterogeneity': NUMBER, 'noise': NUMBER,
        'data_file': (str, None),
    },
    'topology': {
        'kind': (str,), 'p': (int, float, None), 'rows': (int, None), 'cols': (int, None),
        'seed': (int,), 'weights': (str,), 'lazy': (bool,), 'matrix_file': (str, None),
    },
    'algorithm': {
        'alpha': (int, float, str), 'T': (int, str), 'b': (int, list, None), 'hessian': (str,),
        'M1': NUMBER, 'M2': NUMBER, 'scale': NUMBER, 'x0': (str,), 'x0_seed': (int,),
    },
    'run': {
        'max_iter': (int,), 'replications': (int,), 'seed': (int,), 'strict_gate': (bool,),
        'output_dir': (str,), 'gap_target': (int, float, None), 'workers': (int,),
        'log_every': (int,), 'diagnostics': (bool,), 'log_hessian_spectrum': (bool,),
        'record_states': (bool,), 'epoch_floor': NUMBER, 'methods': (list,),
    },
}


def _line_of(text: str, key: str, block: Optional[str] = None) -> Optional[int]:
    """키가 처음 등장하는 1 기반 줄 번호 (블록 지정 시 블록 이후부터 탐색)"""
    if not text:
        return None
    lines = text.splitlines()
    start = 0
    if block is not None:
        for idx, line in enumerate(lines):
            if f'"{block}"' in line:
                start = idx
                break
    for idx in range(start, len(lines)):
        if f'"{key}"' in lines[idx]:
            return idx + 1
    return None


def _type_ok(value: Any, allowed: Tuple) -> bool:
    if value is None:
        return None in allowed
    if isinstance(value, bool):
        return bool in allowed
    types = tuple(t for t in allowed if t is not None)
    return isinstance(value, types)


@dataclass
class ProblemSpec:
    family: str
    n: int
    d: int
    m: Union[int, List[int]]
    seed: int
    regularizer: Optional[float]
    heterogeneity: float
    noise: float
    data_file: Optional[str]

    def m_list(self) -> List[int]:
        return [int(self.m)] * self.n if isinstance(self.m, int) else [int(v) for v in self.m]


@dataclass
class TopologySpec:
    kind: str
    p: Optional[float]
    rows: Optional[int]
    cols: Optional[int]
    seed: int
    weights: str
    lazy: bool
    matrix_file: Optional[str]


@dataclass
class AlgorithmSpec:
    alpha: Union[float, str]
    T: Union[int, str]
    b: Union[None, int, List[int]]
    hessian: str
    M1: float
    M2: float
    scale: float
    x0: str
    x0_seed: int

    def batch_sizes(self, m: List[int]) -> List[int]:
        if self.b is None:
            return list(m)
        if isinstance(self.b, int):
            return [self.b] * len(m)
        return [int(v) for v in self.b]


@dataclass
class RunSpec:
    max_iter: int
    replications: int
    seed: int
    strict_gate: bool
    output_dir: str
    gap_target: Optional[float]
    workers: int
    log_every: int
    diagnostics: bool
    log_hessian_spectrum: bool
    record_states: bool
    epoch_floor: float
    methods: List[str]


@dataclass
class ExperimentConfig:
    """검증을 마친 실험 설정 (auto 값은 resolved 에 기록)"""
    problem: ProblemSpec
    topology: TopologySpec
    algorithm: AlgorithmSpec
    run: RunSpec
    resolved: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @property
    def alpha(self) -> float:
        return self.resolved.get('alpha', self.algorithm.alpha)

    @property
    def T(self) -> int:
        return self.resolved.get('T', self.algorithm.T)


class ConfigManager:
    """JSON 설정 로드, 기본값 병합, 검증"""

    def __init__(self, text: Optional[str] = None, config_file: Optional[str] = None):
        self.config_file = config_file
        if text is None and config_file is not None:
            if not os.path.exists(config_file):
                raise ConfigError(f"설정 파일이 없습니다: {config_file}")
            with open(config_file, 'r', encoding='utf-8') as f:
                text = f.read()
        self.text = text or ""
        self.config = self.load_config()

    def load_config(self) -> Dict[str, Dict[str, Any]]:
        """블록별로 기본값과 병합 (알 수 없는 블록/키와 타입 오류는 ConfigError)"""
        merged = copy.deepcopy(DEFAULTS)
        if not self.text.strip():
            logger.info("설정 내용이 없어서 기본값 사용")
            return merged

        try:
            raw = json.loads(self.text)
        except json.JSONDecodeError as e:
            raise ConfigError(f"JSON 구문 오류: {e.msg}", line=e.lineno) from e
        if not isinstance(raw, dict):
            raise ConfigError("최상위 값은 객체여야 합니다", line=1)

        for block, values in raw.items():
            if block not in DEFAULTS:
                raise ConfigError(f"알 수 없는 블록: '{block}' (가능: {', '.join(DEFAULTS)})",
                                  line=_line_of(self.text, block))
            if not isinstance(values, dict):
                raise ConfigError(f"'{block}' 블록은 객체여야 합니다", line=_line_of(self.text, block))
            for key, value in values.items():
                if key not in DEFAULTS[block]:
                    raise ConfigError(f"알 수 없는 키: {block}.{key}", line=_line_of(self.text, key, block))
                if not _type_ok(value, SCHEMA[block][key]):
                    expected = '/'.join('null' if t is None else t.__name__ for t in SCHEMA[block][key])
                    raise ConfigError(f"타입 오류: {block}.{key} = {value!r} ({expected} 필요)",
                                      line=_line_of(self.text, key, block))
                merged[block][key] = value

        logger.info(f"설정 로드 완료{f': {self.config_file}' if self.config_file else ''}")
        return merged

    def validate_config(self) -> Tuple[bool, List[str]]:
        """설정값 유효성 검사 (위반 규칙 전체 반환)"""
        errors: List[str] = []
        p, t, a, r = (self.config[name] for name in ('problem', 'topology', 'algorithm', 'run'))

        if p['family'] not in FAMILIES:
            errors.append(f"problem.family 는 {', '.join(FAMILIES)} 중 하나여야 합니다.")
        if p['n'] < 1:
            errors.append("problem.n 은 1 이상이어야 합니다.")
        if p['d'] < 1:
            errors.append("problem.d 는 1 이상이어야 합니다.")

        m_list: List[int] = []
        if isinstance(p['m'], list):
            if len(p['m']) != p['n'] or not all(isinstance(v, int) and not isinstance(v, bool) for v in p['m']):
                errors.append("problem.m 목록은 노드 수만큼의 정수여야 합니다.")
            else:
                m_list = list(p['m'])
        else:
            m_list = [p['m']] * max(p['n'], 0)
        if any(v < 1 for v in m_list):
            errors.append("problem.m 의 모든 값은 1 이상이어야 합니다.")

        if p['regularizer'] is not None and p['regularizer'] < 0:
            errors.append("problem.regularizer 는 0 이상이어야 합니다.")
        if p['family'] in ('ridge_least_squares', 'l2_logistic') and p['regularizer'] is not None \
                and p['regularizer'] <= 0:
            errors.append(f"{p['family']} 는 양의 regularizer 가 필요합니다.")

        if t['matrix_file'] is None:
            if t['kind'] not in GRAPH_KINDS:
                errors.append(f"topology.kind 는 {', '.join(GRAPH_KINDS)} 중 하나여야 합니다.")
            if t['kind'] == 'erdos_renyi' and (t['p'] is None or not 0 <= t['p'] <= 1):
                errors.append("erdos_renyi 토폴로지는 0 <= p <= 1 이 필요합니다.")
            if t['kind'] == 'grid' and (t['rows'] is None or t['cols'] is None or t['rows'] * t['cols'] != p['n']):
                errors.append("grid 토폴로지는 rows * cols == problem.n 이어야 합니다.")
        if t['weights'] != 'metropolis':
            errors.append("topology.weights 는 metropolis 만 지원합니다.")

        if isinstance(a['alpha'], str):
            if a['alpha'] != 'auto':
                errors.append("algorithm.alpha 는 양수 또는 'auto' 여야 합니다.")
        elif a['alpha'] <= 0:
            errors.append("algorithm.alpha 는 양수여야 합니다.")
        if isinstance(a['T'], str):
            if a['T'] != 'auto':
                errors.append("algorithm.T 는 양의 정수 또는 'auto' 여야 합니다.")
        elif a['T'] < 1:
            errors.append("algorithm.T 는 1 이상이어야 합니다.")

        if a['b'] is not None and m_list:
            b_list = a['b'] if isinstance(a['b'], list) else [a['b']] * len(m_list)
            if len(b_list) != len(m_list):
                errors.append("algorithm.b 목록 길이는 노드 수와 같아야 합니다.")
            else:
                for i, (b_i, m_i) in enumerate(zip(b_list, m_list)):
                    if not isinstance(b_i, int) or isinstance(b_i, bool) or not 1 <= b_i <= m_i:
                        errors.append(f"노드 {i}: 배치 크기 b={b_i} 는 1 이상 m={m_i} 이하여야 합니다.")

        if a['hessian'] not in STRATEGIES:
            errors.append(f"algorithm.hessian 은 {', '.join(STRATEGIES)} 중 하나여야 합니다.")
        if not 0 < a['M1'] <= a['M2']:
            errors.append("헤시안 경계는 0 < M1 <= M2 이어야 합니다.")
        if a['hessian'] == 'scaled_identity' and not a['M1'] <= a['scale'] <= a['M2']:
            errors.append("algorithm.scale 은 [M1, M2] 안에 있어야 합니다.")
        if a['x0'] not in X0_MODES:
            errors.append(f"algorithm.x0 는 {', '.join(X0_MODES)} 중 하나여야 합니다.")

        if r['max_iter'] < 0:
            errors.append("run.max_iter 는 0 이상이어야 합니다.")
        if r['replications'] < 1:
            errors.append("run.replications 는 1 이상이어야 합니다.")
        if r['workers'] < 1:
            errors.append("run.workers 는 1 이상이어야 합니다.")
        if r['gap_target'] is not None and r['gap_target'] <= 0:
            errors.append("run.gap_target 은 양수여야 합니다.")
        if r['epoch_floor'] < 0:
            errors.append("run.epoch_floor 는 0 이상이어야 합니다.")
        if not r['methods']:
            errors.append("run.methods 는 비어 있을 수 없습니다.")
        unknown = [m for m in r['methods'] if m not in COMPARE_METHODS]
        if unknown:
            errors.append(f"알 수 없는 비교 방법: {unknown} (가능: {', '.join(COMPARE_METHODS)})")

        return len(errors) == 0, errors

    def to_experiment(self) -> ExperimentConfig:
        c = copy.deepcopy(self.config)
        return ExperimentConfig(
            problem=ProblemSpec(**c['problem']),
            topology=TopologySpec(**c['topology']),
            algorithm=AlgorithmSpec(**c['algorithm']),
            run=RunSpec(**c['run']),
        )

    def save_config(self, path: str, resolved: Optional[Dict[str, Any]] = None) -> bool:
        """병합된 설정(및 해석된 auto 값) 저장"""
        try:
            data = copy.deepcopy(self.config)
            if resolved:
                data['resolved'] = resolved
            with open(path, 'w', encoding='utf-8') as f:
                json.dump(data, f, ensure_ascii=False, indent=2, default=str)
            return True
        except OSError as e:
            logger.error(f"설정 파일 저장 실패: {e}")
            return False


def parse_config(text: str) -> ExperimentConfig:
    """설정 문자열 -> 검증된 ExperimentConfig"""
    manager = ConfigManager(text=text)
    ok, errors = manager.validate_config()
    if not ok:
        first = errors[0]
        raise ConfigError(f"설정 검증 실패: {first}" + (f" 외 {len(errors) - 1}건" if len(errors) > 1 else ""))
    return manager.to_experiment()


def load_config_file(path: str) -> ExperimentConfig:
    with open(path, 'r', encoding='utf-8') as f:
        return parse_config(f.read())


def resolve_auto_parameters(config: ExperimentConfig, L: float, mu: float, sigma: float,
                            M1: float, M2: float, B: float) -> Dict[str, Any]:
    """alpha='auto' -> step size 상한, T='auto' -> 주기 하한 (게이트 이전에 해석)"""
    alpha = config.algorithm.alpha
    if alpha == 'auto':
        alpha = max_step_size(L, mu, sigma, M1, M2)
    T = config.algorithm.T
    if T == 'auto':
        T = period_floor(TheoryParams(alpha=float(alpha), T=1, B=B, L=L, mu=mu,
                                      sigma=sigma, M1=M1, M2=M2))

    config.resolved.update({
        'alpha': float(alpha), 'T': int(T), 'L': L, 'mu': mu, 'sigma': sigma,
        'M1': M1, 'M2': M2, 'B': B,
    })
    logger.info(f"파라미터 해석: alpha={float(alpha):.6g}, T={int(T)}")
    return config.resolved
