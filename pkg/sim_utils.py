"""
시뮬레이터 공통 유틸리티 - 로깅, 예외, 노드별 난수 스트림
"""
import os
import time
import logging
from functools import wraps
from typing import Optional, Any

import numpy as np

__version__ = "1.0.0"

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'


def setup_integrated_logging(name: str, default_level: str = 'WARNING') -> logging.Logger:
    """통합 로깅 설정 (vrqnsim_main.log 사용)"""
    logger = logging.getLogger(name)

    # 이미 핸들러가 있으면 제거
    for handler in logger.handlers[:]:
        logger.removeHandler(handler)

    formatter = logging.Formatter(LOG_FORMAT)
    log_file = os.getenv('VRQN_LOG_FILE', 'vrqnsim_main.log')
    try:
        file_handler = logging.FileHandler(log_file, encoding='utf-8')
        file_handler.setFormatter(formatter)
        logger.addHandler(file_handler)
    except Exception:
        # 파일 접근 실패 시 콘솔 출력으로 대체
        console_handler = logging.StreamHandler()
        console_handler.setFormatter(formatter)
        logger.addHandler(console_handler)

    # 로그 레벨을 환경변수로 설정 가능
    log_level = os.getenv('LOG_LEVEL', default_level).upper()
    logger.setLevel(getattr(logging, log_level, logging.WARNING))
    return logger


logger = setup_integrated_logging(__name__)


class SimulationError(Exception):
    """시뮬레이션 오류 최상위 클래스"""


class ConfigError(SimulationError, ValueError):
    """설정 파일 오류 (줄 번호 포함)"""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"{message} (line {line})"
        super().__init__(message)


class TopologyError(SimulationError, ValueError):
    """네트워크 그래프 오류"""


class AssumptionViolation(SimulationError, ValueError):
    """가정(혼합 행렬 / 헤시안 근사 경계) 위반"""

    def __init__(self, clause: str, detail: str = ""):
        self.clause = clause
        super().__init__(f"{clause}: {detail}" if detail else clause)


class ProblemError(SimulationError, ValueError):
    """문제 데이터 또는 기준 최적해 계산 오류"""


class StaleSnapshotError(SimulationError, RuntimeError):
    """SVRG 스냅샷 기울기가 현재 스냅샷 지점과 맞지 않음"""


class GateError(SimulationError):
    """엄격 모드에서 파라미터 조건 미충족"""

    def __init__(self, message: str, report: Any = None):
        self.report = report
        super().__init__(message)


class DivergenceError(SimulationError, RuntimeError):
    """반복값 발산 감지"""


def node_rng(seed: int, node_id: int) -> np.random.Generator:
    """(실험 시드, 노드 번호)에서 파생된 독립 난수 스트림"""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(node_id)]))


def log_elapsed(label: str):
    """실행 시간 로깅 데코레이터"""
    def decorator(func):
        @wraps(func)
        def wrapper(*args, **kwargs):
            started = time.perf_counter()
            try:
                return func(*args, **kwargs)
            finally:
                elapsed = time.perf_counter() - started
                logger.info(f"⏱️ {label} 완료: {elapsed:.2f}초")
        return wrapper
    return decorator
