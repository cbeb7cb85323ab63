"""공통 픽스처 - 작은 문제와 토폴로지"""
import os
import sys

import numpy as np
import pytest

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
if ROOT not in sys.path:
    sys.path.insert(0, ROOT)

# 테스트 중 로그 파일을 만들지 않음
os.environ.setdefault('VRQN_LOG_FILE', os.devnull)

from problems import FiniteSumProblem, generate_problem  # noqa: E402
from topology import Graph, make_graph, metropolis_weights  # noqa: E402


@pytest.fixture
def quadratic_problem():
    return generate_problem('quadratic', n=4, m=10, d=3, seed=1, regularizer=0.1)


@pytest.fixture
def logistic_problem():
    return generate_problem('l2_logistic', n=3, m=8, d=3, seed=2, regularizer=0.1)


@pytest.fixture
def ring4():
    return metropolis_weights(make_graph('ring', 4))


@pytest.fixture
def ring5():
    return metropolis_weights(make_graph('ring', 5))


@pytest.fixture
def single_node():
    return metropolis_weights(Graph(n=1, edges=frozenset()))


def homogeneous_problem(n: int, m: int, d: int, seed: int = 0, regularizer: float = 0.2) -> FiniteSumProblem:
    """모든 노드가 같은 샘플을 가진 이차 문제 (노드별 최적해 = 전역 최적해)"""
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(m, d))
    y = rng.normal(size=m)
    return FiniteSumProblem(family='quadratic', features=[a.copy() for _ in range(n)],
                            targets=[y.copy() for _ in range(n)], regularizer=regularizer)
