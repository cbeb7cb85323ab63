"""
VRQN-Sim 실험 실행 스크립트
설정 파일을 읽어 문제/토폴로지/엔진을 구성하고 지표와 인증서를 저장
"""
import os
import sys
import signal
import logging
import argparse
import multiprocessing
from typing import Dict, List, Optional, Sequence, Tuple

import pandas as pd
from dotenv import load_dotenv

from analysis import TheoryParams, RateCertificate, certify_rate, check_rate_conditions, epoch_contraction
from baselines import BaselineConfig, run_dgd, run_gradient_tracking
from config_manager import ConfigManager, ExperimentConfig, resolve_auto_parameters, COMPARE_METHODS
from engine import EngineConfig, RunResult, run as run_engine
from hessian import make_strategy
from metrics_recorder import MetricsRecorder, MetricsRecord, average_records, records_to_frame
from problems import FiniteSumProblem, generate_problem, load_csv
from sampling import non_sampling_rate
from sim_utils import (__version__, LOG_FORMAT, setup_integrated_logging, log_elapsed,
                       SimulationError, ConfigError, TopologyError, GateError, DivergenceError)
from topology import Graph, MixingMatrix, make_graph, metropolis_weights, validate_mixing

# 환경변수 로드
load_dotenv()

logger = setup_integrated_logging('vrqnsim.main', default_level='INFO')
_console = logging.StreamHandler()
_console.setFormatter(logging.Formatter(LOG_FORMAT))
logger.addHandler(_console)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_GATE = 3
EXIT_DIVERGENCE = 4


def resolve_output_dir(config: ExperimentConfig, override: Optional[str] = None) -> str:
    """--output > VRQN_OUTPUT_ROOT/run.output_dir > run.output_dir"""
    if override:
        return override
    root = os.getenv('VRQN_OUTPUT_ROOT')
    return os.path.join(root, config.run.output_dir) if root else config.run.output_dir


def _replication_worker(args) -> Tuple[List[MetricsRecord], Dict]:
    """복제 실행 프로세스 (시드별 파일을 직접 기록)"""
    config, seed, output_dir = args
    manager = ExperimentManager(config, output_dir)
    result = manager.run_single(seed)
    manager.recorder.write_metrics_csv(result.records, f"metrics_seed{seed}.csv")
    manager.write_states(result, suffix=f"_seed{seed}")
    return result.records, result.summary()


class ExperimentManager:
    """실험 구성 및 실행 관리자"""

    def __init__(self, config: ExperimentConfig, output_dir: Optional[str] = None):
        self.config = config
        self.output_dir = resolve_output_dir(config, output_dir)
        self.recorder = MetricsRecorder(self.output_dir)
        self.problem: Optional[FiniteSumProblem] = None
        self.mixing: Optional[MixingMatrix] = None
        self.params: Optional[TheoryParams] = None

    def build_problem(self) -> FiniteSumProblem:
        if self.problem is not None:
            return self.problem
        p = self.config.problem
        if p.data_file:
            default_reg = 0.0 if p.family == 'quadratic' else 0.01
            self.problem = load_csv(p.data_file, p.family,
                                    default_reg if p.regularizer is None else p.regularizer)
        else:
            self.problem = generate_problem(p.family, p.n, p.m_list(), p.d, seed=p.seed,
                                            regularizer=p.regularizer, heterogeneity=p.heterogeneity,
                                            noise=p.noise)
        return self.problem

    def build_topology(self) -> MixingMatrix:
        if self.mixing is not None:
            return self.mixing
        t = self.config.topology
        n = self.build_problem().n
        if t.matrix_file:
            self.mixing = MixingMatrix.load_csv(t.matrix_file)
        else:
            if n == 1:
                graph = Graph(n=1, edges=frozenset())
            else:
                graph = make_graph(t.kind, n, p=t.p, seed=t.seed, rows=t.rows, cols=t.cols)
            self.mixing = metropolis_weights(graph, lazy=t.lazy)
        if self.mixing.n != n:
            raise TopologyError(f"혼합 행렬 크기 {self.mixing.n} != 노드 수 {n}")
        return self.mixing

    def resolve(self) -> TheoryParams:
        """auto 값 해석 후 이론 파라미터 구성"""
        if self.params is not None:
            return self.params
        problem = self.build_problem()
        mixing = self.build_topology()
        a = self.config.algorithm
        L, mu = problem.smoothness_constants()
        M1, M2 = make_strategy(a.hessian, problem.d, a.M1, a.M2, a.scale).theory_bounds()
        batch = a.batch_sizes(problem.m)
        if len(batch) != problem.n or any(not 1 <= b <= m for b, m in zip(batch, problem.m)):
            raise ConfigError(f"배치 크기 {batch} 가 샘플 수 {problem.m} 와 맞지 않습니다")
        B = non_sampling_rate(problem.m, batch)
        resolved = resolve_auto_parameters(self.config, L, mu, mixing.sigma, M1, M2, B)
        self.params = TheoryParams(alpha=resolved['alpha'], T=resolved['T'], B=B, L=L, mu=mu,
                                   sigma=mixing.sigma, M1=M1, M2=M2)
        return self.params

    def engine_config(self, seed: int, strategy: Optional[str] = None, workers: int = 1) -> EngineConfig:
        params = self.resolve()
        a, r = self.config.algorithm, self.config.run
        return EngineConfig(
            alpha=params.alpha, T=params.T, batch_sizes=a.batch_sizes(self.problem.m),
            strategy=strategy or a.hessian, M1=a.M1, M2=a.M2, scale=a.scale,
            x0_mode=a.x0, x0_seed=a.x0_seed, seed=seed, max_iter=r.max_iter,
            gap_target=r.gap_target, strict=r.strict_gate, workers=workers,
            log_every=r.log_every, record_states=r.record_states, diagnostics=r.diagnostics,
            log_hessian_spectrum=r.log_hessian_spectrum,
        )

    def run_single(self, seed: int, strategy: Optional[str] = None, workers: int = 1) -> RunResult:
        problem = self.build_problem()
        return run_engine(problem, self.build_topology(), self.engine_config(seed, strategy, workers),
                          ref=problem.reference)

    def write_states(self, result: RunResult, suffix: str = '') -> None:
        if self.config.run.record_states:
            self.recorder.write_state_dumps(result.transcript.state_dumps,
                                            result.transcript.rng_checkpoints, suffix=suffix)

    def certify(self) -> RateCertificate:
        params = self.resolve()
        batch = self.config.algorithm.batch_sizes(self.problem.m)
        cert = certify_rate(params, m_max=max(self.problem.m), b_max=max(batch))
        self.recorder.save_json(cert.to_dict(), 'certificate.json')
        return cert

    def _check_gate(self) -> None:
        params = self.resolve()
        gate = check_rate_conditions(params)
        if self.config.run.strict_gate and not gate.passed:
            self.recorder.save_json(gate.to_dict(), 'gate_report.json')
            raise GateError(f"엄격 모드: 파라미터 조건 실패 ({', '.join(gate.failures())})", report=gate)

    @log_elapsed("실험 실행")
    def run_experiment(self) -> int:
        """metrics.csv, certificate.json, metadata.json 생성"""
        self._check_gate()
        r = self.config.run
        seeds = [r.seed + offset for offset in range(r.replications)]
        logger.info(f"🚀 실험 시작: 복제 {len(seeds)}회, 출력 {self.output_dir}")

        summaries: Dict[str, Dict] = {}
        if len(seeds) == 1:
            result = self.run_single(seeds[0], workers=r.workers)
            records = result.records
            summaries[str(seeds[0])] = result.summary()
            self.write_states(result)
        else:
            jobs = [(self.config, seed, self.output_dir) for seed in seeds]
            if r.workers > 1:
                with multiprocessing.Pool(processes=min(r.workers, len(seeds))) as pool:
                    runs = pool.map(_replication_worker, jobs)
            else:
                runs = [_replication_worker(job) for job in jobs]
            summaries = {str(seed): summary for seed, (_, summary) in zip(seeds, runs)}
            records = average_records([run_records for run_records, _ in runs])

        self.recorder.write_metrics_csv(records, 'metrics.csv')
        cert = self.certify()

        params = self.params
        epochs = None
        if len(records) >= params.T + 1:
            epochs = epoch_contraction([[rec.consensus_err, rec.opt_gap_scaled, rec.tracking_err]
                                        for rec in records], params.T, params.q, floor=r.epoch_floor)

        metadata = {
            'version': __version__,
            'config': self.config.to_dict(),
            'resolved': self.config.resolved,
            'hessian_bounds': {'M1': params.M1, 'M2': params.M2},
            'gate': cert.gate.to_dict(),
            'seeds': seeds,
            'runs': summaries,
            'epoch_contraction': epochs.to_dict() if epochs else None,
        }
        self.recorder.save_json(metadata, 'metadata.json')
        logger.info(f"✅ 실험 완료: {self.output_dir}")
        return EXIT_GATE if cert.discrepancy else EXIT_OK

    def compare(self, methods: Sequence[str]) -> pd.DataFrame:
        """방법별 지표를 method 열과 함께 하나의 CSV 로 결합"""
        if not methods:
            raise ConfigError("비교할 방법 목록이 비어 있습니다")
        unknown = [m for m in methods if m not in COMPARE_METHODS]
        if unknown:
            raise ConfigError(f"알 수 없는 비교 방법: {unknown} (가능: {', '.join(COMPARE_METHODS)})")

        self._check_gate()
        problem, mixing = self.build_problem(), self.build_topology()
        params = self.resolve()
        a, r = self.config.algorithm, self.config.run
        frames = []
        for method in methods:
            if method in ('framework', 'gt_svrg'):
                strategy = 'identity' if method == 'gt_svrg' else None
                records = self.run_single(r.seed, strategy=strategy, workers=r.workers).records
            else:
                baseline = BaselineConfig(method=method, alpha=params.alpha, K=r.max_iter,
                                          x0_mode=a.x0, x0_seed=a.x0_seed, gap_target=r.gap_target)
                runner = run_dgd if method == 'dgd' else run_gradient_tracking
                records = runner(problem, mixing, baseline, ref=problem.reference).records
            frames.append(records_to_frame(records, method=method))
            logger.info(f"비교 완료: {method} ({len(records)}행)")

        combined = pd.concat(frames, ignore_index=True)
        self.recorder.write_frame(combined, 'compare.csv')
        return combined

    def validate(self) -> bool:
        """토폴로지/문제 검사 보고서 (validation.json)"""
        problem, mixing = self.build_problem(), self.build_topology()
        mixing_report = validate_mixing(mixing.W, mixing.graph)
        L, mu = problem.smoothness_constants()
        ref = problem.reference
        params = self.resolve()
        gate = check_rate_conditions(params)
        report = {
            'mixing_matrix': mixing_report.to_dict(),
            'sigma': mixing.sigma,
            'problem': {'family': problem.family, 'n': problem.n, 'd': problem.d, 'm': problem.m,
                        'L': L, 'mu': mu, 'kappa_F': L / mu},
            'reference': ref.to_dict(),
            'gate': gate.to_dict(),
        }
        self.recorder.save_json(report, 'validation.json')
        ok = mixing_report.passed
        logger.info(f"{'✅' if ok else '❌'} 검증 결과: 혼합 행렬 {'통과' if ok else '실패'}, "
                    f"sigma={mixing.sigma:.6f}, L={L:.4g}, mu={mu:.4g}")
        return ok


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='main.py', description='VRQN-Sim 실험 실행기')
    sub = parser.add_subparsers(dest='command', required=True)
    for name, help_text in (('run', '실험 실행'), ('compare', '방법 비교'),
                            ('certify', '수렴률 인증서 계산'), ('validate', '토폴로지/문제 검사')):
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument('--config', default='experiment_config.json', help='설정 파일 경로')
        cmd.add_argument('--output', default=None, help='출력 디렉터리')
        if name == 'compare':
            cmd.add_argument('--methods', default=None,
                             help=f"쉼표 구분 방법 목록 ({', '.join(COMPARE_METHODS)})")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """명령 실행 후 종료 코드 반환"""
    args = build_parser().parse_args(argv)
    try:
        config = ConfigManager(config_file=args.config)
        ok, errors = config.validate_config()
        if not ok:
            for error in errors:
                logger.error(f"설정 오류: {error}")
            return EXIT_CONFIG
        manager = ExperimentManager(config.to_experiment(), args.output)

        if args.command == 'run':
            status = manager.run_experiment()
            config.save_config(manager.recorder.path('config_resolved.json'), manager.config.resolved)
            return status
        if args.command == 'compare':
            methods = manager.config.run.methods if args.methods is None else \
                [m.strip() for m in args.methods.split(',') if m.strip()]
            manager.compare(methods)
            return EXIT_OK
        if args.command == 'certify':
            cert = manager.certify()
            status = '통과' if cert.passed else '실패'
            logger.info(f"인증서 {status}: 게이트={'통과' if cert.gate.passed else '미통과'}, "
                        f"epoch_factor={cert.epoch_factor:.4f}")
            return EXIT_OK if cert.gate.passed and cert.passed else EXIT_GATE
        return EXIT_OK if manager.validate() else EXIT_ERROR

    except (ConfigError, TopologyError) as e:
        logger.error(f"❌ 설정 오류: {e}")
        return EXIT_CONFIG
    except GateError as e:
        logger.error(f"❌ {e}")
        return EXIT_GATE
    except DivergenceError as e:
        logger.error(f"❌ {e}")
        return EXIT_DIVERGENCE
    except SimulationError as e:
        logger.error(f"❌ 실행 오류: {e}")
        return EXIT_ERROR


def signal_handler(signum, frame):
    """시그널 핸들러 (Ctrl+C 등)"""
    logger.info(f"시그널 {signum} 수신, 실험 중단")
    sys.exit(EXIT_ERROR)


if __name__ == "__main__":
    # Windows에서 multiprocessing 오류 방지
    if os.name == 'nt':
        multiprocessing.freeze_support()

    signal.signal(signal.SIGINT, signal_handler)
    signal.signal(signal.SIGTERM, signal_handler)
    sys.exit(main())
