"""
반복별 지표 기록 및 저장 (CSV / JSON)
"""
import os
import json
from dataclasses import dataclass, asdict
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from sim_utils import setup_integrated_logging

logger = setup_integrated_logging(__name__)

METRICS_COLUMNS = ['k', 'consensus_err', 'opt_gap_raw', 'opt_gap_scaled',
                   'tracking_err', 'u_inf_q', 'grad_evals_cumulative']
SPECTRUM_COLUMNS = ['h_lambda_min', 'h_lambda_max']
FLOAT_FORMAT = '%.17g'


@dataclass
class MetricsRecord:
    """반복 k 의 지표 한 줄"""
    k: int
    consensus_err: float
    opt_gap_raw: float
    opt_gap_scaled: float
    tracking_err: float
    u_inf_q: float
    grad_evals_cumulative: int
    h_lambda_min: Optional[float] = None
    h_lambda_max: Optional[float] = None

    def to_dict(self) -> Dict:
        return asdict(self)


def records_to_frame(records: Sequence[MetricsRecord], method: Optional[str] = None) -> pd.DataFrame:
    df = pd.DataFrame([r.to_dict() for r in records])
    if df.empty:
        df = pd.DataFrame(columns=METRICS_COLUMNS)
    columns = list(METRICS_COLUMNS)
    if all(col in df.columns and df[col].notna().any() for col in SPECTRUM_COLUMNS):
        columns += SPECTRUM_COLUMNS
    df = df[columns]
    if method is not None:
        df.insert(0, 'method', method)
    return df


def _extreme(rows: Sequence[MetricsRecord], attr: str, pick) -> Optional[float]:
    values = [getattr(r, attr) for r in rows]
    if any(v is None for v in values):
        return None
    return float(pick(values))


def average_records(runs: Sequence[Sequence[MetricsRecord]]) -> List[MetricsRecord]:
    """복제 실행들의 지표를 반복 번호별로 평균 (가장 짧은 실행 길이까지)"""
    if not runs:
        return []
    length = min(len(run) for run in runs)
    averaged = []
    for idx in range(length):
        rows = [run[idx] for run in runs]
        mean = lambda attr: float(np.mean([getattr(r, attr) for r in rows]))
        averaged.append(MetricsRecord(
            k=rows[0].k,
            consensus_err=mean('consensus_err'),
            opt_gap_raw=mean('opt_gap_raw'),
            opt_gap_scaled=mean('opt_gap_scaled'),
            tracking_err=mean('tracking_err'),
            u_inf_q=mean('u_inf_q'),
            grad_evals_cumulative=int(round(mean('grad_evals_cumulative'))),
            h_lambda_min=_extreme(rows, 'h_lambda_min', min),
            h_lambda_max=_extreme(rows, 'h_lambda_max', max),
        ))
    return averaged


class MetricsRecorder:
    """실험 산출물 디렉터리 관리 (지표 CSV, 보고서 JSON)"""

    def __init__(self, output_dir: str):
        self.output_dir = output_dir
        os.makedirs(self.output_dir, exist_ok=True)

    def path(self, filename: str) -> str:
        return os.path.join(self.output_dir, filename)

    def write_metrics_csv(self, records: Sequence[MetricsRecord], filename: str = 'metrics.csv',
                          method: Optional[str] = None) -> str:
        path = self.path(filename)
        records_to_frame(records, method).to_csv(path, index=False, float_format=FLOAT_FORMAT)
        logger.info(f"지표 저장: {path} ({len(records)}행)")
        return path

    def write_frame(self, df: pd.DataFrame, filename: str) -> str:
        path = self.path(filename)
        df.to_csv(path, index=False, float_format=FLOAT_FORMAT)
        return path

    def save_json(self, data: Dict, filename: str) -> str:
        path = self.path(filename)
        with open(path, 'w', encoding='utf-8') as f:
            json.dump(data, f, ensure_ascii=False, indent=2, default=str)
        return path

    def write_state_dumps(self, state_dumps: Sequence[Dict], rng_checkpoints: Sequence[Dict],
                          suffix: str = '') -> List[str]:
        """에폭 경계 상태(X, G, V, D)를 npz 로, RNG 체크포인트를 JSON 으로 저장"""
        paths = []
        for dump in state_dumps:
            path = self.path(f"states_k{dump['k']}{suffix}.npz")
            np.savez(path, X=dump['X'], G=dump['G'], V=dump['V'], D=dump['D'])
            paths.append(path)
        paths.append(self.save_json({'checkpoints': list(rng_checkpoints)},
                                    f"rng_checkpoints{suffix}.json"))
        logger.info(f"💾 상태 저장: {len(state_dumps)}개 에폭 경계 ({self.output_dir})")
        return paths

    @staticmethod
    def read_metrics_csv(path: str) -> pd.DataFrame:
        df = pd.read_csv(path)
        missing = [col for col in METRICS_COLUMNS if col not in df.columns]
        if missing:
            raise ValueError(f"지표 CSV 열 누락: {missing}")
        return df

    @staticmethod
    def load_records(path: str) -> List[MetricsRecord]:
        df = MetricsRecorder.read_metrics_csv(path)
        records = []
        for row in df.itertuples(index=False):
            records.append(MetricsRecord(
                k=int(row.k), consensus_err=float(row.consensus_err),
                opt_gap_raw=float(row.opt_gap_raw), opt_gap_scaled=float(row.opt_gap_scaled),
                tracking_err=float(row.tracking_err), u_inf_q=float(row.u_inf_q),
                grad_evals_cumulative=int(row.grad_evals_cumulative),
            ))
        return records


def run_summary(records: Sequence[MetricsRecord]) -> Dict:
    """실행 요약 통계"""
    if not records:
        return {'iterations': 0}
    df = records_to_frame(records)
    last = records[-1]
    return {
        'iterations': int(last.k),
        'final_opt_gap': last.opt_gap_raw,
        'final_consensus_err': last.consensus_err,
        'final_u_inf_q': last.u_inf_q,
        'min_opt_gap': float(df['opt_gap_raw'].min()),
        'grad_evals_total': int(last.grad_evals_cumulative),
    }
