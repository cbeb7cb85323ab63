import json

import numpy as np
import pytest

from metrics_recorder import (METRICS_COLUMNS, MetricsRecord, MetricsRecorder, average_records,
                              records_to_frame, run_summary)


def _records(scale: float = 1.0, count: int = 4):
    return [MetricsRecord(k=k, consensus_err=scale / (k + 1), opt_gap_raw=scale * 0.5 ** k,
                          opt_gap_scaled=scale * 0.25 ** k, tracking_err=float('nan') if k == 0 else 1e-3 / 3,
                          u_inf_q=scale * 0.1 / (k + 1), grad_evals_cumulative=10 * (k + 1))
            for k in range(count)]


def test_frame_columns_and_method():
    df = records_to_frame(_records(), method='framework')
    assert list(df.columns) == ['method'] + METRICS_COLUMNS
    assert (df['method'] == 'framework').all()


def test_spectrum_columns_only_when_logged():
    records = _records()
    assert 'h_lambda_min' not in records_to_frame(records).columns
    for r in records:
        r.h_lambda_min, r.h_lambda_max = 0.5, 2.0
    df = records_to_frame(records)
    assert list(df.columns[-2:]) == ['h_lambda_min', 'h_lambda_max']


def test_empty_records_frame():
    df = records_to_frame([])
    assert df.empty and list(df.columns) == METRICS_COLUMNS


def test_csv_preserves_values(tmp_path):
    recorder = MetricsRecorder(str(tmp_path / 'out'))
    records = _records()
    path = recorder.write_metrics_csv(records)
    loaded = MetricsRecorder.load_records(path)
    assert [r.k for r in loaded] == [0, 1, 2, 3]
    assert loaded[2].opt_gap_raw == records[2].opt_gap_raw
    assert loaded[1].tracking_err == records[1].tracking_err
    assert np.isnan(loaded[0].tracking_err)


def test_missing_columns_rejected(tmp_path):
    path = tmp_path / 'bad.csv'
    path.write_text('k,consensus_err\n0,1.0\n')
    with pytest.raises(ValueError):
        MetricsRecorder.read_metrics_csv(str(path))


def test_average_records_truncates_to_shortest():
    averaged = average_records([_records(1.0, 4), _records(3.0, 3)])
    assert len(averaged) == 3
    assert averaged[1].opt_gap_raw == pytest.approx(1.0)
    assert averaged[2].grad_evals_cumulative == 30
    assert average_records([]) == []


def test_average_records_keeps_spectrum_extremes():
    first, second = _records(1.0, 3), _records(2.0, 3)
    for r in first:
        r.h_lambda_min, r.h_lambda_max = 0.6, 1.5
    for r in second:
        r.h_lambda_min, r.h_lambda_max = 0.4, 1.8
    averaged = average_records([first, second])
    assert all(r.h_lambda_min == 0.4 and r.h_lambda_max == 1.8 for r in averaged)
    assert list(records_to_frame(averaged).columns[-2:]) == ['h_lambda_min', 'h_lambda_max']
    assert average_records([first, _records(1.0, 3)])[0].h_lambda_min is None


def test_state_dumps_written_as_npz(tmp_path):
    recorder = MetricsRecorder(str(tmp_path))
    dumps = [{'k': k, 'X': np.full((2, 3), k), 'G': np.zeros((2, 3)), 'V': np.ones((2, 3)),
              'D': np.eye(2, 3)} for k in (0, 4)]
    checkpoints = [{'k': 0, 'states': [{'state': {'state': 12345678901234567890}}]}]
    recorder.write_state_dumps(dumps, checkpoints, suffix='_seed7')
    with np.load(tmp_path / 'states_k4_seed7.npz') as data:
        assert set(data.files) == {'X', 'G', 'V', 'D'}
        np.testing.assert_array_equal(data['X'], np.full((2, 3), 4))
    saved = json.loads((tmp_path / 'rng_checkpoints_seed7.json').read_text(encoding='utf-8'))
    assert saved['checkpoints'][0]['states'][0]['state']['state'] == 12345678901234567890


def test_json_keeps_unicode(tmp_path):
    recorder = MetricsRecorder(str(tmp_path))
    path = recorder.save_json({'상태': '통과', 'value': np.float64(0.5)}, 'report.json')
    with open(path, encoding='utf-8') as f:
        text = f.read()
    assert '통과' in text
    assert json.loads(text)['value'] == 0.5


def test_run_summary():
    summary = run_summary(_records())
    assert summary['iterations'] == 3
    assert summary['final_opt_gap'] == 0.125
    assert summary['min_opt_gap'] == 0.125
    assert summary['grad_evals_total'] == 40
    assert run_summary([]) == {'iterations': 0}
