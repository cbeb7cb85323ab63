import json
import os

import numpy as np
import pandas as pd
import pytest

from main import EXIT_CONFIG, EXIT_DIVERGENCE, EXIT_GATE, EXIT_OK, main

SMALL = {
    'problem': {'family': 'quadratic', 'n': 3, 'd': 2, 'm': 10, 'seed': 1, 'regularizer': 0.5},
    'topology': {'kind': 'complete'},
    'algorithm': {'alpha': 0.05, 'T': 5, 'b': 5, 'hessian': 'clipped_secant', 'M1': 0.5, 'M2': 2.0},
    'run': {'max_iter': 40, 'seed': 3},
}


def _write_config(tmp_path, overrides=None, name='config.json'):
    data = json.loads(json.dumps(SMALL))
    for block, values in (overrides or {}).items():
        data.setdefault(block, {}).update(values)
    path = tmp_path / name
    path.write_text(json.dumps(data, indent=2), encoding='utf-8')
    return str(path)


def test_run_writes_outputs(tmp_path):
    out = tmp_path / 'out'
    assert main(['run', '--config', _write_config(tmp_path), '--output', str(out)]) == EXIT_OK
    for name in ('metrics.csv', 'certificate.json', 'metadata.json'):
        assert (out / name).exists()
    df = pd.read_csv(out / 'metrics.csv')
    assert list(df['k']) == list(range(41))
    metadata = json.loads((out / 'metadata.json').read_text(encoding='utf-8'))
    assert metadata['resolved']['alpha'] == 0.05
    assert metadata['gate']['passed'] is False
    assert metadata['hessian_bounds'] == {'M1': 0.5, 'M2': 2.0}


def test_rerun_is_byte_identical(tmp_path):
    config = _write_config(tmp_path)
    assert main(['run', '--config', config, '--output', str(tmp_path / 'a')]) == EXIT_OK
    assert main(['run', '--config', config, '--output', str(tmp_path / 'b')]) == EXIT_OK
    assert (tmp_path / 'a' / 'metrics.csv').read_bytes() == (tmp_path / 'b' / 'metrics.csv').read_bytes()


def test_replications_write_per_seed_files(tmp_path):
    out = tmp_path / 'out'
    config = _write_config(tmp_path, {'run': {'replications': 3, 'seed': 0, 'max_iter': 15}})
    assert main(['run', '--config', config, '--output', str(out)]) == EXIT_OK
    for seed in (0, 1, 2):
        assert (out / f'metrics_seed{seed}.csv').exists()
    per_seed = [pd.read_csv(out / f'metrics_seed{seed}.csv') for seed in (0, 1, 2)]
    averaged = pd.read_csv(out / 'metrics.csv')
    expected = sum(df['opt_gap_raw'] for df in per_seed) / 3.0
    pd.testing.assert_series_equal(averaged['opt_gap_raw'], expected, check_names=False, rtol=1e-12)
    metadata = json.loads((out / 'metadata.json').read_text(encoding='utf-8'))
    assert metadata['seeds'] == [0, 1, 2]
    assert set(metadata['runs']) == {'0', '1', '2'}


def test_record_states_written_at_period_boundaries(tmp_path):
    out = tmp_path / 'out'
    config = _write_config(tmp_path, {'run': {'record_states': True, 'max_iter': 20}})
    assert main(['run', '--config', config, '--output', str(out)]) == EXIT_OK
    for k in (0, 5, 10, 15, 20):
        with np.load(out / f'states_k{k}.npz') as data:
            assert all(data[name].shape == (3, 2) for name in ('X', 'G', 'V', 'D'))
    checkpoints = json.loads((out / 'rng_checkpoints.json').read_text(encoding='utf-8'))['checkpoints']
    assert [cp['k'] for cp in checkpoints] == [0, 5, 10, 15, 20]
    assert len(checkpoints[0]['states']) == 3


def test_record_states_off_writes_no_dumps(tmp_path):
    out = tmp_path / 'out'
    assert main(['run', '--config', _write_config(tmp_path), '--output', str(out)]) == EXIT_OK
    assert not list(out.glob('states_k*.npz'))
    assert not (out / 'rng_checkpoints.json').exists()


def test_replication_summaries_keep_diagnostics_and_spectrum(tmp_path):
    out = tmp_path / 'out'
    config = _write_config(tmp_path, {'run': {'replications': 2, 'max_iter': 15, 'diagnostics': True,
                                              'log_hessian_spectrum': True, 'record_states': True}})
    assert main(['run', '--config', config, '--output', str(out)]) == EXIT_OK
    metadata = json.loads((out / 'metadata.json').read_text(encoding='utf-8'))
    for seed in ('3', '4'):
        summary = metadata['runs'][seed]
        assert 'max_avg_preservation' in summary
        assert 'stop_reason' in summary
        assert (out / f'states_k10_seed{seed}.npz').exists()
        assert (out / f'rng_checkpoints_seed{seed}.json').exists()
    df = pd.read_csv(out / 'metrics.csv')
    assert {'h_lambda_min', 'h_lambda_max'} <= set(df.columns)
    assert df['h_lambda_min'].min() >= 0.5 - 1e-10
    assert df['h_lambda_max'].max() <= 2.0 + 1e-10


def test_run_echoes_resolved_config(tmp_path):
    out = tmp_path / 'out'
    config = _write_config(tmp_path, {'algorithm': {'T': 'auto'}})
    assert main(['run', '--config', config, '--output', str(out)]) in (EXIT_OK, EXIT_GATE)
    echoed = json.loads((out / 'config_resolved.json').read_text(encoding='utf-8'))
    metadata = json.loads((out / 'metadata.json').read_text(encoding='utf-8'))
    assert echoed['algorithm']['T'] == 'auto'
    assert echoed['resolved']['T'] == metadata['resolved']['T'] >= 1
    assert echoed['resolved']['alpha'] == 0.05
    assert echoed['problem']['n'] == 3


def test_strict_gate_failure(tmp_path):
    out = tmp_path / 'out'
    config = _write_config(tmp_path, {'run': {'strict_gate': True}})
    assert main(['run', '--config', config, '--output', str(out)]) == EXIT_GATE
    assert (out / 'gate_report.json').exists()
    assert not (out / 'metrics.csv').exists()
    report = json.loads((out / 'gate_report.json').read_text(encoding='utf-8'))
    assert report['passed'] is False


def test_compare_framework_matches_run(tmp_path):
    config = _write_config(tmp_path)
    assert main(['run', '--config', config, '--output', str(tmp_path / 'run')]) == EXIT_OK
    assert main(['compare', '--config', config, '--output', str(tmp_path / 'cmp'),
                 '--methods', 'framework']) == EXIT_OK
    run_df = pd.read_csv(tmp_path / 'run' / 'metrics.csv')
    cmp_df = pd.read_csv(tmp_path / 'cmp' / 'compare.csv')
    assert (cmp_df['method'] == 'framework').all()
    pd.testing.assert_frame_equal(cmp_df.drop(columns='method'), run_df, check_exact=True)


def test_compare_all_methods(tmp_path):
    out = tmp_path / 'cmp'
    config = _write_config(tmp_path, {'run': {'methods': ['framework', 'gt_svrg', 'dgd', 'gradient_tracking']}})
    assert main(['compare', '--config', config, '--output', str(out)]) == EXIT_OK
    df = pd.read_csv(out / 'compare.csv')
    assert list(df['method'].unique()) == ['framework', 'gt_svrg', 'dgd', 'gradient_tracking']
    assert df.loc[df['method'] == 'dgd', 'tracking_err'].isna().all()


def test_compare_empty_methods(tmp_path):
    assert main(['compare', '--config', _write_config(tmp_path), '--output', str(tmp_path / 'o'),
                 '--methods', '']) == EXIT_CONFIG


@pytest.mark.parametrize('overrides', [
    {'run': {'bogus': 1}},
    {'algorithm': {'b': 11}},
    {'topology': {'kind': 'torus'}},
])
def test_config_errors_exit_2(tmp_path, overrides):
    assert main(['run', '--config', _write_config(tmp_path, overrides), '--output', str(tmp_path / 'o')]) \
        == EXIT_CONFIG


def test_missing_config_exit_2(tmp_path):
    assert main(['run', '--config', str(tmp_path / 'nope.json')]) == EXIT_CONFIG


def test_certify_compliant_configuration(tmp_path):
    out = tmp_path / 'cert'
    config = _write_config(tmp_path, {
        'problem': {'regularizer': 20.0},
        'algorithm': {'alpha': 'auto', 'T': 'auto', 'b': None, 'hessian': 'identity'},
    })
    assert main(['certify', '--config', config, '--output', str(out)]) == EXIT_OK
    certificate = json.loads((out / 'certificate.json').read_text(encoding='utf-8'))
    assert certificate['passed'] is True
    assert certificate['gate']['passed'] is True


def test_certify_non_compliant_exit_3(tmp_path):
    assert main(['certify', '--config', _write_config(tmp_path), '--output', str(tmp_path / 'c')]) == EXIT_GATE


def test_validate_writes_report(tmp_path):
    out = tmp_path / 'val'
    assert main(['validate', '--config', _write_config(tmp_path), '--output', str(out)]) == EXIT_OK
    report = json.loads((out / 'validation.json').read_text(encoding='utf-8'))
    assert report['mixing_matrix']['passed'] is True
    assert report['sigma'] == pytest.approx(0.0, abs=1e-12)
    assert report['problem']['n'] == 3


def test_output_root_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv('VRQN_OUTPUT_ROOT', str(tmp_path / 'root'))
    config = _write_config(tmp_path, {'run': {'output_dir': 'exp1', 'max_iter': 5}})
    assert main(['run', '--config', config]) == EXIT_OK
    assert os.path.exists(tmp_path / 'root' / 'exp1' / 'metrics.csv')


def test_divergence_exit_4(tmp_path):
    config = _write_config(tmp_path, {'algorithm': {'alpha': 50.0, 'hessian': 'identity', 'b': None},
                                      'run': {'max_iter': 500}})
    assert main(['run', '--config', config, '--output', str(tmp_path / 'o')]) == EXIT_DIVERGENCE
