import os
import shutil
import tempfile
import warnings

import pytest

from streamsim import main as cli
from streamsim import tracefile
from streamsim.ref_kernels import load_tensor
from streamsim.support import get_data_path, resolve, sample_data


@pytest.fixture
def outdir():
    path = tempfile.mkdtemp()
    yield path
    shutil.rmtree(path)


def _scenario(path, deadline, ttff_budget=1.0):
    filename = os.path.join(path, 'slo.txt')
    with open(filename, 'w') as fid:
        fid.write('# schema: 1\n# resolution: "512"\n# batch: 4\n'
                  '# input_fps: 16\n# chunks: 16\n'
                  '# slo: {"target_fps": 16, "per_frame_deadline": %g, '
                  '"ttff_budget": %g}\n' % (deadline, ttff_budget))
    return filename


def test_run_sample(outdir):
    assert cli.main(['run', 'streaming_480p', '--output-dir', outdir]) == cli.EXIT_OK
    assert sorted(os.listdir(outdir)) == ['streaming_480p.csv',
                                          'streaming_480p.json']
    row = tracefile.read_rows(os.path.join(outdir, 'streaming_480p.csv'))[0]
    assert row['slo_violations'] == '0'


def test_exit_codes(outdir):
    assert cli.main(['run', _scenario(outdir, 0.125)]) == cli.EXIT_OK
    assert cli.main(['run', _scenario(outdir, 0.01)]) == cli.EXIT_SLO
    assert cli.main(['run', _scenario(outdir, 0.125, ttff_budget=0.3)]) == cli.EXIT_SLO
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        code = cli.main(['run', 'infeasible', '--output-dir', outdir])
    assert code == cli.EXIT_INFEASIBLE
    assert cli.main(['run']) == cli.EXIT_USAGE
    assert cli.main(['run', os.path.join(outdir, 'missing.txt')]) == cli.EXIT_USAGE
    assert cli.main([]) == cli.EXIT_USAGE
    bad = os.path.join(outdir, 'bad.txt')
    with open(bad, 'w') as fid:
        fid.write('# name: "no schema"\n')
    assert cli.main(['run', bad]) == cli.EXIT_USAGE


def test_preset(outdir):
    code = cli.main(['run', '--preset', 'stream_vae', '--seed', '2',
                     '--output-dir', outdir])
    assert code == cli.EXIT_OK
    rows = tracefile.read_rows(os.path.join(outdir, 'stream_vae.csv'))
    assert len(rows) == 4


def test_sweep(outdir):
    code = cli.main(['sweep', '--resolution', '512', '--gpus', '1', '2',
                     '--steps', '1', '--chunks', '16', '--output-dir', outdir])
    assert code == cli.EXIT_OK
    rows = tracefile.read_rows(os.path.join(outdir, 'sweep.csv'))
    assert [r['gpus'] for r in rows] == ['1', '2']


def test_balance(outdir):
    code = cli.main(['balance', 'skewed_blocks.csv', '-k', '3',
                     '--output-dir', outdir, '-o', 'stages.csv'])
    assert code == cli.EXIT_OK
    rows = tracefile.read_rows(os.path.join(outdir, 'stages.csv'))
    worst = lambda key: max(float(r[key]) for r in rows)
    assert worst('time_after') < worst('time_before')
    assert cli.main(['balance', 'skewed_blocks.csv', '-k', '30']) == cli.EXIT_INFEASIBLE


def test_calibrate(outdir):
    code = cli.main(['calibrate', '--fit-steps', '3', '--output-dir', outdir])
    assert code == cli.EXIT_OK
    assert os.listdir(outdir) == ['wan-1.3b-h100.txt']


def test_gen_fixtures(outdir):
    assert cli.main(['gen-fixtures', '--output-dir', outdir]) == cli.EXIT_OK
    names = sorted(os.listdir(outdir))
    assert len(names) == 12
    conv = load_tensor(os.path.join(outdir, 'conv_full.bin'))
    streamed = load_tensor(os.path.join(outdir, 'conv_streaming.bin'))
    assert conv.shape == (4, 16, 8, 8)
    assert abs(conv.values - streamed.values).max() < 1e-5


def test_data_path():
    assert os.path.isdir(get_data_path())
    assert os.path.exists(sample_data('skewed_blocks.csv'))
    assert resolve('infeasible') == sample_data('infeasible')
    assert resolve('not-a-sample.txt') == 'not-a-sample.txt'
    with pytest.raises(ValueError):
        sample_data('nothing')
