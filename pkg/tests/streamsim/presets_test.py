import pytest

from streamsim import costmodel as cm
from streamsim import presets
from streamsim.pipeline_sim import sweep


def test_lookup():
    assert presets.lookup_device('H100') is presets.H100
    assert presets.lookup_model('wan-14b').num_blocks == 40
    with pytest.raises(ValueError):
        presets.lookup_device('TPU')
    with pytest.raises(ValueError):
        presets.lookup_model('wan-7b')
    shape = presets.stream_shape('480p', frames=8, steps=2, batch=3)
    assert (shape.height_H, shape.width_W) == (480, 832)
    assert (shape.chunk_frames_T, shape.denoise_steps_n, shape.batch_B) == (8, 2, 3)


def test_ttff_bars():
    rows = presets.ttff_bars()
    ttff = dict(((r['fps'], r['method']), r['ttff']) for r in rows)
    assert abs(ttff[16, 'streaming'] - 0.47) < 0.15*0.47
    assert abs(ttff[30, 'streaming'] - 0.37) < 0.15*0.37
    assert ttff[30, 'large_chunk'] >= 18*ttff[30, 'streaming']
    assert ttff[16, 'streaming'] > ttff[30, 'streaming']
    clip = presets.stream_shape('512', frames=81)
    assert ttff[30, 'large_chunk'] == cm.ttff_estimate(presets.H100, presets.WAN_1_3B,
                                                        clip, 30, passes=2)


def test_fps_anchors():
    rows = presets.fps_anchors()
    assert len(rows) == len(presets.FPS_ANCHORS)
    for row in rows:
        assert abs(row['error']) < 0.10, row


def test_fps_scaling():
    rows = presets.fps_scaling(resolutions=('480p',), gpus=(1, 4), steps=(1,),
                               balance_vae=False)
    single, four = rows
    assert single['speedup'] == 1 and single['dit_speedup'] == 1
    assert four['dit_speedup'] >= 3.4
    assert four['speedup'] < four['dit_speedup']


def test_multi_step_rates():
    # the noise levels of a chunk share each micro-batch pass
    shapes = {'512': presets.stream_shape('512'),
              '480p': presets.stream_shape('480p')}
    rows = sweep(presets.H100, presets.WAN_1_3B, shapes, gpus=(4,), steps=(1, 4))
    fps = dict(((r['resolution'], r['steps']), r['fps']) for r in rows)
    assert fps['512', 4] > 60
    assert fps['480p', 4] > 40
    assert fps['512', 4] > 0.95*fps['512', 1]
    anchors = dict(((r['model'], r['resolution'], r['steps']), r)
                   for r in presets.fps_anchors())
    assert abs(anchors['wan-14b', '480p', 4]['error']) < 0.05
    assert abs(anchors['wan-1.3b', '512', 4]['error']) < 0.06


def test_balance_before_after():
    rows = presets.balance_before_after()
    assert len(rows) == 4
    assert sum(r['blocks_before'] for r in rows) == 30
    assert sum(r['blocks_after'] for r in rows) == 30
    assert (max(r['time_after'] for r in rows)
            < max(r['time_before'] for r in rows))
    mean = lambda key: sum(r[key] for r in rows)/len(rows)
    assert mean('bubble_after') < mean('bubble_before')
    assert rows[0]['fps_after'] > rows[0]['fps_before']


def test_stream_batch():
    rows = presets.stream_batch(steps=(1, 2, 4))
    gains = [r['gain'] for r in rows]
    assert all(g > 1 for g in gains)
    assert gains == sorted(gains)


def test_sp_vs_pp():
    rows = dict((r['strategy'], r) for r in presets.sp_vs_pp())
    assert rows[cm.PIPELINE_P2P]['comm_ratio'] == 1
    assert 20 <= rows[cm.ULYSSES]['comm_ratio'] <= 40
    assert rows[cm.RING_KV]['comm_ratio'] > 1
    best = max(rows.values(), key=lambda r: r['fps'])
    assert best['strategy'] == cm.PIPELINE_P2P


def test_motion_trace():
    rows = presets.motion_trace()
    assert len(rows) == 65
    assert rows[32]['start_timestep'] == 1000
    assert rows[-1]['start_timestep'] == 250
    assert rows[-1]['s'] < rows[32]['s']


def test_context_trace():
    rows = presets.context_trace()
    assert len(rows) == 16
    assert rows[0]['refreshed'] == 0
    assert all(r['cache_size'] <= 64 for r in rows)
    assert all(1 <= r['rope_position'] <= 32 for r in rows)
    assert rows[-1]['evicted'] == 4
    assert rows[-1]['cache_size'] == 64


def test_stream_vae():
    rows = presets.stream_vae()
    assert [r['chunk_frames'] for r in rows] == [1, 2, 4, 8]
    assert all(r['max_abs_diff'] < 1e-6 for r in rows)
    assert all(r['cached_frames'] == 4 for r in rows)


def test_run_preset():
    assert presets.run_preset('stream_vae', chunk_sizes=(4,))[0]['chunk_frames'] == 4
    with pytest.raises(ValueError):
        presets.run_preset('fig4')
