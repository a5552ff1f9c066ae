import json
import os
import shutil
import tempfile

import numpy as np

from streamsim.block_scheduler import BlockCostProfile, balance
from streamsim.context_ctl import KvEntry, RollingKvCache, RopeState, kv_append
from streamsim.pipeline_sim import COMPUTE, TRANSFER, build_pipeline, run
from streamsim.presets import H100, WAN_1_3B, stream_shape
from streamsim import tracefile


def _report():
    model = WAN_1_3B.replace(vae_encode_cost=0., vae_decode_cost=0.)
    part = balance(BlockCostProfile([0.001]*8), 2)
    shape = stream_shape('512', steps=2, batch=2)
    pipe = build_pipeline(part, H100, model, shape, comm_model=0.0005)
    return run(pipe, chunks=6)


def test_trace_events():
    report = _report()
    events = tracefile.trace_events(report, decisions=[(0., 'batch', {'B': 2})])
    kinds = [e['ph'] for e in events]
    assert kinds.count('M') == 4
    assert kinds.count('B') == kinds.count('E') == len(report.trace)
    assert kinds.count('i') == report.chunks_out + 1
    begins = [e for e in events if e['ph'] == 'B']
    first = min(report.trace, key=lambda s: s.start)
    assert begins[0]['ts'] == first.start*1e6
    assert set(e['cat'] for e in begins) == set([COMPUTE, TRANSFER])
    # compute and transfer of a device on separate threads
    tids = set((e['tid'], e['cat']) for e in begins)
    assert len(tids) == len(set(t for t, _ in tids))
    # begin and end alternate on every thread
    per_thread = {}
    for e in events:
        if e['ph'] in 'BE':
            per_thread.setdefault(e['tid'], []).append(e['ph'])
    for phases in per_thread.values():
        assert phases == ['B', 'E']*(len(phases)//2)
    sizes = sorted(len(e['args']['steps']) for e in begins)
    assert sizes == sorted(s.payload.size for s in report.trace)
    assert all(e['args']['steps'][0].startswith('s0 c') for e in begins)


def test_write_trace_identical():
    path = tempfile.mkdtemp()
    try:
        names = [os.path.join(path, n) for n in ('a.json', 'b.json')]
        for name in names:
            tracefile.write_trace(name, _report())
        with open(names[0]) as fid:
            first = fid.read()
        with open(names[1]) as fid:
            assert fid.read() == first
        events = json.loads(first)
        assert isinstance(events, list) and events[0]['ph'] == 'M'
    finally:
        shutil.rmtree(path)


def test_rows():
    fd, filename = tempfile.mkstemp(suffix='.csv')
    os.close(fd)
    try:
        rows = [{'a': 1, 'b': 0.1, 'flag': True, 'bounds': [3, 7]},
                {'a': 2, 'b': 1/3.}]
        tracefile.write_rows(filename, rows)
        back = tracefile.read_rows(filename)
        assert back[0] == {'a': '1', 'b': '0.1', 'bounds': '3 7', 'flag': '1'}
        assert back[1]['b'] == '0.333333333333'
        assert back[1]['flag'] == ''
    finally:
        os.unlink(filename)


def test_span_table():
    report = _report()
    fd, filename = tempfile.mkstemp(suffix='.csv')
    os.close(fd)
    try:
        tracefile.write_trace_csv(filename, report)
        rows = tracefile.read_rows(filename)
        assert len(rows) == len(report.trace)
        assert set(r['queue'] for r in rows) == set([COMPUTE, TRANSFER])
        for row, span in zip(rows, report.trace):
            assert int(row['size']) == span.payload.size
            assert int(row['group']) == span.payload.group_id
            assert len(row['steps'].split()) == span.payload.size
        assert rows[0]['steps'].split()[0] == 's0:c0:l1'
    finally:
        os.unlink(filename)


def test_cache_state():
    sinks = [KvEntry(np.ones(2), np.ones(2), -1)]
    cache = RollingKvCache(5, sinks=sinks)
    for positions in (range(30, 33), range(33, 36)):
        kv_append(cache, [KvEntry(np.ones(2), np.ones(2), p) for p in positions])
    fd, filename = tempfile.mkstemp(suffix='.csv')
    os.close(fd)
    try:
        tracefile.write_cache_state(filename, cache, RopeState(16))
        rows = tracefile.read_rows(filename)
        assert [r['sink'] for r in rows] == ['1', '0', '0', '0', '0']
        assert [r['position'] for r in rows] == ['-1', '32', '33', '34', '35']
        assert [r['rope_position'] for r in rows] == ['', '16', '1', '2', '3']
    finally:
        os.unlink(filename)
