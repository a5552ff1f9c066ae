# This program is in the public domain
"""
Output files.

Tables are comma separated with a header row.  Timelines use the JSON
array form of the browser trace event format, readable by
chrome://tracing and ui.perfetto.dev: a begin ("B") and end ("E")
event per span, in microseconds, with one thread per device queue, and
instant events ("i") for chunk completions and controller decisions.
Ends sort before begins at the same instant so that back to back spans
nest correctly.

Floats are written with twelve significant digits so that identical runs
give identical files.
"""

__all__ = ["write_rows", "read_rows", "write_trace", "write_trace_csv",
           "write_motion_trace", "write_cache_state", "trace_events"]

import csv
import json

from .context_ctl import rope_position
from .pipeline_sim import COMPUTE, TRANSFER

_QUEUES = (COMPUTE, TRANSFER)


def _cell(value):
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, float):
        return "%.12g" % value
    if isinstance(value, (list, tuple)):
        return " ".join(_cell(v) for v in value)
    return str(value)


def write_rows(filename, rows, columns=None):
    """
    Write a list of dicts as CSV.  *columns* defaults to the sorted keys of
    all rows; missing values are left empty.
    """
    if columns is None:
        columns = sorted(set(k for row in rows for k in row))
    with open(filename, 'w') as fid:
        writer = csv.writer(fid, lineterminator='\n')
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_cell(row[c]) if c in row else '' for c in columns])


def read_rows(filename):
    """Read a CSV table back as a list of dicts of strings."""
    with open(filename) as fid:
        return list(csv.DictReader(fid))


def _round(t):
    return float("%.12g" % (t*1e6))


def trace_events(report, pid=0, decisions=()):
    """
    Trace event dicts for *report*.  *decisions* is a list of
    (time, name, args) instant events to add, such as batch changes.
    """
    events = []
    for device in range(report.pipeline.K):
        for q, queue in enumerate(_QUEUES):
            events.append({'ph': 'M', 'pid': pid, 'tid': 2*device + q,
                           'name': 'thread_name',
                           'args': {'name': 'device %d %s' % (device, queue)}})
    timeline = [e for span in report.trace for e in span.events()]
    timeline.sort(key=lambda e: (e.time, e.kind))
    for event in timeline:
        batch = event.payload
        entry = {'ph': 'B' if event.kind == 'start' else 'E', 'pid': pid,
                 'tid': 2*event.device + _QUEUES.index(event.queue),
                 'name': batch.name, 'cat': event.queue,
                 'ts': _round(event.time)}
        if event.kind == 'start':
            entry['args'] = {'group': batch.group_id,
                             'steps': [s.name for s in batch.steps]}
        events.append(entry)
    last = 2*(report.pipeline.K-1)
    for time, name, step in report.markers:
        events.append({'ph': 'i', 's': 'p', 'pid': pid, 'tid': last,
                       'name': name, 'cat': 'output', 'ts': _round(time),
                       'args': {'stream': step.stream_id,
                                'chunk': step.chunk_seq}})
    for time, name, args in decisions:
        events.append({'ph': 'i', 's': 'g', 'pid': pid, 'tid': 0,
                       'name': name, 'cat': 'control', 'ts': _round(time),
                       'args': dict(args)})
    return events


def write_trace(filename, report, decisions=()):
    """Write the timeline of *report* as a trace event JSON array."""
    events = trace_events(report, decisions=decisions)
    with open(filename, 'w') as fid:
        fid.write("[\n")
        fid.write(",\n".join(json.dumps(e, sort_keys=True) for e in events))
        fid.write("\n]\n")


def write_trace_csv(filename, report):
    """
    Write one row per span of *report*.  *steps* lists the micro-steps of
    the micro-batch as space separated stream:chunk:level names.
    """
    rows = [{'device': s.device, 'queue': s.queue, 'start': s.start,
             'end': s.end, 'group': s.payload.group_id,
             'size': s.payload.size,
             'steps': [step.name.replace(' ', ':') for step in s.payload.steps]}
            for s in report.trace]
    write_rows(filename, rows, ['device', 'queue', 'start', 'end',
                                'group', 'size', 'steps'])


def write_motion_trace(filename, trace):
    """Write the rows recorded by a :class:`MotionController`."""
    write_rows(filename, trace, ['frame', 'd', 'd_hat', 's', 'start_timestep'])


def write_cache_state(filename, cache, rope=None):
    """
    Write slot, position and sink flag of every entry of a KV cache.  With
    a :class:`RopeState` the effective rotary position of each stream
    token is added.
    """
    columns = ['slot', 'position', 'sink']
    rows = [{'slot': slot, 'position': position, 'sink': sink}
            for slot, position, sink in cache.to_rows()]
    if rope is not None:
        columns.append('rope_position')
        for row in rows:
            if row['position'] >= 0:
                row['rope_position'] = rope_position(row['position'], rope)
    write_rows(filename, rows, columns)
