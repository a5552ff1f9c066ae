# This program is in the public domain
"""
Scenario files.

A scenario describes one simulation: hardware, model, stream geometry,
service level, parallel strategy and controllers.  It is stored in the
same header format as measured data files: each ``# key: value`` line
holds a JSON value, and the optional data section is the measured block
cost table (block index, seconds)::

    # schema: 1
    # name: "h100-1.3b-480p"
    # device: "H100"
    # model: {"name": "wan-1.3b", "context_cost": 2.7e-8}
    # resolution: "480p"
    # gpus: 4
    # slo: {"target_fps": 16}
    # input_fps: 16
    # chunks: 64
    # online: {"every": 4, "streak": 4}
    # outputs: {"report": "report.csv", "trace": "trace.json"}

A device or model given by name is taken from :mod:`streamsim.presets`;
an object starting from a preset name overrides individual fields, and an
object without a name must give every required field.

With *online* set the batch controller and the block rebalancer run during
the simulation; their keys are *every* (emitting passes between control
rounds), *streak*, *hysteresis*, *smoothing* and the switches *batch* and
*rebalance*.  *drift* slows a block range partway through the run, for
example ``{"time": 2.0, "blocks": [5, 10], "scale": 3.0}``.

:func:`run_scenario` wires the modules together, runs the simulation and
controllers and writes the requested outputs.
"""

__all__ = ["SchemaError", "Scenario", "OnlineControl", "SCHEMA_VERSION",
           "load_scenario", "run_scenario"]

import json
import logging
import math
import os
import warnings

import numpy as np
from bumps.data import parse_multi

from . import costmodel, presets, tracefile
from .block_scheduler import (BlockCostProfile, OnlineRebalancer, balance,
                              make_partition, uniform_partition)
from .pipeline_sim import block_profile, build_pipeline, run
from .slo_batcher import (BatchController, BatchDecision, NotEnoughInput,
                          SloTarget, pass_time, select_batch)

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1

_DEFAULTS = dict(
    name="scenario",
    device="H100",
    model="wan-1.3b",
    resolution="480p",
    frames=4,
    steps=1,
    batch=1,
    b_max=8,
    gpus=4,
    strategy=costmodel.PIPELINE_P2P,
    overlap=True,
    stream_batch=True,
    partition="balance",
    slo=None,
    input_fps=None,
    chunks=None,
    duration=None,
    motion=None,
    context=None,
    online=None,
    drift=None,
    outputs={},
    seed=0,
    )


class SchemaError(ValueError):
    """Scenario file is missing, mis-versioned or malformed."""


class Scenario(object):
    """
    Settings for one run; see the module documentation for the keys.

    *block_times* is the measured block cost table, or None to derive the
    profile from the model cost coefficients.
    """
    def __init__(self, block_times=None, filename=None, **kw):
        unknown = set(kw) - set(_DEFAULTS) - set(['schema'])
        if unknown:
            raise SchemaError("unknown scenario keys: %s"
                              % ", ".join(sorted(unknown)))
        schema = kw.pop('schema', SCHEMA_VERSION)
        if schema != SCHEMA_VERSION:
            raise SchemaError("scenario schema %r is not supported; expected %d"
                              % (schema, SCHEMA_VERSION))
        settings = dict(_DEFAULTS)
        settings.update(kw)
        for key, value in settings.items():
            setattr(self, key, value)
        self.block_times = block_times
        self.filename = filename
        if self.chunks is None and self.duration is None:
            self.chunks = 32
        if self.duration is not None and self.input_fps is None:
            raise SchemaError("duration needs input_fps")

    def device_spec(self):
        return _spec(self.device, presets.lookup_device, costmodel.DeviceSpec)

    def model_spec(self):
        return _spec(self.model, presets.lookup_model, costmodel.ModelSpec)

    def slo_target(self):
        if self.slo is None:
            return None
        try:
            return SloTarget(**self.slo)
        except TypeError as exc:
            raise SchemaError("bad slo %r: %s" % (self.slo, exc))

    def stream_shape(self, batch=1):
        if isinstance(self.resolution, list):
            height, width = self.resolution
            return costmodel.StreamShape(batch_B=batch, chunk_frames_T=self.frames,
                                         height_H=height, width_W=width,
                                         denoise_steps_n=self.steps)
        return presets.stream_shape(self.resolution, frames=self.frames,
                                    steps=self.steps, batch=batch)

    def __repr__(self):
        return "Scenario(%r)" % self.name


def _spec(value, lookup, cls):
    if isinstance(value, str):
        return lookup(value)
    if not isinstance(value, dict):
        raise SchemaError("expected a preset name or object, not %r" % (value,))
    fields = dict(value)
    if 'name' in fields:
        try:
            base = lookup(fields['name'])
        except ValueError:
            base = None
        if base is not None:
            return base.replace(**fields)
    try:
        return cls(**fields)
    except TypeError as exc:
        raise SchemaError("bad %s %r: %s" % (cls.__name__, value, exc))


def load_scenario(filename):
    """
    Load a :class:`Scenario` from *filename*.

    Raises :class:`SchemaError` if the file has no ``schema`` key, a value
    is not JSON or a key is unknown.
    """
    if not os.path.exists(filename):
        raise IOError("scenario file %r not found" % filename)
    entries = parse_multi(filename, keysep=":", sep=None, comment="#")
    if len(entries) != 1:
        raise SchemaError("%s: expected one section, found %d"
                          % (filename, len(entries)))
    header, data = entries[0]
    if 'schema' not in header:
        raise SchemaError("%s: missing 'schema' key" % filename)
    settings = {}
    for key, text in header.items():
        try:
            settings[key] = json.loads(text)
        except ValueError:
            raise SchemaError("%s: value of %r is not JSON: %s"
                              % (filename, key, text))
    block_times = None
    data = np.asarray(data, dtype='d')
    if data.size:
        if data.ndim != 2 or data.shape[0] < 2:
            raise SchemaError("%s: block table needs block and seconds columns"
                              % filename)
        index, seconds = data[0], data[1]
        block_times = seconds[np.argsort(index, kind='mergesort')]
    return Scenario(block_times=block_times, filename=filename, **settings)


def _fixed_decision(dev, model, shape, batch):
    micro = shape.replace(batch_B=shape.denoise_steps_n*batch)
    regime = costmodel.roofline_point(dev, model, micro).regime
    return BatchDecision(batch, shape.chunk_frames_T,
                         pass_time(dev, model, shape, batch), regime)


def _choose_batch(scenario, dev, model, decisions):
    """Batch decision and feasibility for the scenario."""
    slo = scenario.slo_target()
    shape = scenario.stream_shape()
    if scenario.batch != "auto":
        batch = int(scenario.batch)
        return _fixed_decision(dev, model, shape, batch), True
    if slo is None:
        raise SchemaError("batch 'auto' needs an slo")
    if scenario.input_fps is None:
        buffered = scenario.b_max*scenario.frames
    else:
        buffered = int(scenario.input_fps*slo.ttff_budget)
    try:
        decision = select_batch(slo, dev, model, shape, buffered, scenario.b_max)
    except NotEnoughInput as exc:
        warnings.warn(str(exc))
        return _fixed_decision(dev, model, shape, 1), False
    decisions.append((0., "batch", {'B': decision.batch_B,
                                    'latency': decision.predicted_latency,
                                    'feasible': decision.feasible}))
    return decision, decision.feasible


class OnlineControl(object):
    """
    Batch controller and block rebalancer driven by the simulator.

    Every *every* emitting passes the worst chunk latency of the round goes
    to a :class:`streamsim.slo_batcher.BatchController` together with the
    frame rate of the current stage times; a new batch size takes effect
    at the next admission.  The same round feeds the measured block times,
    scaled to the current micro-batch, to an
    :class:`streamsim.block_scheduler.OnlineRebalancer`; new boundaries
    reassign the stage backbone times.  *drift* scales the reference time
    of a block range once the clock passes its *time*.

    Calls return the (time, name, args) decision records of the round.
    """
    def __init__(self, partition, encode_time, decode_time, decision,
                 slo=None, b_max=8, every=4, streak=4, hysteresis=0.05,
                 smoothing=0.5, batch=True, rebalance=True, drift=None):
        if every < 1:
            raise ValueError("every must be at least 1, not %r" % every)
        self.block_times = np.array(partition.profile.block_times, dtype='d')
        self.encode_time = encode_time
        self.decode_time = decode_time
        self.decision = decision
        self.slo = slo
        self.every = int(every)
        self.batcher = None
        if batch and slo is not None:
            self.batcher = BatchController(b_max, streak=streak)
        self.rebalancer = None
        if rebalance and partition.stages > 1:
            self.rebalancer = OnlineRebalancer(partition.profile, partition.stages,
                                               hysteresis=hysteresis,
                                               smoothing=smoothing)
            self.rebalancer.partition = partition
        self.boundaries = partition.boundaries
        self.drift = drift
        self.passes = 0
        self.latencies = []
        self.log = logging.getLogger(__name__ + ".online")

    def measured(self, pipe):
        """Block profile of the current micro-batch."""
        B = pipe.admit_limit
        load = pipe.load[min(pipe.capacity, pipe.steps_n*B)]
        return BlockCostProfile(self.block_times*load, B*self.encode_time,
                                B*self.decode_time)

    def _assign(self, pipe):
        if pipe.K == 1:
            pipe.stages[0].dit_time = math.fsum(self.block_times)/pipe.num_gpus
            return
        edges = (0,) + tuple(self.boundaries) + (len(self.block_times),)
        for stage, start, stop in zip(pipe.stages, edges[:-1], edges[1:]):
            stage.dit_time = math.fsum(self.block_times[start:stop])

    def _apply_drift(self, now, pipe):
        start, stop = self.drift.get('blocks', [0, len(self.block_times)])
        scale = float(self.drift.get('scale', 1.))
        self.block_times[start:stop] *= scale
        self._assign(pipe)
        self.drift = None
        self.log.info("blocks [%d, %d) slowed %gx at %.4g s", start, stop,
                      scale, now)
        return (now, "drift", {'blocks': [start, stop], 'scale': scale})

    def _adapt_batch(self, now, pipe, latency):
        T = pipe.frames_T
        fps = pipe.admit_limit*T/max(pipe.stage_times())
        decision = self.batcher.adapt(self.decision, latency, self.slo,
                                      observed_fps=fps)
        changed = decision.batch_B != self.decision.batch_B
        self.decision = decision
        if not changed:
            return None
        pipe.batch_B = pipe.admit_limit = decision.batch_B
        return (now, "batch", {'B': decision.batch_B, 'latency': latency,
                               'feasible': decision.feasible})

    def _rebalance(self, now, pipe):
        measured = self.measured(pipe)
        old = self.boundaries
        new = self.rebalancer.update(measured).boundaries
        if new == old:
            return None
        self.boundaries = new
        self._assign(pipe)
        return (now, "rebalance",
                {'boundaries': list(new),
                 'before': make_partition(measured, old).max_time,
                 'after': make_partition(measured, new).max_time})

    def __call__(self, now, pipe, emitted):
        records = []
        if self.drift is not None and now >= self.drift.get('time', 0.):
            records.append(self._apply_drift(now, pipe))
        self.latencies.extend(latency for _, latency in emitted)
        self.passes += 1
        if self.passes % self.every:
            return records
        latency, self.latencies = max(self.latencies), []
        if self.batcher is not None:
            records.append(self._adapt_batch(now, pipe, latency))
        if self.rebalancer is not None:
            records.append(self._rebalance(now, pipe))
        return [r for r in records if r is not None]


def _partition(scenario, profile, stages):
    rule = scenario.partition
    if rule == "balance":
        return balance(profile, stages)
    if rule == "uniform":
        return uniform_partition(profile, stages)
    if isinstance(rule, list):
        return make_partition(profile, rule)
    raise SchemaError("partition must be 'balance', 'uniform' or a list, not %r"
                      % (rule,))


def _motion(scenario, paths):
    config = dict(scenario.motion)
    controller = presets.replay_motion(config.pop('profile', None),
                                       seed=scenario.seed, **config)
    if 'motion' in paths:
        tracefile.write_motion_trace(paths['motion'], controller.trace)
    return controller


def _context(scenario, paths):
    config = dict(scenario.context)
    try:
        rows, sinks, cache, rope = presets.replay_context(
            frames=scenario.frames, seed=scenario.seed, **config)
    except TypeError as exc:
        raise SchemaError("bad context %r: %s" % (scenario.context, exc))
    if 'cache' in paths:
        tracefile.write_cache_state(paths['cache'], cache, rope)
    if 'context' in paths:
        tracefile.write_rows(paths['context'], rows)
    return sinks, cache


def run_scenario(scenario, output_dir=None):
    """
    Run *scenario* (a :class:`Scenario` or a file name).

    Outputs named in the scenario are written relative to *output_dir*,
    which defaults to the current directory.  Returns the
    :class:`streamsim.pipeline_sim.SimReport`; its *feasible* attribute is
    False when no batch size could meet the SLO.  Decisions of the online
    controllers are in the report *decisions* and, with the initial batch
    choice, in the trace.
    """
    if not isinstance(scenario, Scenario):
        scenario = load_scenario(scenario)
    output_dir = output_dir or "."
    paths = dict((k, os.path.join(output_dir, v))
                 for k, v in scenario.outputs.items())
    dev, model = scenario.device_spec(), scenario.model_spec()
    decisions = []
    decision, feasible = _choose_batch(scenario, dev, model, decisions)
    batch = decision.batch_B
    shape = scenario.stream_shape(batch)
    chunk = shape.replace(batch_B=1)
    encode, decode = model.vae_encode_time(chunk), model.vae_decode_time(chunk)

    parallel = scenario.strategy == costmodel.PIPELINE_P2P
    stages = scenario.gpus if parallel else 1
    if scenario.block_times is not None:
        profile = BlockCostProfile(scenario.block_times, batch*encode,
                                   batch*decode)
    else:
        profile = block_profile(dev, model, shape)
    partition = _partition(scenario, profile, stages)
    online = scenario.online
    pipe = build_pipeline(partition, dev, model, shape,
                          comm_model=scenario.strategy, num_gpus=scenario.gpus,
                          overlap=scenario.overlap,
                          stream_batch=scenario.stream_batch,
                          max_batch=scenario.b_max if online is not None else None)
    control = None
    if online is not None or scenario.drift is not None:
        try:
            control = OnlineControl(partition, encode, decode, decision,
                                    slo=scenario.slo_target(),
                                    b_max=scenario.b_max, drift=scenario.drift,
                                    **dict(online or {'batch': False,
                                                      'rebalance': False}))
        except TypeError as exc:
            raise SchemaError("bad online %r: %s" % (online, exc))
    report = run(pipe, chunks=scenario.chunks, duration=scenario.duration,
                 input_fps=scenario.input_fps, slo=scenario.slo_target(),
                 control=control)
    report.feasible = feasible
    log.info("%s: batch %d, %s, %s", scenario, batch, partition, report)

    if 'report' in paths:
        row = dict(name=scenario.name, batch=batch, feasible=feasible,
                   boundaries=list(partition.boundaries))
        row.update(report.to_row())
        tracefile.write_rows(paths['report'], [row])
    if 'trace' in paths:
        tracefile.write_trace(paths['trace'], report, decisions + report.decisions)
    if 'trace_csv' in paths:
        tracefile.write_trace_csv(paths['trace_csv'], report)
    if scenario.motion is not None:
        _motion(scenario, paths)
    if scenario.context is not None:
        _context(scenario, paths)
    return report
