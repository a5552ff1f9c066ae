# This program is in the public domain
"""
Discrete event simulation of a pipelined streaming denoiser.

The backbone blocks are split into K contiguous stages, one per device,
connected in a ring.  A *micro-step* is one chunk at one noise level.
Micro-steps travel in *micro-batches* that circulate the ring.  A
micro-batch holds up to $nB$ micro-steps, $B$ at each of the $n$ noise
levels, and every stage runs all of them through its blocks in one pass
charged by the batched latency law of :mod:`streamsim.costmodel`.

On stage 0 a micro-batch admits up to $B$ ready chunks at the highest
noise level and encodes them.  On the last stage the micro-steps at level
0 are decoded and emitted as clean chunks; the others drop one level and
go round again.  An empty micro-batch parks before stage 0 until a chunk
arrives.  With $G \\ge K$ micro-batches in the ring every stage works on a
different one at once, and each pass of the slowest stage emits $B$
chunks, for a steady rate of $BT/t^*$.

Each device has a compute queue and a transfer queue.  With *overlap* the
activation hand-off to the next stage runs on the transfer queue while the
next micro-batch computes; without it the hand-off holds the compute
queue.

Example, a single stage of 0.1 s per chunk::

    >>> from streamsim.block_scheduler import BlockCostProfile, balance
    >>> from streamsim.presets import H100, WAN_1_3B, stream_shape
    >>> part = balance(BlockCostProfile([0.1/30]*30), 1)
    >>> pipe = build_pipeline(part, H100, WAN_1_3B.replace(vae_encode_cost=0.,
    ...     vae_decode_cost=0.), stream_shape(), comm_model=None)
    >>> report = run(pipe, chunks=20)
    >>> round(report.steady_fps, 6)
    40.0
"""

__all__ = ["COMPUTE", "TRANSFER", "StageSpec", "MicroStep", "MicroBatch",
           "SimEvent", "TraceSpan", "Pipeline", "SimReport", "block_profile",
           "build_pipeline", "run", "sweep"]

import heapq
import itertools
import logging
import warnings
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import costmodel
from .block_scheduler import BlockCostProfile, balance

log = logging.getLogger(__name__)

COMPUTE = 'compute'
TRANSFER = 'transfer'
_QUEUE_INDEX = {COMPUTE: 0, TRANSFER: 1}

# event kinds in processing order for equal times
_END = 0
_ARRIVAL = 1


class StageSpec(object):
    """
    One pipeline stage.

    *dit_time* is the backbone time of a pass over a full micro-batch and
    *comm_time* a fixed charge added to every pass.  *encode_time* is
    charged per chunk admitted when *has_vae_encode*, *decode_time* per
    chunk emitted when *has_vae_decode*.
    """
    def __init__(self, stage_id, dit_time, encode_time=0., decode_time=0.,
                 has_vae_encode=False, has_vae_decode=False, comm_time=0.):
        self.stage_id = stage_id
        self.dit_time = float(dit_time)
        self.comm_time = float(comm_time)
        self.has_vae_encode = has_vae_encode
        self.has_vae_decode = has_vae_decode
        self.encode_time = float(encode_time) if has_vae_encode else 0.
        self.decode_time = float(decode_time) if has_vae_decode else 0.
        if not self.compute_time > 0:
            raise ValueError("stage %d has no work" % stage_id)

    @property
    def compute_time(self):
        """Time of a full pass that admits and emits one chunk."""
        return self.pass_time(1., 1, 1)

    def pass_time(self, load, admitted=0, emitted=0):
        """
        Time of a pass whose backbone share is *load* times a full
        micro-batch, admitting *admitted* chunks and emitting *emitted*.
        """
        return (self.dit_time*load + self.comm_time
                + admitted*self.encode_time + emitted*self.decode_time)

    def __repr__(self):
        return ("StageSpec(%d, dit=%.6g, encode=%.6g, decode=%.6g)"
                % (self.stage_id, self.dit_time, self.encode_time,
                   self.decode_time))


class MicroStep(object):
    """Chunk *chunk_seq* of stream *stream_id* at noise level *noise_level_index*."""
    __slots__ = ["stream_id", "chunk_seq", "noise_level_index", "frames"]

    def __init__(self, stream_id, chunk_seq, noise_level_index, frames):
        self.stream_id = stream_id
        self.chunk_seq = chunk_seq
        self.noise_level_index = noise_level_index
        self.frames = frames

    @property
    def name(self):
        return "s%d c%d l%d" % (self.stream_id, self.chunk_seq,
                                self.noise_level_index)

    def denoised(self):
        """The same chunk one noise level lower."""
        return MicroStep(self.stream_id, self.chunk_seq,
                         self.noise_level_index-1, self.frames)

    def __repr__(self):
        return "MicroStep(%s)" % self.name


class MicroBatch(object):
    """The micro-steps micro-batch *group_id* carried through one pass."""
    __slots__ = ["group_id", "steps"]

    def __init__(self, group_id, steps):
        self.group_id = group_id
        self.steps = tuple(steps)

    @property
    def size(self):
        return len(self.steps)

    @property
    def name(self):
        return "g%d x%d" % (self.group_id, len(self.steps))

    def __repr__(self):
        return "MicroBatch(g%d, [%s])" % (self.group_id,
                                          ", ".join(s.name for s in self.steps))


class SimEvent(object):
    """Start or end of a span on one device queue."""
    __slots__ = ["time", "device", "queue", "kind", "payload"]

    def __init__(self, time, device, queue, kind, payload):
        self.time = time
        self.device = device
        self.queue = queue
        self.kind = kind
        self.payload = payload

    def __repr__(self):
        return ("SimEvent(%.6g, dev %d %s %s %s)"
                % (self.time, self.device, self.queue, self.kind,
                   self.payload.name))


class TraceSpan(object):
    """Interval [*start*, *end*) during which *device* ran *payload* on *queue*."""
    __slots__ = ["device", "queue", "start", "end", "payload"]

    def __init__(self, device, queue, start, end, payload):
        self.device = device
        self.queue = queue
        self.start = start
        self.end = end
        self.payload = payload

    @property
    def duration(self):
        return self.end - self.start

    def events(self):
        """The start and end :class:`SimEvent` of the span."""
        return [SimEvent(self.start, self.device, self.queue, 'start', self.payload),
                SimEvent(self.end, self.device, self.queue, 'end', self.payload)]

    def __repr__(self):
        return ("TraceSpan(dev %d %s %s [%.6g, %.6g])"
                % (self.device, self.queue, self.payload.name,
                   self.start, self.end))


class Pipeline(object):
    """
    A wired pipeline ready to :func:`run`.

    *load* lists the backbone time of a pass over $m$ micro-steps relative
    to a full micro-batch, for $m$ from 0 to *capacity*.  With stream
    batching a micro-batch admits *batch_B* chunks per pass and holds $nB$
    micro-steps; without it a single micro-batch carries one chunk at a
    time.  *groups* is the number of micro-batches in the ring, by default
    one per stage, doubled when hand-offs take time so that a transfer
    never leaves a stage idle.  *transfer_time* is the hand-off time per
    hop.  *max_batch* reserves room for a controller to raise the batch
    during a run.
    """
    def __init__(self, stages, transfer_time, frames_T, steps_n, batch_B,
                 load=None, overlap=True, stream_batch=True,
                 strategy=costmodel.PIPELINE_P2P, num_gpus=None, groups=None,
                 max_batch=None):
        self.stages = list(stages)
        self.transfer_time = float(transfer_time)
        self.frames_T = frames_T
        self.steps_n = steps_n
        self.batch_B = batch_B
        self.overlap = overlap
        self.stream_batch = stream_batch
        self.strategy = strategy
        self.num_gpus = len(self.stages) if num_gpus is None else num_gpus
        self.admit_limit = batch_B if stream_batch else 1
        widest = max(batch_B, max_batch or 0)
        self.capacity = steps_n*widest if stream_batch else 1
        if load is None:
            load = [0.] + [1.]*self.capacity
        if len(load) != self.capacity+1:
            raise ValueError("load needs %d entries, not %d"
                             % (self.capacity+1, len(load)))
        self.load = [float(v) for v in load]
        if groups is None:
            if self.K == 1 or not stream_batch:
                groups = 1
            else:
                groups = 2*self.K if self.transfer_time > 0 else self.K
        if groups < 1:
            raise ValueError("need at least one micro-batch, not %r" % groups)
        self.groups = int(groups)

    @property
    def K(self):
        return len(self.stages)

    @property
    def warmup(self):
        """Completions before the steady window: one per slot of each micro-batch."""
        return self.groups*self.admit_limit

    def stage_times(self):
        """Pass time of each stage for a full micro-batch in steady state."""
        B = self.admit_limit
        load = self.load[min(self.capacity, self.steps_n*B)]
        return [s.pass_time(load, B, B) for s in self.stages]

    def describe(self):
        return {'gpus': self.num_gpus, 'stages': self.K, 'steps': self.steps_n,
                'batch': self.batch_B, 'frames': self.frames_T,
                'capacity': self.capacity, 'groups': self.groups,
                'overlap': self.overlap, 'stream_batch': self.stream_batch,
                'strategy': self.strategy, 'stage_times': self.stage_times(),
                'transfer_time': self.transfer_time}

    def __repr__(self):
        return ("Pipeline(K=%d, n=%d, B=%d, groups=%d, transfer=%.3g)"
                % (self.K, self.steps_n, self.batch_B, self.groups,
                   self.transfer_time))


def block_profile(dev, model, shape, include_vae=True):
    """
    Block cost profile of *model* for one micro-batch pass of *shape*.

    Each block is charged its share of :func:`costmodel.latency_estimate`
    for the $nB$ micro-steps of a full micro-batch.  The VAE times are for
    the *shape.batch_B* chunks admitted and emitted by each pass.  With
    *include_vae* False the profile holds the backbone only, so a
    partition built from it ignores the VAE.
    """
    chunk = shape.replace(batch_B=1)
    n, B = shape.denoise_steps_n, shape.batch_B
    full = costmodel.latency_estimate(dev, model, shape.replace(batch_B=n*B))
    blocks = [full/model.num_blocks]*model.num_blocks
    if not include_vae:
        return BlockCostProfile(blocks)
    return BlockCostProfile(blocks, B*model.vae_encode_time(chunk),
                            B*model.vae_decode_time(chunk))


def _transfer_time(comm_model, dev, model, batch, K):
    if comm_model is None or K == 1:
        return 0.
    if isinstance(comm_model, (int, float)):
        if comm_model < 0:
            raise ValueError("transfer time must be non-negative")
        return float(comm_model)
    total = costmodel.comm_cost(comm_model, costmodel.tokens(model, batch),
                                model.hidden_dim, dev, K)
    return total/K


def build_pipeline(partition, dev, model, shape, comm_model=costmodel.PIPELINE_P2P,
                   num_gpus=None, overlap=True, stream_batch=True, groups=None,
                   max_batch=None):
    """
    Wire the stages of *partition* into a ring.

    Block times come from the partition profile and are taken as the time
    of a pass over a full micro-batch of $nB$ micro-steps.  Partial
    micro-batches are scaled by :func:`costmodel.latency_estimate` of
    *model*.  VAE times are those of *model* for one chunk of *shape*.
    *comm_model* is a strategy name from
    :data:`streamsim.costmodel.STRATEGIES`, a fixed hop time in seconds,
    or None for free hand-off.  *groups* and *max_batch* are passed to
    :class:`Pipeline`.

    For the pipeline strategy *num_gpus*, if given, must equal the number
    of stages.  The sequence parallel strategies run the whole model as a
    single logical stage: the backbone time is divided over *num_gpus* and
    the strategy's communication is added to every pass, since it sits on
    the critical path of every block.
    """
    if partition.profile is None:
        raise ValueError("partition has no cost profile")
    chunk = shape.replace(batch_B=1)
    T, n, B = shape.chunk_frames_T, shape.denoise_steps_n, shape.batch_B
    capacity = n*max(B, max_batch or 0) if stream_batch else 1
    full = costmodel.latency_estimate(dev, model, shape.replace(batch_B=n*B))
    load = [0.] + [costmodel.latency_estimate(dev, model, shape.replace(batch_B=m))/full
                   for m in range(1, capacity+1)]
    batch = shape.replace(batch_B=capacity)
    encode = model.vae_encode_time(chunk)
    decode = model.vae_decode_time(chunk)
    profile = partition.profile
    K = partition.stages

    if comm_model in (costmodel.ULYSSES, costmodel.RING_KV):
        if K != 1:
            raise ValueError("sequence parallel runs as one stage, not %d" % K)
        gpus = 1 if num_gpus is None else int(num_gpus)
        comm = costmodel.comm_cost(comm_model, costmodel.tokens(model, batch),
                                   model.hidden_dim, dev, gpus,
                                   num_blocks=model.num_blocks)
        dit = profile.segment(0, profile.num_blocks)/gpus
        stage = StageSpec(0, dit, encode, decode, True, True, comm_time=comm)
        return Pipeline([stage], 0., T, n, B, load, overlap, stream_batch,
                        comm_model, gpus, groups, max_batch)

    if num_gpus is not None and num_gpus != K:
        raise ValueError("partition has %d stages for %d devices" % (K, num_gpus))
    stages = []
    for k, (start, stop) in enumerate(partition.ranges()):
        stages.append(StageSpec(k, profile.segment(start, stop), encode, decode,
                                k == 0, k == K-1))
    hop = _transfer_time(comm_model, dev, model, batch, K)
    strategy = comm_model if isinstance(comm_model, str) else costmodel.PIPELINE_P2P
    return Pipeline(stages, hop, T, n, B, load, overlap, stream_batch, strategy,
                    groups=groups, max_batch=max_batch)


class SimReport(object):
    """
    Results of one run.

    *ttff* is the completion time of the first clean chunk, which includes
    buffering its input.  *steady_fps* counts frames completed after the
    warmup ones, the first pass of every micro-batch slot.
    *per_chunk_latency* holds completion minus arrival for every completed
    chunk.  *bubble_fraction* is the idle share of each device's compute
    queue over the steady window.  *slo_violations* counts chunks over the
    deadline and *ttff_violated* is set when the first frame misses the
    budget.  *decisions* holds the (time, name, args) records of the
    controllers that ran during the simulation.  *feasible* is cleared by
    the caller when the batch was a fallback that cannot meet the SLO.
    """
    def __init__(self, pipeline, ttff, steady_fps, per_chunk_latency,
                 bubble_fraction, slo_violations, chunks_in, chunks_out,
                 in_flight, completions, trace, markers, ttff_violated=False,
                 decisions=None):
        self.pipeline = pipeline
        self.ttff = ttff
        self.steady_fps = steady_fps
        self.per_chunk_latency = per_chunk_latency
        self.bubble_fraction = bubble_fraction
        self.slo_violations = slo_violations
        self.ttff_violated = ttff_violated
        self.chunks_in = chunks_in
        self.chunks_out = chunks_out
        self.in_flight = in_flight
        self.completions = completions
        self.trace = trace
        self.markers = markers
        self.decisions = [] if decisions is None else decisions
        self.feasible = True

    def latency_stats(self):
        """(p50, p95, max) of the chunk latency."""
        if not len(self.per_chunk_latency):
            return (np.nan, np.nan, np.nan)
        p50, p95 = np.percentile(self.per_chunk_latency, [50, 95])
        return (float(p50), float(p95), float(np.max(self.per_chunk_latency)))

    def to_row(self):
        p50, p95, worst = self.latency_stats()
        return {'ttff': self.ttff, 'fps': self.steady_fps,
                'latency_p50': p50, 'latency_p95': p95, 'latency_max': worst,
                'bubble': float(np.mean(self.bubble_fraction)),
                'slo_violations': self.slo_violations,
                'ttff_violated': int(self.ttff_violated),
                'chunks': self.chunks_out}

    def __repr__(self):
        return ("SimReport(ttff=%.4g s, fps=%.4g, chunks=%d)"
                % (self.ttff, self.steady_fps, self.chunks_out))


class _Simulation(object):
    def __init__(self, pipeline, input_fps, streams, control=None):
        self.pipe = pipeline
        self.control = control
        self.decisions = []
        self.input_fps = input_fps
        self.streams = streams
        self.now = 0.
        self.events = []
        self.order = itertools.count()
        self.waiting = {}
        self.busy = set()
        self.admission = []
        self.items = [[] for _ in range(pipeline.groups)]
        self.parked = list(range(pipeline.groups))
        self.summoned = False
        self.admitted = 0
        self.ready = {}
        self.done = {}
        self.trace = []
        self.markers = []

    def arrivals(self, chunks):
        T = self.pipe.frames_T
        for c in range(chunks):
            when = 0. if self.input_fps is None else (c+1)*T/self.input_fps
            for s in range(self.streams):
                self.ready[s, c] = when
                heapq.heappush(self.events,
                               (when, _ARRIVAL, -1, 0, next(self.order), (s, c)))

    def loop(self, horizon=None):
        while self.events:
            event = heapq.heappop(self.events)
            if horizon is not None and event[0] > horizon:
                break
            self.now = event[0]
            if event[1] == _ARRIVAL:
                heapq.heappush(self.admission, (self.ready[event[5]],) + event[5])
                self.wake()
            else:
                self.finish(*event[5])

    def wake(self):
        # one parked micro-batch at a time heads for stage 0
        if self.admission and self.parked and not self.summoned:
            self.summoned = True
            self.enqueue((0, COMPUTE), COMPUTE, heapq.heappop(self.parked), None)

    def enqueue(self, server, queue, group, target):
        heapq.heappush(self.waiting.setdefault(server, []),
                       (next(self.order), queue, group, target))
        self.start(server)

    def start(self, server):
        while server not in self.busy and self.waiting.get(server):
            _, queue, group, target = heapq.heappop(self.waiting[server])
            device = server[0]
            if queue == TRANSFER:
                duration = self.pipe.transfer_time
            else:
                duration = self.begin_pass(device, group)
                if duration is None:
                    continue
            end = self.now + duration
            self.busy.add(server)
            self.trace.append(TraceSpan(device, queue, self.now, end,
                                        MicroBatch(group, self.items[group])))
            heapq.heappush(self.events,
                           (end, _END, device, _QUEUE_INDEX[server[1]],
                            next(self.order), (server, queue, group, target)))
        self.wake()

    def begin_pass(self, device, group):
        pipe = self.pipe
        items = self.items[group]
        admitted = 0
        if device == 0:
            if not items:
                self.summoned = False
            room = min(pipe.admit_limit, pipe.capacity - len(items))
            while self.admission and admitted < room:
                _, s, c = heapq.heappop(self.admission)
                items.append(MicroStep(s, c, pipe.steps_n-1, pipe.frames_T))
                admitted += 1
            self.admitted += admitted
            if not items:
                heapq.heappush(self.parked, group)
                return None
        emitted = 0
        if device == pipe.K-1:
            emitted = sum(1 for step in items if step.noise_level_index == 0)
        stage = pipe.stages[device]
        return stage.pass_time(pipe.load[len(items)], admitted, emitted)

    def finish(self, server, queue, group, target):
        self.busy.discard(server)
        if queue == COMPUTE:
            self.computed(server[0], group)
        else:
            self.enqueue((target, COMPUTE), COMPUTE, group, None)
        self.start(server)

    def computed(self, device, group):
        pipe = self.pipe
        K = pipe.K
        if device == K-1:
            kept, emitted = [], []
            for step in self.items[group]:
                if step.noise_level_index == 0:
                    key = (step.stream_id, step.chunk_seq)
                    self.done[key] = self.now
                    self.markers.append((self.now, 'chunk done', step))
                    emitted.append((step, self.now - self.ready[key]))
                else:
                    kept.append(step.denoised())
            self.items[group] = kept
            if emitted and self.control is not None:
                self.decisions.extend(self.control(self.now, pipe, emitted))
            if not kept:
                heapq.heappush(self.parked, group)
                self.wake()
                return
        target = (device+1) % K
        if K > 1 and pipe.transfer_time > 0:
            server = (device, TRANSFER if pipe.overlap else COMPUTE)
            self.enqueue(server, TRANSFER, group, target)
        else:
            self.enqueue((target, COMPUTE), COMPUTE, group, None)

    def bubbles(self, lo, hi):
        if not hi > lo:
            return [0.]*self.pipe.K
        busy = [0.]*self.pipe.K
        for span in self.trace:
            if span.queue != COMPUTE:
                continue
            overlap = min(span.end, hi) - max(span.start, lo)
            if overlap > 0:
                busy[span.device] += overlap
        return [min(1., max(0., 1 - b/(hi-lo))) for b in busy]

    def report(self, slo):
        pipe = self.pipe
        finished = sorted((t, key) for key, t in self.done.items())
        times = [t for t, _ in finished]
        latency = np.array([t - self.ready[key] for t, key in finished])
        # Count chunks completed after the warmup ones over the time since
        # the last warmup chunk, so bursts of completions average out.
        warmup = pipe.warmup
        if len(times) > warmup:
            lo, hi, count = times[warmup-1], times[-1], len(times) - warmup
        else:
            if times:
                warnings.warn("%d chunks completed; the steady window includes"
                              " the first %d warmup chunks" % (len(times), warmup))
            lo, hi = (times[0], times[-1]) if times else (0., 0.)
            count = len(times) - 1
        if count > 0 and hi > lo:
            fps = pipe.frames_T*count/(hi - lo)
            bubble = self.bubbles(lo, hi)
        else:
            fps = 0.
            bubble = [0.]*pipe.K
        ttff = times[0] if times else float('inf')
        violations, ttff_violated = 0, False
        if slo is not None:
            deadline = slo.per_frame_deadline*pipe.frames_T
            violations = int(np.sum(latency > deadline))
            ttff_violated = ttff > slo.ttff_budget
            if ttff_violated:
                log.info("first frame at %.4g s misses the %.4g s budget",
                         ttff, slo.ttff_budget)
        return SimReport(pipe, ttff, fps, latency, bubble, violations,
                         self.admitted, len(times), self.admitted - len(times),
                         times, self.trace, self.markers, ttff_violated,
                         self.decisions)


def run(pipeline, chunks=None, duration=None, input_fps=None, slo=None,
        streams=1, horizon=None, control=None):
    """
    Simulate *pipeline* on a fixed rate source and return a :class:`SimReport`.

    The source delivers *chunks* chunks per stream, or as many as arrive in
    *duration* seconds at *input_fps*.  Chunk $c$ is ready once its $T$
    frames have arrived, at $(c+1)T/f$; with *input_fps* None every chunk
    is ready at time zero.  The run continues until every chunk is clean
    unless *horizon* stops the clock earlier.  *slo* enables counting
    chunks whose latency exceeds the per frame deadline times $T$, and
    checking the time to first frame against its budget.

    *control*, if given, is called as control(time, pipeline, emitted)
    after each pass that emits chunks, with the (micro-step, latency)
    pairs it emitted.  It may change *pipeline.admit_limit* and the stage
    backbone times for the passes that follow, and returns a list of
    (time, name, args) decision records.
    """
    if input_fps is not None and not input_fps > 0:
        raise ValueError("input_fps must be positive, not %r" % input_fps)
    if chunks is None:
        if duration is None or input_fps is None:
            raise ValueError("give chunks, or duration with input_fps")
        chunks = int(duration*input_fps/pipeline.frames_T + 1e-9)
    if chunks < 1:
        raise ValueError("need at least one chunk, not %r" % chunks)
    sim = _Simulation(pipeline, input_fps, streams, control)
    sim.arrivals(chunks)
    sim.loop(horizon)
    report = sim.report(slo)
    log.info("%s: %s", pipeline, report)
    return report


def _sweep_case(case, dev, model, shapes, chunks, input_fps, batch, overlap,
                stream_batch, balance_vae):
    name, K, n, strategy = case
    shape = shapes[name].replace(denoise_steps_n=n, batch_B=batch)
    profile = block_profile(dev, model, shape, include_vae=balance_vae)
    parallel = strategy == costmodel.PIPELINE_P2P
    partition = balance(profile, K if parallel else 1)
    pipe = build_pipeline(partition, dev, model, shape, comm_model=strategy,
                          num_gpus=K, overlap=overlap, stream_batch=stream_batch)
    report = run(pipe, chunks=chunks, input_fps=input_fps)
    row = {'resolution': name, 'gpus': K, 'steps': n, 'strategy': strategy,
           'batch': batch}
    row.update(report.to_row())
    return row


def sweep(dev, model, shapes, gpus=(1, 2, 3, 4), steps=(1,),
          strategies=(costmodel.PIPELINE_P2P,), chunks=48, input_fps=None,
          batch=1, overlap=True, stream_batch=True, balance_vae=True,
          workers=1):
    """
    Run the cartesian product of *shapes* x *gpus* x *steps* x *strategies*.

    *shapes* maps a resolution name to a :class:`StreamShape`.  Each case
    admits *batch* chunks per micro-batch pass, balances the blocks over
    its stages and simulates *chunks* chunks.  Returns one row per case in
    product order.  Cases are independent and run on *workers* threads.
    """
    cases = list(itertools.product(sorted(shapes), gpus, steps, strategies))
    kw = dict(dev=dev, model=model, shapes=shapes, chunks=chunks,
              input_fps=input_fps, batch=batch, overlap=overlap,
              stream_batch=stream_batch, balance_vae=balance_vae)
    one = lambda case: _sweep_case(case, **kw)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(one, cases))
    return [one(case) for case in cases]
