# This program is in the public domain
"""
SLO aware stream batch selection.

A chunk of $T$ frames is only available once $T$ frames have arrived, and a
batch of $B$ chunks cannot be formed from fewer than $BT$ buffered frames.
Within that limit, :func:`select_batch` picks the batch size with the best
modelled throughput whose chunk latency still meets the per frame deadline
and whose frame rate meets the target.

A pass carries the $nB$ micro-steps of a micro-batch through every block,
charged by :func:`streamsim.costmodel.latency_estimate` as in the
simulator, and encodes and decodes $B$ chunks.  It emits $B$ chunks, so
the frame rate is $BT$ over the pass time.  A chunk waits at most one pass
to join a micro-batch and then rides $n$ passes, which bounds its latency
by $n+1$ times the pass time.

Online, :class:`BatchController` adjusts the batch from observed latency
with additive increase and multiplicative decrease: a violation halves the
batch, a run of *streak* compliant passes grows it by one.

Example::

    >>> from streamsim.presets import H100, WAN_1_3B, stream_shape
    >>> slo = SloTarget(target_fps=16)
    >>> decision = select_batch(slo, H100, WAN_1_3B, stream_shape(),
    ...                         buffered_frames=7, b_max=8)
    >>> decision.batch_B
    1
"""

__all__ = ["SloTarget", "BatchDecision", "NotEnoughInput", "pass_time",
           "select_batch", "exhaustive_batch", "BatchController"]

import logging
import warnings
from collections import deque

from . import costmodel

log = logging.getLogger(__name__)

# Relative tolerance when comparing modelled throughputs.
_TIE = 1e-12


class NotEnoughInput(ValueError):
    """Fewer frames are buffered than one chunk needs."""


class SloTarget(object):
    """
    Service level objective for one stream.

    *target_fps* is the required output frame rate.  *per_frame_deadline*
    bounds the processing time per frame of a chunk and defaults to the
    frame period $1/f$.  *ttff_budget* bounds the time to first frame.
    """
    def __init__(self, target_fps, per_frame_deadline=None, ttff_budget=1.0):
        if not target_fps > 0:
            raise ValueError("target_fps must be positive, not %r" % target_fps)
        if per_frame_deadline is None:
            per_frame_deadline = 1./target_fps
        if not per_frame_deadline > 0:
            raise ValueError("per_frame_deadline must be positive, not %r"
                             % per_frame_deadline)
        if not ttff_budget > 0:
            raise ValueError("ttff_budget must be positive, not %r" % ttff_budget)
        self.target_fps = float(target_fps)
        self.per_frame_deadline = float(per_frame_deadline)
        self.ttff_budget = float(ttff_budget)

    @property
    def lenient(self):
        """True if the deadline is looser than the frame period."""
        return self.per_frame_deadline > 1./self.target_fps

    def __repr__(self):
        return ("SloTarget(target_fps=%g, per_frame_deadline=%g, ttff_budget=%g)"
                % (self.target_fps, self.per_frame_deadline, self.ttff_budget))


class BatchDecision(object):
    """
    Chosen batch size *batch_B* with its *predicted_latency* (s),
    *predicted_fps* and roofline *regime*.  *feasible* is False when no
    batch size meets the SLO and the decision is the fallback $B=1$.
    """
    def __init__(self, batch_B, chunk_frames_T, predicted_latency, regime,
                 feasible=True):
        if batch_B < 1:
            raise ValueError("batch_B must be at least 1, not %r" % batch_B)
        self.batch_B = int(batch_B)
        self.chunk_frames_T = int(chunk_frames_T)
        self.predicted_latency = float(predicted_latency)
        self.regime = regime
        self.feasible = feasible

    @property
    def predicted_fps(self):
        return self.batch_B*self.chunk_frames_T/self.predicted_latency

    def __eq__(self, other):
        return (isinstance(other, BatchDecision)
                and self.batch_B == other.batch_B
                and self.feasible == other.feasible)

    def __ne__(self, other):
        return not self == other

    def __repr__(self):
        return ("BatchDecision(B=%d, latency=%.6g, fps=%.6g, %s%s)"
                % (self.batch_B, self.predicted_latency, self.predicted_fps,
                   self.regime, "" if self.feasible else ", infeasible"))


def _batch_limit(shape, buffered_frames, b_max):
    T = shape.chunk_frames_T
    if buffered_frames < T:
        raise NotEnoughInput("need %d frames for one chunk but only %d are buffered"
                             % (T, buffered_frames))
    if b_max < 1:
        raise ValueError("b_max must be at least 1, not %r" % b_max)
    return min(int(b_max), int(buffered_frames)//T)


def pass_time(dev, model, shape, B):
    """
    Seconds for one micro-batch pass admitting and emitting *B* chunks of
    *shape* on a single device.
    """
    chunk = shape.replace(batch_B=1)
    backbone = costmodel.latency_estimate(
        dev, model, shape.replace(batch_B=shape.denoise_steps_n*B))
    return backbone + B*(model.vae_encode_time(chunk) + model.vae_decode_time(chunk))


def _chunk_latency(shape, latency):
    return (shape.denoise_steps_n + 1)*latency


def _evaluate(slo, dev, model, shape, B):
    latency = pass_time(dev, model, shape, B)
    fps = B*shape.chunk_frames_T/latency
    ok = (_chunk_latency(shape, latency) <= slo.per_frame_deadline*shape.chunk_frames_T
          and fps >= slo.target_fps)
    return latency, fps, ok


def _best(evaluated):
    # evaluated holds (B, latency, fps, ok) in increasing B
    best = None
    for B, latency, fps, ok in evaluated:
        if not ok:
            continue
        if best is None or fps > best[2]*(1+_TIE):
            best = (B, latency, fps)
    return best


def _decision(dev, model, shape, B, latency, feasible):
    micro_batch = shape.replace(batch_B=shape.denoise_steps_n*B)
    regime = costmodel.roofline_point(dev, model, micro_batch).regime
    return BatchDecision(B, shape.chunk_frames_T, latency, regime, feasible)


def select_batch(slo, dev, model, shape, buffered_frames, b_max):
    """
    Choose the stream batch size for the next pass.

    *shape* gives the chunk geometry; its batch size is ignored.  The
    candidates are $1 \\le B \\le \\min(b_{max}, \\lfloor F/T \\rfloor)$ for
    *buffered_frames* $F$.  Pass time grows with $B$, so the candidates
    meeting the deadline form a prefix found by bisection.  The decision
    carries the pass time as its predicted latency.  Among those
    meeting the SLO the highest throughput wins, the smallest $B$ on ties.

    Raises :class:`NotEnoughInput` if fewer than $T$ frames are buffered.
    """
    if slo.lenient:
        warnings.warn("per frame deadline %g s is looser than the frame period"
                      % slo.per_frame_deadline)
    limit = _batch_limit(shape, buffered_frames, b_max)
    deadline = slo.per_frame_deadline*shape.chunk_frames_T

    # largest B whose chunk latency meets the deadline
    lo, hi = 0, limit
    while lo < hi:
        mid = (lo + hi + 1)//2
        if _chunk_latency(shape, pass_time(dev, model, shape, mid)) <= deadline:
            lo = mid
        else:
            hi = mid - 1

    best = _best([(B,) + _evaluate(slo, dev, model, shape, B)
                  for B in range(1, lo+1)])
    if best is None:
        latency = pass_time(dev, model, shape, 1)
        decision = _decision(dev, model, shape, 1, latency, feasible=False)
        log.info("no batch size meets %s; falling back to %s", slo, decision)
        return decision
    decision = _decision(dev, model, shape, best[0], best[1], feasible=True)
    log.debug("selected %s from %d buffered frames", decision, buffered_frames)
    return decision


def exhaustive_batch(slo, dev, model, shape, buffered_frames, b_max):
    """
    Reference for :func:`select_batch` that evaluates every batch size.
    """
    limit = _batch_limit(shape, buffered_frames, b_max)
    candidates = []
    for B in range(1, limit+1):
        latency, fps, ok = _evaluate(slo, dev, model, shape, B)
        if ok:
            candidates.append((B, latency, fps))
    if not candidates:
        latency = pass_time(dev, model, shape, 1)
        return _decision(dev, model, shape, 1, latency, feasible=False)
    top = max(fps for _, _, fps in candidates)
    B, latency, _ = min(c for c in candidates if c[2] >= top/(1+_TIE))
    return _decision(dev, model, shape, B, latency, feasible=True)


class BatchController(object):
    """
    Additive increase, multiplicative decrease control of the batch size.

    A pass violates the SLO when its observed latency exceeds the chunk
    deadline or its frame rate falls below the target.  A violation halves
    the batch (never below 1) and resets the compliant streak; *streak*
    consecutive compliant passes grow the batch by one, up to *b_max*.

    The last *keep* (batch, observed latency, new batch) triples are kept
    in *history*.  The controller belongs to one stream and is not shared
    between threads.
    """
    def __init__(self, b_max, streak=4, keep=256):
        if b_max < 1:
            raise ValueError("b_max must be at least 1, not %r" % b_max)
        if streak < 1:
            raise ValueError("streak must be at least 1, not %r" % streak)
        self.b_max = int(b_max)
        self.streak = int(streak)
        self.compliant = 0
        self.history = deque(maxlen=keep)
        self.log = logging.getLogger(__name__)

    def adapt(self, prev, observed_latency, slo, observed_fps=None):
        """
        Return the decision for the next pass given the latency observed
        for *prev*.

        The frame rate is *observed_fps* when the caller measures it, and
        otherwise $BT$ over the observed latency.  The predicted latency of
        a resized batch scales the observed latency linearly with $B$.
        """
        if not observed_latency > 0:
            raise ValueError("observed_latency must be positive, not %r"
                             % observed_latency)
        B, T = prev.batch_B, prev.chunk_frames_T
        if observed_fps is None:
            observed_fps = B*T/observed_latency
        violated = (observed_latency > slo.per_frame_deadline*T
                    or observed_fps < slo.target_fps)
        feasible = True
        if violated:
            self.compliant = 0
            if B == 1:
                feasible = False
            new_B = max(1, B//2)
        else:
            self.compliant += 1
            new_B = B
            if self.compliant >= self.streak:
                self.compliant = 0
                new_B = min(self.b_max, B+1)
        latency = observed_latency*new_B/B
        decision = BatchDecision(new_B, T, latency, prev.regime, feasible)
        self.history.append((B, observed_latency, new_B))
        if new_B != B or not feasible:
            self.log.info("batch %d -> %d after %.4g s pass%s", B, new_B,
                          observed_latency, "" if feasible else " (infeasible)")
        return decision
