# This program is in the public domain
r"""
Long horizon context control.

Three mechanisms keep an unbounded stream within the context the model was
trained on:

*Sink refresh*.  A small set of sink embeddings anchors attention.  For each
new chunk embedding $h_t$ the cosine similarity $\alpha_i = \cos(h_t, s_i)$
to every sink is computed; sinks with $\alpha_i < \tau$ are replaced by
$h_t$, the rest are kept.

*Rotary phase reset*.  Once the frame index passes $T_{reset}$ the rotary
position wraps back, so attention never sees positions beyond the trained
range.

*Rolling key/value cache*.  Sink tokens sit in pinned slots at the front of
the cache and are never evicted.  The remaining slots form a ring holding
the most recent tokens; when it is full the oldest entry is dropped.
"""

__all__ = ["SinkSet", "sink_refresh", "RopeState", "rope_position",
           "KvEntry", "RollingKvCache", "kv_append", "kv_window",
           "chunk_embedding"]

import logging
from collections import deque

import numpy as np

log = logging.getLogger(__name__)


def _unit(vector, what):
    vector = np.asarray(vector, dtype='d')
    norm = np.linalg.norm(vector)
    if not np.all(np.isfinite(vector)):
        raise ValueError("%s has non-finite values" % what)
    if norm == 0:
        raise ValueError("%s has zero norm" % what)
    return vector, norm


class SinkSet(object):
    """
    *sinks* is an m x D array of sink embeddings, *tau* the similarity
    threshold and *last_refresh* the chunk index at which each sink was
    last replaced (-1 if never).
    """
    def __init__(self, sinks, tau=0.95, last_refresh=None):
        sinks = np.array(sinks, dtype='d', ndmin=2)
        if sinks.ndim != 2 or sinks.shape[0] == 0:
            raise ValueError("sinks must be a non-empty m x D array")
        for k, s in enumerate(sinks):
            _unit(s, "sink %d" % k)
        if not -1 <= tau <= 1:
            raise ValueError("tau must be in [-1, 1], not %r" % tau)
        self.sinks = sinks
        self.tau = float(tau)
        if last_refresh is None:
            last_refresh = [-1]*len(sinks)
        self.last_refresh = list(last_refresh)

    @property
    def m(self):
        return self.sinks.shape[0]

    @property
    def dim(self):
        return self.sinks.shape[1]

    def similarity(self, h):
        """Cosine similarity of *h* to each sink."""
        h, h_norm = _unit(h, "chunk embedding")
        norms = np.linalg.norm(self.sinks, axis=1)
        return np.dot(self.sinks, h)/(norms*h_norm)


def sink_refresh(sink_set, h_t, chunk_index=0):
    """
    Return a new sink set where every sink less similar than *tau* to the
    chunk embedding *h_t* is replaced by *h_t*.
    """
    h_t = np.asarray(h_t, dtype='d')
    if h_t.shape != (sink_set.dim,):
        raise ValueError("chunk embedding has shape %s, sinks have dimension %d"
                         % (h_t.shape, sink_set.dim))
    alpha = sink_set.similarity(h_t)
    replace = alpha < sink_set.tau
    sinks = sink_set.sinks.copy()
    sinks[replace] = h_t
    last = [chunk_index if r else old
            for r, old in zip(replace, sink_set.last_refresh)]
    if replace.any():
        log.debug("chunk %d refreshed sinks %s", chunk_index,
                  np.flatnonzero(replace).tolist())
    return SinkSet(sinks, sink_set.tau, last)


class RopeState(object):
    """Rotary position with a wrap threshold *t_reset*."""
    def __init__(self, t_reset, current_index=0):
        if t_reset < 1:
            raise ValueError("t_reset must be at least 1, not %r" % t_reset)
        self.t_reset = int(t_reset)
        self.current_index = int(current_index)

    def advance(self, frames=1):
        """Move forward *frames* and return the new effective position."""
        self.current_index += frames
        return rope_position(self.current_index, self)


def rope_position(t, state):
    r"""
    Effective rotary position of frame *t*.

    Positions up to *t_reset* are used as is.  Beyond it the position
    wraps to $((t-1) \bmod T_{reset}) + 1$, which repeats the one step
    shift $t \to t - T_{reset}$ until the position is in range.
    """
    if t < 0:
        raise ValueError("frame index must be non-negative, not %r" % t)
    if t <= state.t_reset:
        return t
    return (t - 1) % state.t_reset + 1


class KvEntry(object):
    """One cached token: *key*, *value* and its stream *position*."""
    __slots__ = ["key", "value", "position"]

    def __init__(self, key, value, position):
        self.key = np.asarray(key, dtype='d')
        self.value = np.asarray(value, dtype='d')
        self.position = int(position)

    def __repr__(self):
        return "KvEntry(position=%d)" % self.position


class RollingKvCache(object):
    """
    Rolling key/value cache of *capacity* tokens.

    *sinks* is a list of pinned :class:`KvEntry` taking the first slots.
    The other ``capacity - len(sinks)`` slots form the ring.  *key_dim*
    and *value_dim* fix the entry dimensions; they default to those of the
    first entry seen.
    """
    def __init__(self, capacity, sinks=(), key_dim=None, value_dim=None):
        sinks = list(sinks)
        if capacity < len(sinks):
            raise ValueError("capacity %d cannot hold %d sinks"
                             % (capacity, len(sinks)))
        self.capacity = int(capacity)
        self.pinned_prefix = sinks
        self.ring = deque()
        self.key_dim = key_dim
        self.value_dim = value_dim
        self.evicted = 0
        for entry in sinks:
            self._check(entry)

    @property
    def ring_capacity(self):
        return self.capacity - len(self.pinned_prefix)

    def __len__(self):
        return len(self.pinned_prefix) + len(self.ring)

    def _check(self, entry):
        if self.key_dim is None:
            self.key_dim = entry.key.shape[-1]
        if self.value_dim is None:
            self.value_dim = entry.value.shape[-1]
        if entry.key.shape != (self.key_dim,) or entry.value.shape != (self.value_dim,):
            raise ValueError("entry at position %d has key %s and value %s, "
                             "expected (%d,) and (%d,)"
                             % (entry.position, entry.key.shape,
                                entry.value.shape, self.key_dim, self.value_dim))

    def to_rows(self):
        """(slot, position, is_sink) rows describing the cache contents."""
        rows = [(k, e.position, 1) for k, e in enumerate(self.pinned_prefix)]
        offset = len(rows)
        rows.extend((offset+k, e.position, 0) for k, e in enumerate(self.ring))
        return rows


def kv_append(cache, entries):
    """
    Append *entries* to the tail of the ring, evicting the oldest non-sink
    tokens as needed.  Positions must increase.  Returns the cache.
    """
    entries = list(entries)
    if len(entries) > cache.ring_capacity:
        raise ValueError("%d entries do not fit in %d ring slots"
                         % (len(entries), cache.ring_capacity))
    last = cache.ring[-1].position if cache.ring else None
    for entry in entries:
        cache._check(entry)
        if last is not None and entry.position <= last:
            raise ValueError("position %d does not follow %d"
                             % (entry.position, last))
        last = entry.position
    for entry in entries:
        if len(cache.ring) == cache.ring_capacity:
            cache.ring.popleft()
            cache.evicted += 1
        cache.ring.append(entry)
    return cache


def kv_window(cache):
    """
    Keys, values and positions visible to attention: pinned sinks first,
    then the ring in temporal order.
    """
    entries = cache.pinned_prefix + list(cache.ring)
    if not entries:
        return (np.empty((0, cache.key_dim or 0)),
                np.empty((0, cache.value_dim or 0)), [])
    keys = np.array([e.key for e in entries])
    values = np.array([e.value for e in entries])
    return keys, values, [e.position for e in entries]


def chunk_embedding(hidden):
    """
    Chunk embedding as the mean of the token hidden states, *hidden* being
    tokens x D.
    """
    hidden = np.asarray(hidden, dtype='d')
    if hidden.ndim != 2 or hidden.shape[0] == 0:
        raise ValueError("hidden states must be a non-empty tokens x D array")
    return hidden.mean(axis=0)
