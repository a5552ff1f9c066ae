# This program is in the public domain
"""
Block to stage assignment for the pipeline.

The backbone blocks run in a fixed order, so a stage owns a contiguous
range of blocks.  The first stage also encodes the incoming chunk and the
last stage decodes the clean latents, which makes the end stages heavier
than the middle ones for the same number of blocks.

:func:`balance` finds the contiguous partition minimizing the slowest
stage exactly.  Among the optimal partitions it prefers the most even one
(least sum of squared stage times), then the one whose boundaries sit
furthest toward the end so that earlier stages take the extra blocks.
:func:`brute_force_partition` enumerates every partition of small
instances for checking.

Online, :func:`rebalance_online` smooths measured block times into the
profile of the current partition and moves to a new partition only when it
shortens the slowest stage by more than the hysteresis ratio.
"""

__all__ = ["BlockCostProfile", "Partition", "InfeasiblePartition",
           "load_profile", "make_partition", "uniform_partition",
           "balance", "brute_force_partition", "rebalance_online",
           "OnlineRebalancer"]

import logging
import math
from itertools import combinations

import numpy as np

log = logging.getLogger(__name__)

# Limits for exhaustive enumeration.
BRUTE_FORCE_BLOCKS = 32
BRUTE_FORCE_STAGES = 6


class InfeasiblePartition(ValueError):
    """More stages were requested than there are blocks."""


class BlockCostProfile(object):
    """
    Measured execution time of each backbone block.

    *block_times* seconds per block in network order.  *vae_encode_time*
    is charged to the first stage and *vae_decode_time* to the last.
    """
    def __init__(self, block_times, vae_encode_time=0., vae_decode_time=0.):
        block_times = np.asarray(block_times, dtype='d')
        if block_times.ndim != 1 or len(block_times) == 0:
            raise ValueError("block_times must be a non-empty list of seconds")
        if not np.all(np.isfinite(block_times)) or np.any(block_times < 0):
            raise ValueError("block times must be finite and non-negative")
        if vae_encode_time < 0 or vae_decode_time < 0:
            raise ValueError("VAE times must be non-negative, not %r, %r"
                             % (vae_encode_time, vae_decode_time))
        self.block_times = block_times
        self.vae_encode_time = float(vae_encode_time)
        self.vae_decode_time = float(vae_decode_time)
        self._segments = None

    @property
    def num_blocks(self):
        return len(self.block_times)

    @property
    def total(self):
        return (math.fsum(self.block_times)
                + self.vae_encode_time + self.vae_decode_time)

    def segment(self, start, stop):
        """Sum of block times in [*start*, *stop*), correctly rounded."""
        if self._segments is None:
            n = self.num_blocks
            table = np.zeros((n+1, n+1))
            for i in range(n):
                for j in range(i+1, n+1):
                    table[i, j] = math.fsum(self.block_times[i:j])
            self._segments = table
        return self._segments[start, stop]

    def stage_time(self, stage, stages, start, stop):
        """
        Time of stage *stage* of *stages* owning blocks [*start*, *stop*),
        including the VAE charges of the end stages.
        """
        t = self.segment(start, stop)
        if stage == 0:
            t = t + self.vae_encode_time
        if stage == stages-1:
            t = t + self.vae_decode_time
        return t

    def smoothed(self, measured, alpha):
        """
        Exponential moving average *alpha* x *measured* + (1-*alpha*) x self.
        """
        if measured.num_blocks != self.num_blocks:
            raise ValueError("measured profile has %d blocks, expected %d"
                             % (measured.num_blocks, self.num_blocks))
        if not 0 < alpha <= 1:
            raise ValueError("smoothing must be in (0, 1], not %r" % alpha)
        mix = lambda new, old: alpha*new + (1-alpha)*old
        return BlockCostProfile(
            mix(measured.block_times, self.block_times),
            mix(measured.vae_encode_time, self.vae_encode_time),
            mix(measured.vae_decode_time, self.vae_decode_time))

    def __eq__(self, other):
        return (isinstance(other, BlockCostProfile)
                and np.array_equal(self.block_times, other.block_times)
                and self.vae_encode_time == other.vae_encode_time
                and self.vae_decode_time == other.vae_decode_time)

    def __ne__(self, other):
        return not self == other

    def __repr__(self):
        return ("BlockCostProfile(%d blocks, total=%g, encode=%g, decode=%g)"
                % (self.num_blocks, self.total, self.vae_encode_time,
                   self.vae_decode_time))


def load_profile(filename, vae_encode_time=0., vae_decode_time=0.):
    """
    Load a block profile from a CSV file with columns *block*, *seconds*.

    Lines starting with # are ignored.  Rows may be in any order; they are
    sorted by block index, which must run from 0 without gaps.
    """
    data = np.loadtxt(filename, delimiter=',', comments='#', ndmin=2)
    if data.shape[1] < 2:
        raise ValueError("%s: expected columns block, seconds" % filename)
    index, seconds = data[:, 0].astype(int), data[:, 1]
    order = np.argsort(index)
    if not np.array_equal(index[order], np.arange(len(index))):
        raise ValueError("%s: block indices must run from 0 to %d"
                         % (filename, len(index)-1))
    return BlockCostProfile(seconds[order], vae_encode_time, vae_decode_time)


class Partition(object):
    """
    Contiguous assignment of blocks to stages.

    *boundaries* holds the K-1 split indices: stage k owns blocks
    [boundaries[k-1], boundaries[k]) with implicit 0 and num_blocks at the
    ends.  *stage_times* are the K stage times under *profile*.
    """
    def __init__(self, boundaries, stage_times, profile=None):
        self.boundaries = tuple(int(b) for b in boundaries)
        self.stage_times = tuple(float(t) for t in stage_times)
        self.profile = profile
        if len(self.stage_times) != len(self.boundaries)+1:
            raise ValueError("%d boundaries need %d stage times, not %d"
                             % (len(self.boundaries), len(self.boundaries)+1,
                                len(self.stage_times)))

    @property
    def stages(self):
        return len(self.stage_times)

    @property
    def max_time(self):
        return max(self.stage_times)

    def ranges(self, num_blocks=None):
        """List of (start, stop) block ranges, one per stage."""
        if num_blocks is None:
            num_blocks = self.profile.num_blocks
        edges = (0,) + self.boundaries + (num_blocks,)
        return list(zip(edges[:-1], edges[1:]))

    def sizes(self, num_blocks=None):
        return [stop-start for start, stop in self.ranges(num_blocks)]

    def bubble_fraction(self):
        """Idle fraction of the stages when paced by the slowest one."""
        if self.max_time == 0:
            return 0.
        return 1 - sum(self.stage_times)/(self.stages*self.max_time)

    def to_header(self):
        """Partition as scenario header fields."""
        return {'boundaries': list(self.boundaries),
                'stage_times': list(self.stage_times)}

    def __repr__(self):
        return ("Partition(boundaries=%s, max=%.6g)"
                % (list(self.boundaries), self.max_time))


def make_partition(profile, boundaries):
    """
    Build the :class:`Partition` of *profile* with the given *boundaries*.
    """
    boundaries = tuple(boundaries)
    n = profile.num_blocks
    edges = (0,) + boundaries + (n,)
    if any(b <= a for a, b in zip(edges[:-1], edges[1:])):
        raise ValueError("boundaries %s do not split %d blocks into non-empty ranges"
                         % (list(boundaries), n))
    K = len(boundaries) + 1
    times = [profile.stage_time(k, K, edges[k], edges[k+1]) for k in range(K)]
    return Partition(boundaries, times, profile)


def uniform_partition(profile, stages):
    """
    Equal block counts per stage, ignoring measured times.  Earlier stages
    take the extra blocks when the count does not divide evenly.
    """
    _check_stages(profile, stages)
    n = profile.num_blocks
    size, extra = divmod(n, stages)
    edges, total = [], 0
    for k in range(stages-1):
        total += size + (1 if k < extra else 0)
        edges.append(total)
    return make_partition(profile, edges)


def _check_stages(profile, stages):
    if stages < 1:
        raise ValueError("stages must be at least 1, not %r" % stages)
    if stages > profile.num_blocks:
        raise InfeasiblePartition("cannot split %d blocks over %d stages"
                                  % (profile.num_blocks, stages))


def _min_max(profile, K):
    # f[k][j]: least slowest stage over the first k stages covering [0, j)
    n = profile.num_blocks
    if K == 1:
        return profile.stage_time(0, 1, 0, n)
    inf = float('inf')
    f = [[inf]*(n+1) for _ in range(K)]
    for j in range(1, n-K+2):
        f[1][j] = profile.stage_time(0, K, 0, j)
    for k in range(2, K):
        for j in range(k, n-K+k+1):
            f[k][j] = min(max(f[k-1][i], profile.stage_time(k-1, K, i, j))
                          for i in range(k-1, j))
    return min(max(f[K-1][i], profile.stage_time(K-1, K, i, n))
               for i in range(K-1, n))


def balance(profile, stages_K):
    """
    Contiguous partition of *profile* over *stages_K* stages minimizing the
    slowest stage.

    Raises :class:`InfeasiblePartition` if there are fewer blocks than
    stages.
    """
    K = stages_K
    _check_stages(profile, K)
    n = profile.num_blocks
    limit = _min_max(profile, K)

    # g[k][i]: least sum of squares for stages k..K-1 covering [i, n) with
    # no stage slower than the optimum
    inf = float('inf')
    g = [[inf]*(n+1) for _ in range(K)]
    for i in range(K-1, n):
        t = profile.stage_time(K-1, K, i, n)
        if t <= limit:
            g[K-1][i] = t*t
    for k in range(K-2, -1, -1):
        for i in range(k, n-K+k+1):
            for j in range(i+1, n-K+k+2):
                t = profile.stage_time(k, K, i, j)
                if t <= limit and g[k+1][j] < inf:
                    g[k][i] = min(g[k][i], t*t + g[k+1][j])

    # walk forward taking the furthest boundary among equal choices
    boundaries, i = [], 0
    for k in range(K-1):
        best_j, best = None, inf
        for j in range(i+1, n-K+k+2):
            t = profile.stage_time(k, K, i, j)
            if t > limit or g[k+1][j] == inf:
                continue
            value = t*t + g[k+1][j]
            tol = 1e-12*max(abs(value), abs(best) if best < inf else 0., 1e-300)
            if best_j is None or value < best - tol or abs(value - best) <= tol:
                best_j, best = j, value
        boundaries.append(best_j)
        i = best_j
    return make_partition(profile, boundaries)


def brute_force_partition(profile, stages_K):
    """
    Enumerate every contiguous partition and return the optimum.

    Only instances with at most 32 blocks and 6 stages are accepted.
    """
    K = stages_K
    _check_stages(profile, K)
    n = profile.num_blocks
    if n > BRUTE_FORCE_BLOCKS or K > BRUTE_FORCE_STAGES:
        raise ValueError("instance too large for enumeration: %d blocks, %d stages"
                         % (n, K))
    best_key, best = None, None
    for cut in combinations(range(1, n), K-1):
        edges = (0,) + cut + (n,)
        times = [profile.stage_time(k, K, edges[k], edges[k+1]) for k in range(K)]
        key = (max(times), sum(t*t for t in times), tuple(-c for c in cut))
        if best_key is None or key < best_key:
            best_key, best = key, cut
    return make_partition(profile, best)


def rebalance_online(current, measured, hysteresis=0.05, smoothing=0.5):
    """
    Rebalance *current* given a *measured* block profile.

    The measurement is blended into the profile of *current* with the
    exponential moving average weight *smoothing*.  The balanced partition
    of the blend is adopted only if it shortens the slowest stage by more
    than *hysteresis* times the current slowest stage; otherwise the
    current boundaries are kept, timed under the blend.
    """
    if current.profile is None:
        profile = measured
    else:
        profile = current.profile.smoothed(measured, smoothing)
    if hysteresis < 0:
        raise ValueError("hysteresis must be non-negative, not %r" % hysteresis)
    kept = make_partition(profile, current.boundaries)
    candidate = balance(profile, current.stages)
    gain = kept.max_time - candidate.max_time
    if gain > hysteresis*kept.max_time:
        log.info("rebalanced %s -> %s (slowest stage %.4g -> %.4g s)",
                 list(kept.boundaries), list(candidate.boundaries),
                 kept.max_time, candidate.max_time)
        return candidate
    log.debug("kept %s; gain %.3g s within hysteresis", list(kept.boundaries), gain)
    return kept


class OnlineRebalancer(object):
    """
    Rebalancer for one pipeline.  Call :meth:`update` with each new
    measured profile; :attr:`partition` holds the partition in force.
    """
    def __init__(self, profile, stages, hysteresis=0.05, smoothing=0.5):
        self.hysteresis = hysteresis
        self.smoothing = smoothing
        self.partition = balance(profile, stages)
        self.changes = 0

    def update(self, measured):
        new = rebalance_online(self.partition, measured,
                               hysteresis=self.hysteresis,
                               smoothing=self.smoothing)
        if new.boundaries != self.partition.boundaries:
            self.changes += 1
        self.partition = new
        return new
