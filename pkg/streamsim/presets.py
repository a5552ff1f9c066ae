# This program is in the public domain
"""
Hardware, model and experiment presets.

The following devices are defined:

    H100 (SXM, NVLink) and RTX4090 (PCIe)

and the following models, sharing one latent codec:

    WAN_1_3B (30 blocks) and WAN_14B (40 blocks)

Stage cost coefficients of the models are calibrated so that a balanced
four GPU pipeline reproduces the measured steady frame rates in
*FPS_ANCHORS*, at one and at four denoising steps; they are regression
targets, not predictions.  A block pass costs a per-pixel context term
plus a term per batched pixel-frame, so the $n$ noise levels of a chunk
share one pass nearly for free.  The effective device compute is
calibrated so that a single pass over an 81 frame 480p clip takes
*TTFF_ANCHOR* seconds.

Experiment presets return a list of rows (dicts) suitable for
:func:`streamsim.tracefile.write_rows`::

    >>> from streamsim import presets
    >>> rows = presets.run_preset('ttff_bars')
    >>> sorted(rows[0].keys())[:3]
    ['fps', 'frames', 'method']
"""

__all__ = ["H100", "RTX4090", "WAN_1_3B", "WAN_14B", "DEVICES", "MODELS",
           "RESOLUTIONS", "TTFF_ANCHOR", "FPS_ANCHORS", "PRESETS",
           "lookup_device", "lookup_model", "stream_shape", "replay_motion",
           "replay_context", "ttff_bars", "fps_scaling", "fps_anchors",
           "balance_before_after", "stream_batch", "sp_vs_pp", "motion_trace",
           "context_trace", "stream_vae", "run_preset"]

import numpy as np

from . import costmodel
from .block_scheduler import balance, uniform_partition
from .context_ctl import (KvEntry, RollingKvCache, RopeState, SinkSet,
                          chunk_embedding, kv_append, rope_position,
                          sink_refresh)
from .costmodel import DeviceSpec, ModelSpec, StreamShape
from .motion_ctl import MotionController
from .pipeline_sim import block_profile, build_pipeline, run, sweep
from .ref_kernels import Conv3dParams, conv3d_full, conv3d_streaming
from .synthetic import gen_stream, step_profile

# Single pass over 81 frames at 832x480 with the 1.3B model.
TTFF_ANCHOR = 5.31
_C_RHO = 2.*81*832*480*1.3e9/TTFF_ANCHOR
_RHO = 256

H100 = DeviceSpec(
    name="H100",
    peak_flops=1979e12,
    hbm_bandwidth=3.35e12,
    eta=0.8,
    link_bandwidth=450e9,   # NVLink, one direction
    link_latency=10e-6,
    effective_flops=_C_RHO/_RHO,
    )

RTX4090 = DeviceSpec(
    name="RTX4090",
    peak_flops=165.2e12,
    hbm_bandwidth=1.008e12,
    eta=0.8,
    link_bandwidth=25e9,    # PCIe 4.0 x16
    link_latency=20e-6,
    effective_flops=_C_RHO/_RHO*165.2e12/1979e12,
    )

# Seconds per pixel-frame.  Both models share the codec.
_VAE_ENCODE = 2.0345e-8
_VAE_DECODE = 2.0345e-8

# Activation traffic per token per block is dominated by reads of the
# rolling KV window.  The calibrated costs dominate the roofline up to
# about 25 micro-steps for the 1.3B model and 5 for the 14B model.
WAN_1_3B = ModelSpec(
    name="wan-1.3b",
    param_count=1.3e9,
    num_blocks=30,
    hidden_dim=1536,
    per_block_flops_per_token=2*1.3e9/30,
    per_block_bytes_per_token=2e5,
    pixel_to_token_ratio=_RHO,
    context_cost=2.6983e-8,
    block_cost=3.6e-11,
    vae_encode_cost=_VAE_ENCODE,
    vae_decode_cost=_VAE_DECODE,
    )

WAN_14B = ModelSpec(
    name="wan-14b",
    param_count=14e9,
    num_blocks=40,
    hidden_dim=5120,
    per_block_flops_per_token=2*14e9/40,
    per_block_bytes_per_token=2e5,
    pixel_to_token_ratio=_RHO,
    context_cost=2.01925e-8,
    block_cost=3.878e-10,
    vae_encode_cost=_VAE_ENCODE,
    vae_decode_cost=_VAE_DECODE,
    )

DEVICES = {'H100': H100, 'RTX4090': RTX4090}
MODELS = {'wan-1.3b': WAN_1_3B, 'wan-14b': WAN_14B}

# name: (height, width)
RESOLUTIONS = {'480p': (480, 832), '512': (512, 512)}

# (model, resolution, gpus, steps): steady frames per second on H100
FPS_ANCHORS = {
    ('wan-1.3b', '480p', 4, 1): 42.26,
    ('wan-1.3b', '512', 4, 1): 61.57,
    ('wan-14b', '480p', 4, 1): 39.24,
    ('wan-14b', '512', 4, 1): 58.28,
    ('wan-1.3b', '512', 4, 4): 64.52,
    ('wan-14b', '480p', 4, 4): 31.62,
    }


def lookup_device(name):
    """Return the device preset *name*."""
    try:
        return DEVICES[name]
    except KeyError:
        raise ValueError("unknown device %r; use one of %s"
                         % (name, ", ".join(sorted(DEVICES))))


def lookup_model(name):
    """Return the model preset *name*."""
    try:
        return MODELS[name]
    except KeyError:
        raise ValueError("unknown model %r; use one of %s"
                         % (name, ", ".join(sorted(MODELS))))


def stream_shape(resolution='480p', frames=4, steps=1, batch=1):
    """
    Build a :class:`StreamShape` for a named *resolution*.
    """
    try:
        height, width = RESOLUTIONS[resolution]
    except KeyError:
        raise ValueError("unknown resolution %r; use one of %s"
                         % (resolution, ", ".join(sorted(RESOLUTIONS))))
    return StreamShape(batch_B=batch, chunk_frames_T=frames, height_H=height,
                       width_W=width, denoise_steps_n=steps)


def _shapes(resolutions):
    return dict((r, stream_shape(r)) for r in resolutions)


def _dit_only(model):
    return model.replace(vae_encode_cost=0., vae_decode_cost=0.)


def replay_motion(profile=None, seed=0, pixel=False, **controller):
    """
    Run a :class:`MotionController` configured by *controller* over a
    synthetic stream following *profile* (a step from low to high motion
    by default) and return the controller.

    Unless *sigma* is given the motion is normalized by the largest level
    of the profile, so that a constant segment keeps its relative level.
    """
    if profile is None:
        profile = step_profile()
    stream = gen_stream(profile, seed=seed, pixel=pixel)
    if controller.get('sigma') is None:
        measured = stream.measured()
        controller['sigma'] = max(measured) if measured else None
    ctl = MotionController(**controller)
    for frame in stream:
        ctl.observe(frame)
    return ctl


def replay_context(profile=None, frames=4, sinks=4, tau=0.95, capacity=64,
                   t_reset=32, seed=0):
    """
    Drive sink refresh, rotary reset and the rolling cache over a
    synthetic stream, one chunk of *frames* frames at a time.

    The sinks start as copies of the first chunk embedding.  Each frame
    adds one token, its channel means, to the cache.  Returns
    (rows, sink set, cache, rope state) with one row per chunk.
    """
    if profile is None:
        profile = step_profile()
    stream = gen_stream(profile, seed=seed)
    chunks = stream.chunks(frames)
    if not chunks:
        raise ValueError("stream is shorter than one chunk of %d frames" % frames)
    first = chunk_embedding(stream.hidden_states(chunks[0]))
    sink_set = SinkSet([first]*sinks, tau=tau)
    rope = RopeState(t_reset)
    cache = RollingKvCache(capacity, sinks=[KvEntry(first, first, k - sinks)
                                            for k in range(sinks)])
    rows = []
    for c, chunk in enumerate(chunks):
        h = chunk_embedding(stream.hidden_states(chunk))
        alpha = sink_set.similarity(h)
        sink_set = sink_refresh(sink_set, h, chunk_index=c)
        tokens = [f.values.mean(axis=(1, 2)) for f in chunk]
        kv_append(cache, [KvEntry(t, t, f.frame_index)
                          for t, f in zip(tokens, chunk)])
        last = chunk[-1].frame_index
        rope.current_index = last
        rows.append({'chunk': c, 'min_similarity': float(alpha.min()),
                     'refreshed': int((alpha < sink_set.tau).sum()),
                     'cache_size': len(cache),
                     'evicted': cache.evicted, 'frame': last,
                     'rope_position': rope_position(last, rope)})
    return rows, sink_set, cache, rope


def ttff_bars(device=H100, model=WAN_1_3B, resolution='512', gpus=4,
              input_fps=(16, 30), large_chunk=81, large_passes=2):
    """
    Time to first frame of streaming 4 frame chunks against a single large
    chunk, for each source frame rate.

    Streaming is simulated on the balanced pipeline.  The large chunk is
    the closed form estimate for a clip of *large_chunk* frames that needs
    *large_passes* full passes over the device before its first frame.
    """
    rows = []
    for fps in input_fps:
        shape = stream_shape(resolution)
        part = balance(block_profile(device, model, shape), gpus)
        pipe = build_pipeline(part, device, model, shape, num_gpus=gpus)
        streaming = run(pipe, chunks=2, input_fps=fps).ttff
        clip = stream_shape(resolution, frames=large_chunk)
        large = costmodel.ttff_estimate(device, model, clip, fps,
                                        passes=large_passes)
        for method, T, ttff in (('streaming', shape.chunk_frames_T, streaming),
                                ('large_chunk', large_chunk, large)):
            rows.append({'fps': fps, 'frames': T, 'method': method,
                         'resolution': resolution, 'ttff': ttff,
                         'ttff_ratio': ttff/streaming})
    return rows


def fps_scaling(device=H100, model=WAN_1_3B, resolutions=('480p', '512'),
                gpus=(1, 2, 3, 4), steps=(1, 2, 3, 4), chunks=48,
                balance_vae=True):
    """
    Steady frame rate over GPU count and denoising steps.

    *fps* runs the whole pipeline, *dit_fps* the backbone alone.  The VAE
    is part of the balanced partition; with *balance_vae* False it stays
    on the end stages unbalanced, so its share is constant as the backbone
    is split.  Speedups are relative to
    the first GPU count.
    """
    shapes = _shapes(resolutions)
    whole = sweep(device, model, shapes, gpus, steps, chunks=chunks,
                  balance_vae=balance_vae)
    dit = sweep(device, _dit_only(model), shapes, gpus, steps, chunks=chunks)
    base = {}
    for row, d in zip(whole, dit):
        key = (row['resolution'], row['steps'])
        if row['gpus'] == gpus[0]:
            base[key] = (row['fps'], d['fps'])
        row['dit_fps'] = d['fps']
        row['speedup'] = row['fps']/base[key][0]
        row['dit_speedup'] = d['fps']/base[key][1]
    return whole


def fps_anchors(device=H100, chunks=48):
    """
    Simulated steady frame rate for each calibration anchor, with the VAE
    included in the balanced partition.
    """
    rows = []
    for (name, resolution, K, n), anchor in sorted(FPS_ANCHORS.items()):
        row = sweep(device, lookup_model(name), _shapes([resolution]),
                    gpus=(K,), steps=(n,), chunks=chunks)[0]
        rows.append({'model': name, 'resolution': resolution, 'gpus': K,
                     'steps': n, 'anchor': anchor, 'fps': row['fps'],
                     'error': row['fps']/anchor - 1})
    return rows


def balance_before_after(device=H100, model=WAN_1_3B, resolution='480p',
                         gpus=4, steps=1, batch=1, chunks=48):
    """
    Per device stage times and idle share with equal block counts and
    after balancing.
    """
    shape = stream_shape(resolution, steps=steps, batch=batch)
    profile = block_profile(device, model, shape)
    results = []
    for part in (uniform_partition(profile, gpus), balance(profile, gpus)):
        pipe = build_pipeline(part, device, model, shape, num_gpus=gpus)
        results.append((part, run(pipe, chunks=chunks)))
    (before, slow), (after, fast) = results
    rows = []
    for k in range(gpus):
        rows.append({'device': k,
                     'blocks_before': before.sizes()[k],
                     'blocks_after': after.sizes()[k],
                     'time_before': before.stage_times[k],
                     'time_after': after.stage_times[k],
                     'bubble_before': slow.bubble_fraction[k],
                     'bubble_after': fast.bubble_fraction[k],
                     'fps_before': slow.steady_fps,
                     'fps_after': fast.steady_fps})
    return rows


def stream_batch(device=H100, model=WAN_1_3B, resolution='512', gpus=(1,),
                 steps=(1, 2, 3, 4), batch=4, chunks=48):
    """
    Throughput with stream batching against one chunk in flight.  The
    batched pass carries the $nB$ micro-steps of the in-flight chunks.
    """
    shapes = _shapes([resolution])
    kw = dict(gpus=gpus, steps=steps, batch=batch, chunks=chunks)
    batched = sweep(device, model, shapes, **kw)
    plain = sweep(device, model, shapes, stream_batch=False, **kw)
    return [{'gpus': b['gpus'], 'steps': b['steps'], 'batch': batch,
             'fps_batched': b['fps'], 'fps_plain': p['fps'],
             'gain': b['fps']/p['fps']}
            for b, p in zip(batched, plain)]


def sp_vs_pp(device=H100, model=WAN_1_3B, resolution='480p', gpus=4,
             token_len=1536, chunks=48):
    """
    Communication per pass at *token_len* tokens and simulated frame rate
    for the pipeline and the sequence parallel strategies.
    """
    rows = sweep(device, model, _shapes([resolution]), gpus=(gpus,),
                 strategies=costmodel.STRATEGIES, chunks=chunks)
    comm = dict((s, costmodel.comm_cost(s, token_len, model.hidden_dim, device,
                                        gpus, num_blocks=model.num_blocks))
                for s in costmodel.STRATEGIES)
    p2p = comm[costmodel.PIPELINE_P2P]
    return [{'strategy': row['strategy'], 'gpus': gpus,
             'token_len': token_len, 'comm': comm[row['strategy']],
             'comm_ratio': comm[row['strategy']]/p2p, 'fps': row['fps']}
            for row in rows]


def motion_trace(profile=None, seed=0, **controller):
    """Motion, normalized motion and noise rate per frame."""
    return replay_motion(profile, seed=seed, **controller).trace


def context_trace(**kw):
    """Sink refresh and cache state per chunk; see :func:`replay_context`."""
    return replay_context(**kw)[0]


def stream_vae(chunk_sizes=(1, 2, 4, 8), frames=16, seed=0):
    """
    Largest difference between chunked causal convolution with feature
    caching and a full pass, for a two layer stack.
    """
    layers = [Conv3dParams(4, 8, kernel_t=3, seed=seed),
              Conv3dParams(8, 4, kernel_t=3, seed=seed+1)]
    x = np.random.RandomState(seed).normal(size=(4, frames, 8, 8))
    full = conv3d_full(x, layers)
    rows = []
    for size in chunk_sizes:
        chunks = [x[:, s:s+size] for s in range(0, frames, size)]
        out, cache = conv3d_streaming(chunks, layers)
        diff = np.max(np.abs(np.concatenate(out, axis=1) - full))
        rows.append({'chunk_frames': size, 'max_abs_diff': float(diff),
                     'cached_frames': sum(f.shape[1] for f in cache.frames)})
    return rows


PRESETS = {
    'ttff_bars': ttff_bars,
    'fps_scaling': fps_scaling,
    'fps_anchors': fps_anchors,
    'balance_before_after': balance_before_after,
    'stream_batch': stream_batch,
    'sp_vs_pp': sp_vs_pp,
    'motion_trace': motion_trace,
    'context_trace': context_trace,
    'stream_vae': stream_vae,
    }


def run_preset(name, **kw):
    """Run the experiment preset *name* and return its rows."""
    try:
        preset = PRESETS[name]
    except KeyError:
        raise ValueError("unknown preset %r; use one of %s"
                         % (name, ", ".join(sorted(PRESETS))))
    return preset(**kw)
