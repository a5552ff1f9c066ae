import math
import os
import tempfile

import numpy as np
import pytest

from streamsim.context_ctl import (KvEntry, RollingKvCache, RopeState,
                                   kv_append, rope_position)
from streamsim.ref_kernels import (
    Tensor, AttentionParams, Conv3dParams, rope_apply, attention_weights,
    attention_full, attention_streaming, conv3d_full, conv3d_streaming,
    save_tensor, load_tensor)


def _naive_rope(vec, position, base=10000.):
    D = len(vec)
    out = list(vec)
    for i in range(D//2):
        theta = position*base**(-2.*i/D)
        a, b = vec[2*i], vec[2*i+1]
        out[2*i] = a*math.cos(theta) - b*math.sin(theta)
        out[2*i+1] = a*math.sin(theta) + b*math.cos(theta)
    return out


def _naive_attention(q, k, v, q_pos, k_pos, params):
    H, D = params.num_heads, params.head_dim
    out = np.zeros((len(q), H*D))
    for h in range(H):
        cols = slice(h*D, (h+1)*D)
        for i in range(len(q)):
            qi = _naive_rope(q[i, cols], q_pos[i], params.rope_base)
            logits = []
            for j in range(len(k)):
                if k_pos[j] > q_pos[i]:
                    continue
                kj = _naive_rope(k[j, cols], k_pos[j], params.rope_base)
                logits.append((sum(a*b for a, b in zip(qi, kj))*params.scale, j))
            top = max(x for x, _ in logits)
            total = sum(math.exp(x - top) for x, _ in logits)
            for x, j in logits:
                out[i, cols] += math.exp(x - top)/total*v[j, cols]
    return out


def test_rope_identity_and_relative():
    rng = np.random.RandomState(0)
    x = rng.normal(size=(1, 8))
    assert np.array_equal(rope_apply(x, [0]), x)
    q, k = rng.normal(size=(1, 8)), rng.normal(size=(1, 8))
    for delta in (0, 1, 7):
        dots = [np.dot(rope_apply(q, [p])[0], rope_apply(k, [p+delta])[0])
                for p in (0, 3, 50, 1000)]
        assert np.allclose(dots, dots[0], rtol=0, atol=1e-9)
    with pytest.raises(ValueError):
        rope_apply(rng.normal(size=(1, 7)), [0])
    with pytest.raises(ValueError):
        AttentionParams(head_dim=7)


def test_rope_after_reset():
    state = RopeState(t_reset=16)
    x = np.random.RandomState(1).normal(size=(40, 8))
    long_positions = [rope_position(t, state) for t in range(17, 57)]
    short_positions = [(t - 1) % 16 + 1 for t in range(17, 57)]
    assert np.array_equal(rope_apply(x, long_positions),
                          rope_apply(x, short_positions))
    assert max(long_positions) <= 16


def test_single_key_and_uniform():
    params = AttentionParams(head_dim=4)
    v = np.array([[1., 2., 3., 4.]])
    out = attention_full(np.ones((1, 4)), np.ones((1, 4)), v, [0], params)
    assert np.allclose(out, v)
    rng = np.random.RandomState(2)
    k, v = rng.normal(size=(5, 4)), rng.normal(size=(5, 4))
    out = attention_full(np.zeros((1, 4)), k, v, [4], params,
                         key_positions=range(5))
    assert np.allclose(out, v.mean(axis=0), rtol=0, atol=1e-12)


def test_full_matches_naive():
    rng = np.random.RandomState(3)
    params = AttentionParams(head_dim=4, num_heads=2)
    q, k, v = (rng.normal(size=(6, 8)) for _ in range(3))
    positions = list(range(6))
    fast = attention_full(q, k, v, positions, params)
    slow = _naive_attention(q, k, v, positions, positions, params)
    assert np.allclose(fast, slow, rtol=1e-10, atol=1e-12)
    weights = attention_weights(q, k, positions, positions, params)
    assert np.allclose(weights.sum(axis=2), 1., rtol=0, atol=1e-12)
    # causal mask
    assert np.all(weights[:, 0, 1:] == 0)


def _stream(tokens, params, seed=4):
    rng = np.random.RandomState(seed)
    dim = params.model_dim
    return (rng.normal(size=(tokens, dim)) for _ in range(3))


def _fill(cache_capacity, num_sinks, k, v, upto):
    sinks = [KvEntry(k[p], v[p], p) for p in range(num_sinks)]
    cache = RollingKvCache(cache_capacity, sinks=sinks)
    for p in range(num_sinks, upto):
        kv_append(cache, [KvEntry(k[p], v[p], p)])
    return cache


def test_streaming_covers_history():
    params = AttentionParams(head_dim=8, num_heads=2)
    q, k, v = _stream(16, params)
    cache = _fill(32, 2, k, v, 16)
    chunk = list(range(12, 16))
    streamed = attention_streaming(q[12:], chunk, cache, params)
    full = attention_full(q, k, v, list(range(16)), params)[12:]
    assert np.allclose(streamed, full, rtol=1e-5, atol=0)


def test_streaming_after_eviction():
    params = AttentionParams(head_dim=8)
    q, k, v = _stream(20, params, seed=5)
    cache = _fill(8, 2, k, v, 20)
    keep = [0, 1] + list(range(14, 20))
    assert cache.evicted == 12
    streamed = attention_streaming(q[16:], [16, 17, 18, 19], cache, params)
    masked = attention_full(q[16:], k[keep], v[keep], [16, 17, 18, 19],
                            params, key_positions=keep)
    assert np.allclose(streamed, masked, rtol=1e-12, atol=1e-14)


def test_streaming_sinks_only():
    params = AttentionParams(head_dim=4)
    q, k, v = _stream(6, params, seed=6)
    cache = _fill(2, 2, k, v, 2)
    streamed = attention_streaming(q[5:], [5], cache, params)
    oracle = attention_full(q[5:], k[:2], v[:2], [5], params,
                            key_positions=[0, 1])
    assert np.allclose(streamed, oracle, rtol=1e-12, atol=1e-14)


def _video(frames, channels=2, seed=0):
    return np.random.RandomState(seed).normal(size=(channels, frames, 5, 6))


def _split(x, size):
    return [x[:, s:s+size] for s in range(0, x.shape[1], size)]


def test_conv_streaming_matches_full():
    for seed in range(3):
        layers = [Conv3dParams(2, 3, kernel_t=3, seed=seed),
                  Conv3dParams(3, 2, kernel_t=2, seed=seed+10)]
        x = _video(16, seed=seed)
        full = conv3d_full(x, layers)
        for size in (1, 2, 4, 8, 16):
            chunks, _ = conv3d_streaming(_split(x, size), layers)
            assert np.allclose(np.concatenate(chunks, axis=1), full,
                               rtol=0, atol=1e-6)


def test_conv_cache_resumes():
    layer = Conv3dParams(2, 2, kernel_t=3, seed=1)
    x = _video(8)
    first, cache = conv3d_streaming(_split(x[:, :4], 4), layer)
    second, _ = conv3d_streaming(_split(x[:, 4:], 4), layer, cache)
    assert np.allclose(np.concatenate(first + second, axis=1),
                       conv3d_full(x, layer), rtol=0, atol=1e-12)


def test_conv_without_temporal_kernel():
    layer = Conv3dParams(2, 2, kernel_t=1, seed=2)
    x = _video(5)
    chunks, cache = conv3d_streaming(_split(x, 1), layer)
    for t, out in enumerate(chunks):
        assert np.allclose(out, conv3d_full(x[:, t:t+1], layer),
                           rtol=0, atol=1e-12)
    assert cache.frames[0].shape[1] == 0


def test_conv_causal():
    layers = [Conv3dParams(2, 2, seed=3), Conv3dParams(2, 2, seed=4)]
    x = _video(8)
    base = np.concatenate(conv3d_streaming(_split(x, 2), layers)[0], axis=1)
    for t in range(7):
        bumped = x.copy()
        bumped[:, t+1] += 1.
        out = np.concatenate(conv3d_streaming(_split(bumped, 2), layers)[0],
                             axis=1)
        assert np.array_equal(out[:, :t+1], base[:, :t+1])


def test_tensor_file():
    values = np.random.RandomState(9).normal(size=(2, 3, 4))
    fd, path = tempfile.mkstemp(suffix='.bin')
    os.close(fd)
    try:
        save_tensor(path, Tensor(values))
        assert os.path.getsize(path) == 4*(1 + 3) + 4*values.size
        loaded = load_tensor(path)
        assert loaded.shape == (2, 3, 4)
        assert np.array_equal(loaded.values, values.astype('<f4').astype('d'))
    finally:
        os.unlink(path)
    with pytest.raises(ValueError):
        Tensor([1., 2., 3.], shape=(2, 2))
