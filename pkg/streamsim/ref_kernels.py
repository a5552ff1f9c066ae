# This program is in the public domain
r"""
Reference kernels for checking streaming cache semantics.

These are small, exact numpy implementations, not fast ones.  They show
that the streaming forms give the same numbers as a full pass:

* :func:`attention_streaming` over a :class:`RollingKvCache` against
  the causal :func:`attention_full`, with rotary embedding from
  :func:`rope_apply`;
* :func:`conv3d_streaming` over chunks with a feature cache of the last
  $k_t - 1$ input frames per layer against :func:`conv3d_full`.

Tensors can be written to disk with :func:`save_tensor` as a flat binary
file: int32 rank, int32 dimensions, then little endian float32 values in
row major order.
"""
from __future__ import division

__all__ = ["Tensor", "AttentionParams", "Conv3dParams", "FeatureCache",
           "rope_apply", "attention_weights", "attention_full",
           "attention_streaming", "conv3d_full", "conv3d_streaming",
           "save_tensor", "load_tensor", "write_fixtures"]

import os

import numpy as np

from .context_ctl import kv_window


class Tensor(object):
    """
    Dense real array with a *shape* and row major *data*.
    """
    def __init__(self, data, shape=None):
        values = np.asarray(data, dtype='d')
        if shape is not None:
            shape = tuple(int(n) for n in shape)
            if values.size != int(np.prod(shape)):
                raise ValueError("%d values do not fill shape %s"
                                 % (values.size, shape))
            values = values.reshape(shape)
        if not np.all(np.isfinite(values)):
            raise ValueError("tensor has non-finite values")
        self.values = values

    @property
    def shape(self):
        return self.values.shape

    @property
    def data(self):
        return self.values.ravel()

    def __array__(self, dtype=None):
        return self.values if dtype is None else self.values.astype(dtype)


def _array(x):
    return x.values if isinstance(x, Tensor) else np.asarray(x, dtype='d')


class AttentionParams(object):
    """
    Attention geometry.  Tokens carry *num_heads* heads of *head_dim*
    each, laid out head after head in the last dimension.
    """
    def __init__(self, head_dim, num_heads=1, rope_base=10000., scale=None):
        if head_dim % 2:
            raise ValueError("head_dim must be even for rotary pairs, not %d"
                             % head_dim)
        self.head_dim = int(head_dim)
        self.num_heads = int(num_heads)
        self.rope_base = float(rope_base)
        self.scale = 1/np.sqrt(head_dim) if scale is None else float(scale)

    @property
    def model_dim(self):
        return self.head_dim*self.num_heads


def rope_apply(x, positions, base=10000.):
    r"""
    Rotate consecutive pairs of the last dimension of *x* (tokens x D) by
    angle $p\,\theta_i$ with $\theta_i = b^{-2i/D}$ for token position $p$.
    """
    x = _array(x)
    D = x.shape[-1]
    if D % 2:
        raise ValueError("rotary embedding needs an even dimension, not %d" % D)
    positions = np.asarray(positions, dtype='d')
    if x.shape[-2] != len(positions):
        raise ValueError("%d tokens but %d positions"
                         % (x.shape[-2], len(positions)))
    inv_freq = 1./base**(np.arange(0, D, 2)/D)
    angle = positions[:, None]*inv_freq[None, :]
    cos, sin = np.cos(angle), np.sin(angle)
    even, odd = x[..., 0::2], x[..., 1::2]
    out = np.empty_like(x)
    out[..., 0::2] = even*cos - odd*sin
    out[..., 1::2] = even*sin + odd*cos
    return out


def _heads(x, params):
    N = x.shape[0]
    if x.shape[1] != params.model_dim:
        raise ValueError("token dimension %d does not match %d heads of %d"
                         % (x.shape[1], params.num_heads, params.head_dim))
    return x.reshape(N, params.num_heads, params.head_dim).transpose(1, 0, 2)


def attention_weights(q, k, q_positions, k_positions, params):
    """
    Softmax weights (heads x queries x keys) under the causal mask, keys
    visible to a query when their position is not later than its own.
    """
    q, k = _array(q), _array(k)
    q_positions = np.asarray(q_positions)
    k_positions = np.asarray(k_positions)
    if len(q) != len(q_positions) or len(k) != len(k_positions):
        raise ValueError("token and position counts differ")
    qh = _heads(rope_apply(q, q_positions, params.rope_base), params)
    kh = _heads(rope_apply(k, k_positions, params.rope_base), params)
    logits = np.einsum('hqd,hkd->hqk', qh, kh)*params.scale
    visible = k_positions[None, :] <= q_positions[:, None]
    if not visible.any(axis=1).all():
        raise ValueError("a query has no visible key")
    logits = np.where(visible[None], logits, -np.inf)
    logits -= logits.max(axis=2, keepdims=True)
    weights = np.exp(logits)
    return weights/weights.sum(axis=2, keepdims=True)


def _attend(q, k, v, q_positions, k_positions, params):
    v = _array(v)
    if len(v) != len(k):
        raise ValueError("%d keys but %d values" % (len(k), len(v)))
    weights = attention_weights(q, k, q_positions, k_positions, params)
    out = np.einsum('hqk,hkd->hqd', weights, _heads(v, params))
    return out.transpose(1, 0, 2).reshape(len(q_positions), -1)


def attention_full(q, k, v, positions, params, key_positions=None):
    """
    Causal softmax attention of queries *q* over keys *k* and values *v*.

    *positions* are the query positions; keys share them unless
    *key_positions* is given.  Arrays are tokens x (heads * head_dim).
    """
    if key_positions is None:
        key_positions = positions
    return _attend(q, k, v, positions, key_positions, params)


def attention_streaming(q_chunk, positions, cache, params):
    """
    Attention of a query chunk over the sinks and ring of *cache*.
    """
    keys, values, key_positions = kv_window(cache)
    if not key_positions:
        raise ValueError("cache is empty")
    return _attend(q_chunk, keys, values, positions, key_positions, params)


class Conv3dParams(object):
    """
    Causal 3D convolution from *channels_in* to *channels_out* with a
    *kernel_t* x *kernel_h* x *kernel_w* kernel.

    Time is padded with $k_t - 1$ leading zero frames and space with zeros
    to keep the frame size.  Weights are drawn from a normal distribution
    seeded with *seed*.
    """
    def __init__(self, channels_in, channels_out, kernel_t=3, kernel_h=3,
                 kernel_w=3, seed=0):
        if kernel_h % 2 == 0 or kernel_w % 2 == 0:
            raise ValueError("spatial kernel must be odd, not %dx%d"
                             % (kernel_h, kernel_w))
        if kernel_t < 1:
            raise ValueError("kernel_t must be at least 1")
        self.channels_in = int(channels_in)
        self.channels_out = int(channels_out)
        self.kernel_t = int(kernel_t)
        self.kernel_h = int(kernel_h)
        self.kernel_w = int(kernel_w)
        self.seed = seed
        rng = np.random.RandomState(seed)
        fan_in = channels_in*kernel_t*kernel_h*kernel_w
        self.weights = rng.normal(scale=1/np.sqrt(fan_in),
                                  size=(channels_out, channels_in,
                                        kernel_t, kernel_h, kernel_w))
        self.bias = rng.normal(scale=0.1, size=channels_out)


def _layers(params):
    return list(params) if isinstance(params, (list, tuple)) else [params]


def _conv_valid_time(xp, p):
    # xp is C x (F + kt - 1) x H x W, already extended in time
    C, Fp, H, W = xp.shape
    if C != p.channels_in:
        raise ValueError("input has %d channels, layer expects %d"
                         % (C, p.channels_in))
    F = Fp - (p.kernel_t - 1)
    ph, pw = p.kernel_h//2, p.kernel_w//2
    xp = np.pad(xp, ((0, 0), (0, 0), (ph, ph), (pw, pw)), mode='constant')
    out = np.empty((p.channels_out, F, H, W))
    out[...] = p.bias[:, None, None, None]
    for dt in range(p.kernel_t):
        for dh in range(p.kernel_h):
            for dw in range(p.kernel_w):
                out += np.einsum('oi,ifhw->ofhw', p.weights[:, :, dt, dh, dw],
                                 xp[:, dt:dt+F, dh:dh+H, dw:dw+W])
    return out


def _silu(x):
    return x/(1 + np.exp(-x))


def conv3d_full(x, params, activation=True):
    """
    Full sequence causal convolution of *x* (C x F x H x W) through one
    layer or a list of layers, with SiLU between layers if *activation*.
    """
    x = _array(x)
    layers = _layers(params)
    for k, p in enumerate(layers):
        lead = np.zeros((x.shape[0], p.kernel_t-1) + x.shape[2:])
        x = _conv_valid_time(np.concatenate([lead, x], axis=1), p)
        if activation and k < len(layers)-1:
            x = _silu(x)
    return x


class FeatureCache(object):
    """The last $k_t - 1$ input frames seen by each layer."""
    def __init__(self, params):
        self.frames = [None]*len(_layers(params))

    def update(self, layer, x, p):
        previous = self.frames[layer]
        if previous is None:
            previous = np.zeros((x.shape[0], p.kernel_t-1) + x.shape[2:])
        xp = np.concatenate([previous, x], axis=1)
        keep = p.kernel_t - 1
        self.frames[layer] = xp[:, xp.shape[1]-keep:]
        return xp


def conv3d_streaming(chunks, params, cache=None, activation=True):
    """
    Convolve a sequence of chunks (each C x T x H x W) one at a time.

    Returns the list of output chunks and the feature cache, which can be
    passed back in to continue the stream.
    """
    layers = _layers(params)
    if cache is None:
        cache = FeatureCache(layers)
    outputs = []
    for chunk in chunks:
        x = _array(chunk)
        if x.ndim != 4 or x.shape[1] < 1:
            raise ValueError("chunk must be C x T x H x W with T >= 1, not %s"
                             % (x.shape,))
        for k, p in enumerate(layers):
            x = _conv_valid_time(cache.update(k, x, p), p)
            if activation and k < len(layers)-1:
                x = _silu(x)
        outputs.append(x)
    return outputs, cache


def save_tensor(filename, tensor):
    """Write *tensor* as rank, dimensions and little endian float32 values."""
    values = _array(tensor)
    header = np.array([values.ndim] + list(values.shape), dtype='<i4')
    with open(filename, 'wb') as fid:
        fid.write(header.tobytes())
        fid.write(values.astype('<f4').tobytes())


def load_tensor(filename):
    """Read a tensor written by :func:`save_tensor`."""
    with open(filename, 'rb') as fid:
        raw = fid.read()
    rank = int(np.frombuffer(raw[:4], dtype='<i4')[0])
    shape = tuple(np.frombuffer(raw[4:4+4*rank], dtype='<i4'))
    data = np.frombuffer(raw[4+4*rank:], dtype='<f4')
    return Tensor(data.astype('d'), shape)


def write_fixtures(path, seed=0, tokens=16, head_dim=8, frames=16, chunk=4):
    """
    Write seeded inputs and reference outputs of the kernels to *path*, one
    ``.bin`` file per tensor.  Returns the file names written.
    """
    rng = np.random.RandomState(seed)
    params = AttentionParams(head_dim)
    positions = np.arange(tokens)
    q, k, v = [rng.normal(size=(tokens, head_dim)) for _ in range(3)]
    tensors = {
        'attention_q': q,
        'attention_k': k,
        'attention_v': v,
        'attention_out': attention_full(q, k, v, positions, params),
        'rope_q': rope_apply(q, positions, params.rope_base),
        }
    layers = [Conv3dParams(4, 8, seed=seed), Conv3dParams(8, 4, seed=seed+1)]
    x = rng.normal(size=(4, frames, 8, 8))
    chunks = [x[:, s:s+chunk] for s in range(0, frames, chunk)]
    streamed, _ = conv3d_streaming(chunks, layers)
    tensors['conv_input'] = x
    tensors['conv_full'] = conv3d_full(x, layers)
    tensors['conv_streaming'] = np.concatenate(streamed, axis=1)
    for n, p in enumerate(layers):
        tensors['conv%d_weights' % n] = p.weights
        tensors['conv%d_bias' % n] = p.bias
    names = []
    for name in sorted(tensors):
        filename = os.path.join(path, name + '.bin')
        save_tensor(filename, tensors[name])
        names.append(filename)
    return names
