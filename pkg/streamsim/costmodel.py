# This program is in the public domain
r"""
Closed form cost models.

Every scheduler and the simulator ask this module how long things take.
Three models are provided:

*roofline*

    A kernel with arithmetic intensity $I$ (FLOP per byte moved) on a
    device with peak compute $C$ and memory bandwidth $\beta$ attains

    .. math::

        F(I) = \min(C, I \beta)

    with the knee (ridge) at $I^* = C/\beta$.  Below the ridge the kernel
    is memory bound, above it compute bound.

*time to first frame*

    The buffering delay $T/f$ for the first chunk of $T$ frames arriving
    at $f$ frames per second plus the processing latency

    .. math::

        t_p = \frac{2 B T H W P}{C \rho}

    where $P$ is the parameter count and $\rho$ the pixel to token ratio
    of the latent codec.  Only the product $C\rho$ enters, so the
    effective device compute is a calibrated quantity.

*batched latency*

    The memory traffic for a denoising pass is the activation traffic
    $A(T,B)$, linear in $BT$, plus the parameter traffic $P_b$, so

    .. math::

        L(T,B) = \frac{A(T,B) + P_b}{\eta \beta}

    and the frame rate $f = BT/L(T,B)$ grows as $B/(1+B)$.  When the pass
    crosses the ridge the compute time $F/C$ takes over.

    A model with calibrated stage costs adds a floor measured on real
    kernels.  Each block pass over $m$ items of $T$ frames of $H \times W$
    pixels costs

    .. math::

        t_b = c HW + b mTHW

    where $c$ is the per pass cost of reading weights and rolling context
    and $b$ the per item slope.  The pass latency is the larger of the
    roofline time and $N_b t_b$.

Communication cost for the pipeline hand-off and the two sequence parallel
alternatives is modelled as latency plus size over link bandwidth.
"""

__all__ = ["DeviceSpec", "ModelSpec", "StreamShape", "RooflinePoint",
           "UnknownStrategy", "MEMORY_BOUND", "COMPUTE_BOUND", "STRATEGIES",
           "ridge_intensity", "roofline_point", "tokens",
           "processing_latency", "ttff_estimate",
           "activation_bytes", "parameter_bytes", "pass_flops",
           "calibrated_latency", "latency_estimate", "throughput", "throughput_limit",
           "amortization", "message_bytes", "comm_cost"]


MEMORY_BOUND = 'memory_bound'
COMPUTE_BOUND = 'compute_bound'

PIPELINE_P2P = 'pipeline_p2p'
ULYSSES = 'ulysses_all_to_all'
RING_KV = 'ring_kv'
STRATEGIES = (PIPELINE_P2P, ULYSSES, RING_KV)

# bf16
DTYPE_BYTES = 2


class UnknownStrategy(ValueError):
    """Communication strategy is not one of *STRATEGIES*."""


def _positive(owner, **fields):
    for name, value in fields.items():
        if not value > 0:
            raise ValueError("%s.%s must be positive, not %r"
                             % (owner, name, value))


class DeviceSpec(object):
    """
    Accelerator description.

    *peak_flops* is the dense compute roof in FLOP/s and *hbm_bandwidth*
    the memory bandwidth in bytes/s.  *eta* is the fraction of the memory
    bandwidth a real kernel achieves.  *link_bandwidth* (bytes/s) and
    *link_latency* (s) describe one point to point link to a neighbour.

    *effective_flops* is the compute rate that, multiplied by the pixel
    to token ratio of the model, reproduces measured processing latency.
    It defaults to *peak_flops*.
    """
    def __init__(self, peak_flops, hbm_bandwidth, eta=0.8,
                 link_bandwidth=450e9, link_latency=10e-6,
                 effective_flops=None, name="device"):
        _positive('DeviceSpec', peak_flops=peak_flops,
                  hbm_bandwidth=hbm_bandwidth, eta=eta,
                  link_bandwidth=link_bandwidth, link_latency=link_latency)
        if eta > 1:
            raise ValueError("DeviceSpec.eta must be at most 1, not %r" % eta)
        if effective_flops is None:
            effective_flops = peak_flops
        _positive('DeviceSpec', effective_flops=effective_flops)
        self.name = name
        self.peak_flops = float(peak_flops)
        self.hbm_bandwidth = float(hbm_bandwidth)
        self.eta = float(eta)
        self.link_bandwidth = float(link_bandwidth)
        self.link_latency = float(link_latency)
        self.effective_flops = float(effective_flops)

    def replace(self, **kw):
        """Return a copy with the given fields changed."""
        fields = dict(self.__dict__)
        fields.update(kw)
        return DeviceSpec(**fields)

    def __repr__(self):
        return ("DeviceSpec(name=%r, peak_flops=%g, hbm_bandwidth=%g, eta=%g)"
                % (self.name, self.peak_flops, self.hbm_bandwidth, self.eta))


class ModelSpec(object):
    """
    Diffusion transformer and latent codec description.

    *param_count* and *bytes_per_param* give the parameter traffic of one
    pass.  The backbone has *num_blocks* identical blocks, each doing
    *per_block_flops_per_token* FLOP and moving *per_block_bytes_per_token*
    bytes of activations for every token.  *pixel_to_token_ratio* is the
    number of input pixels (over time and space) that map to one token.

    The stage cost coefficients are calibrated against measured throughput,
    not derived.  *context_cost* is seconds per pixel of frame area for one
    block pass, whatever the number of items in it.  *block_cost* is
    seconds per pixel-frame for each item in the pass.  *vae_encode_cost*
    and *vae_decode_cost* are seconds per pixel-frame for the codec.
    """
    def __init__(self, param_count, num_blocks, per_block_flops_per_token,
                 per_block_bytes_per_token, bytes_per_param=DTYPE_BYTES,
                 pixel_to_token_ratio=256, hidden_dim=1536,
                 block_cost=0., vae_encode_cost=0., vae_decode_cost=0.,
                 context_cost=0., name="model"):
        _positive('ModelSpec', param_count=param_count,
                  bytes_per_param=bytes_per_param, hidden_dim=hidden_dim)
        if num_blocks < 1:
            raise ValueError("ModelSpec.num_blocks must be at least 1, not %r"
                             % num_blocks)
        if pixel_to_token_ratio < 1:
            raise ValueError("ModelSpec.pixel_to_token_ratio must be at least 1, not %r"
                             % pixel_to_token_ratio)
        for field, value in (('per_block_flops_per_token', per_block_flops_per_token),
                             ('per_block_bytes_per_token', per_block_bytes_per_token),
                             ('block_cost', block_cost),
                             ('context_cost', context_cost),
                             ('vae_encode_cost', vae_encode_cost),
                             ('vae_decode_cost', vae_decode_cost)):
            if value < 0:
                raise ValueError("ModelSpec.%s must be non-negative, not %r"
                                 % (field, value))
        self.name = name
        self.param_count = float(param_count)
        self.bytes_per_param = float(bytes_per_param)
        self.num_blocks = int(num_blocks)
        self.per_block_flops_per_token = float(per_block_flops_per_token)
        self.per_block_bytes_per_token = float(per_block_bytes_per_token)
        self.pixel_to_token_ratio = float(pixel_to_token_ratio)
        self.hidden_dim = int(hidden_dim)
        self.block_cost = float(block_cost)
        self.context_cost = float(context_cost)
        self.vae_encode_cost = float(vae_encode_cost)
        self.vae_decode_cost = float(vae_decode_cost)

    def replace(self, **kw):
        """Return a copy with the given fields changed."""
        fields = dict(self.__dict__)
        fields.update(kw)
        return ModelSpec(**fields)

    def block_time(self, shape):
        """Seconds for one block pass over the *shape.batch_B* items of *shape*."""
        return (self.context_cost*shape.height_H*shape.width_W
                + self.block_cost*shape.pixel_frames)

    def vae_encode_time(self, shape):
        """Seconds to encode the *shape* chunk into latents."""
        return self.vae_encode_cost*shape.pixel_frames

    def vae_decode_time(self, shape):
        """Seconds to decode the *shape* chunk back to pixels."""
        return self.vae_decode_cost*shape.pixel_frames

    def __repr__(self):
        return ("ModelSpec(name=%r, param_count=%g, num_blocks=%d)"
                % (self.name, self.param_count, self.num_blocks))


class StreamShape(object):
    """
    Workload shape: *batch_B* chunks of *chunk_frames_T* frames of
    *height_H* x *width_W* pixels, denoised in *denoise_steps_n* steps
    with *latent_channels_C* latent channels.
    """
    def __init__(self, batch_B=1, chunk_frames_T=4, height_H=480, width_W=832,
                 denoise_steps_n=1, latent_channels_C=16):
        for field, value in (('batch_B', batch_B),
                             ('chunk_frames_T', chunk_frames_T),
                             ('height_H', height_H), ('width_W', width_W),
                             ('denoise_steps_n', denoise_steps_n),
                             ('latent_channels_C', latent_channels_C)):
            if int(value) != value or value < 1:
                raise ValueError("StreamShape.%s must be an integer >= 1, not %r"
                                 % (field, value))
        self.batch_B = int(batch_B)
        self.chunk_frames_T = int(chunk_frames_T)
        self.height_H = int(height_H)
        self.width_W = int(width_W)
        self.denoise_steps_n = int(denoise_steps_n)
        self.latent_channels_C = int(latent_channels_C)

    @property
    def pixel_frames(self):
        """Pixels times frames over the whole batch."""
        return self.batch_B*self.chunk_frames_T*self.height_H*self.width_W

    def replace(self, **kw):
        """Return a copy with the given fields changed."""
        fields = dict(self.__dict__)
        fields.update(kw)
        return StreamShape(**fields)

    def __repr__(self):
        return ("StreamShape(B=%d, T=%d, H=%d, W=%d, n=%d)"
                % (self.batch_B, self.chunk_frames_T, self.height_H,
                   self.width_W, self.denoise_steps_n))


class RooflinePoint(object):
    """
    Position of a pass on the roofline: *arithmetic_intensity* in
    FLOP/byte, *attained_flops* in FLOP/s and *regime*.
    """
    def __init__(self, arithmetic_intensity, attained_flops, regime):
        self.arithmetic_intensity = arithmetic_intensity
        self.attained_flops = attained_flops
        self.regime = regime

    def __repr__(self):
        return ("RooflinePoint(ai=%g, attained=%g, %s)"
                % (self.arithmetic_intensity, self.attained_flops, self.regime))


def ridge_intensity(dev):
    """
    Arithmetic intensity at the knee of the roofline, in FLOP/byte.
    """
    return dev.peak_flops / dev.hbm_bandwidth


def tokens(model, shape):
    """
    Number of tokens the backbone sees for *shape*.
    """
    return shape.pixel_frames / model.pixel_to_token_ratio


def activation_bytes(model, shape):
    r"""
    Activation traffic $A(T,B)$ in bytes for one pass over all blocks.
    """
    return model.per_block_bytes_per_token*tokens(model, shape)*model.num_blocks


def parameter_bytes(model):
    """Parameter traffic in bytes for one pass."""
    return model.param_count*model.bytes_per_param


def pass_flops(model, shape):
    """Floating point operations for one pass over all blocks."""
    return model.per_block_flops_per_token*tokens(model, shape)*model.num_blocks


def roofline_point(dev, model, shape):
    """
    Place one denoising pass of *shape* on the roofline of *dev*.

    The regime compares the arithmetic intensity with the ridge.  The
    attained rate is the pass FLOP divided by :func:`latency_estimate`,
    which never exceeds the peak.
    """
    flops = pass_flops(model, shape)
    traffic = activation_bytes(model, shape) + parameter_bytes(model)
    ai = flops/traffic
    regime = MEMORY_BOUND if ai < ridge_intensity(dev) else COMPUTE_BOUND
    attained = flops/latency_estimate(dev, model, shape)
    return RooflinePoint(ai, min(attained, dev.peak_flops), regime)


def processing_latency(dev, model, batch, frames, height, width):
    r"""
    Processing term of the time to first frame, in seconds.

    Returns $2 B T H W P / (C \rho)$ using the effective compute of *dev*.
    Zero frames take zero time; negative sizes are rejected.
    """
    for field, value in (('batch', batch), ('frames', frames),
                         ('height', height), ('width', width)):
        if value < 0:
            raise ValueError("%s must be non-negative, not %r" % (field, value))
    work = 2.*batch*frames*height*width*model.param_count
    return work/(dev.effective_flops*model.pixel_to_token_ratio)


def ttff_estimate(dev, model, shape, input_fps, processing_only=False,
                  passes=1):
    """
    Time to first frame in seconds.

    The first chunk of *shape.chunk_frames_T* frames must be buffered at
    *input_fps* before processing begins.  With *processing_only* the
    buffering term is left out.  *passes* multiplies the processing term
    for models that run several full passes before the first frame.
    """
    if not input_fps > 0:
        raise ValueError("input_fps must be positive, not %r" % input_fps)
    processing = passes*processing_latency(
        dev, model, shape.batch_B, shape.chunk_frames_T,
        shape.height_H, shape.width_W)
    if processing_only:
        return processing
    return shape.chunk_frames_T/input_fps + processing


def calibrated_latency(model, shape):
    """
    Seconds for one pass over all blocks by the calibrated stage costs,
    zero for a model without them.
    """
    return model.num_blocks*model.block_time(shape)


def latency_estimate(dev, model, shape, compute_bound_correction=True):
    """
    Latency in seconds of one denoising pass of *shape*.

    The memory time is activation plus parameter traffic over the
    effective bandwidth.  With *compute_bound_correction* the roofline
    time is the larger of the memory time and the compute time.  The
    result is never below :func:`calibrated_latency`.  The simulator and
    the batch selector both charge passes with it.
    """
    bandwidth = dev.eta*dev.hbm_bandwidth
    roofline = (activation_bytes(model, shape) + parameter_bytes(model))/bandwidth
    if compute_bound_correction:
        roofline = max(roofline, pass_flops(model, shape)/dev.peak_flops)
    return max(roofline, calibrated_latency(model, shape))


def throughput(dev, model, shape, **kw):
    """
    Frames per second for one pass over the batch: $BT/L(T,B)$.

    Keyword arguments are passed to :func:`latency_estimate`.
    """
    frames = shape.batch_B*shape.chunk_frames_T
    return frames/latency_estimate(dev, model, shape, **kw)


def throughput_limit(dev, model, shape):
    """
    Frame rate approached as the batch grows without bound.

    Memory bound this is the effective bandwidth over the activation bytes
    per frame; compute bound it is the peak over the FLOP per frame.  The
    calibrated per item cost gives a third roof.  The smallest applies.
    """
    single = shape.replace(batch_B=1)
    frames = single.chunk_frames_T
    roofs = [dev.eta*dev.hbm_bandwidth*frames/activation_bytes(model, single)]
    flops = pass_flops(model, single)
    if flops > 0:
        roofs.append(dev.peak_flops*frames/flops)
    if model.block_cost > 0:
        roofs.append(frames/(model.num_blocks*model.block_cost*single.pixel_frames))
    return min(roofs)


def amortization(dev, model, shape, batch):
    """
    Per item cost of a batch of *batch* items relative to a single item.

    This is $L(T, m)/(m L(T, 1))$, at most one, and strictly decreasing in
    *batch* while the pass is memory bound.
    """
    if batch < 1:
        raise ValueError("batch must be at least 1, not %r" % batch)
    single = latency_estimate(dev, model, shape.replace(batch_B=1))
    batched = latency_estimate(dev, model, shape.replace(batch_B=int(batch)))
    return batched/(batch*single)


def message_bytes(token_len, hidden_dim, dtype_bytes=DTYPE_BYTES):
    """Bytes in one activation tensor of *token_len* tokens."""
    return float(token_len)*hidden_dim*dtype_bytes


def comm_cost(strategy, token_len, hidden_dim, dev, num_gpus,
              dtype_bytes=DTYPE_BYTES, num_blocks=1):
    """
    Communication seconds for one denoising pass of *token_len* tokens
    over *num_gpus* devices.

    *pipeline_p2p*

        One activation hop per stage boundary around the ring,
        *num_gpus* hops per pass.

    *ulysses_all_to_all*

        Two all-to-all exchanges per block.  Each all-to-all is done in
        *num_gpus-1* pairwise rounds, each round moving the share of the
        local shard destined for one peer.

    *ring_kv*

        Per block, *num_gpus-1* hops circulating the key and value blocks
        of the local shard.

    A single device does no communication.
    """
    if strategy not in STRATEGIES:
        raise UnknownStrategy("unknown strategy %r; use one of %s"
                              % (strategy, ", ".join(STRATEGIES)))
    if num_gpus < 1:
        raise ValueError("num_gpus must be at least 1, not %r" % num_gpus)
    if num_gpus == 1:
        return 0.
    msg = message_bytes(token_len, hidden_dim, dtype_bytes)
    bw, lat = dev.link_bandwidth, dev.link_latency
    P = num_gpus
    if strategy == PIPELINE_P2P:
        return P*(msg/bw + lat)
    elif strategy == ULYSSES:
        round_time = msg/P**2/bw + lat
        return num_blocks*2*(P-1)*round_time
    else:
        kv_block = 2*msg/P
        return num_blocks*(P-1)*(kv_block/bw + lat)

