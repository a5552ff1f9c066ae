# This program is in the public domain
r"""
Motion aware noise rate control.

The motion between consecutive latent frames $v_{t-1}, v_t \in R^{C\times H\times W}$
is the root mean square difference

.. math::

    d_t = \sqrt{\frac{1}{CHW} \sum (v_t - v_{t-1})^2}

Over the last $k$ frames the largest $d$ is normalized by a scale $\sigma$
and clipped to give $\hat d_t \in [0, 1]$.  The noise rate then follows an
exponential moving average toward a target that falls with motion

.. math::

    s_t = \lambda [s_{max} - (s_{max}-s_{min}) \hat d_t] + (1-\lambda) s_{t-1}

so fast motion is denoised conservatively (low $s$) and slow motion gets a
deeper refinement (high $s$).  The rate selects the injection timestep of
the denoising schedule for the next chunk.
"""

__all__ = ["LatentFrame", "MotionWindow", "NoiseRateState",
           "motion_intensity", "normalized_motion", "update_noise_rate",
           "schedule_for_rate", "RunningScale", "MotionController"]

import logging
from collections import deque

import numpy as np

log = logging.getLogger(__name__)


class LatentFrame(object):
    """
    One latent frame: *values* is a C x H x W array, *frame_index* its
    position in the stream.
    """
    def __init__(self, values, frame_index=0):
        values = np.asarray(values, dtype='d')
        if values.ndim != 3:
            raise ValueError("latent frame must be C x H x W, not shape %s"
                             % (values.shape,))
        if not np.all(np.isfinite(values)):
            raise ValueError("latent frame %d has non-finite values" % frame_index)
        self.values = values
        self.frame_index = int(frame_index)

    @property
    def shape(self):
        return self.values.shape

    @classmethod
    def from_pixels(cls, pixels, frame_index=0, factor=8):
        """
        Stand-in latent from a C x H x W pixel frame by averaging
        *factor* x *factor* tiles.  H and W are cropped to multiples of
        *factor*.
        """
        pixels = np.asarray(pixels, dtype='d')
        C, H, W = pixels.shape
        h, w = H//factor, W//factor
        if h == 0 or w == 0:
            raise ValueError("frame %dx%d is smaller than the %d pixel tile"
                             % (H, W, factor))
        tiles = pixels[:, :h*factor, :w*factor].reshape(C, h, factor, w, factor)
        return cls(tiles.mean(axis=(2, 4)), frame_index)


def motion_intensity(prev, cur):
    """
    Root mean square difference between two frames of the same shape.
    """
    if prev.shape != cur.shape:
        raise ValueError("frame shapes differ: %s and %s"
                         % (prev.shape, cur.shape))
    diff = cur.values - prev.values
    return float(np.sqrt(np.mean(diff**2)))


class MotionWindow(object):
    """
    The last *window_k* motion intensities and the normalizing scale
    *scale_sigma*.
    """
    def __init__(self, window_k=8, scale_sigma=1.0, recent_d=()):
        if window_k < 1:
            raise ValueError("window_k must be at least 1, not %r" % window_k)
        if not scale_sigma > 0:
            raise ValueError("scale_sigma must be positive, not %r" % scale_sigma)
        self.window_k = int(window_k)
        self.scale_sigma = float(scale_sigma)
        self.recent_d = deque(maxlen=self.window_k)
        for d in recent_d:
            self.push(d)

    def push(self, d):
        if not d >= 0:
            raise ValueError("motion intensity must be non-negative, not %r" % d)
        self.recent_d.append(float(d))

    def __len__(self):
        return len(self.recent_d)


def normalized_motion(window):
    r"""
    $\hat d = \mathrm{clip}(\max_i d_i / \sigma, 0, 1)$ over the window.
    """
    if not len(window):
        raise ValueError("motion window is empty")
    return float(np.clip(max(window.recent_d)/window.scale_sigma, 0., 1.))


class NoiseRateState(object):
    """
    Noise rate *s_current* kept within [*s_min*, *s_max*] and smoothed with
    rate *lam*.  The rate starts at *s_max* unless given.
    """
    def __init__(self, s_current=None, s_min=0.4, s_max=0.9, lam=0.4):
        if not 0 < s_min < s_max <= 1:
            raise ValueError("need 0 < s_min < s_max <= 1, not (%r, %r)"
                             % (s_min, s_max))
        if not 0 < lam < 1:
            raise ValueError("lam must be in (0, 1), not %r" % lam)
        if s_current is None:
            s_current = s_max
        if not s_min <= s_current <= s_max:
            raise ValueError("s_current %r outside [%r, %r]"
                             % (s_current, s_min, s_max))
        self.s_current = float(s_current)
        self.s_min = float(s_min)
        self.s_max = float(s_max)
        self.lam = float(lam)

    def __repr__(self):
        return ("NoiseRateState(s=%.6g, bounds=(%g, %g), lam=%g)"
                % (self.s_current, self.s_min, self.s_max, self.lam))


def update_noise_rate(state, d_hat, lam=None):
    """
    Apply one smoothing step for normalized motion *d_hat* and return the
    new state.  *lam* overrides the state's rate; a rate of 1 jumps
    straight to the target.
    """
    if not 0 <= d_hat <= 1:
        raise ValueError("d_hat must be in [0, 1], not %r" % d_hat)
    lam = state.lam if lam is None else lam
    if not 0 < lam <= 1:
        raise ValueError("lam must be in (0, 1], not %r" % lam)
    target = state.s_max - (state.s_max - state.s_min)*d_hat
    s = lam*target + (1-lam)*state.s_current
    # rounding only
    s = min(max(s, state.s_min), state.s_max)
    new = NoiseRateState.__new__(NoiseRateState)
    new.s_current, new.s_min, new.s_max, new.lam = s, state.s_min, state.s_max, state.lam
    return new


def schedule_for_rate(s, timesteps, s_min=None, s_max=None):
    """
    Injection timestep and remaining schedule for noise rate *s*.

    Without bounds the target level is *s* times the largest timestep.
    With *s_min* and *s_max* the rate range maps linearly onto the range of
    *timesteps*, so the lowest rate picks the shallowest level and the
    highest rate the deepest.  The nearest available level wins, the
    shallower one on a tie.

    Returns (*start*, *tail*) with *tail* the timesteps from *start*
    downward in decreasing order.
    """
    levels = sorted(set(float(t) for t in timesteps), reverse=True)
    if not levels:
        raise ValueError("no timesteps available")
    if s_min is not None and s_max is not None:
        if not s_min < s_max:
            raise ValueError("need s_min < s_max, not (%r, %r)" % (s_min, s_max))
        u = (s - s_min)/(s_max - s_min)
        target = levels[-1] + u*(levels[0] - levels[-1])
    else:
        target = s*levels[0]
    start = None
    for t in reversed(levels):  # shallow to deep, so ties stay shallow
        if start is None or abs(t - target) < abs(start - target):
            start = t
    tail = [t for t in levels if t <= start]
    return start, tail


class RunningScale(object):
    """
    Running *quantile* of the motion intensities seen so far, over the last
    *history* values.
    """
    def __init__(self, quantile=0.95, history=4096):
        self.quantile = quantile
        self.values = deque(maxlen=history)

    def push(self, d):
        self.values.append(d)

    @property
    def value(self):
        if not self.values:
            return 0.
        return float(np.percentile(np.asarray(self.values), 100*self.quantile))


class MotionController(object):
    """
    Per stream motion controller.

    Feed frames to :meth:`observe`; each call returns (*d*, *d_hat*, *s*) and
    appends a row to :attr:`trace`.  *sigma* fixes the normalizing scale;
    when None the running 95th percentile of the observed motion is used.
    *timesteps* is the denoising schedule the rate indexes into.
    """
    def __init__(self, window_k=8, lam=0.4, s_min=0.4, s_max=0.9, sigma=None,
                 timesteps=(1000, 750, 500, 250)):
        self.window = MotionWindow(window_k=window_k)
        self.state = NoiseRateState(s_min=s_min, s_max=s_max, lam=lam)
        self.sigma = sigma
        self.scale = RunningScale()
        self.timesteps = list(timesteps)
        self.previous = None
        self.trace = []
        self.log = logging.getLogger(__name__)

    def observe(self, frame):
        if not isinstance(frame, LatentFrame):
            frame = LatentFrame(frame, len(self.trace))
        if self.previous is None:
            self.previous = frame
            d, d_hat = 0., 0.
        else:
            d = motion_intensity(self.previous, frame)
            self.previous = frame
            self.window.push(d)
            self.scale.push(d)
            sigma = self.sigma if self.sigma is not None else self.scale.value
            if sigma > 0:
                self.window.scale_sigma = sigma
                d_hat = normalized_motion(self.window)
            else:
                d_hat = 0.
            self.state = update_noise_rate(self.state, d_hat)
        s = self.state.s_current
        start, _ = schedule_for_rate(s, self.timesteps,
                                     self.state.s_min, self.state.s_max)
        self.trace.append({'frame': frame.frame_index, 'd': d, 'd_hat': d_hat,
                           's': s, 'start_timestep': start})
        self.log.debug("frame %d: d=%.4g d_hat=%.3f s=%.4f",
                       frame.frame_index, d, d_hat, s)
        return d, d_hat, s

    def schedule(self):
        """Injection timestep and schedule tail for the current rate."""
        return schedule_for_rate(self.state.s_current, self.timesteps,
                                 self.state.s_min, self.state.s_max)
