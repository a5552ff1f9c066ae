# This program is in the public domain
"""
Synthetic latent streams with controlled motion.

A motion profile is a list of segments *(frames, level)*.  Each frame of a
segment differs from the previous one by a random field scaled to have
root mean square exactly *level*, so the motion measured by
:func:`streamsim.motion_ctl.motion_intensity` follows the profile.

    >>> stream = gen_stream([(3, 0.), (3, 0.5)], seed=1)
    >>> [round(d, 6) for d in stream.measured()]
    [0.0, 0.0, 0.0, 0.5, 0.5, 0.5]
"""

__all__ = ["SyntheticStream", "gen_stream", "step_profile"]

import numpy as np

from .motion_ctl import LatentFrame, motion_intensity


class SyntheticStream(object):
    """
    Frames generated from a motion *profile*.  *frames* is a list of
    :class:`LatentFrame`; frame 0 is the starting field and each later frame
    carries the motion level of its segment.
    """
    def __init__(self, profile, frames, seed):
        self.profile = profile
        self.frames = frames
        self.seed = seed

    def __len__(self):
        return len(self.frames)

    def __iter__(self):
        return iter(self.frames)

    def targets(self):
        """Target motion level of each frame after the first."""
        return [level for count, level in self.profile for _ in range(count)]

    def measured(self):
        """Realized motion intensity of each frame after the first."""
        return [motion_intensity(a, b)
                for a, b in zip(self.frames[:-1], self.frames[1:])]

    def chunks(self, T):
        """Frames grouped into chunks of *T*, dropping a short tail."""
        n = len(self.frames)//T
        return [self.frames[k*T:(k+1)*T] for k in range(n)]

    def hidden_states(self, chunk):
        """
        Tokens x channels hidden states for a chunk: every spatial
        position of every frame is a token.
        """
        values = np.stack([f.values for f in chunk])   # T x C x H x W
        return values.transpose(0, 2, 3, 1).reshape(-1, values.shape[1])


def _check_profile(profile):
    profile = [(int(count), float(level)) for count, level in profile]
    if not profile:
        raise ValueError("motion profile is empty")
    for count, level in profile:
        if count < 1:
            raise ValueError("segment length must be at least 1, not %d" % count)
        if level < 0:
            raise ValueError("motion level must be non-negative, not %g" % level)
    return profile


def gen_stream(profile, channels=4, height=8, width=8, seed=0, pixel=False):
    """
    Generate a :class:`SyntheticStream` following *profile*.

    Latent frames are *channels* x *height* x *width*.  With *pixel* the
    frames are three channel images eight times larger in each direction,
    for measuring motion in the pixel domain.  The stream depends only on
    its arguments.
    """
    profile = _check_profile(profile)
    if pixel:
        channels, height, width = 3, 8*height, 8*width
    rng = np.random.RandomState(seed)
    current = rng.normal(size=(channels, height, width))
    frames = [LatentFrame(current, 0)]
    index = 1
    for count, level in profile:
        for _ in range(count):
            step = rng.normal(size=current.shape)
            rms = np.sqrt(np.mean(step**2))
            current = current + step*(level/rms)
            frames.append(LatentFrame(current, index))
            index += 1
    return SyntheticStream(profile, frames, seed)


def step_profile(low=0.05, high=0.5, frames=32):
    """Low motion followed by high motion, *frames* frames each."""
    return [(frames, low), (frames, high)]
