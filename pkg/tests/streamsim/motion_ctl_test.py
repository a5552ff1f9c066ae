import numpy as np
import pytest

from streamsim.motion_ctl import (
    LatentFrame, MotionWindow, NoiseRateState, MotionController,
    motion_intensity, normalized_motion, update_noise_rate, schedule_for_rate)


def test_motion_intensity():
    a = LatentFrame(np.zeros((2, 3, 4)))
    b = LatentFrame(np.full((2, 3, 4), 0.5))
    assert motion_intensity(a, b) == 0.5
    assert motion_intensity(b, b) == 0.
    with pytest.raises(ValueError):
        motion_intensity(a, LatentFrame(np.zeros((2, 3, 5))))
    with pytest.raises(ValueError):
        LatentFrame(np.array([[[np.nan]]]))


def test_normalized_motion():
    window = MotionWindow(window_k=3, scale_sigma=0.5, recent_d=[0.1, 0.3, 0.2])
    assert abs(normalized_motion(window) - 0.6) < 1e-12
    window.push(2.)
    assert normalized_motion(window) == 1.
    # oldest value falls out of the window
    assert len(window) == 3
    with pytest.raises(ValueError):
        normalized_motion(MotionWindow())


def test_update_noise_rate():
    state = NoiseRateState(s_current=0.7, s_min=0.4, s_max=0.9, lam=0.3)
    new = update_noise_rate(state, 0.5)
    assert abs(new.s_current - 0.685) < 1e-12
    assert state.s_current == 0.7
    assert update_noise_rate(state, 0., lam=1.).s_current == 0.9
    assert update_noise_rate(state, 1., lam=1.).s_current == 0.4
    with pytest.raises(ValueError):
        update_noise_rate(state, 1.5)


def test_rate_stays_bounded():
    rng = np.random.RandomState(11)
    for _ in range(10000):
        lam = rng.uniform(0.01, 0.99)
        s_min = rng.uniform(0.05, 0.5)
        s_max = rng.uniform(s_min + 0.01, 1.)
        s0 = rng.uniform(s_min, s_max)
        low = NoiseRateState(s0, s_min, s_max, lam)
        high = NoiseRateState(s0, s_min, s_max, lam)
        step = lam*(s_max - s_min)*(1 + 1e-12)
        for d_hat in rng.uniform(0, 1, size=5):
            bump = min(1., d_hat + rng.uniform(0, 0.5))
            new_low = update_noise_rate(low, d_hat)
            new_high = update_noise_rate(high, bump)
            assert s_min <= new_low.s_current <= s_max
            assert abs(new_low.s_current - low.s_current) <= step
            # more motion never raises the rate
            assert new_high.s_current <= new_low.s_current + 1e-15
            low, high = new_low, new_high


def test_scale_consistent():
    d = [0.05, 0.4, 0.1]
    a = normalized_motion(MotionWindow(scale_sigma=0.7, recent_d=d))
    b = normalized_motion(MotionWindow(scale_sigma=1.4,
                                       recent_d=[2*x for x in d]))
    assert abs(a - b) < 1e-15


def test_schedule_for_rate():
    steps = [1000, 750, 500, 250]
    assert schedule_for_rate(0.9, steps, 0.4, 0.9)[0] == 1000
    assert schedule_for_rate(0.4, steps, 0.4, 0.9)[0] == 250
    # midway ties toward the shallower level
    start, tail = schedule_for_rate(0.5, steps, 0.25, 0.75)
    assert start == 500
    assert tail == [500, 250]
    start, tail = schedule_for_rate(0.5, [250, 500, 750, 1000])
    assert start == 500
    assert tail == [500, 250]
    with pytest.raises(ValueError):
        schedule_for_rate(0.5, [])


def test_controller_static_stream():
    controller = MotionController(sigma=0.1)
    frame = np.ones((4, 6, 6))
    for _ in range(10):
        d, d_hat, s = controller.observe(frame)
    assert d == 0 and d_hat == 0
    assert s == 0.9
    assert controller.schedule()[0] == 1000
    assert len(controller.trace) == 10


def test_controller_fast_motion():
    controller = MotionController(sigma=0.1)
    rng = np.random.RandomState(2)
    rates = [controller.observe(rng.normal(size=(4, 6, 6)))[2]
             for _ in range(40)]
    assert all(a >= b for a, b in zip(rates, rates[1:]))
    assert rates[-1] < 0.41
    assert controller.schedule()[0] == 250


def test_controller_adaptive_scale():
    controller = MotionController()
    rng = np.random.RandomState(4)
    for _ in range(20):
        controller.observe(rng.normal(size=(4, 6, 6)))
    # the largest recent motion sits near the running 95th percentile
    assert controller.trace[-1]['d_hat'] > 0.8


def test_from_pixels():
    pixels = np.arange(3*16*16, dtype='d').reshape(3, 16, 16)
    frame = LatentFrame.from_pixels(pixels, factor=8)
    assert frame.shape == (3, 2, 2)
    assert frame.values[0, 0, 0] == pixels[0, :8, :8].mean()
