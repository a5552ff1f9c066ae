import warnings

import numpy as np
import pytest

from streamsim import costmodel as cm
from streamsim.block_scheduler import balance
from streamsim.pipeline_sim import block_profile, build_pipeline, run
from streamsim.slo_batcher import (SloTarget, BatchDecision, NotEnoughInput,
                                   BatchController, pass_time, select_batch,
                                   exhaustive_batch)
from streamsim.presets import H100, WAN_1_3B, stream_shape


def test_loose_slo_takes_largest_batch():
    shape = stream_shape('480p', frames=4)
    slo = SloTarget(target_fps=1, per_frame_deadline=1.)
    decision = select_batch(slo, H100, WAN_1_3B, shape, buffered_frames=100, b_max=8)
    assert decision.batch_B == 8
    assert decision.feasible
    decision = select_batch(slo, H100, WAN_1_3B, shape, buffered_frames=21, b_max=8)
    assert decision.batch_B == 5


def test_buffered_frames_bound():
    shape = stream_shape('480p', frames=4)
    slo = SloTarget(target_fps=16)
    decision = select_batch(slo, H100, WAN_1_3B, shape, buffered_frames=7, b_max=8)
    assert decision.batch_B == 1
    with pytest.raises(NotEnoughInput):
        select_batch(slo, H100, WAN_1_3B, shape, buffered_frames=3, b_max=8)


def test_decision_fields():
    shape = stream_shape('480p', frames=4)
    slo = SloTarget(target_fps=16)
    decision = select_batch(slo, H100, WAN_1_3B, shape, buffered_frames=16, b_max=4)
    L = pass_time(H100, WAN_1_3B, shape, decision.batch_B)
    assert abs(decision.predicted_latency - L) < 1e-15
    assert abs(decision.predicted_fps - decision.batch_B*4/L) < 1e-9
    assert decision.regime == cm.MEMORY_BOUND


def test_infeasible_reported():
    shape = stream_shape('480p', frames=4)
    # a deadline no pass can meet
    slo = SloTarget(target_fps=1000, per_frame_deadline=1e-6)
    decision = select_batch(slo, H100, WAN_1_3B, shape, buffered_frames=40, b_max=8)
    assert decision.batch_B == 1
    assert not decision.feasible


def test_matches_exhaustive_search():
    rng = np.random.RandomState(3)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for _ in range(200):
            dev = cm.DeviceSpec(peak_flops=10**rng.uniform(13, 16),
                                hbm_bandwidth=10**rng.uniform(11.5, 13),
                                eta=rng.uniform(0.3, 1.0))
            model = cm.ModelSpec(param_count=10**rng.uniform(8, 10),
                                 num_blocks=rng.randint(4, 41),
                                 per_block_flops_per_token=10**rng.uniform(5, 8),
                                 per_block_bytes_per_token=10**rng.uniform(3, 6))
            T = rng.randint(1, 9)
            shape = cm.StreamShape(chunk_frames_T=T)
            base = cm.latency_estimate(dev, model, shape)
            slo = SloTarget(target_fps=T/base*rng.uniform(0.2, 3.),
                            per_frame_deadline=base/T*rng.uniform(0.5, 6.))
            buffered = rng.randint(T, 20*T)
            b_max = rng.randint(1, 17)
            fast = select_batch(slo, dev, model, shape, buffered, b_max)
            slow = exhaustive_batch(slo, dev, model, shape, buffered, b_max)
            assert fast == slow
            assert fast.batch_B*T <= buffered


def test_aimd():
    slo = SloTarget(target_fps=16)
    controller = BatchController(b_max=8, streak=3)
    prev = BatchDecision(8, 4, 0.1, cm.MEMORY_BOUND)
    # 4 frames in 0.5 s misses both the deadline and the rate
    assert controller.adapt(prev, 0.5, slo).batch_B == 4

    prev = BatchDecision(4, 4, 0.1, cm.MEMORY_BOUND)
    decisions = [controller.adapt(prev, 0.1, slo) for _ in range(3)]
    assert [d.batch_B for d in decisions] == [4, 4, 5]

    prev = BatchDecision(1, 4, 0.1, cm.MEMORY_BOUND)
    stuck = controller.adapt(prev, 0.5, slo)
    assert stuck.batch_B == 1
    assert not stuck.feasible

    with pytest.raises(ValueError):
        controller.adapt(prev, 0., slo)


def test_aimd_convergence():
    slo = SloTarget(target_fps=16)
    b_max, streak = 8, 3
    bound = b_max + streak*b_max
    for latency, fixed in ((0.01, b_max), (10., 1)):
        controller = BatchController(b_max=b_max, streak=streak)
        decision = BatchDecision(4, 4, latency, cm.MEMORY_BOUND)
        seen = []
        for _ in range(bound):
            decision = controller.adapt(decision, latency, slo)
            seen.append(decision.batch_B)
            assert 1 <= decision.batch_B <= b_max
        assert seen[-1] == fixed
        # stays there
        for _ in range(2*streak):
            decision = controller.adapt(decision, latency, slo)
            assert decision.batch_B == fixed


def test_pass_time():
    shape = stream_shape('512', frames=4, steps=2)
    chunk = shape.replace(batch_B=1)
    backbone = cm.latency_estimate(H100, WAN_1_3B, shape.replace(batch_B=6))
    vae = WAN_1_3B.vae_encode_time(chunk) + WAN_1_3B.vae_decode_time(chunk)
    assert abs(pass_time(H100, WAN_1_3B, shape, 3) - (backbone + 3*vae)) < 1e-12


@pytest.mark.parametrize("res, steps, target, deadline, expected", [
    ('512', 1, 16, 0.5, 8),
    ('480p', 1, 12, 0.5, 8),
    ('512', 2, 16, 0.5, 8),
    ('480p', 2, 8, 0.4, 3),
    ])
def test_selected_batch_meets_slo_in_simulation(res, steps, target, deadline,
                                                expected):
    shape = stream_shape(res, frames=4, steps=steps)
    slo = SloTarget(target_fps=target, per_frame_deadline=deadline)
    decision = select_batch(slo, H100, WAN_1_3B, shape, buffered_frames=32,
                            b_max=8)
    assert decision.feasible
    assert decision.batch_B == expected
    batched = shape.replace(batch_B=decision.batch_B)
    part = balance(block_profile(H100, WAN_1_3B, batched), 1)
    pipe = build_pipeline(part, H100, WAN_1_3B, batched, num_gpus=1)
    report = run(pipe, chunks=32, input_fps=target, slo=slo)
    assert report.chunks_out == 32
    assert report.slo_violations == 0
    assert max(report.per_chunk_latency) <= (steps+1)*decision.predicted_latency


def test_unreachable_rate_is_infeasible():
    shape = stream_shape('480p', frames=4)
    decision = select_batch(SloTarget(100), H100, WAN_1_3B, shape,
                            buffered_frames=32, b_max=8)
    assert not decision.feasible
    assert decision.batch_B == 1


def test_controller_history_is_bounded():
    slo = SloTarget(target_fps=16)
    controller = BatchController(b_max=8, streak=100, keep=3)
    prev = BatchDecision(4, 4, 0.1, cm.MEMORY_BOUND)
    for latency in (0.1, 0.11, 0.12, 0.13, 0.14):
        controller.adapt(prev, latency, slo)
    assert len(controller.history) == 3
    assert [h[1] for h in controller.history] == [0.12, 0.13, 0.14]


def test_controller_observed_fps():
    slo = SloTarget(target_fps=16)
    controller = BatchController(b_max=8)
    prev = BatchDecision(4, 4, 0.1, cm.MEMORY_BOUND)
    # latency within the deadline, rate below the target
    assert controller.adapt(prev, 0.1, slo, observed_fps=10.).batch_B == 2
    assert controller.adapt(prev, 0.1, slo, observed_fps=100.).batch_B == 4
