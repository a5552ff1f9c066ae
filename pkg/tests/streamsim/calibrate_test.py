import os
import tempfile

import pytest

from streamsim.calibrate import (anchors_for, calibrate, load_fixture,
                                 save_fixture, simulated_fps)
from streamsim.presets import H100, WAN_1_3B, FPS_ANCHORS
from streamsim.support import sample_data


def test_anchors():
    anchors = anchors_for('wan-1.3b')
    assert [a[0] for a in anchors] == ['480p', '512', '512']
    assert [a[2] for a in anchors] == [1, 1, 4]
    assert anchors[0][3] == FPS_ANCHORS['wan-1.3b', '480p', 4, 1]
    with pytest.raises(ValueError):
        anchors_for('wan-7b')


def test_presets_are_calibrated():
    anchors = anchors_for('wan-1.3b')
    fps = simulated_fps(H100, WAN_1_3B, anchors)
    for (_, _, _, anchor), f in zip(anchors, fps):
        assert abs(f/anchor - 1) < 0.10


def test_recovers_costs():
    start = WAN_1_3B.replace(context_cost=1.5*WAN_1_3B.context_cost)
    fitted, rows, chisq = calibrate(start, anchors_for('wan-1.3b'))
    assert fitted.vae_decode_cost == fitted.vae_encode_cost
    for row in rows:
        assert abs(row['error']) < 0.10, row
    assert fitted.context_cost < start.context_cost


def test_fixture_roundtrip():
    rows = [{'resolution': '512', 'gpus': 4, 'steps': 1, 'anchor': 61.57,
             'fps': 62.5}]
    fd, filename = tempfile.mkstemp(suffix='.txt')
    os.close(fd)
    try:
        save_fixture(filename, WAN_1_3B, rows, chisq=2.5)
        model, table = load_fixture(filename)
    finally:
        os.unlink(filename)
    assert model.__dict__ == WAN_1_3B.__dict__
    assert table.shape == (1, 6)
    assert list(table[0]) == [512, 512, 4, 1, 61.57, 62.5]


def test_shipped_fixture():
    model, table = load_fixture(sample_data('wan-1.3b-h100'))
    assert model.block_cost == WAN_1_3B.block_cost
    assert model.context_cost == WAN_1_3B.context_cost
    assert model.num_blocks == 30
    assert table.shape == (3, 6)
    assert list(table[:, 4]) == [42.26, 61.57, 64.52]
    assert list(table[:, 3]) == [1, 1, 4]
