# This program is in the public domain
"""
Calibration of stage cost coefficients.

The stage cost coefficients of a model (*context_cost* per pixel and
block, and *block_cost*, *vae_encode_cost* and *vae_decode_cost* per
pixel-frame) are fitted so that the simulated
steady frame rate matches measured anchors.  Each anchor is a
(resolution, gpus, steps, fps) tuple run on a balanced pipeline.

The fit is a bumps :class:`Curve` whose x values index the anchors; the
simulated rate is the theory and the anchors are the data with a one
percent uncertainty.  By default the decode cost is tied to the encode
cost, leaving three free parameters.

The result is written in the scenario header format so that the fitted
model can be pasted into a scenario::

    # model: {"name": "wan-1.3b", "context_cost": 2.7e-08, ...}
    # chisq: 0.01
    # columns: ["height", "width", "gpus", "steps", "anchor", "fps"]
    480 832 4 1 42.26 42.3
"""

__all__ = ["calibrate", "simulated_fps", "anchors_for", "save_fixture",
           "load_fixture", "COST_FIELDS", "FIXTURE_COLUMNS"]

import json
import logging

import numpy as np
from bumps.curve import Curve
from bumps.data import parse_multi
from bumps.fitproblem import FitProblem
import bumps.fitters as fit

from . import presets
from .costmodel import ModelSpec
from .pipeline_sim import sweep

log = logging.getLogger(__name__)

COST_FIELDS = ("context_cost", "block_cost", "vae_encode_cost",
               "vae_decode_cost")
FIXTURE_COLUMNS = ("height", "width", "gpus", "steps", "anchor", "fps")


def anchors_for(name, table=None):
    """
    Anchors (resolution, gpus, steps, fps) of model *name* taken from
    *table*, which defaults to :data:`streamsim.presets.FPS_ANCHORS`.
    """
    table = presets.FPS_ANCHORS if table is None else table
    anchors = [(res, K, n, fps) for (model, res, K, n), fps
               in sorted(table.items()) if model == name]
    if not anchors:
        raise ValueError("no anchors for model %r" % name)
    return anchors


def simulated_fps(device, model, anchors, chunks=24):
    """Simulated steady frame rate for each anchor."""
    fps = []
    for res, K, n, _ in anchors:
        row = sweep(device, model, {res: presets.stream_shape(res)},
                    gpus=(K,), steps=(n,), chunks=chunks)[0]
        fps.append(row['fps'])
    return np.array(fps)


def calibrate(model, anchors=None, device=presets.H100, tie_vae=True,
              steps=200, chunks=24, span=4.):
    """
    Fit the cost coefficients of *model* to *anchors*.

    Each free coefficient may move within a factor *span* of its starting
    value.  With *tie_vae* the decode cost follows the encode cost.
    Returns the fitted :class:`ModelSpec`, one row per anchor with the
    measured and fitted rates, and the reduced chisq of the fit.
    """
    if anchors is None:
        anchors = anchors_for(model.name)
    anchors = list(anchors)
    target = np.array([a[3] for a in anchors], dtype='d')

    def theory(x, context_cost, block_cost, vae_encode_cost, vae_decode_cost):
        trial = model.replace(context_cost=context_cost, block_cost=block_cost,
                              vae_encode_cost=vae_encode_cost,
                              vae_decode_cost=vae_decode_cost)
        return simulated_fps(device, trial, [anchors[int(k)] for k in x],
                             chunks=chunks)

    start = dict((f, getattr(model, f)) for f in COST_FIELDS)
    M = Curve(theory, np.arange(len(anchors)), target, dy=0.01*target,
              name=model.name, **start)
    for field in COST_FIELDS:
        value = start[field]
        if value <= 0:
            raise ValueError("%s must be positive to calibrate, not %g"
                             % (field, value))
        getattr(M, field).range(value/span, value*span)
    if tie_vae:
        M.vae_decode_cost = M.vae_encode_cost

    problem = FitProblem(M)
    monitors = fit.MonitorRunner([], problem)
    x, fx = fit.SimplexFit(problem).solve(monitors, steps=steps)
    problem.setp(x)
    fitted = model.replace(**dict((f, getattr(M, f).value) for f in COST_FIELDS))
    fps = simulated_fps(device, fitted, anchors, chunks=chunks)
    chisq = float(np.sum(((fps - target)/(0.01*target))**2)/len(anchors))
    log.info("calibrated %s: %s chisq=%.3g", model.name,
             ", ".join("%s=%.4g" % (f, getattr(fitted, f)) for f in COST_FIELDS),
             chisq)
    rows = [{'resolution': res, 'gpus': K, 'steps': n, 'anchor': anchor,
             'fps': float(f), 'error': float(f/anchor - 1)}
            for (res, K, n, anchor), f in zip(anchors, fps)]
    return fitted, rows, chisq


def save_fixture(filename, model, rows, chisq=None):
    """
    Write a calibrated *model* and its anchor *rows* as a header file.
    """
    spec = dict(model.__dict__)
    header = ["# schema: 1", "# model: %s" % json.dumps(spec, sort_keys=True)]
    if chisq is not None:
        header.append("# chisq: %s" % json.dumps(chisq))
    header.append("# columns: %s" % json.dumps(list(FIXTURE_COLUMNS)))
    data = []
    for row in rows:
        height, width = presets.RESOLUTIONS[row['resolution']]
        data.append([height, width, row['gpus'], row['steps'],
                     row['anchor'], row['fps']])
    with open(filename, 'w') as fid:
        fid.write("\n".join(header) + "\n")
        np.savetxt(fid, np.array(data, dtype='d'), fmt="%12.8g")


def load_fixture(filename):
    """
    Read a fixture written by :func:`save_fixture`.  Returns the
    :class:`ModelSpec` and the anchor table as an array with one row per
    anchor and the columns of *FIXTURE_COLUMNS*.
    """
    header, data = parse_multi(filename, keysep=":", sep=None, comment="#")[0]
    if json.loads(header.get('schema', 'null')) != 1:
        raise ValueError("%s: not a schema 1 fixture" % filename)
    model = ModelSpec(**json.loads(header['model']))
    data = np.asarray(data, dtype='d')
    if data.ndim == 1:
        data = data[:, None]
    return model, data.T
