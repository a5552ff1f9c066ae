# This program is in the public domain
"""
StreamSim: Streaming Video Diffusion Serving Simulator

This package models real-time serving of a video diffusion transformer
on a small GPU group.  It provides closed-form latency and roofline
models, SLO-aware batch selection, a discrete-event simulator of
pipeline-parallel Stream Batch execution, block load balancing, and the
quality controls of a live stream: motion-aware noise rates, sink token
refresh, rotary position reset and a rolling KV cache.

Small numpy reference kernels check the streaming caches against full
sequence computations.

Run ``streamsim --help`` for the command line interface.
"""

__version__ = "0.1.0"
