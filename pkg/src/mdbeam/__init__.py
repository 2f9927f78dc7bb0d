"""Multiuser-MISO downlink beamforming toolkit: classical solvers, a
model-driven beamforming network, compression and link-level benchmarks."""

from . import bench, bnn, channel, compress, nn, solvers

__all__ = ["bench", "bnn", "channel", "compress", "nn", "solvers"]
__version__ = "0.1.0"
