"""Spectral computations for quasi-periodic Schrödinger operators with
Gevrey-type potentials: frequency arithmetic, sparse trigonometric series,
cocycle dynamics, KAM reduction and gap analysis."""
from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("artifact")
except PackageNotFoundError:  # source tree without install metadata
    __version__ = "0.1.0"
