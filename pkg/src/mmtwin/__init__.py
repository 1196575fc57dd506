"""Differentiable mmWave ray tracing with calibrated radio materials."""
import os

# the bundled TBB is too old for numba; skip straight to the other layers
os.environ.setdefault("NUMBA_THREADING_LAYER_PRIORITY", "omp workqueue tbb")

__version__ = "0.1.0"
