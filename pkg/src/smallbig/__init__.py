"""SmallBig spatio-temporal kernels, networks, cost model and desk-scale harness."""

__version__ = "0.1.0"
