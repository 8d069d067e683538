"""Graph polynomial convolution networks, baselines, diagnostics and bounds."""

__version__ = "0.1.0"
