"""Graph neural network toolkit for real-time seismic intensity prediction."""

__version__ = "0.1.0"
