"""Cross-modal pseudo-labels for LiDAR from a semantic parametric map."""

__version__ = "0.1.0"
