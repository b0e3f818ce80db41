"""GP mesh mapping: LiDAR scans in, triangle mesh and refined trajectory out."""

__version__ = "1.0.0"
