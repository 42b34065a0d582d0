"""Neural-approximated virtual element bases (H/B/P variants) on polygonal meshes."""

__version__ = "0.1.0"
