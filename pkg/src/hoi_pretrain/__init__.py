"""Two-branch pre-training for DETR-style human-object interaction detectors."""

__version__ = "0.1.0"
