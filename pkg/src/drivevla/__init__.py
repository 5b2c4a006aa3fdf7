"""Driving-dataset generation: pose estimation, trajectory annotation, scene
sampling, captioning, record emission and trajectory-prediction evaluation."""

__version__ = "0.1.0"
