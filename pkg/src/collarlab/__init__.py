"""collarlab: collar-worn IMU processing and dog personality-trait inference."""

__version__ = "0.1.0"
