"""Model adapter: detector, segmenter, and trainer engines behind the
herdpipe wire protocols."""

__version__ = "0.1.0"
