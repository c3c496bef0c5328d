"""Zero-shot health-event prediction benchmark for locally served small language models."""

__version__ = "0.1.0"
