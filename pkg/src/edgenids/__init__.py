"""Flow-based intrusion detection models for edge platforms.

Training and int8 inference are pure numpy; the platform cost model
predicts per-inference latency, energy and memory use on an edge
accelerator and an embedded CPU.
"""
__version__ = "0.1.0"
