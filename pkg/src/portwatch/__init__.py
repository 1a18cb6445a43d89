"""Per-port anomaly detection for scanning malware on Zeek connection logs."""

__version__ = "0.1.0"
