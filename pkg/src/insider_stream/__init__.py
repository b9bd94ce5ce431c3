"""Online insider-threat anomaly detection over streaming system logs."""

__version__ = "0.1.0"
