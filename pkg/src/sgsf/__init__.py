"""Self-supervised guided segmentation for unsupervised anomaly detection."""

__version__ = "0.1.0"
