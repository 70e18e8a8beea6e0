"""urbanvit-exporter: deep embedding exporter for 64x64 imagelets."""

__version__ = "0.1.0"
