"""urbanvit: district-level urban vitality prediction from open satellite
imagery and city vector layers."""

__version__ = "0.1.0"
