"""Event-camera motion compensation and pattern tracking with GP occupancy fields."""

__version__ = "0.1.0"
