"""Human-to-humanoid motion retargeting and skill-evaluation toolkit."""

__version__ = "0.1.0"
