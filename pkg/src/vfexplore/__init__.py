"""Vector-field reward shaping for safe exploration along an uncertainty level set."""

__version__ = "0.1.0"
