"""Mark summary characteristics for point patterns with composition-valued marks."""

__version__ = "0.1.0"
