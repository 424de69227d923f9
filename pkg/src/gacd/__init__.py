"""Graph-agnostic cyber defense workbench."""

__version__ = "0.1.0"
