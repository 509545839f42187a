"""Figure rendering for fbheat CSV/JSON artifacts."""

from .render import FigureKind, FigureRequest, SchemaError, render

__version__ = "0.1.0"
