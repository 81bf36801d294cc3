"""External-evaluator adapter: host generator/subject models behind the
newline-delimited JSON wire protocol (hello/eval, protocol version 1)."""

from .adapter import AdapterError, AdapterSpec, LayerDecl

__all__ = ["AdapterError", "AdapterSpec", "LayerDecl"]

__version__ = "0.1.0"
