"""Adapter entry point.

    pyeval --transport stdio --model pyeval.models.shell --model-arg dim=10
    pyeval --transport tcp --port 7777 --model path/to/my_model.py

The model is a dotted module name or a .py path exposing
``build_adapter(**model_args) -> AdapterSpec``; ``--model-arg key=value``
pairs are forwarded as strings for the model to parse.
"""

from __future__ import annotations

import argparse
import importlib
import importlib.util
import sys
from pathlib import Path

from .adapter import AdapterError, AdapterSpec
from .server import serve_stdio, serve_tcp


def load_adapter(model: str, model_args: list[str]) -> AdapterSpec:
    if model.endswith(".py"):
        path = Path(model)
        spec = importlib.util.spec_from_file_location(path.stem, path)
        if spec is None or spec.loader is None:
            raise AdapterError(f"cannot load model file {model!r}")
        module = importlib.util.module_from_spec(spec)
        spec.loader.exec_module(module)
    else:
        module = importlib.import_module(model)
    if not hasattr(module, "build_adapter"):
        raise AdapterError(f"model {model!r} defines no build_adapter()")
    kwargs = {}
    for item in model_args:
        key, sep, value = item.partition("=")
        if not sep:
            raise AdapterError(f"--model-arg needs key=value, got {item!r}")
        kwargs[key] = value
    adapter = module.build_adapter(**kwargs)
    if not isinstance(adapter, AdapterSpec):
        raise AdapterError("build_adapter() must return an AdapterSpec")
    return adapter


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="pyeval", description=__doc__)
    parser.add_argument("--transport", choices=["stdio", "tcp"], default="stdio")
    parser.add_argument("--port", type=int, default=0,
                        help="TCP port (0 picks one and prints it)")
    parser.add_argument("--model", required=True,
                        help="dotted module or .py path with build_adapter()")
    parser.add_argument("--model-arg", action="append", default=[],
                        help="key=value forwarded to build_adapter (repeatable)")
    args = parser.parse_args(argv)

    try:
        adapter = load_adapter(args.model, args.model_arg)
    except (AdapterError, ImportError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    try:
        if args.transport == "stdio":
            serve_stdio(adapter)
        else:
            serve_tcp(adapter, args.port, announce=sys.stdout)
    except AdapterError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (BrokenPipeError, KeyboardInterrupt):
        pass
    return 0


if __name__ == "__main__":
    sys.exit(main())
