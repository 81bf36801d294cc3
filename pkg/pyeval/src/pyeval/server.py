"""Request loop answering the hello/eval wire contract for one adapter.

Single-threaded, one JSON document per line. Malformed requests get an
``error`` reply and the loop continues; model failures get an ``error``
reply and the loop aborts (callers exit nonzero), because a half-broken
model must not keep serving.
"""

from __future__ import annotations

import json
import socket
from typing import IO

import numpy as np

from .adapter import AdapterError, AdapterSpec

PROTOCOL_VERSION = 1


class RequestError(Exception):
    """Client-side mistake in a single request; the loop continues."""


def _parse_taps(spec: AdapterSpec, raw) -> dict[str, np.ndarray | None]:
    if not isinstance(raw, list) or not raw:
        raise RequestError("taps must be a non-empty list")
    dims = spec.layer_dims()
    taps: dict[str, np.ndarray | None] = {}
    for tap in raw:
        layer = tap.get("layer")
        if layer not in dims:
            raise RequestError(f"unknown layer {layer!r}")
        units = tap.get("units")
        if units == "all":
            taps[layer] = None
            continue
        idx = np.asarray(units, dtype=np.int64).reshape(-1)
        if idx.size > 1 and not np.all(np.diff(idx) > 0):
            raise RequestError("unit indices must be sorted ascending")
        if idx.size and (idx[0] < 0 or idx[-1] >= dims[layer]):
            raise RequestError(f"unit indices out of range for layer {layer!r}")
        taps[layer] = idx
    return taps


def _parse_codes(spec: AdapterSpec, raw) -> np.ndarray:
    codes = np.asarray(raw, dtype=np.float32)
    if codes.ndim != 2 or codes.shape[1] != spec.code_dim:
        raise RequestError(
            f"codes must be (batch, {spec.code_dim}), got shape {codes.shape}"
        )
    if not np.all(np.isfinite(codes)):
        raise RequestError("codes contain non-finite values")
    return codes


def handle_request(spec: AdapterSpec, message: dict) -> dict:
    """One request to one reply; raises AdapterError on model failure."""
    kind = message.get("type")
    if kind == "hello":
        if message.get("protocol") != PROTOCOL_VERSION:
            raise RequestError(
                f"unsupported protocol {message.get('protocol')!r}, "
                f"server speaks {PROTOCOL_VERSION}"
            )
        return dict(type="info", protocol=PROTOCOL_VERSION, **spec.info_payload())
    if kind == "eval":
        request_id = message.get("id")
        taps = _parse_taps(spec, message.get("taps"))
        codes = _parse_codes(spec, message.get("codes"))
        values = spec.run(codes, list(taps))
        activations = {}
        for layer, idx in taps.items():
            arr = values[layer] if idx is None else values[layer][:, idx]
            # float32 -> exact shortest decimals; the client recovers the bits
            activations[layer] = [[float(v) for v in row] for row in arr]
        return {"type": "result", "id": request_id, "activations": activations}
    raise RequestError(f"unknown message type {kind!r}")


def serve_stream(spec: AdapterSpec, reader: IO[str], writer: IO[str]) -> None:
    """Answer requests until the stream closes. AdapterError aborts."""
    for line in reader:
        line = line.strip()
        if not line:
            continue
        request_id = None
        try:
            message = json.loads(line)
            request_id = message.get("id") if isinstance(message, dict) else None
            if not isinstance(message, dict):
                raise RequestError("requests must be JSON objects")
            reply = handle_request(spec, message)
        except (RequestError, json.JSONDecodeError, TypeError, ValueError) as exc:
            reply = {"type": "error", "id": request_id, "message": str(exc)}
        except AdapterError as exc:
            writer.write(json.dumps(
                {"type": "error", "id": request_id, "message": f"model failure: {exc}"}
            ) + "\n")
            writer.flush()
            raise
        writer.write(json.dumps(reply) + "\n")
        writer.flush()


def serve_stdio(spec: AdapterSpec) -> None:
    import sys

    serve_stream(spec, sys.stdin, sys.stdout)


def serve_tcp(spec: AdapterSpec, port: int, announce: IO[str] | None = None) -> None:
    """Serve one connection at a time; port 0 picks a free port (announced)."""
    server = socket.create_server(("127.0.0.1", port))
    if announce is not None:
        announce.write(f"{server.getsockname()[1]}\n")
        announce.flush()
    while True:
        conn, _ = server.accept()
        with conn:
            reader = conn.makefile("r", encoding="utf-8")
            writer = conn.makefile("w", encoding="utf-8")
            try:
                serve_stream(spec, reader, writer)
            except BrokenPipeError:
                continue
