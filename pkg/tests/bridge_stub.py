"""Minimal wire-protocol server hosting a built-in evaluator, for bridge tests.

One JSON document per line, stdio or TCP. Fault flags simulate misbehaving
servers for the client's error paths.
"""

from __future__ import annotations

import argparse
import json
import socket
import sys

import numpy as np

from sns.cli import make_evaluator
from sns.evaluators import TapRequest

PROTOCOL_VERSION = 1


def handle(evaluator, msg: dict, fault: str | None) -> dict | None:
    if msg["type"] == "hello":
        reply = dict(type="info", protocol=PROTOCOL_VERSION, **evaluator.info.to_json())
        if fault == "no-input":
            reply["layers"] = [l for l in reply["layers"] if l["name"] != "input"]
        if fault == "protocol-2":
            reply["protocol"] = 2
        return reply
    if msg["type"] == "eval":
        codes = np.asarray(msg["codes"], dtype=np.float32)
        units = {
            tap["layer"]: None if tap["units"] == "all" else np.asarray(tap["units"])
            for tap in msg["taps"]
        }
        result = evaluator.evaluate(codes, TapRequest(units))
        if fault == "garbage":
            return None  # caller emits a non-JSON line instead
        return {
            "type": "result",
            "id": msg["id"] + (1 if fault == "bad-id" else 0),
            "activations": {
                layer: [[float(v) for v in row] for row in arr]
                for layer, arr in result.activations.items()
            },
        }
    return {"type": "error", "id": msg.get("id"), "message": "unknown type"}


def serve_lines(evaluator, reader, writer, fault: str | None) -> None:
    die_after = None
    if fault and fault.startswith("die-after:"):
        die_after = int(fault.split(":", 1)[1])
        fault = None
    evals = 0
    for line in reader:
        line = line.strip()
        if not line:
            continue
        msg = json.loads(line)
        if msg.get("type") == "eval":
            evals += 1
            if die_after is not None and evals > die_after:
                raise SystemExit(3)  # simulate a server crash mid-run
        reply = handle(evaluator, msg, fault)
        writer.write(("this is not json" if reply is None else json.dumps(reply)) + "\n")
        writer.flush()


def main() -> None:
    parser = argparse.ArgumentParser()
    parser.add_argument("--evaluator", default="shell:dim=10,r=3,tau=0.5")
    parser.add_argument("--fault", default=None)
    parser.add_argument("--transport", default="stdio", choices=["stdio", "tcp"])
    args = parser.parse_args()
    evaluator = make_evaluator(args.evaluator)
    if args.transport == "stdio":
        serve_lines(evaluator, sys.stdin, sys.stdout, args.fault)
        return
    server = socket.create_server(("127.0.0.1", 0))
    print(server.getsockname()[1], flush=True)  # announce the chosen port
    conn, _ = server.accept()
    with conn:
        reader = conn.makefile("r", encoding="utf-8")
        writer = conn.makefile("w", encoding="utf-8")
        serve_lines(evaluator, reader, writer, args.fault)


if __name__ == "__main__":
    main()
