"""Wire-protocol client for evaluators hosted by external processes.

Transport is newline-delimited JSON (one UTF-8 document per line) over either
a spawned subprocess's stdio or a TCP socket. Requests are strictly
sequential: one outstanding request per connection, ids must echo. Protocol
failures are fatal; a crashed or restarted server cannot be retried without
silently breaking run determinism.

Message shapes (protocol version 1):

    -> {"type": "hello", "protocol": 1}
    <- {"type": "info", "code_dim": n, "stimulus_shape": [...],
        "layers": [{"name": ..., "dim": ...}], "deterministic": bool}
    -> {"type": "eval", "id": k, "codes": [[...]],
        "taps": [{"layer": ..., "units": [...] | "all"}]}
    <- {"type": "result", "id": k, "activations": {layer: [[...]]}}

Numbers are decimal floats carrying exact float32 values, so a deterministic
server produces bit-identical activations over the wire and in process.
"""

from __future__ import annotations

import json
import select
import socket
import subprocess
from dataclasses import dataclass

import numpy as np

from .core import BridgeError, EvaluatorError, INPUT_LAYER, WIRE_DTYPE
from .evaluators import EvalResult, EvaluatorInfo, TapRequest

PROTOCOL_VERSION = 1


@dataclass(frozen=True)
class SubprocessStdio:
    argv: tuple[str, ...]


@dataclass(frozen=True)
class Tcp:
    host: str
    port: int


@dataclass(frozen=True)
class BridgeConfig:
    transport: SubprocessStdio | Tcp
    request_timeout: float = 120.0
    max_batch: int = 128

    def __post_init__(self):
        if self.request_timeout <= 0:
            raise BridgeError("request_timeout must be positive")
        if self.max_batch < 1:
            raise BridgeError("max_batch must be >= 1")


class _StdioChannel:
    def __init__(self, argv, timeout: float):
        self.timeout = timeout
        try:
            self.proc = subprocess.Popen(
                list(argv),
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                text=True,
                bufsize=1,
            )
        except OSError as exc:
            raise BridgeError(f"failed to launch evaluator process: {exc}") from exc

    def send_line(self, line: str) -> None:
        assert self.proc.stdin is not None
        try:
            self.proc.stdin.write(line + "\n")
            self.proc.stdin.flush()
        except (BrokenPipeError, ValueError) as exc:
            raise BridgeError(f"evaluator process closed its stdin: {exc}") from exc

    def recv_line(self) -> str:
        assert self.proc.stdout is not None
        ready, _, _ = select.select([self.proc.stdout], [], [], self.timeout)
        if not ready:
            raise BridgeError(f"evaluator timed out after {self.timeout} s")
        line = self.proc.stdout.readline()
        if line == "":
            raise BridgeError("evaluator process closed its stdout")
        return line

    def close(self) -> None:
        if self.proc.poll() is None:
            if self.proc.stdin is not None:
                self.proc.stdin.close()
            try:
                self.proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self.proc.kill()
                self.proc.wait()


class _TcpChannel:
    def __init__(self, host: str, port: int, timeout: float):
        try:
            self.sock = socket.create_connection((host, port), timeout=timeout)
        except OSError as exc:
            raise BridgeError(f"cannot connect to {host}:{port}: {exc}") from exc
        self.sock.settimeout(timeout)
        self.reader = self.sock.makefile("r", encoding="utf-8", newline="\n")

    def send_line(self, line: str) -> None:
        try:
            self.sock.sendall((line + "\n").encode("utf-8"))
        except OSError as exc:
            raise BridgeError(f"send failed: {exc}") from exc

    def recv_line(self) -> str:
        try:
            line = self.reader.readline()
        except (OSError, TimeoutError) as exc:
            raise BridgeError(f"evaluator timed out or dropped: {exc}") from exc
        if line == "":
            raise BridgeError("evaluator closed the connection")
        return line

    def close(self) -> None:
        try:
            self.reader.close()
            self.sock.close()
        except OSError:
            pass


def _exact_floats(arr: np.ndarray) -> list[list[float]]:
    # float32 -> Python float is exact; json emits a shortest round-trip
    # decimal, so the receiving side recovers the identical float32.
    return [[float(v) for v in row] for row in np.asarray(arr, dtype=WIRE_DTYPE)]


class BridgedEvaluator:
    """Evaluator backed by an external process speaking the wire protocol.

    Satisfies the same interface as in-process evaluators (``info`` plus
    ``evaluate``); construct via :meth:`spawn` or :meth:`connect_tcp`, or from
    a :class:`BridgeConfig`. One connection serves one run; close it when the
    run ends (context-manager form does).
    """

    def __init__(self, config: BridgeConfig):
        self.config = config
        if isinstance(config.transport, SubprocessStdio):
            self._channel = _StdioChannel(config.transport.argv, config.request_timeout)
        elif isinstance(config.transport, Tcp):
            self._channel = _TcpChannel(
                config.transport.host, config.transport.port, config.request_timeout
            )
        else:
            raise BridgeError(f"unknown transport {config.transport!r}")
        self._next_id = 0
        try:
            self.info = self._handshake()
        except BridgeError:
            self.close()
            raise

    @classmethod
    def spawn(cls, argv, **kwargs) -> "BridgedEvaluator":
        return cls(BridgeConfig(transport=SubprocessStdio(tuple(argv)), **kwargs))

    @classmethod
    def connect_tcp(cls, host: str, port: int, **kwargs) -> "BridgedEvaluator":
        return cls(BridgeConfig(transport=Tcp(host, port), **kwargs))

    def __enter__(self) -> "BridgedEvaluator":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def close(self) -> None:
        self._channel.close()

    # -- protocol ------------------------------------------------------------

    def _roundtrip(self, message: dict) -> dict:
        self._channel.send_line(json.dumps(message))
        line = self._channel.recv_line()
        try:
            reply = json.loads(line)
        except json.JSONDecodeError as exc:
            raise BridgeError(f"malformed JSON from evaluator: {exc}") from exc
        if not isinstance(reply, dict):
            raise BridgeError(f"expected a JSON object, got {type(reply).__name__}")
        if reply.get("type") == "error":
            raise BridgeError(f"evaluator error: {reply.get('message', '<no message>')}")
        return reply

    def _handshake(self) -> EvaluatorInfo:
        reply = self._roundtrip({"type": "hello", "protocol": PROTOCOL_VERSION})
        if reply.get("type") != "info":
            raise BridgeError(f"expected info reply, got type {reply.get('type')!r}")
        if "protocol" in reply and reply["protocol"] != PROTOCOL_VERSION:
            raise BridgeError(
                f"protocol version mismatch: server speaks {reply['protocol']}, "
                f"client speaks {PROTOCOL_VERSION}"
            )
        layer_names = {l.get("name") for l in reply.get("layers", []) if isinstance(l, dict)}
        if INPUT_LAYER not in layer_names:
            raise BridgeError("no input layer declared by evaluator")
        try:
            info = EvaluatorInfo.from_json(reply)
        except (KeyError, TypeError, ValueError, EvaluatorError) as exc:
            raise BridgeError(f"malformed info reply: {exc}") from exc
        return info

    def evaluate(self, codes: np.ndarray, taps: TapRequest) -> EvalResult:
        codes = np.asarray(codes, dtype=WIRE_DTYPE)
        if codes.ndim != 2 or codes.shape[1] != self.info.code_dim:
            raise BridgeError(
                f"expected codes of shape (batch, {self.info.code_dim}), "
                f"got {codes.shape}"
            )
        taps.validate_against(self.info)

        chunks: list[dict[str, np.ndarray]] = []
        for start in range(0, codes.shape[0], self.config.max_batch):
            chunks.append(self._eval_chunk(codes[start : start + self.config.max_batch], taps))

        activations = {
            layer: np.concatenate([c[layer] for c in chunks], axis=0)
            for layer in taps.units
        }
        stimuli = None
        if INPUT_LAYER in taps.units and taps.units[INPUT_LAYER] is None:
            stimuli = activations[INPUT_LAYER].reshape(
                codes.shape[0], *self.info.stimulus_shape
            )
        return EvalResult(activations=activations, units=dict(taps.units), stimuli=stimuli)

    def _eval_chunk(self, codes: np.ndarray, taps: TapRequest) -> dict[str, np.ndarray]:
        request_id = self._next_id
        self._next_id += 1
        message = {
            "type": "eval",
            "id": request_id,
            "codes": _exact_floats(codes),
            "taps": [
                {
                    "layer": layer,
                    "units": "all" if idx is None else [int(i) for i in idx],
                }
                for layer, idx in taps.units.items()
            ],
        }
        reply = self._roundtrip(message)
        if reply.get("type") != "result":
            raise BridgeError(f"expected result reply, got type {reply.get('type')!r}")
        if reply.get("id") != request_id:
            raise BridgeError(
                f"response id {reply.get('id')} does not echo request id {request_id}"
            )
        payload = reply.get("activations")
        if not isinstance(payload, dict):
            raise BridgeError("result reply carries no activations object")

        dims = self.info.layer_dims()
        out: dict[str, np.ndarray] = {}
        for layer, idx in taps.units.items():
            if layer not in payload:
                raise BridgeError(f"result missing activations for layer {layer!r}")
            arr = np.asarray(payload[layer], dtype=WIRE_DTYPE)
            expected = dims[layer] if idx is None else int(idx.size)
            if arr.shape != (codes.shape[0], expected):
                raise BridgeError(
                    f"activation shape {arr.shape} for layer {layer!r}, expected "
                    f"({codes.shape[0]}, {expected})"
                )
            if not np.all(np.isfinite(arr)):
                raise BridgeError(f"non-finite activations for layer {layer!r}")
            out[layer] = arr
        return out
