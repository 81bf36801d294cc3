"""Generator-plus-subject evaluators and affine stimulus transforms.

An evaluator composes a generator (latent code -> stimulus) with a subject
system exposing named tappable layers, including the ``"input"`` pseudo-layer
whose activations are the flattened stimulus. Built-in evaluators are pure
and deterministic: the analytic Gaussian shell (known invariance manifold)
and a small fixed-weight CNN with a linear decoder.

Dtype contract shared with the wire protocol: codes are cast to float32 on
entry, activations are returned as float32; intermediate math that must match
across in-process and bridged execution is float64 over those float32 inputs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Callable, Mapping, Protocol, Sequence, runtime_checkable

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import ndimage
from scipy.special import expit

from .core import INPUT_LAYER, ActivationState, EvaluatorError, WIRE_DTYPE


@dataclass(frozen=True)
class LayerInfo:
    name: str
    dim: int


@dataclass(frozen=True)
class EvaluatorInfo:
    """Declared surface of an evaluator: code size, stimulus shape, layers."""

    code_dim: int
    stimulus_shape: tuple[int, ...]
    layers: tuple[LayerInfo, ...]
    deterministic: bool = True

    def __post_init__(self):
        object.__setattr__(self, "stimulus_shape", tuple(int(s) for s in self.stimulus_shape))
        object.__setattr__(self, "layers", tuple(self.layers))
        dims = self.layer_dims()
        if INPUT_LAYER not in dims:
            raise EvaluatorError("evaluator must declare an 'input' layer")
        if dims[INPUT_LAYER] != int(np.prod(self.stimulus_shape)):
            raise EvaluatorError("'input' layer dim must equal stimulus size")

    def layer_dims(self) -> dict[str, int]:
        return {layer.name: layer.dim for layer in self.layers}

    @property
    def is_image(self) -> bool:
        return len(self.stimulus_shape) == 3

    def to_json(self) -> dict:
        return {
            "code_dim": self.code_dim,
            "stimulus_shape": list(self.stimulus_shape),
            "layers": [{"name": l.name, "dim": l.dim} for l in self.layers],
            "deterministic": self.deterministic,
        }

    @classmethod
    def from_json(cls, obj: Mapping[str, Any]) -> "EvaluatorInfo":
        return cls(
            code_dim=int(obj["code_dim"]),
            stimulus_shape=tuple(obj["stimulus_shape"]),
            layers=tuple(LayerInfo(l["name"], int(l["dim"])) for l in obj["layers"]),
            deterministic=bool(obj["deterministic"]),
        )


class TapRequest:
    """Which layers to record, with an optional unit subset per layer.

    ``units[layer] is None`` means all units. Unit subsets must be sorted
    strictly ascending (the subsample-mask invariant).
    """

    def __init__(self, units: Mapping[str, Sequence[int] | np.ndarray | None]):
        self.units: dict[str, np.ndarray | None] = {}
        for layer, idx in units.items():
            if idx is None:
                self.units[layer] = None
                continue
            idx = np.asarray(idx, dtype=np.int64).reshape(-1)
            if idx.size > 1 and not np.all(np.diff(idx) > 0):
                raise EvaluatorError("unit indices must be sorted ascending")
            self.units[layer] = idx

    @property
    def layers(self) -> list[str]:
        return list(self.units)

    def validate_against(self, info: EvaluatorInfo) -> None:
        dims = info.layer_dims()
        for layer, idx in self.units.items():
            if layer not in dims:
                raise EvaluatorError(f"unknown layer {layer!r}")
            if idx is not None and idx.size and (idx[0] < 0 or idx[-1] >= dims[layer]):
                raise EvaluatorError(
                    f"unit indices out of range for layer {layer!r} (dim {dims[layer]})"
                )


@dataclass
class EvalResult:
    """Batch evaluation output: per-layer activation matrices, kept in input order."""

    activations: dict[str, np.ndarray]
    units: dict[str, np.ndarray | None]
    stimuli: np.ndarray | None = None

    def state(self, layer: str, i: int) -> ActivationState:
        return ActivationState(
            layer=layer,
            values=self.activations[layer][i],
            unit_indices=self.units.get(layer),
        )

    def candidate_states(self, i: int) -> dict[str, ActivationState]:
        return {layer: self.state(layer, i) for layer in self.activations}


@runtime_checkable
class Evaluator(Protocol):
    info: EvaluatorInfo

    def evaluate(self, codes: np.ndarray, taps: TapRequest) -> EvalResult: ...


class _SubjectEvaluator:
    """Shared plumbing: generator + per-layer subject forward, mask application."""

    info: EvaluatorInfo

    def _generate(self, codes: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _forward(self, stimuli: np.ndarray) -> dict[str, np.ndarray]:
        """Return {layer: (batch, dim) float32} for every non-input layer."""
        raise NotImplementedError

    def evaluate(self, codes: np.ndarray, taps: TapRequest) -> EvalResult:
        codes = np.asarray(codes)
        if codes.ndim != 2 or codes.shape[1] != self.info.code_dim:
            raise EvaluatorError(
                f"expected codes of shape (batch, {self.info.code_dim}), "
                f"got {codes.shape}"
            )
        if not np.all(np.isfinite(codes)):
            raise EvaluatorError("codes contain non-finite entries")
        taps.validate_against(self.info)
        stimuli = self._generate(codes.astype(WIRE_DTYPE))
        return self._tap(stimuli, taps, include_stimuli=True)

    def evaluate_stimuli(self, stimuli: np.ndarray, taps: TapRequest) -> EvalResult:
        """Tap the subject directly on raw stimuli, bypassing the generator."""
        stimuli = np.asarray(stimuli, dtype=WIRE_DTYPE)
        expected = self.info.stimulus_shape
        if stimuli.shape[1:] != expected:
            stimuli = stimuli.reshape((stimuli.shape[0], *expected))
        taps.validate_against(self.info)
        return self._tap(stimuli, taps, include_stimuli=False)

    def _tap(self, stimuli: np.ndarray, taps: TapRequest, include_stimuli: bool) -> EvalResult:
        needed = [l for l in taps.layers if l != INPUT_LAYER]
        layer_values = self._forward(stimuli) if needed else {}
        flat = stimuli.reshape(stimuli.shape[0], -1)
        out: dict[str, np.ndarray] = {}
        for layer, idx in taps.units.items():
            values = flat if layer == INPUT_LAYER else layer_values[layer]
            out[layer] = values if idx is None else values[:, idx]
        want_input = include_stimuli and INPUT_LAYER in taps.units
        return EvalResult(
            activations=out,
            units=dict(taps.units),
            stimuli=stimuli if want_input else None,
        )


class GaussianShellEvaluator(_SubjectEvaluator):
    """Identity generator with a single radially tuned readout unit.

    The readout responds exp(-(||x|| - r)^2 / (2 tau^2)), so the invariance
    manifold is exactly the sphere of radius r and every geometric quantity
    (peak response, minimal perturbation reaching a given response) has a
    closed form, which makes this the ground-truth oracle evaluator.
    """

    def __init__(self, dim: int = 10, r: float = 3.0, tau: float = 1.0):
        if r <= 0 or tau <= 0:
            raise EvaluatorError("r and tau must be positive")
        self.dim = int(dim)
        self.r = float(r)
        self.tau = float(tau)
        self.info = EvaluatorInfo(
            code_dim=self.dim,
            stimulus_shape=(self.dim,),
            layers=(LayerInfo(INPUT_LAYER, self.dim), LayerInfo("readout", 1)),
        )

    def _generate(self, codes: np.ndarray) -> np.ndarray:
        return codes

    def _forward(self, stimuli: np.ndarray) -> dict[str, np.ndarray]:
        radius = np.linalg.norm(stimuli.astype(np.float64), axis=1)
        a = np.exp(-((radius - self.r) ** 2) / (2.0 * self.tau**2))
        return {"readout": a.astype(WIRE_DTYPE)[:, None]}

    def peak_code(self) -> np.ndarray:
        """A deterministic maximally exciting code: r along the first axis."""
        code = np.zeros(self.dim)
        code[0] = self.r
        return code

    def activation_at_radius(self, radius: float) -> float:
        return float(np.exp(-((radius - self.r) ** 2) / (2.0 * self.tau**2)))

    def radial_perturbation_for(self, activation: float) -> float:
        """Smallest |delta radius| from the shell that yields this response."""
        if not (0.0 < activation < 1.0):
            raise ValueError("activation must be in (0, 1)")
        return self.tau * float(np.sqrt(-2.0 * np.log(activation)))


def _conv2d(x: np.ndarray, w: np.ndarray, b: np.ndarray, stride: int, pad: int) -> np.ndarray:
    """Valid-after-padding 2-D convolution, float32, NCHW weights (O, C, k, k)."""
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    k = w.shape[-1]
    win = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    out = np.einsum("bchwij,ocij->bohw", win, w, optimize=True)
    return (out + b[None, :, None, None]).astype(WIRE_DTYPE)


class TinyCnnEvaluator(_SubjectEvaluator):
    """Small fixed-weight convolutional subject with a linear latent decoder.

    The generator maps 64-dim codes through one linear layer and a logistic
    squash into [0, 1]; the subject is a three-stage CNN (layers "low", "mid",
    "high") with a 12-unit global-average-pool readout. All weights are drawn
    once from N(0, 1/fan_in) using PCG64(seed) in a fixed draw order, then
    frozen as float32, so activation fixtures are portable.
    """

    CODE_DIM = 64
    READOUT_UNITS = 12

    def __init__(self, seed: int = 0, stimulus_shape: tuple[int, int, int] = (3, 16, 16)):
        self.seed = int(seed)
        c, h, wdt = stimulus_shape
        pixels = c * h * wdt
        rng = np.random.Generator(np.random.PCG64(self.seed))

        def draw(shape, fan_in):
            return (rng.standard_normal(shape) / np.sqrt(fan_in)).astype(WIRE_DTYPE)

        self.dec_w = draw((pixels, self.CODE_DIM), self.CODE_DIM)
        self.dec_b = draw((pixels,), self.CODE_DIM)
        self.conv1_w = draw((8, c, 3, 3), c * 9)
        self.conv1_b = draw((8,), c * 9)
        self.conv2_w = draw((16, 8, 3, 3), 8 * 9)
        self.conv2_b = draw((16,), 8 * 9)
        self.conv3_w = draw((32, 16, 3, 3), 16 * 9)
        self.conv3_b = draw((32,), 16 * 9)
        self.readout_w = draw((self.READOUT_UNITS, 32), 32)
        self.readout_b = draw((self.READOUT_UNITS,), 32)

        def out_hw(size, k, s, p):
            return (size + 2 * p - k) // s + 1

        h1, w1 = out_hw(h, 3, 1, 0), out_hw(wdt, 3, 1, 0)
        h2, w2 = out_hw(h1, 3, 2, 1), out_hw(w1, 3, 2, 1)
        h3, w3 = out_hw(h2, 3, 2, 1), out_hw(w2, 3, 2, 1)
        self._shapes = {"low": (8, h1, w1), "mid": (16, h2, w2), "high": (32, h3, w3)}
        self.info = EvaluatorInfo(
            code_dim=self.CODE_DIM,
            stimulus_shape=stimulus_shape,
            layers=(
                LayerInfo(INPUT_LAYER, pixels),
                LayerInfo("low", int(np.prod(self._shapes["low"]))),
                LayerInfo("mid", int(np.prod(self._shapes["mid"]))),
                LayerInfo("high", int(np.prod(self._shapes["high"]))),
                LayerInfo("readout", self.READOUT_UNITS),
            ),
        )

    def _generate(self, codes: np.ndarray) -> np.ndarray:
        z = codes @ self.dec_w.T + self.dec_b
        pixels = expit(z.astype(WIRE_DTYPE))
        return pixels.reshape(codes.shape[0], *self.info.stimulus_shape).astype(WIRE_DTYPE)

    def _forward(self, stimuli: np.ndarray) -> dict[str, np.ndarray]:
        b = stimuli.shape[0]
        low = np.maximum(_conv2d(stimuli, self.conv1_w, self.conv1_b, 1, 0), 0.0)
        mid = np.maximum(_conv2d(low, self.conv2_w, self.conv2_b, 2, 1), 0.0)
        high = np.maximum(_conv2d(mid, self.conv3_w, self.conv3_b, 2, 1), 0.0)
        pooled = high.mean(axis=(2, 3))
        readout = (pooled @ self.readout_w.T + self.readout_b).astype(WIRE_DTYPE)
        return {
            "low": low.reshape(b, -1),
            "mid": mid.reshape(b, -1),
            "high": high.reshape(b, -1),
            "readout": readout,
        }


class FunctionEvaluator(_SubjectEvaluator):
    """Identity generator with an arbitrary vectorized readout function.

    ``fn`` maps a (batch, dim) float array to (batch,) or (batch, k)
    responses. Useful for analytic subjects (quadratic, linear) in tests and
    benchmarks.
    """

    def __init__(self, fn: Callable[[np.ndarray], np.ndarray], dim: int, readout_dim: int = 1):
        self.fn = fn
        self.info = EvaluatorInfo(
            code_dim=int(dim),
            stimulus_shape=(int(dim),),
            layers=(LayerInfo(INPUT_LAYER, int(dim)), LayerInfo("readout", int(readout_dim))),
        )

    def _generate(self, codes: np.ndarray) -> np.ndarray:
        return codes

    def _forward(self, stimuli: np.ndarray) -> dict[str, np.ndarray]:
        out = np.asarray(self.fn(stimuli.astype(np.float64)))
        if out.ndim == 1:
            out = out[:, None]
        return {"readout": out.astype(WIRE_DTYPE)}


# -- affine transforms for baseline sweeps -----------------------------------


@dataclass(frozen=True)
class Rotate:
    degrees: float


@dataclass(frozen=True)
class Translate:
    dx: float
    dy: float


@dataclass(frozen=True)
class Scale:
    factor: float


AffineOp = Rotate | Translate | Scale

#: Fill value for regions an affine transform pulls in from out of frame.
AFFINE_FILL = 0.5


def affine_transform(stimulus: np.ndarray, op: AffineOp) -> np.ndarray:
    """Apply one affine op to a (C, H, W) stimulus with bilinear interpolation.

    Out-of-frame regions are filled with mid-gray; the result keeps the input
    shape and is clamped back to [0, 1].
    """
    stimulus = np.asarray(stimulus)
    if stimulus.ndim != 3:
        raise EvaluatorError(
            f"affine transforms need an image-like (C, H, W) stimulus, got shape "
            f"{stimulus.shape}"
        )
    img = stimulus.astype(np.float64)
    channels = []
    for ch in img:
        if isinstance(op, Rotate):
            out = ndimage.rotate(
                ch, op.degrees, reshape=False, order=1, mode="constant",
                cval=AFFINE_FILL,
            )
        elif isinstance(op, Translate):
            # shift takes (row, col) offsets; dy moves rows, dx moves columns
            out = ndimage.shift(
                ch, (op.dy, op.dx), order=1, mode="constant", cval=AFFINE_FILL
            )
        elif isinstance(op, Scale):
            if op.factor <= 0:
                raise EvaluatorError(f"scale factor must be positive, got {op.factor}")
            center = (np.asarray(ch.shape) - 1) / 2.0
            matrix = np.diag([1.0 / op.factor, 1.0 / op.factor])
            offset = center - center / op.factor
            out = ndimage.affine_transform(
                ch, matrix, offset=offset, order=1, mode="constant", cval=AFFINE_FILL
            )
        else:
            raise EvaluatorError(f"unknown affine op {op!r}")
        channels.append(out)
    return np.clip(np.stack(channels), 0.0, 1.0).astype(stimulus.dtype)
