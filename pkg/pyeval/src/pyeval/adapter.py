"""Model-side adapter contract.

An :class:`AdapterSpec` wraps a user-supplied generator (latent codes to
stimuli) and subject (stimuli to named layer activations). Declared layer
dims are checked against runtime tensor sizes on the first evaluation;
a mismatch aborts the server rather than silently serving wrong shapes.

Dtype contract at the wire: codes arrive as float32, activations leave as
float32. The ``"input"`` layer is served by the adapter itself as the
flattened stimulus; user subjects only answer for their own layers.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

INPUT_LAYER = "input"


class AdapterError(Exception):
    """Model-side failure (bad declaration, shape mismatch, model crash)."""


@dataclass(frozen=True)
class LayerDecl:
    name: str
    dim: int


@dataclass
class AdapterSpec:
    """Everything the server needs to host one generator/subject pair.

    ``generator``: (batch, code_dim) float32 -> (batch, *stimulus_shape)
    ``subject``: (stimuli, requested layer names) -> {name: (batch, dim)}
    ``layers``: declared tappable layers, excluding "input" (added here)
    """

    code_dim: int
    stimulus_shape: tuple[int, ...]
    generator: Callable[[np.ndarray], np.ndarray]
    subject: Callable[[np.ndarray, Sequence[str]], Mapping[str, np.ndarray]]
    layers: tuple[LayerDecl, ...]
    deterministic: bool = True

    def __post_init__(self):
        self.stimulus_shape = tuple(int(s) for s in self.stimulus_shape)
        self.layers = tuple(self.layers)
        names = [l.name for l in self.layers]
        if INPUT_LAYER in names:
            raise AdapterError("'input' is served by the adapter; do not declare it")
        if len(set(names)) != len(names):
            raise AdapterError("duplicate layer names in declaration")

    @property
    def pixels(self) -> int:
        return int(np.prod(self.stimulus_shape))

    def layer_dims(self) -> dict[str, int]:
        dims = {INPUT_LAYER: self.pixels}
        dims.update({l.name: l.dim for l in self.layers})
        return dims

    def info_payload(self) -> dict:
        return {
            "code_dim": self.code_dim,
            "stimulus_shape": list(self.stimulus_shape),
            "layers": [{"name": INPUT_LAYER, "dim": self.pixels}]
            + [{"name": l.name, "dim": l.dim} for l in self.layers],
            "deterministic": self.deterministic,
        }

    def run(self, codes: np.ndarray, layer_names: Sequence[str]) -> dict[str, np.ndarray]:
        """Generator plus subject forward for the requested layers."""
        stimuli = np.asarray(self.generator(codes.astype(np.float32)))
        if stimuli.shape != (codes.shape[0], *self.stimulus_shape):
            raise AdapterError(
                f"generator produced shape {stimuli.shape}, declared "
                f"{(codes.shape[0], *self.stimulus_shape)}"
            )
        wanted = [n for n in layer_names if n != INPUT_LAYER]
        out: dict[str, np.ndarray] = {}
        if wanted:
            taps = self.subject(stimuli, wanted)
            dims = self.layer_dims()
            for name in wanted:
                if name not in taps:
                    raise AdapterError(f"subject returned no activations for {name!r}")
                arr = np.asarray(taps[name], dtype=np.float32).reshape(codes.shape[0], -1)
                if arr.shape[1] != dims[name]:
                    raise AdapterError(
                        f"layer {name!r} declared dim {dims[name]} but produced "
                        f"{arr.shape[1]} values"
                    )
                out[name] = arr
        if INPUT_LAYER in layer_names:
            out[INPUT_LAYER] = stimuli.reshape(codes.shape[0], -1).astype(np.float32)
        return out
