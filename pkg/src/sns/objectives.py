"""Stretch and squeeze losses and their wiring into run modes.

Both losses are raw Euclidean distances between an activation state and its
reference (stretch carries a negative sign so both objectives minimize); no
normalization happens here. A scalar target unit uses the 1-D norm |delta|.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .core import ActivationState, Mode, ObjectiveScores, ReferencePair


def _check_compatible(state: ActivationState, ref: ActivationState) -> None:
    if state.layer != ref.layer:
        raise ValueError(f"layer mismatch: {state.layer!r} vs {ref.layer!r}")
    if len(state) != len(ref):
        raise ValueError(
            f"length mismatch at {state.layer!r}: {len(state)} vs {len(ref)}"
        )
    a, b = state.unit_indices, ref.unit_indices
    if (a is None) != (b is None) or (a is not None and not np.array_equal(a, b)):
        raise ValueError(f"subsample mask mismatch at layer {state.layer!r}")


def distance(state: ActivationState, ref: ActivationState) -> float:
    """Euclidean distance between a state and its reference (float64 math)."""
    _check_compatible(state, ref)
    diff = state.values.astype(np.float64) - ref.values.astype(np.float64)
    return float(np.linalg.norm(diff))


def stretch_loss(state: ActivationState, ref: ActivationState) -> float:
    """Negated Euclidean distance from the reference state (always <= 0)."""
    return -distance(state, ref)


def squeeze_loss(state: ActivationState, ref: ActivationState) -> float:
    """Euclidean distance from the reference state (always >= 0)."""
    return distance(state, ref)


def activation_reduction_pct(a: float, a_ref: float) -> float:
    """Percentage drop of a response relative to its reference.

    May exceed 100 when the response goes negative (readout logits).
    """
    if a_ref == 0:
        raise ValueError("activation reduction is undefined for a_ref = 0")
    return 100.0 * (a_ref - a) / a_ref


def restrict_to_unit(state: ActivationState, unit: int) -> ActivationState:
    """Scalar view of one unit of a layer state, honoring any existing mask."""
    if state.unit_indices is not None:
        pos = np.flatnonzero(state.unit_indices == unit)
        if pos.size == 0:
            raise ValueError(f"unit {unit} absent from mask at layer {state.layer!r}")
        value = state.values[pos[0]]
    else:
        if not (0 <= unit < len(state)):
            raise ValueError(f"unit index {unit} out of range for layer {state.layer!r}")
        value = state.values[unit]
    return ActivationState(
        layer=state.layer,
        values=np.asarray([value]),
        unit_indices=np.asarray([unit], dtype=np.int64),
    )


@dataclass(frozen=True)
class ObjectiveSpec:
    """Which layer (and optionally which single unit) each objective reads.

    Invariance stretches the distance layer and squeezes the target unit;
    adversarial swaps the two sides. Exactly one side carries a unit, and
    that unit's raw response is recorded with every score.
    """

    stretch_layer: str
    squeeze_layer: str
    reference: ReferencePair
    stretch_unit: int | None = None
    squeeze_unit: int | None = None

    def __post_init__(self):
        if (self.stretch_unit is None) == (self.squeeze_unit is None):
            raise ValueError("exactly one objective side must target a single unit")
        for layer in (self.stretch_layer, self.squeeze_layer):
            self.reference.state_for(layer)  # raises KeyError when absent

    @classmethod
    def for_mode(
        cls, mode: Mode, distance_layer: str, target_layer: str, target_unit: int,
        reference: ReferencePair,
    ) -> "ObjectiveSpec":
        if mode is Mode.INVARIANCE:
            return cls(
                stretch_layer=distance_layer,
                squeeze_layer=target_layer,
                squeeze_unit=target_unit,
                reference=reference,
            )
        if mode is Mode.ADVERSARIAL:
            return cls(
                stretch_layer=target_layer,
                stretch_unit=target_unit,
                squeeze_layer=distance_layer,
                reference=reference,
            )
        raise ValueError(f"no objective wiring for mode {mode!r}")

    @property
    def target_layer(self) -> str:
        return self.stretch_layer if self.stretch_unit is not None else self.squeeze_layer

    @property
    def target_unit(self) -> int:
        unit = self.stretch_unit if self.stretch_unit is not None else self.squeeze_unit
        assert unit is not None
        return unit


def _side_states(
    spec: ObjectiveSpec, taps: Mapping[str, ActivationState], layer: str,
    unit: int | None,
) -> tuple[ActivationState, ActivationState]:
    if layer not in taps:
        raise ValueError(f"candidate taps missing layer {layer!r}")
    state = taps[layer]
    ref = spec.reference.state_for(layer)
    if unit is not None:
        state = restrict_to_unit(state, unit)
        ref = ref if len(ref) == 1 else restrict_to_unit(ref, unit)
    return state, ref


def score_candidate(
    spec: ObjectiveSpec, taps: Mapping[str, ActivationState]
) -> ObjectiveScores:
    """Score one candidate's tapped activations against the reference pair."""
    s_state, s_ref = _side_states(spec, taps, spec.stretch_layer, spec.stretch_unit)
    q_state, q_ref = _side_states(spec, taps, spec.squeeze_layer, spec.squeeze_unit)
    unit_state = s_state if spec.stretch_unit is not None else q_state
    return ObjectiveScores(
        stretch=stretch_loss(s_state, s_ref),
        squeeze=squeeze_loss(q_state, q_ref),
        target_activation=float(unit_state.values[0]),
    )


def score_batch(
    spec: ObjectiveSpec,
    activations: Mapping[str, np.ndarray],
    unit_column: Mapping[str, int] | None = None,
) -> list[ObjectiveScores]:
    """Vectorized scoring of a whole generation.

    ``activations`` maps layer name to a (population, d) array as returned by
    an evaluator; a unit-targeted side must be the matching 1-column tap (or
    ``unit_column`` gives the column holding the target unit). Equivalent to
    calling :func:`score_candidate` per candidate.
    """
    def side(layer: str, unit: int | None) -> tuple[np.ndarray, np.ndarray]:
        arr = np.asarray(activations[layer], dtype=np.float64)
        ref = spec.reference.state_for(layer).values.astype(np.float64)
        if unit is not None and arr.shape[1] != 1:
            col = unit if unit_column is None else unit_column[layer]
            arr = arr[:, [col]]
        if unit is not None and ref.shape[0] != 1:
            ref = ref[[unit]]
        if arr.shape[1] != ref.shape[0]:
            raise ValueError(f"width mismatch at layer {layer!r}")
        return np.linalg.norm(arr - ref[None, :], axis=1), arr

    stretch_norm, stretch_vals = side(spec.stretch_layer, spec.stretch_unit)
    squeeze_norm, squeeze_vals = side(spec.squeeze_layer, spec.squeeze_unit)
    unit_vals = stretch_vals if spec.stretch_unit is not None else squeeze_vals
    return [
        ObjectiveScores(
            stretch=-float(stretch_norm[i]),
            squeeze=float(squeeze_norm[i]),
            target_activation=float(unit_vals[i, 0]),
        )
        for i in range(len(stretch_norm))
    ]
