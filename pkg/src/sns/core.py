"""Shared domain types and validation for the stretch/squeeze search engine.

Conventions used across the package:

* Latent codes and code batches are plain numpy float arrays. In memory they
  are float64; at every interchange boundary (evaluator calls, wire protocol,
  disk) they are cast to float32. Optimizer internals stay float64 because
  covariance adaptation is sensitive to rounding.
* Activations are float32 vectors wrapped in :class:`ActivationState`, which
  carries the layer name and an optional subsample mask.
* The input stage of a subject system is modeled as a regular tappable layer
  named ``"input"``; its activations are the flattened stimulus.
* Layer names are opaque strings declared by the evaluator; nothing in this
  package hard-codes a particular architecture.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Any, Mapping, Sequence

import numpy as np

INPUT_LAYER = "input"

#: Interchange dtype for codes, activations and persisted tensors.
WIRE_DTYPE = np.float32


class SnsError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(SnsError):
    """Invalid or inconsistent run configuration."""

    def __init__(self, problems: Sequence[str]):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class EvaluatorError(SnsError):
    """An evaluator rejected a request or failed mid-evaluation."""


class OptimizerError(SnsError):
    """Numerical failure inside the evolution strategy."""


class BridgeError(EvaluatorError):
    """Wire-protocol failure while talking to an external evaluator."""


class Mode(str, enum.Enum):
    INVARIANCE = "invariance"
    ADVERSARIAL = "adversarial"
    MEI = "mei"


class SelectionStrategy(str, enum.Enum):
    """Within-front ordering used to rank equally non-dominated candidates."""

    RANDOM = "random"
    ACTIVATION_PROXIMITY = "activation_proximity"


class ReferenceSource(str, enum.Enum):
    MEI = "mei"
    NATURAL = "natural"


def _array_eq(a, b) -> bool:
    if a is None or b is None:
        return a is b
    return np.array_equal(np.asarray(a), np.asarray(b))


def as_code(values, dim: int | None = None) -> np.ndarray:
    """Validate a single latent code: 1-D, finite, optionally of length ``dim``."""
    code = np.asarray(values, dtype=np.float64)
    if code.ndim != 1:
        raise ValueError(f"latent code must be 1-D, got shape {code.shape}")
    if dim is not None and code.shape[0] != dim:
        raise ValueError(f"latent code has length {code.shape[0]}, expected {dim}")
    if not np.all(np.isfinite(code)):
        raise ValueError("latent code contains non-finite entries")
    return code


def as_code_batch(values, dim: int | None = None) -> np.ndarray:
    """Validate a code batch: 2-D (population, dim), finite."""
    batch = np.asarray(values, dtype=np.float64)
    if batch.ndim != 2:
        raise ValueError(f"code batch must be 2-D, got shape {batch.shape}")
    if dim is not None and batch.shape[1] != dim:
        raise ValueError(f"code batch width {batch.shape[1]}, expected {dim}")
    if not np.all(np.isfinite(batch)):
        raise ValueError("code batch contains non-finite entries")
    return batch


@dataclass(frozen=True, eq=False)
class ActivationState:
    """Activations tapped at one named layer for one candidate.

    ``unit_indices``, when present, is the subsample mask: sorted, strictly
    increasing indices into the full layer, one per value.
    """

    layer: str
    values: np.ndarray
    unit_indices: np.ndarray | None = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=WIRE_DTYPE).reshape(-1)
        object.__setattr__(self, "values", values)
        if not np.all(np.isfinite(values)):
            raise ValueError(f"non-finite activations at layer {self.layer!r}")
        if self.unit_indices is not None:
            idx = np.asarray(self.unit_indices, dtype=np.int64).reshape(-1)
            object.__setattr__(self, "unit_indices", idx)
            if idx.shape[0] != values.shape[0]:
                raise ValueError("unit_indices length must match values length")
            if idx.shape[0] > 1 and not np.all(np.diff(idx) > 0):
                raise ValueError("unit indices must be sorted ascending")

    def __len__(self) -> int:
        return int(self.values.shape[0])

    def __eq__(self, other) -> bool:
        if not isinstance(other, ActivationState):
            return NotImplemented
        return (
            self.layer == other.layer
            and _array_eq(self.values, other.values)
            and _array_eq(self.unit_indices, other.unit_indices)
        )

    def to_json(self) -> dict:
        return {
            "layer": self.layer,
            "values": [float(v) for v in self.values],
            "unit_indices": None
            if self.unit_indices is None
            else [int(i) for i in self.unit_indices],
        }

    @classmethod
    def from_json(cls, obj: Mapping[str, Any]) -> "ActivationState":
        return cls(
            layer=obj["layer"],
            values=np.asarray(obj["values"], dtype=WIRE_DTYPE),
            unit_indices=None
            if obj.get("unit_indices") is None
            else np.asarray(obj["unit_indices"], dtype=np.int64),
        )


@dataclass(frozen=True, eq=False)
class Stimulus:
    """A generated stimulus: flat float values plus their logical shape.

    Image-like stimuli (3-D shape) hold intensities in [0, 1]; abstract
    vector stimuli carry arbitrary finite reals.
    """

    values: np.ndarray
    shape: tuple[int, ...]

    def __post_init__(self):
        values = np.asarray(self.values, dtype=WIRE_DTYPE).reshape(-1)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "shape", tuple(int(s) for s in self.shape))
        if int(np.prod(self.shape)) != values.shape[0]:
            raise ValueError(
                f"shape {self.shape} does not match {values.shape[0]} values"
            )
        if not np.all(np.isfinite(values)):
            raise ValueError("stimulus contains non-finite values")
        if self.is_image and (values.min() < 0.0 or values.max() > 1.0):
            raise ValueError("image-like stimulus values must lie in [0, 1]")

    @property
    def is_image(self) -> bool:
        return len(self.shape) == 3

    def as_array(self) -> np.ndarray:
        return self.values.reshape(self.shape)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Stimulus):
            return NotImplemented
        return self.shape == other.shape and _array_eq(self.values, other.values)

    def to_json(self) -> dict:
        return {"values": [float(v) for v in self.values], "shape": list(self.shape)}

    @classmethod
    def from_json(cls, obj: Mapping[str, Any]) -> "Stimulus":
        return cls(values=np.asarray(obj["values"]), shape=tuple(obj["shape"]))


@dataclass(frozen=True, eq=False)
class ReferencePair:
    """Reference states derived from one stimulus by a single evaluator pass.

    ``distance_state`` lives at the layer where stimulus-level distance is
    measured (possibly ``"input"``); ``target_state`` is scalar-valued, the
    reference response of the target unit.
    """

    distance_state: ActivationState
    target_state: ActivationState
    source: ReferenceSource
    code: np.ndarray | None = None

    def __post_init__(self):
        if len(self.target_state) != 1:
            raise ValueError("target_state must be scalar (one unit)")
        if self.code is not None:
            object.__setattr__(self, "code", as_code(self.code))

    @property
    def target_activation(self) -> float:
        return float(self.target_state.values[0])

    def state_for(self, layer: str) -> ActivationState:
        if layer == self.distance_state.layer:
            return self.distance_state
        if layer == self.target_state.layer:
            return self.target_state
        raise KeyError(f"reference holds no state for layer {layer!r}")

    def __eq__(self, other) -> bool:
        if not isinstance(other, ReferencePair):
            return NotImplemented
        return (
            self.distance_state == other.distance_state
            and self.target_state == other.target_state
            and self.source == other.source
            and _array_eq(self.code, other.code)
        )

    def to_json(self) -> dict:
        return {
            "distance_state": self.distance_state.to_json(),
            "target_state": self.target_state.to_json(),
            "source": self.source.value,
            "code": None if self.code is None else [float(v) for v in self.code],
        }

    @classmethod
    def from_json(cls, obj: Mapping[str, Any]) -> "ReferencePair":
        return cls(
            distance_state=ActivationState.from_json(obj["distance_state"]),
            target_state=ActivationState.from_json(obj["target_state"]),
            source=ReferenceSource(obj["source"]),
            code=None if obj.get("code") is None else np.asarray(obj["code"]),
        )


@dataclass(frozen=True)
class ObjectiveScores:
    """One candidate's (stretch, squeeze) loss pair plus its raw unit response.

    Stretch is a negated Euclidean norm, so it is always <= 0; squeeze is a
    plain norm, always >= 0.
    """

    stretch: float
    squeeze: float
    target_activation: float

    def __post_init__(self):
        for name in ("stretch", "squeeze", "target_activation"):
            v = getattr(self, name)
            if not math.isfinite(v):
                raise ValueError(f"{name} must be finite, got {v}")
        if self.stretch > 0.0:
            raise ValueError(f"stretch loss must be <= 0, got {self.stretch}")
        if self.squeeze < 0.0:
            raise ValueError(f"squeeze loss must be >= 0, got {self.squeeze}")

    def to_json(self) -> dict:
        return {
            "stretch": self.stretch,
            "squeeze": self.squeeze,
            "target_activation": self.target_activation,
        }

    @classmethod
    def from_json(cls, obj: Mapping[str, Any]) -> "ObjectiveScores":
        return cls(
            stretch=float(obj["stretch"]),
            squeeze=float(obj["squeeze"]),
            target_activation=float(obj["target_activation"]),
        )


@dataclass(frozen=True, eq=False)
class ParetoRanking:
    """Front assignment plus the total best-first order for one generation."""

    front_of: np.ndarray
    order: np.ndarray
    strategy: SelectionStrategy

    def __post_init__(self):
        front_of = np.asarray(self.front_of, dtype=np.int64)
        order = np.asarray(self.order, dtype=np.int64)
        object.__setattr__(self, "front_of", front_of)
        object.__setattr__(self, "order", order)
        n = front_of.shape[0]
        if sorted(order.tolist()) != list(range(n)):
            raise ValueError("order must be a permutation of candidate indices")
        fronts_along_order = front_of[order]
        if n > 1 and np.any(np.diff(fronts_along_order) < 0):
            raise ValueError("lower fronts must precede higher fronts in order")

    def __eq__(self, other) -> bool:
        if not isinstance(other, ParetoRanking):
            return NotImplemented
        return (
            _array_eq(self.front_of, other.front_of)
            and _array_eq(self.order, other.order)
            and self.strategy == other.strategy
        )

    def to_json(self) -> dict:
        return {
            "front_of": [int(f) for f in self.front_of],
            "order": [int(i) for i in self.order],
            "strategy": self.strategy.value,
        }

    @classmethod
    def from_json(cls, obj: Mapping[str, Any]) -> "ParetoRanking":
        return cls(
            front_of=np.asarray(obj["front_of"], dtype=np.int64),
            order=np.asarray(obj["order"], dtype=np.int64),
            strategy=SelectionStrategy(obj["strategy"]),
        )


@dataclass(frozen=True)
class SubsampleSpec:
    """Random subset of a layer's units over which distances are computed."""

    layer: str
    count: int
    seed: int

    def to_json(self) -> dict:
        return {"layer": self.layer, "count": self.count, "seed": self.seed}

    @classmethod
    def from_json(cls, obj: Mapping[str, Any]) -> "SubsampleSpec":
        return cls(layer=obj["layer"], count=int(obj["count"]), seed=int(obj["seed"]))


DEFAULT_POPULATION_SIZE = 50
DEFAULT_SIGMA0 = 1.0
DEFAULT_MAX_ITERS = 500
DEFAULT_STOP_FRACTION = 0.9


@dataclass(frozen=True)
class RunConfig:
    """Resolved configuration of one optimization run.

    ``distance_layer`` names the layer where stimulus-level distance is
    measured (often ``"input"``); ``target_layer``/``target_unit`` identify
    the unit whose response is preserved or suppressed. In MEI mode only the
    target side is used.
    """

    mode: Mode
    target_layer: str
    target_unit: int
    distance_layer: str = INPUT_LAYER
    population_size: int = DEFAULT_POPULATION_SIZE
    sigma0: float = DEFAULT_SIGMA0
    max_iters: int = DEFAULT_MAX_ITERS
    stop_fraction: float = DEFAULT_STOP_FRACTION
    early_stop: bool = False
    max_natural_response: float | None = None
    min_natural_response: float | None = None
    subsample: SubsampleSpec | None = None
    seed: int = 0

    def to_json(self) -> dict:
        return {
            "mode": self.mode.value,
            "target_layer": self.target_layer,
            "target_unit": self.target_unit,
            "distance_layer": self.distance_layer,
            "population_size": self.population_size,
            "sigma0": self.sigma0,
            "max_iters": self.max_iters,
            "stop_fraction": self.stop_fraction,
            "early_stop": self.early_stop,
            "max_natural_response": self.max_natural_response,
            "min_natural_response": self.min_natural_response,
            "subsample": None if self.subsample is None else self.subsample.to_json(),
            "seed": self.seed,
        }

    @classmethod
    def from_json(cls, obj: Mapping[str, Any]) -> "RunConfig":
        """Build a config from a JSON mapping, filling absent fields with defaults."""
        known = {
            "mode": Mode(obj["mode"]),
            "target_layer": obj["target_layer"],
            "target_unit": int(obj["target_unit"]),
        }
        for key, default in (
            ("distance_layer", INPUT_LAYER),
            ("population_size", DEFAULT_POPULATION_SIZE),
            ("sigma0", DEFAULT_SIGMA0),
            ("max_iters", DEFAULT_MAX_ITERS),
            ("stop_fraction", DEFAULT_STOP_FRACTION),
            ("early_stop", False),
            ("max_natural_response", None),
            ("min_natural_response", None),
            ("seed", 0),
        ):
            known[key] = obj[key] if obj.get(key) is not None else default
        sub = obj.get("subsample")
        known["subsample"] = None if sub is None else SubsampleSpec.from_json(sub)
        return cls(**known)


def validate_config(config: RunConfig, evaluator_info=None) -> RunConfig:
    """Check a run configuration for consistency and return it unchanged.

    With ``evaluator_info`` (an ``evaluators.EvaluatorInfo``), also checks
    layer names, unit range and subsample bounds against the declared
    evaluator surface. Raises :class:`ConfigError` listing every problem.
    """
    problems: list[str] = []
    if config.population_size <= 1:
        problems.append(f"population_size must be >= 2, got {config.population_size}")
    if config.sigma0 <= 0:
        problems.append(f"sigma0 must be positive, got {config.sigma0}")
    if config.max_iters < 0:
        problems.append(f"max_iters must be >= 0, got {config.max_iters}")
    if not (0.0 < config.stop_fraction <= 1.0):
        problems.append(f"stop_fraction must be in (0, 1], got {config.stop_fraction}")
    if config.target_unit < 0:
        problems.append(f"target_unit must be >= 0, got {config.target_unit}")

    if config.mode is not Mode.MEI and config.distance_layer == config.target_layer:
        problems.append(
            "distance_layer and target_layer must differ outside MEI mode"
        )
    if config.early_stop:
        if config.mode is Mode.INVARIANCE and config.max_natural_response is None:
            problems.append("missing max_natural_response for invariance early stop")
        if config.mode is Mode.ADVERSARIAL and config.min_natural_response is None:
            problems.append("missing min_natural_response for adversarial early stop")
        if config.mode is Mode.MEI:
            problems.append("early stopping is not defined for MEI runs")
    if config.subsample is not None and config.subsample.count <= 0:
        problems.append(f"subsample count must be positive, got {config.subsample.count}")

    if evaluator_info is not None:
        dims = {layer.name: layer.dim for layer in evaluator_info.layers}
        for role, name in (("target_layer", config.target_layer),) + (
            () if config.mode is Mode.MEI else (("distance_layer", config.distance_layer),)
        ):
            if name not in dims:
                problems.append(f"unknown layer name {name!r} for {role}")
        if config.target_layer in dims and not (
            0 <= config.target_unit < dims[config.target_layer]
        ):
            problems.append(
                f"target_unit {config.target_unit} out of range for layer "
                f"{config.target_layer!r} (dim {dims[config.target_layer]})"
            )
        if config.subsample is not None:
            if config.subsample.layer not in dims:
                problems.append(f"unknown subsample layer {config.subsample.layer!r}")
            elif config.subsample.count > dims[config.subsample.layer]:
                problems.append(
                    f"subsample count {config.subsample.count} exceeds layer dim "
                    f"{dims[config.subsample.layer]}"
                )

    if problems:
        raise ConfigError(problems)
    return config
