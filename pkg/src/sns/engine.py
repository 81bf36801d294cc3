"""The stretch/squeeze outer loop: initialization, stopping, subsampling, MEI.

One run owns a single logical control thread: it alternates evaluator batch
calls with Pareto ranking and optimizer updates, recording one
:class:`IterationRecord` per generation. Runs are deterministic given
(config, seed, evaluator): all randomness flows from ``config.seed`` through
spawned child streams (initial population, optimizer, within-front shuffles).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import (
    INPUT_LAYER,
    ActivationState,
    ConfigError,
    EvaluatorError,
    Mode,
    ObjectiveScores,
    ReferencePair,
    ReferenceSource,
    RunConfig,
    SelectionStrategy,
    SubsampleSpec,
    WIRE_DTYPE,
    as_code,
    validate_config,
)
from .evaluators import Evaluator, TapRequest
from .objectives import ObjectiveSpec, score_batch
from .optimizer import CmaEs
from .pareto import nondominated_sort, order_within_fronts

STOP_MAX_ITERS = "max-iters"
STOP_INVARIANT = "invariant-regime"
STOP_ADVERSARIAL = "adversarial-regime"


@dataclass(frozen=True)
class StopCriteria:
    """Iteration cap plus optional response-regime thresholds.

    ``max_natural_response`` / ``min_natural_response`` are the extreme
    target-unit responses over a natural-stimulus corpus; a run stops early
    once at least ``fraction`` of the population crosses the mode's threshold.
    """

    max_iters: int = 500
    fraction: float = 0.9
    max_natural_response: float | None = None
    min_natural_response: float | None = None

    def __post_init__(self):
        if not (0.0 < self.fraction <= 1.0):
            raise ValueError(f"fraction must be in (0, 1], got {self.fraction}")

    @classmethod
    def from_config(cls, config: RunConfig) -> "StopCriteria":
        return cls(
            max_iters=config.max_iters,
            fraction=config.stop_fraction,
            max_natural_response=config.max_natural_response if config.early_stop else None,
            min_natural_response=config.min_natural_response if config.early_stop else None,
        )


def should_stop(
    mode: Mode,
    activations: np.ndarray,
    criteria: StopCriteria,
    iteration: int,
) -> tuple[bool, str | None]:
    """Decide whether the loop ends after this generation, and why.

    The iteration cap is checked first; otherwise the qualifying fraction is
    inclusive (responses equal to the threshold count) on the current
    population only.
    """
    if iteration >= criteria.max_iters:
        return True, STOP_MAX_ITERS
    activations = np.asarray(activations, dtype=np.float64)
    if mode is Mode.INVARIANCE and criteria.max_natural_response is not None:
        frac = float(np.mean(activations >= criteria.max_natural_response))
        if frac >= criteria.fraction:
            return True, STOP_INVARIANT
    if mode is Mode.ADVERSARIAL and criteria.min_natural_response is not None:
        frac = float(np.mean(activations <= criteria.min_natural_response))
        if frac >= criteria.fraction:
            return True, STOP_ADVERSARIAL
    return False, None


@dataclass(frozen=True)
class InitState:
    """Initial population plus the derived sampling scale and optimizer mean."""

    codes: np.ndarray
    sigma_init: float
    mean0: np.ndarray


def initial_sigma(reference_code: np.ndarray | None) -> float:
    """sqrt(0.01 * mean(|reference code|)); 1.0 when no code is available."""
    if reference_code is None:
        return 1.0
    return float(np.sqrt(0.01 * np.mean(np.abs(reference_code))))


def init_codes(
    mode: Mode,
    reference_code: np.ndarray | None,
    dim: int,
    population: int,
    rng: np.random.Generator,
) -> InitState:
    """Draw the generation-0 population for a run.

    Adversarial searches start at the reference code; invariance searches
    start from zero-mean noise whose scale shrinks with the reference code's
    magnitude, or from a standard normal when only a natural (code-less)
    reference exists.
    """
    if mode is Mode.ADVERSARIAL and reference_code is None:
        raise ConfigError(["adversarial mode requires a reference code"])
    sigma_init = initial_sigma(reference_code)
    if mode is Mode.ADVERSARIAL:
        mean0 = as_code(reference_code, dim).copy()
    else:
        mean0 = np.zeros(dim)
    codes = mean0 + sigma_init * rng.standard_normal((population, dim))
    return InitState(codes=codes, sigma_init=sigma_init, mean0=mean0)


def make_subsample_mask(layer_dim: int, count: int, seed: int) -> np.ndarray:
    """Uniform sample of unit indices without replacement, sorted ascending."""
    if count > layer_dim:
        raise ValueError(f"subsample count {count} exceeds layer dim {layer_dim}")
    rng = np.random.Generator(np.random.PCG64(seed))
    return np.sort(rng.choice(layer_dim, size=count, replace=False)).astype(np.int64)


@dataclass
class IterationRecord:
    """Summary of one generation, appended exactly once per generation."""

    iteration: int
    scores: list[ObjectiveScores]
    front_of: np.ndarray
    front_sizes: list[int]
    best_squeeze: float
    best_abs_stretch: float
    best_activation: float
    stop: bool = False
    stop_reason: str | None = None


@dataclass
class BestCandidate:
    """The run's selected output candidate (see RunRecord.best)."""

    iteration: int
    index: int
    code: np.ndarray
    scores: ObjectiveScores
    stimulus: np.ndarray | None = None


@dataclass
class RunRecord:
    """Everything one run produced: config, trajectory, final population."""

    config: RunConfig
    sigma_init: float
    reference: ReferencePair | None
    records: list[IterationRecord] = field(default_factory=list)
    final_codes: np.ndarray | None = None
    final_scores: list[ObjectiveScores] = field(default_factory=list)
    final_front_of: np.ndarray | None = None
    final_stimuli: np.ndarray | None = None
    best: BestCandidate | None = None
    stop_reason: str | None = None
    aborted: bool = False
    error: str | None = None

    @property
    def iterations(self) -> int:
        return len(self.records)


def compute_reference(
    evaluator: Evaluator,
    reference_code: np.ndarray,
    distance_layer: str,
    target_layer: str,
    target_unit: int,
    distance_units: np.ndarray | None = None,
    source: ReferenceSource = ReferenceSource.MEI,
) -> ReferencePair:
    """Derive both reference states from one code by a single evaluator pass."""
    code = as_code(reference_code, evaluator.info.code_dim)
    taps = TapRequest({
        distance_layer: distance_units,
        target_layer: np.asarray([target_unit], dtype=np.int64),
    })
    result = evaluator.evaluate(code[None, :], taps)
    return ReferencePair(
        distance_state=result.state(distance_layer, 0),
        target_state=result.state(target_layer, 0),
        source=source,
        code=code,
    )


def _strategy_for(mode: Mode) -> SelectionStrategy:
    return (
        SelectionStrategy.ACTIVATION_PROXIMITY
        if mode is Mode.INVARIANCE
        else SelectionStrategy.RANDOM
    )


def _qualification_bar(mode: Mode, config: RunConfig) -> float | None:
    # The bar applies to best-candidate selection even when early stopping is
    # off; it is the same response threshold that defines the target regime.
    if mode is Mode.INVARIANCE:
        return config.max_natural_response
    return config.min_natural_response


def _qualifies(mode: Mode, activation: float, bar: float | None) -> bool:
    if bar is None:
        return True
    return activation >= bar if mode is Mode.INVARIANCE else activation <= bar


def _better(
    mode: Mode, scores: ObjectiveScores, best: ObjectiveScores | None, bar: float | None
) -> bool:
    """Selection among qualifying candidates.

    With a response bar: invariance keeps the farthest candidate, adversarial
    the nearest. Without one: invariance keeps the most response-faithful
    candidate (smallest squeeze, distance breaking ties), adversarial the most
    suppressed one (largest |stretch|, proximity breaking ties).
    """
    if best is None:
        return True
    if mode is Mode.INVARIANCE:
        if bar is not None:
            return scores.stretch < best.stretch
        return (scores.squeeze, scores.stretch) < (best.squeeze, best.stretch)
    if bar is not None:
        return scores.squeeze < best.squeeze
    return (scores.stretch, scores.squeeze) < (best.stretch, best.squeeze)


def run_sns(
    config: RunConfig,
    evaluator: Evaluator,
    reference: ReferencePair | np.ndarray | Sequence[float],
) -> RunRecord:
    """Run the full bi-objective search loop and return its trajectory.

    ``reference`` is either a latent code (one evaluator pass derives the
    reference states) or a precomputed :class:`ReferencePair`, which covers
    natural reference stimuli that have no originating code. Evaluator
    failure mid-run aborts the run but returns the partial record so callers
    can persist it.
    """
    info = evaluator.info
    config = validate_config(config, info)
    if config.mode not in (Mode.INVARIANCE, Mode.ADVERSARIAL):
        raise ConfigError([f"run_sns does not handle mode {config.mode.value!r}"])

    mask: np.ndarray | None = None
    if config.subsample is not None:
        mask = make_subsample_mask(
            info.layer_dims()[config.subsample.layer],
            config.subsample.count,
            config.subsample.seed,
        )
    distance_units = mask if (
        config.subsample is not None and config.subsample.layer == config.distance_layer
    ) else None

    if isinstance(reference, ReferencePair):
        ref_pair = reference
    else:
        ref_pair = compute_reference(
            evaluator,
            np.asarray(reference, dtype=np.float64),
            config.distance_layer,
            config.target_layer,
            config.target_unit,
            distance_units=distance_units,
        )
    spec = ObjectiveSpec.for_mode(
        config.mode, config.distance_layer, config.target_layer,
        config.target_unit, ref_pair,
    )

    seeds = np.random.SeedSequence(config.seed).spawn(3)
    rng_init = np.random.Generator(np.random.PCG64(seeds[0]))
    rng_shuffle = np.random.Generator(np.random.PCG64(seeds[2]))

    init = init_codes(
        config.mode, ref_pair.code, info.code_dim, config.population_size, rng_init
    )
    es = CmaEs(
        dim=info.code_dim,
        mean0=init.mean0,
        sigma0=config.sigma0,
        population_size=config.population_size,
        seed=seeds[1],
    )

    criteria = StopCriteria.from_config(config)
    strategy = _strategy_for(config.mode)
    taps = TapRequest({
        config.distance_layer: distance_units,
        config.target_layer: np.asarray([config.target_unit], dtype=np.int64),
    })

    record = RunRecord(config=config, sigma_init=init.sigma_init, reference=ref_pair)
    batch = init.codes
    qual_bar = _qualification_bar(config.mode, config)
    best_squeeze = np.inf
    best_abs_stretch = 0.0
    best_activation = -np.inf

    iteration = 0
    while True:
        try:
            result = evaluator.evaluate(batch.astype(WIRE_DTYPE), taps)
        except EvaluatorError as exc:
            record.aborted = True
            record.error = str(exc)
            record.stop_reason = "aborted"
            return record

        scores = score_batch(spec, result.activations)
        front_of = nondominated_sort(scores)
        ranking = order_within_fronts(
            front_of, scores, strategy,
            ref_activation=ref_pair.target_activation, rng=rng_shuffle,
        )
        activations = np.array([s.target_activation for s in scores])

        best_squeeze = min(best_squeeze, min(s.squeeze for s in scores))
        best_abs_stretch = max(best_abs_stretch, max(-s.stretch for s in scores))
        best_activation = max(best_activation, float(activations.max()))
        for i, s in enumerate(scores):
            if _qualifies(config.mode, s.target_activation, qual_bar) and _better(
                config.mode, s,
                None if record.best is None else record.best.scores, qual_bar,
            ):
                record.best = BestCandidate(
                    iteration=iteration, index=i, code=batch[i].copy(), scores=s
                )

        front_sizes = np.bincount(front_of).tolist()
        stop, reason = should_stop(config.mode, activations, criteria, iteration)
        record.records.append(IterationRecord(
            iteration=iteration,
            scores=scores,
            front_of=front_of,
            front_sizes=front_sizes,
            best_squeeze=best_squeeze,
            best_abs_stretch=best_abs_stretch,
            best_activation=best_activation,
            stop=stop,
            stop_reason=reason,
        ))
        if stop:
            record.stop_reason = reason
            record.final_codes = batch.astype(WIRE_DTYPE)
            record.final_scores = scores
            record.final_front_of = front_of
            break

        es.tell(batch, ranking.order)
        batch = es.ask()
        iteration += 1

    _attach_stimuli(record, evaluator)
    return record


def _attach_stimuli(record: RunRecord, evaluator: Evaluator) -> None:
    """Regenerate final-population stimuli (and the best stimulus) once."""
    if record.final_codes is None:
        return
    taps = TapRequest({INPUT_LAYER: None})
    try:
        result = evaluator.evaluate(record.final_codes, taps)
    except EvaluatorError:
        return
    record.final_stimuli = result.stimuli
    if record.best is not None:
        best = evaluator.evaluate(
            record.best.code[None, :].astype(WIRE_DTYPE), taps
        )
        assert best.stimuli is not None
        record.best.stimulus = best.stimuli[0]


def run_mei(config: RunConfig, evaluator: Evaluator) -> RunRecord:
    """Single-objective search for the code maximizing the target unit.

    Plain CMA-ES with the per-generation ordering by response descending
    (ties by candidate index). The returned record's ``best`` holds the
    highest-response candidate seen anywhere in the run.
    """
    info = evaluator.info
    config = validate_config(config, info)
    if config.mode is not Mode.MEI:
        raise ConfigError([f"run_mei requires MEI mode, got {config.mode.value!r}"])

    seeds = np.random.SeedSequence(config.seed).spawn(2)
    es = CmaEs(
        dim=info.code_dim,
        mean0=np.zeros(info.code_dim),
        sigma0=config.sigma0,
        population_size=config.population_size,
        seed=seeds[1],
    )
    taps = TapRequest({
        config.target_layer: np.asarray([config.target_unit], dtype=np.int64)
    })

    record = RunRecord(config=config, sigma_init=config.sigma0, reference=None)
    best_activation = -np.inf
    iteration = 0
    while True:
        batch = es.ask()
        try:
            result = evaluator.evaluate(batch.astype(WIRE_DTYPE), taps)
        except EvaluatorError as exc:
            record.aborted = True
            record.error = str(exc)
            record.stop_reason = "aborted"
            return record
        activations = result.activations[config.target_layer][:, 0].astype(np.float64)
        order = np.lexsort((np.arange(len(activations)), -activations))

        gen_best = int(order[0])
        if activations[gen_best] > best_activation:
            best_activation = float(activations[gen_best])
            record.best = BestCandidate(
                iteration=iteration,
                index=gen_best,
                code=batch[gen_best].copy(),
                scores=ObjectiveScores(
                    stretch=0.0, squeeze=0.0, target_activation=best_activation
                ),
            )
        stop = iteration >= config.max_iters
        record.records.append(IterationRecord(
            iteration=iteration,
            scores=[],
            front_of=np.zeros(0, dtype=np.int64),
            front_sizes=[],
            best_squeeze=np.nan,
            best_abs_stretch=np.nan,
            best_activation=best_activation,
            stop=stop,
            stop_reason=STOP_MAX_ITERS if stop else None,
        ))
        if stop:
            record.stop_reason = STOP_MAX_ITERS
            record.final_codes = batch.astype(WIRE_DTYPE)
            record.final_scores = []
            record.final_front_of = np.zeros(batch.shape[0], dtype=np.int64)
            break
        es.tell(batch, order)
        iteration += 1

    _attach_stimuli(record, evaluator)
    return record
