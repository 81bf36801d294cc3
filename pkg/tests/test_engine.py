import numpy as np
import pytest

from sns.core import (
    ActivationState,
    ConfigError,
    EvaluatorError,
    Mode,
    ReferencePair,
    ReferenceSource,
    RunConfig,
    SubsampleSpec,
)
from sns.engine import (
    STOP_ADVERSARIAL,
    STOP_INVARIANT,
    STOP_MAX_ITERS,
    StopCriteria,
    compute_reference,
    init_codes,
    make_subsample_mask,
    run_mei,
    run_sns,
    should_stop,
)
from sns.evaluators import FunctionEvaluator, GaussianShellEvaluator


def rng(seed=0):
    return np.random.Generator(np.random.PCG64(seed))


# -- initialization -----------------------------------------------------------


def test_sigma_init_formula_direct_substitution():
    ref = np.full(10, 4.0)  # E[|code|] = 4
    state = init_codes(Mode.INVARIANCE, ref, 10, 50, rng())
    assert state.sigma_init == pytest.approx(np.sqrt(0.01 * 4.0))
    assert state.sigma_init == pytest.approx(0.2)
    state = init_codes(Mode.INVARIANCE, np.full(6, 1.0), 6, 50, rng())
    assert state.sigma_init == pytest.approx(0.1)


def test_invariance_init_is_zero_mean_even_with_reference():
    ref = np.full(8, 2.0)
    state = init_codes(Mode.INVARIANCE, ref, 8, 2000, rng(1))
    assert np.array_equal(state.mean0, np.zeros(8))
    assert abs(state.codes.mean()) < 0.05
    assert state.codes.std() == pytest.approx(state.sigma_init, rel=0.05)


def test_adversarial_init_centers_on_reference_code():
    ref = np.linspace(-1, 1, 12)
    state = init_codes(Mode.ADVERSARIAL, ref, 12, 500, rng(2))
    assert np.array_equal(state.mean0, ref)
    assert np.allclose(state.codes.mean(axis=0), ref, atol=0.05)


def test_adversarial_requires_reference_code():
    with pytest.raises(ConfigError, match="reference code"):
        init_codes(Mode.ADVERSARIAL, None, 4, 10, rng())


def test_natural_reference_init_is_standard_normal():
    state = init_codes(Mode.INVARIANCE, None, 10, 100_000, rng(3))
    assert state.sigma_init == 1.0
    var = state.codes.var(axis=0)
    assert np.all(np.abs(var - 1.0) < 0.05)


# -- stopping -----------------------------------------------------------------


def test_should_stop_boundary_fractions():
    crit = StopCriteria(max_iters=500, fraction=0.9, max_natural_response=1.0)
    make = lambda k: np.concatenate([np.full(k, 1.0), np.full(50 - k, 0.5)])
    assert should_stop(Mode.INVARIANCE, make(44), crit, 10) == (False, None)
    assert should_stop(Mode.INVARIANCE, make(45), crit, 10) == (True, STOP_INVARIANT)
    assert should_stop(Mode.INVARIANCE, make(46), crit, 10) == (True, STOP_INVARIANT)


def test_should_stop_max_iters_reason_wins():
    crit = StopCriteria(max_iters=500, fraction=0.9, max_natural_response=1.0)
    stop, reason = should_stop(Mode.INVARIANCE, np.full(50, 2.0), crit, 500)
    assert stop and reason == STOP_MAX_ITERS


def test_should_stop_adversarial_inclusive():
    crit = StopCriteria(max_iters=500, fraction=0.9, min_natural_response=0.1)
    acts = np.concatenate([np.full(45, 0.1), np.full(5, 0.5)])
    assert should_stop(Mode.ADVERSARIAL, acts, crit, 3) == (True, STOP_ADVERSARIAL)


def test_no_thresholds_means_only_iteration_cap():
    crit = StopCriteria(max_iters=100, fraction=0.9)
    assert should_stop(Mode.INVARIANCE, np.full(50, 1e9), crit, 99) == (False, None)
    assert should_stop(Mode.INVARIANCE, np.full(50, 1e9), crit, 100) == (
        True,
        STOP_MAX_ITERS,
    )


# -- subsampling --------------------------------------------------------------


def test_full_mask_is_identity():
    assert make_subsample_mask(10, 10, seed=4).tolist() == list(range(10))


def test_mask_is_sorted_unique_and_deterministic():
    a = make_subsample_mask(200_704, 1000, seed=5)
    b = make_subsample_mask(200_704, 1000, seed=5)
    assert np.array_equal(a, b)
    assert len(np.unique(a)) == 1000
    assert np.all(np.diff(a) > 0)
    assert make_subsample_mask(200_704, 1000, seed=6).tolist() != a.tolist()


def test_mask_count_exceeding_dim_rejected():
    with pytest.raises(ValueError, match="exceeds"):
        make_subsample_mask(10, 11, seed=0)


# -- scripted early stop through the full loop --------------------------------

from helpers import ScriptedEvaluator  # noqa: E402


def _scripted_config(**kw):
    base = dict(
        mode=Mode.INVARIANCE,
        target_layer="readout",
        target_unit=0,
        distance_layer="input",
        population_size=50,
        max_iters=500,
        early_stop=True,
        max_natural_response=1.0,
        seed=0,
    )
    base.update(kw)
    return RunConfig(**base)


def _scripted_reference(dim):
    return ReferencePair(
        distance_state=ActivationState("input", np.zeros(dim)),
        target_state=ActivationState("readout", [2.0], unit_indices=[0]),
        source=ReferenceSource.MEI,
    )


def _activations(qualifying: int) -> np.ndarray:
    return np.concatenate([np.full(qualifying, 1.0), np.full(50 - qualifying, 0.25)])


def test_stop_fires_exactly_when_fraction_first_reached():
    script = [_activations(44), _activations(44), _activations(45), _activations(50)]
    ev = ScriptedEvaluator(6, script)
    record = run_sns(_scripted_config(), ev, _scripted_reference(6))
    assert record.stop_reason == STOP_INVARIANT
    assert len(record.records) == 3  # generations 0, 1 stop check false; 2 stops
    assert record.records[-1].stop


def test_boundary_44_of_50_never_stops_early():
    script = [_activations(44)] * 5
    ev = ScriptedEvaluator(6, script)
    record = run_sns(_scripted_config(max_iters=4), ev, _scripted_reference(6))
    assert record.stop_reason == STOP_MAX_ITERS
    assert len(record.records) == 5


# -- run_sns on analytic evaluators -------------------------------------------


@pytest.fixture(scope="module")
def shell():
    return GaussianShellEvaluator(dim=10, r=3.0, tau=0.5)


def _shell_config(mode, **kw):
    base = dict(
        mode=mode,
        target_layer="readout",
        target_unit=0,
        distance_layer="input",
        population_size=50,
        max_iters=60,
        seed=0,
    )
    base.update(kw)
    return RunConfig(**base)


def test_zero_max_iters_evaluates_only_initial_population(shell):
    cfg = _shell_config(Mode.INVARIANCE, max_iters=0)
    record = run_sns(cfg, shell, shell.peak_code())
    assert len(record.records) == 1
    assert record.stop_reason == STOP_MAX_ITERS
    assert record.final_codes.shape == (50, 10)


def test_trajectory_is_deterministic(shell):
    cfg = _shell_config(Mode.INVARIANCE, seed=21)
    r1 = run_sns(cfg, shell, shell.peak_code())
    r2 = run_sns(cfg, shell, shell.peak_code())
    assert np.array_equal(r1.final_codes, r2.final_codes)
    for a, b in zip(r1.records, r2.records):
        assert a.scores == b.scores
        assert np.array_equal(a.front_of, b.front_of)


def test_best_squeeze_summary_is_monotone(shell):
    record = run_sns(_shell_config(Mode.INVARIANCE), shell, shell.peak_code())
    series = [rec.best_squeeze for rec in record.records]
    assert all(b <= a + 1e-15 for a, b in zip(series, series[1:]))


def test_shell_invariance_reaches_far_side(shell):
    cfg = _shell_config(Mode.INVARIANCE, max_natural_response=0.9, seed=7)
    record = run_sns(cfg, shell, shell.peak_code())
    best = record.best
    assert best is not None
    assert best.scores.target_activation >= 0.9
    assert -best.scores.stretch >= 1.5 * shell.r


def test_shell_adversarial_minimal_suppression(shell):
    a_min = 0.1
    cfg = _shell_config(
        Mode.ADVERSARIAL, min_natural_response=a_min, early_stop=True, seed=3,
        max_iters=200,
    )
    record = run_sns(cfg, shell, shell.peak_code())
    best = record.best
    assert best is not None
    assert best.scores.target_activation <= a_min
    assert best.scores.squeeze <= 2.0 * shell.radial_perturbation_for(a_min)


def test_aborting_evaluator_yields_partial_record(shell):
    class FlakyEvaluator:
        def __init__(self, inner, fail_at):
            self.inner = inner
            self.info = inner.info
            self.calls = 0
            self.fail_at = fail_at

        def evaluate(self, codes, taps):
            self.calls += 1
            if self.calls >= self.fail_at:
                raise EvaluatorError("synthetic failure")
            return self.inner.evaluate(codes, taps)

    flaky = FlakyEvaluator(shell, fail_at=5)
    record = run_sns(_shell_config(Mode.INVARIANCE), flaky, shell.peak_code())
    assert record.aborted
    assert record.error == "synthetic failure"
    assert 0 < len(record.records) < 10


def test_subsample_masks_flow_into_reference_and_scores(shell):
    cfg = _shell_config(
        Mode.INVARIANCE,
        subsample=SubsampleSpec(layer="input", count=4, seed=11),
        max_iters=3,
    )
    record = run_sns(cfg, shell, shell.peak_code())
    assert len(record.reference.distance_state) == 4
    assert record.reference.distance_state.unit_indices.tolist() == make_subsample_mask(
        10, 4, 11
    ).tolist()


# -- MEI search ---------------------------------------------------------------


def _mei_config(**kw):
    base = dict(
        mode=Mode.MEI, target_layer="readout", target_unit=0,
        population_size=50, max_iters=150, seed=5,
    )
    base.update(kw)
    return RunConfig(**base)


def test_mei_finds_quadratic_argmax():
    center = np.zeros(10)
    center[0], center[1] = 1.0, 2.0
    ev = FunctionEvaluator(lambda X: 10.0 - np.sum((X - center) ** 2, axis=1), dim=10)
    record = run_mei(_mei_config(max_iters=300), ev)
    assert record.best is not None
    assert np.linalg.norm(record.best.code - center) < 1e-3
    assert record.best.scores.target_activation == pytest.approx(10.0, abs=1e-5)


def test_mei_on_linear_subject_keeps_improving():
    w = np.linspace(0.5, 1.5, 6)
    ev = FunctionEvaluator(lambda X: X @ w, dim=6)
    record = run_mei(_mei_config(max_iters=30), ev)
    series = [rec.best_activation for rec in record.records]
    assert all(b > a for a, b in zip(series, series[1:]))


def test_mei_determinism():
    ev = GaussianShellEvaluator(dim=8, r=2.0, tau=1.0)
    r1 = run_mei(_mei_config(max_iters=40), ev)
    r2 = run_mei(_mei_config(max_iters=40), ev)
    assert np.array_equal(r1.best.code, r2.best.code)


def test_mei_rejects_wrong_mode():
    ev = GaussianShellEvaluator(dim=4)
    with pytest.raises(ConfigError, match="MEI mode"):
        run_mei(_shell_config(Mode.INVARIANCE), ev)


def test_compute_reference_single_pass(shell):
    ref = compute_reference(shell, shell.peak_code(), "input", "readout", 0)
    assert ref.target_activation == pytest.approx(1.0)
    assert ref.distance_state.layer == "input"
    assert len(ref.distance_state) == 10
    assert np.array_equal(ref.code, shell.peak_code())
