import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from sns.bridge import BridgedEvaluator
from sns.core import BridgeError, Mode, RunConfig
from sns.engine import run_sns
from sns.evaluators import GaussianShellEvaluator, TapRequest

STUB = str(Path(__file__).parent / "bridge_stub.py")
SHELL_SPEC = "shell:dim=10,r=3,tau=0.5"


def spawn_stub(fault=None, evaluator=SHELL_SPEC, **kwargs) -> BridgedEvaluator:
    argv = [sys.executable, STUB, "--evaluator", evaluator]
    if fault:
        argv += ["--fault", fault]
    return BridgedEvaluator.spawn(argv, **kwargs)


def test_handshake_echoes_declared_surface():
    with spawn_stub() as bridged:
        info = bridged.info
        assert info.code_dim == 10
        assert info.stimulus_shape == (10,)
        assert info.layer_dims() == {"input": 10, "readout": 1}
        assert info.deterministic


def test_handshake_rejects_missing_input_layer():
    with pytest.raises(BridgeError, match="no input layer"):
        spawn_stub(fault="no-input")


def test_handshake_rejects_protocol_mismatch():
    with pytest.raises(BridgeError, match="version mismatch"):
        spawn_stub(fault="protocol-2")


def test_eval_shape_contract():
    with spawn_stub(evaluator="shell:dim=3,r=1,tau=1") as bridged:
        codes = np.array([[0.0, 1.0, 0.0], [1.0, 0.0, 0.0]])
        result = bridged.evaluate(codes, TapRequest({"input": None}))
        assert result.activations["input"].shape == (2, 3)
        assert np.array_equal(result.activations["input"], codes.astype(np.float32))


def test_unsorted_units_rejected_client_side():
    with pytest.raises(Exception, match="sorted ascending"):
        TapRequest({"input": [5, 2]})


def test_id_mismatch_is_fatal():
    with spawn_stub(fault="bad-id") as bridged:
        with pytest.raises(BridgeError, match="echo"):
            bridged.evaluate(np.zeros((1, 10)), TapRequest({"readout": None}))


def test_malformed_json_is_fatal():
    with spawn_stub(fault="garbage") as bridged:
        with pytest.raises(BridgeError, match="malformed JSON"):
            bridged.evaluate(np.zeros((1, 10)), TapRequest({"readout": None}))


def test_server_death_is_fatal():
    bridged = spawn_stub()
    bridged._channel.proc.kill()
    bridged._channel.proc.wait()
    with pytest.raises(BridgeError):
        bridged.evaluate(np.zeros((1, 10)), TapRequest({"readout": None}))
    bridged.close()


def test_wire_activations_match_in_process_bitwise():
    shell = GaussianShellEvaluator(dim=10, r=3.0, tau=0.5)
    rng = np.random.Generator(np.random.PCG64(0))
    codes = rng.normal(size=(20, 10))
    taps = TapRequest({"input": None, "readout": None})
    local = shell.evaluate(codes.astype(np.float32), taps)
    with spawn_stub() as bridged:
        remote = bridged.evaluate(codes, taps)
    for layer in ("input", "readout"):
        assert np.array_equal(local.activations[layer], remote.activations[layer])


def test_sub_batch_splitting_is_invisible():
    rng = np.random.Generator(np.random.PCG64(1))
    codes = rng.normal(size=(23, 10))
    taps = TapRequest({"readout": None})
    with spawn_stub() as whole:
        full = whole.evaluate(codes, taps)
    with spawn_stub(max_batch=7) as split:
        parts = split.evaluate(codes, taps)
    assert np.array_equal(full.activations["readout"], parts.activations["readout"])


def test_tcp_transport_round_trip():
    proc = subprocess.Popen(
        [sys.executable, STUB, "--transport", "tcp", "--evaluator", SHELL_SPEC],
        stdout=subprocess.PIPE,
        text=True,
    )
    try:
        port = int(proc.stdout.readline())
        with BridgedEvaluator.connect_tcp("127.0.0.1", port) as bridged:
            assert bridged.info.code_dim == 10
            out = bridged.evaluate(np.zeros((2, 10)), TapRequest({"readout": None}))
            assert out.activations["readout"].shape == (2, 1)
    finally:
        proc.kill()
        proc.wait()


def _shell_run_config(mode: Mode, seed: int) -> RunConfig:
    return RunConfig(
        mode=mode,
        target_layer="readout",
        target_unit=0,
        distance_layer="input",
        population_size=20,
        max_iters=25,
        max_natural_response=0.9 if mode is Mode.INVARIANCE else None,
        min_natural_response=0.1 if mode is Mode.ADVERSARIAL else None,
        seed=seed,
    )


@pytest.mark.parametrize("mode", [Mode.INVARIANCE, Mode.ADVERSARIAL])
def test_bridge_transparency_trajectories_match(mode):
    # same seed in process and over the wire: identical per-generation
    # orderings and scores within float32 wire rounding (here: bitwise)
    shell = GaussianShellEvaluator(dim=10, r=3.0, tau=0.5)
    reference = shell.peak_code()
    cfg = _shell_run_config(mode, seed=13)
    local = run_sns(cfg, shell, reference)
    with spawn_stub() as bridged:
        remote = run_sns(cfg, bridged, reference)
    assert local.stop_reason == remote.stop_reason
    assert len(local.records) == len(remote.records)
    for a, b in zip(local.records, remote.records):
        assert np.array_equal(a.front_of, b.front_of)
        for sa, sb in zip(a.scores, b.scores):
            assert sa.stretch == pytest.approx(sb.stretch, rel=1e-5)
            assert sa.squeeze == pytest.approx(sb.squeeze, rel=1e-5)
    assert np.array_equal(local.final_codes, remote.final_codes)


def test_client_requests_conform_to_golden_transcript():
    # byte-level protocol conformance, whitespace-insensitive: the replay
    # server rejects any request that deviates from the recorded transcript
    transcript_path = Path(__file__).parent / "golden" / "shell_transcript.jsonl"
    replay = str(Path(__file__).parent / "transcript_replay_server.py")
    with BridgedEvaluator.spawn(
        [sys.executable, replay, str(transcript_path)]
    ) as bridged:
        assert bridged.info.code_dim == 4
        full = TapRequest({"input": None, "readout": None})
        r0 = bridged.evaluate(
            np.array([[2.0, 0.0, 0.0, 0.0], [0.0, 0.0, 0.0, 0.0]]), full
        )
        assert r0.activations["readout"][0, 0] == 1.0
        masked = TapRequest({"input": np.array([0, 2]), "readout": np.array([0])})
        r1 = bridged.evaluate(np.array([[0.5, -1.25, 2.75, 0.125]]), masked)
        assert np.array_equal(
            r1.activations["input"], np.array([[0.5, 2.75]], dtype=np.float32)
        )
        r2 = bridged.evaluate(
            np.array([
                [1.0, 1.0, 1.0, 1.0],
                [0.125, 0.25, 0.375, 0.5],
                [-2.0, 0.0, 0.0, 0.0],
            ]),
            TapRequest({"readout": None}),
        )
        assert r2.activations["readout"].shape == (3, 1)
        assert r2.activations["readout"][2, 0] == 1.0
