import io
import json
from pathlib import Path

import numpy as np
import pytest

from pyeval.adapter import AdapterError, AdapterSpec, LayerDecl
from pyeval.models.shell import build_adapter
from pyeval.server import handle_request, serve_stream

GOLDEN = Path(__file__).parent / "golden" / "shell_transcript.jsonl"


def transcript():
    return [json.loads(line) for line in GOLDEN.read_text().splitlines()]


def shell_adapter():
    return build_adapter(dim="4", r="2.0", tau="0.5")


def test_golden_transcript_replies_match_exactly():
    adapter = shell_adapter()
    for entry in transcript():
        reply = handle_request(adapter, entry["send"])
        # whitespace-insensitive structural equality: compare parsed trees
        assert json.loads(json.dumps(reply)) == entry["expect"]


def test_golden_transcript_through_stream_loop():
    lines = "".join(json.dumps(e["send"]) + "\n" for e in transcript())
    out = io.StringIO()
    serve_stream(shell_adapter(), io.StringIO(lines), out)
    replies = [json.loads(line) for line in out.getvalue().splitlines()]
    assert replies == [e["expect"] for e in transcript()]


def test_hello_info_declares_input_layer():
    reply = handle_request(shell_adapter(), {"type": "hello", "protocol": 1})
    assert reply["type"] == "info"
    names = [l["name"] for l in reply["layers"]]
    assert names[0] == "input"
    assert reply["code_dim"] == 4


def test_protocol_mismatch_is_an_error_reply():
    out = io.StringIO()
    serve_stream(
        shell_adapter(), io.StringIO('{"type": "hello", "protocol": 2}\n'), out
    )
    reply = json.loads(out.getvalue())
    assert reply["type"] == "error"
    assert "protocol" in reply["message"]


def test_units_all_returns_full_width():
    reply = handle_request(shell_adapter(), {
        "type": "eval", "id": 9,
        "codes": [[0.0, 0.0, 0.0, 0.0]],
        "taps": [{"layer": "readout", "units": "all"}],
    })
    assert reply["id"] == 9
    assert len(reply["activations"]["readout"][0]) == 1


def test_masks_applied_server_side():
    reply = handle_request(shell_adapter(), {
        "type": "eval", "id": 3,
        "codes": [[1.0, 2.0, 3.0, 4.0]],
        "taps": [{"layer": "input", "units": [1, 3]}],
    })
    assert reply["activations"]["input"] == [[2.0, 4.0]]


def test_malformed_requests_get_error_and_loop_continues():
    bad_then_good = (
        "not json at all\n"
        '{"type": "eval", "id": 1, "codes": [[0,0,0,0]], '
        '"taps": [{"layer": "readout", "units": [0]}]}\n'
    )
    out = io.StringIO()
    serve_stream(shell_adapter(), io.StringIO(bad_then_good), out)
    first, second = [json.loads(l) for l in out.getvalue().splitlines()]
    assert first["type"] == "error"
    assert second["type"] == "result" and second["id"] == 1


@pytest.mark.parametrize(
    "taps, message",
    [
        ([{"layer": "readout", "units": [0, 0]}], "sorted ascending"),
        ([{"layer": "readout", "units": [5]}], "out of range"),
        ([{"layer": "mystery", "units": "all"}], "unknown layer"),
        ([], "non-empty"),
    ],
)
def test_bad_taps_rejected(taps, message):
    out = io.StringIO()
    request = {"type": "eval", "id": 0, "codes": [[0, 0, 0, 0]], "taps": taps}
    serve_stream(shell_adapter(), io.StringIO(json.dumps(request) + "\n"), out)
    reply = json.loads(out.getvalue())
    assert reply["type"] == "error"
    assert message in reply["message"]


def test_wrong_code_width_rejected():
    out = io.StringIO()
    request = {"type": "eval", "id": 0, "codes": [[0, 0]],
               "taps": [{"layer": "readout", "units": "all"}]}
    serve_stream(shell_adapter(), io.StringIO(json.dumps(request) + "\n"), out)
    assert json.loads(out.getvalue())["type"] == "error"


def _lying_adapter() -> AdapterSpec:
    # declares dim 3 but produces 1 value per candidate
    return AdapterSpec(
        code_dim=2,
        stimulus_shape=(2,),
        generator=lambda codes: codes,
        subject=lambda stimuli, layers: {"readout": np.zeros((stimuli.shape[0], 1))},
        layers=(LayerDecl("readout", 3),),
    )


def test_declared_dim_mismatch_aborts_with_error_reply():
    request = {"type": "eval", "id": 0, "codes": [[0.0, 0.0]],
               "taps": [{"layer": "readout", "units": "all"}]}
    out = io.StringIO()
    with pytest.raises(AdapterError, match="declared dim 3"):
        serve_stream(_lying_adapter(), io.StringIO(json.dumps(request) + "\n"), out)
    reply = json.loads(out.getvalue())
    assert reply["type"] == "error"
    assert "model failure" in reply["message"]


def test_adapter_rejects_declaring_input_layer():
    with pytest.raises(AdapterError, match="served by the adapter"):
        AdapterSpec(
            code_dim=2, stimulus_shape=(2,),
            generator=lambda c: c, subject=lambda s, l: {},
            layers=(LayerDecl("input", 2),),
        )


def test_shell_closed_forms():
    adapter = build_adapter(dim="5", r="3.0", tau="1.0")
    on_shell = [[3.0, 0.0, 0.0, 0.0, 0.0]]
    reply = handle_request(adapter, {
        "type": "eval", "id": 0, "codes": on_shell,
        "taps": [{"layer": "readout", "units": "all"}],
    })
    assert reply["activations"]["readout"][0][0] == pytest.approx(1.0)
    at_origin = handle_request(adapter, {
        "type": "eval", "id": 1, "codes": [[0.0] * 5],
        "taps": [{"layer": "readout", "units": "all"}],
    })
    assert at_origin["activations"]["readout"][0][0] == pytest.approx(
        np.exp(-4.5), rel=1e-6
    )
