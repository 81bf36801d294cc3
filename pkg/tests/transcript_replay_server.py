"""Replay server: asserts the client's requests match a golden transcript.

Reads requests off stdin; each must structurally equal the next transcript
``send`` entry (whitespace-insensitive, values compared as parsed JSON), and
is answered with the recorded ``expect`` reply. Any deviation produces an
``error`` reply, which fails the client hard.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path


def main() -> None:
    transcript = [
        json.loads(line)
        for line in Path(sys.argv[1]).read_text().splitlines()
    ]
    step = 0
    for line in sys.stdin:
        line = line.strip()
        if not line:
            continue
        got = json.loads(line)
        if step >= len(transcript):
            reply = {"type": "error", "id": got.get("id"),
                     "message": "request beyond transcript end"}
        elif got != transcript[step]["send"]:
            reply = {
                "type": "error",
                "id": got.get("id"),
                "message": (
                    f"request {step} deviates from transcript: "
                    f"got {json.dumps(got, sort_keys=True)}, "
                    f"want {json.dumps(transcript[step]['send'], sort_keys=True)}"
                ),
            }
        else:
            reply = transcript[step]["expect"]
        step += 1
        print(json.dumps(reply), flush=True)


if __name__ == "__main__":
    main()
