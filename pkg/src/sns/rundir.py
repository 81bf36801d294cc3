"""Run-directory persistence: the canonical on-disk forms of a run.

Layout of a completed run directory:

    config.json        resolved config + run status + evaluator surface
    trajectory.csv     per-iteration summaries (schema below)
    codes.bin          final population, little-endian float32, row-major
    codes.meta.json    shape/dtype/seed (+ subsample mask info) for codes.bin
    front.json         final front indices and per-candidate scores
    best.json          selected output candidate (code, scores, iteration)
    stimuli/           final front-0 stimuli; PGM (P5) for 1-channel images,
                       PPM (P6) for 3-channel, raw .bin + meta for vectors

Aborted runs persist whatever exists plus ``"aborted": true`` in config.json.
Tensors round-trip exactly: float32 little-endian bytes against a sidecar
describing shape and dtype.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .core import RunConfig, SnsError, WIRE_DTYPE
from .engine import RunRecord
from .evaluators import EvaluatorInfo

TRAJECTORY_HEADER = [
    "iteration",
    "best_squeeze",
    "best_abs_stretch",
    "best_activation",
    "front0_size",
    "stop_reason",
]


def write_float32_bin(path: Path, array: np.ndarray, meta_path: Path, extra: dict | None = None):
    array = np.asarray(array, dtype=WIRE_DTYPE)
    path.write_bytes(array.astype("<f4").tobytes(order="C"))
    meta = {"shape": list(array.shape), "dtype": "float32", "byte_order": "little"}
    if extra:
        meta.update(extra)
    meta_path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def read_float32_bin(path: Path, meta_path: Path) -> np.ndarray:
    meta = json.loads(meta_path.read_text())
    if meta.get("dtype") != "float32" or meta.get("byte_order") != "little":
        raise SnsError(f"unsupported tensor encoding in {meta_path}")
    flat = np.frombuffer(path.read_bytes(), dtype="<f4")
    expected = int(np.prod(meta["shape"]))
    if flat.size != expected:
        raise SnsError(
            f"{path} holds {flat.size} floats, meta shape {meta['shape']} needs {expected}"
        )
    return flat.reshape(meta["shape"]).astype(WIRE_DTYPE)


def write_pgm(path: Path, image: np.ndarray) -> None:
    """Binary PGM (P5), maxval 255, from a (1, H, W) or (H, W) image in [0, 1]."""
    img = np.asarray(image)
    if img.ndim == 3:
        img = img[0]
    data = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    header = f"P5\n{data.shape[1]} {data.shape[0]}\n255\n".encode("ascii")
    path.write_bytes(header + data.tobytes())


def write_ppm(path: Path, image: np.ndarray) -> None:
    """Binary PPM (P6), maxval 255, from a (3, H, W) image in [0, 1]."""
    img = np.asarray(image)
    if img.ndim != 3 or img.shape[0] != 3:
        raise SnsError(f"PPM needs a (3, H, W) image, got shape {img.shape}")
    data = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    interleaved = np.moveaxis(data, 0, 2)  # H, W, C pixel order
    header = f"P6\n{img.shape[2]} {img.shape[1]}\n255\n".encode("ascii")
    path.write_bytes(header + interleaved.tobytes())


def _read_netpbm(path: Path) -> tuple[str, int, int, bytes]:
    raw = path.read_bytes()
    parts = raw.split(maxsplit=4)
    magic = parts[0].decode("ascii")
    width, height, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    if maxval != 255:
        raise SnsError(f"{path}: only maxval 255 is supported")
    return magic, width, height, parts[4]


def read_image(path: Path) -> np.ndarray:
    """Read a P5/P6 file back into a float32 (C, H, W) image in [0, 1]."""
    magic, width, height, data = _read_netpbm(path)
    if magic == "P5":
        img = np.frombuffer(data[: width * height], dtype=np.uint8)
        img = img.reshape(1, height, width)
    elif magic == "P6":
        img = np.frombuffer(data[: 3 * width * height], dtype=np.uint8)
        img = np.moveaxis(img.reshape(height, width, 3), 2, 0)
    else:
        raise SnsError(f"{path}: unsupported magic {magic!r}")
    return (img.astype(WIRE_DTYPE) / 255.0).astype(WIRE_DTYPE)


def _format_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        if np.isnan(value):
            return ""
        return repr(value)
    return str(value)


def write_run_dir(out: Path, record: RunRecord, info: EvaluatorInfo) -> None:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)

    status = {
        "config": record.config.to_json(),
        "aborted": record.aborted,
        "stop_reason": record.stop_reason,
        "error": record.error,
        "sigma_init": record.sigma_init,
        "evaluator_info": info.to_json(),
        "reference": None if record.reference is None else record.reference.to_json(),
    }
    (out / "config.json").write_text(json.dumps(status, indent=2, sort_keys=True) + "\n")

    with (out / "trajectory.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRAJECTORY_HEADER)
        for rec in record.records:
            writer.writerow([
                rec.iteration,
                _format_cell(rec.best_squeeze),
                _format_cell(rec.best_abs_stretch),
                _format_cell(rec.best_activation),
                rec.front_sizes[0] if rec.front_sizes else "",
                rec.stop_reason or "",
            ])

    if record.final_codes is not None:
        extra = {"seed": record.config.seed}
        if record.config.subsample is not None:
            extra["subsample"] = record.config.subsample.to_json()
        write_float32_bin(
            out / "codes.bin", record.final_codes, out / "codes.meta.json", extra
        )
        front = {
            "front_of": [int(f) for f in record.final_front_of],
            "scores": [s.to_json() for s in record.final_scores],
        }
        (out / "front.json").write_text(json.dumps(front, indent=2, sort_keys=True) + "\n")

    if record.best is not None:
        best = {
            "iteration": record.best.iteration,
            "index": record.best.index,
            "code": [float(v) for v in record.best.code.astype(WIRE_DTYPE)],
            "scores": record.best.scores.to_json(),
        }
        (out / "best.json").write_text(json.dumps(best, indent=2, sort_keys=True) + "\n")

    _write_stimuli(out, record, info)


def _write_stimuli(out: Path, record: RunRecord, info: EvaluatorInfo) -> None:
    if record.final_stimuli is None:
        return
    stim_dir = out / "stimuli"
    stim_dir.mkdir(exist_ok=True)
    front0 = (
        np.flatnonzero(record.final_front_of == 0)
        if record.final_front_of is not None
        else np.arange(record.final_stimuli.shape[0])
    )
    if info.is_image:
        channels = info.stimulus_shape[0]
        writer = write_ppm if channels == 3 else write_pgm
        ext = "ppm" if channels == 3 else "pgm"
        for i in front0:
            writer(stim_dir / f"cand_{i:03d}.{ext}", record.final_stimuli[i])
        if record.best is not None and record.best.stimulus is not None:
            writer(stim_dir / f"best.{ext}", record.best.stimulus)
    else:
        members = record.final_stimuli[front0].reshape(len(front0), -1)
        write_float32_bin(
            stim_dir / "stimuli.bin", members, stim_dir / "stimuli.meta.json",
            {"candidates": [int(i) for i in front0]},
        )
        if record.best is not None and record.best.stimulus is not None:
            write_float32_bin(
                stim_dir / "best.bin",
                record.best.stimulus.reshape(1, -1),
                stim_dir / "best.meta.json",
            )


class LoadedRun:
    """Read-back view of a persisted run directory."""

    def __init__(self, path: Path):
        self.path = Path(path)
        status = json.loads((self.path / "config.json").read_text())
        self.config = RunConfig.from_json(status["config"])
        self.aborted = bool(status["aborted"])
        self.stop_reason = status.get("stop_reason")
        self.evaluator_info = EvaluatorInfo.from_json(status["evaluator_info"])
        self.sigma_init = status.get("sigma_init")
        codes = self.path / "codes.bin"
        self.final_codes = (
            read_float32_bin(codes, self.path / "codes.meta.json")
            if codes.exists()
            else None
        )
        front = self.path / "front.json"
        self.front = json.loads(front.read_text()) if front.exists() else None
        best = self.path / "best.json"
        self.best = json.loads(best.read_text()) if best.exists() else None

    @property
    def best_code(self) -> np.ndarray:
        if self.best is None:
            raise SnsError(f"{self.path} has no best.json")
        return np.asarray(self.best["code"], dtype=np.float64)


def load_run(path: Path) -> LoadedRun:
    return LoadedRun(path)
