"""Command-line front end.

Subcommands: ``run`` (bi-objective search), ``mei`` (single-objective search
for a unit's most exciting stimulus), ``calibrate`` (corpus response range),
``analyze distance``, ``analyze separability`` and ``baseline affine``.
Analysis commands write a CSV table plus a rendered PNG figure side by side.

Exit codes: 0 completed (including early stop), 1 configuration or IO error,
2 run aborted mid-flight (partial state persisted).

Evaluator specs: ``shell[:k=v,...]`` (keys dim, r, tau), ``tinycnn[:k=v,...]``
(key seed), ``bridge:tcp:HOST:PORT`` or ``bridge:stdio:CMDLINE``.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import shlex
import sys
from pathlib import Path

import numpy as np

from . import analysis, plots, rundir
from .bridge import BridgedEvaluator
from .core import (
    INPUT_LAYER,
    Mode,
    RunConfig,
    SnsError,
    SubsampleSpec,
    WIRE_DTYPE,
    validate_config,
)
from .engine import run_mei, run_sns
from .evaluators import GaussianShellEvaluator, TapRequest, TinyCnnEvaluator

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_ABORTED = 2


def make_evaluator(spec: str):
    """Build an evaluator from its CLI spec string."""
    kind, _, rest = spec.partition(":")
    if kind == "shell":
        kwargs = _parse_kwargs(rest, {"dim": int, "r": float, "tau": float})
        return GaussianShellEvaluator(**kwargs)
    if kind == "tinycnn":
        kwargs = _parse_kwargs(rest, {"seed": int})
        return TinyCnnEvaluator(**kwargs)
    if kind == "bridge":
        transport, _, target = rest.partition(":")
        if transport == "tcp":
            host, _, port = target.rpartition(":")
            return BridgedEvaluator.connect_tcp(host, int(port))
        if transport == "stdio":
            return BridgedEvaluator.spawn(shlex.split(target))
        raise SnsError(f"unknown bridge transport {transport!r}")
    raise SnsError(f"unknown evaluator spec {spec!r}")


def _parse_kwargs(rest: str, schema: dict) -> dict:
    out = {}
    if not rest:
        return out
    for item in rest.split(","):
        key, _, value = item.partition("=")
        if key not in schema:
            raise SnsError(f"unknown evaluator option {key!r}")
        out[key] = schema[key](value)
    return out


def _load_reference_code(ref: str | None, evaluator) -> np.ndarray:
    if ref is None:
        if isinstance(evaluator, GaussianShellEvaluator):
            return evaluator.peak_code()
        raise SnsError("--reference is required for this evaluator")
    path = Path(ref)
    if path.is_dir():
        return rundir.load_run(path).best_code
    obj = json.loads(path.read_text())
    if "code" not in obj:
        raise SnsError(f"{path} holds no 'code' field")
    return np.asarray(obj["code"], dtype=np.float64)


def _parse_subsample(text: str | None) -> SubsampleSpec | None:
    if text is None:
        return None
    parts = text.split(":")
    if len(parts) != 3:
        raise SnsError("--subsample takes layer:count:seed")
    return SubsampleSpec(layer=parts[0], count=int(parts[1]), seed=int(parts[2]))


def _config_from_args(args, mode: Mode) -> tuple[RunConfig, str]:
    base: dict = {}
    if args.config:
        base = json.loads(Path(args.config).read_text())
    overrides = {
        "mode": mode.value,
        "seed": args.seed,
        "target_layer": getattr(args, "target_layer", None),
        "target_unit": getattr(args, "unit", None),
        "distance_layer": getattr(args, "distance_layer", None),
        "population_size": getattr(args, "population", None),
        "sigma0": getattr(args, "sigma0", None),
        "max_iters": getattr(args, "iters", None),
        "stop_fraction": getattr(args, "stop_fraction", None),
        "max_natural_response": getattr(args, "max_natural_response", None),
        "min_natural_response": getattr(args, "min_natural_response", None),
    }
    merged = dict(base)
    for key, value in overrides.items():
        if value is not None:
            merged[key] = value
    if getattr(args, "early_stop", False):
        merged["early_stop"] = True
    sub = _parse_subsample(getattr(args, "subsample", None))
    if sub is not None:
        merged["subsample"] = sub.to_json()
    # both built-in evaluators expose a "readout" layer; unit 0 is the default target
    merged.setdefault("target_layer", "readout")
    merged.setdefault("target_unit", 0)
    for required in ("target_layer", "target_unit"):
        if merged.get(required) is None:
            raise SnsError(f"missing required config field: {required}")
    evaluator_spec = args.evaluator or merged.get("evaluator") or "shell"
    merged.pop("evaluator", None)
    return RunConfig.from_json(merged), evaluator_spec


def cmd_run(args) -> int:
    mode = Mode(args.mode)
    config, evaluator_spec = _config_from_args(args, mode)
    evaluator = make_evaluator(evaluator_spec)
    try:
        config = validate_config(config, evaluator.info)
        reference = _load_reference_code(args.reference, evaluator)
        record = run_sns(config, evaluator, reference)
        rundir.write_run_dir(Path(args.out), record, evaluator.info)
    finally:
        if hasattr(evaluator, "close"):
            evaluator.close()
    if record.aborted:
        print(f"run aborted: {record.error}", file=sys.stderr)
        return EXIT_ABORTED
    print(f"completed {record.iterations} iterations ({record.stop_reason})")
    return EXIT_OK


def cmd_mei(args) -> int:
    config, evaluator_spec = _config_from_args(args, Mode.MEI)
    evaluator = make_evaluator(evaluator_spec)
    try:
        config = validate_config(config, evaluator.info)
        record = run_mei(config, evaluator)
        rundir.write_run_dir(Path(args.out), record, evaluator.info)
    finally:
        if hasattr(evaluator, "close"):
            evaluator.close()
    if record.aborted:
        print(f"run aborted: {record.error}", file=sys.stderr)
        return EXIT_ABORTED
    assert record.best is not None
    print(f"best activation {record.best.scores.target_activation!r} "
          f"at iteration {record.best.iteration}")
    return EXIT_OK


def _corpus_codes(corpus: Path, code_dim: int) -> np.ndarray:
    codes = []
    bin_path = corpus / "codes.bin"
    if bin_path.exists():
        codes.append(rundir.read_float32_bin(bin_path, corpus / "codes.meta.json"))
    for path in sorted(corpus.glob("*.json")):
        if path.name == "codes.meta.json":
            continue
        obj = json.loads(path.read_text())
        if isinstance(obj, dict) and "code" in obj:
            codes.append(np.asarray(obj["code"], dtype=np.float64)[None, :])
    if not codes:
        raise SnsError(f"no corpus codes found under {corpus}")
    stacked = np.concatenate([np.asarray(c, dtype=np.float64) for c in codes], axis=0)
    if stacked.shape[1] != code_dim:
        raise SnsError(
            f"corpus code width {stacked.shape[1]} != evaluator code_dim {code_dim}"
        )
    return stacked


def cmd_calibrate(args) -> int:
    evaluator = make_evaluator(args.evaluator)
    try:
        codes = _corpus_codes(Path(args.corpus), evaluator.info.code_dim)
        taps = TapRequest({args.target_layer: np.asarray([args.unit])})
        responses = evaluator.evaluate(
            codes.astype(WIRE_DTYPE), taps
        ).activations[args.target_layer][:, 0]
    finally:
        if hasattr(evaluator, "close"):
            evaluator.close()
    out = {
        "max_natural_response": float(responses.max()),
        "min_natural_response": float(responses.min()),
        "corpus_size": int(responses.shape[0]),
    }
    print(json.dumps(out, indent=2, sort_keys=True))
    return EXIT_OK


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def cmd_analyze_distance(args) -> int:
    evaluator = make_evaluator(args.evaluator)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    layers = (
        args.layers.split(",")
        if args.layers
        else [l.name for l in evaluator.info.layers]
    )
    ref_code = _load_reference_code(args.reference, evaluator)

    # random-code pair control doubles as the per-layer normalizer
    rng = np.random.Generator(np.random.PCG64(args.seed))
    random_codes = rng.standard_normal((args.pairs, evaluator.info.code_dim))
    normalizer_profile = dataclasses.replace(
        analysis.control_distances(
            {"random": random_codes}, evaluator, layers,
            analysis.ControlKind.WITHIN_CATEGORY, pair_budget=args.pairs,
            seed=args.seed, from_codes=True,
        ),
        condition="control:random_pairs",
    )
    normalizer = {s.layer: max(s.mean, 1e-12) for s in normalizer_profile.stats}

    by_condition: dict[str, list[np.ndarray]] = {}
    for run_path in args.runs:
        run = rundir.load_run(Path(run_path))
        by_condition.setdefault(run.config.distance_layer, []).append(run.best_code)

    profiles = []
    for condition in sorted(by_condition):
        codes = np.stack(by_condition[condition])
        profiles.append(analysis.distance_profile(
            codes, ref_code, evaluator, layers,
            normalizer=normalizer, condition=condition, from_codes=True,
        ))

    controls = []
    if args.refvar:
        groups = {
            str(i): rundir.load_run(Path(p)).best_code[None, :]
            for i, p in enumerate(args.refvar)
        }
        merged = {"refvar": np.concatenate(list(groups.values()), axis=0)}
        controls.append(analysis.control_distances(
            merged, evaluator, layers, analysis.ControlKind.REFERENCE_VARIABILITY,
            seed=args.seed, from_codes=True,
        ))

    rows = []
    for prof in profiles + controls + [normalizer_profile]:
        for s in prof.stats:
            rows.append([s.layer, prof.condition, repr(s.mean), repr(s.sem), s.n,
                         repr(normalizer.get(s.layer, 1.0))])
    _write_csv(out / "distance.csv",
               ["layer", "condition", "mean", "sem", "n", "normalizer"], rows)
    plots.save_distance_figure(profiles, controls, out / "distance.png")
    print(f"wrote {out / 'distance.csv'} and distance.png")
    return EXIT_OK


def cmd_analyze_separability(args) -> int:
    evaluator = make_evaluator(args.evaluator)
    images, labels = [], []
    for run_path in args.runs:
        run = rundir.load_run(Path(run_path))
        taps = TapRequest({INPUT_LAYER: None})
        result = evaluator.evaluate(run.best_code[None, :].astype(WIRE_DTYPE), taps)
        images.append(result.stimuli[0])
        labels.append(run.config.distance_layer)
    k_values = [int(k) for k in args.k.split(",")] if args.k else None
    results = analysis.separability_sweep(
        np.stack(images), np.asarray(labels), k_values=k_values,
        folds=args.folds, seed=args.seed,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = [
        [r.k, fold, repr(acc)]
        for r in results
        for fold, acc in enumerate(r.fold_accuracies)
    ]
    _write_csv(out / "separability.csv", ["k", "fold", "accuracy"], rows)
    plots.save_separability_figure(results, out / "separability.png")
    print(f"wrote {out / 'separability.csv'} and separability.png")
    return EXIT_OK


def cmd_baseline_affine(args) -> int:
    evaluator = make_evaluator(args.evaluator)
    ref_code = _load_reference_code(args.reference, evaluator)
    taps = TapRequest({INPUT_LAYER: None})
    stimulus = evaluator.evaluate(
        ref_code[None, :].astype(WIRE_DTYPE), taps
    ).stimuli[0]
    points = analysis.affine_baseline(
        stimulus, evaluator, args.unit, target_layer=args.target_layer
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = [[p.op, repr(p.param), repr(p.pixel_l2), repr(p.reduction_pct)] for p in points]
    _write_csv(out / "affine.csv", ["op", "param", "pixel_l2", "reduction_pct"], rows)
    plots.save_affine_figure(points, out / "affine.png")
    print(f"wrote {out / 'affine.csv'} and affine.png")
    return EXIT_OK


def _add_run_like_options(p: argparse.ArgumentParser, mei: bool = False) -> None:
    p.add_argument("--config", help="JSON file with config fields (flags override)")
    p.add_argument("--evaluator", help="evaluator spec (default: shell)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="run directory to write")
    p.add_argument("--unit", type=int, help="target unit index")
    p.add_argument("--target-layer", dest="target_layer", help="layer of the target unit")
    p.add_argument("--population", type=int, help="population size")
    p.add_argument("--sigma0", type=float, help="initial optimizer step size")
    p.add_argument("--iters", type=int, help="iteration cap")
    if not mei:
        p.add_argument("--distance-layer", dest="distance_layer",
                       help="layer for stimulus-level distance (default: input)")
        p.add_argument("--reference", help="run dir or JSON file with the reference code")
        p.add_argument("--subsample", help="layer:count:seed subsample mask")
        p.add_argument("--early-stop", dest="early_stop", action="store_true",
                       help="enable response-regime early stopping")
        p.add_argument("--stop-fraction", dest="stop_fraction", type=float)
        p.add_argument("--max-natural-response", dest="max_natural_response", type=float)
        p.add_argument("--min-natural-response", dest="min_natural_response", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sns", description="stretch/squeeze stimulus search and analysis"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="bi-objective invariance/adversarial search")
    p_run.add_argument("--mode", required=True, choices=["invariance", "adversarial"])
    _add_run_like_options(p_run)
    p_run.set_defaults(func=cmd_run)

    p_mei = sub.add_parser("mei", help="single-objective most-exciting-stimulus search")
    _add_run_like_options(p_mei, mei=True)
    p_mei.set_defaults(func=cmd_mei)

    p_cal = sub.add_parser("calibrate", help="corpus response range for a unit")
    p_cal.add_argument("--corpus", required=True, help="directory of corpus codes")
    p_cal.add_argument("--unit", type=int, required=True)
    p_cal.add_argument("--target-layer", dest="target_layer", default="readout")
    p_cal.add_argument("--evaluator", default="shell")
    p_cal.set_defaults(func=cmd_calibrate)

    p_an = sub.add_parser("analyze", help="post-hoc analyses over run directories")
    an_sub = p_an.add_subparsers(dest="analysis", required=True)

    p_dist = an_sub.add_parser("distance", help="per-layer distance profiles")
    p_dist.add_argument("--runs", nargs="+", required=True)
    p_dist.add_argument("--reference", required=True,
                        help="run dir or JSON file with the reference code")
    p_dist.add_argument("--evaluator", default="shell")
    p_dist.add_argument("--layers", help="comma-separated layer subset")
    p_dist.add_argument("--refvar", nargs="*", default=[],
                        help="repeated MEI run dirs for the variability control")
    p_dist.add_argument("--pairs", type=int, default=200)
    p_dist.add_argument("--seed", type=int, default=0)
    p_dist.add_argument("--out", required=True)
    p_dist.set_defaults(func=cmd_analyze_distance)

    p_sep = an_sub.add_parser("separability", help="PCA + SVC condition separability")
    p_sep.add_argument("--runs", nargs="+", required=True)
    p_sep.add_argument("--evaluator", default="tinycnn")
    p_sep.add_argument("--k", help="comma-separated component counts")
    p_sep.add_argument("--folds", type=int, default=5)
    p_sep.add_argument("--seed", type=int, default=0)
    p_sep.add_argument("--out", required=True)
    p_sep.set_defaults(func=cmd_analyze_separability)

    p_base = sub.add_parser("baseline", help="reference baselines")
    base_sub = p_base.add_subparsers(dest="baseline", required=True)
    p_aff = base_sub.add_parser("affine", help="affine transformation sweep")
    p_aff.add_argument("--reference", required=True)
    p_aff.add_argument("--evaluator", default="tinycnn")
    p_aff.add_argument("--unit", type=int, required=True)
    p_aff.add_argument("--target-layer", dest="target_layer", default="readout")
    p_aff.add_argument("--out", required=True)
    p_aff.set_defaults(func=cmd_baseline_affine)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SnsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except (OSError, json.JSONDecodeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
