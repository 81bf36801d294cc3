"""Figure rendering for the analysis CLI: one PNG per report, next to its CSV."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .analysis import AffinePoint, DistanceProfile, SeparabilityResult


def save_distance_figure(
    profiles: Sequence[DistanceProfile],
    controls: Sequence[DistanceProfile],
    path: Path,
) -> None:
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for prof in profiles:
        values = prof.normalized_values()
        errors = [s.sem / s.normalizer for s in prof.stats]
        ax.errorbar(prof.layers, values, yerr=errors, marker="o", capsize=3,
                    label=f"stretch: {prof.condition}")
    for ctrl in controls:
        ax.plot(ctrl.layers, ctrl.normalized_values(), linestyle="--", alpha=0.7,
                label=ctrl.condition)
    ax.set_xlabel("layer")
    ax.set_ylabel("normalized distance to reference")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_separability_figure(results: Sequence[SeparabilityResult], path: Path) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    ks = [r.k for r in results]
    means = [r.mean_accuracy for r in results]
    ax.plot(ks, means, marker="o")
    for r in results:
        ax.scatter([r.k] * len(r.fold_accuracies), r.fold_accuracies, s=10,
                   color="gray", alpha=0.5)
    ax.axhline(1.0 / 3.0, linestyle=":", color="red", label="chance (3 classes)")
    ax.set_xscale("log")
    ax.set_xlabel("principal components")
    ax.set_ylabel("cross-validated accuracy")
    ax.set_ylim(0, 1.05)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_affine_figure(
    points: Sequence[AffinePoint],
    path: Path,
    search_points: Sequence[tuple[float, float]] | None = None,
) -> None:
    """Reduction vs pixel distance; optional search candidates for comparison."""
    fig, ax = plt.subplots(figsize=(6, 4.5))
    ops = sorted({p.op for p in points})
    for op in ops:
        xs = [p.pixel_l2 for p in points if p.op == op]
        ys = [p.reduction_pct for p in points if p.op == op]
        ax.scatter(xs, ys, label=op, s=25)
    if search_points:
        ax.scatter(
            [p[0] for p in search_points], [p[1] for p in search_points],
            marker="*", s=60, color="black", label="search candidates",
        )
    ax.set_xlabel("pixel L2 distance from reference")
    ax.set_ylabel("activation reduction (%)")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
