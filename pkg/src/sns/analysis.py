"""Post-hoc analyses over persisted runs.

Three families, all pure over their inputs:

* per-layer representational distance profiles with the three control
  metrics (reference variability, within-category, between-category);
* pixel-space separability of stretch conditions via PCA features and a
  one-vs-one RBF support vector classifier trained by sequential minimal
  optimization;
* affine-transform baselines pairing pixel displacement with target-unit
  response reduction.

Distance profiles report raw per-layer means together with a per-layer
normalizer (the within-category control mean, or a random-pair control when
no labeled corpus exists); normalized curves are mean / normalizer.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .core import EvaluatorError
from .evaluators import (
    AffineOp,
    INPUT_LAYER,
    Rotate,
    Scale,
    TapRequest,
    Translate,
    affine_transform,
)
from .objectives import activation_reduction_pct


# -- distance profiles --------------------------------------------------------


@dataclass(frozen=True)
class LayerStat:
    layer: str
    mean: float
    sem: float
    n: int
    normalizer: float = 1.0

    @property
    def normalized(self) -> float:
        return self.mean / self.normalizer


@dataclass(frozen=True)
class DistanceProfile:
    """Per-layer distance statistics for one condition (stretch layer used)."""

    condition: str
    stats: tuple[LayerStat, ...]

    def __post_init__(self):
        for s in self.stats:
            if s.n <= 0:
                raise ValueError(f"layer {s.layer!r} has no samples")
            if s.normalizer <= 0:
                raise ValueError(f"layer {s.layer!r} has non-positive normalizer")

    @property
    def layers(self) -> list[str]:
        return [s.layer for s in self.stats]

    def stat(self, layer: str) -> LayerStat:
        for s in self.stats:
            if s.layer == layer:
                return s
        raise KeyError(layer)

    def normalized_values(self) -> np.ndarray:
        return np.array([s.normalized for s in self.stats])


def _tap_states(evaluator, batch: np.ndarray, layers: Sequence[str], from_codes: bool):
    taps = TapRequest({layer: None for layer in layers})
    if from_codes:
        return evaluator.evaluate(batch, taps).activations
    if not hasattr(evaluator, "evaluate_stimuli"):
        raise EvaluatorError(
            "evaluator does not support tapping raw stimuli; use codes instead"
        )
    return evaluator.evaluate_stimuli(batch, taps).activations


def _pairwise_layer_distances(acts_a, acts_b, layers) -> dict[str, np.ndarray]:
    return {
        layer: np.linalg.norm(
            acts_a[layer].astype(np.float64) - acts_b[layer].astype(np.float64), axis=1
        )
        for layer in layers
    }


def _profile_from_distances(
    condition: str,
    layers: Sequence[str],
    dists: Mapping[str, np.ndarray],
    normalizer: Mapping[str, float] | None,
) -> DistanceProfile:
    stats = []
    for layer in layers:
        d = np.asarray(dists[layer], dtype=np.float64)
        n = int(d.size)
        if n == 0:
            raise ValueError(f"no distances for layer {layer!r}")
        sem = float(d.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0
        norm = 1.0 if normalizer is None else float(normalizer[layer])
        stats.append(LayerStat(layer=layer, mean=float(d.mean()), sem=sem, n=n, normalizer=norm))
    return DistanceProfile(condition=condition, stats=tuple(stats))


def distance_profile(
    images: np.ndarray,
    reference: np.ndarray,
    evaluator,
    layers: Sequence[str],
    normalizer: Mapping[str, float] | None = None,
    condition: str = "",
    from_codes: bool = False,
) -> DistanceProfile:
    """Mean (+- SEM) per-layer distance between each image and the reference.

    ``images`` is a stack of stimuli (or latent codes with ``from_codes``);
    ``reference`` is a single stimulus or code. Distances are Euclidean over
    the full layer activations.
    """
    images = np.asarray(images)
    if images.shape[0] == 0:
        raise ValueError("empty image set")
    acts = _tap_states(evaluator, images, layers, from_codes)
    ref_acts = _tap_states(evaluator, np.asarray(reference)[None], layers, from_codes)
    dists = {
        layer: np.linalg.norm(
            acts[layer].astype(np.float64) - ref_acts[layer].astype(np.float64)[0],
            axis=1,
        )
        for layer in layers
    }
    return _profile_from_distances(condition, layers, dists, normalizer)


class ControlKind(enum.Enum):
    REFERENCE_VARIABILITY = "reference_variability"
    WITHIN_CATEGORY = "within_category"
    BETWEEN_CATEGORY = "between_category"


def control_distances(
    corpus: Mapping[str, np.ndarray],
    evaluator,
    layers: Sequence[str],
    kind: ControlKind,
    pair_budget: int = 500,
    seed: int = 0,
    from_codes: bool = False,
) -> DistanceProfile:
    """Per-layer mean distances for one control metric.

    ``corpus`` maps a group label to a stack of stimuli (or codes). Reference
    variability uses every within-group pair (groups are repeated searches for
    one unit, so m items yield m*(m-1)/2 pairs); the category controls draw
    ``pair_budget`` seeded random pairs, within or across groups.
    """
    groups = {k: np.asarray(v) for k, v in corpus.items()}
    keys = sorted(groups)
    rng = np.random.Generator(np.random.PCG64(seed))

    pairs: list[tuple[np.ndarray, np.ndarray]] = []
    if kind is ControlKind.REFERENCE_VARIABILITY:
        for k in keys:
            items = groups[k]
            if items.shape[0] < 2:
                raise ValueError(f"group {k!r} needs >= 2 items for pairing")
            for i in range(items.shape[0]):
                for j in range(i + 1, items.shape[0]):
                    pairs.append((items[i], items[j]))
    elif kind is ControlKind.WITHIN_CATEGORY:
        eligible = [k for k in keys if groups[k].shape[0] >= 2]
        if not eligible:
            raise ValueError("no category has >= 2 items")
        for _ in range(pair_budget):
            k = eligible[rng.integers(len(eligible))]
            i, j = rng.choice(groups[k].shape[0], size=2, replace=False)
            pairs.append((groups[k][i], groups[k][j]))
    elif kind is ControlKind.BETWEEN_CATEGORY:
        if len(keys) < 2:
            raise ValueError("between-category control needs >= 2 categories")
        for _ in range(pair_budget):
            ka, kb = rng.choice(len(keys), size=2, replace=False)
            a = groups[keys[ka]][rng.integers(groups[keys[ka]].shape[0])]
            b = groups[keys[kb]][rng.integers(groups[keys[kb]].shape[0])]
            pairs.append((a, b))
    else:
        raise ValueError(f"unknown control kind {kind!r}")

    left = np.stack([p[0] for p in pairs])
    right = np.stack([p[1] for p in pairs])
    acts_l = _tap_states(evaluator, left, layers, from_codes)
    acts_r = _tap_states(evaluator, right, layers, from_codes)
    dists = _pairwise_layer_distances(acts_l, acts_r, layers)
    return _profile_from_distances(f"control:{kind.value}", layers, dists, None)


# -- PCA ----------------------------------------------------------------------


@dataclass(frozen=True)
class PcaModel:
    components: np.ndarray  # (k, d) orthonormal rows
    explained_variance: np.ndarray  # (k,)
    mean: np.ndarray  # (d,)

    def transform(self, data: np.ndarray, k: int | None = None) -> np.ndarray:
        comps = self.components if k is None else self.components[:k]
        return (np.asarray(data, dtype=np.float64) - self.mean) @ comps.T

    def inverse_transform(self, projected: np.ndarray) -> np.ndarray:
        k = projected.shape[1]
        return projected @ self.components[:k] + self.mean


def pca_fit(data: np.ndarray) -> PcaModel:
    """Principal components of row-sample data via SVD of the centered matrix.

    Components are the right singular vectors ordered by singular value
    descending, with a deterministic sign convention (largest-magnitude entry
    positive). Degenerate all-identical data yields zero variances but still
    orthonormal components.
    """
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2 or data.shape[0] < 2:
        raise ValueError("pca_fit needs a (samples >= 2, dims) matrix")
    mean = data.mean(axis=0)
    centered = data - mean
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    # deterministic sign: flip rows so the largest-|entry| coordinate is positive
    flip = np.sign(vt[np.arange(vt.shape[0]), np.argmax(np.abs(vt), axis=1)])
    flip[flip == 0] = 1.0
    vt = vt * flip[:, None]
    explained = s**2 / (data.shape[0] - 1)
    return PcaModel(components=vt, explained_variance=explained, mean=mean)


# -- RBF SVC trained by SMO ---------------------------------------------------


def _rbf_kernel(a: np.ndarray, b: np.ndarray, gamma: float) -> np.ndarray:
    aa = np.sum(a * a, axis=1)[:, None]
    bb = np.sum(b * b, axis=1)[None, :]
    return np.exp(-gamma * np.maximum(aa + bb - 2.0 * (a @ b.T), 0.0))


class SmoBinarySvc:
    """Soft-margin binary SVM with an RBF kernel, trained by SMO.

    Sequential minimal optimization over the dual: sweep candidates violating
    the KKT conditions beyond ``tol``, pair each with a random partner, solve
    the two-variable subproblem analytically, and stop when a full sweep
    changes nothing (or after ``max_passes`` sweeps). Deterministic given the
    seed.
    """

    def __init__(self, C: float = 1.0, gamma: float = 1.0, tol: float = 1e-3,
                 max_passes: int = 10_000, seed: int = 0):
        self.C = C
        self.gamma = gamma
        self.tol = tol
        self.max_passes = max_passes
        self.seed = seed

    def fit(self, X: np.ndarray, y: np.ndarray) -> "SmoBinarySvc":
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        if set(np.unique(y)) - {-1.0, 1.0}:
            raise ValueError("labels must be +-1")
        m = X.shape[0]
        K = _rbf_kernel(X, X, self.gamma)
        alpha = np.zeros(m)
        b = 0.0
        rng = np.random.Generator(np.random.PCG64(self.seed))

        def f_all():
            return (alpha * y) @ K + b

        for _ in range(self.max_passes):
            changed = 0
            errors = f_all() - y
            for i in range(m):
                e_i = float((alpha * y) @ K[:, i] + b - y[i])
                if not (
                    (y[i] * e_i < -self.tol and alpha[i] < self.C)
                    or (y[i] * e_i > self.tol and alpha[i] > 0)
                ):
                    continue
                j = int(rng.integers(m - 1))
                if j >= i:
                    j += 1
                e_j = float((alpha * y) @ K[:, j] + b - y[j])
                a_i_old, a_j_old = alpha[i], alpha[j]
                if y[i] != y[j]:
                    lo = max(0.0, a_j_old - a_i_old)
                    hi = min(self.C, self.C + a_j_old - a_i_old)
                else:
                    lo = max(0.0, a_i_old + a_j_old - self.C)
                    hi = min(self.C, a_i_old + a_j_old)
                if lo == hi:
                    continue
                eta = 2.0 * K[i, j] - K[i, i] - K[j, j]
                if eta >= 0:
                    continue
                a_j = np.clip(a_j_old - y[j] * (e_i - e_j) / eta, lo, hi)
                if abs(a_j - a_j_old) < 1e-7:
                    continue
                a_i = a_i_old + y[i] * y[j] * (a_j_old - a_j)
                alpha[i], alpha[j] = a_i, a_j
                b1 = b - e_i - y[i] * (a_i - a_i_old) * K[i, i] - y[j] * (a_j - a_j_old) * K[i, j]
                b2 = b - e_j - y[i] * (a_i - a_i_old) * K[i, j] - y[j] * (a_j - a_j_old) * K[j, j]
                if 0 < a_i < self.C:
                    b = b1
                elif 0 < a_j < self.C:
                    b = b2
                else:
                    b = (b1 + b2) / 2.0
                changed += 1
            if changed == 0:
                break

        support = alpha > 1e-8
        self.support_vectors_ = X[support]
        self.dual_coef_ = (alpha * y)[support]
        self.intercept_ = b
        return self

    def decision_function(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if self.support_vectors_.shape[0] == 0:
            return np.full(X.shape[0], self.intercept_)
        K = _rbf_kernel(X, self.support_vectors_, self.gamma)
        return K @ self.dual_coef_ + self.intercept_

    def predict(self, X: np.ndarray) -> np.ndarray:
        return np.where(self.decision_function(X) >= 0, 1, -1)


class RbfSvc:
    """One-vs-one multiclass wrapper: majority vote, decision sums break ties."""

    def __init__(self, C: float = 1.0, gamma: float | str = "scale",
                 tol: float = 1e-3, max_passes: int = 10_000, seed: int = 0):
        self.C = C
        self.gamma = gamma
        self.tol = tol
        self.max_passes = max_passes
        self.seed = seed

    def _resolve_gamma(self, X: np.ndarray) -> float:
        if self.gamma == "scale":
            var = float(X.var())
            return 1.0 / (X.shape[1] * var) if var > 0 else 1.0
        return float(self.gamma)

    def fit(self, X: np.ndarray, labels: np.ndarray) -> "RbfSvc":
        X = np.asarray(X, dtype=np.float64)
        labels = np.asarray(labels)
        self.classes_ = np.unique(labels)
        self.gamma_ = self._resolve_gamma(X)
        self._machines: list[tuple[int, int, SmoBinarySvc]] = []
        for a in range(len(self.classes_)):
            for bidx in range(a + 1, len(self.classes_)):
                mask = (labels == self.classes_[a]) | (labels == self.classes_[bidx])
                y = np.where(labels[mask] == self.classes_[a], 1.0, -1.0)
                svc = SmoBinarySvc(
                    C=self.C, gamma=self.gamma_, tol=self.tol,
                    max_passes=self.max_passes, seed=self.seed,
                ).fit(X[mask], y)
                self._machines.append((a, bidx, svc))
        return self

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        n_cls = len(self.classes_)
        votes = np.zeros((X.shape[0], n_cls))
        confidence = np.zeros((X.shape[0], n_cls))
        for a, bidx, svc in self._machines:
            d = svc.decision_function(X)
            winner = np.where(d >= 0, a, bidx)
            votes[np.arange(X.shape[0]), winner] += 1
            confidence[:, a] += d
            confidence[:, bidx] -= d
        # vote ties resolved by summed decision values, then by class order
        winners = [
            min(range(n_cls), key=lambda c: (-votes[row, c], -confidence[row, c], c))
            for row in range(X.shape[0])
        ]
        return self.classes_[np.asarray(winners)]


@dataclass(frozen=True)
class SeparabilityResult:
    """Cross-validated multiclass accuracy for one feature count k."""

    k: int
    fold_accuracies: tuple[float, ...]
    mean_accuracy: float
    confusion: np.ndarray  # (classes, classes), rows = true

    def __post_init__(self):
        for a in self.fold_accuracies:
            if not (0.0 <= a <= 1.0):
                raise ValueError(f"fold accuracy out of range: {a}")


def stratified_folds(labels: np.ndarray, folds: int, seed: int) -> list[np.ndarray]:
    """Seeded stratified partition: shuffle within class, deal round-robin."""
    labels = np.asarray(labels)
    rng = np.random.Generator(np.random.PCG64(seed))
    assignment = np.empty(labels.shape[0], dtype=np.int64)
    for cls in np.unique(labels):
        idx = np.flatnonzero(labels == cls)
        if idx.size < folds:
            raise ValueError(
                f"class {cls!r} has {idx.size} samples, needs >= {folds}"
            )
        idx = rng.permutation(idx)
        assignment[idx] = np.arange(idx.size) % folds
    return [np.flatnonzero(assignment == f) for f in range(folds)]


def svc_train_eval(
    features: np.ndarray,
    labels: np.ndarray,
    folds: int = 5,
    C: float = 1.0,
    gamma: float | str = "scale",
    seed: int = 0,
) -> SeparabilityResult:
    """Stratified k-fold accuracy of the one-vs-one RBF SVC on given features."""
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    classes = np.unique(labels)
    cls_index = {c: i for i, c in enumerate(classes)}
    fold_idx = stratified_folds(labels, folds, seed)

    accuracies = []
    confusion = np.zeros((len(classes), len(classes)), dtype=np.int64)
    for f, test_idx in enumerate(fold_idx):
        train_mask = np.ones(labels.shape[0], dtype=bool)
        train_mask[test_idx] = False
        model = RbfSvc(C=C, gamma=gamma, seed=seed).fit(
            features[train_mask], labels[train_mask]
        )
        pred = model.predict(features[test_idx])
        accuracies.append(float(np.mean(pred == labels[test_idx])))
        for t, p in zip(labels[test_idx], pred):
            confusion[cls_index[t], cls_index[p]] += 1
    return SeparabilityResult(
        k=features.shape[1],
        fold_accuracies=tuple(accuracies),
        mean_accuracy=float(np.mean(accuracies)),
        confusion=confusion,
    )


DEFAULT_K_SWEEP = (1, 2, 5, 10, 20, 50)


def separability_sweep(
    images: np.ndarray,
    labels: np.ndarray,
    k_values: Sequence[int] | None = None,
    folds: int = 5,
    C: float = 1.0,
    gamma: float | str = "scale",
    seed: int = 0,
) -> list[SeparabilityResult]:
    """PCA on raw flattened pixels, then SVC accuracy per component count."""
    data = np.asarray(images, dtype=np.float64).reshape(len(images), -1)
    model = pca_fit(data)
    max_k = model.components.shape[0]
    if k_values is None:
        k_values = [k for k in DEFAULT_K_SWEEP if k <= max_k] + [max_k]
        k_values = sorted(set(k_values))
    results = []
    for k in k_values:
        if k > max_k:
            raise ValueError(f"k={k} exceeds available components ({max_k})")
        feats = model.transform(data, k)
        results.append(svc_train_eval(feats, labels, folds=folds, C=C, gamma=gamma, seed=seed))
    return results


# -- affine baselines ---------------------------------------------------------


@dataclass(frozen=True)
class AffinePoint:
    op: str
    param: float
    pixel_l2: float
    reduction_pct: float


#: Default parameter grids for the affine baseline sweep (artifact-chosen).
DEFAULT_AFFINE_SWEEPS: dict[str, tuple[float, ...]] = {
    "rotate": (-90, -45, -20, -10, -5, 5, 10, 20, 45, 90),
    "translate_x": (-8, -4, -2, -1, 1, 2, 4, 8),
    "translate_y": (-8, -4, -2, -1, 1, 2, 4, 8),
    "scale": (0.5, 0.75, 0.9, 1.1, 1.25, 1.5),
}


def _op_for(name: str, param: float) -> AffineOp:
    if name == "rotate":
        return Rotate(param)
    if name == "translate_x":
        return Translate(dx=param, dy=0.0)
    if name == "translate_y":
        return Translate(dx=0.0, dy=param)
    if name == "scale":
        return Scale(param)
    raise ValueError(f"unknown affine sweep op {name!r}")


def affine_baseline(
    reference: np.ndarray,
    evaluator,
    target_unit: int,
    target_layer: str = "readout",
    sweeps: Mapping[str, Sequence[float]] | None = None,
) -> list[AffinePoint]:
    """Pixel distance and response reduction for each affine sweep point.

    ``reference`` is an image-like (C, H, W) stimulus; its own response is the
    reduction baseline.
    """
    reference = np.asarray(reference)
    if reference.ndim != 3:
        raise EvaluatorError("affine baseline needs an image-like reference stimulus")
    sweeps = DEFAULT_AFFINE_SWEEPS if sweeps is None else sweeps

    transformed = [reference]
    meta: list[tuple[str, float]] = [("identity", 0.0)]
    for op_name, params in sweeps.items():
        for p in params:
            transformed.append(affine_transform(reference, _op_for(op_name, float(p))))
            meta.append((op_name, float(p)))

    batch = np.stack(transformed)
    taps = TapRequest({target_layer: np.asarray([target_unit])})
    acts = evaluator.evaluate_stimuli(batch, taps).activations[target_layer][:, 0]
    a_ref = float(acts[0])

    ref_flat = reference.reshape(-1).astype(np.float64)
    points = []
    for i in range(1, batch.shape[0]):
        op_name, param = meta[i]
        dist = float(np.linalg.norm(batch[i].reshape(-1).astype(np.float64) - ref_flat))
        points.append(AffinePoint(
            op=op_name,
            param=param,
            pixel_l2=dist,
            reduction_pct=activation_reduction_pct(float(acts[i]), a_ref),
        ))
    return points
