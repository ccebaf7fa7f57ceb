"""Dataset splitting, stream construction, and synthetic data.

Every random choice flows from a single 64-bit seed through a Philox
counter-based generator, so identical seeds reproduce identical splits and
streams on any platform. Splits carve each class into a training slice, an
application (stream) slice, an optional calibration slice, and a remainder;
half of the classes (by default) are withheld from training entirely and only
ever appear in the stream.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .engine import ArrayOracle

__all__ = [
    "DatasetSplit",
    "LabeledEmbeddingSet",
    "SampleStream",
    "SplitSpec",
    "app_pool",
    "build_calibration_stream",
    "build_class_incremental_stream",
    "build_random_stream",
    "calibration_pool",
    "class_incremental_from_pool",
    "concat_sets",
    "make_rng",
    "split",
    "stream_from_pool",
    "synth_generate",
]


def make_rng(seed: int) -> np.random.Generator:
    """The project-wide PRNG: Philox, keyed by a 64-bit seed."""
    return np.random.Generator(np.random.Philox(seed))


@dataclass(frozen=True)
class LabeledEmbeddingSet:
    """Feature vectors with integer class labels.

    ``vectors`` is (n, d) float64 and ``labels`` (n,) int64; labels must be
    non-negative. ``class_names`` optionally maps ids to display names.
    """

    vectors: np.ndarray
    labels: np.ndarray
    class_names: dict[int, str] | None = None

    def __post_init__(self) -> None:
        vectors = np.asarray(self.vectors, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if vectors.ndim != 2:
            raise ValueError(f"vectors must be (n, d), got shape {vectors.shape}")
        if labels.shape != (vectors.shape[0],):
            raise ValueError(
                f"labels must have shape ({vectors.shape[0]},), got {labels.shape}"
            )
        if not np.all(np.isfinite(vectors)):
            raise ValueError("vectors contain non-finite entries")
        if labels.size and labels.min() < 0:
            raise ValueError("class labels must be non-negative")
        object.__setattr__(self, "vectors", vectors)
        object.__setattr__(self, "labels", labels)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self) -> int:
        return self.vectors.shape[0]

    def records(self) -> Iterator[tuple[int, np.ndarray]]:
        for i in range(len(self)):
            yield int(self.labels[i]), self.vectors[i]

    def restricted_to(self, class_ids) -> LabeledEmbeddingSet:
        mask = np.isin(self.labels, np.asarray(list(class_ids)))
        return LabeledEmbeddingSet(self.vectors[mask], self.labels[mask], self.class_names)


def concat_sets(*sets: LabeledEmbeddingSet) -> LabeledEmbeddingSet:
    dims = {s.dim for s in sets}
    if len(dims) != 1:
        raise ValueError(f"cannot concatenate sets of differing dimension: {dims}")
    return LabeledEmbeddingSet(
        np.concatenate([s.vectors for s in sets]),
        np.concatenate([s.labels for s in sets]),
    )


@dataclass(frozen=True)
class SplitSpec:
    """Parameters of a deterministic dataset split.

    ``id_class_fraction`` of the classes become training classes; the rest
    only appear post-deployment. Per class, ``train_per_class`` samples go to
    training (discarded for withheld classes), ``app_per_class`` to the
    stream, and ``cal_per_class`` to an optional held-out calibration slice.
    """

    seed: int
    id_class_fraction: float = 0.5
    app_per_class: int = 50
    train_per_class: int = 450
    cal_per_class: int = 0

    def __post_init__(self) -> None:
        if not 0.0 < self.id_class_fraction <= 1.0:
            raise ValueError(
                f"id_class_fraction must be in (0, 1], got {self.id_class_fraction}"
            )
        if self.app_per_class < 1 or self.train_per_class < 1 or self.cal_per_class < 0:
            raise ValueError("per-class sample counts out of range")

    @property
    def per_class_need(self) -> int:
        return self.train_per_class + self.app_per_class + self.cal_per_class


@dataclass(frozen=True)
class DatasetSplit:
    """Outcome of ``split``: disjoint class halves and per-class sample slices."""

    spec: SplitSpec
    id_classes: tuple[int, ...]
    ood_classes: tuple[int, ...]
    id_train: LabeledEmbeddingSet
    id_app: LabeledEmbeddingSet
    ood_app: LabeledEmbeddingSet
    test: LabeledEmbeddingSet
    id_cal: LabeledEmbeddingSet | None = None
    ood_cal: LabeledEmbeddingSet | None = None

    def manifest(self) -> dict:
        out = {
            "seed": self.spec.seed,
            "id_class_fraction": self.spec.id_class_fraction,
            "train_per_class": self.spec.train_per_class,
            "app_per_class": self.spec.app_per_class,
            "cal_per_class": self.spec.cal_per_class,
            "id_classes": list(self.id_classes),
            "ood_classes": list(self.ood_classes),
            "counts": {
                "id_train": len(self.id_train),
                "id_app": len(self.id_app),
                "ood_app": len(self.ood_app),
                "test": len(self.test),
            },
        }
        if self.id_cal is not None:
            out["counts"]["id_cal"] = len(self.id_cal)
            out["counts"]["ood_cal"] = len(self.ood_cal)
        return out


def split(
    dataset: LabeledEmbeddingSet,
    spec: SplitSpec,
    test: LabeledEmbeddingSet | None = None,
) -> DatasetSplit:
    """Partition classes and samples deterministically.

    Classes are shuffled by the seeded generator and cut at
    ``id_class_fraction``; per-class sample selection is a second seeded
    shuffle consumed in ascending class order, so the result depends only on
    (dataset, spec). When ``test`` is given it is used verbatim as the
    held-out evaluation set; otherwise each class's leftover samples (beyond
    the train/app/cal slices) form it. Withheld-class training slices are
    discarded either way.

    Raises:
        ValueError: Non-dense class labels, a class with too few samples, or
            a fraction leaving either class half empty.
    """
    labels = dataset.labels
    class_ids = np.unique(labels)
    n_classes = class_ids.size
    if n_classes < 2:
        raise ValueError("dataset must contain at least 2 classes")
    if not np.array_equal(class_ids, np.arange(n_classes)):
        raise ValueError("class labels must be dense integers 0..K-1")
    if test is not None and test.dim != dataset.dim:
        raise ValueError(
            f"test set dimension {test.dim} does not match dataset {dataset.dim}"
        )

    n_id = int(round(spec.id_class_fraction * n_classes))
    if n_id < 1 or n_id >= n_classes:
        raise ValueError(
            f"id_class_fraction {spec.id_class_fraction} leaves an empty class half "
            f"({n_id} of {n_classes} classes)"
        )

    rng = make_rng(spec.seed)
    order = rng.permutation(n_classes)
    id_set = frozenset(int(c) for c in order[:n_id])

    per_class_rows: dict[int, dict[str, np.ndarray]] = {}
    for cid in range(n_classes):
        rows = np.flatnonzero(labels == cid)
        if rows.size < spec.per_class_need:
            raise ValueError(
                f"class {cid} has {rows.size} samples, "
                f"needs {spec.per_class_need} (train+app+cal)"
            )
        picked = rows[rng.permutation(rows.size)]
        a = spec.train_per_class
        b = a + spec.app_per_class
        c = b + spec.cal_per_class
        per_class_rows[cid] = {
            "train": picked[:a],
            "app": picked[a:b],
            "cal": picked[b:c],
            "rest": picked[c:],
        }

    def gather(ids, part: str) -> LabeledEmbeddingSet:
        rows = np.concatenate(
            [per_class_rows[c][part] for c in ids]
            or [np.empty(0, dtype=np.int64)]
        )
        return LabeledEmbeddingSet(dataset.vectors[rows], dataset.labels[rows])

    id_sorted = sorted(id_set)
    ood_sorted = sorted(set(range(n_classes)) - id_set)
    id_cal = ood_cal = None
    if spec.cal_per_class > 0:
        id_cal = gather(id_sorted, "cal")
        ood_cal = gather(ood_sorted, "cal")

    return DatasetSplit(
        spec=spec,
        id_classes=tuple(id_sorted),
        ood_classes=tuple(ood_sorted),
        id_train=gather(id_sorted, "train"),
        id_app=gather(id_sorted, "app"),
        ood_app=gather(ood_sorted, "app"),
        test=test if test is not None else gather(range(n_classes), "rest"),
        id_cal=id_cal,
        ood_cal=ood_cal,
    )


def app_pool(split: DatasetSplit) -> LabeledEmbeddingSet:
    """The stream sample pool; stream indices point into this set."""
    return concat_sets(split.id_app, split.ood_app)


def calibration_pool(split: DatasetSplit) -> LabeledEmbeddingSet:
    if split.id_cal is None or split.ood_cal is None:
        raise ValueError("split was built without a calibration slice")
    return concat_sets(split.id_cal, split.ood_cal)


@dataclass(frozen=True)
class SampleStream:
    """An ordered arrival of pool samples, with task boundaries.

    ``order`` holds pool indices; ``task_boundaries`` are cumulative end
    offsets into the stream (a single boundary for a random stream). The
    matching oracle answers queries by pool index.
    """

    pool: LabeledEmbeddingSet
    order: np.ndarray
    task_boundaries: tuple[int, ...]
    seed: int
    setup: str

    def __len__(self) -> int:
        return self.order.shape[0]

    def items(self) -> Iterator[tuple[int, np.ndarray]]:
        for idx in self.order:
            yield int(idx), self.pool.vectors[idx]

    def oracle(self) -> ArrayOracle:
        return ArrayOracle(self.pool.labels)

    def manifest(self) -> dict:
        return {
            "setup": self.setup,
            "seed": self.seed,
            "samples": len(self),
            "tasks": len(self.task_boundaries),
            "task_boundaries": list(self.task_boundaries),
        }


def stream_from_pool(
    pool: LabeledEmbeddingSet, seed: int, setup: str = "random"
) -> SampleStream:
    """Uniform shuffle of an arbitrary sample pool."""
    rng = make_rng(seed)
    order = rng.permutation(len(pool))
    return SampleStream(
        pool=pool,
        order=order,
        task_boundaries=(len(pool),),
        seed=seed,
        setup=setup,
    )


def build_random_stream(split: DatasetSplit, seed: int) -> SampleStream:
    """Uniform shuffle of the full application pool (the main arrival model)."""
    return stream_from_pool(app_pool(split), seed, "random")


def build_calibration_stream(split: DatasetSplit, seed: int) -> SampleStream:
    """Uniform shuffle of the held-out calibration pool."""
    return stream_from_pool(calibration_pool(split), seed, "calibration")


def class_incremental_from_pool(
    pool: LabeledEmbeddingSet,
    ood_class_ids,
    tasks: int,
    seed: int,
) -> SampleStream:
    """Task-structured arrival over an arbitrary pool (see the split variant)."""
    if tasks < 1:
        raise ValueError(f"tasks must be >= 1, got {tasks}")
    ood_class_ids = sorted(int(c) for c in ood_class_ids)
    n_ood_classes = len(ood_class_ids)
    if tasks > n_ood_classes:
        raise ValueError(
            f"cannot spread {n_ood_classes} withheld classes over {tasks} tasks"
        )

    rng = make_rng(seed)
    class_order = np.asarray(ood_class_ids)[rng.permutation(n_ood_classes)]
    base_c = n_ood_classes // tasks
    class_chunks = [class_order[i * base_c : (i + 1) * base_c] for i in range(tasks - 1)]
    class_chunks.append(class_order[(tasks - 1) * base_c :])

    id_positions = np.flatnonzero(~np.isin(pool.labels, class_order))
    id_positions = id_positions[rng.permutation(id_positions.size)]
    base_n = id_positions.size // tasks
    id_chunks = [id_positions[i * base_n : (i + 1) * base_n] for i in range(tasks - 1)]
    id_chunks.append(id_positions[(tasks - 1) * base_n :])

    pieces: list[np.ndarray] = []
    boundaries: list[int] = []
    total = 0
    for t in range(tasks):
        ood_positions = np.flatnonzero(np.isin(pool.labels, class_chunks[t]))
        members = np.concatenate([id_chunks[t], ood_positions])
        members = members[rng.permutation(members.size)]
        pieces.append(members)
        total += members.size
        boundaries.append(total)

    return SampleStream(
        pool=pool,
        order=np.concatenate(pieces),
        task_boundaries=tuple(boundaries),
        seed=seed,
        setup="class-incremental",
    )


def build_class_incremental_stream(
    split: DatasetSplit,
    tasks: int = 5,
    seed: int = 0,
) -> SampleStream:
    """Group withheld classes into sequential tasks.

    The withheld classes are shuffled and dealt evenly into ``tasks`` groups
    (a non-divisible remainder goes to the last task). Each task interleaves
    an equal share of the training-class stream samples with all stream
    samples of its own classes, shuffled within the task; tasks then run
    strictly one after another.

    Raises:
        ValueError: tasks < 1 or tasks exceeding the withheld class count.
    """
    return class_incremental_from_pool(
        app_pool(split), split.ood_classes, tasks, seed
    )


def synth_generate(
    num_classes: int,
    dim: int,
    samples_per_class: int,
    spread: float,
    covariance=1.0,
    seed: int = 0,
) -> LabeledEmbeddingSet:
    """Draw a synthetic dataset matching the model's own assumptions.

    Class means sit on a sphere of radius ``spread`` (zero collapses all
    classes onto one point); samples are normal around their class mean with
    one covariance shared by every class. ``covariance`` may be a scalar
    (isotropic), a length-d diagonal, or a full (d, d) matrix; it must be
    positive definite. Fully determined by ``seed``.
    """
    if num_classes < 1 or dim < 1 or samples_per_class < 1:
        raise ValueError("num_classes, dim and samples_per_class must be positive")
    if spread < 0:
        raise ValueError(f"spread must be non-negative, got {spread}")

    cov = np.asarray(covariance, dtype=np.float64)
    if cov.ndim == 0:
        cov = float(cov) * np.eye(dim)
    elif cov.ndim == 1:
        if cov.shape[0] != dim:
            raise ValueError(f"diagonal covariance must have length {dim}")
        cov = np.diag(cov)
    elif cov.shape != (dim, dim):
        raise ValueError(f"covariance must be ({dim}, {dim}), got {cov.shape}")
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise ValueError("covariance spec is not positive definite") from exc

    rng = make_rng(seed)
    directions = rng.standard_normal((num_classes, dim))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    means = spread * directions

    vectors = np.empty((num_classes * samples_per_class, dim))
    labels = np.empty(num_classes * samples_per_class, dtype=np.int64)
    for c in range(num_classes):
        block = slice(c * samples_per_class, (c + 1) * samples_per_class)
        vectors[block] = means[c] + rng.standard_normal((samples_per_class, dim)) @ chol.T
        labels[block] = c
    return LabeledEmbeddingSet(vectors, labels)
