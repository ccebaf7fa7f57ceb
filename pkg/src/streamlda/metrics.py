"""Detection and classification metrics over stream outcomes.

Detection counts treat OOD as the positive class against a dynamic ground
truth: a sample is truly OOD when its class was not yet well-learned at the
moment it was scored, so a class's samples stop counting as OOD once the
class is promoted. Final accuracy is closed-set over every class the model
has ever seen, including ones still emerging.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .engine import (
    ClassRegistry,
    LabelOracle,
    ModelSnapshot,
    Mutation,
    StreamOutcome,
    restore,
    run_stream,
)
from .scoring import ScoreKind, ScoreMethod, Verdict
from .streams import LabeledEmbeddingSet, SampleStream

__all__ = [
    "AccuracyResult",
    "CalibrationRow",
    "DetectionTally",
    "RunReport",
    "SweepRow",
    "TaskCheckpoint",
    "build_report",
    "calibrate_threshold",
    "evaluate_accuracy",
    "promotion_threshold_sweep",
    "tally",
]


@dataclass(frozen=True)
class DetectionTally:
    """Confusion counts for OOD detection (OOD = positive class).

    ``degenerate`` flags the vacuous case of no positives anywhere (no OOD
    verdicts and no truly-OOD samples); the F-score is reported as 0 then.
    """

    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    @property
    def precision(self) -> float:
        denom = self.tp + self.fp
        return self.tp / denom if denom else 0.0

    @property
    def recall(self) -> float:
        denom = self.tp + self.fn
        return self.tp / denom if denom else 0.0

    @property
    def f_score(self) -> float:
        p, r = self.precision, self.recall
        return 2.0 * p * r / (p + r) if p + r > 0.0 else 0.0

    @property
    def degenerate(self) -> bool:
        return self.tp == 0 and self.fp == 0 and self.fn == 0


def tally(outcomes: list[StreamOutcome]) -> DetectionTally:
    """Count detection outcomes against their recorded ground truth."""
    tp = fp = fn = tn = 0
    for o in outcomes:
        flagged = o.decision.verdict is Verdict.OOD
        if flagged and o.ground_truth_ood:
            tp += 1
        elif flagged:
            fp += 1
        elif o.ground_truth_ood:
            fn += 1
        else:
            tn += 1
    return DetectionTally(tp=tp, fp=fp, fn=fn, tn=tn)


@dataclass(frozen=True)
class AccuracyResult:
    """Closed-set accuracy over a test set, split by class origin.

    ``id_*`` covers samples of the pre-deployment classes, ``ood_*`` the
    rest. Correct counts are integers so the decomposition
    ``correct_total == id_correct + ood_correct`` is exact.
    """

    total: float
    id_accuracy: float
    ood_accuracy: float
    n_total: int
    n_id: int
    n_ood: int
    correct_total: int
    id_correct: int
    ood_correct: int


def evaluate_accuracy(registry: ClassRegistry, test: LabeledEmbeddingSet) -> AccuracyResult:
    """Classify every test sample over all known classes and score it.

    Classification is nearest-mean under the shared-covariance distance with
    ties toward the smaller class id, evaluated in whitened space for the
    whole batch at once. Emerging classes are valid targets. A test sample
    whose class was never seen is simply counted wrong.
    """
    if len(test) == 0:
        raise ValueError("test set is empty")
    if test.dim != registry.model.dim:
        raise ValueError(
            f"test dimension {test.dim} does not match model {registry.model.dim}"
        )
    ordered = sorted(registry.prototypes.values(), key=lambda p: p.class_id)
    ids = np.array([p.class_id for p in ordered], dtype=np.int64)
    mus = np.stack([p.mu for p in ordered])

    white_mus = registry.model.whiten(mus)
    white_z = registry.model.whiten(test.vectors)
    # Squared distances via the norm expansion; only the argmin matters.
    sq = (
        np.sum(white_z * white_z, axis=1)[:, None]
        - 2.0 * white_z @ white_mus.T
        + np.sum(white_mus * white_mus, axis=1)[None, :]
    )
    predicted = ids[np.argmin(sq, axis=1)]

    initial = np.asarray(sorted(registry.initial_classes), dtype=np.int64)
    is_id = np.isin(test.labels, initial)
    correct = predicted == test.labels

    n_id = int(is_id.sum())
    n_ood = int(len(test) - n_id)
    id_correct = int(correct[is_id].sum())
    ood_correct = int(correct[~is_id].sum())
    return AccuracyResult(
        total=(id_correct + ood_correct) / len(test),
        id_accuracy=id_correct / n_id if n_id else 0.0,
        ood_accuracy=ood_correct / n_ood if n_ood else 0.0,
        n_total=len(test),
        n_id=n_id,
        n_ood=n_ood,
        correct_total=id_correct + ood_correct,
        id_correct=id_correct,
        ood_correct=ood_correct,
    )


@dataclass(frozen=True)
class TaskCheckpoint:
    """Cumulative detection state at a task boundary."""

    task: int
    end: int
    f_score: float
    precision: float
    recall: float
    asks: int
    asks_yielding_new: int
    classes_known: int


@dataclass(frozen=True)
class RunReport:
    """Everything a finished run reports; rendered by the report module."""

    f_score: float
    precision: float
    recall: float
    asks: int
    asks_yielding_new: int
    n_samples: int
    tally: DetectionTally
    created: int
    updated: int
    promoted: int
    classes_initial: int
    classes_promoted: int
    classes_emerging: int
    total_accuracy: float | None = None
    id_accuracy: float | None = None
    ood_accuracy: float | None = None
    accuracy: AccuracyResult | None = None
    task_checkpoints: tuple[TaskCheckpoint, ...] = ()
    degenerate_f: bool = False
    emerging_targets_in_eval: bool = True
    manifest: dict | None = None


def _count_asks(outcomes: list[StreamOutcome]) -> tuple[int, int]:
    asks = sum(1 for o in outcomes if o.asked)
    yielding = sum(1 for o in outcomes if o.mutation is not Mutation.NONE)
    return asks, yielding


def build_report(
    outcomes: list[StreamOutcome],
    registry: ClassRegistry,
    test: LabeledEmbeddingSet | None = None,
    task_boundaries: tuple[int, ...] = (),
    manifest: dict | None = None,
) -> RunReport:
    """Aggregate a finished run into a report.

    ``task_boundaries`` (cumulative end offsets) add per-task checkpoints;
    accuracy fields stay unset without a test set.
    """
    t = tally(outcomes)
    asks, yielding = _count_asks(outcomes)

    checkpoints: list[TaskCheckpoint] = []
    if task_boundaries:
        created_classes: set[int] = set()
        for task_idx, end in enumerate(task_boundaries):
            prefix = outcomes[:end]
            pt = tally(prefix)
            p_asks, p_yield = _count_asks(prefix)
            for o in prefix:
                if o.mutation is Mutation.CREATED:
                    created_classes.add(o.oracle_label)  # type: ignore[arg-type]
            checkpoints.append(
                TaskCheckpoint(
                    task=task_idx,
                    end=end,
                    f_score=pt.f_score,
                    precision=pt.precision,
                    recall=pt.recall,
                    asks=p_asks,
                    asks_yielding_new=p_yield,
                    classes_known=len(registry.initial_classes) + len(created_classes),
                )
            )

    acc = evaluate_accuracy(registry, test) if test is not None else None
    return RunReport(
        f_score=t.f_score,
        precision=t.precision,
        recall=t.recall,
        asks=asks,
        asks_yielding_new=yielding,
        n_samples=len(outcomes),
        tally=t,
        created=sum(1 for o in outcomes if o.mutation is Mutation.CREATED),
        updated=sum(1 for o in outcomes if o.mutation is Mutation.UPDATED),
        promoted=sum(1 for o in outcomes if o.mutation is Mutation.PROMOTED),
        classes_initial=len(registry.initial_classes),
        classes_promoted=len(registry.promoted_classes),
        classes_emerging=len(registry.emerging_classes),
        total_accuracy=acc.total if acc else None,
        id_accuracy=acc.id_accuracy if acc else None,
        ood_accuracy=acc.ood_accuracy if acc else None,
        accuracy=acc,
        task_checkpoints=tuple(checkpoints),
        degenerate_f=t.degenerate,
        manifest=manifest,
    )


@dataclass(frozen=True)
class CalibrationRow:
    threshold: float
    f_score: float
    precision: float
    recall: float
    asks: int


def calibrate_threshold(
    snap: ModelSnapshot,
    stream: SampleStream,
    oracle: LabelOracle,
    kind: ScoreKind,
    use_emerging: bool = True,
    candidates=None,
    n_candidates: int = 21,
) -> tuple[float, list[CalibrationRow]]:
    """Pick the confidence cutoff that maximizes F on a held-out stream.

    Without an explicit candidate grid, a pilot pass with an accept-all
    cutoff collects the confidence distribution of the stream against the
    initial model, and the candidates are its quantiles, which keeps the grid
    scale-free. Each candidate then replays the full protocol from the
    snapshot. Ties prefer balanced precision/recall, then the smaller cutoff.
    """
    if candidates is None:
        pilot = ScoreMethod(kind, -1e300, use_emerging=False)
        registry = restore(snap)
        confidences = [
            o.decision.confidence
            for o in run_stream(registry, stream.items(), oracle, pilot)
            if np.isfinite(o.decision.confidence)
        ]
        if not confidences:
            raise ValueError("no finite confidences observed; cannot calibrate")
        qs = np.linspace(0.02, 0.98, n_candidates)
        candidates = np.unique(np.quantile(np.asarray(confidences), qs))

    rows: list[CalibrationRow] = []
    for threshold in candidates:
        method = ScoreMethod(kind, float(threshold), use_emerging)
        registry = restore(snap)
        outcomes = run_stream(registry, stream.items(), oracle, method)
        t = tally(outcomes)
        rows.append(
            CalibrationRow(
                threshold=float(threshold),
                f_score=t.f_score,
                precision=t.precision,
                recall=t.recall,
                asks=sum(1 for o in outcomes if o.asked),
            )
        )

    best = min(
        rows,
        key=lambda r: (-r.f_score, abs(r.precision - r.recall), r.threshold),
    )
    return best.threshold, rows


@dataclass(frozen=True)
class SweepRow:
    """One promotion-threshold setting and everything it scored."""

    th: int
    f_score: float
    precision: float
    recall: float
    asks: int
    asks_yielding_new: int
    total_accuracy: float
    id_accuracy: float
    ood_accuracy: float


def promotion_threshold_sweep(
    snap: ModelSnapshot,
    stream: SampleStream,
    oracle: LabelOracle,
    method: ScoreMethod,
    test: LabeledEmbeddingSet,
    th_values=(10, 20, 30, 40, 50),
) -> list[SweepRow]:
    """Replay the same stream under different promotion thresholds.

    Each threshold restores a fresh registry from the snapshot, so runs are
    independent; rows come back in the order of ``th_values``.
    """
    rows: list[SweepRow] = []
    for th in th_values:
        registry = restore(dataclasses.replace(snap, th=int(th)))
        outcomes = run_stream(registry, stream.items(), oracle, method)
        t = tally(outcomes)
        asks, yielding = _count_asks(outcomes)
        acc = evaluate_accuracy(registry, test)
        rows.append(
            SweepRow(
                th=int(th),
                f_score=t.f_score,
                precision=t.precision,
                recall=t.recall,
                asks=asks,
                asks_yielding_new=yielding,
                total_accuracy=acc.total,
                id_accuracy=acc.id_accuracy,
                ood_accuracy=acc.ood_accuracy,
            )
        )
    return rows
