"""The post-deployment learning loop.

The registry holds everything the deployed classifier knows: the frozen
shared covariance, the background model, and one prototype per class seen so
far. Each stream sample is scored; OOD verdicts trigger one oracle query, and
the returned label either does nothing (an initial class), updates an
existing post-deployment class mean, or creates a new class. The shared
covariance is never touched after fitting, so classes never interfere:
learning a new class cannot degrade an old one.

The engine is a sequential state machine; snapshots of the registry are deep
and can be scored concurrently while the live registry keeps mutating.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Iterator, Protocol

import numpy as np

from .gaussian import (
    BackgroundModel,
    ClassPrototype,
    ClassState,
    SharedGaussianModel,
    as_feature_vector,
    update_mean,
)
from .scoring import Decision, ScoreMethod, Verdict, decide

__all__ = [
    "ArrayOracle",
    "ClassRegistry",
    "DEFAULT_PROMOTION_THRESHOLD",
    "LabelOracle",
    "ModelSnapshot",
    "Mutation",
    "OracleQueryError",
    "StreamOutcome",
    "process_sample",
    "restore",
    "run_stream",
    "snapshot",
]

DEFAULT_PROMOTION_THRESHOLD = 30

SNAPSHOT_VERSION = 1


class Mutation(Enum):
    NONE = "none"
    CREATED = "created"
    UPDATED = "updated"
    PROMOTED = "promoted"


class LabelOracle(Protocol):
    """Source of true class labels, keyed by sample index.

    Must be deterministic: the same index always yields the same label.
    """

    def label_of(self, index: int) -> int: ...


class ArrayOracle:
    """Oracle backed by a dense label array (the usual harness backend)."""

    def __init__(self, labels) -> None:
        self._labels = np.asarray(labels, dtype=np.int64)
        if self._labels.ndim != 1:
            raise ValueError("labels must be a 1-D array")

    def label_of(self, index: int) -> int:
        if not 0 <= index < self._labels.shape[0]:
            raise IndexError(f"sample index {index} outside oracle range")
        return int(self._labels[index])

    def __len__(self) -> int:
        return self._labels.shape[0]


@dataclass(frozen=True)
class StreamOutcome:
    """Audit record for one processed sample.

    ``asked`` is true exactly when the verdict was OOD (every detection costs
    one oracle query). ``ground_truth_ood`` is evaluated against the
    well-learned set at decision time, so a class flips to ground-truth-ID
    once it has been promoted. ``oracle_failed`` marks records written while
    propagating an oracle error; their label and ground truth are unknown.
    """

    index: int
    decision: Decision
    asked: bool
    oracle_label: int | None
    mutation: Mutation
    ground_truth_ood: bool
    oracle_failed: bool = False


class OracleQueryError(RuntimeError):
    """Oracle lookup failed; carries the flagged outcome for the sample."""

    def __init__(self, message: str, outcome: StreamOutcome) -> None:
        super().__init__(message)
        self.outcome = outcome


class ClassRegistry:
    """All classes known to the deployed model, plus the frozen metrics.

    Partition views (disjoint, covering every prototype):

    * ``initial_classes`` — fitted pre-deployment; means frozen.
    * ``promoted_classes`` — discovered in the stream and promoted after
      enough mean updates.
    * ``emerging_classes`` — discovered but still converging.

    Derived sets: ``well_learned_classes`` (initial + promoted; the classes a
    sample may be classified into), ``post_deployment_classes`` (promoted +
    emerging), and ``all_classes``.
    """

    def __init__(
        self,
        model: SharedGaussianModel,
        background: BackgroundModel,
        prototypes: Iterable[ClassPrototype],
        th: int = DEFAULT_PROMOTION_THRESHOLD,
    ) -> None:
        if th < 1:
            raise ValueError(f"promotion threshold must be positive, got {th}")
        self.model = model
        self.background = background
        self.th = int(th)
        self._protos: dict[int, ClassPrototype] = {}
        for proto in prototypes:
            if proto.class_id in self._protos:
                raise ValueError(f"duplicate class id {proto.class_id}")
            if proto.mu.shape[0] != model.dim:
                raise ValueError(
                    f"class {proto.class_id} mean has dimension "
                    f"{proto.mu.shape[0]}, model expects {model.dim}"
                )
            self._protos[proto.class_id] = proto
        if not any(p.state is not ClassState.EMERGING for p in self._protos.values()):
            raise ValueError("registry needs at least one well-learned class")

    @property
    def prototypes(self) -> dict[int, ClassPrototype]:
        """Live view of the prototype map; treat as read-only."""
        return self._protos

    def __contains__(self, class_id: int) -> bool:
        return class_id in self._protos

    def _ids_in_state(self, *states: ClassState) -> frozenset[int]:
        return frozenset(
            cid for cid, p in self._protos.items() if p.state in states
        )

    @property
    def initial_classes(self) -> frozenset[int]:
        return self._ids_in_state(ClassState.INITIAL)

    @property
    def promoted_classes(self) -> frozenset[int]:
        return self._ids_in_state(ClassState.WELL_LEARNED)

    @property
    def emerging_classes(self) -> frozenset[int]:
        return self._ids_in_state(ClassState.EMERGING)

    @property
    def well_learned_classes(self) -> frozenset[int]:
        return self._ids_in_state(ClassState.INITIAL, ClassState.WELL_LEARNED)

    @property
    def post_deployment_classes(self) -> frozenset[int]:
        return self._ids_in_state(ClassState.WELL_LEARNED, ClassState.EMERGING)

    @property
    def all_classes(self) -> frozenset[int]:
        return frozenset(self._protos)

    def well_learned_prototypes(self) -> list[ClassPrototype]:
        return [
            p for p in self._protos.values() if p.state is not ClassState.EMERGING
        ]

    def _absorb(self, proto: ClassPrototype) -> None:
        self._protos[proto.class_id] = proto


def process_sample(
    registry: ClassRegistry,
    z,
    index: int,
    oracle: LabelOracle,
    method: ScoreMethod,
) -> StreamOutcome:
    """Score one sample, query the oracle on detection, and learn the label.

    ID verdicts cost nothing and change nothing. OOD verdicts spend one
    oracle query; a label from an initial class is ignored (those means are
    frozen), any other label is folded into its class mean, creating the
    class if it was never seen. Promotion to well-learned happens on the
    update that reaches the registry threshold. The shared covariance is
    never modified.

    Raises:
        OracleQueryError: The oracle lookup failed; the exception carries the
            flagged outcome and the registry is left unmutated.
    """
    z = as_feature_vector(z, registry.model.dim)
    decision = decide(z, registry, method)
    asked = decision.verdict is Verdict.OOD

    try:
        true_label = oracle.label_of(index)
    except Exception as exc:
        flagged = StreamOutcome(
            index=index,
            decision=decision,
            asked=asked,
            oracle_label=None,
            mutation=Mutation.NONE,
            ground_truth_ood=False,
            oracle_failed=True,
        )
        raise OracleQueryError(f"oracle failed for sample {index}: {exc}", flagged) from exc

    ground_truth_ood = true_label not in registry.well_learned_classes

    mutation = Mutation.NONE
    oracle_label: int | None = None
    if asked:
        oracle_label = true_label
        if true_label in registry.initial_classes:
            pass  # pre-deployment class: nothing to learn
        elif true_label in registry:
            before = registry.prototypes[true_label]
            after = update_mean(before, z, registry.th)
            registry._absorb(after)
            promoted_now = (
                before.state is ClassState.EMERGING
                and after.state is ClassState.WELL_LEARNED
            )
            mutation = Mutation.PROMOTED if promoted_now else Mutation.UPDATED
        else:
            fresh = ClassPrototype(
                class_id=true_label,
                mu=np.zeros(registry.model.dim),
                count=0,
                state=ClassState.EMERGING,
            )
            registry._absorb(update_mean(fresh, z, registry.th))
            mutation = Mutation.CREATED

    return StreamOutcome(
        index=index,
        decision=decision,
        asked=asked,
        oracle_label=oracle_label,
        mutation=mutation,
        ground_truth_ood=ground_truth_ood,
    )


def run_stream(
    registry: ClassRegistry,
    stream: Iterable[tuple[int, np.ndarray]],
    oracle: LabelOracle,
    method: ScoreMethod,
) -> list[StreamOutcome]:
    """Fold ``process_sample`` over an ordered stream of (index, vector).

    Outcomes are returned in stream order; the registry reflects every
    mutation. Deterministic given the registry state, stream, and method.
    """
    return [process_sample(registry, z, index, oracle, method) for index, z in stream]


@dataclass(frozen=True)
class ModelSnapshot:
    """Deep, immutable copy of a registry, sufficient to rebuild it exactly.

    ``class_ids`` / ``states`` / ``counts`` / ``means`` are parallel, ordered
    by class id. ``sigma`` and the background statistics are stored raw; the
    factorizations are recomputed deterministically on restore.
    """

    version: int
    dim: int
    th: int
    ridge: float
    class_ids: tuple[int, ...]
    states: tuple[ClassState, ...]
    counts: tuple[int, ...]
    means: np.ndarray
    sigma: np.ndarray
    background_mu: np.ndarray
    background_sigma: np.ndarray

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ModelSnapshot):
            return NotImplemented
        return (
            self.version == other.version
            and self.dim == other.dim
            and self.th == other.th
            and self.ridge == other.ridge
            and self.class_ids == other.class_ids
            and self.states == other.states
            and self.counts == other.counts
            and np.array_equal(self.means, other.means)
            and np.array_equal(self.sigma, other.sigma)
            and np.array_equal(self.background_mu, other.background_mu)
            and np.array_equal(self.background_sigma, other.background_sigma)
        )

    def iter_prototypes(self) -> Iterator[ClassPrototype]:
        for i, cid in enumerate(self.class_ids):
            yield ClassPrototype(
                class_id=cid,
                mu=self.means[i],
                count=self.counts[i],
                state=self.states[i],
            )


def snapshot(registry: ClassRegistry) -> ModelSnapshot:
    """Capture the registry; the result shares no mutable state with it."""
    ordered = sorted(registry.prototypes.values(), key=lambda p: p.class_id)
    means = np.array([p.mu for p in ordered], dtype=np.float64)
    return ModelSnapshot(
        version=SNAPSHOT_VERSION,
        dim=registry.model.dim,
        th=registry.th,
        ridge=registry.model.ridge,
        class_ids=tuple(p.class_id for p in ordered),
        states=tuple(p.state for p in ordered),
        counts=tuple(p.count for p in ordered),
        means=means,
        sigma=np.array(registry.model.sigma, copy=True),
        background_mu=np.array(registry.background.mu, copy=True),
        background_sigma=np.array(registry.background.model.sigma, copy=True),
    )


def restore(snap: ModelSnapshot) -> ClassRegistry:
    """Rebuild a registry from a snapshot; round trips compare equal."""
    if snap.version != SNAPSHOT_VERSION:
        raise ValueError(
            f"snapshot version {snap.version} not supported "
            f"(expected {SNAPSHOT_VERSION})"
        )
    model = SharedGaussianModel(snap.sigma, ridge=snap.ridge)
    background = BackgroundModel(
        mu=snap.background_mu,
        model=SharedGaussianModel(snap.background_sigma, ridge=snap.ridge),
    )
    return ClassRegistry(
        model=model,
        background=background,
        prototypes=snap.iter_prototypes(),
        th=snap.th,
    )
