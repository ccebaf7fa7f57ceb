"""Confidence scoring and the out-of-distribution decision rule.

Two scores are supported over the well-learned classes:

* MD: confidence is ``max_i 1 / dist_i`` where ``dist_i`` is the Mahalanobis
  distance to class i under the shared covariance. An exact mean hit gives
  infinite confidence.
* RMD: confidence is ``max_i -(dist_i - dist_bg)`` where ``dist_bg`` is the
  distance to the class-agnostic background model. Subtracting the background
  removes the part of the distance every class shares.

A sample is flagged OOD when its nearest class over all known classes is an
emerging one (still converging, so anything gravitating toward it needs a
label), or when the confidence over the well-learned classes falls below the
method threshold.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import TYPE_CHECKING, Iterable

import numpy as np

from .gaussian import (
    BackgroundModel,
    ClassPrototype,
    ClassState,
    SharedGaussianModel,
    as_feature_vector,
)

if TYPE_CHECKING:
    from .engine import ClassRegistry

__all__ = [
    "Decision",
    "Reason",
    "ScoreKind",
    "ScoreMethod",
    "Verdict",
    "classify_closed",
    "decide",
    "md_confidence",
    "rmd_confidence",
    "DEFAULT_MD_THRESHOLD",
    "DEFAULT_RMD_THRESHOLD",
]

DEFAULT_MD_THRESHOLD = 4.9
DEFAULT_RMD_THRESHOLD = 0.012


class ScoreKind(Enum):
    MD = "md"
    RMD = "rmd"


class Verdict(Enum):
    ID = "id"
    OOD = "ood"


class Reason(Enum):
    ABOVE_THRESHOLD = "above_threshold"
    BELOW_THRESHOLD = "below_threshold"
    NEAR_EMERGING = "near_emerging"


@dataclass(frozen=True)
class ScoreMethod:
    """Active score kind, its confidence cutoff, and the emerging-class rule.

    ``use_emerging=False`` disables the nearest-emerging-class check, leaving
    only the threshold rule (the ablation variant).
    """

    kind: ScoreKind
    threshold: float
    use_emerging: bool = True

    def __post_init__(self) -> None:
        if not math.isfinite(self.threshold):
            raise ValueError(f"threshold must be finite, got {self.threshold}")

    @classmethod
    def md(cls, threshold: float = DEFAULT_MD_THRESHOLD, use_emerging: bool = True) -> ScoreMethod:
        return cls(ScoreKind.MD, threshold, use_emerging)

    @classmethod
    def rmd(cls, threshold: float = DEFAULT_RMD_THRESHOLD, use_emerging: bool = True) -> ScoreMethod:
        return cls(ScoreKind.RMD, threshold, use_emerging)


@dataclass(frozen=True)
class Decision:
    """Outcome of scoring one sample.

    ``predicted_class`` is the nearest class under the active score over the
    classes the rule considered: the well-learned set for threshold verdicts,
    or the emerging class that triggered a NEAR_EMERGING verdict.
    ``confidence`` always carries the score over the well-learned classes.
    """

    verdict: Verdict
    predicted_class: int
    confidence: float
    reason: Reason


def _sorted_protos(protos: Iterable[ClassPrototype]) -> list[ClassPrototype]:
    ordered = sorted(protos, key=lambda p: p.class_id)
    if not ordered:
        raise ValueError("prototype set is empty")
    return ordered


def _distances(
    z, protos: list[ClassPrototype], model: SharedGaussianModel
) -> np.ndarray:
    mus = np.stack([p.mu for p in protos])
    return model.mahalanobis_many(z, mus)


def _md_conf_from_distances(dists: np.ndarray) -> tuple[float, int]:
    """(max of 1/dist, argmax index); a zero distance maps to +inf."""
    with np.errstate(divide="ignore"):
        conf = np.where(dists > 0.0, 1.0 / dists, np.inf)
    idx = int(np.argmax(conf))
    return float(conf[idx]), idx


def md_confidence(
    z,
    protos: Iterable[ClassPrototype],
    model: SharedGaussianModel,
) -> tuple[float, int]:
    """Confidence ``max_i 1/dist_i`` over well-learned prototypes.

    Args:
        protos: Non-empty prototypes, all INITIAL or WELL_LEARNED.
        model: Shared covariance model.

    Returns:
        (confidence, class id achieving it); ties go to the smallest id.
    """
    ordered = _require_well_learned(protos)
    dists = _distances(z, ordered, model)
    conf, idx = _md_conf_from_distances(dists)
    return conf, ordered[idx].class_id


def rmd_confidence(
    z,
    protos: Iterable[ClassPrototype],
    model: SharedGaussianModel,
    background: BackgroundModel,
) -> tuple[float, int]:
    """Confidence ``max_i -(dist_i - dist_bg)`` over well-learned prototypes.

    ``dist_bg`` is the distance to the background model, identical for every
    class, so the achieving class is the nearest one under plain distance.
    """
    ordered = _require_well_learned(protos)
    dists = _distances(z, ordered, model)
    bg_dist = background.distance(z)
    scores = bg_dist - dists
    idx = int(np.argmax(scores))
    return float(scores[idx]), ordered[idx].class_id


def _require_well_learned(protos: Iterable[ClassPrototype]) -> list[ClassPrototype]:
    ordered = _sorted_protos(protos)
    for p in ordered:
        if p.state is ClassState.EMERGING:
            raise ValueError(
                f"class {p.class_id} is still emerging; confidence is defined "
                "over well-learned classes only"
            )
    return ordered


def classify_closed(
    z,
    protos: Iterable[ClassPrototype],
    model: SharedGaussianModel,
) -> int:
    """Nearest-mean classification under the shared-covariance distance.

    Equal priors are assumed, so this matches the linear-discriminant argmax.
    Ties break toward the smallest class id.
    """
    ordered = _sorted_protos(protos)
    dists = _distances(z, ordered, model)
    return ordered[int(np.argmin(dists))].class_id


def decide(z, registry: "ClassRegistry", method: ScoreMethod) -> Decision:
    """Apply the full OOD decision rule against the current registry.

    Order of checks:

    1. When the emerging rule is active and emerging classes exist, find the
       nearest class over all known classes; if it is emerging, the sample is
       OOD with reason NEAR_EMERGING (it is routed to the oracle no matter
       how confident the well-learned classes are).
    2. Otherwise compute the method's confidence over the well-learned
       classes; below the threshold is OOD (BELOW_THRESHOLD), at or above is
       ID (ABOVE_THRESHOLD) predicted as the achieving class.
    """
    z = as_feature_vector(z, registry.model.dim)
    ordered = _sorted_protos(registry.prototypes.values())
    dists = _distances(z, ordered, registry.model)

    plus_idx = [i for i, p in enumerate(ordered) if p.state is not ClassState.EMERGING]
    if not plus_idx:
        raise ValueError("registry has no well-learned classes; state is corrupt")
    plus_dists = dists[plus_idx]

    if method.kind is ScoreKind.MD:
        confidence, local = _md_conf_from_distances(plus_dists)
    else:
        bg_dist = registry.background.distance(z)
        scores = bg_dist - plus_dists
        local = int(np.argmax(scores))
        confidence = float(scores[local])
    predicted = ordered[plus_idx[local]].class_id

    # The nearest class under either score is the one at minimum distance;
    # the background term is class-independent.
    if method.use_emerging:
        nearest = ordered[int(np.argmin(dists))]
        if nearest.state is ClassState.EMERGING:
            return Decision(
                verdict=Verdict.OOD,
                predicted_class=nearest.class_id,
                confidence=confidence,
                reason=Reason.NEAR_EMERGING,
            )

    if confidence < method.threshold:
        return Decision(
            verdict=Verdict.OOD,
            predicted_class=predicted,
            confidence=confidence,
            reason=Reason.BELOW_THRESHOLD,
        )
    return Decision(
        verdict=Verdict.ID,
        predicted_class=predicted,
        confidence=confidence,
        reason=Reason.ABOVE_THRESHOLD,
    )
