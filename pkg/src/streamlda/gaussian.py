"""Gaussian class statistics: per-class means, a shared covariance, and the
Mahalanobis metric built on its regularized Cholesky factorization.

All statistics are kept in double precision regardless of the storage
precision of the input embeddings. The shared covariance is frozen once
fitted; only per-class means of classes discovered later ever change, and
they change by value (``update_mean`` returns a new prototype).
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum

import numpy as np
from scipy.linalg import solve_triangular

__all__ = [
    "ClassPrototype",
    "ClassState",
    "BackgroundModel",
    "FactorizationError",
    "SharedGaussianModel",
    "as_feature_vector",
    "fit_initial",
    "update_mean",
]

# Relative symmetry tolerance accepted for an input covariance.
SYMMETRY_RTOL = 1e-9

# Default ridge strength; the added ridge is ridge * (trace(sigma)/dim) * I,
# so regularization is invariant to a global rescaling of the features.
DEFAULT_RIDGE = 1e-4


class FactorizationError(ValueError):
    """Covariance could not be factorized even after regularization."""


class ClassState(Enum):
    """Lifecycle of a class prototype.

    INITIAL classes were fitted before deployment and their means are frozen.
    Classes discovered in the stream start EMERGING and become WELL_LEARNED
    once their mean has been updated at least the promotion-threshold number
    of times.
    """

    INITIAL = "initial"
    EMERGING = "emerging"
    WELL_LEARNED = "well_learned"


def as_feature_vector(values, dim: int | None = None) -> np.ndarray:
    """Validate and normalize one feature vector to a float64 1-D array.

    Args:
        values: Array-like of real coordinates.
        dim: Expected length; checked when given.

    Raises:
        ValueError: On wrong rank, non-finite entries, or dimension mismatch.
    """
    z = np.asarray(values, dtype=np.float64)
    if z.ndim != 1:
        raise ValueError(f"feature vector must be 1-D, got shape {z.shape}")
    if dim is not None and z.shape[0] != dim:
        raise ValueError(f"feature vector has dimension {z.shape[0]}, expected {dim}")
    if not np.all(np.isfinite(z)):
        raise ValueError("feature vector contains non-finite entries")
    return z


def _frozen(a: np.ndarray) -> np.ndarray:
    out = np.array(a, dtype=np.float64, copy=True)
    out.flags.writeable = False
    return out


class SharedGaussianModel:
    """A frozen d-dimensional covariance with its regularized factorization.

    The model stores ``sigma`` as fitted and a lower-triangular Cholesky
    factor of ``sigma + ridge * scale * I``, where ``scale`` is the mean
    diagonal of sigma (``trace(sigma)/dim``), falling back to 1.0 when the
    trace is zero so a degenerate zero covariance still factorizes for any
    positive ridge. Distances are evaluated by triangular solves against
    the factor; the inverse is never formed explicitly.

    Instances are immutable: the arrays are read-only and no method mutates
    state, so one model may be shared freely across threads.
    """

    __slots__ = ("_sigma", "_ridge", "_scale", "_factor")

    def __init__(self, sigma, ridge: float = DEFAULT_RIDGE) -> None:
        sigma = np.asarray(sigma, dtype=np.float64)
        if sigma.ndim != 2 or sigma.shape[0] != sigma.shape[1]:
            raise ValueError(f"covariance must be square, got shape {sigma.shape}")
        if not np.all(np.isfinite(sigma)):
            raise ValueError("covariance contains non-finite entries")
        if ridge < 0:
            raise ValueError(f"ridge must be non-negative, got {ridge}")
        scale_ref = max(1.0, float(np.max(np.abs(sigma))))
        if np.max(np.abs(sigma - sigma.T)) > SYMMETRY_RTOL * scale_ref:
            raise ValueError("covariance is not symmetric within tolerance")
        sigma = 0.5 * (sigma + sigma.T)

        trace = float(np.trace(sigma))
        scale = trace / sigma.shape[0] if trace > 0.0 else 1.0
        regularized = sigma + (ridge * scale) * np.eye(sigma.shape[0])
        try:
            factor = np.linalg.cholesky(regularized)
        except np.linalg.LinAlgError as exc:
            raise FactorizationError(
                "regularized covariance is not positive definite; "
                "the data is degenerate or the ridge is too small"
            ) from exc

        self._sigma = _frozen(sigma)
        self._ridge = float(ridge)
        self._scale = scale
        self._factor = _frozen(factor)

    @property
    def dim(self) -> int:
        return self._sigma.shape[0]

    @property
    def sigma(self) -> np.ndarray:
        """The fitted covariance (read-only, without the ridge)."""
        return self._sigma

    @property
    def ridge(self) -> float:
        return self._ridge

    @property
    def factor(self) -> np.ndarray:
        """Lower-triangular Cholesky factor of the regularized covariance."""
        return self._factor

    def mahalanobis(self, z, mu) -> float:
        """Distance sqrt((z-mu)^T A^{-1} (z-mu)) with A the regularized covariance.

        Computed as the Euclidean norm of the triangular solve
        ``factor^{-1} (z - mu)``; exact zero when ``z == mu``.
        """
        z = as_feature_vector(z, self.dim)
        mu = as_feature_vector(mu, self.dim)
        y = solve_triangular(self._factor, z - mu, lower=True, check_finite=False)
        return float(np.sqrt(y @ y))

    def mahalanobis_many(self, z, mus: np.ndarray) -> np.ndarray:
        """Distances from one vector to each row of ``mus`` in a single solve."""
        z = as_feature_vector(z, self.dim)
        mus = np.asarray(mus, dtype=np.float64)
        if mus.ndim != 2 or mus.shape[1] != self.dim:
            raise ValueError(f"means must have shape (k, {self.dim}), got {mus.shape}")
        y = solve_triangular(self._factor, (z - mus).T, lower=True, check_finite=False)
        return np.sqrt(np.sum(y * y, axis=0))

    def whiten(self, x: np.ndarray) -> np.ndarray:
        """Map rows of ``x`` through factor^{-1}; distances become Euclidean."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.dim:
            raise ValueError(f"expected shape (n, {self.dim}), got {x.shape}")
        return solve_triangular(self._factor, x.T, lower=True, check_finite=False).T

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SharedGaussianModel):
            return NotImplemented
        return self._ridge == other._ridge and np.array_equal(self._sigma, other._sigma)

    def __repr__(self) -> str:
        return f"SharedGaussianModel(dim={self.dim}, ridge={self._ridge})"


@dataclass(frozen=True)
class BackgroundModel:
    """Class-agnostic mean and covariance fitted once on pre-deployment data.

    Used only by the relative distance score; immutable after fitting.
    """

    mu: np.ndarray
    model: SharedGaussianModel

    def distance(self, z) -> float:
        return self.model.mahalanobis(z, self.mu)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, BackgroundModel):
            return NotImplemented
        return np.array_equal(self.mu, other.mu) and self.model == other.model


@dataclass(frozen=True)
class ClassPrototype:
    """One class: its running mean, update count, and lifecycle state.

    For INITIAL classes ``count`` is the number of pre-deployment training
    samples and never changes. For stream-discovered classes ``count`` is the
    number of oracle-labeled samples folded into the mean so far.
    """

    class_id: int
    mu: np.ndarray
    count: int
    state: ClassState

    def __post_init__(self) -> None:
        object.__setattr__(self, "mu", _frozen(self.mu))
        if self.count < 0:
            raise ValueError(f"count must be non-negative, got {self.count}")


def update_mean(proto: ClassPrototype, z, th: int) -> ClassPrototype:
    """Fold one sample into a prototype's running mean.

    Applies ``mu' = (count * mu + z) / (count + 1)`` and increments the
    count; the state is recomputed against the promotion threshold ``th``
    (count >= th promotes an emerging class to WELL_LEARNED).

    Args:
        proto: Prototype to update; must not be an INITIAL class.
        z: Feature vector matching the prototype's dimension.
        th: Promotion threshold (number of updates needed to be well-learned).

    Returns:
        A new prototype; the input is left untouched.

    Raises:
        ValueError: If ``proto`` is INITIAL (pre-deployment means are frozen)
            or dimensions mismatch.
    """
    if proto.state is ClassState.INITIAL:
        raise ValueError(
            f"class {proto.class_id} was fitted pre-deployment; its mean is frozen"
        )
    if th < 1:
        raise ValueError(f"promotion threshold must be positive, got {th}")
    z = as_feature_vector(z, proto.mu.shape[0])
    new_count = proto.count + 1
    new_mu = (proto.count * proto.mu + z) / new_count
    new_state = ClassState.WELL_LEARNED if new_count >= th else ClassState.EMERGING
    return replace(proto, mu=new_mu, count=new_count, state=new_state)


def fit_initial(
    samples,
    labels,
    ridge: float = DEFAULT_RIDGE,
) -> tuple[list[ClassPrototype], SharedGaussianModel, BackgroundModel]:
    """Fit the pre-deployment model from labeled feature vectors.

    Produces one INITIAL prototype per class (mean over its samples, count =
    its sample count), the pooled within-class covariance with divisor N over
    all samples, and a background model holding the global mean and global
    covariance (also divisor N). Both covariances are factorized with the
    given ridge.

    Args:
        samples: Sequence of feature vectors or an (n, d) array.
        labels: Integer class id per sample; at least two distinct classes.
        ridge: Scale-relative regularization strength (see SharedGaussianModel).

    Returns:
        (prototypes sorted by class id, shared model, background model).

    Raises:
        ValueError: Empty input, a single class, or inconsistent dimensions.
        FactorizationError: Degenerate data that does not factorize.
    """
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError(f"samples must be a non-empty (n, d) array, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("samples contain non-finite entries")
    y = np.asarray(labels)
    if y.shape != (x.shape[0],):
        raise ValueError(f"labels must have shape ({x.shape[0]},), got {y.shape}")

    class_ids = np.unique(y)
    if class_ids.size < 2:
        raise ValueError(f"need at least 2 distinct classes, got {class_ids.size}")

    n, d = x.shape
    prototypes: list[ClassPrototype] = []
    residuals = np.empty_like(x)
    for cid in class_ids:
        mask = y == cid
        mu = x[mask].mean(axis=0)
        residuals[mask] = x[mask] - mu
        prototypes.append(
            ClassPrototype(
                class_id=int(cid),
                mu=mu,
                count=int(mask.sum()),
                state=ClassState.INITIAL,
            )
        )

    sigma = (residuals.T @ residuals) / n
    model = SharedGaussianModel(sigma, ridge=ridge)

    mu_global = x.mean(axis=0)
    centered = x - mu_global
    sigma_global = (centered.T @ centered) / n
    background = BackgroundModel(
        mu=_frozen(mu_global),
        model=SharedGaussianModel(sigma_global, ridge=ridge),
    )
    return prototypes, model, background
