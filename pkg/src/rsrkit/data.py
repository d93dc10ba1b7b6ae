"""Point clouds and their ground truth."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import DimensionError, InvalidDataset
from .spectral import as_basis, complement_basis


@dataclass
class Dataset:
    """A ``D x N`` point cloud; column ``i`` is point ``x_i``.

    ``labels`` is an optional boolean array, ``True`` marking inliers.
    """

    points: np.ndarray
    labels: Optional[np.ndarray] = None

    def __post_init__(self):
        X = np.asarray(self.points, dtype=float)
        if X.ndim != 2:
            raise InvalidDataset(f"points must be a D x N array, got shape {X.shape}")
        if not np.all(np.isfinite(X)):
            raise InvalidDataset("points contain non-finite values")
        norms = np.linalg.norm(X, axis=0)
        if np.any(norms == 0):
            raise InvalidDataset(f"point {int(np.argmin(norms))} is zero")
        self.points = X
        if self.labels is not None:
            labels = np.asarray(self.labels, dtype=bool)
            if labels.shape != (X.shape[1],):
                raise InvalidDataset(f"expected {X.shape[1]} labels, got {labels.shape}")
            self.labels = labels

    @property
    def ambient_dim(self) -> int:
        return self.points.shape[0]

    @property
    def count(self) -> int:
        return self.points.shape[1]

    def _need_labels(self):
        if self.labels is None:
            raise InvalidDataset("dataset has no inlier/outlier labels")
        return self.labels

    @property
    def inliers(self) -> np.ndarray:
        return self.points[:, self._need_labels()]

    @property
    def outliers(self) -> np.ndarray:
        return self.points[:, ~self._need_labels()]

    @property
    def n1(self) -> int:
        return int(self._need_labels().sum())

    @property
    def n0(self) -> int:
        return int((~self._need_labels()).sum())

    def scaled(self, factor: float) -> "Dataset":
        return Dataset(self.points * factor, None if self.labels is None else self.labels.copy())


@dataclass
class GroundTruth:
    """The underlying subspace ``L*`` and the per-point labels."""

    basis: np.ndarray
    labels: np.ndarray
    noise_epsilon: Optional[float] = None
    _complement: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.basis = as_basis(self.basis)
        self.labels = np.asarray(self.labels, dtype=bool)
        if self.labels.ndim != 1:
            raise DimensionError("labels must be one-dimensional")

    @property
    def d(self) -> int:
        return self.basis.shape[1]

    @property
    def D(self) -> int:
        return self.basis.shape[0]

    @property
    def complement(self) -> np.ndarray:
        if self._complement is None:
            self._complement = complement_basis(self.basis)
        return self._complement

    def check(self, data: Dataset) -> None:
        if data.ambient_dim != self.D:
            raise DimensionError(f"data lives in R^{data.ambient_dim}, subspace in R^{self.D}")
        if self.labels.shape[0] != data.count:
            raise DimensionError(f"{self.labels.shape[0]} labels for {data.count} points")

    def labelled(self, data: Dataset) -> Dataset:
        """``data`` with this ground truth's labels attached."""
        self.check(data)
        return Dataset(data.points, self.labels)
