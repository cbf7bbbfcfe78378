"""Tensor-product discretization of the joint state/parameter domain."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

STATE = "state"
PARAMETER = "parameter"


class GridRangeError(ValueError):
    """A dimension has an empty or inverted range, or too few nodes."""


@dataclass(frozen=True)
class DimSpec:
    label: str
    lower: float
    upper: float
    nodes: int
    kind: str = PARAMETER

    def __post_init__(self):
        if not self.lower < self.upper:
            raise GridRangeError(
                f"{self.label}: lower bound {self.lower} must be below upper bound {self.upper}"
            )
        if int(self.nodes) != self.nodes or self.nodes < 2:
            raise GridRangeError(f"{self.label}: need at least 2 nodes, got {self.nodes}")
        if self.kind not in (STATE, PARAMETER):
            raise GridRangeError(f"{self.label}: kind must be 'state' or 'parameter'")


@dataclass(frozen=True)
class GridSpec:
    """Ordered dimension records; states must precede parameters."""

    dims: tuple[DimSpec, ...]

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(self.dims))
        labels = [d.label for d in self.dims]
        if len(set(labels)) != len(labels):
            raise GridRangeError(f"duplicate dimension labels in {labels}")
        kinds = [d.kind for d in self.dims]
        if PARAMETER in kinds and STATE in kinds[kinds.index(PARAMETER):]:
            raise GridRangeError("state dimensions must come before parameter dimensions")

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(d.label for d in self.dims)

    @property
    def state_labels(self) -> tuple[str, ...]:
        return tuple(d.label for d in self.dims if d.kind == STATE)

    @property
    def param_labels(self) -> tuple[str, ...]:
        return tuple(d.label for d in self.dims if d.kind == PARAMETER)


@dataclass(frozen=True)
class DiscretizedDomain:
    spec: GridSpec
    nodes: tuple[np.ndarray, ...]
    steps: tuple[float, ...]

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(len(x) for x in self.nodes)

    @property
    def ndim(self) -> int:
        return len(self.nodes)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape, dtype=object))

    @property
    def n_states(self) -> int:
        return len(self.spec.state_labels)

    @property
    def volume(self) -> float:
        return float(np.prod([d.upper - d.lower for d in self.spec.dims]))

    def dim(self, label_or_index) -> int:
        if isinstance(label_or_index, str):
            try:
                return self.spec.labels.index(label_or_index)
            except ValueError:
                raise KeyError(f"no grid dimension named {label_or_index!r}") from None
        k = int(label_or_index)
        if not 0 <= k < self.ndim:
            raise IndexError(f"dimension {k} out of range for a {self.ndim}-dim grid")
        return k

    def coordinates(self, idx: np.ndarray) -> np.ndarray:
        """Node coordinates for an (N, d) array of multi-indices."""
        idx = np.asarray(idx, dtype=int)
        return np.stack([self.nodes[k][idx[:, k]] for k in range(self.ndim)], axis=1)

    def sub(self, labels: Sequence[str]) -> "DiscretizedDomain":
        """Domain restricted to the listed dimensions (in the given order)."""
        return build_grid(GridSpec(tuple(self.spec.dims[self.dim(lb)] for lb in labels)))


def build_grid(spec: GridSpec) -> DiscretizedDomain:
    """Cell-centered nodes: ``l + (k + 1/2) h`` with ``h = (u - l) / n``."""
    nodes, steps = [], []
    for d in spec.dims:
        h = (d.upper - d.lower) / d.nodes
        nodes.append(d.lower + (np.arange(d.nodes) + 0.5) * h)
        steps.append(h)
    return DiscretizedDomain(spec, tuple(nodes), tuple(steps))


def quadrature_weight(domain: DiscretizedDomain, dim) -> float:
    """Midpoint-rule weight of one node along ``dim``."""
    return domain.steps[domain.dim(dim)]


def linear_index(domain: DiscretizedDomain, multi) -> np.ndarray:
    """Row-major linear index (last dimension fastest)."""
    multi = np.asarray(multi, dtype=np.int64)
    shape = domain.shape
    if multi.shape[-1] != len(shape):
        raise IndexError(f"expected {len(shape)} indices per entry, got {multi.shape[-1]}")
    if np.any(multi < 0) or np.any(multi >= np.array(shape)):
        raise IndexError("multi-index out of range")
    return np.ravel_multi_index(tuple(np.moveaxis(multi, -1, 0)), shape)


def multi_index(domain: DiscretizedDomain, linear) -> np.ndarray:
    linear = np.asarray(linear, dtype=np.int64)
    if np.any(linear < 0) or np.any(linear >= domain.size):
        raise IndexError("linear index out of range")
    return np.stack(np.unravel_index(linear, domain.shape), axis=-1)
