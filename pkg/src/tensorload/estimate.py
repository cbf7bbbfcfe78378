"""Marginals, point estimates, sensitivity indices and the enumeration oracle."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.signal import peak_prominences

from .grid import DiscretizedDomain
from .load_model import CompositeLoadParams, rmse, simulate_response
from .tt import TtVector


class DegenerateDensityError(ValueError):
    """A marginal has no mass, so it has no mode."""


@dataclass(frozen=True)
class MarginalPdf:
    label: str
    nodes: np.ndarray
    values: np.ndarray

    @property
    def step(self) -> float:
        return float(self.nodes[1] - self.nodes[0]) if len(self.nodes) > 1 else 1.0

    def integral(self) -> float:
        return float(np.sum(self.values) * self.step)

    def probabilities(self) -> np.ndarray:
        return self.values * self.step


@dataclass
class EstimationResult:
    params: CompositeLoadParams
    estimated: tuple[str, ...]
    local_optima: dict
    marginals: dict
    rmse_P: float
    rmse_Q: float
    joint_argmax: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "estimate": {k: float(v) for k, v in self.params.as_dict().items()},
            "estimated_parameters": list(self.estimated),
            "joint_argmax": {k: float(v) for k, v in self.joint_argmax.items()},
            "local_optima": {k: [[float(a), float(b)] for a, b in v]
                             for k, v in self.local_optima.items()},
            "marginals": {k: {"nodes": [float(x) for x in m.nodes],
                              "density": [float(x) for x in m.values]}
                          for k, m in self.marginals.items()},
            "rmse_P": float(self.rmse_P),
            "rmse_Q": float(self.rmse_Q),
            "diagnostics": _plain(self.diagnostics),
        }

    def to_json(self) -> str:
        """Deterministic JSON (sorted keys, shortest round-trip floats)."""
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def _plain(obj):
    if isinstance(obj, Mapping):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    return obj


# -- marginals ----------------------------------------------------------------------


def _weights_except(domain: DiscretizedDomain, keep: Sequence[int]):
    return [None if k in keep else np.full(n, h)
            for k, (n, h) in enumerate(zip(domain.shape, domain.steps))]


def marginal(p: TtVector, domain: DiscretizedDomain, dim) -> MarginalPdf:
    """Univariate density of one dimension (midpoint rule over the others)."""
    k = domain.dim(dim)
    v = p.contract(_weights_except(domain, [k]))
    values = np.asarray(v.full() if isinstance(v, TtVector) else v, dtype=float).reshape(-1)
    total = values.sum() * domain.steps[k]
    if total <= 0 or not np.isfinite(total):
        raise DegenerateDensityError(f"marginal of {domain.spec.labels[k]} has no mass")
    return MarginalPdf(domain.spec.labels[k], domain.nodes[k].copy(),
                       np.maximum(values / total, 0.0))


def joint_marginal_2d(p: TtVector, domain: DiscretizedDomain, dim_a, dim_b) -> np.ndarray:
    """Bivariate density table indexed ``[node_a, node_b]`` with unit integral."""
    a, b = domain.dim(dim_a), domain.dim(dim_b)
    if a == b:
        raise ValueError("joint marginal needs two different dimensions")
    v = p.contract(_weights_except(domain, [a, b]))
    table = v.full().reshape(domain.shape[min(a, b)], domain.shape[max(a, b)])
    if a > b:
        table = table.T
    total = table.sum() * domain.steps[a] * domain.steps[b]
    if total <= 0:
        raise DegenerateDensityError("joint marginal has no mass")
    return np.maximum(table / total, 0.0)


def marginal_from_table(table: np.ndarray, nodes: Sequence[np.ndarray], labels: Sequence[str],
                        dim: int) -> MarginalPdf:
    """Marginal of a dense density table (used for the enumeration oracle)."""
    steps = [float(x[1] - x[0]) if len(x) > 1 else 1.0 for x in nodes]
    others = tuple(k for k in range(table.ndim) if k != dim)
    values = table.sum(axis=others) * math.prod(steps[k] for k in others)
    total = values.sum() * steps[dim]
    if total <= 0:
        raise DegenerateDensityError(f"marginal of {labels[dim]} has no mass")
    return MarginalPdf(labels[dim], np.asarray(nodes[dim], dtype=float).copy(), values / total)


# -- point estimates ----------------------------------------------------------------


def mode(m: MarginalPdf, refine: bool = False) -> float:
    """Coordinate of the largest density; ties go to the lower coordinate.

    With ``refine`` the vertex of the parabola through the mode and its two
    neighbours is returned (clipped to the neighbouring nodes).
    """
    v = np.asarray(m.values, dtype=float)
    if not np.any(v > 0):
        raise DegenerateDensityError(f"marginal of {m.label} is identically zero")
    k = int(np.argmax(v))
    x = float(m.nodes[k])
    if not refine or k == 0 or k == len(v) - 1:
        return x
    y0, y1, y2 = v[k - 1], v[k], v[k + 1]
    curv = y0 - 2 * y1 + y2
    if curv >= 0:
        return x
    offset = 0.5 * (y0 - y2) / curv
    return x + float(np.clip(offset, -1.0, 1.0)) * m.step


def argmax_params(marginals: Mapping[str, MarginalPdf] | Sequence[MarginalPdf],
                  refine: bool = False) -> dict:
    items = marginals.values() if isinstance(marginals, Mapping) else marginals
    out = {m.label: mode(m, refine) for m in items}
    if not out:
        raise ValueError("no marginals given")
    return out


def local_maxima(m: MarginalPdf, min_prominence: float = 0.0) -> list[tuple[float, float]]:
    """Interior strict local maxima with prominence >= ``min_prominence``.

    Sorted by density, highest first.
    """
    if min_prominence < 0:
        raise ValueError("min_prominence must be nonnegative")
    v = np.asarray(m.values, dtype=float)
    if v.size < 3:
        return []
    peaks = np.nonzero((v[1:-1] > v[:-2]) & (v[1:-1] > v[2:]))[0] + 1
    if peaks.size == 0:
        return []
    prom = peak_prominences(v, peaks)[0]
    keep = peaks[prom >= min_prominence]
    order = sorted(keep, key=lambda i: (-v[i], m.nodes[i]))
    return [(float(m.nodes[i]), float(v[i])) for i in order]


# -- sensitivity --------------------------------------------------------------------


@dataclass(frozen=True)
class SensitivityIndex:
    label: str
    concentration: float | None
    variance: float | None


def concentration_index(m: MarginalPdf) -> float:
    """``1 - H / log(n)`` with H the entropy of the node probabilities."""
    p = m.probabilities()
    p = p / p.sum()
    nz = p[p > 0]
    if len(p) < 2:
        return 1.0
    h = -float(np.sum(nz * np.log(nz)))
    return float(min(1.0, max(0.0, 1.0 - h / math.log(len(p)))))


def variance_indices(response: np.ndarray, labels: Sequence[str]) -> dict:
    """First-order variance indices of a full-factorial response table.

    Each axis is one input on a uniform design; the index of input j is
    ``Var(E[Y | X_j]) / Var(Y)``. Infeasible (NaN) cells are dropped from
    the conditional means.
    """
    response = np.asarray(response, dtype=float)
    if response.ndim > 3:
        raise ValueError(
            f"brute-force sweeps are limited to 3 parameters (got {response.ndim}); "
            "use the density-based concentration index for more"
        )
    if response.ndim != len(labels):
        raise ValueError("one label per response axis is required")
    total = np.nanvar(response)
    out = {}
    for j, lb in enumerate(labels):
        others = tuple(k for k in range(response.ndim) if k != j)
        cond = np.nanmean(response, axis=others) if others else response
        out[lb] = float(np.nanvar(cond) / total) if total > 0 else 0.0
    return out


def sensitivity_indices(marginals: Mapping[str, MarginalPdf] | None = None,
                        sweep: tuple[np.ndarray, Sequence[str]] | None = None) -> dict:
    """Concentration (from marginals) and variance (from a sweep) per parameter."""
    conc = {k: concentration_index(m) for k, m in (marginals or {}).items()}
    var = variance_indices(*sweep) if sweep is not None else {}
    labels = list(dict.fromkeys(list(conc) + list(var)))
    return {lb: SensitivityIndex(lb, conc.get(lb), var.get(lb)) for lb in labels}


# -- fit evaluation and enumeration ----------------------------------------------


def combined_rmse(P_hat, Q_hat, trace) -> np.ndarray:
    """RMSE over both channels: ``sqrt((rmse_P^2 + rmse_Q^2) / 2)`` (time last)."""
    P = np.array([m.P for m in trace])
    Q = np.array([m.Q for m in trace])
    return np.sqrt(0.5 * (np.mean((P_hat - P) ** 2, axis=-1) + np.mean((Q_hat - Q) ** 2, axis=-1)))


def response_from_estimate(params: CompositeLoadParams, trace, **sim_kw):
    """Simulated (P, Q) for ``params`` and their RMSE against the trace."""
    trace = list(trace)
    P_hat, Q_hat = simulate_response(trace, params, **sim_kw)
    r_p = rmse(P_hat, [m.P for m in trace])
    r_q = rmse(Q_hat, [m.Q for m in trace])
    return P_hat, Q_hat, r_p, r_q


@dataclass
class BruteForcePosterior:
    labels: tuple[str, ...]
    nodes: tuple[np.ndarray, ...]
    density: np.ndarray
    rmse: np.ndarray
    tau: float

    def marginal(self, label: str) -> MarginalPdf:
        return marginal_from_table(self.density, self.nodes, self.labels,
                                   self.labels.index(label))

    def mode(self) -> dict:
        if not np.any(self.density > 0):
            raise DegenerateDensityError("posterior has no mass")
        idx = np.unravel_index(int(np.argmax(self.density)), self.density.shape)
        return {lb: float(x[i]) for lb, x, i in zip(self.labels, self.nodes, idx)}


def rmse_table(domain: DiscretizedDomain, trace, frozen: CompositeLoadParams,
               **sim_kw) -> np.ndarray:
    """Combined RMSE at every node of a (parameter-only) grid; NaN if infeasible."""
    labels = domain.spec.labels
    if len(labels) > 3:
        raise ValueError(
            f"enumeration is limited to 3 free parameters (got {len(labels)}); "
            "use the Fokker-Planck density for larger subsets"
        )
    trace = list(trace)
    mesh = np.meshgrid(*domain.nodes, indexing="ij")
    params = frozen.with_values(**dict(zip(labels, mesh)))
    P_hat, Q_hat = simulate_response(trace, params, allow_infeasible=True, **sim_kw)
    return combined_rmse(P_hat, Q_hat, trace)


def brute_force_posterior(domain: DiscretizedDomain, trace, frozen: CompositeLoadParams, *,
                          tau: float | None = None, tau_offset: float = 1e-3,
                          reference_rmse: float | None = None, **sim_kw) -> BruteForcePosterior:
    """Enumerate ``exp(-RMSE^2 / (2 tau^2))`` over a grid of at most 3 parameters.

    Without an explicit ``tau`` it is ``reference_rmse + tau_offset``, where
    the reference defaults to the best RMSE on the grid. The density is
    normalized to unit integral (midpoint rule).
    """
    r = rmse_table(domain, trace, frozen, **sim_kw)
    if not np.any(np.isfinite(r)):
        raise DegenerateDensityError("no grid node admits an equilibrium")
    ref = float(np.nanmin(r)) if reference_rmse is None else float(reference_rmse)
    tau = ref + tau_offset if tau is None else float(tau)
    if tau <= 0:
        raise ValueError("tau must be positive")
    rmin = np.nanmin(r)
    with np.errstate(invalid="ignore"):
        w = np.exp(-(r - rmin) * (r + rmin) / (2.0 * tau**2))
    w = np.where(np.isfinite(w), w, 0.0)
    vol = math.prod(domain.steps)
    density = w / (w.sum() * vol)
    return BruteForcePosterior(domain.spec.labels, domain.nodes, density, r, tau)


# -- export -----------------------------------------------------------------------


def write_marginal_csv(path, m: MarginalPdf) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["coordinate", "density"])
        for x, v in zip(m.nodes, m.values):
            w.writerow([repr(float(x)), repr(float(v))])


def read_marginal_csv(path, label: str = "") -> MarginalPdf:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return MarginalPdf(label, data[:, 0], data[:, 1])


def write_joint_csv(path, table: np.ndarray, nodes_a, nodes_b) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["coord_a", "coord_b", "density"])
        for i, xa in enumerate(nodes_a):
            for j, xb in enumerate(nodes_b):
                w.writerow([repr(float(xa)), repr(float(xb)), repr(float(table[i, j]))])


def sensitivity_to_dict(indices: Mapping[str, SensitivityIndex]) -> dict:
    return {k: {"concentration": v.concentration, "variance": v.variance}
            for k, v in indices.items()}


__all__ = [
    "BruteForcePosterior", "DegenerateDensityError", "EstimationResult", "MarginalPdf",
    "SensitivityIndex", "argmax_params", "brute_force_posterior", "combined_rmse",
    "concentration_index", "joint_marginal_2d", "local_maxima", "marginal",
    "marginal_from_table", "mode", "read_marginal_csv", "response_from_estimate",
    "rmse_table", "sensitivity_indices", "sensitivity_to_dict", "variance_indices",
    "write_joint_csv", "write_marginal_csv",
]
