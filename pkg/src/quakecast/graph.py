"""Station adjacency from inter-station distances.

Steps, in order:

1. start from the symmetric km distance matrix,
2. fill the diagonal with a large sentinel distance,
3. take reciprocals scaled by the smallest entry (nearest pair -> 1),
4. put the matrix maximum back on the diagonal,
5. divide by the matrix maximum,
6. take a percentile of the weights as threshold,
7. zero every weight below the threshold.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .data import DataError, check_distances

DIAGONAL_SENTINEL_KM = 1e9


@dataclass
class AdjacencyMatrix:
    weights: np.ndarray
    threshold_quantile: float = 0.75
    threshold: float = float("nan")
    percentile_domain: str = "offdiag"
    source_digest: str = ""

    @property
    def n_stations(self) -> int:
        return self.weights.shape[0]


@dataclass
class AdjacencyReport:
    violations: list[str] = field(default_factory=list)
    sparsity: float = 0.0

    @property
    def ok(self) -> bool:
        return not self.violations


def distance_digest(distances: np.ndarray) -> str:
    arr = np.ascontiguousarray(distances, dtype="<f8")
    return hashlib.sha256(arr.tobytes()).hexdigest()


def build_adjacency(
    distances_km,
    threshold_quantile: float = 0.75,
    percentile_domain: str = "offdiag",
) -> AdjacencyMatrix:
    """Turn a distance matrix into normalised, thresholded edge weights.

    ``percentile_domain`` selects which entries the threshold percentile is
    computed over: ``"offdiag"`` (default) or ``"all"`` N*N entries. The
    percentile interpolates linearly between order statistics.
    """
    d = np.array(distances_km, dtype=np.float64)
    check_distances(d)
    if not 0.0 <= threshold_quantile <= 1.0:
        raise ValueError("threshold_quantile must lie in [0, 1]")
    if percentile_domain not in ("offdiag", "all"):
        raise ValueError(f"unknown percentile domain {percentile_domain!r}")
    n = d.shape[0]
    diag = np.eye(n, dtype=bool)

    d[diag] = DIAGONAL_SENTINEL_KM
    w = d.min() / d
    w[diag] = w.max()
    w = w / w.max()
    pool = w[~diag] if percentile_domain == "offdiag" else w.ravel()
    threshold = float(np.percentile(pool, 100.0 * threshold_quantile))
    w[w < threshold] = 0.0
    return AdjacencyMatrix(
        weights=w,
        threshold_quantile=threshold_quantile,
        threshold=threshold,
        percentile_domain=percentile_domain,
        source_digest=distance_digest(distances_km),
    )


def validate_adjacency(weights) -> AdjacencyReport:
    """Check the adjacency invariants; never raises."""
    report = AdjacencyReport()
    if isinstance(weights, AdjacencyMatrix):
        weights = weights.weights
    try:
        a = np.asarray(weights, dtype=np.float64)
    except (TypeError, ValueError):
        report.violations.append("not a numeric matrix")
        return report
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        report.violations.append(f"not square: shape {a.shape}")
        return report
    if not np.all(np.isfinite(a)):
        report.violations.append("non-finite entries")
        return report
    n = a.shape[0]
    if not np.array_equal(a, a.T):
        report.violations.append("not symmetric")
    if np.any(a < 0) or np.any(a > 1):
        report.violations.append(
            f"entries outside [0, 1]: min {a.min():.6g}, max {a.max():.6g}"
        )
    if not np.all(np.diag(a) == 1.0):
        report.violations.append("diagonal entries are not all 1")
    off = a[~np.eye(n, dtype=bool)]
    dropped = off[off == 0]
    report.sparsity = float(dropped.size / off.size) if off.size else 0.0
    return report


def level_cut_holds(adjacency: AdjacencyMatrix, distances_km) -> bool:
    """Every retained off-diagonal edge is at least as close as every dropped one."""
    d = np.asarray(distances_km, dtype=np.float64)
    n = d.shape[0]
    off = ~np.eye(n, dtype=bool)
    kept = off & (adjacency.weights > 0)
    dropped = off & (adjacency.weights == 0)
    if not kept.any() or not dropped.any():
        return True
    return bool(d[kept].max() <= d[dropped].min())


def write_adjacency_csv(path, adjacency: AdjacencyMatrix) -> None:
    np.savetxt(path, adjacency.weights, delimiter=",", fmt="%.17g")


def read_distances_csv(path) -> np.ndarray:
    try:
        return np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)
    except OSError:
        raise DataError(f"missing file: {path}") from None
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from None
