"""Geometric distance metrics, aggregate attack statistics, and defenses."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "MetricReport",
    "DefenseError",
    "l2_distance",
    "chamfer",
    "hausdorff",
    "sor_defense",
    "random_drop",
    "aggregate",
]


class DefenseError(RuntimeError):
    """Defense produced an unusable (empty) cloud."""


@dataclass(frozen=True)
class MetricReport:
    asr: float
    avg_queries: float
    mean_l2: float
    mean_chamfer: float     # reported x 1e4
    mean_hausdorff: float   # reported x 1e2
    mean_time_s: float
    n_samples: int
    successes_only: bool = False

    def to_dict(self) -> dict:
        return {
            "asr": self.asr,
            "avg_queries": self.avg_queries,
            "mean_l2": self.mean_l2,
            "mean_chamfer_x1e4": self.mean_chamfer,
            "mean_hausdorff_x1e2": self.mean_hausdorff,
            "mean_time_s": self.mean_time_s,
            "n_samples": self.n_samples,
            "successes_only": self.successes_only,
        }


def _points(arg) -> np.ndarray:
    pts = np.asarray(getattr(arg, "points", arg), dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"expected an (N, 3) array, got shape {pts.shape}")
    return pts


def _pairwise_sq(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.sum((a[:, None, :] - b[None, :, :]) ** 2, axis=2)


def l2_distance(a, b) -> float:
    """Frobenius norm of the coordinate difference (same N, index-aligned)."""
    pa, pb = _points(a), _points(b)
    if pa.shape != pb.shape:
        raise ValueError("clouds must be index-aligned with equal size")
    return float(np.linalg.norm(pa - pb))


def chamfer(a, b) -> float:
    """Half the sum of both mean squared nearest-neighbor distances."""
    pa, pb = _points(a), _points(b)
    if pa.shape[0] == 0 or pb.shape[0] == 0:
        raise ValueError("chamfer distance needs non-empty clouds")
    d2 = _pairwise_sq(pa, pb)
    return float(0.5 * (d2.min(axis=1).mean() + d2.min(axis=0).mean()))


def hausdorff(adv, clean) -> float:
    """Directed worst-outlier distance, adversarial -> clean."""
    pa, pb = _points(adv), _points(clean)
    if pa.shape[0] == 0 or pb.shape[0] == 0:
        raise ValueError("hausdorff distance needs non-empty clouds")
    d2 = _pairwise_sq(pa, pb)
    return float(np.sqrt(d2.min(axis=1)).max())


def sor_defense(points, k: int = 2, alpha: float = 1.1) -> np.ndarray:
    """Statistical outlier removal.

    Drops points whose mean distance to their k nearest neighbors strictly
    exceeds mean + alpha * std (population std) of those per-point means;
    survivor order is preserved.
    """
    pts = _points(points)
    n = pts.shape[0]
    if n <= k:
        raise ValueError(f"need more than k={k} points, got {n}")
    d2 = _pairwise_sq(pts, pts)
    np.fill_diagonal(d2, np.inf)
    part = np.partition(d2, k - 1, axis=1)[:, :k]
    mean_dist = np.sqrt(part).mean(axis=1)
    mu = mean_dist.mean()
    sigma = mean_dist.std()
    keep = mean_dist <= mu + alpha * sigma
    if not np.any(keep):
        raise DefenseError("outlier removal discarded every point")
    return pts[keep]


def random_drop(points, ratio: float, seed) -> np.ndarray:
    """Keep ceil((1 - ratio) * N) uniformly chosen points, order preserved."""
    pts = _points(points)
    if not 0.0 <= ratio < 1.0:
        raise ValueError("drop ratio must be in [0, 1)")
    n = pts.shape[0]
    n_keep = int(np.ceil((1.0 - ratio) * n))
    if n_keep == n:
        return pts.copy()
    rng = np.random.default_rng(seed)
    keep = rng.choice(n, size=n_keep, replace=False)
    keep.sort()
    return pts[keep]


def aggregate(outcomes, successes_only: bool = False) -> MetricReport:
    """Mean metrics over attack outcomes; chamfer x1e4 and hausdorff x1e2."""
    outcomes = list(outcomes)
    if not outcomes:
        raise ValueError("cannot aggregate zero outcomes")
    pool = [o for o in outcomes if o.success] if successes_only else outcomes
    if not pool:
        raise ValueError("no successful outcomes to aggregate")
    return MetricReport(
        asr=float(np.mean([o.success for o in outcomes])),
        avg_queries=float(np.mean([o.queries for o in pool])),
        mean_l2=float(np.mean([o.l2 for o in pool])),
        mean_chamfer=float(np.mean([o.chamfer for o in pool])) * 1e4,
        mean_hausdorff=float(np.mean([o.hausdorff for o in pool])) * 1e2,
        mean_time_s=float(np.mean([o.wall_time_seconds for o in pool])),
        n_samples=len(outcomes),
        successes_only=successes_only,
    )
