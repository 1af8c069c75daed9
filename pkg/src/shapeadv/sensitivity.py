"""Per-point sensitivity maps in tangent coordinates.

Each point's score is the in-plane gradient magnitude sqrt(g1^2 + g2^2) of
the max-margin loss, which bounds the first-order loss change under any unit
in-plane perturbation; the bound is attained along atan2(g2, g1).  Points are
ranked by descending score; the ranking transfers usefully between models.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from . import classifier, geometry
from .data import PointCloud, SyntheticDataset

__all__ = [
    "SensitivityMap",
    "gradient_map",
    "sensitivity_scores",
    "compute_sensitivity_map",
    "topk_overlap",
    "perturb_sweep",
]


@dataclass(frozen=True)
class SensitivityMap:
    scores: np.ndarray      # (N,) >= 0
    directions: np.ndarray  # (N,) angles in (-pi, pi], 0 for zero-score points
    ranking: np.ndarray     # (N,) descending score, ties by ascending index
    frames: geometry.TangentFrameSet


def gradient_map(params: classifier.ClassifierParams, frames: geometry.TangentFrameSet,
                 points, t: int) -> np.ndarray:
    """(N, 3) margin-loss gradient rotated into each point's tangent frame.

    The third (normal) component is kept; consumers that restrict motion to
    the tangent plane zero it out.
    """
    ambient = classifier.input_gradient(params, points, t)
    return geometry.rotate_gradients(frames, ambient)


def sensitivity_scores(grad_t: np.ndarray, frames: geometry.TangentFrameSet) -> SensitivityMap:
    """Scores, optimal in-plane angles, and the descending ranking."""
    g = np.asarray(grad_t, dtype=np.float64)
    if not np.all(np.isfinite(g)):
        raise ValueError("gradient map contains non-finite values")
    scores = np.hypot(g[:, 0], g[:, 1])
    directions = np.where(scores > 0.0, np.arctan2(g[:, 1], g[:, 0]), 0.0)
    ranking = np.lexsort((np.arange(scores.shape[0]), -scores))
    return SensitivityMap(scores=scores, directions=directions,
                          ranking=ranking, frames=frames)


def compute_sensitivity_map(params: classifier.ClassifierParams, points, t: int,
                            k: int = 20) -> SensitivityMap:
    """Frames + gradient map + scores for one cloud in one call."""
    frames = geometry.build_frames(points, k)
    return sensitivity_scores(gradient_map(params, frames, points, t), frames)


def topk_overlap(map_a: SensitivityMap, map_b: SensitivityMap, fraction: float) -> float:
    """|top-K(A) intersect top-K(B)| / K with K = round(fraction * N)."""
    n = map_a.scores.shape[0]
    if map_b.scores.shape[0] != n:
        raise ValueError("maps cover different point counts")
    if not 0.0 < fraction <= 1.0:
        raise ValueError("fraction must be in (0, 1]")
    k = int(round(fraction * n))
    if k == 0:
        raise ValueError(f"fraction {fraction} selects zero points for N={n}")
    top_a = set(map_a.ranking[:k].tolist())
    top_b = set(map_b.ranking[:k].tolist())
    return len(top_a & top_b) / k


def _sweep_order(smap: SensitivityMap, ordering: str, rng: np.random.Generator) -> np.ndarray:
    n = smap.scores.shape[0]
    if ordering == "descending":
        return smap.ranking
    if ordering == "ascending":
        return np.lexsort((np.arange(n), smap.scores))
    if ordering == "random":
        return rng.permutation(n)
    raise ValueError(f"unknown ordering {ordering!r}")


def perturb_sweep(params: classifier.ClassifierParams,
                  testset: SyntheticDataset | Iterable[PointCloud],
                  ordering: str, step: float = 0.03,
                  fraction_grid: Sequence[float] = (0.0, 0.1, 0.2, 0.3, 0.4, 0.5,
                                                    0.6, 0.7, 0.8, 0.9, 1.0),
                  k: int = 20, seed: int = 0) -> list[tuple[float, float]]:
    """Accuracy after perturbing a growing fraction of points, one pass.

    Each point is moved exactly once, by `step` along the in-plane descent
    direction of its own sensitivity angle (the direction that reduces the
    margin loss); frames and the map come from the clean cloud and are not
    refreshed mid-sweep.  Returns (fraction, mean accuracy) pairs.
    """
    samples = testset.samples if isinstance(testset, SyntheticDataset) else list(testset)
    if not samples:
        raise ValueError("empty test set")
    fractions = sorted(fraction_grid)
    rng = np.random.default_rng(seed)
    correct = np.zeros(len(fractions), dtype=np.int64)
    for sample in samples:
        pts = sample.points
        n = pts.shape[0]
        smap = compute_sensitivity_map(params, pts, sample.label, k=k)
        order = _sweep_order(smap, ordering, rng)
        frames = smap.frames
        adv_t = geometry.transform_points(frames, pts)
        adv = pts.copy()
        counts = [int(round(f * n)) for f in fractions]
        done = 0
        for gi, target_count in enumerate(counts):
            while done < target_count:
                i = order[done]
                theta = smap.directions[i]
                adv_t[i, 0] -= step * np.cos(theta)
                adv_t[i, 1] -= step * np.sin(theta)
                adv[i] = frames.rotations[i].T @ adv_t[i] - frames.translations[i]
                done += 1
            if classifier.predict(params, adv) == sample.label:
                correct[gi] += 1
    return [(f, c / len(samples)) for f, c in zip(fractions, correct)]
