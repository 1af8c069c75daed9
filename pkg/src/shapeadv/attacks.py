"""Adversarial attacks on point-cloud classifiers.

Three entry points:

* ``whitebox_attack`` — iterative descent in tangent coordinates.  Every step
  rebuilds the per-point frames from the current adversarial cloud, rotates
  the margin-loss gradient into them, zeroes the normal component, takes a
  globally normalized step, reverse-transforms, and clips to the L-inf box
  around the clean cloud.
* ``ifgm_baseline`` — the same loop stepping along the raw ambient gradient,
  with no tangent constraint.
* ``blackbox_attack`` — query-based search that perturbs one basis at a time,
  trying +eps then -eps and keeping whichever strictly lowers the target's
  true-class probability.  Bases are either per-point unit tangent directions
  ranked by a surrogate sensitivity map, or raw coordinate axes.  Since every
  basis is a unit vector touching a distinct point/axis, the final L2
  perturbation is exactly eps * sqrt(accepted steps).
"""

from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Sequence

import numpy as np

from . import classifier, evaluation, geometry, sensitivity
from .data import PointCloud

__all__ = [
    "WhiteBoxConfig",
    "BlackBoxConfig",
    "AttackOutcome",
    "TANGENT_ORDERINGS",
    "AXIS_ORDERINGS",
    "make_oracle",
    "whitebox_attack",
    "ifgm_baseline",
    "blackbox_attack",
    "batch_attack",
    "outcome_report",
]

TANGENT_ORDERINGS = ("sensitivity", "random", "ascending")
AXIS_ORDERINGS = ("simba_random_axes", "simba_plus")


@dataclass(frozen=True)
class WhiteBoxConfig:
    step_size: float = 0.007
    iterations: int = 50
    linf_radius: float = 0.16
    knn_k: int = 20

    def __post_init__(self):
        if self.step_size <= 0 or self.iterations <= 0 or self.linf_radius <= 0:
            raise ValueError("white-box config values must be positive")


@dataclass(frozen=True)
class BlackBoxConfig:
    step_size: float = 0.32
    max_queries: int = 20000
    ordering: str = "sensitivity"
    seed: int = 0
    knn_k: int = 20

    def __post_init__(self):
        if self.step_size <= 0 or self.max_queries < 1:
            raise ValueError("black-box config values must be positive")
        if self.ordering not in TANGENT_ORDERINGS + AXIS_ORDERINGS:
            raise ValueError(f"unknown ordering {self.ordering!r}")


@dataclass
class AttackOutcome:
    adversarial: np.ndarray
    success: bool
    queries: int
    accepted_steps: int
    trialed_bases: int
    l2: float
    chamfer: float
    hausdorff: float
    wall_time_seconds: float
    fallback_ranking: bool = False
    trial_log: list[dict] = field(default_factory=list)


def _finalize(clean: np.ndarray, adv: np.ndarray, success: bool, queries: int,
              accepted: int, trialed: int, t0: float, fallback: bool = False,
              trial_log: list[dict] | None = None) -> AttackOutcome:
    return AttackOutcome(
        adversarial=adv,
        success=success,
        queries=queries,
        accepted_steps=accepted,
        trialed_bases=trialed,
        l2=evaluation.l2_distance(adv, clean),
        chamfer=evaluation.chamfer(adv, clean),
        hausdorff=evaluation.hausdorff(adv, clean),
        wall_time_seconds=time.perf_counter() - t0,
        fallback_ranking=fallback,
        trial_log=trial_log or [],
    )


def _cloud_points(cloud) -> np.ndarray:
    return np.asarray(getattr(cloud, "points", cloud), dtype=np.float64)


def whitebox_attack(params: classifier.ClassifierParams, cloud, label: int,
                    cfg: WhiteBoxConfig = WhiteBoxConfig()) -> AttackOutcome:
    """Tangent-constrained iterative attack with per-step frame refresh."""
    t0 = time.perf_counter()
    clean = _cloud_points(cloud)
    adv = clean.copy()
    lo = clean - cfg.linf_radius
    hi = clean + cfg.linf_radius
    # the unit-norm gradient is scaled by sqrt(3N) so step_size acts as a
    # per-coordinate RMS step, commensurate with the per-coordinate clip
    scale = cfg.step_size * np.sqrt(clean.size)
    steps = 0
    for _ in range(cfg.iterations):
        logits = classifier.forward(params, adv)
        if classifier.margin_loss(logits, label) == 0.0:
            break
        frames = geometry.build_frames(adv, cfg.knn_k)
        grad_t = geometry.rotate_gradients(frames, classifier.input_gradient(params, adv, label))
        grad_t[:, 2] = 0.0
        norm = np.linalg.norm(grad_t)
        if norm == 0.0:
            break  # stuck: positive loss but no tangential gradient
        adv_t = geometry.transform_points(frames, adv)
        adv_t -= scale * grad_t / norm
        adv = geometry.untransform_points(frames, adv_t)
        np.clip(adv, lo, hi, out=adv)
        steps += 1
    success = classifier.predict(params, adv) != label
    return _finalize(clean, adv, success, 0, steps, 0, t0)


def ifgm_baseline(params: classifier.ClassifierParams, cloud, label: int,
                  cfg: WhiteBoxConfig = WhiteBoxConfig()) -> AttackOutcome:
    """Classic iterative FGM: cross-entropy ascent in ambient coordinates.

    No tangent projection and no self-stopping hinge: the loop spends the
    whole iteration budget pushing away from the true class (the standard
    formulation of this baseline), clipped to the same L-inf box.  An input
    that is already misclassified is returned untouched.
    """
    t0 = time.perf_counter()
    clean = _cloud_points(cloud)
    adv = clean.copy()
    if classifier.predict(params, adv) != label:
        return _finalize(clean, adv, True, 0, 0, 0, t0)
    lo = clean - cfg.linf_radius
    hi = clean + cfg.linf_radius
    scale = cfg.step_size * np.sqrt(clean.size)
    steps = 0
    for _ in range(cfg.iterations):
        grad = classifier.input_gradient_ce(params, adv, label)
        norm = np.linalg.norm(grad)
        if norm == 0.0:
            break
        adv = adv + scale * grad / norm
        np.clip(adv, lo, hi, out=adv)
        steps += 1
    success = classifier.predict(params, adv) != label
    return _finalize(clean, adv, success, 0, steps, 0, t0)


def make_oracle(params: classifier.ClassifierParams,
                defense: Callable[[np.ndarray], np.ndarray] | None = None,
                ) -> Callable[[np.ndarray], np.ndarray]:
    """Opaque probability oracle, optionally behind an input defense."""
    def oracle(points: np.ndarray) -> np.ndarray:
        if defense is not None:
            points = defense(points)
        return classifier.forward(params, points).probs
    return oracle


def _tangent_bases(smap: sensitivity.SensitivityMap, ordering: str,
                   rng: np.random.Generator) -> tuple[np.ndarray, bool]:
    n = smap.scores.shape[0]
    fallback = not np.any(smap.scores > 0.0)
    if ordering == "sensitivity":
        order = smap.ranking
    elif ordering == "ascending":
        order = np.lexsort((np.arange(n), smap.scores))
    elif ordering == "random":
        order = rng.permutation(n)
        fallback = False
    else:
        raise ValueError(f"unknown tangent ordering {ordering!r}")
    return order, fallback


def _axis_order(surrogate: classifier.ClassifierParams | None, clean: np.ndarray,
                label: int, ordering: str, rng: np.random.Generator,
                ) -> tuple[np.ndarray, bool]:
    n3 = clean.shape[0] * 3
    if ordering == "simba_random_axes":
        return rng.permutation(n3), False
    if surrogate is None:
        raise ValueError("simba_plus needs a surrogate model")
    grad = classifier.input_gradient(surrogate, clean, label).ravel()
    fallback = not np.any(grad != 0.0)
    if fallback:
        return np.arange(n3), True
    # stochastic gradient-prior search: a weighted random permutation
    # (Gumbel top-k), axes with larger |gradient| tend to come first
    weights = np.abs(grad) + 1e-12 * np.abs(grad).max()
    keys = np.log(weights) + rng.gumbel(size=n3)
    return np.argsort(-keys, kind="stable"), False


def blackbox_attack(target_oracle: Callable[[np.ndarray], np.ndarray] | classifier.ClassifierParams,
                    surrogate: classifier.ClassifierParams | None, cloud, label: int,
                    cfg: BlackBoxConfig = BlackBoxConfig()) -> AttackOutcome:
    """Query-based attack guided by a surrogate ranking.

    The target is only ever used as a probability oracle; every call counts
    as one query, including the initializing prediction.  Each basis is
    trialed at most once with +eps then -eps, and a trial is accepted only
    when the true-class probability strictly decreases.
    """
    if isinstance(target_oracle, classifier.ClassifierParams):
        target_oracle = make_oracle(target_oracle)
    t0 = time.perf_counter()
    clean = _cloud_points(cloud)
    eps = cfg.step_size
    rng = np.random.default_rng(cfg.seed)

    pool = target_oracle(clean)
    queries = 1
    if int(np.argmax(pool)) != label:
        return _finalize(clean, clean.copy(), True, queries, 0, 0, t0)

    tangent = cfg.ordering in TANGENT_ORDERINGS
    if tangent:
        if surrogate is None:
            raise ValueError(f"{cfg.ordering} ordering needs a surrogate model")
        frames = geometry.build_frames(clean, cfg.knn_k)
        smap = sensitivity.sensitivity_scores(
            sensitivity.gradient_map(surrogate, frames, clean, label), frames)
        order, fallback = _tangent_bases(smap, cfg.ordering, rng)
        points_t = geometry.transform_points(frames, clean)
        base = geometry.untransform_points(frames, points_t)
        dirs = np.stack([np.cos(smap.directions), np.sin(smap.directions)], axis=1)
    else:
        order, fallback = _axis_order(surrogate, clean, label, cfg.ordering, rng)
        base = clean.copy()

    accepted = 0
    trialed = 0
    trial_log: list[dict] = []
    success = False
    for basis in order:
        if queries >= cfg.max_queries:
            break
        trialed += 1
        if tangent:
            point_idx, coord = int(basis), None
        else:
            point_idx, coord = int(basis) // 3, int(basis) % 3
        # -eps first: the stored angle is the surrogate's loss-ascent direction,
        # so its negation is the best first guess for lowering the target's
        # true-class probability
        for alpha in (-eps, eps):
            if queries >= cfg.max_queries:
                break
            cand = base.copy()
            if tangent:
                i = point_idx
                shifted_t = points_t[i].copy()
                shifted_t[0] += alpha * dirs[i, 0]
                shifted_t[1] += alpha * dirs[i, 1]
                cand[i] = frames.rotations[i].T @ shifted_t - frames.translations[i]
            else:
                cand[point_idx, coord] += alpha
            probs = target_oracle(cand)
            queries += 1
            improved = probs[label] < pool[label]
            trial_log.append({
                "point_index": point_idx,
                "coord": coord,
                "alpha": float(alpha),
                "accepted": bool(improved),
                "prob_before": float(pool[label]),
                "prob_after": float(probs[label]),
            })
            if improved:
                base = cand
                if tangent:
                    points_t[point_idx, 0] += alpha * dirs[point_idx, 0]
                    points_t[point_idx, 1] += alpha * dirs[point_idx, 1]
                pool = probs
                accepted += 1
                break
        if int(np.argmax(pool)) != label:
            success = True
            break
    return _finalize(clean, base, success, queries, accepted, trialed, t0,
                     fallback=fallback, trial_log=trial_log)


def _derive_seed(*parts: int) -> int:
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


def _build_defense(spec: str | None, seed: int) -> Callable[[np.ndarray], np.ndarray] | None:
    if spec is None:
        return None
    if spec == "sor":
        return lambda pts: evaluation.sor_defense(pts)
    if spec in ("drop30", "drop50"):
        ratio = 0.3 if spec == "drop30" else 0.5
        rng = np.random.default_rng(seed)
        # stateful: every call re-drops with fresh randomness from the stream
        return lambda pts: evaluation.random_drop(pts, ratio, rng)
    raise ValueError(f"unknown defense {spec!r}")


def _run_one(task: tuple) -> AttackOutcome:
    mode, target, surrogate, points, label, cfg, defense_spec, defense_seed = task
    if mode == "white":
        outcome = whitebox_attack(target, points, label, cfg)
    elif mode == "ifgm":
        outcome = ifgm_baseline(target, points, label, cfg)
    elif mode == "black":
        # black-box: queries are spent against the defended pipeline itself
        oracle = make_oracle(target, _build_defense(defense_spec, defense_seed))
        outcome = blackbox_attack(oracle, surrogate, points, label, cfg)
    else:
        raise ValueError(f"unknown attack mode {mode!r}")
    if mode in ("white", "ifgm") and defense_spec is not None:
        # white-box: the attack runs undefended, the defense only adjudicates
        defense = _build_defense(defense_spec, defense_seed)
        outcome.success = classifier.predict(target, defense(outcome.adversarial)) != label
    return outcome


def batch_attack(mode: str, target: classifier.ClassifierParams,
                 samples: Iterable[PointCloud], cfg,
                 surrogate: classifier.ClassifierParams | None = None,
                 parallelism: int = 1, defense: str | None = None,
                 seed: int = 0,
                 ) -> tuple[list[AttackOutcome], evaluation.MetricReport | None]:
    """Run one attack over many samples; deterministic given seeds.

    Per-sample randomness (black-box search order, defense dropout) is derived
    from the sample index, so results do not depend on parallelism.  Returns
    ([], None) for an empty sample list.
    """
    tasks = []
    for i, s in enumerate(samples):
        run_cfg = replace(cfg, seed=_derive_seed(cfg.seed, i)) if mode == "black" else cfg
        tasks.append((mode, target, surrogate, s.points, s.label, run_cfg,
                      defense, _derive_seed(seed, i, 1)))
    if not tasks:
        return [], None
    if parallelism <= 1 or len(tasks) == 1:
        outcomes = [_run_one(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=parallelism) as pool:
            outcomes = list(pool.map(_run_one, tasks, chunksize=max(1, len(tasks) // (4 * parallelism))))
    return outcomes, evaluation.aggregate(outcomes)


def outcome_report(outcome: AttackOutcome, sample_id: int, attack: str,
                   config: dict) -> dict:
    """Per-run JSON record; query counting includes the initializing query."""
    return {
        "sample_id": sample_id,
        "attack": attack,
        "config": config,
        "success": bool(outcome.success),
        "queries": int(outcome.queries),
        "accepted_steps": int(outcome.accepted_steps),
        "trialed_bases": int(outcome.trialed_bases),
        "l2": float(outcome.l2),
        "chamfer_x1e4": float(outcome.chamfer) * 1e4,
        "hausdorff_x1e2": float(outcome.hausdorff) * 1e2,
        "wall_time_s": float(outcome.wall_time_seconds),
        "fallback_ranking": bool(outcome.fallback_ranking),
        "trial_log": outcome.trial_log,
    }
