"""Point-cloud classifiers with exact reverse-mode gradients.

Two widths of the same design: a shared per-point ReLU MLP, a feature-wise
max-pool over points, and a small ReLU head.  Everything runs in float64
numpy with hand-written backprop, so input gradients are exact and training
is bitwise reproducible for a fixed seed.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np

from .data import SyntheticDataset, augment_points

__all__ = [
    "ARCHS",
    "Logits",
    "ClassifierParams",
    "TrainConfig",
    "TrainingError",
    "CheckpointError",
    "forward",
    "forward_batch",
    "predict",
    "margin_loss",
    "input_gradient",
    "cross_entropy",
    "param_gradients",
    "train",
    "evaluate_accuracy",
    "save_params",
    "load_params",
]

# per-point feature widths and head widths, input is always 3-d
ARCHS = {
    "A": {"point": (3, 32, 64, 128), "head": (128, 64)},
    "B": {"point": (3, 48, 96, 160), "head": (160, 80)},
}


class TrainingError(RuntimeError):
    """Training finished below the minimum acceptable accuracy."""


class CheckpointError(ValueError):
    """Checkpoint file is unreadable or inconsistent."""


@dataclass(frozen=True)
class Logits:
    scores: np.ndarray  # (C,) raw class scores
    probs: np.ndarray   # (C,) softmax of scores


@dataclass
class ClassifierParams:
    arch: str
    class_count: int
    layers: dict[str, np.ndarray]
    seed: int | None = None
    train_meta: dict = field(default_factory=dict)


def _layer_names(arch: str) -> list[tuple[str, int, int]]:
    spec = ARCHS[arch]
    names = []
    dims = spec["point"]
    for i in range(len(dims) - 1):
        names.append((f"pt{i}", dims[i], dims[i + 1]))
    names.append(("head0", spec["head"][0], spec["head"][1]))
    names.append(("head1", spec["head"][1], -1))  # -1: class_count
    return names


def init_params(arch: str, class_count: int, seed: int) -> ClassifierParams:
    """Glorot-uniform initialization from a seeded generator."""
    if arch not in ARCHS:
        raise ValueError(f"unknown arch {arch!r}")
    rng = np.random.default_rng(seed)
    layers: dict[str, np.ndarray] = {}
    for name, fan_in, fan_out in _layer_names(arch):
        if fan_out == -1:
            fan_out = class_count
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        layers[f"{name}_w"] = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        layers[f"{name}_b"] = np.zeros(fan_out)
    return ClassifierParams(arch=arch, class_count=class_count, layers=layers, seed=seed)


def _check_params(params: ClassifierParams) -> None:
    if params.arch not in ARCHS:
        raise ValueError(f"unknown arch {params.arch!r}")
    for name, fan_in, fan_out in _layer_names(params.arch):
        if fan_out == -1:
            fan_out = params.class_count
        w = params.layers.get(f"{name}_w")
        b = params.layers.get(f"{name}_b")
        if w is None or b is None:
            raise ValueError(f"missing layer {name}")
        if w.shape != (fan_in, fan_out) or b.shape != (fan_out,):
            raise ValueError(
                f"layer {name} shape {w.shape}/{b.shape} inconsistent with "
                f"arch {params.arch} (want ({fan_in}, {fan_out}))")


def _softmax(scores: np.ndarray) -> np.ndarray:
    shifted = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _point_layer_keys(arch: str) -> list[str]:
    return [f"pt{i}" for i in range(len(ARCHS[arch]["point"]) - 1)]


def _forward_full(params: ClassifierParams, pts: np.ndarray) -> dict:
    """Forward pass keeping every pre-activation for backprop."""
    cache: dict = {"input": pts}
    h = pts
    pre = []
    for key in _point_layer_keys(params.arch):
        z = h @ params.layers[f"{key}_w"] + params.layers[f"{key}_b"]
        pre.append(z)
        h = np.maximum(z, 0.0)
    cache["point_pre"] = pre
    cache["point_out"] = h
    idx = np.argmax(h, axis=0)  # lowest index wins ties
    cache["pool_idx"] = idx
    pooled = h[idx, np.arange(h.shape[1])]
    cache["pooled"] = pooled
    u = pooled @ params.layers["head0_w"] + params.layers["head0_b"]
    cache["head_pre"] = u
    z = np.maximum(u, 0.0)
    cache["head_out"] = z
    cache["scores"] = z @ params.layers["head1_w"] + params.layers["head1_b"]
    return cache


def forward(params: ClassifierParams, points) -> Logits:
    """Logits for one cloud: shared MLP, max-pool over points, head MLP."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] < 1:
        raise ValueError(f"expected an (N, 3) cloud, got shape {pts.shape}")
    scores = _forward_full(params, pts)["scores"]
    return Logits(scores=scores, probs=_softmax(scores))


def forward_batch(params: ClassifierParams, batch: np.ndarray) -> np.ndarray:
    """(B, C) scores for a (B, N, 3) stack of same-size clouds."""
    b, n, _ = batch.shape
    h = batch.reshape(b * n, 3)
    for key in _point_layer_keys(params.arch):
        h = np.maximum(h @ params.layers[f"{key}_w"] + params.layers[f"{key}_b"], 0.0)
    pooled = h.reshape(b, n, -1).max(axis=1)
    z = np.maximum(pooled @ params.layers["head0_w"] + params.layers["head0_b"], 0.0)
    return z @ params.layers["head1_w"] + params.layers["head1_b"]


def predict(params: ClassifierParams, points) -> int:
    return int(np.argmax(forward(params, points).scores))


def margin_loss(logits: Logits, t: int) -> float:
    """max(score_true - best_other, 0) on raw scores; 0 means misclassified/tied."""
    scores = logits.scores
    if not 0 <= t < scores.shape[0]:
        raise ValueError(f"class index {t} out of range")
    others = np.delete(scores, t)
    return float(max(scores[t] - others.max(), 0.0))


def _margin_score_grad(scores: np.ndarray, t: int) -> np.ndarray | None:
    """d margin / d scores, or None when the hinge is inactive."""
    masked = scores.copy()
    masked[t] = -np.inf
    j = int(np.argmax(masked))  # lowest index on ties
    if scores[t] - scores[j] <= 0.0:
        return None
    g = np.zeros_like(scores)
    g[t] = 1.0
    g[j] = -1.0
    return g


def input_gradient(params: ClassifierParams, points, t: int) -> np.ndarray:
    """Exact (N, 3) gradient of margin_loss w.r.t. the input coordinates.

    The max-pool routes gradient to the argmax point of each feature channel
    (lowest index on ties); an inactive hinge yields an all-zero gradient.
    """
    pts = np.asarray(points, dtype=np.float64)
    cache = _forward_full(params, pts)
    gs = _margin_score_grad(cache["scores"], t)
    if gs is None:
        return np.zeros_like(pts)
    gz = params.layers["head1_w"] @ gs
    gu = gz * (cache["head_pre"] > 0.0)
    gpooled = params.layers["head0_w"] @ gu
    n, f = pts.shape[0], gpooled.shape[0]
    ga = np.zeros((n, f))
    ga[cache["pool_idx"], np.arange(f)] = gpooled
    keys = _point_layer_keys(params.arch)
    for i in range(len(keys) - 1, -1, -1):
        gh = ga * (cache["point_pre"][i] > 0.0)
        ga = gh @ params.layers[f"{keys[i]}_w"].T
    return ga


def cross_entropy(logits: Logits, t: int) -> float:
    scores = logits.scores
    shifted = scores - scores.max()
    return float(np.log(np.exp(shifted).sum()) - shifted[t])


def input_gradient_ce(params: ClassifierParams, points, t: int) -> np.ndarray:
    """Exact (N, 3) gradient of cross_entropy w.r.t. the input coordinates."""
    pts = np.asarray(points, dtype=np.float64)
    cache = _forward_full(params, pts)
    gs = _softmax(cache["scores"])
    gs[t] -= 1.0
    gz = params.layers["head1_w"] @ gs
    gu = gz * (cache["head_pre"] > 0.0)
    gpooled = params.layers["head0_w"] @ gu
    n, f = pts.shape[0], gpooled.shape[0]
    ga = np.zeros((n, f))
    ga[cache["pool_idx"], np.arange(f)] = gpooled
    keys = _point_layer_keys(params.arch)
    for i in range(len(keys) - 1, -1, -1):
        gh = ga * (cache["point_pre"][i] > 0.0)
        ga = gh @ params.layers[f"{keys[i]}_w"].T
    return ga


def _forward_batch_full(params: ClassifierParams, batch: np.ndarray) -> dict:
    b, n, _ = batch.shape
    cache: dict = {"input": batch}
    h = batch.reshape(b * n, 3)
    pre = []
    post = [h]
    for key in _point_layer_keys(params.arch):
        z = h @ params.layers[f"{key}_w"] + params.layers[f"{key}_b"]
        pre.append(z)
        h = np.maximum(z, 0.0)
        post.append(h)
    cache["point_pre"] = pre
    cache["point_post"] = post
    feat = h.reshape(b, n, -1)
    idx = np.argmax(feat, axis=1)  # (B, F)
    cache["pool_idx"] = idx
    pooled = np.take_along_axis(feat, idx[:, None, :], axis=1)[:, 0, :]
    cache["pooled"] = pooled
    u = pooled @ params.layers["head0_w"] + params.layers["head0_b"]
    cache["head_pre"] = u
    z = np.maximum(u, 0.0)
    cache["head_out"] = z
    cache["scores"] = z @ params.layers["head1_w"] + params.layers["head1_b"]
    return cache


def param_gradients(params: ClassifierParams, batch: np.ndarray, labels: np.ndarray,
                    ) -> tuple[float, dict[str, np.ndarray]]:
    """Mean cross-entropy over a (B, N, 3) batch and exact parameter grads."""
    cache = _forward_batch_full(params, batch)
    scores = cache["scores"]
    b = scores.shape[0]
    probs = _softmax(scores)
    rows = np.arange(b)
    shifted = scores - scores.max(axis=1, keepdims=True)
    loss = float(np.mean(np.log(np.exp(shifted).sum(axis=1)) - shifted[rows, labels]))

    grads: dict[str, np.ndarray] = {}
    ds = probs.copy()
    ds[rows, labels] -= 1.0
    ds /= b
    grads["head1_w"] = cache["head_out"].T @ ds
    grads["head1_b"] = ds.sum(axis=0)
    gz = ds @ params.layers["head1_w"].T
    gu = gz * (cache["head_pre"] > 0.0)
    grads["head0_w"] = cache["pooled"].T @ gu
    grads["head0_b"] = gu.sum(axis=0)
    gpooled = gu @ params.layers["head0_w"].T  # (B, F)

    n = batch.shape[1]
    f = gpooled.shape[1]
    ga = np.zeros((b, n, f))
    np.put_along_axis(ga, cache["pool_idx"][:, None, :], gpooled[:, None, :], axis=1)
    ga = ga.reshape(b * n, f)
    keys = _point_layer_keys(params.arch)
    for i in range(len(keys) - 1, -1, -1):
        gh = ga * (cache["point_pre"][i] > 0.0)
        grads[f"{keys[i]}_w"] = cache["point_post"][i].T @ gh
        grads[f"{keys[i]}_b"] = gh.sum(axis=0)
        ga = gh @ params.layers[f"{keys[i]}_w"].T
    return loss, grads


@dataclass
class TrainConfig:
    epochs: int = 30
    lr: float = 0.01
    momentum: float = 0.9
    batch_size: int = 32
    seed: int = 0
    lr_halving_every: int = 10
    min_accuracy: float = 0.70
    # stop as soon as held-out accuracy reaches this (None: run all epochs);
    # keeps the model accurate without letting margins grow huge
    target_accuracy: float | None = None


def evaluate_accuracy(params: ClassifierParams, dataset: SyntheticDataset,
                      batch_size: int = 64) -> float:
    """Clean accuracy over a dataset split (batched when sizes match)."""
    samples = dataset.samples
    if not samples:
        raise ValueError("empty dataset")
    correct = 0
    pos = 0
    while pos < len(samples):
        chunk = samples[pos:pos + batch_size]
        pts = np.stack([s.points for s in chunk])
        scores = forward_batch(params, pts)
        preds = np.argmax(scores, axis=1)
        correct += int(np.sum(preds == np.array([s.label for s in chunk])))
        pos += batch_size
    return correct / len(samples)


def train(arch: str, train_set: SyntheticDataset, test_set: SyntheticDataset,
          config: TrainConfig) -> ClassifierParams:
    """Mini-batch SGD with momentum and per-epoch augmentation.

    Deterministic for a fixed seed.  Raises TrainingError when held-out
    accuracy ends below config.min_accuracy.
    """
    if not train_set.samples or not test_set.samples:
        raise ValueError("train and test splits must be non-empty")
    if config.epochs < 0 or config.lr < 0 or config.batch_size < 1:
        raise ValueError("invalid training config")
    class_count = len(train_set.class_names)
    params = init_params(arch, class_count, config.seed)
    velocity = {k: np.zeros_like(v) for k, v in params.layers.items()}
    n = len(train_set.samples)
    labels_all = np.array([s.label for s in train_set.samples])

    epochs_run = 0
    for epoch in range(config.epochs):
        lr = config.lr * 0.5 ** (epoch // config.lr_halving_every)
        order_rng = np.random.default_rng(np.random.SeedSequence([config.seed, epoch, 0]))
        order = order_rng.permutation(n)
        augmented = np.stack([
            augment_points(train_set.samples[i].points,
                           np.random.default_rng(np.random.SeedSequence(
                               [config.seed, epoch, 1, int(i)])))
            for i in order
        ])
        labels = labels_all[order]
        for start in range(0, n, config.batch_size):
            batch = augmented[start:start + config.batch_size]
            batch_labels = labels[start:start + config.batch_size]
            _, grads = param_gradients(params, batch, batch_labels)
            for key, g in grads.items():
                velocity[key] = config.momentum * velocity[key] - lr * g
                params.layers[key] = params.layers[key] + velocity[key]
        epochs_run += 1
        if (config.target_accuracy is not None
                and evaluate_accuracy(params, test_set) >= config.target_accuracy):
            break

    accuracy = evaluate_accuracy(params, test_set)
    params.train_meta = {
        "epochs": epochs_run,
        "lr": config.lr,
        "momentum": config.momentum,
        "batch_size": config.batch_size,
        "test_accuracy": accuracy,
    }
    if accuracy < config.min_accuracy:
        raise TrainingError(
            f"held-out accuracy {accuracy:.3f} below the {config.min_accuracy:.2f} floor "
            f"after {config.epochs} epochs")
    return params


def _fmt17(x: float) -> str:
    return format(float(x), ".17g")


def save_params(params: ClassifierParams, path) -> None:
    """Structured JSON checkpoint, floats at 17 significant digits."""
    _check_params(params)
    chunks = ['{\n  "format_version": 1,\n']
    chunks.append(f'  "arch": {json.dumps(params.arch)},\n')
    chunks.append(f'  "class_count": {params.class_count},\n')
    chunks.append('  "layers": [\n')
    entries = []
    for name in sorted(params.layers):
        arr = params.layers[name]
        rows, cols = (1, arr.shape[0]) if arr.ndim == 1 else arr.shape
        data = ", ".join(_fmt17(v) for v in arr.ravel())
        entries.append(
            f'    {{"name": {json.dumps(name)}, "rows": {rows}, "cols": {cols}, '
            f'"data": [{data}]}}')
    chunks.append(",\n".join(entries))
    chunks.append("\n  ],\n")
    chunks.append(f'  "seed": {json.dumps(params.seed)},\n')
    chunks.append(f'  "train_meta": {json.dumps(params.train_meta)}\n')
    chunks.append("}\n")
    text = "".join(chunks)

    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="ascii") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_params(path) -> ClassifierParams:
    try:
        with open(path, "r", encoding="ascii") as fh:
            doc = json.load(fh)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"unreadable checkpoint {path}: {exc}") from None
    if not isinstance(doc, dict) or doc.get("format_version") != 1:
        raise CheckpointError(f"{path}: unsupported checkpoint format")
    try:
        layers: dict[str, np.ndarray] = {}
        for entry in doc["layers"]:
            arr = np.array(entry["data"], dtype=np.float64)
            if arr.size != entry["rows"] * entry["cols"]:
                raise CheckpointError(f"{path}: layer {entry['name']} has wrong element count")
            if entry["rows"] == 1 and entry["name"].endswith("_b"):
                layers[entry["name"]] = arr
            else:
                layers[entry["name"]] = arr.reshape(entry["rows"], entry["cols"])
        params = ClassifierParams(
            arch=doc["arch"],
            class_count=int(doc["class_count"]),
            layers=layers,
            seed=doc.get("seed"),
            train_meta=doc.get("train_meta", {}),
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, CheckpointError):
            raise
        raise CheckpointError(f"{path}: malformed checkpoint: {exc}") from None
    if not all(np.all(np.isfinite(v)) for v in params.layers.values()):
        raise CheckpointError(f"{path}: non-finite parameter values")
    try:
        _check_params(params)
    except ValueError as exc:
        raise CheckpointError(f"{path}: {exc}") from None
    return params
