"""Synthetic shape dataset, preprocessing/augmentation, and point-cloud IO.

Eight parametric surface classes are sampled area-uniformly, jittered, and
rescaled into [-1, 1]^3.  Stands in for a CAD-mesh corpus at desk scale.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass

import numpy as np

__all__ = [
    "CLASS_NAMES",
    "PointCloud",
    "SyntheticDataset",
    "XYZFormatError",
    "sample_shape",
    "shape_params",
    "farthest_point_subsample",
    "generate",
    "normalize_unit_cube",
    "augment",
    "augment_points",
    "make_dataset",
    "read_xyz",
    "write_xyz",
    "write_ply_colored",
    "save_dataset",
    "load_dataset",
]

CLASS_NAMES = ("sphere", "cube", "cylinder", "cone", "torus", "plane", "pyramid", "capsule")

SURFACE_JITTER_SIGMA = 0.005
# every cloud carries a little scatter noise (sensor-style stray returns);
# the fraction is drawn per sample from this range
SCATTER_FRACTION = (0.03, 0.08)


class XYZFormatError(ValueError):
    """Raised for malformed XYZ text files."""


@dataclass
class PointCloud:
    """Ordered (N, 3) float64 coordinates plus an optional class label."""

    points: np.ndarray
    label: int | None = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError(f"expected (N, 3) points, got shape {pts.shape}")
        if pts.shape[0] < 4:
            raise ValueError("a point cloud needs at least 4 points")
        if not np.all(np.isfinite(pts)):
            raise ValueError("point coordinates must be finite")
        object.__setattr__(self, "points", pts)

    @property
    def n_points(self) -> int:
        return self.points.shape[0]


@dataclass
class SyntheticDataset:
    samples: list[PointCloud]
    class_names: tuple[str, ...]
    split: str
    seed: int

    def __len__(self) -> int:
        return len(self.samples)


def _unit_rows(v: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(v, axis=1, keepdims=True)
    norms[norms < 1e-12] = 1.0
    return v / norms


def _sample_sphere(rng, n, r=1.0):
    return r * _unit_rows(rng.normal(size=(n, 3)))


def _sample_box(rng, n, hx, hy, hz):
    areas = np.array([hy * hz, hy * hz, hx * hz, hx * hz, hx * hy, hx * hy])
    face = rng.choice(6, size=n, p=areas / areas.sum())
    u = rng.uniform(-1.0, 1.0, size=n)
    v = rng.uniform(-1.0, 1.0, size=n)
    pts = np.empty((n, 3))
    axis = face // 2
    sign = np.where(face % 2 == 0, 1.0, -1.0)
    half = np.array([hx, hy, hz])
    for ax, (ua, va) in enumerate(((1, 2), (0, 2), (0, 1))):
        m = axis == ax
        pts[m, ax] = sign[m] * half[ax]
        pts[m, ua] = u[m] * half[ua]
        pts[m, va] = v[m] * half[va]
    return pts


def _sample_cylinder(rng, n, r, h):
    side = 2.0 * np.pi * r * h
    cap = np.pi * r**2
    region = rng.choice(3, size=n, p=np.array([side, cap, cap]) / (side + 2 * cap))
    ang = rng.uniform(0.0, 2.0 * np.pi, size=n)
    pts = np.empty((n, 3))
    m = region == 0
    pts[m, 0] = r * np.cos(ang[m])
    pts[m, 1] = r * np.sin(ang[m])
    pts[m, 2] = rng.uniform(-h / 2, h / 2, size=int(m.sum()))
    for reg, z in ((1, h / 2), (2, -h / 2)):
        m = region == reg
        rad = r * np.sqrt(rng.uniform(size=int(m.sum())))
        pts[m, 0] = rad * np.cos(ang[m])
        pts[m, 1] = rad * np.sin(ang[m])
        pts[m, 2] = z
    return pts


def _sample_cone(rng, n, r, h):
    slant = np.hypot(r, h)
    lateral = np.pi * r * slant
    base = np.pi * r**2
    region = rng.choice(2, size=n, p=np.array([lateral, base]) / (lateral + base))
    ang = rng.uniform(0.0, 2.0 * np.pi, size=n)
    pts = np.empty((n, 3))
    m = region == 0
    rho = np.sqrt(rng.uniform(size=int(m.sum())))  # area grows with apex distance
    pts[m, 0] = r * rho * np.cos(ang[m])
    pts[m, 1] = r * rho * np.sin(ang[m])
    pts[m, 2] = h / 2 - h * rho
    m = region == 1
    rad = r * np.sqrt(rng.uniform(size=int(m.sum())))
    pts[m, 0] = rad * np.cos(ang[m])
    pts[m, 1] = rad * np.sin(ang[m])
    pts[m, 2] = -h / 2
    return pts


def _sample_torus(rng, n, major, minor):
    pts = np.empty((n, 3))
    filled = 0
    while filled < n:
        want = n - filled
        v = rng.uniform(0.0, 2.0 * np.pi, size=2 * want)
        accept = rng.uniform(size=2 * want) < (major + minor * np.cos(v)) / (major + minor)
        v = v[accept][:want]
        got = v.shape[0]
        u = rng.uniform(0.0, 2.0 * np.pi, size=got)
        ring = major + minor * np.cos(v)
        pts[filled:filled + got, 0] = ring * np.cos(u)
        pts[filled:filled + got, 1] = ring * np.sin(u)
        pts[filled:filled + got, 2] = minor * np.sin(v)
        filled += got
    return pts


def _sample_plane(rng, n, a, b, warp_x=0.0, warp_y=0.0):
    # gently warped sheet: a perfectly flat plane is invariant under
    # tangential motion, which would make it a degenerate class
    pts = np.zeros((n, 3))
    pts[:, 0] = rng.uniform(-a, a, size=n)
    pts[:, 1] = rng.uniform(-b, b, size=n)
    pts[:, 2] = warp_x * pts[:, 0] ** 2 + warp_y * pts[:, 1] ** 2
    return pts


def _sample_triangles(rng, n, tris, areas):
    idx = rng.choice(len(tris), size=n, p=areas / areas.sum())
    u = rng.uniform(size=n)
    v = rng.uniform(size=n)
    flip = u + v > 1.0
    u[flip] = 1.0 - u[flip]
    v[flip] = 1.0 - v[flip]
    a = tris[idx, 0]
    return a + u[:, None] * (tris[idx, 1] - a) + v[:, None] * (tris[idx, 2] - a)


def _sample_pyramid(rng, n, a, h):
    apex = np.array([0.0, 0.0, h / 2])
    c = np.array([
        [a, a, -h / 2], [-a, a, -h / 2], [-a, -a, -h / 2], [a, -a, -h / 2],
    ])
    tris = []
    for i in range(4):
        tris.append([apex, c[i], c[(i + 1) % 4]])
    # base square as two triangles
    tris.append([c[0], c[1], c[2]])
    tris.append([c[0], c[2], c[3]])
    tris = np.array(tris)
    edges = np.cross(tris[:, 1] - tris[:, 0], tris[:, 2] - tris[:, 0])
    areas = 0.5 * np.linalg.norm(edges, axis=1)
    return _sample_triangles(rng, n, tris, areas)


def _sample_capsule(rng, n, r, h):
    side = 2.0 * np.pi * r * h
    hemi = 2.0 * np.pi * r**2
    region = rng.choice(3, size=n, p=np.array([side, hemi, hemi]) / (side + 2 * hemi))
    pts = np.empty((n, 3))
    m = region == 0
    ang = rng.uniform(0.0, 2.0 * np.pi, size=int(m.sum()))
    pts[m, 0] = r * np.cos(ang)
    pts[m, 1] = r * np.sin(ang)
    pts[m, 2] = rng.uniform(-h / 2, h / 2, size=int(m.sum()))
    for reg, sign in ((1, 1.0), (2, -1.0)):
        m = region == reg
        d = _unit_rows(rng.normal(size=(int(m.sum()), 3)))
        d[:, 2] = sign * np.abs(d[:, 2])
        pts[m] = r * d
        pts[m, 2] += sign * h / 2
    return pts


def shape_params(class_name: str, rng: np.random.Generator) -> dict:
    """Draw per-sample shape parameters (aspect ratios etc).

    Ranges are chosen so the eight classes are learnable by a small
    classifier yet keep nontrivial intra-class variation.
    """
    if class_name == "sphere":
        return {}
    if class_name == "cube":
        return {"hy": rng.uniform(0.6, 1.6), "hz": rng.uniform(0.6, 1.6)}
    if class_name == "cylinder":
        return {"aspect": rng.uniform(1.0, 2.5)}
    if class_name == "cone":
        return {"aspect": rng.uniform(1.2, 3.0)}
    if class_name == "torus":
        return {"ratio": rng.uniform(0.2, 0.5)}
    if class_name == "plane":
        return {"aspect": rng.uniform(0.5, 2.0),
                "warp_x": rng.uniform(0.1, 0.35) * rng.choice((-1.0, 1.0)),
                "warp_y": rng.uniform(0.1, 0.35) * rng.choice((-1.0, 1.0))}
    if class_name == "pyramid":
        return {"aspect": rng.uniform(0.8, 1.6)}
    if class_name == "capsule":
        return {"aspect": rng.uniform(1.2, 3.0)}
    raise ValueError(f"unknown shape class {class_name!r}")


def sample_shape(class_name: str, params: dict, n_points: int, rng: np.random.Generator) -> np.ndarray:
    """Raw area-uniform surface samples in canonical pose, no jitter."""
    if class_name == "sphere":
        return _sample_sphere(rng, n_points)
    if class_name == "cube":
        return _sample_box(rng, n_points, 1.0, params["hy"], params["hz"])
    if class_name == "cylinder":
        return _sample_cylinder(rng, n_points, 1.0, 2.0 * params["aspect"])
    if class_name == "cone":
        return _sample_cone(rng, n_points, 1.0, params["aspect"])
    if class_name == "torus":
        return _sample_torus(rng, n_points, 1.0, params["ratio"])
    if class_name == "plane":
        return _sample_plane(rng, n_points, 1.0, params["aspect"],
                             params.get("warp_x", 0.0), params.get("warp_y", 0.0))
    if class_name == "pyramid":
        return _sample_pyramid(rng, n_points, 1.0, params["aspect"])
    if class_name == "capsule":
        return _sample_capsule(rng, n_points, 1.0, params["aspect"])
    raise ValueError(f"unknown shape class {class_name!r}")


def farthest_point_subsample(points: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    """Pick n points with maximal mutual spacing (greedy farthest-point).

    Gives near-uniform coverage with a tight nearest-neighbor distance
    distribution, like mesh-sampling pipelines produce.
    """
    pts = np.asarray(points, dtype=np.float64)
    m = pts.shape[0]
    if n >= m:
        return pts.copy()
    chosen = np.empty(n, dtype=np.intp)
    chosen[0] = rng.integers(m)
    d2 = np.sum((pts - pts[chosen[0]]) ** 2, axis=1)
    for i in range(1, n):
        chosen[i] = int(np.argmax(d2))
        d2 = np.minimum(d2, np.sum((pts - pts[chosen[i]]) ** 2, axis=1))
    return pts[np.sort(chosen)]


def normalize_unit_cube(points) -> np.ndarray:
    """Center on the centroid and scale so max |coordinate| is 1."""
    pts = np.asarray(points, dtype=np.float64)
    centered = pts - pts.mean(axis=0)
    scale = np.max(np.abs(centered))
    if scale == 0.0:
        raise ValueError("cannot normalize a degenerate (single-position) cloud")
    return centered / scale


def generate(class_name: str, params: dict, n_points: int, seed,
             scatter_fraction: tuple[float, float] | None = None) -> PointCloud:
    """Jittered, unit-cube-normalized surface sample of one shape.

    A small random fraction of points is replaced by uniform scatter inside
    the shape's bounding box, mimicking stray sensor returns
    (SCATTER_FRACTION unless overridden).
    """
    rng = np.random.default_rng(seed)
    # oversample, then farthest-point-subsample for even surface coverage
    raw = sample_shape(class_name, params, 4 * n_points, rng)
    raw = farthest_point_subsample(raw, n_points, rng)
    raw = raw + rng.normal(scale=SURFACE_JITTER_SIGMA, size=raw.shape)
    lo_f, hi_f = SCATTER_FRACTION if scatter_fraction is None else scatter_fraction
    if hi_f > 0.0:
        n_scatter = int(np.ceil(rng.uniform(lo_f, hi_f) * n_points))
        idx = rng.choice(n_points, size=n_scatter, replace=False)
        lo, hi = raw.min(axis=0), raw.max(axis=0)
        center, half = (lo + hi) / 2.0, (hi - lo) / 2.0 * 1.15
        raw[idx] = center + rng.uniform(-1.0, 1.0, size=(n_scatter, 3)) * half
    return PointCloud(points=normalize_unit_cube(raw), label=CLASS_NAMES.index(class_name))


def augment_points(points: np.ndarray, rng: np.random.Generator, *,
                   rotate: bool = True, jitter_sigma: float = 0.01,
                   jitter_clip: float = 0.05, drop_max: float = 0.1) -> np.ndarray:
    """Random z-rotation, clipped Gaussian jitter, and drop-with-resampling."""
    pts = np.asarray(points, dtype=np.float64)
    n = pts.shape[0]
    if rotate:
        ang = rng.uniform(0.0, 2.0 * np.pi)
        c, s = np.cos(ang), np.sin(ang)
        rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        pts = pts @ rot.T
    if jitter_sigma > 0.0:
        noise = rng.normal(scale=jitter_sigma, size=pts.shape)
        pts = pts + np.clip(noise, -jitter_clip, jitter_clip)
    if drop_max > 0.0:
        n_drop = int(rng.integers(0, int(np.floor(drop_max * n)) + 1))
        if n_drop > 0:
            survivors = rng.choice(n, size=n - n_drop, replace=False)
            survivors.sort()
            refill = rng.choice(survivors, size=n_drop, replace=True)
            pts = pts[np.concatenate([survivors, refill])]
    return pts


def augment(cloud: PointCloud, seed, **kwargs) -> PointCloud:
    rng = np.random.default_rng(seed)
    return PointCloud(points=augment_points(cloud.points, rng, **kwargs), label=cloud.label)


def make_dataset(seed: int, n_train: int, n_test: int, n_points: int = 1024,
                 scatter_fraction: tuple[float, float] | None = None,
                 ) -> tuple[SyntheticDataset, SyntheticDataset]:
    """Balanced train/test splits with per-sample seeds disjoint by split."""
    splits = []
    for split_id, (split, count) in enumerate((("train", n_train), ("test", n_test))):
        samples = []
        for idx in range(count):
            cls = CLASS_NAMES[idx % len(CLASS_NAMES)]
            rng = np.random.default_rng(np.random.SeedSequence([seed, split_id, idx, 0]))
            params = shape_params(cls, rng)
            samples.append(generate(cls, params, n_points,
                                    np.random.SeedSequence([seed, split_id, idx, 1]),
                                    scatter_fraction=scatter_fraction))
        splits.append(SyntheticDataset(samples=samples, class_names=CLASS_NAMES,
                                       split=split, seed=seed))
    return splits[0], splits[1]


def read_xyz(path) -> PointCloud:
    """Parse one-point-per-line text; '#' comment lines are ignored."""
    rows = []
    with open(path, "r", encoding="ascii") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            parts = stripped.split()
            if len(parts) != 3:
                raise XYZFormatError(f"{path}: line {lineno}: expected 3 values, got {len(parts)}")
            try:
                rows.append([float(p) for p in parts])
            except ValueError as exc:
                raise XYZFormatError(f"{path}: line {lineno}: {exc}") from None
    if not rows:
        raise XYZFormatError(f"{path}: no points found")
    return PointCloud(points=np.array(rows, dtype=np.float64))


def _atomic_write_text(path, text: str) -> None:
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


def write_xyz(cloud: PointCloud | np.ndarray, path) -> None:
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=np.float64)
    lines = [" ".join(format(v, ".9g") for v in row) for row in pts]
    _atomic_write_text(path, "\n".join(lines) + "\n")


def write_ply_colored(cloud: PointCloud | np.ndarray, scalars, path) -> None:
    """ASCII PLY with per-vertex RGB from scalar quantiles (blue -> red)."""
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=np.float64)
    vals = np.asarray(scalars, dtype=np.float64)
    if vals.shape != (pts.shape[0],):
        raise ValueError("need one scalar per point")
    ordered = np.sort(vals)
    denom = max(pts.shape[0] - 1, 1)
    q = np.searchsorted(ordered, vals, side="left") / denom
    red = np.rint(255.0 * q).astype(int)
    blue = 255 - red
    header = [
        "ply",
        "format ascii 1.0",
        f"element vertex {pts.shape[0]}",
        "property float x",
        "property float y",
        "property float z",
        "property uchar red",
        "property uchar green",
        "property uchar blue",
        "end_header",
    ]
    body = [
        " ".join(format(v, ".9g") for v in row) + f" {r} 0 {b}"
        for row, r, b in zip(pts, red, blue)
    ]
    _atomic_write_text(path, "\n".join(header + body) + "\n")


def save_dataset(directory, train: SyntheticDataset, test: SyntheticDataset,
                 n_points: int, seed: int, force: bool = False) -> None:
    """Write manifest.json plus train/ and test/ XYZ files (label in filename)."""
    directory = os.path.abspath(directory)
    if os.path.isdir(directory) and os.listdir(directory) and not force:
        raise FileExistsError(f"output directory {directory} is not empty (use force)")
    os.makedirs(directory, exist_ok=True)
    manifest = {
        "seed": seed,
        "classes": list(CLASS_NAMES),
        "n_train": len(train),
        "n_test": len(test),
        "n_points": n_points,
    }
    _atomic_write_text(os.path.join(directory, "manifest.json"),
                       json.dumps(manifest, indent=2) + "\n")
    for split in (train, test):
        sub = os.path.join(directory, split.split)
        os.makedirs(sub, exist_ok=True)
        for idx, sample in enumerate(split.samples):
            name = f"{idx:04d}_{CLASS_NAMES[sample.label]}.xyz"
            write_xyz(sample, os.path.join(sub, name))


def load_dataset(directory) -> tuple[SyntheticDataset, SyntheticDataset, dict]:
    directory = os.path.abspath(directory)
    manifest_path = os.path.join(directory, "manifest.json")
    if not os.path.isfile(manifest_path):
        raise FileNotFoundError(f"no manifest.json in {directory}")
    with open(manifest_path, "r", encoding="ascii") as fh:
        manifest = json.load(fh)
    classes = tuple(manifest["classes"])
    splits = []
    for split in ("train", "test"):
        sub = os.path.join(directory, split)
        samples = []
        for name in sorted(os.listdir(sub)):
            if not name.endswith(".xyz"):
                continue
            stem = name[:-4]
            cls = stem.split("_", 1)[1]
            cloud = read_xyz(os.path.join(sub, name))
            cloud.label = classes.index(cls)
            samples.append(cloud)
        splits.append(SyntheticDataset(samples=samples, class_names=classes,
                                       split=split, seed=manifest["seed"]))
    return splits[0], splits[1], manifest
