"""Tangent-plane geometry for point clouds.

Every point gets a local frame built from its k-nearest-neighbor covariance:
the unit normal (smallest-eigenvalue eigenvector), a rotation that maps the
tangent plane onto the x'y' plane, and a translation along the normal.  The
forward map is  p' = R (p + T)  and the inverse is  p = R^T p' - T, so moving
a point inside the x'y' slice of the transformed coordinates keeps it on its
tangent plane.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "TangentFrame",
    "TangentFrameSet",
    "knn",
    "knn_all",
    "covariance",
    "neighborhood_covariances",
    "jacobi_eigh",
    "jacobi_eigh_batch",
    "estimate_normal",
    "rotation_from_normal",
    "build_frame",
    "build_frames",
    "to_tangent",
    "from_tangent",
    "transform_points",
    "untransform_points",
    "rotate_gradient",
    "rotate_gradients",
]

# Below this value of 1 - n3^2 the general rotation rows are numerically
# useless (catastrophic cancellation), so the |n3| -> 1 limit matrix is used.
BOUNDARY_EPS = 1e-10

_JACOBI_TOL = 1e-12
_JACOBI_MAX_SWEEPS = 50
# Smallest-vs-second eigenvalue gap below which the normal direction is
# considered ambiguous (isotropic neighborhood).
_EIG_DEGENERATE_TOL = 1e-9

_SQRT1_2 = 1.0 / np.sqrt(2.0)


@dataclass(frozen=True)
class TangentFrame:
    """Per-point normal / rotation / translation of the local transform."""

    normal: np.ndarray       # unit (3,)
    rotation: np.ndarray     # (3, 3), R R^T = I
    translation: np.ndarray  # (3,), equals (p . n) n
    degenerate: bool = False


@dataclass(frozen=True)
class TangentFrameSet:
    """Stacked frames for a whole cloud, index-aligned with its points."""

    normals: np.ndarray       # (N, 3)
    rotations: np.ndarray     # (N, 3, 3)
    translations: np.ndarray  # (N, 3)
    degenerate: np.ndarray    # (N,) bool
    k: int

    def __len__(self) -> int:
        return self.normals.shape[0]

    def __getitem__(self, i: int) -> TangentFrame:
        return TangentFrame(
            normal=self.normals[i],
            rotation=self.rotations[i],
            translation=self.translations[i],
            degenerate=bool(self.degenerate[i]),
        )


def _as_points(points) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"expected an (N, 3) array of points, got shape {pts.shape}")
    return pts


def knn(points, i: int, k: int) -> np.ndarray:
    """Indices of the k nearest neighbors of point i, exhaustive scan.

    The result is sorted by (distance, index); distance ties break toward the
    lower index.  Point i itself is excluded.
    """
    pts = _as_points(points)
    n = pts.shape[0]
    if not 0 <= i < n:
        raise ValueError(f"point index {i} out of range for {n} points")
    if not 1 <= k <= n - 1:
        raise ValueError(f"k={k} out of range, need 1 <= k <= {n - 1}")
    d2 = np.sum((pts - pts[i]) ** 2, axis=1)
    d2[i] = np.inf
    order = np.lexsort((np.arange(n), d2))
    return order[:k].copy()


def knn_all(points, k: int) -> np.ndarray:
    """(N, k) neighbor indices for every point, same ordering rules as knn."""
    pts = _as_points(points)
    n = pts.shape[0]
    if not 1 <= k <= n - 1:
        raise ValueError(f"k={k} out of range, need 1 <= k <= {n - 1}")
    d2 = np.sum((pts[:, None, :] - pts[None, :, :]) ** 2, axis=2)
    np.fill_diagonal(d2, np.inf)
    # stable sort keeps equal distances in ascending index order
    order = np.argsort(d2, axis=1, kind="stable")
    return order[:, :k]


def covariance(points, i: int, neighbors) -> np.ndarray:
    """Sum of outer products of neighbor offsets around point i."""
    pts = _as_points(points)
    nbr = np.asarray(neighbors, dtype=np.intp)
    if nbr.size == 0:
        raise ValueError("neighbor list is empty")
    if np.any(nbr == i):
        raise ValueError(f"point {i} may not be its own neighbor")
    offsets = pts[nbr] - pts[i]
    return offsets.T @ offsets


def neighborhood_covariances(points, neighbor_idx: np.ndarray) -> np.ndarray:
    """(N, 3, 3) neighbor-offset covariances for precomputed knn indices."""
    pts = _as_points(points)
    offsets = pts[neighbor_idx] - pts[:, None, :]
    return np.einsum("nki,nkj->nij", offsets, offsets)


def jacobi_eigh(matrix) -> tuple[np.ndarray, np.ndarray]:
    """Eigen-decomposition of one symmetric 3x3 matrix, see jacobi_eigh_batch."""
    vals, vecs, _ = jacobi_eigh_batch(np.asarray(matrix, dtype=np.float64)[None])
    return vals[0], vecs[0]


def jacobi_eigh_batch(mats: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Cyclic Jacobi sweeps over a stack of symmetric 3x3 matrices.

    Sweeps run until every matrix has off-diagonal Frobenius norm below 1e-12,
    capped at 50 sweeps.  Returns (eigenvalues (M, 3) ascending, eigenvectors
    (M, 3, 3) as columns, degenerate (M,) flag for a repeated smallest
    eigenvalue).  Eigenvalue ties keep the original diagonal position order.
    """
    a = np.array(mats, dtype=np.float64)
    if a.ndim != 3 or a.shape[1:] != (3, 3):
        raise ValueError(f"expected an (M, 3, 3) stack, got shape {a.shape}")
    m = a.shape[0]
    v = np.broadcast_to(np.eye(3), (m, 3, 3)).copy()

    for _ in range(_JACOBI_MAX_SWEEPS):
        off2 = (a[:, 0, 1] ** 2 + a[:, 0, 2] ** 2 + a[:, 1, 2] ** 2) * 2.0
        if np.all(off2 < _JACOBI_TOL**2):
            break
        for p, q, r in ((0, 1, 2), (0, 2, 1), (1, 2, 0)):
            apq = a[:, p, q]
            rotate = apq != 0.0
            if not np.any(rotate):
                continue
            app = a[:, p, p]
            aqq = a[:, q, q]
            safe_apq = np.where(rotate, apq, 1.0)
            with np.errstate(over="ignore", divide="ignore"):
                theta = (aqq - app) / (2.0 * safe_apq)
                # |theta| huge -> t underflows to ~1/(2 theta) -> 0, harmless
                t = np.sign(theta) / (np.abs(theta) + np.sqrt(theta**2 + 1.0))
            t = np.where(theta == 0.0, 1.0, t)
            c = 1.0 / np.sqrt(t**2 + 1.0)
            s = t * c
            t = np.where(rotate, t, 0.0)
            c = np.where(rotate, c, 1.0)
            s = np.where(rotate, s, 0.0)

            a[:, p, p] = app - t * apq
            a[:, q, q] = aqq + t * apq
            a[:, p, q] = 0.0
            a[:, q, p] = 0.0
            arp = a[:, r, p].copy()
            arq = a[:, r, q].copy()
            a[:, r, p] = c * arp - s * arq
            a[:, p, r] = a[:, r, p]
            a[:, r, q] = s * arp + c * arq
            a[:, q, r] = a[:, r, q]

            vp = v[:, :, p].copy()
            vq = v[:, :, q].copy()
            v[:, :, p] = c[:, None] * vp - s[:, None] * vq
            v[:, :, q] = s[:, None] * vp + c[:, None] * vq

    diag = np.stack([a[:, 0, 0], a[:, 1, 1], a[:, 2, 2]], axis=1)
    order = np.argsort(diag, axis=1, kind="stable")
    vals = np.take_along_axis(diag, order, axis=1)
    vecs = np.take_along_axis(v, order[:, None, :], axis=2)
    gap = vals[:, 1] - vals[:, 0]
    degenerate = gap <= _EIG_DEGENERATE_TOL * np.maximum(1.0, np.abs(vals[:, 2]))
    return vals, vecs, degenerate


def _canonical_sign(normals: np.ndarray) -> np.ndarray:
    """Flip normals so the first nonzero of (n3, n2, n1) is positive."""
    n1, n2, n3 = normals[:, 0], normals[:, 1], normals[:, 2]
    s = np.where(n3 != 0.0, np.sign(n3), np.where(n2 != 0.0, np.sign(n2), np.sign(n1)))
    s = np.where(s == 0.0, 1.0, s)
    return normals * s[:, None]


def estimate_normal(cov) -> np.ndarray:
    """Unit eigenvector of the smallest eigenvalue, sign-canonicalized."""
    c = np.asarray(cov, dtype=np.float64)
    if c.shape != (3, 3):
        raise ValueError(f"expected a 3x3 matrix, got shape {c.shape}")
    if np.max(np.abs(c - c.T)) > 1e-12:
        raise ValueError("covariance matrix is not symmetric")
    _, vecs, _ = jacobi_eigh_batch(c[None])
    normal = _canonical_sign(vecs[:, :, 0])[0]
    return normal / np.linalg.norm(normal)


def _rotations_from_normals(normals: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(N, 3, 3) rotations plus the boundary-form mask."""
    n1, n2, n3 = normals[:, 0], normals[:, 1], normals[:, 2]
    s2 = 1.0 - n3**2
    boundary = s2 < BOUNDARY_EPS
    s = np.sqrt(np.where(boundary, 1.0, s2))

    rot = np.empty((normals.shape[0], 3, 3), dtype=np.float64)
    rot[:, 0, 0] = n2 / s
    rot[:, 0, 1] = -n1 / s
    rot[:, 0, 2] = 0.0
    rot[:, 1, 0] = n1 * n3 / s
    rot[:, 1, 1] = n2 * n3 / s
    rot[:, 1, 2] = -s
    rot[:, 2, 0] = n1
    rot[:, 2, 1] = n2
    rot[:, 2, 2] = n3

    if np.any(boundary):
        sgn = np.where(n3[boundary] < 0.0, -1.0, 1.0)
        lim = np.zeros((sgn.shape[0], 3, 3), dtype=np.float64)
        lim[:, 0, 0] = _SQRT1_2
        lim[:, 0, 1] = -_SQRT1_2
        lim[:, 1, 0] = sgn * _SQRT1_2
        lim[:, 1, 1] = sgn * _SQRT1_2
        lim[:, 2, 2] = sgn
        rot[boundary] = lim
    return rot, boundary


def rotation_from_normal(normal) -> np.ndarray:
    """Rotation taking object coordinates to the normal-aligned frame."""
    n = np.asarray(normal, dtype=np.float64)
    if n.shape != (3,):
        raise ValueError(f"expected a 3-vector, got shape {n.shape}")
    if abs(np.linalg.norm(n) - 1.0) > 1e-9:
        raise ValueError("normal must be a unit vector")
    rot, _ = _rotations_from_normals(n[None])
    return rot[0]


def build_frame(p, normal) -> TangentFrame:
    """Frame at point p for a given unit normal."""
    n = np.asarray(normal, dtype=np.float64)
    pt = np.asarray(p, dtype=np.float64)
    if n.shape != (3,) or pt.shape != (3,):
        raise ValueError("point and normal must be 3-vectors")
    if abs(np.linalg.norm(n) - 1.0) > 1e-9:
        raise ValueError("normal must be a unit vector")
    rot, boundary = _rotations_from_normals(n[None])
    translation = float(pt @ n) * n
    return TangentFrame(normal=n.copy(), rotation=rot[0],
                        translation=translation, degenerate=bool(boundary[0]))


def build_frames(points, k: int) -> TangentFrameSet:
    """Estimate a normal and build a tangent frame for every point.

    Per point: exhaustive knn, neighbor-offset covariance, smallest-eigenvalue
    normal (Jacobi), then the rotation/translation pair.  Deterministic.
    """
    pts = _as_points(points)
    n = pts.shape[0]
    if not 3 <= k <= n - 1:
        raise ValueError(f"k={k} out of range, need 3 <= k <= {n - 1}")
    nbr = knn_all(pts, k)
    covs = neighborhood_covariances(pts, nbr)
    _, vecs, eig_degenerate = jacobi_eigh_batch(covs)
    normals = _canonical_sign(vecs[:, :, 0])
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    rotations, boundary = _rotations_from_normals(normals)
    dots = np.sum(pts * normals, axis=1)
    translations = dots[:, None] * normals
    return TangentFrameSet(
        normals=normals,
        rotations=rotations,
        translations=translations,
        degenerate=boundary | eig_degenerate,
        k=k,
    )


def to_tangent(frame: TangentFrame, p) -> np.ndarray:
    """R (p + T)."""
    pt = np.asarray(p, dtype=np.float64)
    return frame.rotation @ (pt + frame.translation)


def from_tangent(frame: TangentFrame, p_t) -> np.ndarray:
    """R^T p' - T, exact inverse of to_tangent."""
    pt = np.asarray(p_t, dtype=np.float64)
    return frame.rotation.T @ pt - frame.translation


def transform_points(frames: TangentFrameSet, points) -> np.ndarray:
    """Apply each point's own frame: row i becomes R_i (p_i + T_i)."""
    pts = _as_points(points)
    return np.einsum("nij,nj->ni", frames.rotations, pts + frames.translations)


def untransform_points(frames: TangentFrameSet, points_t) -> np.ndarray:
    """Inverse of transform_points: row i becomes R_i^T p'_i - T_i."""
    pts = _as_points(points_t)
    return np.einsum("nji,nj->ni", frames.rotations, pts) - frames.translations


def rotate_gradient(frame: TangentFrame, grad) -> np.ndarray:
    """Ambient loss gradient expressed in tangent coordinates: R g."""
    g = np.asarray(grad, dtype=np.float64)
    return frame.rotation @ g


def rotate_gradients(frames: TangentFrameSet, grads) -> np.ndarray:
    """Row-wise rotate_gradient for an (N, 3) gradient map."""
    g = _as_points(grads)
    return np.einsum("nij,nj->ni", frames.rotations, g)
