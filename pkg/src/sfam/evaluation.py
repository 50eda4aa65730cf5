"""Reconstruction metrics: rigid alignment, 3D errors and bone statistics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import DegenerateInputError, ShapeError
from .model import ShapeSequence, Skeleton, sequence_bone_distances


@dataclass(frozen=True, eq=False)
class AlignmentTransform:
    """Rigid map ``x -> rotation @ x + translation`` applied to estimates."""

    rotation: np.ndarray
    translation: np.ndarray
    reflection_used: bool = False

    def apply(self, S) -> np.ndarray:
        P = _points(S)
        return P @ self.rotation.T + self.translation

    @classmethod
    def identity(cls):
        return cls(np.eye(3), np.zeros(3), False)


@dataclass(frozen=True, eq=False)
class EvaluationReport:
    e3d_mm: float
    e3d_normalized: float
    per_bone_mean: np.ndarray
    per_bone_std: np.ndarray
    per_frame_error: np.ndarray
    reflection_used: bool = False

    def as_dict(self):
        return {
            "e3d_mm": self.e3d_mm,
            "e3d_normalized": self.e3d_normalized,
            "reflection_used": self.reflection_used,
            "per_bone_mean": self.per_bone_mean.tolist(),
            "per_bone_std": self.per_bone_std.tolist(),
            "per_frame_error": self.per_frame_error.tolist(),
        }


def _points(S) -> np.ndarray:
    """``(T, N, 3)`` view of a ShapeSequence, ``(3T, N)`` array or point array."""
    if isinstance(S, ShapeSequence):
        return S.to_points()
    S = np.asarray(S, dtype=np.float64)
    if S.ndim == 3 and S.shape[2] == 3:
        return S
    if S.ndim == 2 and S.shape[0] % 3 == 0:
        return S.reshape(-1, 3, S.shape[1]).transpose(0, 2, 1)
    raise ShapeError(f"cannot interpret array of shape {S.shape} as 3D shapes")


def center_frames(S) -> np.ndarray:
    """Remove the per-frame joint centroid; returns ``(T, N, 3)``."""
    P = _points(S)
    return P - P.mean(axis=1, keepdims=True)


def _procrustes(X, Y, reflection):
    # rotation G minimizing ||G X_i - Y_i|| over centered point sets (rows)
    H = X.T @ Y
    U, _, Vt = np.linalg.svd(H)
    d = np.sign(np.linalg.det(Vt.T @ U.T)) or 1.0
    if reflection:
        d = -d
    D = np.diag([1.0, 1.0, d])
    return Vt.T @ D @ U.T


def rigid_align(S_est, S_gt, allow_reflection: bool = True) -> AlignmentTransform:
    """Single rigid transform of all estimated points onto the ground truth.

    Solves orthogonal Procrustes on the stacked points of every frame. With
    ``allow_reflection`` both determinant branches are tried and the one
    with the lower squared residual is kept.
    """
    X, Y = _points(S_est), _points(S_gt)
    if X.shape != Y.shape:
        raise ShapeError(f"estimate {X.shape} and ground truth {Y.shape} differ")
    X, Y = X.reshape(-1, 3), Y.reshape(-1, 3)
    mx, my = X.mean(axis=0), Y.mean(axis=0)
    Xc, Yc = X - mx, Y - my
    if np.linalg.norm(Xc) < 1e-12 or np.linalg.norm(Yc) < 1e-12:
        raise DegenerateInputError("alignment undefined for coincident points")
    candidates = [(_procrustes(Xc, Yc, False), False)]
    if allow_reflection:
        candidates.append((_procrustes(Xc, Yc, True), True))
    best = None
    for G, _ in candidates:
        err = np.sum((Xc @ G.T - Yc) ** 2)
        if best is None or err < best[0]:
            best = (err, G)
    G = best[1]
    return AlignmentTransform(G, my - G @ mx, bool(np.linalg.det(G) < 0))


def error_3d(S_est, S_gt, transform: AlignmentTransform) -> float:
    """Mean Euclidean joint error after applying ``transform`` to ``S_est``."""
    return float(np.mean(per_frame_error(S_est, S_gt, transform)))


def per_frame_error(S_est, S_gt, transform: AlignmentTransform) -> np.ndarray:
    aligned = transform.apply(S_est)
    return np.linalg.norm(aligned - _points(S_gt), axis=2).mean(axis=1)


def normalization_variance(S_gt) -> float:
    """Mean per-frame, per-axis variance of the reference points.

    This is the normalizer of :func:`normalized_error_3d`: the variance of
    the ground-truth joints along x, y and z in each frame, averaged over
    the three axes and all frames.
    """
    P = _points(S_gt)
    return float(np.mean(P.var(axis=1)))


def normalized_error_3d(S_est, S_gt, transform: AlignmentTransform) -> float:
    """Mean squared joint error divided by :func:`normalization_variance`."""
    sigma = normalization_variance(S_gt)
    if sigma < 1e-12:
        raise DegenerateInputError("reference variance is zero")
    aligned = transform.apply(S_est)
    sq = np.sum((aligned - _points(S_gt)) ** 2, axis=2)
    return float(np.mean(sq) / sigma)


def bone_length_stats(S, skeleton: Skeleton):
    """Per-bone mean and population standard deviation over frames."""
    P = _points(S)
    D = sequence_bone_distances(P.transpose(0, 2, 1).reshape(-1, P.shape[1]), skeleton)
    return D.mean(axis=0), D.std(axis=0)


def evaluate(S_est, S_gt, skeleton: Skeleton | None = None, allow_reflection=True,
             center=True) -> EvaluationReport:
    """Align and score a reconstruction against ground truth.

    With ``center`` the per-frame centroids are removed from both sequences
    first, since registered orthographic tracks carry no translation.
    """
    X, Y = _points(S_est), _points(S_gt)
    if center:
        X, Y = center_frames(X), center_frames(Y)
    G = rigid_align(X, Y, allow_reflection)
    if skeleton is not None:
        means, stds = bone_length_stats(X, skeleton)
    else:
        means = stds = np.zeros(0)
    return EvaluationReport(
        e3d_mm=error_3d(X, Y, G),
        e3d_normalized=normalized_error_3d(X, Y, G),
        per_bone_mean=means,
        per_bone_std=stds,
        per_frame_error=per_frame_error(X, Y, G),
        reflection_used=G.reflection_used,
    )


def structure_diameter(S) -> float:
    """Largest joint-to-joint distance within any frame."""
    P = _points(S)
    d = np.linalg.norm(P[:, :, None] - P[:, None, :], axis=3)
    return float(d.max())
