"""Core data types: measurement matrices, skeletons, shapes and cameras.

Layout conventions (frame-major, as in stacked factorization):

* ``W`` is ``(2T, N)``: rows ``2t`` and ``2t+1`` hold the image x and y
  coordinates of the ``N`` joints in frame ``t``.
* ``S`` is ``(3T, N)``: rows ``3t .. 3t+2`` hold X, Y, Z of frame ``t``.
* ``S#`` is ``(T, 3N)``: row ``t`` is ``[X_t1..X_tN, Y_t1..Y_tN, Z_t1..Z_tN]``.

All containers copy their input to float64 and mark it read-only.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .exceptions import InvalidInputError, ShapeError, SkeletonError


def _frozen(array, ndim=None):
    out = np.array(array, dtype=np.float64, copy=True)
    if ndim is not None and out.ndim != ndim:
        raise ShapeError(f"expected a {ndim}-d array, got shape {out.shape}")
    out.setflags(write=False)
    return out


def register_to_centroid(frame):
    """Subtract the per-row mean of a ``(2, N)`` (or ``(d, N)``) frame.

    Returns
    -------
    registered : ndarray
        Frame with zero row means.
    centroid : ndarray
        The removed row means, so ``frame == registered + centroid[:, None]``.
    """
    frame = np.asarray(frame, dtype=np.float64)
    if frame.ndim != 2 or frame.shape[1] < 1:
        raise ShapeError(f"frame must be (d, N) with N >= 1, got {frame.shape}")
    if not np.all(np.isfinite(frame)):
        raise InvalidInputError("frame contains non-finite entries")
    centroid = frame.mean(axis=1)
    return frame - centroid[:, None], centroid


@dataclass(frozen=True, eq=False)
class MeasurementMatrix:
    """Centroid-registered 2D tracks ``W`` of shape ``(2T, N)``."""

    data: np.ndarray
    centroids: np.ndarray

    def __post_init__(self):
        data = _frozen(self.data, ndim=2)
        if data.shape[0] % 2 or data.shape[0] < 2:
            raise ShapeError(f"W must have 2T rows, got {data.shape[0]}")
        if data.shape[1] < 2:
            raise ShapeError("W needs at least two joints")
        if not np.all(np.isfinite(data)):
            raise InvalidInputError("W contains non-finite entries")
        centroids = _frozen(self.centroids).reshape(-1, 2)
        if centroids.shape[0] != data.shape[0] // 2:
            raise ShapeError("one centroid per frame is required")
        centroids.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "centroids", centroids)

    @classmethod
    def from_raw(cls, raw) -> "MeasurementMatrix":
        """Register every frame of an unregistered ``(2T, N)`` matrix."""
        raw = np.asarray(raw, dtype=np.float64)
        if raw.ndim != 2 or raw.shape[0] % 2:
            raise ShapeError(f"raw tracks must be (2T, N), got {raw.shape}")
        frames, cents = [], []
        for t in range(raw.shape[0] // 2):
            reg, c = register_to_centroid(raw[2 * t:2 * t + 2])
            frames.append(reg)
            cents.append(c)
        return cls(np.vstack(frames), np.array(cents))

    @classmethod
    def from_points(cls, points) -> "MeasurementMatrix":
        """Build from an array of shape ``(T, N, 2)``."""
        points = np.asarray(points, dtype=np.float64)
        if points.ndim != 3 or points.shape[2] != 2:
            raise ShapeError(f"points must be (T, N, 2), got {points.shape}")
        return cls.from_raw(points.transpose(0, 2, 1).reshape(-1, points.shape[1]))

    @property
    def frames(self) -> int:
        return self.data.shape[0] // 2

    @property
    def joints(self) -> int:
        return self.data.shape[1]

    def frame(self, t: int) -> np.ndarray:
        return self.data[2 * t:2 * t + 2]

    def to_points(self, with_centroids=False) -> np.ndarray:
        """Return ``(T, N, 2)`` coordinates, optionally un-registered."""
        pts = self.data.reshape(self.frames, 2, self.joints).transpose(0, 2, 1)
        if with_centroids:
            pts = pts + self.centroids[:, None, :]
        return np.array(pts)

    def window(self, start: int, stop: int) -> "MeasurementMatrix":
        return MeasurementMatrix(self.data[2 * start:2 * stop], self.centroids[start:stop])


@dataclass(frozen=True)
class Bone:
    parent: int
    child: int
    length: float


class Skeleton:
    """Bone graph over ``joint_count`` joints with unit-sum target lengths.

    Bones are arbitrary joint pairs; a kinematic tree is not required here
    (forward kinematics in :mod:`sfam.synth` does require one).
    """

    def __init__(self, joint_count: int, parents, children, lengths):
        parents = np.array(parents, dtype=np.int64).ravel()
        children = np.array(children, dtype=np.int64).ravel()
        lengths = np.array(lengths, dtype=np.float64).ravel()
        if not (parents.size == children.size == lengths.size):
            raise SkeletonError("parents, children and lengths must have equal size")
        if parents.size == 0:
            raise SkeletonError("skeleton needs at least one bone")
        if joint_count < 2:
            raise SkeletonError("skeleton needs at least two joints")
        problems = []
        seen = set()
        for b, (a, c) in enumerate(zip(parents, children)):
            if not (0 <= a < joint_count and 0 <= c < joint_count):
                problems.append(f"bone {b}: joint index out of range ({a}, {c})")
            elif a == c:
                problems.append(f"bone {b}: parent equals child ({a})")
            key = frozenset((int(a), int(c)))
            if key in seen:
                problems.append(f"bone {b}: duplicate pair ({a}, {c})")
            seen.add(key)
        if np.any(~np.isfinite(lengths)) or np.any(lengths <= 0):
            bad = [int(b) for b in np.flatnonzero(~(lengths > 0))]
            problems.append(f"non-positive lengths at bones {bad}")
        if problems:
            raise SkeletonError("; ".join(problems))
        if abs(lengths.sum() - 1.0) > 1e-12:
            raise SkeletonError(
                f"lengths must sum to 1 (got {lengths.sum():.15g}); "
                "use Skeleton.from_raw to normalize")
        for arr in (parents, children, lengths):
            arr.setflags(write=False)
        self.joint_count = int(joint_count)
        self.parents = parents
        self.children = children
        self.lengths = lengths

    @classmethod
    def from_raw(cls, joint_count: int, bones: Iterable[Sequence]) -> "Skeleton":
        """Build from ``(parent, child, raw_length)`` triples, normalizing lengths."""
        bones = [tuple(b) for b in bones]
        if not bones:
            raise SkeletonError("skeleton needs at least one bone")
        parents, children, raw = zip(*bones)
        return cls(joint_count, parents, children, normalize_lengths(raw))

    def with_lengths(self, lengths) -> "Skeleton":
        return Skeleton(self.joint_count, self.parents, self.children, lengths)

    @property
    def bone_count(self) -> int:
        return self.parents.size

    @property
    def bones(self) -> list[Bone]:
        return [Bone(int(a), int(c), float(l))
                for a, c, l in zip(self.parents, self.children, self.lengths)]

    def is_tree(self) -> bool:
        """True when the bones connect all joints without cycles."""
        if self.bone_count != self.joint_count - 1:
            return False
        root = list(range(self.joint_count))

        def find(i):
            while root[i] != i:
                root[i] = root[root[i]]
                i = root[i]
            return i

        for a, c in zip(self.parents, self.children):
            ra, rc = find(int(a)), find(int(c))
            if ra == rc:
                return False
            root[ra] = rc
        return True

    def check_joints(self, n_joints: int):
        if n_joints != self.joint_count:
            raise SkeletonError(
                f"skeleton has {self.joint_count} joints but data has {n_joints}")

    def __repr__(self):
        return f"Skeleton(joint_count={self.joint_count}, bones={self.bone_count})"


@dataclass(frozen=True, eq=False)
class ShapeSequence:
    """Stacked 3D shapes ``S`` of shape ``(3T, N)``."""

    data: np.ndarray

    def __post_init__(self):
        data = _frozen(self.data, ndim=2)
        if data.shape[0] % 3 or data.shape[0] < 3:
            raise ShapeError(f"S must have 3T rows, got {data.shape[0]}")
        object.__setattr__(self, "data", data)

    @classmethod
    def from_points(cls, points) -> "ShapeSequence":
        """Build from an array of shape ``(T, N, 3)``."""
        points = np.asarray(points, dtype=np.float64)
        if points.ndim != 3 or points.shape[2] != 3:
            raise ShapeError(f"points must be (T, N, 3), got {points.shape}")
        return cls(points.transpose(0, 2, 1).reshape(-1, points.shape[1]))

    @property
    def frames(self) -> int:
        return self.data.shape[0] // 3

    @property
    def joints(self) -> int:
        return self.data.shape[1]

    def frame(self, t: int) -> np.ndarray:
        return self.data[3 * t:3 * t + 3]

    def to_points(self) -> np.ndarray:
        """Return ``(T, N, 3)`` coordinates."""
        return np.array(self.data.reshape(self.frames, 3, self.joints).transpose(0, 2, 1))

    def rearranged(self) -> np.ndarray:
        return rearrange_shape(self.data)


@dataclass(frozen=True, eq=False)
class CameraPoses:
    """Per-frame orthographic pose-projection blocks, shape ``(T, 2, 3)``."""

    blocks: np.ndarray

    def __post_init__(self):
        blocks = _frozen(self.blocks, ndim=3)
        if blocks.shape[1:] != (2, 3):
            raise ShapeError(f"camera blocks must be (T, 2, 3), got {blocks.shape}")
        gram = blocks @ blocks.transpose(0, 2, 1)
        err = np.linalg.norm(gram - np.eye(2), axis=(1, 2))
        if np.any(err >= 1e-6):
            t = int(np.argmax(err))
            raise InvalidInputError(
                f"camera block {t} rows are not orthonormal (error {err[t]:.3g})")
        object.__setattr__(self, "blocks", blocks)

    @property
    def frames(self) -> int:
        return self.blocks.shape[0]

    def block_diagonal(self) -> np.ndarray:
        """Dense ``(2T, 3T)`` block-diagonal camera matrix."""
        T = self.frames
        R = np.zeros((2 * T, 3 * T))
        for t in range(T):
            R[2 * t:2 * t + 2, 3 * t:3 * t + 3] = self.blocks[t]
        return R

    def project(self, S) -> np.ndarray:
        """Return ``R S`` as a ``(2T, N)`` array without forming ``R``."""
        S = S.data if isinstance(S, ShapeSequence) else np.asarray(S)
        T = self.frames
        if S.shape[0] != 3 * T:
            raise ShapeError(f"S has {S.shape[0] // 3} frames, cameras have {T}")
        return (self.blocks @ S.reshape(T, 3, -1)).reshape(2 * T, -1)

    def backproject(self, W) -> np.ndarray:
        """Return ``R^T W`` as a ``(3T, N)`` array."""
        W = W.data if isinstance(W, MeasurementMatrix) else np.asarray(W)
        T = self.frames
        return (self.blocks.transpose(0, 2, 1) @ W.reshape(T, 2, -1)).reshape(3 * T, -1)


def rearrange_shape(S) -> np.ndarray:
    """Map ``S`` of shape ``(3T, N)`` to ``S#`` of shape ``(T, 3N)``."""
    S = np.asarray(S, dtype=np.float64)
    if S.ndim != 2 or S.shape[0] % 3:
        raise ShapeError(f"S must be (3T, N), got {S.shape}")
    T, N = S.shape[0] // 3, S.shape[1]
    return S.reshape(T, 3 * N).copy()


def rearrange_shape_inverse(S_sharp) -> np.ndarray:
    """Inverse of :func:`rearrange_shape`: ``(T, 3N)`` back to ``(3T, N)``."""
    S_sharp = np.asarray(S_sharp, dtype=np.float64)
    if S_sharp.ndim != 2 or S_sharp.shape[1] % 3:
        raise ShapeError(f"S# must be (T, 3N), got {S_sharp.shape}")
    T, N = S_sharp.shape[0], S_sharp.shape[1] // 3
    return S_sharp.reshape(3 * T, N).copy()


def bone_distances(frame, skeleton: Skeleton) -> np.ndarray:
    """Euclidean length of every bone in a single ``(3, N)`` frame."""
    frame = np.asarray(frame, dtype=np.float64)
    if frame.ndim != 2:
        raise ShapeError(f"frame must be (3, N), got {frame.shape}")
    skeleton.check_joints(frame.shape[1])
    return np.linalg.norm(frame[:, skeleton.parents] - frame[:, skeleton.children], axis=0)


def sequence_bone_distances(S, skeleton: Skeleton) -> np.ndarray:
    """Bone lengths for every frame, shape ``(T, B)``."""
    S = S.data if isinstance(S, ShapeSequence) else np.asarray(S, dtype=np.float64)
    skeleton.check_joints(S.shape[1])
    P = S.reshape(-1, 3, S.shape[1])
    return np.linalg.norm(P[:, :, skeleton.parents] - P[:, :, skeleton.children], axis=1)


def normalize_lengths(raw) -> np.ndarray:
    """Scale positive lengths so they sum to one."""
    raw = np.asarray(raw, dtype=np.float64).ravel()
    if raw.size == 0 or not np.all(np.isfinite(raw)) or np.any(raw <= 0):
        raise SkeletonError("bone lengths must be finite and strictly positive")
    total = raw.sum()
    if total <= 0:
        raise SkeletonError("bone lengths sum to zero")
    out = raw / total
    # final rounding fix keeps the unit-sum invariant at 1e-12
    out[np.argmax(out)] += 1.0 - out.sum()
    return out
