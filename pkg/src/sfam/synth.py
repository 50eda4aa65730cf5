"""Synthetic articulated motion, orthographic cameras and perturbations.

Forward kinematics composes one rotation per bone about a fixed local axis,
with the angle following ``offset + amplitude * sin(2 pi f t / T + phase)``.
Every frame therefore has exactly the skeleton's bone lengths.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

from .exceptions import InvalidInputError, UnsupportedSpecError
from .model import CameraPoses, MeasurementMatrix, ShapeSequence, Skeleton, normalize_lengths

# world frame: z is up, the camera looks horizontally along +y at azimuth 0
_CAMERA_BASE = np.array([[1.0, 0.0, 0.0], [0.0, 0.0, 1.0], [0.0, -1.0, 0.0]])


@dataclass
class MotionSpec:
    """Parameters of a synthetic articulated sequence.

    Per-bone arrays have one entry per skeleton bone. ``directions`` are rest
    bone directions in the parent bone's frame, ``axes`` the local rotation
    axes. ``scale`` converts the unit-sum skeleton lengths to length units.
    ``camera_speed`` is the camera azimuth change per frame in radians.
    """

    skeleton: Skeleton
    frames: int
    directions: np.ndarray
    axes: np.ndarray
    amplitudes: np.ndarray
    frequencies: np.ndarray
    phases: np.ndarray
    offsets: np.ndarray | None = None
    scale: float = 1.0
    root: int = 0
    root_amplitude: np.ndarray = field(default_factory=lambda: np.zeros(3))
    root_frequency: float = 1.0
    camera_axis: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))
    camera_speed: float = 0.0
    camera_start: float = 0.0
    camera_tilt: float = 0.0
    seed: int = 0

    def __post_init__(self):
        B = self.skeleton.bone_count
        self.directions = np.asarray(self.directions, dtype=float).reshape(B, 3)
        self.axes = np.asarray(self.axes, dtype=float).reshape(B, 3)
        self.amplitudes = np.asarray(self.amplitudes, dtype=float).reshape(B)
        self.frequencies = np.asarray(self.frequencies, dtype=float).reshape(B)
        self.phases = np.asarray(self.phases, dtype=float).reshape(B)
        self.offsets = (np.zeros(B) if self.offsets is None
                        else np.asarray(self.offsets, dtype=float).reshape(B))
        self.root_amplitude = np.asarray(self.root_amplitude, dtype=float).reshape(3)
        self.camera_axis = np.asarray(self.camera_axis, dtype=float).reshape(3)
        if self.frames < 2:
            raise InvalidInputError("a motion needs at least two frames")
        if np.any(np.abs(self.amplitudes) >= np.pi):
            raise InvalidInputError("amplitudes must lie in (-pi, pi)")
        if self.scale <= 0:
            raise InvalidInputError("scale must be positive")
        for name in ("directions", "axes"):
            norms = np.linalg.norm(getattr(self, name), axis=1)
            if np.any(norms == 0):
                raise InvalidInputError(f"{name} must be non-zero vectors")
            setattr(self, name, getattr(self, name) / norms[:, None])
        if np.linalg.norm(self.camera_axis) == 0:
            raise InvalidInputError("camera_axis must be non-zero")

    def joint_angles(self) -> np.ndarray:
        """Angle of every bone in every frame, shape ``(T, B)``."""
        t = np.arange(self.frames)[:, None]
        return self.offsets + self.amplitudes * np.sin(
            2 * np.pi * self.frequencies * t / self.frames + self.phases)


def _traversal(skeleton: Skeleton, root: int):
    """Bones ordered root-outwards as ``(bone, from_joint, to_joint, parent_bone)``."""
    if not skeleton.is_tree():
        raise UnsupportedSpecError("forward kinematics needs a tree skeleton")
    adjacency = {j: [] for j in range(skeleton.joint_count)}
    for b, (a, c) in enumerate(zip(skeleton.parents, skeleton.children)):
        adjacency[int(a)].append((b, int(c)))
        adjacency[int(c)].append((b, int(a)))
    order = []
    incoming = {root: None}
    queue = deque([root])
    while queue:
        j = queue.popleft()
        for b, k in adjacency[j]:
            if k in incoming:
                continue
            incoming[k] = b
            order.append((b, j, k, incoming[j]))
            queue.append(k)
    return order


def camera_trajectory(spec: MotionSpec) -> CameraPoses:
    """Orthographic cameras orbiting about ``camera_axis``."""
    t = np.arange(spec.frames)
    axis = spec.camera_axis / np.linalg.norm(spec.camera_axis)
    spin = Rotation.from_rotvec((spec.camera_start + spec.camera_speed * t)[:, None] * axis)
    tilt = Rotation.from_rotvec([spec.camera_tilt, 0.0, 0.0]).as_matrix()
    full = tilt @ _CAMERA_BASE @ spin.as_matrix()
    return CameraPoses(full[:, :2, :])


def generate_articulated_sequence(spec: MotionSpec):
    """Forward-kinematics shapes and cameras for ``spec``.

    Returns
    -------
    S_gt : ShapeSequence
    R_gt : CameraPoses
    """
    skel = spec.skeleton
    order = _traversal(skel, spec.root)
    T, N = spec.frames, skel.joint_count
    lengths = skel.lengths * spec.scale
    angles = spec.joint_angles()
    pts = np.zeros((T, N, 3))
    t = np.arange(T)
    pts[:, spec.root] = spec.root_amplitude * np.sin(2 * np.pi * spec.root_frequency * t / T)[:, None]
    frames = {}
    for b, j, k, parent_bone in order:
        local = Rotation.from_rotvec(angles[:, b, None] * spec.axes[b]).as_matrix()
        base = np.eye(3) if parent_bone is None else frames[parent_bone]
        frames[b] = base @ local
        pts[:, k] = pts[:, j] + frames[b] @ (lengths[b] * spec.directions[b])
    return ShapeSequence.from_points(pts), camera_trajectory(spec)


def orthographic_project(S_gt, R_gt: CameraPoses) -> MeasurementMatrix:
    """Project ``W_t = R_t S_t`` and register each frame to its centroid."""
    return MeasurementMatrix.from_raw(R_gt.project(S_gt))


def image_extent(W: MeasurementMatrix) -> float:
    """Largest coordinate range of the un-registered tracks."""
    pts = W.to_points(with_centroids=True).reshape(-1, 2)
    return float(np.max(pts.max(axis=0) - pts.min(axis=0)))


def add_2d_noise(W: MeasurementMatrix, sigma: float, seed=0) -> MeasurementMatrix:
    """Add i.i.d. Gaussian noise to the raw tracks, then re-register."""
    if sigma < 0:
        raise InvalidInputError("sigma must be non-negative")
    if sigma == 0:
        return W
    rng = np.random.default_rng(seed)
    raw = W.data + W.centroids.reshape(-1)[:, None]
    raw = raw + rng.normal(0.0, sigma, size=raw.shape)
    return MeasurementMatrix.from_raw(raw)


def perturb_bone_lengths(L, sigma: float, seed=0) -> np.ndarray:
    """Gaussian length noise, clamped to >= 10% of each length, renormalized."""
    L = np.asarray(L, dtype=np.float64)
    if sigma < 0:
        raise InvalidInputError("sigma must be non-negative")
    if sigma == 0:
        return L.copy()
    rng = np.random.default_rng(seed)
    noisy = L + rng.normal(0.0, sigma, size=L.shape)
    return normalize_lengths(np.maximum(noisy, 0.1 * L))


# joint names for the reference 12-joint figure
HUMAN12_JOINTS = (
    "pelvis", "l_hip", "l_knee", "l_ankle", "r_hip", "r_knee", "r_ankle",
    "thorax", "l_elbow", "l_wrist", "r_elbow", "r_wrist",
)
# (parent, child, length mm, rest direction, swing axis)
_HUMAN12_BONES = (
    (0, 1, 110.0, (1, 0, 0), (0, 1, 0)),
    (1, 2, 450.0, (0.05, -0.25, -1), (1, 0, 0)),
    (2, 3, 420.0, (0, 0.35, -1), (1, 0, 0)),
    (0, 4, 110.0, (-1, 0, 0), (0, 1, 0)),
    (4, 5, 450.0, (-0.05, -0.25, -1), (1, 0, 0)),
    (5, 6, 420.0, (0, 0.35, -1), (1, 0, 0)),
    (0, 7, 520.0, (0, 0.1, 1), (1, 0, 0)),
    (7, 8, 300.0, (0.6, -0.3, -0.75), (1, 0, 0)),
    (8, 9, 260.0, (0, -0.6, -0.8), (1, 0, 0)),
    (7, 10, 300.0, (-0.6, -0.3, -0.75), (1, 0, 0)),
    (10, 11, 260.0, (0, -0.6, -0.8), (1, 0, 0)),
)


def human12_skeleton() -> Skeleton:
    """12-joint, 11-bone human-like tree with anthropometric-style lengths."""
    return Skeleton.from_raw(12, [(a, c, l) for a, c, l, _, _ in _HUMAN12_BONES])


def human12_raw_lengths() -> np.ndarray:
    return np.array([l for _, _, l, _, _ in _HUMAN12_BONES])


def human12_spec(frames=100, seed=0, amplitude=0.5, camera_sweep=np.pi / 2,
                 camera_tilt=0.3, axis_jitter=0.3) -> MotionSpec:
    """Walking-like motion of :func:`human12_skeleton` under an orbiting camera.

    Limb amplitudes scale with ``amplitude`` (radians); hips and spine move
    less. ``camera_sweep`` is the total azimuth swept over the sequence.
    Swing axes are tilted by up to ``axis_jitter`` so motion is not planar.
    """
    rng = np.random.default_rng(seed)
    skel = human12_skeleton()
    raw = human12_raw_lengths()
    B = skel.bone_count
    directions = np.array([d for *_, d, _ in _HUMAN12_BONES], dtype=float)
    axes = np.array([a for *_, a in _HUMAN12_BONES], dtype=float)
    axes = axes + axis_jitter * rng.uniform(-1, 1, size=(B, 3))
    weight = np.array([0.3, 1.0, 0.8, 0.3, 1.0, 0.8, 0.4, 1.0, 0.8, 1.0, 0.8])
    amplitudes = amplitude * weight * rng.uniform(0.7, 1.0, size=B)
    frequencies = rng.choice([1.0, 1.5, 2.0], size=B)
    phases = rng.uniform(0, 2 * np.pi, size=B)
    return MotionSpec(
        skeleton=skel, frames=frames, directions=directions, axes=axes,
        amplitudes=amplitudes, frequencies=frequencies, phases=phases,
        scale=float(raw.sum()), camera_speed=camera_sweep / max(frames - 1, 1),
        camera_start=0.2, camera_tilt=camera_tilt, seed=seed)
