"""Camera recovery on a rigid scene.

A rigid point cloud seen by a slowly rotating orthographic camera has
rank-3 tracks. With one basis shape the factorization, the Gram fit and the
polar step return the true cameras up to one global rotation.
"""
import numpy as np
from scipy.spatial.transform import Rotation

from sfam import MeasurementMatrix, ShapeSequence, recover_cameras
from sfam.model import CameraPoses

# %% a rigid cloud and a smooth camera path
rng = np.random.default_rng(0)
T, N = 40, 15
cloud = rng.normal(size=(N, 3)) * 100
axis = rng.normal(size=3)
axis /= np.linalg.norm(axis)
rot = [Rotation.from_rotvec(0.1 * t * axis).as_matrix() for t in range(T)]
R = CameraPoses(np.stack([r[:2] for r in rot]))
S = ShapeSequence.from_points(np.broadcast_to(cloud, (T, N, 3)).copy())
W = MeasurementMatrix.from_raw(R.project(S))

# %% recover
rec = recover_cameras(W, K=1)
B = rec.poses.blocks
print("max |R R^T - I|:", np.abs(B @ B.transpose(0, 2, 1) - np.eye(2)).max())

# %% compare after removing the global gauge
# the gauge G minimizes sum_t ||R_t G - Rhat_t||, a Procrustes problem
M = np.einsum("tij,tik->jk", R.blocks, B)
U, _, Vt = np.linalg.svd(M)
G = U @ Vt
err = np.linalg.norm(B - R.blocks @ G, axis=(1, 2))
print("mean camera error after gauge alignment:", err.mean())
