"""Alternating shape solver with a soft bone-length prior.

Each outer iteration

1. solves the bone subproblem ``min_A  beta/2 E_BL(A) + 1/2 ||A - S||^2``
   with Levenberg-Marquardt (:func:`lm_solve_A`);
2. takes a fixed-point continuation step on
   ``mu ||S#||_* + 1/2 ||W - RS||^2 + 1/2 ||A - S||^2``: a gradient step of
   size ``tau`` followed by singular value shrinkage at ``tau * mu``;
3. decays ``mu`` by ``rho``.

Target bone lengths are ``s * L_b`` where ``L_b`` sum to one and ``s`` is
the mean summed bone length of the initial shape (:func:`estimate_scale`).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .camera import FactorizationInit, complete_corrective_transform, svd_initialize
from .exceptions import (ConfigurationError, DegenerateInputError, NumericError,
                         ShapeError, SolverAbort)
from .model import (CameraPoses, MeasurementMatrix, ShapeSequence, Skeleton,
                    rearrange_shape, rearrange_shape_inverse, sequence_bone_distances)

log = logging.getLogger(__name__)

TIKHONOV = 1e-8
DEGENERATE_FRAME_TOL = 1e-9
DIVERGENCE_FACTOR = 10.0


@dataclass(frozen=True)
class SolverConfig:
    """Parameters of the alternating solver.

    ``K=None`` selects the basis size from the singular value energy of W.
    """

    beta: float = 1.5
    mu0: float = 1.0
    rho: float = 0.25
    tau: float = 0.2
    K: int | None = None
    outer_max: int = 300
    outer_tol: float = 1e-5
    lm_max_inner: int = 20
    lm_lambda0: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        problems = []
        if not self.beta >= 0:
            problems.append("beta must be >= 0")
        if not self.mu0 > 0:
            problems.append("mu0 must be > 0")
        if not 0 < self.rho < 1:
            problems.append("rho must lie in (0, 1)")
        if not self.tau > 0:
            problems.append("tau must be > 0")
        if self.K is not None and self.K < 1:
            problems.append("K must be >= 1")
        if self.outer_max < 1 or self.lm_max_inner < 0:
            problems.append("iteration caps must be positive")
        if not self.lm_lambda0 > 0:
            problems.append("lm_lambda0 must be > 0")
        if problems:
            raise ConfigurationError("; ".join(problems))

    def mu(self, j: int) -> float:
        """Continuation parameter at outer iteration ``j``."""
        return self.mu0 * self.rho ** j


@dataclass
class Diagnostics:
    """Per-iteration history of :func:`reconstruct_window`."""

    objective: list = field(default_factory=list)
    reprojection: list = field(default_factory=list)
    bone_std: list = field(default_factory=list)
    mu: list = field(default_factory=list)
    relative_change: list = field(default_factory=list)
    scale: float = float("nan")
    iterations: int = 0
    converged: bool = False
    degenerate_frames: list = field(default_factory=list)

    def as_dict(self):
        return {
            "iterations": self.iterations,
            "converged": self.converged,
            "scale": self.scale,
            "degenerate_frames": list(self.degenerate_frames),
            "objective": list(self.objective),
            "reprojection": list(self.reprojection),
            "bone_std": list(self.bone_std),
            "mu": list(self.mu),
            "relative_change": list(self.relative_change),
        }


def _data(x):
    if isinstance(x, (ShapeSequence, MeasurementMatrix)):
        return x.data
    return np.asarray(x, dtype=np.float64)


def initialize_shape(W, init: FactorizationInit | None, Q, cameras: CameraPoses) -> ShapeSequence:
    """Initial shapes ``(C (x) I_3) Q^{-1} B'`` from the corrected factorization.

    ``C`` is the least-squares fit of ``M'_t Q = R_t (c_t (x) I_3)`` for the
    given cameras. When the factorization is missing or ``Q`` is singular,
    every frame falls back to the damped least-squares solution of
    ``W_t = R_t S_t``.
    """
    Wd = _data(W)
    T = Wd.shape[0] // 2
    if cameras.frames != T:
        raise ShapeError(f"{cameras.frames} cameras for {T} frames")
    if init is not None and Q is not None:
        Q = np.asarray(Q, dtype=np.float64)
        n = 3 * init.K
        if np.linalg.cond(Q) < 1e12:
            B = np.linalg.solve(Q, init.B_prime)
            M = (init.M_prime @ Q).reshape(T, 2, init.K, 3)
            # c_tk = <M_tk, R_t> / ||R_t||^2 with ||R_t||_F^2 = 2
            C = np.einsum("tikj,tij->tk", M, cameras.blocks) / 2.0
            S = (C @ B.reshape(init.K, 3 * Wd.shape[1])).reshape(3 * T, -1)
            return ShapeSequence(S)
        log.warning("corrective transform is singular (%d x %d); using per-frame fallback", n, n)
    R = cameras.blocks
    Wt = Wd.reshape(T, 2, -1)
    lhs = R.transpose(0, 2, 1) @ R + TIKHONOV * np.eye(3)
    S = np.linalg.solve(lhs, R.transpose(0, 2, 1) @ Wt)
    return ShapeSequence(S.reshape(3 * T, -1))


def estimate_scale(S, skeleton: Skeleton) -> float:
    """Mean over frames of the summed bone lengths of ``S``."""
    D = sequence_bone_distances(_data(S), skeleton)
    s = float(np.mean(D.sum(axis=1)))
    if not s > 0:
        raise DegenerateInputError("structure has zero total bone length")
    return s


def bone_energy(A, skeleton: Skeleton, s: float) -> float:
    """``sum_t sum_b (D_b^t - s L_b)^2``."""
    D = sequence_bone_distances(_data(A), skeleton)
    return float(np.sum((D - s * skeleton.lengths) ** 2))


def residual_vector(A, S, skeleton: Skeleton, cfg: SolverConfig, s: float) -> np.ndarray:
    """Signed residuals whose squared norm is the bone subproblem objective.

    The first ``B*T`` entries (frame-major) are ``sqrt(beta/2) (D_b^t - s L_b)``,
    the remaining ``3TN`` are ``sqrt(1/2) (A - S)``.
    """
    A, S = _data(A), _data(S)
    if A.shape != S.shape:
        raise ShapeError(f"A {A.shape} and S {S.shape} differ")
    D = sequence_bone_distances(A, skeleton)
    bones = np.sqrt(cfg.beta / 2.0) * (D - s * skeleton.lengths)
    return np.concatenate([bones.ravel(), np.sqrt(0.5) * (A - S).ravel()])


def _lm_cost(X, Y, parents, children, target, w2):
    # X, Y: (T, N, 3); per-frame objective
    D = np.linalg.norm(X[:, parents] - X[:, children], axis=2)
    return w2 * np.sum((D - target) ** 2, axis=1) + 0.5 * np.sum((X - Y) ** 2, axis=(1, 2))


def lm_solve_A(S, skeleton: Skeleton, cfg: SolverConfig, s: float, A_init=None) -> ShapeSequence:
    """Levenberg-Marquardt solve of ``min_A beta/2 E_BL(A) + 1/2 ||A - S||^2``.

    The problem separates over frames, so every frame keeps its own damping
    (divided by 10 on an accepted step, multiplied by 10 on a rejection) and
    its ``3N x 3N`` damped normal equations are solved in one batch. The
    objective never increases. Iteration stops after ``cfg.lm_max_inner``
    rounds or once the step norm drops below ``1e-10 (1 + ||A||_F)``.
    """
    Sd = _data(S)
    skeleton.check_joints(Sd.shape[1])
    if cfg.beta == 0:
        return ShapeSequence(Sd)
    T, N = Sd.shape[0] // 3, Sd.shape[1]
    Y = Sd.reshape(T, 3, N).transpose(0, 2, 1)
    X = Y.copy() if A_init is None else _data(A_init).reshape(T, 3, N).transpose(0, 2, 1).copy()
    if X.shape != Y.shape:
        raise ShapeError("A_init does not match S")
    a, c = skeleton.parents, skeleton.children
    target = s * skeleton.lengths
    w2 = cfg.beta / 2.0
    lam = np.full(T, cfg.lm_lambda0)
    cost = _lm_cost(X, Y, a, c, target, w2)
    eye = np.eye(3 * N)

    for _ in range(cfg.lm_max_inner):
        diff = X[:, a] - X[:, c]                       # (T, B, 3)
        D = np.linalg.norm(diff, axis=2)
        with np.errstate(invalid="ignore", divide="ignore"):
            u = np.where(D[..., None] > 0, diff / D[..., None], 0.0)
        if not np.all(np.isfinite(u)):
            raise NumericError("non-finite Jacobian in bone subproblem")
        # gradient J^T F = w2 * sum_b r_b g_b + 1/2 (X - Y)
        rb = (D - target)[..., None] * u                # (T, B, 3)
        grad = 0.5 * (X - Y)
        np.add.at(grad, (slice(None), a), w2 * rb)
        np.add.at(grad, (slice(None), c), -w2 * rb)
        # J^T J as (T, N, N, 3, 3) blocks
        P = w2 * u[..., :, None] * u[..., None, :]
        H = np.zeros((T, N, N, 3, 3))
        np.add.at(H, (slice(None), a, a), P)
        np.add.at(H, (slice(None), c, c), P)
        np.add.at(H, (slice(None), a, c), -P)
        np.add.at(H, (slice(None), c, a), -P)
        H = H.transpose(0, 1, 3, 2, 4).reshape(T, 3 * N, 3 * N) + 0.5 * eye
        g = grad.reshape(T, 3 * N)
        lhs = H + lam[:, None, None] * eye
        try:
            step = -np.linalg.solve(lhs, g[..., None])[..., 0]
        except np.linalg.LinAlgError:
            lam *= 10.0
            continue
        step = step.reshape(T, N, 3)
        trial = X + step
        trial_cost = _lm_cost(trial, Y, a, c, target, w2)
        accept = trial_cost <= cost
        X[accept] = trial[accept]
        cost = np.where(accept, trial_cost, cost)
        lam = np.where(accept, lam / 10.0, lam * 10.0)
        if np.linalg.norm(step) < 1e-10 * (1.0 + np.linalg.norm(X)):
            break
    return ShapeSequence(X.transpose(0, 2, 1).reshape(3 * T, N))


def fpc_gradient(S, A, W, R: CameraPoses) -> np.ndarray:
    """Gradient of ``1/2 (||W - RS||^2 + ||A - S||^2)`` with respect to ``S#``."""
    Sd, Ad, Wd = _data(S), _data(A), _data(W)
    if Sd.shape != Ad.shape or Wd.shape[0] * 3 != Sd.shape[0] * 2:
        raise ShapeError("S, A and W dimensions are inconsistent")
    grad = R.backproject(R.project(Sd) - Wd) + (Sd - Ad)
    return rearrange_shape(grad)


def shrinkage(Y, nu: float) -> np.ndarray:
    """Singular value soft-thresholding: the prox of ``nu ||.||_*``."""
    if nu < 0:
        raise ConfigurationError("shrinkage threshold must be non-negative")
    Y = np.asarray(Y, dtype=np.float64)
    if nu == 0:
        return Y.copy()
    U, sv, Vt = np.linalg.svd(Y, full_matrices=False)
    return (U * np.maximum(sv - nu, 0.0)) @ Vt


def nuclear_norm(X) -> float:
    return float(np.sum(np.linalg.svd(X, compute_uv=False)))


def objective(S, A, W, R: CameraPoses, skeleton, cfg: SolverConfig, s: float, mu: float) -> float:
    """Lagrangian ``mu ||S#||_* + beta/2 E_BL(A) + 1/2 ||W-RS||^2 + 1/2 ||A-S||^2``."""
    Sd, Ad, Wd = _data(S), _data(A), _data(W)
    return (mu * nuclear_norm(rearrange_shape(Sd))
            + 0.5 * cfg.beta * bone_energy(Ad, skeleton, s)
            + 0.5 * np.sum((Wd - R.project(Sd)) ** 2)
            + 0.5 * np.sum((Ad - Sd) ** 2))


def degenerate_frames(W) -> list:
    """Frames whose 2D joints are collinear (second singular value < 1e-9)."""
    Wd = _data(W)
    T = Wd.shape[0] // 2
    sv = np.linalg.svd(Wd.reshape(T, 2, -1), compute_uv=False)
    return [int(t) for t in np.flatnonzero(sv[:, 1] < DEGENERATE_FRAME_TOL)]


def default_initial_shape(W, R: CameraPoses, K: int) -> ShapeSequence:
    """Low-rank initial shape for given cameras (see :func:`initialize_shape`)."""
    try:
        init = svd_initialize(W, K)
        Q, _ = complete_corrective_transform(init, R)
    except (ConfigurationError, DegenerateInputError):
        init, Q = None, None
    return initialize_shape(W, init, Q, R)


def reconstruct_window(W, R: CameraPoses, skeleton: Skeleton, cfg: SolverConfig,
                       S0=None):
    """Run the alternating solver on one window.

    Parameters
    ----------
    W : MeasurementMatrix
        Registered tracks of the window.
    R : CameraPoses
        Cameras from :func:`sfam.camera.recover_cameras`.
    skeleton : Skeleton
    cfg : SolverConfig
    S0 : ShapeSequence, optional
        Initial shape; built from the low-rank factorization when omitted.

    Returns
    -------
    S : ShapeSequence
    diagnostics : Diagnostics

    Raises
    ------
    SolverAbort
        When the objective climbs to ten times its running minimum.
    """
    Wd = _data(W)
    T, N = Wd.shape[0] // 2, Wd.shape[1]
    if R.frames != T:
        raise ShapeError(f"{R.frames} cameras for {T} frames")
    skeleton.check_joints(N)
    if S0 is None:
        from .camera import select_rank
        S0 = default_initial_shape(Wd, R, cfg.K or select_rank(Wd))
    S = _data(S0).copy()
    diag = Diagnostics(degenerate_frames=degenerate_frames(Wd))
    s = estimate_scale(S, skeleton)
    diag.scale = s
    A = ShapeSequence(S)
    floor = 1e-12 * max(float(np.sum(Wd ** 2)), 1.0)
    best = np.inf

    for j in range(cfg.outer_max):
        mu = cfg.mu(j)
        A = lm_solve_A(S, skeleton, cfg, s, A_init=A)
        g = fpc_gradient(S, A, Wd, R)
        Y = rearrange_shape(S) - cfg.tau * g
        S_new = rearrange_shape_inverse(shrinkage(Y, cfg.tau * mu))
        change = np.linalg.norm(S_new - S) / max(np.linalg.norm(S), np.finfo(float).tiny)
        S = S_new

        obj = objective(S, A, Wd, R, skeleton, cfg, s, mu)
        D = sequence_bone_distances(S, skeleton)
        diag.objective.append(float(obj))
        diag.reprojection.append(float(np.linalg.norm(Wd - R.project(S))))
        diag.bone_std.append(float(np.mean(D.std(axis=0))))
        diag.mu.append(mu)
        diag.relative_change.append(float(change))
        diag.iterations = j + 1
        if not np.isfinite(obj):
            raise SolverAbort(f"objective became non-finite at iteration {j}", diag)
        best = min(best, obj)
        if obj > DIVERGENCE_FACTOR * max(best, floor):
            raise SolverAbort(
                f"objective {obj:.4g} exceeded {DIVERGENCE_FACTOR:g}x its minimum {best:.4g}",
                diag)
        if change < cfg.outer_tol:
            diag.converged = True
            break
    log.debug("window solved: %d iterations, converged=%s", diag.iterations, diag.converged)
    return ShapeSequence(S), diag
