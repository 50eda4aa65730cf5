"""Orthographic camera recovery from a rank-3K factorization of ``W``.

The pipeline is

1. :func:`svd_initialize` -- truncated SVD ``W ~ M' B'``;
2. :func:`assemble_G` -- linear orthonormality constraints on ``F = Q_k Q_k^T``;
3. :func:`solve_Fk` -- projected-gradient (IST) solve over unit-norm,
   rank-3, positive semidefinite ``F``;
4. :func:`recover_Q_triplet` -- eigenvalue square root of ``F``;
5. :func:`recover_camera_poses` -- polar projection of ``M'_t Q_k``;
6. :func:`complete_corrective_transform` -- the remaining column triplets
   of ``Q`` and the full coefficient matrix ``C`` given the cameras.

:func:`recover_cameras` runs all of the above.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from .exceptions import (ConfigurationError, ConvergenceWarning,
                         DegenerateCoefficientWarning, DegenerateInputError,
                         RankViolationError, ShapeError)
from .model import CameraPoses, MeasurementMatrix

log = logging.getLogger(__name__)

IST_MAX_ITER = 500
IST_TOL = 1e-9
COEFF_EPS = 1e-12


@dataclass(frozen=True, eq=False)
class FactorizationInit:
    """Rank-3K factorization ``W ~ M' B'`` with the singular values split evenly."""

    M_prime: np.ndarray
    B_prime: np.ndarray
    K: int
    singular_values: np.ndarray
    residual: float  # ||W - M'B'||_F / ||W||_F

    @property
    def frames(self) -> int:
        return self.M_prime.shape[0] // 2


@dataclass(frozen=True, eq=False)
class GramTarget:
    """Unit-norm, rank <= 3 PSD solution ``F`` of ``min ||G vec(F)||^2``."""

    F: np.ndarray
    residual: float  # ||G vec(F)||
    iterations: int
    converged: bool
    history: np.ndarray = field(repr=False)


@dataclass(frozen=True, eq=False)
class CameraRecovery:
    """Everything produced while recovering cameras for one window."""

    init: FactorizationInit
    gram: GramTarget
    Q_k: np.ndarray
    Q: np.ndarray
    coefficients: np.ndarray
    poses: CameraPoses
    degenerate_frames: tuple = ()


def _as_array(W):
    return W.data if isinstance(W, MeasurementMatrix) else np.asarray(W, dtype=np.float64)


def select_rank(W, energy=0.999, max_rank=12) -> int:
    """Smallest K whose 3K leading singular values hold ``energy`` of ||W||_F^2.

    The result is clamped to ``[1, max_rank]`` and to ``3K <= min(2T, N)``.
    """
    W = _as_array(W)
    s = np.linalg.svd(W, compute_uv=False)
    total = np.sum(s ** 2)
    limit = max(1, min(max_rank, min(W.shape) // 3))
    if total == 0:
        return 1
    cum = np.cumsum(s ** 2) / total
    for K in range(1, limit + 1):
        if cum[min(3 * K, s.size) - 1] >= energy:
            return K
    return limit


def svd_initialize(W, K: int) -> FactorizationInit:
    """Truncated SVD of ``W`` to rank ``3K``; each factor takes ``sqrt(sigma)``."""
    W = _as_array(W)
    if K < 1 or 3 * K > min(W.shape):
        raise ConfigurationError(
            f"K={K} needs 3K <= min(2T, N) = {min(W.shape)}")
    norm = np.linalg.norm(W)
    if norm == 0 or not np.isfinite(norm):
        raise DegenerateInputError("measurement matrix is zero or non-finite")
    U, s, Vt = np.linalg.svd(W, full_matrices=False)
    r = 3 * K
    root = np.sqrt(s[:r])
    M_prime = U[:, :r] * root
    B_prime = root[:, None] * Vt[:r]
    residual = float(np.sqrt(np.sum(s[r:] ** 2)) / norm)
    return FactorizationInit(M_prime, B_prime, K, s, residual)


def assemble_G(init) -> np.ndarray:
    """Stack the two orthonormality constraints of every frame.

    Row ``2t`` is ``m1 (x) m1 - m2 (x) m2`` and row ``2t+1`` is ``m1 (x) m2``,
    where ``m1, m2`` are the two rows of ``M'_t``. With row-major
    vectorization, ``G @ F.ravel()`` evaluates ``m1 F m1^T - m2 F m2^T`` and
    ``m1 F m2^T`` for every frame.
    """
    M = init.M_prime if isinstance(init, FactorizationInit) else np.asarray(init)
    if M.ndim != 2 or M.shape[0] % 2:
        raise ShapeError(f"M' must be (2T, 3K), got {M.shape}")
    m1, m2 = M[0::2], M[1::2]
    n = M.shape[1]
    k11 = np.einsum("ti,tj->tij", m1, m1).reshape(-1, n * n)
    k22 = np.einsum("ti,tj->tij", m2, m2).reshape(-1, n * n)
    k12 = np.einsum("ti,tj->tij", m1, m2).reshape(-1, n * n)
    G = np.empty((M.shape[0], n * n))
    G[0::2] = k11 - k22
    G[1::2] = k12
    return G


def project_gram(Y, rank=3, normalization="frobenius"):
    """Nearest rank <= ``rank`` PSD matrix to ``Y`` with unit norm or unit trace.

    Returns ``None`` when the constraint set has no nearest point (the
    positive part of ``Y`` vanishes under Frobenius normalization).
    """
    Y = 0.5 * (Y + Y.T)
    w, V = np.linalg.eigh(Y)
    w, V = w[::-1][:rank], V[:, ::-1][:, :rank]
    if normalization == "trace":
        w = _project_simplex(w)
    else:
        w = np.maximum(w, 0.0)
        norm = np.linalg.norm(w)
        if norm == 0:
            return None
        w = w / norm
    return (V * w) @ V.T


def _project_simplex(v):
    # Euclidean projection onto {x >= 0, sum x = 1}
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    k = np.arange(1, v.size + 1)
    r = k[u - css / k > 0][-1]
    return np.maximum(v - css[r - 1] / r, 0.0)


def _spectral_start(G, n):
    # least-squares null vector of G over symmetric matrices
    iu = np.triu_indices(n)
    basis = np.zeros((n * n, iu[0].size))
    for j, (a, b) in enumerate(zip(*iu)):
        basis[a * n + b, j] = 1.0
        basis[b * n + a, j] = 1.0
    _, _, Vt = np.linalg.svd(G @ basis, full_matrices=True)
    F = (basis @ Vt[-1]).reshape(n, n)
    # eigenvector sign is arbitrary; take the orientation with more positive mass
    if np.trace(F) < 0:
        F = -F
    return F


def _ist(H, L, F0, max_iter, tol, normalization):
    F = F0
    v = F.ravel()
    f = float(v @ H @ v)
    history = [f]
    converged = f == 0.0
    it = 0
    while not converged and it < max_iter:
        it += 1
        grad = (H @ F.ravel()).reshape(F.shape)
        F_new = project_gram(F - grad / L, normalization=normalization)
        if F_new is None:
            break
        v = F_new.ravel()
        f_new = float(v @ H @ v)
        if f_new > f:
            # the projection is exact, so an increase is round-off at the floor
            converged = True
            break
        F = F_new
        history.append(f_new)
        converged = f - f_new <= tol * max(f, np.finfo(float).tiny) or f_new == 0.0
        f = f_new
    return F, f, it, converged, np.array(history)


def solve_Fk(G, K: int, seed: int = 0, max_iter: int = IST_MAX_ITER,
             tol: float = IST_TOL, restarts: int = 4,
             normalization: str = "frobenius") -> GramTarget:
    """Minimize ``||G vec(F)||^2`` over rank <= 3 PSD ``F`` with a scale gauge.

    Projected gradient with step ``1 / sigma_max(G)^2``. The projection
    symmetrizes, keeps the three largest eigenvalues and then either clamps
    them at zero and rescales to unit Frobenius norm (``"frobenius"``) or
    projects them onto the unit simplex (``"trace"``, unit trace). Both are
    exact Euclidean projections onto their constraint sets, so the residual
    never increases along a run. Runs start from the spectral least-squares
    null vector of ``G`` and from ``restarts`` seeded random Gram matrices;
    the lowest residual wins.

    The returned ``F`` is always rescaled to unit Frobenius norm, with
    ``residual = ||G vec(F)||`` evaluated at that scale.
    """
    if normalization not in ("frobenius", "trace"):
        raise ConfigurationError(f"unknown normalization {normalization!r}")
    G = np.asarray(G, dtype=np.float64)
    n = 3 * K
    if G.ndim != 2 or G.shape[1] != n * n:
        raise ShapeError(f"G must have {n * n} columns for K={K}, got {G.shape}")
    if not np.all(np.isfinite(G)):
        raise DegenerateInputError("G contains non-finite entries")
    H = G.T @ G
    L = float(np.linalg.eigvalsh(H)[-1])
    rng = np.random.default_rng(seed)

    starts = []
    spectral = project_gram(_spectral_start(G, n), normalization=normalization)
    if spectral is not None:
        starts.append(spectral)
    for _ in range(restarts):
        X = rng.standard_normal((n, 3))
        starts.append(project_gram(X @ X.T, normalization=normalization))

    if L == 0.0:
        F = starts[0] / np.linalg.norm(starts[0])
        return GramTarget(F, 0.0, 0, True, np.zeros(1))

    best = None
    for F0 in starts:
        run = _ist(H, L, F0, max_iter, tol, normalization)
        if best is None or run[1] < best[1]:
            best = run
    F, f, it, converged, history = best
    F = 0.5 * (F + F.T)
    norm = np.linalg.norm(F)
    F = F / norm
    residual = float(np.sqrt(max(f, 0.0)) / norm)
    if not converged:
        warnings.warn(ConvergenceWarning(
            f"IST stopped after {it} iterations, residual {residual:.3e}", residual))
    return GramTarget(F, residual, it, converged, history / norm ** 2)


def recover_Q_triplet(F, rank_tol=1e-6) -> np.ndarray:
    """Factor a rank <= 3 PSD ``F`` as ``Q_k Q_k^T`` with ``Q_k`` of shape ``(3K, 3)``.

    Uses the eigenvalue square root, which tolerates the rank deficiency
    that makes a plain Cholesky factorization fail.
    """
    F = F.F if isinstance(F, GramTarget) else np.asarray(F, dtype=np.float64)
    if F.ndim != 2 or F.shape[0] != F.shape[1] or F.shape[0] < 3:
        raise ShapeError(f"F must be square with size >= 3, got {F.shape}")
    w, V = np.linalg.eigh(0.5 * (F + F.T))
    w, V = w[::-1], V[:, ::-1]
    if w[0] <= 0:
        raise DegenerateInputError("F has no positive eigenvalue")
    if w.size > 3 and w[3] > rank_tol * w[0]:
        raise RankViolationError(
            f"F has more than 3 significant eigenvalues (4th/1st = {w[3] / w[0]:.3g})")
    return V[:, :3] * np.sqrt(np.maximum(w[:3], 0.0))


def _polar_rows(block):
    U, s, Vt = np.linalg.svd(block, full_matrices=False)
    return U @ Vt, s


def recover_camera_poses(init: FactorizationInit, Q_k):
    """Per-frame cameras from ``M'_t Q_k = c_t R_t``.

    ``R_t`` is the polar factor (nearest orthonormal-row matrix) of the
    block and ``|c_t|`` its mean row norm. The first frame takes ``c > 0``;
    afterwards the sign of ``(c_t, R_t)`` is chosen so ``R_t`` stays closest
    to ``R_{t-1}``. Frames with ``|c_t| < 1e-12`` reuse the previous camera.

    Returns
    -------
    poses : CameraPoses
    coefficients : ndarray, shape (T,)
        Signed ``c_t`` for the supplied triplet.
    """
    Q_k = np.asarray(Q_k, dtype=np.float64)
    M = init.M_prime
    T = M.shape[0] // 2
    if Q_k.shape != (M.shape[1], 3):
        raise ShapeError(f"Q_k must be ({M.shape[1]}, 3), got {Q_k.shape}")
    blocks = (M.reshape(T, 2, -1) @ Q_k)
    R = np.empty((T, 2, 3))
    c = np.zeros(T)
    degenerate = []
    prev = None
    for t in range(T):
        mag = float(np.mean(np.linalg.norm(blocks[t], axis=1)))
        if mag < COEFF_EPS:
            degenerate.append(t)
            continue
        Rt, _ = _polar_rows(blocks[t])
        sign = 1.0
        if prev is not None and np.linalg.norm(-Rt - prev) < np.linalg.norm(Rt - prev):
            sign = -1.0
        R[t] = sign * Rt
        c[t] = sign * mag
        prev = R[t]
    if len(degenerate) == T:
        raise DegenerateInputError("every frame has a vanishing coefficient")
    if degenerate:
        warnings.warn(DegenerateCoefficientWarning(
            f"vanishing coefficient in frames {degenerate}; cameras carried over"))
        skipped = set(degenerate)
        first = next(t for t in range(T) if t not in skipped)
        for t in range(T):
            if t in skipped:
                R[t] = R[t - 1] if t > first else R[first]
    return CameraPoses(R), c


def complete_corrective_transform(init: FactorizationInit, poses: CameraPoses):
    """Least-squares ``Q`` and ``C`` with ``M'_t Q = R_t (c_t (x) I_3)`` for known ``R``.

    Work in the orthonormal basis ``U = M' diag(s)^(-1/2)``. For a column
    ``c`` of ``C`` the best triplet is ``Q~_k = U^T Z(c)`` where ``Z(c)``
    stacks ``c_t R_t``, leaving the residual ``2 ||c||^2 - ||V^T c||^2`` with
    ``V`` the ``T x 9K`` matrix of flattened ``U_t^T R_t``. The K unit
    coefficient columns minimizing it are the leading left singular vectors
    of ``V``; the triplets follow and are mapped back by ``diag(s)^(-1/2)``.

    Returns
    -------
    Q : ndarray, shape (3K, 3K)
    C : ndarray, shape (T, K)
        Columns are orthonormal; column signs make ``sum_t c_tk >= 0``.
    """
    K = init.K
    n = 3 * K
    T = init.frames
    if poses.frames != T:
        raise ShapeError(f"{poses.frames} cameras for {T} frames")
    root = np.sqrt(init.singular_values[:n])
    if np.any(root == 0):
        raise DegenerateInputError("factorization has vanishing singular values")
    U = (init.M_prime / root).reshape(T, 2, n)
    V = np.einsum("tia,tij->taj", U, poses.blocks).reshape(T, 3 * n)
    left, _, _ = np.linalg.svd(V, full_matrices=False)
    C = left[:, :K].copy()
    C *= np.where(C.sum(axis=0) < 0, -1.0, 1.0)
    Q_tilde = (V.T @ C).reshape(n, 3, K).transpose(0, 2, 1).reshape(n, n)
    return Q_tilde / root[:, None], C


def solve_gram_scaled(init: FactorizationInit, seed: int = 0, **kwargs) -> GramTarget:
    """Solve for ``F`` with the gauge fixed on average camera scale.

    The constraints are built from the orthonormal left singular vectors
    ``U = M' diag(s)^(-1/2)`` and the Gram matrix in that basis is solved with unit
    trace, i.e. ``sum_t ||M'_t Q_k||_F^2`` is held fixed instead of
    ``||F||_F``. A unit Frobenius norm lets the solver shrink ``F`` toward
    directions that ``M'`` barely excites, which biases the cameras when
    the shape is only approximately low rank. The result is mapped back to
    the ``M'`` basis and rescaled to unit Frobenius norm.
    """
    K = init.K
    root = np.sqrt(init.singular_values[:3 * K])
    if np.any(root == 0):
        raise DegenerateInputError("factorization has vanishing singular values")
    U = init.M_prime / root
    kwargs.setdefault("normalization", "trace")
    scaled = solve_Fk(assemble_G(U), K, seed=seed, **kwargs)
    F = scaled.F / np.outer(root, root)
    F = 0.5 * (F + F.T)
    F /= np.linalg.norm(F)
    residual = float(np.linalg.norm(assemble_G(init) @ F.ravel()))
    return GramTarget(F, residual, scaled.iterations, scaled.converged, scaled.history)


def recover_cameras(W, K=None, seed: int = 0, normalization: str = "trace") -> CameraRecovery:
    """Run the full camera-recovery chain on a registered measurement matrix.

    ``normalization="trace"`` uses :func:`solve_gram_scaled`;
    ``"frobenius"`` runs :func:`solve_Fk` directly on ``G`` built from ``M'``.
    """
    Wd = _as_array(W)
    if K is None:
        K = select_rank(Wd)
    init = svd_initialize(Wd, K)
    if normalization == "trace":
        gram = solve_gram_scaled(init, seed=seed)
    else:
        gram = solve_Fk(assemble_G(init), K, seed=seed, normalization=normalization)
    Q_k = recover_Q_triplet(gram)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", DegenerateCoefficientWarning)
        poses, _ = recover_camera_poses(init, Q_k)
    degenerate = tuple(str(w.message) for w in caught
                       if issubclass(w.category, DegenerateCoefficientWarning))
    for w in caught:
        warnings.warn_explicit(w.message, w.category, w.filename, w.lineno)
    Q, C = complete_corrective_transform(init, poses)
    log.debug("camera recovery: K=%d, trunc residual %.3g, IST residual %.3g",
              K, init.residual, gram.residual)
    return CameraRecovery(init, gram, Q_k, Q, C, poses, degenerate)
