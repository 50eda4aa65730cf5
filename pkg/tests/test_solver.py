import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.optimize import minimize_scalar

from sfam.camera import recover_cameras
from sfam.evaluation import evaluate, structure_diameter
from sfam.exceptions import ConfigurationError, NumericError, SolverAbort
from sfam.model import (CameraPoses, MeasurementMatrix, ShapeSequence, Skeleton,
                        rearrange_shape, rearrange_shape_inverse, sequence_bone_distances)
from sfam.solver import (SolverConfig, bone_energy, degenerate_frames, estimate_scale,
                         fpc_gradient, initialize_shape, lm_solve_A, nuclear_norm,
                         objective, reconstruct_window, residual_vector, shrinkage)

from conftest import random_rotation, rigid_scene


def chain(n):
    return Skeleton.from_raw(n, [(i, i + 1, 1.0) for i in range(n - 1)])


def lm_objective(A, S, skel, cfg, s):
    return 0.5 * cfg.beta * bone_energy(A, skel, s) + 0.5 * np.sum((A - S) ** 2)


def random_cameras(rng, T):
    return CameraPoses(np.stack([random_rotation(rng)[:2] for _ in range(T)]))


class ZeroCamera:
    """Duck-typed camera with all-zero blocks (not a valid CameraPoses)."""

    def project(self, S):
        return np.zeros((2 * (S.shape[0] // 3), S.shape[1]))

    def backproject(self, W):
        return np.zeros((3 * (W.shape[0] // 2), W.shape[1]))


# SolverConfig --------------------------------------------------------------

def test_config_defaults():
    cfg = SolverConfig()
    assert (cfg.beta, cfg.mu0, cfg.rho, cfg.tau) == (1.5, 1.0, 0.25, 0.2)
    assert (cfg.outer_max, cfg.outer_tol, cfg.lm_max_inner, cfg.lm_lambda0) == (300, 1e-5, 20, 1e-3)


@pytest.mark.parametrize("kw", [dict(beta=-1), dict(mu0=0), dict(rho=1.0), dict(rho=0),
                                dict(tau=0), dict(K=0), dict(outer_max=0)])
def test_config_validation(kw):
    with pytest.raises(ConfigurationError):
        SolverConfig(**kw)


@given(st.floats(0.01, 10), st.floats(0.01, 0.99), st.integers(0, 200))
def test_mu_schedule_exact(mu0, rho, j):
    assert SolverConfig(mu0=mu0, rho=rho).mu(j) == mu0 * rho ** j


# initialize_shape ----------------------------------------------------------

def test_initialize_rigid_reprojection(rigid):
    W, _, _ = rigid
    rec = recover_cameras(W, K=1)
    S0 = initialize_shape(W, rec.init, rec.Q, rec.poses)
    assert np.linalg.norm(W.data - rec.poses.project(S0)) / np.linalg.norm(W.data) < 1e-8


def test_initialize_recovers_rank_model_shape(rigid):
    W, _, S = rigid
    rec = recover_cameras(W, K=1)
    S0 = initialize_shape(W, rec.init, rec.Q, rec.poses)
    rep = evaluate(S0, S)
    assert rep.e3d_mm < 1e-6 * structure_diameter(S)


def test_initialize_single_frame_normal_equations():
    rng = np.random.default_rng(0)
    R = random_cameras(rng, 1)
    W = MeasurementMatrix.from_raw(rng.normal(size=(2, 5)))
    S0 = initialize_shape(W, None, None, R)
    Rt = R.blocks[0]
    oracle = Rt.T @ np.linalg.solve(Rt @ Rt.T, W.data)   # minimum-norm solution
    np.testing.assert_allclose(S0.data, oracle, atol=1e-7)


def test_initialize_singular_Q_falls_back(rigid):
    W, _, _ = rigid
    rec = recover_cameras(W, K=1)
    S0 = initialize_shape(W, rec.init, np.zeros((3, 3)), rec.poses)
    assert np.linalg.norm(W.data - rec.poses.project(S0)) < 1e-6 * np.linalg.norm(W.data)


# scale / energy / residuals -------------------------------------------------

def test_estimate_scale_examples():
    skel = chain(3)
    f = np.array([[0.0, 2.0, 2.0], [0, 0, 3.0], [0, 0, 0]])      # bones 2 and 3
    assert estimate_scale(np.vstack([f]), skel) == pytest.approx(5.0)
    g = np.array([[0.0, 1.0, 1.0], [0, 0, 3.0], [0, 0, 0]])      # bones 1 and 3
    h = np.array([[0.0, 3.0, 3.0], [0, 0, 3.0], [0, 0, 0]])      # bones 3 and 3
    assert estimate_scale(np.vstack([g, h]), skel) == pytest.approx(5.0)


def test_estimate_scale_double_loop():
    rng = np.random.default_rng(1)
    skel = Skeleton.from_raw(5, [(0, 1, 1), (1, 2, 2), (1, 3, 1), (3, 4, 3)])
    S = rng.normal(size=(3 * 7, 5))
    total = 0.0
    for t in range(7):
        for b in skel.bones:
            total += np.linalg.norm(S[3 * t:3 * t + 3, b.parent] - S[3 * t:3 * t + 3, b.child])
    assert estimate_scale(S, skel) == pytest.approx(total / 7, rel=1e-12)


def test_bone_energy_examples():
    skel = chain(2)
    A = np.array([[0.0, 2.0], [0, 0], [0, 0]])
    assert bone_energy(A, skel, 1.0) == pytest.approx(1.0)
    assert bone_energy(A, skel, 2.0) == 0.0


def test_bone_energy_brute_force():
    rng = np.random.default_rng(2)
    skel = Skeleton.from_raw(4, [(0, 1, 1), (0, 2, 2), (2, 3, 3)])
    A = rng.normal(size=(3 * 5, 4))
    s = 2.5
    e = 0.0
    for t in range(5):
        for b in skel.bones:
            d = np.linalg.norm(A[3 * t:3 * t + 3, b.parent] - A[3 * t:3 * t + 3, b.child])
            e += (d - s * b.length) ** 2
    assert bone_energy(A, skel, s) == pytest.approx(e, rel=1e-12)


def test_residual_vector_examples():
    skel = chain(2)
    S = np.array([[0.0, 2.0], [0, 0], [0, 0]])
    assert np.all(residual_vector(S, S, skel, SolverConfig(), 2.0) == 0)
    r = residual_vector(S, S + 1, skel, SolverConfig(beta=0), 7.0)
    assert r[0] == 0.0 and r.size == 1 + 6


@given(st.integers(0, 2**31), st.floats(0, 5))
def test_residual_vector_matches_objective(seed, beta):
    rng = np.random.default_rng(seed)
    skel = chain(4)
    A, S = rng.normal(size=(9, 4)), rng.normal(size=(9, 4))
    cfg = SolverConfig(beta=beta)
    r = residual_vector(A, S, skel, cfg, 1.3)
    expected = lm_objective(A, S, skel, cfg, 1.3)
    assert np.sum(r ** 2) == pytest.approx(expected, rel=1e-12, abs=1e-300)


# lm_solve_A ----------------------------------------------------------------

def test_lm_beta_zero_returns_S():
    S = np.random.default_rng(3).normal(size=(6, 3))
    A = lm_solve_A(S, chain(3), SolverConfig(beta=0), 1.0)
    np.testing.assert_array_equal(A.data, S)


def test_lm_at_global_minimum():
    skel = chain(3)
    S = np.array([[0.0, 1.0, 1.0], [0, 0, 1.0], [0, 0, 0]])
    A = lm_solve_A(S, skel, SolverConfig(), 2.0)
    np.testing.assert_allclose(A.data, S, atol=1e-12)
    assert lm_objective(A.data, S, skel, SolverConfig(), 2.0) < 1e-12


@pytest.mark.parametrize("d, target", [(1.0, 3.0), (4.0, 1.0), (2.0, 2.5)])
def test_lm_single_bone_golden_section(d, target):
    beta = 1.5
    u = np.array([1.0, 2.0, -2.0]) / 3
    m = np.array([0.3, -0.1, 0.2])
    S = np.column_stack([m - d / 2 * u, m + d / 2 * u])
    skel = Skeleton.from_raw(2, [(0, 1, 1.0)])
    # symmetric radial parameterization: joints at m -/+ r/2 u
    f = lambda r: beta / 2 * (r - target) ** 2 + 0.25 * (r - d) ** 2
    r = minimize_scalar(f, bracket=(0.0, d + target), method="golden", tol=1e-12).x
    A = lm_solve_A(S, skel, SolverConfig(beta=beta), target).data
    np.testing.assert_allclose(A, np.column_stack([m - r / 2 * u, m + r / 2 * u]), atol=1e-7)


def test_lm_non_increase_50_random_starts():
    rng = np.random.default_rng(4)
    skel = Skeleton.from_raw(6, [(0, 1, 3), (1, 2, 2), (0, 3, 3), (3, 4, 2), (0, 5, 4)])
    violations = 0
    for _ in range(50):
        cfg = SolverConfig(beta=float(rng.uniform(0.1, 5)), lm_max_inner=int(rng.integers(1, 20)))
        S = rng.normal(size=(3 * 4, 6)) * 10
        A0 = S + rng.normal(size=S.shape) * 3
        s = float(rng.uniform(5, 40))
        before = lm_objective(A0, S, skel, cfg, s)
        after = lm_objective(lm_solve_A(S, skel, cfg, s, A_init=A0).data, S, skel, cfg, s)
        violations += after > before
    assert violations == 0


def test_lm_non_finite_jacobian():
    S = np.zeros((3, 2))
    A0 = np.array([[np.inf, 0.0], [0, 0], [0, 0]])
    with pytest.raises(NumericError):
        lm_solve_A(S, chain(2), SolverConfig(), 1.0, A_init=A0)


# fpc_gradient --------------------------------------------------------------

def test_gradient_zero_at_stationary_point():
    rng = np.random.default_rng(5)
    R = random_cameras(rng, 3)
    S = rng.normal(size=(9, 4))
    W = R.project(S)
    np.testing.assert_allclose(fpc_gradient(S, S, W, R), 0.0, atol=1e-14)


def test_gradient_zero_camera_is_proximal_term():
    rng = np.random.default_rng(6)
    S, A = rng.normal(size=(6, 3)), rng.normal(size=(6, 3))
    np.testing.assert_allclose(fpc_gradient(S, A, np.zeros((4, 3)), ZeroCamera()),
                               rearrange_shape(S - A))


def test_gradient_central_differences_20_instances():
    rng = np.random.default_rng(7)
    h = 1e-6
    for _ in range(20):
        T, N = int(rng.integers(1, 5)), int(rng.integers(2, 6))
        R = random_cameras(rng, T)
        S, A = rng.normal(size=(3 * T, N)), rng.normal(size=(3 * T, N))
        W = rng.normal(size=(2 * T, N))
        f = lambda Ssh: 0.5 * (np.sum((W - R.project(rearrange_shape_inverse(Ssh))) ** 2)
                               + np.sum((A - rearrange_shape_inverse(Ssh)) ** 2))
        g = fpc_gradient(S, A, W, R)
        base = rearrange_shape(S)
        num = np.zeros_like(base)
        for idx in np.ndindex(*base.shape):
            e = np.zeros_like(base)
            e[idx] = h
            num[idx] = (f(base + e) - f(base - e)) / (2 * h)
        assert np.linalg.norm(num - g) <= 1e-4 * np.linalg.norm(g)


# shrinkage -----------------------------------------------------------------

def soft_threshold_oracle(Y, nu):
    U, s, Vt = np.linalg.svd(Y, full_matrices=True)
    Sig = np.zeros(Y.shape)
    k = min(Y.shape)
    Sig[:k, :k] = np.diag(np.maximum(s - nu, 0.0))
    return U @ Sig @ Vt


def test_shrinkage_examples():
    Y = np.random.default_rng(8).normal(size=(3, 4))
    np.testing.assert_array_equal(shrinkage(Y, 0.0), Y)
    np.testing.assert_allclose(shrinkage(np.diag([3.0, 1.0]), 2.0), np.diag([1.0, 0.0]),
                               atol=1e-15)
    with pytest.raises(ConfigurationError):
        shrinkage(Y, -1.0)


def test_shrinkage_oracle_100_matrices():
    rng = np.random.default_rng(9)
    worst = 0.0
    for _ in range(100):
        Y = rng.normal(size=(5, 12)) * rng.uniform(0.1, 10)
        nu = float(rng.uniform(0, 2 * np.linalg.norm(Y, 2)))
        worst = max(worst, np.max(np.abs(shrinkage(Y, nu) - soft_threshold_oracle(Y, nu))))
    assert worst <= 1e-10


@given(st.integers(0, 2**31), st.floats(0.01, 3))
def test_shrinkage_is_prox(seed, nu):
    rng = np.random.default_rng(seed)
    Y = rng.normal(size=(4, 6))
    P = shrinkage(Y, nu)
    best = nu * nuclear_norm(P) + 0.5 * np.sum((P - Y) ** 2)
    for _ in range(20):
        Z = P + rng.normal(size=Y.shape) * rng.uniform(1e-3, 1)
        assert best <= nu * nuclear_norm(Z) + 0.5 * np.sum((Z - Y) ** 2) + 1e-12
    s = np.linalg.svd(Y, compute_uv=False)
    assert nuclear_norm(Y) - nuclear_norm(P) == pytest.approx(np.sum(np.minimum(s, nu)), abs=1e-9)


# reconstruct_window --------------------------------------------------------

def rigid_skeleton(S):
    """Chain skeleton whose lengths are the true distances of a rigid shape."""
    frame = S.frame(0)
    N = frame.shape[1]
    d = np.linalg.norm(frame[:, :-1] - frame[:, 1:], axis=0)
    return Skeleton.from_raw(N, [(i, i + 1, d[i]) for i in range(N - 1)])


def test_reconstruct_rigid_scene():
    W, _, S = rigid_scene(T=20, N=10, seed=2)
    rec = recover_cameras(W, K=1)
    cfg = SolverConfig(K=1)
    out, diag = reconstruct_window(W, rec.poses, rigid_skeleton(S), cfg)
    assert evaluate(out, S).e3d_mm < 0.01 * structure_diameter(S)
    assert diag.mu == [cfg.mu(j) for j in range(diag.iterations)]
    assert diag.reprojection[-1] < 0.02 * np.linalg.norm(W.data)


def test_reconstruct_beta_zero_is_plain_fpc():
    W, _, S = rigid_scene(T=12, N=8, seed=4)
    rng = np.random.default_rng(0)
    Wn = MeasurementMatrix.from_raw(W.data + rng.normal(scale=0.05, size=W.data.shape))
    rec = recover_cameras(Wn, K=1)
    cfg = SolverConfig(beta=0.0, K=1, outer_max=25, outer_tol=0.0)
    S0 = initialize_shape(Wn, rec.init, rec.Q, rec.poses)
    out, diag = reconstruct_window(Wn, rec.poses, rigid_skeleton(S), cfg, S0=S0)
    # independent FPC loop with the prior switched off
    X = S0.data.copy()
    R = rec.poses.blocks
    for j in range(cfg.outer_max):
        g = np.einsum("tji,tjn->tin", R, np.einsum("tij,tjn->tin", R, X.reshape(-1, 3, 8))
                      - Wn.data.reshape(-1, 2, 8)).reshape(-1, 8)
        Y = (X - cfg.tau * g).reshape(-1, 24)
        X = soft_threshold_oracle(Y, cfg.tau * cfg.mu0 * cfg.rho ** j).reshape(-1, 8)
    np.testing.assert_allclose(out.data, X, atol=1e-9)
    assert diag.iterations == 25


def test_reconstruct_divergence_aborts():
    W, _, S = rigid_scene(T=10, N=6, seed=1)
    rec = recover_cameras(W, K=1)
    with pytest.raises(SolverAbort) as exc:
        reconstruct_window(W, rec.poses, rigid_skeleton(S), SolverConfig(K=1, tau=5.0))
    assert exc.value.diagnostics.iterations >= 1


def test_objective_components():
    W, R, S = rigid_scene(T=3, N=4)
    skel = chain(4)
    s = estimate_scale(S, skel)
    cfg = SolverConfig()
    val = objective(S, S.data, W, R, skel, cfg, s, 0.0)
    assert val == pytest.approx(0.75 * bone_energy(S, skel, s), rel=1e-10)


def test_degenerate_frames_detects_collinear():
    W = np.random.default_rng(0).normal(size=(4, 5))
    W[2:4] = np.outer([1.0, 2.0], np.arange(5.0) - 2)
    assert degenerate_frames(W) == [1]
