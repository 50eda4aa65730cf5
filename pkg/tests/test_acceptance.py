"""Acceptance criteria on the synthetic oracle scene.

Every test records one PASS/FAIL line, echoed in the pytest summary.

Oracle scene: the 12-joint, 11-bone human figure, 100 frames, limb swing
amplitude 0.2 rad, camera sweeping half a turn about the vertical axis,
noiseless tracks, one basis shape (``--rank 1``).
"""

import os
import time

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from sfam import cli, io, pipeline, synth
from sfam.camera import recover_cameras
from sfam.evaluation import rigid_align, structure_diameter
from sfam.model import CameraPoses, rearrange_shape, rearrange_shape_inverse
from sfam.solver import SolverConfig, fpc_gradient, lm_solve_A, shrinkage

from conftest import random_rotation, record_criterion, rigid_scene
from test_camera import gauge_align
from test_solver import lm_objective, soft_threshold_oracle

SCENE = {"frames": 100, "seed": 0, "amplitude": 0.2, "camera_sweep": np.pi}
RANK = 1
SEED = 0


def run(W, skeleton, S_gt, beta=1.5):
    cfg = pipeline.RunConfig(solver=SolverConfig(beta=beta, K=RANK, seed=SEED))
    return pipeline.run_pipeline(cfg, W, skeleton, S_gt, write=False)


@pytest.fixture(scope="module")
def scene():
    spec = pipeline.scene_spec(SCENE)
    S, R, W = pipeline.make_scene(spec)
    return spec, S, W


@pytest.fixture(scope="module")
def baseline(scene):
    spec, S, W = scene
    t0 = time.process_time()
    res = run(W, spec.skeleton, S)
    return res, time.process_time() - t0


@pytest.fixture(scope="module")
def perturbed(scene):
    spec, S, W = scene
    L = spec.skeleton.lengths
    L0 = synth.perturb_bone_lengths(L, 0.15 * L.mean(), seed=SEED)
    return L0, run(W, spec.skeleton.with_lengths(L0), S)


def test_criterion_1_articulated_recovery(scene, baseline):
    spec, S, W = scene
    res, cpu = baseline
    ratio = res.report.e3d_mm / structure_diameter(S)
    ok = record_criterion(
        "1 synthetic recovery", ratio <= 0.05 and cpu < 60,
        f"E3D {res.report.e3d_mm:.2f} = {100 * ratio:.2f}% of diameter (<= 5%), "
        f"CPU time {cpu:.1f}s (< 60s)")
    assert ok


def test_criterion_1b_reprojection(scene, baseline):
    spec, S, W = scene
    res, _ = baseline
    rel = res.diagnostics[0]["reprojection"][-1] / np.linalg.norm(W.data)
    assert record_criterion("1b final reprojection", rel < 0.02,
                            f"||W - RS|| / ||W|| = {100 * rel:.3f}% (< 2%)")


def test_criterion_2_prior_ablation(scene, baseline):
    spec, S, W = scene
    res, _ = baseline
    plain = run(W, spec.skeleton, S, beta=0.0)
    with_prior = float(np.mean(res.report.per_bone_std))
    without = float(np.mean(plain.report.per_bone_std))
    ratio = with_prior / without
    record_criterion("2b bone std <= 20% of baseline (solver example)", ratio <= 0.2,
                     f"ratio {ratio:.3f}")
    assert record_criterion("2 articulated-prior ablation", ratio <= 0.5,
                            f"mean bone std {with_prior:.2f} vs {without:.2f} with beta=0, "
                            f"ratio {ratio:.3f} (<= 0.5)")


@pytest.mark.parametrize("fraction, bound", [(0.01, 2.0), (0.02, 4.0)])
def test_criterion_3_noise(scene, baseline, fraction, bound):
    spec, S, W = scene
    res, _ = baseline
    noisy = synth.add_2d_noise(W, fraction * synth.image_extent(W), seed=SEED)
    e = run(noisy, spec.skeleton, S).report.e3d_mm
    ratio = e / res.report.e3d_mm
    assert record_criterion(f"3 2D noise {100 * fraction:g}% of extent", ratio <= bound,
                            f"E3D {e:.2f} vs {res.report.e3d_mm:.2f}, "
                            f"ratio {ratio:.3f} (<= {bound:g})")


def test_criterion_4_bone_initialization(baseline, perturbed):
    res, _ = baseline
    _, pres = perturbed
    increase = pres.report.e3d_mm / res.report.e3d_mm - 1
    assert record_criterion("4 perturbed bone-length initialization", increase <= 0.25,
                            f"E3D {pres.report.e3d_mm:.2f} vs {res.report.e3d_mm:.2f}, "
                            f"increase {100 * increase:.1f}% (<= 25%)")


def test_criterion_5_bone_recovery(scene, perturbed):
    spec, _, _ = scene
    L0, pres = perturbed
    L = spec.skeleton.lengths
    means = pres.report.per_bone_mean
    recovered = np.mean(np.abs(means / means.sum() - L))
    initial = np.mean(np.abs(L0 - L))
    assert record_criterion("5 bone-length recovery", recovered < initial,
                            f"mean |L - L_true| {recovered:.5f} recovered vs "
                            f"{initial:.5f} initial")


def _unit_suite():
    rng = np.random.default_rng(123)
    results = {}

    worst = 0.0
    for _ in range(100):
        Y = rng.normal(size=(5, 12)) * rng.uniform(0.1, 10)
        nu = float(rng.uniform(0, 2 * np.linalg.norm(Y, 2)))
        worst = max(worst, np.max(np.abs(shrinkage(Y, nu) - soft_threshold_oracle(Y, nu))))
    results["shrinkage vs oracle, 100 matrices"] = (worst <= 1e-10, f"max err {worst:.1e}")

    worst, h = 0.0, 1e-6
    for _ in range(20):
        T, N = int(rng.integers(1, 5)), int(rng.integers(2, 6))
        R = CameraPoses(np.stack([random_rotation(rng)[:2] for _ in range(T)]))
        S, A = rng.normal(size=(3 * T, N)), rng.normal(size=(3 * T, N))
        W = rng.normal(size=(2 * T, N))
        f = lambda X: 0.5 * (np.sum((W - R.project(rearrange_shape_inverse(X))) ** 2)
                             + np.sum((A - rearrange_shape_inverse(X)) ** 2))
        g = fpc_gradient(S, A, W, R)
        base = rearrange_shape(S)
        num = np.zeros_like(base)
        for idx in np.ndindex(*base.shape):
            e = np.zeros_like(base)
            e[idx] = h
            num[idx] = (f(base + e) - f(base - e)) / (2 * h)
        worst = max(worst, np.linalg.norm(num - g) / np.linalg.norm(g))
    results["fpc_gradient vs central differences, 20 instances"] = (worst <= 1e-4,
                                                                    f"max rel err {worst:.1e}")

    worst = 0.0
    for _ in range(50):
        gt = rng.normal(size=(4, 6, 3)) * 100
        est = gt @ random_rotation(rng).T + rng.normal(size=3) + rng.normal(size=gt.shape) * 5
        G = rigid_align(est, gt, allow_reflection=False)
        a = gt.reshape(-1, 3) - gt.reshape(-1, 3).mean(axis=0)
        b = est.reshape(-1, 3) - est.reshape(-1, 3).mean(axis=0)
        oracle = Rotation.align_vectors(a, b)[0].as_matrix()
        worst = max(worst, np.max(np.abs(G.rotation - oracle)))
    results["rigid_align vs Procrustes oracle, 50 pairs"] = (worst <= 1e-8, f"max err {worst:.1e}")

    orth, cam = 0.0, 0.0
    for seed in range(5):
        W, R, _ = rigid_scene(T=30, N=12, seed=seed)
        poses = recover_cameras(W, K=1).poses
        B = poses.blocks
        orth = max(orth, np.max(np.linalg.norm(B @ B.transpose(0, 2, 1) - np.eye(2), axis=(1, 2))))
        G = gauge_align(poses, R)
        cam = max(cam, np.mean(np.linalg.norm(B - R.blocks @ G, axis=(1, 2))))
    results["rigid camera recovery"] = (orth < 1e-6 and cam < 1e-3,
                                        f"orthonormality {orth:.1e}, aligned error {cam:.1e}")

    from sfam.model import Skeleton
    skel = Skeleton.from_raw(6, [(0, 1, 3), (1, 2, 2), (0, 3, 3), (3, 4, 2), (0, 5, 4)])
    violations = 0
    for _ in range(50):
        cfg = SolverConfig(beta=float(rng.uniform(0.1, 5)), lm_max_inner=int(rng.integers(1, 20)))
        S = rng.normal(size=(12, 6)) * 10
        A0 = S + rng.normal(size=S.shape) * 3
        s = float(rng.uniform(5, 40))
        after = lm_objective(lm_solve_A(S, skel, cfg, s, A_init=A0).data, S, skel, cfg, s)
        violations += after > lm_objective(A0, S, skel, cfg, s)
    results["lm_solve_A non-increase, 50 starts"] = (violations == 0, f"{violations} violations")

    cfg = SolverConfig()
    exact = all(cfg.mu(j) == cfg.mu0 * cfg.rho ** j for j in range(cfg.outer_max))
    results["mu schedule exact"] = (exact, "mu_j == mu0 * rho**j for j < outer_max")
    return results


def test_criterion_6_unit_oracles():
    results = _unit_suite()
    for name, (ok, detail) in results.items():
        record_criterion(f"6 {name}", ok, detail)
    assert all(ok for ok, _ in results.values())


def test_criterion_7_determinism(tmp_path, scene):
    spec, S, W = scene
    io.save_tracks(tmp_path / "tracks.csv", W)
    io.save_skeleton(tmp_path / "skeleton.json", spec.skeleton)
    outs = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        code = cli.main(["reconstruct", "--tracks", str(tmp_path / "tracks.csv"),
                         "--skeleton", str(tmp_path / "skeleton.json"), "--rank", str(RANK),
                         "--seed", str(SEED), "--out", str(out)])
        assert code == 0
        outs.append((out / "reconstruction.csv").read_bytes())
    assert record_criterion("7 determinism", outs[0] == outs[1],
                            f"two reconstruct runs, {len(outs[0])} bytes each, "
                            f"{'identical' if outs[0] == outs[1] else 'different'}")


@pytest.mark.skipif(not os.environ.get("SFAM_H36M_DIR"),
                    reason="optional: set SFAM_H36M_DIR to a directory with tracks.csv, "
                           "ground_truth.csv and skeleton.json")
def test_criterion_8_dataset_hook():
    root = os.environ["SFAM_H36M_DIR"]
    cfg = pipeline.RunConfig(tracks_path=os.path.join(root, "tracks.csv"),
                             skeleton_path=os.path.join(root, "skeleton.json"),
                             ground_truth_path=os.path.join(root, "ground_truth.csv"))
    e = pipeline.run_pipeline(cfg, write=False).report.e3d_mm
    assert record_criterion("8 dataset E3D", abs(e - 51.2) <= 0.15 * 51.2,
                            f"E3D {e:.1f} mm (target 51.2 +- 15%)")
