import numpy as np
import pytest
from conftest import render_phantom
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import kabsch_oracle
from scipy.spatial.transform import Rotation

from longirad.errors import ValidationError
from longirad.registration import (
    RegistrationConfig, RigidTransform, euler_matrix, kabsch_estimate, register_rigid_intensity, rmsd, rotation_angle,
)

angles = st.tuples(*(st.floats(-np.pi, np.pi),) * 3)
shifts = st.tuples(*(st.floats(-100, 100),) * 3)


@settings(max_examples=100, deadline=None)
@given(angles, shifts, st.integers(0, 2**31))
def test_kabsch_matches_quaternion_oracle(ang, t, seed):
    T = RigidTransform(euler_matrix(*ang), t)
    M = np.random.default_rng(seed).uniform(-50, 50, (8, 3))
    F = T.apply(M) + np.random.default_rng(seed + 1).normal(0, 0.5, (8, 3))
    est = kabsch_estimate(M, F)
    R, tr = kabsch_oracle(M, F)
    assert np.allclose(est.rotation, R, atol=1e-7)
    assert np.allclose(est.translation, tr, atol=1e-6)


@settings(max_examples=50, deadline=None)
@given(angles, shifts)
def test_inverse_and_compose(ang, t):
    T = RigidTransform(euler_matrix(*ang), t)
    ident = T.compose(T.inverse())
    assert np.allclose(ident.rotation, np.eye(3), atol=1e-12)
    assert np.allclose(ident.translation, 0, atol=1e-9)


def test_euler_matches_scipy():
    R = euler_matrix(0.1, -0.2, 0.3)
    # extrinsic x, then y, then z
    assert np.allclose(R, Rotation.from_euler("xyz", [0.1, -0.2, 0.3]).as_matrix(), atol=1e-14)
    assert rotation_angle(R) == pytest.approx(Rotation.from_matrix(R).magnitude(), abs=1e-12)


def test_reflection_is_rejected():
    with pytest.raises(ValidationError):
        RigidTransform(np.diag([1.0, 1.0, -1.0]), np.zeros(3))


def test_kabsch_needs_three_points():
    with pytest.raises(Exception):
        kabsch_estimate(np.zeros((2, 3)), np.zeros((2, 3)))


def test_json_roundtrip_is_exact():
    T = RigidTransform(euler_matrix(0.3, 0.2, -1.1), [1.5, -2.25, 1 / 3])
    assert RigidTransform.from_json(T.to_json()) == T


def test_rmsd_zero_for_exact_fit():
    T = RigidTransform(euler_matrix(0.2, 0, 0), [1, 2, 3])
    M = np.random.default_rng(0).normal(size=(6, 3))
    assert rmsd(kabsch_estimate(M, T.apply(M)), M, T.apply(M)) < 1e-10


def test_identity_registration_stays_put():
    v = render_phantom(RigidTransform.identity(), n=24, spacing=5.0)
    r = register_rigid_intensity(v, v, RegistrationConfig(levels=2))
    assert np.abs(r.transform.translation).max() < 0.05
    assert rotation_angle(r.transform.rotation) < 1e-3


def test_recovers_small_rotation():
    truth = RigidTransform(euler_matrix(0, 0, np.deg2rad(4)), [2.0, -1.0, 0.0])
    fixed = render_phantom(RigidTransform.identity())
    moving = render_phantom(truth.inverse())
    r = register_rigid_intensity(fixed, moving)
    pts = np.random.default_rng(0).uniform(20, 100, (20, 3))
    assert np.max(np.linalg.norm(r.transform.apply(pts) - truth.apply(pts), axis=1)) < 2.0


def test_quarter_turn_by_hand():
    T = RigidTransform(euler_matrix(0, 0, np.pi / 2), [10, 0, 0])
    assert np.allclose(T.apply([1.0, 0.0, 0.0]), [10.0, 1.0, 0.0], atol=1e-12)


def test_four_noncoplanar_points():
    M = np.array([[0, 0, 0], [10, 0, 0], [0, 10, 0], [0, 0, 10]], dtype=float)
    T = RigidTransform(euler_matrix(0.3, -0.7, 1.1), [4.0, -2.0, 9.0])
    est = kabsch_estimate(M, T.apply(M))
    assert np.linalg.norm(est.rotation - T.rotation) < 1e-9
    assert np.linalg.norm(est.translation - T.translation) < 1e-9


def test_noisy_landmarks_no_worse_than_svd_oracle():
    rng = np.random.default_rng(3)
    M = rng.uniform(-50, 50, (10, 3))
    T = RigidTransform(euler_matrix(0.1, 0.2, -0.3), [1.0, 2.0, 3.0])
    F = T.apply(M) + rng.normal(0, 0.5, M.shape)
    # textbook SVD solution, written out independently
    mc, fc = M.mean(0), F.mean(0)
    U, _, Vt = np.linalg.svd((M - mc).T @ (F - fc))
    D = np.diag([1, 1, np.sign(np.linalg.det(Vt.T @ U.T))])
    R = Vt.T @ D @ U.T
    ref = np.sqrt(np.mean(np.sum((M @ R.T + (fc - R @ mc) - F) ** 2, axis=1)))
    assert rmsd(kabsch_estimate(M, F), M, F) <= ref + 1e-9


def test_phantom_translation_within_half_voxel():
    spacing = 4.0
    truth = RigidTransform(np.eye(3), [5.0, -3.0, 2.0])
    fixed = render_phantom(RigidTransform.identity(), spacing=spacing)
    moving = render_phantom(truth.inverse(), spacing=spacing)
    r = register_rigid_intensity(fixed, moving)
    assert np.max(np.abs(r.transform.translation - truth.translation)) < 0.5 * spacing
    assert rotation_angle(r.transform.rotation) < np.deg2rad(1.0)


def test_phantom_rotation_angle_within_half_degree():
    truth = RigidTransform(euler_matrix(0, 0, np.deg2rad(5)), [0.0, 0.0, 0.0])
    fixed = render_phantom(RigidTransform.identity())
    moving = render_phantom(truth.inverse())
    r = register_rigid_intensity(fixed, moving)
    err = rotation_angle(r.transform.rotation @ truth.rotation.T)
    assert err < np.deg2rad(0.5), np.rad2deg(err)
