"""Rigid alignment of landmark sets and image volumes.

A :class:`RigidTransform` maps moving-image physical coordinates (mm) into
the fixed image frame: ``p -> R @ p + t``.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage, optimize

from .cohortmodel import ImageVolume
from .errors import DegenerateGeometryError, RegistrationError, ValidationError

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class RigidTransform:
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.array(self.rotation, dtype=float).reshape(3, 3)
        t = np.array(self.translation, dtype=float).reshape(3)
        if not np.allclose(R.T @ R, np.eye(3), atol=1e-9, rtol=0) or abs(np.linalg.det(R) - 1) > 1e-9:
            raise ValidationError("rotation must be a proper orthonormal matrix")
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    def apply(self, p) -> np.ndarray:
        """Map point(s) of shape (3,) or (n, 3)."""
        p = np.asarray(p, dtype=float)
        return p @ self.rotation.T + self.translation

    __call__ = apply

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """``self ∘ other``: apply ``other`` first."""
        return RigidTransform(self.rotation @ other.rotation, self.rotation @ other.translation + self.translation)

    def inverse(self) -> "RigidTransform":
        Rt = self.rotation.T
        return RigidTransform(Rt, -Rt @ self.translation)

    def to_dict(self) -> dict:
        return {
            "rotation": [float(v) for v in self.rotation.ravel()],
            "translation": [float(v) for v in self.translation],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RigidTransform":
        return cls(np.array(d["rotation"], dtype=float).reshape(3, 3), np.array(d["translation"], dtype=float))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "RigidTransform":
        return cls.from_dict(json.loads(text))

    def __eq__(self, other):
        if not isinstance(other, RigidTransform):
            return NotImplemented
        return np.array_equal(self.rotation, other.rotation) and np.array_equal(self.translation, other.translation)

    def __repr__(self):
        return f"RigidTransform(rotation={self.rotation.tolist()}, translation={self.translation.tolist()})"


def apply_transform(t: RigidTransform, p) -> np.ndarray:
    return t.apply(p)


def euler_matrix(ax: float, ay: float, az: float) -> np.ndarray:
    """Rotation ``Rz @ Ry @ Rx`` for angles in radians."""
    cx, sx = np.cos(ax), np.sin(ax)
    cy, sy = np.cos(ay), np.sin(ay)
    cz, sz = np.cos(az), np.sin(az)
    Rx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    Ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    Rz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    return Rz @ Ry @ Rx


def rotation_angle(R: np.ndarray) -> float:
    """Angle (radians) of the rotation ``R``."""
    return float(np.arccos(np.clip((np.trace(R) - 1) / 2, -1.0, 1.0)))


def kabsch_estimate(moving_pts, fixed_pts) -> RigidTransform:
    """Least-squares rigid transform taking ``moving_pts`` onto ``fixed_pts``."""
    M = np.asarray(moving_pts, dtype=float)
    F = np.asarray(fixed_pts, dtype=float)
    if M.shape != F.shape or M.ndim != 2 or M.shape[1] != 3:
        raise ValidationError("point sets must both have shape (n, 3)")
    if M.shape[0] < 3:
        raise DegenerateGeometryError(f"need at least 3 landmarks, got {M.shape[0]}")
    cm, cf = M.mean(axis=0), F.mean(axis=0)
    Mc, Fc = M - cm, F - cf
    for name, P in (("moving", Mc), ("fixed", Fc)):
        s = np.linalg.svd(P, compute_uv=False)
        if s[0] == 0 or s[1] <= 1e-9 * s[0]:
            raise DegenerateGeometryError(f"{name} landmarks are collinear")
    H = Mc.T @ Fc
    U, _, Vt = np.linalg.svd(H)
    d = np.sign(np.linalg.det(Vt.T @ U.T))
    R = Vt.T @ np.diag([1.0, 1.0, d]) @ U.T
    # re-orthonormalize away rounding so the constructor's 1e-9 check holds
    u, _, vt = np.linalg.svd(R)
    R = u @ vt
    return RigidTransform(R, cf - R @ cm)


def rmsd(t: RigidTransform, moving_pts, fixed_pts) -> float:
    diff = t.apply(np.asarray(moving_pts, float)) - np.asarray(fixed_pts, float)
    return float(np.sqrt(np.mean(np.sum(diff**2, axis=1))))


# ---------------------------------------------------------------------------
# intensity registration


@dataclass(frozen=True)
class RegistrationConfig:
    levels: int = 3
    factor: int = 2
    sigma: float = 1.0
    max_iter: int = 200
    rel_tol: float = 1e-6
    angle_scale: float = 0.05  # rad per optimizer unit
    initializer: str = "identity"  # or "moments"
    min_overlap: float = 0.1
    finest_level: int = 0  # stop this many pyramid levels above full resolution


@dataclass(frozen=True)
class RegistrationResult:
    transform: RigidTransform
    final_metric: float
    iterations: int
    converged: bool
    level_metrics: tuple[tuple[float, float], ...] = field(default=())


def _pyramid(volume: ImageVolume, levels: int, factor: int, sigma: float) -> list[ImageVolume]:
    out = [volume]
    for _ in range(levels - 1):
        prev = out[-1]
        smooth = ndimage.gaussian_filter(prev.voxels.astype(np.float64), sigma, mode="nearest")
        small = smooth[::factor, ::factor, ::factor]
        out.append(ImageVolume(small, tuple(s * factor for s in prev.spacing), prev.origin, prev.direction))
    return out[::-1]


def _center(volume: ImageVolume) -> np.ndarray:
    nx, ny, nz = volume.dims
    return volume.index_to_physical([(nx - 1) / 2, (ny - 1) / 2, (nz - 1) / 2])


def _center_of_mass(volume: ImageVolume) -> np.ndarray:
    w = volume.voxels.astype(float)
    w = w - w.min()
    com_zyx = np.array(ndimage.center_of_mass(w))
    return volume.index_to_physical(com_zyx[::-1])


def _overlaps(fixed: ImageVolume, moving: ImageVolume, t: RigidTransform) -> bool:
    fmin, fmax = fixed.bounds()
    nx, ny, nz = moving.dims
    corners = np.array([[i, j, k] for i in (0, nx - 1) for j in (0, ny - 1) for k in (0, nz - 1)], float)
    mc = t.apply(moving.index_to_physical(corners))
    return bool(np.all(mc.max(axis=0) >= fmin) and np.all(mc.min(axis=0) <= fmax))


class _LevelMetric:
    """Mean squared intensity error of ``moving`` resampled onto ``fixed``."""

    def __init__(self, fixed: ImageVolume, moving: ImageVolume, center: np.ndarray, min_overlap: float):
        nx, ny, nz = fixed.dims
        k, j, i = np.meshgrid(np.arange(nz), np.arange(ny), np.arange(nx), indexing="ij")
        ijk = np.stack([i.ravel(), j.ravel(), k.ravel()], axis=1).astype(float)
        self.points = fixed.index_to_physical(ijk)
        self.values = fixed.voxels.astype(np.float64).ravel()
        self.moving = moving
        self.moving_data = moving.voxels.astype(np.float64)
        self.upper = np.array(moving.dims, dtype=float) - 1
        self.center = center
        self.min_count = max(1, int(min_overlap * self.values.size))

    def transform(self, params: np.ndarray) -> RigidTransform:
        R = euler_matrix(*params[:3])
        return RigidTransform(R, self.center + params[3:] - R @ self.center)

    def __call__(self, params: np.ndarray) -> float:
        R = euler_matrix(*params[:3])
        # moving point for fixed point p: R^T (p - c - t) + c
        q = (self.points - self.center - params[3:]) @ R + self.center
        idx = self.moving.physical_to_index(q)
        valid = np.all((idx >= 0) & (idx <= self.upper), axis=1)
        n = int(valid.sum())
        if n < self.min_count:
            return 1e30
        coords = idx[valid][:, ::-1].T
        sampled = ndimage.map_coordinates(self.moving_data, coords, order=1, mode="nearest")
        return float(np.mean((sampled - self.values[valid]) ** 2))


def register_rigid_intensity(
    fixed: ImageVolume,
    moving: ImageVolume,
    cfg: RegistrationConfig = RegistrationConfig(),
    initial: RigidTransform | None = None,
) -> RegistrationResult:
    """Multi-resolution MSE registration with Nelder-Mead at each level.

    The optimizer works on 3 Euler angles and 3 translations about the fixed
    volume center. Deterministic for fixed inputs and ``cfg``.
    """
    center = _center(fixed)
    if initial is None:
        if cfg.initializer == "moments":
            shift = _center_of_mass(fixed) - _center_of_mass(moving)
            initial = RigidTransform(np.eye(3), shift)
        elif cfg.initializer == "identity":
            initial = RigidTransform.identity()
        else:
            raise ValidationError(f"unknown initializer {cfg.initializer!r}")
    if not _overlaps(fixed, moving, initial):
        raise RegistrationError("fixed and moving volumes do not overlap")

    # express the initial transform in center-relative parameters
    R0 = initial.rotation
    ay = float(np.arcsin(np.clip(-R0[2, 0], -1, 1)))
    ax = float(np.arctan2(R0[2, 1], R0[2, 2]))
    az = float(np.arctan2(R0[1, 0], R0[0, 0]))
    t0 = initial.translation + R0 @ center - center
    params = np.array([ax, ay, az, *t0])

    if not 0 <= cfg.finest_level < cfg.levels:
        raise ValidationError("finest_level must lie in [0, levels)")
    stop = cfg.levels - cfg.finest_level
    fixed_levels = _pyramid(fixed, cfg.levels, cfg.factor, cfg.sigma)[:stop]
    moving_levels = _pyramid(moving, cfg.levels, cfg.factor, cfg.sigma)[:stop]
    intensity_scale = float(np.var(fixed.voxels)) or 1.0

    total_iter = 0
    converged = False
    level_metrics = []
    final = np.inf
    for fl, ml in zip(fixed_levels, moving_levels):
        metric = _LevelMetric(fl, ml, center, cfg.min_overlap)
        scale = np.array([cfg.angle_scale] * 3 + [float(np.mean(fl.spacing))] * 3)
        start = metric(params)
        if start >= 1e30:
            raise RegistrationError("insufficient overlap between volumes")
        x0 = params / scale
        res = optimize.minimize(
            lambda u: metric(u * scale), x0, method="Nelder-Mead",
            options={
                "maxiter": cfg.max_iter,
                "initial_simplex": np.vstack([x0, x0 + np.eye(6)]),
                "xatol": 1e-3,
                "fatol": cfg.rel_tol * intensity_scale,
            },
        )
        end = float(res.fun)
        if end <= start:
            params = res.x * scale
        else:
            end = start
        total_iter += int(res.nit)
        converged = bool(res.success)
        level_metrics.append((float(start), end))
        final = end
        log.debug("level spacing %s: metric %.6g -> %.6g (%d it)", fl.spacing, start, end, res.nit)

    transform = _LevelMetric.transform(metric, params)
    if not converged:
        log.info("intensity registration did not converge within %d iterations", cfg.max_iter)
    return RegistrationResult(transform, final, total_iter, converged, tuple(level_metrics))


def register_landmarks(moving_pts, fixed_pts) -> RegistrationResult:
    t = kabsch_estimate(moving_pts, fixed_pts)
    return RegistrationResult(t, rmsd(t, moving_pts, fixed_pts), 0, True, ())
