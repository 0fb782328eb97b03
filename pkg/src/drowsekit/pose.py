"""Head pose estimation from six 2D-3D point correspondences.

The solver is a damped Gauss-Newton (Levenberg-Marquardt) minimizer of
pixel reprojection error, written directly on numpy.  Rotations are kept
as matrices internally and updated through a local axis-angle step, which
avoids the parameterization singularities of a global rvec while staying
exactly on SO(3).

Conventions:
  * model (face) coordinates: millimetres, x right, y up, z toward the
    camera, origin at the nose tip;
  * camera frame: X = R @ P + t, z must be positive for visibility;
  * image: u = fx * X/Z + cx, v = -fy * Y/Z + cy (v grows downward);
  * Euler angles (degrees): applied as roll about z, then yaw about y,
    then pitch about x, i.e. the composed matrix is Rx(pitch) @ Ry(yaw)
    @ Rz(roll).  Yaw is recovered from R[0][2], so yaw = +30 means the
    face turned 30 degrees toward its left.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import BehindCamera, ConfigError, InvalidDimensions, NotARotation

_EPS_Z = 1e-6  # minimum camera-frame depth for a projectable point


@dataclass(frozen=True)
class CameraModel:
    """Pinhole intrinsics in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    image_width: int
    image_height: int

    def validate(self) -> None:
        if not (self.fx > 0 and self.fy > 0):
            raise ConfigError(f"focal lengths must be positive, got fx={self.fx} fy={self.fy}")
        if not (self.image_width > 0 and self.image_height > 0):
            raise InvalidDimensions(
                f"image dimensions must be positive, got "
                f"{self.image_width}x{self.image_height}"
            )


def default_camera(image_width: int, image_height: int) -> CameraModel:
    """Nominal intrinsics for an uncalibrated camera: fx = fy = image
    width, principal point at the image center."""
    if image_width <= 0 or image_height <= 0:
        raise InvalidDimensions(
            f"image dimensions must be positive, got {image_width}x{image_height}"
        )
    return CameraModel(
        fx=float(image_width),
        fy=float(image_width),
        cx=image_width / 2.0,
        cy=image_height / 2.0,
        image_width=image_width,
        image_height=image_height,
    )


@dataclass(frozen=True)
class FaceModel3D:
    """Six 3D face points in millimetres (see module docstring for axes)."""

    left_eye: tuple[float, float, float]
    right_eye: tuple[float, float, float]
    nose: tuple[float, float, float]
    mouth_left: tuple[float, float, float]
    mouth_right: tuple[float, float, float]
    chin: tuple[float, float, float]

    def as_array(self) -> np.ndarray:
        return np.array(
            [
                self.left_eye,
                self.right_eye,
                self.nose,
                self.mouth_left,
                self.mouth_right,
                self.chin,
            ],
            dtype=np.float64,
        )

    @classmethod
    def from_rows(cls, rows) -> "FaceModel3D":
        arr = np.asarray(rows, dtype=np.float64)
        if arr.shape != (6, 3):
            raise ConfigError(f"face model must be 6 rows of 3 values, got shape {arr.shape}")
        return cls(*(tuple(float(v) for v in row) for row in arr))

    def validate(self, tol: float = 1e-6) -> None:
        """Require non-coplanar points and left/right mirror symmetry."""
        arr = self.as_array()
        centered = arr - arr.mean(axis=0)
        if np.linalg.matrix_rank(centered, tol=1e-9) < 3:
            raise ConfigError("face model points are coplanar; pose would be ambiguous")
        for a, b in ((self.left_eye, self.right_eye), (self.mouth_left, self.mouth_right)):
            mirrored = (-b[0], b[1], b[2])
            if max(abs(a[i] - mirrored[i]) for i in range(3)) > tol:
                raise ConfigError(
                    f"face model is not mirror symmetric: {a} vs mirror of {b}"
                )

    def chin_axis_factor(self) -> float:
        """The k for which the chin's y equals m_y + k*(m_y - e_y), with e/m
        the eye/mouth midpoints.  Used to keep 2D chin derivation consistent
        with a configured model."""
        e = (np.asarray(self.left_eye) + np.asarray(self.right_eye)) / 2.0
        m = (np.asarray(self.mouth_left) + np.asarray(self.mouth_right)) / 2.0
        dy = m[1] - e[1]
        if abs(dy) < 1e-9:
            raise ConfigError("face model eye and mouth midpoints have equal height")
        return float((self.chin[1] - m[1]) / dy)

    def with_axis_chin(self, k: float) -> "FaceModel3D":
        """Replace the chin with the affine extension m + k*(m - e) of the
        eye/mouth midpoints.

        A chin derived in 2D as an affine combination of detected
        landmarks corresponds under projection (approximately, exactly at
        constant depth) to the same affine combination of the 3D points,
        not to the anatomical chin.  Solving against this substitute point
        removes most of the bias the derivation would otherwise inject.
        """
        e = (np.asarray(self.left_eye) + np.asarray(self.right_eye)) / 2.0
        m = (np.asarray(self.mouth_left) + np.asarray(self.mouth_right)) / 2.0
        chin = m + k * (m - e)
        return FaceModel3D(
            left_eye=self.left_eye,
            right_eye=self.right_eye,
            nose=self.nose,
            mouth_left=self.mouth_left,
            mouth_right=self.mouth_right,
            chin=(float(chin[0]), float(chin[1]), float(chin[2])),
        )


# Generic adult face, millimetres, nose tip at origin.
CANONICAL_FACE_MODEL = FaceModel3D(
    left_eye=(-135.0, 170.0, -135.0),
    right_eye=(135.0, 170.0, -135.0),
    nose=(0.0, 0.0, 0.0),
    mouth_left=(-150.0, -150.0, -125.0),
    mouth_right=(150.0, -150.0, -125.0),
    chin=(0.0, -330.0, -65.0),
)


@dataclass(frozen=True)
class SolverParams:
    max_iters: int = 100
    tol: float = 1e-12
    lambda0: float = 1e-3
    # A warm initial pose is accepted without the multi-start sweep when it
    # converges below this reprojection RMS; above it the full sweep runs.
    warm_rms_px: float = 8.0

    def validate(self) -> None:
        if self.max_iters < 1:
            raise ConfigError(f"max_iters must be >= 1, got {self.max_iters}")
        if not (self.tol > 0):
            raise ConfigError(f"tol must be positive, got {self.tol}")
        if not (self.lambda0 > 0):
            raise ConfigError(f"lambda0 must be positive, got {self.lambda0}")


@dataclass(frozen=True)
class HeadPose:
    rvec: np.ndarray  # axis-angle, radians
    tvec: np.ndarray  # millimetres, camera frame
    rotation: np.ndarray  # 3x3
    yaw_deg: float
    pitch_deg: float
    roll_deg: float
    reproj_rms_px: float
    converged: bool
    n_iterations: int = 0
    cost_trace: tuple = field(default=(), repr=False)  # accepted-cost history


def _skew(v: np.ndarray) -> np.ndarray:
    return np.array(
        [[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]], dtype=np.float64
    )


def rodrigues(rvec: np.ndarray) -> np.ndarray:
    """Axis-angle vector (radians) to rotation matrix.

    R = I + sin(t) K + (1 - cos(t)) K^2 with K the unit-axis cross
    matrix; angles below 1e-12 return the identity.
    """
    rvec = np.asarray(rvec, dtype=np.float64).reshape(3)
    theta = float(np.linalg.norm(rvec))
    if theta < 1e-12:
        return np.eye(3)
    k = _skew(rvec / theta)
    return np.eye(3) + math.sin(theta) * k + (1.0 - math.cos(theta)) * (k @ k)


def _check_rotation(R: np.ndarray, tol: float = 1e-6) -> np.ndarray:
    R = np.asarray(R, dtype=np.float64)
    if R.shape != (3, 3):
        raise NotARotation(f"expected 3x3 matrix, got shape {R.shape}")
    if np.max(np.abs(R.T @ R - np.eye(3))) > tol or abs(np.linalg.det(R) - 1.0) > tol:
        raise NotARotation("matrix is not orthonormal with determinant +1")
    return R


def rotation_to_rvec(R: np.ndarray) -> np.ndarray:
    """Rotation matrix to axis-angle vector (matrix logarithm).

    theta is recovered from atan2 of the antisymmetric-part norm and
    (trace-1)/2, which stays well conditioned near theta = pi where the
    acos form loses precision.
    """
    R = _check_rotation(R)
    w = 0.5 * np.array(
        [R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]], dtype=np.float64
    )
    s = float(np.linalg.norm(w))
    c = (float(np.trace(R)) - 1.0) / 2.0
    theta = math.atan2(s, c)
    if theta < 1e-6:
        return w  # first-order: rvec ~ antisymmetric part for tiny angles
    if s > 1e-6:
        return w * (theta / s)
    # theta near pi: axis from the dominant column of uu^T = (R + R^T - 2cI)
    # / (2(1-c)); the antisymmetric part fixes the (nearly vanishing) sign.
    uut = (R + R.T - 2.0 * c * np.eye(3)) / (2.0 * (1.0 - c))
    j = int(np.argmax(np.diag(uut)))
    axis = uut[:, j] / math.sqrt(max(uut[j, j], 1e-15))
    axis = axis / np.linalg.norm(axis)
    if s > 0 and float(np.dot(axis, w)) < 0:
        axis = -axis
    return axis * theta


def euler_to_rotation(yaw_deg: float, pitch_deg: float, roll_deg: float) -> np.ndarray:
    """Compose R = Rx(pitch) @ Ry(yaw) @ Rz(roll), angles in degrees."""
    y, p, r = (math.radians(a) for a in (yaw_deg, pitch_deg, roll_deg))
    cy, sy = math.cos(y), math.sin(y)
    cp, sp = math.cos(p), math.sin(p)
    cr, sr = math.cos(r), math.sin(r)
    rx = np.array([[1, 0, 0], [0, cp, -sp], [0, sp, cp]], dtype=np.float64)
    ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]], dtype=np.float64)
    rz = np.array([[cr, -sr, 0], [sr, cr, 0], [0, 0, 1]], dtype=np.float64)
    return rx @ ry @ rz


def rotation_to_euler(R: np.ndarray) -> tuple[float, float, float]:
    """Extract (yaw, pitch, roll) in degrees; inverse of euler_to_rotation.

    yaw = asin(R[0,2]) clamped to [-1, 1].  Away from gimbal lock
    (|cos yaw| > 1e-6): pitch = atan2(-R[1,2], R[2,2]) and
    roll = atan2(-R[0,1], R[0,0]).  At lock, roll is reported as 0 and
    pitch absorbs the whole x/z spin: pitch = sign(R[0,2]) *
    atan2(R[1,0], R[1,1]).
    """
    R = _check_rotation(R)
    s = min(1.0, max(-1.0, float(R[0, 2])))
    yaw = math.asin(s)
    if abs(math.cos(yaw)) > 1e-6:
        pitch = math.atan2(-R[1, 2], R[2, 2])
        roll = math.atan2(-R[0, 1], R[0, 0])
    else:
        roll = 0.0
        pitch = math.copysign(1.0, s) * math.atan2(R[1, 0], R[1, 1])
    return (math.degrees(yaw), math.degrees(pitch), math.degrees(roll))


def _project_array(points: np.ndarray, R: np.ndarray, tvec: np.ndarray,
                   cam: CameraModel) -> np.ndarray:
    X = points @ R.T + tvec
    if np.any(X[:, 2] <= 0.0):
        raise BehindCamera(
            f"{int(np.sum(X[:, 2] <= 0.0))} point(s) at or behind the camera plane"
        )
    u = cam.fx * X[:, 0] / X[:, 2] + cam.cx
    v = -cam.fy * X[:, 1] / X[:, 2] + cam.cy
    return np.stack([u, v], axis=1)


def project(model, rvec: np.ndarray, tvec: np.ndarray, cam: CameraModel) -> np.ndarray:
    """Project model points through the pinhole camera.

    model may be a FaceModel3D or an (N, 3) array.  Returns an (N, 2)
    array of pixel coordinates; raises BehindCamera if any transformed
    point has z <= 0.
    """
    points = model.as_array() if isinstance(model, FaceModel3D) else np.asarray(
        model, dtype=np.float64
    )
    R = rodrigues(rvec)
    return _project_array(points, R, np.asarray(tvec, dtype=np.float64).reshape(3), cam)


def _residual(points3d: np.ndarray, obs: np.ndarray, R: np.ndarray,
              t: np.ndarray, cam: CameraModel):
    """Residual vector (2N,) and camera-frame points, or (None, X) if any
    point falls at or behind the camera plane."""
    X = points3d @ R.T + t
    if np.any(X[:, 2] <= _EPS_Z):
        return None, X
    u = cam.fx * X[:, 0] / X[:, 2] + cam.cx
    v = -cam.fy * X[:, 1] / X[:, 2] + cam.cy
    r = np.empty(2 * len(obs))
    r[0::2] = u - obs[:, 0]
    r[1::2] = v - obs[:, 1]
    return r, X


def _jacobian(X: np.ndarray, t: np.ndarray, cam: CameraModel) -> np.ndarray:
    """d(residual)/d(local step), step = (dw, dt) with R <- exp(dw) R.

    The rotation update acts on the rotated model point Y = R p = X - t
    (not on X, since t is updated additively), so dX/ddw at 0 is -[Y]x;
    dX/ddt is I.  The pixel rows are du/dX = [fx/z, 0, -fx x/z^2],
    dv/dX = [0, -fy/z, fy y/z^2].
    """
    n = X.shape[0]
    J = np.empty((2 * n, 6))
    x, y, z = X[:, 0], X[:, 1], X[:, 2]
    iz = 1.0 / z
    # du/dX and dv/dX stacked as (n, 2, 3)
    A = np.zeros((n, 2, 3))
    A[:, 0, 0] = cam.fx * iz
    A[:, 0, 2] = -cam.fx * x * iz * iz
    A[:, 1, 1] = -cam.fy * iz
    A[:, 1, 2] = cam.fy * y * iz * iz
    # -[Y]x for each point, shape (n, 3, 3)
    Y = X - t
    yx, yy, yz = Y[:, 0], Y[:, 1], Y[:, 2]
    S = np.zeros((n, 3, 3))
    S[:, 0, 1] = yz
    S[:, 0, 2] = -yy
    S[:, 1, 0] = -yz
    S[:, 1, 2] = yx
    S[:, 2, 0] = yy
    S[:, 2, 1] = -yx
    Jr = np.einsum("nij,njk->nik", A, S)  # (n, 2, 3) rotation block
    J[:, :3] = Jr.reshape(2 * n, 3)
    J[:, 3:] = A.reshape(2 * n, 3)
    return J


def _lm_refine(points3d: np.ndarray, obs: np.ndarray, cam: CameraModel,
               R0: np.ndarray, t0: np.ndarray, params: SolverParams,
               lam0: float | None = None):
    """One Levenberg-Marquardt descent from (R0, t0).

    Returns (R, t, cost, converged, n_iters, trace).  An iteration is one
    linear solve; rejected steps count toward max_iters.  Damping follows
    Marquardt scaling (lambda * diag(J^T J)), divided by 10 on accept and
    multiplied by 10 on reject.  Convergence means the relative cost drop
    or the step norm fell below params.tol.
    """
    R, t = R0, t0.copy()
    r, X = _residual(points3d, obs, R, t, cam)
    if r is None:
        return R, t, math.inf, False, 0, ()
    cost = float(r @ r)
    trace = [cost]
    if cost == 0.0:
        return R, t, 0.0, True, 0, tuple(trace)
    lam = params.lambda0 if lam0 is None else lam0
    converged = False
    iters = 0
    while iters < params.max_iters:
        J = _jacobian(X, t, cam)
        H = J.T @ J
        g = J.T @ r
        iters += 1
        try:
            step = np.linalg.solve(H + lam * np.diag(np.diag(H)), -g)
        except np.linalg.LinAlgError:
            lam *= 10.0
            if lam > 1e15:
                break
            continue
        # A vanishing proposed step means the quadratic model has no
        # descent left at this damping: we are at a minimum.
        if float(np.linalg.norm(step)) < params.tol:
            converged = True
            break
        R_new = rodrigues(step[:3]) @ R
        t_new = t + step[3:]
        r_new, X_new = _residual(points3d, obs, R_new, t_new, cam)
        # A step that drives a point to or behind the camera plane has
        # infinite cost: reject it.
        if r_new is not None and float(r_new @ r_new) < cost:
            new_cost = float(r_new @ r_new)
            rel_drop = (cost - new_cost) / cost
            R, t, r, X, cost = R_new, t_new, r_new, X_new, new_cost
            trace.append(cost)
            lam = max(lam / 10.0, 1e-15)
            if rel_drop < params.tol or cost == 0.0:
                converged = True
                break
        else:
            lam *= 10.0
            if lam > 1e15:
                break
    return R, t, cost, converged, iters, tuple(trace)


def _points_collinear(points2d: np.ndarray, tol_px: float = 1e-6) -> bool:
    centered = points2d - points2d.mean(axis=0)
    # second singular value = RMS distance from the best-fit line (scaled)
    s = np.linalg.svd(centered, compute_uv=False)
    return bool(s[-1] < tol_px)


def _initial_tvec(obs: np.ndarray, cam: CameraModel) -> np.ndarray:
    """Depth from the apparent eye-line to mouth-line distance (340 mm in
    the canonical model), then x/y by back-projecting the nose."""
    e = (obs[0] + obs[1]) / 2.0
    m = (obs[3] + obs[4]) / 2.0
    d = float(np.linalg.norm(e - m))
    z0 = cam.fx * 340.0 / d if d > 1e-9 else 1000.0
    u, v = obs[2]
    return np.array(
        [z0 * (u - cam.cx) / cam.fx, -z0 * (v - cam.cy) / cam.fy, z0], dtype=np.float64
    )


def _finish(points3d, obs, cam, R, t, converged, iters, trace) -> HeadPose:
    r, X = _residual(points3d, obs, R, t, cam)
    if r is None:
        rms = math.inf
        converged = False
    else:
        rms = math.sqrt(float(r @ r) / len(points3d))
    yaw, pitch, roll = rotation_to_euler(R)
    return HeadPose(
        rvec=rotation_to_rvec(R),
        tvec=t.copy(),
        rotation=R.copy(),
        yaw_deg=yaw,
        pitch_deg=pitch,
        roll_deg=roll,
        reproj_rms_px=rms,
        converged=converged,
        n_iterations=iters,
        cost_trace=trace,
    )


def solve_pnp(
    points2d,
    model: FaceModel3D | np.ndarray,
    cam: CameraModel,
    params: SolverParams | None = None,
    init: HeadPose | None = None,
) -> HeadPose:
    """Estimate head pose from six observed pixels and their model points.

    points2d: LandmarkSet6-like (has .as_array) or (6, 2) array, in model
    point order.  Runs LM descents from yaw = -45/0/+45 degree initial
    rotations (translation seeded from apparent face scale) and keeps the
    lowest-residual result.  When init is given, that pose is refined
    first and accepted without the sweep if it converges with RMS at or
    under params.warm_rms_px.

    Never raises for hard inputs: collinear observations, or descents
    that end behind the camera or fail every tolerance, return a pose
    with converged=False instead of a fabricated answer.
    """
    params = params or SolverParams()
    params.validate()
    obs = points2d.as_array() if hasattr(points2d, "as_array") else np.asarray(
        points2d, dtype=np.float64
    )
    if obs.shape[1] != 2 or obs.shape[0] < 4:
        raise ValueError(f"need at least 4 observed points of 2 coords, got {obs.shape}")
    points3d = model.as_array() if isinstance(model, FaceModel3D) else np.asarray(
        model, dtype=np.float64
    )
    if points3d.shape != (obs.shape[0], 3):
        raise ValueError(
            f"model shape {points3d.shape} does not match {obs.shape[0]} observations"
        )
    cam.validate()

    t0 = _initial_tvec(obs, cam)
    if _points_collinear(obs):
        # Pose is unobservable from a line of points; report the initial
        # guess explicitly flagged as non-converged.
        return _finish(points3d, obs, cam, np.eye(3), t0, False, 0, ())

    if init is not None:
        # A warm start sits near the optimum, so begin almost at pure
        # Gauss-Newton; the sweep below still runs if it goes badly.
        R, t, cost, conv, iters, trace = _lm_refine(
            points3d, obs, cam, init.rotation.copy(), init.tvec.copy(), params,
            lam0=params.lambda0 * 1e-3,
        )
        if conv and math.sqrt(cost / len(points3d)) <= params.warm_rms_px:
            return _finish(points3d, obs, cam, R, t, conv, iters, trace)

    best = None
    for yaw0 in (-45.0, 0.0, 45.0):
        R0 = rodrigues(np.array([0.0, math.radians(yaw0), 0.0]))
        R, t, cost, conv, iters, trace = _lm_refine(points3d, obs, cam, R0, t0, params)
        if best is None or cost < best[2]:
            best = (R, t, cost, conv, iters, trace)
        if best[2] <= 1e-18 * len(points3d):  # machine-zero residual: done
            break
    R, t, cost, conv, iters, trace = best
    return _finish(points3d, obs, cam, R, t, conv, iters, trace)
