"""Pinhole cameras, fundamental matrices and depth-clamped epipolar sampling

Conventions: extrinsics map world to camera (x_cam = R·X + t), pixel (0, 0) is
the center of the top-left pixel, pixel coordinates are (u, v) = (column, row).
"""

from dataclasses import dataclass, field
from typing import Any, Dict, Sequence, Tuple

import numpy as np

from pipeline.errors import (
    BehindCameraError,
    DegenerateBaselineError,
    EmptySegmentError,
    InvalidCameraError,
    PipelineError,
)
from utils.logger import get_logger

_LOGGER = get_logger(__name__)

ROTATION_TOL = 1e-9
MIN_DEPTH = 1e-9
MIN_BASELINE = 1e-12


def _frozen(array) -> np.ndarray:
    out = np.array(array, dtype=np.float64)
    out.setflags(write=False)
    return out


def _transform(M: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Row-wise M·x for x in X, summed element by element.

    Each output depends only on its own row, so single-point and batched calls
    agree bit for bit.
    """
    return (X[:, None, :] * M[None, :, :]).sum(axis=-1)


def _check_camera(K: np.ndarray, R: np.ndarray, t: np.ndarray):
    if K.shape != (3, 3) or R.shape != (3, 3) or t.shape != (3,):
        raise InvalidCameraError(f"bad camera shapes K{K.shape} R{R.shape} t{t.shape}")
    if not (np.all(np.isfinite(K)) and np.all(np.isfinite(R)) and np.all(np.isfinite(t))):
        raise InvalidCameraError("camera parameters must be finite")
    if np.max(np.abs(R.T @ R - np.eye(3))) > ROTATION_TOL or abs(np.linalg.det(R) - 1.0) > ROTATION_TOL:
        raise InvalidCameraError("rotation is not orthonormal with det +1")
    if K[1, 0] != 0.0 or K[2, 0] != 0.0 or K[2, 1] != 0.0 or K[2, 2] != 1.0:
        raise InvalidCameraError("intrinsics must be upper-triangular with K[2][2] = 1")
    if K[0, 0] <= 0.0 or K[1, 1] <= 0.0:
        raise InvalidCameraError("focal lengths must be positive")


def projection_matrix(K, R, t) -> np.ndarray:
    """Compose P = K·[R|t]

    Raises:
        InvalidCameraError: non-orthonormal R or degenerate K
    """
    K = np.asarray(K, dtype=np.float64)
    R = np.asarray(R, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64).reshape(-1)
    _check_camera(K, R, t)
    return K @ np.hstack([R, t[:, None]])


@dataclass(frozen=True)
class CameraView:
    """Calibrated view: intrinsics, world→camera pose and image size (width, height)"""
    K: np.ndarray
    R: np.ndarray
    t: np.ndarray
    image_size: Tuple[int, int] = (320, 240)
    P: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        K, R = _frozen(self.K), _frozen(self.R)
        t = _frozen(np.asarray(self.t, dtype=np.float64).reshape(-1))
        width, height = (int(v) for v in self.image_size)
        if width <= 0 or height <= 0:
            raise InvalidCameraError(f"image size must be positive, got {self.image_size}")
        object.__setattr__(self, "K", K)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "image_size", (width, height))
        object.__setattr__(self, "P", _frozen(projection_matrix(K, R, t)))

    @property
    def width(self) -> int:
        return self.image_size[0]

    @property
    def height(self) -> int:
        return self.image_size[1]

    @property
    def center(self) -> np.ndarray:
        """Camera center in world coordinates"""
        return -self.R.T @ self.t

    def project_points(self, X: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Project world points (n, 3) without raising.

        Returns:
            (uv, depth): uv is (n, 2), NaN where depth <= MIN_DEPTH
        """
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        Xh = np.hstack([X, np.ones((X.shape[0], 1))])
        uvw = _transform(self.P, Xh)
        depth = uvw[:, 2]
        uv = np.full((X.shape[0], 2), np.nan)
        front = depth > MIN_DEPTH
        uv[front] = uvw[front, :2] / depth[front, None]
        return uv, depth

    def unproject(self, uv, depth) -> np.ndarray:
        """World points on the rays through pixels uv (n, 2) at projective depths (n,)"""
        uv = np.atleast_2d(np.asarray(uv, dtype=np.float64))
        depth = np.atleast_1d(np.asarray(depth, dtype=np.float64))
        uv1 = np.hstack([uv, np.ones((uv.shape[0], 1))])
        rays = _transform(np.linalg.inv(self.K), uv1)
        x_cam = rays * depth[:, None]
        return _transform(self.R.T, x_cam - self.t[None, :])

    def in_bounds(self, uv: np.ndarray) -> np.ndarray:
        uv = np.atleast_2d(uv)
        with np.errstate(invalid="ignore"):
            return ((uv[:, 0] >= 0.0) & (uv[:, 0] <= self.width - 1)
                    & (uv[:, 1] >= 0.0) & (uv[:, 1] <= self.height - 1))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "K": [float(v) for v in self.K.reshape(-1)],
            "R": [float(v) for v in self.R.reshape(-1)],
            "t": [float(v) for v in self.t],
            "width": self.width,
            "height": self.height,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'CameraView':
        """Strict construction from a camera-trajectory entry"""
        for key in ("K", "R", "t", "width", "height"):
            if key not in data:
                raise InvalidCameraError(f"missing field '{key}'")
        K = np.asarray(data["K"], dtype=np.float64)
        R = np.asarray(data["R"], dtype=np.float64)
        t = np.asarray(data["t"], dtype=np.float64)
        if K.size != 9 or R.size != 9 or t.size != 3:
            raise InvalidCameraError("K and R need 9 numbers, t needs 3")
        return cls(K=K.reshape(3, 3), R=R.reshape(3, 3), t=t,
                   image_size=(int(data["width"]), int(data["height"])))


def project(view: CameraView, X) -> Tuple[np.ndarray, float]:
    """Project one world point into a view

    Returns:
        (pixel, depth): pixel (u, v) and the projective depth

    Raises:
        BehindCameraError: depth <= 1e-9
    """
    uv, depth = view.project_points(np.asarray(X, dtype=np.float64).reshape(1, 3))
    if not depth[0] > MIN_DEPTH:
        raise BehindCameraError(f"point {np.asarray(X).tolist()} is behind the camera (depth {depth[0]:.3g})")
    return uv[0], float(depth[0])


def skew(v) -> np.ndarray:
    """Cross-product matrix [v]x"""
    return np.array([[0.0, -v[2], v[1]],
                     [v[2], 0.0, -v[0]],
                     [-v[1], v[0], 0.0]])


@dataclass(frozen=True)
class FundamentalMatrix:
    """Rank-2 F with unit Frobenius norm and a positive largest-magnitude entry"""
    F: np.ndarray

    def __post_init__(self):
        F = np.asarray(self.F, dtype=np.float64)
        norm = np.linalg.norm(F)
        if F.shape != (3, 3) or not np.isfinite(norm) or norm == 0.0:
            raise PipelineError("fundamental matrix must be a finite non-zero 3x3 matrix")
        F = F / norm
        if F.flat[np.argmax(np.abs(F))] < 0:
            F = -F
        if np.linalg.svd(F, compute_uv=False)[2] >= 1e-9:
            raise PipelineError("fundamental matrix is not rank 2")
        object.__setattr__(self, "F", _frozen(F))

    def epipolar_line(self, x) -> np.ndarray:
        """Line l = F·x in the auxiliary image for anchor pixel x"""
        return self.F @ np.array([x[0], x[1], 1.0])

    def residual(self, x_aux, x_anchor) -> float:
        return float(np.array([x_aux[0], x_aux[1], 1.0]) @ self.epipolar_line(x_anchor))


def relative_pose(anchor: CameraView, aux: CameraView) -> Tuple[np.ndarray, np.ndarray]:
    """(R_rel, t_rel) mapping anchor-camera coordinates to aux-camera coordinates"""
    R_rel = aux.R @ anchor.R.T
    t_rel = aux.t - R_rel @ anchor.t
    return R_rel, t_rel


def fundamental_matrix(anchor: CameraView, aux: CameraView) -> FundamentalMatrix:
    """F with x_aux^T F x_anchor = 0

    Raises:
        DegenerateBaselineError: coincident camera centers
    """
    baseline = np.linalg.norm(aux.center - anchor.center)
    if baseline <= MIN_BASELINE:
        raise DegenerateBaselineError(f"camera centers coincide (baseline {baseline:.3g} m)")
    R_rel, t_rel = relative_pose(anchor, aux)
    F = np.linalg.inv(aux.K).T @ skew(t_rel) @ R_rel @ np.linalg.inv(anchor.K)
    return FundamentalMatrix(F)


@dataclass(frozen=True)
class EpipolarSampleGrid:
    """W×H sample positions around a depth-clamped epipolar segment

    Rows are stored from offset -offset_px to +offset_px, so the on-line row
    (offset 0) sits at index ``offset_px``. Every row shares the column depths.
    """
    samples: np.ndarray
    depths: np.ndarray
    valid_mask: np.ndarray
    offset_px: int
    source_pixel: Tuple[float, float]

    @property
    def n_samples(self) -> int:
        return self.samples.shape[0]

    @property
    def n_rows(self) -> int:
        return self.samples.shape[1]

    @property
    def center_row(self) -> int:
        return self.offset_px

    def row(self, offset: int) -> np.ndarray:
        """Sample positions (W, 2) for a perpendicular offset in pixels"""
        return self.samples[:, self.offset_px + offset]

    def valid_samples(self) -> np.ndarray:
        """Valid sample coordinates (n_valid, 2) in row-major (column, row) order"""
        return self.samples[self.valid_mask]


def sample_epipolar_segment(anchor: CameraView, aux: CameraView, x, depth_min: float,
                            depth_max: float, n_samples: int, offset_px: int) -> EpipolarSampleGrid:
    """Sample the epipolar segment of anchor pixel x between depth_min and depth_max

    Depth hypotheses are uniform in inverse depth. Offset rows are displaced
    along the unit normal of the epipolar line.

    Raises:
        EmptySegmentError: the whole clamped ray is behind the aux camera, or x is
            the anchor-side epipole so the line is undefined
    """
    if not 0.0 < depth_min < depth_max:
        raise PipelineError(f"need 0 < depth_min < depth_max, got {depth_min}, {depth_max}")
    if n_samples < 2:
        raise PipelineError(f"n_samples must be >= 2, got {n_samples}")
    if offset_px < 0:
        raise PipelineError(f"offset_px must be >= 0, got {offset_px}")

    inverse = np.linspace(1.0 / depth_min, 1.0 / depth_max, n_samples)
    depths = 1.0 / inverse
    depths[0], depths[-1] = depth_min, depth_max

    x = np.asarray(x, dtype=np.float64)
    rays = anchor.unproject(np.repeat(x[None, :], n_samples, axis=0), depths)
    on_line, aux_depth = aux.project_points(rays)
    front = aux_depth > MIN_DEPTH
    if not np.any(front):
        raise EmptySegmentError(f"ray of anchor pixel {x.tolist()} is behind the auxiliary camera "
                                f"over [{depth_min}, {depth_max}] m")

    line = fundamental_matrix(anchor, aux).epipolar_line(x)
    normal_norm = np.hypot(line[0], line[1])
    if normal_norm < 1e-12:
        raise EmptySegmentError(f"anchor pixel {x.tolist()} is the epipole, epipolar line undefined")
    normal = line[:2] / normal_norm

    n_rows = 2 * offset_px + 1
    samples = np.empty((n_samples, n_rows, 2))
    valid = np.empty((n_samples, n_rows), dtype=bool)
    for row in range(n_rows):
        k = row - offset_px
        shifted = on_line if k == 0 else on_line + k * normal
        samples[:, row] = shifted
        valid[:, row] = front & aux.in_bounds(shifted)

    _LOGGER.debug(f"epipolar segment for {x.tolist()}: {int(valid.sum())}/{valid.size} valid samples")
    samples.setflags(write=False)
    depths.setflags(write=False)
    valid.setflags(write=False)
    return EpipolarSampleGrid(samples=samples, depths=depths, valid_mask=valid,
                              offset_px=int(offset_px), source_pixel=(float(x[0]), float(x[1])))


def _ray_in_view(anchor: CameraView, aux: CameraView, x) -> Tuple[np.ndarray, np.ndarray]:
    """Homogeneous aux images (c0, c1) of the anchor ray through x: depth d maps to c1 + c0/d"""
    x = np.asarray(x, dtype=np.float64)
    origin = anchor.unproject(x[None, :], [0.0])[0]
    direction = anchor.unproject(x[None, :], [1.0])[0] - origin
    c0 = aux.P @ np.append(origin, 1.0)
    c1 = aux.P @ np.append(direction, 0.0)
    return c0, c1


def inverse_depth_along_ray(anchor: CameraView, aux: CameraView, x, pixels) -> np.ndarray:
    """Anchor inverse depth ρ whose aux projection lies closest (algebraically) to each pixel

    With the ray imaged as c1 + ρ·c0, ρ solves (c1 − p·c1₃) + ρ·(c0 − p·c0₃) = 0
    in least squares over both pixel coordinates. NaN at the epipole.
    """
    c0, c1 = _ray_in_view(anchor, aux, x)
    pixels = np.atleast_2d(np.asarray(pixels, dtype=np.float64))
    a = c1[None, :2] - pixels * c1[2]
    b = c0[None, :2] - pixels * c0[2]
    den = np.sum(b * b, axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(den > 1e-24, -np.sum(a * b, axis=1) / den, np.nan)


def sample_epipolar_window(anchor: CameraView, aux: CameraView, x, center, half_width_px: float,
                           step_px: float, offset_px: int) -> EpipolarSampleGrid:
    """Evenly spaced samples on the epipolar line of x within half_width_px of center

    ``center`` is first projected onto the line. The window is not clamped to
    any depth range; columns beyond infinity along the ray get depth inf.
    Offset rows follow the same normal as sample_epipolar_segment.

    Raises:
        EmptySegmentError: x is the anchor-side epipole
    """
    if half_width_px <= 0.0 or step_px <= 0.0:
        raise PipelineError(f"need positive half width and step, got {half_width_px}, {step_px}")
    if offset_px < 0:
        raise PipelineError(f"offset_px must be >= 0, got {offset_px}")

    x = np.asarray(x, dtype=np.float64)
    line = fundamental_matrix(anchor, aux).epipolar_line(x)
    normal_norm = np.hypot(line[0], line[1])
    if normal_norm < 1e-12:
        raise EmptySegmentError(f"anchor pixel {x.tolist()} is the epipole, epipolar line undefined")
    line = line / normal_norm
    normal = line[:2]
    tangent = np.array([-normal[1], normal[0]])

    center = np.asarray(center, dtype=np.float64).reshape(2)
    foot = center - (line[:2] @ center + line[2]) * normal
    half_count = int(np.ceil(half_width_px / step_px))
    along = np.arange(-half_count, half_count + 1) * step_px
    on_line = foot[None, :] + along[:, None] * tangent[None, :]

    rho = inverse_depth_along_ray(anchor, aux, x, on_line)
    with np.errstate(divide="ignore", invalid="ignore"):
        depths = np.where(rho > 0.0, 1.0 / rho, np.inf)

    n_rows = 2 * offset_px + 1
    samples = np.empty((len(along), n_rows, 2))
    valid = np.empty((len(along), n_rows), dtype=bool)
    for row in range(n_rows):
        shifted = on_line + (row - offset_px) * normal
        samples[:, row] = shifted
        valid[:, row] = aux.in_bounds(shifted)

    samples.setflags(write=False)
    depths.setflags(write=False)
    valid.setflags(write=False)
    return EpipolarSampleGrid(samples=samples, depths=depths, valid_mask=valid,
                              offset_px=int(offset_px), source_pixel=(float(x[0]), float(x[1])))
