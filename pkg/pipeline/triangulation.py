"""Confidence-weighted algebraic (DLT) triangulation with analytic Jacobians"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from pipeline.errors import (
    NearDegenerateGradientError,
    PipelineError,
    PointAtInfinityError,
    UnderdeterminedError,
)
from pipeline.geometry import CameraView
from pipeline.interest_points import InterestPointSet
from pipeline.matching import MatchResult
from utils.logger import get_logger

_LOGGER = get_logger(__name__)

HOMOGENEOUS_EPS = 1e-12
DEFAULT_SIGMA_GAP_MIN = 1.01


@dataclass(frozen=True)
class Observation:
    """One view's pixel, its 3×4 projection matrix and a non-negative weight"""
    pixel: np.ndarray
    projection: np.ndarray
    weight: float = 1.0

    def __post_init__(self):
        pixel = np.asarray(self.pixel, dtype=np.float64).reshape(2)
        projection = np.asarray(self.projection, dtype=np.float64).reshape(3, 4)
        weight = float(self.weight)
        if not np.isfinite(weight) or weight < 0.0:
            raise PipelineError(f"observation weight must be finite and >= 0, got {weight}")
        if not np.any(projection[2]):
            raise PipelineError("projection matrix has a zero third row")
        object.__setattr__(self, "pixel", pixel)
        object.__setattr__(self, "projection", projection)
        object.__setattr__(self, "weight", weight)


@dataclass(frozen=True)
class TriangulatedPoint:
    """Homogeneous solution z̄ (unit norm), Euclidean z and conditioning diagnostic

    Batch results that failed carry ``valid=False``, a ``failure`` message and
    NaN coordinates.
    """
    z_bar: np.ndarray
    z: np.ndarray
    sigma_gap: float
    valid: bool = True
    failure: Optional[str] = None
    weights: Tuple[float, ...] = field(default=())

    @classmethod
    def invalid(cls, reason: str, weights: Tuple[float, ...] = ()) -> 'TriangulatedPoint':
        return cls(z_bar=np.full(4, np.nan), z=np.full(3, np.nan), sigma_gap=float("nan"),
                   valid=False, failure=reason, weights=weights)


@dataclass(frozen=True)
class TriangulationJacobians:
    """∂z/∂u_k, ∂z/∂v_k, ∂z/∂w_k stacked per observation, each (k, 3)"""
    d_u: np.ndarray
    d_v: np.ndarray
    d_w: np.ndarray


def _unweighted_rows(obs: Observation) -> np.ndarray:
    P = obs.projection
    u, v = obs.pixel
    return np.stack([u * P[2] - P[0], v * P[2] - P[1]])


def build_dlt_matrix(obs: Sequence[Observation]) -> np.ndarray:
    """Weighted DLT system A_w (2k×4): rows w·(u·p3 − p1) and w·(v·p3 − p2)

    Raises:
        UnderdeterminedError: fewer than two positively weighted observations
    """
    positive = sum(1 for o in obs if o.weight > 0.0)
    if positive < 2:
        raise UnderdeterminedError(f"need >= 2 positively weighted observations, got {positive}")
    return np.vstack([o.weight * _unweighted_rows(o) for o in obs])


def _solve(A: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    _, S, Vt = np.linalg.svd(A, full_matrices=False)
    z_bar = Vt[-1].copy()
    if abs(z_bar[3]) > HOMOGENEOUS_EPS and z_bar[3] < 0.0:
        z_bar = -z_bar
    return z_bar, S, Vt


def _sigma_gap(S: np.ndarray) -> float:
    return float(S[2] / S[3]) if S[3] > 0.0 else float("inf")


def triangulate(obs: Sequence[Observation]) -> TriangulatedPoint:
    """Smallest right singular vector of A_w, dehomogenized

    Raises:
        UnderdeterminedError: see build_dlt_matrix
        PointAtInfinityError: |z̄[3]| <= 1e-12
    """
    A = build_dlt_matrix(obs)
    z_bar, S, _ = _solve(A)
    if abs(z_bar[3]) <= HOMOGENEOUS_EPS:
        raise PointAtInfinityError(f"homogeneous coordinate {z_bar[3]:.3g} too small, point at infinity")
    return TriangulatedPoint(z_bar=z_bar, z=z_bar[:3] / z_bar[3], sigma_gap=_sigma_gap(S),
                             weights=tuple(o.weight for o in obs))


def grad_triangulate(obs: Sequence[Observation],
                     sigma_gap_min: float = DEFAULT_SIGMA_GAP_MIN) -> TriangulationJacobians:
    """Jacobians of z with respect to every observation's pixel and weight

    Uses the first-order perturbation of the smallest eigenvector of M = A_wᵀA_w:
    dz̄ = −Σ_{i<4} v_i·(v_iᵀ·dM·z̄)/(λ_i − λ_4), with dM·z̄ = a'·(A_w z̄)_r + A_r·(a'·z̄)
    for a parameter that moves row r by a'.

    Raises:
        NearDegenerateGradientError: sigma_gap <= sigma_gap_min
    """
    A = build_dlt_matrix(obs)
    z_bar, S, Vt = _solve(A)
    gap = _sigma_gap(S)
    if not gap > sigma_gap_min:
        raise NearDegenerateGradientError(f"sigma_gap {gap:.4f} <= {sigma_gap_min}, gradient ill-conditioned")
    if abs(z_bar[3]) <= HOMOGENEOUS_EPS:
        raise PointAtInfinityError("point at infinity has no Euclidean gradient")

    lam = S ** 2
    basis = Vt[:3]
    denom = lam[:3] - lam[3]
    residual = A @ z_bar
    z = z_bar[:3] / z_bar[3]

    def dz_from(row: int, a_prime: np.ndarray) -> np.ndarray:
        dMz = a_prime * residual[row] + A[row] * (a_prime @ z_bar)
        dz_bar = -basis.T @ ((basis @ dMz) / denom)
        return (dz_bar[:3] - z * dz_bar[3]) / z_bar[3]

    k = len(obs)
    d_u, d_v, d_w = np.zeros((k, 3)), np.zeros((k, 3)), np.zeros((k, 3))
    for i, o in enumerate(obs):
        p3 = o.projection[2]
        raw = _unweighted_rows(o)
        d_u[i] = dz_from(2 * i, o.weight * p3)
        d_v[i] = dz_from(2 * i + 1, o.weight * p3)
        d_w[i] = dz_from(2 * i, raw[0]) + dz_from(2 * i + 1, raw[1])
    return TriangulationJacobians(d_u=d_u, d_v=d_v, d_w=d_w)


def observations_for_point(anchor_pixel, point_matches: Sequence[Optional[MatchResult]],
                           views: Sequence[CameraView]) -> List[Observation]:
    """Anchor observation (w=1) followed by one observation per auxiliary match

    Missing matches and negative confidences contribute weight 0.
    """
    obs = [Observation(pixel=anchor_pixel, projection=views[0].P, weight=1.0)]
    for view, match in zip(views[1:], point_matches):
        if match is None or not np.all(np.isfinite(match.position)):
            obs.append(Observation(pixel=np.zeros(2), projection=view.P, weight=0.0))
        else:
            obs.append(Observation(pixel=match.position, projection=view.P,
                                   weight=max(match.confidence, 0.0)))
    return obs


def _triangulate_one(anchor_pixel, point_matches, views) -> TriangulatedPoint:
    obs = observations_for_point(anchor_pixel, point_matches, views)
    weights = tuple(o.weight for o in obs)
    try:
        return triangulate(obs)
    except PipelineError as e:
        return TriangulatedPoint.invalid(str(e), weights)


def triangulate_batch(anchor_points: InterestPointSet,
                      matches: Sequence[Sequence[Optional[MatchResult]]],
                      views: Sequence[CameraView],
                      max_workers: int = 1) -> List[TriangulatedPoint]:
    """Triangulate every anchor point independently, results ordered by point id

    ``matches[j][k]`` is point j's match in auxiliary view k+1. Failed points are
    returned invalid instead of aborting the batch.
    """
    if len(matches) != len(anchor_points):
        raise PipelineError(f"{len(matches)} match lists for {len(anchor_points)} points")

    n = len(anchor_points)
    if max_workers > 1 and n > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as executor:
            results = list(executor.map(_triangulate_one, anchor_points.points, matches, [views] * n))
    else:
        results = [_triangulate_one(p, m, views) for p, m in zip(anchor_points.points, matches)]

    failed = [j for j, r in enumerate(results) if not r.valid]
    for j in failed:
        _LOGGER.debug(f"point {j} not triangulated: {results[j].failure}")
    if failed:
        _LOGGER.warning(f"{len(failed)}/{n} points failed triangulation")
    return results
