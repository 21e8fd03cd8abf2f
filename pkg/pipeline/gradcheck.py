"""Finite-difference verification of the matching and triangulation gradients"""

from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np
from scipy.spatial.transform import Rotation

from pipeline.errors import NearDegenerateGradientError, PointAtInfinityError
from pipeline.geometry import EpipolarSampleGrid, projection_matrix
from pipeline.matching import CorrelationMap, soft_argmax, soft_argmax_jacobian, spatial_softmax
from pipeline.triangulation import (
    DEFAULT_SIGMA_GAP_MIN,
    Observation,
    grad_triangulate,
    triangulate,
)
from utils.logger import get_logger
from utils.rng import derive_rng

_LOGGER = get_logger(__name__)

DEFAULT_TOLERANCE = 1e-4
DEFAULT_PASS_RATE = 0.99
TRIANGULATION_STEP = 1e-6
SOFTMAX_STEP = 1e-5
MAX_DRAWS = 100


@dataclass
class GradcheckReport:
    n_instances: int
    n_passed: int = 0
    worst_softmax_error: float = 0.0
    worst_triangulation_error: float = 0.0
    failures: List[Tuple[int, str]] = field(default_factory=list)

    @property
    def pass_rate(self) -> float:
        return self.n_passed / self.n_instances if self.n_instances else 1.0

    @property
    def worst_error(self) -> float:
        return max(self.worst_softmax_error, self.worst_triangulation_error)

    def passed(self, min_pass_rate: float = DEFAULT_PASS_RATE) -> bool:
        return self.pass_rate >= min_pass_rate

    def lines(self) -> List[str]:
        head = [] if self.n_instances else ["warning: 0 instances checked, vacuous pass"]
        return head + [
            f"instances: {self.n_instances}",
            f"passed: {self.n_passed}",
            f"pass_rate: {self.pass_rate!r}",
            f"worst_rel_error: {self.worst_error!r}",
            f"worst_softmax_rel_error: {self.worst_softmax_error!r}",
            f"worst_triangulation_rel_error: {self.worst_triangulation_error!r}",
        ]


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """‖a − n‖_F / max(‖n‖_F, 1e-12)"""
    return float(np.linalg.norm(analytic - numeric) / max(np.linalg.norm(numeric), 1e-12))


def random_correlation_map(rng: np.random.Generator) -> CorrelationMap:
    """Random map over a random sample grid, about a tenth of the samples invalid"""
    n_samples = int(rng.integers(10, 60))
    offset = int(rng.integers(0, 3))
    shape = (n_samples, 2 * offset + 1)
    samples = rng.uniform([0.0, 0.0], [319.0, 239.0], size=shape + (2,))
    valid = rng.random(shape) > 0.1
    valid.reshape(-1)[int(rng.integers(valid.size))] = True
    grid = EpipolarSampleGrid(samples=samples, depths=np.linspace(0.5, 10.0, n_samples), valid_mask=valid,
                              offset_px=offset, source_pixel=(0.0, 0.0))
    values = np.where(valid, rng.normal(size=shape), -np.inf)
    return CorrelationMap(values=values, grid=grid)


def check_soft_argmax(C: CorrelationMap, scale: float = 1.0, step: float = SOFTMAX_STEP) -> float:
    """Relative error of soft_argmax_jacobian against central differences"""
    analytic = soft_argmax_jacobian(C, scale)
    numeric = np.zeros_like(analytic)
    for idx in zip(*np.nonzero(C.valid_mask)):
        plus, minus = C.values.copy(), C.values.copy()
        plus[idx] += step
        minus[idx] -= step
        x_plus = soft_argmax(spatial_softmax(CorrelationMap(plus, C.grid), scale), C.grid)
        x_minus = soft_argmax(spatial_softmax(CorrelationMap(minus, C.grid), scale), C.grid)
        numeric[idx] = (x_plus - x_minus) / (2.0 * step)
    return relative_error(analytic, numeric)


def random_instance(rng: np.random.Generator, n_views: int = 3,
                    noise_px: float = 0.5) -> Tuple[List[Observation], np.ndarray]:
    """A point 3–6 m ahead seen by cameras scattered over half a meter, with noisy pixels

    Returns:
        tuple: (observations, true world point)
    """
    K = np.array([[500.0, 0.0, 160.0], [0.0, 500.0, 120.0], [0.0, 0.0, 1.0]])
    X = np.append(rng.uniform([-0.5, -0.5, 3.0], [0.5, 0.5, 6.0]), 1.0)
    obs = []
    for _ in range(n_views):
        R = Rotation.from_rotvec(rng.normal(scale=0.05, size=3)).as_matrix()
        center = rng.uniform([-0.5, -0.5, -0.2], [0.5, 0.5, 0.2])
        P = projection_matrix(K, R, -R @ center)
        x = P @ X
        pixel = x[:2] / x[2] + rng.normal(scale=noise_px, size=2)
        obs.append(Observation(pixel=pixel, projection=P, weight=float(rng.uniform(0.5, 1.0))))
    return obs, X[:3]


def random_observations(rng: np.random.Generator, n_views: int = 3, noise_px: float = 0.5) -> List[Observation]:
    return random_instance(rng, n_views, noise_px)[0]


def _with(obs: List[Observation], i: int, du: float = 0.0, dv: float = 0.0, dw: float = 0.0) -> List[Observation]:
    o = obs[i]
    moved = Observation(pixel=o.pixel + np.array([du, dv]), projection=o.projection, weight=o.weight + dw)
    return obs[:i] + [moved] + obs[i + 1:]


def check_triangulation(obs: List[Observation], step: float = TRIANGULATION_STEP,
                        sigma_gap_min: float = DEFAULT_SIGMA_GAP_MIN) -> float:
    """Relative error of grad_triangulate (pixels and weights stacked) against central differences"""
    jac = grad_triangulate(obs, sigma_gap_min)
    analytic = np.concatenate([jac.d_u, jac.d_v, jac.d_w])
    numeric = np.zeros_like(analytic)
    k = len(obs)
    for i in range(k):
        for block, kw in enumerate(("du", "dv", "dw")):
            z_plus = triangulate(_with(obs, i, **{kw: step})).z
            z_minus = triangulate(_with(obs, i, **{kw: -step})).z
            numeric[block * k + i] = (z_plus - z_minus) / (2.0 * step)
    return relative_error(analytic, numeric)


def run_gradcheck(seed: int = 0, n_instances: int = 1000, tolerance: float = DEFAULT_TOLERANCE,
                  scale: float = 1.0, sigma_gap_min: float = DEFAULT_SIGMA_GAP_MIN) -> GradcheckReport:
    """Check both gradients on n seeded instances; an instance passes when both errors are below tolerance"""
    report = GradcheckReport(n_instances=n_instances)
    if n_instances == 0:
        _LOGGER.warning("gradcheck ran on 0 instances, vacuous pass")
        return report

    for i in range(n_instances):
        rng = derive_rng(seed, f"gradcheck/{i}")
        softmax_error = check_soft_argmax(random_correlation_map(rng), scale)

        triangulation_error = None
        for _ in range(MAX_DRAWS):
            try:
                triangulation_error = check_triangulation(random_observations(rng), sigma_gap_min=sigma_gap_min)
                break
            except (NearDegenerateGradientError, PointAtInfinityError) as e:
                _LOGGER.debug(f"instance {i}: redrawing ill-conditioned triangulation ({e})")
        if triangulation_error is None:
            report.failures.append((i, "no well-conditioned triangulation instance"))
            continue

        report.worst_softmax_error = max(report.worst_softmax_error, softmax_error)
        report.worst_triangulation_error = max(report.worst_triangulation_error, triangulation_error)
        if softmax_error < tolerance and triangulation_error < tolerance:
            report.n_passed += 1
        else:
            report.failures.append((i, f"softmax {softmax_error:.3g}, triangulation {triangulation_error:.3g}"))

    for i, reason in report.failures:
        _LOGGER.debug(f"gradcheck instance {i} failed: {reason}")
    _LOGGER.info(f"gradcheck: {report.n_passed}/{n_instances} passed, worst relative error {report.worst_error:.3g}")
    return report
