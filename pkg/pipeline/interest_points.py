"""Anchor interest points: thresholded greedy NMS plus seeded random top-up"""

from dataclasses import dataclass
from enum import Enum
from typing import Tuple

import numpy as np

from pipeline.errors import InfeasibleError, PipelineError
from utils.logger import get_logger
from utils.rng import derive_rng

_LOGGER = get_logger(__name__)

RANDOM_FILL_STREAM = "interest_points/fill_random"


class PointSource(str, Enum):
    DETECTED = "detected"
    RANDOM = "random"


@dataclass(frozen=True)
class ScoreMap:
    """Per-pixel detector scores in [0, 1], shape (height, width)"""
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, copy=True)
        if values.ndim != 2:
            raise PipelineError(f"score map must be 2-D, got shape {values.shape}")
        if not np.all(np.isfinite(values)) or values.min(initial=0.0) < 0.0 or values.max(initial=0.0) > 1.0:
            raise PipelineError("score map entries must be finite and within [0, 1]")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class InterestPointSet:
    """Anchor points as (u, v) pixel coordinates with scores and source tags"""
    points: np.ndarray
    scores: np.ndarray
    sources: Tuple[PointSource, ...]

    def __post_init__(self):
        points = np.asarray(self.points, dtype=np.float64).reshape(-1, 2)
        scores = np.asarray(self.scores, dtype=np.float64).reshape(-1)
        if len(points) != len(scores) or len(points) != len(self.sources):
            raise PipelineError("points, scores and sources must have equal lengths")
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "scores", scores)
        object.__setattr__(self, "sources", tuple(PointSource(s) for s in self.sources))

    @classmethod
    def empty(cls) -> 'InterestPointSet':
        return cls(points=np.zeros((0, 2)), scores=np.zeros(0), sources=())

    def __len__(self) -> int:
        return len(self.points)

    @property
    def n_detected(self) -> int:
        return sum(1 for s in self.sources if s is PointSource.DETECTED)

    def take(self, count: int) -> 'InterestPointSet':
        return InterestPointSet(self.points[:count], self.scores[:count], self.sources[:count])


def detect(score_map: ScoreMap, threshold: float, nms_radius: int, max_points: int) -> InterestPointSet:
    """Greedy Chebyshev NMS in descending score order

    Candidates are visited by (-score, row, column); a candidate is kept if its
    score reaches the threshold and no kept point lies within Chebyshev
    distance ``nms_radius``.
    """
    if nms_radius < 0:
        raise PipelineError(f"nms_radius must be >= 0, got {nms_radius}")
    values = score_map.values
    rows, cols = np.nonzero(values >= threshold)
    if len(rows) == 0 or max_points <= 0:
        return InterestPointSet.empty()

    scores = values[rows, cols].astype(np.float64)
    order = np.lexsort((cols, rows, -scores))

    suppressed = np.zeros(values.shape, dtype=bool)
    kept = []
    r = int(nms_radius)
    for idx in order:
        row, col = rows[idx], cols[idx]
        if suppressed[row, col]:
            continue
        kept.append(idx)
        suppressed[max(row - r, 0):row + r + 1, max(col - r, 0):col + r + 1] = True
        if len(kept) >= max_points:
            break

    kept = np.asarray(kept, dtype=np.int64)
    points = np.stack([cols[kept], rows[kept]], axis=1).astype(np.float64)
    _LOGGER.debug(f"detect: {len(rows)} candidates above {threshold}, kept {len(kept)} (nms {nms_radius})")
    return InterestPointSet(points=points, scores=scores[kept],
                            sources=(PointSource.DETECTED,) * len(kept))


def fill_random(points: InterestPointSet, total: int, image_size: Tuple[int, int], seed: int) -> InterestPointSet:
    """Append uniformly random integer pixels until the set holds ``total`` points

    Raises:
        InfeasibleError: total exceeds the pixel count
    """
    width, height = image_size
    if total < len(points):
        raise PipelineError(f"total {total} is smaller than the current set ({len(points)})")
    if total > width * height:
        raise InfeasibleError(f"cannot place {total} distinct points in a {width}x{height} image")
    missing = total - len(points)
    if missing == 0:
        return points

    rng = derive_rng(seed, RANDOM_FILL_STREAM)
    occupied = {(int(np.floor(u + 0.5)), int(np.floor(v + 0.5))) for u, v in points.points}
    fresh = []
    while len(fresh) < missing:
        batch = rng.integers(0, [width, height], size=(2 * (missing - len(fresh)) + 8, 2))
        for u, v in batch:
            key = (int(u), int(v))
            if key in occupied:
                continue
            occupied.add(key)
            fresh.append(key)
            if len(fresh) == missing:
                break

    fresh = np.asarray(fresh, dtype=np.float64)
    _LOGGER.debug(f"fill_random: appended {missing} random points")
    return InterestPointSet(points=np.vstack([points.points, fresh]),
                            scores=np.concatenate([points.scores, np.ones(missing)]),
                            sources=points.sources + (PointSource.RANDOM,) * missing)


def apply_ratio(detected: InterestPointSet, ratio: float, total: int, image_size: Tuple[int, int],
                seed: int) -> InterestPointSet:
    """Keep the top ⌊ratio·total⌋ detections and fill the rest randomly"""
    if not 0.0 <= ratio <= 1.0:
        raise PipelineError(f"ratio must be within [0, 1], got {ratio}")
    n_keep = int(np.floor(ratio * total))
    order = np.lexsort((detected.points[:, 0], detected.points[:, 1], -detected.scores))
    top = order[:n_keep]
    kept = InterestPointSet(detected.points[top], detected.scores[top],
                            tuple(detected.sources[i] for i in top))
    if len(kept) < n_keep:
        _LOGGER.info(f"only {len(kept)} detections for a budget of {n_keep}, topping up randomly")
    return fill_random(kept, total, image_size, seed)


def score_map_to_cell_logits(score_map: ScoreMap, cell: int = 8, eps: float = 1e-6) -> np.ndarray:
    """Cell-tensor logits (h/cell, w/cell, cell²+1) from a full-resolution score map

    Inverse of the depth-to-space detector head: each cell's in-cell scores
    become the first cell² channels and the leftover mass is the dustbin channel.
    """
    h, w = score_map.height // cell, score_map.width // cell
    values = score_map.values[:h * cell, :w * cell].astype(np.float64)
    cells = values.reshape(h, cell, w, cell).transpose(0, 2, 1, 3).reshape(h, w, cell * cell)
    dustbin = np.clip(1.0 - cells.sum(axis=-1, keepdims=True), 0.0, None)
    return np.log(np.concatenate([cells, dustbin], axis=-1) + eps)


def cell_labels(pixels: np.ndarray, image_size: Tuple[int, int], cell: int = 8) -> np.ndarray:
    """Cell-class labels for ground-truth interest pixels (u, v)

    Each cell gets the in-cell index (row-major) of the first pixel that falls
    inside it, or the dustbin index cell² when it has none.
    """
    width, height = image_size
    h, w = height // cell, width // cell
    labels = np.full((h, w), cell * cell, dtype=np.int64)
    for u, v in np.asarray(pixels, dtype=np.int64).reshape(-1, 2):
        cy, cx = v // cell, u // cell
        if 0 <= cy < h and 0 <= cx < w and labels[cy, cx] == cell * cell:
            labels[cy, cx] = (v % cell) * cell + (u % cell)
    return labels
