"""Three-step pipeline: interest points, epipolar matching, triangulation and depth

Also owns the scene directory exchange format so that dumped synthetic scenes
and real inputs go through exactly the same code path.
"""

import traceback
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from config.run_config import DEFAULT_DESCRIPTOR_STRIDE, RunConfig
from pipeline.depth_tools import (
    DepthImage,
    LossConfig,
    MetricsReport,
    densify_idw,
    depth_metrics,
    depth_pyramid,
    detector_cross_entropy,
    edge_aware_smoothness,
    impute_sparse_depth,
    per_scale_depth_losses,
    smooth_l1,
    total_loss,
)
from pipeline.errors import PipelineError, ResolutionMismatchError
from pipeline.geometry import CameraView, sample_epipolar_segment
from pipeline.interest_points import (
    InterestPointSet,
    ScoreMap,
    apply_ratio,
    cell_labels,
    detect,
    score_map_to_cell_logits,
)
from pipeline.matching import DescriptorField, MatchResult, bilinear_sample_many, match_point, refine_match
from pipeline.scene_synth import Scene
from pipeline.triangulation import TriangulatedPoint, triangulate_batch
from utils import file_formats
from utils.file_formats import FileFormatError
from utils.logger import get_logger

_LOGGER = get_logger(__name__)

CAMERAS_FILE = "cameras.json"
RUN_FILE = "run.json"
POINTS_FILE = "points.csv"
SPARSE_FILE = "sparse_depth.pfm"
DENSE_FILE = "dense_depth.pfm"
METRICS_FILE = "metrics.csv"
LOSSES_FILE = "losses.csv"

LOSS_COLUMNS = ["l_ip", "l_2d", "l_3d", "l_sm", "l_d1", "l_d2", "l_d3", "l_d4", "total"]


def _view_file(k: int, suffix: str) -> str:
    return f"view_{k}{suffix}"


def quantize_depth(depth: DepthImage) -> DepthImage:
    """Round-trip through float32, the precision of the PFM exchange format"""
    return DepthImage.from_values(depth.values.astype(np.float32).astype(np.float64))


@dataclass(frozen=True)
class SceneInputs:
    """Everything a run consumes; view 0 is the anchor

    ``gt_depths`` and ``images`` are optional per view (None where absent).
    """
    views: List[CameraView]
    fields: List[DescriptorField]
    score_map: ScoreMap
    gt_depths: List[Optional[DepthImage]] = field(default_factory=list)
    images: List[Optional[np.ndarray]] = field(default_factory=list)
    stride: int = DEFAULT_DESCRIPTOR_STRIDE

    def __post_init__(self):
        if len(self.views) < 2 or len(self.views) != len(self.fields):
            raise PipelineError(f"need >= 2 views with one descriptor field each, got "
                                f"{len(self.views)} views and {len(self.fields)} fields")
        anchor = self.views[0]
        if (self.score_map.width, self.score_map.height) != anchor.image_size:
            raise ResolutionMismatchError(f"score map {self.score_map.width}x{self.score_map.height} "
                                          f"vs anchor image {anchor.image_size}")

    @property
    def n_views(self) -> int:
        return len(self.views)

    @property
    def anchor_gt(self) -> Optional[DepthImage]:
        return self.gt_depths[0] if self.gt_depths else None

    @property
    def anchor_image(self) -> Optional[np.ndarray]:
        return self.images[0] if self.images else None

    def first_views(self, n_views: int) -> 'SceneInputs':
        """Restrict to the anchor and the first n_views − 1 auxiliary views"""
        if not 2 <= n_views <= self.n_views:
            raise PipelineError(f"requested {n_views} views, scene has {self.n_views}")
        return SceneInputs(views=self.views[:n_views], fields=self.fields[:n_views], score_map=self.score_map,
                           gt_depths=self.gt_depths[:n_views], images=self.images[:n_views], stride=self.stride)

    @classmethod
    def from_scene(cls, scene: Scene) -> 'SceneInputs':
        """In-memory equivalent of dumping the scene and loading the directory"""
        return cls(views=list(scene.views), fields=list(scene.fields), score_map=scene.score_maps[0],
                   gt_depths=[quantize_depth(g) for g in scene.gt_depths],
                   images=list(scene.images), stride=scene.config.descriptor_stride)


def dump_scene(scene: Scene, out_dir: Path) -> Path:
    """Write a scene in the exchange formats the pipeline reads back"""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    file_formats.write_cameras(out_dir / CAMERAS_FILE, [v.to_dict() for v in scene.views])
    file_formats.write_json(out_dir / RUN_FILE, {
        "descriptor_stride": scene.config.descriptor_stride,
        "seed": scene.config.seed,
        "n_points": scene.n_points,
    })
    for k in range(len(scene.views)):
        file_formats.write_descriptors(out_dir / _view_file(k, ".desc"), scene.fields[k].values)
        file_formats.write_score_map(out_dir / _view_file(k, ".smap"), scene.score_maps[k].values)
        file_formats.write_pfm(out_dir / _view_file(k, "_gt.pfm"), scene.gt_depths[k].values)
        file_formats.write_png(out_dir / _view_file(k, ".png"), scene.images[k])
    _LOGGER.info(f"scene with {len(scene.views)} views written to {out_dir}")
    return out_dir


def load_scene_dir(scene_dir: Path, stride: Optional[int] = None) -> SceneInputs:
    """Read a scene directory

    Required: cameras.json, view_K.desc for every view, view_0.smap.
    Optional: run.json (descriptor_stride), view_K_gt.pfm, view_K.png.

    Raises:
        FileFormatError: missing or malformed file
    """
    scene_dir = Path(scene_dir)
    if not scene_dir.is_dir():
        raise FileFormatError(scene_dir, None, "scene directory does not exist")

    cameras_path = scene_dir / CAMERAS_FILE
    views = []
    for i, entry in enumerate(file_formats.read_cameras(cameras_path)):
        try:
            views.append(CameraView.from_dict(entry))
        except (PipelineError, TypeError, ValueError) as e:
            raise FileFormatError(cameras_path, None, f"views[{i}]: {e}") from e

    if stride is None:
        run_path = scene_dir / RUN_FILE
        stride = DEFAULT_DESCRIPTOR_STRIDE
        if run_path.exists():
            meta = file_formats.read_json(run_path)
            value = meta.get("descriptor_stride") if isinstance(meta, dict) else None
            if not isinstance(value, int) or value < 1:
                raise FileFormatError(run_path, None, f"descriptor_stride must be a positive integer, got {value!r}")
            stride = value

    fields, gt_depths, images = [], [], []
    for k, view in enumerate(views):
        desc_path = scene_dir / _view_file(k, ".desc")
        try:
            fields.append(DescriptorField(file_formats.read_descriptors(desc_path), stride=stride,
                                          image_size=view.image_size))
        except PipelineError as e:
            raise FileFormatError(desc_path, None, str(e)) from e

        gt_path = scene_dir / _view_file(k, "_gt.pfm")
        gt = None
        if gt_path.exists():
            gt = DepthImage.from_values(file_formats.read_pfm(gt_path).astype(np.float64))
            if (gt.shape[1], gt.shape[0]) != view.image_size:
                raise FileFormatError(gt_path, None, f"size {gt.shape[1]}x{gt.shape[0]} "
                                                     f"does not match view {view.image_size}")
        gt_depths.append(gt)

        png_path = scene_dir / _view_file(k, ".png")
        images.append(file_formats.read_png(png_path) if png_path.exists() else None)

    smap_path = scene_dir / _view_file(0, ".smap")
    try:
        score_map = ScoreMap(file_formats.read_score_map(smap_path))
        inputs = SceneInputs(views=views, fields=fields, score_map=score_map, gt_depths=gt_depths,
                             images=images, stride=stride)
    except PipelineError as e:
        raise FileFormatError(smap_path, None, str(e)) from e
    _LOGGER.info(f"loaded scene {scene_dir}: {len(views)} views, stride {stride}")
    return inputs


@dataclass
class RunResult:
    """Per-point and per-image outputs of one run"""
    anchor_points: InterestPointSet
    matches: List[List[Optional[MatchResult]]]
    triangulated: List[TriangulatedPoint]
    depths: np.ndarray
    sparse: DepthImage
    dense: Optional[DepthImage] = None
    metrics: List[Tuple[str, MetricsReport]] = field(default_factory=list)
    losses: Optional[Dict[str, float]] = None
    match_failures: Dict[int, List[str]] = field(default_factory=dict)

    @property
    def n_valid(self) -> int:
        return sum(1 for t in self.triangulated if t.valid)

    def metrics_for(self, stage: str) -> Optional[MetricsReport]:
        for name, report in self.metrics:
            if name == stage:
                return report
        return None


class PipelineRunner:
    """Runs detect → fill → sample/match → triangulate → impute → densify → evaluate"""

    def __init__(self, config: RunConfig, loss_config: Optional[LossConfig] = None):
        self._config = config
        self._loss_config = loss_config or LossConfig()

    @property
    def config(self) -> RunConfig:
        return self._config

    def select_points(self, inputs: SceneInputs) -> InterestPointSet:
        cfg = self._config
        detected = detect(inputs.score_map, cfg.threshold, cfg.nms_radius, cfg.n_points)
        points = apply_ratio(detected, cfg.ratio, cfg.n_points, inputs.views[0].image_size, cfg.seed)
        _LOGGER.info(f"{len(points)} anchor points: {points.n_detected} detected, "
                     f"{len(points) - points.n_detected} random")
        return points

    def _match_sync(self, inputs: SceneInputs, pixel: np.ndarray,
                    descriptor: np.ndarray) -> Tuple[List[Optional[MatchResult]], List[str]]:
        """Match one anchor point in every auxiliary view

        Returns:
            tuple: (matches with None for failed views, failure messages)
        """
        cfg = self._config
        anchor = inputs.views[0]
        matches, failures = [], []
        for k in range(1, inputs.n_views):
            try:
                grid = sample_epipolar_segment(anchor, inputs.views[k], pixel, cfg.depth_min, cfg.depth_max,
                                               cfg.epipolar_samples, cfg.offset_px)
                match = match_point(descriptor, inputs.fields[k], grid, scale=cfg.correlation_scale,
                                    clamp_nonneg=cfg.clamp_correlation_nonneg)
                if cfg.refine_step_px > 0:
                    match = refine_match(descriptor, inputs.fields[k], match, grid, anchor, inputs.views[k],
                                         scale=cfg.correlation_scale, clamp_nonneg=cfg.clamp_correlation_nonneg,
                                         step_px=cfg.refine_step_px, radius_px=cfg.refine_radius_px,
                                         passes=cfg.refine_passes)
                matches.append(match)
            except PipelineError as e:
                matches.append(None)
                failures.append(f"view {k}: {e}")
        return matches, failures

    def match_points(self, inputs: SceneInputs,
                     points: InterestPointSet) -> Tuple[List[List[Optional[MatchResult]]], Dict[int, List[str]]]:
        """Match every anchor point, fanned out over worker threads, ordered by point id"""
        descriptors = bilinear_sample_many(inputs.fields[0], points.points)
        max_workers = self._config.workers
        n = len(points)
        results: List[Optional[Tuple[List[Optional[MatchResult]], List[str]]]] = [None] * n

        if max_workers > 1 and n > 1:
            with ThreadPoolExecutor(max_workers=max_workers) as executor:
                future_to_index = {
                    executor.submit(self._match_sync, inputs, points.points[j], descriptors[j]): j
                    for j in range(n)
                }
                for future in as_completed(future_to_index):
                    results[future_to_index[future]] = future.result()
        else:
            results = [self._match_sync(inputs, points.points[j], descriptors[j]) for j in range(n)]

        matches = [r[0] for r in results]
        failures = {j: r[1] for j, r in enumerate(results) if r[1]}
        for j, messages in failures.items():
            _LOGGER.debug(f"point {j} matching failures: {messages}")
        if failures:
            _LOGGER.warning(f"{len(failures)}/{n} points lost at least one auxiliary match")
        return matches, failures

    def run(self, inputs: SceneInputs) -> RunResult:
        """Run the full pipeline on one scene

        Raises:
            PipelineError: configuration incompatible with the inputs
        """
        cfg = self._config
        anchor = inputs.views[0]
        try:
            points = self.select_points(inputs)
            matches, failures = self.match_points(inputs, points)
            triangulated = triangulate_batch(points, matches, inputs.views, max_workers=cfg.workers)

            depths = np.full(len(points), np.nan)
            entries, ids = [], []
            for j, (pixel, tri) in enumerate(zip(points.points, triangulated)):
                if not tri.valid:
                    continue
                depth = float(anchor.project_points(tri.z)[1][0])
                if not np.isfinite(depth) or depth <= 0.0:
                    _LOGGER.debug(f"point {j} triangulated behind the anchor camera (depth {depth})")
                    continue
                depths[j] = depth
                aux_weights = tri.weights[1:]
                entries.append((pixel, depth, float(np.mean(aux_weights)) if aux_weights else 0.0))
                ids.append(j)
            sparse = impute_sparse_depth(entries, anchor.image_size)
            if sparse.source_index is not None:
                routing = np.where(sparse.source_index >= 0,
                                   np.asarray(ids + [-1], dtype=np.int64)[sparse.source_index], -1)
                sparse = DepthImage(values=sparse.values, valid_mask=sparse.valid_mask, source_index=routing)

            gt = inputs.anchor_gt
            if cfg.use_gt_depth:
                sparse = self._swap_in_gt(sparse, gt)

            result = RunResult(anchor_points=points, matches=matches, triangulated=triangulated,
                               depths=depths, sparse=sparse, match_failures=failures)
            _LOGGER.info(f"triangulated {result.n_valid}/{len(points)} points, {sparse.n_valid} imputed pixels")

            needs_dense = cfg.densify or (gt is not None and inputs.anchor_image is not None)
            dense = densify_idw(sparse, cfg.densify_power, cfg.densify_k) if needs_dense and sparse.n_valid else None
            if cfg.densify:
                result.dense = dense

            if gt is not None:
                result.metrics = self._evaluate(result, gt)
                if inputs.anchor_image is not None and dense is not None:
                    result.losses = self._losses(inputs, result, dense, gt)
            return result
        except PipelineError as e:
            _LOGGER.error(f"pipeline run failed: {e}")
            _LOGGER.debug(f"Detailed error information: {traceback.format_exc()}")
            raise

    @staticmethod
    def _swap_in_gt(sparse: DepthImage, gt: Optional[DepthImage]) -> DepthImage:
        if gt is None:
            _LOGGER.warning("use_gt_depth requested but the scene has no ground truth; keeping triangulated depth")
            return sparse
        mask = sparse.valid_mask & gt.valid_mask
        dropped = sparse.n_valid - int(mask.sum())
        if dropped:
            _LOGGER.warning(f"{dropped} imputed pixels have no ground truth and were removed")
        source = np.where(mask, sparse.source_index, -1) if sparse.source_index is not None else None
        return DepthImage(values=np.where(mask, gt.values, 0.0), valid_mask=mask, source_index=source)

    def _evaluate(self, result: RunResult, gt: DepthImage) -> List[Tuple[str, MetricsReport]]:
        reports = []
        stages = [("sparse", result.sparse)]
        if result.dense is not None:
            stages.append(("dense", result.dense))
        for stage, pred in stages:
            try:
                reports.append((stage, depth_metrics(pred, gt)))
            except PipelineError as e:
                _LOGGER.warning(f"no {stage} metrics: {e}")
        return reports

    def _losses(self, inputs: SceneInputs, result: RunResult, dense: DepthImage,
                gt: DepthImage) -> Dict[str, float]:
        """Training-objective terms of this run against the ground truth

        GT correspondences come from the anchor GT depth: a point with GT depth d
        at its anchor pixel lifts to X, and X projects to its true aux pixels.
        """
        anchor = inputs.views[0]
        cfg = self._loss_config

        gt_pixels = np.argwhere(gt.valid_mask)[:, ::-1]
        labels = cell_labels(gt_pixels, anchor.image_size)
        l_ip = detector_cross_entropy(score_map_to_cell_logits(inputs.score_map), labels)

        pred_2d, true_2d, pred_3d, true_3d = [], [], [], []
        for j, (pixel, tri) in enumerate(zip(result.anchor_points.points, result.triangulated)):
            col, row = int(pixel[0]), int(pixel[1])
            if not gt.valid_mask[row, col]:
                continue
            X = anchor.unproject(pixel[None, :], [gt.values[row, col]])[0]
            if tri.valid:
                pred_3d.append(tri.z)
                true_3d.append(X)
            for k, match in enumerate(result.matches[j], start=1):
                if match is None:
                    continue
                oracle, depth = inputs.views[k].project_points(X)
                if depth[0] > 0:
                    pred_2d.append(match.position)
                    true_2d.append(oracle[0])

        l_2d = smooth_l1(pred_2d, true_2d, cfg.huber_beta)
        l_3d = smooth_l1(pred_3d, true_3d, cfg.huber_beta)
        l_sm = edge_aware_smoothness(dense, inputs.anchor_image.astype(np.float64) / 255.0)
        depth_terms = per_scale_depth_losses(depth_pyramid(dense, cfg.n_scales), gt, cfg)
        losses = {"l_ip": l_ip, "l_2d": l_2d, "l_3d": l_3d, "l_sm": l_sm}
        losses.update({f"l_d{i + 1}": v for i, v in enumerate(depth_terms)})
        losses["total"] = total_loss(l_ip, l_2d, l_3d, l_sm, depth_terms, cfg)
        return losses


def points_table(result: RunResult, n_views: int) -> Tuple[List[str], List[List[str]]]:
    header = ["point_id", "u", "v", "source", "x", "y", "z", "depth", "valid", "sigma_gap"]
    header += [f"w_{k}" for k in range(1, n_views)]
    rows = []
    for j, tri in enumerate(result.triangulated):
        u, v = result.anchor_points.points[j]
        weights = list(tri.weights[1:]) or [0.0] * (n_views - 1)
        rows.append([str(j), repr(float(u)), repr(float(v)), result.anchor_points.sources[j].value,
                     *(repr(float(c)) for c in tri.z), repr(float(result.depths[j])),
                     "1" if np.isfinite(result.depths[j]) else "0", repr(float(tri.sigma_gap)),
                     *(repr(float(w)) for w in weights)])
    return header, rows


def metrics_table(metrics: Sequence[Tuple[str, MetricsReport]]) -> Tuple[List[str], List[List[str]]]:
    header = ["stage"] + MetricsReport.header()
    return header, [[stage] + report.row() for stage, report in metrics]


def write_outputs(result: RunResult, out_dir: Path, n_views: int) -> List[Path]:
    """Write points.csv, sparse_depth.pfm and, when available, dense, metrics and losses"""
    out_dir = Path(out_dir)
    written = [
        file_formats.write_csv(out_dir / POINTS_FILE, *points_table(result, n_views)),
        file_formats.write_pfm(out_dir / SPARSE_FILE, result.sparse.values),
    ]
    if result.dense is not None:
        written.append(file_formats.write_pfm(out_dir / DENSE_FILE, result.dense.values))
    if result.metrics:
        written.append(file_formats.write_csv(out_dir / METRICS_FILE, *metrics_table(result.metrics)))
    if result.losses is not None:
        written.append(file_formats.write_csv(out_dir / LOSSES_FILE, LOSS_COLUMNS,
                                              [[repr(float(result.losses[c])) for c in LOSS_COLUMNS]]))
    _LOGGER.info(f"wrote {len(written)} output files to {out_dir}")
    return written
