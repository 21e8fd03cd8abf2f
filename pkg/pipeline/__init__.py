"""Multi-view interest point matching, triangulation and sparse depth"""

from .depth_tools import DepthImage, LossConfig, MetricsReport, densify_idw, depth_metrics, impute_sparse_depth
from .errors import PipelineError
from .geometry import CameraView, FundamentalMatrix, fundamental_matrix, project, sample_epipolar_segment
from .interest_points import InterestPointSet, ScoreMap, apply_ratio, detect, fill_random
from .matching import DescriptorField, MatchResult, bilinear_sample, correlate, match_point, spatial_softmax
from .runner import PipelineRunner, RunResult, SceneInputs, dump_scene, load_scene_dir
from .scene_synth import Scene, SceneConfig, generate_scene, oracle_match, oracle_triangulate
from .triangulation import Observation, TriangulatedPoint, grad_triangulate, triangulate, triangulate_batch

__all__ = [
    'CameraView', 'FundamentalMatrix', 'fundamental_matrix', 'project', 'sample_epipolar_segment',
    'InterestPointSet', 'ScoreMap', 'apply_ratio', 'detect', 'fill_random',
    'DescriptorField', 'MatchResult', 'bilinear_sample', 'correlate', 'match_point', 'spatial_softmax',
    'Observation', 'TriangulatedPoint', 'grad_triangulate', 'triangulate', 'triangulate_batch',
    'DepthImage', 'LossConfig', 'MetricsReport', 'densify_idw', 'depth_metrics', 'impute_sparse_depth',
    'Scene', 'SceneConfig', 'generate_scene', 'oracle_match', 'oracle_triangulate',
    'PipelineRunner', 'RunResult', 'SceneInputs', 'dump_scene', 'load_scene_dir',
    'PipelineError',
]
