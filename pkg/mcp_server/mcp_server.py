#!/usr/bin/env python3
"""Triangulation MCP server implementation based on FastMCP

Exposes the depth pipeline as JSON-returning tools over stdio.
"""

import asyncio
import json
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

# Add project root directory to Python path
project_root = Path(__file__).parent.parent
sys.path.insert(0, str(project_root))

import numpy as np
from mcp.server.fastmcp import FastMCP

from config.run_config import ConfigError, RunConfig, load_run_config
from pipeline.depth_tools import DepthImage, depth_metrics
from pipeline.errors import PipelineError
from pipeline.gradcheck import DEFAULT_PASS_RATE, run_gradcheck
from pipeline.runner import PipelineRunner, SceneInputs, write_outputs
from pipeline.scene_synth import SceneConfig, generate_scene
from pipeline.triangulation import Observation, triangulate
from utils import file_formats
from utils.file_formats import FileFormatError
from utils.logger import get_logger, setup_logging

SERVER_NAME = "mvs-tri-mcp-server"
SERVER_VERSION = "0.1.0"

logger = get_logger(__name__)

# Create FastMCP server instance
mcp = FastMCP(SERVER_NAME)

# Runs completed by this server process
_run_history: List[Dict[str, Any]] = []

INPUT_ERRORS = (ConfigError, FileFormatError, PipelineError)


def _dumps(payload: Dict[str, Any]) -> str:
    return json.dumps(payload, ensure_ascii=False, indent=2)


def _failure(error: Exception) -> str:
    return _dumps({"success": False, "error": str(error), "error_type": type(error).__name__})


def metrics_to_dict(report) -> Dict[str, Any]:
    """Convert a MetricsReport to a JSON-serializable dictionary"""
    return {name: getattr(report, name) for name in report.header()}


@mcp.tool()
async def run_synthetic(seed: int = 0, views: int = 3, points: int = 512, samples: int = 100,
                        densify: bool = False, pixel_noise: float = 0.0, out_dir: str = "") -> str:
    """Generate a synthetic scene and run the full pipeline on it

    Args:
        seed: Root seed for scene generation and random point fill
        views: Number of views including the anchor
        points: Anchor interest points to triangulate
        samples: Epipolar samples per line
        densify: Also evaluate an IDW-densified depth map
        pixel_noise: Std-dev of planted match noise in pixels
        out_dir: Optional directory for points.csv, PFMs, metrics.csv and losses.csv

    Returns:
        JSON string of run summary and metrics
    """
    try:
        config = load_run_config(seed=seed, n_views=views, n_points=points, epipolar_samples=samples,
                                 densify=densify)
        scene = generate_scene(SceneConfig(n_views=config.n_views, seed=config.seed, pixel_noise=pixel_noise))
        inputs = SceneInputs.from_scene(scene)
        result = await asyncio.to_thread(PipelineRunner(config).run, inputs)
        written = [str(p) for p in write_outputs(result, Path(out_dir), inputs.n_views)] if out_dir else []
        summary = {
            "success": True,
            "seed": seed,
            "views": inputs.n_views,
            "points": len(result.triangulated),
            "triangulated": result.n_valid,
            "imputed_pixels": result.sparse.n_valid,
            "metrics": {stage: metrics_to_dict(report) for stage, report in result.metrics},
            "losses": result.losses,
            "files": written,
        }
        _run_history.append({k: summary[k] for k in ("seed", "views", "points", "triangulated")})
        return _dumps(summary)
    except INPUT_ERRORS as e:
        logger.error(f"Synthetic run failed: {e}")
        return _failure(e)


@mcp.tool()
async def evaluate_depth(pred_path: str, gt_path: str) -> str:
    """Depth metrics of a predicted PFM against a ground-truth PFM

    Args:
        pred_path: Predicted depth map (PFM)
        gt_path: Ground-truth depth map (PFM)

    Returns:
        JSON string of metrics
    """
    try:
        pred = DepthImage.from_values(file_formats.read_pfm(pred_path).astype(np.float64))
        gt = DepthImage.from_values(file_formats.read_pfm(gt_path).astype(np.float64))
        return _dumps({"success": True, "metrics": metrics_to_dict(depth_metrics(pred, gt))})
    except INPUT_ERRORS as e:
        logger.error(f"Depth evaluation failed: {e}")
        return _failure(e)


@mcp.tool()
async def gradcheck(seed: int = 0, instances: int = 100) -> str:
    """Finite-difference check of the soft-argmax and triangulation gradients

    Args:
        seed: Root seed of the random instances
        instances: Number of instances to check

    Returns:
        JSON string of pass rate and worst relative errors
    """
    if instances < 0:
        return _failure(ConfigError(f"instances must be >= 0, got {instances}"))
    report = await asyncio.to_thread(run_gradcheck, seed, instances)
    return _dumps({
        "success": report.passed(DEFAULT_PASS_RATE),
        "instances": report.n_instances,
        "passed": report.n_passed,
        "pass_rate": report.pass_rate,
        "worst_rel_error": report.worst_error,
        "worst_softmax_rel_error": report.worst_softmax_error,
        "worst_triangulation_rel_error": report.worst_triangulation_error,
    })


@mcp.tool()
async def triangulate_observations(observations: List[Dict[str, Any]]) -> str:
    """Weighted DLT triangulation of one point

    Args:
        observations: List of {"pixel": [u, v], "projection": 3x4 nested list, "weight": w (optional, default 1)}

    Returns:
        JSON string with the Euclidean point, homogeneous solution and sigma_gap
    """
    try:
        obs = []
        for i, item in enumerate(observations):
            if "pixel" not in item or "projection" not in item:
                raise PipelineError(f"observation {i} needs 'pixel' and 'projection'")
            obs.append(Observation(pixel=item["pixel"], projection=item["projection"],
                                   weight=item.get("weight", 1.0)))
        point = triangulate(obs)
        return _dumps({
            "success": True,
            "point": point.z.tolist(),
            "homogeneous": point.z_bar.tolist(),
            "sigma_gap": point.sigma_gap,
        })
    except (ValueError, TypeError) as e:
        logger.error(f"Triangulation failed: {e}")
        return _failure(e)


@mcp.tool()
async def server_status() -> str:
    """Get server status information

    Returns:
        JSON string of server status
    """
    config = RunConfig()
    return _dumps({
        "server": {
            "name": SERVER_NAME,
            "version": SERVER_VERSION,
            "capabilities": ["tools"],
        },
        "defaults": {
            "points": config.n_points,
            "ratio": config.ratio,
            "nms_radius": config.nms_radius,
            "threshold": config.threshold,
            "epipolar_samples": config.epipolar_samples,
            "depth_range": [config.depth_min, config.depth_max],
            "refine_step_px": config.refine_step_px,
        },
        "runs": len(_run_history),
        "recent_runs": _run_history[-5:],
    })


@mcp.tool()
async def ping(message: str = "hello") -> str:
    """Test server connectivity

    Args:
        message: Message to send

    Returns:
        JSON string of response message
    """
    return _dumps({
        "success": True,
        "message": f"pong: {message}",
        "server": SERVER_NAME,
    })


def main(log_level: Optional[str] = None):
    """Main entry point for the MCP server"""
    try:
        level = log_level or RunConfig.from_env().log_level
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        sys.exit(2)
    log_file_path = setup_logging(level)
    logger.info(f"Logging to file: {log_file_path}")
    logger.info("Starting MCP server...")
    mcp.run()


if __name__ == "__main__":
    main()
