"""Pipeline run configuration"""

import os
from dataclasses import dataclass, fields, replace
from typing import Any, Optional, Tuple

THREADS_ENV = 'DELTAS_THREADS'
LOG_LEVEL_ENV = 'DELTAS_LOG_LEVEL'
LOG_LEVELS = ('DEBUG', 'INFO', 'WARNING', 'ERROR', 'CRITICAL')
DEFAULT_DESCRIPTOR_STRIDE = 8


class ConfigError(ValueError):
    """Invalid run configuration"""


@dataclass(frozen=True)
class RunConfig:
    """Run configuration

    ``descriptor_stride`` None means: use the scene's own metadata, else 8.
    ``threads`` None means: DELTAS_THREADS if set, else the CPU count.
    ``refine_step_px`` 0 keeps the plain soft-argmax over the sampled segment.
    """
    n_points: int = 512
    ratio: float = 0.5
    nms_radius: int = 9
    threshold: float = 0.0005
    epipolar_samples: int = 100
    offset_px: int = 1
    depth_min: float = 0.5
    depth_max: float = 10.0
    image_size: Tuple[int, int] = (320, 240)
    seed: int = 0
    densify: bool = False
    n_views: int = 3
    descriptor_stride: Optional[int] = None
    correlation_scale: float = 20.0
    clamp_correlation_nonneg: bool = False
    refine_step_px: float = 0.25
    refine_radius_px: float = 12.0
    refine_passes: int = 2
    densify_power: float = 2.0
    densify_k: int = 4
    use_gt_depth: bool = False
    threads: Optional[int] = None
    log_level: str = "INFO"
    grad_sigma_gap_min: float = 1.01

    @classmethod
    def from_env(cls, **overrides: Any) -> 'RunConfig':
        """Load configuration from environment variables, then apply overrides"""
        values = {}
        threads = os.getenv(THREADS_ENV)
        if threads is not None and threads.strip():
            try:
                values['threads'] = int(threads)
            except ValueError as e:
                raise ConfigError(f"{THREADS_ENV} must be an integer, got {threads!r}") from e
        log_level = os.getenv(LOG_LEVEL_ENV)
        if log_level:
            values['log_level'] = log_level.upper()

        known = {f.name for f in fields(cls)}
        unknown = sorted(set(overrides) - known)
        if unknown:
            raise ConfigError(f"unknown configuration field(s): {unknown}")
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)

    @property
    def workers(self) -> int:
        return self.threads if self.threads is not None else (os.cpu_count() or 1)

    def with_overrides(self, **overrides: Any) -> 'RunConfig':
        return replace(self, **overrides).validate()

    def validate(self) -> 'RunConfig':
        """Check every field against the range its pipeline stage accepts

        Raises:
            ConfigError: first out-of-range field
        """
        checks = [
            (self.n_points >= 1, f"n_points must be >= 1, got {self.n_points}"),
            (0.0 <= self.ratio <= 1.0, f"ratio must be within [0, 1], got {self.ratio}"),
            (self.nms_radius >= 0, f"nms_radius must be >= 0, got {self.nms_radius}"),
            (0.0 <= self.threshold <= 1.0, f"threshold must be within [0, 1], got {self.threshold}"),
            (self.epipolar_samples >= 2, f"epipolar_samples must be >= 2, got {self.epipolar_samples}"),
            (self.offset_px >= 0, f"offset_px must be >= 0, got {self.offset_px}"),
            (0.0 < self.depth_min < self.depth_max,
             f"need 0 < depth_min < depth_max, got {self.depth_min}, {self.depth_max}"),
            (len(self.image_size) == 2 and min(self.image_size) > 0,
             f"image_size must be two positive integers, got {self.image_size}"),
            (self.n_views >= 2, f"n_views must be >= 2, got {self.n_views}"),
            (self.descriptor_stride is None or self.descriptor_stride >= 1,
             f"descriptor_stride must be >= 1, got {self.descriptor_stride}"),
            (self.correlation_scale > 0, f"correlation_scale must be > 0, got {self.correlation_scale}"),
            (self.refine_step_px >= 0, f"refine_step_px must be >= 0, got {self.refine_step_px}"),
            (self.refine_radius_px > 0, f"refine_radius_px must be > 0, got {self.refine_radius_px}"),
            (self.refine_passes >= 1, f"refine_passes must be >= 1, got {self.refine_passes}"),
            (self.densify_power > 0, f"densify_power must be > 0, got {self.densify_power}"),
            (self.densify_k >= 1, f"densify_k must be >= 1, got {self.densify_k}"),
            (self.threads is None or self.threads >= 1, f"threads must be >= 1, got {self.threads}"),
            (self.log_level in LOG_LEVELS, f"log_level must be one of {LOG_LEVELS}, got {self.log_level!r}"),
            (self.grad_sigma_gap_min >= 1.0, f"grad_sigma_gap_min must be >= 1, got {self.grad_sigma_gap_min}"),
        ]
        for ok, message in checks:
            if not ok:
                raise ConfigError(message)
        return self


def load_run_config(**overrides: Any) -> RunConfig:
    """Load run configuration from environment variables and explicit overrides

    Environment variables:
    - DELTAS_THREADS: worker thread cap (optional, default: CPU count)
    - DELTAS_LOG_LEVEL: Log level (optional, default: INFO)

    Overrides equal to None are ignored, so argparse namespaces can be passed
    through unchanged.

    Returns:
        RunConfig: validated run configuration

    Raises:
        ConfigError: invalid environment value or override
    """
    try:
        return RunConfig.from_env(**overrides).validate()
    except TypeError as e:
        raise ConfigError(f"invalid configuration: {e}") from e
