"""Configuration management module"""

from .run_config import ConfigError, RunConfig, load_run_config

__all__ = ['ConfigError', 'RunConfig', 'load_run_config']
