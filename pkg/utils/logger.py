"""统一的日志组件

为流水线、命令行和 MCP 服务提供同一套日志配置，避免多处重复初始化。
标准输出只留给命令结果（CSV / 报告），日志一律写 stderr 和日志文件。
"""

import logging
import sys
from pathlib import Path
from typing import Dict, Optional

# 全局logger实例缓存
_loggers: Dict[str, logging.Logger] = {}
_initialized = False
_log_file_path: Optional[Path] = None

DEFAULT_LOG_DIR = Path.home() / '.mvs-triangulate'
LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'


def setup_logging(log_level: str = "INFO", log_dir: Optional[Path] = None) -> Optional[Path]:
    """设置全局日志配置

    Args:
        log_level: 日志级别 (DEBUG, INFO, WARNING, ERROR)
        log_dir: 日志目录，默认为 ~/.mvs-triangulate

    Returns:
        Optional[Path]: 日志文件路径；目录不可写时只保留 stderr 输出，返回 None
    """
    global _initialized, _log_file_path

    if _initialized:
        return _log_file_path

    level = getattr(logging, log_level.upper(), None)
    if not isinstance(level, int):
        raise ValueError(f"Unknown log level: {log_level}")

    formatter = logging.Formatter(LOG_FORMAT)

    root_logger = logging.getLogger()
    root_logger.setLevel(level)
    root_logger.handlers.clear()

    # stderr处理器（stdout 留给命令输出，MCP 的 stdio 传输也依赖这一点）
    stderr_handler = logging.StreamHandler(sys.stderr)
    stderr_handler.setFormatter(formatter)
    root_logger.addHandler(stderr_handler)

    log_dir = Path(log_dir) if log_dir is not None else DEFAULT_LOG_DIR
    try:
        log_dir.mkdir(parents=True, exist_ok=True)
        _log_file_path = log_dir / 'run.log'
        file_handler = logging.FileHandler(_log_file_path, encoding='utf-8')
        file_handler.setFormatter(formatter)
        root_logger.addHandler(file_handler)
    except OSError as e:
        _log_file_path = None
        root_logger.warning(f"Log directory {log_dir} unavailable, logging to stderr only: {e}")

    _initialized = True

    logger = get_logger(__name__)
    logger.debug(f"Logging initialized, level={log_level.upper()}, file={_log_file_path}")

    return _log_file_path


def get_logger(name: str) -> logging.Logger:
    """获取指定名称的logger实例

    Args:
        name: logger名称，通常使用 __name__

    Returns:
        logging.Logger: logger实例
    """
    if name not in _loggers:
        _loggers[name] = logging.getLogger(name)
    return _loggers[name]


def get_log_file_path() -> Optional[Path]:
    """获取当前日志文件路径，未初始化时返回 None"""
    return _log_file_path


def is_initialized() -> bool:
    """检查日志系统是否已初始化"""
    return _initialized


def reset_logging():
    """重置日志系统（主要用于测试）"""
    global _initialized, _log_file_path

    root_logger = logging.getLogger()
    for handler in list(root_logger.handlers):
        handler.close()
    root_logger.handlers.clear()

    _initialized = False
    _loggers.clear()
    _log_file_path = None
