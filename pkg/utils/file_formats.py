"""交换文件格式读写

相机 JSON、描述子场 (DESC)、得分图 (SMAP)、深度图 (PFM)、灰度图 (PNG) 与 CSV 结果。
所有写操作先写临时文件再原子替换；所有读错误都以 FileFormatError 报告文件路径和字节偏移。
"""

import csv
import io
import json
import struct
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from PIL import Image

from utils.logger import get_logger

_LOGGER = get_logger(__name__)

PathLike = Union[str, Path]

DESC_MAGIC = b"DESC"
SMAP_MAGIC = b"SMAP"
DESC_HEADER = struct.Struct("<4sIII")
SMAP_HEADER = struct.Struct("<4sII")
UNIT_NORM_TOL = 1e-6


class FileFormatError(ValueError):
    """文件缺失或格式错误

    Attributes:
        path: 出错的文件
        offset: 出错位置的字节偏移，无法定位时为 None
    """

    def __init__(self, path: PathLike, offset: Optional[int], message: str):
        self.path = Path(path)
        self.offset = offset
        self.message = message
        where = f" (byte offset {offset})" if offset is not None else ""
        super().__init__(f"{self.path}{where}: {message}")


def _atomic_write(path: PathLike, data: bytes) -> Path:
    """写入临时文件后原子性替换目标文件"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    temp_file = path.with_name(path.name + '.tmp')
    with open(temp_file, 'wb') as f:
        f.write(data)
    temp_file.replace(path)
    _LOGGER.debug(f"已写入: {path} ({len(data)} bytes)")
    return path


def _read(path: PathLike) -> bytes:
    path = Path(path)
    try:
        with open(path, 'rb') as f:
            return f.read()
    except FileNotFoundError as e:
        raise FileFormatError(path, None, "no such file") from e
    except IsADirectoryError as e:
        raise FileFormatError(path, None, "is a directory, expected a file") from e


# ---------------------------------------------------------------- JSON

def write_json(path: PathLike, data: Any) -> Path:
    text = json.dumps(data, ensure_ascii=False, indent=2) + "\n"
    return _atomic_write(path, text.encode('utf-8'))


def read_json(path: PathLike) -> Any:
    """读取 JSON，语法错误时报告出错的字节偏移"""
    raw = _read(path)
    try:
        text = raw.decode('utf-8')
    except UnicodeDecodeError as e:
        raise FileFormatError(path, e.start, "not valid UTF-8") from e
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        offset = len(text[:e.pos].encode('utf-8'))
        raise FileFormatError(path, offset, f"invalid JSON: {e.msg}") from e


CAMERA_FIELDS = ("K", "R", "t", "width", "height")


def write_cameras(path: PathLike, cameras: Sequence[Dict[str, Any]]) -> Path:
    """保存相机轨迹: {"views": [{K, R, t, width, height}, ...]}，第 0 个为锚点视图"""
    return write_json(path, {"views": list(cameras)})


def read_cameras(path: PathLike) -> List[Dict[str, Any]]:
    """读取相机轨迹并严格检查字段

    Returns:
        List[Dict[str, Any]]: 每个视图的原始字段，由调用方构造相机对象
    """
    data = read_json(path)
    if not isinstance(data, dict) or set(data) != {"views"} or not isinstance(data["views"], list):
        raise FileFormatError(path, None, "expected an object with a single 'views' list")
    views = data["views"]
    if len(views) < 2:
        raise FileFormatError(path, None, f"need at least 2 views, found {len(views)}")
    for i, view in enumerate(views):
        if not isinstance(view, dict):
            raise FileFormatError(path, None, f"views[{i}] is not an object")
        missing = [k for k in CAMERA_FIELDS if k not in view]
        unknown = sorted(set(view) - set(CAMERA_FIELDS))
        if missing:
            raise FileFormatError(path, None, f"views[{i}] is missing field(s) {missing}")
        if unknown:
            raise FileFormatError(path, None, f"views[{i}] has unknown field(s) {unknown}")
    return views


# ---------------------------------------------------------------- DESC / SMAP

def write_descriptors(path: PathLike, values: np.ndarray) -> Path:
    """DESC: 16 字节头 (magic, u32 h, u32 w, u32 N) 后接 h·w·N 个小端 float32"""
    values = np.ascontiguousarray(values, dtype='<f4')
    h, w, n = values.shape
    return _atomic_write(path, DESC_HEADER.pack(DESC_MAGIC, h, w, n) + values.tobytes())


def read_descriptors(path: PathLike) -> np.ndarray:
    """读取 DESC 文件并检查每个描述子为单位向量

    Returns:
        np.ndarray: (h, w, N) float32
    """
    raw = _read(path)
    if len(raw) < DESC_HEADER.size:
        raise FileFormatError(path, len(raw), f"truncated header, need {DESC_HEADER.size} bytes")
    magic, h, w, n = DESC_HEADER.unpack_from(raw)
    if magic != DESC_MAGIC:
        raise FileFormatError(path, 0, f"bad magic {magic!r}, expected {DESC_MAGIC!r}")
    if n < 2 or h == 0 or w == 0:
        raise FileFormatError(path, 4, f"invalid dimensions h={h} w={w} N={n}")
    expected = DESC_HEADER.size + h * w * n * 4
    if len(raw) != expected:
        raise FileFormatError(path, min(len(raw), expected),
                              f"payload size mismatch: file has {len(raw)} bytes, header implies {expected}")
    values = np.frombuffer(raw, dtype='<f4', offset=DESC_HEADER.size).reshape(h, w, n)
    norms = np.linalg.norm(values.astype(np.float64), axis=-1).reshape(-1)
    bad = np.flatnonzero(~(np.abs(norms - 1.0) <= UNIT_NORM_TOL))
    if len(bad):
        raise FileFormatError(path, DESC_HEADER.size + int(bad[0]) * n * 4,
                              f"descriptor {int(bad[0])} has norm {norms[bad[0]]:.6g}, expected 1")
    return values.astype(np.float32)


def write_score_map(path: PathLike, values: np.ndarray) -> Path:
    """SMAP: 12 字节头 (magic, u32 height, u32 width) 后接小端 float32"""
    values = np.ascontiguousarray(values, dtype='<f4')
    height, width = values.shape
    return _atomic_write(path, SMAP_HEADER.pack(SMAP_MAGIC, height, width) + values.tobytes())


def read_score_map(path: PathLike) -> np.ndarray:
    raw = _read(path)
    if len(raw) < SMAP_HEADER.size:
        raise FileFormatError(path, len(raw), f"truncated header, need {SMAP_HEADER.size} bytes")
    magic, height, width = SMAP_HEADER.unpack_from(raw)
    if magic != SMAP_MAGIC:
        raise FileFormatError(path, 0, f"bad magic {magic!r}, expected {SMAP_MAGIC!r}")
    expected = SMAP_HEADER.size + height * width * 4
    if len(raw) != expected:
        raise FileFormatError(path, min(len(raw), expected),
                              f"payload size mismatch: file has {len(raw)} bytes, header implies {expected}")
    values = np.frombuffer(raw, dtype='<f4', offset=SMAP_HEADER.size).reshape(height, width)
    flat = values.reshape(-1)
    bad = np.flatnonzero(~((flat >= 0.0) & (flat <= 1.0)))
    if len(bad):
        raise FileFormatError(path, SMAP_HEADER.size + int(bad[0]) * 4,
                              f"score {flat[bad[0]]!r} outside [0, 1]")
    return values.astype(np.float32)


# ---------------------------------------------------------------- PFM

def write_pfm(path: PathLike, values: np.ndarray) -> Path:
    """灰度 PFM: "Pf"、"宽 高"、"-1.0" (小端)，像素行自下而上存储"""
    values = np.asarray(values, dtype='<f4')
    height, width = values.shape
    header = f"Pf\n{width} {height}\n-1.0\n".encode('ascii')
    return _atomic_write(path, header + np.ascontiguousarray(values[::-1]).tobytes())


def _pfm_line(raw: bytes, start: int, path: PathLike) -> Tuple[str, int]:
    end = raw.find(b"\n", start)
    if end < 0:
        raise FileFormatError(path, start, "truncated PFM header")
    try:
        return raw[start:end].decode('ascii').strip(), end + 1
    except UnicodeDecodeError as e:
        raise FileFormatError(path, start, "non-ASCII PFM header") from e


def read_pfm(path: PathLike) -> np.ndarray:
    """读取灰度 PFM，返回自上而下的 (height, width) float32 数组"""
    raw = _read(path)
    kind, pos = _pfm_line(raw, 0, path)
    if kind != "Pf":
        raise FileFormatError(path, 0, f"expected grayscale 'Pf' header, found {kind!r}")
    dims_at = pos
    dims, pos = _pfm_line(raw, pos, path)
    try:
        width, height = (int(v) for v in dims.split())
    except ValueError as e:
        raise FileFormatError(path, dims_at, f"bad dimension line {dims!r}") from e
    if width <= 0 or height <= 0:
        raise FileFormatError(path, dims_at, f"non-positive dimensions {width}x{height}")
    scale_at = pos
    scale_text, pos = _pfm_line(raw, pos, path)
    try:
        scale = float(scale_text)
    except ValueError as e:
        raise FileFormatError(path, scale_at, f"bad scale line {scale_text!r}") from e
    if scale == 0.0:
        raise FileFormatError(path, scale_at, "scale must be non-zero")
    dtype = '<f4' if scale < 0 else '>f4'
    expected = pos + width * height * 4
    if len(raw) != expected:
        raise FileFormatError(path, min(len(raw), expected),
                              f"payload size mismatch: file has {len(raw)} bytes, header implies {expected}")
    values = np.frombuffer(raw, dtype=dtype, offset=pos).reshape(height, width)
    return values[::-1].astype(np.float32)


# ---------------------------------------------------------------- PNG

def write_png(path: PathLike, image: np.ndarray) -> Path:
    """8 位灰度 PNG"""
    buffer = io.BytesIO()
    Image.fromarray(np.asarray(image, dtype=np.uint8)).save(buffer, format="PNG")
    return _atomic_write(path, buffer.getvalue())


def read_png(path: PathLike) -> np.ndarray:
    raw = _read(path)
    try:
        with Image.open(io.BytesIO(raw)) as image:
            return np.asarray(image.convert("L"), dtype=np.uint8).copy()
    except (OSError, SyntaxError) as e:
        raise FileFormatError(path, None, f"unreadable image: {e}") from e


# ---------------------------------------------------------------- CSV

def format_csv(header: Sequence[str], rows: Iterable[Sequence[Any]]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buffer.getvalue()


def write_csv(path: PathLike, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    return _atomic_write(path, format_csv(header, rows).encode('utf-8'))


def read_csv(path: PathLike) -> List[Dict[str, str]]:
    raw = _read(path)
    return list(csv.DictReader(io.StringIO(raw.decode('utf-8'))))
