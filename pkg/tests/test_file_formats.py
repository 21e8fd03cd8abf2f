"""Tests for the interchange file readers and writers."""

import struct

import numpy as np
import pytest

from utils.file_formats import (
    FileFormatError,
    read_cameras,
    read_csv,
    read_descriptors,
    read_json,
    read_pfm,
    read_png,
    read_score_map,
    write_cameras,
    write_csv,
    write_descriptors,
    write_json,
    write_pfm,
    write_png,
    write_score_map,
)


def _unit_field(h=2, w=3, n=4, seed=0):
    values = np.random.default_rng(seed).normal(size=(h, w, n))
    return (values / np.linalg.norm(values, axis=-1, keepdims=True)).astype(np.float32)


def _camera(tx=0.0):
    return {"K": [[100, 0, 160], [0, 100, 120], [0, 0, 1]], "R": np.eye(3).tolist(),
            "t": [tx, 0, 0], "width": 320, "height": 240}


class TestPfm:
    def test_header_and_bottom_up_rows(self, tmp_path):
        values = np.arange(6, dtype=np.float32).reshape(2, 3)
        raw = write_pfm(tmp_path / "d.pfm", values).read_bytes()
        header = b"Pf\n3 2\n-1.0\n"
        assert raw.startswith(header)
        np.testing.assert_array_equal(np.frombuffer(raw[len(header):], dtype="<f4"), [3, 4, 5, 0, 1, 2])

    def test_round_trip_keeps_special_values(self, tmp_path):
        values = np.array([[1.5, 0.0], [np.inf, np.nan]], dtype=np.float32)
        np.testing.assert_array_equal(read_pfm(write_pfm(tmp_path / "d.pfm", values)), values)

    def test_big_endian(self, tmp_path):
        path = tmp_path / "be.pfm"
        payload = np.array([[3.0, 4.0], [1.0, 2.0]], dtype=">f4").tobytes()
        path.write_bytes(b"Pf\n2 2\n1.0\n" + payload)
        np.testing.assert_array_equal(read_pfm(path), [[1.0, 2.0], [3.0, 4.0]])

    def test_truncated_payload_offset(self, tmp_path):
        path = write_pfm(tmp_path / "d.pfm", np.zeros((2, 3), dtype=np.float32))
        path.write_bytes(path.read_bytes()[:-4])
        with pytest.raises(FileFormatError) as info:
            read_pfm(path)
        assert info.value.offset == 32

    def test_colour_pfm_rejected(self, tmp_path):
        path = tmp_path / "c.pfm"
        path.write_bytes(b"PF\n1 1\n-1.0\n" + bytes(12))
        with pytest.raises(FileFormatError) as info:
            read_pfm(path)
        assert info.value.offset == 0

    def test_zero_scale(self, tmp_path):
        path = tmp_path / "z.pfm"
        path.write_bytes(b"Pf\n1 1\n0\n" + bytes(4))
        with pytest.raises(FileFormatError) as info:
            read_pfm(path)
        assert info.value.offset == 7


class TestDescriptors:
    def test_round_trip(self, tmp_path):
        values = _unit_field()
        path = write_descriptors(tmp_path / "f.desc", values)
        assert path.stat().st_size == 16 + values.size * 4
        np.testing.assert_array_equal(read_descriptors(path), values)

    def test_bad_norm_offset(self, tmp_path):
        values = _unit_field()
        values[1, 1] *= 2.0
        path = write_descriptors(tmp_path / "f.desc", values)
        with pytest.raises(FileFormatError) as info:
            read_descriptors(path)
        assert info.value.offset == 16 + 4 * 4 * 4
        assert "descriptor 4" in str(info.value)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "f.desc"
        path.write_bytes(struct.pack("<4sIII", b"NOPE", 1, 1, 2) + bytes(8))
        with pytest.raises(FileFormatError) as info:
            read_descriptors(path)
        assert info.value.offset == 0

    def test_truncated_header(self, tmp_path):
        path = tmp_path / "f.desc"
        path.write_bytes(b"DESC")
        with pytest.raises(FileFormatError) as info:
            read_descriptors(path)
        assert info.value.offset == 4


class TestScoreMap:
    def test_round_trip(self, tmp_path):
        values = np.linspace(0.0, 1.0, 12, dtype=np.float32).reshape(3, 4)
        np.testing.assert_array_equal(read_score_map(write_score_map(tmp_path / "s.smap", values)), values)

    def test_out_of_range_offset(self, tmp_path):
        values = np.zeros((3, 4), dtype=np.float32)
        values.flat[5] = 1.5
        with pytest.raises(FileFormatError) as info:
            read_score_map(write_score_map(tmp_path / "s.smap", values))
        assert info.value.offset == 12 + 5 * 4


class TestJsonAndCameras:
    def test_json_error_byte_offset(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('{"é": }', encoding="utf-8")
        with pytest.raises(FileFormatError) as info:
            read_json(path)
        assert info.value.offset == 7

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileFormatError) as info:
            read_json(tmp_path / "absent.json")
        assert "no such file" in str(info.value)
        assert "absent.json" in str(info.value)

    def test_cameras_round_trip(self, tmp_path):
        cameras = [_camera(), _camera(-0.1)]
        assert read_cameras(write_cameras(tmp_path / "cameras.json", cameras)) == cameras

    def test_cameras_need_two_views(self, tmp_path):
        with pytest.raises(FileFormatError, match="at least 2 views"):
            read_cameras(write_cameras(tmp_path / "cameras.json", [_camera()]))

    def test_cameras_unknown_field(self, tmp_path):
        extra = dict(_camera(-0.1), fov=60)
        with pytest.raises(FileFormatError, match="unknown field"):
            read_cameras(write_cameras(tmp_path / "cameras.json", [_camera(), extra]))

    def test_cameras_missing_field(self, tmp_path):
        partial = {k: v for k, v in _camera(-0.1).items() if k != "t"}
        with pytest.raises(FileFormatError, match="missing field"):
            read_cameras(write_cameras(tmp_path / "cameras.json", [_camera(), partial]))

    def test_cameras_top_level_shape(self, tmp_path):
        with pytest.raises(FileFormatError):
            read_cameras(write_json(tmp_path / "cameras.json", {"views": [_camera(), _camera()], "extra": 1}))


class TestPngAndCsv:
    def test_png_lossless(self, tmp_path):
        image = np.random.default_rng(0).integers(0, 256, size=(24, 32)).astype(np.uint8)
        np.testing.assert_array_equal(read_png(write_png(tmp_path / "i.png", image)), image)

    def test_unreadable_png(self, tmp_path):
        path = tmp_path / "i.png"
        path.write_bytes(b"not an image")
        with pytest.raises(FileFormatError):
            read_png(path)

    def test_csv_round_trip(self, tmp_path):
        path = write_csv(tmp_path / "r.csv", ["a", "b"], [[1, 0.5], [2, "x"]])
        assert path.read_text() == "a,b\n1,0.5\n2,x\n"
        assert read_csv(path) == [{"a": "1", "b": "0.5"}, {"a": "2", "b": "x"}]

    def test_no_temp_file_left_behind(self, tmp_path):
        write_csv(tmp_path / "out" / "r.csv", ["a"], [[1]])
        assert [p.name for p in (tmp_path / "out").iterdir()] == ["r.csv"]
