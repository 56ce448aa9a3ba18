"""
Tests for MetaImage reading and writing.
"""

import numpy as np
import pytest

from airway_gvf.errors import MetaImageError
from airway_gvf.metaimage import load_mask, load_volume, read_header, save_volume
from airway_gvf.volume import BinaryMask, ScalarVolume


@pytest.fixture
def ct():
    rng = np.random.default_rng(3)
    values = rng.integers(-1024, 1500, size=(5, 4, 3)).astype(np.int16)
    return ScalarVolume(values, (0.7, 0.7, 1.25), (-10.5, 3.0, 100.0))


class TestSaveLoad:
    """Test cases for the .mhd/.raw and .mha forms."""

    def test_mhd_round_trip(self, ct, tmp_path):
        save_volume(ct, tmp_path / "ct.mhd")
        loaded = load_volume(tmp_path / "ct.mhd")

        assert (tmp_path / "ct.raw").exists()
        assert loaded.values.dtype == np.int16
        assert np.array_equal(loaded.values, ct.values)
        assert loaded.spacing == ct.spacing
        assert loaded.origin == ct.origin

    def test_mha_embeds_payload(self, ct, tmp_path):
        save_volume(ct, tmp_path / "ct.mha")
        fields, offset = read_header(tmp_path / "ct.mha")

        assert fields["ElementDataFile"] == "LOCAL"
        assert fields["ElementType"] == "MET_SHORT"
        assert not (tmp_path / "ct.raw").exists()
        assert (tmp_path / "ct.mha").stat().st_size == offset + ct.values.size * 2
        assert np.array_equal(load_volume(tmp_path / "ct.mha").values, ct.values)

    def test_x_fastest_payload(self, tmp_path):
        values = np.arange(24, dtype=np.int16).reshape(4, 3, 2)
        save_volume(ScalarVolume(values), tmp_path / "v.mhd")
        payload = np.frombuffer((tmp_path / "v.raw").read_bytes(), dtype="<i2")
        assert payload[0] == values[0, 0, 0]
        assert payload[1] == values[1, 0, 0]
        assert payload[4] == values[0, 1, 0]

    def test_mask_round_trip(self, cube_mask, tmp_path):
        save_volume(cube_mask, tmp_path / "mask.mhd")
        fields, _ = read_header(tmp_path / "mask.mhd")
        loaded = load_mask(tmp_path / "mask.mhd")

        assert fields["ElementType"] == "MET_UCHAR"
        assert np.array_equal(loaded.values, cube_mask.values)

    def test_float_volume_stored_as_float32(self, tmp_path):
        v = ScalarVolume(np.full((2, 2, 2), 0.25))
        save_volume(v, tmp_path / "f.mhd")
        loaded = load_volume(tmp_path / "f.mhd")
        assert loaded.values.dtype == np.float32
        assert np.all(loaded.values == 0.25)

    def test_save_is_deterministic(self, ct, tmp_path):
        save_volume(ct, tmp_path / "a.mhd")
        save_volume(ct, tmp_path / "b.mhd")
        assert (tmp_path / "a.raw").read_bytes() == (tmp_path / "b.raw").read_bytes()


class TestErrors:
    """Test cases for malformed and missing files."""

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError, match="file not found"):
            load_volume(tmp_path / "absent.mhd")

    def test_missing_raw(self, ct, tmp_path):
        save_volume(ct, tmp_path / "ct.mhd")
        (tmp_path / "ct.raw").unlink()
        with pytest.raises(FileNotFoundError):
            load_volume(tmp_path / "ct.mhd")

    def test_truncated_payload(self, tmp_path):
        save_volume(ScalarVolume(np.zeros((3, 3, 3), dtype=np.int16)), tmp_path / "v.mhd")
        raw = tmp_path / "v.raw"
        raw.write_bytes(raw.read_bytes()[:-2])
        with pytest.raises(MetaImageError, match="expected 54 bytes, got 52"):
            load_volume(tmp_path / "v.mhd")

    def test_unsupported_element_type(self, tmp_path):
        (tmp_path / "v.raw").write_bytes(b"\x00" * 8)
        (tmp_path / "v.mhd").write_text(
            "NDims = 3\nDimSize = 2 2 2\nElementType = MET_DOUBLE\nElementDataFile = v.raw\n"
        )
        with pytest.raises(MetaImageError, match="MET_DOUBLE"):
            load_volume(tmp_path / "v.mhd")

    def test_two_dimensional_rejected(self, tmp_path):
        (tmp_path / "v.raw").write_bytes(b"\x00" * 4)
        (tmp_path / "v.mhd").write_text(
            "NDims = 2\nDimSize = 2 2\nElementType = MET_UCHAR\nElementDataFile = v.raw\n"
        )
        with pytest.raises(MetaImageError, match="3-D"):
            load_volume(tmp_path / "v.mhd")

    def test_missing_required_key(self, tmp_path):
        (tmp_path / "v.mhd").write_text("NDims = 3\nDimSize = 2 2 2\n")
        with pytest.raises(MetaImageError, match="missing"):
            load_volume(tmp_path / "v.mhd")

    def test_big_endian_payload(self, tmp_path):
        values = np.arange(8, dtype=">i2")
        (tmp_path / "v.raw").write_bytes(values.tobytes())
        (tmp_path / "v.mhd").write_text(
            "NDims = 3\nDimSize = 2 2 2\nElementType = MET_SHORT\n"
            "ElementByteOrderMSB = True\nElementDataFile = v.raw\n"
        )
        loaded = load_volume(tmp_path / "v.mhd")
        assert loaded.values[1, 0, 0] == 1
        assert loaded.values[1, 1, 1] == 7
