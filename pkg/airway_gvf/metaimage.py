"""
MetaImage (.mhd/.raw and .mha) reader and writer, minimal 3-D dialect.

Header keys understood: ObjectType, NDims, DimSize, ElementSpacing, Offset,
ElementType (MET_SHORT, MET_FLOAT, MET_UCHAR), ElementByteOrderMSB,
ElementDataFile (a sibling raw file or LOCAL). Unknown keys are ignored on
read and never written. Payload is x-fastest.
"""

import logging
from pathlib import Path
from typing import Union

import numpy as np

from airway_gvf.errors import MetaImageError
from airway_gvf.volume import BinaryMask, ScalarVolume

logger = logging.getLogger(__name__)

ELEMENT_TYPES = {
    "MET_SHORT": np.dtype("int16"),
    "MET_FLOAT": np.dtype("float32"),
    "MET_UCHAR": np.dtype("uint8"),
}

_REQUIRED_KEYS = ("NDims", "DimSize", "ElementType", "ElementDataFile")


def _format_floats(values) -> str:
    return " ".join(repr(float(v)) for v in values)


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("true", "1"):
        return True
    if lowered in ("false", "0"):
        return False
    raise MetaImageError(f"malformed header: boolean expected, got {text!r}")


def read_header(path: Path) -> tuple[dict[str, str], int]:
    """
    Parse the text header.

    Returns:
        (fields, payload_offset) where payload_offset is the byte offset of the
        LOCAL payload inside the same file (unused for detached payloads).
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"file not found: {path}")

    raw = path.read_bytes()
    fields: dict[str, str] = {}
    offset = 0
    while offset < len(raw):
        end = raw.find(b"\n", offset)
        if end == -1:
            end = len(raw)
        line = raw[offset:end].decode("latin-1").strip()
        offset = end + 1
        if not line:
            continue
        if "=" not in line:
            raise MetaImageError(f"malformed header line in {path.name}: {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        fields[key] = value
        if key == "ElementDataFile":
            break

    missing = [k for k in _REQUIRED_KEYS if k not in fields]
    if missing:
        raise MetaImageError(f"malformed header: missing {', '.join(missing)}")
    return fields, offset


def _read_array(path: Path) -> tuple[np.ndarray, tuple, tuple, str]:
    path = Path(path)
    fields, payload_offset = read_header(path)

    try:
        ndims = int(fields["NDims"])
        dims = tuple(int(v) for v in fields["DimSize"].split())
        spacing = tuple(float(v) for v in fields.get("ElementSpacing", "1 1 1").split())
        origin = tuple(float(v) for v in fields.get("Offset", "0 0 0").split())
    except ValueError as e:
        raise MetaImageError(f"malformed header: {e}") from e
    if ndims != 3 or len(dims) != 3 or len(spacing) != 3 or len(origin) != 3:
        raise MetaImageError(f"malformed header: only 3-D images are supported (NDims={ndims})")

    element_type = fields["ElementType"]
    if element_type not in ELEMENT_TYPES:
        raise MetaImageError(f"unsupported element type {element_type}")
    dtype = ELEMENT_TYPES[element_type]
    msb = _parse_bool(fields.get("ElementByteOrderMSB", fields.get("BinaryDataByteOrderMSB", "False")))
    dtype = dtype.newbyteorder(">" if msb else "<")

    data_file = fields["ElementDataFile"]
    if data_file == "LOCAL":
        payload = path.read_bytes()[payload_offset:]
    else:
        raw_path = path.parent / data_file
        if not raw_path.exists():
            raise FileNotFoundError(f"file not found: {raw_path}")
        payload = raw_path.read_bytes()

    expected = dims[0] * dims[1] * dims[2] * dtype.itemsize
    if len(payload) != expected:
        raise MetaImageError(
            f"payload size mismatch: expected {expected} bytes, got {len(payload)}"
        )

    flat = np.frombuffer(payload, dtype=dtype).astype(dtype.newbyteorder("="))
    values = flat.reshape(dims[2], dims[1], dims[0]).transpose(2, 1, 0).copy()
    return values, spacing, origin, element_type


def load_volume(path: Union[str, Path]) -> ScalarVolume:
    """Load a MetaImage file as a ScalarVolume (int16, float32 or uint8 values)."""
    values, spacing, origin, element_type = _read_array(Path(path))
    logger.debug("Loaded %s: dims=%s type=%s", path, values.shape, element_type)
    return ScalarVolume(values, spacing, origin)


def load_mask(path: Union[str, Path]) -> BinaryMask:
    """Load a MetaImage file as a BinaryMask; any non-zero voxel is set."""
    values, spacing, origin, _ = _read_array(Path(path))
    return BinaryMask(values != 0, spacing, origin)


def _element_type_for(values: np.ndarray, is_mask: bool) -> tuple[str, np.ndarray]:
    if is_mask:
        return "MET_UCHAR", values.astype(np.uint8)
    if values.dtype == np.int16:
        return "MET_SHORT", values
    if values.dtype == np.uint8:
        return "MET_UCHAR", values
    return "MET_FLOAT", values.astype(np.float32)


def save_volume(v: Union[ScalarVolume, BinaryMask], path: Union[str, Path]) -> None:
    """
    Write a volume or mask as MetaImage.

    ``.mha`` paths embed the payload (LOCAL); any other suffix writes a header
    plus a sibling ``.raw`` file. Masks are stored as 8-bit {0, 1}; float64
    values are stored as MET_FLOAT.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    element_type, values = _element_type_for(v.values, isinstance(v, BinaryMask))

    local = path.suffix.lower() == ".mha"
    raw_path = path.with_suffix(".raw")
    nx, ny, nz = v.dims
    header = "\n".join([
        "ObjectType = Image",
        "NDims = 3",
        f"DimSize = {nx} {ny} {nz}",
        f"ElementSpacing = {_format_floats(v.spacing)}",
        f"Offset = {_format_floats(v.origin)}",
        f"ElementType = {element_type}",
        "ElementByteOrderMSB = False",
        f"ElementDataFile = {'LOCAL' if local else raw_path.name}",
    ]) + "\n"

    little = values.astype(values.dtype.newbyteorder("<"), copy=False)
    payload = np.ascontiguousarray(little.transpose(2, 1, 0)).tobytes()

    if local:
        path.write_bytes(header.encode("latin-1") + payload)
    else:
        path.write_text(header, encoding="latin-1")
        raw_path.write_bytes(payload)
    logger.debug("Saved %s (%s, %d bytes payload)", path, element_type, len(payload))
