"""
Utility functions for airway-gvf.
"""

import logging
from pathlib import Path
from typing import Union

from rich.console import Console
from rich.logging import RichHandler

from airway_gvf.errors import ConfigError


def read_flat_config(path: Union[str, Path]) -> dict[str, str]:
    """
    Read a flat ``key=value`` file.

    Blank lines and ``#`` comments are skipped; values keep their text form
    and are converted by the model that owns the key.

    Raises:
        FileNotFoundError: path does not exist
        ConfigError: a line without ``=`` or a duplicated key
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"file not found: {path}")
    return parse_flat_config(path.read_text())


def parse_flat_config(text: str) -> dict[str, str]:
    values: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}", f"expected key=value, got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}", "empty key")
        if key in values:
            raise ConfigError(key, "duplicated key")
        values[key] = value
    return values


def parse_float_list(text: str) -> list[float]:
    """Parse ``"0.5, 1, 2"`` into floats."""
    return [float(part) for part in text.split(",") if part.strip()]


def parse_index(text: str) -> tuple[int, int, int]:
    """Parse a ``X,Y,Z`` voxel index."""
    parts = [p.strip() for p in text.split(",")]
    if len(parts) != 3:
        raise ValueError(f"expected X,Y,Z, got {text!r}")
    return tuple(int(p) for p in parts)


def format_mm(value: float) -> str:
    return f"{value:.2f} mm"


def format_point(point) -> str:
    return "(" + ", ".join(f"{float(c):.1f}" for c in point) + ")"


def setup_logging(verbose: bool = False, console: Union[Console, None] = None) -> None:
    """Install a single RichHandler on the root logger (stderr by default)."""
    handler = RichHandler(
        console=console or Console(stderr=True),
        show_path=False,
        rich_tracebacks=False,
    )
    handler.setFormatter(logging.Formatter("%(message)s", datefmt="[%X]"))
    root = logging.getLogger()
    for existing in list(root.handlers):
        if isinstance(existing, RichHandler):
            root.removeHandler(existing)
    root.addHandler(handler)
    root.setLevel(logging.DEBUG if verbose else logging.INFO)
