"""
Run configuration: one pydantic model per pipeline stage, loaded from a flat
``section.field=value`` file.
"""

import logging
import typing
from pathlib import Path
from typing import Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError

from airway_gvf.enhance import EnhanceParams
from airway_gvf.errors import ConfigError
from airway_gvf.gvf import GvfParams
from airway_gvf.trachea import GrowParams
from airway_gvf.tracer import LeakParams, TracerParams
from airway_gvf.tube import TubeParams
from airway_gvf.utils import parse_flat_config, parse_float_list, read_flat_config
from airway_gvf.voi import VoiParams

logger = logging.getLogger(__name__)

SECTIONS: dict[str, type[BaseModel]] = {
    "trachea": GrowParams,
    "enhance": EnhanceParams,
    "gvf": GvfParams,
    "tube": TubeParams,
    "leak": LeakParams,
    "voi": VoiParams,
    "tracer": TracerParams,
}


class Config(BaseModel):
    """Every tunable of a segmentation run, grouped by stage."""
    model_config = ConfigDict(extra="forbid")

    trachea: GrowParams = Field(default_factory=GrowParams)
    enhance: EnhanceParams = Field(default_factory=EnhanceParams)
    gvf: GvfParams = Field(default_factory=GvfParams)
    tube: TubeParams = Field(default_factory=TubeParams)
    leak: LeakParams = Field(default_factory=LeakParams)
    voi: VoiParams = Field(default_factory=VoiParams)
    tracer: TracerParams = Field(default_factory=TracerParams)

    @classmethod
    def defaults_table(cls) -> list[tuple[str, str]]:
        """(key, default) for every configurable key, in section order."""
        rows = []
        for section, model in SECTIONS.items():
            for name, info in model.model_fields.items():
                default = info.get_default(call_default_factory=True)
                if isinstance(default, list):
                    text = ",".join(f"{v:g}" for v in default)
                else:
                    text = str(default)
                rows.append((f"{section}.{name}", text))
        return rows

    def with_threads(self, threads: int) -> "Config":
        return self.model_copy(update={"tracer": self.tracer.model_copy(update={"threads": threads})})


def _convert(model: type[BaseModel], name: str, raw: str):
    info = model.model_fields[name]
    annotation = info.annotation
    if typing.get_origin(annotation) is list:
        return parse_float_list(raw)
    if type(None) in typing.get_args(annotation) and raw.lower() in ("", "none"):
        return None
    return raw


def config_from_values(values: dict[str, str]) -> Config:
    """
    Build a Config from ``section.field`` strings.

    Raises:
        ConfigError: unknown section or field, or a value its model rejects;
            the error names the offending key
    """
    grouped: dict[str, dict] = {section: {} for section in SECTIONS}
    for key, raw in values.items():
        section, _, name = key.partition(".")
        if section not in SECTIONS:
            raise ConfigError(key, f"unknown section {section!r}")
        model = SECTIONS[section]
        if name not in model.model_fields:
            raise ConfigError(key, "unknown key")
        try:
            grouped[section][name] = _convert(model, name, raw)
        except ValueError as e:
            raise ConfigError(key, str(e)) from e

    sections = {}
    for section, fields in grouped.items():
        try:
            sections[section] = SECTIONS[section](**fields)
        except ValidationError as e:
            err = e.errors()[0]
            loc = ".".join(str(p) for p in err["loc"])
            key = f"{section}.{loc}" if loc else section
            raise ConfigError(key, err["msg"]) from e
    return Config(**sections)


def load_config(path: Union[str, Path, None] = None) -> Config:
    """Defaults when ``path`` is None, otherwise the file's overrides on top of them."""
    if path is None:
        return Config()
    config = config_from_values(read_flat_config(path))
    logger.debug("Loaded config from %s", path)
    return config


def parse_config(text: str) -> Config:
    return config_from_values(parse_flat_config(text))
