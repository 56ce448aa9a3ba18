"""
airway-gvf: airway tree tracing in 3-D chest CT.

This package provides:
- Volume, mask and MetaImage I/O on voxel-center lattices
- Trachea region growing and root VOI placement
- Per-VOI cavity enhancement, gradient vector flow and tube-likeness
- A VOI work-queue tracer with leak rejection
- Synthetic airway phantoms and branch/voxel evaluation
"""

from airway_gvf.config import Config, load_config
from airway_gvf.errors import (
    AirwayError,
    ConfigError,
    FieldError,
    GeometryError,
    MetaImageError,
    PhantomError,
    SeedError,
)
from airway_gvf.evaluate import Metrics, evaluate, format_report, report
from airway_gvf.metaimage import load_mask, load_volume, save_volume
from airway_gvf.phantom import GroundTruth, PhantomSpec, generate_cylinder, generate_phantom
from airway_gvf.tracer import process_voi, reconstruct, trace
from airway_gvf.tree import AirwayTree, BranchRecord, BranchStatus
from airway_gvf.voi import Voi, extend_voi, size_voi
from airway_gvf.volume import BinaryMask, LabelMap, ScalarVolume

__version__ = "0.1.0"
__all__ = [
    "AirwayError",
    "AirwayTree",
    "BinaryMask",
    "BranchRecord",
    "BranchStatus",
    "Config",
    "ConfigError",
    "FieldError",
    "GeometryError",
    "GroundTruth",
    "LabelMap",
    "MetaImageError",
    "Metrics",
    "PhantomError",
    "PhantomSpec",
    "ScalarVolume",
    "SeedError",
    "Voi",
    "evaluate",
    "extend_voi",
    "format_report",
    "generate_cylinder",
    "generate_phantom",
    "load_config",
    "load_mask",
    "load_volume",
    "process_voi",
    "reconstruct",
    "report",
    "save_volume",
    "size_voi",
    "trace",
]
