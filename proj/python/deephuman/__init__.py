"""Volumetric human reconstruction toolkit.

Array conventions: volumes are ``[C, Z, Y, X]`` (or ``[Z, Y, X]``), image-plane
maps are ``[C, H, W]`` with rows along grid y and columns along grid x.
"""

from ._core import (
    ConfigError,
    FormatError,
    MeshError,
    ShapeError,
    build_corpus,
    depth_to_normal,
    enclosed_volume,
    generate_body,
    iou_zshift,
    is_watertight,
    marching_cubes,
    parse_config,
    project_depth,
    project_silhouette,
    read_checkpoint,
    read_dhvg,
    read_png,
    write_dhvg,
)

__all__ = [
    "ConfigError",
    "FormatError",
    "MeshError",
    "ShapeError",
    "build_corpus",
    "depth_to_normal",
    "enclosed_volume",
    "generate_body",
    "iou_zshift",
    "is_watertight",
    "marching_cubes",
    "parse_config",
    "project_depth",
    "project_silhouette",
    "read_checkpoint",
    "read_dhvg",
    "read_png",
    "write_dhvg",
]
