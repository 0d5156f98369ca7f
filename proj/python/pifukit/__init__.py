"""Python bindings for pifukit. Configs are plain dicts; reports come back as dicts."""

import json

from . import _pifukit
from ._pifukit import (
    Error,
    TriMesh,
    chamfer,
    dos_label,
    icosphere,
    is_inside,
    load_map_stack,
    load_mesh,
    marching_cubes,
    p2s,
    reconstruct,
    region_iou,
    roughness,
    save_obj,
    signed_z_distance,
    version,
)

__all__ = [
    "Error", "TriMesh", "chamfer", "dos_label", "dos_samples", "evaluate", "gradcheck", "icosphere",
    "is_inside", "load_map_stack", "load_mesh", "make_shape", "marching_cubes", "p2s", "reconstruct",
    "region_iou", "render_maps", "roughness", "save_obj", "signed_z_distance", "spatial_samples", "version",
]


def _dump(config):
    return "" if config is None else json.dumps(config)


def make_shape(spec):
    return _pifukit.make_shape(json.dumps(spec))


def spatial_samples(mesh, config=None):
    """(n, 4) array of x, y, z, label."""
    return _pifukit.spatial_samples(mesh, _dump(config))


def dos_samples(mesh, config=None):
    """(n, 4) array of x, y, z, label."""
    return _pifukit.dos_samples(mesh, _dump(config))


def render_maps(mesh, resolution, yaw=0.0, parse_classes=0):
    maps = _pifukit.render_maps(mesh, resolution, yaw, parse_classes)
    maps["camera"] = json.loads(maps["camera"])
    return maps


def evaluate(recon, gt, camera, n=100000, seed=0):
    return json.loads(_pifukit.evaluate(recon, gt, json.dumps(camera), n, seed))


def gradcheck(seed=0):
    return _pifukit.gradcheck(seed)
