from .scene import (Hit, Ray, Scene, box_mesh, cylinder_mesh, intersect, mirror_reflect,
                    plane_mesh, scene_from_arrays, shoebox)
from .meshio import MeshFormatError, load_mesh, read_region_map, save_mesh, write_region_map
from .distance import DistanceSummary, mesh_distance, sample_surface

__all__ = [
    "Hit", "Ray", "Scene", "box_mesh", "cylinder_mesh", "intersect", "mirror_reflect",
    "plane_mesh", "scene_from_arrays", "shoebox", "MeshFormatError", "load_mesh",
    "read_region_map", "save_mesh", "write_region_map", "DistanceSummary", "mesh_distance",
    "sample_surface",
]
