"""
Meshing an opaque box
=====================

Six opaque billboards form a cube. Depth maps rendered from 26 cameras are
fused into a truncated signed distance volume, and marching cubes pulls out
the surface. The Chamfer distance to the true box is reported in voxels.

Run with ``python3 demos/03_box_mesh.py [voxel_size]``.
"""

import sys

import numpy as np

from billboard_splatting.meshing import chamfer_distance, fuse_scene, sample_mesh
from billboard_splatting.synthetic import box_billboards, box_surface_points, distance_to_box, sphere_cameras

voxel = float(sys.argv[1]) if len(sys.argv) > 1 else 0.03
rng = np.random.default_rng(0)

box = box_billboards(half=0.5)
cams = sphere_cameras(26, size=64, radius=3.0)
verts, faces, volume = fuse_scene(box, cams, voxel)
print(f"volume {volume.dims}, truncation {volume.truncation:.3f}")
print(f"mesh: {len(verts)} vertices, {len(faces)} triangles")

# %%
# How far do mesh vertices stray from the analytic surface?
dev = distance_to_box(verts, 0.5) / voxel
print(f"vertex distance to the box: median {np.median(dev):.2f}, max {dev.max():.2f} voxels")

# %%
# Symmetric Chamfer distance between area-weighted mesh samples and exact
# samples of the box surface.
cd = chamfer_distance(sample_mesh(verts, faces, 20_000, rng), box_surface_points(0.5, 20_000, rng))
print(f"Chamfer distance: {cd / voxel:.3f} voxels")
