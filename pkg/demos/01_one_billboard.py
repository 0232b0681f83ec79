"""
A single textured billboard
===========================

Builds one billboard by hand, renders it, looks at what a pixel saw, and
checks one analytic gradient against a finite difference.

Run with ``python3 demos/01_one_billboard.py``.
"""

import numpy as np

from billboard_splatting.backprop import composite_backward
from billboard_splatting.geometry import CameraView
from billboard_splatting.rasterizer import render
from billboard_splatting.scene import BillboardSet, gaussian_pattern_texture, logit

# %%
# A billboard is a square in its own (u, v) plane, placed by a center, two
# log-scales and a unit quaternion. Its opacity texture starts from a
# Gaussian falloff, and a checkerboard goes into the color offsets.
tex_size = 8
checker = (np.indices((tex_size, tex_size)).sum(0) % 2 - 0.5) * 0.4
bb = BillboardSet(
    position=[[0.0, 0.0, 0.0]],
    log_scale=[[np.log(0.8), np.log(0.5)]],
    rotation=[[np.cos(0.2), 0.0, np.sin(0.2), 0.0]],  # a little turned about y
    sh=np.zeros((1, 16, 3)),
    color_texture=np.repeat(checker[None, :, :, None], 3, axis=3),
    opacity_logits=logit(gaussian_pattern_texture(tex_size))[None],
    dtype=np.float64,
)

cam = CameraView.look_at(eye=[0.0, 0.0, -3.0], target=[0.0, 0.0, 0.0], width=48, height=32, fov_deg=45)
fb = render(bb, cam, background=(0.1, 0.1, 0.1), training=True)
print("image", fb.color.shape, "mean color", fb.color.mean(axis=(0, 1)).round(3))

# %%
# Training-mode renders keep the per-pixel contributor list: which billboard,
# where it was hit, its opacity and the transmittance in front of it.
for idx, u, v, alpha, color, depth, trans in fb.contributors(24, 16):
    print(f"billboard {idx}: uv ({u:+.3f}, {v:+.3f})  alpha {alpha:.3f}  depth {depth:.3f}  transmittance before {trans:.3f}")

# %%
# Coarse ASCII view of the accumulated opacity.
shade = " .:-=+*#%@"
cover = 1.0 - fb.transmittance
for row in cover[::3]:
    print("".join(shade[min(int(a * len(shade)), len(shade) - 1)] for a in row[::2]))

# %%
# The backward pass returns gradients for every parameter group. Compare the
# x-position gradient of the summed image with a central difference.
grads = composite_backward(fb, np.ones_like(fb.color), bb)
h = 1e-5
bb.position[0, 0] += h
up = render(bb, cam, (0.1, 0.1, 0.1)).color.sum()
bb.position[0, 0] -= 2 * h
down = render(bb, cam, (0.1, 0.1, 0.1)).color.sum()
bb.position[0, 0] += h
print("d(sum)/d(position_x): analytic %.6f  numeric %.6f" % (grads["position"][0, 0], (up - down) / (2 * h)))
