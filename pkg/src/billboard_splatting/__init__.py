"""Differentiable textured-billboard splatting on the CPU."""
