"""Adam over named parameter groups and the training hyper-parameters."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

import numpy as np


@dataclass
class TrainConfig:
    total_steps: int = 30_000
    texture_freeze_steps: int = 500
    densify_start: int = 500
    densify_end: int = 25_000
    densify_every: int = 100
    sh_finetune_steps: int = 2_000
    lr_position_init: float = 1.6e-4
    lr_position_final: float = 1.6e-6
    spatial_scale: float = 1.0
    lr_rgb: float = 2.5e-3
    lr_alpha: float = 1e-3
    lr_sh: float = 5e-3
    lr_scale: float = 5e-3
    lr_rot: float = 1e-3
    ssim_weight: float = 0.2
    color_reg_weight: float = 1e-4
    opacity_reg_weight: float = 1e-4
    impact_cap: float = 500.0
    dead_opacity: float = 5e-3
    max_billboards: int | None = None
    init_count: int | None = None
    add_sky: bool = False
    tex_size: int = 16
    position_noise: bool = True
    background: tuple = (0.0, 0.0, 0.0)
    log_every: int = 100

    def __post_init__(self):
        if not 0 <= self.densify_start <= self.densify_end <= max(self.total_steps, self.densify_start):
            raise ValueError("densify window must lie inside [0, total_steps]")
        self.background = tuple(float(c) for c in self.background)

    @classmethod
    def from_dict(cls, d: dict) -> TrainConfig:
        known = {f.name: f for f in fields(cls)}
        unknown = set(d) - set(known)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)

    def group_lrs(self, step: int) -> dict[str, float]:
        return {
            "position": position_lr(step, self),
            "log_scale": self.lr_scale,
            "rotation": self.lr_rot,
            "sh": self.lr_sh,
            "color_texture": self.lr_rgb,
            "opacity_logits": self.lr_alpha,
        }


def position_lr(step: int, cfg: TrainConfig) -> float:
    """Log-linear decay from ``lr_position_init`` to ``lr_position_final`` over ``total_steps``."""
    t = min(max(step / max(cfg.total_steps, 1), 0.0), 1.0)
    lr = math.exp((1 - t) * math.log(cfg.lr_position_init) + t * math.log(cfg.lr_position_final))
    return lr * cfg.spatial_scale


class Adam:
    """Bias-corrected Adam with one moment pair per named parameter array."""

    def __init__(self, params: dict[str, np.ndarray], beta1=0.9, beta2=0.999, eps=1e-15):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros(p.shape) for k, p in params.items()}
        self.v = {k: np.zeros(p.shape) for k, p in params.items()}
        self.nan_skipped = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray], lrs: dict[str, float],
             groups=None):
        """Update ``params`` in place; only ``groups`` (default all) are touched."""
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for k in groups or params:
            g = np.asarray(grads[k], dtype=np.float64)
            bad = ~np.isfinite(g)
            if bad.any():
                self.nan_skipped += int(bad.sum())
                g = np.where(bad, 0.0, g)
            m, v = self.m[k], self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = lrs[k] * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            if bad.any():
                update = np.where(bad, 0.0, update)
            p = params[k]
            p[...] = (p.astype(np.float64) - update).astype(p.dtype)

    def resize(self, n: int):
        """Grow every moment array along axis 0 to ``n`` rows (new rows zeroed)."""
        for store in (self.m, self.v):
            for k, arr in store.items():
                if len(arr) < n:
                    pad = np.zeros((n - len(arr),) + arr.shape[1:])
                    store[k] = np.concatenate([arr, pad])

    def reset(self, ids):
        ids = np.asarray(ids, dtype=np.int64)
        if len(ids) == 0:
            return
        for store in (self.m, self.v):
            for arr in store.values():
                arr[ids] = 0.0
