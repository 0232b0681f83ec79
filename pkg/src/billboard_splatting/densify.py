"""Relocation of dead billboards and capped population growth with opacity splitting."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .scene import PARAM_NAMES, BillboardSet, SceneMeta, gaussian_pattern_texture, logit, sigmoid

logger = logging.getLogger(__name__)

DEAD_OPACITY = 5e-3
JITTER = 0.01
_OPACITY_CLIP = 1e-6


@dataclass
class DensifyReport:
    dead: int = 0
    relocated: int = 0
    added: int = 0
    total: int = 0
    sources: list = field(default_factory=list)
    reset_ids: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))


def alpha_nsplit(opacity, n):
    """Opacity each of ``n`` stacked copies needs to match the original transmittance (broadcasts)."""
    if np.any(np.asarray(n) < 1):
        raise ValueError("n must be >= 1")
    opacity = np.asarray(opacity, dtype=np.float64)
    return 1.0 - np.power(1.0 - opacity, 1.0 / n)


def find_dead(bset: BillboardSet, dead_opacity: float = DEAD_OPACITY) -> np.ndarray:
    if bset.count == 0:
        return np.zeros(0, dtype=np.int64)
    mean_alpha = sigmoid(bset.opacity_logits).mean(axis=(1, 2))
    return np.nonzero(mean_alpha < dead_opacity)[0]


def _split_alpha(bset: BillboardSet, ids, n):
    op = alpha_nsplit(sigmoid(bset.opacity_logits[ids]), n)
    bset.opacity_logits[ids] = logit(np.clip(op, _OPACITY_CLIP, 1 - _OPACITY_CLIP))


def _clone_into(bset: BillboardSet, dst, src, rng, jitter: bool):
    for name in PARAM_NAMES:
        arr = getattr(bset, name)
        arr[dst] = arr[src]
    if jitter and len(dst):
        step = JITTER * np.exp(bset.log_scale[dst].astype(np.float64).mean(axis=1))
        bset.position[dst] += (rng.normal(size=(len(dst), 3)) * step[:, None]).astype(bset.dtype)


def _reseed(bset: BillboardSet, ids, meta: SceneMeta | None, rng):
    meta = meta or SceneMeta()
    d = rng.normal(size=(len(ids), 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    r = meta.radius * rng.uniform(size=(len(ids), 1)) ** (1 / 3)
    bset.position[ids] = meta.center + d * r
    bset.color_texture[ids] = 0
    bset.opacity_logits[ids] = logit(0.5 * gaussian_pattern_texture(bset.tex_size))


def relocate(bset: BillboardSet, dead_ids, rng, jitter: bool = True, meta: SceneMeta | None = None) -> DensifyReport:
    """Move every dead billboard onto a live one drawn with probability proportional to mean opacity.

    Each target and its clones share the target's opacity split across
    ``1 + clones`` layers; scales and rotations are copied unchanged.
    """
    dead_ids = np.asarray(dead_ids, dtype=np.int64)
    report = DensifyReport(dead=len(dead_ids), total=bset.count)
    if len(dead_ids) == 0:
        return report
    live = np.setdiff1d(np.arange(bset.count), dead_ids)
    if len(live) == 0:
        logger.warning("all %d billboards are dead; reseeding inside the scene bounds", bset.count)
        _reseed(bset, dead_ids, meta, rng)
        report.relocated = len(dead_ids)
        report.reset_ids = dead_ids
        return report
    weight = sigmoid(bset.opacity_logits[live]).mean(axis=(1, 2))
    targets = rng.choice(live, size=len(dead_ids), p=weight / weight.sum())
    uniq, clones = np.unique(targets, return_counts=True)
    dst = dead_ids[np.argsort(targets, kind="stable")]
    src = np.repeat(uniq, clones)
    _clone_into(bset, dst, src, rng, jitter)
    for k in np.unique(clones):
        group = uniq[clones == k]
        members = np.concatenate([group, dst[np.isin(src, group)]])
        _split_alpha(bset, members, int(k) + 1)
    report.relocated = len(dead_ids)
    report.sources = list(zip(uniq.tolist(), clones.tolist()))
    report.reset_ids = np.concatenate([uniq, dst])
    return report


def growth_cap(step: int, start: int, end: int, init_count: int, max_count: int | None) -> int:
    """Allowed population at ``step``: linear from the initial count to ``max_count`` over the window."""
    if max_count is None or max_count <= init_count:
        return init_count if max_count is None else max_count
    frac = np.clip((step - start) / max(end - start, 1), 0.0, 1.0)
    return int(np.floor(init_count + (max_count - init_count) * frac))


def grow(bset: BillboardSet, n_add: int, impact, rng, exclude=(), jitter: bool = True) -> DensifyReport:
    """Clone the ``n_add`` highest-impact billboards once each, halving their layer opacity."""
    report = DensifyReport(total=bset.count)
    impact = np.asarray(impact, dtype=np.float64)
    cand = np.setdiff1d(np.nonzero(impact > 0)[0], np.asarray(exclude, dtype=np.int64))
    if n_add <= 0 or len(cand) == 0:
        return report
    order = cand[np.lexsort((cand, -impact[cand]))][:n_add]
    _split_alpha(bset, order, 2)
    start = bset.count
    new = bset.subset(order)
    grown = bset.concat(new)
    for name in PARAM_NAMES:
        setattr(bset, name, getattr(grown, name))
    new_ids = np.arange(start, start + len(order))
    if jitter:
        step = JITTER * np.exp(bset.log_scale[new_ids].astype(np.float64).mean(axis=1))
        bset.position[new_ids] += (rng.normal(size=(len(order), 3)) * step[:, None]).astype(bset.dtype)
    report.added = len(order)
    report.total = bset.count
    report.sources = [(int(i), 1) for i in order]
    report.reset_ids = np.concatenate([order, new_ids])
    return report


def densify_step(bset: BillboardSet, step: int, cfg, impact, rng, init_count: int,
                 meta: SceneMeta | None = None) -> DensifyReport:
    """Relocate dead billboards, then grow toward the current cap.

    ``cfg`` needs ``densify_start``, ``densify_end``, ``dead_opacity``, ``max_billboards``
    and ``position_noise``. ``impact`` is the per-billboard impact of the most
    recent training render.
    """
    if step < cfg.densify_start or step > cfg.densify_end:
        return DensifyReport(total=bset.count)
    dead = find_dead(bset, cfg.dead_opacity)
    report = relocate(bset, dead, rng, jitter=cfg.position_noise, meta=meta)
    cap = growth_cap(step, cfg.densify_start, cfg.densify_end, init_count, cfg.max_billboards)
    if cfg.max_billboards is not None:
        cap = min(cap, cfg.max_billboards)
    n_add = cap - bset.count
    if n_add > 0:
        touched = report.reset_ids
        g = grow(bset, n_add, impact, rng, exclude=np.concatenate([dead, touched]), jitter=cfg.position_noise)
        report.added = g.added
        report.sources += g.sources
        report.reset_ids = np.concatenate([report.reset_ids, g.reset_ids])
    report.total = bset.count
    return report
