"""The optimization loop: photometric fit, texture regularization, densification, SH fine-tune."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .backprop import composite_backward
from .densify import densify_step
from .io import Dataset, load_scene, save_scene
from .losses import billboard_impact, image_loss, psnr, texture_reg_loss, visibility_weight
from .optimizer import Adam, TrainConfig
from .rasterizer import render
from .scene import PARAM_NAMES, BillboardSet, SceneMeta, gaussian_pattern_texture, init_from_point_cloud

logger = logging.getLogger(__name__)

LOG_COLUMNS = ("step", "l1", "ssim_loss", "texture_loss", "psnr", "count")
TEXTURE_GROUPS = ("color_texture", "opacity_logits")


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainResult:
    bset: BillboardSet
    meta: SceneMeta
    log: list = field(default_factory=list)
    densify_reports: list = field(default_factory=list)
    nan_skipped: int = 0


def evaluate(bset: BillboardSet, images, cams, background=(0.0, 0.0, 0.0)) -> float:
    """Mean PSNR over the given views."""
    if not images:
        return float("nan")
    return float(np.mean([psnr(render(bset, c, background).color, im) for im, c in zip(images, cams)]))


class _MetricsLog:
    def __init__(self, path):
        self.rows = []
        self.path = Path(path) if path is not None else None
        if self.path is not None:
            with open(self.path, "w", newline="") as f:
                csv.writer(f).writerow(LOG_COLUMNS)

    def add(self, row: dict):
        self.rows.append(row)
        if self.path is not None:
            with open(self.path, "a", newline="") as f:
                csv.writer(f).writerow([row[k] if k in ("step", "count") else repr(float(row[k]))
                                        for k in LOG_COLUMNS])


def _dump_state(bset: BillboardSet, step: int, log_path) -> Path | None:
    if log_path is None:
        return None
    path = Path(log_path).with_suffix(f".nan_step{step}.npz")
    np.savez(path, step=step, **bset.params())
    return path


def train(dataset: Dataset, cfg: TrainConfig | None = None, seed: int = 0, log_path=None, out_path=None,
          init: tuple[BillboardSet, SceneMeta] | None = None) -> TrainResult:
    """Fit billboards to ``dataset``'s training views.

    When ``out_path`` is given the scene is saved there and the last log row is
    evaluated on the reloaded file, so it matches what ``eval`` reports.
    """
    cfg = cfg or TrainConfig()
    if len(dataset.images) < 2:
        raise ValueError("training needs at least two posed images")
    rng = np.random.default_rng(seed)
    train_imgs, train_cams = dataset.split("train")
    test_imgs, test_cams = dataset.split("test")
    bg = np.asarray(cfg.background, dtype=np.float64)

    if init is None:
        bset, meta = init_from_point_cloud(dataset.points, dataset.colors, cfg.init_count, cfg.add_sky, cfg.tex_size)
    else:
        bset, meta = init[0].copy(), init[1]
    meta.background = bg
    init_count = bset.count
    if cfg.max_billboards is not None and init_count > cfg.max_billboards:
        raise ValueError(f"initial count {init_count} exceeds max_billboards {cfg.max_billboards}")

    adam = Adam(bset.params())
    pattern = gaussian_pattern_texture(bset.tex_size)
    log = _MetricsLog(log_path)
    reports = []
    acc = np.zeros(3)
    acc_n = 0
    impact_acc = np.zeros(bset.count)
    order = []
    total = cfg.total_steps + cfg.sh_finetune_steps

    for step in range(1, total + 1):
        finetune = step > cfg.total_steps
        if not order:
            order = list(rng.permutation(len(train_imgs)))
        view = order.pop()
        gt, cam = train_imgs[view], train_cams[view]

        fb = render(bset, cam, bg, training=True)
        loss, dl_dimg, l1, s = image_loss(fb.color, gt, cfg.ssim_weight)
        impact = billboard_impact(fb)
        l_rgb, l_alpha, tex_loss, tex_grads = texture_reg_loss(
            bset, visibility_weight(impact, cfg.impact_cap), pattern, cfg.color_reg_weight, cfg.opacity_reg_weight)
        if not np.isfinite(loss + tex_loss):
            dump = _dump_state(bset, step, log_path)
            raise TrainingError(f"loss became non-finite at step {step} (state dumped to {dump})")

        grads = composite_backward(fb, dl_dimg, bset)
        if finetune:
            groups = ("sh",)
        elif step <= cfg.texture_freeze_steps:
            groups = tuple(k for k in PARAM_NAMES if k not in TEXTURE_GROUPS)
        else:
            groups = PARAM_NAMES
            for k in TEXTURE_GROUPS:
                grads[k] += tex_grads[k]
        adam.step(bset.params(), grads, cfg.group_lrs(min(step, cfg.total_steps)), groups=groups)
        bset.normalize_rotations()

        acc += (l1, 1.0 - s, tex_loss)
        acc_n += 1
        impact_acc += impact

        if (not finetune and step % cfg.densify_every == 0
                and cfg.densify_start <= step <= cfg.densify_end):
            rep = densify_step(bset, step, cfg, impact_acc, rng, init_count, meta)
            if rep.dead or rep.added:
                adam.resize(bset.count)
                adam.reset(rep.reset_ids)
            reports.append(rep)
            impact_acc = np.zeros(bset.count)

        if step % cfg.log_every == 0 or step == total:
            row = dict(zip(("l1", "ssim_loss", "texture_loss"), acc / max(acc_n, 1)))
            row["step"] = step
            row["count"] = bset.count
            if step == total and out_path is not None:
                save_scene(out_path, bset, meta)
                saved, _ = load_scene(out_path)
                row["psnr"] = evaluate(saved, test_imgs, test_cams, bg)
            else:
                row["psnr"] = evaluate(bset, test_imgs, test_cams, bg)
            log.add(row)
            logger.info("step %d  l1 %.4f  psnr %.2f  count %d", step, row["l1"], row["psnr"], row["count"])
            acc[:] = 0
            acc_n = 0

    if total == 0 and out_path is not None:
        save_scene(out_path, bset, meta)
    return TrainResult(bset, meta, log.rows, reports, adam.nan_skipped)
