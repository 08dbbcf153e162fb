"""Multi-task auxiliary training.

Builds conditioned batches from annotated and weakly-annotated samples,
applies the human-body masking options and the Bernoulli keep/drop masks,
and optimizes the condition branch while the backbone stays frozen.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import torch

from .backbone import BackboneConfig, TextCondition, encode_text, flow_interpolate, flow_loss, text_batch
from .branch import ConditionInputs, assemble
from .codec import VideoCodec
from .datakit import HOISample, object_box_track
from .guidance import SparseMotionGuidance, encode_guidance, rasterize
from .model import HOIVideoModel

MID_GRAY = 0.5
WRIST_DILATION = 0.05  # fraction of min(H, W)

BODY_ONLY = "body_only"
FULL_FRAME = "full_frame"
STRATEGIES = (BODY_ONLY, FULL_FRAME)


class TrainingError(RuntimeError):
    pass


@dataclass
class MaskingConfig:
    body_mask_strategy: str = BODY_ONLY
    p_motion_keep: float = 0.7
    p_bg_keep: float = 0.5
    force_first_frame_bg: bool = True
    force_endpoints_motion: bool = True

    def __post_init__(self):
        if self.body_mask_strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.body_mask_strategy!r}")
        for name in ("p_motion_keep", "p_bg_keep"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {p}")


@dataclass
class TrainBatch:
    z0: torch.Tensor  # (B, T', C, H', W')
    z1: torch.Tensor
    t: torch.Tensor  # (B,)
    text: list[TextCondition]
    inputs: ConditionInputs
    sample_ids: list[str]
    masks_applied: list[dict]


# -- condition construction ------------------------------------------------------


def select_object_reference(object_masks: np.ndarray, rng: np.random.Generator) -> int:
    """Pick a reference frame favoring low occlusion.

    Restricted to the top quartile of frames by visible mask area (ties at the
    cutoff included), then sampled with probability proportional to area.
    """
    areas = object_masks.reshape(object_masks.shape[0], -1).sum(axis=1).astype(np.float64)
    if not areas.any():
        raise ValueError("object masks are empty in every frame")
    k = max(1, math.ceil(len(areas) / 4))
    cutoff = np.sort(areas)[::-1][k - 1]
    candidates = np.nonzero(areas >= cutoff)[0]
    weights = areas[candidates] / areas[candidates].sum()
    return int(rng.choice(candidates, p=weights))


def _wrist_disc_mask(shape: tuple[int, int], points, radius: float) -> np.ndarray:
    h, w = shape
    mask = np.zeros((h, w), dtype=bool)
    yy, xx = np.mgrid[0:h, 0:w]
    for pt in points:
        if pt is None:
            continue
        px, py = pt[0] * w, pt[1] * h
        mask |= (xx - px) ** 2 + (yy - py) ** 2 <= radius * radius
    return mask


def visual_reference_frame(sample: HOISample) -> np.ndarray:
    """First frame with the interaction region (object + dilated wrists) grayed."""
    frame = sample.frames[0].copy()
    h, w = frame.shape[:2]
    region = np.zeros((h, w), dtype=bool)
    if sample.object_masks is not None:
        region |= sample.object_masks[0]
    radius = WRIST_DILATION * min(h, w)
    points = [pts[0] for pts in sample.wrists.values() if pts]
    region |= _wrist_disc_mask((h, w), points, radius)
    frame[region] = MID_GRAY
    return frame


def make_visual_reference(sample: HOISample, codec: VideoCodec) -> np.ndarray:
    return codec.encode(visual_reference_frame(sample)[None])


def object_reference_frame(sample: HOISample, frame_index: int) -> np.ndarray:
    """Selected frame with everything but the object set to mid-gray."""
    if sample.object_masks is None:
        raise ValueError("sample has no object annotation")
    frame = np.full_like(sample.frames[frame_index], MID_GRAY)
    mask = sample.object_masks[frame_index]
    frame[mask] = sample.frames[frame_index][mask]
    return frame


def background_frames(sample: HOISample, strategy: str) -> np.ndarray:
    """Masked video used as the inpainting condition."""
    if strategy == FULL_FRAME:
        return np.full_like(sample.frames, MID_GRAY)
    if strategy != BODY_ONLY:
        raise ValueError(f"unknown strategy {strategy!r}")
    if sample.human_masks is None:
        raise ValueError("body_only masking needs human masks")
    frames = sample.frames.copy()
    body = sample.human_masks.copy()
    if sample.head_masks is not None:
        body &= ~sample.head_masks  # keep the head visible
    frames[body] = MID_GRAY
    return frames


def make_background_condition(sample: HOISample, strategy: str, codec: VideoCodec) -> np.ndarray:
    return codec.encode(background_frames(sample, strategy))


def guidance_from_sample(sample: HOISample) -> SparseMotionGuidance:
    """Dense guidance: wrist tracks plus the tight object-box track when annotated."""
    boxes = object_box_track(sample) if sample.has_object_annotation else None
    return SparseMotionGuidance.from_dense_tracks(
        canvas=sample.canvas, wrist_points=sample.wrists, object_boxes=boxes,
    )


def sample_multitask_mask(
    t_latent: int, cfg: MaskingConfig, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Independent per-latent-frame Bernoulli keep masks for motion and bg."""
    motion = (rng.random(t_latent) < cfg.p_motion_keep).astype(np.float32)
    bg = (rng.random(t_latent) < cfg.p_bg_keep).astype(np.float32)
    if cfg.force_first_frame_bg:
        bg[0] = 1.0
    if cfg.force_endpoints_motion:
        motion[0] = 1.0
        motion[-1] = 1.0
    return motion, bg


def build_batch(
    sample: HOISample,
    cfg: MaskingConfig,
    codec: VideoCodec,
    text_config: BackboneConfig,
    rng: np.random.Generator,
) -> TrainBatch:
    """Assemble one training example (batch of one; collate to stack)."""
    z0 = codec.encode(sample.frames)
    t_lat = z0.shape[0]
    z1 = rng.standard_normal(z0.shape).astype(np.float32)
    t = float(rng.random())

    if sample.has_object_annotation:
        ref_idx = select_object_reference(sample.object_masks, rng)
        c_object = codec.encode(object_reference_frame(sample, ref_idx)[None])
    else:
        ref_idx = None
        h, w = sample.frames.shape[1:3]
        c_object = np.zeros(codec.latent_shape(1, h, w), dtype=np.float32)

    gv = rasterize(guidance_from_sample(sample))
    c_motion = encode_guidance(gv, codec)
    c_bg = make_background_condition(sample, cfg.body_mask_strategy, codec)
    c_visual = make_visual_reference(sample, codec)

    motion_keep, bg_keep = sample_multitask_mask(t_lat, cfg, rng)
    c_motion = c_motion * motion_keep[:, None, None, None]
    c_bg = c_bg * bg_keep[:, None, None, None]

    as_t = lambda a: torch.from_numpy(np.ascontiguousarray(a, dtype=np.float32))
    inputs = ConditionInputs(
        c_object=as_t(c_object)[None],
        c_motion=as_t(c_motion)[None],
        c_bg=as_t(c_bg)[None],
        c_visual=as_t(c_visual)[None],
    )
    return TrainBatch(
        z0=as_t(z0)[None],
        z1=as_t(z1)[None],
        t=torch.tensor([t], dtype=torch.float32),
        text=[encode_text(sample.caption, text_config)],
        inputs=inputs,
        sample_ids=[sample.sample_id],
        masks_applied=[{
            "strategy": cfg.body_mask_strategy,
            "motion_keep": motion_keep.tolist(),
            "bg_keep": bg_keep.tolist(),
            "object_reference_frame": ref_idx,
        }],
    )


def collate(batches: Sequence[TrainBatch]) -> TrainBatch:
    cat = lambda name: torch.cat([getattr(b, name) for b in batches], dim=0)
    inputs = ConditionInputs(
        c_object=torch.cat([b.inputs.c_object for b in batches]),
        c_motion=torch.cat([b.inputs.c_motion for b in batches]),
        c_bg=torch.cat([b.inputs.c_bg for b in batches]),
        c_visual=torch.cat([b.inputs.c_visual for b in batches]),
    )
    return TrainBatch(
        z0=cat("z0"), z1=cat("z1"), t=cat("t"),
        text=[t for b in batches for t in b.text],
        inputs=inputs,
        sample_ids=[s for b in batches for s in b.sample_ids],
        masks_applied=[m for b in batches for m in b.masks_applied],
    )


# -- optimization ------------------------------------------------------------------


def train_step(model: HOIVideoModel, batch: TrainBatch, optimizer: torch.optim.Optimizer) -> float:
    """One gradient step on the condition branch; the backbone must be frozen."""
    if any(p.requires_grad for p in model.backbone.parameters()):
        raise TrainingError("backbone must be frozen before branch training")
    zt = flow_interpolate(batch.z0, batch.z1, batch.t)
    ids, mask = text_batch(batch.text)
    xc = assemble(batch.inputs)
    v_hat = model(zt, ids, mask, batch.t, xc=xc)
    loss = flow_loss(v_hat, batch.z0, batch.z1)
    if not torch.isfinite(loss):
        raise TrainingError(
            f"non-finite loss {loss.item()} on samples {batch.sample_ids} "
            f"(t={batch.t.tolist()})"
        )
    optimizer.zero_grad(set_to_none=True)
    loss.backward()
    optimizer.step()
    return float(loss.detach())


@dataclass
class TrainConfig:
    steps: int = 500
    batch_size: int = 4
    learning_rate: float = 1e-5  # production default; toy runs override
    seed: int = 0
    hoi_weak_ratio: tuple[int, int] = (2, 1)
    strategy_probs: tuple[float, float] = (0.5, 0.5)  # body_only, full_frame
    p_motion_keep: float = 0.7
    p_bg_keep: float = 0.5
    force_first_frame_bg: bool = True
    force_endpoints_motion: bool = True
    log_path: Optional[str] = None


class Trainer:
    """Seeded branch-training loop over in-memory samples."""

    def __init__(
        self,
        model: HOIVideoModel,
        codec: VideoCodec,
        hoi_samples: Sequence[HOISample],
        weak_samples: Sequence[HOISample],
        config: TrainConfig,
    ):
        if not hoi_samples and not weak_samples:
            raise TrainingError("no training samples")
        self.model = model
        self.codec = codec
        self.hoi_samples = list(hoi_samples)
        self.weak_samples = list(weak_samples)
        self.config = config
        self.rng = np.random.default_rng(config.seed)
        model.freeze_backbone()
        self.optimizer = torch.optim.Adam(
            model.branch.parameters(), lr=config.learning_rate
        )
        self.losses: list[float] = []

    def _pick_sample(self) -> HOISample:
        a, b = self.config.hoi_weak_ratio
        pool = self.hoi_samples
        if self.weak_samples and (not self.hoi_samples or self.rng.random() < b / (a + b)):
            pool = self.weak_samples
        return pool[int(self.rng.integers(len(pool)))]

    def _masking_config(self) -> MaskingConfig:
        p_body, _ = self.config.strategy_probs
        strategy = BODY_ONLY if self.rng.random() < p_body else FULL_FRAME
        return MaskingConfig(
            body_mask_strategy=strategy,
            p_motion_keep=self.config.p_motion_keep,
            p_bg_keep=self.config.p_bg_keep,
            force_first_frame_bg=self.config.force_first_frame_bg,
            force_endpoints_motion=self.config.force_endpoints_motion,
        )

    def build_step_batch(self) -> TrainBatch:
        parts = []
        for _ in range(self.config.batch_size):
            sample = self._pick_sample()
            parts.append(build_batch(
                sample, self._masking_config(), self.codec,
                self.model.backbone_config, self.rng,
            ))
        return collate(parts)

    def run(self, steps: Optional[int] = None) -> list[float]:
        steps = self.config.steps if steps is None else steps
        log_fh = open(self.config.log_path, "a") if self.config.log_path else None
        try:
            for step in range(steps):
                start = time.perf_counter()
                loss = train_step(self.model, self.build_step_batch(), self.optimizer)
                self.losses.append(loss)
                if log_fh:
                    log_fh.write(json.dumps({
                        "step": step, "loss": loss,
                        "lr": self.config.learning_rate,
                        "seconds": round(time.perf_counter() - start, 4),
                    }) + "\n")
                    log_fh.flush()
        finally:
            if log_fh:
                log_fh.close()
        return self.losses


# -- backbone pretraining ------------------------------------------------------------
#
# The production system freezes a large pretrained T2V model; here the small
# backbone is trained from scratch on the same clips (plain text-conditioned
# flow matching, no condition branch) before being frozen.


def pretrain_backbone_step(
    model: HOIVideoModel,
    z0: torch.Tensor,
    z1: torch.Tensor,
    t: torch.Tensor,
    text: list[TextCondition],
    optimizer: torch.optim.Optimizer,
) -> float:
    zt = flow_interpolate(z0, z1, t)
    ids, mask = text_batch(text)
    v_hat = model.backbone(zt, ids, mask, t)
    loss = flow_loss(v_hat, z0, z1)
    if not torch.isfinite(loss):
        raise TrainingError(f"non-finite pretraining loss {loss.item()}")
    optimizer.zero_grad(set_to_none=True)
    loss.backward()
    optimizer.step()
    return float(loss.detach())


def pretrain_backbone(
    model: HOIVideoModel,
    codec: VideoCodec,
    samples: Sequence[HOISample],
    steps: int,
    batch_size: int = 4,
    learning_rate: float = 1e-3,
    seed: int = 0,
    log_path: Optional[str] = None,
) -> list[float]:
    rng = np.random.default_rng(seed)
    latents = [codec.encode(s.frames) for s in samples]
    texts = [encode_text(s.caption, model.backbone_config) for s in samples]
    for p in model.backbone.parameters():
        p.requires_grad_(True)
    optimizer = torch.optim.Adam(model.backbone.parameters(), lr=learning_rate)
    losses = []
    log_fh = open(log_path, "a") if log_path else None
    try:
        for step in range(steps):
            idx = rng.integers(len(samples), size=batch_size)
            z0 = torch.from_numpy(np.stack([latents[i] for i in idx]))
            z1 = torch.from_numpy(rng.standard_normal(z0.shape).astype(np.float32))
            t = torch.from_numpy(rng.random(batch_size).astype(np.float32))
            loss = pretrain_backbone_step(
                model, z0, z1, t, [texts[i] for i in idx], optimizer
            )
            losses.append(loss)
            if log_fh:
                log_fh.write(json.dumps({"step": step, "loss": loss, "phase": "backbone"}) + "\n")
                log_fh.flush()
    finally:
        if log_fh:
            log_fh.close()
    model.freeze_backbone()
    return losses
