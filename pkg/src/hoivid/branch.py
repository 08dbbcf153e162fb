"""Trainable condition branch.

Assembles the four conditional latents into one tagged token sequence,
runs transformer layers cloned from the frozen backbone with object-stressed
self-attention, and emits per-layer residuals for injection.  Output heads
are zero-initialized so an untrained branch leaves the backbone untouched.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .backbone import (
    Backbone,
    BackboneConfig,
    merge_heads,
    split_heads,
)

SEG_OBJECT = 0
SEG_MOTION_BG = 1
SEG_VISUAL = 2


@dataclass(frozen=True)
class BranchConfig:
    alpha: float = 8.0
    clone_fraction: float = 0.25
    seed: int = 7


@dataclass
class ConditionInputs:
    """The four conditional latents; object/visual are single latent frames."""

    c_object: torch.Tensor  # (B, 1, C, H, W); exactly zero when absent
    c_motion: torch.Tensor  # (B, T', C, H, W)
    c_bg: torch.Tensor  # (B, T', C, H, W)
    c_visual: torch.Tensor  # (B, 1, C, H, W)

    def __post_init__(self):
        if self.c_motion.shape != self.c_bg.shape:
            raise ValueError(
                f"c_motion {tuple(self.c_motion.shape)} and c_bg "
                f"{tuple(self.c_bg.shape)} must share shape"
            )
        for name in ("c_object", "c_visual"):
            t = getattr(self, name)
            if t.shape[1] != 1:
                raise ValueError(f"{name} must be a single latent frame, got {tuple(t.shape)}")
            if t.shape[2:] != self.c_motion.shape[2:]:
                raise ValueError(f"{name} spatial/channel dims disagree with c_motion")


@dataclass
class ConditionSequence:
    tokens: torch.Tensor  # (B, N_c, 2C)
    tags: np.ndarray  # (N_c,) int, SEG_* values
    n_motion: int  # motion sub-sequence length
    d_motion: int  # channel width of c_motion before concatenation
    grid: tuple[int, int, int]  # (T', H', W') of the motion/bg block

    @property
    def n_object(self) -> int:
        return int((self.tags == SEG_OBJECT).sum())

    @property
    def n_visual(self) -> int:
        return int((self.tags == SEG_VISUAL).sum())


def assemble(inputs: ConditionInputs) -> ConditionSequence:
    """Sequence-concatenate [object; motion+bg; visual] with doubled channels.

    Object and visual blocks are self-duplicated along channels so every token
    carries the same width as the motion/background concatenation.
    """
    b, t_lat, c, h, w = inputs.c_motion.shape
    flat = Backbone.tokenize
    obj = flat(torch.cat([inputs.c_object, inputs.c_object], dim=2))
    motion_bg = flat(torch.cat([inputs.c_motion, inputs.c_bg], dim=2))
    vis = flat(torch.cat([inputs.c_visual, inputs.c_visual], dim=2))
    tokens = torch.cat([obj, motion_bg, vis], dim=1)
    tags = np.concatenate([
        np.full(obj.shape[1], SEG_OBJECT),
        np.full(motion_bg.shape[1], SEG_MOTION_BG),
        np.full(vis.shape[1], SEG_VISUAL),
    ])
    return ConditionSequence(
        tokens=tokens, tags=tags, n_motion=motion_bg.shape[1], d_motion=c,
        grid=(t_lat, h, w),
    )


# -- object-stressed attention ---------------------------------------------------


def osa_prescale(q, k, v, object_mask: torch.Tensor, alpha: float) -> torch.Tensor:
    """Object-stressed attention by scaling object queries and keys by alpha.

    Tensors are (..., N, d); ``object_mask`` is (N,) bool.  Values are never
    scaled, so each output row stays inside the convex hull of the values.
    """
    if alpha <= 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    scale = torch.where(
        object_mask,
        torch.as_tensor(float(alpha), dtype=q.dtype),
        torch.ones((), dtype=q.dtype),
    ).unsqueeze(-1)
    q = q * scale
    k = k * scale
    logits = torch.matmul(q, k.transpose(-2, -1)) / math.sqrt(q.shape[-1])
    return torch.matmul(torch.softmax(logits, dim=-1), v)


def osa_block_gram(q, k, v, object_mask: torch.Tensor, alpha: float) -> torch.Tensor:
    """Reference implementation: scale the Gram-matrix blocks directly.

    Logits gain a factor alpha^2 on object-object pairs and alpha when exactly
    one side is an object token.  Kept as an independent cross-check of
    :func:`osa_prescale`.
    """
    if alpha <= 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    flags = object_mask.to(q.dtype)
    factor = float(alpha) ** (flags.unsqueeze(-1) + flags.unsqueeze(-2))
    logits = torch.matmul(q, k.transpose(-2, -1)) * factor / math.sqrt(q.shape[-1])
    return torch.matmul(torch.softmax(logits, dim=-1), v)


def object_stressed_attention(
    tokens: torch.Tensor,
    tags: np.ndarray,
    alpha: float,
    impl: str = "prescale",
) -> torch.Tensor:
    """Single-head attention over raw tokens (q = k = v = tokens)."""
    mask = torch.as_tensor(tags == SEG_OBJECT)
    fn = {"prescale": osa_prescale, "block_gram": osa_block_gram}[impl]
    return fn(tokens, tokens, tokens, mask, alpha)


# -- clone-layer selection --------------------------------------------------------


@dataclass(frozen=True)
class InjectionPlan:
    num_layers: int
    layers: tuple[int, ...]  # strictly increasing backbone layer indices

    def index(self, layer: int) -> int:
        return self.layers.index(layer)


def select_clone_layers(num_layers: int, fraction: float) -> InjectionPlan:
    """Evenly spaced layer subset: { floor(j * L / k) : j < k }, k = round(L * fraction)."""
    if not (0.0 < fraction <= 1.0):
        raise ValueError(f"fraction must lie in (0, 1], got {fraction}")
    k = round(num_layers * fraction)
    if k < 1:
        raise ValueError(f"L * fraction = {num_layers * fraction} selects no layers")
    layers = tuple(j * num_layers // k for j in range(k))
    return InjectionPlan(num_layers=num_layers, layers=layers)


# -- the branch -------------------------------------------------------------------


class ConditionBranch(nn.Module):
    """Cloned transformer layers over the condition sequence.

    Layer j is initialized from backbone layer ``plan.layers[j]`` and runs
    object-stressed self-attention.  After each cloned layer, the motion/bg
    token slice (one-to-one with video latent cells) passes through a
    zero-initialized head to become the residual for that backbone layer.
    """

    def __init__(self, backbone: Backbone, config: BranchConfig):
        super().__init__()
        self.config = config
        bb_cfg = backbone.config
        self.backbone_config = bb_cfg
        self.plan = select_clone_layers(bb_cfg.num_layers, config.clone_fraction)
        torch.manual_seed(config.seed)
        d = bb_cfg.d_model
        self.token_embed = nn.Linear(2 * bb_cfg.latent_channels, d)
        self.segment_embed = nn.Embedding(3, d)
        nn.init.normal_(self.segment_embed.weight, std=0.02)
        self.layers = nn.ModuleList(
            copy.deepcopy(backbone.layers[i]) for i in self.plan.layers
        )
        self.out_heads = nn.ModuleList(nn.Linear(d, d) for _ in self.plan.layers)
        for head in self.out_heads:
            nn.init.zeros_(head.weight)
            nn.init.zeros_(head.bias)
        self._pos = backbone.position_encoding  # shared positional scheme

    def forward(
        self,
        xc: ConditionSequence,
        text: torch.Tensor,
        text_mask: torch.Tensor,
        t_emb: torch.Tensor,
        alpha: float | None = None,
    ) -> dict[int, torch.Tensor]:
        """Run cloned layers; return {backbone layer index: residual tokens}."""
        alpha = self.config.alpha if alpha is None else alpha
        if alpha <= 0:
            raise ValueError(f"alpha must be positive, got {alpha}")
        tags = torch.as_tensor(xc.tags, dtype=torch.long)
        object_mask = torch.as_tensor(xc.tags == SEG_OBJECT)
        x = self.token_embed(xc.tokens)
        x = x + self.segment_embed(tags)[None]
        motion_pos = self._pos(xc.grid, x.dtype)
        single_pos = self._pos((1,) + xc.grid[1:], x.dtype)
        pos = torch.cat([single_pos, motion_pos, single_pos], dim=0)
        x = x + pos[None]
        motion_slice = slice(xc.n_object, xc.n_object + xc.n_motion)

        residuals: dict[int, torch.Tensor] = {}
        for j, layer in enumerate(self.layers):
            x = layer(x, text, text_mask, t_emb, object_mask=object_mask, alpha=alpha)
            residuals[self.plan.layers[j]] = self.out_heads[j](x[:, motion_slice, :])
        return residuals
