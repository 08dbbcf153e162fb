"""Text-to-video flow-matching transformer.

Desk-scale DiT: latent cells are flattened to tokens, each layer applies
timestep-modulated self-attention, text cross-attention and an MLP.  Residual
tensors handed to :meth:`Backbone.forward` are added to the named layer's
output, which is the injection point used by the condition branch.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn


@dataclass(frozen=True)
class BackboneConfig:
    num_layers: int = 8
    d_model: int = 256
    num_heads: int = 4
    mlp_ratio: int = 4
    latent_channels: int = 768
    d_text: int = 64
    vocab_size: int = 2048
    max_text_len: int = 24
    max_seq_len: int = 4096
    time_embed_dim: int = 256
    seed: int = 0

    def __post_init__(self):
        if self.d_model % self.num_heads:
            raise ValueError(
                f"d_model {self.d_model} must be divisible by heads {self.num_heads}"
            )


# -- text conditioning ---------------------------------------------------------


@dataclass
class TextCondition:
    token_ids: np.ndarray  # (N,) int64
    mask: np.ndarray  # (N,) bool

    @property
    def length(self) -> int:
        return int(self.mask.sum())


def _token_id(token: str, vocab_size: int) -> int:
    digest = hashlib.sha1(token.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") % vocab_size


def encode_text(prompt: str, config: BackboneConfig) -> TextCondition:
    """Deterministic hashed-vocabulary tokenization (no pretrained LM)."""
    tokens = [t for t in "".join(
        c if c.isalnum() else " " for c in prompt.lower()
    ).split() if t][: config.max_text_len]
    ids = np.zeros(config.max_text_len, dtype=np.int64)
    mask = np.zeros(config.max_text_len, dtype=bool)
    for i, tok in enumerate(tokens):
        ids[i] = _token_id(tok, config.vocab_size)
        mask[i] = True
    return TextCondition(token_ids=ids, mask=mask)


# -- flow matching primitives ---------------------------------------------------


def flow_interpolate(z0: torch.Tensor, z1: torch.Tensor, t) -> torch.Tensor:
    """Linear path Z_t = (1 - t) * z0 + t * z1."""
    if z0.shape != z1.shape:
        raise ValueError(f"shape mismatch: {tuple(z0.shape)} vs {tuple(z1.shape)}")
    t = torch.as_tensor(t, dtype=z0.dtype, device=z0.device)
    if torch.any(t < 0) or torch.any(t > 1):
        raise ValueError("t must lie in [0, 1]")
    while t.dim() < z0.dim():
        t = t.unsqueeze(-1)
    return (1.0 - t) * z0 + t * z1


def flow_loss(v_hat: torch.Tensor, z0: torch.Tensor, z1: torch.Tensor) -> torch.Tensor:
    """MSE against the linear-path velocity target z1 - z0."""
    if v_hat.shape != z0.shape or z0.shape != z1.shape:
        raise ValueError(
            f"shape mismatch: {tuple(v_hat.shape)}, {tuple(z0.shape)}, {tuple(z1.shape)}"
        )
    return torch.mean((v_hat - (z1 - z0)) ** 2)


def euler_sample(velocity_fn, z1: torch.Tensor, steps: int) -> torch.Tensor:
    """Integrate dZ/dt = -v from t=1 to t=0 on a uniform grid."""
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    z = z1.clone()
    dt = 1.0 / steps
    for k in range(steps):
        t = 1.0 - k * dt
        z = z - dt * velocity_fn(z, t)
    return z


# -- position / timestep embeddings ---------------------------------------------


def _sincos_1d(positions: torch.Tensor, dim: int) -> torch.Tensor:
    half = dim // 2
    freqs = torch.exp(
        -math.log(10000.0) * torch.arange(half, dtype=positions.dtype) / max(half, 1)
    )
    args = positions[:, None] * freqs[None, :]
    return torch.cat([torch.sin(args), torch.cos(args)], dim=-1)


def grid_position_encoding(t: int, h: int, w: int, dim: int,
                           dtype=torch.float32) -> torch.Tensor:
    """Factorized (t, h, w) sinusoidal encoding for flattened latent cells."""
    d_t = (dim // 4) // 2 * 2
    d_h = ((dim - d_t) // 2) // 2 * 2
    d_w = d_h
    ar = lambda n: torch.arange(n, dtype=dtype)
    pe_t = _sincos_1d(ar(t), d_t)
    pe_h = _sincos_1d(ar(h), d_h)
    pe_w = _sincos_1d(ar(w), d_w)
    out = torch.zeros(t, h, w, dim, dtype=dtype)
    out[..., :d_t] = pe_t[:, None, None, :]
    out[..., d_t:d_t + d_h] = pe_h[None, :, None, :]
    out[..., d_t + d_h:d_t + d_h + d_w] = pe_w[None, None, :, :]
    return out.reshape(t * h * w, dim)


class TimestepEmbed(nn.Module):
    def __init__(self, dim: int):
        super().__init__()
        self.dim = dim
        self.net = nn.Sequential(nn.Linear(dim, dim), nn.SiLU(), nn.Linear(dim, dim))

    def forward(self, t: torch.Tensor) -> torch.Tensor:
        # t in [0, 1]; scaled so the sinusoid resolves fine steps
        emb = _sincos_1d(t.to(self.net[0].weight.dtype) * 1000.0, self.dim)
        return self.net(emb)


# -- attention -------------------------------------------------------------------


def scaled_attention(
    q: torch.Tensor,
    k: torch.Tensor,
    v: torch.Tensor,
    key_mask: torch.Tensor | None = None,
) -> torch.Tensor:
    """Plain softmax attention over (B, heads, N, d_head) tensors."""
    scale = 1.0 / math.sqrt(q.shape[-1])
    logits = torch.matmul(q, k.transpose(-2, -1)) * scale
    if key_mask is not None:
        logits = logits.masked_fill(~key_mask[:, None, None, :], float("-inf"))
    weights = torch.softmax(logits, dim=-1)
    return torch.matmul(weights, v)


def split_heads(x: torch.Tensor, heads: int) -> torch.Tensor:
    b, n, d = x.shape
    return x.view(b, n, heads, d // heads).transpose(1, 2)


def merge_heads(x: torch.Tensor) -> torch.Tensor:
    b, h, n, dh = x.shape
    return x.transpose(1, 2).reshape(b, n, h * dh)


class SelfAttention(nn.Module):
    def __init__(self, d_model: int, num_heads: int):
        super().__init__()
        self.num_heads = num_heads
        self.qkv = nn.Linear(d_model, 3 * d_model)
        self.proj = nn.Linear(d_model, d_model)

    def forward(self, x, object_mask: torch.Tensor | None = None,
                alpha: float | None = None) -> torch.Tensor:
        q, k, v = self.qkv(x).chunk(3, dim=-1)
        if alpha is not None and object_mask is not None:
            # stress object tokens by scaling their queries and keys
            scale = torch.where(
                object_mask, torch.as_tensor(alpha, dtype=x.dtype),
                torch.ones((), dtype=x.dtype),
            )[None, :, None]
            q = q * scale
            k = k * scale
        q, k, v = (split_heads(t, self.num_heads) for t in (q, k, v))
        return self.proj(merge_heads(scaled_attention(q, k, v)))


class CrossAttention(nn.Module):
    def __init__(self, d_model: int, d_text: int, num_heads: int):
        super().__init__()
        self.num_heads = num_heads
        self.to_q = nn.Linear(d_model, d_model)
        self.to_k = nn.Linear(d_text, d_model)
        self.to_v = nn.Linear(d_text, d_model)
        self.proj = nn.Linear(d_model, d_model)

    def forward(self, x, text, text_mask) -> torch.Tensor:
        q = split_heads(self.to_q(x), self.num_heads)
        k = split_heads(self.to_k(text), self.num_heads)
        v = split_heads(self.to_v(text), self.num_heads)
        return self.proj(merge_heads(scaled_attention(q, k, v, key_mask=text_mask)))


def _modulate(x, shift, scale):
    return x * (1.0 + scale[:, None, :]) + shift[:, None, :]


class TransformerLayer(nn.Module):
    """Self-attention -> text cross-attention -> MLP, with adaptive layer norm.

    Gates start at zero so an untrained stack is close to the identity; the
    same structure is cloned into the condition branch.
    """

    def __init__(self, d_model: int, num_heads: int, d_text: int, mlp_ratio: int,
                 time_dim: int):
        super().__init__()
        self.norm1 = nn.LayerNorm(d_model, elementwise_affine=False)
        self.attn = SelfAttention(d_model, num_heads)
        self.norm_x = nn.LayerNorm(d_model)
        self.cross = CrossAttention(d_model, d_text, num_heads)
        self.norm2 = nn.LayerNorm(d_model, elementwise_affine=False)
        hidden = d_model * mlp_ratio
        self.mlp = nn.Sequential(
            nn.Linear(d_model, hidden), nn.GELU(), nn.Linear(hidden, d_model)
        )
        self.modulation = nn.Linear(time_dim, 6 * d_model)
        nn.init.zeros_(self.modulation.weight)
        nn.init.zeros_(self.modulation.bias)

    def forward(self, x, text, text_mask, t_emb, object_mask=None, alpha=None):
        sh1, sc1, g1, sh2, sc2, g2 = self.modulation(t_emb).chunk(6, dim=-1)
        x = x + g1[:, None, :] * self.attn(
            _modulate(self.norm1(x), sh1, sc1), object_mask=object_mask, alpha=alpha
        )
        x = x + self.cross(self.norm_x(x), text, text_mask)
        x = x + g2[:, None, :] * self.mlp(_modulate(self.norm2(x), sh2, sc2))
        return x


# -- the backbone ----------------------------------------------------------------


class Backbone(nn.Module):
    """Frozen-after-pretraining T2V velocity predictor."""

    def __init__(self, config: BackboneConfig):
        super().__init__()
        self.config = config
        torch.manual_seed(config.seed)
        self.token_embed = nn.Linear(config.latent_channels, config.d_model)
        self.text_embed = nn.Embedding(config.vocab_size, config.d_text)
        self.time_embed = TimestepEmbed(config.time_embed_dim)
        self.layers = nn.ModuleList(
            TransformerLayer(config.d_model, config.num_heads, config.d_text,
                             config.mlp_ratio, config.time_embed_dim)
            for _ in range(config.num_layers)
        )
        self.final_norm = nn.LayerNorm(config.d_model, elementwise_affine=False)
        self.final_modulation = nn.Linear(config.time_embed_dim, 2 * config.d_model)
        nn.init.zeros_(self.final_modulation.weight)
        nn.init.zeros_(self.final_modulation.bias)
        self.head = nn.Linear(config.d_model, config.latent_channels)
        # small non-zero head: the backbone is trained from scratch, and a zero
        # head would block gradient flow into everything upstream
        nn.init.normal_(self.head.weight, std=0.02)
        nn.init.zeros_(self.head.bias)
        self._pos_cache: dict = {}

    # latent (B, T', C, H', W') <-> tokens (B, N, C)

    @staticmethod
    def tokenize(z: torch.Tensor) -> torch.Tensor:
        b, t, c, h, w = z.shape
        return z.permute(0, 1, 3, 4, 2).reshape(b, t * h * w, c)

    @staticmethod
    def untokenize(tokens: torch.Tensor, grid: tuple[int, int, int]) -> torch.Tensor:
        b = tokens.shape[0]
        t, h, w = grid
        return tokens.reshape(b, t, h, w, -1).permute(0, 1, 4, 2, 3)

    def position_encoding(self, grid: tuple[int, int, int], dtype) -> torch.Tensor:
        key = (grid, dtype)
        if key not in self._pos_cache:
            self._pos_cache[key] = grid_position_encoding(
                *grid, self.config.d_model, dtype=dtype
            )
        return self._pos_cache[key]

    def embed_text(self, token_ids: torch.Tensor) -> torch.Tensor:
        return self.text_embed(token_ids)

    def forward(
        self,
        zt: torch.Tensor,
        text_ids: torch.Tensor,
        text_mask: torch.Tensor,
        t: torch.Tensor,
        residuals: dict[int, torch.Tensor] | None = None,
    ) -> torch.Tensor:
        """Predict the velocity field for noised latent ``zt``.

        ``residuals`` maps layer index -> (B, N, d_model) tensor added to that
        layer's output.  With no residuals this is the plain T2V forward pass.
        """
        b, tl, c, hl, wl = zt.shape
        grid = (tl, hl, wl)
        n = tl * hl * wl
        if n > self.config.max_seq_len:
            raise ValueError(f"sequence length {n} exceeds max {self.config.max_seq_len}")
        if residuals:
            unknown = set(residuals) - set(range(self.config.num_layers))
            if unknown:
                raise KeyError(f"residuals reference unknown layers {sorted(unknown)}")

        x = self.token_embed(self.tokenize(zt))
        x = x + self.position_encoding(grid, x.dtype)[None]
        text = self.embed_text(text_ids)
        t = torch.as_tensor(t, dtype=x.dtype, device=x.device).reshape(-1)
        if t.shape[0] == 1 and b > 1:
            t = t.expand(b)
        t_emb = self.time_embed(t)

        for i, layer in enumerate(self.layers):
            x = layer(x, text, text_mask, t_emb)
            if residuals and i in residuals:
                x = x + residuals[i]

        shift, scale = self.final_modulation(t_emb).chunk(2, dim=-1)
        x = self.head(_modulate(self.final_norm(x), shift, scale))
        return self.untokenize(x, grid)

    def sample(
        self,
        z1: torch.Tensor,
        text_ids: torch.Tensor,
        text_mask: torch.Tensor,
        steps: int,
        residual_fn=None,
    ) -> torch.Tensor:
        """Euler integration from noise; ``residual_fn(t) -> residuals map``."""

        def velocity(z, t):
            res = residual_fn(t) if residual_fn is not None else None
            tt = torch.full((z.shape[0],), float(t), dtype=z.dtype, device=z.device)
            return self.forward(z, text_ids, text_mask, tt, residuals=res)

        with torch.no_grad():
            return euler_sample(velocity, z1, steps)


def text_batch(conditions: list[TextCondition], device=None) -> tuple[torch.Tensor, torch.Tensor]:
    ids = torch.as_tensor(np.stack([c.token_ids for c in conditions]), device=device)
    mask = torch.as_tensor(np.stack([c.mask for c in conditions]), device=device)
    return ids, mask
