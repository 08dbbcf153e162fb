"""Video <-> latent codec.

A fixed, seeded orthonormal patch transform stands in for a learned 3D-VAE.
The first frame is encoded alone; every following group of ``temporal_stride``
frames collapses into one latent frame.  In full-rank mode the transform is
exactly invertible, which keeps guidance-adherence measurements lossless; in
projected mode only the first ``latent_channels`` basis rows are retained.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

LATENT_MAGIC = 0x4C56544E  # 'NTVL' little-endian
LATENT_VERSION = 1


class CodecError(ValueError):
    pass


@dataclass(frozen=True)
class CodecConfig:
    temporal_stride: int = 4
    spatial_stride: int = 8
    # None -> full rank (channels == patch dimension, exactly invertible)
    latent_channels: int | None = None
    seed: int = 1234

    @property
    def patch_dim(self) -> int:
        return self.spatial_stride * self.spatial_stride * 3 * self.temporal_stride

    @property
    def first_frame_patch_dim(self) -> int:
        return self.spatial_stride * self.spatial_stride * 3

    @property
    def channels(self) -> int:
        return self.patch_dim if self.latent_channels is None else self.latent_channels


class VideoCodec:
    """Deterministic linear encoder/decoder with Wan-style strides."""

    def __init__(self, config: CodecConfig | None = None):
        self.config = config or CodecConfig()
        cfg = self.config
        if cfg.temporal_stride < 1 or cfg.spatial_stride < 1:
            raise CodecError("strides must be positive")
        if cfg.channels < 1 or cfg.channels > cfg.patch_dim:
            raise CodecError(
                f"latent_channels must lie in [1, {cfg.patch_dim}], got {cfg.channels}"
            )
        rng = np.random.default_rng(cfg.seed)
        basis = _orthonormal(rng, cfg.patch_dim)
        basis0 = _orthonormal(rng, cfg.first_frame_patch_dim)
        self._w = basis[: cfg.channels]  # (C, D) rows orthonormal
        c0 = min(cfg.channels, cfg.first_frame_patch_dim)
        self._w0 = basis0[:c0]  # (C0, D0)

    # -- shape bookkeeping ---------------------------------------------------

    def latent_shape(self, num_frames: int, height: int, width: int) -> tuple[int, int, int, int]:
        cfg = self.config
        self._check_video_shape(num_frames, height, width)
        t_lat = 1 + (num_frames - 1) // cfg.temporal_stride
        return (t_lat, cfg.channels, height // cfg.spatial_stride, width // cfg.spatial_stride)

    def pixel_frames_for_latent(self, t_lat: int) -> int:
        return 1 + (t_lat - 1) * self.config.temporal_stride

    def _check_video_shape(self, num_frames: int, height: int, width: int) -> None:
        cfg = self.config
        if num_frames < 1 or (num_frames - 1) % cfg.temporal_stride != 0:
            raise CodecError(
                f"frame count {num_frames} must be 1 mod {cfg.temporal_stride}"
            )
        if height % cfg.spatial_stride or width % cfg.spatial_stride:
            raise CodecError(
                f"frame dims {height}x{width} must be divisible by {cfg.spatial_stride}"
            )

    # -- transform -----------------------------------------------------------

    def encode(self, video: np.ndarray) -> np.ndarray:
        """(T, H, W, 3) float video -> (T', C, H', W') latent."""
        if video.ndim != 4 or video.shape[-1] != 3:
            raise CodecError(f"expected (T, H, W, 3) video, got {video.shape}")
        t, h, w, _ = video.shape
        self._check_video_shape(t, h, w)
        cfg = self.config
        q, s = cfg.temporal_stride, cfg.spatial_stride
        hl, wl = h // s, w // s
        video = np.asarray(video, dtype=np.float64)

        first = _patchify_frame(video[0], s)  # (H', W', D0)
        z0 = first @ self._w0.T
        if z0.shape[-1] < cfg.channels:
            pad = np.zeros((hl, wl, cfg.channels - z0.shape[-1]))
            z0 = np.concatenate([z0, pad], axis=-1)
        frames = [z0]

        if t > 1:
            groups = video[1:].reshape(-1, q, hl, s, wl, s, 3)
            # patch layout (t, y, x, channel) per spatial cell
            patches = groups.transpose(0, 2, 4, 1, 3, 5, 6).reshape(-1, hl, wl, cfg.patch_dim)
            frames.extend(patches @ self._w.T)

        z = np.stack(frames, axis=0).transpose(0, 3, 1, 2)
        return np.ascontiguousarray(z.astype(np.float32))

    def decode(self, z: np.ndarray, clamp: bool = False) -> np.ndarray:
        """(T', C, H', W') latent -> (T, H, W, 3) video (unclamped by default)."""
        cfg = self.config
        if z.ndim != 4 or z.shape[1] != cfg.channels:
            raise CodecError(f"expected (T', {cfg.channels}, H', W') latent, got {z.shape}")
        t_lat, _, hl, wl = z.shape
        q, s = cfg.temporal_stride, cfg.spatial_stride
        z = np.asarray(z, dtype=np.float64).transpose(0, 2, 3, 1)  # (T', H', W', C)

        c0 = self._w0.shape[0]
        first = _unpatchify_frame(z[0, :, :, :c0] @ self._w0, s)
        parts = [first[None]]
        if t_lat > 1:
            patches = z[1:] @ self._w  # (T'-1, H', W', D)
            groups = patches.reshape(-1, hl, wl, q, s, s, 3).transpose(0, 3, 1, 4, 2, 5, 6)
            parts.append(groups.reshape(-1, hl * s, wl * s, 3))
        out = np.concatenate(parts, axis=0).astype(np.float32)
        if clamp:
            out = np.clip(out, 0.0, 1.0)
        return out


def _orthonormal(rng: np.random.Generator, dim: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((dim, dim)))
    # fix signs so the basis is unique regardless of LAPACK build
    q = q * np.sign(np.diag(r))
    return q.T


def _patchify_frame(frame: np.ndarray, s: int) -> np.ndarray:
    h, w, _ = frame.shape
    hl, wl = h // s, w // s
    return frame.reshape(hl, s, wl, s, 3).transpose(0, 2, 1, 3, 4).reshape(hl, wl, -1)


def _unpatchify_frame(patches: np.ndarray, s: int) -> np.ndarray:
    hl, wl, _ = patches.shape
    return (
        patches.reshape(hl, wl, s, s, 3)
        .transpose(0, 2, 1, 3, 4)
        .reshape(hl * s, wl * s, 3)
    )


# -- persistence --------------------------------------------------------------


def save_latent(path: str | Path, z: np.ndarray) -> None:
    z = np.asarray(z, dtype=np.float32)
    if z.ndim != 4:
        raise CodecError(f"latent must be 4D, got shape {z.shape}")
    header = struct.pack("<8i", LATENT_MAGIC, LATENT_VERSION, *z.shape, 0, 0)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(z.astype("<f4").tobytes())


def load_latent(path: str | Path) -> np.ndarray:
    with open(path, "rb") as fh:
        header = fh.read(32)
        if len(header) != 32:
            raise CodecError(f"{path}: truncated latent header")
        magic, version, t, c, h, w, _, _ = struct.unpack("<8i", header)
        if magic != LATENT_MAGIC:
            raise CodecError(f"{path}: bad magic {magic:#x}")
        if version != LATENT_VERSION:
            raise CodecError(f"{path}: unsupported version {version}")
        data = np.frombuffer(fh.read(), dtype="<f4")
    expected = t * c * h * w
    if data.size != expected:
        raise CodecError(f"{path}: expected {expected} values, found {data.size}")
    return data.reshape(t, c, h, w).copy()


def save_video(path: str | Path, video: np.ndarray, fps: int = 25) -> None:
    """Videos persist as zero-padded PNG frames plus meta.json."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    video = np.clip(np.asarray(video, dtype=np.float32), 0.0, 1.0)
    t, h, w, _ = video.shape
    frames8 = np.round(video * 255.0).astype(np.uint8)
    for i in range(t):
        Image.fromarray(frames8[i]).save(path / f"{i:05d}.png")
    meta = {"fps": fps, "width": w, "height": h, "num_frames": t}
    (path / "meta.json").write_text(json.dumps(meta, indent=2))


def load_video(path: str | Path) -> tuple[np.ndarray, dict]:
    path = Path(path)
    meta = json.loads((path / "meta.json").read_text())
    frames = []
    for i in range(meta["num_frames"]):
        img = Image.open(path / f"{i:05d}.png").convert("RGB")
        frames.append(np.asarray(img, dtype=np.float32) / 255.0)
    return np.stack(frames, axis=0), meta
