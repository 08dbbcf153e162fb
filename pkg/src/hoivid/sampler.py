"""Inference: object replacement, insertion, environmental interaction,
single-image animation, and recursive long-video generation.

Conditions the request does not supply are exactly zeroed or dropped via the
keep masks; nothing is synthesized silently.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import torch
from PIL import Image

from .backbone import TextCondition, encode_text, text_batch
from .branch import ConditionInputs, assemble
from .codec import VideoCodec, load_video
from .datakit import HOISample, object_box_track
from .guidance import (
    SparseMotionGuidance,
    box_pixel_rect,
    encode_guidance,
    parse_guidance_json,
    rasterize,
)
from .model import HOIVideoModel
from .trainer import MID_GRAY, WRIST_DILATION

REPLACEMENT = "replacement"
INSERTION = "insertion"
ENVIRONMENTAL = "environmental"
ANIMATE = "animate_from_image"
MODES = (REPLACEMENT, INSERTION, ENVIRONMENTAL, ANIMATE)


class RequestError(ValueError):
    pass


@dataclass
class GenerationRequest:
    mode: str
    visual_reference: np.ndarray  # (H, W, 3)
    prompt: str = ""
    object_reference: Optional[np.ndarray] = None  # (H, W, 3)
    guidance: Optional[SparseMotionGuidance] = None
    template: Optional[np.ndarray] = None  # (T, H, W, 3)
    template_object_masks: Optional[np.ndarray] = None  # (T, H, W) bool
    template_wrists: Optional[dict] = None
    num_frames: Optional[int] = None
    steps: int = 25
    seed: int = 0
    object_scale: float = 1.0  # user-controlled fit for replacement boxes


@dataclass
class LongVideoRequest:
    request: GenerationRequest
    total_frames: int
    clip_frames: int
    tail_frames: int = 5  # generated frames carried into the next clip's background


@dataclass
class PreparedConditions:
    inputs: ConditionInputs
    text: TextCondition
    bg_frames: np.ndarray  # masked background video before encoding
    motion_keep: np.ndarray
    bg_keep: np.ndarray
    guidance: Optional[SparseMotionGuidance]
    num_frames: int


def validate_request(req: GenerationRequest) -> None:
    problems = []
    if req.mode not in MODES:
        problems.append(f"unknown mode {req.mode!r}")
    else:
        if req.mode == REPLACEMENT:
            if req.template is None:
                problems.append("replacement requires a template video")
            if req.object_reference is None:
                problems.append("replacement requires an object reference")
            if req.template_object_masks is None:
                problems.append("replacement requires template object masks")
        if req.mode in (INSERTION, ENVIRONMENTAL) and req.guidance is None:
            problems.append(f"{req.mode} requires sparse motion guidance")
    if req.visual_reference is None:
        problems.append("visual reference is required")
    if _resolve_num_frames(req, strict=False) is None:
        problems.append("frame count unresolved: supply guidance, template, or num_frames")
    if problems:
        raise RequestError("; ".join(problems))


def _resolve_num_frames(req: GenerationRequest, strict: bool = True) -> Optional[int]:
    candidates = []
    if req.template is not None:
        candidates.append(req.template.shape[0])
    if req.guidance is not None:
        candidates.append(req.guidance.num_frames)
    if req.num_frames is not None:
        candidates.append(req.num_frames)
    if not candidates:
        return None
    if strict and len(set(candidates)) > 1:
        raise RequestError(f"frame counts disagree: {candidates}")
    return candidates[0]


def _dilated_region(shape, boxes_px, points, radius) -> np.ndarray:
    h, w = shape
    mask = np.zeros((h, w), dtype=bool)
    for x0, y0, x1, y1 in boxes_px:
        r = int(round(radius))
        mask[max(0, y0 - r):min(h, y1 + r), max(0, x0 - r):min(w, x1 + r)] = True
    if points:
        yy, xx = np.mgrid[0:h, 0:w]
        for px, py in points:
            mask |= (xx - px) ** 2 + (yy - py) ** 2 <= radius * radius
    return mask


def _background_for_mode(req: GenerationRequest, num_frames: int) -> tuple[np.ndarray, np.ndarray]:
    """Mode-specific masked background video and its latent keep mask (pixel-frame
    keep decisions are made here; the caller converts to latent frames)."""
    h, w = req.visual_reference.shape[:2]
    if req.mode == ANIMATE:
        frames = np.full((num_frames, h, w, 3), MID_GRAY, dtype=np.float32)
        frames[0] = req.visual_reference
        keep = np.zeros(num_frames, dtype=np.float32)
        keep[0] = 1.0
        return frames, keep

    template = req.template
    if template is None:
        template = np.broadcast_to(req.visual_reference[None], (num_frames, h, w, 3)).copy()
    frames = template.astype(np.float32).copy()
    keep = np.ones(num_frames, dtype=np.float32)
    radius = WRIST_DILATION * min(h, w)

    if req.mode == REPLACEMENT:
        frames[req.template_object_masks] = MID_GRAY
        return frames, keep

    # insertion / environmental: gray the guidance-swept region frame by frame
    g = req.guidance
    for f in range(num_frames):
        boxes = []
        points = []
        if g.object_box is not None and f < g.object_box.length:
            box = g.object_box.boxes[f]
            if box is not None:
                boxes.append(box_pixel_rect(box, (w, h)))
        if req.mode == ENVIRONMENTAL:
            for track in g.wrists:
                if f < track.length and track.points[f] is not None:
                    x, y = track.points[f]
                    points.append((x * w, y * h))
        region = _dilated_region((h, w), boxes, points, radius)
        frames[f][region] = MID_GRAY
    return frames, keep


def _replacement_guidance(req: GenerationRequest, num_frames: int) -> SparseMotionGuidance:
    """Auto-derive guidance from template annotations, applying the user scale."""
    h, w = req.visual_reference.shape[:2]
    dummy = HOISample(
        sample_id="template", frames=req.template, caption="",
        wrists=req.template_wrists or {},
        human_masks=np.zeros(req.template.shape[:3], dtype=bool),
        object_masks=req.template_object_masks,
        has_object_annotation=True,
    )
    boxes = object_box_track(dummy)
    scaled = [
        None if b is None else (b[0], b[1], b[2] * req.object_scale, b[3] * req.object_scale)
        for b in boxes
    ]
    return SparseMotionGuidance.from_dense_tracks(
        (w, h), req.template_wrists or {}, scaled
    )


def prepare_conditions(
    req: GenerationRequest, codec: VideoCodec, text_config
) -> PreparedConditions:
    validate_request(req)
    num_frames = _resolve_num_frames(req)
    codec.latent_shape(num_frames, *req.visual_reference.shape[:2])  # shape guard
    h, w = req.visual_reference.shape[:2]
    t_lat = codec.latent_shape(num_frames, h, w)[0]

    guidance = req.guidance
    if guidance is None and req.mode == REPLACEMENT:
        guidance = _replacement_guidance(req, num_frames)

    if guidance is not None:
        c_motion = encode_guidance(rasterize(guidance), codec)
        motion_keep = np.ones(t_lat, dtype=np.float32)
    else:
        c_motion = np.zeros(codec.latent_shape(num_frames, h, w), dtype=np.float32)
        motion_keep = np.zeros(t_lat, dtype=np.float32)

    bg_frames, pixel_keep = _background_for_mode(req, num_frames)
    bg_keep = _pixel_to_latent_keep(pixel_keep, codec)
    c_bg = codec.encode(bg_frames) * bg_keep[:, None, None, None]
    c_motion = c_motion * motion_keep[:, None, None, None]

    if req.object_reference is not None:
        c_object = codec.encode(req.object_reference[None])
    else:
        c_object = np.zeros(codec.latent_shape(1, h, w), dtype=np.float32)
    c_visual = codec.encode(req.visual_reference[None])

    as_t = lambda a: torch.from_numpy(np.ascontiguousarray(a, dtype=np.float32))[None]
    inputs = ConditionInputs(
        c_object=as_t(c_object), c_motion=as_t(c_motion),
        c_bg=as_t(c_bg), c_visual=as_t(c_visual),
    )
    text = encode_text(req.prompt, text_config)
    return PreparedConditions(
        inputs=inputs, text=text, bg_frames=bg_frames,
        motion_keep=motion_keep, bg_keep=bg_keep,
        guidance=guidance, num_frames=num_frames,
    )


def _pixel_to_latent_keep(pixel_keep: np.ndarray, codec: VideoCodec) -> np.ndarray:
    """A latent frame is kept iff every pixel frame it covers is kept."""
    q = codec.config.temporal_stride
    t_lat = 1 + (len(pixel_keep) - 1) // q
    keep = np.zeros(t_lat, dtype=np.float32)
    keep[0] = pixel_keep[0]
    for i in range(1, t_lat):
        group = pixel_keep[1 + (i - 1) * q: 1 + i * q]
        keep[i] = float(group.min()) if len(group) else 0.0
    return keep


def generate(req: GenerationRequest, model: HOIVideoModel, codec: VideoCodec) -> np.ndarray:
    """Sample a video for the request; deterministic per seed."""
    prep = prepare_conditions(req, codec, model.backbone_config)
    h, w = req.visual_reference.shape[:2]
    shape = (1,) + codec.latent_shape(prep.num_frames, h, w)
    gen = torch.Generator().manual_seed(req.seed)
    z1 = torch.randn(shape, generator=gen)
    ids, mask = text_batch([prep.text])
    xc = assemble(prep.inputs)
    z0 = model.sample(z1, ids, mask, req.steps, xc=xc)
    return codec.decode(z0[0].numpy(), clamp=True)


# -- long video --------------------------------------------------------------------


@dataclass
class ClipTrace:
    start_frame: int
    num_frames: int
    bg_tail: Optional[np.ndarray]  # background frames carried over (None for clip 0)


def _slice_guidance(g: SparseMotionGuidance, start: int, length: int) -> SparseMotionGuidance:
    wrists = {t.hand: t.points[start:start + length] for t in g.wrists}
    boxes = g.object_box.boxes[start:start + length] if g.object_box else None
    return SparseMotionGuidance.from_dense_tracks(g.canvas, wrists, boxes)


def generate_long(
    lreq: LongVideoRequest, model: HOIVideoModel, codec: VideoCodec
) -> tuple[np.ndarray, list[ClipTrace]]:
    """Recursive clip chaining: each clip after the first reuses the previous
    clip's last ``tail_frames`` generated frames as its kept background prefix,
    with the same object reference; overlap frames are emitted once."""
    req = lreq.request
    q = codec.config.temporal_stride
    clip, tail, total = lreq.clip_frames, lreq.tail_frames, lreq.total_frames
    if (clip - 1) % q or (tail - 1) % q:
        raise RequestError(f"clip ({clip}) and tail ({tail}) must be 1 mod {q}")
    if tail >= clip:
        raise RequestError("tail must be shorter than a clip")
    stride = clip - tail
    if total == clip:
        n_clips = 1
    else:
        if (total - clip) % stride:
            raise RequestError(
                f"total {total} unreachable with clip {clip} and tail {tail}"
            )
        n_clips = 1 + (total - clip) // stride
    if req.guidance is not None and req.guidance.num_frames < total:
        raise RequestError(
            f"guidance covers {req.guidance.num_frames} < total {total} frames"
        )

    h, w = req.visual_reference.shape[:2]
    t_lat_clip = codec.latent_shape(clip, h, w)[0]
    tail_lat = 1 + (tail - 1) // q
    text = encode_text(req.prompt, model.backbone_config)
    ids, mask = text_batch([text])

    if req.object_reference is not None:
        c_object = codec.encode(req.object_reference[None])
    else:
        c_object = np.zeros(codec.latent_shape(1, h, w), dtype=np.float32)
    c_visual = codec.encode(req.visual_reference[None])

    out_frames: list[np.ndarray] = []
    traces: list[ClipTrace] = []
    prev_tail: Optional[np.ndarray] = None
    as_t = lambda a: torch.from_numpy(np.ascontiguousarray(a, dtype=np.float32))[None]

    for k in range(n_clips):
        start = k * stride
        if req.guidance is not None:
            g_slice = _slice_guidance(req.guidance, start, clip)
            c_motion = encode_guidance(rasterize(g_slice), codec)
            motion_keep = np.ones(t_lat_clip, dtype=np.float32)
        else:
            c_motion = np.zeros(codec.latent_shape(clip, h, w), dtype=np.float32)
            motion_keep = np.zeros(t_lat_clip, dtype=np.float32)

        if k == 0:
            sub = GenerationRequest(
                mode=req.mode, visual_reference=req.visual_reference, prompt=req.prompt,
                object_reference=req.object_reference,
                guidance=_slice_guidance(req.guidance, 0, clip) if req.guidance else None,
                template=req.template[:clip] if req.template is not None else None,
                template_object_masks=(req.template_object_masks[:clip]
                                       if req.template_object_masks is not None else None),
                template_wrists=req.template_wrists,
                num_frames=clip, steps=req.steps, seed=req.seed,
                object_scale=req.object_scale,
            )
            prep = prepare_conditions(sub, codec, model.backbone_config)
            inputs, bg_tail = prep.inputs, None
        else:
            bg_frames = np.full((clip, h, w, 3), MID_GRAY, dtype=np.float32)
            bg_frames[:tail] = prev_tail
            bg_keep = np.zeros(t_lat_clip, dtype=np.float32)
            bg_keep[:tail_lat] = 1.0
            c_bg = codec.encode(bg_frames) * bg_keep[:, None, None, None]
            inputs = ConditionInputs(
                c_object=as_t(c_object),
                c_motion=as_t(c_motion * motion_keep[:, None, None, None]),
                c_bg=as_t(c_bg),
                c_visual=as_t(c_visual),
            )
            bg_tail = bg_frames[:tail].copy()

        gen = torch.Generator().manual_seed(req.seed + k)
        z1 = torch.randn((1, t_lat_clip) + codec.latent_shape(clip, h, w)[1:], generator=gen)
        z0 = model.sample(z1, ids, mask, req.steps, xc=assemble(inputs))
        video = codec.decode(z0[0].numpy(), clamp=True)

        traces.append(ClipTrace(start_frame=start, num_frames=clip, bg_tail=bg_tail))
        out_frames.append(video if k == 0 else video[tail:])
        prev_tail = video[-tail:].copy()

    return np.concatenate(out_frames, axis=0), traces


# -- request files -------------------------------------------------------------------


def load_request(path: str | Path) -> GenerationRequest:
    """Read a request JSON; image/video fields hold paths relative to the file."""
    path = Path(path)
    doc = json.loads(path.read_text())
    base = path.parent

    def image(key):
        if key not in doc or doc[key] is None:
            return None
        p = base / doc[key]
        if p.is_dir():
            return load_video(p)[0][0]
        arr = np.asarray(Image.open(p).convert("RGB"))
        return arr.astype(np.float32) / 255.0

    def video(key):
        if key not in doc or doc[key] is None:
            return None
        return load_video(base / doc[key])[0]

    guidance = None
    if doc.get("guidance"):
        g, violations = parse_guidance_json((base / doc["guidance"]).read_text())
        if violations:
            raise RequestError("invalid guidance: " + "; ".join(map(str, violations)))
        guidance = g

    masks = None
    if doc.get("template_object_masks"):
        masks = np.load(base / doc["template_object_masks"])["object"]

    return GenerationRequest(
        mode=doc["mode"],
        prompt=doc.get("prompt", ""),
        visual_reference=image("visual_reference"),
        object_reference=image("object_reference"),
        guidance=guidance,
        template=video("template"),
        template_object_masks=masks,
        template_wrists=doc.get("template_wrists"),
        num_frames=doc.get("num_frames"),
        steps=int(doc.get("steps", 25)),
        seed=int(doc.get("seed", 0)),
        object_scale=float(doc.get("object_scale", 1.0)),
    )
