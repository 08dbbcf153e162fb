"""Synthetic HOI data plus the curation/annotation pipeline.

The renderer draws a stick figure with articulated arms that picks up,
carries and puts down a rigid object, and returns pixel-exact ground truth
(wrist tracks, object/human/head masks).  Curation and annotation mirror the
production pipeline but run against pluggable clients; deterministic mocks
(ground-truth-wired or hash-based) stand in for external models.
"""

from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .codec import load_video, save_video
from .guidance import interpolate_keyframes

# Palette is part of the evaluation contract: probes match these colors.
OBJECT_PALETTE = {
    "red": (0.90, 0.10, 0.10),
    "green": (0.10, 0.75, 0.20),
    "blue": (0.15, 0.30, 0.95),
    "yellow": (0.95, 0.85, 0.10),
    "magenta": (0.85, 0.15, 0.80),
    "cyan": (0.10, 0.80, 0.85),
}
HAND_COLOR = (0.98, 0.72, 0.40)
FIGURE_COLOR = (0.22, 0.18, 0.25)
OBJECT_SHAPES = ("rect", "circle", "triangle")


class SceneError(ValueError):
    pass


# -- sample record (consumed by the trainer) ------------------------------------


@dataclass
class HOISample:
    sample_id: str
    frames: np.ndarray  # (T, H, W, 3) float32 in [0, 1]
    caption: str
    wrists: dict[str, list[Optional[tuple[float, float]]]]
    human_masks: np.ndarray  # (T, H, W) bool
    object_masks: Optional[np.ndarray] = None  # (T, H, W) bool
    head_masks: Optional[np.ndarray] = None  # (T, H, W) bool
    has_object_annotation: bool = False
    has_interaction: bool = False
    fps: int = 25
    provenance: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        t = self.frames.shape[0]
        for hand, pts in self.wrists.items():
            if len(pts) != t:
                raise SceneError(f"wrist track {hand} length {len(pts)} != {t} frames")
        for name in ("human_masks", "object_masks", "head_masks"):
            m = getattr(self, name)
            if m is not None and m.shape[0] != t:
                raise SceneError(f"{name} length {m.shape[0]} != {t} frames")
        if self.has_object_annotation != (self.object_masks is not None):
            raise SceneError("object masks present iff has_object_annotation")

    @property
    def num_frames(self) -> int:
        return int(self.frames.shape[0])

    @property
    def canvas(self) -> tuple[int, int]:
        return (int(self.frames.shape[2]), int(self.frames.shape[1]))


def object_box_track(sample: HOISample) -> list[Optional[tuple[float, float, float, float]]]:
    """Per-frame tight normalized (cx, cy, w, h) of the object mask."""
    if sample.object_masks is None:
        raise SceneError("sample has no object annotation")
    h, w = sample.object_masks.shape[1:]
    track = []
    for mask in sample.object_masks:
        ys, xs = np.nonzero(mask)
        if ys.size == 0:
            track.append(None)
            continue
        x0, x1 = xs.min(), xs.max() + 1
        y0, y1 = ys.min(), ys.max() + 1
        track.append((
            (x0 + x1) / 2 / w, (y0 + y1) / 2 / h, (x1 - x0) / w, (y1 - y0) / h,
        ))
    return track


# -- scene configuration ----------------------------------------------------------


@dataclass
class ObjectSpec:
    shape: str  # rect | circle | triangle
    color: str  # OBJECT_PALETTE key
    half_w: float  # normalized half extents
    half_h: float


@dataclass
class FigureSpec:
    anchor_x: float = 0.5
    active_hand: str = "right"
    idle_sway: float = 0.02  # arm sway amplitude for non-interacting clips


@dataclass
class InteractionScript:
    start: tuple[float, float]  # object rest position (center)
    pickup_frame: Optional[int] = None
    carry_keyframes: Sequence[tuple[int, tuple[float, float]]] = ()
    putdown_frame: Optional[int] = None

    @property
    def is_static(self) -> bool:
        return self.pickup_frame is None


@dataclass
class SynthSceneConfig:
    canvas: tuple[int, int] = (64, 64)  # (width, height)
    num_frames: int = 17
    fps: int = 25  # clips are normalized to 25 fps upstream
    background: tuple[float, float, float] = (0.62, 0.62, 0.66)
    background_style: str = "solid"  # solid | vgrad
    figure: FigureSpec = field(default_factory=FigureSpec)
    obj: Optional[ObjectSpec] = None
    script: Optional[InteractionScript] = None

    def validate(self) -> None:
        t = self.num_frames
        if t < 1:
            raise SceneError(f"num_frames must be positive, got {t}")
        if (self.obj is None) != (self.script is None):
            raise SceneError("object spec and script must be given together")
        if self.script and not self.script.is_static:
            s = self.script
            frames = [s.pickup_frame, *(f for f, _ in s.carry_keyframes)]
            if s.putdown_frame is not None:
                frames.append(s.putdown_frame)
            if any(b <= a for a, b in zip(frames, frames[1:])):
                raise SceneError(f"script frames must increase: {frames}")
            if frames[0] < 0 or frames[-1] >= t:
                raise SceneError(f"script frames {frames} outside [0, {t})")
        if self.obj and self.obj.shape not in OBJECT_SHAPES:
            raise SceneError(f"unknown shape {self.obj.shape!r}")
        if self.obj and self.obj.color not in OBJECT_PALETTE:
            raise SceneError(f"unknown color {self.obj.color!r}")


def random_scene_config(
    rng: np.random.Generator,
    canvas: tuple[int, int] = (64, 64),
    num_frames: int = 17,
    with_object: bool = True,
) -> SynthSceneConfig:
    """Sample a diverse, valid scene: palette object, scripted pick-and-carry."""
    gray = rng.uniform(0.50, 0.72)
    tint = rng.uniform(-0.05, 0.05, size=3)
    background = tuple(np.clip(gray + tint, 0.4, 0.8))
    figure = FigureSpec(
        anchor_x=float(rng.uniform(0.35, 0.65)),
        active_hand=str(rng.choice(["left", "right"])),
        idle_sway=float(rng.uniform(0.01, 0.03)),
    )
    obj = script = None
    if with_object:
        obj = ObjectSpec(
            shape=str(rng.choice(OBJECT_SHAPES)),
            color=str(rng.choice(list(OBJECT_PALETTE))),
            half_w=float(rng.uniform(0.09, 0.15)),
            half_h=float(rng.uniform(0.09, 0.15)),
        )
        t = num_frames
        start = (float(rng.uniform(0.18, 0.82)), float(rng.uniform(0.68, 0.82)))
        target = (float(rng.uniform(0.18, 0.82)), float(rng.uniform(0.22, 0.45)))
        pickup = int(rng.integers(1, max(2, t // 4)))
        mid = int(rng.integers(pickup + 1, max(pickup + 2, (3 * t) // 4)))
        script = InteractionScript(
            start=start,
            pickup_frame=pickup,
            carry_keyframes=[(mid, target), (t - 1, target)],
        )
    return SynthSceneConfig(
        canvas=canvas, num_frames=num_frames, background=background,
        background_style=str(rng.choice(["solid", "vgrad"])),
        figure=figure, obj=obj, script=script,
    )


# -- drawing primitives ------------------------------------------------------------


def _grids(h: int, w: int):
    return np.mgrid[0:h, 0:w]


def _disc_mask(h, w, cx, cy, r) -> np.ndarray:
    yy, xx = _grids(h, w)
    return (xx - cx) ** 2 + (yy - cy) ** 2 <= r * r


def _segment_mask(h, w, p0, p1, thickness) -> np.ndarray:
    yy, xx = _grids(h, w)
    px = np.stack([xx, yy], axis=-1).astype(np.float64)
    a = np.asarray(p0, dtype=np.float64)
    b = np.asarray(p1, dtype=np.float64)
    ab = b - a
    denom = float(ab @ ab)
    if denom == 0.0:
        d2 = ((px - a) ** 2).sum(-1)
    else:
        u = np.clip(((px - a) @ ab) / denom, 0.0, 1.0)
        proj = a + u[..., None] * ab
        d2 = ((px - proj) ** 2).sum(-1)
    half = thickness / 2.0
    return d2 <= half * half


def _triangle_mask(h, w, cx, cy, hw, hh) -> np.ndarray:
    # upright isoceles triangle inside the (cx, cy, hw, hh) box
    yy, xx = _grids(h, w)
    apex = np.array([cx, cy - hh])
    left = np.array([cx - hw, cy + hh])
    right = np.array([cx + hw, cy + hh])

    def side(p0, p1):
        return (p1[0] - p0[0]) * (yy - p0[1]) - (p1[1] - p0[1]) * (xx - p0[0])

    s1, s2, s3 = side(apex, left), side(left, right), side(right, apex)
    return ((s1 >= 0) & (s2 >= 0) & (s3 >= 0)) | ((s1 <= 0) & (s2 <= 0) & (s3 <= 0))


def _object_mask(shape: str, h, w, cx, cy, hw, hh) -> np.ndarray:
    if shape == "rect":
        yy, xx = _grids(h, w)
        return (np.abs(xx - cx) <= hw) & (np.abs(yy - cy) <= hh)
    if shape == "circle":
        yy, xx = _grids(h, w)
        return ((xx - cx) / hw) ** 2 + ((yy - cy) / hh) ** 2 <= 1.0
    if shape == "triangle":
        return _triangle_mask(h, w, cx, cy, hw, hh)
    raise SceneError(f"unknown shape {shape!r}")


def _paint(frame: np.ndarray, mask: np.ndarray, color) -> None:
    frame[mask] = np.asarray(color, dtype=np.float32)


# -- scene synthesis ----------------------------------------------------------------


def _object_center_track(cfg: SynthSceneConfig) -> list[tuple[float, float]]:
    script = cfg.script
    t = cfg.num_frames
    if script.is_static:
        return [script.start] * t
    keyframes = [(0, script.start), (script.pickup_frame, script.start)]
    keyframes += [(f, p) for f, p in script.carry_keyframes]
    if script.putdown_frame is not None and script.putdown_frame > keyframes[-1][0]:
        keyframes.append((script.putdown_frame, keyframes[-1][1]))
    # collapse duplicate frame indices introduced by pickup at frame 0
    dedup = [keyframes[0]]
    for f, p in keyframes[1:]:
        if f > dedup[-1][0]:
            dedup.append((f, p))
    track = interpolate_keyframes(dedup, t)
    return [p for p in track]


def _active_hand_track(cfg: SynthSceneConfig, centers, grasp_offset) -> list[tuple[float, float]]:
    fig = cfg.figure
    t = cfg.num_frames
    side = -1.0 if fig.active_hand == "left" else 1.0
    idle = (fig.anchor_x + side * 0.16, 0.60)
    script = cfg.script
    if script is None or script.is_static:
        # idle sway around the resting pose
        return [
            (idle[0] + fig.idle_sway * np.sin(2 * np.pi * f / max(t - 1, 1)), idle[1])
            for f in range(t)
        ]
    grasp = lambda c: (c[0], c[1] - grasp_offset)
    pickup = script.pickup_frame
    end_carry = script.putdown_frame if script.putdown_frame is not None else t - 1
    keyframes = [(0, idle)]
    if pickup > 0:
        keyframes.append((pickup, grasp(centers[pickup])))
    for f in range(pickup + 1, min(end_carry, t - 1) + 1):
        keyframes.append((f, grasp(centers[f])))
    if end_carry < t - 1:
        keyframes.append((t - 1, idle))
    dedup = [keyframes[0]]
    for f, p in keyframes[1:]:
        if f > dedup[-1][0]:
            dedup.append((f, p))
    return [p for p in interpolate_keyframes(dedup, t)]


def synth_scene(cfg: SynthSceneConfig, rng: np.random.Generator | None = None,
                sample_id: str | None = None) -> HOISample:
    """Render a scene and return it with exact ground-truth annotations."""
    cfg.validate()
    w, h = cfg.canvas
    t = cfg.num_frames
    fig = cfg.figure
    mind = min(w, h)

    # figure geometry in pixels
    ax = fig.anchor_x * w
    head_c = (ax, 0.20 * h)
    head_r = 0.075 * mind
    neck = (ax, 0.30 * h)
    hip = (ax, 0.62 * h)
    shoulder = (ax, 0.34 * h)
    hand_r = max(1.5, 0.045 * mind)
    grasp_offset = (hand_r + 1.0) / h  # hand rides just above the object top

    centers = _object_center_track(cfg) if cfg.script else None
    active = _active_hand_track(cfg, centers, grasp_offset + (cfg.obj.half_h if cfg.obj else 0))
    side = -1.0 if fig.active_hand == "left" else 1.0
    idle_other = (fig.anchor_x - side * 0.16, 0.60)

    if cfg.background_style == "vgrad":
        ramp = np.linspace(-0.06, 0.06, h, dtype=np.float32)[:, None, None]
        base = np.clip(np.asarray(cfg.background, np.float32) + ramp, 0.0, 1.0)
        base = np.broadcast_to(base, (h, w, 3)).copy()
    else:
        base = np.full((h, w, 3), cfg.background, dtype=np.float32)

    frames = np.empty((t, h, w, 3), dtype=np.float32)
    human = np.zeros((t, h, w), dtype=bool)
    head = np.zeros((t, h, w), dtype=bool)
    objm = np.zeros((t, h, w), dtype=bool) if cfg.obj else None
    wrists: dict[str, list] = {"left": [], "right": []}

    for f in range(t):
        frame = base.copy()
        hands = {fig.active_hand: active[f],
                 ("left" if fig.active_hand == "right" else "right"): idle_other}
        body = np.zeros((h, w), dtype=bool)
        body |= _segment_mask(h, w, neck, hip, 0.045 * mind)
        body |= _segment_mask(h, w, hip, (ax - 0.10 * w, 0.92 * h), 0.035 * mind)
        body |= _segment_mask(h, w, hip, (ax + 0.10 * w, 0.92 * h), 0.035 * mind)
        for hand_name, (hx, hy) in hands.items():
            wrist_px = (hx * w, hy * h)
            mid = ((shoulder[0] + wrist_px[0]) / 2, (shoulder[1] + wrist_px[1]) / 2)
            bend = 0.12 * np.hypot(wrist_px[0] - shoulder[0], wrist_px[1] - shoulder[1])
            elbow = (mid[0], mid[1] + bend)
            body |= _segment_mask(h, w, shoulder, elbow, 0.03 * mind)
            body |= _segment_mask(h, w, elbow, wrist_px, 0.03 * mind)
        head_mask = _disc_mask(h, w, *head_c, head_r)
        _paint(frame, body | head_mask, FIGURE_COLOR)

        obj_mask = None
        if cfg.obj:
            cx, cy = centers[f]
            obj_mask = _object_mask(cfg.obj.shape, h, w, cx * w, cy * h,
                                    cfg.obj.half_w * w, cfg.obj.half_h * h)
            _paint(frame, obj_mask, OBJECT_PALETTE[cfg.obj.color])

        hand_union = np.zeros((h, w), dtype=bool)
        for hand_name, (hx, hy) in hands.items():
            hm = _disc_mask(h, w, hx * w, hy * h, hand_r)
            _paint(frame, hm, HAND_COLOR)
            hand_union |= hm
            wrists[hand_name].append((float(hx), float(hy)))

        frames[f] = frame
        human[f] = body | head_mask | hand_union
        head[f] = head_mask
        if objm is not None:
            objm[f] = obj_mask & ~hand_union  # visible object pixels

    caption = _caption(cfg)
    has_interaction = bool(cfg.script and not cfg.script.is_static)
    return HOISample(
        sample_id=sample_id or "scene",
        frames=frames,
        caption=caption,
        wrists=wrists,
        human_masks=human,
        object_masks=objm,
        head_masks=head,
        has_object_annotation=objm is not None,
        has_interaction=has_interaction,
        fps=cfg.fps,
        provenance={"renderer": "synth_scene/1"},
    )


def _caption(cfg: SynthSceneConfig) -> str:
    if cfg.obj is None:
        return "a stick figure waves its arms"
    name = f"{cfg.obj.color} {cfg.obj.shape}"
    if cfg.script.is_static:
        return f"a stick figure stands near a {name}"
    return f"a stick figure picks up a {name} and carries it"


# -- curation -----------------------------------------------------------------------


@dataclass
class RawClip:
    clip_id: str
    frames: np.ndarray  # (T, H, W, 3)
    fps: int = 25


@dataclass
class FilterStage:
    name: str
    scorer: Callable[[RawClip], float]
    threshold: float

    def __post_init__(self):
        if not np.isfinite(self.threshold) and not np.isinf(self.threshold):
            raise ValueError(f"threshold must be finite or +-inf, got {self.threshold}")


@dataclass
class CurationReport:
    total: int
    survivors: list[str]
    dropped_by_stage: dict[str, int]
    errors: list[str]
    scores: dict[str, dict[str, float]]

    def as_dict(self) -> dict:
        return {
            "total": self.total,
            "survivors": self.survivors,
            "dropped_by_stage": self.dropped_by_stage,
            "errors": self.errors,
            "scores": self.scores,
        }


def curate(clips: Sequence[RawClip], stages: Sequence[FilterStage]) -> tuple[list[RawClip], CurationReport]:
    """Keep a clip iff every stage's score exceeds its threshold.

    Stages run in order and short-circuit, so each drop is attributed to the
    first failing stage.  Scorer failures exclude the clip and are logged.
    """
    survivors: list[RawClip] = []
    dropped = {stage.name: 0 for stage in stages}
    errors: list[str] = []
    scores: dict[str, dict[str, float]] = {}
    for clip in clips:
        clip_scores: dict[str, float] = {}
        scores[clip.clip_id] = clip_scores
        ok = True
        for stage in stages:
            try:
                score = float(stage.scorer(clip))
            except Exception:
                errors.append(clip.clip_id)
                ok = False
                break
            clip_scores[stage.name] = score
            if not score > stage.threshold:
                dropped[stage.name] += 1
                ok = False
                break
        if ok:
            survivors.append(clip)
    report = CurationReport(
        total=len(clips), survivors=[c.clip_id for c in survivors],
        dropped_by_stage=dropped, errors=errors, scores=scores,
    )
    return survivors, report


# built-in scorers (the clarity score is a Laplacian-variance stand-in)


def aesthetic_score(clip: RawClip) -> float:
    rgb = clip.frames
    return float(rgb.std(axis=-1).mean() + rgb.mean() * 0.1)


def motion_score(clip: RawClip) -> float:
    if clip.frames.shape[0] < 2:
        return 0.0
    return float(np.abs(np.diff(clip.frames, axis=0)).mean())


def clarity_score(clip: RawClip) -> float:
    gray = clip.frames.mean(axis=-1)
    lap = (
        -4 * gray[:, 1:-1, 1:-1]
        + gray[:, :-2, 1:-1] + gray[:, 2:, 1:-1]
        + gray[:, 1:-1, :-2] + gray[:, 1:-1, 2:]
    )
    return float(lap.var())


def hash_score(stage_name: str) -> Callable[[RawClip], float]:
    """Deterministic pseudo-score in [0, 1) keyed by (clip id, stage)."""

    def scorer(clip: RawClip) -> float:
        digest = hashlib.sha1(f"{stage_name}:{clip.clip_id}".encode()).digest()
        return int.from_bytes(digest[:8], "little") / 2**64

    return scorer


def default_stages(thresholds: dict[str, float] | None = None) -> list[FilterStage]:
    th = {"aesthetic": 0.05, "motion": 1e-4, "clarity": 1e-5,
          "human_centric": 0.5, "vlm_hoi": 0.5}
    th.update(thresholds or {})
    return [
        FilterStage("aesthetic", aesthetic_score, th["aesthetic"]),
        FilterStage("motion", motion_score, th["motion"]),
        FilterStage("clarity", clarity_score, th["clarity"]),
        FilterStage("human_centric", hash_score("human_centric"), th["human_centric"]),
        FilterStage("vlm_hoi", hash_score("vlm_hoi"), th["vlm_hoi"]),
    ]


# -- annotation ---------------------------------------------------------------------

PLAUSIBLE_AREA_RANGE = (0.001, 0.40)  # fraction of the frame


@dataclass
class AnnotatorSuite:
    captioner: "CaptionClient"
    wrist_extractor: "WristClient"
    detector: "DetectorClient"
    segmenter: "SegmenterClient"

    def versions(self) -> dict[str, str]:
        return {
            "captioner": self.captioner.version,
            "wrist_extractor": self.wrist_extractor.version,
            "detector": self.detector.version,
            "segmenter": self.segmenter.version,
        }


class CaptionClient:
    version = "caption-client/0"

    def __call__(self, clip: RawClip) -> str:
        raise NotImplementedError


class WristClient:
    version = "wrist-client/0"

    def __call__(self, clip: RawClip) -> dict[str, list[Optional[tuple[float, float]]]]:
        raise NotImplementedError


class DetectorClient:
    version = "detector-client/0"

    def __call__(self, clip: RawClip) -> list[tuple[float, float, float, float]]:
        raise NotImplementedError


class SegmenterClient:
    version = "segmenter-client/0"

    def segment_object(self, clip: RawClip, box) -> np.ndarray:
        raise NotImplementedError

    def segment_human(self, clip: RawClip) -> np.ndarray:
        raise NotImplementedError


def _mean_wrist_distance(box, wrists) -> float:
    cx, cy = box[0], box[1]
    dists = []
    for pts in wrists.values():
        for pt in pts:
            if pt is not None:
                dists.append(np.hypot(pt[0] - cx, pt[1] - cy))
    return float(np.mean(dists)) if dists else float("inf")


def annotate(clip: RawClip, suite: AnnotatorSuite) -> HOISample:
    """Caption, extract wrists, pick the interaction object, segment it.

    Candidate boxes outside the plausible size band are discarded; among the
    rest, the box whose center is closest (on average) to the wrist points is
    the interaction object.  With no plausible box the sample stays weakly
    annotated (wrists only).
    """
    caption = suite.captioner(clip)
    wrists = suite.wrist_extractor(clip)
    boxes = suite.detector(clip)
    lo, hi = PLAUSIBLE_AREA_RANGE
    plausible = [b for b in boxes if lo <= b[2] * b[3] <= hi]

    object_masks = None
    if plausible:
        best = min(plausible, key=lambda b: _mean_wrist_distance(b, wrists))
        object_masks = suite.segmenter.segment_object(clip, best)
        if not object_masks.any():
            object_masks = None
    human_masks = suite.segmenter.segment_human(clip)

    provenance = suite.versions()
    provenance["renderer"] = "annotate/1"
    return HOISample(
        sample_id=clip.clip_id,
        frames=clip.frames,
        caption=caption,
        wrists=wrists,
        human_masks=human_masks,
        object_masks=object_masks,
        has_object_annotation=object_masks is not None,
        has_interaction=object_masks is not None,
        fps=clip.fps,
        provenance=provenance,
    )


def mask_area_order(object_masks: np.ndarray) -> list[int]:
    """Frame indices sorted by descending visible mask area."""
    areas = object_masks.reshape(object_masks.shape[0], -1).sum(axis=1)
    return list(np.argsort(-areas, kind="stable"))


# ground-truth-wired mock clients


class GroundTruthStore(dict):
    """clip_id -> HOISample with exact annotations."""


class GTCaptioner(CaptionClient):
    version = "mock-captioner/1"

    def __init__(self, store: GroundTruthStore):
        self.store = store

    def __call__(self, clip: RawClip) -> str:
        return self.store[clip.clip_id].caption


class GTWristExtractor(WristClient):
    version = "mock-wrists/1"

    def __init__(self, store: GroundTruthStore):
        self.store = store

    def __call__(self, clip: RawClip):
        return {h: list(pts) for h, pts in self.store[clip.clip_id].wrists.items()}


class GTDetector(DetectorClient):
    version = "mock-detector/1"

    def __init__(self, store: GroundTruthStore, extra_boxes: Sequence | None = None):
        self.store = store
        self.extra_boxes = list(extra_boxes or [])

    def __call__(self, clip: RawClip):
        sample = self.store[clip.clip_id]
        boxes = list(self.extra_boxes)
        if sample.object_masks is not None:
            track = object_box_track(sample)
            first = next((b for b in track if b is not None), None)
            if first is not None:
                boxes.append(first)
        return boxes


class GTSegmenter(SegmenterClient):
    version = "mock-segmenter/1"

    def __init__(self, store: GroundTruthStore):
        self.store = store

    def segment_object(self, clip: RawClip, box) -> np.ndarray:
        sample = self.store[clip.clip_id]
        if sample.object_masks is None:
            return np.zeros(clip.frames.shape[:3], dtype=bool)
        return sample.object_masks.copy()

    def segment_human(self, clip: RawClip) -> np.ndarray:
        return self.store[clip.clip_id].human_masks.copy()


def ground_truth_suite(store: GroundTruthStore) -> AnnotatorSuite:
    return AnnotatorSuite(
        captioner=GTCaptioner(store),
        wrist_extractor=GTWristExtractor(store),
        detector=GTDetector(store),
        segmenter=GTSegmenter(store),
    )


def load_suite_config(path: str | Path) -> dict[str, dict[str, str]]:
    """Mock-client configuration, INI-style: one section per client."""
    parser = configparser.ConfigParser()
    with open(path) as fh:
        parser.read_file(fh)
    return {section: dict(parser.items(section)) for section in parser.sections()}


# -- manifests ----------------------------------------------------------------------


def save_samples(root: str | Path, samples: Sequence[HOISample]) -> Path:
    """Write one JSONL record per sample plus per-sample frame/mask assets."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    manifest = root / "manifest.jsonl"
    with open(manifest, "w") as fh:
        for sample in samples:
            sdir = root / "samples" / sample.sample_id
            save_video(sdir / "frames", sample.frames, fps=sample.fps)
            masks = {"human": sample.human_masks}
            if sample.object_masks is not None:
                masks["object"] = sample.object_masks
            if sample.head_masks is not None:
                masks["head"] = sample.head_masks
            np.savez_compressed(sdir / "masks.npz", **masks)
            record = {
                "id": sample.sample_id,
                "frames": str(sdir.relative_to(root) / "frames"),
                "masks": str(sdir.relative_to(root) / "masks.npz"),
                "caption": sample.caption,
                "wrists": {h: [list(p) if p is not None else None for p in pts]
                           for h, pts in sample.wrists.items()},
                "flags": {
                    "has_object_annotation": sample.has_object_annotation,
                    "has_interaction": sample.has_interaction,
                },
                "fps": sample.fps,
                "provenance": sample.provenance,
            }
            fh.write(json.dumps(record) + "\n")
    return manifest


def load_samples(root: str | Path) -> list[HOISample]:
    root = Path(root)
    samples = []
    with open(root / "manifest.jsonl") as fh:
        for line in fh:
            rec = json.loads(line)
            frames, _ = load_video(root / rec["frames"])
            masks = np.load(root / rec["masks"])
            wrists = {h: [tuple(p) if p is not None else None for p in pts]
                      for h, pts in rec["wrists"].items()}
            samples.append(HOISample(
                sample_id=rec["id"],
                frames=frames,
                caption=rec["caption"],
                wrists=wrists,
                human_masks=masks["human"],
                object_masks=masks["object"] if "object" in masks else None,
                head_masks=masks["head"] if "head" in masks else None,
                has_object_annotation=rec["flags"]["has_object_annotation"],
                has_interaction=rec["flags"]["has_interaction"],
                fps=rec.get("fps", 25),
                provenance=rec.get("provenance", {}),
            ))
    return samples
