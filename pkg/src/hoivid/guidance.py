"""Sparse motion guidance: per-frame wrist points plus a shape-agnostic,
size-aware object box track.

Guidance is authored as keyframes, expanded by linear interpolation, and
rasterized onto an RGB canvas so it can ride through the same codec as the
video itself.  Rendering constants below are part of the JSON contract with
the authoring UI: training and inference must produce bit-identical pixels.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Iterable, Optional, Sequence

import numpy as np

GUIDANCE_SCHEMA_VERSION = "1"

# Fixed color legend (all values are exact multiples of 1/255).
LEGEND = {
    "left_wrist": (0.0, 1.0, 0.0),
    "right_wrist": (1.0, 0.0, 0.0),
    "object_box": (0.2, 0.4, 1.0),
}
BOX_OUTLINE_PX = 2
BOX_FILL_ALPHA = 0.25
HANDS = ("left", "right")


class GuidanceError(ValueError):
    pass


@dataclass(frozen=True)
class Violation:
    field: str
    message: str
    frame: Optional[int] = None

    def as_dict(self) -> dict:
        return {"field": self.field, "message": self.message, "frame": self.frame}

    def __str__(self) -> str:
        where = f" (frame {self.frame})" if self.frame is not None else ""
        return f"{self.field}{where}: {self.message}"


# -- interpolation -------------------------------------------------------------


def interpolate_keyframes(
    keyframes: Sequence[tuple[int, Sequence[float]]], num_frames: int
) -> list[Optional[tuple[float, ...]]]:
    """Expand (frame, value) keyframes to a per-frame track.

    Linear between keyframes, absent before the first, held after the last.
    """
    if not keyframes:
        raise GuidanceError("at least one keyframe is required")
    indices = [int(f) for f, _ in keyframes]
    for prev, nxt in zip(indices, indices[1:]):
        if nxt <= prev:
            raise GuidanceError(f"keyframe indices must be strictly increasing, got {indices}")
    if indices[0] < 0 or indices[-1] >= num_frames:
        raise GuidanceError(
            f"keyframe indices {indices} out of range [0, {num_frames})"
        )

    values = [tuple(float(x) for x in v) for _, v in keyframes]
    track: list[Optional[tuple[float, ...]]] = [None] * num_frames
    for frame in range(indices[0], num_frames):
        if frame >= indices[-1]:
            track[frame] = values[-1]
            continue
        seg = 0
        while indices[seg + 1] <= frame:
            seg += 1
        f0, f1 = indices[seg], indices[seg + 1]
        v0, v1 = values[seg], values[seg + 1]
        u = (frame - f0) / (f1 - f0)
        track[frame] = tuple(a + (b - a) * u for a, b in zip(v0, v1))
    return track


# -- domain types --------------------------------------------------------------


@dataclass
class WristTrack:
    hand: str  # "left" | "right"
    points: list[Optional[tuple[float, float]]]

    @property
    def length(self) -> int:
        return len(self.points)


@dataclass
class ObjectBoxTrack:
    # per-frame (cx, cy, w, h), normalized; deliberately no contour/orientation
    boxes: list[Optional[tuple[float, float, float, float]]]

    @property
    def length(self) -> int:
        return len(self.boxes)


@dataclass
class SparseMotionGuidance:
    canvas: tuple[int, int]  # (width, height) in pixels
    num_frames: int
    wrists: list[WristTrack] = field(default_factory=list)
    object_box: Optional[ObjectBoxTrack] = None
    # authored keyframes, kept for round-tripping with the UI
    keyframes: dict[str, Any] = field(default_factory=dict)

    @classmethod
    def from_keyframes(
        cls,
        canvas: tuple[int, int],
        num_frames: int,
        wrist_keyframes: dict[str, Sequence[tuple[int, Sequence[float]]]] | None = None,
        object_keyframes: Sequence[tuple[int, Sequence[float]]] | None = None,
        object_size_mode: str = "relative",
    ) -> "SparseMotionGuidance":
        wrist_keyframes = wrist_keyframes or {}
        wrists = []
        for hand in HANDS:
            kfs = wrist_keyframes.get(hand)
            if not kfs:
                continue
            points = interpolate_keyframes(kfs, num_frames)
            wrists.append(WristTrack(hand=hand, points=points))
        box_track = None
        if object_keyframes:
            boxes = interpolate_keyframes(object_keyframes, num_frames)
            box_track = ObjectBoxTrack(boxes=boxes)
        return cls(
            canvas=(int(canvas[0]), int(canvas[1])),
            num_frames=int(num_frames),
            wrists=wrists,
            object_box=box_track,
            keyframes={
                "wrists": {h: [(int(f), tuple(v)) for f, v in kfs]
                           for h, kfs in wrist_keyframes.items() if kfs},
                "object": [(int(f), tuple(v)) for f, v in (object_keyframes or [])],
                "object_size_mode": object_size_mode,
            },
        )

    @classmethod
    def from_dense_tracks(
        cls,
        canvas: tuple[int, int],
        wrist_points: dict[str, Sequence[Optional[tuple[float, float]]]],
        object_boxes: Sequence[Optional[tuple[float, float, float, float]]] | None = None,
    ) -> "SparseMotionGuidance":
        lengths = {len(v) for v in wrist_points.values()}
        if object_boxes is not None:
            lengths.add(len(object_boxes))
        if len(lengths) != 1:
            raise GuidanceError(f"track lengths disagree: {sorted(lengths)}")
        num_frames = lengths.pop()
        wrists = [
            WristTrack(hand=h, points=[None if p is None else (float(p[0]), float(p[1]))
                                       for p in pts])
            for h, pts in wrist_points.items()
        ]
        box_track = None
        if object_boxes is not None:
            box_track = ObjectBoxTrack(
                boxes=[None if b is None else tuple(float(x) for x in b) for b in object_boxes]
            )
        return cls(canvas=(int(canvas[0]), int(canvas[1])), num_frames=num_frames,
                   wrists=wrists, object_box=box_track)


@dataclass
class GuidanceVideo:
    frames: np.ndarray  # (T, H, W, 3) float32 over black
    alpha: np.ndarray  # (T, H, W) float32 coverage, used for compositing
    legend: dict[str, tuple[float, float, float]]

    def composite_over(self, base: np.ndarray) -> np.ndarray:
        """Source-over compositing of the guidance onto base frames."""
        base = np.asarray(base, dtype=np.float32)
        if base.ndim == 3:  # single frame replicated
            base = np.broadcast_to(base[None], self.frames.shape)
        return self.frames + (1.0 - self.alpha[..., None]) * base


# -- validation ----------------------------------------------------------------


def validate(guidance: SparseMotionGuidance) -> list[Violation]:
    """Collect every invariant violation; never raises."""
    out: list[Violation] = []
    w, h = guidance.canvas
    if w <= 0 or h <= 0:
        out.append(Violation("canvas", f"canvas must be positive, got {w}x{h}"))
    if guidance.num_frames <= 0:
        out.append(Violation("num_frames", f"must be positive, got {guidance.num_frames}"))

    seen_hands = set()
    for track in guidance.wrists:
        if track.hand not in HANDS:
            out.append(Violation("wrist.hand", f"unknown hand {track.hand!r}"))
        elif track.hand in seen_hands:
            out.append(Violation("wrist.hand", f"duplicate {track.hand} wrist track"))
        else:
            seen_hands.add(track.hand)
        if track.length != guidance.num_frames:
            out.append(Violation(
                f"wrist[{track.hand}]",
                f"track length {track.length} != num_frames {guidance.num_frames}"))
        for f, pt in enumerate(track.points):
            if pt is None:
                continue
            x, y = pt
            if not (0.0 <= x <= 1.0):
                out.append(Violation(f"wrist[{track.hand}].x", f"{x} outside [0, 1]", frame=f))
            if not (0.0 <= y <= 1.0):
                out.append(Violation(f"wrist[{track.hand}].y", f"{y} outside [0, 1]", frame=f))

    if guidance.object_box is not None:
        track = guidance.object_box
        if track.length != guidance.num_frames:
            out.append(Violation(
                "object_box",
                f"track length {track.length} != num_frames {guidance.num_frames}"))
        for f, box in enumerate(track.boxes):
            if box is None:
                continue
            cx, cy, bw, bh = box
            if bw <= 0.0 or bh <= 0.0:
                out.append(Violation("object_box.size", f"w/h must be > 0, got ({bw}, {bh})",
                                     frame=f))
            if not (0.0 <= cx <= 1.0 and 0.0 <= cy <= 1.0):
                out.append(Violation("object_box.center", f"({cx}, {cy}) outside [0, 1]^2",
                                     frame=f))

    kf_obj = guidance.keyframes.get("object") if guidance.keyframes else None
    sources: list[tuple[str, Iterable]] = []
    if guidance.keyframes:
        for hand, kfs in (guidance.keyframes.get("wrists") or {}).items():
            sources.append((f"wrist[{hand}].keyframes", kfs))
    if kf_obj:
        sources.append(("object.keyframes", kf_obj))
    for name, kfs in sources:
        idx = [f for f, _ in kfs]
        if any(b <= a for a, b in zip(idx, idx[1:])):
            out.append(Violation(name, f"indices not strictly increasing: {idx}"))
        if idx and (idx[0] < 0 or idx[-1] >= guidance.num_frames):
            out.append(Violation(name, f"indices {idx} outside [0, {guidance.num_frames})"))
    return out


# -- rasterization -------------------------------------------------------------


def disc_radius(canvas: tuple[int, int]) -> int:
    return max(2, round(0.02 * min(canvas)))


def rasterize(guidance: SparseMotionGuidance) -> GuidanceVideo:
    """Render guidance onto black frames. Deterministic, byte-stable."""
    w, h = guidance.canvas
    if w <= 0 or h <= 0:
        raise GuidanceError(f"canvas must be positive, got {w}x{h}")
    if guidance.num_frames <= 0:
        raise GuidanceError(f"num_frames must be positive, got {guidance.num_frames}")

    t = guidance.num_frames
    rgb = np.zeros((t, h, w, 3), dtype=np.float32)
    alpha = np.zeros((t, h, w), dtype=np.float32)
    radius = disc_radius(guidance.canvas)
    yy, xx = np.mgrid[0:h, 0:w]

    for f in range(t):
        if guidance.object_box is not None:
            box = guidance.object_box.boxes[f] if f < guidance.object_box.length else None
            if box is not None:
                _draw_box(rgb[f], alpha[f], box, (w, h), LEGEND["object_box"])
        for track in guidance.wrists:
            pt = track.points[f] if f < track.length else None
            if pt is None:
                continue
            color = LEGEND["left_wrist"] if track.hand == "left" else LEGEND["right_wrist"]
            px, py = round(pt[0] * w), round(pt[1] * h)
            mask = (xx - px) ** 2 + (yy - py) ** 2 <= radius * radius
            _blend(rgb[f], alpha[f], mask, 1.0, color)
    return GuidanceVideo(frames=rgb, alpha=alpha, legend=dict(LEGEND))


def box_pixel_rect(
    box: tuple[float, float, float, float], canvas: tuple[int, int]
) -> tuple[int, int, int, int]:
    """Normalized (cx, cy, w, h) -> pixel rect [x0, x1) x [y0, y1), clamped."""
    w, h = canvas
    cx, cy, bw, bh = box
    x0 = round((cx - bw / 2) * w)
    x1 = round((cx + bw / 2) * w)
    y0 = round((cy - bh / 2) * h)
    y1 = round((cy + bh / 2) * h)
    return max(0, x0), max(0, y0), min(w, x1), min(h, y1)


def _draw_box(rgb, alpha, box, canvas, color) -> None:
    x0, y0, x1, y1 = box_pixel_rect(box, canvas)
    if x1 <= x0 or y1 <= y0:
        return
    outer = np.zeros(alpha.shape, dtype=bool)
    outer[y0:y1, x0:x1] = True
    inner = np.zeros(alpha.shape, dtype=bool)
    t = BOX_OUTLINE_PX
    if y1 - y0 > 2 * t and x1 - x0 > 2 * t:
        inner[y0 + t:y1 - t, x0 + t:x1 - t] = True
    _blend(rgb, alpha, inner, BOX_FILL_ALPHA, color)
    _blend(rgb, alpha, outer & ~inner, 1.0, color)


def _blend(rgb, alpha, mask, a, color) -> None:
    col = np.asarray(color, dtype=np.float32)
    rgb[mask] = a * col + (1.0 - a) * rgb[mask]
    alpha[mask] = a + (1.0 - a) * alpha[mask]


def encode_guidance(gv: GuidanceVideo, codec) -> np.ndarray:
    """Push the rasterized guidance through the video codec."""
    return codec.encode(gv.frames)


# -- JSON contract with the authoring UI ---------------------------------------


def to_json_dict(guidance: SparseMotionGuidance) -> dict:
    kf = guidance.keyframes or {}
    wrists = []
    for hand in HANDS:
        hand_kfs = (kf.get("wrists") or {}).get(hand)
        if hand_kfs is None:
            track = next((t for t in guidance.wrists if t.hand == hand), None)
            if track is None:
                continue
            hand_kfs = [(f, p) for f, p in enumerate(track.points) if p is not None]
        wrists.append({
            "hand": hand,
            "keyframes": [{"f": int(f), "x": float(v[0]), "y": float(v[1])} for f, v in hand_kfs],
        })
    doc: dict[str, Any] = {
        "version": GUIDANCE_SCHEMA_VERSION,
        "canvas": {"w": guidance.canvas[0], "h": guidance.canvas[1]},
        "num_frames": guidance.num_frames,
        "wrists": wrists,
    }
    obj_kfs = kf.get("object")
    if obj_kfs is None and guidance.object_box is not None:
        obj_kfs = [(f, b) for f, b in enumerate(guidance.object_box.boxes) if b is not None]
    if obj_kfs:
        doc["object"] = {
            "size_mode": kf.get("object_size_mode", "relative"),
            "keyframes": [
                {"f": int(f), "cx": float(v[0]), "cy": float(v[1]),
                 "w": float(v[2]), "h": float(v[3])}
                for f, v in obj_kfs
            ],
        }
    return doc


def from_json_dict(doc: dict) -> SparseMotionGuidance:
    version = str(doc.get("version"))
    if version != GUIDANCE_SCHEMA_VERSION:
        raise GuidanceError(f"unsupported guidance schema version {version!r}")
    try:
        canvas = (int(doc["canvas"]["w"]), int(doc["canvas"]["h"]))
        num_frames = int(doc["num_frames"])
        wrist_kfs: dict[str, list] = {}
        for entry in doc.get("wrists", []):
            hand = entry["hand"]
            wrist_kfs[hand] = [(int(k["f"]), (float(k["x"]), float(k["y"])))
                               for k in entry["keyframes"]]
        obj = doc.get("object")
        obj_kfs = None
        size_mode = "relative"
        if obj:
            size_mode = obj.get("size_mode", "relative")
            if size_mode not in ("absolute", "relative"):
                raise GuidanceError(f"unknown size_mode {size_mode!r}")
            obj_kfs = [
                (int(k["f"]), (float(k["cx"]), float(k["cy"]), float(k["w"]), float(k["h"])))
                for k in obj["keyframes"]
            ]
    except (KeyError, TypeError) as exc:
        raise GuidanceError(f"malformed guidance document: {exc}") from exc
    return SparseMotionGuidance.from_keyframes(
        canvas, num_frames, wrist_kfs, obj_kfs, object_size_mode=size_mode
    )


def parse_guidance_json(text: str | bytes | dict) -> tuple[Optional[SparseMotionGuidance], list[Violation]]:
    """Parse + validate; schema failures come back as violations, not raises."""
    if isinstance(text, dict):
        doc = text
    else:
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            return None, [Violation("json", f"invalid JSON: {exc}")]
    if not isinstance(doc, dict):
        return None, [Violation("json", "top level must be an object")]
    try:
        guidance = from_json_dict(doc)
    except GuidanceError as exc:
        return None, [Violation("schema", str(exc))]
    return guidance, validate(guidance)


def guidance_to_json(guidance: SparseMotionGuidance) -> str:
    return json.dumps(to_json_dict(guidance), indent=2)
