"""Scenario definition, file I/O, and synthetic scenario generators.

A scenario is an ordered list of per-frame labeled detections plus the
metadata an attack run needs: the designated target identity, the patch
rectangle, and (optionally) a preset attack direction.

File format (version 1): a version line, header key-value lines, then one
record per box, whitespace separated::

    trackhijack-scenario v1
    name move_out_00
    fps 30
    image 1280 720
    target lead
    patch 640.0 393.3 51.0 38.2
    direction 1.0 0.0
    # frame ident class cx cy w h
    0 lead car 640.0 393.3 60.0 45.0
    0 sign static 150.0 300.0 36.0 36.0
    1 lead car 639.7 393.1 59.9 45.2

Frame indices must be consecutive from 0 and identity tags unique within a
frame. ``save_scenario`` emits a canonical layout; saving a loaded
canonical file reproduces it byte for byte.

The two generators model a pinhole camera at unit frame rate: a parked
roadside vehicle swept past by the ego car (its track is to be dragged
toward the image center), and a leading vehicle ahead of the ego car (its
track is to be dragged off the road). Generated detections get Gaussian
jitter; everything is a pure function of the parameters and the seed.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .geometry import BBox, PatchRegion, Vec2

FORMAT_NAME = "trackhijack-scenario"
FORMAT_VERSION = "v1"

# Pinhole model shared by the generators.
FOCAL_PX = 1000.0
IMAGE_SIZE = (1280, 720)
CAR_WIDTH_M = 1.8
CAR_HEIGHT_M = 1.35
CAR_DEPTH_M = 1.0  # vertical offset of the car body below the horizon line

# Patch placement relative to the target box: offset along the preset
# direction, scaled to the box extent.
PATCH_OFFSET = 0.4
PATCH_SCALE = 0.85


class ParseError(ValueError):
    """Malformed scenario file (syntax level)."""


class ValidationError(ValueError):
    """Well-formed scenario file violating a semantic invariant."""


@dataclass(frozen=True)
class LabeledBox:
    box: BBox
    ident: str
    cls: str


@dataclass(frozen=True)
class DetectionFrame:
    index: int
    boxes: tuple[LabeledBox, ...]

    def get(self, ident: str) -> Optional[LabeledBox]:
        for lb in self.boxes:
            if lb.ident == ident:
                return lb
        return None

    def plain_boxes(self) -> list[BBox]:
        return [lb.box for lb in self.boxes]


def required_initial_target_frames(fps: float) -> int:
    """Leading frames that must contain the target so it can confirm."""
    return max(1, round(0.2 * fps)) + 1


@dataclass(frozen=True)
class Scenario:
    fps: float
    frames: tuple[DetectionFrame, ...]
    target_label: str
    patch: PatchRegion
    image_bounds: tuple[int, int]
    name: str = "scenario"
    direction: Optional[Vec2] = None

    def __post_init__(self):
        validate_scenario(self)

    def __len__(self) -> int:
        return len(self.frames)

    def target_box(self, frame_index: int) -> Optional[BBox]:
        lb = self.frames[frame_index].get(self.target_label)
        return lb.box if lb else None


def validate_scenario(s: Scenario) -> None:
    if s.fps <= 0:
        raise ValidationError(f"fps must be positive, got {s.fps}")
    if not s.frames:
        raise ValidationError("scenario has no frames")
    if s.image_bounds[0] <= 0 or s.image_bounds[1] <= 0:
        raise ValidationError(f"bad image bounds {s.image_bounds}")
    for expected, frame in enumerate(s.frames):
        if frame.index != expected:
            raise ValidationError(
                f"frame indices must be consecutive from 0: expected {expected}, "
                f"got {frame.index}"
            )
        seen = set()
        for lb in frame.boxes:
            if lb.ident in seen:
                raise ValidationError(
                    f"duplicate identity {lb.ident!r} in frame {frame.index}"
                )
            seen.add(lb.ident)
    lead = required_initial_target_frames(s.fps)
    if len(s.frames) < lead:
        raise ValidationError(
            f"scenario too short: needs at least {lead} frames, has {len(s.frames)}"
        )
    for frame in s.frames[:lead]:
        if frame.get(s.target_label) is None:
            raise ValidationError(
                f"target {s.target_label!r} missing from frame {frame.index}; "
                f"it must appear in the first {lead} frames"
            )


def _fmt(x: float) -> str:
    return repr(float(x))


def dumps_scenario(s: Scenario) -> str:
    lines = [f"{FORMAT_NAME} {FORMAT_VERSION}"]
    lines.append(f"name {s.name}")
    lines.append(f"fps {_fmt(s.fps)}")
    lines.append(f"image {s.image_bounds[0]} {s.image_bounds[1]}")
    lines.append(f"target {s.target_label}")
    pb = s.patch.bounds
    lines.append(f"patch {_fmt(pb.cx)} {_fmt(pb.cy)} {_fmt(pb.w)} {_fmt(pb.h)}")
    if s.direction is not None:
        lines.append(f"direction {_fmt(s.direction.dx)} {_fmt(s.direction.dy)}")
    for frame in s.frames:
        for lb in frame.boxes:
            b = lb.box
            lines.append(
                f"{frame.index} {lb.ident} {lb.cls} "
                f"{_fmt(b.cx)} {_fmt(b.cy)} {_fmt(b.w)} {_fmt(b.h)}"
            )
    return "\n".join(lines) + "\n"


def save_scenario(s: Scenario, path) -> None:
    Path(path).write_text(dumps_scenario(s), encoding="utf-8")


def _parse_floats(tokens: list[str], lineno: int, what: str) -> list[float]:
    out = []
    for t in tokens:
        try:
            out.append(float(t))
        except ValueError:
            raise ParseError(f"line {lineno}: bad number {t!r} in {what}") from None
    return out


def loads_scenario(text: str, name: Optional[str] = None) -> Scenario:
    lines = text.splitlines()
    meaningful = [
        (i + 1, line.strip())
        for i, line in enumerate(lines)
        if line.strip() and not line.strip().startswith("#")
    ]
    if not meaningful:
        raise ParseError("empty scenario file")

    lineno, first = meaningful[0]
    head = first.split()
    if len(head) != 2 or head[0] != FORMAT_NAME:
        raise ParseError(f"line {lineno}: not a {FORMAT_NAME} file")
    if head[1] != FORMAT_VERSION:
        raise ParseError(f"line {lineno}: unsupported version {head[1]!r}")

    header: dict[str, list[str]] = {}
    records: list[tuple[int, int, str, str, BBox]] = []
    in_header = True
    for lineno, line in meaningful[1:]:
        tokens = line.split()
        starts_record = tokens[0][0].isdigit() or tokens[0][0] == "-"
        if in_header and not starts_record:
            key, *rest = tokens
            if key in header:
                raise ParseError(f"line {lineno}: duplicate header key {key!r}")
            if not rest:
                raise ParseError(f"line {lineno}: header key {key!r} has no value")
            header[key] = rest
            continue
        in_header = False
        if len(tokens) != 7:
            raise ParseError(
                f"line {lineno}: box record needs 7 fields "
                f"(frame ident class cx cy w h), got {len(tokens)}"
            )
        try:
            frame_idx = int(tokens[0])
        except ValueError:
            raise ParseError(f"line {lineno}: bad frame index {tokens[0]!r}") from None
        cx, cy, w, h = _parse_floats(tokens[3:], lineno, "box record")
        try:
            box = BBox(cx, cy, w, h)
        except ValueError as exc:
            raise ValidationError(f"line {lineno}: {exc}") from None
        records.append((lineno, frame_idx, tokens[1], tokens[2], box))

    for key in ("fps", "image", "target", "patch"):
        if key not in header:
            raise ParseError(f"missing required header key {key!r}")

    fps = _parse_floats(header["fps"], 0, "fps header")[0]
    if len(header["image"]) < 2:
        raise ParseError("image header needs 2 numbers (width height)")
    try:
        iw, ih = int(header["image"][0]), int(header["image"][1])
    except ValueError:
        raise ParseError(f"image header: bad size {header['image']!r}") from None
    target = header["target"][0]
    patch_vals = _parse_floats(header["patch"], 0, "patch header")
    if len(patch_vals) != 4:
        raise ParseError("patch header needs 4 numbers (cx cy w h)")
    try:
        patch = PatchRegion(BBox(*patch_vals))
    except ValueError as exc:
        raise ValidationError(f"patch header: {exc}") from None
    direction = None
    if "direction" in header:
        if len(header["direction"]) < 2:
            raise ParseError("direction header needs 2 numbers (dx dy)")
        dx, dy = _parse_floats(header["direction"][:2], 0, "direction header")
        direction = Vec2(dx, dy)
    scen_name = header.get("name", [name or "scenario"])[0]

    if not records:
        raise ParseError("scenario file has no box records")

    by_frame: dict[int, list[LabeledBox]] = {}
    for lineno, fi, ident, cls, box in records:
        by_frame.setdefault(fi, []).append(LabeledBox(box, ident, cls))
    frames = tuple(
        DetectionFrame(index=i, boxes=tuple(by_frame[i]))
        for i in sorted(by_frame)
    )
    return Scenario(
        fps=fps,
        frames=frames,
        target_label=target,
        patch=patch,
        image_bounds=(iw, ih),
        name=scen_name,
        direction=direction,
    )


def load_scenario(path) -> Scenario:
    p = Path(path)
    if not p.exists():
        raise ParseError(f"no such scenario file: {p}")
    return loads_scenario(p.read_text(encoding="utf-8"), name=p.stem)


# --- synthetic generators ---------------------------------------------------


def _project(X: float, Y: float, Z: float) -> tuple[float, float, float, float]:
    """Pinhole projection of a car-sized box at camera coordinates (X, Y, Z)."""
    cx = IMAGE_SIZE[0] / 2.0 + FOCAL_PX * X / Z
    cy = IMAGE_SIZE[1] / 2.0 + FOCAL_PX * Y / Z
    w = FOCAL_PX * CAR_WIDTH_M / Z
    h = FOCAL_PX * CAR_HEIGHT_M / Z
    return cx, cy, w, h


def _patch_for(track: list[BBox], fps: float, direction: Vec2) -> PatchRegion:
    """Patch rectangle: on the target, biased along the attack direction.

    Placed at the target's clean position around the expected attack start,
    so the fabricated box can keep overlapping it for the few attacked
    frames without the patch following the object.
    """
    hint = min(max(1, round(0.2 * fps)) + 5, len(track) - 1)
    b = track[hint]
    u = direction.unit()
    return PatchRegion(
        BBox(
            b.cx + PATCH_OFFSET * b.w * u.dx,
            b.cy + PATCH_OFFSET * b.h * u.dy,
            PATCH_SCALE * b.w,
            PATCH_SCALE * b.h,
        )
    )


def _jitter(box: BBox, rng: np.random.Generator, sigma: float) -> BBox:
    if sigma == 0.0:
        return box
    return BBox(
        box.cx + rng.normal(0.0, sigma),
        box.cy + rng.normal(0.0, sigma),
        max(2.0, box.w + rng.normal(0.0, sigma / 2.0)),
        max(2.0, box.h + rng.normal(0.0, sigma / 2.0)),
    )


def _assemble(
    name: str,
    target_track: list[BBox],
    distractors: dict[str, list[BBox]],
    fps: float,
    direction: Vec2,
    seed: int,
    noise_sigma: float,
) -> Scenario:
    rng = np.random.default_rng(seed)
    frames = []
    for i, clean in enumerate(target_track):
        boxes = [LabeledBox(_jitter(clean, rng, noise_sigma), "target", "car")]
        for ident, track in distractors.items():
            boxes.append(LabeledBox(_jitter(track[i], rng, noise_sigma), ident, "car"))
        frames.append(DetectionFrame(index=i, boxes=tuple(boxes)))
    return Scenario(
        fps=fps,
        frames=tuple(frames),
        target_label="target",
        patch=_patch_for(target_track, fps, direction),
        image_bounds=IMAGE_SIZE,
        name=name,
        direction=direction,
    )


def move_in_clean_track(
    lateral_offset: float,
    forward_speed: float,
    n_frames: int,
    start_distance: float,
) -> list[BBox]:
    """Noiseless trajectory of a parked roadside car as the ego passes it."""
    track = []
    for t in range(n_frames):
        Z = start_distance - forward_speed * t
        track.append(BBox(*_project(lateral_offset, CAR_DEPTH_M, Z)))
    return track


def gen_move_in(
    lateral_offset: float = 4.0,
    forward_speed: float = 0.25,
    n_frames: int = 100,
    seed: int = 0,
    noise_sigma: float = 1.0,
    start_distance: float = 40.0,
    fps: float = 30.0,
    name: str = "move_in",
) -> Scenario:
    """Parked roadside vehicle; the attack drags it toward the image center.

    The ego car approaches, so the target's apparent position slides away
    from the image center while the box grows. The preset attack direction
    points back toward the center.
    """
    if n_frames <= required_initial_target_frames(fps) + 2:
        raise ValueError("n_frames too small for the target to confirm")
    if start_distance - forward_speed * n_frames < 5.0:
        raise ValueError("ego would overrun the target; shorten the scenario")
    track = move_in_clean_track(lateral_offset, forward_speed, n_frames, start_distance)
    direction = Vec2(-1.0, 0.0) if lateral_offset >= 0 else Vec2(1.0, 0.0)
    distractors = {
        "sign": [BBox(150.0, 300.0, 36.0, 36.0)] * n_frames,
        "far_car": [BBox(560.0, 356.0, 22.0, 16.0)] * n_frames,
    }
    return _assemble(name, track, distractors, fps, direction, seed, noise_sigma)


def move_out_clean_track(
    forward_speed: float,
    n_frames: int,
    start_distance: float,
    lateral_offset: float,
) -> list[BBox]:
    """Noiseless trajectory of a lead vehicle at a slowly changing gap."""
    track = []
    for t in range(n_frames):
        Z = start_distance + forward_speed * t
        track.append(BBox(*_project(lateral_offset, CAR_DEPTH_M, Z)))
    return track


def gen_move_out(
    forward_speed: float = 0.02,
    n_frames: int = 100,
    seed: int = 0,
    noise_sigma: float = 1.0,
    start_distance: float = 30.0,
    lateral_offset: float = 0.0,
    fps: float = 30.0,
    name: str = "move_out",
) -> Scenario:
    """Lead vehicle ahead of the ego car; the attack drags it off the road.

    The target sits near the image center with small relative motion
    (``forward_speed`` is the gap growth per frame; negative means closing).
    The preset attack direction is lateral.
    """
    if n_frames <= required_initial_target_frames(fps) + 2:
        raise ValueError("n_frames too small for the target to confirm")
    if start_distance + forward_speed * n_frames < 5.0:
        raise ValueError("lead car would reach the camera; shorten the scenario")
    track = move_out_clean_track(forward_speed, n_frames, start_distance, lateral_offset)
    direction = Vec2(1.0, 0.0)
    distractors = {
        "sign": [BBox(150.0, 300.0, 36.0, 36.0)] * n_frames,
        "parked": [BBox(1080.0, 470.0, 50.0, 40.0)] * n_frames,
    }
    return _assemble(name, track, distractors, fps, direction, seed, noise_sigma)
