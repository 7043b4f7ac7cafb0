"""Frame-by-frame multi-object track management.

Each step runs predict -> associate -> update -> lifecycle:

* every live track is advanced by its Kalman filter;
* predictions are matched to detections globally (IoU cost, gated);
* matched tracks are updated and may be promoted to confirmed after
  ``h_frames`` consecutive hits;
* unmatched confirmed tracks coast and are deleted after ``r_frames``
  consecutive misses; unmatched tentative tracks are deleted immediately;
* unmatched detections spawn new tentative tracks.

A manager is single-owner; independent managers can run concurrently.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

from .assignment import associate
from .estimation import KalmanState, NoiseConfig, kf_init, kf_predict, kf_update, velocity
from .geometry import BBox, Vec2


class TrackStatus(enum.Enum):
    TENTATIVE = "tentative"
    CONFIRMED = "confirmed"
    DELETED = "deleted"


@dataclass(frozen=True)
class TrackerConfig:
    """Tracker tuning knobs.

    r_frames: consecutive misses after which a track is deleted.
    h_frames: consecutive hits required to confirm a track.
    iou_gate: minimum IoU for a detection to associate with a track.
    """

    r_frames: int = 60
    h_frames: int = 6
    iou_gate: float = 0.3
    noise: NoiseConfig = field(default_factory=lambda: NoiseConfig(cov=0.1))
    fps: float = 30.0

    def __post_init__(self):
        if self.r_frames < 1 or self.h_frames < 1:
            raise ValueError("r_frames and h_frames must be >= 1")
        if not 0.0 < self.iou_gate < 1.0:
            raise ValueError("iou_gate must be in (0, 1)")

    @classmethod
    def from_fps(cls, fps: float, **kwargs) -> "TrackerConfig":
        """Conventional scaling: delete after 2s of misses, confirm after 0.2s."""
        return cls(
            r_frames=max(1, round(2.0 * fps)),
            h_frames=max(1, round(0.2 * fps)),
            fps=fps,
            **kwargs,
        )


@dataclass
class Track:
    id: int
    kf: KalmanState
    hits: int = 1
    misses: int = 0
    status: TrackStatus = TrackStatus.TENTATIVE

    def box(self) -> BBox:
        return self.kf.box()

    def velocity(self) -> Vec2:
        return velocity(self.kf)

    def copy(self) -> "Track":
        return Track(self.id, self.kf.copy(), self.hits, self.misses, self.status)


@dataclass(frozen=True)
class TrackView:
    """One track's public state in a snapshot."""

    id: int
    status: TrackStatus
    box: BBox
    velocity: Vec2


@dataclass(frozen=True)
class TrackSnapshot:
    """Observable per-frame output: all live (non-deleted) tracks."""

    frame_index: int
    tracks: tuple[TrackView, ...]

    def ids(self) -> set[int]:
        return {t.id for t in self.tracks}

    def get(self, track_id: int) -> Optional[TrackView]:
        for t in self.tracks:
            if t.id == track_id:
                return t
        return None

    def to_payload(self) -> dict:
        return {
            "frame": self.frame_index,
            "tracks": [
                {
                    "id": t.id,
                    "status": t.status.value,
                    "box": [t.box.cx, t.box.cy, t.box.w, t.box.h],
                    "vel": [t.velocity.dx, t.velocity.dy],
                }
                for t in self.tracks
            ],
        }

    def to_json_line(self) -> str:
        return json.dumps(self.to_payload(), sort_keys=True)

    @classmethod
    def from_json_line(cls, line: str) -> "TrackSnapshot":
        payload = json.loads(line)
        views = tuple(
            TrackView(
                id=t["id"],
                status=TrackStatus(t["status"]),
                box=BBox(*t["box"]),
                velocity=Vec2(*t["vel"]),
            )
            for t in payload["tracks"]
        )
        return cls(frame_index=payload["frame"], tracks=views)


def write_frame_log(path, snapshots: Iterable[TrackSnapshot]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for snap in snapshots:
            fh.write(snap.to_json_line() + "\n")


def read_frame_log(path) -> list[TrackSnapshot]:
    with open(path, "r", encoding="utf-8") as fh:
        return [TrackSnapshot.from_json_line(line) for line in fh if line.strip()]


class TrackManager:
    """Owns the track set for one scenario and advances it frame by frame."""

    def __init__(self, config: TrackerConfig):
        self.config = config
        self.frame_index = -1
        self._tracks: list[Track] = []
        self._next_id = 1
        # (track_id, detection_index) pairs from the most recent step, for
        # matched tracks and freshly spawned ones alike.
        self.last_matches: list[tuple[int, int]] = []

    @property
    def tracks(self) -> list[Track]:
        return self._tracks

    def clone(self) -> "TrackManager":
        other = TrackManager(self.config)
        other.frame_index = self.frame_index
        other._tracks = [t.copy() for t in self._tracks]
        other._next_id = self._next_id
        other.last_matches = list(self.last_matches)
        return other

    def get_track(self, track_id: int) -> Optional[Track]:
        for t in self._tracks:
            if t.id == track_id:
                return t
        return None

    def predict_box(self, track_id: int) -> BBox:
        """The box the given track will be predicted at next step (no mutation)."""
        track = self.get_track(track_id)
        if track is None:
            raise KeyError(f"no live track with id {track_id}")
        _, box = kf_predict(track.kf, self.config.noise)
        return box

    def step(self, detections: Sequence[BBox]) -> TrackSnapshot:
        cfg = self.config
        self.frame_index += 1

        predicted: list[BBox] = []
        for track in self._tracks:
            track.kf, box = kf_predict(track.kf, cfg.noise)
            predicted.append(box)

        assoc = associate(predicted, detections, cfg.iou_gate)

        self.last_matches = []
        for ti, di in assoc.matches:
            track = self._tracks[ti]
            track.kf = kf_update(track.kf, detections[di], cfg.noise)
            track.hits += 1
            track.misses = 0
            if track.status is TrackStatus.TENTATIVE and track.hits >= cfg.h_frames:
                track.status = TrackStatus.CONFIRMED
            self.last_matches.append((track.id, di))

        for ti in assoc.unmatched_tracks:
            track = self._tracks[ti]
            track.misses += 1
            track.hits = 0
            if track.status is TrackStatus.TENTATIVE or track.misses >= cfg.r_frames:
                track.status = TrackStatus.DELETED

        for di in assoc.unmatched_detections:
            track = Track(id=self._next_id, kf=kf_init(detections[di], cfg.noise))
            self._next_id += 1
            if track.hits >= cfg.h_frames:
                track.status = TrackStatus.CONFIRMED
            self._tracks.append(track)
            self.last_matches.append((track.id, di))

        self._tracks = [t for t in self._tracks if t.status is not TrackStatus.DELETED]
        return self.snapshot()

    def snapshot(self) -> TrackSnapshot:
        views = tuple(
            TrackView(t.id, t.status, t.box(), t.velocity()) for t in self._tracks
        )
        return TrackSnapshot(frame_index=self.frame_index, tracks=views)

    def confirmed(self) -> list[tuple[int, BBox, Vec2]]:
        """Confirmed tracks only: these constitute the tracking output."""
        return [
            (t.id, t.box(), t.velocity())
            for t in self._tracks
            if t.status is TrackStatus.CONFIRMED
        ]

    def find_track_of(self, detection: BBox) -> Optional[int]:
        """Which track the next association would give this detection, if any.

        Works on cloned state: each live track is predicted one frame ahead
        and the single detection is matched against those predictions. The
        real manager is never perturbed.
        """
        if not self._tracks:
            return None
        predicted = [
            kf_predict(t.kf, self.config.noise)[1] for t in self._tracks
        ]
        assoc = associate(predicted, [detection], self.config.iou_gate)
        if not assoc.matches:
            return None
        ti, _ = assoc.matches[0]
        return self._tracks[ti].id
