"""Videos, users and interactions; JSONL loading, writing and validation.

A dataset file holds one JSON object per line. The record type is inferred
from its keys::

    {"video_id": "v1", "visual": [...], "text": [...], "audio": [...]}
    {"user_id": "u1"}
    {"user_id": "u1", "video_id": "v1", "kind": "like", "timestamp": 3, "label": 1}

Bare user records are optional; users are also picked up from interactions.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    CatalogParseError,
    DanglingReferenceError,
    DataError,
    DimensionMismatchError,
    UnknownEntityError,
)

KINDS = ("click", "like", "comment", "watch")
# like/comment are engagement by themselves; click/watch need an explicit label.
IMPLICIT_POSITIVE_KINDS = frozenset({"like", "comment"})


def _vector(values) -> np.ndarray:
    arr = np.array(values, dtype=np.float64)
    if arr.ndim != 1:
        arr = arr.reshape(-1)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class ModalFeatureSet:
    video_id: str
    visual: np.ndarray
    text: np.ndarray
    audio: np.ndarray

    def __post_init__(self):
        for name in ("visual", "text", "audio"):
            object.__setattr__(self, name, _vector(getattr(self, name)))

    @property
    def dim(self) -> int:
        return int(self.visual.shape[0])

    def stacked(self) -> np.ndarray:
        """(3, d) array in visual, text, audio order."""
        return np.stack([self.visual, self.text, self.audio])

    def __eq__(self, other):
        if not isinstance(other, ModalFeatureSet):
            return NotImplemented
        return self.video_id == other.video_id and all(
            np.array_equal(getattr(self, m), getattr(other, m))
            for m in ("visual", "text", "audio")
        )

    __hash__ = None


@dataclass(frozen=True)
class InteractionEvent:
    user_id: str
    video_id: str
    kind: str
    timestamp: int
    label: bool

    @classmethod
    def create(cls, user_id, video_id, kind, timestamp, label=None) -> "InteractionEvent":
        """Build an event, deriving the engagement label from ``kind``."""
        positive = kind in IMPLICIT_POSITIVE_KINDS or bool(label)
        return cls(str(user_id), str(video_id), kind, int(timestamp), positive)


@dataclass(frozen=True)
class Violation:
    record: str
    message: str

    def __str__(self) -> str:
        return f"{self.record}: {self.message}"


@dataclass(frozen=True)
class Catalog:
    """Immutable dataset. Lookup tables are built lazily and cached."""

    videos: tuple[ModalFeatureSet, ...]
    users: tuple[str, ...]
    interactions: tuple[InteractionEvent, ...] = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "videos", tuple(self.videos))
        object.__setattr__(self, "users", tuple(str(u) for u in self.users))
        object.__setattr__(self, "interactions", tuple(self.interactions))

    @property
    def counts(self) -> tuple[int, int, int]:
        return len(self.videos), len(self.users), len(self.interactions)

    @property
    def dim(self) -> int:
        return self.videos[0].dim if self.videos else 0

    @cached_property
    def video_index(self) -> dict[str, int]:
        return {v.video_id: i for i, v in enumerate(self.videos)}

    @cached_property
    def user_set(self) -> frozenset[str]:
        return frozenset(self.users)

    @cached_property
    def video_ids(self) -> tuple[str, ...]:
        return tuple(v.video_id for v in self.videos)

    @cached_property
    def modal_tensor(self) -> np.ndarray:
        """(n_videos, 3, d) array of all modal vectors."""
        if not self.videos:
            return np.zeros((0, 3, 0))
        return np.stack([v.stacked() for v in self.videos])

    @cached_property
    def _by_user(self) -> dict[str, list[InteractionEvent]]:
        out: dict[str, list[InteractionEvent]] = {u: [] for u in self.users}
        for ev in self.interactions:
            out.setdefault(ev.user_id, []).append(ev)
        return out

    def video(self, video_id: str) -> ModalFeatureSet:
        try:
            return self.videos[self.video_index[video_id]]
        except KeyError:
            raise UnknownEntityError(f"unknown video {video_id!r}") from None

    def require_user(self, user_id: str) -> None:
        if user_id not in self.user_set:
            raise UnknownEntityError(f"unknown user {user_id!r}")

    def events_for(self, user_id: str) -> list[InteractionEvent]:
        self.require_user(user_id)
        return self._by_user.get(user_id, [])

    def positives(self, user_id: str) -> list[InteractionEvent]:
        return [ev for ev in self.events_for(user_id) if ev.label]

    def positive_set(self, user_id: str) -> frozenset[str]:
        return frozenset(ev.video_id for ev in self.positives(user_id))

    def interacted_set(self, user_id: str) -> frozenset[str]:
        return frozenset(ev.video_id for ev in self.events_for(user_id))

    def replace_interactions(self, interactions: Iterable[InteractionEvent]) -> "Catalog":
        return Catalog(self.videos, self.users, tuple(interactions))

    def __eq__(self, other):
        if not isinstance(other, Catalog):
            return NotImplemented
        return (
            self.users == other.users
            and self.interactions == other.interactions
            and len(self.videos) == len(other.videos)
            and all(a == b for a, b in zip(self.videos, other.videos))
        )

    __hash__ = None


def validate(catalog: Catalog) -> list[Violation]:
    """Check every catalog invariant; returns one violation per offence.

    An empty list means the catalog is valid. Nothing is raised.
    """
    problems: list[Violation] = []
    seen_videos: set[str] = set()
    dim = catalog.videos[0].dim if catalog.videos else None
    for v in catalog.videos:
        rec = f"video {v.video_id!r}"
        if v.video_id in seen_videos:
            problems.append(Violation(rec, "duplicate video_id"))
        seen_videos.add(v.video_id)
        dims = {m: getattr(v, m).shape[0] for m in ("visual", "text", "audio")}
        if len(set(dims.values())) != 1:
            problems.append(Violation(rec, f"modal dimensions differ: {dims}"))
        elif dims["visual"] < 1:
            problems.append(Violation(rec, "empty feature vectors"))
        elif dim is not None and dims["visual"] != dim:
            problems.append(Violation(rec, f"dimension {dims['visual']} != catalog dimension {dim}"))
        for m in ("visual", "text", "audio"):
            if not np.all(np.isfinite(getattr(v, m))):
                problems.append(Violation(rec, f"non-finite value in {m} vector"))

    seen_users: set[str] = set()
    for u in catalog.users:
        if u in seen_users:
            problems.append(Violation(f"user {u!r}", "duplicate user_id"))
        seen_users.add(u)

    for i, ev in enumerate(catalog.interactions):
        rec = f"interaction #{i} ({ev.user_id!r}, {ev.video_id!r})"
        if ev.user_id not in seen_users:
            problems.append(Violation(rec, f"unknown user {ev.user_id!r}"))
        if ev.video_id not in seen_videos:
            problems.append(Violation(rec, f"unknown video {ev.video_id!r}"))
        if ev.kind not in KINDS:
            problems.append(Violation(rec, f"unknown kind {ev.kind!r}"))
        if ev.timestamp < 0:
            problems.append(Violation(rec, "negative timestamp"))
    return problems


def _parse_line(path, line_no: int, line: str) -> dict:
    try:
        rec = json.loads(line)
    except json.JSONDecodeError as exc:
        raise CatalogParseError(path, line_no, f"malformed JSON ({exc.msg})") from None
    if not isinstance(rec, dict):
        raise CatalogParseError(path, line_no, "record is not a JSON object")
    return rec


def read_catalog(path) -> Catalog:
    """Parse a JSONL dataset without checking catalog invariants.

    Only syntax is enforced here; use :func:`load_catalog` for a validated
    catalog or :func:`validate` to list problems.

    Raises:
        CatalogParseError: a line is not a well-formed record.
    """
    path = Path(path)
    videos: list[ModalFeatureSet] = []
    users: dict[str, None] = {}
    interactions: list[InteractionEvent] = []
    with path.open("r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            rec = _parse_line(path, line_no, line)
            try:
                if "visual" in rec:
                    videos.append(ModalFeatureSet(str(rec["video_id"]), rec["visual"], rec["text"], rec["audio"]))
                elif "kind" in rec:
                    ev = InteractionEvent.create(
                        rec["user_id"], rec["video_id"], rec["kind"],
                        rec["timestamp"], rec.get("label"),
                    )
                    users.setdefault(ev.user_id)
                    interactions.append(ev)
                elif set(rec) == {"user_id"}:
                    users.setdefault(str(rec["user_id"]))
                else:
                    raise CatalogParseError(path, line_no, f"unrecognised record keys {sorted(rec)}")
            except KeyError as exc:
                raise CatalogParseError(path, line_no, f"missing field {exc.args[0]!r}") from None
            except (TypeError, ValueError) as exc:
                raise CatalogParseError(path, line_no, str(exc)) from None
    return Catalog(tuple(videos), tuple(users), tuple(interactions))


def load_catalog(path) -> Catalog:
    """Read and validate a JSONL dataset.

    Raises:
        CatalogParseError: a line is not a well-formed record.
        DimensionMismatchError: a video's modal vectors disagree in length,
            or videos disagree with each other.
        DanglingReferenceError: an interaction names an unknown video.
        DataError: any other invariant violation.
    """
    catalog = read_catalog(path)
    for v in catalog.videos:
        if not (v.visual.shape == v.text.shape == v.audio.shape):
            raise DimensionMismatchError(
                f"video {v.video_id!r} has modal dimensions visual={v.visual.shape[0]} "
                f"text={v.text.shape[0]} audio={v.audio.shape[0]}"
            )
    dims = {v.dim for v in catalog.videos}
    if len(dims) > 1:
        raise DimensionMismatchError(f"videos have differing dimensions {sorted(dims)}")
    known = set(catalog.video_ids)
    for ev in catalog.interactions:
        if ev.video_id not in known:
            raise DanglingReferenceError(
                f"interaction by {ev.user_id!r} references unknown video {ev.video_id!r}"
            )
    problems = validate(catalog)
    if problems:
        raise DataError("; ".join(str(p) for p in problems))
    return catalog


def write_catalog(catalog: Catalog, path) -> None:
    """Write ``catalog`` as JSONL. Floats use shortest round-trip repr, so
    ``load_catalog(write_catalog(c))`` reproduces ``c`` exactly."""
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        for v in catalog.videos:
            fh.write(json.dumps({
                "video_id": v.video_id,
                "visual": v.visual.tolist(),
                "text": v.text.tolist(),
                "audio": v.audio.tolist(),
            }) + "\n")
        for u in catalog.users:
            fh.write(json.dumps({"user_id": u}) + "\n")
        for ev in catalog.interactions:
            fh.write(json.dumps({
                "user_id": ev.user_id,
                "video_id": ev.video_id,
                "kind": ev.kind,
                "timestamp": ev.timestamp,
                "label": int(ev.label),
            }) + "\n")


def make_catalog(
    videos: Sequence[tuple[str, Sequence[float], Sequence[float], Sequence[float]]],
    interactions: Sequence[tuple] = (),
    users: Sequence[str] = (),
) -> Catalog:
    """Convenience constructor from plain tuples (mostly for tests and examples).

    ``interactions`` items are ``(user, video, kind, timestamp[, label])``.
    """
    vids = tuple(ModalFeatureSet(*v) for v in videos)
    evs = tuple(InteractionEvent.create(*ev) for ev in interactions)
    seen = dict.fromkeys(str(u) for u in users)
    for ev in evs:
        seen.setdefault(ev.user_id)
    return Catalog(vids, tuple(seen), evs)

