"""Segment manifests: JSONL persistence, hour accounting, splitting, unions."""

from __future__ import annotations

import enum
import json
import math
import random
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Mapping, Optional, Sequence, Tuple, Union

PathLike = Union[str, Path]


class ManifestError(ValueError):
    pass


class LabelKind(str, enum.Enum):
    MANUAL = "manual"
    PSEUDO = "pseudo"
    NONE = "none"


@dataclass(frozen=True)
class Segment:
    id: str
    audio_ref: str
    duration_s: float
    text: Optional[str] = None
    source: str = ""
    label_kind: LabelKind = LabelKind.NONE

    def __post_init__(self):
        if not self.id:
            raise ManifestError("segment id must be non-empty")
        if not (self.duration_s > 0):
            raise ManifestError(f"segment {self.id!r}: duration_s must be > 0, got {self.duration_s}")
        kind = LabelKind(self.label_kind)
        object.__setattr__(self, "label_kind", kind)
        if (kind is LabelKind.NONE) != (self.text is None):
            raise ManifestError(
                f"segment {self.id!r}: label_kind {kind.value!r} inconsistent with "
                f"text {'absent' if self.text is None else 'present'}"
            )

    @property
    def hours(self) -> float:
        return self.duration_s / 3600.0

    def relabel(self, text: Optional[str], kind: LabelKind) -> "Segment":
        return replace(self, text=text, label_kind=kind)

    def to_json(self) -> dict:
        d = {"id": self.id, "audio_ref": self.audio_ref, "duration_s": self.duration_s}
        if self.text is not None:
            d["text"] = self.text
        d["source"] = self.source
        d["label_kind"] = self.label_kind.value
        return d

    @classmethod
    def from_json(cls, d: Mapping) -> "Segment":
        return cls(
            id=d["id"],
            audio_ref=d["audio_ref"],
            duration_s=float(d["duration_s"]),
            text=d.get("text"),
            source=d.get("source", ""),
            label_kind=LabelKind(d["label_kind"]),
        )


@dataclass(frozen=True)
class Manifest:
    """An ordered, id-unique collection of segments."""

    segments: Tuple[Segment, ...] = ()
    name: str = field(default="", compare=False)
    _index: Dict[str, int] = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        segs = tuple(self.segments)
        object.__setattr__(self, "segments", segs)
        index: Dict[str, int] = {}
        for i, seg in enumerate(segs):
            if seg.id in index:
                raise ManifestError(f"duplicate segment id {seg.id!r} in manifest {self.name!r}")
            index[seg.id] = i
        object.__setattr__(self, "_index", index)

    def __len__(self) -> int:
        return len(self.segments)

    def __iter__(self) -> Iterator[Segment]:
        return iter(self.segments)

    def __contains__(self, seg_id: str) -> bool:
        return seg_id in self._index

    def __getitem__(self, seg_id: str) -> Segment:
        return self.segments[self._index[seg_id]]

    @property
    def ids(self) -> List[str]:
        return [s.id for s in self.segments]

    @property
    def total_hours(self) -> float:
        return total_hours(self)

    def renamed(self, name: str) -> "Manifest":
        return Manifest(self.segments, name=name)

    def subset(self, ids: Iterable[str], name: Optional[str] = None) -> "Manifest":
        wanted = set(ids)
        return Manifest([s for s in self.segments if s.id in wanted], name=self.name if name is None else name)

    def without(self, ids: Iterable[str], name: Optional[str] = None) -> "Manifest":
        dropped = set(ids)
        return Manifest([s for s in self.segments if s.id not in dropped], name=self.name if name is None else name)

    def with_labels(self, texts: Mapping[str, str], kind: LabelKind, name: Optional[str] = None) -> "Manifest":
        """Replace each segment's text with ``texts[id]``; every id must be covered."""
        missing = [s.id for s in self.segments if s.id not in texts]
        if missing:
            raise ManifestError(f"no label for segment {missing[0]!r} ({len(missing)} missing)")
        return Manifest(
            [s.relabel(texts[s.id], kind) for s in self.segments],
            name=self.name if name is None else name,
        )

    def stripped(self, name: Optional[str] = None) -> "Manifest":
        return Manifest(
            [s.relabel(None, LabelKind.NONE) for s in self.segments],
            name=self.name if name is None else name,
        )


def total_hours(m: Iterable[Segment]) -> float:
    return math.fsum(s.duration_s for s in m) / 3600.0


def read_manifest(path: PathLike, name: Optional[str] = None) -> Manifest:
    path = Path(path)
    segments: List[Segment] = []
    seen = set()
    with path.open(encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                seg = Segment.from_json(json.loads(line))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
                raise ManifestError(f"{path}:{lineno}: malformed segment line ({e})") from e
            if seg.id in seen:
                raise ManifestError(f"{path}:{lineno}: duplicate segment id {seg.id!r}")
            seen.add(seg.id)
            segments.append(seg)
    return Manifest(segments, name=path.stem if name is None else name)


def manifest_lines(m: Iterable[Segment]) -> Iterator[str]:
    for seg in m:
        yield json.dumps(seg.to_json(), ensure_ascii=False) + "\n"


def write_manifest(m: Iterable[Segment], path: PathLike) -> None:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", encoding="utf-8") as f:
            f.writelines(manifest_lines(m))
    except OSError as e:
        raise OSError(f"cannot write manifest {path}: {e}") from e


def split_by_hours(
    m: Manifest, target_hours: Sequence[float], seed: int, name: Optional[str] = None
) -> List[Manifest]:
    """Shuffle ``m`` with ``seed`` and fill buckets of the requested sizes in order.

    A segment goes into the current bucket unless adding it would land
    further above the target than stopping leaves it below (i.e. the bucket
    already holds more than ``target - duration/2``). Every bucket therefore
    ends within one segment duration of its target. Segments left over once
    the last bucket is full are not consumed.
    """
    if any(t < 0 for t in target_hours):
        raise ManifestError(f"target hours must be >= 0, got {list(target_hours)}")
    available = m.total_hours
    max_seg_h = max((s.hours for s in m), default=0.0)
    requested = math.fsum(target_hours)
    if requested > available + max_seg_h:
        raise ManifestError(
            f"insufficient hours: requested {requested:.4f} h but only {available:.4f} h available"
        )

    order = list(m.segments)
    random.Random(seed).shuffle(order)

    base = name if name is not None else m.name
    targets_s = [t * 3600.0 for t in target_hours]
    buckets: List[List[Segment]] = [[] for _ in targets_s]
    filled = [0.0] * len(targets_s)
    k = 0
    for seg in order:
        while k < len(targets_s) and filled[k] + seg.duration_s / 2 > targets_s[k]:
            k += 1
        if k == len(targets_s):
            break
        buckets[k].append(seg)
        filled[k] += seg.duration_s

    for i, (got, want) in enumerate(zip(filled, targets_s)):
        if got < want - max_seg_h * 3600.0:
            raise ManifestError(
                f"insufficient hours: bucket {i + 1} reached {got / 3600:.4f} h of "
                f"{want / 3600:.4f} h requested ({available:.4f} h available, {requested:.4f} h requested)"
            )
    return [Manifest(b, name=f"{base}.U{i + 1}") for i, b in enumerate(buckets)]


def union(ms: Sequence[Manifest], name: Optional[str] = None) -> Manifest:
    """Id-keyed union. Positions follow first appearance; the last occurrence's record wins."""
    merged: Dict[str, Segment] = {}
    for m in ms:
        for seg in m:
            merged[seg.id] = seg
    if name is None:
        name = "+".join(m.name for m in ms if m.name)
    return Manifest(list(merged.values()), name=name)
