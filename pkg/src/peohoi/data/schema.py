"""In-memory dataset types."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from ..errors import SchemaError

SPATIAL_PREDICATES = (
    "above", "away", "behind", "beneath", "in_front_of", "inside", "next_to", "towards",
)

ACTION_PREDICATES = (
    "lean_on", "watch", "hold", "push", "pull", "hug", "touch", "lift", "carry", "wave",
    "hit", "kick", "ride", "feed", "grab", "kiss", "bite", "hold_hand_of", "lick", "release",
    "drive", "squeeze", "shake_hand_with", "clean", "wave_hand_to", "smell", "caress",
    "point_to", "open", "close", "throw", "press", "cut", "knock", "chase", "play",
    "use", "speak_to", "get_on", "get_off", "shout_at", "pat",
)

DEFAULT_OBJECTS = (
    "cup", "phone", "bottle", "guitar", "microphone", "toy", "bag", "cosmetics",
    "book", "piano", "laptop", "chair", "dog", "cat", "food", "clothes",
)


@dataclass(frozen=True)
class LabelSpace:
    spatial: tuple = SPATIAL_PREDICATES
    action: tuple = ACTION_PREDICATES
    objects: tuple = DEFAULT_OBJECTS

    def __post_init__(self):
        object.__setattr__(self, "spatial", tuple(self.spatial))
        object.__setattr__(self, "action", tuple(self.action))
        object.__setattr__(self, "objects", tuple(self.objects))
        for name, seq in (("spatial", self.spatial), ("action", self.action), ("objects", self.objects)):
            if len(set(seq)) != len(seq):
                raise SchemaError(f"duplicate names in {name} list")
        if set(self.spatial) & set(self.action):
            raise SchemaError("spatial and action predicate names overlap")

    @property
    def predicates(self):
        """All predicates, spatial first, in head output order."""
        return self.spatial + self.action

    @property
    def num_spatial(self):
        return len(self.spatial)

    @property
    def num_action(self):
        return len(self.action)

    @property
    def num_predicates(self):
        return len(self.spatial) + len(self.action)

    def to_dict(self):
        return {"objects": list(self.objects), "spatial": list(self.spatial), "action": list(self.action)}

    @classmethod
    def from_dict(cls, d):
        return cls(spatial=tuple(d["spatial"]), action=tuple(d["action"]), objects=tuple(d["objects"]))


class BBox(NamedTuple):
    """Normalised box corners."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def validate(self):
        if not all(0.0 <= v <= 1.0 for v in self):
            raise SchemaError(f"box {tuple(self)} outside [0, 1]")
        if self.x_min > self.x_max or self.y_min > self.y_max:
            raise SchemaError(f"box {tuple(self)} has min > max")

    def contains(self, other, tol=1e-9):
        return (self.x_min <= other.x_min + tol and self.y_min <= other.y_min + tol
                and self.x_max >= other.x_max - tol and self.y_max >= other.y_max - tol)

    @property
    def center(self):
        return (0.5 * (self.x_min + self.x_max), 0.5 * (self.y_min + self.y_max))

    @staticmethod
    def union(a, b):
        return BBox(min(a.x_min, b.x_min), min(a.y_min, b.y_min),
                    max(a.x_max, b.x_max), max(a.y_max, b.y_max))


def _arr_eq(a, b):
    return a.shape == b.shape and np.array_equal(a, b)


@dataclass(eq=False)
class PairRecord:
    h_id: int
    o_id: int
    h_box: BBox
    o_box: BBox
    u_box: BBox
    obj: int
    f_h: np.ndarray
    f_o: np.ndarray
    f_u: np.ndarray
    gaze: np.ndarray
    sp: tuple = ()
    ac: tuple = ()

    def __post_init__(self):
        self.h_box, self.o_box, self.u_box = BBox(*self.h_box), BBox(*self.o_box), BBox(*self.u_box)
        for name in ("f_h", "f_o", "f_u", "gaze"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        self.sp = tuple(sorted(int(i) for i in self.sp))
        self.ac = tuple(sorted(int(i) for i in self.ac))

    @property
    def key(self):
        return (self.h_id, self.o_id)

    def predicate_indices(self, label_space):
        """Labels in the combined (spatial, then action) predicate index space."""
        return self.sp + tuple(label_space.num_spatial + a for a in self.ac)

    def __eq__(self, other):
        if not isinstance(other, PairRecord):
            return NotImplemented
        return (self.h_id == other.h_id and self.o_id == other.o_id
                and self.h_box == other.h_box and self.o_box == other.o_box and self.u_box == other.u_box
                and self.obj == other.obj and self.sp == other.sp and self.ac == other.ac
                and all(_arr_eq(getattr(self, n), getattr(other, n)) for n in ("f_h", "f_o", "f_u", "gaze")))


@dataclass
class FrameRecord:
    video: str
    frame: int
    pairs: list = field(default_factory=list)


@dataclass
class Dataset:
    label_space: LabelSpace
    d_v: int
    d_w: int
    d_g: int
    videos: dict = field(default_factory=dict)

    @property
    def dims(self):
        return (self.d_v, self.d_w, self.d_g)

    def frames(self):
        for frames in self.videos.values():
            yield from frames

    def pairs(self):
        """Yield ``(frame_record, pair_record)`` in file order."""
        for fr in self.frames():
            for p in fr.pairs:
                yield fr, p

    @property
    def num_pairs(self):
        return sum(len(fr.pairs) for fr in self.frames())

    @property
    def num_frames(self):
        return sum(len(v) for v in self.videos.values())

    def validate(self):
        ls = self.label_space
        for vid, frames in self.videos.items():
            last = None
            for fr in frames:
                if fr.video != vid:
                    raise SchemaError(f"frame of video {fr.video!r} filed under {vid!r}")
                if last is not None and fr.frame <= last:
                    raise SchemaError(f"video {vid!r}: frame indices not strictly increasing at {fr.frame}")
                last = fr.frame
                seen = set()
                for p in fr.pairs:
                    where = f"video {vid!r} frame {fr.frame} pair {p.key}"
                    if p.key in seen:
                        raise SchemaError(f"{where}: duplicate (h_id, o_id)")
                    seen.add(p.key)
                    validate_pair(p, ls, self.dims, where)

    def concat(self, other, suffix="_b"):
        """Dataset holding both inputs' videos; clashing ids in ``other`` get ``suffix``."""
        if other.label_space != self.label_space or other.dims != self.dims:
            raise SchemaError("cannot concatenate datasets with different label spaces or dims")
        videos = dict(self.videos)
        for vid, frames in other.videos.items():
            new = vid if vid not in videos else vid + suffix
            videos[new] = [FrameRecord(new, fr.frame, list(fr.pairs)) for fr in frames]
        return Dataset(self.label_space, self.d_v, self.d_w, self.d_g, videos)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        if (self.label_space, self.dims) != (other.label_space, other.dims):
            return False
        if list(self.videos) != list(other.videos):
            return False
        for vid in self.videos:
            a, b = self.videos[vid], other.videos[vid]
            if len(a) != len(b):
                return False
            for fa, fb in zip(a, b):
                if fa.frame != fb.frame or fa.pairs != fb.pairs:
                    return False
        return True


def validate_pair(p, label_space, dims, where="pair"):
    d_v, _, d_g = dims
    for box in (p.h_box, p.o_box, p.u_box):
        try:
            box.validate()
        except SchemaError as exc:
            raise SchemaError(f"{where}: {exc}") from None
    if not (p.u_box.contains(p.h_box) and p.u_box.contains(p.o_box)):
        raise SchemaError(f"{where}: union box does not contain both boxes")
    if not 0 <= p.obj < len(label_space.objects):
        raise SchemaError(f"{where}: object category {p.obj} out of range")
    for name, want in (("f_h", d_v), ("f_o", d_v), ("f_u", d_v), ("gaze", d_g)):
        arr = getattr(p, name)
        if arr.shape != (want,):
            raise SchemaError(f"{where}: {name} has length {arr.size}, header says {want}")
        if not np.all(np.isfinite(arr)):
            raise SchemaError(f"{where}: non-finite value in {name}")
    for name, n in (("sp", label_space.num_spatial), ("ac", label_space.num_action)):
        for i in getattr(p, name):
            if not 0 <= i < n:
                raise SchemaError(f"{where}: {name} label index {i} out of range [0, {n})")
