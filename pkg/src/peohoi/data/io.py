"""JSON-Lines dataset files.

Line 1 is a header; every further line is one frame::

    {"schema":"peohoi/v1","d_v":..,"d_w":..,"d_g":..,"objects":[..],"spatial":[..],"action":[..]}
    {"video":"v0","frame":0,"pairs":[{"h_id":1,"o_id":2,"h_box":[..4],...,"sp":[..],"ac":[..]}]}

Floats are written in shortest round-trip form with a fixed key order, so
re-writing a loaded file reproduces it byte for byte.
"""

from __future__ import annotations

import json
from pathlib import Path

from ..errors import SchemaError
from .schema import BBox, Dataset, FrameRecord, LabelSpace, PairRecord, validate_pair

SCHEMA = "peohoi/v1"
_PAIR_KEYS = ("h_id", "o_id", "h_box", "o_box", "u_box", "obj", "f_h", "f_o", "f_u", "gaze", "sp", "ac")


def _dumps(obj):
    try:
        return json.dumps(obj, separators=(",", ":"), allow_nan=False, ensure_ascii=False)
    except ValueError as exc:
        raise SchemaError(f"cannot serialise non-finite value: {exc}") from None


def _floats(a):
    return [float(v) for v in a]


def header_dict(ds):
    return {"schema": SCHEMA, "d_v": ds.d_v, "d_w": ds.d_w, "d_g": ds.d_g, **ds.label_space.to_dict()}


def pair_to_dict(p):
    return {
        "h_id": int(p.h_id), "o_id": int(p.o_id),
        "h_box": _floats(p.h_box), "o_box": _floats(p.o_box), "u_box": _floats(p.u_box),
        "obj": int(p.obj),
        "f_h": _floats(p.f_h), "f_o": _floats(p.f_o), "f_u": _floats(p.f_u), "gaze": _floats(p.gaze),
        "sp": list(p.sp), "ac": list(p.ac),
    }


def dataset_lines(ds):
    yield _dumps(header_dict(ds))
    for fr in ds.frames():
        yield _dumps({"video": fr.video, "frame": int(fr.frame), "pairs": [pair_to_dict(p) for p in fr.pairs]})


def write_dataset(ds, path):
    ds.validate()
    text = "\n".join(dataset_lines(ds)) + "\n"
    path = Path(path)
    try:
        path.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise SchemaError(f"cannot write dataset to {path}: {exc}") from exc


def _parse_pair(d, lineno):
    missing = [k for k in _PAIR_KEYS if k not in d]
    if missing:
        raise SchemaError(f"line {lineno}: pair is missing keys {missing}")
    try:
        return PairRecord(
            h_id=int(d["h_id"]), o_id=int(d["o_id"]),
            h_box=BBox(*d["h_box"]), o_box=BBox(*d["o_box"]), u_box=BBox(*d["u_box"]),
            obj=int(d["obj"]), f_h=d["f_h"], f_o=d["f_o"], f_u=d["f_u"], gaze=d["gaze"],
            sp=d["sp"], ac=d["ac"],
        )
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"line {lineno}: malformed pair: {exc}") from None


def load_dataset(path):
    """Read and validate a dataset file."""
    path = Path(path)
    with path.open(encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise SchemaError(f"{path}: empty file (missing header)")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise SchemaError(f"line 1: malformed header: {exc}") from None
    if header.get("schema") != SCHEMA:
        raise SchemaError(f"line 1: unsupported schema {header.get('schema')!r}, expected {SCHEMA!r}")
    try:
        ls = LabelSpace(spatial=header["spatial"], action=header["action"], objects=header["objects"])
        ds = Dataset(ls, int(header["d_v"]), int(header["d_w"]), int(header["d_g"]))
    except KeyError as exc:
        raise SchemaError(f"line 1: header missing {exc}") from None
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            video, frame, pairs = str(rec["video"]), int(rec["frame"]), rec["pairs"]
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"line {lineno}: malformed frame record: {exc}") from None
        fr = FrameRecord(video, frame, [_parse_pair(p, lineno) for p in pairs])
        for p in fr.pairs:
            validate_pair(p, ds.label_space, ds.dims, f"line {lineno} (video {video!r} frame {frame} pair {p.key})")
        ds.videos.setdefault(video, []).append(fr)
    ds.validate()
    return ds
