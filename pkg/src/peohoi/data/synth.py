"""Synthetic livestream-style HOI data with controllable object bias and label noise.

Latent model
------------
* Action predicates follow a Zipf law ``z_l ~ (rank_l + 1) ** -tail_exponent``
  over a seeded random ranking.
* Every object category has a *mode* predicate.  With probability
  ``bias_strength`` a pair's verb is that mode, otherwise it is drawn from
  ``z``.  High bias therefore makes the object category a strong shortcut.
* ``f_u = action_proto[verb] + spatial_proto[sp] / 2 + bias_strength * object_offset[obj] + noise``.
* ``f_h`` is weakly conditioned on the verb, ``f_o`` on the object category.
* ``gaze`` is a fixed linear map of the object box centre plus noise.
* Verbs persist along a track with probability ``verb_persistence``.
* Each observed positive label is corrupted with probability ``noise_rate``
  (half dropped, half flipped to another predicate of the same kind).  The
  ledger keeps the clean labels and generator-side counts.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..errors import ConfigError
from ..numcore import derive_seed
from .schema import BBox, Dataset, FrameRecord, LabelSpace, PairRecord, DEFAULT_OBJECTS

# direction of the object relative to the streamer for each spatial predicate
_SPATIAL_OFFSETS = {
    "above": (0.0, -0.28), "away": (0.34, 0.1), "behind": (0.06, -0.06), "beneath": (0.0, 0.28),
    "in_front_of": (0.0, 0.06), "inside": (0.0, 0.0), "next_to": (0.2, 0.0), "towards": (-0.16, 0.02),
}


@dataclass
class SynthConfig:
    seed: int
    num_videos: int = 40
    num_test_videos: int = 12
    frames_per_video: int = 12
    pairs_per_frame: int = 4
    num_objects: int = 16
    bias_strength: float = 0.8
    noise_rate: float = 0.2
    tail_exponent: float = 1.0
    second_action_rate: float = 0.1
    verb_persistence: float = 0.85
    track_presence: float = 0.8
    feature_noise: float = 1.0
    d_v: int = 128
    d_w: int = 50
    d_g: int = 64

    def validate(self):
        if self.seed is None:
            raise ConfigError("synthetic generation requires an explicit seed")
        for name in ("bias_strength", "noise_rate", "second_action_rate", "verb_persistence", "track_presence"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name}={v} outside [0, 1]")
        if self.tail_exponent < 0:
            raise ConfigError("tail_exponent must be >= 0")
        for name in ("num_videos", "frames_per_video", "pairs_per_frame", "num_objects", "d_v", "d_w", "d_g"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.num_test_videos < 0:
            raise ConfigError("num_test_videos must be >= 0")

    def label_space(self):
        objs = list(DEFAULT_OBJECTS[: self.num_objects])
        objs += [f"object_{i}" for i in range(len(objs), self.num_objects)]
        return LabelSpace(objects=tuple(objs))


class _Latent:
    def __init__(self, cfg, ls):
        rng = np.random.default_rng(derive_seed(cfg.seed, "latent"))
        A, S, C = ls.num_action, ls.num_spatial, len(ls.objects)
        ranks = rng.permutation(A)
        z = (ranks + 1.0) ** -cfg.tail_exponent
        self.zipf = z / z.sum()
        self.mode = rng.choice(A, size=C, p=self.zipf)
        self.spatial_pref = rng.integers(0, S, size=A)
        self.action_proto = rng.standard_normal((A, cfg.d_v))
        self.spatial_proto = rng.standard_normal((S, cfg.d_v))
        self.object_offset = rng.standard_normal((C, cfg.d_v))
        self.human_proto = rng.standard_normal((A, cfg.d_v))
        self.object_proto = rng.standard_normal((C, cfg.d_v))
        self.gaze_map = rng.standard_normal((cfg.d_g, 3))
        self.offsets = np.array([_SPATIAL_OFFSETS.get(n, (0.0, 0.0)) for n in ls.spatial])

    def draw_verb(self, rng, obj, bias):
        if rng.random() < bias:
            return int(self.mode[obj])
        return int(rng.choice(len(self.zipf), p=self.zipf))

    def draw_spatial(self, rng, verb, num_spatial):
        if rng.random() < 0.7:
            return int(self.spatial_pref[verb])
        return int(rng.integers(num_spatial))


def _clip_box(cx, cy, w, h):
    cx = float(np.clip(cx, w / 2, 1 - w / 2))
    cy = float(np.clip(cy, h / 2, 1 - h / 2))
    return BBox(round(cx - w / 2, 4), round(cy - h / 2, 4), round(cx + w / 2, 4), round(cy + h / 2, 4))


def _corrupt(rng, labels, n, rate):
    out = []
    for l in labels:
        if rng.random() < rate:
            if rng.random() < 0.5:
                continue
            l = int((l + rng.integers(1, n)) % n)
        out.append(l)
    return sorted(set(out))


def _generate_split(cfg, ls, lat, label, n_videos):
    rng = np.random.default_rng(derive_seed(cfg.seed, label))
    ds = Dataset(ls, cfg.d_v, cfg.d_w, cfg.d_g)
    A, S = ls.num_action, ls.num_spatial
    clean = []
    counts = np.zeros(ls.num_predicates, dtype=np.int64)
    trip = {}
    total = 0
    r4 = lambda a: np.round(a, 4)
    T = cfg.frames_per_video
    for v in range(n_videos):
        vid = f"{label}_{v:04d}"
        tracks = []
        for k in range(cfg.pairs_per_frame):
            obj = int(rng.integers(len(ls.objects)))
            if rng.random() < cfg.track_presence:
                start, stop = 0, T
            else:
                start = int(rng.integers(0, T))
                stop = int(rng.integers(start + 1, T + 1))
            tracks.append({"o_id": k + 1, "obj": obj, "start": start, "stop": stop, "verb": None,
                           "size": float(rng.uniform(0.06, 0.16))})
        hc = rng.uniform(0.35, 0.65, size=2)
        frames = []
        for t in range(T):
            hc = np.clip(hc + rng.normal(0, 0.01, size=2), 0.3, 0.7)
            h_box = _clip_box(hc[0], hc[1], 0.3, 0.5)
            pairs = []
            for tr in tracks:
                if not tr["start"] <= t < tr["stop"]:
                    continue
                if tr["verb"] is None or rng.random() >= cfg.verb_persistence:
                    tr["verb"] = lat.draw_verb(rng, tr["obj"], cfg.bias_strength)
                    extra = []
                    if rng.random() < cfg.second_action_rate:
                        e = lat.draw_verb(rng, tr["obj"], 0.0)
                        if e != tr["verb"]:
                            extra = [e]
                    tr["extra"] = extra
                    tr["sp"] = lat.draw_spatial(rng, tr["verb"], S)
                verb, sp, obj = tr["verb"], tr["sp"], tr["obj"]
                off = lat.offsets[sp] + rng.normal(0, 0.03, size=2)
                o_box = _clip_box(hc[0] + off[0], hc[1] + off[1], tr["size"], tr["size"])
                u_box = BBox.union(h_box, o_box)
                sig = cfg.feature_noise
                f_u = (lat.action_proto[verb] + 0.5 * lat.spatial_proto[sp]
                       + cfg.bias_strength * lat.object_offset[obj] + rng.normal(0, sig, cfg.d_v))
                f_h = 0.5 * lat.human_proto[verb] + rng.normal(0, sig, cfg.d_v)
                f_o = lat.object_proto[obj] + rng.normal(0, 0.5 * sig, cfg.d_v)
                cx, cy = o_box.center
                gaze = lat.gaze_map @ np.array([cx, cy, 1.0]) + rng.normal(0, 0.1, cfg.d_g)
                clean_ac = sorted({verb, *tr["extra"]})
                clean_sp = [sp]
                obs_ac = _corrupt(rng, clean_ac, A, cfg.noise_rate)
                obs_sp = _corrupt(rng, clean_sp, S, cfg.noise_rate)
                pairs.append(PairRecord(1, tr["o_id"], h_box, o_box, u_box, obj,
                                        r4(f_h), r4(f_o), r4(f_u), r4(gaze), obs_sp, obs_ac))
                clean.append({"video": vid, "frame": t, "h_id": 1, "o_id": tr["o_id"],
                              "sp": clean_sp, "ac": clean_ac})
                total += 1
                for l in obs_sp + [S + a for a in obs_ac]:
                    counts[l] += 1
                    trip[(obj, l)] = trip.get((obj, l), 0) + 1
            frames.append(FrameRecord(vid, t, pairs))
        ds.videos[vid] = frames
    ledger = {
        "clean_labels": clean,
        "counts": {
            "label_counts": [int(c) for c in counts],
            "triplet_counts": [[o, p, n] for (o, p), n in sorted(trip.items())],
            "total": total,
        },
    }
    return ds, ledger


def generate_synthetic(config):
    """Return ``(train, test, ledger)``; fully determined by ``config``."""
    config.validate()
    ls = config.label_space()
    lat = _Latent(config, ls)
    train, led_train = _generate_split(config, ls, lat, "train", config.num_videos)
    test, led_test = _generate_split(config, ls, lat, "test", config.num_test_videos)
    ledger = {
        "config": asdict(config),
        "object_modes": [int(m) for m in lat.mode],
        "action_zipf": [float(x) for x in lat.zipf],
        "train": led_train,
        "test": led_test,
    }
    return train, test, ledger
