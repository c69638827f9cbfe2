"""Detection, truth and track files.

``detections.jsonl`` holds one frame per line::

    {"frame": 3, "detections": [{"x": 1.0, "y": 2.0, "features": [0.9, 0.1]}]}

``truth.json`` and ``tracks.json`` share one schema: ``tracks`` maps a
canonical label string to ``[[frame, x, y], ...]`` rows, ``lineage`` holds
the forest (roots and children by label string) and ``modes`` (truth only)
maps label strings to ``[[frame, mode], ...]``.
"""
from __future__ import annotations

import json
import os

from .labels import format_label, parse_label
from .measurement import Detection, DetectionFrame
from .metrics import TrackSet


class FileFormatError(ValueError):
    pass


def write_detections(path, frames) -> None:
    with open(path, "w") as fh:
        for fr in frames:
            dets = [{"x": float(d.position[0]), "y": float(d.position[1]),
                     "features": [float(a) for a in d.features]} for d in fr.detections]
            fh.write(json.dumps({"frame": int(fr.frame), "detections": dets}) + "\n")


def read_detections(path) -> list:
    frames = []
    with open(path) as fh:
        for n, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                dets = [Detection([d["x"], d["y"]], d.get("features", [])) for d in rec["detections"]]
                frames.append(DetectionFrame(int(rec["frame"]), dets))
            except (ValueError, KeyError, TypeError) as exc:
                raise FileFormatError(f"{path}:{n}: malformed detection line ({exc})") from exc
    for a, b in zip(frames, frames[1:]):
        if b.frame <= a.frame:
            raise FileFormatError(f"{path}: frames are not strictly increasing ({a.frame}, {b.frame})")
    return frames


def trackset_to_dict(ts: TrackSet) -> dict:
    out = {
        "tracks": {format_label(lab): [[k, float(p[0]), float(p[1])] for k, p in pts.items()]
                   for lab, pts in sorted(ts.tracks.items())},
        "lineage": ts.lineage.to_dict(),
    }
    if ts.modes:
        out["modes"] = {format_label(lab): [[k, int(m)] for k, m in sorted(ms.items())]
                        for lab, ms in sorted(ts.modes.items())}
    return out


def trackset_from_dict(data: dict, source: str = "<data>") -> TrackSet:
    try:
        tracks = {parse_label(s): {int(k): (x, y) for k, x, y in rows} for s, rows in data["tracks"].items()}
        modes = {parse_label(s): {int(k): int(m) for k, m in rows} for s, rows in data.get("modes", {}).items()}
    except (ValueError, KeyError, TypeError) as exc:
        raise FileFormatError(f"{source}: {exc}") from exc
    return TrackSet(tracks, modes=modes)


def write_trackset(path, ts: TrackSet) -> None:
    with open(path, "w") as fh:
        json.dump(trackset_to_dict(ts), fh, indent=1, sort_keys=True)
        fh.write("\n")


def read_trackset(path) -> TrackSet:
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    with open(path) as fh:
        try:
            data = json.load(fh)
        except ValueError as exc:
            raise FileFormatError(f"{path}: {exc}") from exc
    return trackset_from_dict(data, str(path))
