"""Head-movement trace files, train/test splitting and a synthetic generator.

Trace CSV layout: header ``user,video,chunk,tile``, one row per viewed tile,
chunks 1-based, tiles 0-based row-major.
"""

from __future__ import annotations

import csv
from collections import defaultdict
from pathlib import Path

import numpy as np

from .media import DEFAULT_GRID, FoVTrace

HEADER = ["user", "video", "chunk", "tile"]


class TraceFormatError(ValueError):
    pass


def load_traces(path, tiles: int | None = None, chunks: int | None = None) -> list[FoVTrace]:
    """Parse a trace CSV. ``tiles`` / ``chunks`` bound the allowed indices when given.

    A trace covers chunks 1..C where C is the largest chunk seen for it (or
    ``chunks``); chunks with no rows get an empty FoV.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"{path}: no such trace file")
    rows = defaultdict(lambda: defaultdict(set))
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise TraceFormatError(f"{path}:1: missing header")
        if [h.strip() for h in header] != HEADER:
            raise TraceFormatError(f"{path}:1: expected header {','.join(HEADER)}, got {','.join(header)}")
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != 4:
                raise TraceFormatError(f"{path}:{lineno}: expected 4 fields, got {len(rec)}")
            try:
                user, video, chunk, tile = (int(x) for x in rec)
            except ValueError:
                raise TraceFormatError(f"{path}:{lineno}: non-integer field in {rec}") from None
            if chunk < 1 or (chunks is not None and chunk > chunks):
                raise TraceFormatError(f"{path}:{lineno}: chunk {chunk} out of range")
            if tile < 0 or (tiles is not None and tile >= tiles):
                raise TraceFormatError(f"{path}:{lineno}: tile {tile} out of range")
            rows[(user, video)][chunk].add(tile)
    out = []
    for (user, video), per_chunk in sorted(rows.items()):
        n = chunks or max(per_chunk)
        out.append(FoVTrace(user, video, tuple(frozenset(per_chunk.get(c, ())) for c in range(1, n + 1))))
    return out


def save_traces(traces, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HEADER)
        for t in sorted(traces, key=lambda t: (t.user_id, t.video_id)):
            for c, tiles in enumerate(t.fov, start=1):
                for j in sorted(tiles):
                    w.writerow([t.user_id, t.video_id, c, j])


def train_count(n: int, fraction: float) -> int:
    if n < 2:
        raise ValueError(f"need at least two traces per video to split, got {n}")
    return min(max(int(np.floor(n * fraction + 0.5)), 1), n - 1)


def split_traces(traces, train_fraction: float = 0.7, seed: int = 0):
    """Per-video user-level split into (train, test)."""
    by_video = defaultdict(list)
    for t in traces:
        by_video[t.video_id].append(t)
    rng = np.random.default_rng(seed)
    train, test = [], []
    for video in sorted(by_video):
        group = sorted(by_video[video], key=lambda t: t.user_id)
        k = train_count(len(group), train_fraction)
        perm = rng.permutation(len(group))
        train.extend(group[i] for i in sorted(perm[:k]))
        test.extend(group[i] for i in sorted(perm[k:]))
    return train, test


def fov_block(center, block, grid=DEFAULT_GRID) -> frozenset[int]:
    """Tiles of a ``block`` = (h, w) window around ``center``; columns wrap, rows clamp."""
    rows, cols = grid
    h, w = min(block[0], rows), min(block[1], cols)
    r0 = min(max(center[0] - (h - 1) // 2, 0), rows - h)
    c0 = center[1] - (w - 1) // 2
    return frozenset((r0 + i) * cols + (c0 + k) % cols for i in range(h) for k in range(w))


def generate_traces(videos: int, users: int, chunks: int, grid=DEFAULT_GRID, seed: int = 0,
                    step=1, block=(3, 3), spread: int = 1) -> list[FoVTrace]:
    """Random-walk viewports.

    Each video has a random anchor viewport; users start within ``spread``
    tiles of it and then move by a uniform integer step in ``[-step, step]``
    per chunk along both axes. ``step`` and ``block`` may also be per-video
    sequences (cycled).
    """
    rows, cols = grid
    rng = np.random.default_rng(seed)
    steps = step if isinstance(step, (list, tuple)) else [step]
    blocks = block if block and isinstance(block[0], (list, tuple)) else [block]
    out = []
    for v in range(videos):
        s = int(steps[v % len(steps)])
        b = tuple(blocks[v % len(blocks)])
        anchor = (int(rng.integers(rows)), int(rng.integers(cols)))
        for u in range(users):
            jitter = rng.integers(-spread, spread + 1, size=2) if spread > 0 else np.zeros(2, int)
            r = min(max(anchor[0] + int(jitter[0]), 0), rows - 1)
            c = (anchor[1] + int(jitter[1])) % cols
            fov = []
            for _ in range(chunks):
                fov.append(fov_block((r, c), b, grid))
                if s > 0:
                    dr, dc = rng.integers(-s, s + 1, size=2)
                    r = min(max(r + int(dr), 0), rows - 1)
                    c = (c + int(dc)) % cols
            out.append(FoVTrace(u, v, tuple(fov)))
    return out
