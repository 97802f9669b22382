"""Video geometry, quality ladders, playback deadlines and FoV traces.

Chunks are 1-based (``c`` in ``1..C``) everywhere a chunk index crosses a
public boundary; tiles and quality levels are 0-based. Tile indices are
row-major over the tile grid.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

DEFAULT_LADDER_BPS = (1e6, 2.5e6, 5e6, 8e6, 16e6)
DEFAULT_GRID = (5, 10)
ORIGINAL_GRID = (10, 20)


@dataclass(frozen=True)
class QualityLadder:
    """Encoding rates (bits/s) of the available quality levels, lowest first."""

    rates: tuple[float, ...] = DEFAULT_LADDER_BPS

    def __post_init__(self):
        rates = tuple(float(r) for r in self.rates)
        object.__setattr__(self, "rates", rates)
        if len(rates) < 1:
            raise ValueError("a quality ladder needs at least one level")
        if any(b <= a for a, b in zip(rates, rates[1:])):
            raise ValueError(f"ladder rates must be strictly increasing: {rates}")
        if rates[0] <= 0:
            raise ValueError("ladder rates must be positive")

    @property
    def levels(self) -> int:
        return len(self.rates)

    @property
    def mean_rate(self) -> float:
        return sum(self.rates) / len(self.rates)


def afer(ladder: QualityLadder, fov_tile_count: int) -> float:
    """Average FoV encoding rate: ``K`` tiles times the mean ladder rate."""
    if fov_tile_count < 0:
        raise ValueError("fov_tile_count must be non-negative")
    return fov_tile_count * ladder.mean_rate


@dataclass(frozen=True)
class PlaybackTimeline:
    """Startup delay ``S``, margin ``m`` and chunk duration ``L`` in seconds."""

    startup_s: float = 2.0
    margin_s: float = 0.2
    chunk_s: float = 1.0
    chunks: int = 60

    def __post_init__(self):
        if self.chunk_s <= 0 or self.chunks < 1:
            raise ValueError("chunk duration and chunk count must be positive")
        if self.margin_s < 0 or self.startup_s < 0:
            raise ValueError("startup delay and margin must be non-negative")
        if self.deadline(1) <= 0:
            raise ValueError("first deadline S - m must be positive")

    def _check(self, c: int):
        if not 1 <= c <= self.chunks:
            raise IndexError(f"chunk {c} outside 1..{self.chunks}")

    def deadline(self, c: int) -> float:
        self._check(c)
        return self.startup_s + (c - 1) * self.chunk_s - self.margin_s

    def lower_deadline(self, c: int) -> float:
        """Earliest download time of chunk ``c``: the previous chunk's deadline."""
        self._check(c)
        if c == 1:
            return 0.0
        return self.deadline(c - 1)

    def window(self, c: int) -> tuple[float, float]:
        return self.lower_deadline(c), self.deadline(c)

    def playing_chunk(self, t: float) -> int | None:
        """Chunk being played at wall time ``t``, or None during startup/after the end."""
        if t < self.startup_s:
            return None
        c = int(np.floor((t - self.startup_s) / self.chunk_s)) + 1
        return c if c <= self.chunks else None


@dataclass(frozen=True, eq=False)
class VideoManifest:
    """Per-video tile geometry and VBR sizes.

    ``sizes`` has shape ``(C, J, A)`` and holds integer bit counts; entry
    ``[c - 1, j, q]`` is the size of tile ``j`` of chunk ``c`` at level ``q``.
    """

    video_id: int
    chunk_s: float
    grid: tuple[int, int]
    ladder: QualityLadder
    sizes: np.ndarray

    def __post_init__(self):
        sizes = np.asarray(self.sizes, dtype=np.int64)
        rows, cols = self.grid
        if sizes.ndim != 3 or sizes.shape[1] != rows * cols or sizes.shape[2] != self.ladder.levels:
            raise ValueError(
                f"sizes shape {sizes.shape} does not match grid {self.grid} "
                f"and {self.ladder.levels} levels"
            )
        if np.any(sizes <= 0) or np.any(np.diff(sizes, axis=2) <= 0):
            raise ValueError("tile sizes must be positive and strictly increasing in quality")
        sizes.setflags(write=False)
        object.__setattr__(self, "sizes", sizes)
        object.__setattr__(self, "grid", (int(rows), int(cols)))

    @property
    def chunks(self) -> int:
        return self.sizes.shape[0]

    @property
    def tiles(self) -> int:
        return self.sizes.shape[1]

    @property
    def levels(self) -> int:
        return self.sizes.shape[2]

    def tile_sizes(self, c: int, j: int) -> np.ndarray:
        self._check(c, j, 0)
        return self.sizes[c - 1, j]

    def _check(self, c, j, q):
        if not 1 <= c <= self.chunks:
            raise IndexError(f"chunk {c} outside 1..{self.chunks}")
        if not 0 <= j < self.tiles:
            raise IndexError(f"tile {j} outside 0..{self.tiles - 1}")
        if not 0 <= q < self.levels:
            raise IndexError(f"quality {q} outside 0..{self.levels - 1}")

    def size_delta(self, c: int, j: int, q: int) -> int:
        """Extra bits needed to move tile ``j`` of chunk ``c`` from level ``q-1`` to ``q``.

        Level 0 costs the full base size, so the deltas telescope to ``X[c][j][q]``.
        """
        self._check(c, j, q)
        row = self.sizes[c - 1, j]
        if q == 0:
            return int(row[0])
        return int(row[q] - row[q - 1])

    def deltas(self) -> np.ndarray:
        """All size deltas at once, same shape as ``sizes``."""
        return np.diff(self.sizes, axis=2, prepend=0)

    @classmethod
    def synthetic(cls, video_id, chunks, chunk_s=1.0, grid=DEFAULT_GRID, ladder=None,
                  jitter=0.2, rng=None) -> "VideoManifest":
        """VBR sizes ``rate * L * (1 + eps)`` with ``eps ~ U[-jitter, jitter]``.

        Sizes are sorted per tile so that quality stays strictly monotone.
        """
        ladder = ladder or QualityLadder()
        rng = np.random.default_rng(rng)
        rows, cols = grid
        base = np.asarray(ladder.rates) * chunk_s
        eps = rng.uniform(-jitter, jitter, size=(chunks, rows * cols, ladder.levels))
        sizes = np.rint(base * (1.0 + eps)).astype(np.int64)
        sizes = np.maximum(np.sort(sizes, axis=2), 1)
        # sorting keeps order but jitter can still produce exact ties
        for q in range(1, ladder.levels):
            sizes[:, :, q] = np.maximum(sizes[:, :, q], sizes[:, :, q - 1] + 1)
        return cls(video_id, chunk_s, (rows, cols), ladder, sizes)

    def to_json(self) -> dict:
        return {
            "video_id": self.video_id,
            "C": self.chunks,
            "L_seconds": self.chunk_s,
            "grid": list(self.grid),
            "ladder_bps": list(self.ladder.rates),
            "sizes_bits": self.sizes.tolist(),
        }

    @classmethod
    def from_json(cls, doc: dict, jitter=0.2, rng=None) -> "VideoManifest":
        ladder = QualityLadder(tuple(doc["ladder_bps"]))
        grid = tuple(doc.get("grid", DEFAULT_GRID))
        if doc.get("sizes_bits") is None:
            return cls.synthetic(doc["video_id"], int(doc["C"]), float(doc["L_seconds"]),
                                 grid, ladder, jitter=jitter, rng=rng)
        sizes = np.asarray(doc["sizes_bits"], dtype=np.int64)
        if sizes.shape[0] != int(doc["C"]):
            raise ValueError(f"sizes_bits has {sizes.shape[0]} chunks, C={doc['C']}")
        return cls(doc["video_id"], float(doc["L_seconds"]), grid, ladder, sizes)


def load_manifest(path, jitter=0.2, rng=None) -> VideoManifest:
    with open(path, encoding="utf-8") as fh:
        return VideoManifest.from_json(json.load(fh), jitter=jitter, rng=rng)


def save_manifest(manifest: VideoManifest, path):
    Path(path).write_text(json.dumps(manifest.to_json()) + "\n", encoding="utf-8")


@dataclass(frozen=True)
class FoVTrace:
    """Ground-truth viewed tiles of one user watching one video, per chunk."""

    user_id: int
    video_id: int
    fov: tuple[frozenset[int], ...] = field(default_factory=tuple)

    @property
    def chunks(self) -> int:
        return len(self.fov)

    def tiles_in(self, c: int) -> frozenset[int]:
        if not 1 <= c <= len(self.fov):
            raise IndexError(f"chunk {c} outside 1..{len(self.fov)}")
        return self.fov[c - 1]

    def mask(self, tiles: int) -> np.ndarray:
        """Boolean ``(C, J)`` membership matrix."""
        out = np.zeros((len(self.fov), tiles), dtype=bool)
        for i, s in enumerate(self.fov):
            if s:
                idx = np.fromiter(s, dtype=np.int64)
                if idx.min() < 0 or idx.max() >= tiles:
                    raise IndexError(f"tile index outside 0..{tiles - 1} in chunk {i + 1}")
                out[i, idx] = True
        return out


class FoVProbabilityMap:
    """``pr[c - 1, j]``: fraction of training traces whose chunk-``c`` FoV has tile ``j``."""

    def __init__(self, pr: np.ndarray, trace_count: int):
        pr = np.asarray(pr, dtype=float)
        if np.any(pr < 0) or np.any(pr > 1):
            raise ValueError("probabilities must lie in [0, 1]")
        self.pr = pr
        self.trace_count = trace_count

    def __getitem__(self, key):
        c, j = key
        return self.pr[c - 1, j]

    @property
    def chunks(self):
        return self.pr.shape[0]

    def leave_one_out(self, trace: FoVTrace) -> np.ndarray:
        """Probabilities recomputed without ``trace``; it must be one of the inputs."""
        if self.trace_count < 2:
            raise ValueError("leave-one-out needs at least two traces")
        counts = np.rint(self.pr * self.trace_count)
        own = trace.mask(self.pr.shape[1])[: self.pr.shape[0]]
        return (counts - own) / (self.trace_count - 1)


def estimate_fov_probability(traces: Sequence[FoVTrace], tiles: int,
                             chunks: int | None = None) -> FoVProbabilityMap:
    if not traces:
        raise ValueError("need at least one trace to estimate FoV probabilities")
    videos = {t.video_id for t in traces}
    if len(videos) != 1:
        raise ValueError(f"traces span several videos: {sorted(videos)}")
    chunks = chunks or max(t.chunks for t in traces)
    counts = np.zeros((chunks, tiles))
    for t in traces:
        m = t.mask(tiles)
        n = min(chunks, m.shape[0])
        counts[:n] += m[:n]
    return FoVProbabilityMap(counts / len(traces), len(traces))


def reduce_grid(frame_fov: Iterable[tuple[int, int]], original=ORIGINAL_GRID) -> set[tuple[int, int]]:
    """Map FoV cells of the original grid onto the half-resolution grid.

    A reduced cell is viewed if any of its 2x2 original cells is viewed.
    """
    rows, cols = original
    out = set()
    for r, c in frame_fov:
        if not (0 <= r < rows and 0 <= c < cols):
            raise IndexError(f"cell {(r, c)} outside {rows}x{cols} grid")
        out.add((r // 2, c // 2))
    return out


def tile_index(row: int, col: int, grid=DEFAULT_GRID) -> int:
    return row * grid[1] + col
