
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vrstream.media import (FoVTrace, PlaybackTimeline, QualityLadder, VideoManifest, afer,
                            estimate_fov_probability, load_manifest, reduce_grid, save_manifest,
                            tile_index)

MB = 1_000_000


def one_tile(x):
    ladder = QualityLadder(tuple(float(v) for v in x))
    return VideoManifest(0, 1.0, (1, 1), ladder, np.array([[x]]))


def test_size_delta_examples():
    m = one_tile([2 * MB, 4 * MB, 8 * MB])
    assert m.size_delta(1, 0, 0) == 2 * MB
    assert m.size_delta(1, 0, 2) == 4 * MB
    assert sum(m.size_delta(1, 0, q) for q in range(3)) == 8 * MB


def test_size_delta_out_of_range():
    m = one_tile([2, 4, 8])
    for args in [(1, 0, 3), (1, 0, -1), (2, 0, 0), (0, 0, 0), (1, 1, 0)]:
        with pytest.raises(IndexError):
            m.size_delta(*args)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 4), st.integers(1, 6))
def test_deltas_telescope(seed, chunks, levels):
    ladder = QualityLadder(tuple(float(1 + 2 * k) * MB for k in range(levels)))
    m = VideoManifest.synthetic(0, chunks, 1.0, (2, 3), ladder, rng=seed)
    assert np.array_equal(np.cumsum(m.deltas(), axis=2), m.sizes)
    c = chunks
    for q in range(levels):
        assert sum(m.size_delta(c, 5, k) for k in range(q + 1)) == m.sizes[c - 1, 5, q]


def test_synthetic_sizes_strictly_increasing_and_near_ladder():
    m = VideoManifest.synthetic(3, 10, 1.0, rng=1)
    assert m.sizes.shape == (10, 50, 5)
    assert np.all(np.diff(m.sizes, axis=2) > 0)
    rates = np.array(QualityLadder().rates)
    # sorting can swap neighbours but every value stays inside the widest jitter band
    assert np.all(m.sizes >= np.rint(rates[0] * 0.8))
    assert np.all(m.sizes <= np.rint(rates[-1] * 1.2))


def test_manifest_rejects_non_monotone():
    with pytest.raises(ValueError):
        one_tile([4, 4, 8])


def test_manifest_json_round_trip(tmp_path):
    m = VideoManifest.synthetic(7, 3, 1.0, (2, 2), rng=5)
    save_manifest(m, tmp_path / "m.json")
    back = load_manifest(tmp_path / "m.json")
    assert back.video_id == 7 and back.grid == (2, 2)
    assert np.array_equal(back.sizes, m.sizes)
    doc = m.to_json()
    del doc["sizes_bits"]
    gen = VideoManifest.from_json(doc, rng=0)
    assert gen.sizes.shape == (3, 4, 5)


def test_deadline_examples():
    tl = PlaybackTimeline(startup_s=2, margin_s=0.5, chunk_s=1, chunks=5)
    assert tl.deadline(1) == 1.5
    assert tl.deadline(3) == 3.5
    assert PlaybackTimeline(2, 0.0, 1, 5).deadline(1) == 2.0


def test_lower_deadline_examples():
    tl = PlaybackTimeline(startup_s=2, margin_s=0.5, chunk_s=1, chunks=5)
    assert tl.lower_deadline(1) == 0.0
    assert tl.lower_deadline(3) == 2.5 == tl.deadline(2)
    assert PlaybackTimeline(2, 0.0, 1, 5).lower_deadline(2) == 2.0


def test_deadline_range_errors():
    tl = PlaybackTimeline(chunks=3)
    with pytest.raises(IndexError):
        tl.deadline(0)
    with pytest.raises(IndexError):
        tl.lower_deadline(4)


@given(st.floats(0.5, 5), st.floats(0, 0.49), st.floats(0.5, 3), st.integers(1, 80))
def test_deadlines_ordered(startup, margin, chunk, chunks):
    tl = PlaybackTimeline(startup, margin, chunk, chunks)
    ds = [tl.deadline(c) for c in range(1, chunks + 1)]
    assert all(b > a for a, b in zip(ds, ds[1:]))
    if chunk > margin:
        assert all(tl.lower_deadline(c) < tl.deadline(c) for c in range(1, chunks + 1))


def test_playing_chunk():
    tl = PlaybackTimeline(2.0, 0.2, 1.0, 4)
    assert tl.playing_chunk(1.9) is None
    assert tl.playing_chunk(2.0) == 1
    assert tl.playing_chunk(3.5) == 2
    assert tl.playing_chunk(6.0) is None


def test_afer_examples():
    assert afer(QualityLadder((1e6, 2e6, 3e6, 4e6, 5e6)), 20) == 60e6
    assert afer(QualityLadder(), 0) == 0
    assert afer(QualityLadder((2e6,)), 10) == 20e6


def test_ladder_validation():
    with pytest.raises(ValueError):
        QualityLadder(())
    with pytest.raises(ValueError):
        QualityLadder((2.0, 1.0))


def test_reduce_grid_examples():
    assert reduce_grid({(0, 0)}) == {(0, 0)}
    assert reduce_grid(set()) == set()
    full = {(r, c) for r in range(10) for c in range(20)}
    assert reduce_grid(full) == {(r, c) for r in range(5) for c in range(10)}
    assert reduce_grid({(3, 5), (2, 4)}) == {(1, 2)}
    with pytest.raises(IndexError):
        reduce_grid({(10, 0)})


@given(st.sets(st.tuples(st.integers(0, 9), st.integers(0, 19)), max_size=40),
       st.tuples(st.integers(0, 9), st.integers(0, 19)))
def test_reduce_grid_monotone(cells, extra):
    assert reduce_grid(cells) <= reduce_grid(cells | {extra})


def test_tile_index_row_major():
    assert tile_index(0, 0) == 0
    assert tile_index(1, 0) == 10
    assert tile_index(4, 9) == 49


def mk(video, *chunks):
    return FoVTrace(0, video, tuple(frozenset(c) for c in chunks))


def test_probability_fraction():
    traces = [mk(0, {3} if i < 7 else {4}) for i in range(35)]
    pm = estimate_fov_probability(traces, tiles=10)
    assert pm[1, 3] == pytest.approx(0.2)
    assert pm[1, 4] == pytest.approx(0.8)


def test_probability_unanimous_and_single():
    pm = estimate_fov_probability([mk(0, {1, 2}), mk(0, {1})], tiles=4)
    assert pm[1, 1] == 1.0
    single = estimate_fov_probability([mk(0, {0}, {2, 3})], tiles=4)
    assert set(np.unique(single.pr)) <= {0.0, 1.0}


def test_probability_errors():
    with pytest.raises(ValueError):
        estimate_fov_probability([], tiles=4)
    with pytest.raises(ValueError):
        estimate_fov_probability([mk(0, {1}), mk(1, {1})], tiles=4)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.lists(st.sets(st.integers(0, 5), max_size=6), min_size=3, max_size=3),
                min_size=2, max_size=12))
def test_probability_multiples_and_leave_one_out(raw):
    traces = [mk(0, *t) for t in raw]
    pm = estimate_fov_probability(traces, tiles=6)
    n = len(traces)
    assert np.all((pm.pr >= 0) & (pm.pr <= 1))
    assert np.allclose(pm.pr * n, np.rint(pm.pr * n))
    loo = pm.leave_one_out(traces[0])
    direct = estimate_fov_probability(traces[1:], tiles=6, chunks=3).pr
    assert np.allclose(loo, direct)


def test_trace_mask_bounds():
    t = mk(0, {0, 5})
    with pytest.raises(IndexError):
        t.mask(5)
    with pytest.raises(IndexError):
        t.tiles_in(2)
