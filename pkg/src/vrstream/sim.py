"""Discrete-time episode engine.

One chunk download window is one beam-coherence block of ``T_B`` slots: the
first ``T_A`` slots are spent on beam alignment, the remaining ``T`` slots are
shared between the users by the PHY scheduler. A user's byte budget for the
chunk is what its slots can carry. The scheme's selector then decides tile
qualities, bits flow slot by slot in the selector's download order, and the
tiles that completed are scored against the user's real FoV.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field, fields

import numpy as np

from . import agents as rl
from .baselines import BandwidthPredictor, fps_select, qps_select
from .channel import RadioConfig, instantaneous_rate, sample_link
from .media import (DEFAULT_LADDER_BPS, FoVProbabilityMap, FoVTrace, PlaybackTimeline,
                    QualityLadder, VideoManifest, afer, estimate_fov_probability)
from .phy import SchedulerInstance, proportional_fair_order, schedule


class ConfigError(ValueError):
    pass


class DataError(ValueError):
    pass


@dataclass
class SimConfig:
    users: int = 5
    grid: tuple = (5, 10)
    chunks: int = 60
    chunk_s: float = 1.0
    startup_s: float = 2.0
    margin_s: float = 0.2
    ladder_bps: tuple = DEFAULT_LADDER_BPS
    size_jitter: float = 0.2
    coherence_slots: int = 100
    alignment_fraction: float = 0.05
    distance_min_m: float = 15.0
    distance_max_m: float = 35.0
    bandwidth_hz: float = 1e9
    tx_power_dbm: float = 45.0
    noise_psd_w_per_hz: float = 1e-9
    beam_gain: float = 10.0
    pathloss_exp: float = 2.0
    pathloss_ref_gain: float = 1.0
    sbs_count: int = 1
    lam: float = 0.0
    pf_window: int = 100
    predictor_window: int = 100
    p_th: float = 0.01
    beta: float | None = None
    miss_penalty: float = 1.0
    gamma: float = 0.9
    actor_lr: float = 1e-3
    critic_lr: float = 1e-3
    skip_action: bool = True
    budget_bound_bits: float | None = None
    unlimited_budget: bool = False
    oracle_fov: bool = False
    seed: int = 0

    def __post_init__(self):
        self.grid = tuple(int(x) for x in self.grid)
        self.ladder_bps = tuple(float(x) for x in self.ladder_bps)
        if self.users < 1:
            raise ConfigError("need at least one user")
        if len(self.grid) != 2 or min(self.grid) < 1:
            raise ConfigError(f"grid must be [rows, cols], got {self.grid}")
        if self.chunks < 1:
            raise ConfigError("need at least one chunk")
        if not 0 <= self.alignment_fraction < 1:
            raise ConfigError("alignment fraction must lie in [0, 1)")
        if self.data_slots < 1:
            raise ConfigError("no data slots left after beam alignment")
        if not 0 < self.distance_min_m <= self.distance_max_m:
            raise ConfigError("need 0 < distance_min_m <= distance_max_m")
        if self.margin_s >= self.chunk_s:
            raise ConfigError("margin must be shorter than a chunk")
        if self.startup_s - self.margin_s <= 0:
            raise ConfigError("first deadline must be positive")
        if self.beta is not None and not 0 < self.beta <= 1:
            raise ConfigError("beta must lie in (0, 1]")
        if not 0 < self.gamma <= 1:
            raise ConfigError("gamma must lie in (0, 1]")
        try:
            self.radio()
            self.ladder()
            SchedulerInstance((1.0,), (0.0,), self.data_slots, self.coherence_slots, self.lam)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    @property
    def alignment_slots(self) -> int:
        return int(math.floor(self.alignment_fraction * self.coherence_slots + 0.5))

    @property
    def data_slots(self) -> int:
        return self.coherence_slots - self.alignment_slots

    @property
    def tiles(self) -> int:
        return self.grid[0] * self.grid[1]

    @property
    def beta_value(self) -> float:
        return 1.0 / (self.tiles + 1) if self.beta is None else self.beta

    def timeline(self) -> PlaybackTimeline:
        return PlaybackTimeline(self.startup_s, self.margin_s, self.chunk_s, self.chunks)

    def radio(self) -> RadioConfig:
        return RadioConfig.from_dbm(
            self.tx_power_dbm, bandwidth_hz=self.bandwidth_hz,
            noise_psd_w_per_hz=self.noise_psd_w_per_hz, pathloss_exp=self.pathloss_exp,
            pathloss_ref_gain=self.pathloss_ref_gain, beam_gain=self.beam_gain,
            sbs_count=self.sbs_count)

    def ladder(self) -> QualityLadder:
        return QualityLadder(self.ladder_bps)

    @classmethod
    def keys(cls):
        return [f.name for f in fields(cls)]


@dataclass(frozen=True)
class Scheme:
    name: str
    selector: str   # "qps" | "fps" | "rl"
    phy: str        # "PF" | "PR"


SCHEMES = {
    "QPS-PF": Scheme("QPS-PF", "qps", "PF"),
    "FPS-PF": Scheme("FPS-PF", "fps", "PF"),
    "QPS-PR": Scheme("QPS-PR", "qps", "PR"),
    "FPS-PR": Scheme("FPS-PR", "fps", "PR"),
    "PROPOSED": Scheme("PROPOSED", "rl", "PR"),
}


@dataclass
class VideoData:
    manifest: VideoManifest
    train: list
    test: list
    prob: FoVProbabilityMap


def prepare_videos(cfg: SimConfig, train, test, seed=None) -> dict[int, VideoData]:
    """Synthetic manifests plus FoV probability maps from the training traces."""
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    by_train, by_test = {}, {}
    for t in train:
        by_train.setdefault(t.video_id, []).append(t)
    for t in test:
        by_test.setdefault(t.video_id, []).append(t)
    out = {}
    for v in sorted(set(by_train) | set(by_test)):
        if v not in by_train or v not in by_test:
            raise DataError(f"video {v} needs both training and test traces")
        for t in by_train[v] + by_test[v]:
            if t.chunks < cfg.chunks:
                raise DataError(f"trace user={t.user_id} video={v} has {t.chunks} chunks, need {cfg.chunks}")
        manifest = VideoManifest.synthetic(v, cfg.chunks, cfg.chunk_s, cfg.grid, cfg.ladder(),
                                           jitter=cfg.size_jitter, rng=rng)
        prob = estimate_fov_probability(by_train[v], cfg.tiles, cfg.chunks)
        out[v] = VideoData(manifest, by_train[v], by_test[v], prob)
    return out


def feature_scaler(cfg: SimConfig, videos) -> rl.FeatureScaler:
    top = max(float(d.manifest.sizes.max()) for d in videos.values())
    bound = cfg.budget_bound_bits if cfg.budget_bound_bits else top * cfg.tiles
    return rl.FeatureScaler(top, bound)


@dataclass
class Session:
    """One user watching one video inside an episode, with per-chunk inputs precomputed."""

    user: int
    manifest: VideoManifest
    fov_prob: np.ndarray     # (C, J)
    playing_fov: np.ndarray  # (C, J)
    realized: np.ndarray     # (C, J) bool
    afer_tiles: np.ndarray   # (C,)


def make_session(cfg: SimConfig, user: int, manifest: VideoManifest, prob_rows, trace: FoVTrace) -> Session:
    """``prob_rows`` is the ``(C, J)`` probability map the user's decisions rely on.

    The AFER tile count uses the FoV of the chunk playing when the download
    window opens; before playback starts it falls back to the expected FoV
    size under ``prob_rows``.
    """
    tl = cfg.timeline()
    realized = trace.mask(cfg.tiles)[: cfg.chunks]
    prob = realized.astype(float) if cfg.oracle_fov else np.asarray(prob_rows, dtype=float)[: cfg.chunks]
    playing = np.zeros_like(realized, dtype=float)
    k = np.zeros(cfg.chunks, dtype=np.int64)
    for c in range(1, cfg.chunks + 1):
        pc = tl.playing_chunk(tl.lower_deadline(c))
        if pc is None:
            k[c - 1] = int(np.floor(prob[c - 1].sum() + 0.5))
        else:
            playing[c - 1] = realized[pc - 1]
            k[c - 1] = int(realized[pc - 1].sum())
    return Session(user, manifest, prob, playing, realized, k)


def draw_rates(cfg: SimConfig, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """User distances ``(U,)`` and per-block instantaneous rates ``(C, U)`` in bits/s."""
    radio = cfg.radio()
    d = rng.uniform(cfg.distance_min_m, cfg.distance_max_m, size=cfg.users)
    rates = np.empty((cfg.chunks, cfg.users))
    for c in range(cfg.chunks):
        for u in range(cfg.users):
            rates[c, u] = instantaneous_rate(sample_link(rng, d[u], radio), radio)
    return d, rates


def slot_plan(cfg: SimConfig, phy: str, rates, afer_bps):
    """Slot counts per user and the owner of every slot of the block (``-1`` = alignment)."""
    if phy == "PR":
        inst = SchedulerInstance(tuple(rates), tuple(afer_bps), cfg.data_slots,
                                 cfg.coherence_slots, cfg.lam)
        alloc = schedule(inst, record_trace=False).allocation
        owners = [u for u, t in enumerate(alloc) for _ in range(t)]
    elif phy == "PF":
        owners = proportional_fair_order(rates, cfg.data_slots, cfg.pf_window)
        alloc = np.bincount(owners, minlength=len(rates)).tolist()
    else:
        raise ConfigError(f"unknown PHY scheduler {phy!r}")
    return list(alloc), np.array([-1] * cfg.alignment_slots + list(owners), dtype=np.int64)


@dataclass
class ChunkOutcome:
    user: int
    chunk: int
    reward: float
    normalized_reward: float
    decided: np.ndarray
    delivered: np.ndarray
    missed_fov_tiles: int
    fov_tiles: int
    slots: int
    budget_bits: float
    decision_budget_bits: float
    committed_bits: float
    delivered_bits: float
    violation_bps: float


@dataclass
class SlotLog:
    """Per-slot transfers of one chunk window, kept for invariant checks."""

    chunk: int
    window: tuple[float, float]
    owners: np.ndarray
    slot_start: np.ndarray
    slot_end: np.ndarray
    bits: np.ndarray          # (U, T_B)
    capacity: np.ndarray      # (U, T_B)


def normalized_reward(reward: float, fov_tiles: int, beta: float, top_level: int) -> float:
    """Reward over the best achievable ``K * sum_{q=0..Q} beta^q``; 0 for an empty FoV."""
    if fov_tiles < 0:
        raise ValueError("FoV size cannot be negative")
    if fov_tiles == 0:
        return 0.0
    ceiling = fov_tiles * float(np.sum(beta ** np.arange(top_level + 1)))
    return reward / ceiling


def pieces_for(qualities) -> list:
    """Tile order download of the deltas ``0..q_j`` for each tile."""
    return [(j, k) for j, q in enumerate(qualities) for k in range(q + 1)]


def transfer(piece_bits, capacity):
    """Fill slots in order with the piece stream; returns (bits per slot, completed piece count)."""
    demand = float(np.sum(piece_bits))
    cum_cap = np.cumsum(capacity)
    moved = np.minimum(cum_cap, demand)
    per_slot = np.diff(moved, prepend=0.0)
    done = np.cumsum(piece_bits) <= (moved[-1] if len(moved) else 0.0)
    return per_slot, int(done.sum())


def delivered_levels(pieces, completed: int, tiles: int) -> np.ndarray:
    """Highest level of each tile whose pieces ``0..q`` all completed."""
    level = np.full(tiles, -1, dtype=np.int64)
    for j, k in pieces[:completed]:
        if level[j] == k - 1:
            level[j] = k
    return level


class SchemeState:
    """Per-episode state a scheme carries across chunks (bandwidth predictors)."""

    def __init__(self, cfg: SimConfig):
        self.predictors = [BandwidthPredictor(cfg.predictor_window) for _ in range(cfg.users)]


def run_chunk_period(cfg: SimConfig, scheme: Scheme, c: int, sessions, rates, state: SchemeState,
                     agents=None, scaler=None):
    """Simulate one download window for every user; returns (outcomes, slot log)."""
    users = len(sessions)
    tl = cfg.timeline()
    lo, hi = tl.window(c)
    tau = (hi - lo) / cfg.coherence_slots
    ladder = cfg.ladder()
    beta = cfg.beta_value
    levels = ladder.levels

    afer_bps = [afer(ladder, int(s.afer_tiles[c - 1])) for s in sessions]
    alloc, owners = slot_plan(cfg, scheme.phy, rates, afer_bps)
    per_slot_bits = np.floor(np.asarray(rates) * tau)
    capacity = np.zeros((users, cfg.coherence_slots))
    for u in range(users):
        capacity[u, owners == u] = per_slot_bits[u]
    if cfg.unlimited_budget:
        capacity[capacity > 0] = np.inf
    budgets = capacity.sum(axis=1)

    sizes = np.stack([s.manifest.sizes[c - 1] for s in sessions])      # (U, J, A)
    prob = np.stack([s.fov_prob[c - 1] for s in sessions])
    realized = np.stack([s.realized[c - 1] for s in sessions])

    if scheme.selector == "rl":
        if agents is None:
            raise ConfigError("the learned scheme needs trained agents")
        decision_budget = budgets.copy()
        batch = rl.EpisodeBatch(decision_budget, prob, np.stack([s.playing_fov[c - 1] for s in sessions]),
                                sizes, realized, np.full(users, -1))
        decided = rl.decide(agents, batch, scaler, "eval").qualities
        plans = [(decided[u], pieces_for(decided[u])) for u in range(users)]
    else:
        if cfg.unlimited_budget:
            decision_budget = np.full(users, np.inf)
        else:
            decision_budget = np.array([p.predict() * (hi - lo) for p in state.predictors])
        pick = qps_select if scheme.selector == "qps" else \
            (lambda p, b, s: fps_select(p, b, s, cfg.p_th))
        plans = [pick(prob[u], decision_budget[u], sizes[u]) for u in range(users)]

    starts = lo + tau * np.arange(cfg.coherence_slots)
    ends = starts + tau
    inside = (starts >= lo - 1e-12) & (ends <= hi + 1e-9)
    bits = np.zeros_like(capacity)
    outcomes = []
    delta = np.diff(sizes, axis=2, prepend=0)
    for u in range(users):
        q_dec, pieces = plans[u]
        piece_bits = np.array([delta[u, j, k] for j, k in pieces], dtype=float)
        per_slot, completed = transfer(piece_bits, np.where(inside, capacity[u], 0.0))
        bits[u] = per_slot
        q_del = delivered_levels(pieces, completed, cfg.tiles)
        contrib = rl.tile_contributions(q_del, realized[u], beta, cfg.miss_penalty)
        reward = float(contrib.sum())
        k_real = int(realized[u].sum())
        outcomes.append(ChunkOutcome(
            user=sessions[u].user, chunk=c, reward=reward,
            normalized_reward=normalized_reward(reward, k_real, beta, levels - 1),
            decided=np.asarray(q_dec), delivered=q_del,
            missed_fov_tiles=int(np.sum(realized[u] & (q_del < 0))), fov_tiles=k_real,
            slots=int(alloc[u]), budget_bits=float(budgets[u]),
            decision_budget_bits=float(decision_budget[u]),
            committed_bits=float(piece_bits.sum()), delivered_bits=float(per_slot.sum()),
            violation_bps=max(afer_bps[u] - alloc[u] / cfg.coherence_slots * rates[u], 0.0),
        ))
        # what the link offered this user in each slot of the block
        state.predictors[u].extend((np.where(owners == u, per_slot_bits[u], 0.0) / tau).tolist())
    log = SlotLog(c, (lo, hi), owners, starts, ends, bits, capacity)
    return outcomes, log


@dataclass
class EpisodeMetrics:
    scheme: str
    outcomes: list = field(default_factory=list)
    slot_logs: list = field(default_factory=list)

    def rewards(self) -> np.ndarray:
        return np.array([o.reward for o in self.outcomes])

    def violations(self, user) -> list[float]:
        return [o.violation_bps for o in self.outcomes if o.user == user]


def run_episode(cfg: SimConfig, scheme: Scheme, sessions, rates, agents=None, scaler=None,
                keep_logs=False) -> EpisodeMetrics:
    if not sessions:
        raise DataError("an episode needs at least one user session")
    state = SchemeState(cfg)
    out = EpisodeMetrics(scheme.name)
    for c in range(1, cfg.chunks + 1):
        res, log = run_chunk_period(cfg, scheme, c, sessions, rates[c - 1], state, agents, scaler)
        out.outcomes.extend(res)
        if keep_logs:
            out.slot_logs.append(log)
    return out


def heldout_sessions(cfg: SimConfig, videos, episode: int) -> list[Session]:
    """User ``u`` watches video ``u`` (cycled) with the ``episode``-th held-out trace."""
    vids = sorted(videos)
    sessions = []
    for u in range(cfg.users):
        data = videos[vids[u % len(vids)]]
        trace = data.test[episode % len(data.test)]
        sessions.append(make_session(cfg, u, data.manifest, data.prob.pr, trace))
    return sessions


def evaluate(cfg: SimConfig, videos, schemes, episodes: int = 1, agents=None, scaler=None,
             keep_logs=False) -> dict[str, list[EpisodeMetrics]]:
    """Run every scheme on the same channels and test users (common random numbers)."""
    scaler = scaler or feature_scaler(cfg, videos)
    out = {name: [] for name in schemes}
    for e in range(episodes):
        rng = np.random.default_rng([cfg.seed, 1, e])
        _, rates = draw_rates(cfg, rng)
        sessions = heldout_sessions(cfg, videos, e)
        for name in schemes:
            out[name].append(run_episode(cfg, SCHEMES[name], sessions, rates, agents, scaler, keep_logs))
    return out


class TrainingEnvironment:
    """Episodes over the training traces for the learned selector.

    Episode ``n`` lets user ``u`` watch video ``u`` (cycled) following the
    ``n``-th training trace of that video (round-robin); FoV probabilities
    leave that trace out. The PHY is the proposed scheduler, so the budget the
    agents see is exactly what the slots carry and every decision downloads.
    """

    def __init__(self, cfg: SimConfig, videos, scaler=None):
        self.cfg = cfg
        self.videos = videos
        self.vids = sorted(videos)
        self.scaler = scaler or feature_scaler(cfg, videos)
        self.beta = cfg.beta_value
        self._episode = 0
        self._lock = threading.Lock()
        self._loo = {}
        for v, data in videos.items():
            for i, t in enumerate(data.train):
                self._loo[v, i] = data.prob.leave_one_out(t) if len(data.train) > 1 else data.prob.pr

    def sessions(self, n: int) -> list[Session]:
        out = []
        for u in range(self.cfg.users):
            v = self.vids[u % len(self.vids)]
            data = self.videos[v]
            i = (n + u // len(self.vids)) % len(data.train)
            out.append(make_session(self.cfg, u, data.manifest, self._loo[v, i], data.train[i]))
        return out

    def budgets(self, sessions, rates) -> np.ndarray:
        """Per (chunk, user) budget in bits under the proposed scheduler."""
        cfg = self.cfg
        tl = cfg.timeline()
        ladder = cfg.ladder()
        out = np.empty((cfg.chunks, len(sessions)))
        for c in range(1, cfg.chunks + 1):
            lo, hi = tl.window(c)
            tau = (hi - lo) / cfg.coherence_slots
            afer_bps = [afer(ladder, int(s.afer_tiles[c - 1])) for s in sessions]
            alloc, _ = slot_plan(cfg, "PR", rates[c - 1], afer_bps)
            out[c - 1] = np.asarray(alloc) * np.floor(rates[c - 1] * tau)
        if cfg.unlimited_budget:
            out[:] = np.inf
        return out

    def sample_episode(self, rng) -> rl.EpisodeBatch:
        with self._lock:
            n = self._episode
            self._episode += 1
        sessions = self.sessions(n)
        _, rates = draw_rates(self.cfg, rng)
        budgets = self.budgets(sessions, rates)
        return session_batch(sessions, budgets)


def session_batch(sessions, budgets) -> rl.EpisodeBatch:
    """Rows ordered user-major: row ``u * C + (c - 1)``."""
    chunks = budgets.shape[0]
    users = len(sessions)
    nxt = np.arange(users * chunks) + 1
    nxt[chunks - 1::chunks] = -1
    return rl.EpisodeBatch(
        budgets=budgets.T.reshape(-1),
        fov_prob=np.concatenate([s.fov_prob for s in sessions]),
        playing_fov=np.concatenate([s.playing_fov for s in sessions]),
        sizes=np.concatenate([s.manifest.sizes[:chunks] for s in sessions]),
        realized_fov=np.concatenate([s.realized for s in sessions]),
        next_row=nxt,
        users=np.repeat([s.user for s in sessions], chunks),
        chunks=np.tile(np.arange(1, chunks + 1), users),
    )


def aggregate(results: dict[str, list[EpisodeMetrics]]) -> dict:
    """Per-scheme per-user mean reward and empirical CDFs of reward / normalized reward."""
    table = {}
    for name, episodes in results.items():
        outs = [o for ep in episodes for o in ep.outcomes]
        if not outs:
            raise DataError(f"no outcomes for scheme {name}")
        users = sorted({o.user for o in outs})
        table[name] = {
            "mean_reward": float(np.mean([o.reward for o in outs])),
            "per_user": {u: float(np.mean([o.reward for o in outs if o.user == u])) for u in users},
            "reward_cdf": empirical_cdf([o.reward for o in outs]),
            "normalized_cdf": empirical_cdf([o.normalized_reward for o in outs]),
        }
    if not table:
        raise DataError("nothing to aggregate")
    return table


def empirical_cdf(values) -> list[tuple[float, float]]:
    v = np.sort(np.asarray(values, dtype=float))
    if len(v) == 0:
        raise DataError("empty sample")
    uniq, last = np.unique(v, return_index=False, return_counts=True)
    frac = np.cumsum(last) / len(v)
    return [(float(x), float(f)) for x, f in zip(uniq, frac)]
