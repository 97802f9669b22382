"""Per-tile actor-critic quality selection.

Every tile index ``j`` owns an agent (actor + critic). Within a chunk the
agents act in tile order, each seeing the budget left by the agents before
it. Agent ``j`` is rewarded with ``eta_c^j``, the QoE of the FoV tiles
``j..J`` of the chunk, so earlier agents are credited for the budget they
leave to later ones.

Episodes are handled as :class:`EpisodeBatch` objects holding one row per
(user, chunk). Budgets of different chunks do not depend on each other's
decisions, so agent ``j`` can act on all rows at once.
"""

from __future__ import annotations

import logging
import threading
from dataclasses import dataclass, field, asdict
from itertools import product
from pathlib import Path
import json

import numpy as np

from . import nn

log = logging.getLogger(__name__)

SKIP = -1


@dataclass(frozen=True)
class AgentState:
    budget_bits: float
    fov_prob: float
    playing_fov: int
    sizes_bits: np.ndarray

    def __post_init__(self):
        if self.budget_bits < 0:
            raise ValueError("remaining budget cannot be negative")
        if not 0.0 <= self.fov_prob <= 1.0:
            raise ValueError("FoV probability must lie in [0, 1]")
        if self.playing_fov not in (0, 1):
            raise ValueError("playing-FoV indicator must be 0 or 1")


@dataclass(frozen=True)
class QualityDecision:
    probs: np.ndarray
    action: int
    quality: int

    @property
    def skipped(self) -> bool:
        return self.quality == SKIP


@dataclass(frozen=True)
class FeatureScaler:
    """Min-max bounds (lower bound 0) used to bring raw bits into [0, 1]."""

    size_bits: float
    budget_bits: float

    def sizes(self, sizes_bits):
        return np.asarray(sizes_bits, dtype=float) / self.size_bits

    def scalars(self, budget_bits, fov_prob, playing_fov):
        g = np.clip(np.asarray(budget_bits, dtype=float) / self.budget_bits, 0.0, 1.0)
        return np.stack([g, np.asarray(fov_prob, dtype=float),
                         np.asarray(playing_fov, dtype=float)], axis=-1)

    @classmethod
    def for_sizes(cls, sizes_bits, tiles: int) -> "FeatureScaler":
        top = float(np.max(sizes_bits))
        return cls(size_bits=top, budget_bits=top * tiles)


def assemble_state(budget_bits, fov_prob_row, playing_fov_row, manifest, c: int, j: int) -> AgentState:
    """State of agent ``j`` for chunk ``c``; ``budget_bits`` is what agents ``< j`` left."""
    return AgentState(
        budget_bits=float(budget_bits),
        fov_prob=float(fov_prob_row[j]),
        playing_fov=int(bool(playing_fov_row[j])),
        sizes_bits=manifest.tile_sizes(c, j),
    )


def tile_contributions(qualities, realized_fov, beta: float, miss_penalty: float = 1.0) -> np.ndarray:
    """Per-tile QoE: ``sum_{q<=q_j} beta^q`` for delivered FoV tiles, ``-penalty`` for missed ones.

    ``qualities`` uses ``-1`` for tiles that were not delivered. Works on any
    leading batch shape.
    """
    q = np.asarray(qualities)
    fov = np.asarray(realized_fov, dtype=bool)
    if beta == 1.0:
        nested = q + 1.0
    else:
        nested = (1.0 - beta ** (q + 1.0)) / (1.0 - beta)
    return np.where(fov, np.where(q >= 0, nested, -miss_penalty), 0.0)


def nested_reward_table(levels: int, beta: float) -> np.ndarray:
    """Exact ``sum_{k<=q} beta^k`` for ``q = 0..levels-1``, by direct summation."""
    return np.cumsum(beta ** np.arange(levels))


def compute_reward(qualities, realized_fov, beta: float, start_tile: int = 0,
                   miss_penalty: float = 1.0) -> float:
    """QoE of the FoV tiles ``start_tile..J-1`` of one chunk."""
    q = np.asarray(qualities)
    table = nested_reward_table(int(max(q.max(), 0)) + 1, beta)
    total = 0.0
    for k in range(start_tile, len(q)):
        if realized_fov[k]:
            total += table[q[k]] if q[k] >= 0 else -miss_penalty
    return total


def rewards_to_go(contrib) -> np.ndarray:
    """``eta[..., j] = sum_{k >= j} contrib[..., k]``."""
    return np.flip(np.cumsum(np.flip(contrib, axis=-1), axis=-1), axis=-1)


def advantage(reward, gamma, v_next, v_cur):
    return reward + gamma * v_next - v_cur


def action_to_quality(action, skip_action: bool):
    return np.asarray(action) - 1 if skip_action else np.asarray(action)


def affordable(quality, sizes_bits, budget_bits):
    """Degrade each choice to the best level that fits the budget (``-1`` if none)."""
    quality = np.atleast_1d(np.asarray(quality))
    sizes_bits = np.atleast_2d(sizes_bits)
    budget = np.atleast_1d(np.asarray(budget_bits, dtype=float))
    fits = sizes_bits <= budget[:, None]
    levels = np.arange(sizes_bits.shape[1])
    ok = fits & (levels[None, :] <= quality[:, None])
    best = np.where(ok, levels[None, :], -1).max(axis=1)
    return np.where(quality < 0, SKIP, best)


@dataclass
class TileAgent:
    tile: int
    actor: nn.Params
    critic: nn.Params
    gamma: float = 0.9
    skip_action: bool = True

    @classmethod
    def create(cls, tile, levels, rng, gamma=0.9, skip_action=True, filters=128,
               kernel=4, hidden=128) -> "TileAgent":
        outputs = levels + 1 if skip_action else levels
        a_arch = nn.Architecture(levels, outputs, filters, kernel, hidden)
        c_arch = nn.Architecture(levels, 1, filters, kernel, hidden)
        return cls(tile, nn.init_params(a_arch, rng), nn.init_params(c_arch, rng), gamma, skip_action)

    def copy(self) -> "TileAgent":
        return TileAgent(self.tile, self.actor.copy(), self.critic.copy(), self.gamma, self.skip_action)


def make_agents(tiles, levels, seed, gamma=0.9, skip_action=True, **arch) -> list[TileAgent]:
    rng = np.random.default_rng(seed)
    return [TileAgent.create(j, levels, rng, gamma, skip_action, **arch) for j in range(tiles)]


def _pick(probs, mode, u):
    if mode == "eval":
        # argmax already breaks ties towards the lower index (lower quality)
        return probs.argmax(axis=1)
    if mode != "train":
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    cdf = np.cumsum(probs, axis=1)
    a = (cdf < (u * cdf[:, -1])[:, None]).sum(axis=1)
    return np.minimum(a, probs.shape[1] - 1)


def select_quality(agent: TileAgent, state: AgentState, scaler: FeatureScaler, mode="eval",
                   rng: np.random.Generator | None = None) -> QualityDecision:
    probs = nn.forward_policy(agent.actor, scaler.sizes(state.sizes_bits),
                              scaler.scalars(state.budget_bits, state.fov_prob, state.playing_fov))
    u = np.array([rng.random()]) if mode == "train" else None
    action = int(_pick(probs[None, :], mode, u)[0])
    wanted = int(action_to_quality(action, agent.skip_action))
    q = int(affordable(wanted, state.sizes_bits[None, :], state.budget_bits)[0])
    return QualityDecision(probs, action, q)


@dataclass
class EpisodeBatch:
    """One row per (user, chunk) of an episode.

    ``next_row[n]`` is the row of the same user's next chunk, ``-1`` at the end.
    Budgets may be ``inf`` for an unconstrained link.
    """

    budgets: np.ndarray
    fov_prob: np.ndarray
    playing_fov: np.ndarray
    sizes: np.ndarray
    realized_fov: np.ndarray
    next_row: np.ndarray
    users: np.ndarray | None = None
    chunks: np.ndarray | None = None

    @property
    def rows(self) -> int:
        return len(self.budgets)

    @property
    def tiles(self) -> int:
        return self.sizes.shape[1]


@dataclass
class Rollout:
    qualities: np.ndarray
    actions: np.ndarray
    remaining: np.ndarray
    size_features: list = field(default_factory=list)
    scalar_features: list = field(default_factory=list)
    caches: list = field(default_factory=list)
    probs: list = field(default_factory=list)


def decide(agents, batch: EpisodeBatch, scaler: FeatureScaler, mode="eval", rng=None) -> Rollout:
    """Run the tile agents in order over every row of ``batch``."""
    n, tiles = batch.rows, batch.tiles
    if len(agents) != tiles:
        raise ValueError(f"{len(agents)} agents for {tiles} tiles")
    remaining = batch.budgets.astype(float).copy()
    qualities = np.full((n, tiles), SKIP, dtype=np.int64)
    actions = np.zeros((n, tiles), dtype=np.int64)
    out = Rollout(qualities, actions, remaining)
    for j, agent in enumerate(agents):
        sizes = batch.sizes[:, j, :]
        sf = scaler.sizes(sizes)
        xf = scaler.scalars(remaining, batch.fov_prob[:, j], batch.playing_fov[:, j])
        logits, cache = nn.forward(agent.actor, sf, xf)
        probs = nn.softmax(logits)
        u = rng.random(n) if mode == "train" else None
        a = _pick(probs, mode, u)
        q = affordable(action_to_quality(a, agent.skip_action), sizes, remaining)
        spent = np.where(q >= 0, sizes[np.arange(n), np.maximum(q, 0)], 0)
        remaining -= spent
        qualities[:, j] = q
        actions[:, j] = a
        out.size_features.append(sf)
        out.scalar_features.append(xf)
        out.caches.append(cache)
        out.probs.append(probs)
    out.remaining = remaining
    return out


def actor_step(agent: TileAgent, sizes, scalars, actions, advantages, lr=1e-3) -> bool:
    """Policy-gradient ascent ``theta += lr * sum grad log pi(a|s) * A``.

    Returns False (and leaves the actor untouched) if the gradient is not finite.
    """
    grads = nn.grad_log_policy(agent.actor, sizes, scalars, np.asarray(actions), advantages)
    try:
        agent.actor = nn.apply_update(agent.actor, grads, lr, ascent=True)
    except nn.NumericError as exc:
        log.warning("actor %d: update skipped (%s)", agent.tile, exc)
        return False
    return True


def critic_step(agent: TileAgent, sizes, scalars, rewards, next_values, lr=1e-3) -> bool:
    """Semi-gradient descent on ``sum (r + gamma V(s') - V(s))^2``.

    ``next_values`` are treated as constants (0 for terminal states).
    """
    values, _ = nn.value_and_grad(agent.critic, sizes, scalars)
    td = rewards + agent.gamma * next_values - values
    grads = nn.grad_value(agent.critic, sizes, scalars, weights=-2.0 * td)
    try:
        agent.critic = nn.apply_update(agent.critic, grads, lr, ascent=False)
    except nn.NumericError as exc:
        log.warning("critic %d: update skipped (%s)", agent.tile, exc)
        return False
    return True


def episode_gradients(agents, batch, rollout, beta, miss_penalty=1.0):
    """Actor and critic gradients for every agent from one rollout.

    Returns ``(grads, mean_reward)`` where ``grads[j] = (actor_g, critic_g)``
    and the critic gradient is already the descent direction of the squared
    TD error.
    """
    contrib = tile_contributions(rollout.qualities, batch.realized_fov, beta, miss_penalty)
    eta = rewards_to_go(contrib)
    terminal = batch.next_row < 0
    nxt = np.where(terminal, 0, batch.next_row)
    grads = []
    for j, agent in enumerate(agents):
        sf, xf = rollout.size_features[j], rollout.scalar_features[j]
        out, v_cache = nn.forward(agent.critic, sf, xf)
        values = out[:, 0]
        v_next = np.where(terminal, 0.0, values[nxt])
        adv = advantage(eta[:, j], agent.gamma, v_next, values)
        # the rollout was produced by these same actor parameters, so its forward pass is reusable
        g_actor = nn.score_grad(agent.actor, rollout.caches[j], rollout.probs[j],
                                rollout.actions[:, j], adv)
        g_critic = nn.backward(agent.critic, v_cache, (-2.0 * adv)[:, None])
        grads.append((g_actor, g_critic))
    return grads, float(eta[:, 0].mean())


@dataclass
class TrainResult:
    agents: list
    curve: list = field(default_factory=list)
    skipped_updates: int = 0


class ParameterStore:
    """Shared agents; gradient application is atomic under one lock."""

    def __init__(self, agents):
        self.agents = agents
        self.lock = threading.Lock()
        self.skipped = 0

    def snapshot(self):
        with self.lock:
            return [a.copy() for a in self.agents]

    def apply(self, grads, actor_lr, critic_lr):
        with self.lock:
            for agent, (ga, gc) in zip(self.agents, grads):
                try:
                    nn.check_gradient(agent.actor, ga)
                    nn.check_gradient(agent.critic, gc)
                except nn.NumericError as exc:
                    log.warning("agent %d: update skipped (%s)", agent.tile, exc)
                    self.skipped += 1
                    continue
                # the store owns these arrays; workers only ever see snapshots
                nn.update_in_place(agent.actor, ga, actor_lr, ascent=True, check=False)
                nn.update_in_place(agent.critic, gc, critic_lr, ascent=False, check=False)


def train(env, agents, iterations, workers=1, seed=0, beta=None, actor_lr=1e-3,
          critic_lr=1e-3, miss_penalty=1.0, progress=None) -> TrainResult:
    """Actor-critic training over ``iterations`` episodes drawn from ``env``.

    ``env`` needs ``sample_episode(rng) -> EpisodeBatch`` plus ``scaler`` and
    ``beta`` attributes. With one worker the run is fully deterministic; more
    workers compute gradients on parameter snapshots in threads and apply
    them to the shared agents one at a time.
    """
    beta = env.beta if beta is None else beta
    store = ParameterStore(agents)
    result = TrainResult(agents)
    if iterations <= 0:
        return result

    def run_one(worker_agents, rng):
        batch = env.sample_episode(rng)
        rollout = decide(worker_agents, batch, env.scaler, "train", rng)
        return episode_gradients(worker_agents, batch, rollout, beta, miss_penalty)

    if workers <= 1:
        rng = np.random.default_rng(seed)
        for it in range(iterations):
            grads, mean_r = run_one(store.agents, rng)
            store.apply(grads, actor_lr, critic_lr)
            result.curve.append(mean_r)
            if progress:
                progress(it, mean_r)
        result.skipped_updates = store.skipped
        return result

    seeds = np.random.SeedSequence(seed).spawn(workers)
    counter = iter(range(iterations))
    counter_lock = threading.Lock()
    curve_lock = threading.Lock()

    def worker(ss):
        rng = np.random.default_rng(ss)
        while True:
            with counter_lock:
                it = next(counter, None)
            if it is None:
                return
            grads, mean_r = run_one(store.snapshot(), rng)
            store.apply(grads, actor_lr, critic_lr)
            with curve_lock:
                result.curve.append(mean_r)
            if progress:
                progress(it, mean_r)

    threads = [threading.Thread(target=worker, args=(ss,)) for ss in seeds]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    result.skipped_updates = store.skipped
    return result


class ToyEnvironment:
    """Single user, fixed budget and a fixed FoV repeated over ``chunks`` chunks."""

    def __init__(self, sizes, fov, budget_bits, chunks=4, fov_prob=None, beta=None):
        self.tile_sizes = np.asarray(sizes, dtype=np.int64)       # (J, A)
        self.fov = np.asarray(fov, dtype=bool)
        self.budget_bits = float(budget_bits)
        self.chunks = chunks
        tiles = self.tile_sizes.shape[0]
        self.fov_prob = self.fov.astype(float) if fov_prob is None else np.asarray(fov_prob, float)
        self.beta = 1.0 / (tiles + 1) if beta is None else beta
        self.scaler = FeatureScaler(float(self.tile_sizes.max()), self.budget_bits)

    @property
    def tiles(self):
        return self.tile_sizes.shape[0]

    @property
    def levels(self):
        return self.tile_sizes.shape[1]

    def sample_episode(self, rng=None) -> EpisodeBatch:
        n = self.chunks
        nxt = np.arange(1, n + 1)
        nxt[-1] = -1
        return EpisodeBatch(
            budgets=np.full(n, self.budget_bits),
            fov_prob=np.tile(self.fov_prob, (n, 1)),
            playing_fov=np.tile(self.fov.astype(float), (n, 1)),
            sizes=np.tile(self.tile_sizes, (n, 1, 1)),
            realized_fov=np.tile(self.fov, (n, 1)),
            next_row=nxt,
        )

    def optimum(self):
        """Best per-chunk reward over every assignment of {skip, 0..A-1} to the tiles."""
        best = -np.inf
        for assign in product(range(-1, self.levels), repeat=self.tiles):
            cost = sum(self.tile_sizes[j, q] for j, q in enumerate(assign) if q >= 0)
            if cost <= self.budget_bits:
                best = max(best, compute_reward(np.array(assign), self.fov, self.beta))
        return best

    def greedy_reward(self, agents) -> float:
        batch = self.sample_episode()
        roll = decide(agents, batch, self.scaler, "eval")
        contrib = tile_contributions(roll.qualities, batch.realized_fov, self.beta)
        return float(contrib.sum(axis=1).mean())


def save_agents(directory, agents, meta: dict) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for a in agents:
        nn.save_checkpoint(directory / f"agent_{a.tile}_actor.npz", a.actor, f"agent_{a.tile}_actor")
        nn.save_checkpoint(directory / f"agent_{a.tile}_critic.npz", a.critic, f"agent_{a.tile}_critic")
    doc = dict(meta)
    doc.update({
        "tiles": len(agents),
        "gamma": agents[0].gamma if agents else None,
        "skip_action": agents[0].skip_action if agents else None,
        "architecture_hash": agents[0].actor.arch.fingerprint() if agents else None,
        "critic_architecture_hash": agents[0].critic.arch.fingerprint() if agents else None,
    })
    (directory / "manifest.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n",
                                             encoding="utf-8")


def load_agents(directory) -> tuple[list[TileAgent], dict]:
    directory = Path(directory)
    meta = json.loads((directory / "manifest.json").read_text(encoding="utf-8"))
    agents = []
    for j in range(meta["tiles"]):
        actor = nn.load_checkpoint(directory / f"agent_{j}_actor.npz")
        critic = nn.load_checkpoint(directory / f"agent_{j}_critic.npz")
        if actor.arch.fingerprint() != meta["architecture_hash"]:
            raise ValueError(f"agent {j}: actor architecture does not match manifest")
        agents.append(TileAgent(j, actor, critic, meta["gamma"], meta["skip_action"]))
    return agents, meta
