"""Property suites shared by ``selfcheck`` and the tests.

Gradients are compared against central finite differences; the slot
scheduler is compared against exhaustive enumeration.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .phy import SchedulerInstance, brute_force_schedule, schedule

FD_STEP = 1e-5
KINK_GUARD = 1e-4


def relative_error(a, b, floor=1e-6):
    a, b = np.asarray(a, float), np.asarray(b, float)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def near_kink(params, sizes, scalars, guard=KINK_GUARD) -> bool:
    """True when some ReLU pre-activation is close enough to 0 to flip under the FD step."""
    _, (win, zc, hin, zh, ah, _) = nn.forward(params, sizes, scalars)
    return bool(np.min(np.abs(zc)) < guard or np.min(np.abs(zh)) < guard)


def random_case(rng, arch: nn.Architecture, batch=1):
    while True:
        params = nn.init_params(arch, rng)
        # lift the weights off the tiny init scale so the gradients are not all trivially small
        params = nn.Params(arch, {k: v * 2.0 for k, v in params.tensors.items()})
        sizes = np.sort(rng.uniform(0.05, 1.0, size=(batch, arch.levels)), axis=1)
        scalars = rng.uniform(0.0, 1.0, size=(batch, arch.scalars))
        scalars[:, 2] = rng.integers(0, 2, size=batch)
        if not near_kink(params, sizes, scalars):
            return params, sizes, scalars


def numeric_gradient(f, params: nn.Params, coords, step=FD_STEP):
    """Central differences of scalar ``f(params)`` at ``coords = [(name, flat_index), ...]``."""
    out = []
    for name, idx in coords:
        plus, minus = params.copy(), params.copy()
        plus.tensors[name].flat[idx] += step
        minus.tensors[name].flat[idx] -= step
        out.append((f(plus) - f(minus)) / (2 * step))
    return np.array(out)


def directional_derivative(f, params: nn.Params, direction, step=FD_STEP):
    plus = nn.Params(params.arch, {k: params[k] + step * direction[k] for k in nn.PARAM_NAMES})
    minus = nn.Params(params.arch, {k: params[k] - step * direction[k] for k in nn.PARAM_NAMES})
    return (f(plus) - f(minus)) / (2 * step)


def sample_coords(rng, params, per_tensor=25):
    coords = []
    for name in nn.PARAM_NAMES:
        size = params[name].size
        for idx in rng.choice(size, size=min(per_tensor, size), replace=False):
            coords.append((name, int(idx)))
    return coords


@dataclass
class GradientReport:
    seed: int
    max_rel_error: float
    directional_rel_error: float


def _compare(rng, seed, params, f, analytic):
    coords = sample_coords(rng, params)
    num = numeric_gradient(f, params, coords)
    ana = np.array([analytic[name].flat[idx] for name, idx in coords])
    direction = {k: rng.standard_normal(params[k].shape) for k in nn.PARAM_NAMES}
    norm = np.sqrt(sum(float(np.sum(v ** 2)) for v in direction.values()))
    direction = {k: v / norm for k, v in direction.items()}
    d_num = directional_derivative(f, params, direction)
    d_ana = sum(float(np.sum(direction[k] * analytic[k])) for k in nn.PARAM_NAMES)
    return GradientReport(seed, float(relative_error(ana, num).max()),
                          float(relative_error(d_ana, d_num)))


def check_policy_gradient(seed: int, levels=5, outputs=5) -> GradientReport:
    rng = np.random.default_rng(seed)
    arch = nn.Architecture(levels=levels, outputs=outputs)
    params, sizes, scalars = random_case(rng, arch)
    action = int(rng.integers(outputs))

    def logp(p):
        return float(np.log(nn.forward_policy(p, sizes[0], scalars[0])[action]))

    analytic = nn.grad_log_policy(params, sizes, scalars, [action])
    return _compare(rng, seed, params, logp, analytic)


def check_value_gradient(seed: int, levels=5) -> GradientReport:
    rng = np.random.default_rng(seed)
    arch = nn.Architecture(levels=levels, outputs=1)
    params, sizes, scalars = random_case(rng, arch)

    def value(p):
        return nn.forward_value(p, sizes[0], scalars[0])

    analytic = nn.grad_value(params, sizes, scalars)
    return _compare(rng, seed, params, value, analytic)


def score_identity_residual(seed: int, levels=5, outputs=5) -> float:
    """``max |sum_a pi(a) grad log pi(a)|`` over all parameters."""
    rng = np.random.default_rng(seed)
    arch = nn.Architecture(levels=levels, outputs=outputs)
    params, sizes, scalars = random_case(rng, arch)
    probs = nn.forward_policy(params, sizes[0], scalars[0])
    total = {k: np.zeros_like(v) for k, v in params.tensors.items()}
    for a in range(outputs):
        g = nn.grad_log_policy(params, sizes, scalars, [a])
        for k in total:
            total[k] += probs[a] * g[k]
    return max(float(np.abs(v).max()) for v in total.values())


def random_scheduler_instance(rng, lam=0.0) -> SchedulerInstance:
    users = int(rng.integers(2, 5))
    slots = int(rng.integers(4, 13))
    return SchedulerInstance(
        rates=tuple(rng.uniform(1e6, 20e6, size=users)),
        afer=tuple(rng.uniform(0.5e6, 5e6, size=users)),
        slots=slots, coherence_slots=slots + 2, lam=lam)


@dataclass
class SchedulerReport:
    instances: int
    mismatches: int
    increasing_traces: int
    worst_increase: float


def check_scheduler(count=200, seed=0, lam=0.0, tol=1e-9) -> SchedulerReport:
    rng = np.random.default_rng(seed)
    mismatches = increasing = 0
    worst = 0.0
    for _ in range(count):
        inst = random_scheduler_instance(rng, lam)
        res = schedule(inst)
        if lam == 0.0 and abs(res.max_violation - brute_force_schedule(inst).max_violation) > tol:
            mismatches += 1
        objs = [step["objective"] for step in res.trace]
        rise = max((b - a for a, b in zip(objs, objs[1:])), default=0.0)
        if rise > 0:
            increasing += 1
            worst = max(worst, rise)
    return SchedulerReport(count, mismatches, increasing, worst)
