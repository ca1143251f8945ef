"""Release-gate property checks aggregated behind one entry point.

Each check is deliberately small and fast; the test suite runs the same
properties at acceptance scale. `run_property_checks` supports an
injectable rank-index corruption as a negative control.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from . import nn
from .allocation import RankIndex, batch_oracle
from .prediction import actor_loss, critic_loss, penalty, state_dim
from .simulator import SimConfig, Simulation
from .experiment import run_horizon

GRID = np.linspace(0.0, 1.0, 1001)


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str = ""

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name}: {self.detail}" if self.detail \
            else f"{status} {self.name}"


def exhaustive_best(values, budget_m):
    """Brute-force best subset of size budget_m; reference for the
    batch oracle."""
    best = None
    for combo in itertools.combinations(range(len(values)), budget_m):
        total = sum(values[i] for i in combo)
        if best is None or total > best:
            best = total
    return 0.0 if best is None else best


def check_oracle_equivalence(rng, n_max=8, vectors=25):
    """Top-M selection attains the exhaustive-search optimum."""
    for _ in range(vectors):
        n = int(rng.integers(1, n_max + 1))
        values = rng.normal(size=n)
        for m in range(1, n + 1):
            actions = batch_oracle(values, m)
            got = float(values[actions == 1].sum())
            want = exhaustive_best(values, m)
            if abs(got - want) > 1e-12:
                return CheckResult("oracle-equivalence", False,
                                   f"n={n} M={m}: {got} != {want}")
            if actions.sum() != m:
                return CheckResult("oracle-equivalence", False,
                                   f"selected {actions.sum()} of M={m}")
    return CheckResult("oracle-equivalence", True,
                       f"n<={n_max}, {vectors} vectors, all M")


def scan_minimizer(delta_q, alpha, kind, target):
    """Grid argmin of the per-sample actor objective
    -delta_q * a + alpha * T(a, target) over a in [0, 1]."""
    grid = GRID
    if kind == "kl":
        grid = np.clip(grid, 1e-12, 1.0 - 1e-12)
    pen, _ = penalty(kind, grid, target)
    losses = -delta_q * grid + alpha * pen
    return float(GRID[np.argmin(losses)])


def check_monotonicity(alphas=(0.5, 1.0, 2.0), kinds=("mse", "kl"),
                       target=0.4, steps=101):
    """The preferred relaxed action is non-decreasing in the critic's
    action gap, for every penalty strength."""
    sweeps = np.linspace(-5.0, 5.0, steps)
    cell = GRID[1] - GRID[0]
    for kind in kinds:
        for alpha in alphas:
            mins = [scan_minimizer(dq, alpha, kind, target) for dq in sweeps]
            diffs = np.diff(mins)
            if np.any(diffs < -(cell + 1e-12)):
                worst = float(diffs.min())
                return CheckResult("monotonicity", False,
                                   f"{kind} alpha={alpha}: drop {worst}")
    return CheckResult("monotonicity", True,
                       f"{len(kinds)}x{len(alphas)} sweeps of {steps} steps")


def check_jensen(rng, batches=100, batch_size=256, tol=1e-12):
    """Penalty of the batch mean never exceeds the mean penalty."""
    for kind in ("mse", "kl"):
        for _ in range(batches):
            x_hat = rng.uniform(1e-6, 1.0 - 1e-6, size=batch_size)
            target = float(rng.uniform(0.05, 0.95))
            mean_pen = float(np.mean(penalty(kind, x_hat, target)[0]))
            pen_mean = float(penalty(kind, float(x_hat.mean()), target)[0])
            if pen_mean > mean_pen + tol:
                return CheckResult("jensen-bound", False,
                                   f"{kind}: {pen_mean} > {mean_pen}")
    return CheckResult("jensen-bound", True,
                       f"{batches} batches x 2 penalties, tol {tol}")


def flatten_grads(grads):
    return np.concatenate([np.concatenate([dw.ravel(), db.ravel()])
                           for dw, db in grads])


def finite_diff(loss_fn, net, eps=1e-6):
    """Central finite differences of loss_fn over every parameter of
    net, returned in the same flat order as flatten_grads."""
    out = []
    for arr in net.param_arrays():
        flat = arr.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = loss_fn()
            flat[i] = orig - eps
            lo = loss_fn()
            flat[i] = orig
            out.append((hi - lo) / (2.0 * eps))
    return np.asarray(out)


def _gradcheck_pair(rng, penalty_kind, sdim=5, width=8, batch=4):
    """Build a small actor/critic pair plus a batch; returns the
    normwise relative errors of the actor and critic gradients."""
    actor = nn.DenseNet([sdim, width, width, 1], nn.LOGISTIC, rng=rng)
    critic = nn.DenseNet([sdim, width, width, 2], nn.IDENTITY, rng=rng)
    for net in (actor, critic):
        # fresh nets carry zero biases, and a sample with every hidden
        # unit dead lands the next pre-activation exactly on the relu
        # kink, where central differences are one-sided
        for b in net.biases:
            b += rng.uniform(0.05, 0.2, size=b.shape)
    states = rng.normal(size=(batch, sdim))
    target = float(rng.uniform(0.1, 0.9))
    alpha = float(rng.uniform(0.5, 2.0))
    actions = rng.integers(0, 2, size=batch)
    targets = rng.normal(size=batch)

    _, a_grads, _ = actor_loss(actor, critic, states, target, penalty_kind,
                               alpha)
    a_fd = finite_diff(
        lambda: actor_loss(actor, critic, states, target, penalty_kind,
                           alpha)[0], actor)
    a_flat = flatten_grads(a_grads)
    a_err = np.linalg.norm(a_flat - a_fd) / (np.linalg.norm(a_flat)
                                             + np.linalg.norm(a_fd) + 1e-12)

    _, c_grads, _ = critic_loss(critic, states, actions, targets)
    c_fd = finite_diff(
        lambda: critic_loss(critic, states, actions, targets)[0], critic)
    c_flat = flatten_grads(c_grads)
    c_err = np.linalg.norm(c_flat - c_fd) / (np.linalg.norm(c_flat)
                                             + np.linalg.norm(c_fd) + 1e-12)
    return a_err, c_err


def check_gradients(rng, trials=10, rel_tol=1e-4):
    """Backprop gradients match central finite differences."""
    worst = 0.0
    for i in range(trials):
        kind = ("mse", "kl", "none")[i % 3]
        a_err, c_err = _gradcheck_pair(rng, kind)
        worst = max(worst, a_err, c_err)
        if a_err > rel_tol or c_err > rel_tol:
            return CheckResult("gradient-check", False,
                               f"trial {i} ({kind}): actor {a_err:.2e} "
                               f"critic {c_err:.2e}")
    return CheckResult("gradient-check", True,
                       f"{trials} nets, worst rel err {worst:.2e}")


def _hash_actor(sdim, seed):
    """Deterministic stand-in policy: logistic of a fixed random
    projection of the state."""
    w = np.random.default_rng(seed).normal(size=sdim)
    return lambda s: float(nn.sigmoid(np.dot(w, s)))


def check_budget_strictness(seeds=2, hours=24):
    """No budgeted method ever serves more real-time than the period
    budget, on any row of any horizon."""
    cfg = SimConfig()
    actor = _hash_actor(state_dim(cfg), seed=7)
    for seed in range(seeds):
        for method in ("greedy", "oracle-myopic", "rpaf-nopool", "rpaf"):
            sim = Simulation(cfg, seed=seed)
            for row in run_horizon(sim, method, actor_fn=actor, hours=hours):
                if row.realtime > row.budget:
                    return CheckResult(
                        "budget-strictness", False,
                        f"{method} seed={seed} hour={row.hour}: "
                        f"{row.realtime} > {row.budget}")
    return CheckResult("budget-strictness", True,
                       f"4 methods x {seeds} seeds x {hours}h")


def check_rank_consistency(rng, pool_size=500, queries=200, eta=0.001,
                           corrupt=False):
    """Streamed rank matches an exact strict-greater count, up to the
    population of the query's own bucket."""
    index = RankIndex(eta)
    pool = rng.uniform(0.0, 1.0, size=pool_size)
    for v in pool:
        index.observe(v)
    index.rotate()
    if corrupt:
        index.set_online(index.online()[::-1].copy())
    for q in rng.uniform(0.0, 1.0, size=queries):
        exact = int(np.sum(pool > q))
        got = index.rank(q)
        qb = index.bucket(q)
        same_bucket = int(np.sum([index.bucket(v) == qb for v in pool]))
        if abs(got - exact) > same_bucket:
            return CheckResult("rank-consistency", False,
                               f"query {q:.4f}: rank {got} vs exact {exact} "
                               f"(bucket pop {same_bucket})")
    return CheckResult("rank-consistency", True,
                       f"pool {pool_size}, {queries} queries, eta {eta}")


def run_property_checks(seed=0, corrupt_rank_index=False):
    """Run every release-gate check; returns a list of CheckResults."""
    rng = np.random.default_rng(seed)
    return [
        check_oracle_equivalence(rng),
        check_monotonicity(),
        check_jensen(rng),
        check_gradients(rng),
        check_budget_strictness(),
        check_rank_consistency(rng, corrupt=corrupt_rank_index),
    ]
