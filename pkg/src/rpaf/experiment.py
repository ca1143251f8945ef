"""Experiment loops: data collection, training, evaluation, reporting.

Wires the simulator, the actor-critic prediction stage and the
allocation stage into reproducible runs. Every output file is a pure
function of (config, seed).
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .allocation import (AllRealtimeAllocator, BudgetLedger, GreedyAllocator,
                         PoolRankAllocator, ThresholdAllocator, batch_oracle)
from .prediction import (ReplayBuffer, Transition, compute_target_ratio,
                         encode_state, make_trainer, state_dim)
from .simulator import ServeFailure, Simulation, resolve_action

CSV_HEADER = "hour,requests,realtime,cached,failures,budget,watchtime,mean_atilde"
RESULTS_HEADER = "method,backbone,penalty,seed,trial,watchtime"
DIAG_HEADER = ("epoch,buffer_size,critic_loss,actor_loss,"
               "mean_a_tilde,mean_penalty,mean_td_error")

# Admission cut for the pool-free ablation. Trained allocation ratios sit
# well above any per-period target ratio (the critic's advantage term keeps
# them there), so thresholding at the target admits everything and the
# ablation collapses into the greedy baseline. A fixed cut inside the upper
# tail of the trained ratio distribution keeps the ablation informative:
# it refuses the lowest-value slice of each period without any cross-period
# pooling. Calibrated against the default utilization experiment.
NOPOOL_THRESHOLD = 0.955


@dataclass
class HourlyMetrics:
    """One evaluation row; realtime + cached + failures must equal
    requests, and realtime stays within budget except under the
    unbudgeted all-realtime reference."""
    hour: int
    requests: int
    realtime: int
    cached: int
    failures: int
    budget: int
    watchtime: float
    mean_atilde: float

    def check(self):
        if self.realtime + self.cached + self.failures != self.requests:
            raise AssertionError("serve counts do not sum to requests")

    def as_row(self):
        return (f"{self.hour},{self.requests},{self.realtime},{self.cached},"
                f"{self.failures},{self.budget},{self.watchtime!r},"
                f"{self.mean_atilde!r}")


def write_hourly_csv(rows, path):
    with open(path, "w", encoding="utf-8") as f:
        f.write(CSV_HEADER + "\n")
        for row in rows:
            f.write(row.as_row() + "\n")


def read_hourly_csv(path):
    rows = []
    with open(path, "r", encoding="utf-8") as f:
        header = f.readline().strip()
        if header != CSV_HEADER:
            raise ValueError(f"unexpected CSV header in {path}")
        for line in f:
            parts = line.strip().split(",")
            rows.append(HourlyMetrics(
                hour=int(parts[0]), requests=int(parts[1]),
                realtime=int(parts[2]), cached=int(parts[3]),
                failures=int(parts[4]), budget=int(parts[5]),
                watchtime=float(parts[6]), mean_atilde=float(parts[7])))
    return rows


class _PlannedAllocator:
    """Ledger holder for methods whose admissions come from a per-period
    plan rather than a streaming rule."""

    def __init__(self, period_budget):
        self.ledger = BudgetLedger(period_budget)

    def end_period(self):
        self.ledger.reset()


def make_allocator(method, period_budget, eta):
    if method == "greedy":
        return GreedyAllocator(period_budget)
    if method == "all-realtime":
        return AllRealtimeAllocator()
    if method == "oracle-myopic":
        return _PlannedAllocator(period_budget)
    if method == "rpaf-nopool":
        return ThresholdAllocator(period_budget, NOPOOL_THRESHOLD)
    if method == "rpaf":
        return PoolRankAllocator(period_budget, eta)
    raise ValueError(f"unknown method {method!r}")


def _finish_serve(sim, user_id, hour, requested, ledger):
    """Resolve a requested action against cache and budget feasibility,
    then serve. Returns (outcome, effective) with effective -1 on failure.

    A requested real-time serve has already consumed its ledger unit; a
    requested cached serve may be forced real-time (consuming a unit) or
    fail outright when neither resource is available.
    """
    if requested == 1:
        return sim.step(user_id, hour, 1), 1
    cache = sim.caches[user_id]
    remaining = ledger.remaining() if ledger is not None else 1
    try:
        effective = resolve_action(0, cache, remaining, sim.config)
    except ServeFailure:
        return sim.fail_request(user_id, hour), -1
    if effective == 1 and ledger is not None:
        ledger.try_consume()
    return sim.step(user_id, hour, effective), effective


def plan_oracle_hour(sim, hour):
    """Plan one period by scoring each arrival's frozen one-step gain of
    real-time over cached serving, then taking the top-budget set.

    The scoring pass runs on a snapshot, advancing users with cached
    serves (real-time only when the cache cannot cover a slate), and is
    fully rolled back before the real pass.
    """
    cfg = sim.config
    arrivals = sim.arrivals(hour)
    if not arrivals:
        return np.zeros(0, dtype=np.int64)
    snap = sim.snapshot()
    gaps = np.zeros(len(arrivals))
    for i, uid in enumerate(arrivals):
        gaps[i] = sim.peek_reward_gap(uid, hour)
        cache_ok = sim.cache_len(uid) >= cfg.slate_size_k
        sim.step(uid, hour, 0 if cache_ok else 1)
    sim.restore(snap)
    budget = min(cfg.hourly_budget_m, len(arrivals))
    return batch_oracle(gaps, budget)


def run_horizon(sim, method, actor_fn=None, eta=0.001, hours=None):
    """Evaluate one method over a full horizon; returns HourlyMetrics rows.

    mean_atilde reports the mean relaxed action for actor-driven methods
    and the realized real-time share for the others.
    """
    cfg = sim.config
    if hours is None:
        hours = cfg.hours
    needs_actor = method in ("rpaf", "rpaf-nopool")
    if needs_actor and actor_fn is None:
        raise ValueError(f"method {method!r} requires a trained actor")
    alloc = make_allocator(method, cfg.hourly_budget_m, eta)
    rows = []
    for hour in range(hours):
        arrivals = sim.arrivals(hour)
        plan = plan_oracle_hour(sim, hour) if method == "oracle-myopic" else None
        realtime = cached = failures = 0
        watch_sum = 0.0
        atilde_sum = 0.0
        for i, uid in enumerate(arrivals):
            user = sim.request_state(uid, hour)
            if needs_actor:
                a_tilde = actor_fn(encode_state(user, cfg))
                atilde_sum += a_tilde
                requested = alloc.decide(a_tilde)
            elif method == "oracle-myopic":
                requested = 1 if (plan[i] == 1
                                  and alloc.ledger.try_consume()) else 0
            else:
                requested = alloc.decide()
            outcome, effective = _finish_serve(sim, uid, hour, requested,
                                               alloc.ledger)
            if effective == 1:
                realtime += 1
            elif effective == 0:
                cached += 1
            else:
                failures += 1
            watch_sum += outcome.watch_time
        n = len(arrivals)
        if needs_actor:
            mean_atilde = atilde_sum / n if n else 0.0
        else:
            mean_atilde = realtime / n if n else 0.0
        row = HourlyMetrics(hour=hour, requests=n, realtime=realtime,
                            cached=cached, failures=failures,
                            budget=cfg.hourly_budget_m, watchtime=watch_sum,
                            mean_atilde=mean_atilde)
        row.check()
        rows.append(row)
        alloc.end_period()
    return rows


def watchtime_per_user(rows, num_users):
    """The headline metric: accumulated watch seconds per user."""
    return sum(r.watchtime for r in rows) / num_users


def collect_experience(sim, trainer, buffer, hours, rng):
    """Run the behavior policy (independent Bernoulli(a~) rounding with
    ledger enforcement) and push completed transitions.

    A user's transition stays pending until their next request provides
    the successor state; a leave or serve failure terminates it, and
    horizon end truncates remaining pendings as terminal.
    """
    cfg = sim.config
    sdim = state_dim(cfg)
    terminal = np.zeros(sdim)
    pending = {}
    pushed = 0
    for hour in range(hours):
        arrivals = sim.arrivals(hour)
        if not arrivals:
            continue
        m_t = compute_target_ratio(cfg.hourly_budget_m, len(arrivals))
        ledger = BudgetLedger(cfg.hourly_budget_m)
        for uid in arrivals:
            user = sim.request_state(uid, hour)
            s = encode_state(user, cfg)
            if uid in pending:
                ps, pa, pr, pm = pending.pop(uid)
                buffer.push(Transition(ps, pa, pr, s, done=False), pm)
                pushed += 1
            a_tilde = trainer.act_one(s)
            want = rng.random() < a_tilde
            requested = 1 if (want and ledger.try_consume()) else 0
            outcome, effective = _finish_serve(sim, uid, hour, requested,
                                               ledger)
            if effective == -1:
                continue
            if outcome.continued:
                pending[uid] = (s, effective, outcome.watch_time, m_t)
            else:
                buffer.push(Transition(s, effective, outcome.watch_time,
                                       terminal, done=True), m_t)
                pushed += 1
    for ps, pa, pr, pm in pending.values():
        buffer.push(Transition(ps, pa, pr, terminal, done=True), pm)
        pushed += 1
    return pushed


def _probe_mean_atilde(trainer, buffer, rng):
    if len(buffer) == 0:
        return float("nan")
    batch = buffer.sample(min(256, len(buffer)), rng)
    return float(np.mean(trainer.act(batch["states"])))


def run_collect_train(exp, seed, checkpoint_path=None, diagnostics_path=None):
    """Alternate experience collection and gradient steps; returns
    (trainer, diagnostics rows) and optionally writes artifacts."""
    exp.validate()
    tcfg = exp.train
    sdim = state_dim(exp.sim)
    trainer = make_trainer(exp.backbone, tcfg, sdim, exp.penalty, seed)
    buffer = ReplayBuffer(tcfg.replay_buffer_size, sdim)
    behavior_rng = np.random.default_rng(
        np.random.SeedSequence(entropy=seed, spawn_key=(2,)))
    probe_rng = np.random.default_rng(
        np.random.SeedSequence(entropy=seed, spawn_key=(3,)))
    diagnostics = []
    for epoch in range(tcfg.epochs):
        sim = Simulation(exp.sim, seed=(seed + 1) * 1_000_003 + epoch)
        collect_experience(sim, trainer, buffer, tcfg.collect_hours,
                           behavior_rng)
        step_rows = []
        if len(buffer) >= tcfg.batch_size:
            for _ in range(tcfg.train_steps_per_epoch):
                step_rows.append(trainer.train_step(buffer))
        def _agg(key):
            vals = [r[key] for r in step_rows if key in r]
            if not vals or np.all(np.isnan(vals)):
                return float("nan")
            return float(np.nanmean(vals))
        diagnostics.append({
            "epoch": epoch,
            "buffer_size": len(buffer),
            "critic_loss": _agg("critic_loss"),
            "actor_loss": _agg("actor_loss"),
            "mean_a_tilde": _probe_mean_atilde(trainer, buffer, probe_rng),
            "mean_penalty": _agg("mean_penalty"),
            "mean_td_error": _agg("mean_td_error"),
        })
    if diagnostics_path is not None:
        write_diagnostics_csv(diagnostics, diagnostics_path)
    if checkpoint_path is not None:
        trainer.save(checkpoint_path)
    return trainer, diagnostics


def write_diagnostics_csv(rows, path):
    with open(path, "w", encoding="utf-8") as f:
        f.write(DIAG_HEADER + "\n")
        for r in rows:
            f.write(f"{r['epoch']},{r['buffer_size']},{r['critic_loss']!r},"
                    f"{r['actor_loss']!r},{r['mean_a_tilde']!r},"
                    f"{r['mean_penalty']!r},{r['mean_td_error']!r}\n")


@dataclass
class EvaluationResult:
    method: str
    seed: int
    watchtimes: list = field(default_factory=list)
    hourly: list = field(default_factory=list)

    @property
    def mean(self):
        return float(np.mean(self.watchtimes))

    @property
    def std(self):
        return float(np.std(self.watchtimes))


def run_evaluate(exp, seed, actor_fn=None, trials=None):
    """One full horizon per trial seed; WatchTime is per-user accumulated
    watch seconds, summarized as mean and std over trials."""
    exp.validate()
    if trials is None:
        trials = exp.trials
    result = EvaluationResult(method=exp.method, seed=seed)
    for t in range(trials):
        sim = Simulation(exp.sim, seed=seed + t)
        rows = run_horizon(sim, exp.method, actor_fn=actor_fn, eta=exp.eta)
        result.hourly.append(rows)
        result.watchtimes.append(watchtime_per_user(rows, exp.sim.num_users))
    return result


def actor_from_trainer(trainer):
    return trainer.act_one


def actor_from_checkpoint(exp, path):
    """Rebuild a trainer skeleton from the config and load its weights."""
    trainer = make_trainer(exp.backbone, exp.train, state_dim(exp.sim),
                           exp.penalty, seed=0)
    trainer.load(path)
    return trainer.act_one


def emit_report(metrics, path):
    """Write HourlyMetrics rows as CSV at `path`."""
    if not metrics:
        raise ValueError("metrics must be non-empty")
    for row in metrics:
        row.check()
    write_hourly_csv(metrics, path)


def append_results(result, exp, path):
    """Append one WatchTime row per trial to a results CSV."""
    fresh = not os.path.exists(path)
    with open(path, "a", encoding="utf-8") as f:
        if fresh:
            f.write(RESULTS_HEADER + "\n")
        for t, wt in enumerate(result.watchtimes):
            f.write(f"{exp.method},{exp.backbone},{exp.penalty},"
                    f"{result.seed},{t},{wt!r}\n")


def summarize_results(paths):
    """Group per-trial WatchTime rows by (method, backbone, penalty) and
    return lines with mean, std and trial counts."""
    groups = {}
    for path in paths:
        with open(path, "r", encoding="utf-8") as f:
            header = f.readline().strip()
            if header != RESULTS_HEADER:
                raise ValueError(f"unexpected results header in {path}")
            for line in f:
                method, backbone, penalty, seed, trial, wt = \
                    line.strip().split(",")
                groups.setdefault((method, backbone, penalty),
                                  []).append(float(wt))
    lines = []
    for key in sorted(groups):
        vals = np.asarray(groups[key])
        lines.append(f"{key[0]} backbone={key[1]} penalty={key[2]}: "
                     f"watchtime {vals.mean():.4f} +/- {vals.std():.4f} "
                     f"(n={vals.size})")
    return lines
