"""Synthetic recommender simulator with per-user result caches.

A request is answered either by a real-time recommendation (generates L
freshly scored items, shows the top K, refills the cache with the rest)
or from the user's result cache (pops the next K stored items).  Watch
time derives from latent-preference dot products mapped through a
softplus link; consecutive cached serves are discounted by a staleness
curve with a configurable floor.

Arrivals are exogenous: the per-hour request count follows a
deterministic day curve, and the requesting users are drawn from a
dedicated traffic stream so that two runs with the same seed see
identical arrival sequences regardless of the serving policy.
"""
from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field

import numpy as np

from .config import ConfigError


class InsufficientCache(Exception):
    """Result cache holds fewer items than one slate; caller must force
    a real-time serve."""


class ServeFailure(Exception):
    """Neither serve type is feasible: cache too small and budget gone."""


@dataclass
class SimConfig:
    num_users: int = 100
    slate_size_k: int = 8
    realtime_return_l: int = 40
    hourly_budget_m: int = 150
    hours: int = 24
    traffic_min: int = 50
    traffic_max: int = 400
    staleness_floor: float = 0.6       # d_min
    staleness_slope: float = 0.1       # per consecutive cached serve
    leave_sensitivity: float = 0.4     # slope of the continue probability
    leave_offset: float = 0.6
    preference_dim: int = 8
    watch_scale: float = 1.0
    seed: int = 0

    def validate(self):
        if self.num_users <= 0:
            raise ConfigError("num_users must be positive")
        if self.slate_size_k <= 0:
            raise ConfigError("slate_size_k must be positive")
        if self.realtime_return_l <= self.slate_size_k:
            raise ConfigError("realtime_return_l must exceed slate_size_k")
        if self.hourly_budget_m <= 0:
            raise ConfigError("hourly_budget_m must be positive")
        if self.hours <= 0:
            raise ConfigError("hours must be positive")
        if not 0 < self.traffic_min <= self.traffic_max:
            raise ConfigError("need 0 < traffic_min <= traffic_max")
        if not 0.0 < self.staleness_floor <= 1.0:
            raise ConfigError("staleness_floor must be in (0, 1]")
        if self.staleness_slope < 0.0:
            raise ConfigError("staleness_slope must be >= 0")
        if self.preference_dim <= 0:
            raise ConfigError("preference_dim must be positive")
        if self.watch_scale <= 0.0:
            raise ConfigError("watch_scale must be positive")
        return self

    @property
    def cache_refill(self):
        return self.realtime_return_l - self.slate_size_k

    def traffic_profile(self, hour):
        """Requests in `hour`: a day-periodic sine-squared curve between
        traffic_min and traffic_max (off-peak at hour 0, peak at 12)."""
        lo, hi = self.traffic_min, self.traffic_max
        return int(round(lo + (hi - lo) * math.sin(math.pi * hour / 24.0) ** 2))


@dataclass
class UserSessionState:
    user_id: int
    preference_vector: np.ndarray
    consecutive_cached: int = 0
    cache_occupancy: int = 0
    hour_of_day: int = 0
    session_active: bool = False


@dataclass
class ResultCache:
    """Ordered (item_id, predicted_score) pairs left over from the last
    real-time serve; consumed K at a time."""
    items: list = field(default_factory=list)

    def __len__(self):
        return len(self.items)


@dataclass
class FeedbackOutcome:
    watch_time: float
    continued: bool


def generate_traffic(config, hour, rng):
    """User ids requesting during `hour`, in arrival order."""
    if not 0 <= hour < config.hours:
        raise ValueError(f"hour {hour} outside horizon {config.hours}")
    n = config.traffic_profile(hour)
    return rng.integers(0, config.num_users, size=n).tolist()


def _draw_items(user, config, rng, start_id):
    """Score L candidate items against the user's latent preference."""
    l = config.realtime_return_l
    feats = rng.standard_normal((l, config.preference_dim))
    feats /= math.sqrt(config.preference_dim)
    scores = feats @ user.preference_vector
    order = np.argsort(-scores, kind="stable")
    return [(start_id + int(i), float(scores[i])) for i in order]


def serve_realtime(user, cache, rng, config, item_counter=0):
    """Full-computation serve: show the K best fresh items, replace the
    cache with the next L-K, reset the staleness counter."""
    k = config.slate_size_k
    ranked = _draw_items(user, config, rng, item_counter)
    slate = ranked[:k]
    new_cache = ResultCache(items=ranked[k:])
    user.consecutive_cached = 0
    user.cache_occupancy = len(new_cache)
    return slate, new_cache


def serve_cached(user, cache, config):
    """Serve the first K cached items and drop them from the cache."""
    k = config.slate_size_k
    if len(cache) < k:
        raise InsufficientCache(f"cache holds {len(cache)} < {k} items")
    slate = cache.items[:k]
    new_cache = ResultCache(items=cache.items[k:])
    user.consecutive_cached += 1
    user.cache_occupancy = len(new_cache)
    return slate, new_cache


def staleness_discount(consecutive_cached, config):
    return max(config.staleness_floor,
               1.0 - config.staleness_slope * consecutive_cached)


def expected_watch_time(user, slate, was_cached, config):
    """Deterministic watch seconds for a slate: softplus-linked scores,
    discounted by the staleness curve when served from cache."""
    scores = np.array([s for _, s in slate])
    base = config.watch_scale * float(np.sum(np.log1p(np.exp(scores))))
    if was_cached:
        base *= staleness_discount(user.consecutive_cached, config)
    return base


def feedback(user, slate, was_cached, config, rng):
    """Watch time plus the user's continue/leave draw.

    The continue probability is logistic in watch time, so sessions that
    keep landing on a depleted, stale cache end sooner.
    """
    watch = expected_watch_time(user, slate, was_cached, config)
    p_continue = 1.0 / (1.0 + math.exp(-(config.leave_sensitivity * watch
                                         - config.leave_offset)))
    continued = bool(rng.random() < p_continue)
    return FeedbackOutcome(watch_time=watch, continued=continued)


def resolve_action(requested, cache, budget_remaining, config):
    """Map a requested action onto a feasible one.

    A cached serve needs at least K items in the cache; a real-time
    serve needs budget.  When the requested action is infeasible the
    opposite one is forced; when both are infeasible the request fails.
    """
    cache_ok = len(cache) >= config.slate_size_k
    budget_ok = budget_remaining > 0
    if requested == 0:
        if cache_ok:
            return 0
        if budget_ok:
            return 1
        raise ServeFailure("cache too small and budget exhausted")
    if budget_ok:
        return 1
    if cache_ok:
        return 0
    raise ServeFailure("cache too small and budget exhausted")


@dataclass
class StepOutcome:
    user_id: int
    action: int
    was_cached: bool
    watch_time: float
    continued: bool
    new_session: bool


class Simulation:
    """Owns user states, caches and the random streams for one run.

    Traffic, user construction and environment noise each draw from a
    separately spawned generator, so arrival sequences are identical
    across serving policies under the same seed.
    """

    def __init__(self, config, seed=None):
        config.validate()
        self.config = config
        self.seed = config.seed if seed is None else seed
        ss = np.random.SeedSequence(self.seed)
        traffic_ss, user_ss, env_ss = ss.spawn(3)
        self._traffic_ss = traffic_ss
        self.env_rng = np.random.default_rng(env_ss)
        user_rng = np.random.default_rng(user_ss)
        prefs = user_rng.standard_normal((config.num_users, config.preference_dim))
        prefs /= np.linalg.norm(prefs, axis=1, keepdims=True)
        self.users = [
            UserSessionState(user_id=i, preference_vector=prefs[i])
            for i in range(config.num_users)
        ]
        self.caches = [ResultCache() for _ in range(config.num_users)]
        self._item_counter = 0

    def arrivals(self, hour):
        """Arrival order for `hour`; a pure function of (seed, hour)."""
        rng = np.random.default_rng(
            np.random.SeedSequence(entropy=self._traffic_ss.entropy,
                                   spawn_key=(0, hour)))
        return generate_traffic(self.config, hour, rng)

    def request_state(self, user_id, hour):
        """The user's state as seen at request time."""
        user = self.users[user_id]
        user.hour_of_day = hour % 24
        user.cache_occupancy = len(self.caches[user_id])
        return user

    def cache_len(self, user_id):
        return len(self.caches[user_id])

    def step(self, user_id, hour, effective_action):
        """Serve one request with an already-resolved action.

        Feedback uses the staleness counter as it stood before the
        serve, then the counter and cache are updated.  A leave draw
        closes the session; the user's next arrival opens a new one.
        """
        user = self.request_state(user_id, hour)
        new_session = not user.session_active
        user.session_active = True
        cache = self.caches[user_id]
        pre_consecutive = user.consecutive_cached
        if effective_action == 1:
            slate, new_cache = serve_realtime(user, cache, self.env_rng,
                                              self.config, self._item_counter)
            self._item_counter += self.config.realtime_return_l
            was_cached = False
        else:
            slate, new_cache = serve_cached(user, cache, self.config)
            was_cached = True
        self.caches[user_id] = new_cache
        probe = copy.copy(user)
        probe.consecutive_cached = pre_consecutive
        outcome = feedback(probe, slate, was_cached, self.config, self.env_rng)
        if not outcome.continued:
            user.session_active = False
        return StepOutcome(user_id=user_id, action=effective_action,
                           was_cached=was_cached, watch_time=outcome.watch_time,
                           continued=outcome.continued, new_session=new_session)

    def fail_request(self, user_id, hour):
        """Zero-reward failed serve; ends the session."""
        user = self.request_state(user_id, hour)
        new_session = not user.session_active
        user.session_active = False
        return StepOutcome(user_id=user_id, action=-1, was_cached=False,
                           watch_time=0.0, continued=False,
                           new_session=new_session)

    def peek_reward_gap(self, user_id, hour):
        """One-step watch difference between the two serve types, read
        from the live feedback model without consuming state or rng."""
        user = self.request_state(user_id, hour)
        cache = self.caches[user_id]
        k = self.config.slate_size_k
        rng_probe = copy.deepcopy(self.env_rng)
        ranked = _draw_items(user, self.config, rng_probe, self._item_counter)
        watch_rt = expected_watch_time(user, ranked[:k], False, self.config)
        if len(cache) >= k:
            watch_cached = expected_watch_time(user, cache.items[:k], True,
                                               self.config)
        else:
            watch_cached = 0.0
        return watch_rt - watch_cached

    def snapshot(self):
        """Deep copy of all mutable run state, for counterfactual sweeps."""
        return copy.deepcopy(
            (self.users, self.caches, self.env_rng, self._item_counter))

    def restore(self, snap):
        self.users, self.caches, self.env_rng, self._item_counter = \
            copy.deepcopy(snap)
