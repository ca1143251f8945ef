"""Prediction stage: actor-critic training of the relaxed allocator.

The critic maps a state to the pair (Q(s,0), Q(s,1)); its value at a
relaxed action a~ in [0,1] is the affine blend a~*Q(s,1) + (1-a~)*Q(s,0),
so the gradient through the action argument is exactly Q(s,1) - Q(s,0).
The actor emits a~ through a logistic head and is trained against the
critic plus a convex penalty that tethers a~ to the period's target
real-time ratio m = budget / active requests.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .nn import DenseNet, AdamState, adam_step, soft_update

MSE = "mse"
KL = "kl"
NONE = "none"

_CHECKPOINT_TAGS = {"ddpg": 4, "td3": 6}


@dataclass
class Transition:
    """One logged interaction; `active` mirrors whether the user actually
    requested (inactive rows never contribute to a gradient)."""
    state: np.ndarray
    action: int
    reward: float
    next_state: np.ndarray
    done: bool
    active: bool = True


class ReplayBuffer:
    """Uniform-sampling ring buffer over fixed-width transition rows.

    Each row also carries the target real-time ratio of the period the
    sample was logged in, which the actor penalty needs at train time.
    """

    def __init__(self, capacity, state_dim):
        if capacity <= 0:
            raise ValueError("capacity must be positive")
        self.capacity = int(capacity)
        self.state_dim = int(state_dim)
        self._states = np.zeros((capacity, state_dim))
        self._actions = np.zeros(capacity, dtype=np.int64)
        self._rewards = np.zeros(capacity)
        self._next_states = np.zeros((capacity, state_dim))
        self._dones = np.zeros(capacity, dtype=bool)
        self._actives = np.zeros(capacity, dtype=bool)
        self._ratios = np.ones(capacity)
        self._size = 0
        self._head = 0

    def __len__(self):
        return self._size

    def push(self, transition, target_ratio):
        i = self._head
        self._states[i] = transition.state
        self._actions[i] = transition.action
        self._rewards[i] = transition.reward
        self._next_states[i] = transition.next_state
        self._dones[i] = transition.done
        self._actives[i] = transition.active
        self._ratios[i] = target_ratio
        self._head = (i + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def sample(self, batch_size, rng):
        if self._size == 0:
            raise ValueError("cannot sample from an empty buffer")
        idx = rng.integers(0, self._size, size=batch_size)
        return {
            "states": self._states[idx],
            "actions": self._actions[idx],
            "rewards": self._rewards[idx],
            "next_states": self._next_states[idx],
            "dones": self._dones[idx],
            "actives": self._actives[idx],
            "ratios": self._ratios[idx],
        }


def penalty(kind, x_hat, x):
    """Value and derivative (w.r.t. x_hat) of the constraint penalty.

    mse: (x_hat - x)^2.  kl: -[x*ln(x_hat) + (1-x)*ln(1-x_hat)], the
    cross-entropy form, minimized at x_hat = x.  none: identically zero.
    """
    x_hat = np.asarray(x_hat, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if kind == NONE:
        return np.zeros_like(x_hat), np.zeros_like(x_hat)
    if kind == MSE:
        diff = x_hat - x
        return diff * diff, 2.0 * diff
    if kind == KL:
        if np.any(x_hat <= 0.0) or np.any(x_hat >= 1.0):
            raise ValueError("kl penalty requires x_hat in (0, 1)")
        value = -(x * np.log(x_hat) + (1.0 - x) * np.log1p(-x_hat))
        grad = -x / x_hat + (1.0 - x) / (1.0 - x_hat)
        return value, grad
    raise ValueError(f"unknown penalty kind {kind!r}")


def compute_target_ratio(budget_m, active_count):
    """Target real-time ratio for one period: budget over active
    requests, clamped to 1 when the period is under-subscribed."""
    if active_count == 0:
        raise ValueError("no traffic in period")
    if budget_m <= 0:
        raise ValueError("budget must be positive")
    return min(1.0, budget_m / active_count)


def critic_value(critic_net, states, a_tilde):
    """Q(s, a~) as the affine blend of the two action heads."""
    q_pair, _ = critic_net.forward(states)
    q_pair = np.atleast_2d(q_pair)
    a_tilde = np.asarray(a_tilde, dtype=np.float64)
    value = q_pair[:, 0] + a_tilde * (q_pair[:, 1] - q_pair[:, 0])
    return value if value.size > 1 else float(value[0])


def actor_loss(actor_net, critic_net, states, target_ratio, penalty_kind,
               alpha, active=None):
    """Mean per-sample actor loss and its gradient w.r.t. actor params.

    loss_i = -Q(s_i, a~_i) + alpha * T(a~_i, m_i); the critic is held
    fixed and contributes d(-Q)/d(a~) = -(Q(s,1) - Q(s,0)).
    """
    states = np.atleast_2d(states)
    n = states.shape[0]
    target_ratio = np.broadcast_to(
        np.asarray(target_ratio, dtype=np.float64), (n,))
    if active is None:
        active = np.ones(n, dtype=bool)
    weight = active.astype(np.float64)
    denom = weight.sum()
    if denom == 0.0:
        raise ValueError("no active samples in batch")

    a_tilde, cache = actor_net.forward(states)
    a_tilde = np.atleast_2d(a_tilde)[:, 0]
    q_pair, _ = critic_net.forward(states)
    q_pair = np.atleast_2d(q_pair)
    delta_q = q_pair[:, 1] - q_pair[:, 0]
    value = q_pair[:, 0] + a_tilde * delta_q
    pen, dpen = penalty(penalty_kind, a_tilde, target_ratio)
    per_sample = -value + alpha * pen
    loss = float(np.sum(weight * per_sample) / denom)
    dloss_da = (weight * (-delta_q + alpha * dpen) / denom)[:, None]
    grads, _ = actor_net.backward(cache, dloss_da)
    info = {
        "mean_a_tilde": float(np.sum(weight * a_tilde) / denom),
        "mean_penalty": float(np.sum(weight * pen) / denom),
    }
    return loss, grads, info


def critic_target(actor_target, critic_target_net, next_states, rewards,
                  dones, gamma):
    """Bootstrap target y = r + gamma * (1 - done) * Q'(s', mu'(s'))."""
    next_states = np.atleast_2d(next_states)
    a_next, _ = actor_target.forward(next_states)
    a_next = np.atleast_2d(a_next)[:, 0]
    q_next = critic_value(critic_target_net, next_states, a_next)
    q_next = np.atleast_1d(q_next)
    return rewards + gamma * (~np.asarray(dones)) * q_next


def critic_loss(critic_net, states, actions, targets, active=None):
    """Mean squared TD error on the head matching the logged action."""
    states = np.atleast_2d(states)
    n = states.shape[0]
    actions = np.asarray(actions, dtype=np.int64)
    if active is None:
        active = np.ones(n, dtype=bool)
    weight = active.astype(np.float64)
    denom = weight.sum()
    if denom == 0.0:
        raise ValueError("no active samples in batch")
    q_pair, cache = critic_net.forward(states)
    q_pair = np.atleast_2d(q_pair)
    q_taken = q_pair[np.arange(n), actions]
    td = q_taken - targets
    loss = float(np.sum(weight * td * td) / denom)
    dq = np.zeros_like(q_pair)
    dq[np.arange(n), actions] = 2.0 * weight * td / denom
    grads, _ = critic_net.backward(cache, dq)
    return loss, grads, td


def encode_state(user, config):
    """Fixed-width feature vector for one request: preference features,
    a staleness feature normalized so 1 means the discount floor is
    reached, and cache occupancy in [0, 1].

    Deliberately period-blind: the allocation stage ranks each period's
    relaxed actions against the previous period's pool, so the policy
    must stay comparable across periods. A period-of-day feature would
    let the actor track the per-period target ratio and shift the whole
    pool distribution between adjacent periods, starving admission
    during rising traffic.
    """
    slope = config.staleness_slope
    if slope > 0.0:
        stale_norm = (1.0 - config.staleness_floor) / slope
    else:
        stale_norm = 1.0
    stale = min(1.0, user.consecutive_cached / stale_norm)
    occupancy = user.cache_occupancy / config.cache_refill
    return np.concatenate([user.preference_vector, [stale, occupancy]])


def state_dim(config):
    return config.preference_dim + 2


def _mlp_dims(in_dim, out_dim, width, num_layers):
    # num_layers counts linear layers; hidden layers share one width.
    return [in_dim] + [width] * (num_layers - 1) + [out_dim]


@dataclass
class TrainerNets:
    actor: DenseNet
    actor_target: DenseNet
    critic: DenseNet
    critic_target: DenseNet
    critic2: DenseNet = None
    critic2_target: DenseNet = None


class DDPGTrainer:
    """One-step deterministic actor-critic updates over a replay buffer."""

    backbone = "ddpg"

    def __init__(self, cfg, sdim, penalty_kind=MSE, seed=0):
        cfg.validate()
        self.cfg = cfg
        self.penalty_kind = penalty_kind
        self.rng = np.random.default_rng(seed)
        adims = _mlp_dims(sdim, 1, cfg.hidden_width, cfg.num_layers)
        cdims = _mlp_dims(sdim, 2, cfg.hidden_width, cfg.num_layers)
        actor = DenseNet(adims, nn.LOGISTIC, rng=self.rng)
        critic = DenseNet(cdims, nn.IDENTITY, rng=self.rng)
        self.nets = TrainerNets(actor=actor, actor_target=actor.copy(),
                                critic=critic, critic_target=critic.copy())
        self.actor_opt = AdamState(actor, cfg.actor_lr)
        self.critic_opt = AdamState(critic, cfg.critic_lr)
        self.step_count = 0

    def act(self, states):
        """Relaxed actions for a batch of states (no exploration)."""
        out, _ = self.nets.actor.forward(states)
        return out if np.ndim(out) == 0 else np.atleast_2d(out)[:, 0]

    def act_one(self, state):
        out, _ = self.nets.actor.forward(state)
        return float(out[0])

    def _targets(self, batch):
        return critic_target(self.nets.actor_target, self.nets.critic_target,
                             batch["next_states"], batch["rewards"],
                             batch["dones"], self.cfg.gamma)

    def train_step(self, buffer):
        batch = buffer.sample(self.cfg.batch_size, self.rng)
        active = batch["actives"]
        y = self._targets(batch)
        c_loss, c_grads, td = critic_loss(self.nets.critic, batch["states"],
                                          batch["actions"], y, active)
        adam_step(self.nets.critic, c_grads, self.critic_opt)
        a_loss, a_grads, info = actor_loss(
            self.nets.actor, self.nets.critic, batch["states"],
            batch["ratios"], self.penalty_kind, self.cfg.alpha, active)
        adam_step(self.nets.actor, a_grads, self.actor_opt)
        soft_update(self.nets.actor_target, self.nets.actor, self.cfg.tau)
        soft_update(self.nets.critic_target, self.nets.critic, self.cfg.tau)
        self.step_count += 1
        denom = active.sum() or 1
        return {
            "critic_loss": c_loss,
            "actor_loss": a_loss,
            "mean_a_tilde": info["mean_a_tilde"],
            "mean_penalty": info["mean_penalty"],
            "mean_td_error": float(np.abs(td[active]).sum() / denom),
        }

    def _net_list(self):
        return [self.nets.actor, self.nets.actor_target,
                self.nets.critic, self.nets.critic_target]

    def save(self, path):
        nn.save_checkpoint(self._net_list(), path)

    def load(self, path):
        acts = [nn.LOGISTIC, nn.LOGISTIC] + [nn.IDENTITY] * \
            (_CHECKPOINT_TAGS[self.backbone] - 2)
        nets = nn.load_checkpoint(path, output_activations=acts)
        if len(nets) != _CHECKPOINT_TAGS[self.backbone]:
            raise nn.MalformedCheckpointError(
                f"expected {_CHECKPOINT_TAGS[self.backbone]} networks, "
                f"found {len(nets)}")
        self._assign_nets(nets)

    def _assign_nets(self, nets):
        self.nets.actor, self.nets.actor_target = nets[0], nets[1]
        self.nets.critic, self.nets.critic_target = nets[2], nets[3]


class TD3Trainer(DDPGTrainer):
    """Twin critics, smoothed targets and delayed actor updates."""

    backbone = "td3"

    def __init__(self, cfg, sdim, penalty_kind=MSE, seed=0):
        super().__init__(cfg, sdim, penalty_kind, seed)
        cdims = _mlp_dims(sdim, 2, cfg.hidden_width, cfg.num_layers)
        critic2 = DenseNet(cdims, nn.IDENTITY, rng=self.rng)
        self.nets.critic2 = critic2
        self.nets.critic2_target = critic2.copy()
        self.critic2_opt = AdamState(critic2, cfg.critic_lr)

    def _targets(self, batch):
        next_states = np.atleast_2d(batch["next_states"])
        a_next, _ = self.nets.actor_target.forward(next_states)
        a_next = np.atleast_2d(a_next)[:, 0]
        noise = np.clip(
            self.rng.standard_normal(a_next.shape) * self.cfg.smoothing_std,
            -self.cfg.smoothing_clip, self.cfg.smoothing_clip)
        a_smooth = np.clip(a_next + noise, 0.0, 1.0)
        q1 = np.atleast_1d(critic_value(self.nets.critic_target,
                                        next_states, a_smooth))
        q2 = np.atleast_1d(critic_value(self.nets.critic2_target,
                                        next_states, a_smooth))
        q_min = np.minimum(q1, q2)
        return batch["rewards"] + self.cfg.gamma * (~batch["dones"]) * q_min

    def train_step(self, buffer):
        batch = buffer.sample(self.cfg.batch_size, self.rng)
        active = batch["actives"]
        y = self._targets(batch)
        c_loss, c_grads, td = critic_loss(self.nets.critic, batch["states"],
                                          batch["actions"], y, active)
        adam_step(self.nets.critic, c_grads, self.critic_opt)
        c2_loss, c2_grads, _ = critic_loss(self.nets.critic2, batch["states"],
                                           batch["actions"], y, active)
        adam_step(self.nets.critic2, c2_grads, self.critic2_opt)
        self.step_count += 1
        diag = {
            "critic_loss": c_loss,
            "critic2_loss": c2_loss,
            "actor_loss": math.nan,
            "mean_a_tilde": math.nan,
            "mean_penalty": math.nan,
            "mean_td_error": float(np.abs(td[active]).sum()
                                   / (active.sum() or 1)),
        }
        if self.step_count % self.cfg.policy_delay == 0:
            a_loss, a_grads, info = actor_loss(
                self.nets.actor, self.nets.critic, batch["states"],
                batch["ratios"], self.penalty_kind, self.cfg.alpha, active)
            adam_step(self.nets.actor, a_grads, self.actor_opt)
            soft_update(self.nets.actor_target, self.nets.actor, self.cfg.tau)
            soft_update(self.nets.critic_target, self.nets.critic, self.cfg.tau)
            soft_update(self.nets.critic2_target, self.nets.critic2,
                        self.cfg.tau)
            diag["actor_loss"] = a_loss
            diag["mean_a_tilde"] = info["mean_a_tilde"]
            diag["mean_penalty"] = info["mean_penalty"]
        return diag

    def _net_list(self):
        return super()._net_list() + [self.nets.critic2,
                                      self.nets.critic2_target]

    def _assign_nets(self, nets):
        super()._assign_nets(nets)
        self.nets.critic2, self.nets.critic2_target = nets[4], nets[5]


def make_trainer(backbone, cfg, sdim, penalty_kind=MSE, seed=0):
    if backbone == "ddpg":
        return DDPGTrainer(cfg, sdim, penalty_kind, seed)
    if backbone == "td3":
        return TD3Trainer(cfg, sdim, penalty_kind, seed)
    raise ValueError(f"unknown backbone {backbone!r}")
