"""Actor-critic network with hand-written gradients, the A2C and constraint losses,
and the offline training loop."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .dataset import DialogueRecord
from .env import OffloadEnv
from .metrics import step_row, summarize

PARAM_NAMES = ("trunk1.W", "trunk1.b", "trunk2.W", "trunk2.b",
               "policy.W", "policy.b", "value.W", "value.b")


class TrainingDiverged(RuntimeError):
    pass


class NonFiniteLoss(FloatingPointError):
    pass


@dataclass
class PolicyParams:
    tensors: dict[str, np.ndarray]

    @property
    def state_dim(self) -> int:
        return self.tensors["trunk1.W"].shape[0]

    @property
    def hidden(self) -> int:
        return self.tensors["trunk1.W"].shape[1]

    @property
    def n_actions(self) -> int:
        return self.tensors["policy.W"].shape[1]

    def copy(self) -> "PolicyParams":
        return PolicyParams({k: v.copy() for k, v in self.tensors.items()})

    def flat(self) -> np.ndarray:
        return np.concatenate([self.tensors[k].ravel() for k in PARAM_NAMES])

    def with_flat(self, vec: np.ndarray) -> "PolicyParams":
        out, i = {}, 0
        for k in PARAM_NAMES:
            t = self.tensors[k]
            out[k] = np.asarray(vec[i:i + t.size], dtype=float).reshape(t.shape)
            i += t.size
        return PolicyParams(out)


def init_params(state_dim: int, n_actions: int, hidden: int = 64,
                rng: np.random.Generator | None = None) -> PolicyParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for every weight and bias."""
    rng = rng if rng is not None else np.random.default_rng(0)
    shapes = {"trunk1": (state_dim, hidden), "trunk2": (hidden, hidden),
              "policy": (hidden, n_actions), "value": (hidden, 1)}
    t = {}
    for name, (fan_in, fan_out) in shapes.items():
        bound = 1.0 / math.sqrt(fan_in)
        t[name + ".W"] = rng.uniform(-bound, bound, (fan_in, fan_out))
        t[name + ".b"] = rng.uniform(-bound, bound, fan_out)
    return PolicyParams(t)


def log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def entropy(probs: np.ndarray) -> np.ndarray:
    p = np.asarray(probs, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0)
    return -terms.sum(axis=-1)


def _forward(params: PolicyParams, x: np.ndarray):
    t = params.tensors
    h1 = np.tanh(x @ t["trunk1.W"] + t["trunk1.b"])
    h2 = np.tanh(h1 @ t["trunk2.W"] + t["trunk2.b"])
    logits = h2 @ t["policy.W"] + t["policy.b"]
    values = (h2 @ t["value.W"] + t["value.b"])[:, 0]
    return logits, values, (x, h1, h2)


def _backward(params: PolicyParams, cache, dz: np.ndarray, dv: np.ndarray) -> dict[str, np.ndarray]:
    t = params.tensors
    x, h1, h2 = cache
    g = {"policy.W": h2.T @ dz, "policy.b": dz.sum(0),
         "value.W": h2.T @ dv[:, None], "value.b": np.array([dv.sum()])}
    da2 = (dz @ t["policy.W"].T + dv[:, None] @ t["value.W"].T) * (1.0 - h2 ** 2)
    g["trunk2.W"] = h1.T @ da2
    g["trunk2.b"] = da2.sum(0)
    da1 = (da2 @ t["trunk2.W"].T) * (1.0 - h1 ** 2)
    g["trunk1.W"] = x.T @ da1
    g["trunk1.b"] = da1.sum(0)
    return g


def _as_batch(params: PolicyParams, states) -> np.ndarray:
    x = np.atleast_2d(np.asarray(states, dtype=float))
    if x.shape[1] != params.state_dim:
        raise ValueError(f"state length {x.shape[1]} != network input {params.state_dim}")
    return x


def forward(params: PolicyParams, states) -> tuple[np.ndarray, np.ndarray]:
    """Action probabilities (in canonical action order) and state values."""
    logits, values, _ = _forward(params, _as_batch(params, states))
    return np.exp(log_softmax(logits)), values


@dataclass
class Batch:
    states: np.ndarray        # (B, D)
    actions: np.ndarray       # (B,)
    rewards: np.ndarray       # (B,)
    next_states: np.ndarray   # (B, D)
    dones: np.ndarray         # (B,)
    prior_sums: np.ndarray | None = None    # (B, 2) raw latency/cost of the previous tau-1 actions
    action_costs: np.ndarray | None = None  # (B, A, 2) raw latency/cost of every action

    def __len__(self):
        return len(self.actions)


def _check_finite(name: str, *arrays) -> None:
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NonFiniteLoss(f"non-finite values in {name}: {np.asarray(a).ravel()[:8]}")


def _a2c_parts(logits, values, actions, targets, advantages, zeta):
    B = len(actions)
    logp = log_softmax(logits)
    p = np.exp(logp)
    H = -(p * logp).sum(1)
    chosen = logp[np.arange(B), actions]
    loss = float(np.mean(-advantages * chosen + 0.5 * (values - targets) ** 2 - zeta * H))
    onehot = np.zeros_like(p)
    onehot[np.arange(B), actions] = 1.0
    dz = (-advantages[:, None] * (onehot - p) + zeta * p * (logp + H[:, None])) / B
    dv = (values - targets) / B
    return loss, dz, dv, H


def a2c_terms(params: PolicyParams, states, actions, targets, advantages, zeta: float):
    """A2C loss and its gradient with the bootstrapped targets and advantages held fixed."""
    x = _as_batch(params, states)
    actions = np.asarray(actions, dtype=int)
    targets = np.asarray(targets, dtype=float)
    advantages = np.asarray(advantages, dtype=float)
    logits, values, cache = _forward(params, x)
    _check_finite("forward pass", logits, values)
    loss, dz, dv, _ = _a2c_parts(logits, values, actions, targets, advantages, zeta)
    _check_finite("A2C loss", loss, dz, dv)
    return loss, _backward(params, cache, dz, dv)


def td_targets(params: PolicyParams, batch: Batch, gamma: float) -> tuple[np.ndarray, np.ndarray]:
    """(targets, advantages): r + gamma V(s')(1 - done) and target - V(s), both detached."""
    _, v_next = forward(params, batch.next_states)
    _, v = forward(params, batch.states)
    targets = batch.rewards + gamma * v_next * (1.0 - batch.dones)
    return targets, targets - v


def a2c_loss(params: PolicyParams, batch: Batch, zeta: float, gamma: float):
    """Mean of -log pi(a|s) A + 1/2 (V(s) - target)^2 - zeta H(pi(.|s)) and its gradient."""
    if len(batch) == 0:
        raise ValueError("empty batch")
    targets, adv = td_targets(params, batch, gamma)
    return a2c_terms(params, batch.states, batch.actions, targets, adv, zeta)


def penalized_loss(base_loss: float, overshoots, lam: float) -> float:
    """base + lam * sum_j max(g_j, 0) with budget-relative overshoots g_j = (sum C_j - xi_j) / xi_j.

    ``overshoots`` is a (J,) vector for one window or a (B, J) batch, in which
    case the hinge is averaged over the batch.
    """
    if lam < 0:
        raise ValueError("penalty coefficient must be >= 0")
    g = np.atleast_2d(np.asarray(overshoots, dtype=float))
    return float(base_loss + lam * np.maximum(g, 0.0).mean(axis=0).sum())


def expected_overshoot(probs: np.ndarray, prior_sums: np.ndarray, action_costs: np.ndarray,
                       budgets: np.ndarray) -> np.ndarray:
    """(B, J) budget-relative window overshoot with the current action's cost
    replaced by its expectation under the policy, so it depends on theta."""
    expected = np.einsum("ba,baj->bj", probs, action_costs)
    return (prior_sums + expected - budgets) / budgets


def penalty_terms(params: PolicyParams, states, prior_sums, action_costs, budgets, lam: float):
    """Constraint penalty lam * sum_j mean_b max(g_bj(theta), 0) and its gradient."""
    x = _as_batch(params, states)
    logits, values, cache = _forward(params, x)
    value, dz = _penalty_parts(logits, np.asarray(prior_sums, float), np.asarray(action_costs, float),
                               np.asarray(budgets, float), lam)
    return value, _backward(params, cache, dz, np.zeros(len(x)))


def _penalty_parts(logits, prior_sums, action_costs, budgets, lam):
    B = logits.shape[0]
    p = np.exp(log_softmax(logits))
    g = expected_overshoot(p, prior_sums, action_costs, budgets)
    active = (g > 0).astype(float)
    value = lam * np.maximum(g, 0.0).mean(axis=0).sum()
    # d g_bj / d z_ba = p_ba (C_baj - E_p[C_bj]) / xi_j
    expected = np.einsum("ba,baj->bj", p, action_costs)
    weight = active / budgets                                             # (B, J)
    dz = lam / B * p * np.einsum("bj,baj->ba", weight, action_costs - expected[:, None, :])
    return float(value), dz


def total_loss(params: PolicyParams, batch: Batch, cfg: "TrainConfig", budgets: np.ndarray,
               targets=None, advantages=None):
    """F = A2C loss + constraint penalty, one forward/backward pass.

    Returns (F, gradient, A2C loss part, penalty part).
    """
    if targets is None:
        targets, advantages = td_targets(params, batch, cfg.gamma)
    x = _as_batch(params, batch.states)
    logits, values, cache = _forward(params, x)
    _check_finite("forward pass", logits, values)
    base, dz, dv, _ = _a2c_parts(logits, values, batch.actions, targets, advantages, cfg.entropy_coeff)
    pen = 0.0
    if cfg.penalty > 0 and batch.prior_sums is not None:
        pen, dz_p = _penalty_parts(logits, batch.prior_sums, batch.action_costs, budgets, cfg.penalty)
        dz = dz + dz_p
    _check_finite("loss", base, pen, dz, dv)
    return base + pen, _backward(params, cache, dz, dv), base, pen


@dataclass(frozen=True)
class TrainConfig:
    total_steps: int = 30_000
    learning_rate: float = 0.03
    gamma: float = 0.99
    entropy_coeff: float = 0.01
    penalty: float = 10.0
    batch_size: int = 5
    k: int = 5
    hidden: int = 64
    seed: int = 0
    rollout: str = "policy"     # "policy" or "logged"
    divergence_limit: float = 1e6

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must lie in (0, 1]")
        if self.entropy_coeff < 0 or self.penalty < 0:
            raise ValueError("entropy_coeff and penalty must be >= 0")
        if self.total_steps < 1 or self.batch_size < 1 or self.k < 1 or self.hidden < 1:
            raise ValueError("total_steps, batch_size, k and hidden must be >= 1")
        if self.rollout not in ("policy", "logged"):
            raise ValueError("rollout must be 'policy' or 'logged'")


LOG_COLUMNS = ("step", "loss", "mean_reward", "g_latency", "g_cost")


@dataclass
class TrainResult:
    params: PolicyParams
    log: list[dict] = field(default_factory=list)
    step_rewards: np.ndarray = field(default_factory=lambda: np.zeros(0))


def _sample(probs: np.ndarray, u: float) -> int:
    c = np.cumsum(probs)
    return int(min(np.searchsorted(c, u * c[-1], side="right"), len(probs) - 1))


def train(train_conversations: Sequence[Sequence[DialogueRecord]],
          env_factory: Callable[[], OffloadEnv], config: TrainConfig = TrainConfig(),
          progress: Callable[[int, dict], None] | None = None) -> TrainResult:
    """Roll episodes over training conversations with the sampling policy and
    update theta <- theta - eta * grad F every ``batch_size`` environment steps."""
    if not train_conversations:
        raise ValueError("empty training split")
    cfg = config
    rng = np.random.default_rng(cfg.seed)
    env = env_factory()
    A = env.n_actions
    params = init_params(env.state_dim, A, cfg.hidden, rng)
    budgets = np.array([env.budget.latency_budget, env.budget.cost_budget])
    tau = env.budget.horizon

    log: list[dict] = []
    step_rewards = np.zeros(cfg.total_steps)
    buf: list[tuple] = []
    state = None
    for step in range(cfg.total_steps):
        if state is None:
            conv = train_conversations[int(rng.integers(len(train_conversations)))]
            state = env.reset(conv)
        rec = env.conversation[env.turn]
        if cfg.rollout == "logged":
            a = env.encoder.actions.index(rec.action)
            rng.random()
        else:
            logits, _, _ = _forward(params, state.vector[None, :])
            probs = np.exp(log_softmax(logits))[0]
            a = _sample(probs, rng.random())
        lat_all, cost_all = env.action_costs(rec)
        prev = env.window.entries[-(tau - 1):] if tau > 1 else ()
        prior = (sum(e[0] for e in prev), sum(e[1] for e in prev))
        out = env.step(a)
        step_rewards[step] = out.reward
        g = out.window.relative_g
        buf.append((state.vector, a, out.reward, out.next_state.vector, float(out.done), prior,
                    np.stack([lat_all, cost_all], axis=1), max(g[0], 0.0), max(g[1], 0.0)))
        state = None if out.done else out.next_state

        if len(buf) == cfg.batch_size or step == cfg.total_steps - 1:
            batch = Batch(np.array([b[0] for b in buf]), np.array([b[1] for b in buf]),
                          np.array([b[2] for b in buf]), np.array([b[3] for b in buf]),
                          np.array([b[4] for b in buf]), np.array([b[5] for b in buf]),
                          np.array([b[6] for b in buf]))
            loss, grads, _, _ = total_loss(params, batch, cfg, budgets)
            if not math.isfinite(loss) or abs(loss) > cfg.divergence_limit:
                raise TrainingDiverged(f"loss {loss} at step {step + 1} exceeds "
                                       f"{cfg.divergence_limit}")
            for k in PARAM_NAMES:
                params.tensors[k] -= cfg.learning_rate * grads[k]
            row = {"step": step + 1, "loss": loss, "mean_reward": float(batch.rewards.mean()),
                   "g_latency": float(np.mean([b[7] for b in buf])),
                   "g_cost": float(np.mean([b[8] for b in buf]))}
            log.append(row)
            if progress is not None:
                progress(step + 1, row)
            buf = []
    return TrainResult(params, log, step_rewards)


class GreedyPolicy:
    """Argmax over the trained policy head."""

    def __init__(self, params: PolicyParams):
        self.params = params

    def select(self, state, task: int) -> int:
        logits, _, _ = _forward(self.params, state.vector[None, :])
        return int(np.argmax(logits[0]))

    def update(self, task: int, action: int, reward: float) -> None:
        pass


def run_policy(agent, conversations: Sequence[Sequence[DialogueRecord]], env: OffloadEnv) -> list[dict]:
    """Play ``agent`` over every conversation; returns the per-step log."""
    rows = []
    for conv in conversations:
        state = env.reset(conv)
        done = False
        while not done:
            rec = env.conversation[env.turn]
            a = agent.select(state, rec.task)
            out = env.step(a)
            agent.update(rec.task, out.action, out.reward)
            rows.append(step_row(env, out, rec))
            state, done = out.next_state, out.done
    return rows


def evaluate(params: PolicyParams, test_conversations, env_factory) -> tuple[dict, list[dict]]:
    """Greedy evaluation: (summary, per-step rows)."""
    env = env_factory()
    rows = run_policy(GreedyPolicy(params), test_conversations, env)
    return summarize(rows, env.encoder.modality_count), rows


def config_dict(cfg: TrainConfig) -> dict:
    return dataclasses.asdict(cfg)
