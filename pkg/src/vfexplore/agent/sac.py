"""Soft actor-critic with twin critics, automatic temperature and global-norm clipping."""
from __future__ import annotations

import copy
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np
import torch
from torch import nn

from .. import boxworld
from ..boxworld import EnvConfig, RewardMode, Transition
from ..oracle import UncertaintyField
from ..shaping import ShapingConfig
from .buffer import ReplayBuffer
from .networks import QNetwork, SquashedPolicy

log = logging.getLogger(__name__)


class TrainingDivergenceError(RuntimeError):
    """Non-finite network output or loss; ``last_good`` holds the latest finite bundle state."""

    def __init__(self, message: str, last_good: Optional[dict] = None, dump: Optional[dict] = None):
        super().__init__(message)
        self.last_good = last_good
        self.dump = dump or {}


@dataclass(frozen=True)
class TrainConfig:
    actor_lr: float = 1e-6
    critic_lr: float = 5e-4
    alpha_lr: float = 2e-3
    gamma: float = 0.99
    tau: float = 1e-4
    max_grad_norm: float = 30.0
    batch_size: int = 256
    initial_alpha: float = 0.1
    target_entropy: float = -8.0
    total_env_steps: int = 0
    updates_per_step: int = 1
    warmup_steps: int = 1000
    buffer_capacity: int = 1_000_000
    hidden: int = 256
    depth: int = 2
    flow_blocks: int = 0
    log_interval: int = 1000
    seed: int = 0

    def __post_init__(self) -> None:
        for name in ("actor_lr", "critic_lr", "alpha_lr", "max_grad_norm", "initial_alpha"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must lie in (0, 1)")
        if not 0 < self.tau <= 1:
            raise ValueError("tau must lie in (0, 1]")
        if self.batch_size < 1 or self.buffer_capacity < self.batch_size:
            raise ValueError("batch_size must be >= 1 and fit in the buffer")
        if self.total_env_steps < 0 or self.updates_per_step < 0 or self.warmup_steps < 0:
            raise ValueError("step counts must be nonnegative")
        if self.log_interval < 1:
            raise ValueError("log_interval must be >= 1")


@dataclass
class AgentBundle:
    actor: SquashedPolicy
    critic1: QNetwork
    critic2: QNetwork
    target1: QNetwork
    target2: QNetwork
    log_alpha: torch.Tensor
    actor_opt: torch.optim.Optimizer
    critic_opt: torch.optim.Optimizer
    alpha_opt: torch.optim.Optimizer
    cfg: TrainConfig
    buffer: Optional[ReplayBuffer] = None
    env_steps: int = 0
    updates: int = 0

    @property
    def alpha(self) -> torch.Tensor:
        return self.log_alpha.exp()

    @property
    def obs_dim(self) -> int:
        return self.actor.obs_dim

    @property
    def act_dim(self) -> int:
        return self.actor.act_dim

    def named_modules(self) -> dict[str, nn.Module]:
        return {"actor": self.actor, "critic1": self.critic1, "critic2": self.critic2,
                "target1": self.target1, "target2": self.target2}

    def named_optimizers(self) -> dict[str, torch.optim.Optimizer]:
        return {"actor_opt": self.actor_opt, "critic_opt": self.critic_opt, "alpha_opt": self.alpha_opt}


def make_bundle(obs_dim: int, act_dim: int, action_limit: float, cfg: TrainConfig,
                with_buffer: bool = True) -> AgentBundle:
    """Fresh networks; parameter init draws from the torch global generator seeded with ``cfg.seed``."""
    torch.manual_seed(cfg.seed)
    actor = SquashedPolicy(obs_dim, act_dim, action_limit, cfg.hidden, cfg.depth, cfg.flow_blocks)
    c1 = QNetwork(obs_dim, act_dim, cfg.hidden, cfg.depth)
    c2 = QNetwork(obs_dim, act_dim, cfg.hidden, cfg.depth)
    t1, t2 = copy.deepcopy(c1), copy.deepcopy(c2)
    for p in list(t1.parameters()) + list(t2.parameters()):
        p.requires_grad_(False)
    log_alpha = torch.tensor(math.log(cfg.initial_alpha), requires_grad=True)
    return AgentBundle(
        actor=actor, critic1=c1, critic2=c2, target1=t1, target2=t2, log_alpha=log_alpha,
        actor_opt=torch.optim.Adam(actor.parameters(), lr=cfg.actor_lr),
        critic_opt=torch.optim.Adam(list(c1.parameters()) + list(c2.parameters()), lr=cfg.critic_lr),
        alpha_opt=torch.optim.Adam([log_alpha], lr=cfg.alpha_lr),
        cfg=cfg,
        buffer=ReplayBuffer(obs_dim, act_dim, cfg.buffer_capacity) if with_buffer else None,
    )


def act(policy: SquashedPolicy, obs, rng: Optional[torch.Generator] = None, deterministic: bool = False):
    """Sample (or take the squashed mean of) the policy at one observation."""
    with torch.no_grad():
        o = torch.as_tensor(np.asarray(obs), dtype=torch.float32).unsqueeze(0)
        a, lp = policy.sample(o, rng, deterministic)
    a_np = a.squeeze(0).numpy().astype(float)
    if not np.all(np.isfinite(a_np)):
        mean, log_std = policy.base(o)
        raise TrainingDivergenceError(
            "non-finite policy output",
            dump={"obs": np.asarray(obs).tolist(), "mean": mean.tolist(), "log_std": log_std.tolist()},
        )
    # float32 saturation can round limit * tanh(u) a hair past the limit once widened to float64
    a_np = np.clip(a_np, -policy.action_limit, policy.action_limit)
    return a_np, (None if deterministic else float(lp))


def clip_grad_norm(params, max_norm: float) -> tuple[float, float]:
    """Scale gradients to global norm <= ``max_norm``; returns ``(pre_clip, post_clip)`` norms."""
    params = [p for p in params if p.grad is not None]
    if not params:
        return 0.0, 0.0
    pre = float(torch.nn.utils.clip_grad_norm_(params, max_norm))
    post = float(torch.sqrt(sum(p.grad.detach().pow(2).sum() for p in params)))
    return pre, post


@torch.no_grad()
def soft_update(target: nn.Module, online: nn.Module, tau: float) -> None:
    for tp, p in zip(target.parameters(), online.parameters()):
        if tau == 1.0:
            tp.copy_(p)
        else:
            tp.mul_(1.0 - tau).add_(p, alpha=tau)


@dataclass
class LossReport:
    critic_loss: float
    actor_loss: float
    alpha_loss: float
    grad_norms: dict = field(default_factory=dict)


def _to_tensors(batch: dict) -> dict[str, torch.Tensor]:
    return {k: torch.as_tensor(v, dtype=torch.float32) for k, v in batch.items()}


def critic_targets(bundle: AgentBundle, batch: dict, generator: Optional[torch.Generator]) -> torch.Tensor:
    cfg = bundle.cfg
    lim = bundle.actor.action_limit
    with torch.no_grad():
        a_next, lp_next = bundle.actor.sample(batch["obs_next"], generator)
        q_next = torch.min(bundle.target1(batch["obs_next"], a_next / lim),
                           bundle.target2(batch["obs_next"], a_next / lim))
        return batch["rew"] + cfg.gamma * (1.0 - batch["terminal"]) * (q_next - bundle.alpha * lp_next)


def update(bundle: AgentBundle, batch: dict, generator: Optional[torch.Generator] = None) -> LossReport:
    """One gradient step on critics, actor and temperature, then soft target updates."""
    cfg = bundle.cfg
    b = _to_tensors(batch)
    lim = bundle.actor.action_limit
    act_n = b["act"] / lim

    y = critic_targets(bundle, b, generator)
    q1 = bundle.critic1(b["obs"], act_n)
    q2 = bundle.critic2(b["obs"], act_n)
    critic_loss = 0.5 * ((q1 - y).pow(2).mean() + (q2 - y).pow(2).mean())
    _check_finite(bundle, "critic_loss", critic_loss)
    bundle.critic_opt.zero_grad(set_to_none=True)
    critic_loss.backward()
    critic_params = list(bundle.critic1.parameters()) + list(bundle.critic2.parameters())
    _, critic_norm = clip_grad_norm(critic_params, cfg.max_grad_norm)
    bundle.critic_opt.step()

    a_new, lp_new = bundle.actor.sample(b["obs"], generator)
    for p in critic_params:
        p.requires_grad_(False)
    q_new = torch.min(bundle.critic1(b["obs"], a_new / lim), bundle.critic2(b["obs"], a_new / lim))
    for p in critic_params:
        p.requires_grad_(True)
    alpha = bundle.alpha.detach()
    actor_loss = (alpha * lp_new - q_new).mean()
    _check_finite(bundle, "actor_loss", actor_loss)
    bundle.actor_opt.zero_grad(set_to_none=True)
    actor_loss.backward()
    _, actor_norm = clip_grad_norm(bundle.actor.parameters(), cfg.max_grad_norm)
    bundle.actor_opt.step()

    alpha_loss = -(bundle.log_alpha * (lp_new.detach() + cfg.target_entropy)).mean()
    _check_finite(bundle, "alpha_loss", alpha_loss)
    bundle.alpha_opt.zero_grad(set_to_none=True)
    alpha_loss.backward()
    _, alpha_norm = clip_grad_norm([bundle.log_alpha], cfg.max_grad_norm)
    bundle.alpha_opt.step()

    soft_update(bundle.target1, bundle.critic1, cfg.tau)
    soft_update(bundle.target2, bundle.critic2, cfg.tau)
    bundle.updates += 1
    return LossReport(
        critic_loss=critic_loss.item(), actor_loss=actor_loss.item(), alpha_loss=alpha_loss.item(),
        grad_norms={"critic": critic_norm, "actor": actor_norm, "alpha": alpha_norm},
    )


def _check_finite(bundle: AgentBundle, name: str, value: torch.Tensor) -> None:
    if not torch.isfinite(value):
        raise TrainingDivergenceError(f"non-finite {name}", dump={"updates": bundle.updates})


def bundle_state(bundle: AgentBundle) -> dict:
    """Deep copy of every parameter and optimiser state (no replay contents)."""
    return {
        "modules": {k: copy.deepcopy(m.state_dict()) for k, m in bundle.named_modules().items()},
        "log_alpha": bundle.log_alpha.detach().clone(),
        "optimizers": {k: copy.deepcopy(o.state_dict()) for k, o in bundle.named_optimizers().items()},
        "env_steps": bundle.env_steps,
        "updates": bundle.updates,
    }


# --- training loop ---------------------------------------------------------------------------


@dataclass
class _Window:
    returns: list = field(default_factory=list)
    goals: list = field(default_factory=list)
    losses: list = field(default_factory=list)
    s: list = field(default_factory=list)
    s_next: list = field(default_factory=list)
    rot: list = field(default_factory=list)
    u_next: list = field(default_factory=list)


def _mean(xs) -> Optional[float]:
    return float(np.mean(xs)) if len(xs) else None


def train(
    env_cfg: EnvConfig,
    field: UncertaintyField,
    shaping_cfg: ShapingConfig,
    train_cfg: TrainConfig,
    reward_mode: RewardMode,
    rng: Optional[np.random.Generator] = None,
    on_metrics: Optional[Callable[[dict], None]] = None,
    band=None,
) -> tuple[AgentBundle, list[dict]]:
    """Interleave rollouts and updates for ``train_cfg.total_env_steps`` environment steps.

    Deterministic given ``train_cfg.seed`` (and ``rng`` if supplied) in a
    single-threaded process. Each metric record covers one ``log_interval``
    window of environment steps.
    """
    from .. import diagnostics

    reward_mode = RewardMode(reward_mode)
    seeds = np.random.SeedSequence(train_cfg.seed)
    env_seed, buf_seed, torch_seed = seeds.spawn(3)
    rng = rng if rng is not None else np.random.default_rng(env_seed)
    buf_rng = np.random.default_rng(buf_seed)
    gen = torch.Generator().manual_seed(int(torch_seed.generate_state(1)[0]))
    torch.set_num_threads(1)

    bundle = make_bundle(env_cfg.obs_dim, env_cfg.action_dim, env_cfg.action_limit, train_cfg)
    metrics: list[dict] = []
    if train_cfg.total_env_steps == 0:
        return bundle, metrics
    band = band or diagnostics.BandSpec(shaping_cfg.u_mid, 0.1 * max(field.amplitude_min, 1e-12),
                                        shaping_cfg.eps_unsafe)

    lim = env_cfg.action_limit
    state = boxworld.reset(env_cfg, rng)
    ep_return, ep_goal = 0.0, False
    win = _Window()
    last_good = bundle_state(bundle)
    for step_i in range(1, train_cfg.total_env_steps + 1):
        obs = boxworld.observe(env_cfg, state)
        if bundle.env_steps < train_cfg.warmup_steps:
            action = rng.uniform(-lim, lim, size=env_cfg.action_dim)
        else:
            action, _ = act(bundle.actor, obs, gen)
        state, tr = boxworld.env_transition(env_cfg, field, shaping_cfg, state, action, reward_mode, rng)
        bundle.buffer.add(tr.obs, tr.a, tr.shaped_reward, tr.obs_next, tr.terminal)
        bundle.env_steps += 1
        ep_return += tr.shaped_reward
        ep_goal = ep_goal or tr.reached_goal
        win.s.append(tr.s)
        win.s_next.append(tr.s_next)
        win.u_next.append(tr.u_s_next)
        if state.done:
            win.returns.append(ep_return)
            win.goals.append(float(ep_goal))
            state = boxworld.reset(env_cfg, rng)
            ep_return, ep_goal = 0.0, False

        if bundle.env_steps >= train_cfg.warmup_steps and len(bundle.buffer) >= train_cfg.batch_size:
            for _ in range(train_cfg.updates_per_step):
                batch = bundle.buffer.sample(train_cfg.batch_size, buf_rng)
                try:
                    rep = update(bundle, batch, gen)
                except TrainingDivergenceError as err:
                    err.last_good = last_good
                    raise
                win.losses.append(rep)

        if step_i % train_cfg.log_interval == 0 or step_i == train_cfg.total_env_steps:
            rec = _window_record(bundle, win, field, shaping_cfg, band)
            metrics.append(rec)
            if on_metrics is not None:
                on_metrics(rec)
            win = _Window()
            last_good = bundle_state(bundle)
    return bundle, metrics


def _window_record(bundle: AgentBundle, win: _Window, field, shaping_cfg, band) -> dict:
    from .. import diagnostics

    s = np.array(win.s)
    sn = np.array(win.s_next)
    trs = [Transition(a, a, a, b, b, 0.0, 0.0, 0.0, 0.0, False, False, 0.0, 0.0, 0) for a, b in zip(s, sn)]
    losses = win.losses
    return {
        "env_steps": bundle.env_steps,
        "updates": bundle.updates,
        "episodes": len(win.returns),
        "episode_return_mean": _mean(win.returns),
        "goal_rate": _mean(win.goals),
        "critic_loss": _mean([r.critic_loss for r in losses]),
        "actor_loss": _mean([r.actor_loss for r in losses]),
        "alpha_loss": _mean([r.alpha_loss for r in losses]),
        "grad_norm_critic": _mean([r.grad_norms["critic"] for r in losses]),
        "grad_norm_actor": _mean([r.grad_norms["actor"] for r in losses]),
        "alpha": bundle.alpha.item(),
        "tangential_speed": float(diagnostics.tangential_speed(field, band, trs, shaping_cfg.w)),
        "unsafe_rate": float(diagnostics.unsafe_rate(field, band, trs)),
        "no_sticking_value": float(diagnostics.no_sticking_value(field, shaping_cfg, trs)),
    }


def policy_fn(bundle: AgentBundle, generator: Optional[torch.Generator] = None,
              deterministic: bool = False) -> Callable[[np.ndarray], np.ndarray]:
    def pol(obs):
        return act(bundle.actor, obs, generator, deterministic)[0]
    return pol
