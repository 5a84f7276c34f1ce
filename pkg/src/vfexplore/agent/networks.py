"""Policy and critic networks.

The policy is a diagonal Gaussian over pre-squash actions, optionally pushed
through conditional affine-coupling blocks, then squashed with ``tanh`` and
scaled to the action limit. Densities are reported for the scaled action.
"""
from __future__ import annotations

import math
from typing import Optional

import torch
from torch import nn
from torch.nn import functional as F

LOG_STD_MIN, LOG_STD_MAX = -20.0, 2.0
LOG_SCALE_BOUND = 2.0
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


def mlp(in_dim: int, out_dim: int, hidden: int, depth: int) -> nn.Sequential:
    layers: list[nn.Module] = []
    d = in_dim
    for _ in range(depth):
        layers += [nn.Linear(d, hidden), nn.ReLU()]
        d = hidden
    layers.append(nn.Linear(d, out_dim))
    return nn.Sequential(*layers)


class CouplingBlock(nn.Module):
    """Affine coupling ``x_b <- x_b * exp(s(x_a, obs)) + t(x_a, obs)`` on masked coordinates."""

    def __init__(self, obs_dim: int, act_dim: int, mask: torch.Tensor, hidden: int, depth: int):
        super().__init__()
        self.register_buffer("mask", mask)
        self.net = mlp(obs_dim + act_dim, 2 * act_dim, hidden, depth)
        nn.init.zeros_(self.net[-1].weight)
        nn.init.zeros_(self.net[-1].bias)

    def _params(self, x: torch.Tensor, obs: torch.Tensor):
        h = self.net(torch.cat([x * self.mask, obs], dim=-1))
        log_s, t = h.chunk(2, dim=-1)
        log_s = LOG_SCALE_BOUND * torch.tanh(log_s / LOG_SCALE_BOUND)
        free = 1.0 - self.mask
        return log_s * free, t * free

    def forward(self, x, obs):
        log_s, t = self._params(x, obs)
        return x * torch.exp(log_s) + t, log_s.sum(-1)

    def inverse(self, y, obs):
        # the conditioning coordinates are untouched, so the parameters are recomputable from y
        log_s, t = self._params(y, obs)
        return (y - t) * torch.exp(-log_s), log_s.sum(-1)


class SquashedPolicy(nn.Module):
    def __init__(
        self,
        obs_dim: int,
        act_dim: int,
        action_limit: float,
        hidden: int = 256,
        depth: int = 2,
        flow_blocks: int = 0,
    ):
        super().__init__()
        self.obs_dim, self.act_dim = obs_dim, act_dim
        self.action_limit = float(action_limit)
        self.hidden, self.depth, self.flow_blocks = hidden, depth, flow_blocks
        self.trunk = mlp(obs_dim, 2 * act_dim, hidden, depth)
        blocks = []
        for k in range(flow_blocks):
            mask = torch.zeros(act_dim)
            mask[k % 2::2] = 1.0
            if act_dim == 1:
                mask.zero_()
            blocks.append(CouplingBlock(obs_dim, act_dim, mask, hidden, 1))
        self.blocks = nn.ModuleList(blocks)

    def base(self, obs: torch.Tensor):
        mean, log_std = self.trunk(obs).chunk(2, dim=-1)
        return mean, torch.clamp(log_std, LOG_STD_MIN, LOG_STD_MAX)

    def _flow(self, z, obs):
        logdet = torch.zeros(z.shape[:-1], dtype=z.dtype, device=z.device)
        for blk in self.blocks:
            z, ld = blk(z, obs)
            logdet = logdet + ld
        return z, logdet

    def _squash_logdet(self, u: torch.Tensor) -> torch.Tensor:
        # log |d(limit * tanh(u))/du| = log(limit) + log(1 - tanh(u)^2), in a stable form
        return (math.log(self.action_limit) + 2.0 * (math.log(2.0) - u - F.softplus(-2.0 * u))).sum(-1)

    def sample(self, obs: torch.Tensor, generator: Optional[torch.Generator] = None, deterministic: bool = False):
        """Return ``(action, log_prob)``; the noise is reparameterised."""
        mean, log_std = self.base(obs)
        std = log_std.exp()
        if deterministic:
            eps = torch.zeros_like(mean)
        else:
            eps = torch.randn(mean.shape, generator=generator, dtype=mean.dtype, device=mean.device)
        z = mean + std * eps
        base_lp = (-0.5 * eps.pow(2) - log_std - _HALF_LOG_2PI).sum(-1)
        u, logdet = self._flow(z, obs)
        action = self.action_limit * torch.tanh(u)
        return action, base_lp - logdet - self._squash_logdet(u)

    def log_prob(self, obs: torch.Tensor, action: torch.Tensor) -> torch.Tensor:
        """Exact density of ``action`` (strictly inside the limits)."""
        u = torch.atanh(action / self.action_limit)
        x = u
        logdet = torch.zeros(u.shape[:-1], dtype=u.dtype, device=u.device)
        for blk in reversed(self.blocks):
            x, ld = blk.inverse(x, obs)
            logdet = logdet + ld
        mean, log_std = self.base(obs)
        eps = (x - mean) / log_std.exp()
        base_lp = (-0.5 * eps.pow(2) - log_std - _HALF_LOG_2PI).sum(-1)
        return base_lp - logdet - self._squash_logdet(u)


class QNetwork(nn.Module):
    def __init__(self, obs_dim: int, act_dim: int, hidden: int = 256, depth: int = 2):
        super().__init__()
        self.net = mlp(obs_dim + act_dim, 1, hidden, depth)

    def forward(self, obs: torch.Tensor, action: torch.Tensor) -> torch.Tensor:
        return self.net(torch.cat([obs, action], dim=-1)).squeeze(-1)
