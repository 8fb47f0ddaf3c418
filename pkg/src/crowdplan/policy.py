"""Actor-critic network emitting planner cost weights.

A CNN environment encoder with a spatial-attention gate digests the two
stacked observation grids, an MLP encodes the kinematic state, and MLP
heads produce the 5-vector action mean and the state value.  Raw actions
map to positive weights through exp(clamp(raw, -3, 2)); log-probabilities
are measured on the raw Gaussian, before that mapping.

Batch normalization runs with frozen statistics at all times (rollouts
and updates) so the policy density is identical in both phases; the
affine parameters still train.
"""

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .costs import CostWeights
from .observe import ObservationTensor

RAW_CLAMP = (-3.0, 2.0)
STD_INIT = 0.6
STD_DECAY = 0.05
STD_DECAY_EVERY = 200
STD_MIN = 0.1

CHECKPOINT_VERSION = 1


class NonFinite(Exception):
    """An activation or gradient overflowed (training divergence)."""


@dataclass(frozen=True)
class ActionSample:
    raw: np.ndarray
    weights: CostWeights
    log_prob: float


def weights_from_raw(raw: np.ndarray) -> CostWeights:
    return CostWeights.from_array(np.exp(np.clip(raw, *RAW_CLAMP)))


def std_schedule(episode: int) -> float:
    """Exploration std: starts at 0.6, steps down 0.05 every 200 episodes."""
    if episode < 0:
        raise ValueError("episode must be non-negative")
    return max(STD_MIN, STD_INIT - STD_DECAY * (episode // STD_DECAY_EVERY))


def sample_action(mean: np.ndarray, std: float,
                  rng: np.random.Generator) -> ActionSample:
    """Diagonal Gaussian on the raw action, then the positive mapping.

    std == 0 is the deterministic limit: raw equals the mean exactly and
    the density degenerates (log_prob = inf).
    """
    if std < 0:
        raise ValueError("std must be non-negative")
    mean = np.asarray(mean, dtype=np.float64)
    if std == 0.0:
        return ActionSample(mean.copy(), weights_from_raw(mean), math.inf)
    raw = mean + std * rng.standard_normal(mean.shape)
    z = (raw - mean) / std
    log_prob = float(-0.5 * np.sum(z * z) - mean.size * math.log(std)
                     - 0.5 * mean.size * math.log(2 * math.pi))
    return ActionSample(raw, weights_from_raw(raw), log_prob)


def gaussian_log_prob(mean: torch.Tensor, std: float,
                      raw: torch.Tensor) -> torch.Tensor:
    """Log density of the raw diagonal Gaussian, summed over action dims."""
    var = std * std
    return (-0.5 * ((raw - mean) ** 2).sum(dim=-1) / var
            - raw.shape[-1] * (math.log(std) + 0.5 * math.log(2 * math.pi)))


class SpatialAttention(nn.Module):
    """Sigmoid gate from channel-pooled average/max maps."""

    def __init__(self, kernel_size: int = 7):
        super().__init__()
        self.conv = nn.Conv2d(2, 1, kernel_size, padding=kernel_size // 2)

    def forward(self, feat):
        pooled = torch.cat([feat.mean(dim=1, keepdim=True),
                            feat.amax(dim=1, keepdim=True)], dim=1)
        return feat * torch.sigmoid(self.conv(pooled))


def _orthogonal(tensor: torch.Tensor, gain: float, gen: torch.Generator):
    nn.init.orthogonal_(tensor, gain=gain, generator=gen)


class PolicyNetwork(nn.Module):
    """Shared trunk with actor and critic heads.

    The module is kept in eval mode permanently: batch-norm statistics
    stay at their initial values so collection-time and update-time
    forwards agree exactly.
    """

    def __init__(self, seed: int = 0):
        super().__init__()
        self.conv = nn.Sequential(
            nn.Conv2d(2, 16, 3, padding=1), nn.BatchNorm2d(16), nn.ReLU(),
            nn.MaxPool2d(2),
            nn.Conv2d(16, 32, 3, padding=1), nn.BatchNorm2d(32), nn.ReLU(),
            nn.MaxPool2d(2),
            nn.Conv2d(32, 32, 3, padding=1), nn.BatchNorm2d(32), nn.ReLU(),
            nn.MaxPool2d(2),
        )
        self.attention = SpatialAttention(7)
        self.env_fc = nn.Sequential(
            nn.Linear(32 * 6 * 6, 256), nn.ReLU(),
            nn.Linear(256, 128), nn.ReLU(),
        )
        self.state_fc = nn.Sequential(
            nn.Linear(3, 32), nn.ReLU(),
            nn.Linear(32, 32), nn.ReLU(),
        )
        self.actor = nn.Sequential(
            nn.Linear(160, 128), nn.ReLU(),
            nn.Linear(128, 64), nn.ReLU(),
            nn.Linear(64, 5),
        )
        self.critic = nn.Sequential(
            nn.Linear(160, 128), nn.ReLU(),
            nn.Linear(128, 64), nn.ReLU(),
            nn.Linear(64, 1),
        )
        self._init_parameters(seed)
        self.eval()

    def _init_parameters(self, seed: int):
        gen = torch.Generator().manual_seed(seed)
        heads = {id(self.actor[-1].weight): 0.01,
                 id(self.critic[-1].weight): 1.0}
        for module in self.modules():
            if isinstance(module, (nn.Conv2d, nn.Linear)):
                gain = heads.get(id(module.weight), math.sqrt(2.0))
                w = module.weight
                flat = w.reshape(w.shape[0], -1)
                _orthogonal(flat, gain, gen)
                with torch.no_grad():
                    module.weight.copy_(flat.reshape(w.shape))
                    module.bias.zero_()

    def train(self, mode: bool = True):
        # Keep normalization layers frozen regardless of requested mode.
        super().train(False)
        return self

    def encode(self, maps: torch.Tensor, kin: torch.Tensor) -> torch.Tensor:
        feat = self.conv(maps)
        feat = self.attention(feat)
        env = self.env_fc(feat.flatten(1))
        state = self.state_fc(kin)
        return torch.cat([env, state], dim=1)

    def forward(self, maps: torch.Tensor, kin: torch.Tensor):
        """Batched forward: (B, 2, 50, 50), (B, 3) -> mean (B, 5), value (B,)."""
        emb = self.encode(maps, kin)
        mean = self.actor(emb)
        value = self.critic(emb).squeeze(-1)
        if not (torch.isfinite(mean).all() and torch.isfinite(value).all()):
            raise NonFinite("policy forward produced non-finite outputs")
        return mean, value

    @torch.no_grad()
    def forward_observation(self, obs: ObservationTensor):
        """Single-observation forward returning numpy (mean, value)."""
        maps = torch.from_numpy(obs.stacked_maps()).unsqueeze(0)
        kin = torch.from_numpy(obs.kin_state).unsqueeze(0)
        mean, value = self.forward(maps, kin)
        return mean[0].numpy().astype(np.float64), float(value[0])

    def n_parameters(self) -> int:
        return sum(p.numel() for p in self.parameters())

    def encoder_critic_parameters(self):
        for module in (self.conv, self.attention, self.env_fc, self.state_fc,
                       self.critic):
            yield from module.parameters()

    def actor_parameters(self):
        yield from self.actor.parameters()


def batch_from_observations(observations) -> tuple[torch.Tensor, torch.Tensor]:
    maps = torch.from_numpy(np.stack([o.stacked_maps() for o in observations]))
    kin = torch.from_numpy(np.stack([o.kin_state for o in observations]))
    return maps, kin


def save_checkpoint(path, policy: PolicyNetwork, episode: int = 0,
                    optimizer: torch.optim.Optimizer | None = None,
                    numpy_rng_state=None, extra: dict | None = None) -> None:
    doc = {
        "format_version": CHECKPOINT_VERSION,
        "state_dict": policy.state_dict(),
        "episode": int(episode),
        "optimizer_state": optimizer.state_dict() if optimizer else None,
        "numpy_rng_state": numpy_rng_state,
        "extra": extra or {},
    }
    torch.save(doc, path)


def load_checkpoint(path, policy: PolicyNetwork | None = None):
    """Load a checkpoint; returns (policy, doc)."""
    doc = torch.load(path, map_location="cpu", weights_only=False)
    if doc.get("format_version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version in {path}")
    if policy is None:
        policy = PolicyNetwork()
    policy.load_state_dict(doc["state_dict"])
    return policy, doc
