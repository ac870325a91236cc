"""Convolutional policy and value networks over the four-tile observation.

The network input is a 2x2 tiling of the observation's four tiles
(canvas views on the left, goal views on the right), e.g. 82x82x3 for
41x41 tiles.  The trunk is three valid (no-padding) convolutions plus a
dense layer, ReLU throughout; the policy head squashes its mean into
(0,1)^6 with a logistic map and keeps a state-independent learnable
log-std per action dimension.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .canvas import ACTION_DIM
from .perception import Observation

LOG_STD_MIN = -5.0
LOG_STD_MAX = 2.0

# (out_channels, kernel, stride) per conv layer; the canonical trunk.
DEFAULT_CONV_SPEC = ((64, 8, 4), (64, 4, 2), (64, 3, 1))
DEFAULT_FC_WIDTH = 512

CHECKPOINT_VERSION = 1


def assemble_input(obs: Observation) -> np.ndarray:
    """2x2 tile grid [ego_canvas | ego_ref ; global_canvas | global_ref]."""
    tiles = (obs.ego_canvas, obs.ego_ref, obs.global_canvas, obs.global_ref)
    shape = tiles[0].shape
    for t in tiles[1:]:
        if t.shape != shape:
            raise ValueError("observation tiles must share one shape")
    top = np.concatenate([obs.ego_canvas, obs.ego_ref], axis=1)
    bottom = np.concatenate([obs.global_canvas, obs.global_ref], axis=1)
    return np.concatenate([top, bottom], axis=0)


def split_input(grid: np.ndarray) -> tuple:
    """Inverse of assemble_input; recovers the four tiles bit-exact."""
    h, w = grid.shape[0] // 2, grid.shape[1] // 2
    return (
        grid[:h, :w],  # ego_canvas
        grid[h:, :w],  # global_canvas
        grid[:h, w:],  # ego_ref
        grid[h:, w:],  # global_ref
    )


def conv_output_side(side: int, conv_spec) -> int:
    for _, kernel, stride in conv_spec:
        side = (side - kernel) // stride + 1
        if side < 1:
            raise ValueError("input too small for the convolution stack")
    return side


# Reduced trunks for inputs too small for the canonical stack, tried in order.
_FALLBACK_SPECS = (
    (((32, 3, 2), (32, 3, 1), (32, 3, 1)), 128),
    (((16, 3, 1), (16, 3, 1), (16, 3, 1)), 32),
)


def net_spec_for(input_side: int):
    """Largest trunk (conv spec, fc width) that fits the input size."""
    for conv_spec, fc_width in ((DEFAULT_CONV_SPEC, DEFAULT_FC_WIDTH), *_FALLBACK_SPECS):
        try:
            conv_output_side(input_side, conv_spec)
        except ValueError:
            continue
        return conv_spec, fc_width
    raise ValueError(f"no trunk fits input side {input_side}")


@dataclass
class ActionDistribution:
    """Squashed-Gaussian policy output.

    `mean` is the squashed mean in (0,1)^6; `pre_squash_mean` is the
    Gaussian location the noise is added to; `std` is the Gaussian scale.
    """

    mean: np.ndarray
    pre_squash_mean: np.ndarray
    std: np.ndarray


class ConvTrunk(nn.Module):
    def __init__(self, input_side: int, conv_spec=DEFAULT_CONV_SPEC, fc_width=DEFAULT_FC_WIDTH):
        super().__init__()
        layers = []
        in_ch = 3
        for out_ch, kernel, stride in conv_spec:
            layers.append(nn.Conv2d(in_ch, out_ch, kernel, stride))
            layers.append(nn.ReLU())
            in_ch = out_ch
        self.convs = nn.Sequential(*layers)
        side = conv_output_side(input_side, conv_spec)
        self.fc = nn.Linear(side * side * in_ch, fc_width)
        self.relu = nn.ReLU()

    def forward(self, x):
        x = self.convs(x)
        x = x.flatten(start_dim=1)
        return self.relu(self.fc(x))


class PolicyNet(nn.Module):
    def __init__(self, input_side: int, conv_spec=DEFAULT_CONV_SPEC,
                 fc_width=DEFAULT_FC_WIDTH, init_log_std: float = -1.0):
        super().__init__()
        self.trunk = ConvTrunk(input_side, conv_spec, fc_width)
        self.mean_head = nn.Linear(fc_width, ACTION_DIM)
        self.log_std = nn.Parameter(torch.full((ACTION_DIM,), init_log_std))

    def forward(self, x):
        """Returns (pre_squash_mean, log_std) for a batch."""
        features = self.trunk(x)
        log_std = self.log_std.clamp(LOG_STD_MIN, LOG_STD_MAX)
        return self.mean_head(features), log_std.expand(x.shape[0], ACTION_DIM)


class ValueNet(nn.Module):
    def __init__(self, input_side: int, conv_spec=DEFAULT_CONV_SPEC, fc_width=DEFAULT_FC_WIDTH):
        super().__init__()
        self.trunk = ConvTrunk(input_side, conv_spec, fc_width)
        self.value_head = nn.Linear(fc_width, 1)

    def forward(self, x):
        return self.value_head(self.trunk(x)).squeeze(-1)


@dataclass
class Agent:
    """Policy and value networks with matching trunk architecture."""

    policy: PolicyNet
    value: ValueNet
    input_side: int
    conv_spec: tuple
    fc_width: int


def make_agent(patch_side: int, seed: int = 0, conv_spec=None,
               fc_width=None, init_log_std: float = -1.0) -> Agent:
    """Fresh agent with deterministic fan-in-scaled initialization.

    Without an explicit architecture, the largest trunk that fits the
    input is chosen (the canonical stack for 41x41 patches).
    """
    input_side = 2 * patch_side
    if conv_spec is None:
        auto_conv, auto_fc = net_spec_for(input_side)
        conv_spec = auto_conv
        if fc_width is None:
            fc_width = auto_fc
    elif fc_width is None:
        fc_width = DEFAULT_FC_WIDTH
    torch.manual_seed(seed)
    policy = PolicyNet(input_side, conv_spec, fc_width, init_log_std)
    value = ValueNet(input_side, conv_spec, fc_width)
    return Agent(policy=policy, value=value, input_side=input_side,
                 conv_spec=tuple(conv_spec), fc_width=fc_width)


def obs_to_tensor(obs: Observation) -> torch.Tensor:
    """(1, 3, S, S) float32 network input from one observation."""
    grid = assemble_input(obs)
    return torch.from_numpy(np.ascontiguousarray(grid.transpose(2, 0, 1))).float().unsqueeze(0)


def obs_batch_to_tensor(observations) -> torch.Tensor:
    grids = np.stack([assemble_input(o).transpose(2, 0, 1) for o in observations])
    return torch.from_numpy(np.ascontiguousarray(grids)).float()


def _check_finite(tensor: torch.Tensor, what: str) -> None:
    if not torch.isfinite(tensor).all():
        raise FloatingPointError(f"non-finite values in {what}")


def forward_policy(agent: Agent, input_batch: torch.Tensor) -> ActionDistribution:
    """Action distribution for a batch; fails fast on non-finite output."""
    with torch.no_grad():
        pre_mean, log_std = agent.policy(input_batch)
    _check_finite(pre_mean, "policy mean head")
    mean = torch.sigmoid(pre_mean)
    std = torch.exp(log_std)
    return ActionDistribution(
        mean=mean.numpy().astype(np.float64),
        pre_squash_mean=pre_mean.numpy().astype(np.float64),
        std=std.numpy().astype(np.float64),
    )


def forward_value(agent: Agent, input_batch: torch.Tensor) -> np.ndarray:
    with torch.no_grad():
        value = agent.value(input_batch)
    _check_finite(value, "value head")
    return value.numpy().astype(np.float64)


def squash(z: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-z))


def log_squash_derivative(z: np.ndarray) -> np.ndarray:
    """log(sigmoid'(z)) = log a + log(1-a), computed without underflow."""
    return -np.logaddexp(0.0, -z) - np.logaddexp(0.0, z)


def gaussian_log_prob(z: np.ndarray, mean: np.ndarray, std: np.ndarray) -> float:
    var = std * std
    return float(
        np.sum(-0.5 * np.log(2.0 * np.pi * var) - 0.5 * (z - mean) ** 2 / var)
    )


def sample_action(dist: ActionDistribution, rng: np.random.Generator):
    """Draw one squashed-Gaussian action.

    Returns (action, log_prob, pre_squash_sample).  The log-prob includes
    the change-of-variables correction of the logistic squash.
    """
    pre = np.atleast_2d(dist.pre_squash_mean)[0]
    std = np.atleast_2d(dist.std)[0]
    z = pre + std * rng.standard_normal(ACTION_DIM)
    action = squash(z)
    log_prob = gaussian_log_prob(z, pre, std) - float(np.sum(log_squash_derivative(z)))
    return np.clip(action, 0.0, 1.0), log_prob, z


def save_agent(agent: Agent, path) -> None:
    """Versioned checkpoint with an architecture descriptor; bit-exact."""
    torch.save(
        {
            "version": CHECKPOINT_VERSION,
            "arch": {
                "input_side": agent.input_side,
                "conv_spec": list(list(c) for c in agent.conv_spec),
                "fc_width": agent.fc_width,
            },
            "policy": agent.policy.state_dict(),
            "value": agent.value.state_dict(),
        },
        path,
    )


def load_agent(path) -> Agent:
    blob = torch.load(path, weights_only=True)
    if blob.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {blob.get('version')}")
    arch = blob["arch"]
    conv_spec = tuple(tuple(c) for c in arch["conv_spec"])
    policy = PolicyNet(arch["input_side"], conv_spec, arch["fc_width"])
    value = ValueNet(arch["input_side"], conv_spec, arch["fc_width"])
    policy.load_state_dict(blob["policy"])
    value.load_state_dict(blob["value"])
    return Agent(policy=policy, value=value, input_side=arch["input_side"],
                 conv_spec=conv_spec, fc_width=arch["fc_width"])
