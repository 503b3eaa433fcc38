"""Policy network, action distributions and the helpers the trainer builds on."""

from __future__ import annotations

from typing import Callable, Iterable, Optional

import numpy as np
import torch

from ..distributions import ScalarHV
from ..env import DecompState
from .circular import (
    ActionDistribution,
    bessel_i0,
    beta_log_pdf,
    log_bessel_i0,
    positive,
    sample_von_mises,
    von_mises_log_pdf,
)
from .network import (
    PARAM_GROUPS,
    HeadOutputs,
    PolicyConfig,
    PolicyNetwork,
    Tokens,
    group_checksum,
    init_network,
    parameter_count,
    tokens_from_arrays,
)

__all__ = [
    "ActionDistribution",
    "HeadOutputs",
    "NonFiniteGradient",
    "PARAM_GROUPS",
    "PolicyConfig",
    "PolicyNetwork",
    "Tokens",
    "bessel_i0",
    "beta_log_pdf",
    "encode_state",
    "forward",
    "gradients",
    "group_checksum",
    "init_network",
    "log_bessel_i0",
    "parameter_count",
    "positive",
    "sample_action",
    "sample_von_mises",
    "tokens_from_arrays",
    "von_mises_log_pdf",
]


class NonFiniteGradient(FloatingPointError):
    """Raised when a loss or its gradient is not finite; the step is rejected."""


def encode_state(state: DecompState) -> Tokens:
    """Token sequence for one state: <SOS, goal>, then <a_k, mix after a_k>."""
    t = state.step_index
    n = max(len(state.actions), 1)
    mix_hue = np.zeros((1, n, 360))
    mix_value = np.zeros((1, n, 100))
    actions = np.zeros((1, n, 2))
    for k, (a, m) in enumerate(zip(state.actions, state.mixes)):
        mix_hue[0, k], mix_value[0, k] = m.hue.bins, m.value.bins
        actions[0, k] = a.hue, a.value
    return tokens_from_arrays(
        state.goal.hue.bins[None], state.goal.value.bins[None], mix_hue, mix_value, actions, t
    )


def forward(net: PolicyNetwork, tokens: Tokens, action: Optional[ScalarHV] = None) -> HeadOutputs:
    """Head outputs at the last position of ``tokens``."""
    if action is None:
        out = net(tokens)
    else:
        t = tokens.hue.shape[1]
        hue = torch.full((tokens.hue.shape[0], t), action.hue, dtype=torch.float64)
        value = torch.full((tokens.hue.shape[0], t), action.value, dtype=torch.float64)
        out = net(tokens, hue, value)
    d = out.dist
    last = lambda z: None if z is None else z[:, -1]  # noqa: E731
    dist = ActionDistribution(last(d.mu), last(d.kappa), last(d.alpha), last(d.beta))
    return HeadOutputs(dist, last(out.value), last(out.reward), last(out.aux_hue_logp), last(out.aux_value_logp))


@torch.no_grad()
def sample_action(net: PolicyNetwork, tokens: Tokens, rng: np.random.Generator,
                  iota: float = 1.0) -> tuple[ScalarHV, float]:
    dist = forward(net, tokens).dist.with_temperature(iota)
    hue, value = dist.sample(rng)
    action = ScalarHV(float(hue[0]), float(value[0]))
    logp = dist.log_prob(torch.tensor([action.hue], dtype=torch.float64),
                         torch.tensor([action.value], dtype=torch.float64))
    return action, float(logp[0])


def gradients(net: PolicyNetwork, loss_fn: Callable[[], torch.Tensor],
              trainable: Iterable[str] = PARAM_GROUPS) -> dict[str, torch.Tensor]:
    """Reverse-mode gradients of ``loss_fn()`` for every parameter.

    Parameters outside the ``trainable`` groups get exact zeros. Raises
    :class:`NonFiniteGradient` if the loss or any gradient is not finite.
    """
    trainable = set(trainable)
    params = [(n, p) for n, p in net.named_parameters() if net.param_group(n) in trainable]
    loss = loss_fn()
    if not torch.isfinite(loss):
        raise NonFiniteGradient(f"loss is {float(loss)}")
    grads = {n: torch.zeros_like(p) for n, p in net.named_parameters()}
    if loss.requires_grad and params:
        got = torch.autograd.grad(loss, [p for _, p in params], allow_unused=True)
        for (n, _), g in zip(params, got):
            if g is not None:
                if not torch.all(torch.isfinite(g)):
                    raise NonFiniteGradient(f"non-finite gradient for {n}")
                grads[n] = g
    return grads
