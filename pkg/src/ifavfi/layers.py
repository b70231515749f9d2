"""Parameter-holding wrappers around the tensor_core kernels, plus seeded init."""

from __future__ import annotations

import torch
from torch import nn

from . import tensor_core as tc


class Conv(nn.Module):
    def __init__(
        self,
        c_in: int,
        c_out: int,
        k: int = 3,
        stride: int = 1,
        padding: int | None = None,
        dilation: int = 1,
        groups: int = 1,
        act: str | None = "leaky_relu",
    ) -> None:
        super().__init__()
        self.weight = tc.new_parameter((c_out, c_in // groups, k, k))
        self.bias = tc.new_parameter((c_out,))
        self.stride = stride
        self.padding = dilation * (k - 1) // 2 if padding is None else padding
        self.dilation = dilation
        self.groups = groups
        self.act = act

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        y = tc.conv2d(x, self.weight, self.bias, self.stride, self.padding, self.dilation, self.groups)
        return y if self.act is None else tc.activation(y, self.act)


class Linear(nn.Module):
    """Channel-wise linear layer on NCHW tensors."""

    def __init__(self, c_in: int, c_out: int, bias: bool = True) -> None:
        super().__init__()
        self.weight = tc.new_parameter((c_out, c_in))
        self.bias = tc.new_parameter((c_out,)) if bias else None

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return tc.linear(x, self.weight, self.bias)


class LayerNorm2d(nn.Module):
    def __init__(self, channels: int, eps: float = 1e-5) -> None:
        super().__init__()
        self.gamma = tc.new_parameter((channels,), 1.0)
        self.beta = tc.new_parameter((channels,))
        self.eps = eps

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return tc.layer_norm(x, self.gamma, self.beta, self.eps)


def init_weights(model: nn.Module, seed: int) -> nn.Module:
    """Deterministic init in declaration order.

    Weights (2-D and up) get uniform(-b, b) with b = 1/sqrt(fan_in); biases and
    betas are zero; gammas are one. Gradients are reset to zero.
    """
    rng = tc.SeededRng(seed)
    with torch.no_grad():
        for name, p in model.named_parameters():
            leaf = name.rsplit(".", 1)[-1]
            if p.dim() >= 2:
                b = tc.fan_in_bound(p.shape)
                p.copy_(rng.uniform(-b, b, p.shape))
            elif leaf == "gamma":
                p.fill_(1.0)
            else:
                p.zero_()
    tc.zero_grad(model.parameters())
    return model


def zero_module(module: nn.Module) -> nn.Module:
    with torch.no_grad():
        for p in module.parameters():
            p.zero_()
    return module
