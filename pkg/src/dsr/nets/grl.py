"""Gradient reversal: identity forward, sign-flipped gradient backward."""

from __future__ import annotations

import torch


class _GradientReversal(torch.autograd.Function):
    @staticmethod
    def forward(ctx, x, scale):
        ctx.scale = scale
        return x.view_as(x)

    @staticmethod
    def backward(ctx, grad_output):
        return grad_output.neg() * ctx.scale, None


def grl(x: torch.Tensor, scale: float = 1.0) -> torch.Tensor:
    """Pass ``x`` through unchanged; multiply the backward gradient by -scale.

    With the default scale the backward pass is exactly -g (negation and
    multiplication by 1.0 are exact in IEEE-754).
    """
    return _GradientReversal.apply(x, scale)
