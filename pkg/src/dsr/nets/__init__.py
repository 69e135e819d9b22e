"""Neural building blocks: encoders, predictors, generator, discriminator."""

from __future__ import annotations

import torch

from .discriminator import Discriminator
from .generator import Generator
from .grl import grl
from .prosody import DurationPredictor, PitchPredictor
from .speaker import Ge2eLoss, SpeakerEncoder
from .speech_encoder import SpeechEncoder

NET_CLASSES = {
    "SpeechEncoder": SpeechEncoder,
    "DurationPredictor": DurationPredictor,
    "PitchPredictor": PitchPredictor,
    "SpeakerEncoder": SpeakerEncoder,
    "Generator": Generator,
    "Discriminator": Discriminator,
}


def build_net(class_name: str, hparams: dict) -> torch.nn.Module:
    if class_name not in NET_CLASSES:
        raise KeyError(f"unknown net class: {class_name}")
    return NET_CLASSES[class_name](**hparams)


def expand_by_duration(rows: torch.Tensor, durations) -> torch.Tensor:
    """Repeat row i of ``rows`` durations[i] times, order preserved."""
    from ..errors import ShapeError  # local import avoids a cycle

    durations = torch.as_tensor(durations, dtype=torch.long)
    if rows.ndim != 2:
        raise ShapeError("expected a (N, |P|) matrix of posterior rows")
    if durations.ndim != 1 or durations.shape[0] != rows.shape[0]:
        raise ShapeError(
            f"{rows.shape[0]} rows but {tuple(durations.shape)} durations"
        )
    if rows.shape[0] == 0:
        raise ShapeError("cannot expand an empty sequence")
    if bool((durations <= 0).any()):
        raise ShapeError("durations must all be >= 1")
    return torch.repeat_interleave(rows, durations, dim=0)


def seed_init(net: torch.nn.Module, seed: int, scale: float = 0.08) -> None:
    """Deterministically re-initialize every parameter of ``net`` in place.

    Parameters are visited in sorted name order and filled uniformly in
    [-scale, scale] from one seeded generator, so initialization does not
    depend on construction order or torch's default init behavior.
    """
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for _, param in sorted(net.named_parameters(), key=lambda kv: kv[0]):
            values = torch.rand(param.shape, generator=gen, dtype=torch.float64)
            param.copy_((values * 2.0 - 1.0) * scale)


__all__ = [
    "Discriminator",
    "DurationPredictor",
    "Ge2eLoss",
    "Generator",
    "PitchPredictor",
    "SpeakerEncoder",
    "SpeechEncoder",
    "NET_CLASSES",
    "build_net",
    "expand_by_duration",
    "grl",
    "seed_init",
]
