"""System discriminator: strided 2-D convs over a fixed-length mel crop."""

from __future__ import annotations

import torch
from torch import nn

from ..errors import ShapeError

PROB_EPS = 1e-7


class Discriminator(nn.Module):
    """Patch discriminator over (crop_len, n_mels) crops.

    Strided conv stack -> patch logits -> mean -> sigmoid, clamped away from
    {0, 1} so log terms stay finite.
    """

    def __init__(self, n_mels: int = 80, crop_len: int = 64, channels: int = 16):
        super().__init__()
        self.hparams = {
            "n_mels": n_mels,
            "crop_len": crop_len,
            "channels": channels,
        }
        self.n_mels = n_mels
        self.crop_len = crop_len
        c = channels
        self.stack = nn.Sequential(
            nn.Conv2d(1, c, kernel_size=4, stride=2, padding=1),
            nn.LeakyReLU(0.2),
            nn.Conv2d(c, 2 * c, kernel_size=4, stride=2, padding=1),
            nn.LeakyReLU(0.2),
            nn.Conv2d(2 * c, 4 * c, kernel_size=4, stride=2, padding=1),
            nn.LeakyReLU(0.2),
            nn.Conv2d(4 * c, 1, kernel_size=3, stride=1, padding=1),
        )
        self.to(torch.float64)

    def logit(self, mel_crop: torch.Tensor) -> torch.Tensor:
        """(crop_len, n_mels) -> mean patch logit (pre-sigmoid, unbounded).

        Training losses use this with log-sigmoid so gradients survive
        saturation; the probability surface below stays clamped.
        """
        if mel_crop.shape != (self.crop_len, self.n_mels):
            raise ShapeError(
                f"expected ({self.crop_len}, {self.n_mels}) crop, "
                f"got {tuple(mel_crop.shape)}"
            )
        return self.stack(mel_crop.unsqueeze(0).unsqueeze(0)).mean()

    def forward(self, mel_crop: torch.Tensor) -> torch.Tensor:
        """(crop_len, n_mels) -> scalar probability in [eps, 1 - eps]."""
        prob = torch.sigmoid(self.logit(mel_crop))
        return prob.clamp(PROB_EPS, 1.0 - PROB_EPS)


def crop_or_tile(mel: torch.Tensor, crop_len: int, offset: int) -> torch.Tensor:
    """Contiguous ``crop_len``-frame crop; shorter inputs are repeat-padded."""
    frames = mel.shape[0]
    if frames < crop_len:
        reps = -(-crop_len // frames)
        mel = mel.repeat(reps, 1)
        frames = mel.shape[0]
    offset = int(offset) % (frames - crop_len + 1)
    return mel[offset : offset + crop_len]
