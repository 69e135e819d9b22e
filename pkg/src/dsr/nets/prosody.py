"""Duration and pitch predictors: two conv layers plus a linear head each."""

from __future__ import annotations

import torch
from torch import nn

from ..errors import EmptyInputError, ShapeError


class _ConvRegressor(nn.Module):
    def __init__(self, n_phonemes: int, width: int):
        super().__init__()
        self.n_phonemes = n_phonemes
        self.conv1 = nn.Conv1d(n_phonemes, width, kernel_size=3, padding=1)
        self.conv2 = nn.Conv1d(width, width, kernel_size=3, padding=1)
        self.head = nn.Linear(width, 1)
        self.to(torch.float64)

    def forward(self, rows: torch.Tensor) -> torch.Tensor:
        """(L, n_phonemes) posterior rows -> (L,) real predictions."""
        if rows.ndim != 2 or rows.shape[1] != self.n_phonemes:
            raise ShapeError(f"expected (L, {self.n_phonemes}), got {tuple(rows.shape)}")
        if rows.shape[0] == 0:
            raise EmptyInputError("predictor input is empty")
        x = rows.t().unsqueeze(0)
        h = torch.relu(self.conv1(x))
        h = torch.relu(self.conv2(h))
        return self.head(h.squeeze(0).t()).squeeze(1)


class DurationPredictor(_ConvRegressor):
    """Predicts log duration per phoneme; integer frames at inference."""

    def __init__(self, n_phonemes: int, width: int = 64):
        super().__init__(n_phonemes, width)
        self.hparams = {"n_phonemes": n_phonemes, "width": width}

    def predict_frames(self, rows: torch.Tensor) -> torch.Tensor:
        with torch.no_grad():
            frames = torch.round(torch.exp(self.forward(rows)))
        return frames.clamp(min=1).to(torch.int64)


class PitchPredictor(_ConvRegressor):
    """Predicts per-frame (normalized) log-F0 from expanded embeddings."""

    def __init__(self, n_phonemes: int, width: int = 64):
        super().__init__(n_phonemes, width)
        self.hparams = {"n_phonemes": n_phonemes, "width": width}
