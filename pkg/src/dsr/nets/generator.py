"""Speech generator: frame-wise [p | v | e] -> 80-mel, residual conv stack."""

from __future__ import annotations

import torch
from torch import nn

from ..errors import ShapeError


class Generator(nn.Module):
    """Four 1-D conv layers with residual middle blocks over [p | v | e].

    The speaker embedding is broadcast-concatenated onto every frame, so the
    output depends on it at every time step.
    """

    def __init__(self, n_phonemes: int, embedding_dim: int = 256,
                 n_mels_out: int = 80, width: int = 128):
        super().__init__()
        self.hparams = {
            "n_phonemes": n_phonemes,
            "embedding_dim": embedding_dim,
            "n_mels_out": n_mels_out,
            "width": width,
        }
        self.n_phonemes = n_phonemes
        self.embedding_dim = embedding_dim
        self.n_mels_out = n_mels_out
        in_dim = n_phonemes + 1 + embedding_dim
        self.conv_in = nn.Conv1d(in_dim, width, kernel_size=5, padding=2)
        self.conv_mid1 = nn.Conv1d(width, width, kernel_size=5, padding=2)
        self.conv_mid2 = nn.Conv1d(width, width, kernel_size=5, padding=2)
        self.conv_out = nn.Conv1d(width, n_mels_out, kernel_size=5, padding=2)
        self.to(torch.float64)

    def forward(self, p: torch.Tensor, v: torch.Tensor, e: torch.Tensor) -> torch.Tensor:
        if p.ndim != 2 or p.shape[1] != self.n_phonemes:
            raise ShapeError(f"expected (T, {self.n_phonemes}) embeddings")
        if v.ndim != 1 or v.shape[0] != p.shape[0]:
            raise ShapeError(
                f"frame mismatch: p has {p.shape[0]} frames, v has {tuple(v.shape)}"
            )
        if e.shape != (self.embedding_dim,):
            raise ShapeError(f"expected ({self.embedding_dim},) speaker embedding")
        frames = p.shape[0]
        x = torch.cat(
            [p, v.unsqueeze(1), e.unsqueeze(0).expand(frames, -1)], dim=1
        )
        x = x.t().unsqueeze(0)  # (1, in_dim, T)
        h = torch.relu(self.conv_in(x))
        h = h + torch.relu(self.conv_mid1(h))
        h = h + torch.relu(self.conv_mid2(h))
        out = self.conv_out(h)
        return out.squeeze(0).t()  # (T, n_mels_out)
