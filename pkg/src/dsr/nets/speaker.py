"""Speaker encoder (LSTM -> projection -> L2 norm) and the GE2E loss."""

from __future__ import annotations

import torch
from torch import nn

from ..errors import EmptyInputError, ShapeError


class SpeakerEncoder(nn.Module):
    """Maps a mel spectrogram of any length to one unit-norm vector.

    The final recurrent state of the last LSTM layer is projected to the
    embedding size and L2-normalized.
    """

    def __init__(self, n_mels: int = 40, hidden: int = 64, layers: int = 3,
                 embedding_dim: int = 256):
        super().__init__()
        self.hparams = {
            "n_mels": n_mels,
            "hidden": hidden,
            "layers": layers,
            "embedding_dim": embedding_dim,
        }
        self.n_mels = n_mels
        self.embedding_dim = embedding_dim
        self.lstm = nn.LSTM(n_mels, hidden, num_layers=layers, batch_first=True)
        self.proj = nn.Linear(hidden, embedding_dim)
        self.to(torch.float64)

    def forward(self, mels: torch.Tensor) -> torch.Tensor:
        """(B, T, n_mels) batch of equal-length crops -> (B, embedding_dim)."""
        if mels.ndim != 3 or mels.shape[2] != self.n_mels:
            raise ShapeError(f"expected (B, T, {self.n_mels}), got {tuple(mels.shape)}")
        if mels.shape[1] == 0:
            raise EmptyInputError("speaker encoder needs at least one frame")
        _, (h_n, _) = self.lstm(mels)
        embedding = self.proj(h_n[-1])
        return embedding / embedding.norm(dim=1, keepdim=True).clamp_min(1e-12)

    def embed(self, mel: torch.Tensor) -> torch.Tensor:
        """Single utterance (T, n_mels) -> (embedding_dim,)."""
        if mel.ndim != 2:
            raise ShapeError(f"expected (T, {self.n_mels}), got {tuple(mel.shape)}")
        return self.forward(mel.unsqueeze(0))[0]


class Ge2eLoss(nn.Module):
    """Softmax-contrast generalized end-to-end loss.

    Similarity of embedding e_{j,i} to centroid c_k is w*cos + b, using the
    leave-one-out centroid when k == j; the loss sums -log softmax over k at
    the true speaker for all N*M embeddings. ``w`` must stay positive (the
    training loop re-clamps it after each optimizer step).
    """

    def __init__(self, init_w: float = 10.0, init_b: float = -5.0):
        super().__init__()
        self.w = nn.Parameter(torch.tensor(float(init_w), dtype=torch.float64))
        self.b = nn.Parameter(torch.tensor(float(init_b), dtype=torch.float64))

    def forward(self, embeddings: torch.Tensor) -> torch.Tensor:
        if embeddings.ndim != 3:
            raise ShapeError(
                f"expected (N, M, D) embeddings, got {tuple(embeddings.shape)}"
            )
        n_spk, n_utt, _ = embeddings.shape
        if n_spk < 2 or n_utt < 2:
            raise ShapeError("GE2E needs at least 2 speakers with 2 utterances")

        centroids = embeddings.mean(dim=1)  # (N, D)
        loo = (embeddings.sum(dim=1, keepdim=True) - embeddings) / (n_utt - 1)

        flat = embeddings.reshape(n_spk * n_utt, -1)  # rows e_{j,i}
        cos_all = _cosine(flat.unsqueeze(1), centroids.unsqueeze(0))  # (NM, N)
        cos_loo = _cosine(embeddings, loo)  # (N, M) for k == j
        speaker_of = torch.arange(n_spk).repeat_interleave(n_utt)
        cos = cos_all.clone()
        cos[torch.arange(n_spk * n_utt), speaker_of] = cos_loo.reshape(-1)

        scores = self.w * cos + self.b
        log_softmax = scores - torch.logsumexp(scores, dim=1, keepdim=True)
        return -log_softmax[torch.arange(n_spk * n_utt), speaker_of].sum()

    def clamp_w(self, floor: float = 1e-4) -> None:
        with torch.no_grad():
            self.w.clamp_(min=floor)


def _cosine(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    dot = (a * b).sum(dim=-1)
    return dot / (a.norm(dim=-1) * b.norm(dim=-1)).clamp_min(1e-12)
